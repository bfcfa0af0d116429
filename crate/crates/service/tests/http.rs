use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use latent_clan::diffusion::{train, Model, ScheduleParams, TrainConfig};
use latent_clan::toy_world::WorldSpec;
use latent_clan_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn model() -> Model {
    static MODEL: OnceLock<Model> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let world = WorldSpec::faces(0).unwrap();
            let cfg = TrainConfig {
                dataset_size: 4000,
                batch: 32,
                steps: 300,
                hidden: vec![32, 32],
                ..TrainConfig::default()
            };
            Model::new(
                world.clone(),
                train(&world, &cfg, ScheduleParams::default()).unwrap(),
            )
            .unwrap()
        })
        .clone()
}

fn app() -> Router {
    router(AppState::new(model()))
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json");
    let req = req
        .body(
            body.map(|b| Body::from(b.to_string()))
                .unwrap_or_else(Body::empty),
        )
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value, bytes)
}

#[tokio::test]
async fn model_metadata() {
    let (s, v, _) = call(&app(), "GET", "/api/model", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["attribute_names"].as_array().unwrap().len(), 8);
    assert_eq!(v["world"]["latent_dim"], 64);
    assert_eq!(v["world"]["hash"], model().checkpoint().world_hash.as_str());
    assert!(v["lexicon"]
        .as_array()
        .unwrap()
        .iter()
        .any(|e| e["phrase"] == "glasses"));
}

#[tokio::test]
async fn generation_is_deterministic() {
    let app = app();
    let body = json!({"prompt": "a smiling person with glasses", "seed": 4});
    let (s1, v, b1) = call(&app, "POST", "/api/generate", Some(body.clone())).await;
    let (_, _, b2) = call(&app, "POST", "/api/generate", Some(body)).await;
    assert_eq!(s1, StatusCode::OK);
    assert_eq!(b1, b2);
    assert_eq!(v["w"].as_array().unwrap().len(), 64);
    assert!(
        v["svg"].as_str().unwrap().starts_with("<?xml")
            || v["svg"].as_str().unwrap().starts_with("<svg")
    );
    let (s, _, _) = call(&app, "POST", "/api/generate", Some(json!({"seed": 1}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn parse_errors_carry_positions() {
    let (s, v, _) = call(
        &app(),
        "POST",
        "/api/generate",
        Some(json!({"prompt": "a person with wings"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("wings"));
    assert!(v["position"]["start"].as_u64().unwrap() < v["position"]["end"].as_u64().unwrap());
    assert_eq!(v["field"], "prompt");
    let (s, v, _) = call(&app(), "POST", "/api/generate", Some(json!({"prompt": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn mask_endpoint() {
    let body = json!({"src_prompt": "a person without glasses", "tgt_prompt": "a person with glasses", "n": 4, "mode": "topk", "value": 8});
    let (s, v, _) = call(&app(), "POST", "/api/mask", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        v["mask"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|b| b.as_bool().unwrap())
            .count(),
        8
    );
    assert_eq!(v["saliency"].as_array().unwrap().len(), 64);
    assert_eq!(v["degenerate"], false);
    assert!(v["gt_iou"].as_f64().is_some());
    let same = json!({"src_prompt": "a person with glasses", "tgt_prompt": "a person with glasses", "n": 2});
    let (_, v, _) = call(&app(), "POST", "/api/mask", Some(same)).await;
    assert_eq!(v["degenerate"], true);
}

#[tokio::test]
async fn degenerate_masks_are_unprocessable() {
    let mask = json!({"saliency": vec![0.0; 64], "mask": vec![false; 64], "provenance": "eps_diff", "degenerate": true});
    let body = json!({"identity_seed": 1, "tgt_prompt": "a person with a hat", "mask": mask});
    let (s, v, _) = call(&app(), "POST", "/api/edit", Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("degenerate"));
}

#[tokio::test]
async fn world_mismatch_conflicts() {
    let body = json!({"identity_seed": 1, "tgt_prompt": "an old person", "world_hash": "0000"});
    let (s, _, _) = call(&app(), "POST", "/api/edit", Some(body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn zero_alpha_direction_keeps_attributes() {
    let app = app();
    let (_, g, _) = call(
        &app,
        "POST",
        "/api/generate",
        Some(json!({"prompt": "a young person", "seed": 2})),
    )
    .await;
    let flags: Vec<bool> = (0..64).map(|i| (32..40).contains(&i)).collect();
    let body = json!({"w": g["w"], "tgt_prompt": "an old person", "mask": flags, "seed": 3});
    let (s, e, _) = call(&app, "POST", "/api/edit", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    for (i, (a, b)) in e["w_edit"]
        .as_array()
        .unwrap()
        .iter()
        .zip(g["w"].as_array().unwrap())
        .enumerate()
    {
        if !flags[i] {
            assert_eq!(a, b);
        }
    }
    let apply = json!({"w_input": g["w"], "direction": e["direction"], "alpha": 0.0});
    let (s, d, _) = call(&app, "POST", "/api/direction/apply", Some(apply)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(d["attributes"], g["attributes"]);
    let full = json!({"w_input": g["w"], "direction": e["direction"], "alpha": 1.0});
    let (_, d, _) = call(&app, "POST", "/api/direction/apply", Some(full)).await;
    assert_eq!(d["w"], e["w_edit"]);
}

#[tokio::test]
async fn invert_endpoint() {
    let attrs = [0.5, -0.2, 1.0, 0.0, -0.7, 0.3, -1.0, 0.1];
    let (s, v, _) = call(
        &app(),
        "POST",
        "/api/invert",
        Some(json!({"attributes": attrs, "lambda": 0.0})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    for (a, b) in v["attributes"].as_array().unwrap().iter().zip(attrs) {
        assert!((a.as_f64().unwrap() - b).abs() < 1e-6);
    }
    let (s, _, _) = call(
        &app(),
        "POST",
        "/api/invert",
        Some(json!({"attributes": [0.0, 0.0, 0.0]})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(
        &app(),
        "POST",
        "/api/invert",
        Some(json!({"attributes": attrs, "lambda": -1.0})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_edits_do_not_interfere() {
    let app = app();
    let body = |i: u64| json!({"identity_seed": i, "tgt_prompt": "a person with long hair", "seed": i % 4, "mask": (0..64).map(|d| d < 8).collect::<Vec<_>>()});
    let mut sequential = Vec::new();
    for i in 0..32 {
        sequential.push(call(&app, "POST", "/api/edit", Some(body(i))).await.2);
    }
    let handles: Vec<_> = (0..32u64)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, "POST", "/api/edit", Some(body(i))).await })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let (s, _, bytes) = h.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        assert_eq!(bytes, sequential[i], "request {i}");
    }
}

#[tokio::test]
async fn cors_allows_localhost_only() {
    let preflight = |origin: &'static str| {
        Request::builder()
            .method("OPTIONS")
            .uri("/api/generate")
            .header(header::ORIGIN, origin)
            .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
            .body(Body::empty())
            .unwrap()
    };
    let ok = app()
        .oneshot(preflight("http://localhost:5173"))
        .await
        .unwrap();
    assert_eq!(
        ok.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN],
        "http://localhost:5173"
    );
    let bad = app()
        .oneshot(preflight("http://example.com"))
        .await
        .unwrap();
    assert!(bad
        .headers()
        .get(header::ACCESS_CONTROL_ALLOW_ORIGIN)
        .is_none());
}

#[tokio::test]
async fn sessions_store_named_items() {
    let app = app();
    let (s, v, _) = call(&app, "POST", "/api/sessions", None).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap().to_string();
    let (s, _, _) = call(
        &app,
        "PUT",
        &format!("/api/sessions/{id}/directions/glasses"),
        Some(json!([0.1, 0.2])),
    )
    .await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (_, v, _) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(v["directions"]["glasses"], json!([0.1, 0.2]));
    let (s, _, _) = call(
        &app,
        "PUT",
        &format!("/api/sessions/{id}/gallery/x"),
        Some(json!(1)),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _, _) = call(&app, "GET", "/api/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
