//! HTTP/1.1 JSON API over a shared, immutable model snapshot.
//!
//! Handlers in [`api`] are plain functions of the model and a request body;
//! the router only moves them onto blocking threads and maps errors to
//! status codes.

pub mod api;
mod error;
pub mod session;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use latent_clan::diffusion::Model;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::ApiError;
pub use session::{ItemKind, Session, SessionStore};

pub const DEFAULT_SESSION_CAPACITY: usize = 64;

#[derive(Clone)]
pub struct AppState {
    pub model: Arc<Model>,
    pub sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(model: Model) -> Self {
        Self {
            model: Arc::new(model),
            sessions: Arc::new(SessionStore::new(DEFAULT_SESSION_CAPACITY)),
        }
    }
}

/// Accepts `http://localhost[:port]` and `http://127.0.0.1[:port]` origins.
fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(o) = origin.to_str() else { return false };
    ["http://localhost", "http://127.0.0.1", "http://[::1]"]
        .iter()
        .any(|base| {
            o.strip_prefix(base).is_some_and(|rest| {
                rest.is_empty()
                    || rest
                        .strip_prefix(':')
                        .is_some_and(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
            })
        })
}

async fn compute<Req, Resp>(
    state: AppState,
    body: Req,
    f: fn(&Model, Req) -> Result<Resp, ApiError>,
) -> Result<Json<Resp>, ApiError>
where
    Req: Send + 'static,
    Resp: Send + 'static,
{
    let model = state.model.clone();
    tokio::task::spawn_blocking(move || f(&model, body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

macro_rules! endpoint {
    ($name:ident, $f:path, $req:ty, $resp:ty) => {
        async fn $name(
            State(state): State<AppState>,
            body: Result<Json<$req>, JsonRejection>,
        ) -> Result<Json<$resp>, ApiError> {
            let Json(body) = body?;
            compute(state, body, $f).await
        }
    };
}

endpoint!(
    generate,
    api::generate,
    api::GenerateRequest,
    api::GenerateResponse
);
endpoint!(mask, api::mask, api::MaskRequest, api::MaskResponse);
endpoint!(invert, api::invert, api::InvertRequest, api::InvertResponse);
endpoint!(edit, api::edit, api::EditRequest, api::EditResponse);
endpoint!(
    apply_direction,
    api::apply_direction,
    api::DirectionRequest,
    api::FaceResponse
);

async fn model_info(State(state): State<AppState>) -> Json<api::ModelInfo> {
    Json(api::model_info(&state.model))
}

async fn create_session(State(state): State<AppState>) -> (StatusCode, Json<serde_json::Value>) {
    let id = state.sessions.create();
    (StatusCode::CREATED, Json(serde_json::json!({ "id": id })))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Session>, ApiError> {
    state
        .sessions
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
}

async fn put_item(
    State(state): State<AppState>,
    Path((id, kind, name)): Path<(String, String, String)>,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> Result<StatusCode, ApiError> {
    let Json(value) = body?;
    let kind: ItemKind = kind.parse().map_err(ApiError::bad_request)?;
    state
        .sessions
        .put(&id, kind, &name, value)
        .map_err(ApiError::not_found)?;
    Ok(StatusCode::NO_CONTENT)
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin, _| is_local_origin(origin)))
        .allow_methods([Method::GET, Method::POST, Method::PUT])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/model", get(model_info))
        .route("/api/generate", post(generate))
        .route("/api/mask", post(mask))
        .route("/api/invert", post(invert))
        .route("/api/edit", post(edit))
        .route("/api/direction/apply", post(apply_direction))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/{kind}/{name}", put(put_item))
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(model: Model, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(model))).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_origins_only() {
        for ok in [
            "http://localhost",
            "http://localhost:5173",
            "http://127.0.0.1:8080",
            "http://[::1]:3000",
        ] {
            assert!(is_local_origin(&HeaderValue::from_static(ok)), "{ok}");
        }
        for bad in [
            "http://localhost.evil.com",
            "http://example.com",
            "https://localhost:",
            "http://localhost:80x",
        ] {
            assert!(!is_local_origin(&HeaderValue::from_static(bad)), "{bad}");
        }
    }
}
