mod common;

use common::small_model;
use latent_clan::diffusion::{Checkpoint, Denoiser, Model, ScheduleParams, TrainConfig};
use latent_clan::editing::*;
use latent_clan::numerics::Rng;
use latent_clan::prompt_dsl::{parse, PromptSpec};
use latent_clan::toy_world::attr::*;
use latent_clan::toy_world::WorldSpec;
use latent_clan::Error;

fn quick() -> MaskEstimationConfig {
    MaskEstimationConfig {
        n_samples: 4,
        ..MaskEstimationConfig::default()
    }
}

#[test]
fn unmasked_dims_are_bitwise_preserved() {
    let model = small_model();
    let world = model.world();
    for i in 0..20u64 {
        let mut rng = Rng::new(100 + i);
        let (_, w) = world.identity(rng.next_u64());
        let flags: Vec<bool> = (0..64).map(|_| rng.uniform() < 0.3).collect();
        let mask = LatentMask::from_flags(flags.clone());
        let spec =
            PromptSpec::single(rng.below(8), if rng.uniform() < 0.5 { -0.8 } else { 0.8 }).unwrap();
        let cfg = EditConfig {
            seed: i,
            alpha: [1.0, 0.5, 2.0][i as usize % 3],
            ..EditConfig::default()
        };
        let r = masked_edit(model, &w, &spec, &mask, &cfg).unwrap();
        for d in (0..64).filter(|&d| !flags[d]) {
            assert_eq!(r.w_edit.as_slice()[d].to_bits(), w.as_slice()[d].to_bits());
            assert_eq!(r.direction[d], 0.0);
        }
    }
}

#[test]
fn saliency_is_symmetric_under_unconditional_trajectories() {
    let model = small_model();
    let cfg = MaskEstimationConfig {
        trajectory_condition: TrajectoryCondition::Unconditional,
        ..quick()
    };
    let (src, tgt) = opposite_pair(&parse("a person with glasses").unwrap()).unwrap();
    let ab = eps_saliency(model, &src, &tgt, &cfg).unwrap();
    let ba = eps_saliency(model, &tgt, &src, &cfg).unwrap();
    assert_eq!(ab, ba);
}

#[test]
fn identical_prompts_give_flagged_degenerate_masks() {
    let model = small_model();
    let spec = parse("a smiling person").unwrap();
    let eps = estimate_mask_eps(model, &spec, &spec, &quick(), MaskMode::TopK(8)).unwrap();
    let w = estimate_mask_w(model, &spec, &spec, &quick(), MaskMode::Threshold(0.5)).unwrap();
    for m in [&eps, &w] {
        assert!(m.is_degenerate());
        assert!(m.is_empty());
        assert!(m.saliency().iter().all(|&s| s == 0.0));
    }
    let (_, w_e) = model.world().identity(1);
    assert!(matches!(
        masked_edit(model, &w_e, &spec, &eps, &EditConfig::default()),
        Err(Error::DegenerateMask)
    ));
    assert!(matches!(
        swap_direction(model, &spec, &spec, &eps, &quick()),
        Err(Error::DegenerateMask)
    ));
}

#[test]
fn direction_transfer_reproduces_the_source_edit() {
    let model = small_model();
    let (_, w_e) = model.world().identity(9);
    let spec = parse("a person with a hat").unwrap();
    let r = masked_edit(
        model,
        &w_e,
        &spec,
        &model.world().gt_support(HAT).unwrap(),
        &EditConfig::default(),
    )
    .unwrap();
    assert_eq!(apply_direction(&w_e, &r.direction, 1.0).unwrap(), r.w_edit);
    assert_eq!(
        apply_direction(&r.w_edit, &r.direction, 0.0).unwrap(),
        r.w_edit
    );
    assert!(apply_direction(&w_e, &r.direction[..10], 1.0).is_err());
}

#[test]
fn zero_alpha_and_empty_mask_leave_the_latent_unchanged() {
    let model = small_model();
    let (_, w_e) = model.world().identity(2);
    let spec = parse("an old person").unwrap();
    let gt = model.world().gt_support(AGE).unwrap();
    let still = masked_edit(
        model,
        &w_e,
        &spec,
        &gt,
        &EditConfig {
            alpha: 0.0,
            ..EditConfig::default()
        },
    )
    .unwrap();
    assert_eq!(still.w_edit, w_e);
    let empty = masked_edit(
        model,
        &w_e,
        &spec,
        &LatentMask::zeros(64),
        &EditConfig::default(),
    )
    .unwrap();
    assert_eq!(empty.w_edit, w_e);
}

#[test]
fn edit_no_mask_is_the_all_ones_edit() {
    let model = small_model();
    let (_, w_e) = model.world().identity(3);
    let spec = parse("a person with a beard").unwrap();
    let cfg = EditConfig {
        seed: 4,
        ..EditConfig::default()
    };
    let a = edit_no_mask(model, &w_e, &spec, &cfg).unwrap();
    let b = masked_edit(model, &w_e, &spec, &LatentMask::all_ones(64), &cfg).unwrap();
    assert_eq!(a.w_edit, b.w_edit);
    assert_eq!(
        a,
        masked_edit(model, &w_e, &spec, &LatentMask::all_ones(64), &cfg).unwrap()
    );
}

#[test]
fn swap_direction_endpoints() {
    let model = small_model();
    let (src, tgt) = opposite_pair(&parse("a person with glasses").unwrap()).unwrap();
    let cfg = quick();
    let full = swap_direction(model, &src, &tgt, &LatentMask::all_ones(64), &cfg).unwrap();
    let (ws, wt) = paired_denoise(model, &src, &tgt, &cfg).unwrap();
    for d in 0..64 {
        let mean = |w: &[f64]| w.chunks_exact(64).map(|r| r[d]).sum::<f64>() / cfg.n_samples as f64;
        assert!((full[d] - (mean(&wt) - mean(&ws))).abs() < 1e-12);
    }
    let none = swap_direction(model, &src, &tgt, &LatentMask::zeros(64), &cfg).unwrap();
    assert!(none.iter().all(|&x| x == 0.0));
}

#[test]
fn multi_edit_of_one_spec_is_a_masked_edit() {
    let model = small_model();
    let (_, w_e) = model.world().identity(5);
    let spec = parse("a person with long hair").unwrap();
    let cfg = EditConfig::default();
    let mode = MaskMode::TopK(8);
    let (src, tgt) = opposite_pair(&spec).unwrap();
    let mask = estimate_mask_eps(model, &src, &tgt, &quick(), mode).unwrap();
    let direct = masked_edit(model, &w_e, &spec, &mask, &cfg).unwrap();
    for m in [MultiEditMode::Sequential, MultiEditMode::Simultaneous] {
        let multi = multi_edit(
            model,
            &w_e,
            std::slice::from_ref(&spec),
            &quick(),
            mode,
            std::slice::from_ref(&cfg),
            m,
        )
        .unwrap();
        assert_eq!(multi.w_edit, direct.w_edit);
    }
}

#[test]
fn multi_edit_touches_only_the_union_of_masks() {
    let model = small_model();
    let (_, w_e) = model.world().identity(6);
    let specs = [
        parse("a person with glasses").unwrap(),
        parse("a smiling person").unwrap(),
    ];
    for m in [MultiEditMode::Sequential, MultiEditMode::Simultaneous] {
        let r = multi_edit(
            model,
            &w_e,
            &specs,
            &quick(),
            MaskMode::TopK(8),
            &[EditConfig::default()],
            m,
        )
        .unwrap();
        assert_eq!(r.spec.attributes(), vec![GLASSES, SMILE]);
        for d in (0..64).filter(|&d| !r.mask.is_set(d)) {
            assert_eq!(r.w_edit.as_slice()[d], w_e.as_slice()[d]);
        }
    }
}

#[test]
fn inversion_modes_agree() {
    let world = WorldSpec::faces(0).unwrap();
    let mut rng = Rng::new(8);
    for _ in 0..5 {
        let target: Vec<f64> = (0..8).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let (_, w0) = world.identity(rng.next_u64());
        let closed = invert(&world, &target, 0.1, Some(&w0), InvertMode::ClosedForm)
            .unwrap()
            .to_f64();
        let grad = invert(&world, &target, 0.1, Some(&w0), InvertMode::Gradient)
            .unwrap()
            .to_f64();
        let l2: f64 = closed
            .iter()
            .zip(&grad)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(l2 < 1e-4, "L2 {l2}");
    }
}

#[test]
fn inversion_edges() {
    let world = WorldSpec::faces(0).unwrap();
    let target: Vec<f64> = (0..8).map(|k| k as f64 / 8.0 - 0.4).collect();
    let exact = invert(&world, &target, 0.0, None, InvertMode::ClosedForm).unwrap();
    for (a, b) in world.latent_readout(&exact).iter().zip(&target) {
        assert!((a - b).abs() < 1e-6);
    }
    let (_, w0) = world.identity(4);
    let own: Vec<f64> = world.latent_readout(&w0);
    let own_clamped: Vec<f64> = own.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    if own == own_clamped {
        assert_eq!(
            invert(&world, &own, 0.1, Some(&w0), InvertMode::ClosedForm).unwrap(),
            w0
        );
    }
    assert!(invert(&world, &target, -0.1, None, InvertMode::ClosedForm).is_err());
    assert!(invert(&world, &[2.0; 8], 0.1, None, InvertMode::ClosedForm).is_err());
}

#[test]
fn untrained_checkpoints_are_rejected() {
    let world = WorldSpec::faces(0).unwrap();
    let den = Denoiser::init(64, 32, 1000, &[8], &mut Rng::new(0));
    let cfg = TrainConfig {
        steps: 0,
        hidden: vec![8],
        ..TrainConfig::default()
    };
    let model = Model::new(
        world.clone(),
        Checkpoint::new(&world, ScheduleParams::default(), den, cfg, vec![]),
    )
    .unwrap();
    let spec = parse("a person with glasses").unwrap();
    let (_, w) = world.identity(0);
    assert!(matches!(
        estimate_mask_eps(
            &model,
            &spec.negate().unwrap(),
            &spec,
            &quick(),
            MaskMode::TopK(8)
        ),
        Err(Error::Untrained)
    ));
    assert!(matches!(
        masked_edit(
            &model,
            &w,
            &spec,
            &LatentMask::all_ones(64),
            &EditConfig::default()
        ),
        Err(Error::Untrained)
    ));
}

#[test]
fn edit_results_round_trip_through_json() {
    let model = small_model();
    let (_, w_e) = model.world().identity(12);
    let spec = parse("a person with short hair").unwrap();
    let r = masked_edit(
        model,
        &w_e,
        &spec,
        &model.world().gt_support(HAIR_LENGTH).unwrap(),
        &EditConfig::default(),
    )
    .unwrap();
    let back: EditResult = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn identity_inversion_is_stationary() {
    let world = WorldSpec::faces(0).unwrap();
    for seed in 0..20 {
        assert_eq!(
            invert_identity(&world, seed, 0.1).unwrap(),
            world.identity(seed).1
        );
    }
}
