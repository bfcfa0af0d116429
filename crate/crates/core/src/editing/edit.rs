use serde::{Deserialize, Serialize};

use super::estimate::{estimate_mask_eps, sampler_rng, MaskEstimationConfig};
use super::mask::{LatentMask, MaskMode};
use crate::diffusion::{ddim_sample, Model};
use crate::error::{Error, Result};
use crate::eval::MetricBundle;
use crate::numerics::{self, Rng};
use crate::prompt_dsl::PromptSpec;
use crate::toy_world::{LatentCode, WorldSpec};

/// Seed stream for the initial partial noising; step `i` of the
/// recomposition uses `split(i + 1)`.
const SPLIT_NOISE: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    /// `T′ / T`; the sub-sequence step nearest to it is used.
    pub t_prime_fraction: f64,
    pub guidance: f64,
    /// Scale applied to the edit direction before it is added back.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            t_prime_fraction: 0.6,
            guidance: 2.0,
            alpha: 1.0,
            seed: 0,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_prime_fraction > 0.0 && self.t_prime_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "t_prime_fraction {} outside (0, 1)",
                self.t_prime_fraction
            )));
        }
        if !self.guidance.is_finite() || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(
                "guidance and alpha must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of an edit. Unmasked dims of `w_edit` hold the same `f32` values
/// as `w_original`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    pub w_original: LatentCode,
    pub w_edit: LatentCode,
    /// `w_edit − w_original`, exact in `f64`.
    pub direction: Vec<f64>,
    pub mask: LatentMask,
    pub spec: PromptSpec,
    pub edit_config: EditConfig,
    /// The DDIM step editing started from.
    pub t_prime: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricBundle>,
}

impl EditResult {
    fn new(
        w_original: LatentCode,
        w_edit: LatentCode,
        mask: LatentMask,
        spec: PromptSpec,
        edit_config: EditConfig,
        t_prime: usize,
    ) -> Self {
        let direction = w_edit
            .as_slice()
            .iter()
            .zip(w_original.as_slice())
            .map(|(&e, &o)| e as f64 - o as f64)
            .collect();
        Self {
            w_original,
            w_edit,
            direction,
            mask,
            spec,
            edit_config,
            t_prime,
            metrics: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvertMode {
    ClosedForm,
    Gradient,
}

/// Minimizes `Σ_k (⟨w[S_k], v_k⟩ − a*_k)² + λ‖w − w₀‖²`.
pub fn invert(
    world: &WorldSpec,
    target: &[f64],
    lambda: f64,
    reference: Option<&LatentCode>,
    mode: InvertMode,
) -> Result<LatentCode> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda {lambda} must be non-negative"
        )));
    }
    if target.len() != world.num_attributes {
        return Err(Error::Shape(format!(
            "{} target attributes, world has {}",
            target.len(),
            world.num_attributes
        )));
    }
    if target.iter().any(|a| !(-1.0..=1.0).contains(a)) {
        return Err(Error::InvalidArgument(
            "target attributes must lie in [-1, 1]".into(),
        ));
    }
    let w0 = match reference {
        Some(r) if r.dim() != world.latent_dim => {
            return Err(Error::Shape(
                "reference latent has the wrong dimension".into(),
            ))
        }
        Some(r) => r.to_f64(),
        None => vec![0.0; world.latent_dim],
    };
    let w = match mode {
        InvertMode::ClosedForm => invert_closed_form(world, target, lambda, &w0),
        InvertMode::Gradient => invert_gradient(world, target, lambda, &w0),
    };
    Ok(LatentCode::from_f64(&w))
}

fn invert_closed_form(world: &WorldSpec, target: &[f64], lambda: f64, w0: &[f64]) -> Vec<f64> {
    let mut w = w0.to_vec();
    for (k, v) in world.directions.iter().enumerate() {
        let g = world.group(k);
        let shift = (target[k] - numerics::dot(&w0[g.clone()], v)) / (1.0 + lambda);
        for (i, dim) in g.enumerate() {
            w[dim] += shift * v[i];
        }
    }
    w
}

fn invert_gradient(world: &WorldSpec, target: &[f64], lambda: f64, w0: &[f64]) -> Vec<f64> {
    // largest Hessian eigenvalue is 2(1 + λ)
    let lr = 0.5 / (2.0 * (1.0 + lambda));
    let mut w = w0.to_vec();
    for _ in 0..100_000 {
        let mut grad = vec![0.0; w.len()];
        for (k, v) in world.directions.iter().enumerate() {
            let g = world.group(k);
            let r = numerics::dot(&w[g.clone()], v) - target[k];
            for (i, dim) in g.enumerate() {
                grad[dim] = 2.0 * r * v[i] + 2.0 * lambda * (w[dim] - w0[dim]);
            }
        }
        if numerics::norm(&grad) < 1e-13 {
            break;
        }
        for (x, gr) in w.iter_mut().zip(&grad) {
            *x -= lr * gr;
        }
    }
    w
}

/// Editing input for a synthetic identity: its latent inverted from its own
/// clamped readouts with the latent as reference. Returns the latent itself
/// because those readouts are stationary for the objective.
pub fn invert_identity(world: &WorldSpec, seed: u64, lambda: f64) -> Result<LatentCode> {
    let (_, w) = world.identity(seed);
    invert(
        world,
        &world.readout_clamped(&w),
        lambda,
        Some(&w),
        InvertMode::ClosedForm,
    )
}

/// `w_input + α·Δŵ`, rounded to `f32`.
pub fn apply_direction(w_input: &LatentCode, direction: &[f64], alpha: f64) -> Result<LatentCode> {
    if direction.len() != w_input.dim() {
        return Err(Error::Shape(format!(
            "direction has {} dims, latent has {}",
            direction.len(),
            w_input.dim()
        )));
    }
    if alpha == 0.0 {
        return Ok(w_input.clone());
    }
    let out: Vec<f64> = w_input
        .as_slice()
        .iter()
        .zip(direction)
        .map(|(&w, d)| w as f64 + alpha * d)
        .collect();
    Ok(LatentCode::from_f64(&out))
}

/// Partially noises `w_e` to `T′`, denoises under `spec_tgt`, and after each
/// step puts a freshly noised copy of `w_e` back outside the mask.
pub fn masked_edit(
    model: &Model,
    w_e: &LatentCode,
    spec_tgt: &PromptSpec,
    mask: &LatentMask,
    cfg: &EditConfig,
) -> Result<EditResult> {
    model.require_trained()?;
    cfg.validate()?;
    if mask.is_degenerate() {
        return Err(Error::DegenerateMask);
    }
    let d = model.latent_dim();
    if w_e.dim() != d || mask.dim() != d {
        return Err(Error::Shape(format!(
            "latent {} and mask {} must both have {d} dims",
            w_e.dim(),
            mask.dim()
        )));
    }
    let sched = model.schedule();
    let start = sched.nearest_index(cfg.t_prime_fraction);
    let t_prime = sched.timesteps()[start];
    let cond = model.condition(Some(spec_tgt))?;
    let x0 = w_e.to_f64();
    let root = Rng::new(cfg.seed);

    let z = if mask.is_empty() {
        x0.clone()
    } else {
        sched.q_sample(&x0, t_prime, &root.split(SPLIT_NOISE).gaussian(d))?
    };
    let mut step = 0u64;
    let edited = if mask.is_empty() {
        z
    } else {
        ddim_sample(
            sched,
            &z,
            start,
            &mut sampler_rng(cfg.seed),
            |x, t| model.predict_eps(x, t, &cond, cfg.guidance),
            |x, t_prev| {
                step += 1;
                let reference = if t_prev == 0 {
                    x0.clone()
                } else {
                    sched.q_sample(&x0, t_prev, &root.split(step).gaussian(d))?
                };
                for (i, r) in reference.into_iter().enumerate() {
                    if !mask.is_set(i) {
                        x[i] = r;
                    }
                }
                Ok(())
            },
        )?
    };
    let raw = LatentCode::from_f64(&edited);
    let w_edit = if cfg.alpha == 1.0 {
        raw
    } else {
        let delta: Vec<f64> = raw
            .as_slice()
            .iter()
            .zip(w_e.as_slice())
            .map(|(&a, &b)| a as f64 - b as f64)
            .collect();
        apply_direction(w_e, &delta, cfg.alpha)?
    };
    Ok(EditResult::new(
        w_e.clone(),
        w_edit,
        mask.clone(),
        spec_tgt.clone(),
        cfg.clone(),
        t_prime,
    ))
}

/// Ablation baseline: [`masked_edit`] with every dim editable.
pub fn edit_no_mask(
    model: &Model,
    w_e: &LatentCode,
    spec_tgt: &PromptSpec,
    cfg: &EditConfig,
) -> Result<EditResult> {
    masked_edit(
        model,
        w_e,
        spec_tgt,
        &LatentMask::all_ones(model.latent_dim()),
        cfg,
    )
}

/// The opposite-prompt pair `(negate(spec), spec)` used to estimate a mask
/// for editing toward `spec`.
pub fn opposite_pair(spec: &PromptSpec) -> Result<(PromptSpec, PromptSpec)> {
    Ok((spec.negate()?, spec.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiEditMode {
    Sequential,
    Simultaneous,
}

/// Several edits on one identity. `edit_configs[i]` applies to spec `i`;
/// the last entry is reused when fewer configs than specs are given.
pub fn multi_edit(
    model: &Model,
    w_e: &LatentCode,
    specs: &[PromptSpec],
    mask_cfg: &MaskEstimationConfig,
    mask_mode: MaskMode,
    edit_configs: &[EditConfig],
    mode: MultiEditMode,
) -> Result<EditResult> {
    if specs.is_empty() || edit_configs.is_empty() {
        return Err(Error::InvalidArgument(
            "multi_edit needs at least one spec and one config".into(),
        ));
    }
    let config = |i: usize| &edit_configs[i.min(edit_configs.len() - 1)];
    let mask_for = |spec: &PromptSpec| {
        let (src, tgt) = opposite_pair(spec)?;
        estimate_mask_eps(model, &src, &tgt, mask_cfg, mask_mode)
    };
    match mode {
        MultiEditMode::Simultaneous => {
            let merged = PromptSpec::merge(specs, &model.world().attribute_names)?;
            let masks = specs.iter().map(mask_for).collect::<Result<Vec<_>>>()?;
            if masks.iter().any(|m| m.is_degenerate()) {
                return Err(Error::DegenerateMask);
            }
            let mask = if masks.len() == 1 {
                masks[0].clone()
            } else {
                LatentMask::union(&masks)?
            };
            masked_edit(model, w_e, &merged, &mask, config(0))
        }
        MultiEditMode::Sequential => {
            let mut current = w_e.clone();
            let mut masks = Vec::with_capacity(specs.len());
            let mut last = None;
            for (i, spec) in specs.iter().enumerate() {
                let mask = mask_for(spec)?;
                let r = masked_edit(model, &current, spec, &mask, config(i))?;
                current = r.w_edit.clone();
                masks.push(mask);
                last = Some(r);
            }
            let last = last.expect("at least one spec");
            if specs.len() == 1 {
                return Ok(last);
            }
            let merged = PromptSpec::merge(specs, &model.world().attribute_names)
                .unwrap_or(last.spec.clone());
            Ok(EditResult::new(
                w_e.clone(),
                current,
                LatentMask::union(&masks)?,
                merged,
                config(specs.len() - 1).clone(),
                last.t_prime,
            ))
        }
    }
}
