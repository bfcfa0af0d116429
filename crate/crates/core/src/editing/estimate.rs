use serde::{Deserialize, Serialize};

use super::mask::{LatentMask, MaskMode, Provenance};
use crate::diffusion::{ddim_sample, Model};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::prompt_dsl::PromptSpec;

/// Which condition drives the denoising trajectory along which the paired
/// noise predictions are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryCondition {
    Src,
    Tgt,
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskEstimationConfig {
    pub n_samples: usize,
    pub last_k_steps: usize,
    pub guidance: f64,
    pub trajectory_condition: TrajectoryCondition,
    pub seed: u64,
}

impl Default for MaskEstimationConfig {
    fn default() -> Self {
        Self {
            n_samples: 16,
            last_k_steps: 10,
            guidance: 2.0,
            trajectory_condition: TrajectoryCondition::Src,
            seed: 0,
        }
    }
}

impl MaskEstimationConfig {
    pub fn validate(&self, ddim_steps: usize) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument(
                "n_samples must be at least 1".into(),
            ));
        }
        if self.last_k_steps == 0 || self.last_k_steps > ddim_steps {
            return Err(Error::InvalidArgument(format!(
                "last_k_steps must lie in 1..={ddim_steps}, got {}",
                self.last_k_steps
            )));
        }
        if !self.guidance.is_finite() {
            return Err(Error::InvalidArgument("guidance must be finite".into()));
        }
        Ok(())
    }
}

/// `n` stacked initial noises; sample `i` is drawn from `Rng::new(seed).split(i)`.
pub(crate) fn initial_noise(seed: u64, n: usize, d: usize) -> Vec<f64> {
    let root = Rng::new(seed);
    let mut z = Vec::with_capacity(n * d);
    for i in 0..n {
        z.extend(root.split(i as u64).gaussian(d));
    }
    z
}

pub(crate) fn sampler_rng(seed: u64) -> Rng {
    Rng::new(seed).split(u64::MAX)
}

fn prepare(
    model: &Model,
    src: &PromptSpec,
    tgt: &PromptSpec,
    cfg: &MaskEstimationConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.require_trained()?;
    cfg.validate(model.schedule().timesteps().len())?;
    Ok((model.condition(Some(src))?, model.condition(Some(tgt))?))
}

/// Per-dim mean of `|ε_tgt − ε_src|` over samples and the last
/// `last_k_steps` steps, before normalization.
pub fn eps_saliency(
    model: &Model,
    src: &PromptSpec,
    tgt: &PromptSpec,
    cfg: &MaskEstimationConfig,
) -> Result<Vec<f64>> {
    let (c_src, c_tgt) = prepare(model, src, tgt, cfg)?;
    let d = model.latent_dim();
    let n = cfg.n_samples;
    let sched = model.schedule();
    let pairs = sched.step_pairs();
    let first_scored = pairs.len() - cfg.last_k_steps;
    let mut sum = vec![0.0; d];
    let mut step = 0;
    let g = cfg.guidance;
    let z = initial_noise(cfg.seed, n, d);
    ddim_sample(
        sched,
        &z,
        0,
        &mut sampler_rng(cfg.seed),
        |x, t| {
            let scored = step >= first_scored;
            step += 1;
            if !scored {
                return match cfg.trajectory_condition {
                    TrajectoryCondition::Src => model.predict_eps(x, t, &c_src, g),
                    TrajectoryCondition::Tgt => model.predict_eps(x, t, &c_tgt, g),
                    TrajectoryCondition::Unconditional => {
                        model.predict_eps(x, t, &vec![0.0; c_src.len()], 0.0)
                    }
                };
            }
            let e_src = model.predict_eps(x, t, &c_src, g)?;
            let e_tgt = model.predict_eps(x, t, &c_tgt, g)?;
            for (row_s, row_t) in e_src.chunks_exact(d).zip(e_tgt.chunks_exact(d)) {
                for ((acc, a), b) in sum.iter_mut().zip(row_s).zip(row_t) {
                    *acc += (b - a).abs();
                }
            }
            Ok(match cfg.trajectory_condition {
                TrajectoryCondition::Src => e_src,
                TrajectoryCondition::Tgt => e_tgt,
                TrajectoryCondition::Unconditional => {
                    model.predict_eps(x, t, &vec![0.0; c_src.len()], 0.0)?
                }
            })
        },
        |_, _| Ok(()),
    )?;
    let denom = (n * cfg.last_k_steps) as f64;
    Ok(sum.into_iter().map(|s| s / denom).collect())
}

/// The ε-difference mask.
pub fn estimate_mask_eps(
    model: &Model,
    src: &PromptSpec,
    tgt: &PromptSpec,
    cfg: &MaskEstimationConfig,
    mode: MaskMode,
) -> Result<LatentMask> {
    let raw = eps_saliency(model, src, tgt, cfg)?;
    LatentMask::from_saliency(&raw, mode, Provenance::EpsDiff)
}

/// Fully denoised `(W_src, W_tgt)` from shared initial noise, flattened
/// `n × d`.
pub fn paired_denoise(
    model: &Model,
    src: &PromptSpec,
    tgt: &PromptSpec,
    cfg: &MaskEstimationConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (c_src, c_tgt) = prepare(model, src, tgt, cfg)?;
    let z = initial_noise(cfg.seed, cfg.n_samples, model.latent_dim());
    let w_src = model.denoise_batch(&z, &c_src, cfg.guidance, &mut sampler_rng(cfg.seed))?;
    let w_tgt = model.denoise_batch(&z, &c_tgt, cfg.guidance, &mut sampler_rng(cfg.seed))?;
    Ok((w_src, w_tgt))
}

/// The W-difference baseline mask: min-max of mean `|W_tgt − W_src|`.
pub fn estimate_mask_w(
    model: &Model,
    src: &PromptSpec,
    tgt: &PromptSpec,
    cfg: &MaskEstimationConfig,
    mode: MaskMode,
) -> Result<LatentMask> {
    let (w_src, w_tgt) = paired_denoise(model, src, tgt, cfg)?;
    let d = model.latent_dim();
    let mut sum = vec![0.0; d];
    for (a, b) in w_src.chunks_exact(d).zip(w_tgt.chunks_exact(d)) {
        for ((s, x), y) in sum.iter_mut().zip(a).zip(b) {
            *s += (y - x).abs();
        }
    }
    let n = cfg.n_samples as f64;
    let raw: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    LatentMask::from_saliency(&raw, mode, Provenance::WDiff)
}

/// Swap baseline `Δw = M ⊙ (mean W_tgt − mean W_src)`.
pub fn swap_direction(
    model: &Model,
    src: &PromptSpec,
    tgt: &PromptSpec,
    mask: &LatentMask,
    cfg: &MaskEstimationConfig,
) -> Result<Vec<f64>> {
    if mask.is_degenerate() {
        return Err(Error::DegenerateMask);
    }
    let d = model.latent_dim();
    if mask.dim() != d {
        return Err(Error::Shape(format!(
            "mask has {} dims, latent has {d}",
            mask.dim()
        )));
    }
    let (w_src, w_tgt) = paired_denoise(model, src, tgt, cfg)?;
    let n = cfg.n_samples as f64;
    let mean = |w: &[f64]| {
        let mut m = vec![0.0; d];
        for row in w.chunks_exact(d) {
            for (a, x) in m.iter_mut().zip(row) {
                *a += x;
            }
        }
        m.into_iter().map(|a| a / n).collect::<Vec<f64>>()
    };
    let (m_src, m_tgt) = (mean(&w_src), mean(&w_tgt));
    Ok((0..d)
        .map(|i| {
            if mask.is_set(i) {
                m_tgt[i] - m_src[i]
            } else {
                0.0
            }
        })
        .collect())
}
