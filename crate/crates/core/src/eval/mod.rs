//! Latent-space analogs of prompt similarity, identity similarity and
//! masked-region error, plus the ablation harness comparing mask variants.

mod ablation;

use serde::{Deserialize, Serialize};

pub use ablation::{
    ablation_target, identity_seed, run_ablation, AblationConfig, AblationReport, AblationRow,
    AblationSeeds, Method,
};

use crate::editing::LatentMask;
use crate::error::{Error, Result};
use crate::prompt_dsl::PromptSpec;
use crate::toy_world::{LatentCode, WorldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub target_attainment: f64,
    pub identity_preservation: f64,
    pub mse_outside: f64,
    pub mask_iou: Option<f64>,
    pub wall_time_ms: Option<f64>,
}

impl MetricBundle {
    /// All latent metrics for one edit; IoU is scored against the union of
    /// the target attributes' supports.
    pub fn compute(
        world: &WorldSpec,
        w_orig: &LatentCode,
        w_edit: &LatentCode,
        spec: &PromptSpec,
        mask: Option<&LatentMask>,
    ) -> Result<Self> {
        let mask_iou = match mask {
            Some(m) => {
                let gts = spec
                    .attributes()
                    .iter()
                    .map(|&k| world.gt_support(k))
                    .collect::<Result<Vec<_>>>()?;
                Some(mask_iou(m, &LatentMask::union(&gts)?)?)
            }
            None => None,
        };
        Ok(Self {
            target_attainment: target_attainment(world, w_edit, spec)?,
            identity_preservation: identity_preservation(world, w_orig, w_edit, spec),
            mse_outside: mse_outside(world, w_orig, w_edit, spec),
            mask_iou,
            wall_time_ms: None,
        })
    }
}

/// Mean over clauses of `1 − |clamped readout − value| / 2`.
pub fn target_attainment(world: &WorldSpec, w_edit: &LatentCode, spec: &PromptSpec) -> Result<f64> {
    if spec.is_empty() {
        return Err(Error::EmptySpec);
    }
    let r = world.readout_clamped(w_edit);
    let total: f64 = spec
        .clauses()
        .iter()
        .map(|c| 1.0 - (r[c.attribute] - c.value).abs() / 2.0)
        .sum();
    Ok(total / spec.clauses().len() as f64)
}

/// `1 − RMS/2` of the change in non-target clamped attributes and in all
/// style components, clipped to `[0, 1]`.
pub fn identity_preservation(
    world: &WorldSpec,
    w_orig: &LatentCode,
    w_edit: &LatentCode,
    spec: &PromptSpec,
) -> f64 {
    let (ro, re) = (world.readout_clamped(w_orig), world.readout_clamped(w_edit));
    let targets = spec.attributes();
    let mut sq = 0.0;
    let mut n = 0usize;
    for k in (0..world.num_attributes).filter(|k| !targets.contains(k)) {
        sq += (re[k] - ro[k]).powi(2);
        n += 1;
    }
    let (so, se) = (
        world.style_components(w_orig),
        world.style_components(w_edit),
    );
    for (a, b) in so.iter().zip(&se) {
        sq += (b - a).powi(2);
        n += 1;
    }
    if n == 0 {
        return 1.0;
    }
    let rms = (sq / n as f64).sqrt();
    (1.0 - rms / 2.0).clamp(0.0, 1.0)
}

/// Mean squared latent change over dims outside the target supports.
pub fn mse_outside(
    world: &WorldSpec,
    w_orig: &LatentCode,
    w_edit: &LatentCode,
    spec: &PromptSpec,
) -> f64 {
    let targets = spec.attributes();
    let inside = |i: usize| targets.iter().any(|&k| world.group(k).contains(&i));
    let (o, e) = (w_orig.as_slice(), w_edit.as_slice());
    let mut sq = 0.0;
    let mut n = 0usize;
    for i in (0..world.latent_dim).filter(|&i| !inside(i)) {
        sq += (e[i] as f64 - o[i] as f64).powi(2);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sq / n as f64
    }
}

/// `|A ∩ B| / |A ∪ B|`, 1 when both are empty.
pub fn mask_iou(mask: &LatentMask, gt: &LatentMask) -> Result<f64> {
    if mask.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "masks have {} and {} dims",
            mask.dim(),
            gt.dim()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in mask.flags().iter().zip(gt.flags()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
