use std::collections::BTreeMap;
use std::fmt::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricBundle;
use crate::diffusion::Model;
use crate::editing::{
    apply_direction, edit_no_mask, estimate_mask_eps, estimate_mask_w, masked_edit, swap_direction,
    EditConfig, LatentMask, MaskEstimationConfig, MaskMode,
};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::prompt_dsl::{Lexicon, PromptSpec};
use crate::toy_world::LatentCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    EpsMask,
    WMask,
    Swap,
    NoMask,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::EpsMask, Method::WMask, Method::Swap, Method::NoMask];

    pub fn name(&self) -> &'static str {
        match self {
            Method::EpsMask => "eps_mask",
            Method::WMask => "w_mask",
            Method::Swap => "swap",
            Method::NoMask => "no_mask",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

pub const MIN_ATTRIBUTES: usize = 5;
pub const MIN_IDENTITIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub attributes: Vec<usize>,
    pub identities_per_attr: usize,
    pub methods: Vec<Method>,
    /// Root of the identity seeds.
    pub seed: u64,
    pub mask: MaskEstimationConfig,
    pub mask_mode: MaskMode,
    pub edit: EditConfig,
    /// Records wall times; reports are then no longer byte-replayable.
    pub timing: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            attributes: (0..8).collect(),
            identities_per_attr: MIN_IDENTITIES,
            methods: Method::ALL.to_vec(),
            seed: 0,
            mask: MaskEstimationConfig::default(),
            mask_mode: MaskMode::TopK(8),
            edit: EditConfig::default(),
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attribute: Option<String>,
    pub n: usize,
    pub target_attainment: f64,
    pub identity_preservation: f64,
    pub mse_outside: f64,
    pub mask_iou: f64,
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSeeds {
    pub root: u64,
    pub mask: u64,
    pub edit: u64,
    /// `identities[a][j]` seeds identity `j` of attribute `attributes[a]`.
    pub identities: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub by_attribute: Vec<AblationRow>,
    pub seeds: AblationSeeds,
    pub config: AblationConfig,
}

impl AblationReport {
    pub fn row(&self, method: Method) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table of the per-method rows.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>8} {:>9} {:>12} {:>9} {:>9}",
            "method", "n", "target", "identity", "mse_outside", "mask_iou", "time_ms"
        );
        for r in &self.rows {
            let time = r
                .wall_time_ms
                .map(|t| format!("{t:.2}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<10} {:>5} {:>8.4} {:>9.4} {:>12.6} {:>9.4} {:>9}",
                r.method.name(),
                r.n,
                r.target_attainment,
                r.identity_preservation,
                r.mse_outside,
                r.mask_iou,
                time
            );
        }
        out
    }
}

/// Target for editing attribute `k` of an identity whose readout is `current`:
/// the opposite sign, at 1.0 for presence attributes and 0.8 otherwise.
pub fn ablation_target(model: &Model, k: usize, current: f64) -> Result<PromptSpec> {
    let presence = Lexicon::for_attributes(&model.world().attribute_names).is_presence(k);
    let magnitude = if presence { 1.0 } else { 0.8 };
    let sign = if current > 0.0 { -1.0 } else { 1.0 };
    PromptSpec::single(k, sign * magnitude)
}

pub fn identity_seed(root: u64, attribute: usize, j: usize) -> u64 {
    Rng::new(root)
        .split((attribute as u64) << 32 | j as u64)
        .next_u64()
}

struct MaskSet {
    eps: LatentMask,
    w: Option<LatentMask>,
    swap: Option<Vec<f64>>,
    eps_ms: f64,
    w_ms: f64,
    swap_ms: f64,
}

fn masks_for(model: &Model, cfg: &AblationConfig, spec: &PromptSpec) -> Result<MaskSet> {
    let src = spec.negate()?;
    let t0 = Instant::now();
    let eps = estimate_mask_eps(model, &src, spec, &cfg.mask, cfg.mask_mode)?;
    let eps_ms = t0.elapsed().as_secs_f64() * 1e3;
    let (w, w_ms) = if cfg.methods.contains(&Method::WMask) {
        let t0 = Instant::now();
        let m = estimate_mask_w(model, &src, spec, &cfg.mask, cfg.mask_mode)?;
        (Some(m), t0.elapsed().as_secs_f64() * 1e3)
    } else {
        (None, 0.0)
    };
    let (swap, swap_ms) = if cfg.methods.contains(&Method::Swap) {
        let t0 = Instant::now();
        let d = swap_direction(model, &src, spec, &eps, &cfg.mask)?;
        (Some(d), t0.elapsed().as_secs_f64() * 1e3 + eps_ms)
    } else {
        (None, 0.0)
    };
    Ok(MaskSet {
        eps,
        w,
        swap,
        eps_ms,
        w_ms,
        swap_ms,
    })
}

struct Item {
    attr_pos: usize,
    method: Method,
    metrics: MetricBundle,
}

/// Runs every method on `identities_per_attr` identities per attribute and
/// averages the metrics.
pub fn run_ablation(model: &Model, cfg: &AblationConfig) -> Result<AblationReport> {
    model.require_trained()?;
    let world = model.world();
    let mut attrs = cfg.attributes.clone();
    attrs.sort_unstable();
    attrs.dedup();
    if attrs.len() < MIN_ATTRIBUTES || cfg.identities_per_attr < MIN_IDENTITIES {
        return Err(Error::InvalidArgument(format!(
            "ablation needs >= {MIN_ATTRIBUTES} attributes and >= {MIN_IDENTITIES} identities each"
        )));
    }
    if attrs.iter().any(|&k| k >= world.num_attributes) || cfg.methods.is_empty() {
        return Err(Error::InvalidArgument(
            "attribute index out of range or no methods".into(),
        ));
    }
    let mut methods = cfg.methods.clone();
    methods.dedup();

    let identities: Vec<Vec<u64>> = cfg
        .attributes
        .iter()
        .map(|&k| {
            (0..cfg.identities_per_attr)
                .map(|j| identity_seed(cfg.seed, k, j))
                .collect()
        })
        .collect();

    // masks depend only on the target spec, which takes one of two signs
    let mut specs: BTreeMap<(usize, bool), PromptSpec> = BTreeMap::new();
    let mut jobs = Vec::new();
    for (pos, &k) in cfg.attributes.iter().enumerate() {
        for &seed in &identities[pos] {
            let (_, w) = world.identity(seed);
            let spec = ablation_target(model, k, world.latent_readout(&w)[k])?;
            let positive = spec.clauses()[0].value > 0.0;
            specs.entry((k, positive)).or_insert_with(|| spec.clone());
            jobs.push((pos, k, positive, w, spec));
        }
    }
    let keys: Vec<(usize, bool)> = specs.keys().copied().collect();
    let mask_sets: Vec<MaskSet> = keys
        .par_iter()
        .map(|key| masks_for(model, cfg, &specs[key]))
        .collect::<Result<_>>()?;
    let mask_of = |k: usize, positive: bool| {
        &mask_sets[keys.binary_search(&(k, positive)).expect("mask computed")]
    };

    let items: Vec<Vec<Item>> = jobs
        .par_iter()
        .map(|(pos, k, positive, w, spec)| {
            let set = mask_of(*k, *positive);
            let gt = world.gt_support(*k)?;
            methods
                .iter()
                .map(|&method| {
                    let t0 = Instant::now();
                    let (w_edit, mask, extra_ms): (LatentCode, LatentMask, f64) = match method {
                        Method::EpsMask => (
                            masked_edit(model, w, spec, &set.eps, &cfg.edit)?.w_edit,
                            set.eps.clone(),
                            set.eps_ms,
                        ),
                        Method::WMask => {
                            let m = set.w.as_ref().expect("w mask computed");
                            (
                                masked_edit(model, w, spec, m, &cfg.edit)?.w_edit,
                                m.clone(),
                                set.w_ms,
                            )
                        }
                        Method::Swap => {
                            let dir = set.swap.as_ref().expect("swap computed");
                            (
                                apply_direction(w, dir, cfg.edit.alpha)?,
                                set.eps.clone(),
                                set.swap_ms,
                            )
                        }
                        Method::NoMask => (
                            edit_no_mask(model, w, spec, &cfg.edit)?.w_edit,
                            LatentMask::all_ones(world.latent_dim),
                            0.0,
                        ),
                    };
                    let ms = t0.elapsed().as_secs_f64() * 1e3 + extra_ms;
                    let mut metrics = MetricBundle::compute(world, w, &w_edit, spec, None)?;
                    metrics.mask_iou = Some(super::mask_iou(&mask, &gt)?);
                    metrics.wall_time_ms = cfg.timing.then_some(ms);
                    Ok(Item {
                        attr_pos: *pos,
                        method,
                        metrics,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let items: Vec<Item> = items.into_iter().flatten().collect();

    let aggregate = |method: Method, attr_pos: Option<usize>| {
        let sel: Vec<&MetricBundle> = items
            .iter()
            .filter(|it| it.method == method && attr_pos.is_none_or(|p| it.attr_pos == p))
            .map(|it| &it.metrics)
            .collect();
        let n = sel.len();
        let mean =
            |f: &dyn Fn(&MetricBundle) -> f64| sel.iter().map(|m| f(m)).sum::<f64>() / n as f64;
        AblationRow {
            method,
            attribute: attr_pos.map(|p| world.attribute_names[cfg.attributes[p]].clone()),
            n,
            target_attainment: mean(&|m| m.target_attainment),
            identity_preservation: mean(&|m| m.identity_preservation),
            mse_outside: mean(&|m| m.mse_outside),
            mask_iou: mean(&|m| m.mask_iou.unwrap_or(0.0)),
            wall_time_ms: cfg.timing.then(|| mean(&|m| m.wall_time_ms.unwrap_or(0.0))),
        }
    };
    let rows = methods.iter().map(|&m| aggregate(m, None)).collect();
    let by_attribute = methods
        .iter()
        .flat_map(|&m| (0..cfg.attributes.len()).map(move |p| (m, p)))
        .map(|(m, p)| aggregate(m, Some(p)))
        .collect();
    Ok(AblationReport {
        rows,
        by_attribute,
        seeds: AblationSeeds {
            root: cfg.seed,
            mask: cfg.mask.seed,
            edit: cfg.edit.seed,
            identities,
        },
        config: cfg.clone(),
    })
}
