//! Request and response bodies plus the pure computations behind each
//! endpoint.

use latent_clan::diffusion::{smoothed_loss, Model, ScheduleParams, TrainConfig};
use latent_clan::editing::{
    estimate_mask_eps, estimate_mask_w, invert_identity, masked_edit, opposite_pair, EditConfig,
    InvertMode, LatentMask, MaskEstimationConfig, MaskMode, TrajectoryCondition,
};
use latent_clan::eval::{mask_iou, MetricBundle};
use latent_clan::prompt_dsl::{parse_with, Lexicon, PromptSpec};
use latent_clan::toy_world::{render_face, LatentCode, DEFAULT_FACE_SIZE};
use serde::{Deserialize, Serialize};

use crate::ApiError;

fn parse_prompt(model: &Model, text: &str, field: &str) -> Result<PromptSpec, ApiError> {
    let lex = Lexicon::for_attributes(&model.world().attribute_names);
    parse_with(text, &lex).map_err(|e| ApiError::from(latent_clan::Error::from(e)).in_field(field))
}

fn check_world(model: &Model, hash: &Option<String>) -> Result<(), ApiError> {
    match hash {
        Some(h) if *h != model.checkpoint().world_hash => Err(latent_clan::Error::WorldMismatch {
            expected: model.checkpoint().world_hash.clone(),
            actual: h.clone(),
        }
        .into()),
        _ => Ok(()),
    }
}

fn check_latent(model: &Model, w: &LatentCode, field: &str) -> Result<(), ApiError> {
    if w.dim() != model.latent_dim() || !w.is_finite() {
        return Err(ApiError::bad_request(format!(
            "{field} must hold {} finite values",
            model.latent_dim()
        ))
        .in_field(field));
    }
    Ok(())
}

/// A latent together with its clamped attributes and rendered face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceResponse {
    pub w: LatentCode,
    pub attributes: Vec<f64>,
    pub svg: String,
}

impl FaceResponse {
    fn new(model: &Model, w: LatentCode) -> Self {
        let attributes = model.world().readout_clamped(&w);
        let svg = render_face(&attributes, DEFAULT_FACE_SIZE);
        Self { w, attributes, svg }
    }
}

fn default_guidance() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    /// Empty or absent means unconditional.
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_guidance")]
    pub guidance: f64,
    #[serde(default)]
    pub world_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    #[serde(flatten)]
    pub face: FaceResponse,
    pub seed: u64,
    /// Canonical clause form of the parsed prompt.
    pub spec: Option<String>,
}

pub fn generate(model: &Model, req: GenerateRequest) -> Result<GenerateResponse, ApiError> {
    check_world(model, &req.world_hash)?;
    let spec = match req.prompt.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(text) => Some(parse_prompt(model, text, "prompt")?),
    };
    let w = model
        .sample(spec.as_ref(), 1, req.guidance, req.seed)?
        .remove(0);
    Ok(GenerateResponse {
        face: FaceResponse::new(model, w),
        seed: req.seed,
        spec: spec.map(|s| s.canonical_text(&model.world().attribute_names)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Topk,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMethod {
    #[default]
    Eps,
    W,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRequest {
    pub src_prompt: String,
    pub tgt_prompt: String,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub last_k: Option<usize>,
    #[serde(default)]
    pub mode: ModeName,
    /// `k` for top-k (default 8), `θ` for threshold (default 0.6).
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub guidance: Option<f64>,
    #[serde(default)]
    pub trajectory: Option<TrajectoryCondition>,
    #[serde(default)]
    pub method: MaskMethod,
    #[serde(default)]
    pub world_hash: Option<String>,
}

impl MaskRequest {
    pub fn config(&self) -> MaskEstimationConfig {
        let d = MaskEstimationConfig::default();
        MaskEstimationConfig {
            n_samples: self.n.unwrap_or(d.n_samples),
            last_k_steps: self.last_k.unwrap_or(d.last_k_steps),
            guidance: self.guidance.unwrap_or(d.guidance),
            trajectory_condition: self.trajectory.unwrap_or(d.trajectory_condition),
            seed: self.seed,
        }
    }

    pub fn mask_mode(&self) -> Result<MaskMode, ApiError> {
        match self.mode {
            ModeName::Topk => {
                let k = self.value.unwrap_or(8.0);
                if k < 0.0 || k.fract() != 0.0 {
                    return Err(ApiError::bad_request(format!(
                        "topk value {k} must be a non-negative integer"
                    ))
                    .in_field("value"));
                }
                Ok(MaskMode::TopK(k as usize))
            }
            ModeName::Threshold => Ok(MaskMode::Threshold(self.value.unwrap_or(0.6))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub saliency: Vec<f64>,
    pub mask: Vec<bool>,
    pub degenerate: bool,
    /// IoU against the ground-truth supports of the target's attributes.
    pub gt_iou: Option<f64>,
    /// Dims per attribute group, for drawing group boundaries.
    pub group_size: usize,
}

pub fn mask(model: &Model, req: MaskRequest) -> Result<MaskResponse, ApiError> {
    check_world(model, &req.world_hash)?;
    let src = parse_prompt(model, &req.src_prompt, "src_prompt")?;
    let tgt = parse_prompt(model, &req.tgt_prompt, "tgt_prompt")?;
    let mode = req.mask_mode()?;
    let cfg = req.config();
    let m = match req.method {
        MaskMethod::Eps => estimate_mask_eps(model, &src, &tgt, &cfg, mode)?,
        MaskMethod::W => estimate_mask_w(model, &src, &tgt, &cfg, mode)?,
    };
    let world = model.world();
    let gts = tgt
        .attributes()
        .iter()
        .map(|&k| world.gt_support(k))
        .collect::<latent_clan::Result<Vec<_>>>()?;
    let gt_iou = if gts.is_empty() {
        None
    } else {
        Some(mask_iou(&m, &LatentMask::union(&gts)?)?)
    };
    Ok(MaskResponse {
        saliency: m.saliency().to_vec(),
        mask: m.flags().to_vec(),
        degenerate: m.is_degenerate(),
        gt_iou,
        group_size: world.group_size,
    })
}

fn default_lambda() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertRequest {
    pub attributes: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub reference: Option<LatentCode>,
    #[serde(default)]
    pub mode: Option<InvertMode>,
}

pub type InvertResponse = FaceResponse;

pub fn invert(model: &Model, req: InvertRequest) -> Result<InvertResponse, ApiError> {
    if let Some(r) = &req.reference {
        check_latent(model, r, "reference")?;
    }
    let mode = req.mode.unwrap_or(InvertMode::ClosedForm);
    let w = latent_clan::editing::invert(
        model.world(),
        &req.attributes,
        req.lambda,
        req.reference.as_ref(),
        mode,
    )?;
    Ok(FaceResponse::new(model, w))
}

/// Bare flags or a full mask object as produced by `/api/mask` or the CLI.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MaskInput {
    Flags(Vec<bool>),
    Full(LatentMask),
}

impl MaskInput {
    pub fn into_mask(self) -> LatentMask {
        match self {
            MaskInput::Flags(f) => LatentMask::from_flags(f),
            MaskInput::Full(m) => m,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    #[serde(default)]
    pub w: Option<LatentCode>,
    #[serde(default)]
    pub identity_seed: Option<u64>,
    pub tgt_prompt: String,
    /// Estimated from the opposite prompt pair with default settings when
    /// absent.
    #[serde(default)]
    pub mask: Option<MaskInput>,
    #[serde(default)]
    pub t_prime: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub guidance: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub world_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub w_original: LatentCode,
    pub w_edit: LatentCode,
    pub direction: Vec<f64>,
    pub mask: Vec<bool>,
    pub attributes: Vec<f64>,
    pub svg: String,
    pub metrics: MetricBundle,
    pub t_prime: usize,
}

pub fn edit(model: &Model, req: EditRequest) -> Result<EditResponse, ApiError> {
    check_world(model, &req.world_hash)?;
    let w_e = match (&req.w, req.identity_seed) {
        (Some(w), None) => {
            check_latent(model, w, "w")?;
            w.clone()
        }
        (None, Some(seed)) => invert_identity(model.world(), seed, default_lambda())?,
        _ => {
            return Err(ApiError::bad_request(
                "give exactly one of w and identity_seed",
            ))
        }
    };
    let spec = parse_prompt(model, &req.tgt_prompt, "tgt_prompt")?;
    let d = EditConfig::default();
    let cfg = EditConfig {
        t_prime_fraction: req.t_prime.unwrap_or(d.t_prime_fraction),
        guidance: req.guidance.unwrap_or(d.guidance),
        alpha: req.alpha.unwrap_or(d.alpha),
        seed: req.seed,
    };
    let mask = match req.mask {
        Some(m) => m.into_mask(),
        None => {
            let (src, tgt) = opposite_pair(&spec)?;
            let mcfg = MaskEstimationConfig {
                seed: req.seed,
                ..MaskEstimationConfig::default()
            };
            estimate_mask_eps(
                model,
                &src,
                &tgt,
                &mcfg,
                MaskMode::TopK(model.world().group_size),
            )?
        }
    };
    let r = masked_edit(model, &w_e, &spec, &mask, &cfg)?;
    let metrics = MetricBundle::compute(
        model.world(),
        &r.w_original,
        &r.w_edit,
        &spec,
        Some(&r.mask),
    )?;
    let face = FaceResponse::new(model, r.w_edit.clone());
    Ok(EditResponse {
        w_original: r.w_original,
        w_edit: r.w_edit,
        direction: r.direction,
        mask: r.mask.flags().to_vec(),
        attributes: face.attributes,
        svg: face.svg,
        metrics,
        t_prime: r.t_prime,
    })
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionRequest {
    pub w_input: LatentCode,
    pub direction: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

pub fn apply_direction(model: &Model, req: DirectionRequest) -> Result<FaceResponse, ApiError> {
    check_latent(model, &req.w_input, "w_input")?;
    if !req.alpha.is_finite() || req.direction.iter().any(|d| !d.is_finite()) {
        return Err(ApiError::bad_request("alpha and direction must be finite"));
    }
    let w = latent_clan::editing::apply_direction(&req.w_input, &req.direction, req.alpha)?;
    Ok(FaceResponse::new(model, w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub hash: String,
    pub seed: u64,
    pub latent_dim: usize,
    pub num_attributes: usize,
    pub group_size: usize,
    pub cond_dim: usize,
    pub style_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub phrase: String,
    pub attribute: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub world: WorldSummary,
    pub schedule: ScheduleParams,
    pub train_config: TrainConfig,
    pub smoothed_loss: Option<f64>,
    pub attribute_names: Vec<String>,
    pub lexicon: Vec<LexiconEntry>,
}

pub fn model_info(model: &Model) -> ModelInfo {
    let world = model.world();
    let ckpt = model.checkpoint();
    let lexicon = Lexicon::for_attributes(&world.attribute_names)
        .phrases()
        .map(|(p, k, v)| LexiconEntry {
            phrase: p.to_string(),
            attribute: world.attribute_names[k].clone(),
            value: v,
        })
        .collect();
    ModelInfo {
        world: WorldSummary {
            hash: world.hash(),
            seed: world.seed,
            latent_dim: world.latent_dim,
            num_attributes: world.num_attributes,
            group_size: world.group_size,
            cond_dim: world.cond_dim,
            style_sigma: world.style_sigma,
        },
        schedule: ckpt.schedule,
        train_config: ckpt.train_config.clone(),
        smoothed_loss: smoothed_loss(&ckpt.loss_trace),
        attribute_names: world.attribute_names.clone(),
        lexicon,
    }
}
