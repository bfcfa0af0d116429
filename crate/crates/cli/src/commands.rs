use std::path::Path;

use latent_clan::diffusion::{train_with_progress, Checkpoint, Model};
use latent_clan::editing::{
    estimate_mask_eps, estimate_mask_w, invert, invert_identity, masked_edit, opposite_pair,
    EditResult, InvertMode, LatentMask, MaskMode,
};
use latent_clan::eval::{mask_iou, run_ablation, MetricBundle};
use latent_clan::prompt_dsl::{parse_with, Lexicon, PromptSpec};
use latent_clan::toy_world::{render_face, LatentCode, WorldSpec};
use latent_clan_service::api::MaskInput;
use serde::Serialize;
use serde_json::Value;

use crate::config::Effective;
use crate::{
    Cli, CliError, Command, EvalAction, GlobalArgs, MaskMethodArg, TableFormat, WorldAction,
};

struct Ctx {
    global: GlobalArgs,
    eff: Effective,
}

impl Ctx {
    fn world(&self) -> Result<WorldSpec, CliError> {
        match &self.global.world {
            Some(path) => {
                let text = read(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
            }
            None => Ok(WorldSpec::new(&self.eff.config.world)?),
        }
    }

    fn model(&self) -> Result<Model, CliError> {
        let world = self.world()?;
        let path = &self.global.ckpt;
        let ckpt = Checkpoint::load(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(Model::new(world, ckpt)?)
    }

    fn require_seed(&self, command: &str) -> Result<(), CliError> {
        match self.global.seed {
            Some(_) => Ok(()),
            None => Err(CliError::Usage(format!("`{command}` requires --seed"))),
        }
    }

    /// Writes `body` with the config hash and, for randomized commands, the
    /// effective seed.
    fn emit<T: Serialize>(
        &self,
        body: &T,
        seed: Option<u64>,
        pretty: bool,
    ) -> Result<(), CliError> {
        let out = Stamped {
            body,
            config_hash: self.eff.hash(),
            seed,
        };
        let mut text = if pretty {
            serde_json::to_string_pretty(&out)
        } else {
            serde_json::to_string(&out)
        }
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(self.global.out.as_deref(), &text)
    }

    fn write(&self, path: Option<&Path>, text: &str) -> Result<(), CliError> {
        match path {
            Some(p) => std::fs::write(p, text)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

/// Output envelope. Bodies are serialized directly so `f32` latents keep
/// their shortest representation, matching the HTTP API.
#[derive(Serialize)]
struct Stamped<'a, T> {
    #[serde(flatten)]
    body: &'a T,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct WorldOut<'a> {
    #[serde(flatten)]
    world: &'a WorldSpec,
    hash: String,
}

#[derive(Serialize)]
struct FaceOut {
    attributes: Vec<f64>,
    w: LatentCode,
}

#[derive(Serialize)]
struct SampleOut {
    prompt: Option<String>,
    spec: Option<String>,
    guidance: f64,
    samples: Vec<FaceOut>,
}

#[derive(Serialize)]
struct MaskOut<'a> {
    #[serde(flatten)]
    mask: &'a LatentMask,
    src: String,
    tgt: String,
    gt_iou: Option<f64>,
    group_size: usize,
}

#[derive(Serialize)]
struct EditOut<'a> {
    #[serde(flatten)]
    result: &'a EditResult,
    attributes: Vec<f64>,
    identity_seed: Option<u64>,
}

#[derive(Serialize)]
struct InvertOut {
    #[serde(flatten)]
    face: FaceOut,
    lambda: f64,
}

fn echo_seed(seed: u64) {
    eprintln!("seed: {seed}");
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn parse_prompt(model: &Model, text: &str) -> Result<PromptSpec, CliError> {
    let lex = Lexicon::for_attributes(&model.world().attribute_names);
    parse_with(text, &lex).map_err(|e| CliError::Usage(format!("prompt {text:?}: {e}")))
}

fn parse_values(raw: &str, expected: usize) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = if raw.trim_start().starts_with('[') {
        serde_json::from_str(raw).map_err(|e| CliError::Usage(format!("--attrs: {e}")))?
    } else {
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Usage(format!("--attrs value {s:?}: {e}")))
            })
            .collect::<Result<_, _>>()?
    };
    if values.len() != expected || values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!(
            "--attrs needs {expected} finite values, got {}",
            values.len()
        )));
    }
    Ok(values)
}

fn read_latent(path: &Path) -> Result<LatentCode, CliError> {
    let value: Value = serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let inner = match &value {
        Value::Object(o) => o
            .get("w")
            .or_else(|| o.get("w_edit"))
            .cloned()
            .unwrap_or(Value::Null),
        other => other.clone(),
    };
    serde_json::from_value(inner)
        .map_err(|e| CliError::Runtime(format!("{}: no latent array: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.global.config.as_deref().map(read).transpose()?;
    let eff = Effective::build(file.as_deref(), &cli.global.sets, cli.global.seed)?;
    let ctx = Ctx {
        global: cli.global,
        eff,
    };
    let cfg = &ctx.eff.config;
    match cli.command {
        Command::World {
            action: WorldAction::Init,
        } => {
            echo_seed(cfg.world.seed);
            let world = ctx.world()?;
            ctx.emit(
                &WorldOut {
                    world: &world,
                    hash: world.hash(),
                },
                Some(cfg.world.seed),
                true,
            )
        }
        Command::Train => {
            ctx.require_seed("train")?;
            echo_seed(cfg.train.seed);
            let world = ctx.world()?;
            let verbose = ctx.global.verbose > 0;
            let ckpt = train_with_progress(&world, &cfg.train, cfg.schedule, &mut |p| {
                if verbose {
                    eprintln!("step {}/{} loss {:.5}", p.step, p.total, p.window_loss);
                }
            })?;
            let value: Value = serde_json::from_str(&ckpt.to_json()?)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let out = ctx
                .global
                .out
                .clone()
                .unwrap_or_else(|| ctx.global.ckpt.clone());
            let ctx = Ctx {
                global: GlobalArgs {
                    out: Some(out),
                    ..ctx.global
                },
                eff: ctx.eff.clone(),
            };
            ctx.emit(&value, Some(cfg.train.seed), false)
        }
        Command::Sample {
            prompt,
            n,
            guidance,
        } => {
            if n == 0 {
                return Err(CliError::Usage("-n must be at least 1".into()));
            }
            let seed = cfg.sample.seed;
            echo_seed(seed);
            let model = ctx.model()?;
            let spec = match prompt.as_deref().map(str::trim) {
                Some(p) if !p.is_empty() => Some(parse_prompt(&model, p)?),
                _ => None,
            };
            let g = guidance.unwrap_or(cfg.sample.guidance);
            let world = model.world();
            let samples = model
                .sample(spec.as_ref(), n, g, seed)?
                .into_iter()
                .map(|w| FaceOut {
                    attributes: world.readout_clamped(&w),
                    w,
                })
                .collect();
            let spec = spec.map(|s| s.canonical_text(&world.attribute_names));
            ctx.emit(
                &SampleOut {
                    prompt,
                    spec,
                    guidance: g,
                    samples,
                },
                Some(seed),
                true,
            )
        }
        Command::Mask {
            src,
            tgt,
            topk,
            threshold,
            method,
        } => {
            let mode = match (topk, threshold) {
                (Some(k), _) => MaskMode::TopK(k),
                (_, Some(t)) => MaskMode::Threshold(t),
                _ => cfg.mask_mode,
            };
            let seed = cfg.mask.seed;
            echo_seed(seed);
            let model = ctx.model()?;
            mode.validate(model.latent_dim())
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let (s, t) = (parse_prompt(&model, &src)?, parse_prompt(&model, &tgt)?);
            let mask = match method {
                MaskMethodArg::Eps => estimate_mask_eps(&model, &s, &t, &cfg.mask, mode)?,
                MaskMethodArg::W => estimate_mask_w(&model, &s, &t, &cfg.mask, mode)?,
            };
            if mask.is_degenerate() {
                eprintln!("warning: saliency is constant; the mask is degenerate");
            }
            let world = model.world();
            let gts = t
                .attributes()
                .iter()
                .map(|&k| world.gt_support(k))
                .collect::<latent_clan::Result<Vec<_>>>()?;
            let gt_iou = if gts.is_empty() {
                None
            } else {
                Some(mask_iou(&mask, &LatentMask::union(&gts)?)?)
            };
            ctx.emit(
                &MaskOut {
                    mask: &mask,
                    src,
                    tgt,
                    gt_iou,
                    group_size: world.group_size,
                },
                Some(seed),
                true,
            )
        }
        Command::Edit {
            identity_seed,
            latent,
            prompt,
            mask_file,
            alpha,
            tprime,
            guidance,
        } => {
            let mut ecfg = cfg.edit.clone();
            ecfg.alpha = alpha.unwrap_or(ecfg.alpha);
            ecfg.t_prime_fraction = tprime.unwrap_or(ecfg.t_prime_fraction);
            ecfg.guidance = guidance.unwrap_or(ecfg.guidance);
            ecfg.validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            echo_seed(ecfg.seed);
            let model = ctx.model()?;
            let world = model.world();
            let w_e = match (identity_seed, &latent) {
                (Some(s), _) => invert_identity(world, s, cfg.invert.lambda)?,
                (None, Some(path)) => read_latent(path)?,
                (None, None) => unreachable!("clap requires one input"),
            };
            if w_e.dim() != world.latent_dim || !w_e.is_finite() {
                return Err(CliError::Runtime(format!(
                    "input latent must hold {} finite values",
                    world.latent_dim
                )));
            }
            let spec = parse_prompt(&model, &prompt)?;
            let mask = match &mask_file {
                Some(path) => {
                    let input: MaskInput = serde_json::from_str(&read(path)?).map_err(|e| {
                        CliError::Runtime(format!("{}: not a mask: {e}", path.display()))
                    })?;
                    input.into_mask()
                }
                None => {
                    let (src, tgt) = opposite_pair(&spec)?;
                    estimate_mask_eps(&model, &src, &tgt, &cfg.mask, cfg.mask_mode)?
                }
            };
            let mut r = masked_edit(&model, &w_e, &spec, &mask, &ecfg)?;
            r.metrics = Some(MetricBundle::compute(
                world,
                &r.w_original,
                &r.w_edit,
                &spec,
                Some(&r.mask),
            )?);
            let out = EditOut {
                result: &r,
                attributes: world.readout_clamped(&r.w_edit),
                identity_seed,
            };
            ctx.emit(&out, Some(ecfg.seed), true)
        }
        Command::Invert {
            attrs,
            lambda,
            reference,
        } => {
            let world = ctx.world()?;
            let target = parse_values(&attrs, world.num_attributes)?;
            let lambda = lambda.unwrap_or(cfg.invert.lambda);
            let reference = reference.as_deref().map(read_latent).transpose()?;
            let w = invert(
                &world,
                &target,
                lambda,
                reference.as_ref(),
                InvertMode::ClosedForm,
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            ctx.emit(
                &InvertOut {
                    face: FaceOut {
                        attributes: world.readout_clamped(&w),
                        w,
                    },
                    lambda,
                },
                None,
                true,
            )
        }
        Command::Eval {
            action: EvalAction::Table { format },
        } => {
            ctx.require_seed("eval table")?;
            let seed = cfg.ablation.seed;
            echo_seed(seed);
            let model = ctx.model()?;
            let report = run_ablation(&model, &cfg.ablation)?;
            match format {
                TableFormat::Json => ctx.emit(&report, Some(seed), true),
                TableFormat::Text => {
                    let text = format!(
                        "{}config_hash: {}\nseed: {seed}\n",
                        report.to_table(),
                        ctx.eff.hash()
                    );
                    ctx.write(ctx.global.out.as_deref(), &text)
                }
            }
        }
        Command::Serve { port, host } => {
            let model = ctx.model()?;
            let addr = std::net::SocketAddr::new(host, port);
            eprintln!("listening on http://{addr}");
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?;
            rt.block_on(latent_clan_service::serve(model, addr))?;
            Ok(())
        }
        Command::Render { attrs, size } => {
            let world = ctx.world()?;
            let values = parse_values(&attrs, world.num_attributes)?;
            if size == 0 {
                return Err(CliError::Usage("--size must be positive".into()));
            }
            ctx.write(ctx.global.out.as_deref(), &render_face(&values, size))
        }
    }
}
