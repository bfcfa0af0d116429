use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::denoiser::Denoiser;
use super::schedule::{NoiseSchedule, ScheduleParams};
use crate::error::{Error, Result};
use crate::numerics::{self, AdamConfig, AdamState, Rng};
use crate::toy_world::WorldSpec;

/// Steps per loss-trace entry.
pub const LOSS_WINDOW: usize = 100;

const SPLIT_DATA: u64 = 0;
const SPLIT_INIT: u64 = 1;
const SPLIT_STEPS: u64 = 2;

fn default_hidden() -> Vec<usize> {
    vec![256, 256, 256]
}

fn default_ema_decay() -> f64 {
    0.999
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset_size: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub cond_drop_prob: f64,
    pub pseudo_noise_prob: f64,
    pub pseudo_noise_sigma: f64,
    pub seed: u64,
    /// Hidden layer widths of the denoiser.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Decay of the parameter average stored in the checkpoint; 0 keeps the
    /// raw final parameters.
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset_size: 200_000,
            batch: 128,
            steps: 40_000,
            lr: 1e-3,
            cond_drop_prob: 0.1,
            pseudo_noise_prob: 0.5,
            pseudo_noise_sigma: 0.1,
            seed: 0,
            hidden: default_hidden(),
            ema_decay: default_ema_decay(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} = {p} is not a probability"
                )))
            }
        };
        prob("cond_drop_prob", self.cond_drop_prob)?;
        prob("pseudo_noise_prob", self.pseudo_noise_prob)?;
        if self.dataset_size == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument(
                "dataset_size and batch must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidArgument(format!(
                "ema_decay = {} outside [0, 1)",
                self.ema_decay
            )));
        }
        if self.lr.is_nan()
            || self.lr <= 0.0
            || self.pseudo_noise_sigma.is_nan()
            || self.pseudo_noise_sigma < 0.0
        {
            return Err(Error::InvalidArgument(
                "lr must be positive and pseudo_noise_sigma non-negative".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "denoiser needs non-empty hidden layers".into(),
            ));
        }
        Ok(())
    }
}

/// Progress report passed to the training callback after each loss window.
#[derive(Debug, Clone, Copy)]
pub struct TrainProgress {
    pub step: usize,
    pub total: usize,
    pub window_loss: f64,
}

/// Offline `(w, c)` pairs drawn through the world's image encoder.
struct Dataset {
    latents: Vec<f64>,
    conds: Vec<f64>,
    len: usize,
}

fn synthesize(world: &WorldSpec, n: usize, rng: &mut Rng) -> Dataset {
    let mut latents = Vec::with_capacity(n * world.latent_dim);
    let mut conds = Vec::with_capacity(n * world.cond_dim);
    for _ in 0..n {
        let attrs = world.sample_attributes(rng);
        let w = world.attributes_to_latent(&attrs);
        conds.extend_from_slice(&world.condition_encode_image(&w).values);
        latents.extend(w.to_f64());
    }
    Dataset {
        latents,
        conds,
        len: n,
    }
}

/// Per-dim mean of the training distribution, estimated from `n` fresh draws
/// of the same synthesis process.
pub fn dataset_mean(world: &WorldSpec, config: &TrainConfig) -> Vec<f64> {
    let mut rng = Rng::new(config.seed).split(SPLIT_DATA);
    let data = synthesize(world, config.dataset_size, &mut rng);
    let d = world.latent_dim;
    let mut mean = vec![0.0; d];
    for row in data.latents.chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= data.len as f64);
    mean
}

pub fn train(
    world: &WorldSpec,
    config: &TrainConfig,
    schedule: ScheduleParams,
) -> Result<Checkpoint> {
    train_with_progress(world, config, schedule, &mut |_| {})
}

/// Trains the denoiser on `‖ε − ε_θ(x_t, t, c)‖²` with condition dropout and
/// pseudo-embedding noise.
pub fn train_with_progress(
    world: &WorldSpec,
    config: &TrainConfig,
    schedule: ScheduleParams,
    progress: &mut dyn FnMut(&TrainProgress),
) -> Result<Checkpoint> {
    config.validate()?;
    let sched = NoiseSchedule::new(schedule)?;
    let root = Rng::new(config.seed);
    let (d, m) = (world.latent_dim, world.cond_dim);
    let mut denoiser = Denoiser::init(
        d,
        m,
        sched.steps(),
        &config.hidden,
        &mut root.split(SPLIT_INIT),
    );
    let mut trace = Vec::new();
    if config.steps == 0 {
        return Ok(Checkpoint::new(
            world,
            schedule,
            denoiser,
            config.clone(),
            trace,
        ));
    }

    let data = synthesize(world, config.dataset_size, &mut root.split(SPLIT_DATA));
    let mut rng = root.split(SPLIT_STEPS);
    let shapes: Vec<usize> = denoiser
        .net_mut()
        .tensors_mut()
        .iter()
        .map(|t| t.len())
        .collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &shapes,
    );
    let mut ema = (config.ema_decay > 0.0).then(|| denoiser.net().clone());

    let b = config.batch;
    let width = denoiser.input_dim();
    let mut input = vec![0.0; b * width];
    let mut eps = vec![0.0; b * d];
    let mut x_t = vec![0.0; d];
    let mut cond = vec![0.0; m];
    let mut window = 0.0;
    let mut window_len = 0;

    for step in 0..config.steps {
        rng.fill_gaussian(&mut eps);
        for (r, row) in input.chunks_exact_mut(width).enumerate() {
            let i = rng.below(data.len);
            let t = 1 + rng.below(sched.steps());
            let x0 = &data.latents[i * d..(i + 1) * d];
            let ab = sched.alpha_bar(t);
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            for ((x, &w), &e) in x_t.iter_mut().zip(x0).zip(&eps[r * d..(r + 1) * d]) {
                *x = sa * w + sb * e;
            }
            cond.copy_from_slice(&data.conds[i * m..(i + 1) * m]);
            if rng.uniform() < config.cond_drop_prob {
                cond.fill(0.0);
            } else if rng.uniform() < config.pseudo_noise_prob {
                let g = rng.gaussian(m);
                let noisy: Vec<f64> = cond
                    .iter()
                    .zip(&g)
                    .map(|(c, g)| c + config.pseudo_noise_sigma * g)
                    .collect();
                if let Some(n) = numerics::normalized(&noisy) {
                    cond.copy_from_slice(&n);
                }
            }
            denoiser.write_input(row, &x_t, t, &cond);
        }

        let (pred, fwd) = denoiser.net().forward_traced(&input, b)?;
        let scale = 2.0 / (b * d) as f64;
        let mut loss = 0.0;
        let upstream: Vec<f64> = pred
            .iter()
            .zip(&eps)
            .map(|(p, e)| {
                let r = p - e;
                loss += r * r;
                scale * r
            })
            .collect();
        loss /= (b * d) as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let (grads, _) = denoiser.net().backward_batch(&fwd, &upstream)?;
        let g = grads.tensors();
        adam.step(&mut denoiser.net_mut().tensors_mut(), &g)?;
        if let Some(avg) = ema.as_mut() {
            // warm-up keeps early averages from being dominated by the initialization
            let decay = config.ema_decay.min((1 + step) as f64 / (10 + step) as f64);
            for (a, p) in avg
                .tensors_mut()
                .into_iter()
                .zip(denoiser.net_mut().tensors_mut())
            {
                for (x, &y) in a.iter_mut().zip(p.iter()) {
                    *x = decay * *x + (1.0 - decay) * y;
                }
            }
        }

        window += loss;
        window_len += 1;
        if window_len == LOSS_WINDOW || step + 1 == config.steps {
            let mean = window / window_len as f64;
            trace.push(mean);
            progress(&TrainProgress {
                step: step + 1,
                total: config.steps,
                window_loss: mean,
            });
            window = 0.0;
            window_len = 0;
        }
    }
    if let Some(avg) = ema {
        *denoiser.net_mut() = avg;
    }
    denoiser.net_mut().quantize_f32();
    if !denoiser.net().is_finite() {
        return Err(Error::Diverged { step: config.steps });
    }
    Ok(Checkpoint::new(
        world,
        schedule,
        denoiser,
        config.clone(),
        trace,
    ))
}

/// Mean of the last ten loss-trace entries (the last 1000 steps).
pub fn smoothed_loss(trace: &[f64]) -> Option<f64> {
    if trace.is_empty() {
        return None;
    }
    let tail = &trace[trace.len().saturating_sub(10)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(steps: usize) -> TrainConfig {
        TrainConfig {
            dataset_size: 2000,
            batch: 32,
            steps,
            hidden: vec![32, 32],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_is_initialization() {
        let world = WorldSpec::faces(0).unwrap();
        let ckpt = train(&world, &small(0), ScheduleParams::default()).unwrap();
        let init = Denoiser::init(64, 32, 1000, &[32, 32], &mut Rng::new(0).split(SPLIT_INIT));
        assert_eq!(ckpt.denoiser, init);
        assert!(ckpt.loss_trace.is_empty());
        assert!(!ckpt.is_trained());
    }

    #[test]
    fn loss_trace_windows() {
        let world = WorldSpec::faces(0).unwrap();
        let ckpt = train(&world, &small(250), ScheduleParams::default()).unwrap();
        assert_eq!(ckpt.loss_trace.len(), 3);
        assert!(ckpt.loss_trace.iter().all(|l| l.is_finite() && *l > 0.0));
        assert!(ckpt.loss_trace[2] < ckpt.loss_trace[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let world = WorldSpec::faces(3).unwrap();
        let a = train(&world, &small(30), ScheduleParams::default()).unwrap();
        let b = train(&world, &small(30), ScheduleParams::default()).unwrap();
        assert_eq!(a.denoiser, b.denoiser);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn divergence_is_reported() {
        let world = WorldSpec::faces(0).unwrap();
        let cfg = TrainConfig {
            lr: 1e300,
            ..small(50)
        };
        assert!(matches!(
            train(&world, &cfg, ScheduleParams::default()),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TrainConfig {
            cond_drop_prob: 1.5,
            ..small(1)
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch: 0,
            ..small(1)
        }
        .validate()
        .is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn smoothing() {
        assert_eq!(smoothed_loss(&[]), None);
        assert_eq!(smoothed_loss(&[2.0, 4.0]), Some(3.0));
        let long: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(smoothed_loss(&long), Some(14.5));
    }
}
