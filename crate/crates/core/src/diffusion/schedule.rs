use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Serializable schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
    pub eta: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            ddim_steps: 50,
            eta: 0.0,
        }
    }
}

/// Linear-β schedule with cumulative products and the DDIM sub-sequence.
///
/// Tables are indexed by the step `t ∈ 0..=T`; `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    timesteps: Vec<usize>,
}

impl NoiseSchedule {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams {
            steps,
            beta_start,
            beta_end,
            ddim_steps,
            eta,
        } = params;
        if ddim_steps < 2 || steps < ddim_steps {
            return Err(Error::InvalidArgument(format!(
                "need T >= ddim_steps >= 2, got T={steps}, ddim_steps={ddim_steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_1 < beta_T < 1, got {beta_start}, {beta_end}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidArgument(format!("eta {eta} outside [0, 1]")));
        }
        let mut betas = vec![0.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        for t in 1..=steps {
            let frac = (t - 1) as f64 / (steps - 1) as f64;
            betas[t] = beta_start + frac * (beta_end - beta_start);
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - betas[t]);
        }
        let timesteps = (0..ddim_steps)
            .rev()
            .map(|i| 1 + ((i * (steps - 1)) as f64 / (ddim_steps - 1) as f64).round() as usize)
            .collect();
        Ok(Self {
            params,
            betas,
            alpha_bar,
            timesteps,
        })
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.params.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// DDIM steps in sampling order, `T` first and `1` last.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// `(t, t_prev)` pairs of the sampling loop, ending at `t_prev = 0`.
    pub fn step_pairs(&self) -> Vec<(usize, usize)> {
        let ts = &self.timesteps;
        (0..ts.len())
            .map(|i| (ts[i], ts.get(i + 1).copied().unwrap_or(0)))
            .collect()
    }

    /// Index in [`NoiseSchedule::timesteps`] of the step closest to `fraction · T`.
    pub fn nearest_index(&self, fraction: f64) -> usize {
        let target = fraction * self.params.steps as f64;
        let mut best = 0;
        for (i, &t) in self.timesteps.iter().enumerate() {
            if (t as f64 - target).abs() < (self.timesteps[best] as f64 - target).abs() {
                best = i;
            }
        }
        best
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.params.steps {
            return Err(Error::InvalidArgument(format!(
                "step {t} outside 0..={}",
                self.params.steps
            )));
        }
        Ok(())
    }

    /// Closed-form forward noising `√ᾱ_t x0 + √(1-ᾱ_t) ε`.
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(Error::Shape(
                "q_sample: x0 and noise differ in length".into(),
            ));
        }
        let ab = self.alpha_bar[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// One DDIM update from `t` to `t_prev`; `rng` is drawn from only when
    /// `eta > 0`.
    pub fn ddim_step(
        &self,
        x_t: &[f64],
        eps: &[f64],
        t: usize,
        t_prev: usize,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if t_prev >= t {
            return Err(Error::InvalidArgument(format!(
                "ddim step needs t_prev < t, got {t_prev} >= {t}"
            )));
        }
        if x_t.len() != eps.len() {
            return Err(Error::Shape(
                "ddim_step: state and noise differ in length".into(),
            ));
        }
        let ab_t = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t_prev];
        let sigma = self.params.eta
            * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt()
            * (1.0 - ab_t / ab_prev).sqrt();
        let (sa_t, sb_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
        let sa_prev = ab_prev.sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let mut out: Vec<f64> = x_t
            .iter()
            .zip(eps)
            .map(|(x, e)| {
                let x0 = (x - sb_t * e) / sa_t;
                sa_prev * x0 + dir * e
            })
            .collect();
        if sigma > 0.0 {
            for o in out.iter_mut() {
                *o += sigma * rng.standard_normal();
            }
        }
        Ok(out)
    }
}
