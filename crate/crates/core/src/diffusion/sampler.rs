use super::checkpoint::Checkpoint;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{self, Rng};
use crate::prompt_dsl::PromptSpec;
use crate::toy_world::{LatentCode, WorldSpec};

/// Runs DDIM from `schedule.step_pairs()[start..]` on a flattened batch.
///
/// `eps_fn(x, t)` returns predictions for the whole batch; `after_step(x,
/// t_prev)` may rewrite the state after every update.
pub fn ddim_sample(
    schedule: &NoiseSchedule,
    x: &[f64],
    start: usize,
    rng: &mut Rng,
    mut eps_fn: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
    mut after_step: impl FnMut(&mut Vec<f64>, usize) -> Result<()>,
) -> Result<Vec<f64>> {
    let mut x = x.to_vec();
    for &(t, t_prev) in &schedule.step_pairs()[start..] {
        let eps = eps_fn(&x, t)?;
        x = schedule.ddim_step(&x, &eps, t, t_prev, rng)?;
        after_step(&mut x, t_prev)?;
    }
    Ok(x)
}

/// A checkpoint bound to the world it was trained for.
#[derive(Debug, Clone)]
pub struct Model {
    world: WorldSpec,
    ckpt: Checkpoint,
    schedule: NoiseSchedule,
}

impl Model {
    pub fn new(world: WorldSpec, ckpt: Checkpoint) -> Result<Self> {
        ckpt.check_world(&world)?;
        let schedule = NoiseSchedule::new(ckpt.schedule)?;
        Ok(Self {
            world,
            ckpt,
            schedule,
        })
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn latent_dim(&self) -> usize {
        self.world.latent_dim
    }

    pub fn require_trained(&self) -> Result<()> {
        if self.ckpt.is_trained() {
            Ok(())
        } else {
            Err(Error::Untrained)
        }
    }

    /// Spec condition vector, or the null condition for `None`.
    pub fn condition(&self, spec: Option<&PromptSpec>) -> Result<Vec<f64>> {
        match spec {
            Some(s) => Ok(self.world.condition_encode_spec(s)?.values),
            None => Ok(self.world.null_condition().values),
        }
    }

    /// Guided prediction `ε(∅) + g·(ε(c) − ε(∅))`; `g = 0` and `g = 1` return
    /// the raw unconditional and conditional outputs.
    pub fn predict_eps(
        &self,
        xs: &[f64],
        t: usize,
        cond: &[f64],
        guidance: f64,
    ) -> Result<Vec<f64>> {
        let den = &self.ckpt.denoiser;
        let is_null = cond.iter().all(|&c| c == 0.0);
        if guidance == 1.0 || (is_null && guidance != 0.0) {
            return den.predict_batch(xs, t, cond);
        }
        let null = vec![0.0; cond.len()];
        let uncond = den.predict_batch(xs, t, &null)?;
        if guidance == 0.0 || is_null {
            return Ok(uncond);
        }
        let c = den.predict_batch(xs, t, cond)?;
        Ok(uncond
            .iter()
            .zip(&c)
            .map(|(u, c)| u + guidance * (c - u))
            .collect())
    }

    /// The full denoising map `D`: DDIM from `T` to 0 on a flattened batch.
    pub fn denoise_batch(
        &self,
        z_t: &[f64],
        cond: &[f64],
        guidance: f64,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        ddim_sample(
            &self.schedule,
            z_t,
            0,
            rng,
            |x, t| self.predict_eps(x, t, cond, guidance),
            |_, _| Ok(()),
        )
    }

    pub fn denoise_full(
        &self,
        z_t: &[f64],
        cond: &[f64],
        guidance: f64,
        rng: &mut Rng,
    ) -> Result<LatentCode> {
        if z_t.len() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "Z_T has {} entries, expected {}",
                z_t.len(),
                self.latent_dim()
            )));
        }
        Ok(LatentCode::from_f64(
            &self.denoise_batch(z_t, cond, guidance, rng)?,
        ))
    }

    /// Draws `n` samples; sample `i` starts from `Rng::new(seed).split(i)`.
    pub fn sample(
        &self,
        spec: Option<&PromptSpec>,
        n: usize,
        guidance: f64,
        seed: u64,
    ) -> Result<Vec<LatentCode>> {
        let cond = self.condition(spec)?;
        let d = self.latent_dim();
        let root = Rng::new(seed);
        let mut z = Vec::with_capacity(n * d);
        for i in 0..n {
            z.extend(root.split(i as u64).gaussian(d));
        }
        let mut rng = root.split(u64::MAX);
        let out = self.denoise_batch(&z, &cond, guidance, &mut rng)?;
        Ok(out.chunks_exact(d).map(LatentCode::from_f64).collect())
    }

    /// Network output for `cond` without guidance.
    pub fn raw_eps(&self, xs: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>> {
        self.ckpt.denoiser.predict_batch(xs, t, cond)
    }
}

/// Bayes-optimal noise prediction for data `~ N(μ, Σ)`.
pub fn analytic_gaussian_eps(
    schedule: &NoiseSchedule,
    mu: &[f64],
    sigma: &[f64],
    x_t: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    let n = mu.len();
    if sigma.len() != n * n || x_t.len() != n {
        return Err(Error::Shape(
            "analytic oracle: μ, Σ and x_t disagree".into(),
        ));
    }
    if t == 0 || t > schedule.steps() {
        return Err(Error::InvalidArgument(format!(
            "oracle step {t} outside 1..={}",
            schedule.steps()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let sa = ab.sqrt();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = ab * sigma[i * n + j] + if i == j { 1.0 - ab } else { 0.0 };
        }
    }
    let r: Vec<f64> = x_t.iter().zip(mu).map(|(x, m)| x - sa * m).collect();
    let y = numerics::solve(&a, n, &r)?;
    let sy = numerics::mat_vec(sigma, n, n, &y);
    let sb = (1.0 - ab).sqrt();
    Ok((0..n)
        .map(|i| {
            let x0 = mu[i] + sa * sy[i];
            (x_t[i] - sa * x0) / sb
        })
        .collect())
}

/// Posterior mean `E[x0 | x_t]` for data `~ N(μ, Σ)`.
pub fn analytic_gaussian_x0(
    schedule: &NoiseSchedule,
    mu: &[f64],
    sigma: &[f64],
    x_t: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    let eps = analytic_gaussian_eps(schedule, mu, sigma, x_t, t)?;
    let ab = schedule.alpha_bar(t);
    Ok(x_t
        .iter()
        .zip(&eps)
        .map(|(x, e)| (x - (1.0 - ab).sqrt() * e) / ab.sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Denoiser, ScheduleParams, TrainConfig};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleParams::default()).unwrap()
    }

    #[test]
    fn identity_covariance_oracle() {
        let s = sched();
        let x = [0.4, -1.2, 2.0];
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        for &t in &[1usize, 300, 1000] {
            let e = analytic_gaussian_eps(&s, &[0.0; 3], &eye, &x, t).unwrap();
            let k = (1.0 - s.alpha_bar(t)).sqrt();
            for (ei, xi) in e.iter().zip(x) {
                assert!((ei - k * xi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn point_mass_oracle() {
        let s = sched();
        let mu = [0.7, -0.3];
        let x0 = analytic_gaussian_x0(&s, &mu, &[0.0; 4], &[5.0, 1.0], 400).unwrap();
        for (a, b) in x0.iter().zip(mu) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn untrained_model() -> Model {
        let world = WorldSpec::faces(0).unwrap();
        let den = Denoiser::init(64, 32, 1000, &[16], &mut Rng::new(2));
        let cfg = TrainConfig {
            steps: 0,
            hidden: vec![16],
            ..TrainConfig::default()
        };
        Model::new(
            world.clone(),
            Checkpoint::new(&world, ScheduleParams::default(), den, cfg, vec![]),
        )
        .unwrap()
    }

    #[test]
    fn guidance_endpoints_are_exact() {
        let m = untrained_model();
        let x = Rng::new(4).gaussian(64);
        let spec = crate::prompt_dsl::parse("a person with glasses").unwrap();
        let c = m.condition(Some(&spec)).unwrap();
        let u = m.raw_eps(&x, 500, &[0.0; 32]).unwrap();
        assert_eq!(m.predict_eps(&x, 500, &c, 0.0).unwrap(), u);
        assert_eq!(
            m.predict_eps(&x, 500, &c, 1.0).unwrap(),
            m.raw_eps(&x, 500, &c).unwrap()
        );
        let g2 = m.predict_eps(&x, 500, &c, 2.0).unwrap();
        assert_ne!(g2, u);
        let other = m
            .condition(Some(
                &crate::prompt_dsl::parse("a person with a hat").unwrap(),
            ))
            .unwrap();
        assert_eq!(m.predict_eps(&x, 500, &other, 0.0).unwrap(), u);
    }

    #[test]
    fn denoise_is_deterministic() {
        let m = untrained_model();
        let z = Rng::new(9).gaussian(64);
        let a = m
            .denoise_full(&z, &[0.0; 32], 2.0, &mut Rng::new(0))
            .unwrap();
        let b = m
            .denoise_full(&z, &[0.0; 32], 2.0, &mut Rng::new(1))
            .unwrap();
        assert_eq!(a, b);
        assert!(m.require_trained().is_err());
    }

    #[test]
    fn world_mismatch_is_rejected() {
        let m = untrained_model();
        let other = WorldSpec::faces(5).unwrap();
        assert!(matches!(
            Model::new(other, m.checkpoint().clone()),
            Err(Error::WorldMismatch { .. })
        ));
    }
}
