//! DDIM driven by the Bayes-optimal Gaussian denoiser must reproduce the
//! target Gaussian, independent of any learned network.

use latent_clan::diffusion::{analytic_gaussian_eps, ddim_sample, NoiseSchedule, ScheduleParams};
use latent_clan::numerics::Rng;

const D: usize = 8;
const SAMPLES: usize = 10_000;

fn target(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mu: Vec<f64> = rng.gaussian(D).iter().map(|x| 0.5 * x).collect();
    let a = rng.gaussian(D * D);
    let mut sigma = vec![0.0; D * D];
    for i in 0..D {
        for j in 0..D {
            let s: f64 = (0..D).map(|k| a[i * D + k] * a[j * D + k]).sum();
            sigma[i * D + j] = s / D as f64 + if i == j { 0.05 } else { 0.0 };
        }
    }
    (mu, sigma)
}

#[test]
fn deterministic_ddim_matches_gaussian_moments() {
    let sched = NoiseSchedule::new(ScheduleParams::default()).unwrap();
    let mut rng = Rng::new(11);
    let (mu, sigma) = target(&mut rng);
    let z = rng.gaussian(SAMPLES * D);
    let out = ddim_sample(
        &sched,
        &z,
        0,
        &mut rng.split(1),
        |x, t| {
            let mut eps = Vec::with_capacity(x.len());
            for row in x.chunks_exact(D) {
                eps.extend(analytic_gaussian_eps(&sched, &mu, &sigma, row, t)?);
            }
            Ok(eps)
        },
        |_, _| Ok(()),
    )
    .unwrap();

    let n = SAMPLES as f64;
    let mut mean = [0.0; D];
    for row in out.chunks_exact(D) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n;
        }
    }
    for (m, t) in mean.iter().zip(&mu) {
        assert!((m - t).abs() < 0.05, "mean {m} vs {t}");
    }
    let mut cov = vec![0.0; D * D];
    for row in out.chunks_exact(D) {
        for i in 0..D {
            for j in 0..D {
                cov[i * D + j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let diff: f64 = cov
        .iter()
        .zip(&sigma)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = sigma.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(
        diff / scale < 0.1,
        "covariance relative error {}",
        diff / scale
    );
}
