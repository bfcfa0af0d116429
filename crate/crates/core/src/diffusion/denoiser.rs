use crate::error::{Error, Result};
use crate::numerics::{DenseNet, Rng};

/// Number of sinusoid frequencies in the time embedding (sin and cos each).
pub const TIME_FREQUENCIES: usize = 8;
pub const TIME_EMBED_DIM: usize = 2 * TIME_FREQUENCIES;

/// `sin/cos(2^j · π · t/T)` for `j = 0..8`, sines first.
pub fn time_embedding(t: usize, steps: usize) -> [f64; TIME_EMBED_DIM] {
    let s = t as f64 / steps as f64;
    let mut out = [0.0; TIME_EMBED_DIM];
    for j in 0..TIME_FREQUENCIES {
        let phase = (1u32 << j) as f64 * std::f64::consts::PI * s;
        out[j] = phase.sin();
        out[TIME_FREQUENCIES + j] = phase.cos();
    }
    out
}

/// Noise predictor `ε_θ(x_t, t, c)` over the concatenated input
/// `x_t ⧺ time_embedding(t) ⧺ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    net: DenseNet,
    latent_dim: usize,
    cond_dim: usize,
    steps: usize,
}

impl Denoiser {
    pub fn init(
        latent_dim: usize,
        cond_dim: usize,
        steps: usize,
        hidden: &[usize],
        rng: &mut Rng,
    ) -> Self {
        let mut dims = vec![latent_dim + TIME_EMBED_DIM + cond_dim];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        Self {
            net: DenseNet::init(&dims, rng),
            latent_dim,
            cond_dim,
            steps,
        }
    }

    pub fn from_net(
        net: DenseNet,
        latent_dim: usize,
        cond_dim: usize,
        steps: usize,
    ) -> Result<Self> {
        if net.input_dim() != latent_dim + TIME_EMBED_DIM + cond_dim
            || net.output_dim() != latent_dim
        {
            return Err(Error::Shape(format!(
                "denoiser net is {}→{}, expected {}→{latent_dim}",
                net.input_dim(),
                net.output_dim(),
                latent_dim + TIME_EMBED_DIM + cond_dim
            )));
        }
        Ok(Self {
            net,
            latent_dim,
            cond_dim,
            steps,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Writes one input row into `row`.
    pub(crate) fn write_input(&self, row: &mut [f64], x: &[f64], t: usize, cond: &[f64]) {
        let d = self.latent_dim;
        row[..d].copy_from_slice(x);
        row[d..d + TIME_EMBED_DIM].copy_from_slice(&time_embedding(t, self.steps));
        row[d + TIME_EMBED_DIM..].copy_from_slice(cond);
    }

    /// Predictions for `xs.len() / latent_dim` states sharing one step and
    /// one condition.
    pub fn predict_batch(&self, xs: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>> {
        let d = self.latent_dim;
        if xs.is_empty() || !xs.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "state buffer of {} entries is not a multiple of {d}",
                xs.len()
            )));
        }
        if cond.len() != self.cond_dim {
            return Err(Error::Shape(format!(
                "condition has {} entries, expected {}",
                cond.len(),
                self.cond_dim
            )));
        }
        if t > self.steps {
            return Err(Error::InvalidArgument(format!(
                "step {t} outside 0..={}",
                self.steps
            )));
        }
        let batch = xs.len() / d;
        let width = self.input_dim();
        let mut input = vec![0.0; batch * width];
        for (row, x) in input.chunks_exact_mut(width).zip(xs.chunks_exact(d)) {
            self.write_input(row, x, t, cond);
        }
        self.net.forward_batch(&input, batch)
    }
}
