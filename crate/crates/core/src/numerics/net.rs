//! Fully connected network with hand-derived backpropagation.
//!
//! Parameters live in memory as `f64` and are quantized to values exactly
//! representable in `f32` before they are stored (see
//! [`DenseNet::quantize_f32`]), so a checkpoint round trip is lossless.
//! Batched products go through `matrixmultiply::dgemm`, which accumulates in
//! 64-bit.

use serde::{Deserialize, Serialize};

use super::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: `rows` outputs, `cols` inputs, row-major weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize, activation: Activation) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Parameter gradients in the same layout as [`DenseNet`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Tensors in optimizer order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Cached activations from a batched forward pass.
pub struct ForwardTrace {
    batch: usize,
    /// Input to each layer (`batch × cols`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer (`batch × rows`).
    pre: Vec<Vec<f64>>,
}

/// `c = a · b + beta · c`, all row/column strides explicit.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: bounds of every operand were checked above; c is row-major m×n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Shape(format!(
                    "layer {i}: buffer sizes do not match {}x{}",
                    l.rows, l.cols
                )));
            }
            if i > 0 && layers[i - 1].rows != l.cols {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.cols,
                    i - 1,
                    layers[i - 1].rows
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Shape(
                "final layer must use the identity activation".into(),
            ));
        }
        Ok(Self { layers })
    }

    /// SiLU hidden layers and an identity output, uniform
    /// `±1/sqrt(fan_in)` initialization.
    pub fn init(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "need input and output dims");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (cols, rows) = (dims[i], dims[i + 1]);
                let act = if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Silu
                };
                let bound = 1.0 / (cols as f64).sqrt();
                let mut draw = || (2.0 * rng.uniform() - 1.0) * bound;
                let weights = (0..rows * cols).map(|_| draw()).collect();
                let bias = (0..rows).map(|_| draw()).collect();
                Layer {
                    rows,
                    cols,
                    weights,
                    bias,
                    activation: act,
                }
            })
            .collect();
        let mut net = Self { layers };
        net.quantize_f32();
        net
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Mutable tensors in optimizer order: `w0, b0, w1, b1, ...`.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            for p in t.iter_mut() {
                *p = *p as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(x, 1)
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, xs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(xs, batch)?;
        let mut cur = xs.to_vec();
        for l in &self.layers {
            let mut z = Self::affine(l, &cur, batch);
            for v in z.iter_mut() {
                *v = l.activation.apply(*v);
            }
            cur = z;
        }
        Ok(cur)
    }

    /// Forward pass that keeps what [`DenseNet::backward_batch`] needs.
    pub fn forward_traced(&self, xs: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_input(xs, batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = xs.to_vec();
        for l in &self.layers {
            let z = Self::affine(l, &cur, batch);
            let next = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        Ok((cur, ForwardTrace { batch, inputs, pre }))
    }

    /// Gradients of `sum_b upstream[b] · f(x_b)` with respect to all
    /// parameters (summed over the batch) and to each input row.
    pub fn backward_batch(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let batch = trace.batch;
        if upstream.len() != batch * self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, expected {}",
                upstream.len(),
                batch * self.output_dim()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[i];
            if l.activation != Activation::Identity {
                for (d, &zv) in delta.iter_mut().zip(z) {
                    *d *= l.activation.derivative(zv);
                }
            }
            let input = &trace.inputs[i];
            // dW = deltaᵀ · input  (rows × cols)
            gemm(
                l.rows,
                batch,
                l.cols,
                &delta,
                (1, l.rows),
                input,
                (l.cols, 1),
                0.0,
                &mut grads.weights[i],
            );
            let gb = &mut grads.bias[i];
            for row in delta.chunks_exact(l.rows) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            // d input = delta · W  (batch × cols)
            let mut prev = vec![0.0; batch * l.cols];
            gemm(
                batch,
                l.rows,
                l.cols,
                &delta,
                (l.rows, 1),
                &l.weights,
                (l.cols, 1),
                0.0,
                &mut prev,
            );
            delta = prev;
        }
        Ok((grads, delta))
    }

    /// Single-input backward pass.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let (_, trace) = self.forward_traced(x, 1)?;
        self.backward_batch(&trace, upstream)
    }

    fn check_input(&self, xs: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || xs.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} entries, expected {} x {}",
                xs.len(),
                batch,
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(l: &Layer, input: &[f64], batch: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(batch * l.rows);
        for _ in 0..batch {
            z.extend_from_slice(&l.bias);
        }
        // z += input · Wᵀ
        gemm(
            batch,
            l.cols,
            l.rows,
            input,
            (l.cols, 1),
            &l.weights,
            (1, l.cols),
            1.0,
            &mut z,
        );
        z
    }
}
