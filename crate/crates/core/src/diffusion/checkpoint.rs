use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::denoiser::Denoiser;
use super::schedule::ScheduleParams;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::{Activation, DenseNet, Layer};
use crate::toy_world::WorldSpec;

pub const CHECKPOINT_FORMAT: &str = "latent-clan/ckpt/1";

/// Trained denoiser plus everything needed to use it against its world.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub world_hash: String,
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub schedule: ScheduleParams,
    pub denoiser: Denoiser,
    pub train_config: TrainConfig,
    pub loss_trace: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawLayer {
    rows: usize,
    cols: usize,
    activation: Activation,
    weights: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct RawCheckpoint {
    format: String,
    world_hash: String,
    latent_dim: usize,
    cond_dim: usize,
    schedule: ScheduleParams,
    layers: Vec<RawLayer>,
    train_config: TrainConfig,
    loss_trace: Vec<f64>,
}

fn encode_f32(values: &[f64]) -> String {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    B64.encode(bytes)
}

fn decode_f32(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("{what}: {e}")))?;
    if bytes.len() != 4 * expected {
        return Err(Error::Checkpoint(format!(
            "{what}: {} bytes, expected {}",
            bytes.len(),
            4 * expected
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint(format!("{what}: non-finite parameter")));
    }
    Ok(values)
}

impl Checkpoint {
    pub fn new(
        world: &WorldSpec,
        schedule: ScheduleParams,
        denoiser: Denoiser,
        train_config: TrainConfig,
        loss_trace: Vec<f64>,
    ) -> Self {
        Self {
            world_hash: world.hash(),
            latent_dim: world.latent_dim,
            cond_dim: world.cond_dim,
            schedule,
            denoiser,
            train_config,
            loss_trace,
        }
    }

    /// A checkpoint that went through at least one optimizer step.
    pub fn is_trained(&self) -> bool {
        self.train_config.steps > 0 && !self.loss_trace.is_empty()
    }

    pub fn check_world(&self, world: &WorldSpec) -> Result<()> {
        let actual = world.hash();
        if actual != self.world_hash {
            return Err(Error::WorldMismatch {
                expected: self.world_hash.clone(),
                actual,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .denoiser
            .net()
            .layers()
            .iter()
            .map(|l| RawLayer {
                rows: l.rows,
                cols: l.cols,
                activation: l.activation,
                weights: encode_f32(&l.weights),
                bias: encode_f32(&l.bias),
            })
            .collect();
        let raw = RawCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            world_hash: self.world_hash.clone(),
            latent_dim: self.latent_dim,
            cond_dim: self.cond_dim,
            schedule: self.schedule,
            layers,
            train_config: self.train_config.clone(),
            loss_trace: self.loss_trace.clone(),
        };
        Ok(serde_json::to_string(&raw)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            Some(other) => return Err(Error::UnknownFormat(other.to_string())),
            None => return Err(Error::UnknownFormat(String::new())),
        }
        let raw: RawCheckpoint = serde_json::from_value(value)?;
        let layers = raw
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(Layer {
                    rows: l.rows,
                    cols: l.cols,
                    activation: l.activation,
                    weights: decode_f32(
                        &l.weights,
                        l.rows * l.cols,
                        &format!("layer {i} weights"),
                    )?,
                    bias: decode_f32(&l.bias, l.rows, &format!("layer {i} bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = DenseNet::new(layers)?;
        let denoiser = Denoiser::from_net(net, raw.latent_dim, raw.cond_dim, raw.schedule.steps)?;
        Ok(Self {
            world_hash: raw.world_hash,
            latent_dim: raw.latent_dim,
            cond_dim: raw.cond_dim,
            schedule: raw.schedule,
            denoiser,
            train_config: raw.train_config,
            loss_trace: raw.loss_trace,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
