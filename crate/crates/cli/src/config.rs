//! Effective run configuration: built-in defaults, then the `--config` file,
//! then `--set` overrides, then `--seed`.

use latent_clan::diffusion::{ScheduleParams, TrainConfig};
use latent_clan::editing::{EditConfig, MaskEstimationConfig, MaskMode};
use latent_clan::eval::AblationConfig;
use latent_clan::toy_world::WorldConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub guidance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertConfig {
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub world: WorldConfig,
    pub schedule: ScheduleParams,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub mask: MaskEstimationConfig,
    pub mask_mode: MaskMode,
    pub edit: EditConfig,
    pub invert: InvertConfig,
    pub ablation: AblationConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::faces(0),
            schedule: ScheduleParams::default(),
            train: TrainConfig::default(),
            sample: SampleConfig {
                guidance: 2.0,
                seed: 0,
            },
            mask: MaskEstimationConfig::default(),
            mask_mode: MaskMode::TopK(8),
            edit: EditConfig::default(),
            invert: InvertConfig { lambda: 0.1 },
            ablation: AblationConfig::default(),
        }
    }
}

/// Seed fields set by `--seed`. The world seed is excluded because it
/// changes the world a checkpoint was trained for.
const SEED_PATHS: [&str; 7] = [
    "train.seed",
    "sample.seed",
    "mask.seed",
    "edit.seed",
    "ablation.seed",
    "ablation.mask.seed",
    "ablation.edit.seed",
];

/// The loaded configuration together with its canonical JSON form.
#[derive(Debug, Clone)]
pub struct Effective {
    pub config: CliConfig,
    pub json: Value,
}

impl Effective {
    pub fn build(file: Option<&str>, sets: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(CliConfig::default()).expect("config serializes");
        if let Some(text) = file {
            let patch: Value = serde_json::from_str(text)
                .map_err(|e| CliError::Usage(format!("config file: {e}")))?;
            merge(&mut value, &patch, "")?;
        }
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set {s:?} is not key=value")))?;
            let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, val)?;
        }
        if let Some(seed) = seed {
            for path in SEED_PATHS {
                set_path(&mut value, path, Value::from(seed))?;
            }
        }
        let config: CliConfig =
            serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        // round trip so the hash covers normalized values
        let json = serde_json::to_value(&config).expect("config serializes");
        Ok(Self { config, json })
    }

    /// Hex SHA-256 of the compact effective configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.json.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Deep merge that only accepts keys already present in `base`. A
/// single-key object in `base` is an enum and is replaced wholesale.
fn merge(base: &mut Value, patch: &Value, prefix: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            if b.len() == 1 && p.keys().all(|k| !b.contains_key(k)) && !p.is_empty() {
                *b = p.clone();
                return Ok(());
            }
            for (k, v) in p {
                let slot = b.get_mut(k).ok_or_else(|| {
                    CliError::Usage(format!("unknown config key {:?}", join(prefix, k)))
                })?;
                merge(slot, v, &join(prefix, k))?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut patch = value;
    for key in path.rsplit('.') {
        if key.is_empty() {
            return Err(CliError::Usage(format!("malformed config key {path:?}")));
        }
        let mut obj = serde_json::Map::new();
        obj.insert(key.to_string(), patch);
        patch = Value::Object(obj);
    }
    merge(root, &patch, "")
}
