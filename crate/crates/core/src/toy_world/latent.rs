use serde::{Deserialize, Serialize};

use super::WorldSpec;

/// A point in the generator's latent space, stored as `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode(Vec<f32>);

impl LatentCode {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_f32(w: Vec<f32>) -> Self {
        Self(w)
    }

    /// Rounds each entry to the nearest `f32`.
    pub fn from_f64(w: &[f64]) -> Self {
        Self(w.iter().map(|&x| x as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&x| x as f64).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Attribute values and per-group style residuals of one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeState {
    pub values: Vec<f64>,
    pub style: Vec<Vec<f64>>,
}

impl AttributeState {
    /// All attributes at 0, no style.
    pub fn neutral(world: &WorldSpec) -> Self {
        Self {
            values: vec![0.0; world.num_attributes],
            style: vec![vec![0.0; world.group_size]; world.num_attributes],
        }
    }
}
