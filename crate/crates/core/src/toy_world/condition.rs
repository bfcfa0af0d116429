use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionOrigin {
    Image,
    Spec,
    Null,
}

/// Unit-norm condition vector, or all zeros for the null condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding {
    pub values: Vec<f64>,
    pub origin: ConditionOrigin,
    /// Set when the projection vanished and a fixed unit vector was used.
    #[serde(default)]
    pub fallback: bool,
}

impl ConditionEmbedding {
    pub fn null(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            origin: ConditionOrigin::Null,
            fallback: false,
        }
    }

    pub fn is_null(&self) -> bool {
        self.origin == ConditionOrigin::Null
    }
}
