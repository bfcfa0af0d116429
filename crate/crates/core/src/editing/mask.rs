use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Saliency spans at or below this are treated as constant.
pub const DEGENERATE_SPAN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Dims with normalized saliency `>= θ`.
    Threshold(f64),
    /// The `k` most salient dims; ties go to the lower index.
    TopK(usize),
}

impl MaskMode {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            MaskMode::Threshold(t) if !(0.0..=1.0).contains(&t) => Err(Error::InvalidArgument(
                format!("threshold {t} outside [0, 1]"),
            )),
            MaskMode::TopK(k) if k > dim => Err(Error::InvalidArgument(format!(
                "topk {k} exceeds {dim} dims"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    EpsDiff,
    WDiff,
    GroundTruth,
    Manual,
}

/// Per-dimension saliency in `[0, 1]` and the binary mask derived from it;
/// `mask[i]` marks dim `i` as editable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct LatentMask {
    saliency: Vec<f64>,
    mask: Vec<bool>,
    mode: Option<MaskMode>,
    provenance: Provenance,
    degenerate: bool,
}

#[derive(Deserialize)]
struct RawMask {
    saliency: Vec<f64>,
    mask: Vec<bool>,
    #[serde(default)]
    mode: Option<MaskMode>,
    provenance: Provenance,
    #[serde(default)]
    degenerate: bool,
}

impl TryFrom<RawMask> for LatentMask {
    type Error = Error;

    fn try_from(r: RawMask) -> Result<Self> {
        if r.saliency.len() != r.mask.len() {
            return Err(Error::Shape(format!(
                "mask has {} flags but {} saliencies",
                r.mask.len(),
                r.saliency.len()
            )));
        }
        if r.saliency.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument(
                "saliency values must lie in [0, 1]".into(),
            ));
        }
        if let Some(m) = r.mode {
            m.validate(r.mask.len())?;
        }
        Ok(Self {
            saliency: r.saliency,
            mask: r.mask,
            mode: r.mode,
            provenance: r.provenance,
            degenerate: r.degenerate,
        })
    }
}

fn binarize(saliency: &[f64], mode: MaskMode) -> Vec<bool> {
    match mode {
        MaskMode::Threshold(theta) => saliency.iter().map(|&s| s >= theta).collect(),
        MaskMode::TopK(k) => {
            let mut order: Vec<usize> = (0..saliency.len()).collect();
            order.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]).then(a.cmp(&b)));
            let mut mask = vec![false; saliency.len()];
            for &i in order.iter().take(k) {
                mask[i] = true;
            }
            mask
        }
    }
}

impl LatentMask {
    /// Min-max normalizes `raw` and binarizes it; constant input gives an
    /// all-zero mask flagged degenerate.
    pub fn from_saliency(raw: &[f64], mode: MaskMode, provenance: Provenance) -> Result<Self> {
        mode.validate(raw.len())?;
        if raw.is_empty() || raw.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument(
                "saliency must be non-empty and finite".into(),
            ));
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= DEGENERATE_SPAN {
            return Ok(Self {
                saliency: vec![0.0; raw.len()],
                mask: vec![false; raw.len()],
                mode: Some(mode),
                provenance,
                degenerate: true,
            });
        }
        let saliency: Vec<f64> = raw
            .iter()
            .map(|r| ((r - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect();
        let mask = binarize(&saliency, mode);
        Ok(Self {
            saliency,
            mask,
            mode: Some(mode),
            provenance,
            degenerate: false,
        })
    }

    fn from_bits(flags: Vec<bool>, provenance: Provenance) -> Self {
        Self {
            saliency: flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
            mask: flags,
            mode: None,
            provenance,
            degenerate: false,
        }
    }

    /// An exact support, e.g. from the world's ground truth.
    pub fn ground_truth(flags: Vec<bool>) -> Self {
        Self::from_bits(flags, Provenance::GroundTruth)
    }

    /// A user-supplied mask; its saliency equals the flags.
    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self::from_bits(flags, Provenance::Manual)
    }

    pub fn all_ones(dim: usize) -> Self {
        Self::from_flags(vec![true; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_flags(vec![false; dim])
    }

    /// Same saliency binarized under another mode.
    pub fn rebinarize(&self, mode: MaskMode) -> Result<Self> {
        mode.validate(self.dim())?;
        let mask = if self.degenerate {
            vec![false; self.dim()]
        } else {
            binarize(&self.saliency, mode)
        };
        Ok(Self {
            mask,
            mode: Some(mode),
            ..self.clone()
        })
    }

    /// Element-wise OR of several masks.
    pub fn union(masks: &[LatentMask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::InvalidArgument("union of no masks".into()))?;
        let mut flags = vec![false; first.dim()];
        for m in masks {
            if m.dim() != flags.len() {
                return Err(Error::Shape("masks differ in dimension".into()));
            }
            for (f, &b) in flags.iter_mut().zip(&m.mask) {
                *f |= b;
            }
        }
        Ok(Self::from_flags(flags))
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn saliency(&self) -> &[f64] {
        &self.saliency
    }

    pub fn flags(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn mode(&self) -> Option<MaskMode> {
        self.mode
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Indices of set dims, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
