//! A synthetic generator whose latent semantics are known in closed form.
//!
//! The latent space is split into disjoint groups of `group_size` dims, one
//! per attribute. Attribute `k` lives on the unit direction `v_k` inside its
//! group; everything orthogonal to `v_k` is style residual, which attribute
//! readouts cannot see and which plays the role of identity.

mod condition;
mod latent;
mod render;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use condition::{ConditionEmbedding, ConditionOrigin};
pub use latent::{AttributeState, LatentCode};
pub use render::{render_face, DEFAULT_FACE_SIZE};

use crate::editing::LatentMask;
use crate::error::{Error, Result};
use crate::numerics::{self, Rng};
use crate::prompt_dsl::PromptSpec;

/// Attribute indices of the default face world.
pub mod attr {
    pub const HAIR_LENGTH: usize = 0;
    pub const HAIR_COLOR: usize = 1;
    pub const GLASSES: usize = 2;
    pub const BEARD: usize = 3;
    pub const AGE: usize = 4;
    pub const SMILE: usize = 5;
    pub const HAT: usize = 6;
    pub const SKIN_TONE: usize = 7;
}

pub const FACE_ATTRIBUTES: [&str; 8] = [
    "hair_length",
    "hair_color",
    "glasses",
    "beard",
    "age",
    "smile",
    "hat",
    "skin_tone",
];

const SPLIT_DIRECTIONS: u64 = 0;
const SPLIT_PROJECTION: u64 = 1_000;

/// Construction parameters for a [`WorldSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub attribute_names: Vec<String>,
    pub group_size: usize,
    pub style_sigma: f64,
    /// Off-diagonal entries of the attribute correlation matrix.
    pub correlations: Vec<(String, String, f64)>,
    pub cond_dim: usize,
    pub seed: u64,
}

impl WorldConfig {
    /// The 64-dim, 8-attribute face world.
    pub fn faces(seed: u64) -> Self {
        Self {
            attribute_names: FACE_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            group_size: 8,
            style_sigma: 0.15,
            correlations: vec![
                ("age".into(), "beard".into(), 0.6),
                ("age".into(), "hair_length".into(), -0.5),
            ],
            cond_dim: 32,
            seed,
        }
    }

    /// A 96-dim, 12-attribute world with cat-face attribute names.
    pub fn cats(seed: u64) -> Self {
        let names = [
            "fur_length",
            "fur_color",
            "stripes",
            "ear_size",
            "age",
            "eye_color",
            "whiskers",
            "collar",
            "nose_tone",
            "face_width",
            "spots",
            "eye_size",
        ];
        Self {
            attribute_names: names.iter().map(|s| s.to_string()).collect(),
            group_size: 8,
            style_sigma: 0.15,
            correlations: vec![("age".into(), "fur_length".into(), -0.4)],
            cond_dim: 32,
            seed,
        }
    }
}

/// The generator: directions, correlations and condition projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorld")]
pub struct WorldSpec {
    pub latent_dim: usize,
    pub num_attributes: usize,
    pub group_size: usize,
    pub attribute_names: Vec<String>,
    /// `v_k`, one unit vector of length `group_size` per attribute.
    pub directions: Vec<Vec<f64>>,
    pub style_sigma: f64,
    /// Attribute correlation matrix `R`, rows.
    pub correlation: Vec<Vec<f64>>,
    pub cond_dim: usize,
    /// `E_c`, `cond_dim` rows of `num_attributes` entries.
    pub cond_projection: Vec<Vec<f64>>,
    pub seed: u64,
    #[serde(skip)]
    chol: Vec<f64>,
}

#[derive(Deserialize)]
struct RawWorld {
    latent_dim: usize,
    num_attributes: usize,
    group_size: usize,
    attribute_names: Vec<String>,
    directions: Vec<Vec<f64>>,
    style_sigma: f64,
    correlation: Vec<Vec<f64>>,
    cond_dim: usize,
    cond_projection: Vec<Vec<f64>>,
    seed: u64,
}

impl TryFrom<RawWorld> for WorldSpec {
    type Error = Error;

    fn try_from(r: RawWorld) -> Result<Self> {
        let mut w = WorldSpec {
            latent_dim: r.latent_dim,
            num_attributes: r.num_attributes,
            group_size: r.group_size,
            attribute_names: r.attribute_names,
            directions: r.directions,
            style_sigma: r.style_sigma,
            correlation: r.correlation,
            cond_dim: r.cond_dim,
            cond_projection: r.cond_projection,
            seed: r.seed,
            chol: Vec::new(),
        };
        w.validate()?;
        Ok(w)
    }
}

impl WorldSpec {
    pub fn new(config: &WorldConfig) -> Result<Self> {
        let k = config.attribute_names.len();
        if k == 0 || config.group_size < 2 || config.cond_dim == 0 {
            return Err(Error::InvalidArgument(
                "world needs attributes, groups of >= 2 dims and a condition dim".into(),
            ));
        }
        let root = Rng::new(config.seed);
        let directions = (0..k)
            .map(|i| {
                let mut rng = root.split(SPLIT_DIRECTIONS + i as u64);
                loop {
                    if let Some(v) = numerics::normalized(&rng.gaussian(config.group_size)) {
                        break v;
                    }
                }
            })
            .collect();

        let mut correlation = vec![vec![0.0; k]; k];
        for (i, row) in correlation.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let index = |name: &str| {
            config
                .attribute_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("unknown attribute {name:?} in correlations"))
                })
        };
        for (a, b, r) in &config.correlations {
            let (i, j) = (index(a)?, index(b)?);
            correlation[i][j] = *r;
            correlation[j][i] = *r;
        }

        let mut proj_rng = root.split(SPLIT_PROJECTION);
        let scale = 1.0 / (config.cond_dim as f64).sqrt();
        let cond_projection = (0..config.cond_dim)
            .map(|_| {
                proj_rng
                    .gaussian(k)
                    .into_iter()
                    .map(|x| x * scale)
                    .collect()
            })
            .collect();

        let mut w = WorldSpec {
            latent_dim: k * config.group_size,
            num_attributes: k,
            group_size: config.group_size,
            attribute_names: config.attribute_names.clone(),
            directions,
            style_sigma: config.style_sigma,
            correlation,
            cond_dim: config.cond_dim,
            cond_projection,
            seed: config.seed,
            chol: Vec::new(),
        };
        w.validate()?;
        Ok(w)
    }

    /// The default 64-dim face world.
    pub fn faces(seed: u64) -> Result<Self> {
        Self::new(&WorldConfig::faces(seed))
    }

    fn validate(&mut self) -> Result<()> {
        let k = self.num_attributes;
        let bad = |m: &str| Err(Error::InvalidArgument(format!("invalid world: {m}")));
        if self.attribute_names.len() != k || self.latent_dim != k * self.group_size {
            return bad("dimensions disagree");
        }
        if self.directions.len() != k
            || self
                .directions
                .iter()
                .any(|v| v.len() != self.group_size || (numerics::norm(v) - 1.0).abs() > 1e-6)
        {
            return bad("directions must be unit vectors of group size");
        }
        if self.correlation.len() != k || self.correlation.iter().any(|r| r.len() != k) {
            return bad("correlation matrix shape");
        }
        for i in 0..k {
            for j in 0..k {
                if (self.correlation[i][j] - self.correlation[j][i]).abs() > 1e-12 {
                    return bad("correlation matrix must be symmetric");
                }
            }
        }
        if self.cond_projection.len() != self.cond_dim
            || self.cond_projection.iter().any(|r| r.len() != k)
        {
            return bad("condition projection shape");
        }
        let flat: Vec<f64> = self.correlation.iter().flatten().copied().collect();
        self.chol = numerics::cholesky(&flat, k)?;
        Ok(())
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    /// Latent dims of attribute `k`'s group.
    pub fn group(&self, k: usize) -> std::ops::Range<usize> {
        k * self.group_size..(k + 1) * self.group_size
    }

    pub fn sample_attributes(&self, rng: &mut Rng) -> AttributeState {
        let k = self.num_attributes;
        let g = rng.gaussian(k);
        let values = (0..k)
            .map(|i| {
                let u: f64 = (0..=i).map(|j| self.chol[i * k + j] * g[j]).sum();
                u.tanh()
            })
            .collect();
        let style = self
            .directions
            .iter()
            .map(|v| {
                let g = rng.gaussian(self.group_size);
                let along = numerics::dot(&g, v);
                g.iter()
                    .zip(v)
                    .map(|(gi, vi)| self.style_sigma * (gi - along * vi))
                    .collect()
            })
            .collect();
        AttributeState { values, style }
    }

    pub fn attributes_to_latent(&self, attrs: &AttributeState) -> LatentCode {
        let mut w = vec![0.0f64; self.latent_dim];
        for (k, v) in self.directions.iter().enumerate() {
            let a = attrs.values[k];
            let s = &attrs.style[k];
            for (i, dim) in self.group(k).enumerate() {
                w[dim] = a * v[i] + s[i];
            }
        }
        LatentCode::from_f64(&w)
    }

    /// Unclamped attribute readout `⟨w[S_k], v_k⟩`.
    pub fn latent_readout(&self, w: &LatentCode) -> Vec<f64> {
        self.readout_f64(&w.to_f64())
    }

    pub fn readout_f64(&self, w: &[f64]) -> Vec<f64> {
        self.directions
            .iter()
            .enumerate()
            .map(|(k, v)| numerics::dot(&w[self.group(k)], v))
            .collect()
    }

    pub fn readout_clamped(&self, w: &LatentCode) -> Vec<f64> {
        self.latent_readout(w)
            .into_iter()
            .map(|a| a.clamp(-1.0, 1.0))
            .collect()
    }

    /// Components of every group orthogonal to its attribute direction,
    /// concatenated in latent order.
    pub fn style_components(&self, w: &LatentCode) -> Vec<f64> {
        let w = w.to_f64();
        let mut out = Vec::with_capacity(self.latent_dim);
        for (k, v) in self.directions.iter().enumerate() {
            let seg = &w[self.group(k)];
            let along = numerics::dot(seg, v);
            out.extend(seg.iter().zip(v).map(|(x, vi)| x - along * vi));
        }
        out
    }

    /// Ground-truth mask of attribute `k`'s support.
    pub fn gt_support(&self, k: usize) -> Result<LatentMask> {
        if k >= self.num_attributes {
            return Err(Error::InvalidArgument(format!(
                "attribute index {k} out of range"
            )));
        }
        let range = self.group(k);
        let flags = (0..self.latent_dim).map(|i| range.contains(&i)).collect();
        Ok(LatentMask::ground_truth(flags))
    }

    /// Image-origin condition: `normalize(E_c · clamp(readout(w)))`.
    pub fn condition_encode_image(&self, w: &LatentCode) -> ConditionEmbedding {
        let a = self.readout_clamped(w);
        self.embed(&a, ConditionOrigin::Image)
    }

    /// Spec-origin condition: clause values, 0 elsewhere.
    pub fn condition_encode_spec(&self, spec: &PromptSpec) -> Result<ConditionEmbedding> {
        if spec.is_empty() {
            return Err(Error::EmptySpec);
        }
        let mut a = vec![0.0; self.num_attributes];
        for c in spec.clauses() {
            if c.attribute >= self.num_attributes {
                return Err(Error::InvalidArgument(format!(
                    "clause attribute {} out of range",
                    c.attribute
                )));
            }
            a[c.attribute] = c.value;
        }
        Ok(self.embed(&a, ConditionOrigin::Spec))
    }

    pub fn null_condition(&self) -> ConditionEmbedding {
        ConditionEmbedding::null(self.cond_dim)
    }

    /// `normalize(E_c · a)`; falls back to the first basis vector when the
    /// projection vanishes.
    pub fn embed(&self, a: &[f64], origin: ConditionOrigin) -> ConditionEmbedding {
        let raw: Vec<f64> = self
            .cond_projection
            .iter()
            .map(|row| numerics::dot(row, a))
            .collect();
        match numerics::normalized(&raw) {
            Some(values) => ConditionEmbedding {
                values,
                origin,
                fallback: false,
            },
            None => {
                let mut values = vec![0.0; self.cond_dim];
                values[0] = 1.0;
                ConditionEmbedding {
                    values,
                    origin,
                    fallback: true,
                }
            }
        }
    }

    /// Deterministic synthetic identity drawn from `seed`.
    pub fn identity(&self, seed: u64) -> (AttributeState, LatentCode) {
        let attrs = self.sample_attributes(&mut Rng::new(seed));
        let w = self.attributes_to_latent(&attrs);
        (attrs, w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// SHA-256 of the compact JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("world serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::attr::*;
    use super::*;

    fn world() -> WorldSpec {
        WorldSpec::faces(0).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(world(), world());
        assert_eq!(world().hash(), world().hash());
    }

    #[test]
    fn directions_are_unit() {
        for seed in 0..5 {
            let w = WorldSpec::faces(seed).unwrap();
            for v in &w.directions {
                assert!((numerics::norm(v) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn seeds_give_different_worlds() {
        let (a, b) = (WorldSpec::faces(0).unwrap(), WorldSpec::faces(1).unwrap());
        let max_diff = a
            .directions
            .iter()
            .zip(&b.directions)
            .map(|(x, y)| {
                x.iter()
                    .zip(y)
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        assert!(max_diff > 0.1);
    }

    #[test]
    fn correlation_submatrix_is_positive_definite() {
        let w = world();
        let idx = [AGE, BEARD, HAIR_LENGTH];
        let sub: Vec<f64> = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| (i, j)))
            .map(|(i, j)| w.correlation[i][j])
            .collect();
        let det = numerics::determinant(&sub, 3);
        assert!((det - 0.39).abs() < 1e-12, "{det}");
    }

    #[test]
    fn indefinite_correlation_rejected() {
        let mut cfg = WorldConfig::faces(0);
        cfg.correlations
            .push(("beard".into(), "hair_length".into(), 0.9));
        assert!(matches!(
            WorldSpec::new(&cfg),
            Err(Error::NotPositiveSemiDefinite)
        ));
    }

    #[test]
    fn zero_attributes_zero_latent() {
        let w = world();
        let attrs = AttributeState::neutral(&w);
        assert!(w
            .attributes_to_latent(&attrs)
            .as_slice()
            .iter()
            .all(|x| *x == 0.0));
    }

    #[test]
    fn unit_attribute_places_direction() {
        let w = world();
        let mut attrs = AttributeState::neutral(&w);
        attrs.values[HAIR_LENGTH] = 1.0;
        let lat = w.attributes_to_latent(&attrs).to_f64();
        for (i, x) in lat.iter().enumerate() {
            let want = if i < 8 {
                w.directions[0][i] as f32 as f64
            } else {
                0.0
            };
            assert_eq!(*x, want);
        }
    }

    #[test]
    fn readout_inverts_construction() {
        let w = world();
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let a = w.sample_attributes(&mut rng);
            let r = w.latent_readout(&w.attributes_to_latent(&a));
            for (x, y) in r.iter().zip(&a.values) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn style_orthogonal_to_direction() {
        let w = world();
        let mut rng = Rng::new(4);
        for _ in 0..200 {
            let a = w.sample_attributes(&mut rng);
            for (s, v) in a.style.iter().zip(&w.directions) {
                assert!(numerics::dot(s, v).abs() < 1e-6);
            }
            assert!(a.values.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn readout_shift_is_local() {
        let w = world();
        let (_, lat) = w.identity(9);
        let before = w.latent_readout(&lat);
        let mut shifted = lat.to_f64();
        for (i, d) in w.group(0).enumerate() {
            shifted[d] += 0.3 * w.directions[0][i];
        }
        let after = w.readout_f64(&shifted);
        assert!((after[0] - before[0] - 0.3).abs() < 1e-6);
        for k in 1..8 {
            assert_eq!(after[k], before[k]);
        }
    }

    #[test]
    fn supports_partition_latent() {
        let w = world();
        let m0 = w.gt_support(0).unwrap();
        assert_eq!(m0.selected(), (0..8).collect::<Vec<_>>());
        let mut count = vec![0; 64];
        for k in 0..8 {
            for i in w.gt_support(k).unwrap().selected() {
                count[i] += 1;
            }
        }
        assert!(count.iter().all(|&c| c == 1));
        assert!(w.gt_support(8).is_err());
    }

    #[test]
    fn perturbing_outside_support_keeps_readout() {
        let w = world();
        let (_, lat) = w.identity(1);
        let mut x = lat.to_f64();
        x[8..].iter_mut().for_each(|v| *v += 0.7);
        assert_eq!(w.readout_f64(&x)[0], w.latent_readout(&lat)[0]);
    }

    #[test]
    fn image_conditions() {
        let w = world();
        let mut attrs = AttributeState::neutral(&w);
        attrs.values[GLASSES] = 1.0;
        let pos = w.condition_encode_image(&w.attributes_to_latent(&attrs));
        attrs.values[GLASSES] = -1.0;
        let neg = w.condition_encode_image(&w.attributes_to_latent(&attrs));
        assert!((numerics::norm(&pos.values) - 1.0).abs() < 1e-6);
        assert!(numerics::dot(&pos.values, &neg.values) < 1.0);
        assert_eq!(pos.origin, ConditionOrigin::Image);

        let zero = w.condition_encode_image(&LatentCode::zeros(64));
        assert!(zero.fallback);
        assert!((numerics::norm(&zero.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamped_readouts_share_embedding() {
        let w = world();
        let mut a = AttributeState::neutral(&w);
        a.values[AGE] = 1.2;
        let lat_a = w.attributes_to_latent(&a);
        let mut x = lat_a.to_f64();
        for (i, d) in w.group(AGE).enumerate() {
            x[d] += 0.5 * w.directions[AGE][i];
        }
        let lat_b = LatentCode::from_f64(&x);
        assert_eq!(
            w.condition_encode_image(&lat_a),
            w.condition_encode_image(&lat_b)
        );
    }

    #[test]
    fn json_round_trip_revalidates() {
        let w = world();
        let back = WorldSpec::from_json(&w.to_json().unwrap()).unwrap();
        assert_eq!(back, w);
        let mut broken: serde_json::Value = serde_json::from_str(&w.to_json().unwrap()).unwrap();
        broken["directions"][0][0] = serde_json::json!(5.0);
        assert!(serde_json::from_value::<WorldSpec>(broken).is_err());
    }

    #[test]
    fn cat_world_generalizes() {
        let w = WorldSpec::new(&WorldConfig::cats(2)).unwrap();
        assert_eq!(w.latent_dim, 96);
        assert_eq!(w.num_attributes, 12);
        let (a, lat) = w.identity(5);
        let r = w.latent_readout(&lat);
        for (x, y) in r.iter().zip(&a.values) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
