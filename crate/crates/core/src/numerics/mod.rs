//! Dense math substrate: vectors, a small MLP with exact gradients, Adam and
//! seeded random streams.

mod adam;
mod linalg;
mod net;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use linalg::{cholesky, correlation, determinant, dot, mat_vec, mean, norm, normalized, solve};
pub use net::{Activation, DenseNet, ForwardTrace, Gradients, Layer};
pub use rng::{splitmix64, Rng};
