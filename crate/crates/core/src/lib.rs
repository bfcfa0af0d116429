//! Text-guided latent editing on a synthetic generator whose latent
//! semantics are known exactly.
//!
//! A conditional diffusion model is trained over the generator's latent
//! space. Opposite prompt pairs yield a latent mask from the difference of
//! predicted noises, and masked denoising edits an inverted latent while
//! keeping every unmasked coordinate bit-for-bit.

pub mod diffusion;
pub mod editing;
mod error;
pub mod eval;
pub mod numerics;
pub mod prompt_dsl;
pub mod toy_world;

pub use error::{Error, Result};
