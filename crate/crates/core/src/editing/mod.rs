//! Latent-mask estimation from opposite prompt pairs, masked denoising
//! edits, inversion and direction transfer.
//!
//! The ε-difference mask compares the denoiser's noise predictions for a
//! source and a target prompt on the same noisy states; the W-difference
//! mask and the swap direction are the baselines it is ablated against.

mod edit;
mod estimate;
mod mask;

pub use edit::{
    apply_direction, edit_no_mask, invert, invert_identity, masked_edit, multi_edit, opposite_pair,
    EditConfig, EditResult, InvertMode, MultiEditMode,
};
pub use estimate::{
    eps_saliency, estimate_mask_eps, estimate_mask_w, paired_denoise, swap_direction,
    MaskEstimationConfig, TrajectoryCondition,
};
pub use mask::{LatentMask, MaskMode, Provenance, DEGENERATE_SPAN};
