//! Amputation-aware kinematic body modeling.
//!
//! The crate covers the numerical side of amputee human mesh recovery:
//!
//! - [`rotations`]: axis-angle, rotation matrix and continuous 6D conversions.
//! - [`body_model`]: a 24-joint kinematic-tree body model with linear blend
//!   skinning, where a zero rotation matrix collapses a limb onto its parent.
//! - [`amputation`]: limb/level vocabulary, subtree expansion and masking rules.
//! - [`tokenizer`]: dual-codebook quantization, switching, EMA updates and losses.
//! - [`metrics`]: MVE, MPJPE, PA-MPJPE, confusion statistics and training losses.
//! - [`synth`]: weak-perspective projection, heatmaps, keypoint noise, SSIM and
//!   mesh compositing.
//! - [`annotations`]: the per-sample annotation record and its JSON form.

pub mod amputation;
pub mod annotations;
pub mod body_model;
mod binio;
pub mod error;
pub mod metrics;
pub mod rotations;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};

/// Number of body joints in the kinematic tree.
pub const NUM_JOINTS: usize = 24;
/// Number of shape blendshape coefficients.
pub const NUM_BETAS: usize = 10;
