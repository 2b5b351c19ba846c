//! Aligned text/image encoder pairs.
//!
//! A bundle maps token sequences and rendered images into one shared
//! 512-dim feature space. Both encoders are always frozen. The image path
//! must expose an exact adjoint so embedding can push gradients back to
//! pixels.

mod toy;

pub use toy::ToyBundle;

use crate::codec::TokenSequence;
use crate::error::Result;
use crate::imagebuf::RenderedImage;
use ndarray::{Array1, ArrayView1};

/// Feature dimensionality shared by all bundles.
pub const FEATURE_DIM: usize = 512;

pub trait EncoderBundle: Sync {
    /// Saved into decoder checkpoints to detect bundle/decoder mismatches.
    fn identifier(&self) -> &str;

    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    /// Deterministic text-side feature of a token sequence.
    fn encode_text(&self, tokens: &TokenSequence) -> Result<Array1<f64>>;

    /// Image-side feature plus the context needed for the adjoint.
    fn encode_image_fwd(&self, image: &RenderedImage) -> Result<(Array1<f64>, ImageEncodeCtx)>;

    /// Pixel gradient for a given upstream feature gradient.
    fn encode_image_bwd(&self, ctx: &ImageEncodeCtx, upstream: &ArrayView1<f64>) -> RenderedImage;

    fn encode_image(&self, image: &RenderedImage) -> Result<Array1<f64>> {
        Ok(self.encode_image_fwd(image)?.0)
    }
}

/// Stored activations from an image-encoder forward pass.
///
/// One concrete type (rather than an associated type) keeps the bundles
/// object-safe for the CLI's runtime dispatch.
pub enum ImageEncodeCtx {
    Toy(toy::ToyCtx),
}
