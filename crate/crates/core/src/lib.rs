//! Watermarking toolkit for 3D Gaussian splatting assets.
//!
//! The pipeline embeds an L-bit message into the spherical-harmonic color
//! coefficients of a pre-trained splat asset by gradient descent against a
//! frozen message decoder, and extracts it blindly from rendered views.

pub mod asset;
pub mod camera;
pub mod distort;
pub mod error;
pub mod imagebuf;
pub mod codec;
pub mod encoders;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod scene;
pub mod watermark;
pub mod seed;

pub use asset::{apply_offsets, load_ply, prune, save_ply, GaussianAsset, PruneMode, SHOffsetField};
pub use camera::{CameraView, Intrinsics};
pub use error::{Error, Result};
pub use imagebuf::RenderedImage;
pub use render::{build_weight_cache, render, render_gradient, SplatWeightCache};
