//! Procedural fixtures: a desk-scale splat scene with a camera ring, and
//! photo-like images for codec tests.
//!
//! The toy scene is its own ground truth: the asset is generated first and
//! the "training views" are this renderer's output for it, so no fitting
//! is required anywhere.

use crate::asset::{logit, normalize_quat, GaussianAsset, SH_COEFFS};
use crate::camera::{CameraView, Intrinsics};
use crate::error::{Error, Result};
use crate::imagebuf::RenderedImage;
use crate::render::{build_weight_cache, render, SplatWeightCache};
use crate::seed::derive_seed;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct ToyScene {
    pub asset: GaussianAsset,
    pub views: Vec<CameraView>,
    /// Renders of the unwatermarked asset through each view.
    pub ground_truth: Vec<RenderedImage>,
    /// The per-view weight caches (geometry is frozen, so these are valid
    /// for any SH edit of the same asset).
    pub caches: Vec<SplatWeightCache>,
}

/// Procedurally generate a full-coverage colored Gaussian cloud and a ring
/// of inward-facing cameras. Deterministic in the seed.
pub fn make_toy_scene(
    seed: u64,
    n_gaussians: usize,
    n_views: usize,
    resolution: usize,
) -> Result<ToyScene> {
    if n_gaussians < 10 {
        return Err(Error::Config(format!("toy scene needs >= 10 Gaussians, got {n_gaussians}")));
    }
    if n_views == 0 || resolution < 8 {
        return Err(Error::Config("toy scene needs >= 1 view and resolution >= 8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "toy-scene"));

    let mut positions = Vec::with_capacity(n_gaussians);
    let mut log_scales = Vec::with_capacity(n_gaussians);
    let mut rotations = Vec::with_capacity(n_gaussians);
    let mut logits = Vec::with_capacity(n_gaussians);
    let mut sh = Vec::with_capacity(n_gaussians);

    for _ in 0..n_gaussians {
        // Uniform in the unit ball (dense enough that every camera ray
        // crosses many Gaussians).
        let pos = loop {
            let p: [f64; 3] = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
                break p;
            }
        };
        positions.push(pos);
        // Extents sized to the typical inter-point spacing.
        let base = (4.19 / n_gaussians as f64).cbrt(); // ball volume / N
        log_scales.push([
            (base * rng.random_range(0.8..1.6)).ln(),
            (base * rng.random_range(0.8..1.6)).ln(),
            (base * rng.random_range(0.8..1.6)).ln(),
        ]);
        rotations.push(
            normalize_quat([
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ])
            .unwrap(),
        );
        logits.push(logit(rng.random_range(0.75..0.95)));
        let mut coeffs = [0.0; SH_COEFFS];
        for (k, v) in coeffs.iter_mut().enumerate() {
            // DC keeps colors comfortably inside (0, 1); the higher bands
            // add mild view dependence without tripping the color clamp.
            *v = if k < 3 { rng.random_range(-0.9..0.9) } else { rng.random_range(-0.04..0.04) };
        }
        sh.push(coeffs);
    }
    let asset = GaussianAsset::new(positions, log_scales, rotations, logits, sh)?;

    // Cameras on a ring, slightly elevated, looking at the origin. The
    // focal length keeps the unit ball covering the full frame.
    let mut views = Vec::with_capacity(n_views);
    let radius = 4.0;
    let focal = 3.2 * resolution as f64;
    for i in 0..n_views {
        let angle = std::f64::consts::TAU * i as f64 / n_views as f64;
        let eye = Vector3::new(radius * angle.cos(), radius * angle.sin(), 0.8);
        let view = CameraView::look_at(
            eye,
            Vector3::zeros(),
            Vector3::z(),
            Intrinsics {
                fx: focal,
                fy: focal,
                cx: resolution as f64 / 2.0,
                cy: resolution as f64 / 2.0,
            },
            resolution,
            resolution,
        )?;
        views.push(view);
    }

    let caches: Vec<SplatWeightCache> =
        views.iter().map(|v| build_weight_cache(&asset, v)).collect();
    let ground_truth: Vec<RenderedImage> = caches
        .iter()
        .map(|c| render(&asset, c))
        .collect::<Result<_>>()?;

    Ok(ToyScene { asset, views, ground_truth, caches })
}

/// Smooth, textured, photo-like RGB fixture (sum of random oriented
/// gratings plus soft blobs); useful for codec comparisons where flat
/// synthetic images would be unrepresentative.
pub fn photo_fixture(seed: u64, width: usize, height: usize) -> RenderedImage {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "photo-fixture"));
    let mut img = RenderedImage::new(width, height);
    let n_waves = 6;
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..n_waves)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let freq = rng.random_range(1.5..12.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = [
                rng.random_range(0.03..0.15),
                rng.random_range(0.03..0.15),
                rng.random_range(0.03..0.15),
            ];
            (theta, freq, phase, amp)
        })
        .collect();
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.15..0.85),
                rng.random_range(0.15..0.85),
                rng.random_range(0.05..0.25),
                [
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ],
            )
        })
        .collect();
    let base = [
        rng.random_range(0.35..0.65),
        rng.random_range(0.35..0.65),
        rng.random_range(0.35..0.65),
    ];
    for y in 0..height {
        let v = y as f64 / height as f64;
        for x in 0..width {
            let u = x as f64 / width as f64;
            let mut px = base;
            for (theta, freq, phase, amp) in &waves {
                let s = (std::f64::consts::TAU
                    * freq
                    * (u * theta.cos() + v * theta.sin())
                    + phase)
                    .sin();
                for c in 0..3 {
                    px[c] += amp[c] * s;
                }
            }
            for (bx, by, r, amp) in &blobs {
                let d2 = (u - bx) * (u - bx) + (v - by) * (v - by);
                let g = (-d2 / (2.0 * r * r)).exp();
                for c in 0..3 {
                    px[c] += amp[c] * g;
                }
            }
            for c in &mut px {
                *c = c.clamp(0.02, 0.98);
            }
            img.set_pixel(x, y, px);
        }
    }
    img
}
