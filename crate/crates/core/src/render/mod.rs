//! Frozen-geometry differentiable splatting.
//!
//! Because geometry, opacity, and cameras never change during embedding,
//! the per-pixel compositing weights of Eq.-3-style front-to-back alpha
//! blending are constants per view. [`build_weight_cache`] computes them
//! once; [`render`] is then a sparse linear operator over SH coefficients
//! (up to the two clamps), and [`render_gradient`] is its exact adjoint.

pub mod sh;

use crate::asset::{GaussianAsset, SH_COEFFS, SH_PER_CHANNEL};
use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::imagebuf::RenderedImage;
use nalgebra::{Matrix2x3, Vector3};
use rayon::prelude::*;

/// Contributions closer than this are culled.
pub const NEAR_PLANE: f64 = 0.05;
/// Contributions with sigma below 1/255 are dropped.
pub const SIGMA_MIN: f64 = 1.0 / 255.0;
/// Contributions outside the 3-sigma ellipse (Mahalanobis^2 > 9) are dropped.
pub const D2_MAX: f64 = 9.0;

/// A Gaussian projected to screen space.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedSplat {
    /// Index into the asset.
    pub index: usize,
    /// Pixel-space mean.
    pub mean: [f64; 2],
    /// 2D covariance, packed symmetric (a, b, c) for [[a, b], [b, c]].
    pub cov: [f64; 3],
    /// Camera-space depth (z) of the center; the sort key.
    pub depth: f64,
}

impl ProjectedSplat {
    /// Inverse covariance packed the same way; `None` when degenerate.
    pub fn conic(&self) -> Option<[f64; 3]> {
        let [a, b, c] = self.cov;
        let det = a * c - b * b;
        if !(det > 1e-14) {
            return None;
        }
        Some([c / det, -b / det, a / det])
    }
}

#[inline]
fn mahalanobis_sq(conic: [f64; 3], dx: f64, dy: f64) -> f64 {
    conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy
}

/// EWA projection: mean through the full perspective map, covariance
/// through its affine (Jacobian) approximation at the center.
/// Gaussians behind the near plane are culled.
pub fn project(asset: &GaussianAsset, view: &CameraView) -> Vec<ProjectedSplat> {
    let rot = view.rotation();
    let intr = view.intrinsics();
    let mut out = Vec::with_capacity(asset.len());
    for i in 0..asset.len() {
        let p = asset.positions()[i];
        let t = view.to_camera(Vector3::new(p[0], p[1], p[2]));
        if t.z <= NEAR_PLANE {
            continue;
        }
        let mean = view.project_camera_point(t);
        let inv_z = 1.0 / t.z;
        let jacobian = Matrix2x3::new(
            intr.fx * inv_z,
            0.0,
            -intr.fx * t.x * inv_z * inv_z,
            0.0,
            intr.fy * inv_z,
            -intr.fy * t.y * inv_z * inv_z,
        );
        let m = jacobian * rot;
        let cov2 = m * asset.covariance(i) * m.transpose();
        out.push(ProjectedSplat {
            index: i,
            mean,
            cov: [cov2[(0, 0)], cov2[(0, 1)], cov2[(1, 1)]],
            depth: t.z,
        });
    }
    out
}

/// Per-view compositing weights plus the SH basis at each Gaussian's view
/// direction. Immutable once built; safe to share across renders.
#[derive(Debug, Clone)]
pub struct SplatWeightCache {
    width: usize,
    height: usize,
    n_gaussians: usize,
    /// CSR offsets into `indices`/`weights`, length `width * height + 1`.
    starts: Vec<u32>,
    /// Gaussian index per contribution, front-to-back within each pixel.
    indices: Vec<u32>,
    /// Weight `w_i = sigma_i * prod_{j<i} (1 - sigma_j)` per contribution.
    weights: Vec<f64>,
    /// Unit view direction per Gaussian (world space, camera to center).
    dirs: Vec<[f64; 3]>,
    /// SH basis evaluated at `dirs`.
    basis: Vec<[f64; SH_PER_CHANNEL]>,
}

impl SplatWeightCache {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_gaussians(&self) -> usize {
        self.n_gaussians
    }

    /// Front-to-back `(gaussian_index, weight)` list for one pixel.
    pub fn entries(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let p = y * self.width + x;
        let (s, e) = (self.starts[p] as usize, self.starts[p + 1] as usize);
        self.indices[s..e]
            .iter()
            .zip(&self.weights[s..e])
            .map(|(&i, &w)| (i as usize, w))
    }

    pub fn weight_sum(&self, x: usize, y: usize) -> f64 {
        self.entries(x, y).map(|(_, w)| w).sum()
    }

    pub fn dirs(&self) -> &[[f64; 3]] {
        &self.dirs
    }

    pub fn basis(&self) -> &[[f64; SH_PER_CHANNEL]] {
        &self.basis
    }
}

/// Build the fixed compositing weights for one view.
pub fn build_weight_cache(asset: &GaussianAsset, view: &CameraView) -> SplatWeightCache {
    let width = view.width();
    let height = view.height();
    let splats = project(asset, view);

    // Rasterize each splat into per-pixel contribution lists.
    #[derive(Clone, Copy)]
    struct Contrib {
        depth: f64,
        index: u32,
        sigma: f64,
    }
    let mut pixels: Vec<Vec<Contrib>> = vec![Vec::new(); width * height];
    for s in &splats {
        let Some(conic) = s.conic() else { continue };
        let alpha = asset.opacity(s.index);
        if alpha <= SIGMA_MIN {
            continue;
        }
        // sigma >= 1/255 within Mahalanobis^2 <= 2 ln(255 alpha); also cap
        // at the 3-sigma ellipse. The bounding box of {d^2 <= tau} has
        // half-extent sqrt(tau * cov_xx) in x (resp. cov_yy in y).
        let tau = (2.0 * (255.0 * alpha).ln()).min(D2_MAX);
        if tau <= 0.0 {
            continue;
        }
        let rx = (tau * s.cov[0]).sqrt();
        let ry = (tau * s.cov[2]).sqrt();
        let x0 = ((s.mean[0] - rx - 0.5).floor().max(0.0)) as usize;
        let x1 = ((s.mean[0] + rx - 0.5).ceil().min((width - 1) as f64)).max(0.0) as usize;
        let y0 = ((s.mean[1] - ry - 0.5).floor().max(0.0)) as usize;
        let y1 = ((s.mean[1] + ry - 0.5).ceil().min((height - 1) as f64)).max(0.0) as usize;
        if s.mean[0] + rx < 0.0 || s.mean[1] + ry < 0.0 {
            continue;
        }
        for y in y0..=y1 {
            let dy = (y as f64 + 0.5) - s.mean[1];
            for x in x0..=x1 {
                let dx = (x as f64 + 0.5) - s.mean[0];
                let d2 = mahalanobis_sq(conic, dx, dy);
                if d2 > D2_MAX {
                    continue;
                }
                let sigma = alpha * (-0.5 * d2).exp();
                if sigma < SIGMA_MIN {
                    continue;
                }
                pixels[y * width + x].push(Contrib {
                    depth: s.depth,
                    index: s.index as u32,
                    sigma,
                });
            }
        }
    }

    // Depth-sort each pixel and convert sigmas to transmittance-modulated
    // weights.
    pixels.par_iter_mut().for_each(|list| {
        list.sort_by(|a, b| {
            a.depth
                .partial_cmp(&b.depth)
                .unwrap()
                .then(a.index.cmp(&b.index))
        });
        let mut transmittance = 1.0;
        for c in list.iter_mut() {
            let w = c.sigma * transmittance;
            transmittance *= 1.0 - c.sigma;
            c.sigma = w; // reuse the slot for the final weight
        }
    });

    let mut starts = Vec::with_capacity(width * height + 1);
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    starts.push(0u32);
    for list in &pixels {
        for c in list {
            indices.push(c.index);
            weights.push(c.sigma);
        }
        starts.push(indices.len() as u32);
    }

    let cam_center = view.center();
    let mut dirs = Vec::with_capacity(asset.len());
    let mut basis = Vec::with_capacity(asset.len());
    for p in asset.positions() {
        let d = Vector3::new(p[0], p[1], p[2]) - cam_center;
        let n = d.norm();
        let dir = if n > 1e-12 { [d.x / n, d.y / n, d.z / n] } else { [0.0, 0.0, 1.0] };
        dirs.push(dir);
        basis.push(sh::sh_basis(dir));
    }

    SplatWeightCache { width, height, n_gaussians: asset.len(), starts, indices, weights, dirs, basis }
}

fn check_cache(asset: &GaussianAsset, cache: &SplatWeightCache) -> Result<()> {
    if cache.n_gaussians != asset.len() {
        return Err(Error::ShapeMismatch(format!(
            "cache built for {} Gaussians, asset has {}",
            cache.n_gaussians,
            asset.len()
        )));
    }
    Ok(())
}

fn per_gaussian_colors(asset: &GaussianAsset, cache: &SplatWeightCache) -> Vec<[f64; 3]> {
    (0..asset.len())
        .map(|i| sh::color_pre_clamp(&asset.sh()[i], &cache.basis[i]))
        .collect()
}

/// Composite the asset's SH colors through the cached weights. Pixels with
/// no coverage stay at the black background; output is clamped to [0, 1].
pub fn render(asset: &GaussianAsset, cache: &SplatWeightCache) -> Result<RenderedImage> {
    check_cache(asset, cache)?;
    let colors = per_gaussian_colors(asset, cache);
    let width = cache.width;
    let mut img = RenderedImage::new(width, cache.height);

    img.data_mut()
        .par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..width {
                let mut acc = [0.0f64; 3];
                for (i, w) in cache_entries_row(cache, x, y) {
                    let c = colors[i];
                    for ch in 0..3 {
                        acc[ch] += w * c[ch].max(0.0);
                    }
                }
                for ch in 0..3 {
                    row[x * 3 + ch] = acc[ch].clamp(0.0, 1.0);
                }
            }
        });
    Ok(img)
}

#[inline]
fn cache_entries_row(
    cache: &SplatWeightCache,
    x: usize,
    y: usize,
) -> impl Iterator<Item = (usize, f64)> + '_ {
    cache.entries(x, y)
}

/// Adjoint of [`render`] with respect to the SH coefficients.
///
/// Chain rule per pixel/channel: upstream flows only where the final [0,1]
/// clamp is inactive (strictly inside) and the per-Gaussian color clamp is
/// inactive (pre-clamp > 0); the subgradient exactly at a boundary is 0.
/// Accumulation order is fixed (row-major pixels) so results are
/// bit-reproducible.
pub fn render_gradient(
    asset: &GaussianAsset,
    cache: &SplatWeightCache,
    upstream: &RenderedImage,
) -> Result<Vec<[f64; SH_COEFFS]>> {
    check_cache(asset, cache)?;
    if upstream.width() != cache.width || upstream.height() != cache.height {
        return Err(Error::ShapeMismatch(format!(
            "upstream {}x{} does not match cache {}x{}",
            upstream.width(),
            upstream.height(),
            cache.width,
            cache.height
        )));
    }
    let colors = per_gaussian_colors(asset, cache);
    let mut grad = vec![[0.0f64; SH_COEFFS]; asset.len()];

    for y in 0..cache.height {
        for x in 0..cache.width {
            let up = upstream.pixel(x, y);
            if up == [0.0, 0.0, 0.0] {
                continue;
            }
            // Pre-clamp pixel sums decide whether the [0,1] clamp gates
            // each channel.
            let mut pre = [0.0f64; 3];
            for (i, w) in cache.entries(x, y) {
                let c = colors[i];
                for ch in 0..3 {
                    pre[ch] += w * c[ch].max(0.0);
                }
            }
            for (i, w) in cache.entries(x, y) {
                let c = colors[i];
                let basis = &cache.basis[i];
                let g = &mut grad[i];
                for ch in 0..3 {
                    if pre[ch] >= 1.0 || c[ch] <= 0.0 {
                        continue;
                    }
                    let gu = w * up[ch];
                    if gu == 0.0 {
                        continue;
                    }
                    g[sh::coeff_slot(ch, 0)] += gu * basis[0];
                    for l in 1..SH_PER_CHANNEL {
                        g[sh::coeff_slot(ch, l)] += gu * basis[l];
                    }
                }
            }
        }
    }
    Ok(grad)
}
