//! 3DGS asset data model: frozen geometry plus per-Gaussian SH color
//! coefficients, the learnable SH offset field, and pruning attacks.

mod ply;

pub use ply::{load_ply, save_ply};

use crate::error::{Error, Result};
use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SH degree used throughout: 3, i.e. 16 basis functions per channel.
pub const SH_DEGREE: usize = 3;
/// Coefficients per channel for degree 3.
pub const SH_PER_CHANNEL: usize = (SH_DEGREE + 1) * (SH_DEGREE + 1);
/// Total SH reals per Gaussian (3 DC + 45 rest).
pub const SH_COEFFS: usize = 3 * SH_PER_CHANNEL;

/// A set of 3D Gaussians with frozen geometry and SH color coefficients.
///
/// Immutable after construction; every operation returns a new asset.
/// Scales and opacities are stored in their file representation (log /
/// logit) and exposed transformed, so PLY round-trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAsset {
    positions: Vec<[f64; 3]>,
    log_scales: Vec<[f64; 3]>,
    /// Unit quaternions, scalar first (w, x, y, z).
    rotations: Vec<[f64; 4]>,
    opacity_logits: Vec<f64>,
    /// Per-Gaussian SH coefficients in file order:
    /// `[dc_r, dc_g, dc_b, rest_r_0..14, rest_g_0..14, rest_b_0..14]`.
    sh: Vec<[f64; SH_COEFFS]>,
}

/// Learnable per-Gaussian SH offsets, aligned index-for-index with an asset.
#[derive(Debug, Clone, PartialEq)]
pub struct SHOffsetField {
    offsets: Vec<[f64; SH_COEFFS]>,
}

/// Which Gaussians a pruning attack removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneMode {
    /// Remove the lowest-opacity fraction (ties broken by index).
    BottomOpacity,
    /// Remove a uniform random fraction determined by the seed.
    Random,
}

impl GaussianAsset {
    pub fn new(
        positions: Vec<[f64; 3]>,
        log_scales: Vec<[f64; 3]>,
        rotations: Vec<[f64; 4]>,
        opacity_logits: Vec<f64>,
        sh: Vec<[f64; SH_COEFFS]>,
    ) -> Result<Self> {
        let asset = Self::new_unchecked(positions, log_scales, rotations, opacity_logits, sh);
        asset.validate()?;
        Ok(asset)
    }

    /// Construction without validation; used by tests that exercise the
    /// validation paths of other operations.
    pub(crate) fn new_unchecked(
        positions: Vec<[f64; 3]>,
        log_scales: Vec<[f64; 3]>,
        rotations: Vec<[f64; 4]>,
        opacity_logits: Vec<f64>,
        sh: Vec<[f64; SH_COEFFS]>,
    ) -> Self {
        Self { positions, log_scales, rotations, opacity_logits, sh }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::Invariant("N >= 1 violated: asset has no Gaussians".into()));
        }
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.opacity_logits.len() != n
            || self.sh.len() != n
        {
            return Err(Error::ShapeMismatch("asset field lengths disagree".into()));
        }
        for i in 0..n {
            let finite = self.positions[i].iter().all(|v| v.is_finite())
                && self.log_scales[i].iter().all(|v| v.is_finite())
                && self.rotations[i].iter().all(|v| v.is_finite())
                && self.opacity_logits[i].is_finite()
                && self.sh[i].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Invariant(format!("non-finite value in Gaussian {i}")));
            }
            if self.log_scales[i].iter().any(|&v| !v.exp().is_finite()) {
                return Err(Error::Invariant(format!("scale overflows in Gaussian {i}")));
            }
            let q = self.rotations[i];
            let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Invariant(format!(
                    "quaternion {i} not unit length (norm {norm})"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn log_scales(&self) -> &[[f64; 3]] {
        &self.log_scales
    }

    /// Positive extents `exp(log_scale)`.
    pub fn scales(&self, i: usize) -> [f64; 3] {
        let ls = self.log_scales[i];
        [ls[0].exp(), ls[1].exp(), ls[2].exp()]
    }

    pub fn rotations(&self) -> &[[f64; 4]] {
        &self.rotations
    }

    pub fn opacity_logits(&self) -> &[f64] {
        &self.opacity_logits
    }

    /// Opacity `alpha = logistic(logit)`.
    pub fn opacity(&self, i: usize) -> f64 {
        logistic(self.opacity_logits[i])
    }

    pub fn sh(&self) -> &[[f64; SH_COEFFS]] {
        &self.sh
    }

    /// World-space covariance `R diag(s^2) R^T`.
    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        let r = rotation_matrix(self.rotations[i]);
        let s = self.scales(i);
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]));
        r * d * r.transpose()
    }

    /// Replace the SH table wholesale (used by `apply_offsets`).
    fn with_sh(&self, sh: Vec<[f64; SH_COEFFS]>) -> Self {
        Self {
            positions: self.positions.clone(),
            log_scales: self.log_scales.clone(),
            rotations: self.rotations.clone(),
            opacity_logits: self.opacity_logits.clone(),
            sh,
        }
    }
}

impl SHOffsetField {
    pub fn zeros(n: usize) -> Self {
        Self { offsets: vec![[0.0; SH_COEFFS]; n] }
    }

    pub fn new(offsets: Vec<[f64; SH_COEFFS]>) -> Result<Self> {
        for (i, o) in offsets.iter().enumerate() {
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("non-finite offset for Gaussian {i}")));
            }
        }
        Ok(Self { offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[[f64; SH_COEFFS]] {
        &self.offsets
    }

    pub fn offsets_mut(&mut self) -> &mut [[f64; SH_COEFFS]] {
        &mut self.offsets
    }

    /// Mean squared L2 norm over Gaussians, `(1/N) sum_i ||o_i||^2`.
    pub fn mean_squared_norm(&self) -> f64 {
        if self.offsets.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .offsets
            .iter()
            .map(|o| o.iter().map(|v| v * v).sum::<f64>())
            .sum();
        total / self.offsets.len() as f64
    }
}

/// Add each SH offset to the matching Gaussian's coefficients. Geometry and
/// opacity are carried over untouched.
pub fn apply_offsets(asset: &GaussianAsset, off: &SHOffsetField) -> Result<GaussianAsset> {
    if asset.len() != off.len() {
        return Err(Error::ShapeMismatch(format!(
            "offset count {} does not match asset N {}",
            off.len(),
            asset.len()
        )));
    }
    let sh = asset
        .sh
        .iter()
        .zip(off.offsets.iter())
        .map(|(h, o)| {
            let mut out = [0.0; SH_COEFFS];
            for k in 0..SH_COEFFS {
                out[k] = h[k] + o[k];
            }
            out
        })
        .collect();
    Ok(asset.with_sh(sh))
}

/// Remove a fraction of Gaussians, keeping `ceil(N * (1 - fraction))`.
pub fn prune(
    asset: &GaussianAsset,
    mode: PruneMode,
    fraction: f64,
    seed: u64,
) -> Result<GaussianAsset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Invariant(format!("prune fraction {fraction} not in [0, 1)")));
    }
    let n = asset.len();
    let keep = ((n as f64) * (1.0 - fraction)).ceil() as usize;
    let keep = keep.clamp(1, n);
    let n_remove = n - keep;

    let removed: Vec<usize> = match mode {
        PruneMode::BottomOpacity => {
            // alpha is monotone in the logit, so sorting logits is
            // equivalent to sorting opacities.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                asset.opacity_logits[a]
                    .partial_cmp(&asset.opacity_logits[b])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order.into_iter().take(n_remove).collect()
        }
        PruneMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order.into_iter().take(n_remove).collect()
        }
    };

    let mut keep_mask = vec![true; n];
    for i in removed {
        keep_mask[i] = false;
    }

    let select =
        |mask: &[bool]| -> Vec<usize> { (0..n).filter(|&i| mask[i]).collect() };
    let idx = select(&keep_mask);

    GaussianAsset::new(
        idx.iter().map(|&i| asset.positions[i]).collect(),
        idx.iter().map(|&i| asset.log_scales[i]).collect(),
        idx.iter().map(|&i| asset.rotations[i]).collect(),
        idx.iter().map(|&i| asset.opacity_logits[i]).collect(),
        idx.iter().map(|&i| asset.sh[i]).collect(),
    )
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix from a scalar-first unit quaternion.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Normalize a quaternion, keeping it bit-identical when already unit
/// length within 1e-6 so repeated load/save cycles are stable.
pub(crate) fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if norm < 1e-12 {
        return Err(Error::Invariant("zero-norm quaternion".into()));
    }
    if (norm - 1.0).abs() <= 1e-6 {
        return Ok(q);
    }
    Ok([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm])
}

#[cfg(test)]
pub(crate) fn random_asset(seed: u64, n: usize) -> GaussianAsset {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n);
    let mut log_scales = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut opacity_logits = Vec::with_capacity(n);
    let mut sh = Vec::with_capacity(n);
    for _ in 0..n {
        positions.push([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);
        log_scales.push([
            rng.random_range(-3.0..-1.0f64),
            rng.random_range(-3.0..-1.0f64),
            rng.random_range(-3.0..-1.0f64),
        ]);
        let q = normalize_quat([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ])
        .unwrap();
        rotations.push(q);
        opacity_logits.push(rng.random_range(-2.0..3.0));
        let mut coeffs = [0.0; SH_COEFFS];
        for c in &mut coeffs {
            *c = rng.random_range(-0.5..0.5);
        }
        sh.push(coeffs);
    }
    GaussianAsset::new(positions, log_scales, rotations, opacity_logits, sh).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn apply_offsets_zero_is_identity() {
        let asset = random_asset(1, 10);
        let out = apply_offsets(&asset, &SHOffsetField::zeros(10)).unwrap();
        assert_eq!(out, asset);
    }

    #[test]
    fn apply_offsets_cancels_sh() {
        let asset = random_asset(2, 5);
        let off = SHOffsetField::new(
            asset.sh().iter().map(|h| h.map(|v| -v)).collect(),
        )
        .unwrap();
        let out = apply_offsets(&asset, &off).unwrap();
        for g in out.sh() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
        assert_eq!(out.positions(), asset.positions());
        assert_eq!(out.rotations(), asset.rotations());
    }

    #[test]
    fn apply_offsets_elementwise_sum() {
        let asset = random_asset(3, 8);
        let field = SHOffsetField::new(
            (0..8)
                .map(|i| {
                    let mut o = [0.0; SH_COEFFS];
                    for (k, v) in o.iter_mut().enumerate() {
                        *v = (i as f64) * 0.1 + (k as f64) * 0.01;
                    }
                    o
                })
                .collect(),
        )
        .unwrap();
        let out = apply_offsets(&asset, &field).unwrap();
        for i in 0..8 {
            for k in 0..SH_COEFFS {
                assert_eq!(out.sh()[i][k], asset.sh()[i][k] + field.offsets()[i][k]);
            }
        }
    }

    #[test]
    fn apply_offsets_rejects_mismatched_n() {
        let asset = random_asset(4, 6);
        assert!(apply_offsets(&asset, &SHOffsetField::zeros(5)).is_err());
    }

    #[test]
    fn apply_offsets_is_linear_in_scale() {
        let asset = random_asset(5, 4);
        let mut off = SHOffsetField::zeros(4);
        off.offsets_mut()[2][7] = 0.25;
        off.offsets_mut()[0][0] = -0.5;
        let half = SHOffsetField::new(
            off.offsets().iter().map(|o| o.map(|v| 0.5 * v)).collect(),
        )
        .unwrap();
        let full = apply_offsets(&asset, &off).unwrap();
        let mid = apply_offsets(&asset, &half).unwrap();
        for i in 0..4 {
            for k in 0..SH_COEFFS {
                let lerp = 0.5 * (asset.sh()[i][k] + full.sh()[i][k]);
                assert_relative_eq!(mid.sh()[i][k], lerp, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn prune_zero_fraction_is_identity() {
        let asset = random_asset(6, 12);
        let out = prune(&asset, PruneMode::BottomOpacity, 0.0, 0).unwrap();
        assert_eq!(out, asset);
    }

    #[test]
    fn prune_bottom_opacity_keeps_highest() {
        // alpha = (0.1, 0.9, 0.2, 0.8); keep the top half.
        let alphas = [0.1, 0.9, 0.2, 0.8];
        let asset = GaussianAsset::new(
            vec![[0.0; 3]; 4],
            vec![[-1.0; 3]; 4],
            vec![[1.0, 0.0, 0.0, 0.0]; 4],
            alphas.iter().map(|&a| logit(a)).collect(),
            (0..4)
                .map(|i| {
                    let mut c = [0.0; SH_COEFFS];
                    c[0] = i as f64;
                    c
                })
                .collect(),
        )
        .unwrap();
        let out = prune(&asset, PruneMode::BottomOpacity, 0.5, 0).unwrap();
        assert_eq!(out.len(), 2);
        // Kept Gaussians are originals 1 and 3, in order.
        assert_eq!(out.sh()[0][0], 1.0);
        assert_eq!(out.sh()[1][0], 3.0);
    }

    #[test]
    fn prune_random_is_seeded_and_sized() {
        let asset = random_asset(7, 100);
        let a = prune(&asset, PruneMode::Random, 0.25, 42).unwrap();
        let b = prune(&asset, PruneMode::Random, 0.25, 42).unwrap();
        let c = prune(&asset, PruneMode::Random, 0.25, 43).unwrap();
        assert_eq!(a.len(), 75);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn prune_bottom_never_keeps_below_removed() {
        let asset = random_asset(8, 64);
        let out = prune(&asset, PruneMode::BottomOpacity, 0.3, 0).unwrap();
        let kept_min = (0..out.len()).map(|i| out.opacity(i)).fold(f64::INFINITY, f64::min);
        let mut all: Vec<f64> = (0..asset.len()).map(|i| asset.opacity(i)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let removed_max = all[asset.len() - out.len() - 1];
        assert!(kept_min >= removed_max);
    }

    #[test]
    fn quaternion_normalization_rules() {
        let q = normalize_quat([2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(q, [1.0, 0.0, 0.0, 0.0]);
        // Already unit within 1e-6: kept bit-identical.
        let almost = [1.0 + 5e-7, 0.0, 0.0, 0.0];
        assert_eq!(normalize_quat(almost).unwrap(), almost);
        assert!(normalize_quat([0.0; 4]).is_err());
    }

    #[test]
    fn asset_validation_rejects_empty_and_nonfinite() {
        let empty = GaussianAsset::new(vec![], vec![], vec![], vec![], vec![]);
        assert!(matches!(empty, Err(Error::Invariant(_))));
        let mut sh = [0.0; SH_COEFFS];
        sh[10] = f64::NAN;
        let bad = GaussianAsset::new(
            vec![[0.0; 3]],
            vec![[0.0; 3]],
            vec![[1.0, 0.0, 0.0, 0.0]],
            vec![0.0],
            vec![sh],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn offset_mean_squared_norm_closed_form() {
        let mut off = SHOffsetField::zeros(1);
        off.offsets_mut()[0] = [1.0; SH_COEFFS];
        assert_eq!(off.mean_squared_norm(), SH_COEFFS as f64);
    }
}
