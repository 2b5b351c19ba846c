//! Image distortions: a differentiable layer for training and bit-exact
//! reference implementations for evaluation.

mod jpeg;
pub mod warp;

pub use jpeg::{jpeg_real, jpeg_surrogate, jpeg_surrogate_vjp, JpegCtx};

use crate::error::{Error, Result};
use crate::imagebuf::RenderedImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A distortion kind with its parameter ranges. Concrete parameters are
/// sampled from the ranges at apply time, driven by the spec's seed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DistortionKind {
    None,
    /// Center crop keeping an area fraction sampled from the range, then
    /// resize back to the original resolution.
    Crop { keep_min: f64, keep_max: f64 },
    /// Uniform resize by a ratio from the range, then resize back.
    Scale { ratio_min: f64, ratio_max: f64 },
    /// Rotation by an angle from [-max_angle, max_angle], reflection
    /// padding.
    Rotate { max_angle: f64 },
    /// Pixel multiply by a factor from the range, clamped to [0, 1].
    Brightness { factor_min: f64, factor_max: f64 },
    /// JPEG at a fixed quality (1-100).
    Jpeg { quality: u8 },
    /// Additive zero-mean Gaussian noise, clamped to [0, 1].
    Noise { sigma: f64 },
    /// Gaussian blur.
    Blur { kernel: usize, sigma: f64 },
    /// Black out a random rectangle covering at most this fraction.
    Occlusion { max_fraction: f64 },
    /// Evaluation composite: crop(brightness(jpeg(x))).
    Combined,
}

impl DistortionKind {
    pub fn default_crop() -> Self {
        Self::Crop { keep_min: 0.4, keep_max: 1.0 }
    }

    pub fn eval_crop() -> Self {
        Self::Crop { keep_min: 0.4, keep_max: 0.4 }
    }

    pub fn default_scale() -> Self {
        Self::Scale { ratio_min: 0.75, ratio_max: 1.25 }
    }

    pub fn default_rotate() -> Self {
        Self::Rotate { max_angle: std::f64::consts::FRAC_PI_6 }
    }

    pub fn default_brightness() -> Self {
        Self::Brightness { factor_min: 0.5, factor_max: 1.5 }
    }

    pub fn default_noise() -> Self {
        Self::Noise { sigma: 0.1 }
    }

    pub fn default_blur() -> Self {
        Self::Blur { kernel: 3, sigma: 0.1 }
    }

    pub fn default_occlusion() -> Self {
        Self::Occlusion { max_fraction: 0.2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Crop { .. } => "crop",
            Self::Scale { .. } => "scale",
            Self::Rotate { .. } => "rotate",
            Self::Brightness { .. } => "brightness",
            Self::Jpeg { .. } => "jpeg",
            Self::Noise { .. } => "noise",
            Self::Blur { .. } => "blur",
            Self::Occlusion { .. } => "occlusion",
            Self::Combined => "combined",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::None | Self::Combined => true,
            Self::Crop { keep_min, keep_max } => {
                0.0 < keep_min && keep_min <= keep_max && keep_max <= 1.0
            }
            Self::Scale { ratio_min, ratio_max } => {
                (0.75..=1.25).contains(&ratio_min)
                    && (0.75..=1.25).contains(&ratio_max)
                    && ratio_min <= ratio_max
            }
            Self::Rotate { max_angle } => {
                (0.0..=std::f64::consts::FRAC_PI_6 + 1e-12).contains(&max_angle)
            }
            Self::Brightness { factor_min, factor_max } => {
                (0.5..=1.5).contains(&factor_min)
                    && (0.5..=1.5).contains(&factor_max)
                    && factor_min <= factor_max
            }
            Self::Jpeg { quality } => (1..=100).contains(&quality),
            Self::Noise { sigma } => sigma >= 0.0,
            Self::Blur { kernel, sigma } => kernel % 2 == 1 && kernel >= 1 && sigma > 0.0,
            Self::Occlusion { max_fraction } => (0.0..=0.2).contains(&max_fraction),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("distortion parameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// Fixes all sampling inside the distortion.
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

/// Context for the exact adjoint of [`apply_train`].
pub enum TrainCtx {
    Identity,
    Rotate {
        angle: f64,
    },
    /// Down-and-up (or up-and-down) resize pair.
    Scale {
        mid_w: usize,
        mid_h: usize,
        w: usize,
        h: usize,
    },
    Crop {
        x0: usize,
        y0: usize,
        cw: usize,
        ch: usize,
        w: usize,
        h: usize,
    },
    /// Per-value pass-through mask for clamped elementwise ops.
    Elementwise {
        factor: f64,
        mask: Vec<bool>,
    },
    Blur {
        kernel: usize,
        sigma: f64,
    },
    Jpeg(Box<JpegCtx>),
    Occlusion {
        x0: usize,
        y0: usize,
        rw: usize,
        rh: usize,
    },
}

/// Differentiable distortion for training. `kind = None` is the identity;
/// all sampling is driven by the spec seed.
pub fn apply_train(image: &RenderedImage, spec: &DistortionSpec) -> Result<(RenderedImage, TrainCtx)> {
    spec.kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (image.width(), image.height());
    match spec.kind {
        DistortionKind::None => Ok((image.clone(), TrainCtx::Identity)),
        DistortionKind::Rotate { max_angle } => {
            let angle = if max_angle == 0.0 { 0.0 } else { rng.random_range(-max_angle..=max_angle) };
            Ok((warp::rotate_bilinear(image, angle), TrainCtx::Rotate { angle }))
        }
        DistortionKind::Scale { ratio_min, ratio_max } => {
            let ratio = sample_range(&mut rng, ratio_min, ratio_max);
            let mid_w = ((w as f64 * ratio).round() as usize).max(1);
            let mid_h = ((h as f64 * ratio).round() as usize).max(1);
            let mid = warp::resize_bilinear(image, mid_w, mid_h);
            let out = warp::resize_bilinear(&mid, w, h);
            Ok((out, TrainCtx::Scale { mid_w, mid_h, w, h }))
        }
        DistortionKind::Crop { keep_min, keep_max } => {
            let keep = sample_range(&mut rng, keep_min, keep_max);
            let (x0, y0, cw, ch) = warp::center_crop_rect(w, h, keep);
            let cropped = warp::crop_image(image, x0, y0, cw, ch);
            let out = warp::resize_bilinear(&cropped, w, h);
            Ok((out, TrainCtx::Crop { x0, y0, cw, ch, w, h }))
        }
        DistortionKind::Brightness { factor_min, factor_max } => {
            let factor = sample_range(&mut rng, factor_min, factor_max);
            let mut out = image.clone();
            let mut mask = vec![false; out.data().len()];
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                let pre = *v * factor;
                mask[i] = 0.0 < pre && pre < 1.0;
                *v = pre.clamp(0.0, 1.0);
            }
            Ok((out, TrainCtx::Elementwise { factor, mask }))
        }
        DistortionKind::Jpeg { quality } => {
            let (out, ctx) = jpeg_surrogate(image, quality);
            Ok((out, TrainCtx::Jpeg(Box::new(ctx))))
        }
        DistortionKind::Noise { sigma } => {
            let mut out = image.clone();
            let mut mask = vec![false; out.data().len()];
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                let n: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
                let pre = *v + n;
                mask[i] = 0.0 < pre && pre < 1.0;
                *v = pre.clamp(0.0, 1.0);
            }
            Ok((out, TrainCtx::Elementwise { factor: 1.0, mask }))
        }
        DistortionKind::Blur { kernel, sigma } => {
            Ok((warp::gaussian_blur(image, kernel, sigma), TrainCtx::Blur { kernel, sigma }))
        }
        DistortionKind::Occlusion { max_fraction } => {
            let fraction = rng.random_range(0.0..=max_fraction);
            let (x0, y0, rw, rh) = occlusion_rect(&mut rng, w, h, fraction);
            let mut out = image.clone();
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    out.set_pixel(x, y, [0.0, 0.0, 0.0]);
                }
            }
            Ok((out, TrainCtx::Occlusion { x0, y0, rw, rh }))
        }
        DistortionKind::Combined => Err(Error::Config(
            "combined is an evaluation composite; train on its components".into(),
        )),
    }
}

/// Exact adjoint of [`apply_train`] at the stored sample.
pub fn train_vjp(ctx: &TrainCtx, upstream: &RenderedImage) -> RenderedImage {
    match ctx {
        TrainCtx::Identity => upstream.clone(),
        TrainCtx::Rotate { angle } => warp::rotate_bilinear_vjp(upstream, *angle),
        TrainCtx::Scale { mid_w, mid_h, w, h } => {
            let d_mid = warp::resize_bilinear_vjp(upstream, *mid_w, *mid_h);
            warp::resize_bilinear_vjp(&d_mid, *w, *h)
        }
        TrainCtx::Crop { x0, y0, cw, ch, w, h } => {
            let d_crop = warp::resize_bilinear_vjp(upstream, *cw, *ch);
            warp::crop_vjp(&d_crop, *w, *h, *x0, *y0)
        }
        TrainCtx::Elementwise { factor, mask } => {
            let mut out = upstream.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v = if mask[i] { *v * factor } else { 0.0 };
            }
            out
        }
        TrainCtx::Blur { kernel, sigma } => warp::gaussian_blur_vjp(upstream, *kernel, *sigma),
        TrainCtx::Jpeg(jctx) => jpeg_surrogate_vjp(jctx, upstream),
        TrainCtx::Occlusion { x0, y0, rw, rh } => {
            let mut out = upstream.clone();
            for y in *y0..*y0 + *rh {
                for x in *x0..*x0 + *rw {
                    out.set_pixel(x, y, [0.0, 0.0, 0.0]);
                }
            }
            out
        }
    }
}

/// Reference-grade evaluation distortion (bit-exact given the seed, not
/// differentiable): bicubic scaling/crop resampling, bilinear rotation
/// with reflection padding, a real JPEG codec round trip.
pub fn apply_eval(image: &RenderedImage, spec: &DistortionSpec) -> Result<RenderedImage> {
    spec.kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (image.width(), image.height());
    match spec.kind {
        DistortionKind::None => Ok(image.clone()),
        DistortionKind::Rotate { max_angle } => {
            let angle = if max_angle == 0.0 { 0.0 } else { rng.random_range(-max_angle..=max_angle) };
            Ok(warp::rotate_bilinear(image, angle))
        }
        DistortionKind::Scale { ratio_min, ratio_max } => {
            let ratio = sample_range(&mut rng, ratio_min, ratio_max);
            let mid_w = ((w as f64 * ratio).round() as usize).max(1);
            let mid_h = ((h as f64 * ratio).round() as usize).max(1);
            let mid = warp::resize_bicubic(image, mid_w, mid_h);
            Ok(warp::resize_bicubic(&mid, w, h))
        }
        DistortionKind::Crop { keep_min, keep_max } => {
            let keep = sample_range(&mut rng, keep_min, keep_max);
            let (x0, y0, cw, ch) = warp::center_crop_rect(w, h, keep);
            let cropped = warp::crop_image(image, x0, y0, cw, ch);
            Ok(warp::resize_bicubic(&cropped, w, h))
        }
        DistortionKind::Brightness { factor_min, factor_max } => {
            let factor = sample_range(&mut rng, factor_min, factor_max);
            let mut out = image.clone();
            for v in out.data_mut() {
                *v = (*v * factor).clamp(0.0, 1.0);
            }
            Ok(out)
        }
        DistortionKind::Jpeg { quality } => jpeg_real(image, quality),
        DistortionKind::Noise { sigma } => {
            let mut out = image.clone();
            for v in out.data_mut() {
                let n: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
                *v = (*v + n).clamp(0.0, 1.0);
            }
            Ok(out)
        }
        DistortionKind::Blur { kernel, sigma } => Ok(warp::gaussian_blur(image, kernel, sigma)),
        DistortionKind::Occlusion { max_fraction } => {
            let fraction = rng.random_range(0.0..=max_fraction);
            let (x0, y0, rw, rh) = occlusion_rect(&mut rng, w, h, fraction);
            let mut out = image.clone();
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    out.set_pixel(x, y, [0.0, 0.0, 0.0]);
                }
            }
            Ok(out)
        }
        DistortionKind::Combined => {
            // crop(brightness(jpeg(x))) with the components' eval defaults.
            let jq = apply_eval(image, &DistortionSpec::new(DistortionKind::Jpeg { quality: 10 }, spec.seed))?;
            let br = apply_eval(
                &jq,
                &DistortionSpec::new(DistortionKind::default_brightness(), spec.seed),
            )?;
            apply_eval(&br, &DistortionSpec::new(DistortionKind::eval_crop(), spec.seed))
        }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn occlusion_rect(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    fraction: f64,
) -> (usize, usize, usize, usize) {
    if fraction <= 0.0 {
        return (0, 0, 0, 0);
    }
    let side = fraction.sqrt();
    let rw = ((w as f64 * side).round() as usize).clamp(1, w);
    let rh = ((h as f64 * side).round() as usize).clamp(1, h);
    let x0 = rng.random_range(0..=(w - rw));
    let y0 = rng.random_range(0..=(h - rh));
    (x0, y0, rw, rh)
}

/// Which distortions the embedding sampler draws from and with what
/// parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DistortionSamplerConfig {
    /// Train-time JPEG quality.
    pub jpeg_quality: u8,
    /// Include Gaussian noise and blur in the pool (off by default; the
    /// image encoder already shrugs them off).
    pub include_noise_blur: bool,
    /// Include occlusion masking in the pool (off by default).
    pub include_occlusion: bool,
}

impl Default for DistortionSamplerConfig {
    fn default() -> Self {
        Self { jpeg_quality: 10, include_noise_blur: false, include_occlusion: false }
    }
}

impl DistortionSamplerConfig {
    fn pool(&self) -> Vec<DistortionKind> {
        let mut kinds = vec![
            DistortionKind::None,
            DistortionKind::default_crop(),
            DistortionKind::default_scale(),
            DistortionKind::default_rotate(),
            DistortionKind::default_brightness(),
            DistortionKind::Jpeg { quality: self.jpeg_quality },
        ];
        if self.include_noise_blur {
            kinds.push(DistortionKind::default_noise());
            kinds.push(DistortionKind::default_blur());
        }
        if self.include_occlusion {
            kinds.push(DistortionKind::default_occlusion());
        }
        kinds
    }

    /// One kind drawn uniformly from the pool; parameters sample later
    /// from the per-image seed.
    pub fn sample(&self, seed: u64) -> DistortionSpec {
        let kinds = self.pool();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = kinds[rng.random_range(0..kinds.len())];
        DistortionSpec::new(kind, rng.random())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> RenderedImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = RenderedImage::new(w, h);
        for v in img.data_mut() {
            *v = rng.random_range(0.05..0.95);
        }
        img
    }

    #[test]
    fn collapsed_ranges_give_identity() {
        let img = random_image(1, 24, 20);
        // Rotation range collapsed to zero.
        let (out, _) = apply_train(
            &img,
            &DistortionSpec::new(DistortionKind::Rotate { max_angle: 0.0 }, 7),
        )
        .unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Scale ratio pinned to 1.
        let (out, _) = apply_train(
            &img,
            &DistortionSpec::new(DistortionKind::Scale { ratio_min: 1.0, ratio_max: 1.0 }, 7),
        )
        .unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Crop keeping everything.
        let (out, _) = apply_train(
            &img,
            &DistortionSpec::new(DistortionKind::Crop { keep_min: 1.0, keep_max: 1.0 }, 7),
        )
        .unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Brightness factor pinned to 1, noise sigma 0.
        let (out, _) = apply_train(
            &img,
            &DistortionSpec::new(
                DistortionKind::Brightness { factor_min: 1.0, factor_max: 1.0 },
                7,
            ),
        )
        .unwrap();
        assert_eq!(out, img);
        let out = apply_eval(&img, &DistortionSpec::new(DistortionKind::Noise { sigma: 0.0 }, 7))
            .unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn brightness_closed_form() {
        let img = RenderedImage::filled(16, 16, [0.8, 0.8, 0.8]);
        let (out, _) = apply_train(
            &img,
            &DistortionSpec::new(
                DistortionKind::Brightness { factor_min: 0.5, factor_max: 0.5 },
                0,
            ),
        )
        .unwrap();
        for v in out.data() {
            assert_relative_eq!(*v, 0.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn train_adjoints_match_finite_differences() {
        let img = random_image(2, 20, 16);
        let kinds = [
            DistortionKind::default_crop(),
            DistortionKind::default_scale(),
            DistortionKind::default_rotate(),
            DistortionKind::Brightness { factor_min: 0.6, factor_max: 1.2 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in kinds {
            let spec = DistortionSpec::new(kind, 11);
            let (_, ctx) = apply_train(&img, &spec).unwrap();
            let mut upstream = RenderedImage::new(20, 16);
            for v in upstream.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let grad = train_vjp(&ctx, &upstream);
            let loss = |im: &RenderedImage| -> f64 {
                let (o, _) = apply_train(im, &spec).unwrap();
                o.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
            };
            let h = 1e-6;
            let mut checked = 0;
            for _ in 0..200 {
                let i = rng.random_range(0..img.data().len());
                if grad.data()[i].abs() < 1e-9 {
                    continue;
                }
                let orig = img.data()[i];
                let mut p = img.clone();
                p.data_mut()[i] = orig + h;
                let up = loss(&p);
                p.data_mut()[i] = orig - h;
                let down = loss(&p);
                let fd = (up - down) / (2.0 * h);
                let rel = (grad.data()[i] - fd).abs() / grad.data()[i].abs().max(fd.abs());
                assert!(
                    rel < 1e-3,
                    "{}: slot {i} adjoint {} vs fd {fd} rel {rel}",
                    kind.name(),
                    grad.data()[i]
                );
                checked += 1;
            }
            assert!(checked >= 100, "{}: only {checked} checked", kind.name());
        }
    }

    #[test]
    fn eval_is_deterministic_given_seed() {
        let img = random_image(4, 32, 32);
        for kind in [
            DistortionKind::default_rotate(),
            DistortionKind::default_noise(),
            DistortionKind::default_occlusion(),
            DistortionKind::Combined,
        ] {
            let a = apply_eval(&img, &DistortionSpec::new(kind, 5)).unwrap();
            let b = apply_eval(&img, &DistortionSpec::new(kind, 5)).unwrap();
            assert_eq!(a, b, "{}", kind.name());
        }
        let a = apply_eval(&img, &DistortionSpec::new(DistortionKind::default_rotate(), 5)).unwrap();
        let c = apply_eval(&img, &DistortionSpec::new(DistortionKind::default_rotate(), 6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn center_crop_survivors_come_from_center() {
        // Quadrant-colored image: after a 40% center crop and resize, all
        // output pixels must be colors present near the center, never the
        // pure corner values at the very edge of the frame.
        let mut img = RenderedImage::new(40, 40);
        for y in 0..40 {
            for x in 0..40 {
                let c = match (x < 20, y < 20) {
                    (true, true) => [1.0, 0.0, 0.0],
                    (false, true) => [0.0, 1.0, 0.0],
                    (true, false) => [0.0, 0.0, 1.0],
                    (false, false) => [1.0, 1.0, 0.0],
                };
                img.set_pixel(x, y, c);
            }
        }
        let out = apply_eval(&img, &DistortionSpec::new(DistortionKind::eval_crop(), 0)).unwrap();
        assert_eq!(out.width(), 40);
        // The crop keeps x,y in [8, 33); every surviving source pixel is
        // within that window, so e.g. output (0,0) must be pure red still
        // (source x,y ~ 8..10 < 20).
        assert_eq!(out.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(out.pixel(39, 39), [1.0, 1.0, 0.0]);
        // And the exact corner color mix of the original frame corners
        // cannot appear anywhere in row 0 beyond the crop's reach.
        for x in 0..40 {
            let p = out.pixel(x, 0);
            assert!(p[2] < 0.5, "bottom-quadrant blue leaked into top row at {x}");
        }
    }

    #[test]
    fn combined_equals_component_composition() {
        let img = random_image(6, 24, 24);
        let seed = 9;
        let combined =
            apply_eval(&img, &DistortionSpec::new(DistortionKind::Combined, seed)).unwrap();
        let jq = apply_eval(&img, &DistortionSpec::new(DistortionKind::Jpeg { quality: 10 }, seed))
            .unwrap();
        let br = apply_eval(
            &jq,
            &DistortionSpec::new(DistortionKind::default_brightness(), seed),
        )
        .unwrap();
        let manual =
            apply_eval(&br, &DistortionSpec::new(DistortionKind::eval_crop(), seed)).unwrap();
        assert_eq!(combined, manual);
    }

    #[test]
    fn sampler_is_seeded_and_respects_pool() {
        let config = DistortionSamplerConfig::default();
        let a = config.sample(1);
        let b = config.sample(1);
        assert_eq!(a, b);
        // Default pool excludes noise/blur/occlusion.
        for seed in 0..200 {
            let s = config.sample(seed);
            assert!(!matches!(
                s.kind,
                DistortionKind::Noise { .. }
                    | DistortionKind::Blur { .. }
                    | DistortionKind::Occlusion { .. }
            ));
        }
        let all = DistortionSamplerConfig {
            include_noise_blur: true,
            include_occlusion: true,
            ..Default::default()
        };
        let mut saw_noise = false;
        for seed in 0..300 {
            if matches!(all.sample(seed).kind, DistortionKind::Noise { .. }) {
                saw_noise = true;
            }
        }
        assert!(saw_noise);
    }

    #[test]
    fn occlusion_blacks_out_at_most_the_fraction() {
        let img = RenderedImage::filled(30, 30, [0.5; 3]);
        let (out, _) = apply_train(
            &img,
            &DistortionSpec::new(DistortionKind::default_occlusion(), 3),
        )
        .unwrap();
        let black = out
            .data()
            .chunks(3)
            .filter(|p| p == &[0.0, 0.0, 0.0])
            .count();
        assert!(black as f64 <= 0.2 * 900.0 + 60.0, "blacked {black} pixels");
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let img = random_image(7, 16, 16);
        for kind in [
            DistortionKind::Scale { ratio_min: 0.5, ratio_max: 1.0 },
            DistortionKind::Rotate { max_angle: 1.0 },
            DistortionKind::Brightness { factor_min: 0.1, factor_max: 1.0 },
            DistortionKind::Jpeg { quality: 0 },
            DistortionKind::Occlusion { max_fraction: 0.5 },
        ] {
            assert!(apply_train(&img, &DistortionSpec::new(kind, 0)).is_err(), "{}", kind.name());
        }
    }
}
