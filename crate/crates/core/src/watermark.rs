//! SH-offset embedding under the full objective, and blind extraction.
//!
//! Embedding freezes everything except a per-Gaussian SH offset field and
//! minimizes `lambda_recon * (L_rgb + L_lpips) + lambda_msg * L_msg +
//! lambda_off * L_off` with Adam. The message term renders a view batch
//! through the cached splat weights, pushes each render through one
//! sampled training distortion, the frozen image encoder, and the frozen
//! decoder; reconstruction compares undistorted renders against the
//! original ones.

use crate::asset::{apply_offsets, GaussianAsset, SHOffsetField, SH_COEFFS};
use crate::camera::CameraView;
use crate::codec::{decode_bits, message_loss, DecoderModel, MessageBits, PROB_CLAMP};
use crate::distort::{apply_train, train_vjp, DistortionSamplerConfig};
use crate::encoders::EncoderBundle;
use crate::error::{Error, Result};
use crate::imagebuf::RenderedImage;
use crate::metrics::{psnr, ssim_with_grad, NullPerceptual, PerceptualMetric};
use crate::nn::Adam;
use crate::render::{build_weight_cache, render, render_gradient};
use crate::seed::{derive_seed, derive_seed_indexed};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EmbedConfig {
    pub lambda_recon: f64,
    pub lambda_msg: f64,
    pub lambda_off: f64,
    /// SSIM weight inside L_rgb.
    pub lambda_ssim: f64,
    pub epochs: usize,
    pub batch_views: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub distortions: DistortionSamplerConfig,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            lambda_recon: 1.0,
            lambda_msg: 0.03,
            lambda_off: 10.0,
            lambda_ssim: 0.2,
            epochs: 100,
            batch_views: 16,
            learning_rate: 5e-3,
            weight_decay: 1e-6,
            distortions: DistortionSamplerConfig::default(),
            seed: 0,
        }
    }
}

impl EmbedConfig {
    fn validate(&self) -> Result<()> {
        if self.lambda_recon < 0.0
            || self.lambda_msg < 0.0
            || self.lambda_off < 0.0
            || !(0.0..=1.0).contains(&self.lambda_ssim)
        {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_views == 0 {
            return Err(Error::Config("epochs and batch_views must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record (serialized as JSON lines by the CLI).
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total_loss: f64,
    pub msg_loss: f64,
    pub recon_loss: f64,
    pub offset_loss: f64,
    /// Bit accuracy averaged over the batch views.
    pub bit_acc: f64,
    /// PSNR of undistorted watermarked renders vs the originals, averaged
    /// over the batch (infinite at the zero-offset start).
    pub psnr_db: f64,
}

/// Mean squared offset norm `(1/N) sum_i ||o_i||^2`, as a positive
/// penalty.
pub fn offset_loss(off: &SHOffsetField) -> f64 {
    off.mean_squared_norm()
}

/// `lambda_ssim (1 - SSIM) + (1 - lambda_ssim) L1 + perceptual`.
pub fn recon_loss(
    watermarked: &RenderedImage,
    original: &RenderedImage,
    lambda_ssim: f64,
    perceptual: &dyn PerceptualMetric,
) -> Result<f64> {
    Ok(recon_loss_with_grad(watermarked, original, lambda_ssim, perceptual)?.0)
}

/// Reconstruction loss plus its gradient with respect to the watermarked
/// image.
pub fn recon_loss_with_grad(
    watermarked: &RenderedImage,
    original: &RenderedImage,
    lambda_ssim: f64,
    perceptual: &dyn PerceptualMetric,
) -> Result<(f64, RenderedImage)> {
    if !watermarked.same_shape(original) {
        return Err(Error::ShapeMismatch("recon loss over differently sized images".into()));
    }
    let n = watermarked.data().len() as f64;
    let mut l1 = 0.0;
    let mut grad = RenderedImage::new(watermarked.width(), watermarked.height());
    for (i, (a, b)) in watermarked.data().iter().zip(original.data()).enumerate() {
        let d = a - b;
        l1 += d.abs();
        // f64::signum(0.0) is 1, not the subgradient 0 wanted here.
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.data_mut()[i] = (1.0 - lambda_ssim) * sign / n;
    }
    l1 /= n;

    let (ssim_val, ssim_grad) = ssim_with_grad(watermarked, original)?;
    for (g, sg) in grad.data_mut().iter_mut().zip(ssim_grad.data()) {
        *g -= lambda_ssim * sg; // d(1 - SSIM) = -dSSIM
    }

    let (perc, perc_grad) = perceptual.distance_with_grad(watermarked, original)?;
    for (g, pg) in grad.data_mut().iter_mut().zip(perc_grad.data()) {
        *g += pg;
    }

    let loss = lambda_ssim * (1.0 - ssim_val) + (1.0 - lambda_ssim) * l1 + perc;
    Ok((loss, grad))
}

/// Optimize an SH offset field that embeds `message` into `asset`.
///
/// Geometry, opacity, the encoders, and the decoder receive no updates;
/// the returned offsets are the only thing learned.
pub fn embed<B: EncoderBundle>(
    asset: &GaussianAsset,
    message: &MessageBits,
    views: &[CameraView],
    bundle: &B,
    decoder: &DecoderModel,
    config: &EmbedConfig,
) -> Result<(SHOffsetField, Vec<EpochLog>)> {
    embed_with_perceptual(asset, message, views, bundle, decoder, config, &NullPerceptual)
}

pub fn embed_with_perceptual<B: EncoderBundle>(
    asset: &GaussianAsset,
    message: &MessageBits,
    views: &[CameraView],
    bundle: &B,
    decoder: &DecoderModel,
    config: &EmbedConfig,
    perceptual: &dyn PerceptualMetric,
) -> Result<(SHOffsetField, Vec<EpochLog>)> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::Config("embedding needs at least one training view".into()));
    }
    if decoder.encoder_id() != bundle.identifier() {
        return Err(Error::BundleMismatch(format!(
            "decoder was trained against '{}', bundle is '{}'",
            decoder.encoder_id(),
            bundle.identifier()
        )));
    }
    if decoder.bits() != message.len() {
        return Err(Error::BundleMismatch(format!(
            "decoder expects {} bits, message has {}",
            decoder.bits(),
            message.len()
        )));
    }

    let n = asset.len();
    let caches: Vec<_> = views.iter().map(|v| build_weight_cache(asset, v)).collect();
    let originals: Vec<RenderedImage> =
        caches.iter().map(|c| render(asset, c)).collect::<Result<_>>()?;

    let mut offsets = SHOffsetField::zeros(n);
    let mut adam = Adam::new(n * SH_COEFFS, config.learning_rate, config.weight_decay);
    let mut view_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "embed-views"));
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let watermarked = apply_offsets(asset, &offsets)?;
        let batch: Vec<usize> =
            (0..config.batch_views).map(|_| view_rng.random_range(0..views.len())).collect();

        let mut grad_sum = vec![[0.0f64; SH_COEFFS]; n];
        let mut msg_loss_sum = 0.0;
        let mut recon_loss_sum = 0.0;
        let mut bit_acc_sum = 0.0;
        let mut psnr_sum = 0.0;

        for (slot, &v) in batch.iter().enumerate() {
            let img = render(&watermarked, &caches[v])?;

            // Message branch: distort, encode, decode.
            let spec = config.distortions.sample(derive_seed_indexed(
                config.seed,
                "embed-distort",
                (epoch * config.batch_views + slot) as u64,
            ));
            let (distorted, dctx) = apply_train(&img, &spec)?;
            let (feature, ectx) = bundle.encode_image_fwd(&distorted)?;
            let fwd = decoder.forward(&feature.view().insert_axis(ndarray::Axis(0)));
            let probs: Vec<f64> = fwd
                .probs
                .row(0)
                .iter()
                .map(|&p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
                .collect();
            let l_msg = message_loss(&probs, message)?;
            // Logit gradient of the (unclamped) BCE: p - m. Keeping it
            // live inside the clamp zone matters here: bits the frozen
            // decoder is confidently wrong about are exactly the ones the
            // offsets must move.
            let mut d_logits = Array2::zeros((1, message.len()));
            for (j, (&p, &m)) in fwd.probs.row(0).iter().zip(message.bits()).enumerate() {
                d_logits[(0, j)] = p - f64::from(m);
            }
            let dec_back = decoder.backward(&fwd, &d_logits.view());
            let d_feature = dec_back.d_input.index_axis_move(ndarray::Axis(0), 0);
            let d_distorted = bundle.encode_image_bwd(&ectx, &d_feature.view());
            let d_img_msg = train_vjp(&dctx, &d_distorted);

            // Reconstruction branch on the undistorted render.
            let (l_recon, d_img_recon) =
                recon_loss_with_grad(&img, &originals[v], config.lambda_ssim, perceptual)?;

            let mut d_img = RenderedImage::new(img.width(), img.height());
            for (o, (gm, gr)) in d_img
                .data_mut()
                .iter_mut()
                .zip(d_img_msg.data().iter().zip(d_img_recon.data()))
            {
                *o = config.lambda_msg * gm + config.lambda_recon * gr;
            }
            let grad_v = render_gradient(&watermarked, &caches[v], &d_img)?;
            for (acc, g) in grad_sum.iter_mut().zip(&grad_v) {
                for k in 0..SH_COEFFS {
                    acc[k] += g[k];
                }
            }

            msg_loss_sum += l_msg;
            recon_loss_sum += l_recon;
            bit_acc_sum +=
                crate::metrics::bit_accuracy(&decode_bits(&probs)?, message)?;
            psnr_sum += psnr(&img, &originals[v])?;
        }

        let batch_f = config.batch_views as f64;
        let l_off = offset_loss(&offsets);
        // d/do of the mean over the batch plus the offset penalty.
        let off_grad_scale = config.lambda_off * 2.0 / n as f64;
        let mut grads = vec![0.0f64; n * SH_COEFFS];
        for i in 0..n {
            for k in 0..SH_COEFFS {
                grads[i * SH_COEFFS + k] =
                    grad_sum[i][k] / batch_f + off_grad_scale * offsets.offsets()[i][k];
            }
        }
        adam.step(offsets.offsets_mut().as_flattened_mut(), &grads);

        logs.push(EpochLog {
            epoch,
            total_loss: config.lambda_recon * (recon_loss_sum / batch_f)
                + config.lambda_msg * (msg_loss_sum / batch_f)
                + config.lambda_off * l_off,
            msg_loss: msg_loss_sum / batch_f,
            recon_loss: recon_loss_sum / batch_f,
            offset_loss: l_off,
            bit_acc: bit_acc_sum / batch_f,
            psnr_db: psnr_sum / batch_f,
        });
    }

    // The optimizer only ever adds finite steps, but make the contract
    // explicit.
    let offsets = SHOffsetField::new(offsets.offsets().to_vec())?;
    Ok((offsets, logs))
}

/// Blind extraction from a rendered view of an asset.
pub fn extract_from_asset<B: EncoderBundle>(
    asset: &GaussianAsset,
    view: &CameraView,
    bundle: &B,
    decoder: &DecoderModel,
) -> Result<MessageBits> {
    let cache = build_weight_cache(asset, view);
    let img = render(asset, &cache)?;
    extract_from_image(&img, bundle, decoder)
}

/// Blind extraction from an already rendered (possibly distorted) image.
pub fn extract_from_image<B: EncoderBundle>(
    image: &RenderedImage,
    bundle: &B,
    decoder: &DecoderModel,
) -> Result<MessageBits> {
    let feature = bundle.encode_image(image)?;
    decode_bits(&decoder.probabilities(&feature))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{train_decoder, DecoderTrainConfig};
    use crate::encoders::ToyBundle;
    use crate::scene::make_toy_scene;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn offset_loss_closed_forms() {
        assert_eq!(offset_loss(&SHOffsetField::zeros(5)), 0.0);
        let mut one = SHOffsetField::zeros(1);
        one.offsets_mut()[0] = [1.0; SH_COEFFS];
        assert_eq!(offset_loss(&one), 48.0);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut field = SHOffsetField::zeros(7);
        for o in field.offsets_mut() {
            for v in o.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let reference: f64 = field
            .offsets()
            .iter()
            .map(|o| o.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 7.0;
        assert_relative_eq!(offset_loss(&field), reference, epsilon = 1e-12);
    }

    #[test]
    fn recon_loss_closed_forms() {
        let a = RenderedImage::filled(16, 16, [0.5; 3]);
        let (l, g) = recon_loss_with_grad(&a, &a, 0.2, &NullPerceptual).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.data().iter().all(|&v| v == 0.0));

        // Constant difference of 0.1: the L1 term is (1 - 0.2) * 0.1 and
        // the SSIM of two constants follows from the luminance term alone
        // (variances are zero).
        let b = RenderedImage::filled(16, 16, [0.6; 3]);
        let (l, _) = recon_loss_with_grad(&b, &a, 0.2, &NullPerceptual).unwrap();
        let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
        let s = ((2.0 * 0.6 * 0.5 + c1) * c2) / ((0.36 + 0.25 + c1) * c2);
        assert_relative_eq!(l, 0.2 * (1.0 - s) + 0.8 * 0.1, epsilon = 1e-9);
    }

    #[test]
    fn recon_loss_matches_reference_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = RenderedImage::new(20, 15);
        let mut b = RenderedImage::new(20, 15);
        for v in a.data_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        for v in b.data_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let l = recon_loss(&a, &b, 0.2, &NullPerceptual).unwrap();
        let l1: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.data().len() as f64;
        let s = crate::metrics::ssim(&a, &b).unwrap();
        assert_relative_eq!(l, 0.2 * (1.0 - s) + 0.8 * l1, epsilon = 1e-9);
    }

    #[test]
    fn recon_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = RenderedImage::new(14, 14);
        let mut b = RenderedImage::new(14, 14);
        for v in a.data_mut() {
            *v = rng.random_range(0.1..0.9);
        }
        for v in b.data_mut() {
            *v = rng.random_range(0.1..0.9);
        }
        let (_, grad) = recon_loss_with_grad(&a, &b, 0.2, &NullPerceptual).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for _ in 0..60 {
            let i = rng.random_range(0..a.data().len());
            // The L1 sign kink sits at a == b; keep clear of it.
            if (a.data()[i] - b.data()[i]).abs() < 1e-3 {
                continue;
            }
            let orig = a.data()[i];
            let mut p = a.clone();
            p.data_mut()[i] = orig + h;
            let up = recon_loss(&p, &b, 0.2, &NullPerceptual).unwrap();
            p.data_mut()[i] = orig - h;
            let down = recon_loss(&p, &b, 0.2, &NullPerceptual).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (grad.data()[i] - fd).abs() / grad.data()[i].abs().max(fd.abs());
            assert!(rel < 1e-3, "slot {i}: {} vs {fd}", grad.data()[i]);
            checked += 1;
        }
        assert!(checked >= 30);
    }

    fn tiny_setup() -> (crate::scene::ToyScene, ToyBundle, DecoderModel, MessageBits) {
        let scene = make_toy_scene(11, 60, 3, 32).unwrap();
        let bundle = ToyBundle::seeded(21);
        let train_cfg = DecoderTrainConfig {
            bits: 4,
            max_messages: 16,
            epochs: 100,
            seed: 3,
            ..Default::default()
        };
        let (decoder, _) = train_decoder(&bundle, &train_cfg).unwrap();
        let message = MessageBits::new(vec![1, 0, 1, 1]).unwrap();
        (scene, bundle, decoder, message)
    }

    #[test]
    fn embed_smoke_decreases_loss_and_freezes_geometry() {
        let (scene, bundle, decoder, message) = tiny_setup();
        let config = EmbedConfig { epochs: 8, batch_views: 3, seed: 5, ..Default::default() };
        let (offsets, logs) =
            embed(&scene.asset, &message, &scene.views, &bundle, &decoder, &config).unwrap();
        assert_eq!(logs.len(), 8);
        assert!(
            logs.last().unwrap().total_loss < logs.first().unwrap().total_loss,
            "loss went {} -> {}",
            logs.first().unwrap().total_loss,
            logs.last().unwrap().total_loss
        );

        let watermarked = apply_offsets(&scene.asset, &offsets).unwrap();
        // Geometry freeze, literally bit-identical.
        assert_eq!(watermarked.positions(), scene.asset.positions());
        assert_eq!(watermarked.log_scales(), scene.asset.log_scales());
        assert_eq!(watermarked.rotations(), scene.asset.rotations());
        assert_eq!(watermarked.opacity_logits(), scene.asset.opacity_logits());
        // And the offsets actually changed something.
        assert!(offset_loss(&offsets) > 0.0);
    }

    #[test]
    fn embed_without_message_term_keeps_offsets_at_zero() {
        let (scene, bundle, decoder, message) = tiny_setup();
        let config = EmbedConfig {
            lambda_msg: 0.0,
            epochs: 5,
            batch_views: 2,
            seed: 6,
            ..Default::default()
        };
        let (offsets, logs) =
            embed(&scene.asset, &message, &scene.views, &bundle, &decoder, &config).unwrap();
        // Starting at zero offsets, recon and offset gradients are both
        // exactly zero, so nothing moves and fidelity is perfect.
        assert_eq!(offset_loss(&offsets), 0.0);
        assert!(logs.last().unwrap().psnr_db >= 50.0);
    }

    #[test]
    fn embed_is_seed_reproducible() {
        let (scene, bundle, decoder, message) = tiny_setup();
        let config = EmbedConfig { epochs: 3, batch_views: 2, seed: 9, ..Default::default() };
        let (a, _) = embed(&scene.asset, &message, &scene.views, &bundle, &decoder, &config).unwrap();
        let (b, _) = embed(&scene.asset, &message, &scene.views, &bundle, &decoder, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embed_rejects_mismatches() {
        let (scene, bundle, decoder, message) = tiny_setup();
        let config = EmbedConfig { epochs: 1, ..Default::default() };
        // Wrong message length for the decoder.
        let short = MessageBits::new(vec![1, 0]).unwrap();
        assert!(matches!(
            embed(&scene.asset, &short, &scene.views, &bundle, &decoder, &config),
            Err(Error::BundleMismatch(_))
        ));
        // Decoder trained against a different bundle.
        let other = ToyBundle::seeded(99);
        assert!(matches!(
            embed(&scene.asset, &message, &scene.views, &other, &decoder, &config),
            Err(Error::BundleMismatch(_))
        ));
        // No views.
        assert!(embed(&scene.asset, &message, &[], &bundle, &decoder, &config).is_err());
    }

    #[test]
    fn extraction_is_deterministic_and_blind() {
        let (scene, bundle, decoder, _) = tiny_setup();
        let a = extract_from_asset(&scene.asset, &scene.views[0], &bundle, &decoder).unwrap();
        let b = extract_from_asset(&scene.asset, &scene.views[0], &bundle, &decoder).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), decoder.bits());
    }
}
