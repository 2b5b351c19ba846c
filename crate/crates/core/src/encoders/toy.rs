//! Self-aligned toy encoder pair.
//!
//! The image encoder collapses the (resized) input to its column-mean
//! color profile, standardizes the profile per image, and pools a frozen,
//! seeded per-column conv stack over it; the text encoder is *defined* as
//! the image encoder applied to a deterministic barcode rendering of the
//! token sequence, so text and image features share one space by
//! construction. The per-image standardization and the column-independent
//! (1x1) conv stages mean features measure the profile's value statistics
//! rather than absolute levels or local contrast, which is what rendered
//! views and stripe barcodes actually have in common; that keeps the
//! frozen decoder's decision boundaries within reach of the embedding
//! optimization instead of stranded off-manifold. This exercises the
//! decoupled train-on-text / embed-through-images pipeline with zero
//! downloaded weights; it does not model CLIP's cross-modal
//! generalization.

use super::{EncoderBundle, ImageEncodeCtx, FEATURE_DIM};
use crate::codec::{TokenSequence, CONTEXT_LEN};
use crate::error::{Error, Result};
use crate::imagebuf::RenderedImage;
use crate::nn::{
    bilinear_resize, bilinear_resize_backward, gelu, gelu_grad, global_avg_pool,
    global_avg_pool_backward, Conv2d, Linear,
};
use ndarray::{Array1, Array2, Array3, Array4, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Side length of the resized encoder input.
const INPUT_SIZE: usize = 128;
/// RGB profile channels.
const INPUT_CHANNELS: usize = 3;
const C1: usize = 32;
const C2: usize = 64;
const C3: usize = 96;
const GAIN: f64 = 1.0;
/// Variance floor in the per-image profile standardization.
const STD_EPS: f64 = 1e-6;

/// Per-channel salts for the token-to-gray hash.
const GRAY_SALTS: [u32; 3] = [0x0000_0000, 0x9e37_79b9, 0x3c6e_f372];

/// Bijective hash of a token id into a gray level in [0.05, 0.95].
///
/// Neighboring token ids land far apart, so flipping one message bit
/// moves its stripe by an O(1) fraction of the dynamic range rather than
/// the O(1/2L) the raw token value would give. Absolute levels are
/// irrelevant downstream (profiles are standardized per image), so the
/// full range buys maximal value resolution between tokens.
fn token_gray(channel: usize, token: u32) -> f64 {
    let h = (token ^ GRAY_SALTS[channel]).wrapping_mul(2654435761);
    0.05 + 0.9 * (f64::from(h >> 8) / f64::from(1u32 << 24))
}

pub struct ToyBundle {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    head: Linear,
    id: String,
    /// Optional L2 normalization of output features.
    pub normalize: bool,
}

pub struct ToyCtx {
    in_w: usize,
    in_h: usize,
    /// Raw (pre-standardization) column profile, (3, 1, INPUT_SIZE).
    profile_raw: Array3<f64>,
    /// Per-channel profile mean and sqrt(var + eps).
    prof_mean: [f64; 3],
    prof_scale: [f64; 3],
    /// Profiles are (channels, 1, INPUT_SIZE) maps.
    z1: Array3<f64>,
    z2: Array3<f64>,
    z3: Array3<f64>,
    pooled: Array1<f64>,
    feature_raw: Array1<f64>,
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    let fan_in = shape.1 * shape.2 * shape.3;
    let a = GAIN * (3.0 / fan_in as f64).sqrt();
    Array4::from_shape_fn(shape, |_| rng.random_range(-a..a))
}

impl ToyBundle {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // 1x1 kernels: a per-column value network. Avoiding spatial
        // differencing keeps smooth render profiles and oscillatory
        // barcode profiles in one feature regime.
        let conv = |rng: &mut ChaCha8Rng, co: usize, ci: usize| Conv2d {
            weight: uniform_fan_in(rng, (co, ci, 1, 1)),
            bias: Array1::from_shape_fn(co, |_| rng.random_range(-0.3..0.3)),
            stride: 1,
            padding: 0,
        };
        let conv1 = conv(&mut rng, C1, INPUT_CHANNELS);
        let conv2 = conv(&mut rng, C2, C1);
        let conv3 = conv(&mut rng, C3, C2);
        let a = (3.0 / C3 as f64).sqrt();
        let head = Linear {
            weight: Array2::from_shape_fn((FEATURE_DIM, C3), |_| rng.random_range(-a..a)),
            bias: Array1::from_shape_fn(FEATURE_DIM, |_| rng.random_range(-0.2..0.2)),
        };
        Self { conv1, conv2, conv3, head, id: format!("toy-v3-s{seed}"), normalize: false }
    }

    /// Draw the 77 tokens as vertical stripes at the encoder input
    /// resolution; column colors are area-weighted averages of the hashed
    /// per-token stripe colors.
    pub fn barcode_render(&self, tokens: &TokenSequence) -> RenderedImage {
        let size = INPUT_SIZE;
        let stripes_per_px = CONTEXT_LEN as f64 / size as f64;
        let mut img = RenderedImage::new(size, size);
        let mut row = vec![[0.0f64; 3]; size];
        for (x, px) in row.iter_mut().enumerate() {
            let lo = x as f64 * stripes_per_px;
            let hi = (x + 1) as f64 * stripes_per_px;
            let mut acc = [0.0f64; 3];
            let mut j = lo.floor() as usize;
            let mut cursor = lo;
            while cursor < hi - 1e-12 && j < CONTEXT_LEN {
                let seg_end = ((j + 1) as f64).min(hi);
                let t = tokens.tokens()[j];
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += token_gray(c, t) * (seg_end - cursor);
                }
                cursor = seg_end;
                j += 1;
            }
            for c in 0..3 {
                px[c] = acc[c] / (hi - lo);
            }
        }
        for y in 0..size {
            for x in 0..size {
                img.set_pixel(x, y, row[x]);
            }
        }
        img
    }

    fn forward(&self, image: &RenderedImage) -> Result<ToyCtx> {
        if !image.is_finite() {
            return Err(Error::Invariant("encode_image input has non-finite pixels".into()));
        }
        let (w, h) = (image.width(), image.height());
        let rgb = image.to_chw();
        let rgb = bilinear_resize(&rgb.view(), INPUT_SIZE, INPUT_SIZE);

        // Column-mean color profile as a (channels, 1, width) map so the
        // conv helpers apply unchanged.
        let mut profile_raw = Array3::zeros((INPUT_CHANNELS, 1, INPUT_SIZE));
        let inv_h = 1.0 / INPUT_SIZE as f64;
        for c in 0..3 {
            for x in 0..INPUT_SIZE {
                let mut acc = 0.0;
                for y in 0..INPUT_SIZE {
                    acc += rgb[(c, y, x)];
                }
                profile_raw[(c, 0, x)] = acc * inv_h;
            }
        }

        // Per-image, per-channel standardization.
        let mut profile = profile_raw.clone();
        let mut prof_mean = [0.0f64; 3];
        let mut prof_scale = [0.0f64; 3];
        let inv_n = 1.0 / INPUT_SIZE as f64;
        for c in 0..3 {
            let mean: f64 = (0..INPUT_SIZE).map(|x| profile_raw[(c, 0, x)]).sum::<f64>() * inv_n;
            let var: f64 = (0..INPUT_SIZE)
                .map(|x| {
                    let d = profile_raw[(c, 0, x)] - mean;
                    d * d
                })
                .sum::<f64>()
                * inv_n;
            let scale = (var + STD_EPS).sqrt();
            prof_mean[c] = mean;
            prof_scale[c] = scale;
            for x in 0..INPUT_SIZE {
                profile[(c, 0, x)] = (profile_raw[(c, 0, x)] - mean) / scale;
            }
        }

        let z1 = self.conv1.forward(&profile.view());
        let a1 = z1.mapv(gelu);
        let z2 = self.conv2.forward(&a1.view());
        let a2 = z2.mapv(gelu);
        let z3 = self.conv3.forward(&a2.view());
        let a3 = z3.mapv(gelu);
        let pooled = global_avg_pool(&a3.view());
        let feature_raw = self
            .head
            .forward(&pooled.view().insert_axis(ndarray::Axis(0)))
            .index_axis_move(ndarray::Axis(0), 0);
        Ok(ToyCtx { in_w: w, in_h: h, profile_raw, prof_mean, prof_scale, z1, z2, z3, pooled, feature_raw })
    }

    fn feature_of(&self, ctx: &ToyCtx) -> Array1<f64> {
        if self.normalize {
            let n = ctx.feature_raw.dot(&ctx.feature_raw).sqrt().max(1e-12);
            &ctx.feature_raw / n
        } else {
            ctx.feature_raw.clone()
        }
    }
}

impl EncoderBundle for ToyBundle {
    fn identifier(&self) -> &str {
        &self.id
    }

    fn encode_text(&self, tokens: &TokenSequence) -> Result<Array1<f64>> {
        self.encode_image(&self.barcode_render(tokens))
    }

    fn encode_image_fwd(&self, image: &RenderedImage) -> Result<(Array1<f64>, ImageEncodeCtx)> {
        let ctx = self.forward(image)?;
        let feature = self.feature_of(&ctx);
        Ok((feature, ImageEncodeCtx::Toy(ctx)))
    }

    fn encode_image_bwd(&self, ctx: &ImageEncodeCtx, upstream: &ArrayView1<f64>) -> RenderedImage {
        #[allow(irrefutable_let_patterns)]
        let ImageEncodeCtx::Toy(ctx) = ctx else {
            panic!("toy bundle given a foreign encode context");
        };
        // Backward through the optional normalization y = f / ||f||:
        // dL/df = (dL/dy - y (y . dL/dy)) / ||f||.
        let d_feature = if self.normalize {
            let n = ctx.feature_raw.dot(&ctx.feature_raw).sqrt().max(1e-12);
            let y = &ctx.feature_raw / n;
            let dot = y.dot(upstream);
            (upstream - &(y * dot)) / n
        } else {
            upstream.to_owned()
        };

        let d_feature = d_feature.insert_axis(ndarray::Axis(0));
        let x_pooled = ctx.pooled.view().insert_axis(ndarray::Axis(0));
        let (d_pooled, _, _) = self.head.backward(&x_pooled, &d_feature.view());
        let d_pooled = d_pooled.index_axis_move(ndarray::Axis(0), 0);

        let dim3 = |a: &Array3<f64>| (a.shape()[0], a.shape()[1], a.shape()[2]);
        let mut d_a3 = global_avg_pool_backward(dim3(&ctx.z3), &d_pooled.view());
        d_a3.zip_mut_with(&ctx.z3, |g, &z| *g *= gelu_grad(z));
        let mut d_a2 = self.conv3.backward_input(dim3(&ctx.z2), &d_a3.view());
        d_a2.zip_mut_with(&ctx.z2, |g, &z| *g *= gelu_grad(z));
        let mut d_a1 = self.conv2.backward_input(dim3(&ctx.z1), &d_a2.view());
        d_a1.zip_mut_with(&ctx.z1, |g, &z| *g *= gelu_grad(z));
        let d_profile = self
            .conv1
            .backward_input((INPUT_CHANNELS, 1, INPUT_SIZE), &d_a1.view());

        // Backward through the per-image standardization
        // x~ = (x - m) / s with s = sqrt(var + eps):
        // g_j = (u_j - mean(u)) / s - <u, x - m> (x_j - m) / (n s^3).
        let n = INPUT_SIZE as f64;
        let mut d_raw = Array3::zeros((3usize, 1, INPUT_SIZE));
        for c in 0..3 {
            let (m, s) = (ctx.prof_mean[c], ctx.prof_scale[c]);
            let u_mean: f64 =
                (0..INPUT_SIZE).map(|x| d_profile[(c, 0, x)]).sum::<f64>() / n;
            let u_dot_centered: f64 = (0..INPUT_SIZE)
                .map(|x| d_profile[(c, 0, x)] * (ctx.profile_raw[(c, 0, x)] - m))
                .sum();
            for x in 0..INPUT_SIZE {
                let centered = ctx.profile_raw[(c, 0, x)] - m;
                d_raw[(c, 0, x)] = (d_profile[(c, 0, x)] - u_mean) / s
                    - u_dot_centered * centered / (n * s * s * s);
            }
        }

        // Transpose of the column mean: spread over rows.
        let inv_h = 1.0 / INPUT_SIZE as f64;
        let mut d_rgb = Array3::zeros((3, INPUT_SIZE, INPUT_SIZE));
        for c in 0..3 {
            for x in 0..INPUT_SIZE {
                let g = d_raw[(c, 0, x)] * inv_h;
                for y in 0..INPUT_SIZE {
                    d_rgb[(c, y, x)] = g;
                }
            }
        }
        let d_input = bilinear_resize_backward((3, ctx.in_h, ctx.in_w), &d_rgb.view());
        RenderedImage::from_chw(&d_input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{tokenize, MessageBits};
    use crate::nn::testutil::rel_err;
    use rand::{Rng, SeedableRng};

    #[test]
    fn text_encoding_is_deterministic_and_bit_sensitive() {
        let bundle = ToyBundle::seeded(7);
        let a = MessageBits::new(vec![0, 1, 1, 0, 1, 0, 0, 1]).unwrap();
        let fa = bundle.encode_text(&tokenize(&a)).unwrap();
        let fa2 = bundle.encode_text(&tokenize(&a)).unwrap();
        assert_eq!(fa, fa2);

        let mut flipped = a.bits().to_vec();
        flipped[3] = 1;
        let b = MessageBits::new(flipped).unwrap();
        let fb = bundle.encode_text(&tokenize(&b)).unwrap();
        assert_ne!(fa, fb);
    }

    #[test]
    fn text_equals_image_of_barcode_exactly() {
        let bundle = ToyBundle::seeded(3);
        let m = MessageBits::new(vec![1, 0, 0, 1]).unwrap();
        let tokens = tokenize(&m);
        let via_text = bundle.encode_text(&tokens).unwrap();
        let via_image = bundle.encode_image(&bundle.barcode_render(&tokens)).unwrap();
        assert_eq!(via_text, via_image);
    }

    #[test]
    fn feature_dim_is_512_and_finite() {
        let bundle = ToyBundle::seeded(0);
        let img = RenderedImage::filled(40, 30, [0.3, 0.6, 0.9]);
        let f = bundle.encode_image(&img).unwrap();
        assert_eq!(f.len(), FEATURE_DIM);
        assert!(f.iter().all(|v| v.is_finite()));
        // Constant image encodes deterministically.
        assert_eq!(f, bundle.encode_image(&img).unwrap());
    }

    #[test]
    fn rejects_non_finite_pixels() {
        let bundle = ToyBundle::seeded(0);
        let mut img = RenderedImage::new(16, 16);
        img.data_mut()[5] = f64::NAN;
        assert!(bundle.encode_image(&img).is_err());
    }

    #[test]
    fn image_adjoint_matches_finite_differences() {
        let bundle = ToyBundle::seeded(11);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut img = RenderedImage::new(16, 16);
        for v in img.data_mut() {
            *v = rng.random_range(0.1..0.9);
        }
        let upstream = Array1::from_shape_fn(FEATURE_DIM, |_| rng.random_range(-1.0..1.0));
        let (_, ctx) = bundle.encode_image_fwd(&img).unwrap();
        let d_img = bundle.encode_image_bwd(&ctx, &upstream.view());

        let loss = |img: &RenderedImage| -> f64 {
            bundle.encode_image(img).unwrap().dot(&upstream)
        };
        let h = 1e-5;
        let mut checked = 0;
        for _ in 0..250 {
            let i = rng.random_range(0..img.data().len());
            if d_img.data()[i].abs() < 1e-9 {
                continue;
            }
            let orig = img.data()[i];
            let mut p = img.clone();
            p.data_mut()[i] = orig + h;
            let up = loss(&p);
            p.data_mut()[i] = orig - h;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = rel_err(d_img.data()[i], fd);
            assert!(rel < 1e-3, "pixel slot {i}: {} vs {} rel {rel}", d_img.data()[i], fd);
            checked += 1;
        }
        assert!(checked >= 100, "only {checked} coordinates checked");
    }

    #[test]
    fn normalized_features_have_unit_norm() {
        let mut bundle = ToyBundle::seeded(5);
        bundle.normalize = true;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut img = RenderedImage::new(12, 12);
        for v in img.data_mut() {
            *v = rng.random_range(0.2..0.8);
        }
        let f = bundle.encode_image(&img).unwrap();
        assert!((f.dot(&f).sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn barcode_is_deterministic_and_uses_hashed_token_colors() {
        let bundle = ToyBundle::seeded(0);
        let m = MessageBits::new(vec![1; 8]).unwrap();
        let t = tokenize(&m);
        let img = bundle.barcode_render(&t);
        assert_eq!(img, bundle.barcode_render(&t));
        // First column is dominated by the start token's hashed color.
        let want = token_gray(0, crate::codec::TOKEN_START);
        assert!((img.pixel(0, 0)[0] - want).abs() < 0.1);
        // Padding columns at the right edge carry the hash of token 0.
        let pad = token_gray(1, 0);
        assert!((img.pixel(INPUT_SIZE - 1, 0)[1] - pad).abs() < 1e-9);
        // Bit flips move stripe colors by a large fraction of the range.
        let m2 = {
            let mut b = m.bits().to_vec();
            b[0] = 0;
            MessageBits::new(b).unwrap()
        };
        let img2 = bundle.barcode_render(&tokenize(&m2));
        let max_diff = img
            .data()
            .iter()
            .zip(img2.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 0.2, "hashed stripes should differ strongly, got {max_diff}");
    }
}
