//! Differentiable JPEG surrogate and the real-codec reference path.
//!
//! The surrogate follows the usual differentiable-JPEG construction: full
//! YCbCr conversion, 8x8 orthonormal block DCT, quality-scaled Annex-K
//! quantization with a smoothed rounding surrogate `round(x) + (x -
//! round(x))^3`, then the inverse chain. No chroma subsampling; fidelity
//! against a real codec is validated by test rather than assumed.

use crate::error::{Error, Result};
use crate::imagebuf::RenderedImage;

const BLOCK: usize = 8;

/// Annex-K base luminance table, row-major.
const LUMA_Q: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Annex-K base chrominance table.
const CHROMA_Q: [f64; 64] = [
    17.0, 18.0, 24.0, 47.0, 99.0, 99.0, 99.0, 99.0, //
    18.0, 21.0, 26.0, 66.0, 99.0, 99.0, 99.0, 99.0, //
    24.0, 26.0, 56.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    47.0, 66.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, //
    99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0,
];

/// libjpeg quality scaling of a base table.
fn scaled_table(base: &[f64; 64], quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut out = [0.0; 64];
    for (o, b) in out.iter_mut().zip(base) {
        *o = ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    out
}

/// Orthonormal DCT-II basis matrix, D[u][x].
fn dct_matrix() -> [[f64; BLOCK]; BLOCK] {
    let mut d = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (u, row) in d.iter_mut().enumerate() {
        let c = if u == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = c * ((2.0 * x as f64 + 1.0) * u as f64 * std::f64::consts::PI / (2.0 * n)).cos();
        }
    }
    d
}

/// Smoothed rounding surrogate: `round(x) + (x - round(x))^3`.
#[inline]
fn smooth_round(x: f64) -> f64 {
    let r = x.round();
    let d = x - r;
    r + d * d * d
}

/// Its derivative `3 (x - round(x))^2`, bounded by 0.75.
#[inline]
fn smooth_round_grad(x: f64) -> f64 {
    let d = x - x.round();
    3.0 * d * d
}

/// RGB ([0,1]) to full-range YCbCr in JPEG convention, still [0,1]-scaled
/// with the chroma channels centered at 0.5.
#[inline]
fn rgb_to_ycbcr(p: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = p;
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168736 * r - 0.331264 * g + 0.5 * b + 0.5,
        0.5 * r - 0.418688 * g - 0.081312 * b + 0.5,
    ]
}

#[inline]
fn ycbcr_to_rgb(p: [f64; 3]) -> [f64; 3] {
    let [y, cb, cr] = [p[0], p[1] - 0.5, p[2] - 0.5];
    [
        y + 1.402 * cr,
        y - 0.344136 * cb - 0.714136 * cr,
        y + 1.772 * cb,
    ]
}

/// Per-pixel context retained for the adjoint.
pub struct JpegCtx {
    width: usize,
    height: usize,
    quality: u8,
    /// d(smooth_round)/dx at every DCT coefficient, per channel plane.
    round_grads: [Vec<f64>; 3],
    /// Whether the final clamp was inactive, per output value.
    clamp_active: Vec<bool>,
}

/// Padded dimension (next multiple of 8).
fn padded(n: usize) -> usize {
    n.div_ceil(BLOCK) * BLOCK
}

/// Forward DCT of one padded plane, in place per 8x8 block.
fn block_dct(plane: &mut [f64], w: usize, h: usize, d: &[[f64; BLOCK]; BLOCK], inverse: bool) {
    let mut buf = [[0.0f64; BLOCK]; BLOCK];
    let mut tmp = [[0.0f64; BLOCK]; BLOCK];
    for by in (0..h).step_by(BLOCK) {
        for bx in (0..w).step_by(BLOCK) {
            for i in 0..BLOCK {
                for j in 0..BLOCK {
                    buf[i][j] = plane[(by + i) * w + bx + j];
                }
            }
            // F = D X D^T (forward) or X = D^T F D (inverse).
            for i in 0..BLOCK {
                for j in 0..BLOCK {
                    let mut acc = 0.0;
                    for k in 0..BLOCK {
                        acc += if inverse { d[k][i] * buf[k][j] } else { d[i][k] * buf[k][j] };
                    }
                    tmp[i][j] = acc;
                }
            }
            for i in 0..BLOCK {
                for j in 0..BLOCK {
                    let mut acc = 0.0;
                    for k in 0..BLOCK {
                        acc += if inverse { tmp[i][k] * d[k][j] } else { tmp[i][k] * d[j][k] };
                    }
                    plane[(by + i) * w + bx + j] = acc;
                }
            }
        }
    }
}

/// Reflect-pad a channel plane to block-aligned dimensions.
fn pad_plane(img: &RenderedImage, c: usize, pw: usize, ph: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0.0; pw * ph];
    for y in 0..ph {
        let sy = y.min(h - 1); // edge clamp padding
        for x in 0..pw {
            let sx = x.min(w - 1);
            out[y * pw + x] = img.pixel(sx, sy)[c];
        }
    }
    out
}

/// Differentiable JPEG round trip at the given quality.
pub fn jpeg_surrogate(img: &RenderedImage, quality: u8) -> (RenderedImage, JpegCtx) {
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (padded(w), padded(h));
    let d = dct_matrix();
    let luma = scaled_table(&LUMA_Q, quality);
    let chroma = scaled_table(&CHROMA_Q, quality);

    // YCbCr planes scaled to the codec's [-128, 127] range.
    let mut planes: [Vec<f64>; 3] = [vec![], vec![], vec![]];
    {
        let mut ycbcr = img.clone();
        for y in 0..h {
            for x in 0..w {
                ycbcr.set_pixel(x, y, rgb_to_ycbcr(img.pixel(x, y)));
            }
        }
        for (c, plane) in planes.iter_mut().enumerate() {
            *plane = pad_plane(&ycbcr, c, pw, ph);
            for v in plane.iter_mut() {
                *v = *v * 255.0 - 128.0;
            }
        }
    }

    let mut round_grads: [Vec<f64>; 3] = [vec![], vec![], vec![]];
    for (c, plane) in planes.iter_mut().enumerate() {
        let table = if c == 0 { &luma } else { &chroma };
        block_dct(plane, pw, ph, &d, false);
        let mut grads = vec![0.0; pw * ph];
        for by in (0..ph).step_by(BLOCK) {
            for bx in (0..pw).step_by(BLOCK) {
                for i in 0..BLOCK {
                    for j in 0..BLOCK {
                        let idx = (by + i) * pw + bx + j;
                        let q = table[i * BLOCK + j];
                        let scaled = plane[idx] / q;
                        grads[idx] = smooth_round_grad(scaled);
                        plane[idx] = smooth_round(scaled) * q;
                    }
                }
            }
        }
        block_dct(plane, pw, ph, &d, true);
        round_grads[c] = grads;
    }

    // Back to RGB with the final clamp.
    let mut out = RenderedImage::new(w, h);
    let mut clamp_active = vec![false; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let ycbcr = [
                (planes[0][y * pw + x] + 128.0) / 255.0,
                (planes[1][y * pw + x] + 128.0) / 255.0,
                (planes[2][y * pw + x] + 128.0) / 255.0,
            ];
            let rgb = ycbcr_to_rgb(ycbcr);
            let mut px = [0.0; 3];
            for c in 0..3 {
                clamp_active[(y * w + x) * 3 + c] = !(0.0..1.0).contains(&rgb[c]);
                px[c] = rgb[c].clamp(0.0, 1.0);
            }
            out.set_pixel(x, y, px);
        }
    }
    (out, JpegCtx { width: w, height: h, quality, round_grads, clamp_active })
}

/// Exact adjoint of [`jpeg_surrogate`] at the stored linearization point.
pub fn jpeg_surrogate_vjp(ctx: &JpegCtx, upstream: &RenderedImage) -> RenderedImage {
    let (w, h) = (ctx.width, ctx.height);
    let (pw, ph) = (padded(w), padded(h));
    let d = dct_matrix();

    // Clamp mask, then the transpose of YCbCr->RGB, into padded planes.
    let mut planes: [Vec<f64>; 3] = [
        vec![0.0; pw * ph],
        vec![0.0; pw * ph],
        vec![0.0; pw * ph],
    ];
    for y in 0..h {
        for x in 0..w {
            let mut up = upstream.pixel(x, y);
            for c in 0..3 {
                if ctx.clamp_active[(y * w + x) * 3 + c] {
                    up[c] = 0.0;
                }
            }
            // Transpose of ycbcr_to_rgb (linear part).
            let dy = up[0] + up[1] + up[2];
            let dcb = -0.344136 * up[1] + 1.772 * up[2];
            let dcr = 1.402 * up[0] - 0.714136 * up[1];
            // The x255 input scale and /255 output scale cancel, so the
            // planes carry the raw YCbCr-space gradient.
            planes[0][y * pw + x] = dy;
            planes[1][y * pw + x] = dcb;
            planes[2][y * pw + x] = dcr;
        }
    }

    for (c, plane) in planes.iter_mut().enumerate() {
        // Adjoint of IDCT is the forward DCT (orthonormal basis).
        block_dct(plane, pw, ph, &d, false);
        for by in (0..ph).step_by(BLOCK) {
            for bx in (0..pw).step_by(BLOCK) {
                for i in 0..BLOCK {
                    for j in 0..BLOCK {
                        let idx = (by + i) * pw + bx + j;
                        // d/dF of q * smooth_round(F / q) is the rounding
                        // derivative alone; q cancels.
                        plane[idx] *= ctx.round_grads[c][idx];
                    }
                }
            }
        }
        block_dct(plane, pw, ph, &d, true);
    }

    // Transpose of the edge-clamp padding: gradient that landed on padded
    // positions belongs to the edge pixels the forward pass copied from.
    let mut folded: [Vec<f64>; 3] = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
    for (c, plane) in planes.iter().enumerate() {
        for y in 0..ph {
            let sy = y.min(h - 1);
            for x in 0..pw {
                let sx = x.min(w - 1);
                folded[c][sy * w + sx] += plane[y * pw + x];
            }
        }
    }

    let mut grad = RenderedImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // Transpose of rgb_to_ycbcr; the 255/255 scale pair cancels.
            let dy = folded[0][y * w + x];
            let dcb = folded[1][y * w + x];
            let dcr = folded[2][y * w + x];
            grad.set_pixel(x, y, [
                0.299 * dy - 0.168736 * dcb + 0.5 * dcr,
                0.587 * dy - 0.331264 * dcb - 0.418688 * dcr,
                0.114 * dy + 0.5 * dcb - 0.081312 * dcr,
            ]);
        }
    }
    grad
}

/// Real JPEG encode/decode round trip through the codec (evaluation path).
pub fn jpeg_real(img: &RenderedImage, quality: u8) -> Result<RenderedImage> {
    let rgb8 = img.to_rgb8();
    let mut bytes: Vec<u8> = Vec::new();
    {
        let mut cursor = std::io::Cursor::new(&mut bytes);
        let encoder =
            image::codecs::jpeg::JpegEncoder::new_with_quality(&mut cursor, quality.clamp(1, 100));
        rgb8.write_with_encoder(encoder)
            .map_err(|e| Error::ImageCodec(format!("jpeg encode: {e}")))?;
    }
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .map_err(|e| Error::ImageCodec(format!("jpeg decode: {e}")))?
        .to_rgb8();
    Ok(RenderedImage::from_rgb8(&decoded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dct_matrix_is_orthonormal() {
        let d = dct_matrix();
        for i in 0..BLOCK {
            for j in 0..BLOCK {
                let dot: f64 = (0..BLOCK).map(|k| d[i][k] * d[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quality_scaling_matches_libjpeg_formula() {
        let t90 = scaled_table(&LUMA_Q, 90);
        // q=90: scale = 20, entry (0,0): floor((16*20+50)/100) = 3.
        assert_eq!(t90[0], 3.0);
        let t10 = scaled_table(&LUMA_Q, 10);
        // q=10: scale = 500, entry (0,0): floor((16*500+50)/100) = 80.
        assert_eq!(t10[0], 80.0);
    }

    #[test]
    fn smooth_round_properties() {
        assert_eq!(smooth_round(2.0), 2.0);
        assert!((smooth_round(1.3) - (1.0 + 0.3f64.powi(3))).abs() < 1e-12);
        for x in [-3.2f64, -0.4, 0.0, 0.49, 1.5, 7.77] {
            assert!(smooth_round_grad(x) >= 0.0);
            assert!(smooth_round_grad(x) <= 0.75 + 1e-12);
            assert!((smooth_round(x) - x).abs() <= 0.5);
        }
    }

    /// Directional finite-difference check of the adjoint:
    /// `<u, (F(x+hv) - F(x-hv)) / 2h>` must match `<J^T u, v>`. The
    /// surrogate is piecewise smooth; with a fixed seed no DCT coefficient
    /// sits within h of a rounding discontinuity.
    #[test]
    fn surrogate_adjoint_matches_directional_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut img = RenderedImage::new(20, 12);
        for v in img.data_mut() {
            *v = rng.random_range(0.05..0.95);
        }
        let (_, ctx) = jpeg_surrogate(&img, 50);
        let mut u = RenderedImage::new(20, 12);
        let mut v = RenderedImage::new(20, 12);
        for x in u.data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        for x in v.data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let jt_u = jpeg_surrogate_vjp(&ctx, &u);
        let rhs: f64 = jt_u.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();

        let h = 1e-6;
        let shifted = |sign: f64| {
            let mut p = img.clone();
            for (pv, dv) in p.data_mut().iter_mut().zip(v.data()) {
                *pv += sign * h * dv;
            }
            jpeg_surrogate(&p, 50).0
        };
        let plus = shifted(1.0);
        let minus = shifted(-1.0);
        let lhs: f64 = u
            .data()
            .iter()
            .zip(plus.data().iter().zip(minus.data()))
            .map(|(uu, (a, b))| uu * (a - b) / (2.0 * h))
            .sum();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        assert!(rel < 1e-5, "directional fd {lhs} vs adjoint {rhs}, rel {rel}");
    }

    #[test]
    fn identity_quality_behavior() {
        // At quality 100 most quant steps are 1 and the surrogate is close
        // to lossless.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut img = RenderedImage::new(16, 16);
        for v in img.data_mut() {
            *v = rng.random_range(0.2..0.8);
        }
        let (out, _) = jpeg_surrogate(&img, 100);
        let p = psnr(&img, &out).unwrap();
        assert!(p > 40.0, "quality-100 surrogate PSNR {p}");
    }

    #[test]
    fn real_codec_round_trip_runs() {
        let img = RenderedImage::filled(24, 24, [0.3, 0.5, 0.7]);
        let out = jpeg_real(&img, 90).unwrap();
        assert_eq!(out.width(), 24);
        let p = psnr(&img, &out).unwrap();
        assert!(p > 25.0, "flat image through real codec PSNR {p}");
    }
}
