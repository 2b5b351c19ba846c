//! Quantitative evaluation: bit accuracy, PSNR, SSIM (with an exact
//! adjoint for training), and a pluggable perceptual distance.

use crate::codec::MessageBits;
use crate::error::{Error, Result};
use crate::imagebuf::RenderedImage;

/// Fraction of agreeing bit positions.
pub fn bit_accuracy(a: &MessageBits, b: &MessageBits) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "bit accuracy over lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let agree = a
        .bits()
        .iter()
        .zip(b.bits())
        .filter(|(x, y)| x == y)
        .count();
    Ok(agree as f64 / a.len() as f64)
}

/// `10 log10(1 / MSE)` on [0,1] pixels; infinite for identical images.
pub fn psnr(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("psnr over differently sized images".into()));
    }
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Render a PSNR value the way reports print it.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode separable Gaussian filter of a plane.
fn blur_valid(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let win = gaussian_window();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += wk * plane[y * w + x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, wk) in win.iter().enumerate() {
                acc += wk * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Transpose of [`blur_valid`]: scatter window-level gradients back to
/// pixel space.
fn blur_valid_transpose(grad: &[f64], ow: usize, oh: usize, w: usize, h: usize) -> Vec<f64> {
    let win = gaussian_window();
    // Vertical transpose.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let g = grad[y * ow + x];
            if g == 0.0 {
                continue;
            }
            for (k, wk) in win.iter().enumerate() {
                tmp[(y + k) * ow + x] += wk * g;
            }
        }
    }
    // Horizontal transpose.
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let g = tmp[y * ow + x];
            if g == 0.0 {
                continue;
            }
            for (k, wk) in win.iter().enumerate() {
                out[y * w + x + k] += wk * g;
            }
        }
    }
    out
}

struct SsimPlanes {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    vxy: Vec<f64>,
    ow: usize,
    oh: usize,
}

fn ssim_stats(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimPlanes {
    let (mu_x, ow, oh) = blur_valid(x, w, h);
    let (mu_y, _, _) = blur_valid(y, w, h);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (vx, _, _) = blur_valid(&xx, w, h);
    let (vy, _, _) = blur_valid(&yy, w, h);
    let (vxy, _, _) = blur_valid(&xy, w, h);
    SsimPlanes { mu_x, mu_y, vx, vy, vxy, ow, oh }
}

/// Mean local SSIM over the valid window positions of one plane.
fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let p = ssim_stats(x, y, w, h);
    let n = p.ow * p.oh;
    let mut acc = 0.0;
    for i in 0..n {
        let (mx, my) = (p.mu_x[i], p.mu_y[i]);
        let sx = p.vx[i] - mx * mx;
        let sy = p.vy[i] - my * my;
        let sxy = p.vxy[i] - mx * my;
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * sxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = sx + sy + c2;
        acc += (a1 * a2) / (b1 * b2);
    }
    acc / n as f64
}

/// Mean SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1, channels averaged.
pub fn ssim(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("ssim over differently sized images".into()));
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::Invariant(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images"
        )));
    }
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    for c in 0..3 {
        total += ssim_plane(&a.channel(c), &b.channel(c), w, h);
    }
    Ok(total / 3.0)
}

/// SSIM plus its exact gradient with respect to the first image.
pub fn ssim_with_grad(a: &RenderedImage, b: &RenderedImage) -> Result<(f64, RenderedImage)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("ssim over differently sized images".into()));
    }
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::Invariant(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images"
        )));
    }
    let (w, h) = (a.width(), a.height());
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut grads = [Vec::new(), Vec::new(), Vec::new()];
    for c in 0..3 {
        let x = a.channel(c);
        let y = b.channel(c);
        let p = ssim_stats(&x, &y, w, h);
        let n = p.ow * p.oh;
        // Per-window partials of s = (A1 A2) / (B1 B2) with respect to
        // mu_x, E[x^2], and E[xy]; sigma terms expand as
        // sx = E[x^2] - mu_x^2, sxy = E[xy] - mu_x mu_y.
        let mut d_mu = vec![0.0; n];
        let mut d_vx = vec![0.0; n];
        let mut d_vxy = vec![0.0; n];
        let scale = 1.0 / (3.0 * n as f64);
        let mut acc = 0.0;
        for i in 0..n {
            let (mx, my) = (p.mu_x[i], p.mu_y[i]);
            let sx = p.vx[i] - mx * mx;
            let sy = p.vy[i] - my * my;
            let sxy = p.vxy[i] - mx * my;
            let a1 = 2.0 * mx * my + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = sx + sy + c2;
            let s = (a1 * a2) / (b1 * b2);
            acc += s;
            // ds/dA1 = A2/(B1 B2), ds/dA2 = A1/(B1 B2),
            // ds/dB1 = -s/B1, ds/dB2 = -s/B2.
            let inv_bb = 1.0 / (b1 * b2);
            // dA1/dmu_x = 2 my; dA2/dmu_x = -2 my; dB1/dmu_x = 2 mx;
            // dB2/dmu_x = -2 mx.
            d_mu[i] = scale
                * (a2 * inv_bb * 2.0 * my - a1 * inv_bb * 2.0 * my - (s / b1) * 2.0 * mx
                    + (s / b2) * 2.0 * mx);
            // dB2/dE[x^2] = 1.
            d_vx[i] = scale * (-(s / b2));
            // dA2/dE[xy] = 2.
            d_vxy[i] = scale * (a1 * inv_bb * 2.0);
        }
        total += acc / n as f64;

        // Chain through the blurs: mu_x, E[x^2], E[xy] are all valid-mode
        // blurs of x, x*x, x*y respectively.
        let g_mu = blur_valid_transpose(&d_mu, p.ow, p.oh, w, h);
        let g_vx = blur_valid_transpose(&d_vx, p.ow, p.oh, w, h);
        let g_vxy = blur_valid_transpose(&d_vxy, p.ow, p.oh, w, h);
        let mut g = vec![0.0; w * h];
        for i in 0..w * h {
            g[i] = g_mu[i] + 2.0 * x[i] * g_vx[i] + y[i] * g_vxy[i];
        }
        grads[c] = g;
    }
    let grad =
        RenderedImage::from_channels(w, h, [&grads[0], &grads[1], &grads[2]])?;
    Ok((total / 3.0, grad))
}

/// Pluggable perceptual distance; the null default contributes nothing.
pub trait PerceptualMetric: Sync {
    fn name(&self) -> &str;
    /// Distance plus gradient with respect to the first image.
    fn distance_with_grad(
        &self,
        a: &RenderedImage,
        b: &RenderedImage,
    ) -> Result<(f64, RenderedImage)>;
}

/// Disabled perceptual term: distance 0 with zero gradient.
pub struct NullPerceptual;

impl PerceptualMetric for NullPerceptual {
    fn name(&self) -> &str {
        "none"
    }

    fn distance_with_grad(
        &self,
        a: &RenderedImage,
        _b: &RenderedImage,
    ) -> Result<(f64, RenderedImage)> {
        Ok((0.0, RenderedImage::new(a.width(), a.height())))
    }
}
