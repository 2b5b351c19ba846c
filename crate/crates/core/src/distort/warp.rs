//! Resampling primitives for the geometric distortions: bilinear warps
//! with reflection padding (train path, exact adjoints) and Catmull-Rom
//! bicubic resizing (reference eval path).

use crate::imagebuf::RenderedImage;

/// Mirror an index into [0, n) (edge-repeating reflection).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Bilinear sample with reflection padding at continuous pixel coords
/// (pixel centers at integer + 0.5).
fn sample_taps(x: f64, y: f64, w: usize, h: usize) -> [(usize, usize, f64); 4] {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let wx = fx - x0;
    let wy = fy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let xi0 = reflect(x0, w);
    let xi1 = reflect(x0 + 1, w);
    let yi0 = reflect(y0, h);
    let yi1 = reflect(y0 + 1, h);
    [
        (xi0, yi0, (1.0 - wx) * (1.0 - wy)),
        (xi1, yi0, wx * (1.0 - wy)),
        (xi0, yi1, (1.0 - wx) * wy),
        (xi1, yi1, wx * wy),
    ]
}

/// Rotate about the image center by `angle` (radians, counter-clockwise in
/// pixel coordinates), bilinear with reflection padding.
pub fn rotate_bilinear(img: &RenderedImage, angle: f64) -> RenderedImage {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut out = RenderedImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 + 0.5) - cx;
            let dy = (y as f64 + 0.5) - cy;
            // Inverse mapping: rotate the output pixel back by -angle.
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            let mut px = [0.0f64; 3];
            for (xi, yi, wt) in sample_taps(sx, sy, w, h) {
                let p = img.pixel(xi, yi);
                for c in 0..3 {
                    px[c] += wt * p[c];
                }
            }
            out.set_pixel(x, y, px);
        }
    }
    out
}

/// Exact adjoint of [`rotate_bilinear`].
pub fn rotate_bilinear_vjp(upstream: &RenderedImage, angle: f64) -> RenderedImage {
    let (w, h) = (upstream.width(), upstream.height());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut grad = RenderedImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let up = upstream.pixel(x, y);
            if up == [0.0; 3] {
                continue;
            }
            let dx = (x as f64 + 0.5) - cx;
            let dy = (y as f64 + 0.5) - cy;
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            for (xi, yi, wt) in sample_taps(sx, sy, w, h) {
                let i = (yi * w + xi) * 3;
                let g = grad.data_mut();
                for c in 0..3 {
                    g[i + c] += wt * up[c];
                }
            }
        }
    }
    grad
}

/// Bilinear resize of an image (half-pixel centers, edge clamped).
pub fn resize_bilinear(img: &RenderedImage, out_w: usize, out_h: usize) -> RenderedImage {
    let chw = img.to_chw();
    let out = crate::nn::bilinear_resize(&chw.view(), out_h, out_w);
    RenderedImage::from_chw(&out)
}

/// Exact adjoint of [`resize_bilinear`].
pub fn resize_bilinear_vjp(
    upstream: &RenderedImage,
    in_w: usize,
    in_h: usize,
) -> RenderedImage {
    let chw = upstream.to_chw();
    let grad = crate::nn::bilinear_resize_backward((3, in_h, in_w), &chw.view());
    RenderedImage::from_chw(&grad)
}

/// Catmull-Rom kernel (bicubic, a = -0.5).
fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Bicubic resize (reference path; not differentiable).
pub fn resize_bicubic(img: &RenderedImage, out_w: usize, out_h: usize) -> RenderedImage {
    let (w, h) = (img.width(), img.height());
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut out = RenderedImage::new(out_w, out_h);
    for oy in 0..out_h {
        let src_y = (oy as f64 + 0.5) * sy - 0.5;
        let y0 = src_y.floor() as isize;
        for ox in 0..out_w {
            let src_x = (ox as f64 + 0.5) * sx - 0.5;
            let x0 = src_x.floor() as isize;
            let mut px = [0.0f64; 3];
            let mut wsum = 0.0;
            for j in -1..=2isize {
                let wy = catmull_rom(src_y - (y0 + j) as f64);
                if wy == 0.0 {
                    continue;
                }
                let yi = reflect(y0 + j, h);
                for i in -1..=2isize {
                    let wx = catmull_rom(src_x - (x0 + i) as f64);
                    if wx == 0.0 {
                        continue;
                    }
                    let xi = reflect(x0 + i, w);
                    let p = img.pixel(xi, yi);
                    let wt = wx * wy;
                    wsum += wt;
                    for c in 0..3 {
                        px[c] += wt * p[c];
                    }
                }
            }
            for c in 0..3 {
                px[c] /= wsum;
            }
            out.set_pixel(ox, oy, px);
        }
    }
    out
}

/// Integer center-crop rectangle keeping `keep_area` of the image.
pub fn center_crop_rect(w: usize, h: usize, keep_area: f64) -> (usize, usize, usize, usize) {
    let side = keep_area.sqrt().clamp(0.0, 1.0);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let x0 = (w - cw) / 2;
    let y0 = (h - ch) / 2;
    (x0, y0, cw, ch)
}

pub fn crop_image(img: &RenderedImage, x0: usize, y0: usize, cw: usize, ch: usize) -> RenderedImage {
    let mut out = RenderedImage::new(cw, ch);
    for y in 0..ch {
        for x in 0..cw {
            out.set_pixel(x, y, img.pixel(x0 + x, y0 + y));
        }
    }
    out
}

/// Scatter a crop-sized gradient back into the full-size frame.
pub fn crop_vjp(
    upstream: &RenderedImage,
    full_w: usize,
    full_h: usize,
    x0: usize,
    y0: usize,
) -> RenderedImage {
    let mut out = RenderedImage::new(full_w, full_h);
    for y in 0..upstream.height() {
        for x in 0..upstream.width() {
            out.set_pixel(x0 + x, y0 + y, upstream.pixel(x, y));
        }
    }
    out
}

/// Gaussian blur with reflection padding; symmetric, so it is its own
/// adjoint up to the border handling asymmetry (the eval path uses it; the
/// train path keeps the exact transpose by reusing the taps).
pub fn gaussian_blur(img: &RenderedImage, kernel: usize, sigma: f64) -> RenderedImage {
    let k = blur_kernel(kernel, sigma);
    let r = (kernel / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let mut tmp = RenderedImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0f64; 3];
            for (j, kv) in k.iter().enumerate() {
                let xi = reflect(x as isize + j as isize - r, w);
                let p = img.pixel(xi, y);
                for c in 0..3 {
                    px[c] += kv * p[c];
                }
            }
            tmp.set_pixel(x, y, px);
        }
    }
    let mut out = RenderedImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0f64; 3];
            for (j, kv) in k.iter().enumerate() {
                let yi = reflect(y as isize + j as isize - r, h);
                let p = tmp.pixel(x, yi);
                for c in 0..3 {
                    px[c] += kv * p[c];
                }
            }
            out.set_pixel(x, y, px);
        }
    }
    out
}

/// Exact adjoint of [`gaussian_blur`] (transpose of the reflect-padded
/// correlation in each direction).
pub fn gaussian_blur_vjp(upstream: &RenderedImage, kernel: usize, sigma: f64) -> RenderedImage {
    let k = blur_kernel(kernel, sigma);
    let r = (kernel / 2) as isize;
    let (w, h) = (upstream.width(), upstream.height());
    // Transpose of the vertical pass.
    let mut tmp = RenderedImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let up = upstream.pixel(x, y);
            for (j, kv) in k.iter().enumerate() {
                let yi = reflect(y as isize + j as isize - r, h);
                let i = (yi * w + x) * 3;
                let g = tmp.data_mut();
                for c in 0..3 {
                    g[i + c] += kv * up[c];
                }
            }
        }
    }
    // Transpose of the horizontal pass.
    let mut out = RenderedImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let up = tmp.pixel(x, y);
            for (j, kv) in k.iter().enumerate() {
                let xi = reflect(x as isize + j as isize - r, w);
                let i = (y * w + xi) * 3;
                let g = out.data_mut();
                for c in 0..3 {
                    g[i + c] += kv * up[c];
                }
            }
        }
    }
    out
}

fn blur_kernel(kernel: usize, sigma: f64) -> Vec<f64> {
    let r = (kernel / 2) as f64;
    let mut k: Vec<f64> = (0..kernel)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}
