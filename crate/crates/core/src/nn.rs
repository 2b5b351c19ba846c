//! Small neural-network building blocks with hand-written adjoints.
//!
//! Everything here is plain f64 on ndarray containers; each backward is the
//! exact adjoint of its forward and is finite-difference tested. Feature
//! maps are laid out (channels, height, width).

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};

const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
const GELU_CUBIC: f64 = 0.044715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Affine layer `y = x W^T + b` over a batch (rows are samples).
#[derive(Debug, Clone)]
pub struct Linear {
    /// (out, in)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns (d_input, d_weight, d_bias).
    pub fn backward(
        &self,
        x: &ArrayView2<f64>,
        d_out: &ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let d_in = d_out.dot(&self.weight);
        let d_w = d_out.t().dot(x);
        let d_b = d_out.sum_axis(ndarray::Axis(0));
        (d_in, d_w, d_b)
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// 2D convolution, zero padding, square stride. Weights are (out_c, in_c,
/// k, k). Only the input adjoint is implemented; the toy encoder's weights
/// are frozen.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ndarray::Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn out_shape(&self, in_h: usize, in_w: usize) -> (usize, usize, usize) {
        let k = self.weight.shape()[2];
        let oh = (in_h + 2 * self.padding - k) / self.stride + 1;
        let ow = (in_w + 2 * self.padding - k) / self.stride + 1;
        (self.weight.shape()[0], oh, ow)
    }

    /// Valid output range for kernel column `kx`: `0 <= ox*s + kx - pad < in_w`.
    #[inline]
    fn ox_range(&self, kx: usize, in_w: usize, ow: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kx as isize - self.padding as isize;
        let lo = if off < 0 { ((-off) + s - 1) / s } else { 0 };
        let hi = ((in_w as isize - off + s - 1) / s).clamp(0, ow as isize);
        ((lo as usize).min(ow), hi as usize)
    }

    pub fn forward(&self, x: &ArrayView3<f64>) -> Array3<f64> {
        let (in_c, in_h, in_w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.weight.shape()[2];
        let (out_c, oh, ow) = self.out_shape(in_h, in_w);
        debug_assert_eq!(self.weight.shape()[1], in_c);
        let owned;
        let xs = match x.to_slice() {
            Some(s) => s,
            None => {
                owned = x.to_owned();
                owned.as_slice().unwrap()
            }
        };
        let ws = self.weight.as_slice().unwrap();
        let mut out = Array3::zeros((out_c, oh, ow));
        let os = out.as_slice_mut().unwrap();
        let s = self.stride;
        for co in 0..out_c {
            for oy in 0..oh {
                let row = &mut os[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                row.fill(self.bias[co]);
                for ci in 0..in_c {
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let in_row = &xs[(ci * in_h + iy as usize) * in_w
                            ..(ci * in_h + iy as usize + 1) * in_w];
                        let w_base = ((co * in_c + ci) * k + ky) * k;
                        for kx in 0..k {
                            let wv = ws[w_base + kx];
                            let (lo, hi) = self.ox_range(kx, in_w, ow);
                            let off = kx as isize - self.padding as isize;
                            for ox in lo..hi {
                                let ix = (ox * s) as isize + off;
                                row[ox] += wv * in_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint with respect to the input.
    pub fn backward_input(
        &self,
        in_shape: (usize, usize, usize),
        d_out: &ArrayView3<f64>,
    ) -> Array3<f64> {
        let (in_c, in_h, in_w) = in_shape;
        let k = self.weight.shape()[2];
        let (out_c, oh, ow) = self.out_shape(in_h, in_w);
        debug_assert_eq!(d_out.shape(), [out_c, oh, ow]);
        let owned;
        let gs = match d_out.to_slice() {
            Some(s) => s,
            None => {
                owned = d_out.to_owned();
                owned.as_slice().unwrap()
            }
        };
        let ws = self.weight.as_slice().unwrap();
        let mut d_in = Array3::zeros((in_c, in_h, in_w));
        let ds = d_in.as_slice_mut().unwrap();
        let s = self.stride;
        for co in 0..out_c {
            for oy in 0..oh {
                let g_row = &gs[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                for ci in 0..in_c {
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let d_row = &mut ds[(ci * in_h + iy as usize) * in_w
                            ..(ci * in_h + iy as usize + 1) * in_w];
                        let w_base = ((co * in_c + ci) * k + ky) * k;
                        for kx in 0..k {
                            let wv = ws[w_base + kx];
                            let (lo, hi) = self.ox_range(kx, in_w, ow);
                            let off = kx as isize - self.padding as isize;
                            for ox in lo..hi {
                                let ix = (ox * s) as isize + off;
                                d_row[ix as usize] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}

/// Mean over the spatial dimensions, per channel.
pub fn global_avg_pool(x: &ArrayView3<f64>) -> Array1<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let scale = 1.0 / (h * w) as f64;
    Array1::from_iter((0..c).map(|ci| x.index_axis(ndarray::Axis(0), ci).sum() * scale))
}

pub fn global_avg_pool_backward(
    in_shape: (usize, usize, usize),
    d_out: &ArrayView1<f64>,
) -> Array3<f64> {
    let (c, h, w) = in_shape;
    let scale = 1.0 / (h * w) as f64;
    let mut d_in = Array3::zeros((c, h, w));
    for ci in 0..c {
        d_in.index_axis_mut(ndarray::Axis(0), ci).fill(d_out[ci] * scale);
    }
    d_in
}

/// Bilinear taps for half-pixel-center resampling onto `out_len` samples,
/// clamped at the borders. Returns (i0, i1, w1) per output index, so the
/// sample is `(1 - w1) * src[i0] + w1 * src[i1]`.
pub fn resize_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Separable bilinear resize of a (C, H, W) map.
pub fn bilinear_resize(x: &ArrayView3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ty = resize_taps(h, out_h);
    let tx = resize_taps(w, out_w);
    let mut out = Array3::zeros((c, out_h, out_w));
    for ci in 0..c {
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let v = (1.0 - wy) * ((1.0 - wx) * x[(ci, y0, x0)] + wx * x[(ci, y0, x1)])
                    + wy * ((1.0 - wx) * x[(ci, y1, x0)] + wx * x[(ci, y1, x1)]);
                out[(ci, oy, ox)] = v;
            }
        }
    }
    out
}

/// Exact adjoint of [`bilinear_resize`].
pub fn bilinear_resize_backward(
    in_shape: (usize, usize, usize),
    d_out: &ArrayView3<f64>,
) -> Array3<f64> {
    let (c, h, w) = in_shape;
    let (out_h, out_w) = (d_out.shape()[1], d_out.shape()[2]);
    let ty = resize_taps(h, out_h);
    let tx = resize_taps(w, out_w);
    let mut d_in = Array3::zeros((c, h, w));
    for ci in 0..c {
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let g = d_out[(ci, oy, ox)];
                d_in[(ci, y0, x0)] += g * (1.0 - wy) * (1.0 - wx);
                d_in[(ci, y0, x1)] += g * (1.0 - wy) * wx;
                d_in[(ci, y1, x0)] += g * wy * (1.0 - wx);
                d_in[(ci, y1, x1)] += g * wy * wx;
            }
        }
    }
    d_in
}

/// Adam with L2 weight decay folded into the gradient (reference-framework
/// semantics).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
