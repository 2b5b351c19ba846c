//! Degree-3 real spherical harmonics, matching the de-facto 3DGS kernel
//! convention (including its sign phases), so external assets render with
//! the colors their authors intended.

use crate::asset::{SH_COEFFS, SH_PER_CHANNEL};

pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

/// Evaluate the 16 basis functions at a unit direction.
pub fn sh_basis(dir: [f64; 3]) -> [f64; SH_PER_CHANNEL] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Coefficient slot of channel `c`, basis index `l` in the flat 48-vector
/// (f_dc channel-major, f_rest coefficient-major within channel).
#[inline]
pub fn coeff_slot(c: usize, l: usize) -> usize {
    if l == 0 {
        c
    } else {
        3 + c * (SH_PER_CHANNEL - 1) + (l - 1)
    }
}

/// RGB before the non-negativity clamp: `sum_l coeff * Y_l + 0.5`.
pub fn color_pre_clamp(coeffs: &[f64; SH_COEFFS], basis: &[f64; SH_PER_CHANNEL]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (c, v) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (l, b) in basis.iter().enumerate() {
            acc += coeffs[coeff_slot(c, l)] * b;
        }
        *v = acc + 0.5;
    }
    out
}

/// View-dependent color `max(0, sum coeff * Y + 0.5)` per channel.
pub fn sh_to_color(coeffs: &[f64; SH_COEFFS], dir: [f64; 3]) -> [f64; 3] {
    let pre = color_pre_clamp(coeffs, &sh_basis(dir));
    [pre[0].max(0.0), pre[1].max(0.0), pre[2].max(0.0)]
}
