//! Compression-like degradation: 8×8 block DCT with quality-scaled
//! quantization.
//!
//! Each channel is level-shifted to `[-128, 127]`, transformed per 8×8 block
//! with the orthonormal DCT-II, quantized, and transformed back. AC steps are
//! the standard JPEG luminance table scaled by `2^((q − 23)/6)`, so each 6
//! quality units double the step, as with a codec's rate factor. The DC step
//! is fixed at 8, which keeps the error on a flat block below 1/255.
//! Partial edge blocks are padded by replication. `q = 0` bypasses the
//! transform entirely.

use std::sync::OnceLock;

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{Real, Tensor};

pub const BLOCK: usize = 8;
pub const MAX_QUALITY: u8 = 51;
pub const DC_STEP: f64 = 8.0;

const LUMA_TABLE: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

/// Quantizer step for coefficient `(u, v)` at quality `q ≥ 1`.
pub fn step(q: u8, u: usize, v: usize) -> f64 {
    if u == 0 && v == 0 {
        DC_STEP
    } else {
        LUMA_TABLE[u * BLOCK + v] * 2f64.powf((q as f64 - 23.0) / 6.0)
    }
}

/// Orthonormal DCT-II basis, `basis[k][n]`.
fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static B: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [[0.0; BLOCK]; BLOCK];
        for (k, row) in b.iter_mut().enumerate() {
            let scale = if k == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = scale * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * BLOCK) as f64).cos();
            }
        }
        b
    })
}

/// `out = B · x · Bᵀ` (forward) or `Bᵀ · x · B` (inverse) on an 8×8 block.
fn transform(x: &[[f64; BLOCK]; BLOCK], inverse: bool) -> [[f64; BLOCK]; BLOCK] {
    let b = basis();
    let at = |i: usize, j: usize| if inverse { b[j][i] } else { b[i][j] };
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            tmp[i][j] = (0..BLOCK).map(|k| at(i, k) * x[k][j]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            out[i][j] = (0..BLOCK).map(|k| tmp[i][k] * at(j, k)).sum();
        }
    }
    out
}

/// Degrades a `[3,H,W]` frame in `[0,1]` at quality `q ∈ 0..=51`.
pub fn degrade_quality<T: Real>(frame: &Tensor<T>, q: u8) -> Result<Tensor<T>> {
    let (c, h, w) = match frame.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(shape_err!("degrade_quality expects [C,H,W], got {s:?}")),
    };
    if q > MAX_QUALITY {
        return Err(arg_err!("quality {q} outside 0..={MAX_QUALITY}"));
    }
    if q == 0 {
        return Ok(frame.clone());
    }
    let mut steps = [[0.0; BLOCK]; BLOCK];
    for (u, row) in steps.iter_mut().enumerate() {
        for (v, s) in row.iter_mut().enumerate() {
            *s = step(q, u, v);
        }
    }
    let src = frame.data();
    let mut out = frame.clone();
    let dst = out.data_mut();
    for ch in 0..c {
        let plane = ch * h * w;
        for by in (0..h).step_by(BLOCK) {
            for bx in (0..w).step_by(BLOCK) {
                let mut blk = [[0.0; BLOCK]; BLOCK];
                for (i, row) in blk.iter_mut().enumerate() {
                    let y = (by + i).min(h - 1);
                    for (j, v) in row.iter_mut().enumerate() {
                        let x = (bx + j).min(w - 1);
                        *v = src[plane + y * w + x].as_f64() * 255.0 - 128.0;
                    }
                }
                let mut coef = transform(&blk, false);
                for (crow, srow) in coef.iter_mut().zip(&steps) {
                    for (cv, s) in crow.iter_mut().zip(srow) {
                        *cv = (*cv / s).round() * s;
                    }
                }
                let rec = transform(&coef, true);
                for (i, row) in rec.iter().enumerate().take(h - by) {
                    for (j, v) in row.iter().enumerate().take(w - bx) {
                        dst[plane + (by + i) * w + bx + j] = T::of(((v + 128.0) / 255.0).clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Peak signal-to-noise ratio in dB for signals in `[0,1]`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let mse: f64 =
        a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / a.numel() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
