//! Brute-force `f64` reference implementations used as test oracles.
//! Written directly from the operator definitions, sharing no code with the
//! crate's kernels.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand3(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
}

pub fn rand4(rng: &mut ChaCha8Rng, o: usize, c: usize, k: usize) -> Array4<f64> {
    Array4::from_shape_fn((o, c, k, k), |_| rng.gen_range(-1.0..1.0))
}

pub fn rand1(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0))
}

pub fn to_f32<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> ndarray::Array<f32, D> {
    a.mapv(|v| v as f32)
}

pub fn to_f64<D: ndarray::Dimension>(a: &ndarray::Array<f32, D>) -> ndarray::Array<f64, D> {
    a.mapv(|v| v as f64)
}

/// Largest `|a − b| / max(|b|, 1)` over all elements.
pub fn max_rel_err<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>, b: &ndarray::Array<f64, D>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Direct zero-padded cross-correlation, padding `dilation·(k−1)/2`.
pub fn conv_direct(
    x: &Array3<f64>,
    w: &Array4<f64>,
    b: &Array1<f64>,
    stride: usize,
    dilation: usize,
) -> Array3<f64> {
    let (c, h, wd) = x.dim();
    let (o, _, k, _) = w.dim();
    let pad = (dilation * (k - 1) / 2) as i64;
    let span = (dilation * (k - 1) + 1) as i64;
    let ho = ((h as i64 + 2 * pad - span) / stride as i64 + 1) as usize;
    let wo = ((wd as i64 + 2 * pad - span) / stride as i64 + 1) as usize;
    let mut out = Array3::zeros((o, ho, wo));
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b[oc];
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride) as i64 + (ky * dilation) as i64 - pad;
                            let ix = (ox * stride) as i64 + (kx * dilation) as i64 - pad;
                            if iy >= 0 && iy < h as i64 && ix >= 0 && ix < wd as i64 {
                                acc += w[[oc, ic, ky, kx]] * x[[ic, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
                out[[oc, oy, ox]] = acc;
            }
        }
    }
    out
}

/// Bilinear value of `p` at real coordinates, coordinates clamped into the plane.
pub fn bilinear_clamped(p: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = p.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor(), x.floor());
    let (ty, tx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| p[[(yy as usize).min(h - 1), (xx as usize).min(w - 1)]];
    at(y0, x0) * (1.0 - ty) * (1.0 - tx)
        + at(y0, x0 + 1.0) * (1.0 - ty) * tx
        + at(y0 + 1.0, x0) * ty * (1.0 - tx)
        + at(y0 + 1.0, x0 + 1.0) * ty * tx
}

/// Warp oracle; `flow[0]` horizontal, `flow[1]` vertical.
pub fn warp_direct(src: &Array3<f64>, flow: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = src.dim();
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
        let plane = src.index_axis(ndarray::Axis(0), ci).to_owned();
        bilinear_clamped(&plane, y as f64 + flow[[1, y, x]], x as f64 + flow[[0, y, x]])
    })
}

/// Deformable convolution oracle: taps whose undeformed position lies in the
/// zero-padding region contribute zero; others sample the clamped bilinear
/// value at the displaced position.
pub fn deform_direct(
    x: &Array3<f64>,
    off: &Array3<f64>,
    w: &Array4<f64>,
    b: &Array1<f64>,
    dilation: usize,
) -> Array3<f64> {
    let (c, h, wd) = x.dim();
    let (o, _, k, _) = w.dim();
    let half = (k / 2 * dilation) as i64;
    let planes: Vec<Array2<f64>> = (0..c).map(|ci| x.index_axis(ndarray::Axis(0), ci).to_owned()).collect();
    let mut out = Array3::zeros((o, h, wd));
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b[oc];
                for ky in 0..k {
                    for kx in 0..k {
                        let t = ky * k + kx;
                        let by = y as i64 + (ky * dilation) as i64 - half;
                        let bx = xx as i64 + (kx * dilation) as i64 - half;
                        if by < 0 || by >= h as i64 || bx < 0 || bx >= wd as i64 {
                            continue;
                        }
                        let sy = by as f64 + off[[2 * t, y, xx]];
                        let sx = bx as f64 + off[[2 * t + 1, y, xx]];
                        for ic in 0..c {
                            acc += w[[oc, ic, ky, kx]] * bilinear_clamped(&planes[ic], sy, sx);
                        }
                    }
                }
                out[[oc, y, xx]] = acc;
            }
        }
    }
    out
}

pub fn avg_pool_direct(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
        let mut s = 0.0;
        for dy in 0..2 {
            for dx in 0..2 {
                s += x[[ci, 2 * y + dy, 2 * xx + dx]];
            }
        }
        s / 4.0
    })
}

pub fn max_pool_direct(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x[[ci, 2 * y + dy, 2 * xx + dx]]);
            }
        }
        m
    })
}

/// Antialiased factor-2 bilinear reduction: a triangle kernel two source
/// pixels wide, evaluated at pixel centres and normalized, with replicated
/// borders.
pub fn bilinear_down_direct(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let weights = |o: usize, len: usize| -> Vec<(usize, f64)> {
        let centre = 2.0 * (o as f64 + 0.5);
        let mut taps = Vec::new();
        let mut total = 0.0;
        for s in (2 * o as i64 - 2)..=(2 * o as i64 + 3) {
            let d = ((s as f64 + 0.5) - centre).abs();
            let wt = (1.0 - d / 2.0).max(0.0);
            if wt > 0.0 {
                taps.push((s.clamp(0, len as i64 - 1) as usize, wt));
                total += wt;
            }
        }
        taps.into_iter().map(|(i, wt)| (i, wt / total)).collect()
    };
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
        let mut acc = 0.0;
        for (sy, wy) in weights(y, h) {
            for (sx, wx) in weights(xx, w) {
                acc += wy * wx * x[[ci, sy, sx]];
            }
        }
        acc
    })
}

/// Bilinear ×2 enlargement with half-pixel centres, cropped.
pub fn upsample_direct(x: &Array3<f64>, oh: usize, ow: usize) -> Array3<f64> {
    let c = x.dim().0;
    Array3::from_shape_fn((c, oh, ow), |(ci, y, xx)| {
        let plane = x.index_axis(ndarray::Axis(0), ci).to_owned();
        bilinear_clamped(&plane, (y as f64 + 0.5) / 2.0 - 0.5, (xx as f64 + 0.5) / 2.0 - 0.5)
    })
}

/// Textured test image: a sum of incommensurate sinusoids in `[0, 1]`.
pub fn texture(h: usize, w: usize, phase: f64) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as f64, x as f64);
        let v = 0.5
            + 0.18 * ((x + phase) / 3.1).sin() * (y / 4.3).cos()
            + 0.12 * ((x * 0.7 + y * 1.3) / 2.3 + phase).sin()
            + 0.1 * ((y - 0.4 * x) / 5.7).cos();
        v.clamp(0.0, 1.0)
    })
}
