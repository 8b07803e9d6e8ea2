//! Factor-2 resampling: pooling, antialiased bilinear reduction and
//! bilinear enlargement. All kernels take `C × H × W` maps.

use ndarray::{Array3, ArrayView3};

use super::sample::Tap;
use super::Real;

/// Separable triangle filter of a factor-2 bilinear reduction.
const TENT: [f64; 4] = [0.125, 0.375, 0.375, 0.125];

/// Replicate the last row / column so both dimensions are even.
pub(crate) fn pad_even_forward<F: Real>(x: ArrayView3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    let (he, we) = (h + h % 2, w + w % 2);
    Array3::from_shape_fn((c, he, we), |(ci, y, xx)| x[[ci, y.min(h - 1), xx.min(w - 1)]])
}

pub(crate) fn pad_even_backward<F: Real>(g: ArrayView3<F>, h: usize, w: usize) -> Array3<F> {
    let (c, he, we) = g.dim();
    let mut out = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..he {
            for x in 0..we {
                out[[ci, y.min(h - 1), x.min(w - 1)]] += g[[ci, y, x]];
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_forward<F: Real>(x: ArrayView3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    let q = F::lit(0.25);
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
        let (y2, x2) = (2 * y, 2 * xx);
        (x[[ci, y2, x2]] + x[[ci, y2, x2 + 1]] + x[[ci, y2 + 1, x2]] + x[[ci, y2 + 1, x2 + 1]]) * q
    })
}

pub(crate) fn avg_pool2_backward<F: Real>(g: ArrayView3<F>) -> Array3<F> {
    let (c, ho, wo) = g.dim();
    let q = F::lit(0.25);
    Array3::from_shape_fn((c, 2 * ho, 2 * wo), |(ci, y, x)| g[[ci, y / 2, x / 2]] * q)
}

/// Max pooling; also returns the flat input index of each window's maximum
/// (first occurrence on ties) for routing gradients.
pub(crate) fn max_pool2_forward<F: Real>(x: ArrayView3<F>) -> (Array3<F>, Vec<usize>) {
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Array3::<F>::zeros((c, ho, wo));
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let mut best = (2 * y, 2 * xx);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = (2 * y + dy, 2 * xx + dx);
                    if x[[ci, cand.0, cand.1]] > x[[ci, best.0, best.1]] {
                        best = cand;
                    }
                }
                out[[ci, y, xx]] = x[[ci, best.0, best.1]];
                arg.push((ci * h + best.0) * w + best.1);
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool2_backward<F: Real>(g: ArrayView3<F>, arg: &[usize], h: usize, w: usize) -> Array3<F> {
    let c = g.dim().0;
    let mut out = vec![F::zero(); c * h * w];
    for (&i, &gv) in arg.iter().zip(g.iter()) {
        out[i] += gv;
    }
    Array3::from_shape_vec((c, h, w), out).expect("shape")
}

/// Area-consistent bilinear reduction: the factor-2 triangle filter
/// `[1, 3, 3, 1] / 8` along each axis with replicated borders.
pub(crate) fn bilinear_down2_forward<F: Real>(x: ArrayView3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
        let mut acc = F::zero();
        for (i, wy) in TENT.iter().enumerate() {
            let sy = (2 * y + i).saturating_sub(1).min(h - 1);
            for (j, wx) in TENT.iter().enumerate() {
                let sx = (2 * xx + j).saturating_sub(1).min(w - 1);
                acc += F::lit(wy * wx) * x[[ci, sy, sx]];
            }
        }
        acc
    })
}

pub(crate) fn bilinear_down2_backward<F: Real>(g: ArrayView3<F>, h: usize, w: usize) -> Array3<F> {
    let (c, ho, wo) = g.dim();
    let mut out = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let gv = g[[ci, y, xx]];
                for (i, wy) in TENT.iter().enumerate() {
                    let sy = (2 * y + i).saturating_sub(1).min(h - 1);
                    for (j, wx) in TENT.iter().enumerate() {
                        let sx = (2 * xx + j).saturating_sub(1).min(w - 1);
                        out[[ci, sy, sx]] += F::lit(wy * wx) * gv;
                    }
                }
            }
        }
    }
    out
}

fn up2_taps<F: Real>(h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<Tap<F>> {
    let half = F::lit(0.5);
    let mut taps = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = (F::lit(y as f64) + half) * half - half;
        for x in 0..out_w {
            let sx = (F::lit(x as f64) + half) * half - half;
            taps.push(Tap::new(sy, sx, h, w));
        }
    }
    taps
}

/// Bilinear ×2 enlargement (half-pixel centres), cropped to `out_h × out_w`.
pub(crate) fn upsample2_forward<F: Real>(x: ArrayView3<F>, out_h: usize, out_w: usize) -> Array3<F> {
    let (c, h, w) = x.dim();
    let xs = x.as_standard_layout();
    let s = xs.as_slice().expect("standard layout");
    let taps = up2_taps::<F>(h, w, out_h, out_w);
    let mut out = Array3::<F>::zeros((c, out_h, out_w));
    let os = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &s[ci * h * w..(ci + 1) * h * w];
        for (v, tap) in os[ci * out_h * out_w..(ci + 1) * out_h * out_w].iter_mut().zip(&taps) {
            *v = tap.sample(plane, w);
        }
    }
    out
}

pub(crate) fn upsample2_backward<F: Real>(g: ArrayView3<F>, h: usize, w: usize) -> Array3<F> {
    let (c, out_h, out_w) = g.dim();
    let gs = g.as_standard_layout();
    let s = gs.as_slice().expect("standard layout");
    let taps = up2_taps::<F>(h, w, out_h, out_w);
    let mut out = Array3::<F>::zeros((c, h, w));
    let os = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let dst = &mut os[ci * h * w..(ci + 1) * h * w];
        for (&gv, tap) in s[ci * out_h * out_w..(ci + 1) * out_h * out_w].iter().zip(&taps) {
            tap.scatter(dst, w, gv);
        }
    }
    out
}
