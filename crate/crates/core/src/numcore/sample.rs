//! Clamp-to-edge bilinear sampling, flow warping and deformable convolution.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4};

use super::Real;

const BAND_ELEMS: usize = 1 << 22;

/// Bilinear interpolation stencil at a fractional position, coordinates
/// clamped to `[0, len−1]` on each axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap<F> {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    fy: F,
    fx: F,
    /// Whether the position was inside the clamp range (non-zero derivative).
    live_y: bool,
    live_x: bool,
}

fn axis<F: Real>(pos: F, len: usize) -> (usize, usize, F, bool) {
    let hi = F::lit((len - 1) as f64);
    let live = pos >= F::zero() && pos <= hi;
    let p = pos.max(F::zero()).min(hi);
    let i0 = p.floor().to_usize().unwrap_or(0).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, p - F::lit(i0 as f64), live)
}

impl<F: Real> Tap<F> {
    pub fn new(y: F, x: F, h: usize, w: usize) -> Self {
        let (y0, y1, fy, live_y) = axis(y, h);
        let (x0, x1, fx, live_x) = axis(x, w);
        Self {
            y0,
            y1,
            x0,
            x1,
            fy,
            fx,
            live_y,
            live_x,
        }
    }

    #[inline]
    fn corners(&self, plane: &[F], w: usize) -> [F; 4] {
        [
            plane[self.y0 * w + self.x0],
            plane[self.y0 * w + self.x1],
            plane[self.y1 * w + self.x0],
            plane[self.y1 * w + self.x1],
        ]
    }

    #[inline]
    pub fn sample(&self, plane: &[F], w: usize) -> F {
        let [v00, v01, v10, v11] = self.corners(plane, w);
        let one = F::one();
        (one - self.fy) * ((one - self.fx) * v00 + self.fx * v01)
            + self.fy * ((one - self.fx) * v10 + self.fx * v11)
    }

    /// Partial derivatives of the sampled value w.r.t. the (y, x) position.
    #[inline]
    pub fn coord_grad(&self, plane: &[F], w: usize) -> (F, F) {
        let [v00, v01, v10, v11] = self.corners(plane, w);
        let one = F::one();
        let dy = if self.live_y {
            (one - self.fx) * (v10 - v00) + self.fx * (v11 - v01)
        } else {
            F::zero()
        };
        let dx = if self.live_x {
            (one - self.fy) * (v01 - v00) + self.fy * (v11 - v10)
        } else {
            F::zero()
        };
        (dy, dx)
    }

    /// Accumulate `g · ∂sample/∂plane` into `dst`.
    #[inline]
    pub fn scatter(&self, dst: &mut [F], w: usize, g: F) {
        let one = F::one();
        dst[self.y0 * w + self.x0] += g * (one - self.fy) * (one - self.fx);
        dst[self.y0 * w + self.x1] += g * (one - self.fy) * self.fx;
        dst[self.y1 * w + self.x0] += g * self.fy * (one - self.fx);
        dst[self.y1 * w + self.x1] += g * self.fy * self.fx;
    }
}

/// `out[c, y, x] = src[c](y + flow[1, y, x], x + flow[0, y, x])`.
///
/// Flow channel 0 is the horizontal displacement, channel 1 the vertical.
pub(crate) fn warp_forward<F: Real>(src: ArrayView3<F>, flow: ArrayView3<F>) -> Array3<F> {
    let (c, h, w) = src.dim();
    let s = src.as_standard_layout();
    let ss = s.as_slice().expect("standard layout");
    let taps = warp_taps(flow, h, w);
    let mut out = Array3::<F>::zeros((c, h, w));
    let os = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &ss[ci * h * w..(ci + 1) * h * w];
        let dst = &mut os[ci * h * w..(ci + 1) * h * w];
        for (v, tap) in dst.iter_mut().zip(&taps) {
            *v = tap.sample(plane, w);
        }
    }
    out
}

fn warp_taps<F: Real>(flow: ArrayView3<F>, h: usize, w: usize) -> Vec<Tap<F>> {
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let sy = F::lit(y as f64) + flow[[1, y, x]];
            let sx = F::lit(x as f64) + flow[[0, y, x]];
            taps.push(Tap::new(sy, sx, h, w));
        }
    }
    taps
}

pub(crate) fn warp_backward<F: Real>(
    src: ArrayView3<F>,
    flow: ArrayView3<F>,
    grad_out: ArrayView3<F>,
) -> (Array3<F>, Array3<F>) {
    let (c, h, w) = src.dim();
    let s = src.as_standard_layout();
    let ss = s.as_slice().expect("standard layout");
    let go = grad_out.as_standard_layout();
    let gs = go.as_slice().expect("standard layout");
    let taps = warp_taps(flow, h, w);
    let mut dsrc = Array3::<F>::zeros((c, h, w));
    let mut dflow = Array3::<F>::zeros((2, h, w));
    {
        let ds = dsrc.as_slice_mut().expect("fresh array");
        let df = dflow.as_slice_mut().expect("fresh array");
        let (dfx, dfy) = df.split_at_mut(h * w);
        for ci in 0..c {
            let plane = &ss[ci * h * w..(ci + 1) * h * w];
            let gplane = &gs[ci * h * w..(ci + 1) * h * w];
            let dplane = &mut ds[ci * h * w..(ci + 1) * h * w];
            for (p, tap) in taps.iter().enumerate() {
                let g = gplane[p];
                if g == F::zero() {
                    continue;
                }
                tap.scatter(dplane, w, g);
                let (gy, gx) = tap.coord_grad(plane, w);
                dfy[p] += g * gy;
                dfx[p] += g * gx;
            }
        }
    }
    (dsrc, dflow)
}

/// Per-(tap, pixel) sampling stencils for one band of output rows.
///
/// A tap whose undeformed grid position falls in the zero-padding border
/// contributes zero, matching [`super::conv`]; all other taps are sampled at
/// the deformed position with clamp-to-edge interpolation.
fn deform_taps<F: Real>(
    offsets: &[F],
    (h, w): (usize, usize),
    k: usize,
    dilation: usize,
    oy0: usize,
    oy1: usize,
) -> Vec<Option<Tap<F>>> {
    let kk = k * k;
    let half = (k / 2) as isize * dilation as isize;
    let n = (oy1 - oy0) * w;
    let mut taps = Vec::with_capacity(kk * n);
    for t in 0..kk {
        let ky = (t / k) as isize * dilation as isize - half;
        let kx = (t % k) as isize * dilation as isize - half;
        let oy_plane = &offsets[2 * t * h * w..(2 * t + 1) * h * w];
        let ox_plane = &offsets[(2 * t + 1) * h * w..(2 * t + 2) * h * w];
        for y in oy0..oy1 {
            let by = y as isize + ky;
            for x in 0..w {
                let bx = x as isize + kx;
                if by < 0 || by >= h as isize || bx < 0 || bx >= w as isize {
                    taps.push(None);
                    continue;
                }
                let p = y * w + x;
                let sy = F::lit(by as f64) + oy_plane[p];
                let sx = F::lit(bx as f64) + ox_plane[p];
                taps.push(Some(Tap::new(sy, sx, h, w)));
            }
        }
    }
    taps
}

fn deform_cols<F: Real>(xs: &[F], (c, h, w): (usize, usize, usize), taps: &[Option<Tap<F>>], kk: usize, n: usize, cols: &mut [F]) {
    for ci in 0..c {
        let plane = &xs[ci * h * w..(ci + 1) * h * w];
        for t in 0..kk {
            let row = &mut cols[(ci * kk + t) * n..(ci * kk + t + 1) * n];
            for (v, tap) in row.iter_mut().zip(&taps[t * n..(t + 1) * n]) {
                *v = match tap {
                    Some(tap) => tap.sample(plane, w),
                    None => F::zero(),
                };
            }
        }
    }
}

pub(crate) fn deform_conv2d_forward<F: Real>(
    input: ArrayView3<F>,
    offsets: ArrayView3<F>,
    weight: ArrayView4<F>,
    bias: Option<ArrayView1<F>>,
    dilation: usize,
) -> Array3<F> {
    let (c, h, w) = input.dim();
    let (o, _, k, _) = weight.dim();
    let kk = k * k;
    let ckk = c * kk;
    let x = input.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let off = offsets.as_standard_layout();
    let offs = off.as_slice().expect("standard layout");
    let w_std = weight.as_standard_layout();
    let w2 = w_std.view().into_shape_with_order((o, ckk)).expect("contiguous weight");

    let mut out = Array2::<F>::zeros((o, h * w));
    let band = (BAND_ELEMS / (ckk * w).max(1)).clamp(1, h);
    let mut cols = vec![F::zero(); ckk * band * w];
    let mut oy0 = 0;
    while oy0 < h {
        let oy1 = (oy0 + band).min(h);
        let n = (oy1 - oy0) * w;
        let taps = deform_taps(offs, (h, w), k, dilation, oy0, oy1);
        deform_cols(xs, (c, h, w), &taps, kk, n, &mut cols[..ckk * n]);
        let cv = ArrayView2::from_shape((ckk, n), &cols[..ckk * n]).expect("cols shape");
        let mut dst = out.slice_mut(s![.., oy0 * w..oy1 * w]);
        general_mat_mul(F::one(), &w2, &cv, F::zero(), &mut dst);
        oy0 = oy1;
    }
    if let Some(b) = bias {
        for (mut row, &bv) in out.outer_iter_mut().zip(b.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    out.into_shape_with_order((o, h, w)).expect("output shape")
}

pub(crate) struct DeformGrads<F> {
    pub input: Array3<F>,
    pub offsets: Array3<F>,
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

pub(crate) fn deform_conv2d_backward<F: Real>(
    input: ArrayView3<F>,
    offsets: ArrayView3<F>,
    weight: ArrayView4<F>,
    dilation: usize,
    grad_out: ArrayView3<F>,
) -> DeformGrads<F> {
    let (c, h, w) = input.dim();
    let (o, _, k, _) = weight.dim();
    let kk = k * k;
    let ckk = c * kk;
    let x = input.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let off = offsets.as_standard_layout();
    let offs = off.as_slice().expect("standard layout");
    let w_std = weight.as_standard_layout();
    let w2 = w_std.view().into_shape_with_order((o, ckk)).expect("contiguous weight");
    let go = grad_out.as_standard_layout();
    let go2 = go.view().into_shape_with_order((o, h * w)).expect("grad shape");

    let mut dw = Array2::<F>::zeros((o, ckk));
    let mut dx = vec![F::zero(); c * h * w];
    let mut doff = vec![F::zero(); 2 * kk * h * w];
    let band = (BAND_ELEMS / (ckk * w).max(1)).clamp(1, h);
    let mut cols = vec![F::zero(); ckk * band * w];
    let mut oy0 = 0;
    while oy0 < h {
        let oy1 = (oy0 + band).min(h);
        let n = (oy1 - oy0) * w;
        let taps = deform_taps(offs, (h, w), k, dilation, oy0, oy1);
        deform_cols(xs, (c, h, w), &taps, kk, n, &mut cols[..ckk * n]);
        let cv = ArrayView2::from_shape((ckk, n), &cols[..ckk * n]).expect("cols shape");
        let gb = go2.slice(s![.., oy0 * w..oy1 * w]);
        general_mat_mul(F::one(), &gb, &cv.t(), F::one(), &mut dw);
        let mut dcols = Array2::<F>::zeros((ckk, n));
        general_mat_mul(F::one(), &w2.t(), &gb, F::zero(), &mut dcols);
        let dc = dcols.as_slice().expect("standard layout");
        for ci in 0..c {
            let plane = &xs[ci * h * w..(ci + 1) * h * w];
            let dplane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for t in 0..kk {
                let grow = &dc[(ci * kk + t) * n..(ci * kk + t + 1) * n];
                for (i, tap) in taps[t * n..(t + 1) * n].iter().enumerate() {
                    let Some(tap) = tap else { continue };
                    let g = grow[i];
                    if g == F::zero() {
                        continue;
                    }
                    tap.scatter(dplane, w, g);
                    let (gy, gx) = tap.coord_grad(plane, w);
                    let p = oy0 * w + i;
                    doff[2 * t * h * w + p] += g * gy;
                    doff[(2 * t + 1) * h * w + p] += g * gx;
                }
            }
        }
        oy0 = oy1;
    }
    DeformGrads {
        input: Array3::from_shape_vec((c, h, w), dx).expect("dx shape"),
        offsets: Array3::from_shape_vec((2 * kk, h, w), doff).expect("doff shape"),
        weight: dw.into_shape_with_order((o, c, k, k)).expect("dw shape"),
        bias: go2.sum_axis(ndarray::Axis(1)),
    }
}
