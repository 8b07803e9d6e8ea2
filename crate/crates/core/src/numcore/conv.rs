//! Dilated, strided 2-D cross-correlation via banded im2col + GEMM.
//!
//! The column buffer is built for a band of output rows at a time so that
//! full-resolution inference does not materialize a `C·k² × H·W` matrix.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4};

use super::Real;

/// Upper bound on column-buffer elements per band.
const BAND_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Size-preserving geometry (for stride 1): padding `dilation·(k−1)/2`.
    pub fn same(kernel: usize, dilation: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn output_len(&self, len: usize) -> Option<usize> {
        let span = self.receptive_field();
        let padded = len + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

fn band_rows(ckk: usize, ho: usize, wo: usize) -> usize {
    (BAND_ELEMS / (ckk * wo).max(1)).clamp(1, ho.max(1))
}

/// Fill `cols` (`C·k² × rows·wo`, row-major) for output rows `oy0..oy1`.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Real>(
    x: &[F],
    (c, h, w): (usize, usize, usize),
    g: ConvGeometry,
    oy0: usize,
    oy1: usize,
    wo: usize,
    cols: &mut [F],
) {
    let k = g.kernel;
    let n = (oy1 - oy0) * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                let dx = (kx * g.dilation) as isize - g.padding as isize;
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    let out_row = &mut dst[(oy - oy0) * wo..(oy - oy0 + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + dx;
                        *v = if ix < 0 || ix >= w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate `cols` back into `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Real>(
    cols: &[F],
    (c, h, w): (usize, usize, usize),
    g: ConvGeometry,
    oy0: usize,
    oy1: usize,
    wo: usize,
    dx: &mut [F],
) {
    let k = g.kernel;
    let n = (oy1 - oy0) * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                let off_x = (kx * g.dilation) as isize - g.padding as isize;
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let col_row = &src[(oy - oy0) * wo..(oy - oy0 + 1) * wo];
                    for (ox, &v) in col_row.iter().enumerate() {
                        let ix = (ox * g.stride) as isize + off_x;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<F: Real>(
    input: ArrayView3<F>,
    weight: ArrayView4<F>,
    bias: Option<ArrayView1<F>>,
    g: ConvGeometry,
) -> Array3<F> {
    let (c, h, w) = input.dim();
    let (o, _, k, _) = weight.dim();
    let ho = g.output_len(h).expect("validated output height");
    let wo = g.output_len(w).expect("validated output width");
    let ckk = c * k * k;

    let x = input.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let w_std = weight.as_standard_layout();
    let w2 = w_std.view().into_shape_with_order((o, ckk)).expect("contiguous weight");

    let mut out = Array2::<F>::zeros((o, ho * wo));
    let band = band_rows(ckk, ho, wo);
    let mut cols = vec![F::zero(); ckk * band * wo];
    let mut oy0 = 0;
    while oy0 < ho {
        let oy1 = (oy0 + band).min(ho);
        let n = (oy1 - oy0) * wo;
        im2col(xs, (c, h, w), g, oy0, oy1, wo, &mut cols[..ckk * n]);
        let cv = ArrayView2::from_shape((ckk, n), &cols[..ckk * n]).expect("cols shape");
        let mut dst = out.slice_mut(s![.., oy0 * wo..oy1 * wo]);
        general_mat_mul(F::one(), &w2, &cv, F::zero(), &mut dst);
        oy0 = oy1;
    }
    if let Some(b) = bias {
        for (mut row, &bv) in out.outer_iter_mut().zip(b.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
    }
    out.into_shape_with_order((o, ho, wo)).expect("output shape")
}

pub(crate) struct ConvGrads<F> {
    pub input: Option<Array3<F>>,
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

pub(crate) fn conv2d_backward<F: Real>(
    input: ArrayView3<F>,
    weight: ArrayView4<F>,
    g: ConvGeometry,
    grad_out: ArrayView3<F>,
    need_input: bool,
) -> ConvGrads<F> {
    let (c, h, w) = input.dim();
    let (o, _, k, _) = weight.dim();
    let (_, ho, wo) = grad_out.dim();
    let ckk = c * k * k;

    let x = input.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let w_std = weight.as_standard_layout();
    let w2 = w_std.view().into_shape_with_order((o, ckk)).expect("contiguous weight");
    let go = grad_out.as_standard_layout();
    let go2 = go.view().into_shape_with_order((o, ho * wo)).expect("grad shape");

    let mut dw = Array2::<F>::zeros((o, ckk));
    let mut dx = need_input.then(|| vec![F::zero(); c * h * w]);
    let band = band_rows(ckk, ho, wo);
    let mut cols = vec![F::zero(); ckk * band * wo];
    let mut dcols = Array2::<F>::zeros((0, 0));
    let mut oy0 = 0;
    while oy0 < ho {
        let oy1 = (oy0 + band).min(ho);
        let n = (oy1 - oy0) * wo;
        im2col(xs, (c, h, w), g, oy0, oy1, wo, &mut cols[..ckk * n]);
        let cv = ArrayView2::from_shape((ckk, n), &cols[..ckk * n]).expect("cols shape");
        let gb = go2.slice(s![.., oy0 * wo..oy1 * wo]);
        general_mat_mul(F::one(), &gb, &cv.t(), F::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            if dcols.dim() != (ckk, n) {
                dcols = Array2::zeros((ckk, n));
            }
            general_mat_mul(F::one(), &w2.t(), &gb, F::zero(), &mut dcols);
            col2im(
                dcols.as_slice().expect("standard layout"),
                (c, h, w),
                g,
                oy0,
                oy1,
                wo,
                dx,
            );
        }
        oy0 = oy1;
    }
    let bias = go2.sum_axis(ndarray::Axis(1));
    ConvGrads {
        input: dx.map(|v| Array3::from_shape_vec((c, h, w), v).expect("dx shape")),
        weight: dw.into_shape_with_order((o, c, k, k)).expect("dw shape"),
        bias,
    }
}
