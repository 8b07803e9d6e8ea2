//! Dense motion estimation and temporal window alignment.
//!
//! Convention: an estimated flow `f` between `reference` and `target`
//! satisfies `bilinear_warp(reference, f) ≈ target`, i.e. `target(p)` is found
//! in `reference` at `p + f(p)`.

use ndarray::{Array2, Array3, Axis};

use crate::error::{contract, Result};
use crate::model::ClipSample;
use crate::numcore::sample::Tap;
use crate::numcore::{bilinear_warp, downsample, DownsampleMethod, FeatureMap, FlowField, Plane, Var};

/// A dense optical-flow estimator. Implementations must be deterministic.
pub trait FlowEstimator: Send + Sync {
    fn estimate_flow(&self, reference: &Plane, target: &Plane) -> Result<FlowField>;
}

/// Coarse-to-fine Lucas–Kanade with a box window at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidalLucasKanade {
    pub pyramid_levels: usize,
    pub iterations_per_level: usize,
    /// Side of the square aggregation window (odd).
    pub window: usize,
    /// Added to the diagonal of the 2×2 normal equations.
    pub regularization: f32,
    /// Largest update, in pixels, accepted in a single iteration.
    pub max_step: f32,
}

impl Default for PyramidalLucasKanade {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            iterations_per_level: 10,
            window: 9,
            regularization: 1e-4,
            max_step: 1.0,
        }
    }
}

/// Coarsest level side never drops below this.
const MIN_LEVEL_SIDE: usize = 8;

fn half(p: &Plane) -> Result<Plane> {
    downsample(&p.to_map(), DownsampleMethod::Bilinear, None)?.channel(0)
}

fn upsample_flow(flow: &FlowField, h: usize, w: usize) -> Result<FlowField> {
    let up = Var::constant(flow.to_array().into_dyn()).upsample2(h, w)?;
    let a = up.value().view().into_dimensionality::<ndarray::Ix3>().expect("3-d").to_owned() * 2.0;
    FlowField::from_array(a.view())
}

fn gradients(p: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
    let (h, w) = p.dim();
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        (p[[y, (x + 1).min(w - 1)]] - p[[y, x.saturating_sub(1)]]) * 0.5
    });
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        (p[[(y + 1).min(h - 1), x]] - p[[y.saturating_sub(1), x]]) * 0.5
    });
    (gx, gy)
}

impl PyramidalLucasKanade {
    /// Gauss–Newton refinement where every pixel's window is displaced by
    /// that pixel's own flow. Window samples that leave the frame are
    /// skipped.
    fn refine(&self, reference: &Plane, target: &Plane, mut flow: FlowField) -> Result<FlowField> {
        let (h, w) = reference.dim();
        let r = (self.window / 2) as isize;
        let (gx, gy) = gradients(reference.data());
        let (gx, gy) = (gx.into_raw_vec_and_offset().0, gy.into_raw_vec_and_offset().0);
        let img = reference.data().as_standard_layout().into_owned().into_raw_vec_and_offset().0;
        let tgt = target.data();
        let (hi_y, hi_x) = ((h - 1) as f32, (w - 1) as f32);
        let step = self.max_step;
        for _ in 0..self.iterations_per_level {
            let prev = flow.clone();
            for y in 0..h {
                for x in 0..w {
                    let (ux, uy) = (prev.dx[[y, x]], prev.dy[[y, x]]);
                    let (mut a, mut b, mut c, mut p, mut q, mut n) = (0f32, 0f32, 0f32, 0f32, 0f32, 0usize);
                    for qy in (y as isize - r).max(0)..=(y as isize + r).min(h as isize - 1) {
                        let sy = qy as f32 + uy;
                        if !(0.0..=hi_y).contains(&sy) {
                            continue;
                        }
                        for qx in (x as isize - r).max(0)..=(x as isize + r).min(w as isize - 1) {
                            let sx = qx as f32 + ux;
                            if !(0.0..=hi_x).contains(&sx) {
                                continue;
                            }
                            let tap = Tap::new(sy, sx, h, w);
                            let (ix, iy) = (tap.sample(&gx, w), tap.sample(&gy, w));
                            let it = tap.sample(&img, w) - tgt[[qy as usize, qx as usize]];
                            a += ix * ix;
                            b += ix * iy;
                            c += iy * iy;
                            p += ix * it;
                            q += iy * it;
                            n += 1;
                        }
                    }
                    if n == 0 {
                        continue;
                    }
                    let lambda = self.regularization * n as f32;
                    let (a, c) = (a + lambda, c + lambda);
                    let det = a * c - b * b;
                    if det <= f32::MIN_POSITIVE {
                        continue;
                    }
                    flow.dx[[y, x]] = ux - ((c * p - b * q) / det).clamp(-step, step);
                    flow.dy[[y, x]] = uy - ((a * q - b * p) / det).clamp(-step, step);
                }
            }
        }
        Ok(flow)
    }
}

impl FlowEstimator for PyramidalLucasKanade {
    fn estimate_flow(&self, reference: &Plane, target: &Plane) -> Result<FlowField> {
        if reference.dim() != target.dim() {
            return contract(format!(
                "estimate_flow: reference {:?} and target {:?} differ in shape",
                reference.dim(),
                target.dim()
            ));
        }
        if self.pyramid_levels == 0 || self.iterations_per_level == 0 || self.window.is_multiple_of(2) {
            return contract("estimate_flow: levels and iterations must be positive and the window odd");
        }
        let mut refs = vec![reference.clone()];
        let mut tgts = vec![target.clone()];
        while refs.len() < self.pyramid_levels {
            let (h, w) = refs.last().expect("non-empty").dim();
            if h.min(w) / 2 < MIN_LEVEL_SIDE {
                break;
            }
            refs.push(half(refs.last().expect("non-empty"))?);
            tgts.push(half(tgts.last().expect("non-empty"))?);
        }
        let (h, w) = refs.last().expect("non-empty").dim();
        let mut flow = FlowField::zeros(h, w);
        for level in (0..refs.len()).rev() {
            let (h, w) = refs[level].dim();
            if flow.dim() != (h, w) {
                flow = upsample_flow(&flow, h, w)?;
            }
            flow = self.refine(&refs[level], &tgts[level], flow)?;
        }
        Ok(flow)
    }
}

/// How neighbours are brought onto the centre frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentMode {
    /// Pairwise flows between adjacent frames, composed toward the centre.
    #[default]
    Chained,
    /// One flow from each neighbour straight to the centre.
    Direct,
}

/// Window frames warped onto the centre, with the motion used to do so.
#[derive(Debug, Clone)]
pub struct AlignedWindow {
    pub planes: Vec<Plane>,
    /// `flows[j]` warps frame `j` onto the centre; zero at the centre.
    pub flows: Vec<FlowField>,
}

impl AlignedWindow {
    /// Flows stacked as `[dx_0, dy_0, dx_1, dy_1, …]`.
    pub fn flow_stack(&self) -> Array3<f32> {
        let views: Vec<_> = self.flows.iter().map(|f| f.to_array()).collect();
        let views: Vec<_> = views.iter().map(|a| a.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("flows share a shape")
    }
}

/// `outer ∘ inner`: motion from `j` to the centre given `inner` (j → j+1 or
/// j → j−1) and `outer` (the neighbour toward the centre → centre).
fn compose(inner: &FlowField, outer: &FlowField) -> Result<FlowField> {
    let inner_at = bilinear_warp(&FeatureMap::new(inner.to_array())?, outer)?;
    let sum = inner_at.into_data() + &outer.to_array();
    FlowField::from_array(sum.view())
}

pub fn align_window(window: &ClipSample, estimator: &dyn FlowEstimator, mode: AlignmentMode) -> Result<AlignedWindow> {
    let frames = window.frames();
    let t = window.center_index();
    let center = &frames[t];
    let (h, w) = center.dim();
    let mut flows: Vec<Option<FlowField>> = vec![None; frames.len()];
    flows[t] = Some(FlowField::zeros(h, w));
    match mode {
        AlignmentMode::Direct => {
            for (j, f) in frames.iter().enumerate() {
                if j != t {
                    flows[j] = Some(estimator.estimate_flow(f, center)?);
                }
            }
        }
        AlignmentMode::Chained => {
            for j in (0..t).rev() {
                let step = estimator.estimate_flow(&frames[j], &frames[j + 1])?;
                flows[j] = Some(compose(&step, flows[j + 1].as_ref().expect("set"))?);
            }
            for j in t + 1..frames.len() {
                let step = estimator.estimate_flow(&frames[j], &frames[j - 1])?;
                flows[j] = Some(compose(&step, flows[j - 1].as_ref().expect("set"))?);
            }
        }
    }
    let flows: Vec<FlowField> = flows.into_iter().map(|f| f.expect("every frame visited")).collect();
    let planes = frames
        .iter()
        .zip(&flows)
        .enumerate()
        .map(|(j, (f, flow))| if j == t { Ok(f.clone()) } else { bilinear_warp(f, flow) })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignedWindow { planes, flows })
}
