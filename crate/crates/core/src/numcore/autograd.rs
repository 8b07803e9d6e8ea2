//! Tape-free reverse-mode differentiation.
//!
//! A [`Var`] owns its value and, when any input requires a gradient, a
//! reference to its parents plus the adjoint of the operation that produced
//! it. Values computed purely from constants record nothing, so inference
//! releases intermediate maps as soon as they go out of scope.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{ArrayD, ArrayView1, ArrayView3, ArrayView4, Axis, Ix1, Ix3, Ix4, IxDyn};

use super::conv::{self, ConvGeometry};
use super::{resample, sample, Real};
use crate::error::{contract, Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

type BackwardFn<F> = dyn Fn(&ArrayD<F>, &[Var<F>]) -> Vec<Option<ArrayD<F>>>;

struct GradFn<F: Real> {
    parents: Vec<Var<F>>,
    backward: Box<BackwardFn<F>>,
}

struct Node<F: Real> {
    id: usize,
    value: ArrayD<F>,
    requires_grad: bool,
    grad_fn: Option<GradFn<F>>,
}

/// A differentiable value.
#[derive(Clone)]
pub struct Var<F: Real = f32>(Rc<Node<F>>);

impl<F: Real> std::fmt::Debug for Var<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// Gradients of a scalar with respect to every leaf that requires one.
pub struct Gradients<F: Real> {
    grads: HashMap<usize, ArrayD<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, var: &Var<F>) -> Option<&ArrayD<F>> {
        self.grads.get(&var.0.id)
    }

    /// Gradient of `var`, or zeros if nothing reached it.
    pub fn get_or_zeros(&self, var: &Var<F>) -> ArrayD<F> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(var.value().raw_dim()))
    }
}

fn view3<F: Real>(a: &ArrayD<F>) -> ArrayView3<'_, F> {
    a.view().into_dimensionality::<Ix3>().expect("validated 3-d")
}

fn view4<F: Real>(a: &ArrayD<F>) -> ArrayView4<'_, F> {
    a.view().into_dimensionality::<Ix4>().expect("validated 4-d")
}

fn view1<F: Real>(a: &ArrayD<F>) -> ArrayView1<'_, F> {
    a.view().into_dimensionality::<Ix1>().expect("validated 1-d")
}

fn scalar<F: Real>(v: F) -> ArrayD<F> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl<F: Real> Var<F> {
    fn make(value: ArrayD<F>, requires_grad: bool, grad_fn: Option<GradFn<F>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad_fn,
        }))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: ArrayD<F>) -> Self {
        Self::make(value, false, None)
    }

    /// A leaf whose gradient is collected by [`Var::backward`].
    pub fn leaf(value: ArrayD<F>) -> Self {
        Self::make(value, true, None)
    }

    fn from_op(
        value: ArrayD<F>,
        parents: Vec<Var<F>>,
        backward: impl Fn(&ArrayD<F>, &[Var<F>]) -> Vec<Option<ArrayD<F>>> + 'static,
    ) -> Self {
        if parents.iter().any(Var::requires_grad) {
            let grad_fn = GradFn {
                parents,
                backward: Box::new(backward),
            };
            Self::make(value, true, Some(grad_fn))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &ArrayD<F> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// `(C, H, W)` of a feature map.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape() {
            [c, h, w] => Ok((c, h, w)),
            ref s => contract(format!("expected a C×H×W map, got shape {s:?}")),
        }
    }

    pub fn scalar_value(&self) -> Result<F> {
        if self.value().len() != 1 {
            return contract(format!("expected a scalar, got shape {:?}", self.shape()));
        }
        Ok(*self.value().iter().next().expect("one element"))
    }

    fn same_shape(&self, other: &Var<F>, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return contract(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Var<F>) -> Result<Var<F>> {
        self.same_shape(other, "add")?;
        let value = self.value() + other.value();
        Ok(Self::from_op(value, vec![self.clone(), other.clone()], |g, _| {
            vec![Some(g.clone()), Some(g.clone())]
        }))
    }

    pub fn sub(&self, other: &Var<F>) -> Result<Var<F>> {
        self.same_shape(other, "sub")?;
        let value = self.value() - other.value();
        Ok(Self::from_op(value, vec![self.clone(), other.clone()], |g, _| {
            vec![Some(g.clone()), Some(g.mapv(|v| -v))]
        }))
    }

    pub fn mul(&self, other: &Var<F>) -> Result<Var<F>> {
        self.same_shape(other, "mul")?;
        let value = self.value() * other.value();
        Ok(Self::from_op(value, vec![self.clone(), other.clone()], |g, p| {
            vec![
                p[0].requires_grad().then(|| g * p[1].value()),
                p[1].requires_grad().then(|| g * p[0].value()),
            ]
        }))
    }

    pub fn scale(&self, s: F) -> Var<F> {
        let value = self.value().mapv(|v| v * s);
        Self::from_op(value, vec![self.clone()], move |g, _| vec![Some(g.mapv(|v| v * s))])
    }

    pub fn relu(&self) -> Var<F> {
        let value = self.value().mapv(|v| v.max(F::zero()));
        Self::from_op(value, vec![self.clone()], |g, p| {
            let mut out = g.clone();
            out.zip_mut_with(p[0].value(), |o, &x| {
                if x <= F::zero() {
                    *o = F::zero()
                }
            });
            vec![Some(out)]
        })
    }

    pub fn sigmoid(&self) -> Var<F> {
        let value = self
            .value()
            .mapv(|v| F::one() / (F::one() + (-v).exp()));
        let saved = value.clone();
        Self::from_op(value, vec![self.clone()], move |g, _| {
            let mut out = g.clone();
            out.zip_mut_with(&saved, |o, &s| *o = *o * s * (F::one() - s));
            vec![Some(out)]
        })
    }

    /// Clamp channel `c` of a `C×H×W` map to `[−limits[c], limits[c]]`.
    pub fn clamp_channels(&self, limits: &[F]) -> Result<Var<F>> {
        let (c, _, _) = self.dims3()?;
        if limits.len() != c {
            return contract(format!("clamp_channels: {} limits for {c} channels", limits.len()));
        }
        let mut value = self.value().clone();
        for (mut ch, &lim) in value.axis_iter_mut(Axis(0)).zip(limits) {
            ch.mapv_inplace(|v| v.max(-lim).min(lim));
        }
        let limits = limits.to_vec();
        Ok(Self::from_op(value, vec![self.clone()], move |g, p| {
            let mut out = g.clone();
            for ((mut gc, xc), &lim) in out
                .axis_iter_mut(Axis(0))
                .zip(p[0].value().axis_iter(Axis(0)))
                .zip(&limits)
            {
                gc.zip_mut_with(&xc, |o, &x| {
                    if x < -lim || x > lim {
                        *o = F::zero()
                    }
                });
            }
            vec![Some(out)]
        }))
    }

    /// Concatenate along the leading (channel) axis.
    pub fn cat(vars: &[Var<F>]) -> Result<Var<F>> {
        let Some(first) = vars.first() else {
            return contract("cat: no inputs");
        };
        let rest = &first.shape()[1..];
        if vars.iter().any(|v| v.shape().is_empty() || &v.shape()[1..] != rest) {
            return contract("cat: trailing shapes differ");
        }
        let views: Vec<_> = vars.iter().map(|v| v.value().view()).collect();
        let value = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Contract(format!("cat: {e}")))?;
        let sizes: Vec<usize> = vars.iter().map(|v| v.shape()[0]).collect();
        Ok(Self::from_op(value, vars.to_vec(), move |g, p| {
            let mut start = 0;
            sizes
                .iter()
                .zip(p)
                .map(|(&n, v)| {
                    let part = v
                        .requires_grad()
                        .then(|| g.slice_axis(Axis(0), (start..start + n).into()).to_owned());
                    start += n;
                    part
                })
                .collect()
        }))
    }

    /// Sum of all elements as a 0-d value.
    pub fn sum(&self) -> Var<F> {
        let value = scalar(self.value().sum());
        Self::from_op(value, vec![self.clone()], |g, p| {
            let gv = *g.iter().next().expect("scalar grad");
            vec![Some(ArrayD::from_elem(p[0].value().raw_dim(), gv))]
        })
    }

    /// Mean squared error against `target` as a 0-d value.
    pub fn mse(&self, target: &Var<F>) -> Result<Var<F>> {
        self.same_shape(target, "mse")?;
        let n = F::lit(self.value().len().max(1) as f64);
        let diff = self.value() - target.value();
        let value = scalar(diff.iter().map(|&d| d * d).sum::<F>() / n);
        Ok(Self::from_op(value, vec![self.clone(), target.clone()], move |g, p| {
            let gv = *g.iter().next().expect("scalar grad");
            let k = gv * F::lit(2.0) / n;
            let d = (p[0].value() - p[1].value()).mapv(|v| v * k);
            vec![
                p[0].requires_grad().then(|| d.clone()),
                p[1].requires_grad().then(|| d.mapv(|v| -v)),
            ]
        }))
    }

    /// Zero-padded cross-correlation. `weight` is `O×C×k×k`, `bias` is `O`.
    pub fn conv2d(&self, weight: &Var<F>, bias: Option<&Var<F>>, geom: ConvGeometry) -> Result<Var<F>> {
        let (c, h, w) = self.dims3()?;
        let [o, wc, kh, kw] = *weight.shape() else {
            return contract(format!("conv2d: weight must be 4-d, got {:?}", weight.shape()));
        };
        if wc != c {
            return contract(format!("conv2d: input has {c} channels, weight expects {wc}"));
        }
        if kh != kw || kh != geom.kernel {
            return contract(format!("conv2d: kernel {kh}×{kw} does not match geometry k={}", geom.kernel));
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return contract(format!("conv2d: bias shape {:?}, expected [{o}]", b.shape()));
            }
        }
        if geom.output_len(h).is_none() || geom.output_len(w).is_none() {
            return contract(format!("conv2d: {h}×{w} input too small for receptive field {}", geom.receptive_field()));
        }
        let value = conv::conv2d_forward(
            view3(self.value()),
            view4(weight.value()),
            bias.map(|b| view1(b.value())),
            geom,
        )
        .into_dyn();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Self::from_op(value, parents, move |g, p| {
            let grads = conv::conv2d_backward(
                view3(p[0].value()),
                view4(p[1].value()),
                geom,
                view3(g),
                p[0].requires_grad(),
            );
            let mut out = vec![grads.input.map(|a| a.into_dyn()), Some(grads.weight.into_dyn())];
            if p.len() == 3 {
                out.push(Some(grads.bias.into_dyn()));
            }
            out
        }))
    }

    /// Deformable convolution with per-pixel tap offsets (`2k²×H×W`,
    /// ordered `Δy₀, Δx₀, Δy₁, …` over the row-major kernel grid).
    pub fn deform_conv2d(
        &self,
        offsets: &Var<F>,
        weight: &Var<F>,
        bias: Option<&Var<F>>,
        dilation: usize,
    ) -> Result<Var<F>> {
        let (c, h, w) = self.dims3()?;
        let [o, wc, k, kw] = *weight.shape() else {
            return contract("deform_conv2d: weight must be 4-d");
        };
        if wc != c || k != kw || k % 2 == 0 {
            return contract(format!(
                "deform_conv2d: weight {:?} incompatible with {c}-channel input",
                weight.shape()
            ));
        }
        let (oc, oh, ow) = offsets.dims3()?;
        if oc != 2 * k * k {
            return contract(format!("deform_conv2d: offsets carry {} taps, kernel has {}", oc / 2, k * k));
        }
        if (oh, ow) != (h, w) {
            return contract(format!("deform_conv2d: offsets {oh}×{ow} vs input {h}×{w}"));
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return contract("deform_conv2d: bias shape mismatch");
            }
        }
        let value = sample::deform_conv2d_forward(
            view3(self.value()),
            view3(offsets.value()),
            view4(weight.value()),
            bias.map(|b| view1(b.value())),
            dilation,
        )
        .into_dyn();
        let mut parents = vec![self.clone(), offsets.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Self::from_op(value, parents, move |g, p| {
            let grads = sample::deform_conv2d_backward(
                view3(p[0].value()),
                view3(p[1].value()),
                view4(p[2].value()),
                dilation,
                view3(g),
            );
            let mut out = vec![
                Some(grads.input.into_dyn()),
                Some(grads.offsets.into_dyn()),
                Some(grads.weight.into_dyn()),
            ];
            if p.len() == 4 {
                out.push(Some(grads.bias.into_dyn()));
            }
            out
        }))
    }

    /// Bilinear warp by a `2×H×W` flow (channel 0 horizontal, 1 vertical).
    pub fn warp(&self, flow: &Var<F>) -> Result<Var<F>> {
        let (_, h, w) = self.dims3()?;
        if flow.shape() != [2, h, w] {
            return contract(format!("warp: flow shape {:?}, expected [2, {h}, {w}]", flow.shape()));
        }
        let value = sample::warp_forward(view3(self.value()), view3(flow.value())).into_dyn();
        Ok(Self::from_op(value, vec![self.clone(), flow.clone()], |g, p| {
            let (ds, df) = sample::warp_backward(view3(p[0].value()), view3(p[1].value()), view3(g));
            vec![Some(ds.into_dyn()), Some(df.into_dyn())]
        }))
    }

    pub fn pad_even(&self) -> Result<Var<F>> {
        let (_, h, w) = self.dims3()?;
        if h % 2 == 0 && w % 2 == 0 {
            return Ok(self.clone());
        }
        let value = resample::pad_even_forward(view3(self.value())).into_dyn();
        Ok(Self::from_op(value, vec![self.clone()], move |g, _| {
            vec![Some(resample::pad_even_backward(view3(g), h, w).into_dyn())]
        }))
    }

    fn even_dims(&self, op: &str) -> Result<(usize, usize)> {
        let (_, h, w) = self.dims3()?;
        if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
            return contract(format!("{op}: needs even spatial dims, got {h}×{w}"));
        }
        Ok((h, w))
    }

    pub fn avg_pool2(&self) -> Result<Var<F>> {
        self.even_dims("avg_pool2")?;
        let value = resample::avg_pool2_forward(view3(self.value())).into_dyn();
        Ok(Self::from_op(value, vec![self.clone()], |g, _| {
            vec![Some(resample::avg_pool2_backward(view3(g)).into_dyn())]
        }))
    }

    pub fn max_pool2(&self) -> Result<Var<F>> {
        let (h, w) = self.even_dims("max_pool2")?;
        let (value, arg) = resample::max_pool2_forward(view3(self.value()));
        Ok(Self::from_op(value.into_dyn(), vec![self.clone()], move |g, _| {
            vec![Some(resample::max_pool2_backward(view3(g), &arg, h, w).into_dyn())]
        }))
    }

    pub fn bilinear_down2(&self) -> Result<Var<F>> {
        let (h, w) = self.even_dims("bilinear_down2")?;
        let value = resample::bilinear_down2_forward(view3(self.value())).into_dyn();
        Ok(Self::from_op(value, vec![self.clone()], move |g, _| {
            vec![Some(resample::bilinear_down2_backward(view3(g), h, w).into_dyn())]
        }))
    }

    /// Bilinear ×2 enlargement cropped to `out_h × out_w` (each ≤ twice the input).
    pub fn upsample2(&self, out_h: usize, out_w: usize) -> Result<Var<F>> {
        let (_, h, w) = self.dims3()?;
        if out_h > 2 * h || out_w > 2 * w || out_h == 0 || out_w == 0 {
            return contract(format!("upsample2: {h}×{w} cannot produce {out_h}×{out_w}"));
        }
        let value = resample::upsample2_forward(view3(self.value()), out_h, out_w).into_dyn();
        Ok(Self::from_op(value, vec![self.clone()], move |g, _| {
            vec![Some(resample::upsample2_backward(view3(g), h, w).into_dyn())]
        }))
    }

    /// Reverse-mode pass from a scalar.
    pub fn backward(&self) -> Result<Gradients<F>> {
        if self.value().len() != 1 {
            return contract(format!("backward needs a scalar, got shape {:?}", self.shape()));
        }
        let mut grads: HashMap<usize, ArrayD<F>> = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { grads });
        }

        let mut order: Vec<Var<F>> = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !visited.insert(v.0.id) {
                continue;
            }
            stack.push((v.clone(), true));
            if let Some(gf) = &v.0.grad_fn {
                for p in gf.parents.iter().filter(|p| p.requires_grad()) {
                    if !visited.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        grads.insert(self.0.id, ArrayD::from_elem(self.value().raw_dim(), F::one()));
        for v in order.iter().rev() {
            let Some(gf) = &v.0.grad_fn else { continue };
            let Some(g) = grads.remove(&v.0.id) else { continue };
            let parent_grads = (gf.backward)(&g, &gf.parents);
            for (p, pg) in gf.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                match grads.get_mut(&p.0.id) {
                    Some(acc) => *acc += &pg,
                    None => {
                        grads.insert(p.0.id, pg);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Element-wise conversion between precisions.
pub fn cast<A: Real, B: Real>(a: &ArrayD<A>) -> ArrayD<B> {
    a.mapv(|v| B::lit(v.as_f64()))
}
