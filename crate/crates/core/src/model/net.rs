//! The restoration network as a differentiable graph over [`Var`]s.

use super::config::{ModelConfig, Variant};
use super::params::{ParamVars, DEFORM_KERNEL, OFFSET_CHANNELS};
use crate::error::{contract, Result};
use crate::numcore::{ConvGeometry, Real, Var};

/// Network inputs for one window, each `C×H×W`.
pub struct NetInputs<F: Real> {
    /// Neighbours warped onto the centre, in temporal order.
    pub aligned: Var<F>,
    /// Unaligned window, in temporal order.
    pub window: Var<F>,
    pub center: Var<F>,
    /// Cumulative flows to the centre, `[dx, dy]` per frame.
    pub flows: Var<F>,
}

pub struct NetOutputs<F: Real> {
    /// Intermediate restoration, only produced by the full network.
    pub intermediate: Option<Var<F>>,
    pub restored: Var<F>,
}

pub(crate) struct Net<'a, F: Real> {
    pub p: &'a ParamVars<F>,
    pub cfg: &'a ModelConfig,
}

impl<F: Real> Net<'_, F> {
    pub fn conv(&self, layer: &str, x: &Var<F>, dilation: usize, stride: usize) -> Result<Var<F>> {
        let w = self.p.get(&format!("{layer}.weight"))?;
        let b = self.p.get(&format!("{layer}.bias"))?;
        let k = w.shape()[2];
        x.conv2d(w, Some(b), ConvGeometry::same(k, dilation, stride))
    }

    pub fn res(&self, layer: &str, x: &Var<F>) -> Result<Var<F>> {
        let h = self.conv(&format!("{layer}.conv1"), x, 1, 1)?.relu();
        x.add(&self.conv(&format!("{layer}.conv2"), &h, 1, 1)?)
    }

    /// Parallel dilated branches fused into a single-channel map.
    pub fn hdro(&self, layer: &str, f: &Var<F>) -> Result<Var<F>> {
        let branches = self
            .cfg
            .hdro_rates
            .iter()
            .enumerate()
            .map(|(i, &r)| Ok(self.conv(&format!("{layer}.branch.{i}"), f, r, 1)?.relu()))
            .collect::<Result<Vec<_>>>()?;
        self.conv(&format!("{layer}.rec"), &Var::cat(&branches)?, 1, 1)
    }

    /// Predicted per-tap offsets, clamped to a quarter of the frame.
    pub fn offsets(&self, inp: &NetInputs<F>) -> Result<Var<F>> {
        let (_, h, w) = inp.center.dims3()?;
        let x = Var::cat(&[inp.aligned.clone(), inp.center.clone()])?;
        let x = self.conv("tdam.fe.0", &x, 1, 1)?.relu();
        let x = self.conv("tdam.fe.1", &x, 1, 1)?.relu();
        let excitation = self.conv("tdam.fe.2", &x, 1, 1)?;
        let motion = self.conv("tdam.motion", &inp.flows, 1, 1)?;
        let limits: Vec<F> = (0..OFFSET_CHANNELS)
            .map(|c| F::lit(if c % 2 == 0 { h } else { w } as f64 / 4.0))
            .collect();
        excitation.add(&motion)?.clamp_channels(&limits)
    }

    pub fn tdam_with_offsets(&self, inp: &NetInputs<F>, offsets: &Var<F>) -> Result<Var<F>> {
        let feat = self.conv("tdam.feat", &inp.window, 1, 1)?.relu();
        let w = self.p.get("tdam.dconv.weight")?;
        let b = self.p.get("tdam.dconv.bias")?;
        debug_assert_eq!(w.shape()[2], DEFORM_KERNEL);
        Ok(feat.deform_conv2d(offsets, w, Some(b), 1)?.relu())
    }

    pub fn tdam(&self, inp: &NetInputs<F>) -> Result<Var<F>> {
        let offsets = self.offsets(inp)?;
        self.tdam_with_offsets(inp, &offsets)
    }

    pub fn psfm(&self, f: &Var<F>) -> Result<Var<F>> {
        let (_, h, w) = f.dims3()?;
        let min = self.cfg.min_side();
        if h < min || w < min {
            return contract(format!(
                "pyramidal fusion with depth {} needs at least {min}×{min} input, got {h}×{w}",
                self.cfg.psfm_depth
            ));
        }
        let mut skips = vec![self.res("psfm.enc0", f)?];
        for i in 0..self.cfg.psfm_depth {
            let x = skips.last().expect("non-empty").pad_even()?;
            let strided = self.conv(&format!("psfm.down.{i}.strided"), &x, 1, 2)?.relu();
            let merged = Var::cat(&[x.bilinear_down2()?, x.avg_pool2()?, x.max_pool2()?, strided])?;
            let fused = self.conv(&format!("psfm.down.{i}.fuse"), &merged, 1, 1)?.relu();
            skips.push(self.res(&format!("psfm.down.{i}.res"), &fused)?);
        }
        let mut x = skips.pop().expect("deepest level");
        for i in (0..self.cfg.psfm_depth).rev() {
            let skip = &skips[i];
            let (_, sh, sw) = skip.dims3()?;
            let up = self.conv(&format!("psfm.up.{i}.conv"), &x.upsample2(sh, sw)?, 1, 1)?.relu();
            x = self.res(&format!("psfm.up.{i}.res"), &up.add(skip)?)?;
        }
        for i in 0..self.cfg.psfm_res_blocks {
            x = self.res(&format!("psfm.tail.{i}"), &x)?;
        }
        Ok(x)
    }

    /// Returns `(intermediate, refined features)`.
    pub fn asam(&self, f: &Var<F>, center: &Var<F>) -> Result<(Var<F>, Var<F>)> {
        let intermediate = center.add(&self.hdro("asam.hdro", f)?)?;
        let excited = self.conv("asam.excite", &intermediate, 1, 1)?;
        let attention = excited.sigmoid();
        let refined = self.conv("asam.trans", f, 1, 1)?.relu().mul(&attention)?;
        Ok((intermediate, refined.add(&excited)?))
    }

    pub fn gsrm(&self, f: &Var<F>, center: &Var<F>, blocks: usize) -> Result<Var<F>> {
        let mut x = f.clone();
        for i in 0..blocks {
            x = self.res(&format!("gsrm.res.{i}"), &x)?;
        }
        center.add(&self.hdro("gsrm.hdro", &x)?)
    }

    pub fn forward(&self, inp: &NetInputs<F>) -> Result<NetOutputs<F>> {
        let f = self.tdam(inp)?;
        match self.cfg.variant {
            Variant::V1 => Ok(NetOutputs {
                intermediate: None,
                restored: self.gsrm(&f, &inp.center, self.cfg.tail_blocks)?,
            }),
            Variant::V2 => {
                let f = self.psfm(&f)?;
                Ok(NetOutputs {
                    intermediate: None,
                    restored: self.gsrm(&f, &inp.center, self.cfg.tail_blocks)?,
                })
            }
            Variant::Full => {
                let f = self.psfm(&f)?;
                let (intermediate, refined) = self.asam(&f, &inp.center)?;
                Ok(NetOutputs {
                    intermediate: Some(intermediate),
                    restored: self.gsrm(&refined, &inp.center, self.cfg.gsrm_blocks)?,
                })
            }
        }
    }
}
