//! The multi-frame restoration network and its ablation variants.

mod checkpoint;
mod config;
mod net;
mod params;

use ndarray::{Array3, Axis, Ix3};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Variant};
pub use net::{NetInputs, NetOutputs};
pub use params::{layout, Init, ModelParams, ParamSpec, ParamVars};

use crate::error::{contract, Error, Result};
use crate::flow::{align_window, AlignedWindow, FlowEstimator};
use crate::numcore::{cast, ConvSpec, FeatureMap, Plane, Real, Var};
use net::Net;

/// `2T + 1` consecutive transcoded frames and the centre frame's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    frames: Vec<Plane>,
    pub label_init: Option<Plane>,
    pub label_raw: Option<Plane>,
}

impl ClipSample {
    pub fn new(frames: Vec<Plane>, label_init: Option<Plane>, label_raw: Option<Plane>) -> Result<Self> {
        if frames.len().is_multiple_of(2) {
            return contract(format!("a window needs an odd number of frames, got {}", frames.len()));
        }
        let dim = frames[0].dim();
        let labels = label_init.iter().chain(label_raw.iter());
        if frames.iter().chain(labels).any(|p| p.dim() != dim) {
            return contract("all frames and labels of a clip must share one shape");
        }
        Ok(Self {
            frames,
            label_init,
            label_raw,
        })
    }

    pub fn frames(&self) -> &[Plane] {
        &self.frames
    }

    pub fn center_index(&self) -> usize {
        self.frames.len() / 2
    }

    pub fn temporal_radius(&self) -> usize {
        self.frames.len() / 2
    }

    pub fn center(&self) -> &Plane {
        &self.frames[self.center_index()]
    }

    pub fn dim(&self) -> (usize, usize) {
        self.center().dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorationOutput {
    pub restored: Plane,
    /// Present for the full network only.
    pub intermediate: Option<Plane>,
}

fn stack(planes: &[Plane]) -> Array3<f32> {
    let views: Vec<_> = planes.iter().map(|p| p.data().view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("planes share a shape")
}

fn constant<F: Real>(a: Array3<f32>) -> Var<F> {
    Var::constant(cast::<f32, F>(&a.into_dyn()))
}

/// Graph inputs for one window in precision `F`.
pub fn net_inputs<F: Real>(clip: &ClipSample, aligned: &AlignedWindow) -> NetInputs<F> {
    NetInputs {
        aligned: constant(stack(&aligned.planes)),
        window: constant(stack(clip.frames())),
        center: constant(stack(std::slice::from_ref(clip.center()))),
        flows: constant(aligned.flow_stack()),
    }
}

/// Differentiable forward pass; parameter values come from `vars`.
pub fn build_graph<F: Real>(cfg: &ModelConfig, vars: &ParamVars<F>, inputs: &NetInputs<F>) -> Result<NetOutputs<F>> {
    Net { p: vars, cfg }.forward(inputs)
}

pub(crate) fn var_to_array3(v: &Var<f32>) -> Result<Array3<f32>> {
    v.value()
        .view()
        .into_dimensionality::<Ix3>()
        .map(|a| a.to_owned())
        .map_err(|e| Error::Contract(e.to_string()))
}

fn var_to_plane(v: &Var<f32>) -> Result<Plane> {
    let a = var_to_array3(v)?;
    if a.dim().0 != 1 {
        return contract("expected a single-channel output");
    }
    Plane::new(a.index_axis_move(Axis(0), 0))
}

fn var_to_map(v: &Var<f32>) -> Result<FeatureMap> {
    FeatureMap::new(var_to_array3(v)?)
}

fn check_window(clip: &ClipSample, cfg: &ModelConfig) -> Result<()> {
    if clip.frames().len() != cfg.window_len() {
        return contract(format!(
            "model expects {} frames per window, clip has {}",
            cfg.window_len(),
            clip.frames().len()
        ));
    }
    Ok(())
}

/// Align the window and restore its centre frame.
pub fn forward(clip: &ClipSample, params: &ModelParams, estimator: &dyn FlowEstimator) -> Result<RestorationOutput> {
    check_window(clip, params.config())?;
    let aligned = align_window(clip, estimator, params.config().alignment())?;
    forward_aligned(clip, &aligned, params)
}

/// Restore the centre frame given precomputed alignment.
pub fn forward_aligned(clip: &ClipSample, aligned: &AlignedWindow, params: &ModelParams) -> Result<RestorationOutput> {
    check_window(clip, params.config())?;
    let vars = params.vars::<f32>(false);
    let out = build_graph(params.config(), &vars, &net_inputs(clip, aligned))?;
    Ok(RestorationOutput {
        restored: var_to_plane(&out.restored)?,
        intermediate: out.intermediate.as_ref().map(var_to_plane).transpose()?,
    })
}

fn inference_net<R>(params: &ModelParams, f: impl FnOnce(&Net<'_, f32>) -> Result<R>) -> Result<R> {
    let vars = params.vars::<f32>(false);
    f(&Net {
        p: &vars,
        cfg: params.config(),
    })
}

/// Aligned features for the window's centre.
pub fn tdam_forward(clip: &ClipSample, aligned: &AlignedWindow, params: &ModelParams) -> Result<FeatureMap> {
    check_window(clip, params.config())?;
    inference_net(params, |net| var_to_map(&net.tdam(&net_inputs(clip, aligned))?))
}

pub fn psfm_forward(f: &FeatureMap, params: &ModelParams) -> Result<FeatureMap> {
    if params.config().variant == Variant::V1 {
        return contract("variant v1 has no pyramidal fusion stage");
    }
    check_channels(f, params)?;
    inference_net(params, |net| var_to_map(&net.psfm(&constant(f.data().clone()))?))
}

/// Returns the intermediate restoration and the refined features.
pub fn asam_forward(f: &FeatureMap, center: &Plane, params: &ModelParams) -> Result<(Plane, FeatureMap)> {
    if params.config().variant != Variant::Full {
        return contract("only the full network has the attention stage");
    }
    check_channels(f, params)?;
    inference_net(params, |net| {
        let (h, r) = net.asam(&constant(f.data().clone()), &constant(center.to_map().into_data()))?;
        Ok((var_to_plane(&h)?, var_to_map(&r)?))
    })
}

pub fn gsrm_forward(refined: &FeatureMap, center: &Plane, params: &ModelParams) -> Result<Plane> {
    check_channels(refined, params)?;
    let cfg = params.config();
    let blocks = if cfg.variant == Variant::Full {
        cfg.gsrm_blocks
    } else {
        cfg.tail_blocks
    };
    inference_net(params, |net| {
        var_to_plane(&net.gsrm(&constant(refined.data().clone()), &constant(center.to_map().into_data()), blocks)?)
    })
}

fn check_channels(f: &FeatureMap, params: &ModelParams) -> Result<()> {
    if f.channels() != params.config().base_channels {
        return contract(format!(
            "expected {} feature channels, got {}",
            params.config().base_channels,
            f.channels()
        ));
    }
    Ok(())
}

impl ModelParams {
    /// The convolution `layer` as a standalone spec.
    pub fn conv_spec(&self, layer: &str, dilation: usize, stride: usize) -> Result<ConvSpec> {
        let missing = || Error::Contract(format!("model has no layer `{layer}`"));
        let w = self.get(&format!("{layer}.weight")).ok_or_else(missing)?;
        let b = self.get(&format!("{layer}.bias")).ok_or_else(missing)?;
        ConvSpec::new(
            w.clone().into_dimensionality().map_err(|e| Error::Contract(e.to_string()))?,
            b.clone().into_dimensionality().map_err(|e| Error::Contract(e.to_string()))?,
            dilation,
            stride,
        )
    }

    /// The dilated branches of a reconstruction operator (`"asam.hdro"` or
    /// `"gsrm.hdro"`), in configured rate order.
    pub fn hdro_branches(&self, prefix: &str) -> Result<Vec<ConvSpec>> {
        self.config()
            .hdro_rates
            .iter()
            .enumerate()
            .map(|(i, &r)| self.conv_spec(&format!("{prefix}.branch.{i}"), r, 1))
            .collect()
    }
}

/// Window of `2T+1` frame indices around `center`, replicating the first and
/// last frame past the sequence ends.
pub fn window_indices(center: usize, radius: usize, frame_count: usize) -> Vec<usize> {
    (0..=2 * radius)
        .map(|k| (center + k).saturating_sub(radius).min(frame_count - 1))
        .collect()
}

