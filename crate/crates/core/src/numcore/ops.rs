//! Checked, inference-mode entry points over the domain types. Each one
//! delegates to the differentiable [`Var`] operation of the same name.

use std::str::FromStr;

use ndarray::Array3;

use super::types::{ConvSpec, FeatureMap, FlowField, OffsetField, Plane};
use super::Var;
use crate::error::{contract, Error, Result};

/// Anything that can be viewed as a `C × H × W` stack.
pub trait SpatialMap: Sized {
    fn as_stack(&self) -> Array3<f32>;
    fn from_stack(stack: Array3<f32>) -> Result<Self>;
    fn spatial_dim(&self) -> (usize, usize);
}

impl SpatialMap for Plane {
    fn as_stack(&self) -> Array3<f32> {
        self.data().clone().insert_axis(ndarray::Axis(0))
    }

    fn from_stack(stack: Array3<f32>) -> Result<Self> {
        Plane::new(stack.index_axis_move(ndarray::Axis(0), 0))
    }

    fn spatial_dim(&self) -> (usize, usize) {
        self.dim()
    }
}

impl SpatialMap for FeatureMap {
    fn as_stack(&self) -> Array3<f32> {
        self.data().clone()
    }

    fn from_stack(stack: Array3<f32>) -> Result<Self> {
        FeatureMap::new(stack)
    }

    fn spatial_dim(&self) -> (usize, usize) {
        let (_, h, w) = self.dim();
        (h, w)
    }
}

fn constant3(a: Array3<f32>) -> Var<f32> {
    Var::constant(a.into_dyn())
}

fn to_map(v: Var<f32>) -> Result<FeatureMap> {
    let a = v
        .value()
        .view()
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| Error::Contract(e.to_string()))?
        .to_owned();
    FeatureMap::new(a)
}

fn conv_vars(spec: &ConvSpec) -> (Var<f32>, Var<f32>) {
    (
        Var::constant(spec.weights.clone().into_dyn()),
        Var::constant(spec.bias.clone().into_dyn()),
    )
}

/// Bilinear sampling of `src` at `(y + dy, x + dx)`, clamped to the border.
pub fn bilinear_warp<M: SpatialMap>(src: &M, flow: &FlowField) -> Result<M> {
    if src.spatial_dim() != flow.dim() {
        return contract(format!(
            "bilinear_warp: flow {:?} does not match source {:?}",
            flow.dim(),
            src.spatial_dim()
        ));
    }
    let out = constant3(src.as_stack()).warp(&constant3(flow.to_array()))?;
    let a = out.value().view().into_dimensionality::<ndarray::Ix3>().expect("3-d").to_owned();
    M::from_stack(a)
}

pub fn conv2d(input: &FeatureMap, spec: &ConvSpec) -> Result<FeatureMap> {
    if input.channels() != spec.in_channels() {
        return contract(format!(
            "conv2d: input has {} channels, spec expects {}",
            input.channels(),
            spec.in_channels()
        ));
    }
    let (w, b) = conv_vars(spec);
    to_map(constant3(input.data().clone()).conv2d(&w, Some(&b), spec.geometry())?)
}

pub fn deform_conv2d(input: &FeatureMap, spec: &ConvSpec, offsets: &OffsetField) -> Result<FeatureMap> {
    let k = spec.kernel_size();
    if offsets.taps() != k * k {
        return contract(format!(
            "deform_conv2d: offset field has {} taps, kernel has {}",
            offsets.taps(),
            k * k
        ));
    }
    if spec.stride != 1 {
        return contract("deform_conv2d: only stride 1 is supported");
    }
    if input.channels() != spec.in_channels() {
        return contract("deform_conv2d: channel mismatch");
    }
    let (w, b) = conv_vars(spec);
    let off = constant3(offsets.data().clone());
    to_map(constant3(input.data().clone()).deform_conv2d(&off, &w, Some(&b), spec.dilation)?)
}

/// Two 3×3 convolutions with a ReLU between them.
#[derive(Debug, Clone)]
pub struct ResidualParams {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
}

/// `input + conv2(relu(conv1(input)))`.
pub fn residual_block(input: &FeatureMap, params: &ResidualParams) -> Result<FeatureMap> {
    let c = input.channels();
    if params.conv1.in_channels() != c || params.conv2.out_channels() != c {
        return contract("residual_block: branch must preserve the channel count");
    }
    let x = constant3(input.data().clone());
    let (w1, b1) = conv_vars(&params.conv1);
    let (w2, b2) = conv_vars(&params.conv2);
    let branch = x
        .conv2d(&w1, Some(&b1), params.conv1.geometry())?
        .relu()
        .conv2d(&w2, Some(&b2), params.conv2.geometry())?;
    to_map(x.add(&branch)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DownsampleMethod {
    Bilinear,
    AveragePool,
    MaxPool,
    StridedConv,
}

impl DownsampleMethod {
    pub const ALL: [DownsampleMethod; 4] = [
        DownsampleMethod::Bilinear,
        DownsampleMethod::AveragePool,
        DownsampleMethod::MaxPool,
        DownsampleMethod::StridedConv,
    ];
}

impl FromStr for DownsampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "average_pool" | "avg_pool" => Ok(Self::AveragePool),
            "max_pool" => Ok(Self::MaxPool),
            "strided_conv" => Ok(Self::StridedConv),
            other => contract(format!("unknown downsample method `{other}`")),
        }
    }
}

/// Halve the spatial size. Odd sizes are first padded by replication;
/// `StridedConv` needs a 3×3 stride-2 `spec`.
pub fn downsample(input: &FeatureMap, method: DownsampleMethod, spec: Option<&ConvSpec>) -> Result<FeatureMap> {
    let x = constant3(input.data().clone()).pad_even()?;
    let out = match method {
        DownsampleMethod::Bilinear => x.bilinear_down2()?,
        DownsampleMethod::AveragePool => x.avg_pool2()?,
        DownsampleMethod::MaxPool => x.max_pool2()?,
        DownsampleMethod::StridedConv => {
            let Some(spec) = spec else {
                return contract("strided_conv downsampling needs a convolution spec");
            };
            if spec.stride != 2 {
                return contract("strided_conv downsampling needs stride 2");
            }
            let (w, b) = conv_vars(spec);
            x.conv2d(&w, Some(&b), spec.geometry())?
        }
    };
    to_map(out)
}
