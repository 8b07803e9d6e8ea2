//! Differentiable numerical substrate: image/feature types, the operators the
//! restoration network is assembled from, and a gradient checker.

mod autograd;
mod conv;
mod gradcheck;
mod ops;
mod real;
mod resample;
pub(crate) mod sample;
mod types;

pub use autograd::{cast, Gradients, Var};
pub use conv::ConvGeometry;
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use ops::{bilinear_warp, conv2d, deform_conv2d, downsample, residual_block, DownsampleMethod, ResidualParams, SpatialMap};
pub use real::Real;
pub use types::{ConvSpec, FeatureMap, FlowField, OffsetField, Plane};
