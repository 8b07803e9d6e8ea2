//! Restoration of transcoded (twice-compressed) video.
//!
//! The crate covers the whole pipeline: synthesis of raw / initial-encode /
//! transcode frame triplets through an external HEVC encoder, a multi-frame
//! restoration network with deformable temporal alignment, pyramidal spatial
//! fusion and auxiliary supervision against the initial-encode label, the
//! dual-supervised objective, PSNR/SSIM evaluation, and the training and
//! evaluation harness.

pub mod datapipe;
pub mod error;
pub mod flow;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;

pub use error::{Error, Result};
pub use flow::{align_window, AlignedWindow, AlignmentMode, FlowEstimator, PyramidalLucasKanade};
pub use losses::{LossConfig, LossReport};
pub use metrics::{DeltaMetrics, FrameMetrics};
pub use model::{ClipSample, ModelConfig, ModelParams, RestorationOutput, Variant};
pub use numcore::{ConvSpec, FeatureMap, FlowField, OffsetField, Plane};
