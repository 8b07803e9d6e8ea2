use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{AlignmentMode, PyramidalLucasKanade};

/// Which stages of the network are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Alignment followed by a plain reconstruction tail.
    V1,
    /// Alignment and pyramidal fusion followed by the reconstruction tail.
    V2,
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::V1, Variant::V2, Variant::Full];

    /// Whether the variant produces the intermediate restoration.
    pub fn has_intermediate(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::Full => "full",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!("unknown variant `{other}` (expected v1, v2 or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub temporal_radius: usize,
    pub base_channels: usize,
    /// Number of halvings in the pyramidal fusion encoder.
    pub psfm_depth: usize,
    /// Channel width of encoder level `i + 1` as a multiple of `base_channels`.
    pub psfm_multipliers: Vec<usize>,
    pub psfm_res_blocks: usize,
    pub gsrm_blocks: usize,
    /// Residual blocks in the V1/V2 reconstruction tail.
    pub tail_blocks: usize,
    pub hdro_rates: Vec<usize>,
    pub variant: Variant,
    pub flow_levels: usize,
    pub flow_iterations: usize,
    pub direct_alignment: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            temporal_radius: 1,
            base_channels: 64,
            psfm_depth: 3,
            psfm_multipliers: vec![2, 2, 4],
            psfm_res_blocks: 5,
            gsrm_blocks: 10,
            tail_blocks: 5,
            hdro_rates: vec![1, 2, 4],
            variant: Variant::Full,
            flow_levels: 3,
            flow_iterations: 10,
            direct_alignment: false,
        }
    }
}

impl ModelConfig {
    pub fn window_len(&self) -> usize {
        2 * self.temporal_radius + 1
    }

    /// Channels at pyramid level `level` (0 = full resolution).
    pub fn level_width(&self, level: usize) -> usize {
        match level {
            0 => self.base_channels,
            l => self.base_channels * self.psfm_multipliers[l - 1],
        }
    }

    /// Smallest height/width the pyramidal fusion accepts.
    pub fn min_side(&self) -> usize {
        1 << self.psfm_depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.psfm_multipliers.len() != self.psfm_depth {
            return bad(format!(
                "psfm_multipliers has {} entries for psfm_depth {}",
                self.psfm_multipliers.len(),
                self.psfm_depth
            ));
        }
        if self.psfm_multipliers.contains(&0) {
            return bad("psfm_multipliers must be positive".into());
        }
        if self.hdro_rates.is_empty() || self.hdro_rates.contains(&0) {
            return bad("hdro_rates must be non-empty and positive".into());
        }
        if self.gsrm_blocks < self.tail_blocks {
            return bad(format!(
                "tail_blocks ({}) cannot exceed gsrm_blocks ({}): the tail reuses the leading reconstruction blocks",
                self.tail_blocks, self.gsrm_blocks
            ));
        }
        if self.flow_levels == 0 || self.flow_iterations == 0 {
            return bad("flow_levels and flow_iterations must be positive".into());
        }
        Ok(())
    }

    pub fn estimator(&self) -> PyramidalLucasKanade {
        PyramidalLucasKanade {
            pyramid_levels: self.flow_levels,
            iterations_per_level: self.flow_iterations,
            ..PyramidalLucasKanade::default()
        }
    }

    pub fn alignment(&self) -> AlignmentMode {
        if self.direct_alignment {
            AlignmentMode::Direct
        } else {
            AlignmentMode::Chained
        }
    }

    /// True for the published block counts and dilation rates.
    pub fn is_reference_configuration(&self) -> bool {
        self.gsrm_blocks == 10 && self.psfm_res_blocks == 5 && self.hdro_rates == [1, 2, 4]
    }
}
