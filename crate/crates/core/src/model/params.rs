use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::numcore::{cast, Real, Var};

/// Offsets are predicted for a 3×3 deformable kernel.
pub(crate) const DEFORM_KERNEL: usize = 3;
pub(crate) const OFFSET_CHANNELS: usize = 2 * DEFORM_KERNEL * DEFORM_KERNEL;

/// One named parameter tensor of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Starts at zero under the default initialization.
    pub zero_init: bool,
    /// Convolution fan-in, zero for biases.
    pub fan_in: usize,
}

struct Layout(Vec<ParamSpec>);

impl Layout {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero_init: bool) {
        self.0.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            zero_init,
            fan_in: cin * k * k,
        });
        self.0.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            zero_init: true,
            fan_in: 0,
        });
    }

    fn res(&mut self, name: &str, c: usize) {
        self.conv(&format!("{name}.conv1"), c, c, 3, false);
        self.conv(&format!("{name}.conv2"), c, c, 3, true);
    }

    fn hdro(&mut self, name: &str, c: usize, rates: &[usize]) {
        for i in 0..rates.len() {
            self.conv(&format!("{name}.branch.{i}"), c, c, 3, false);
        }
        self.conv(&format!("{name}.rec"), c * rates.len(), 1, 3, true);
    }
}

/// Every parameter the configuration needs, in a fixed order.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.base_channels;
    let n = cfg.window_len();
    let mut l = Layout(Vec::new());

    l.conv("tdam.fe.0", n + 1, c, 3, false);
    l.conv("tdam.fe.1", c, c, 3, false);
    l.conv("tdam.fe.2", c, OFFSET_CHANNELS, 3, true);
    l.conv("tdam.motion", 2 * n, OFFSET_CHANNELS, 3, true);
    l.conv("tdam.feat", n, c, 3, false);
    l.conv("tdam.dconv", c, c, DEFORM_KERNEL, false);

    if cfg.variant != Variant::V1 {
        l.res("psfm.enc0", c);
        for i in 0..cfg.psfm_depth {
            let (cin, cout) = (cfg.level_width(i), cfg.level_width(i + 1));
            l.conv(&format!("psfm.down.{i}.strided"), cin, cin, 3, false);
            l.conv(&format!("psfm.down.{i}.fuse"), 4 * cin, cout, 1, false);
            l.res(&format!("psfm.down.{i}.res"), cout);
        }
        for i in (0..cfg.psfm_depth).rev() {
            let (cin, cout) = (cfg.level_width(i + 1), cfg.level_width(i));
            l.conv(&format!("psfm.up.{i}.conv"), cin, cout, 3, false);
            l.res(&format!("psfm.up.{i}.res"), cout);
        }
        for i in 0..cfg.psfm_res_blocks {
            l.res(&format!("psfm.tail.{i}"), c);
        }
    }

    if cfg.variant == Variant::Full {
        l.hdro("asam.hdro", c, &cfg.hdro_rates);
        l.conv("asam.excite", 1, c, 3, false);
        l.conv("asam.trans", c, c, 3, false);
    }

    let blocks = if cfg.variant == Variant::Full {
        cfg.gsrm_blocks
    } else {
        cfg.tail_blocks
    };
    for i in 0..blocks {
        l.res(&format!("gsrm.res.{i}"), c);
    }
    l.hdro("gsrm.hdro", c, &cfg.hdro_rates);
    l.0
}

/// How to fill a freshly constructed parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Fan-in scaled normal weights; the last layer of every residual branch,
    /// of each reconstruction operator and of offset prediction starts at
    /// zero so the network begins as the identity on the centre frame.
    Default,
    /// Fan-in scaled normal weights everywhere and small random biases.
    Random,
    Zeros,
}

/// Named parameter tensors plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, ArrayD<f32>>,
}

impl ModelParams {
    pub fn new(config: ModelConfig, init: Init, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in layout(&config) {
            let dim = IxDyn(&spec.shape);
            let value = match init {
                Init::Zeros => ArrayD::zeros(dim),
                Init::Default if spec.zero_init => ArrayD::zeros(dim),
                _ if spec.fan_in == 0 && init == Init::Default => ArrayD::zeros(dim),
                _ => {
                    let std = if spec.fan_in == 0 {
                        0.05
                    } else {
                        (2.0 / spec.fan_in as f64).sqrt()
                    };
                    let normal = Normal::new(0.0, std).expect("positive std");
                    ArrayD::from_shape_simple_fn(dim, || normal.sample(&mut rng) as f32)
                }
            };
            tensors.insert(spec.name, value);
        }
        let params = Self { config, tensors };
        log::debug!("constructed {} parameters", params.param_count());
        Ok(params)
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(config, Init::Default, seed)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Self::new(config, Init::Zeros, 0)
    }

    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(config, Init::Random, seed)
    }

    /// Rebuild from stored tensors, checking names and shapes against the
    /// configuration.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, ArrayD<f32>>) -> Result<Self> {
        config.validate()?;
        let specs = layout(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this configuration, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for spec in &specs {
            let t = tensors
                .get(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("tensor `{}` contains non-finite values", spec.name)));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f32>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f32>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f32>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Wrap every tensor as a graph value in precision `F`.
    pub fn vars<F: Real>(&self, trainable: bool) -> ParamVars<F> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let value = cast::<f32, F>(v);
                (k.clone(), if trainable { Var::leaf(value) } else { Var::constant(value) })
            })
            .collect();
        ParamVars(vars)
    }
}

/// Parameters as graph values, keyed by name.
pub struct ParamVars<F: Real>(pub(crate) BTreeMap<String, Var<F>>);

impl<F: Real> ParamVars<F> {
    pub fn get(&self, name: &str) -> Result<&Var<F>> {
        self.0
            .get(name)
            .ok_or_else(|| Error::Contract(format!("model has no parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var<F>)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl<F: Real> FromIterator<(String, Var<F>)> for ParamVars<F> {
    fn from_iter<I: IntoIterator<Item = (String, Var<F>)>>(iter: I) -> Self {
        ParamVars(iter.into_iter().collect())
    }
}
