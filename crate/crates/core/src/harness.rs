//! Training, inference, evaluation and ablation drivers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datapipe::{
    read_yuv420, sample_clip, write_yuv420, DatasetManifest, Geometry, PatchSpec, SequenceRecord, TripletFrames,
};
use crate::error::{contract, Error, IoContext, Result};
use crate::flow::{align_window, AlignedWindow, FlowEstimator};
use crate::losses::{loss_total, weighted_item_loss, LossConfig, LossReport};
use crate::metrics::{delta_metrics, write_frame_csv, FrameMetrics};
use crate::model::{
    build_graph, forward, net_inputs, save_checkpoint, window_indices, ClipSample, ModelConfig, ModelParams, Variant,
};
use crate::numcore::{Plane, Var};

/// Parameter count of the published network.
pub const PUBLISHED_PARAMS: usize = 5_750_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_iterations: u64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub patch_size: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_interval: u64,
    /// 0 disables validation.
    pub validation_interval: u64,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-4,
            max_iterations: 300_000,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
            patch_size: 64,
            checkpoint_interval: 10_000,
            validation_interval: 10_000,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if self.patch_size == 0 || self.log_interval == 0 {
            return Err(Error::Config("patch_size and log_interval must be positive".into()));
        }
        LossConfig::new(self.loss.alpha, self.loss.beta).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Loss weights actually used for `variant`: without an intermediate
    /// output the auxiliary term is dropped.
    pub fn effective_loss(&self, variant: Variant) -> LossConfig {
        if variant.has_intermediate() {
            self.loss
        } else {
            LossConfig { alpha: 0.0, ..self.loss }
        }
    }
}

/// Training and model configuration together, as read from a config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

fn list(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| format!("{s}: {e}")))
        .collect()
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "batch_size",
        "learning_rate",
        "max_iterations",
        "adam_beta1",
        "adam_beta2",
        "adam_epsilon",
        "alpha",
        "beta",
        "seed",
        "patch_size",
        "checkpoint_interval",
        "validation_interval",
        "log_interval",
        "temporal_radius",
        "base_channels",
        "psfm_depth",
        "psfm_multipliers",
        "psfm_res_blocks",
        "gsrm_blocks",
        "tail_blocks",
        "hdro_rates",
        "variant",
        "flow_levels",
        "flow_iterations",
        "direct_alignment",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| e.to_string())
        }
        let (t, m) = (&mut self.train, &mut self.model);
        let r: std::result::Result<(), String> = (|| {
            match key {
                "batch_size" => t.batch_size = p(value)?,
                "learning_rate" => t.learning_rate = p(value)?,
                "max_iterations" => t.max_iterations = p(value)?,
                "adam_beta1" => t.adam.beta1 = p(value)?,
                "adam_beta2" => t.adam.beta2 = p(value)?,
                "adam_epsilon" => t.adam.epsilon = p(value)?,
                "alpha" => t.loss.alpha = p(value)?,
                "beta" => t.loss.beta = p(value)?,
                "seed" => t.seed = p(value)?,
                "patch_size" => t.patch_size = p(value)?,
                "checkpoint_interval" => t.checkpoint_interval = p(value)?,
                "validation_interval" => t.validation_interval = p(value)?,
                "log_interval" => t.log_interval = p(value)?,
                "temporal_radius" => m.temporal_radius = p(value)?,
                "base_channels" => m.base_channels = p(value)?,
                "psfm_depth" => m.psfm_depth = p(value)?,
                "psfm_multipliers" => m.psfm_multipliers = list(value)?,
                "psfm_res_blocks" => m.psfm_res_blocks = p(value)?,
                "gsrm_blocks" => m.gsrm_blocks = p(value)?,
                "tail_blocks" => m.tail_blocks = p(value)?,
                "hdro_rates" => m.hdro_rates = list(value)?,
                "variant" => m.variant = p(value)?,
                "flow_levels" => m.flow_levels = p(value)?,
                "flow_iterations" => m.flow_iterations = p(value)?,
                "direct_alignment" => m.direct_alignment = p(value)?,
                _ => return Err(format!("unknown key (known: {})", Self::KEYS.join(", "))),
            }
            Ok(())
        })();
        r.map_err(|e| Error::Config(format!("`{key} = {value}`: {e}")))
    }

    /// Line-oriented `key = value`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn to_text(&self) -> String {
        let (t, m) = (&self.train, &self.model);
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("max_iterations", t.max_iterations.to_string()),
            ("adam_beta1", t.adam.beta1.to_string()),
            ("adam_beta2", t.adam.beta2.to_string()),
            ("adam_epsilon", t.adam.epsilon.to_string()),
            ("alpha", t.loss.alpha.to_string()),
            ("beta", t.loss.beta.to_string()),
            ("seed", t.seed.to_string()),
            ("patch_size", t.patch_size.to_string()),
            ("checkpoint_interval", t.checkpoint_interval.to_string()),
            ("validation_interval", t.validation_interval.to_string()),
            ("log_interval", t.log_interval.to_string()),
            ("temporal_radius", m.temporal_radius.to_string()),
            ("base_channels", m.base_channels.to_string()),
            ("psfm_depth", m.psfm_depth.to_string()),
            ("psfm_multipliers", join(&m.psfm_multipliers)),
            ("psfm_res_blocks", m.psfm_res_blocks.to_string()),
            ("gsrm_blocks", m.gsrm_blocks.to_string()),
            ("tail_blocks", m.tail_blocks.to_string()),
            ("hdro_rates", join(&m.hdro_rates)),
            ("variant", m.variant.to_string()),
            ("flow_levels", m.flow_levels.to_string()),
            ("flow_iterations", m.flow_iterations.to_string()),
            ("direct_alignment", m.direct_alignment.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Adam with bias correction; state is keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    step: i32,
    m: BTreeMap<String, ArrayD<f32>>,
    v: BTreeMap<String, ArrayD<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, lr: f64) -> Self {
        Self {
            cfg,
            lr,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, ArrayD<f32>>) {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr as f32, self.cfg.epsilon as f32);
        let (keep1, take1, keep2, take2) = (b1 as f32, (1.0 - b1) as f32, b2 as f32, (1.0 - b2) as f32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.to_string()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = keep1 * *m + take1 * g;
                *v = keep2 * *v + take2 * g * g;
                let m_hat = *m / c1 as f32;
                let v_hat = *v / c2 as f32;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

/// Sequences held in memory for training, with the `(sequence, centre)`
/// pairs that batches are drawn from.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub sequences: Vec<TripletFrames>,
    pub samples: Vec<(usize, usize)>,
    /// Clips used for validation; whole frames.
    pub validation: Vec<TripletFrames>,
}

impl TrainingData {
    /// Every frame of every sequence is a training centre.
    pub fn new(sequences: Vec<TripletFrames>, validation: Vec<TripletFrames>) -> Result<Self> {
        if sequences.is_empty() {
            return contract("training needs at least one sequence");
        }
        let samples = sequences
            .iter()
            .enumerate()
            .flat_map(|(s, t)| (0..t.frame_count()).map(move |c| (s, c)))
            .collect();
        Ok(Self {
            sequences,
            samples,
            validation,
        })
    }

    /// Loads every sequence of a manifest; ids listed in `validation_ids`
    /// are held out for validation.
    pub fn from_manifest(manifest: &DatasetManifest, validation_ids: &[String]) -> Result<Self> {
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for rec in &manifest.sequences {
            let t = TripletFrames::load(rec)?;
            if validation_ids.contains(&rec.id) {
                val.push(t);
            } else {
                train.push(t);
            }
        }
        Self::new(train, val)
    }

    /// Content hash over every luma sample, in sequence order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.sequences.iter().chain(&self.validation) {
            h.update(t.id.as_bytes());
            for p in t.raw.iter().chain(&t.initial).chain(&t.transcoded) {
                h.update(p.to_u8());
            }
        }
        for (s, c) in &self.samples {
            h.update((*s as u64).to_le_bytes());
            h.update((*c as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: u64,
    pub loss_a: f64,
    pub loss_g: f64,
    pub total: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub iteration: u64,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub iteration: u64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub total: usize,
    pub published: usize,
    /// `total / published − 1`.
    pub deviation: f64,
    /// Present when the deviation exceeds ±30%.
    pub explanation: Option<String>,
}

impl ParamReport {
    pub fn new(params: &ModelParams) -> Self {
        let total = params.param_count();
        let deviation = total as f64 / PUBLISHED_PARAMS as f64 - 1.0;
        let explanation = (deviation.abs() > 0.3).then(|| explain_deviation(params.config()));
        Self {
            total,
            published: PUBLISHED_PARAMS,
            deviation,
            explanation,
        }
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "parameters: {} (published {}, deviation {:+.1}%)",
            self.total,
            self.published,
            100.0 * self.deviation
        );
        if let Some(e) = &self.explanation {
            let _ = write!(s, "; {e}");
        }
        s
    }
}

fn explain_deviation(cfg: &ModelConfig) -> String {
    let reference = ModelConfig::default();
    let mut diffs = Vec::new();
    if cfg.base_channels != reference.base_channels {
        diffs.push(format!(
            "base_channels = {} instead of {} (convolution weights scale with its square)",
            cfg.base_channels, reference.base_channels
        ));
    }
    if cfg.variant != Variant::Full {
        diffs.push(format!("variant {} omits stages of the full network", cfg.variant));
    }
    for (name, a, b) in [
        ("psfm_depth", cfg.psfm_depth, reference.psfm_depth),
        ("psfm_res_blocks", cfg.psfm_res_blocks, reference.psfm_res_blocks),
        ("gsrm_blocks", cfg.gsrm_blocks, reference.gsrm_blocks),
        ("tail_blocks", cfg.tail_blocks, reference.tail_blocks),
        ("temporal_radius", cfg.temporal_radius, reference.temporal_radius),
    ] {
        if a != b {
            diffs.push(format!("{name} = {a} instead of {b}"));
        }
    }
    if cfg.psfm_multipliers != reference.psfm_multipliers {
        diffs.push(format!("psfm_multipliers = {:?} instead of {:?}", cfg.psfm_multipliers, reference.psfm_multipliers));
    }
    if cfg.hdro_rates.len() != reference.hdro_rates.len() {
        diffs.push(format!("{} dilation branches instead of {}", cfg.hdro_rates.len(), reference.hdro_rates.len()));
    }
    if diffs.is_empty() {
        "reference configuration; the published count covers layers whose widths are not given".into()
    } else {
        format!("reduced configuration: {}", diffs.join("; "))
    }
}

fn unix_secs() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Append-only record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    /// Loss weights after variant adjustment.
    pub effective_loss: LossConfig,
    pub dataset_hash: String,
    pub params: ParamReport,
    pub history: Vec<HistoryEntry>,
    pub validation: Vec<ValidationEntry>,
    pub checkpoints: Vec<CheckpointEntry>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path).at(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush().at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).at(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    /// Total loss per logged iteration.
    pub fn loss_curve(&self) -> Vec<(u64, f64)> {
        self.history.iter().map(|h| (h.iteration, h.total)).collect()
    }
}

/// Where a run writes checkpoints and its manifest.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
}

pub const RUN_MANIFEST: &str = "run.json";

/// Loss value and parameter gradients of one batch.
pub struct BatchGradients {
    pub report: LossReport,
    pub grads: BTreeMap<String, ArrayD<f32>>,
}

/// Auxiliary loss, global loss and parameter gradients of one sample.
type ItemGradients = (f64, f64, BTreeMap<String, ArrayD<f32>>);

/// Per-sample graphs evaluated in parallel and summed in sample order, so
/// the result does not depend on the thread count.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[(ClipSample, AlignedWindow)],
    loss: LossConfig,
) -> Result<BatchGradients> {
    if batch.is_empty() {
        return contract("empty batch");
    }
    let n = batch.len();
    let items: Vec<Result<ItemGradients>> = batch
        .par_iter()
        .map(|(clip, aligned)| {
            let (Some(y_init), Some(y_raw)) = (&clip.label_init, &clip.label_raw) else {
                return contract("training clips need both labels");
            };
            let vars = params.vars::<f32>(true);
            let out = build_graph(params.config(), &vars, &net_inputs(clip, aligned))?;
            let label = |p: &Plane| Var::<f32>::constant(p.to_map().into_data().into_dyn());
            let (y_init, y_raw) = (label(y_init), label(y_raw));
            let item = weighted_item_loss(
                out.intermediate.as_ref().map(|h| (h, &y_init)),
                (&out.restored, &y_raw),
                loss,
                n,
            )?;
            let la = match &out.intermediate {
                Some(h) => h.value().iter().zip(y_init.value().iter()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
                    / h.value().len() as f64,
                None => 0.0,
            };
            let r = out.restored.value();
            let lg = r.iter().zip(y_raw.value().iter()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / r.len() as f64;
            let g = item.backward()?;
            let grads = vars.iter().map(|(k, v)| (k.to_string(), g.get_or_zeros(v))).collect();
            Ok((la, lg, grads))
        })
        .collect();
    let mut total: BTreeMap<String, ArrayD<f32>> = BTreeMap::new();
    let (mut la, mut lg) = (0.0, 0.0);
    for item in items {
        let (a, g, grads) = item?;
        la += a / n as f64;
        lg += g / n as f64;
        for (k, v) in grads {
            match total.get_mut(&k) {
                Some(acc) => *acc += &v,
                None => {
                    total.insert(k, v);
                }
            }
        }
    }
    Ok(BatchGradients {
        report: loss_total(la, lg, loss),
        grads: total,
    })
}

/// Draws training batches in a seeded order, reshuffling after every pass.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Alignment of training clips, cached because flow estimation dominates the
/// cost of small models and repeated crops are common when overfitting.
struct AlignCache {
    map: HashMap<(usize, usize, Vec<u8>), AlignedWindow>,
}

impl AlignCache {
    const CAPACITY: usize = 4096;

    fn get(&mut self, key: (usize, usize), clip: &ClipSample, est: &dyn FlowEstimator, cfg: &ModelConfig) -> Result<AlignedWindow> {
        let fingerprint = clip.frames().iter().flat_map(|p| p.to_u8()).collect::<Vec<u8>>();
        let full = (key.0, key.1, fingerprint);
        if let Some(a) = self.map.get(&full) {
            return Ok(a.clone());
        }
        let a = align_window(clip, est, cfg.alignment())?;
        if self.map.len() >= Self::CAPACITY {
            self.map.clear();
        }
        self.map.insert(full, a.clone());
        Ok(a)
    }
}

fn patch_seed(seed: u64, iteration: u64, slot: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(iteration.to_le_bytes());
    h.update((slot as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Runs `cfg.max_iterations` optimizer steps from `params`.
pub fn train(params: ModelParams, data: &TrainingData, cfg: &TrainConfig, opts: &RunOptions) -> Result<(ModelParams, RunManifest)> {
    cfg.validate()?;
    let mut params = params;
    let model_cfg = params.config().clone();
    let loss = cfg.effective_loss(model_cfg.variant);
    if loss != cfg.loss {
        log::info!("variant {} has no intermediate output; alpha forced to 0", model_cfg.variant);
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let estimator = model_cfg.estimator();
    let mut manifest = RunManifest {
        config: RunConfig {
            train: cfg.clone(),
            model: model_cfg.clone(),
        },
        effective_loss: loss,
        dataset_hash: data.content_hash(),
        params: ParamReport::new(&params),
        history: Vec::new(),
        validation: Vec::new(),
        checkpoints: Vec::new(),
        started_unix: unix_secs(),
        finished_unix: None,
    };
    let mut adam = Adam::new(cfg.adam, cfg.learning_rate);
    let mut sampler = Sampler::new(data.samples.len(), cfg.seed);
    let mut cache = AlignCache { map: HashMap::new() };
    let start = Instant::now();

    for iteration in 1..=cfg.max_iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for slot in 0..cfg.batch_size {
            let (s, c) = data.samples[sampler.next()];
            let spec = PatchSpec {
                size: cfg.patch_size,
                temporal_radius: model_cfg.temporal_radius,
                seed: patch_seed(cfg.seed, iteration, slot),
            };
            let clip = sample_clip(&data.sequences[s], c, &spec)?;
            let aligned = cache.get((s, c), &clip, &estimator, &model_cfg)?;
            batch.push((clip, aligned));
        }
        let BatchGradients { report, grads } = batch_gradients(&params, &batch, loss)?;
        let finite = report.total.is_finite() && grads.values().all(|g| g.iter().all(|v| v.is_finite()));
        if !finite {
            let diagnostic = match &opts.out_dir {
                Some(dir) => {
                    let p = dir.join(format!("diagnostic_{iteration}.ckpt"));
                    save_checkpoint(&p, &params, iteration - 1)?;
                    manifest.save(&dir.join(RUN_MANIFEST))?;
                    Some(p)
                }
                None => None,
            };
            return Err(Error::NonFiniteLoss { iteration, diagnostic });
        }
        adam.step(&mut params, &grads);

        if iteration == 1 || iteration % cfg.log_interval == 0 || iteration == cfg.max_iterations {
            log::info!(
                "iter {iteration}: total {:.6e} (aux {:.6e}, global {:.6e})",
                report.total,
                report.loss_a,
                report.loss_g
            );
            manifest.history.push(HistoryEntry {
                iteration,
                loss_a: report.loss_a,
                loss_g: report.loss_g,
                total: report.total,
                elapsed_secs: start.elapsed().as_secs_f64(),
            });
        }
        if cfg.validation_interval > 0 && iteration % cfg.validation_interval == 0 && !data.validation.is_empty() {
            let table = evaluate_frames(&params, &data.validation)?;
            manifest.validation.push(ValidationEntry {
                iteration,
                delta_psnr: table.average.delta_psnr,
                delta_ssim: table.average.delta_ssim,
            });
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_interval > 0 && iteration % cfg.checkpoint_interval == 0 {
                let p = dir.join(format!("iter_{iteration}.ckpt"));
                save_checkpoint(&p, &params, iteration)?;
                manifest.checkpoints.push(CheckpointEntry { iteration, path: p });
                manifest.save(&dir.join(RUN_MANIFEST))?;
            }
        }
    }

    manifest.finished_unix = Some(unix_secs());
    if let Some(dir) = &opts.out_dir {
        let p = dir.join("final.ckpt");
        save_checkpoint(&p, &params, cfg.max_iterations)?;
        manifest.checkpoints.push(CheckpointEntry {
            iteration: cfg.max_iterations,
            path: p,
        });
        manifest.save(&dir.join(RUN_MANIFEST))?;
    }
    Ok((params, manifest))
}

/// Restored frame requantized to 8 bits, as it would be stored.
fn quantize(p: &Plane) -> Result<Plane> {
    let (h, w) = p.dim();
    Plane::from_u8(h, w, &p.to_u8())
}

/// Restores frame `center` of `frames` using a replicated-border window.
pub fn restore_frame(params: &ModelParams, frames: &[Plane], center: usize, estimator: &dyn FlowEstimator) -> Result<Plane> {
    let radius = params.config().temporal_radius;
    let window = window_indices(center, radius, frames.len())
        .into_iter()
        .map(|i| frames[i].clone())
        .collect();
    let out = forward(&ClipSample::new(window, None, None)?, params, estimator)?;
    quantize(&out.restored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub frame_count: usize,
    /// Per-frame quality when a reference was supplied.
    pub frames: Option<Vec<FrameMetrics>>,
}

/// Restores the luma of every frame of a planar 4:2:0 file, passing chroma
/// through, and writes the result to `output`.
pub fn enhance(
    params: &ModelParams,
    input: &Path,
    geometry: &Geometry,
    output: &Path,
    reference: Option<&Path>,
) -> Result<EnhanceReport> {
    let (w, h) = (geometry.width, geometry.height);
    let min = params.config().min_side();
    if params.config().variant != Variant::V1 && (w < min || h < min) {
        return Err(Error::Contract(format!("{w}×{h} frames are smaller than the model's {min}×{min} minimum")));
    }
    let n = crate::datapipe::frame_count(input, w, h)?;
    if n == 0 {
        return Err(Error::Integrity(format!("{} holds no frames", input.display())));
    }
    let frames = (0..n).map(|i| read_yuv420(input, w, h, i)).collect::<Result<Vec<_>>>()?;
    let luma: Vec<Plane> = frames.iter().map(|f| f.luma.clone()).collect();
    if let Some(r) = reference {
        let rn = crate::datapipe::frame_count(r, w, h)?;
        if rn != n {
            return Err(Error::Integrity(format!("reference has {rn} frames, input has {n}")));
        }
    }
    let estimator = params.config().estimator();
    // TODO: tile large frames; whole-frame inference at 1080p needs several
    // GB of activations at the reference channel width.
    let restored = (0..n)
        .into_par_iter()
        .map(|i| restore_frame(params, &luma, i, &estimator))
        .collect::<Result<Vec<_>>>()?;
    let mut out = BufWriter::new(std::fs::File::create(output).at(output)?);
    for (f, r) in frames.iter().zip(&restored) {
        write_yuv420(&mut out, r, &f.u, &f.v).at(output)?;
    }
    out.flush().at(output)?;
    let frames = match reference {
        Some(r) => {
            let refs = (0..n).map(|i| read_yuv420(r, w, h, i).map(|f| f.luma)).collect::<Result<Vec<_>>>()?;
            let before: Vec<_> = luma.iter().cloned().zip(refs.iter().cloned()).collect();
            let after: Vec<_> = restored.into_iter().zip(refs).collect();
            Some(delta_metrics(&before, &after)?.frames)
        }
        None => None,
    };
    Ok(EnhanceReport { frame_count: n, frames })
}

pub fn write_enhance_report(path: &Path, report: &EnhanceReport) -> Result<()> {
    match &report.frames {
        Some(f) => write_frame_csv(path, f),
        None => contract("no reference was supplied, so there is no per-frame report"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub ssim_before: f64,
    pub ssim_after: f64,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
}

/// Per-sequence improvements and their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub average: EvalRow,
}

impl EvalTable {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let average = EvalRow {
            id: "Average".into(),
            psnr_before: mean(|r| r.psnr_before),
            psnr_after: mean(|r| r.psnr_after),
            ssim_before: mean(|r| r.ssim_before),
            ssim_after: mean(|r| r.ssim_after),
            delta_psnr: mean(|r| r.delta_psnr),
            delta_ssim: mean(|r| r.delta_ssim),
        };
        Self { rows, average }
    }

    /// One line per sequence plus the average: `id  ΔPSNR (dB)  ΔSSIM`.
    pub fn format(&self, title: &str) -> String {
        let width = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(0).max(8);
        let mut s = String::new();
        if !title.is_empty() {
            let _ = writeln!(s, "{title}");
        }
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>8}", "sequence", "ΔPSNR(dB)", "ΔSSIM");
        for r in self.rows.iter().chain(std::iter::once(&self.average)) {
            let _ = writeln!(s, "{:<width$}  {:>10.3}  {:>8.4}", r.id, r.delta_psnr, r.delta_ssim);
        }
        s
    }

    /// Same rows as CSV with before/after columns.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.rows.iter().chain(std::iter::once(&self.average)) {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
    }
}

fn evaluate_sequence(params: &ModelParams, t: &TripletFrames) -> Result<EvalRow> {
    let estimator = params.config().estimator();
    let mut before = Vec::with_capacity(t.frame_count());
    let mut after = Vec::with_capacity(t.frame_count());
    for i in 0..t.frame_count() {
        let r = restore_frame(params, &t.transcoded, i, &estimator)?;
        before.push((t.transcoded[i].clone(), t.raw[i].clone()));
        after.push((r, t.raw[i].clone()));
    }
    let d = delta_metrics(&before, &after)?;
    Ok(EvalRow {
        id: t.id.clone(),
        psnr_before: d.psnr_before,
        psnr_after: d.psnr_after,
        ssim_before: d.ssim_before,
        ssim_after: d.ssim_after,
        delta_psnr: d.delta_psnr,
        delta_ssim: d.delta_ssim,
    })
}

/// Evaluates in-memory sequences, one parallel job per sequence.
pub fn evaluate_frames(params: &ModelParams, sequences: &[TripletFrames]) -> Result<EvalTable> {
    if sequences.is_empty() {
        return contract("nothing to evaluate");
    }
    let rows = sequences
        .par_iter()
        .map(|t| evaluate_sequence(params, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalTable::from_rows(rows))
}

/// Evaluates every sequence of a dataset manifest.
pub fn evaluate(params: &ModelParams, records: &[SequenceRecord]) -> Result<EvalTable> {
    if records.is_empty() {
        return contract("the manifest lists no sequences");
    }
    let rows = records
        .par_iter()
        .map(|r| evaluate_sequence(params, &TripletFrames::load(r)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalTable::from_rows(rows))
}

/// Sequences to score after training: validation clips if any, else the
/// training sequences.
fn scoring_set(data: &TrainingData) -> &[TripletFrames] {
    if data.validation.is_empty() {
        &data.sequences
    } else {
        &data.validation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub params: ParamReport,
    pub table: EvalTable,
    pub manifest: Option<RunManifest>,
}

/// Builds each variant from `base` (same seed), trains it when
/// `cfg.max_iterations > 0`, and evaluates it.
pub fn ablate_variants(base: &ModelConfig, data: &TrainingData, cfg: &TrainConfig, variants: &[Variant]) -> Result<Vec<VariantResult>> {
    variants
        .iter()
        .map(|&variant| {
            let model = ModelConfig {
                variant,
                ..base.clone()
            };
            let params = ModelParams::init(model, cfg.seed)?;
            let (params, manifest) = if cfg.max_iterations > 0 {
                let (p, m) = train(params, data, cfg, &RunOptions::default())?;
                (p, Some(m))
            } else {
                (params, None)
            };
            Ok(VariantResult {
                variant,
                params: ParamReport::new(&params),
                table: evaluate_frames(&params, scoring_set(data))?,
                manifest,
            })
        })
        .collect()
}

pub fn format_variant_tables(results: &[VariantResult]) -> String {
    results
        .iter()
        .map(|r| r.table.format(&format!("variant {} ({} parameters)", r.variant, r.params.total)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// An `(alpha, beta)` pair together with its spelling on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPair {
    pub label: String,
    pub loss: LossConfig,
}

/// Parses `"0:1,0.2:0.8,0.5:0.5"`.
pub fn parse_weight_pairs(text: &str) -> Result<Vec<WeightPair>> {
    let pairs = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let bad = || Error::Config(format!("weight pair `{item}` is not `alpha:beta`"));
            let (a, b) = item.split_once(':').ok_or_else(bad)?;
            let (a, b) = (a.trim(), b.trim());
            let loss = LossConfig::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(WeightPair {
                label: format!("({a}, {b})"),
                loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if pairs.is_empty() {
        return Err(Error::Config("no weight pairs given".into()));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossAblationRow {
    pub pair: WeightPair,
    pub table: EvalTable,
    pub manifest: RunManifest,
}

/// Trains the full network once per weight pair with a shared seed.
pub fn ablate_loss_weights(model: &ModelConfig, data: &TrainingData, cfg: &TrainConfig, pairs: &[WeightPair]) -> Result<Vec<LossAblationRow>> {
    let model = ModelConfig {
        variant: Variant::Full,
        ..model.clone()
    };
    pairs
        .iter()
        .map(|pair| {
            let run = TrainConfig {
                loss: pair.loss,
                ..cfg.clone()
            };
            let (params, manifest) = train(ModelParams::init(model.clone(), cfg.seed)?, data, &run, &RunOptions::default())?;
            Ok(LossAblationRow {
                pair: pair.clone(),
                table: evaluate_frames(&params, scoring_set(data))?,
                manifest,
            })
        })
        .collect()
}

/// Header row lists the pairs as configured; one row of ΔPSNR / ΔSSIM.
pub fn format_loss_ablation(rows: &[LossAblationRow]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<10}", "(α, β)");
    for r in rows {
        let _ = write!(s, "  {:>14}", r.pair.label);
    }
    let _ = write!(s, "\n{:<10}", "ΔPSNR(dB)");
    for r in rows {
        let _ = write!(s, "  {:>14.3}", r.table.average.delta_psnr);
    }
    let _ = write!(s, "\n{:<10}", "ΔSSIM");
    for r in rows {
        let _ = write!(s, "  {:>14.4}", r.table.average.delta_ssim);
    }
    s.push('\n');
    s
}
