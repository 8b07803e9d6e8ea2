use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use tsan_core::datapipe::{build_triplets, dataset_stats, BitrateLadder, DatasetManifest, FfmpegX265, Geometry, RawVideo, DATASET_MANIFEST};
use tsan_core::harness::{
    ablate_loss_weights, ablate_variants, enhance, evaluate, format_loss_ablation, format_variant_tables, parse_weight_pairs,
    train, write_enhance_report, ParamReport, RunConfig, RunOptions, TrainingData,
};
use tsan_core::model::{load_checkpoint, save_checkpoint, Init};
use tsan_core::{ModelParams, Variant};

#[derive(Parser)]
#[command(name = "tsan", version, about = "Transcoded video restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode raw clips twice and record raw / initial / transcoded triplets.
    Prepare(PrepareArgs),
    /// Train a network on a prepared work directory.
    Train(TrainArgs),
    /// Restore the luma of a planar 4:2:0 file.
    Enhance(EnhanceArgs),
    /// Per-sequence and average improvement of a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Train the full network once per (alpha, beta) pair and compare.
    AblateLoss(AblateLossArgs),
    /// Build (and optionally train) V1, V2 and the full network and compare.
    AblateVariants(AblateVariantsArgs),
    /// Write a freshly initialised checkpoint.
    InitCheckpoint(InitArgs),
    /// Print the parameter count of a configuration.
    Params(ParamsArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Directory of raw `.yuv` clips (geometry from a `.toml` sidecar or `<id>_<W>x<H>[_<fps>].yuv`).
    #[arg(long)]
    input_dir: PathBuf,
    #[arg(long)]
    work_dir: PathBuf,
    #[arg(long, default_value_t = tsan_core::datapipe::HR_TRANSCODE_KBPS)]
    hr_kbps: u32,
    #[arg(long, default_value_t = tsan_core::datapipe::LR_TRANSCODE_KBPS)]
    lr_kbps: u32,
    #[arg(long, default_value_t = tsan_core::datapipe::INITIAL_KBPS)]
    initial_kbps: u32,
    /// ffmpeg executable; defaults to `$TSAN_FFMPEG` or `ffmpeg` on PATH.
    #[arg(long)]
    ffmpeg: Option<PathBuf>,
}

/// Configuration file plus command-line overrides, shared by the training commands.
#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Work directory written by `prepare`, or its dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated sequence ids held out for validation.
    #[arg(long, value_delimiter = ',')]
    validation: Vec<String>,
    /// Start from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Run directory for checkpoints and `run.json`.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// `WxH@fps` or `WxH`.
    #[arg(long)]
    geometry: Geometry,
    #[arg(long)]
    output: PathBuf,
    /// Raw clip to score against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Per-frame PSNR/SSIM CSV; needs `--reference`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest or work directory.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the rows with before/after columns as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateLossArgs {
    #[arg(long)]
    data: PathBuf,
    /// `alpha:beta` pairs, comma-separated.
    #[arg(long, default_value = "0:1,0.2:0.8,0.5:0.5")]
    pairs: String,
    #[arg(long)]
    iters: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    validation: Vec<String>,
    /// Write the comparison table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateVariantsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training iterations per variant; 0 only constructs and evaluates.
    #[arg(long, default_value_t = 0)]
    iters: u64,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    validation: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    /// Starts as the identity on the centre frame.
    Default,
    Random,
    Zeros,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, value_enum, default_value_t = InitKind::Default)]
    init: InitKind,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    variant: Option<Variant>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        let mut msg = e.to_string();
        for cause in e.chain().skip(1) {
            let c = cause.to_string();
            if !msg.contains(&c) {
                msg = format!("{msg}: {c}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Enhance(a) => enhance_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::AblateLoss(a) => ablate_loss_cmd(a),
        Command::AblateVariants(a) => ablate_variants_cmd(a),
        Command::InitCheckpoint(a) => init_cmd(a),
        Command::Params(a) => params_cmd(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let codec = match a.ffmpeg {
        Some(program) => FfmpegX265 { program },
        None => FfmpegX265::default(),
    };
    codec.check_available()?;
    let ladder = BitrateLadder {
        initial_kbps: a.initial_kbps,
        hr_kbps: a.hr_kbps,
        lr_kbps: a.lr_kbps,
    };
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(&a.input_dir)
        .with_context(|| format!("reading {}", a.input_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "yuv"))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        bail!("no .yuv files in {}", a.input_dir.display());
    }
    std::fs::create_dir_all(&a.work_dir).with_context(|| format!("creating {}", a.work_dir.display()))?;
    let mut dataset = DatasetManifest::default();
    for path in &inputs {
        let raw = RawVideo::discover(path)?;
        info!("encoding {} ({}x{})", raw.id, raw.geometry.width, raw.geometry.height);
        let m = build_triplets(&raw, &ladder, &a.work_dir, &codec)?;
        let s = dataset_stats(&m.record)?;
        println!(
            "{}: {} frames, PSNR initial {:.2} dB, transcoded {:.2} dB",
            s.id, m.record.frame_count, s.psnr_initial, s.psnr_transcoded
        );
        dataset.sequences.push(m.record);
    }
    let path = a.work_dir.join(DATASET_MANIFEST);
    dataset.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_data(path: &Path, validation: &[String]) -> Result<TrainingData> {
    let manifest = DatasetManifest::load(&DatasetManifest::locate(path))?;
    Ok(TrainingData::from_manifest(&manifest, validation)?)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if let Some(n) = a.iters {
        cfg.train.max_iterations = n;
    }
    if let Some(x) = a.alpha {
        cfg.train.loss.alpha = x;
    }
    if let Some(x) = a.beta {
        cfg.train.loss.beta = x;
    }
    let data = load_data(&a.data, &a.validation)?;
    let params = match &a.init {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if *ck.params.config() != cfg.model {
                bail!("{} was written for a different model configuration", p.display());
            }
            ck.params
        }
        None => ModelParams::init(cfg.model.clone(), cfg.train.seed)?,
    };
    let (_, manifest) = train(params, &data, &cfg.train, &RunOptions { out_dir: Some(a.out.clone()) })?;
    println!("{}", manifest.params.summary());
    if let Some(last) = manifest.history.last() {
        println!("iteration {}: loss {:.6e}", last.iteration, last.total);
    }
    println!("run directory {}", a.out.display());
    Ok(())
}

fn enhance_cmd(a: EnhanceArgs) -> Result<()> {
    if a.report.is_some() && a.reference.is_none() {
        bail!("--report needs --reference");
    }
    let params = load_checkpoint(&a.checkpoint)?.params;
    let report = enhance(&params, &a.input, &a.geometry, &a.output, a.reference.as_deref())?;
    println!("restored {} frames into {}", report.frame_count, a.output.display());
    if let Some(frames) = &report.frames {
        let n = frames.len() as f64;
        let before = frames.iter().map(|f| f.psnr_before).sum::<f64>() / n;
        let after = frames.iter().map(|f| f.psnr_after).sum::<f64>() / n;
        println!("mean PSNR {before:.3} -> {after:.3} dB ({:+.3})", after - before);
    }
    if let Some(p) = &a.report {
        write_enhance_report(p, &report)?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?.params;
    let manifest = DatasetManifest::load(&DatasetManifest::locate(&a.manifest))?;
    let table = evaluate(&params, &manifest.sequences)?;
    let text = table.format("");
    print!("{text}");
    std::fs::write(&a.out, &text).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.csv {
        std::fs::write(p, table.to_csv()?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(p) = path {
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn ablate_loss_cmd(a: AblateLossArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(n) = a.iters {
        cfg.train.max_iterations = n;
    }
    let pairs = parse_weight_pairs(&a.pairs)?;
    let data = load_data(&a.data, &a.validation)?;
    let rows = ablate_loss_weights(&cfg.model, &data, &cfg.train, &pairs)?;
    write_out(a.out.as_deref(), &format_loss_ablation(&rows))
}

fn ablate_variants_cmd(a: AblateVariantsArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    cfg.train.max_iterations = a.iters;
    let data = load_data(&a.data, &a.validation)?;
    let results = ablate_variants(&cfg.model, &data, &cfg.train, &Variant::ALL)?;
    write_out(a.out.as_deref(), &format_variant_tables(&results))
}

fn init_cmd(a: InitArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    let init = match a.init {
        InitKind::Default => Init::Default,
        InitKind::Random => Init::Random,
        InitKind::Zeros => Init::Zeros,
    };
    let params = ModelParams::new(cfg.model, init, cfg.train.seed)?;
    save_checkpoint(&a.output, &params, 0)?;
    println!("{} -> {}", ParamReport::new(&params).summary(), a.output.display());
    Ok(())
}

fn params_cmd(a: ParamsArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    let params = ModelParams::new(cfg.model, Init::Zeros, 0)?;
    println!("{}", ParamReport::new(&params).summary());
    Ok(())
}
