mod support;

use std::io::Write;

use support::oracles::texture;
use tsan_core::datapipe::{read_yuv420, Geometry, TripletFrames};
use tsan_core::flow::AlignedWindow;
use tsan_core::harness::*;
use tsan_core::losses::LossConfig;
use tsan_core::model::{load_checkpoint, save_checkpoint};
use tsan_core::{ClipSample, Error, FlowField, ModelConfig, ModelParams, Plane, Variant};

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        psfm_depth: 2,
        psfm_multipliers: vec![2, 2],
        psfm_res_blocks: 1,
        gsrm_blocks: 2,
        tail_blocks: 1,
        variant,
        flow_iterations: 3,
        ..ModelConfig::default()
    }
}

fn plane(h: usize, w: usize, phase: f64, offset: f32) -> Plane {
    let bytes: Vec<u8> = texture(h, w, phase).iter().map(|&v| ((v * 0.8 + offset as f64) * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    Plane::from_u8(h, w, &bytes).unwrap()
}

fn sequence(id: &str, frames: usize, h: usize, w: usize) -> TripletFrames {
    let seq = |o: f32| (0..frames).map(|i| plane(h, w, i as f64 * 0.3, o)).collect::<Vec<_>>();
    TripletFrames {
        id: id.into(),
        raw: seq(0.1),
        initial: seq(0.11),
        transcoded: seq(0.13),
    }
}

fn quick(iters: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        learning_rate: 1e-3,
        max_iterations: iters,
        patch_size: 16,
        log_interval: 1,
        checkpoint_interval: 0,
        validation_interval: 0,
        ..TrainConfig::default()
    }
}

fn data() -> TrainingData {
    TrainingData::new(vec![sequence("a", 3, 20, 20), sequence("b", 2, 18, 22)], vec![]).unwrap()
}

#[test]
fn config_file_addresses_every_field() {
    let text = "\
# desk run
batch_size = 4
learning_rate = 0.0005
max_iterations = 123
adam_beta1 = 0.8
adam_beta2 = 0.99
adam_epsilon = 1e-6
alpha = 0.5
beta = 0.5
seed = 7
patch_size = 32
checkpoint_interval = 10
validation_interval = 20
log_interval = 5
temporal_radius = 2
base_channels = 16
psfm_depth = 2
psfm_multipliers = 2, 4
psfm_res_blocks = 3
gsrm_blocks = 6
tail_blocks = 2
hdro_rates = 1,2,3
variant = v2
flow_levels = 2
flow_iterations = 4
direct_alignment = true
";
    let cfg = RunConfig::parse(text).unwrap();
    let t = &cfg.train;
    assert_eq!((t.batch_size, t.learning_rate, t.max_iterations), (4, 5e-4, 123));
    assert_eq!((t.adam.beta1, t.adam.beta2, t.adam.epsilon), (0.8, 0.99, 1e-6));
    assert_eq!((t.loss.alpha, t.loss.beta, t.seed, t.patch_size), (0.5, 0.5, 7, 32));
    assert_eq!((t.checkpoint_interval, t.validation_interval, t.log_interval), (10, 20, 5));
    let m = &cfg.model;
    assert_eq!((m.temporal_radius, m.base_channels, m.psfm_depth), (2, 16, 2));
    assert_eq!(m.psfm_multipliers, vec![2, 4]);
    assert_eq!((m.psfm_res_blocks, m.gsrm_blocks, m.tail_blocks), (3, 6, 2));
    assert_eq!(m.hdro_rates, vec![1, 2, 3]);
    assert_eq!((m.variant, m.flow_levels, m.flow_iterations, m.direct_alignment), (Variant::V2, 2, 4, true));

    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    let text = cfg.to_text();
    let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    assert_eq!(keys, RunConfig::KEYS);
}

#[test]
fn config_errors_name_the_line() {
    for bad in ["nonsense = 1", "batch_size", "batch_size = -1", "variant = v9", "hdro_rates = 1,x"] {
        let err = RunConfig::parse(&format!("seed = 1\n{bad}\n")).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
    let defaults = RunConfig::default().train;
    assert_eq!((defaults.batch_size, defaults.learning_rate, defaults.max_iterations), (16, 1e-4, 300_000));
    assert_eq!(defaults.adam, AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 });
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let params = ModelParams::random(tiny(Variant::Full), 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..quick(3)
    };
    let (after, manifest) = train(params.clone(), &data(), &cfg, &RunOptions::default()).unwrap();
    let bits = |p: &ModelParams| p.iter().flat_map(|(_, t)| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&after), bits(&params));
    assert_eq!(manifest.history.len(), 3);
}

#[test]
fn one_step_changes_every_parameter_group() {
    let params = ModelParams::random(tiny(Variant::Full), 2).unwrap();
    let (after, _) = train(params.clone(), &data(), &quick(1), &RunOptions::default()).unwrap();
    for (name, before) in params.iter() {
        let delta = (after.get(name).unwrap() - before).mapv(f32::abs).fold(0.0f32, |m, &v| m.max(v));
        assert!(delta > 0.0, "`{name}` did not move");
    }
}

fn window_batch() -> Vec<(ClipSample, AlignedWindow)> {
    let t = sequence("g", 3, 16, 16);
    let clip = t.full_clip(1, 1).unwrap();
    let aligned = AlignedWindow {
        planes: clip.frames().to_vec(),
        flows: (0..3).map(|j| FlowField::constant(16, 16, 0.25 * j as f32, -0.5)).collect(),
    };
    vec![(clip, aligned)]
}

#[test]
fn unsupervised_intermediate_matches_global_only_gradients() {
    let params = ModelParams::random(tiny(Variant::Full), 3).unwrap();
    let batch = window_batch();
    let a0 = batch_gradients(&params, &batch, LossConfig::new(0.0, 1.0).unwrap()).unwrap();
    let a2 = batch_gradients(&params, &batch, LossConfig::new(0.2, 1.0).unwrap()).unwrap();
    let a4 = batch_gradients(&params, &batch, LossConfig::new(0.4, 1.0).unwrap()).unwrap();
    assert_eq!(a0.report.total, a0.report.loss_g);
    assert!(a2.report.loss_a > 0.0);
    for name in params.names() {
        if name.starts_with("gsrm.") {
            assert_eq!(a0.grads[name], a2.grads[name], "{name}");
        }
        // The auxiliary term's contribution doubles with alpha.
        let d2 = &a2.grads[name] - &a0.grads[name];
        let d4 = &a4.grads[name] - &a0.grads[name];
        let err = (&d4 - &d2.mapv(|v| 2.0 * v)).mapv(f32::abs).fold(0.0f32, |m, &v| m.max(v));
        let scale = d4.mapv(f32::abs).fold(0.0f32, |m, &v| m.max(v)).max(1e-12);
        assert!(err / scale < 1e-3, "{name}: {err} vs {scale}");
    }
}

#[test]
fn variants_without_intermediate_drop_the_auxiliary_term() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.effective_loss(Variant::V1).alpha, 0.0);
    assert_eq!(cfg.effective_loss(Variant::V2).alpha, 0.0);
    assert_eq!(cfg.effective_loss(Variant::Full), cfg.loss);
    let (_, m) = train(ModelParams::random(tiny(Variant::V2), 0).unwrap(), &data(), &quick(1), &RunOptions::default()).unwrap();
    assert_eq!(m.effective_loss.alpha, 0.0);
    assert_eq!(m.history[0].loss_a, 0.0);
}

#[test]
fn seeded_runs_repeat_exactly() {
    let run = |seed| {
        let cfg = TrainConfig { seed, ..quick(4) };
        train(ModelParams::random(tiny(Variant::Full), 4).unwrap(), &data(), &cfg, &RunOptions::default())
            .unwrap()
            .1
            .loss_curve()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn run_directory_holds_checkpoints_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_interval: 2,
        validation_interval: 2,
        ..quick(4)
    };
    let mut d = data();
    d.validation.push(sequence("val", 2, 16, 16));
    let (params, manifest) = train(
        ModelParams::init(tiny(Variant::Full), 0).unwrap(),
        &d,
        &cfg,
        &RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
        },
    )
    .unwrap();
    let iters: Vec<u64> = manifest.checkpoints.iter().map(|c| c.iteration).collect();
    assert_eq!(iters, vec![2, 4, 4]);
    for c in &manifest.checkpoints {
        assert_eq!(load_checkpoint(&c.path).unwrap().iteration, c.iteration);
    }
    assert_eq!(load_checkpoint(&dir.path().join("final.ckpt")).unwrap().params, params);
    assert_eq!(manifest.validation.len(), 2);
    assert_eq!(RunManifest::load(&dir.path().join(RUN_MANIFEST)).unwrap(), manifest);
    assert_eq!(manifest.dataset_hash, d.content_hash());
    assert!(manifest.finished_unix.unwrap() >= manifest.started_unix);
}

#[test]
fn non_finite_loss_aborts_with_diagnostic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut params = ModelParams::random(tiny(Variant::Full), 5).unwrap();
    params.get_mut("gsrm.hdro.rec.bias").unwrap().fill(f32::INFINITY);
    let err = train(
        params,
        &data(),
        &quick(3),
        &RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
        },
    )
    .unwrap_err();
    match err {
        Error::NonFiniteLoss {
            iteration: 1,
            diagnostic: Some(p),
        } => assert!(p.exists()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn parameter_report_explains_large_deviations() {
    let full = ParamReport::new(&ModelParams::init(ModelConfig::default(), 0).unwrap());
    assert!(full.deviation.abs() < 0.3 && full.explanation.is_none());
    assert_eq!(full.published, 5_750_000);
    let small = ParamReport::new(&ModelParams::init(tiny(Variant::Full), 0).unwrap());
    let why = small.explanation.unwrap();
    assert!(why.contains("base_channels = 4"), "{why}");
}

fn write_video(path: &std::path::Path, frames: &[Plane]) {
    let mut f = std::fs::File::create(path).unwrap();
    for (i, p) in frames.iter().enumerate() {
        let (h, w) = p.dim();
        f.write_all(&p.to_u8()).unwrap();
        f.write_all(&vec![i as u8 + 60; w * h / 4]).unwrap();
        f.write_all(&vec![i as u8 + 90; w * h / 4]).unwrap();
    }
}

#[test]
fn enhance_with_zero_checkpoint_reproduces_input() {
    let dir = tempfile::tempdir().unwrap();
    let t = sequence("e", 4, 16, 24);
    let input = dir.path().join("in.yuv");
    let reference = dir.path().join("ref.yuv");
    write_video(&input, &t.transcoded);
    write_video(&reference, &t.raw);
    let ckpt = dir.path().join("zero.ckpt");
    save_checkpoint(&ckpt, &ModelParams::zeros(tiny(Variant::Full)).unwrap(), 0).unwrap();
    let params = load_checkpoint(&ckpt).unwrap().params;
    let geometry: Geometry = "24x16@25".parse().unwrap();
    let output = dir.path().join("out.yuv");
    let report = enhance(&params, &input, &geometry, &output, Some(&reference)).unwrap();
    assert_eq!(report.frame_count, 4);
    assert_eq!(std::fs::read(&output).unwrap(), std::fs::read(&input).unwrap());
    let frames = report.frames.as_ref().unwrap();
    assert!(frames.iter().all(|f| f.psnr_after == f.psnr_before && f.ssim_after == f.ssim_before));
    let csv = dir.path().join("frames.csv");
    write_enhance_report(&csv, &report).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 5);

    let short = dir.path().join("short.yuv");
    write_video(&short, &t.raw[..2]);
    assert!(enhance(&params, &input, &geometry, &output, Some(&short)).is_err());
    assert!(enhance(&params, &input, &"24x12@25".parse().unwrap(), &output, None).is_err());
}

#[test]
fn enhance_restores_luma_and_keeps_chroma() {
    let dir = tempfile::tempdir().unwrap();
    let t = sequence("e", 3, 16, 16);
    let input = dir.path().join("in.yuv");
    write_video(&input, &t.transcoded);
    let output = dir.path().join("out.yuv");
    let params = ModelParams::random(tiny(Variant::Full), 9).unwrap();
    let report = enhance(&params, &input, &"16x16".parse().unwrap(), &output, None).unwrap();
    assert!(report.frames.is_none());
    for i in 0..3 {
        let (a, b) = (read_yuv420(&input, 16, 16, i).unwrap(), read_yuv420(&output, 16, 16, i).unwrap());
        assert_eq!((a.u, a.v), (b.u, b.v));
        assert_ne!(a.luma, b.luma);
    }
}

#[test]
fn evaluating_identity_gives_zero_improvement() {
    let params = ModelParams::zeros(tiny(Variant::Full)).unwrap();
    let seqs = vec![sequence("one", 2, 16, 16), sequence("two", 3, 16, 20)];
    let table = evaluate_frames(&params, &seqs).unwrap();
    assert_eq!(table.rows.len(), 2);
    for r in table.rows.iter().chain(std::iter::once(&table.average)) {
        assert_eq!((r.delta_psnr, r.delta_ssim), (0.0, 0.0));
    }
    let text = table.format("");
    assert_eq!(text.lines().count(), 1 + seqs.len() + 1);
    assert!(text.lines().last().unwrap().starts_with("Average"));
    assert_eq!(table.to_csv().unwrap().lines().count(), 1 + 3);
}

#[test]
fn variant_ablation_emits_three_tables() {
    let d = TrainingData::new(vec![sequence("s", 2, 16, 16)], vec![sequence("v1", 2, 16, 16), sequence("v2", 2, 16, 16)]).unwrap();
    let cfg = TrainConfig { max_iterations: 0, ..quick(0) };
    let results = ablate_variants(&tiny(Variant::Full), &d, &cfg, &Variant::ALL).unwrap();
    assert_eq!(results.iter().map(|r| r.variant).collect::<Vec<_>>(), Variant::ALL);
    assert!(results[0].params.total < results[1].params.total && results[1].params.total < results[2].params.total);
    let text = format_variant_tables(&results);
    assert_eq!(text.matches("Average").count(), 3);
    for v in Variant::ALL {
        assert!(text.contains(&format!("variant {v}")));
    }
}

#[test]
fn loss_ablation_echoes_pairs_and_records_weights() {
    let pairs = parse_weight_pairs("0:1, 0.2:0.8,0.5:0.5").unwrap();
    assert_eq!(pairs.iter().map(|p| p.label.as_str()).collect::<Vec<_>>(), ["(0, 1)", "(0.2, 0.8)", "(0.5, 0.5)"]);
    let rows = ablate_loss_weights(&tiny(Variant::Full), &data(), &quick(1), &pairs).unwrap();
    for (row, pair) in rows.iter().zip(&pairs) {
        assert_eq!(row.manifest.effective_loss, pair.loss);
    }
    let text = format_loss_ablation(&rows);
    let header = text.lines().next().unwrap();
    assert!(header.contains("(0, 1)") && header.contains("(0.2, 0.8)") && header.contains("(0.5, 0.5)"));
    assert!(parse_weight_pairs("0.2").is_err());
    assert!(parse_weight_pairs("").is_err());
    assert!(parse_weight_pairs("-1:2").is_err());
}

#[test]
fn adam_step_matches_hand_computation() {
    let mut params = ModelParams::zeros(tiny(Variant::V1)).unwrap();
    let name = "tdam.feat.bias".to_string();
    let mut grads = std::collections::BTreeMap::new();
    grads.insert(name.clone(), ndarray::ArrayD::from_elem(ndarray::IxDyn(&[4]), 0.5f32));
    let mut adam = Adam::new(AdamConfig::default(), 0.1);
    adam.step(&mut params, &grads);
    // First step: m̂ = g, v̂ = g², update = lr · g / (|g| + ε).
    let want = -0.1 * 0.5 / (0.5 + 1e-8);
    for &v in params.get(&name).unwrap().iter() {
        assert!((v as f64 - want).abs() < 1e-6);
    }
    adam.step(&mut params, &grads);
    for &v in params.get(&name).unwrap().iter() {
        assert!((v as f64 - 2.0 * want).abs() < 1e-6);
    }
}
