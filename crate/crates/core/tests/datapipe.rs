mod support;

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use support::oracles::texture;
use tsan_core::datapipe::*;
use tsan_core::Error;

fn write_raw(path: &Path, frames: &[Vec<u8>]) {
    let mut f = std::fs::File::create(path).unwrap();
    for fr in frames {
        f.write_all(fr).unwrap();
    }
}

#[test]
fn reads_known_byte_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip_4x4.yuv");
    // 16 luma + 4 U + 4 V bytes per frame.
    let frame = |base: u8| -> Vec<u8> { (0..24).map(|i| base.wrapping_add(i as u8 * 10)).collect() };
    write_raw(&path, &[frame(0), frame(5)]);

    let f1 = read_yuv420(&path, 4, 4, 1).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            let byte = 5 + (y * 4 + x) as u8 * 10;
            assert_eq!(f1.luma.data()[[y, x]], byte as f32 / 255.0);
        }
    }
    assert_eq!(f1.u, vec![165, 175, 185, 195]);
    assert_eq!(f1.v, vec![205, 215, 225, 235]);
    assert_eq!(read_yuv420(&path, 4, 4, 0).unwrap().luma.data()[[0, 0]], 0.0);
    assert_eq!(frame_count(&path, 4, 4).unwrap(), 2);

    match read_yuv420(&path, 4, 4, 2) {
        Err(Error::Truncated { expected, actual, .. }) => assert_eq!((expected, actual), (72, 48)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn all_zero_file_gives_zero_plane() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z.yuv");
    write_raw(&path, &[vec![0; 6 * 4 * 3 / 2]]);
    let f = read_yuv420(&path, 6, 4, 0).unwrap();
    assert!(f.luma.data().iter().all(|&v| v == 0.0));
    assert_eq!(f.luma.dim(), (4, 6));
}

#[test]
fn partial_frames_are_integrity_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.yuv");
    write_raw(&path, &[vec![0; 30]]);
    assert!(matches!(frame_count(&path, 4, 4), Err(Error::Integrity(_))));
}

#[test]
fn write_then_read_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.yuv");
    let luma = tsan_core::Plane::from_u8(4, 6, &(0..24).map(|i| i as u8 * 9).collect::<Vec<_>>()).unwrap();
    let (u, v) = (vec![1u8; 6], vec![2u8; 6]);
    let mut f = std::fs::File::create(&path).unwrap();
    write_yuv420(&mut f, &luma, &u, &v).unwrap();
    drop(f);
    let back = read_yuv420(&path, 6, 4, 0).unwrap();
    assert_eq!(back, YuvFrame { luma, u, v });
}

#[test]
fn resolution_class_selects_transcode_bitrate() {
    assert_eq!(ResolutionClass::of_height(1080), ResolutionClass::HR);
    assert_eq!(ResolutionClass::of_height(720), ResolutionClass::LR);
    assert_eq!(ResolutionClass::of_height(480), ResolutionClass::LR);
    let ladder = BitrateLadder::default();
    let (init_hr, hr) = ladder.profiles(ResolutionClass::of_height(1080));
    let (init_lr, lr) = ladder.profiles(ResolutionClass::of_height(480));
    assert_eq!((hr.bitrate_kbps, lr.bitrate_kbps), (1000, 500));
    assert_eq!((init_hr.bitrate_kbps, init_lr.bitrate_kbps), (10_000, 10_000));
    assert_eq!((hr.stage, init_hr.stage), (EncodeStage::Transcode, EncodeStage::Initial));
    assert_eq!((hr.gop_size, hr.max_references, hr.deblock, hr.sao), (250, 3, true, true));
    assert_eq!(hr.preset, "medium");
}

#[test]
fn encoder_invocation_pins_option_spellings() {
    let codec = FfmpegX265 {
        program: "ffmpeg".into(),
    };
    let g: Geometry = "64x48@30".parse().unwrap();
    let inv = codec.encode_args(Path::new("in.yuv"), &g, &EncodeProfile::transcode(ResolutionClass::LR), Path::new("out.hevc"));
    let line = inv.command_line();
    for needle in [
        "-c:v libx265",
        "-preset medium",
        "-b:v 500k",
        "-s:v 64x48",
        "-r 30",
        "keyint=250:ref=3:deblock=0,0:sao=1",
    ] {
        assert!(line.contains(needle), "{needle} missing from {line}");
    }
    let dec = codec.decode_args(Path::new("out.hevc"), Path::new("dec.yuv")).command_line();
    assert!(dec.contains("-pix_fmt yuv420p") && dec.contains("-fps_mode passthrough"));
}

#[test]
fn geometry_parsing() {
    assert_eq!("64x48@30".parse::<Geometry>().unwrap(), Geometry { width: 64, height: 48, fps: 30.0 });
    assert_eq!("64x48".parse::<Geometry>().unwrap().fps, 25.0);
    for bad in ["64x", "x48", "63x48", "64x48@0", "64x48@abc", "64"] {
        assert!(bad.parse::<Geometry>().is_err(), "{bad}");
    }
}

#[test]
fn raw_discovery_from_name_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let named = dir.path().join("foreman_cif_352x288_30.yuv");
    std::fs::write(&named, []).unwrap();
    let r = RawVideo::discover(&named).unwrap();
    assert_eq!(r.id, "foreman_cif");
    assert_eq!(r.geometry, Geometry { width: 352, height: 288, fps: 30.0 });

    let plain = dir.path().join("clip_64x32.yuv");
    std::fs::write(&plain, []).unwrap();
    assert_eq!(RawVideo::discover(&plain).unwrap().geometry.fps, 25.0);

    let side = dir.path().join("mystery.yuv");
    std::fs::write(&side, []).unwrap();
    assert!(RawVideo::discover(&side).is_err());
    std::fs::write(dir.path().join("mystery.toml"), "width = 16\nheight = 8\nfps = 50\n").unwrap();
    let r = RawVideo::discover(&side).unwrap();
    assert_eq!((r.id.as_str(), r.geometry.width, r.geometry.height, r.geometry.fps), ("mystery", 16, 8, 50.0));
}

/// Copies bytes instead of coding them; `truncate_decode` drops one frame.
struct CopyCodec {
    truncate_decode: Option<u64>,
    fail: bool,
}

impl Codec for CopyCodec {
    fn encode_args(&self, input: &Path, _: &Geometry, profile: &EncodeProfile, output: &Path) -> Invocation {
        let program = if self.fail { "false" } else { "cp" };
        let _ = profile;
        Invocation {
            program: program.into(),
            args: vec![input.display().to_string(), output.display().to_string()],
        }
    }

    fn decode_args(&self, input: &Path, output: &Path) -> Invocation {
        match self.truncate_decode {
            Some(bytes) => Invocation {
                program: "sh".into(),
                args: vec![
                    "-c".into(),
                    format!("head -c {bytes} '{}' > '{}'", input.display(), output.display()),
                ],
            },
            None => Invocation {
                program: "cp".into(),
                args: vec![input.display().to_string(), output.display().to_string()],
            },
        }
    }
}

fn synthetic_raw(dir: &Path, w: usize, h: usize, frames: usize) -> RawVideo {
    let path = dir.join(format!("pan_{w}x{h}_25.yuv"));
    let big = texture(h + 8, w + 8 + 2 * frames, 0.2);
    let mut f = std::fs::File::create(&path).unwrap();
    for t in 0..frames {
        let luma = Array2::from_shape_fn((h, w), |(y, x)| (big[[y + 4, x + 2 * t]] * 255.0).round() as u8);
        f.write_all(luma.as_slice().unwrap()).unwrap();
        f.write_all(&vec![128u8; w * h / 2]).unwrap();
    }
    drop(f);
    RawVideo::discover(&path).unwrap()
}

#[test]
fn triplets_and_manifest_with_copy_codec() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synthetic_raw(dir.path(), 32, 16, 4);
    let work = dir.path().join("work");
    let codec = CopyCodec {
        truncate_decode: None,
        fail: false,
    };
    let m = build_triplets(&raw, &BitrateLadder::default(), &work, &codec).unwrap();
    assert_eq!(m.record.frame_count, 4);
    assert_eq!(m.record.resolution_class, ResolutionClass::LR);
    assert_eq!(m.transcode.profile.bitrate_kbps, 500);
    assert_eq!(m.raw_sha256, sha256_file(&raw.path).unwrap());
    assert_eq!(m.initial.decoded_sha256, m.raw_sha256);
    assert!(m.initial.encode.starts_with("cp "));
    m.record.verify().unwrap();

    let text = std::fs::read_to_string(work.join("pan").join(SEQUENCE_MANIFEST)).unwrap();
    assert!(text.contains("bitstream_sha256") && text.contains("bitrate_kbps = 10000"));

    let stats = dataset_stats(&m.record).unwrap();
    assert_eq!((stats.psnr_initial, stats.psnr_transcoded), (100.0, 100.0));

    let ds = DatasetManifest {
        sequences: vec![m.record.clone()],
    };
    let path = work.join(DATASET_MANIFEST);
    ds.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&DatasetManifest::locate(&work)).unwrap(), ds);
}

#[test]
fn encoder_failure_and_frame_loss_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let raw = synthetic_raw(dir.path(), 16, 16, 3);
    let failing = CopyCodec {
        truncate_decode: None,
        fail: true,
    };
    match build_triplets(&raw, &BitrateLadder::default(), &dir.path().join("w1"), &failing) {
        Err(Error::Pipeline { command, .. }) => assert!(command.starts_with("false ")),
        other => panic!("{other:?}"),
    }
    let lossy = CopyCodec {
        truncate_decode: Some(2 * 16 * 16 * 3 / 2),
        fail: false,
    };
    assert!(matches!(
        build_triplets(&raw, &BitrateLadder::default(), &dir.path().join("w2"), &lossy),
        Err(Error::Integrity(_))
    ));
    let missing = FfmpegX265 {
        program: PathBuf::from("/nonexistent/ffmpeg"),
    };
    assert!(matches!(missing.check_available(), Err(Error::Pipeline { .. })));
}

fn toy_frames() -> TripletFrames {
    let raw: Vec<_> = (0..4).map(|i| tsan_core::Plane::new(texture(20, 24, i as f64).mapv(|v| v as f32)).unwrap()).collect();
    let shift = |d: f32| raw.iter().map(|p| tsan_core::Plane::new(p.data().mapv(|v| (v + d).min(1.0))).unwrap()).collect::<Vec<_>>();
    TripletFrames {
        id: "toy".into(),
        initial: shift(0.01),
        transcoded: shift(0.05),
        raw,
    }
}

#[test]
fn sample_clip_crops_every_plane_identically() {
    let t = toy_frames();
    let spec = PatchSpec {
        size: 8,
        temporal_radius: 1,
        seed: 9,
    };
    for center in 0..4 {
        let c = sample_clip(&t, center, &spec).unwrap();
        assert_eq!(c.frames().len(), 3);
        // Locate the crop from the raw label, then check every plane against direct slicing.
        let label = c.label_raw.as_ref().unwrap();
        let (mut top, mut left) = (usize::MAX, usize::MAX);
        'find: for y in 0..=12 {
            for x in 0..=16 {
                if t.raw[center].data().slice(s![y..y + 8, x..x + 8]) == label.data() {
                    (top, left) = (y, x);
                    break 'find;
                }
            }
        }
        assert_ne!(top, usize::MAX);
        let cut = |p: &tsan_core::Plane| p.data().slice(s![top..top + 8, left..left + 8]).to_owned();
        assert_eq!(c.label_init.as_ref().unwrap().data(), &cut(&t.initial[center]));
        let idx = [center.saturating_sub(1), center, (center + 1).min(3)];
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(c.frames()[k].data(), &cut(&t.transcoded[i]));
        }
    }
}

#[test]
fn sample_clip_replicates_first_frame_and_is_seeded() {
    let t = toy_frames();
    let spec = PatchSpec {
        size: 8,
        temporal_radius: 1,
        seed: 1,
    };
    let c = sample_clip(&t, 0, &spec).unwrap();
    assert_eq!(c.frames()[0], c.frames()[1]);
    assert_eq!(sample_clip(&t, 2, &spec).unwrap(), sample_clip(&t, 2, &spec).unwrap());
    let other = PatchSpec { seed: 2, ..spec };
    let crops: Vec<_> = (0..4).map(|i| sample_clip(&t, 2, &PatchSpec { seed: i, ..other })).collect::<Result<_, _>>().unwrap();
    assert!(crops.iter().any(|c| c != &crops[0]));
    assert!(sample_clip(&t, 0, &PatchSpec { size: 21, ..spec }).is_err());
    assert!(sample_clip(&t, 4, &spec).is_err());
    assert_eq!(t.full_clip(3, 1).unwrap().frames()[2], t.transcoded[3]);
}

fn ffmpeg() -> Option<FfmpegX265> {
    let codec = FfmpegX265::default();
    match codec.check_available() {
        Ok(()) => Some(codec),
        Err(e) => {
            eprintln!("skipping encoder test: {e}");
            None
        }
    }
}

#[test]
fn real_encode_is_aligned_monotone_and_reproducible() {
    let Some(codec) = ffmpeg() else { return };
    let dir = tempfile::tempdir().unwrap();
    let raw = synthetic_raw(dir.path(), 64, 48, 6);
    let ladder = BitrateLadder {
        initial_kbps: 400,
        hr_kbps: 60,
        lr_kbps: 30,
    };
    let m = build_triplets(&raw, &ladder, &dir.path().join("a"), &codec).unwrap();
    let t = TripletFrames::load(&m.record).unwrap();
    let stats = stats_of(&t).unwrap();
    assert!(stats.psnr_transcoded < stats.psnr_initial, "{stats:?}");

    // Frame i of the initial store depicts raw frame i, not its neighbour.
    for i in 0..t.frame_count() - 1 {
        let same = tsan_core::metrics::psnr(&t.initial[i], &t.raw[i]).unwrap();
        let next = tsan_core::metrics::psnr(&t.initial[i], &t.raw[i + 1]).unwrap();
        assert!(same > next + 3.0, "frame {i}: {same} vs {next}");
    }

    let again = build_triplets(&raw, &ladder, &dir.path().join("b"), &codec).unwrap();
    assert_eq!(again.transcode.bitstream_sha256, m.transcode.bitstream_sha256);
    assert_eq!(again.transcode.decoded_sha256, m.transcode.decoded_sha256);
}
