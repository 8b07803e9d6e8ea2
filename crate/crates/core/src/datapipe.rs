//! Dataset construction: raw → initial encode → transcode triplets through an
//! external HEVC encoder, planar 4:2:0 frame I/O and training-clip sampling.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Error, IoContext, Result};
use crate::metrics::{cap_psnr, psnr};
use crate::model::{window_indices, ClipSample};
use crate::numcore::Plane;

pub const INITIAL_KBPS: u32 = 10_000;
pub const HR_TRANSCODE_KBPS: u32 = 1_000;
pub const LR_TRANSCODE_KBPS: u32 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeStage {
    Initial,
    Transcode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolutionClass {
    HR,
    LR,
}

impl ResolutionClass {
    /// High resolution means taller than 720 lines.
    pub fn of_height(height: usize) -> Self {
        if height > 720 {
            Self::HR
        } else {
            Self::LR
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeProfile {
    pub stage: EncodeStage,
    pub bitrate_kbps: u32,
    pub preset: String,
    pub rate_control: String,
    pub gop_size: u32,
    pub max_references: u32,
    pub deblock: bool,
    pub sao: bool,
}

impl EncodeProfile {
    fn with(stage: EncodeStage, bitrate_kbps: u32) -> Self {
        Self {
            stage,
            bitrate_kbps,
            preset: "medium".into(),
            rate_control: "abr".into(),
            gop_size: 250,
            max_references: 3,
            deblock: true,
            sao: true,
        }
    }

    pub fn initial() -> Self {
        Self::with(EncodeStage::Initial, INITIAL_KBPS)
    }

    pub fn transcode(class: ResolutionClass) -> Self {
        Self::with(
            EncodeStage::Transcode,
            match class {
                ResolutionClass::HR => HR_TRANSCODE_KBPS,
                ResolutionClass::LR => LR_TRANSCODE_KBPS,
            },
        )
    }
}

/// Bitrates used by [`build_triplets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitrateLadder {
    pub initial_kbps: u32,
    pub hr_kbps: u32,
    pub lr_kbps: u32,
}

impl Default for BitrateLadder {
    fn default() -> Self {
        Self {
            initial_kbps: INITIAL_KBPS,
            hr_kbps: HR_TRANSCODE_KBPS,
            lr_kbps: LR_TRANSCODE_KBPS,
        }
    }
}

impl BitrateLadder {
    pub fn profiles(&self, class: ResolutionClass) -> (EncodeProfile, EncodeProfile) {
        let mut initial = EncodeProfile::initial();
        initial.bitrate_kbps = self.initial_kbps;
        let mut transcode = EncodeProfile::transcode(class);
        transcode.bitrate_kbps = match class {
            ResolutionClass::HR => self.hr_kbps,
            ResolutionClass::LR => self.lr_kbps,
        };
        (initial, transcode)
    }
}

/// Width, height and rate of a planar 8-bit 4:2:0 stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
}

impl Geometry {
    pub fn frame_bytes(&self) -> u64 {
        yuv420_frame_bytes(self.width, self.height)
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}@{}", self.width, self.height, self.fps)
    }
}

impl std::str::FromStr for Geometry {
    type Err = Error;

    /// `WxH@fps` or `WxH` (25 fps).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("geometry `{s}` is not of the form WxH@fps"));
        let (size, fps) = match s.split_once('@') {
            Some((size, fps)) => (size, fps.parse::<f64>().map_err(|_| bad())?),
            None => (s, 25.0),
        };
        let (w, h) = size.split_once(['x', 'X']).ok_or_else(bad)?;
        let geom = Geometry {
            width: w.parse().map_err(|_| bad())?,
            height: h.parse().map_err(|_| bad())?,
            fps,
        };
        if geom.width == 0 || geom.height == 0 || !geom.width.is_multiple_of(2) || !geom.height.is_multiple_of(2) || fps.is_nan() || fps <= 0.0 {
            return Err(Error::Config(format!(
                "geometry `{s}`: 4:2:0 needs positive even dimensions and a positive rate"
            )));
        }
        Ok(geom)
    }
}

pub fn yuv420_frame_bytes(width: usize, height: usize) -> u64 {
    (width * height + 2 * (width.div_ceil(2) * height.div_ceil(2))) as u64
}

#[derive(Debug, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    #[serde(default = "default_fps")]
    fps: f64,
}

fn default_fps() -> f64 {
    25.0
}

/// A raw input clip and its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVideo {
    pub id: String,
    pub path: PathBuf,
    pub geometry: Geometry,
}

impl RawVideo {
    /// Geometry comes from a `<name>.toml` sidecar (`width`, `height`,
    /// optional `fps`) or from the file name: `<id>_<W>x<H>[_<fps>].yuv`.
    pub fn discover(path: &Path) -> Result<Self> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("{}: unusable file name", path.display())))?
            .to_string();
        let sidecar = path.with_extension("toml");
        if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar).at(&sidecar)?;
            let s: Sidecar = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", sidecar.display())))?;
            let geometry = format!("{}x{}@{}", s.width, s.height, s.fps).parse()?;
            return Ok(Self {
                id: stem,
                path: path.to_path_buf(),
                geometry,
            });
        }
        let parts: Vec<&str> = stem.split('_').collect();
        let size_at = parts
            .iter()
            .rposition(|p| p.split_once('x').is_some_and(|(a, b)| a.parse::<usize>().is_ok() && b.parse::<usize>().is_ok()))
            .ok_or_else(|| {
                Error::Config(format!(
                    "{}: no sidecar and no `_WxH` in the file name",
                    path.display()
                ))
            })?;
        let fps = parts.get(size_at + 1).and_then(|p| p.parse::<f64>().ok()).unwrap_or(25.0);
        let geometry = format!("{}@{fps}", parts[size_at]).parse()?;
        let id = if size_at == 0 {
            stem.clone()
        } else {
            parts[..size_at].join("_")
        };
        Ok(Self {
            id,
            path: path.to_path_buf(),
            geometry,
        })
    }

    pub fn frame_count(&self) -> Result<usize> {
        frame_count(&self.path, self.geometry.width, self.geometry.height)
    }
}

/// Number of whole frames in a planar file; a partial trailing frame is an
/// integrity error.
pub fn frame_count(path: &Path, width: usize, height: usize) -> Result<usize> {
    let len = std::fs::metadata(path).at(path)?.len();
    let fb = yuv420_frame_bytes(width, height);
    if len % fb != 0 {
        return Err(Error::Integrity(format!(
            "{}: {len} bytes is not a whole number of {width}×{height} frames ({fb} bytes each)",
            path.display()
        )));
    }
    Ok((len / fb) as usize)
}

/// One decoded frame: normalized luma and untouched chroma bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct YuvFrame {
    pub luma: Plane,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
}

pub fn read_yuv420(path: &Path, width: usize, height: usize, frame_index: usize) -> Result<YuvFrame> {
    let fb = yuv420_frame_bytes(width, height);
    let mut f = File::open(path).at(path)?;
    let actual = f.metadata().at(path)?.len();
    let expected = (frame_index as u64 + 1) * fb;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    f.seek(SeekFrom::Start(frame_index as u64 * fb)).at(path)?;
    let mut buf = vec![0u8; fb as usize];
    f.read_exact(&mut buf).at(path)?;
    let (y, uv) = buf.split_at(width * height);
    let (u, v) = uv.split_at(uv.len() / 2);
    Ok(YuvFrame {
        luma: Plane::from_u8(height, width, y)?,
        u: u.to_vec(),
        v: v.to_vec(),
    })
}

/// Luma of every frame in a planar file.
pub fn read_luma_frames(path: &Path, width: usize, height: usize) -> Result<Vec<Plane>> {
    let n = frame_count(path, width, height)?;
    let bytes = std::fs::read(path).at(path)?;
    let fb = yuv420_frame_bytes(width, height) as usize;
    (0..n)
        .map(|i| Plane::from_u8(height, width, &bytes[i * fb..i * fb + width * height]))
        .collect()
}

pub fn write_yuv420(w: &mut impl Write, luma: &Plane, u: &[u8], v: &[u8]) -> std::io::Result<()> {
    w.write_all(&luma.to_u8())?;
    w.write_all(u)?;
    w.write_all(v)
}

/// Lowercase hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).at(path)?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).at(path)?;
    Ok(hex::encode(h.finalize()))
}

/// An external command as it was run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub program: String,
    pub args: Vec<String>,
}

impl Invocation {
    pub fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .map(|a| {
                if a.contains([' ', '"', '\'']) || a.is_empty() {
                    format!("'{a}'")
                } else {
                    a.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn run(&self) -> Result<()> {
        let out = Command::new(&self.program).args(&self.args).output().map_err(|e| Error::Pipeline {
            command: self.command_line(),
            status: "not started".into(),
            log: e.to_string(),
        })?;
        if !out.status.success() {
            return Err(Error::Pipeline {
                command: self.command_line(),
                status: out.status.to_string(),
                log: String::from_utf8_lossy(&out.stderr).into_owned(),
            });
        }
        Ok(())
    }
}

/// Encodes planar 4:2:0 to an HEVC elementary stream and back.
pub trait Codec: Send + Sync {
    fn encode_args(&self, input: &Path, geometry: &Geometry, profile: &EncodeProfile, output: &Path) -> Invocation;
    fn decode_args(&self, input: &Path, output: &Path) -> Invocation;
}

/// `ffmpeg` built with `libx265`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FfmpegX265 {
    pub program: PathBuf,
}

impl Default for FfmpegX265 {
    /// `$TSAN_FFMPEG` if set, else `ffmpeg` from `PATH`.
    fn default() -> Self {
        Self {
            program: std::env::var_os("TSAN_FFMPEG").map(PathBuf::from).unwrap_or_else(|| "ffmpeg".into()),
        }
    }
}

impl FfmpegX265 {
    /// x265 options: GOP, references, loop filters, and single-threaded
    /// frame encoding so reruns are bit-exact.
    pub fn x265_params(profile: &EncodeProfile) -> String {
        format!(
            "keyint={}:ref={}:{}:{}:frame-threads=1:pools=1:log-level=error",
            profile.gop_size,
            profile.max_references,
            if profile.deblock { "deblock=0,0" } else { "no-deblock=1" },
            if profile.sao { "sao=1" } else { "no-sao=1" },
        )
    }

    /// Fails with a pipeline error if the executable or `libx265` is missing.
    pub fn check_available(&self) -> Result<()> {
        let inv = Invocation {
            program: self.program.display().to_string(),
            args: vec!["-hide_banner".into(), "-h".into(), "encoder=libx265".into()],
        };
        let out = Command::new(&inv.program).args(&inv.args).output().map_err(|e| Error::Pipeline {
            command: inv.command_line(),
            status: "not started".into(),
            log: e.to_string(),
        })?;
        let text = String::from_utf8_lossy(&out.stdout);
        if !out.status.success() || !text.contains("libx265") {
            return Err(Error::Pipeline {
                command: inv.command_line(),
                status: out.status.to_string(),
                log: "libx265 encoder not available".into(),
            });
        }
        Ok(())
    }
}

impl Codec for FfmpegX265 {
    fn encode_args(&self, input: &Path, g: &Geometry, profile: &EncodeProfile, output: &Path) -> Invocation {
        let args = [
            "-hide_banner",
            "-loglevel",
            "error",
            "-y",
            "-f",
            "rawvideo",
            "-pix_fmt",
            "yuv420p",
            "-s:v",
            &format!("{}x{}", g.width, g.height),
            "-r",
            &g.fps.to_string(),
            "-i",
            &input.display().to_string(),
            "-c:v",
            "libx265",
            "-preset",
            &profile.preset,
            "-b:v",
            &format!("{}k", profile.bitrate_kbps),
            "-x265-params",
            &Self::x265_params(profile),
            "-f",
            "hevc",
            &output.display().to_string(),
        ];
        Invocation {
            program: self.program.display().to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn decode_args(&self, input: &Path, output: &Path) -> Invocation {
        let args = [
            "-hide_banner",
            "-loglevel",
            "error",
            "-y",
            "-i",
            &input.display().to_string(),
            "-fps_mode",
            "passthrough",
            "-f",
            "rawvideo",
            "-pix_fmt",
            "yuv420p",
            &output.display().to_string(),
        ];
        Invocation {
            program: self.program.display().to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Aligned raw / initial-decoded / transcoded-decoded stores of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub frame_rate: f64,
    pub raw: PathBuf,
    pub initial: PathBuf,
    pub transcoded: PathBuf,
    pub resolution_class: ResolutionClass,
}

impl SequenceRecord {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            width: self.width,
            height: self.height,
            fps: self.frame_rate,
        }
    }

    /// Checks that the three stores hold the same number of frames.
    pub fn verify(&self) -> Result<()> {
        for p in [&self.raw, &self.initial, &self.transcoded] {
            let n = frame_count(p, self.width, self.height)?;
            if n != self.frame_count {
                return Err(Error::Integrity(format!(
                    "{}: {n} frames, expected {}",
                    p.display(),
                    self.frame_count
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub profile: EncodeProfile,
    pub encode: String,
    pub decode: String,
    pub bitstream: PathBuf,
    pub bitstream_sha256: String,
    pub decoded_sha256: String,
}

/// Per-sequence provenance written next to the stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub record: SequenceRecord,
    pub source: PathBuf,
    pub raw_sha256: String,
    pub initial: StageLog,
    pub transcode: StageLog,
}

pub const SEQUENCE_MANIFEST: &str = "manifest.toml";
pub const DATASET_MANIFEST: &str = "dataset.toml";

fn run_stage(
    codec: &dyn Codec,
    input: &Path,
    geometry: &Geometry,
    profile: &EncodeProfile,
    bitstream: &Path,
    decoded: &Path,
) -> Result<StageLog> {
    let enc = codec.encode_args(input, geometry, profile, bitstream);
    enc.run()?;
    let dec = codec.decode_args(bitstream, decoded);
    dec.run()?;
    Ok(StageLog {
        profile: profile.clone(),
        encode: enc.command_line(),
        decode: dec.command_line(),
        bitstream: bitstream.to_path_buf(),
        bitstream_sha256: sha256_file(bitstream)?,
        decoded_sha256: sha256_file(decoded)?,
    })
}

/// Initial-encode the raw clip, decode, transcode the decoded result, decode
/// again, and record everything under `work_dir/<id>/`.
pub fn build_triplets(raw: &RawVideo, ladder: &BitrateLadder, work_dir: &Path, codec: &dyn Codec) -> Result<SequenceManifest> {
    let g = raw.geometry;
    let frames = raw.frame_count()?;
    if frames == 0 {
        return Err(Error::Integrity(format!("{} holds no frames", raw.path.display())));
    }
    let dir = work_dir.join(&raw.id);
    std::fs::create_dir_all(&dir).at(&dir)?;
    let class = ResolutionClass::of_height(g.height);
    let (initial, transcode) = ladder.profiles(class);

    let raw_store = dir.join("raw.yuv");
    std::fs::copy(&raw.path, &raw_store).at(&raw_store)?;
    let initial_store = dir.join("initial.yuv");
    let transcoded_store = dir.join("transcoded.yuv");
    let initial_log = run_stage(codec, &raw_store, &g, &initial, &dir.join("initial.hevc"), &initial_store)?;
    let transcode_log = run_stage(codec, &initial_store, &g, &transcode, &dir.join("transcoded.hevc"), &transcoded_store)?;

    let record = SequenceRecord {
        id: raw.id.clone(),
        width: g.width,
        height: g.height,
        frame_count: frames,
        frame_rate: g.fps,
        raw: raw_store.clone(),
        initial: initial_store,
        transcoded: transcoded_store,
        resolution_class: class,
    };
    record.verify()?;
    let manifest = SequenceManifest {
        record,
        source: raw.path.clone(),
        raw_sha256: sha256_file(&raw_store)?,
        initial: initial_log,
        transcode: transcode_log,
    };
    let path = dir.join(SEQUENCE_MANIFEST);
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).at(&path)?;
    Ok(manifest)
}

/// All sequences of a prepared work directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetManifest {
    #[serde(rename = "sequence")]
    pub sequences: Vec<SequenceRecord>,
}

impl DatasetManifest {
    /// Store paths under the manifest's directory are written relative to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut m = self.clone();
        for s in &mut m.sequences {
            for p in [&mut s.raw, &mut s.initial, &mut s.transcoded] {
                if let Ok(rel) = p.strip_prefix(base) {
                    *p = rel.to_path_buf();
                }
            }
        }
        let text = toml::to_string_pretty(&m).map_err(|e| Error::Config(e.to_string()))?;
        let mut f = BufWriter::new(File::create(path).at(path)?);
        f.write_all(text.as_bytes()).at(path)?;
        f.flush().at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut m: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative store paths are relative to the manifest.
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut m.sequences {
            for p in [&mut s.raw, &mut s.initial, &mut s.transcoded] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(m)
    }

    /// `path` itself, or `path/dataset.toml` for a work directory.
    pub fn locate(path: &Path) -> PathBuf {
        if path.is_dir() {
            path.join(DATASET_MANIFEST)
        } else {
            path.to_path_buf()
        }
    }
}

/// All luma frames of a sequence's three stores, in memory.
#[derive(Debug, Clone)]
pub struct TripletFrames {
    pub id: String,
    pub raw: Vec<Plane>,
    pub initial: Vec<Plane>,
    pub transcoded: Vec<Plane>,
}

impl TripletFrames {
    pub fn load(record: &SequenceRecord) -> Result<Self> {
        let read = |p: &Path| read_luma_frames(p, record.width, record.height);
        let t = Self {
            id: record.id.clone(),
            raw: read(&record.raw)?,
            initial: read(&record.initial)?,
            transcoded: read(&record.transcoded)?,
        };
        if t.raw.len() != t.initial.len() || t.raw.len() != t.transcoded.len() {
            return Err(Error::Integrity(format!(
                "{}: stores hold {}/{}/{} frames",
                record.id,
                t.raw.len(),
                t.initial.len(),
                t.transcoded.len()
            )));
        }
        Ok(t)
    }

    pub fn frame_count(&self) -> usize {
        self.raw.len()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.raw[0].dim()
    }

    /// Full-frame window around `center` with replicated ends.
    pub fn full_clip(&self, center: usize, radius: usize) -> Result<ClipSample> {
        let (h, w) = self.dim();
        self.crop_clip(center, radius, 0, 0, h, w)
    }

    /// Window around `center` cropped to `height × width` at `(top, left)`.
    pub fn crop_clip(&self, center: usize, radius: usize, top: usize, left: usize, height: usize, width: usize) -> Result<ClipSample> {
        if center >= self.frame_count() {
            return contract(format!("frame {center} out of range ({} frames)", self.frame_count()));
        }
        let frames = window_indices(center, radius, self.frame_count())
            .into_iter()
            .map(|i| self.transcoded[i].crop(top, left, height, width))
            .collect::<Result<Vec<_>>>()?;
        ClipSample::new(
            frames,
            Some(self.initial[center].crop(top, left, height, width)?),
            Some(self.raw[center].crop(top, left, height, width)?),
        )
    }
}

/// Patch geometry for training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    pub temporal_radius: usize,
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            size: 64,
            temporal_radius: 1,
            seed: 0,
        }
    }
}

/// Random square crop around `center`; the position depends only on the
/// seed and the centre index.
pub fn sample_clip(frames: &TripletFrames, center: usize, spec: &PatchSpec) -> Result<ClipSample> {
    let (h, w) = frames.dim();
    if spec.size > h || spec.size > w || spec.size == 0 {
        return contract(format!("patch {0}×{0} does not fit a {h}×{w} frame", spec.size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (center as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let top = rng.gen_range(0..=h - spec.size);
    let left = rng.gen_range(0..=w - spec.size);
    frames.crop_clip(center, spec.temporal_radius, top, left, spec.size, spec.size)
}

/// Mean luma PSNR of the initial and transcoded stores against raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub id: String,
    pub psnr_initial: f64,
    pub psnr_transcoded: f64,
}

pub fn dataset_stats(record: &SequenceRecord) -> Result<DatasetStats> {
    stats_of(&TripletFrames::load(record)?)
}

pub fn stats_of(t: &TripletFrames) -> Result<DatasetStats> {
    let mean = |store: &[Plane]| -> Result<f64> {
        let mut s = 0.0;
        for (a, r) in store.iter().zip(&t.raw) {
            s += cap_psnr(psnr(a, r)?);
        }
        Ok(s / t.raw.len() as f64)
    };
    Ok(DatasetStats {
        id: t.id.clone(),
        psnr_initial: mean(&t.initial)?,
        psnr_transcoded: mean(&t.transcoded)?,
    })
}
