//! PSNR / SSIM on the 8-bit luma scale and per-sequence improvement reports.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{contract, IoContext, Result};
use crate::numcore::Plane;

/// Aggregates replace an infinite PSNR (identical frames) with this value.
pub const PSNR_CAP: f64 = 100.0;

const PEAK: f64 = 255.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape(a: &Plane, b: &Plane, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return contract(format!("{what}: shapes differ ({:?} vs {:?})", a.dim(), b.dim()));
    }
    Ok(())
}

fn scaled(p: &Plane) -> Array2<f64> {
    p.data().mapv(|v| v as f64 * PEAK)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical planes.
pub fn psnr(a: &Plane, b: &Plane) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let mse = (scaled(a) - scaled(b)).mapv(|d| d * d).mean().expect("non-empty");
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn cap_psnr(v: f64) -> f64 {
    v.min(PSNR_CAP)
}

fn gaussian_kernel() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over valid windows only.
fn filter_valid(a: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = a.dim();
    let n = k.len();
    let rows: Array2<f64> = Array2::from_shape_fn((h, w - n + 1), |(y, x)| (0..n).map(|i| k[i] * a[[y, x + i]]).sum());
    Array2::from_shape_fn((h - n + 1, w - n + 1), |(y, x)| (0..n).map(|i| k[i] * rows[[y + i, x]]).sum())
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// every window fully inside the frame.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return contract(format!("ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} frames, got {h}×{w}"));
    }
    let (x, y) = (scaled(a), scaled(b));
    let k = gaussian_kernel();
    let mx = filter_valid(&x, &k);
    let my = filter_valid(&y, &k);
    let sxx = filter_valid(&(&x * &x), &k) - &mx * &mx;
    let syy = filter_valid(&(&y * &y), &k) - &my * &my;
    let sxy = filter_valid(&(&x * &y), &k) - &mx * &my;
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let mut total = 0.0;
    for (((&mx, &my), (&sxx, &syy)), &sxy) in mx.iter().zip(my.iter()).zip(sxx.iter().zip(syy.iter())).zip(sxy.iter()) {
        total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Quality of one frame before and after restoration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub ssim_before: f64,
    pub ssim_after: f64,
}

/// Sequence means (PSNR capped) and their differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMetrics {
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub ssim_before: f64,
    pub ssim_after: f64,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
    pub frames: Vec<FrameMetrics>,
}

/// `before` and `after` hold `(frame, reference)` pairs in frame order.
pub fn delta_metrics(before: &[(Plane, Plane)], after: &[(Plane, Plane)]) -> Result<DeltaMetrics> {
    if before.len() != after.len() || before.is_empty() {
        return contract(format!(
            "delta_metrics needs equal, non-empty frame counts (got {} and {})",
            before.len(),
            after.len()
        ));
    }
    let frames = before
        .iter()
        .zip(after)
        .enumerate()
        .map(|(index, ((b, rb), (a, ra)))| {
            Ok(FrameMetrics {
                index,
                psnr_before: psnr(b, rb)?,
                psnr_after: psnr(a, ra)?,
                ssim_before: ssim(b, rb)?,
                ssim_after: ssim(a, ra)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(frames))
}

pub fn summarize(frames: Vec<FrameMetrics>) -> DeltaMetrics {
    let n = frames.len().max(1) as f64;
    let mean = |f: &dyn Fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
    let psnr_before = mean(&|m| cap_psnr(m.psnr_before));
    let psnr_after = mean(&|m| cap_psnr(m.psnr_after));
    let ssim_before = mean(&|m| m.ssim_before);
    let ssim_after = mean(&|m| m.ssim_after);
    DeltaMetrics {
        psnr_before,
        psnr_after,
        ssim_before,
        ssim_after,
        delta_psnr: psnr_after - psnr_before,
        delta_ssim: ssim_after - ssim_before,
        frames,
    }
}

/// One row per frame: `index,psnr_before,psnr_after,ssim_before,ssim_after`.
pub fn write_frame_csv(path: &Path, frames: &[FrameMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for f in frames {
        w.serialize(f)?;
    }
    w.flush().at(path)
}

pub fn format_frame_table(frames: &[FrameMetrics]) -> String {
    let mut s = format!(
        "{:>6} {:>12} {:>12} {:>12} {:>12}\n",
        "frame", "psnr_before", "psnr_after", "ssim_before", "ssim_after"
    );
    for f in frames {
        s += &format!(
            "{:>6} {:>12.4} {:>12.4} {:>12.6} {:>12.6}\n",
            f.index, f.psnr_before, f.psnr_after, f.ssim_before, f.ssim_after
        );
    }
    s
}

pub fn write_frame_table(path: &Path, frames: &[FrameMetrics]) -> Result<()> {
    let mut f = std::fs::File::create(path).at(path)?;
    f.write_all(format_frame_table(frames).as_bytes()).at(path)
}
