mod support;

use approx::assert_relative_eq;
use ndarray::{Array2, ArrayD, IxDyn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::texture;
use tsan_core::losses::{loss_auxiliary, loss_global, loss_total, weighted_item_loss, LossConfig};
use tsan_core::metrics::{cap_psnr, delta_metrics, format_frame_table, psnr, psnr_from_mse, ssim, write_frame_csv, PSNR_CAP};
use tsan_core::numcore::Var;
use tsan_core::Plane;

fn constant(h: usize, w: usize, v: f32) -> Plane {
    Plane::from_fn(h, w, |_| v).unwrap()
}

fn textured(h: usize, w: usize, phase: f64) -> Plane {
    Plane::new(texture(h, w, phase).mapv(|v| v as f32)).unwrap()
}

fn from_u8(a: &Array2<u8>) -> Plane {
    let (h, w) = a.dim();
    Plane::from_u8(h, w, a.as_standard_layout().as_slice().unwrap()).unwrap()
}

#[test]
fn mse_losses_match_closed_forms() {
    let z = constant(8, 8, 0.3);
    assert_eq!(loss_auxiliary(std::slice::from_ref(&z), std::slice::from_ref(&z)).unwrap(), 0.0);
    assert_eq!(loss_global(std::slice::from_ref(&z), std::slice::from_ref(&z)).unwrap(), 0.0);
    let a = loss_auxiliary(&[constant(8, 8, 0.4)], &[constant(8, 8, 0.3)]).unwrap();
    assert_relative_eq!(a, 0.01, max_relative = 1e-6);
    let g = loss_global(&[constant(8, 8, 0.5)], &[constant(8, 8, 0.3)]).unwrap();
    assert_relative_eq!(g, 0.04, max_relative = 1e-6);
}

#[test]
fn batch_loss_is_mean_of_item_losses() {
    // Item MSEs 0.02 and 0.04 from half-plane differences.
    let target = constant(4, 4, 0.0);
    let item = |mse: f32| Plane::from_fn(4, 4, |(y, _)| if y < 2 { (2.0 * mse).sqrt() } else { 0.0 }).unwrap();
    let l = loss_global(&[item(0.02), item(0.04)], &[target.clone(), target]).unwrap();
    assert_relative_eq!(l, 0.03, max_relative = 1e-6);
}

#[test]
fn loss_rejects_bad_batches() {
    assert!(loss_auxiliary(&[], &[]).is_err());
    assert!(loss_auxiliary(&[constant(4, 4, 0.0)], &[constant(4, 5, 0.0)]).is_err());
    assert!(loss_global(&[constant(4, 4, 0.0)], &[]).is_err());
    assert!(LossConfig::new(-0.1, 1.0).is_err());
    assert!(LossConfig::new(f64::NAN, 1.0).is_err());
}

#[test]
fn loss_total_examples() {
    assert_eq!(LossConfig::default(), LossConfig { alpha: 0.2, beta: 0.8 });
    let r = loss_total(0.7, 0.3, LossConfig::new(0.0, 1.0).unwrap());
    assert_eq!(r.total, 0.3);
    assert_relative_eq!(loss_total(1.0, 1.0, LossConfig::default()).total, 1.0, epsilon = 1e-12);
    assert_relative_eq!(loss_total(0.2, 0.4, LossConfig::new(0.5, 0.5).unwrap()).total, 0.3, epsilon = 1e-12);
}

proptest! {
    #[test]
    fn loss_total_is_linear(alpha in 0.0f64..4.0, beta in 0.0f64..4.0, a in 0.0f64..10.0, g in 0.0f64..10.0) {
        let r = loss_total(a, g, LossConfig::new(alpha, beta).unwrap());
        prop_assert!((r.total - (alpha * a + beta * g)).abs() <= 1e-6);
        prop_assert_eq!(r.loss_a, a);
        prop_assert_eq!(r.loss_g, g);
    }

    #[test]
    fn ssim_is_symmetric_and_reflexive(p1 in 0.0f64..6.0, p2 in 0.0f64..6.0, h in 11usize..20, w in 11usize..20) {
        let (a, b) = (textured(h, w, p1), textured(h, w, p2));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_error(d1 in 1u8..60, extra in 1u8..60) {
        let base = constant(12, 12, 0.5);
        let off = |d: u8| constant(12, 12, 0.5 + d as f32 / 255.0);
        let (near, far) = (psnr(&off(d1), &base).unwrap(), psnr(&off(d1 + extra), &base).unwrap());
        prop_assert!(far < near);
        prop_assert_eq!(psnr(&off(d1), &base).unwrap(), psnr(&base, &off(d1)).unwrap());
    }
}

#[test]
fn psnr_closed_forms() {
    let a = from_u8(&Array2::from_elem((16, 16), 100u8));
    let b = from_u8(&Array2::from_elem((16, 16), 116u8));
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0 * (255.0f64 / 16.0).log10(), epsilon = 1e-4);
    assert_relative_eq!(psnr_from_mse(1.0), 48.1308, epsilon = 1e-4);
    // MSE 1 on the 8-bit scale: alternating ±1 differences.
    let c = from_u8(&Array2::from_shape_fn((16, 16), |(y, x)| if (x + y) % 2 == 0 { 101 } else { 99 }));
    assert_relative_eq!(psnr(&a, &c).unwrap(), 48.1308, epsilon = 1e-4);
    assert_eq!(cap_psnr(f64::INFINITY), PSNR_CAP);
    assert!(psnr(&a, &constant(16, 15, 0.0)).is_err());
}

/// Per-window SSIM with explicit 2-D Gaussian weights.
fn ssim_oracle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = 11;
    let mut g = Array2::from_shape_fn((n, n), |(i, j)| {
        let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
        (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp()
    });
    g /= g.sum();
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let (h, w) = a.dim();
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    ma += g[[i, j]] * a[[y + i, x + j]];
                    mb += g[[i, j]] * b[[y + i, x + j]];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let (da, db) = (a[[y + i, x + j]] - ma, b[[y + i, x + j]] - mb);
                    va += g[[i, j]] * da * da;
                    vb += g[[i, j]] * db * db;
                    cov += g[[i, j]] * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_windowed_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..6 {
        let h = rng.gen_range(11..24);
        let w = rng.gen_range(11..24);
        let a = Array2::from_shape_fn((h, w), |_| rng.gen_range(0u8..=255));
        let b = Array2::from_shape_fn((h, w), |(y, x)| a[[y, x]].saturating_add(rng.gen_range(0u8..40)));
        let got = ssim(&from_u8(&a), &from_u8(&b)).unwrap();
        let want = ssim_oracle(&a.mapv(f64::from), &b.mapv(f64::from));
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn ssim_closed_forms() {
    let a = from_u8(&Array2::from_elem((16, 16), 100u8));
    let b = from_u8(&Array2::from_elem((16, 16), 110u8));
    let c1 = (0.01f64 * 255.0).powi(2);
    let want = (2.0 * 100.0 * 110.0 + c1) / (100.0f64.powi(2) + 110.0f64.powi(2) + c1);
    assert_relative_eq!(ssim(&a, &b).unwrap(), want, epsilon = 1e-9);

    let img = Array2::from_shape_fn((32, 32), |(y, x)| (128.0 + 60.0 * texture(32, 32, 0.4)[[y, x]].mul_add(2.0, -1.0)) as u8);
    let inv = img.mapv(|v| 255 - v);
    assert!(ssim(&from_u8(&img), &from_u8(&inv)).unwrap() < 0.1);
    assert!(ssim(&a, &constant(10, 10, 0.0)).is_err());
    assert!(ssim(&constant(10, 10, 0.0), &constant(10, 10, 0.0)).is_err());
}

#[test]
fn delta_metrics_behaviour() {
    let raw: Vec<Plane> = (0..2).map(|i| textured(16, 16, i as f64)).collect();
    let coded: Vec<Plane> = raw.iter().map(|p| Plane::from_fn(16, 16, |(y, x)| p.data()[[y, x]] * 0.9 + 0.03).unwrap()).collect();
    let before: Vec<_> = coded.iter().cloned().zip(raw.iter().cloned()).collect();

    let same = delta_metrics(&before, &before).unwrap();
    assert_eq!(same.delta_psnr, 0.0);
    assert_eq!(same.delta_ssim, 0.0);
    assert_eq!(same.frames.len(), 2);

    let perfect: Vec<_> = raw.iter().cloned().zip(raw.iter().cloned()).collect();
    let d = delta_metrics(&before, &perfect).unwrap();
    let mean_before = (psnr(&coded[0], &raw[0]).unwrap() + psnr(&coded[1], &raw[1]).unwrap()) / 2.0;
    assert_relative_eq!(d.psnr_after, PSNR_CAP);
    assert_relative_eq!(d.delta_psnr, PSNR_CAP - mean_before, epsilon = 1e-9);
    assert!(d.delta_psnr.is_finite());
    assert_relative_eq!(d.ssim_after, 1.0, epsilon = 1e-12);

    assert!(delta_metrics(&before, &perfect[..1]).is_err());
}

#[test]
fn frame_reports_have_one_row_per_frame() {
    let raw: Vec<Plane> = (0..3).map(|i| textured(12, 12, i as f64)).collect();
    let pairs: Vec<_> = raw.iter().map(|p| (constant(12, 12, 0.5), p.clone())).collect();
    let d = delta_metrics(&pairs, &pairs).unwrap();
    let table = format_frame_table(&d.frames);
    assert_eq!(table.lines().count(), 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frames.csv");
    write_frame_csv(&path, &d.frames).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "index,psnr_before,psnr_after,ssim_before,ssim_after");
    assert_eq!(lines.count(), 3);
}

fn rand_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[1, h, w]), |_| rng.gen_range(0.0..1.0))
}

#[test]
fn weighted_loss_gradients_scale_with_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h_re, y_init, y_re, y_raw) = (
        rand_plane(&mut rng, 6, 6),
        rand_plane(&mut rng, 6, 6),
        rand_plane(&mut rng, 6, 6),
        rand_plane(&mut rng, 6, 6),
    );
    let grads = |alpha: f64, beta: f64| {
        let h = Var::leaf(h_re.clone());
        let r = Var::leaf(y_re.clone());
        let (yi, yr) = (Var::constant(y_init.clone()), Var::constant(y_raw.clone()));
        let loss = weighted_item_loss(Some((&h, &yi)), (&r, &yr), LossConfig::new(alpha, beta).unwrap(), 1).unwrap();
        let g = loss.backward().unwrap();
        (loss.scalar_value().unwrap(), g.get_or_zeros(&h), g.get_or_zeros(&r))
    };
    let (l1, gh1, gr1) = grads(0.2, 0.8);
    let (_, gh2, gr2) = grads(0.4, 0.8);
    assert_eq!(gh2, gh1.mapv(|v| v * 2.0));
    assert_eq!(gr2, gr1);

    let la = (&h_re - &y_init).mapv(|d| d * d).mean().unwrap();
    let lg = (&y_re - &y_raw).mapv(|d| d * d).mean().unwrap();
    assert_relative_eq!(l1, 0.2 * la + 0.8 * lg, epsilon = 1e-12);

    let (l0, gh0, _) = grads(0.0, 1.0);
    assert_relative_eq!(l0, lg, epsilon = 1e-12);
    assert!(gh0.iter().all(|&v| v == 0.0));
}

#[test]
fn weighted_loss_needs_intermediate_when_alpha_positive() {
    let r = Var::<f64>::leaf(ArrayD::zeros(IxDyn(&[1, 4, 4])));
    let t = Var::constant(ArrayD::zeros(IxDyn(&[1, 4, 4])));
    assert!(weighted_item_loss(None, (&r, &t), LossConfig::default(), 1).is_err());
    assert!(weighted_item_loss(None, (&r, &t), LossConfig::new(0.0, 1.0).unwrap(), 1).is_ok());
}
