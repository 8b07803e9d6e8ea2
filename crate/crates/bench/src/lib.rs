//! Seeded inputs for the benchmarks in `benches/`.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsan_core::{ConvSpec, FeatureMap, FlowField, OffsetField, Plane};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn feature_map(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::new(Array3::from_shape_fn((c, h, w), |_| rng.gen_range(0.0..1.0))).unwrap()
}

pub fn conv_spec(rng: &mut impl Rng, c_out: usize, c_in: usize, dilation: usize, stride: usize) -> ConvSpec {
    let std = (2.0 / (9 * c_in) as f32).sqrt();
    let w = Array4::from_shape_fn((c_out, c_in, 3, 3), |_| rng.gen_range(-std..std));
    ConvSpec::new(w, Array1::zeros(c_out), dilation, stride).unwrap()
}

pub fn offsets(rng: &mut impl Rng, h: usize, w: usize, range: f32) -> OffsetField {
    OffsetField::new(Array3::from_shape_fn((18, h, w), |_| rng.gen_range(-range..range))).unwrap()
}

pub fn flow(rng: &mut impl Rng, h: usize, w: usize, range: f32) -> FlowField {
    let mut f = || Array2::from_shape_fn((h, w), |_| rng.gen_range(-range..range));
    FlowField::new(f(), f()).unwrap()
}

/// Smooth texture so the flow estimator has gradients to work with.
pub fn texture(h: usize, w: usize, shift_x: f32, shift_y: f32) -> Plane {
    Plane::from_fn(h, w, |(y, x)| {
        let (x, y) = (x as f32 - shift_x, y as f32 - shift_y);
        0.5 + 0.25 * (0.31 * x).sin() * (0.23 * y).cos() + 0.15 * (0.11 * (x + y)).sin()
    })
    .unwrap()
}
