//! Finite-difference verification of reverse-mode gradients.
//!
//! Checks run in `f64`. A non-scalar output is reduced with a fixed random
//! projection `L = Σ r ⊙ out`, so every output element participates.
//! The error for one probe is `|a − n| / max(|a|, |n|, atol)` where `a` is the
//! analytic and `n` the central-difference derivative.

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Var;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub probes: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub epsilon: f64,
    /// Probe at most this many randomly chosen elements per input.
    pub probes_per_input: Option<usize>,
    pub atol: f64,
    pub seed: u64,
}

impl GradCheck {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            probes_per_input: None,
            atol: 1e-6,
            seed: 0x6772_6164,
        }
    }

    pub fn probes(mut self, n: usize) -> Self {
        self.probes_per_input = Some(n);
        self
    }

    fn scalarize<Op>(&self, op: &Op, inputs: &[Var<f64>], proj: &mut Option<Var<f64>>) -> Result<Var<f64>>
    where
        Op: Fn(&[Var<f64>]) -> Result<Var<f64>>,
    {
        let out = op(inputs)?;
        if out.value().len() == 1 {
            return Ok(out);
        }
        let r = proj.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
            Var::constant(out.value().mapv(|_| rng.sample::<f64, _>(StandardNormal)))
        });
        Ok(out.mul(r)?.sum())
    }

    fn eval<Op>(&self, op: &Op, inputs: &[ArrayD<f64>], proj: &mut Option<Var<f64>>) -> Result<f64>
    where
        Op: Fn(&[Var<f64>]) -> Result<Var<f64>>,
    {
        let vars: Vec<_> = inputs.iter().cloned().map(Var::constant).collect();
        self.scalarize(op, &vars, proj)?.scalar_value()
    }

    fn analytic<Op>(&self, op: &Op, inputs: &[ArrayD<f64>], proj: &mut Option<Var<f64>>) -> Result<Vec<ArrayD<f64>>>
    where
        Op: Fn(&[Var<f64>]) -> Result<Var<f64>>,
    {
        let leaves: Vec<_> = inputs.iter().cloned().map(Var::leaf).collect();
        let loss = self.scalarize(op, &leaves, proj)?;
        let grads = loss.backward()?;
        Ok(leaves.iter().map(|v| grads.get_or_zeros(v)).collect())
    }

    fn error(&self, a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(self.atol)
    }

    /// Element-wise comparison against central differences.
    pub fn run<Op>(&self, op: Op, inputs: &[ArrayD<f64>]) -> Result<GradCheckReport>
    where
        Op: Fn(&[Var<f64>]) -> Result<Var<f64>>,
    {
        let mut proj = None;
        let analytic = self.analytic(&op, inputs, &mut proj)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            probes: 0,
        };
        let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
        for (i, grad) in analytic.iter().enumerate() {
            let n = inputs[i].len();
            let picks: Vec<usize> = match self.probes_per_input {
                Some(p) if p < n => (0..p).map(|_| rng.gen_range(0..n)).collect(),
                _ => (0..n).collect(),
            };
            for j in picks {
                let orig = inputs[i].as_slice_memory_order().expect("contiguous")[j];
                work[i].as_slice_memory_order_mut().expect("contiguous")[j] = orig + self.epsilon;
                let plus = self.eval(&op, &work, &mut proj)?;
                work[i].as_slice_memory_order_mut().expect("contiguous")[j] = orig - self.epsilon;
                let minus = self.eval(&op, &work, &mut proj)?;
                work[i].as_slice_memory_order_mut().expect("contiguous")[j] = orig;
                let numeric = (plus - minus) / (2.0 * self.epsilon);
                let a = grad.as_slice_memory_order().expect("contiguous")[j];
                report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
                report.max_rel_error = report.max_rel_error.max(self.error(a, numeric));
                report.probes += 1;
            }
        }
        Ok(report)
    }

    /// Directional comparison: for each input and each of `directions`
    /// random unit directions `v`, compare `∇L·v` with the central difference
    /// of `L` along `v`.
    pub fn run_projected<Op>(&self, op: Op, inputs: &[ArrayD<f64>], directions: usize) -> Result<GradCheckReport>
    where
        Op: Fn(&[Var<f64>]) -> Result<Var<f64>>,
    {
        let mut proj = None;
        let analytic = self.analytic(&op, inputs, &mut proj)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            probes: 0,
        };
        let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
        for (i, grad) in analytic.iter().enumerate() {
            for _ in 0..directions {
                let mut v = inputs[i].mapv(|_| rng.sample::<f64, _>(StandardNormal));
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.mapv_inplace(|x| x / norm);
                let a: f64 = grad.iter().zip(v.iter()).map(|(g, d)| g * d).sum();
                work[i] = &inputs[i] + &v.mapv(|x| x * self.epsilon);
                let plus = self.eval(&op, &work, &mut proj)?;
                work[i] = &inputs[i] - &v.mapv(|x| x * self.epsilon);
                let minus = self.eval(&op, &work, &mut proj)?;
                work[i] = inputs[i].clone();
                let numeric = (plus - minus) / (2.0 * self.epsilon);
                report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
                report.max_rel_error = report.max_rel_error.max(self.error(a, numeric));
                report.probes += 1;
            }
        }
        Ok(report)
    }
}

/// Maximum relative discrepancy between reverse-mode and central-difference
/// gradients of `op` over every input element.
pub fn grad_check<Op>(op: Op, inputs: &[ArrayD<f64>], epsilon: f64) -> Result<f64>
where
    Op: Fn(&[Var<f64>]) -> Result<Var<f64>>,
{
    Ok(GradCheck::new(epsilon).run(op, inputs)?.max_rel_error)
}
