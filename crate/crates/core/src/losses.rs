//! Dual-supervised training objective.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numcore::{Plane, Real, Var};

/// Weights of the intermediate (`alpha`) and final (`beta`) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.2, beta: 0.8 }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return contract(format!("loss weights must be finite and non-negative, got ({alpha}, {beta})"));
        }
        Ok(Self { alpha, beta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_a: f64,
    pub loss_g: f64,
    pub total: f64,
    pub config: LossConfig,
}

fn batch_mse(pred: &[Plane], target: &[Plane]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return contract(format!(
            "loss needs equal, non-empty batches (got {} and {})",
            pred.len(),
            target.len()
        ));
    }
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.dim() != t.dim() {
            return contract(format!("loss operands differ in shape: {:?} vs {:?}", p.dim(), t.dim()));
        }
        let se: f64 = p
            .data()
            .iter()
            .zip(t.data().iter())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        sum += se / p.data().len() as f64;
    }
    Ok(sum / pred.len() as f64)
}

/// Batch mean of the per-item MSE between the intermediate restoration and
/// the initial-encode label.
pub fn loss_auxiliary(h_re: &[Plane], y_init: &[Plane]) -> Result<f64> {
    batch_mse(h_re, y_init)
}

/// Batch mean of the per-item MSE between the final restoration and the raw
/// frame.
pub fn loss_global(y_re: &[Plane], y_raw: &[Plane]) -> Result<f64> {
    batch_mse(y_re, y_raw)
}

pub fn loss_total(loss_a: f64, loss_g: f64, cfg: LossConfig) -> LossReport {
    LossReport {
        loss_a,
        loss_g,
        total: cfg.alpha * loss_a + cfg.beta * loss_g,
        config: cfg,
    }
}

/// Differentiable counterpart of [`loss_total`] for one batch item, scaled
/// by `1 / batch` so that summing item gradients gives the batch gradient.
/// `intermediate` must be present when `alpha > 0`.
pub fn weighted_item_loss<F: Real>(
    intermediate: Option<(&Var<F>, &Var<F>)>,
    restored: (&Var<F>, &Var<F>),
    cfg: LossConfig,
    batch: usize,
) -> Result<Var<F>> {
    let scale = 1.0 / batch.max(1) as f64;
    let mut loss = restored.0.mse(restored.1)?.scale(F::lit(cfg.beta * scale));
    if cfg.alpha != 0.0 {
        let Some((h, y)) = intermediate else {
            return contract("alpha > 0 needs the intermediate restoration");
        };
        loss = loss.add(&h.mse(y)?.scale(F::lit(cfg.alpha * scale)))?;
    }
    Ok(loss)
}
