//! Objectives and metrics: Pearson correlation, concordance correlation
//! coefficient (CCC), CCC loss and its weighted multitask combination,
//! per-head MSE and the averaged multitask MSE.
//!
//! All statistics are population statistics (divide by n). CCC is computed
//! in covariance form, 2 cov / (var_x + var_y + (mean gap)^2), which equals
//! the rho-sigma form wherever the latter is defined and stays finite for
//! constant inputs.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Weights for the multitask loss: alpha for valence, beta for arousal,
/// 1 - alpha - beta for dominance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha + beta <= 1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "loss weights need alpha, beta >= 0 and alpha + beta <= 1 (got {alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn dominance(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }

    /// Equal weighting across the three dimensions.
    pub fn equal() -> Self {
        Self { alpha: 1.0 / 3.0, beta: 1.0 / 3.0 }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::equal()
    }
}

/// Per-dimension CCC on the test set plus their arithmetic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalTriple {
    pub ccc_v: f64,
    pub ccc_a: f64,
    pub ccc_d: f64,
    pub mean: f64,
}

impl EvalTriple {
    pub fn new(ccc_v: f64, ccc_a: f64, ccc_d: f64) -> Self {
        Self { ccc_v, ccc_a, ccc_d, mean: (ccc_v + ccc_a + ccc_d) / 3.0 }
    }
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "vector lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_len} elements, got {}",
            x.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population covariance of two equal-length vectors.
fn covariance(x: &[f64], y: &[f64], mx: f64, my: f64) -> f64 {
    x.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / x.len() as f64
}

/// Pearson correlation with population statistics.
///
/// Errors on constant vectors; CCC callers use the covariance form instead.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let cov = covariance(x, y, mx, my);
    let var_x = covariance(x, x, mx, mx);
    let var_y = covariance(y, y, my, my);
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::InvalidArgument(
            "undefined correlation: constant vector".into(),
        ));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Concordance correlation coefficient in covariance form.
///
/// Returns 1 when both vectors are the same constant (zero denominator is
/// only possible in that case).
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let cov = covariance(x, y, mx, my);
    let var_x = covariance(x, x, mx, mx);
    let var_y = covariance(y, y, my, my);
    let denom = var_x + var_y + (mx - my) * (mx - my);
    if denom == 0.0 {
        // Both constant with equal means: perfect agreement.
        return Ok(1.0);
    }
    Ok(2.0 * cov / denom)
}

/// CCC loss, 1 - CCC. In [0, 2].
pub fn ccc_loss(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(1.0 - ccc(x, y)?)
}

/// Weighted multitask combination of three per-dimension losses.
pub fn total_ccc_loss(lv: f64, la: f64, ld: f64, w: &LossWeights) -> f64 {
    w.alpha * lv + w.beta * la + w.dominance() * ld
}

/// Mean squared error.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 1)?;
    Ok(x.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64)
}

/// Average of the three per-dimension MSE scores.
pub fn total_mse(mv: f64, ma: f64, md: f64) -> f64 {
    (mv + ma + md) / 3.0
}

/// Per-dimension CCC of predictions against gold labels.
///
/// Callers are responsible for mapping predictions back to the original
/// label space before evaluation (CCC is sensitive to scale and location).
pub fn evaluate(
    predictions: (&[f64], &[f64], &[f64]),
    gold: (&[f64], &[f64], &[f64]),
) -> Result<EvalTriple> {
    Ok(EvalTriple::new(
        ccc(predictions.0, gold.0)?,
        ccc(predictions.1, gold.1)?,
        ccc(predictions.2, gold.2)?,
    ))
}
