//! Loss functions with NumPy-identical summation order.

use serde::{Deserialize, Serialize};

use crate::domain::{Target, TaskFamily, TaskSpec};
use crate::error::{Result, VmlError};
use crate::numfmt::mean;

/// Offset inside the logarithm of the cross-entropy.
pub const CE_EPSILON: f64 = 1e-8;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(VmlError::invalid(format!(
            "length mismatch: {a} predictions, {b} targets"
        )));
    }
    if a == 0 {
        return Err(VmlError::invalid("loss of an empty batch"));
    }
    Ok(())
}

/// `(1/N) Σ (y - ŷ)²`.
pub fn loss_mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_len(preds.len(), targets.len())?;
    let sq: Vec<f64> = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let d = p - t;
            d * d
        })
        .collect();
    Ok(mean(&sq))
}

/// `-(1/(N·K)) Σₙ Σₖ y_nk · ln(p_nk + 1e-8)`.
pub fn loss_cross_entropy(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    check_len(preds.len(), targets.len())?;
    let k = targets[0].len();
    let mut terms = Vec::with_capacity(preds.len() * k);
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != k || t.len() != k {
            return Err(VmlError::invalid(format!(
                "vector width mismatch: expected {k}, got {} and {}",
                p.len(),
                t.len()
            )));
        }
        terms.extend(p.iter().zip(t).map(|(p, t)| t * (p + CE_EPSILON).ln()));
    }
    Ok(-mean(&terms))
}

/// Fraction of mismatched classes. `None` (unparseable) always counts as wrong.
pub fn loss_zero_one(preds: &[Option<usize>], targets: &[usize]) -> Result<f64> {
    check_len(preds.len(), targets.len())?;
    let wrong = preds.iter().zip(targets).filter(|(p, t)| **p != Some(**t)).count();
    Ok(wrong as f64 / preds.len() as f64)
}

/// Fraction of matched classes, counted directly rather than as `1 - loss`
/// so the value matches the transcripts exactly.
pub fn accuracy(preds: &[Option<usize>], targets: &[usize]) -> Result<f64> {
    check_len(preds.len(), targets.len())?;
    let right = preds.iter().zip(targets).filter(|(p, t)| **p == Some(**t)).count();
    Ok(right as f64 / preds.len() as f64)
}

/// All losses logged for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub mse: Option<f64>,
    pub ce: Option<f64>,
    pub zero_one: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Losses {
    /// The loss reported as "Overall Loss": MSE for regression,
    /// cross-entropy for probability outputs, zero-one loss for labels.
    pub fn primary(&self) -> f64 {
        self.mse.or(self.ce).or(self.zero_one).unwrap_or(f64::NAN)
    }
}

fn classes(task: &TaskSpec, values: &[Target]) -> Vec<Option<usize>> {
    values
        .iter()
        .map(|v| v.class().filter(|c| *c < task.label_count))
        .collect()
}

/// Computes the task's losses from prediction and target values.
pub fn compute_losses(task: &TaskSpec, preds: &[Target], targets: &[Target]) -> Result<Losses> {
    check_len(preds.len(), targets.len())?;
    let kind = |v: &Target| VmlError::invalid(format!("value {v:?} does not fit {:?}", task.family));
    match task.family {
        TaskFamily::Regression1d => {
            let p = preds
                .iter()
                .map(|v| v.as_real().ok_or_else(|| kind(v)))
                .collect::<Result<Vec<_>>>()?;
            let t = targets
                .iter()
                .map(|v| v.as_real().ok_or_else(|| kind(v)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Losses {
                mse: Some(loss_mse(&p, &t)?),
                ..Losses::default()
            })
        }
        _ => {
            let tc = targets
                .iter()
                .map(|v| v.class().ok_or_else(|| kind(v)))
                .collect::<Result<Vec<_>>>()?;
            let pc = classes(task, preds);
            let ce = if task.family == TaskFamily::Classification2dProb {
                let p = preds
                    .iter()
                    .map(|v| v.as_probs().map(<[f64]>::to_vec).ok_or_else(|| kind(v)))
                    .collect::<Result<Vec<_>>>()?;
                let t = targets
                    .iter()
                    .map(|v| v.as_probs().map(<[f64]>::to_vec).ok_or_else(|| kind(v)))
                    .collect::<Result<Vec<_>>>()?;
                Some(loss_cross_entropy(&p, &t)?)
            } else {
                None
            };
            Ok(Losses {
                mse: None,
                ce,
                zero_one: Some(loss_zero_one(&pc, &tc)?),
                accuracy: Some(accuracy(&pc, &tc)?),
            })
        }
    }
}
