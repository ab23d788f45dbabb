//! Attack losses (CE, LL, DLR) and the misclassification predicate.
//!
//! All three losses decrease as the attack succeeds, so the attack loop
//! uniformly performs descent. Misclassification is always decided by the
//! argmax predicate — never by a loss sign — because CE and DLR signs are
//! not calibrated to the decision boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, LogitHead, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Log of the true-class softmax probability.
    Ce,
    /// Logit difference `f_y - max_{j != y} f_j`; negative iff misclassified.
    Ll,
    /// Logit difference scaled by `f_pi1 - f_pi3` for scale invariance.
    Dlr,
}

impl LossKind {
    pub fn token(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Ll => "ll",
            LossKind::Dlr => "dlr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "ll" => Ok(LossKind::Ll),
            "dlr" => Ok(LossKind::Dlr),
            other => Err(Error::Parse(format!("unknown loss '{other}'"))),
        }
    }

    pub fn all() -> [LossKind; 3] {
        [LossKind::Ce, LossKind::Ll, LossKind::Dlr]
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// True iff the argmax prediction (lowest-index tie-break) differs from `y`.
pub fn is_adversarial(logits: &[f64], y: usize) -> bool {
    argmax(logits) != y
}

/// Permutation ordering the logits descending (stable, so equal values keep
/// their original relative order).
pub fn sorted_logit_indices(logits: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
    idx
}

fn check_label(logits: &[f64], y: usize) -> Result<()> {
    if y >= logits.len() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(())
}

/// Index of the largest logit excluding `y` (lowest index on ties).
fn best_other(logits: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in logits.iter().enumerate() {
        if j == y {
            continue;
        }
        if best == usize::MAX || v > logits[best] {
            best = j;
        }
    }
    best
}

fn log_softmax_at(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    logits[y] - max - sum.ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Evaluate the attack loss on a logit vector.
pub fn loss_value(kind: LossKind, logits: &[f64], y: usize) -> Result<f64> {
    check_label(logits, y)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("logits must be finite"));
    }
    match kind {
        LossKind::Ce => Ok(log_softmax_at(logits, y)),
        LossKind::Ll => {
            if logits.len() < 2 {
                return Err(Error::UnsupportedConfiguration(
                    "LL needs at least two classes".into(),
                ));
            }
            Ok(logits[y] - logits[best_other(logits, y)])
        }
        LossKind::Dlr => {
            if logits.len() < 3 {
                return Err(Error::UnsupportedConfiguration(
                    "DLR needs at least three classes".into(),
                ));
            }
            let pi = sorted_logit_indices(logits);
            let denom = logits[pi[0]] - logits[pi[2]];
            if denom == 0.0 {
                return Err(Error::DegenerateDenominator);
            }
            Ok((logits[y] - logits[best_other(logits, y)]) / denom)
        }
    }
}

/// Gradient of the loss with respect to the logits.
pub fn loss_head_grad(kind: LossKind, logits: &[f64], y: usize) -> Result<Vec<f64>> {
    check_label(logits, y)?;
    let n = logits.len();
    match kind {
        LossKind::Ce => {
            // d/df log z_y = e_y - softmax(f)
            let mut g = softmax(logits);
            for v in &mut g {
                *v = -*v;
            }
            g[y] += 1.0;
            Ok(g)
        }
        LossKind::Ll => {
            if n < 2 {
                return Err(Error::UnsupportedConfiguration(
                    "LL needs at least two classes".into(),
                ));
            }
            let j = best_other(logits, y);
            let mut g = vec![0.0; n];
            g[y] = 1.0;
            g[j] -= 1.0;
            Ok(g)
        }
        LossKind::Dlr => {
            if n < 3 {
                return Err(Error::UnsupportedConfiguration(
                    "DLR needs at least three classes".into(),
                ));
            }
            let pi = sorted_logit_indices(logits);
            let denom = logits[pi[0]] - logits[pi[2]];
            if denom == 0.0 {
                return Err(Error::DegenerateDenominator);
            }
            let j = best_other(logits, y);
            let num = logits[y] - logits[j];
            // Quotient rule: (u' v - u v') / v^2 with u' = e_y - e_j,
            // v' = e_pi1 - e_pi3.
            let mut g = vec![0.0; n];
            g[y] += 1.0 / denom;
            g[j] -= 1.0 / denom;
            let scale = num / (denom * denom);
            g[pi[0]] -= scale;
            g[pi[2]] += scale;
            Ok(g)
        }
    }
}

/// Loss as a differentiable head over model logits for one label.
#[derive(Debug, Clone, Copy)]
pub struct LossHead {
    pub kind: LossKind,
    pub y: usize,
}

impl LogitHead for LossHead {
    fn value(&self, logits: &[f64]) -> f64 {
        loss_value(self.kind, logits, self.y).expect("valid logits for loss head")
    }
    fn grad(&self, logits: &[f64]) -> Vec<f64> {
        loss_head_grad(self.kind, logits, self.y).expect("valid logits for loss head")
    }
}

/// Input gradient of the loss through the model.
pub fn loss_gradient(kind: LossKind, model: &Model, x: &[f64], y: usize) -> Result<Vec<f64>> {
    if y >= model.class_count() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            model.class_count()
        )));
    }
    // Surface degenerate/unsupported cases before differentiating.
    let logits = model.forward(x)?;
    loss_value(kind, logits.as_slice(), y)?;
    model.input_gradient(x, &LossHead { kind, y })
}
