//! Optimizers (GD with momentum, Adam, AdaMax) and step-size schedulers
//! (cosine annealing, sample-wise reduce-on-plateau, fixed).
//!
//! Optimizer state is partitioned per sample: each attacked input owns its
//! own momentum/moment buffers and plateau trackers, so batch results are
//! identical to running samples alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shared epsilon of the Adam/AdaMax denominators.
pub const ADAM_EPS: f64 = 1e-8;
/// Relative improvement threshold of the plateau scheduler.
pub const RLROP_THRESHOLD: f64 = 1e-4;
/// Minimal step-size decay the plateau scheduler bothers to apply.
pub const RLROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerHypers {
    Gd {
        learning_rate: f64,
        momentum: f64,
        weight_decay: f64,
        dampening: f64,
    },
    Adam {
        learning_rate: f64,
        weight_decay: f64,
        beta1: f64,
        beta2: f64,
    },
    #[serde(rename = "adamax")]
    AdaMax {
        learning_rate: f64,
        weight_decay: f64,
        beta1: f64,
        beta2: f64,
    },
}

impl OptimizerHypers {
    /// Plain gradient descent with the given step size and nothing else.
    pub fn plain_gd(learning_rate: f64) -> Self {
        OptimizerHypers::Gd {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            dampening: 0.0,
        }
    }

    pub fn kind_token(&self) -> &'static str {
        match self {
            OptimizerHypers::Gd { .. } => "gd",
            OptimizerHypers::Adam { .. } => "adam",
            OptimizerHypers::AdaMax { .. } => "adamax",
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerHypers::Gd { learning_rate, .. }
            | OptimizerHypers::Adam { learning_rate, .. }
            | OptimizerHypers::AdaMax { learning_rate, .. } => learning_rate,
        }
    }

    /// Range checks. The tuning table's lower bounds (e.g. weight decay
    /// 0.01) describe the search space, not the type: zero weight decay and
    /// zero momentum are legal here because the untuned baseline uses them.
    pub fn validate(&self) -> Result<()> {
        let ok = |name: &str, v: f64, lo: f64, hi: f64| -> Result<()> {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        if self.learning_rate().is_nan() || self.learning_rate() <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        match *self {
            OptimizerHypers::Gd {
                momentum,
                weight_decay,
                dampening,
                ..
            } => {
                ok("momentum", momentum, 0.0, 0.9)?;
                ok("weight_decay", weight_decay, 0.0, 1.0)?;
                ok("dampening", dampening, 0.0, 0.2)?;
            }
            OptimizerHypers::Adam {
                weight_decay,
                beta1,
                beta2,
                ..
            }
            | OptimizerHypers::AdaMax {
                weight_decay,
                beta1,
                beta2,
                ..
            } => {
                ok("weight_decay", weight_decay, 0.0, 1.0)?;
                ok("beta1", beta1, 0.0, 0.999)?;
                ok("beta2", beta2, 0.0, 0.999)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchedulerHypers {
    /// Cosine annealing over the attack horizon (T_max = K, eta_min = 0).
    Calr,
    /// Sample-wise reduce-on-plateau (threshold 1e-4 relative, eps 1e-8).
    Rlrop { factor: f64, patience: usize },
    /// Constant step size.
    Fixed,
}

impl SchedulerHypers {
    pub fn kind_token(&self) -> &'static str {
        match self {
            SchedulerHypers::Calr => "calr",
            SchedulerHypers::Rlrop { .. } => "rlrop",
            SchedulerHypers::Fixed => "fixed",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SchedulerHypers::Rlrop { factor, patience } = *self {
            if factor.is_nan() || factor <= 0.0 || factor >= 1.0 {
                return Err(Error::invalid(format!("rlrop factor {factor} outside (0, 1)")));
            }
            if patience == 0 {
                return Err(Error::invalid("rlrop patience must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Cosine annealing step size at iteration `k` of `k_total`.
pub fn calr_alpha(alpha0: f64, k: usize, k_total: usize) -> Result<f64> {
    if k_total < 1 {
        return Err(Error::invalid("k_total must be at least 1"));
    }
    if k > k_total {
        return Err(Error::invalid(format!("k = {k} exceeds k_total = {k_total}")));
    }
    if alpha0.is_nan() || alpha0 <= 0.0 {
        return Err(Error::invalid("alpha0 must be positive"));
    }
    let ratio = k as f64 / k_total as f64;
    Ok(alpha0 * (1.0 + (std::f64::consts::PI * ratio).cos()) / 2.0)
}

/// The no-scheduler scheduler.
pub fn fixed_alpha(alpha0: f64, _k: usize, _k_total: usize) -> f64 {
    alpha0
}

/// Per-sample optimizer buffers.
#[derive(Debug, Clone)]
pub enum OptimState {
    Gd { buf: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
    AdaMax { m: Vec<f64>, u: Vec<f64>, t: u64 },
}

impl OptimState {
    pub fn new(hypers: &OptimizerHypers, dim: usize) -> Self {
        match hypers {
            OptimizerHypers::Gd { .. } => OptimState::Gd { buf: vec![0.0; dim] },
            OptimizerHypers::Adam { .. } => OptimState::Adam {
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                t: 0,
            },
            OptimizerHypers::AdaMax { .. } => OptimState::AdaMax {
                m: vec![0.0; dim],
                u: vec![0.0; dim],
                t: 0,
            },
        }
    }
}

/// One optimizer step on a single sample's perturbation.
///
/// The descent direction is `direction + weight_decay * delta`, pulling the
/// perturbation toward zero in line with the minimum-norm objective. A zero
/// step size leaves `delta` unchanged but still advances the internal
/// moment buffers.
pub fn optimizer_step(
    hypers: &OptimizerHypers,
    state: &mut OptimState,
    delta: &mut [f64],
    direction: &[f64],
    alpha: f64,
) -> Result<()> {
    if direction.len() != delta.len() {
        return Err(Error::DimensionMismatch {
            expected: delta.len(),
            got: direction.len(),
        });
    }
    if alpha < 0.0 {
        return Err(Error::invalid("step size must be non-negative"));
    }
    match (hypers, state) {
        (
            OptimizerHypers::Gd {
                momentum,
                weight_decay,
                dampening,
                ..
            },
            OptimState::Gd { buf },
        ) => {
            for i in 0..delta.len() {
                let d = direction[i] + weight_decay * delta[i];
                buf[i] = momentum * buf[i] + (1.0 - dampening) * d;
                delta[i] -= alpha * buf[i];
            }
        }
        (
            OptimizerHypers::Adam {
                weight_decay,
                beta1,
                beta2,
                ..
            },
            OptimState::Adam { m, v, t },
        ) => {
            *t += 1;
            let bc1 = 1.0 - beta1.powi(*t as i32);
            let bc2 = 1.0 - beta2.powi(*t as i32);
            for i in 0..delta.len() {
                let d = direction[i] + weight_decay * delta[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * d;
                v[i] = beta2 * v[i] + (1.0 - beta2) * d * d;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                delta[i] -= alpha * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        (
            OptimizerHypers::AdaMax {
                weight_decay,
                beta1,
                beta2,
                ..
            },
            OptimState::AdaMax { m, u, t },
        ) => {
            *t += 1;
            let bc1 = 1.0 - beta1.powi(*t as i32);
            for i in 0..delta.len() {
                let d = direction[i] + weight_decay * delta[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * d;
                u[i] = (beta2 * u[i]).max(d.abs() + ADAM_EPS);
                delta[i] -= alpha * m[i] / (bc1 * u[i]);
            }
        }
        _ => {
            return Err(Error::invalid("optimizer state does not match hyperparameters"));
        }
    }
    Ok(())
}

/// One sample's plateau tracker: a step-size weight in (0, 1], the best loss
/// seen, and the consecutive-stall counter.
#[derive(Debug, Clone)]
pub struct RlropState {
    pub weight: f64,
    pub best: f64,
    pub stall: u32,
}

impl RlropState {
    pub fn new() -> Self {
        RlropState {
            weight: 1.0,
            best: f64::INFINITY,
            stall: 0,
        }
    }
}

impl Default for RlropState {
    fn default() -> Self {
        Self::new()
    }
}

/// Sample-wise reduce-on-plateau update. Feeds on the per-sample losses of
/// the current iterate and returns the per-sample step sizes `w_i * alpha0`.
///
/// A sample improves when its loss drops below `best * (1 - threshold)`
/// (relative mode); otherwise its stall counter grows, and once the counter
/// exceeds `patience` the sample's weight is multiplied by `factor`.
/// Reductions smaller than `RLROP_EPS` in absolute step size are skipped.
pub fn rlrop_update(
    states: &mut [RlropState],
    losses: &[f64],
    factor: f64,
    patience: usize,
    alpha0: f64,
) -> Vec<f64> {
    debug_assert_eq!(states.len(), losses.len());
    let mut alphas = Vec::with_capacity(states.len());
    for (st, &loss) in states.iter_mut().zip(losses.iter()) {
        let bar = if st.best.is_finite() {
            st.best * (1.0 - RLROP_THRESHOLD)
        } else {
            f64::INFINITY
        };
        if loss < bar {
            st.best = loss;
            st.stall = 0;
        } else {
            st.stall += 1;
            if st.stall as usize > patience {
                let reduced = st.weight * factor;
                if (st.weight - reduced) * alpha0 >= RLROP_EPS {
                    st.weight = reduced;
                }
                st.stall = 0;
            }
        }
        alphas.push(st.weight * alpha0);
    }
    alphas
}
