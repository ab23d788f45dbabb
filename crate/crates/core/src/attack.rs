//! The parametric fast minimum-norm attack loop.
//!
//! Per iteration and per sample: decay the epsilon-step size, move the norm
//! bound epsilon toward the decision boundary, take a projected-gradient
//! optimizer step on the perturbation, project back onto the epsilon-ball
//! intersected with the input box, and track the smallest adversarial
//! perturbation seen. Samples are fully independent: running a batch is
//! bitwise identical to running each sample alone.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{self, LossKind};
use crate::model::Model;
use crate::stepper::{
    calr_alpha, optimizer_step, rlrop_update, OptimState, OptimizerHypers, RlropState,
    SchedulerHypers,
};

/// Default initial epsilon-step size.
pub const GAMMA0: f64 = 0.05;
/// Terminal value of the epsilon-step decay; keeps late-stage refinement
/// alive instead of freezing the bound at the final iteration.
pub const GAMMA_FLOOR: f64 = 0.001;
/// Default iteration budget.
pub const DEFAULT_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpNorm {
    Linf,
    L2,
}

impl LpNorm {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            LpNorm::Linf => v.iter().fold(0.0f64, |m, &x| m.max(x.abs())),
            LpNorm::L2 => v.iter().map(|&x| x * x).sum::<f64>().sqrt(),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            LpNorm::Linf => "linf",
            LpNorm::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linf" => Ok(LpNorm::Linf),
            "l2" => Ok(LpNorm::L2),
            other => Err(Error::Parse(format!("unknown norm '{other}'"))),
        }
    }
}

/// One attack configuration: loss, optimizer, scheduler, and loop constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerHypers,
    pub scheduler: SchedulerHypers,
    /// Total iterations K.
    pub iterations: usize,
    /// Initial epsilon-step size.
    pub gamma0: f64,
    pub norm: LpNorm,
    /// Record a per-iteration (norm, loss, eps, alpha) trace per sample.
    #[serde(default)]
    pub record_trace: bool,
}

impl AttackConfig {
    /// The untuned reference configuration: GD + CALR + LL with learning
    /// rate 1.0 and no momentum.
    pub fn baseline_fmn() -> Self {
        AttackConfig {
            loss: LossKind::Ll,
            optimizer: OptimizerHypers::plain_gd(1.0),
            scheduler: SchedulerHypers::Calr,
            iterations: DEFAULT_ITERATIONS,
            gamma0: GAMMA0,
            norm: LpNorm::Linf,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::invalid("iteration count must be at least 1"));
        }
        if self.gamma0.is_nan() || self.gamma0 <= 0.0 || self.gamma0 >= 1.0 {
            return Err(Error::invalid("gamma0 must lie in (0, 1)"));
        }
        self.optimizer.validate()?;
        self.scheduler.validate()?;
        let auto_scheduled = !matches!(self.optimizer, OptimizerHypers::Gd { .. });
        if auto_scheduled && self.scheduler != SchedulerHypers::Fixed {
            return Err(Error::UnsupportedConfiguration(
                "Adam/AdaMax carry their own scheduling and require the fixed scheduler".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the optional per-iteration diagnostics trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    /// Perturbation norm after the iteration's projection.
    pub norm: f64,
    /// Loss at the iterate the gradient was taken on (NaN on a degenerate
    /// DLR step).
    pub loss: f64,
    pub eps: f64,
    pub alpha: f64,
    /// Perturbation after the iteration's projection.
    pub delta: Vec<f64>,
}

/// Attack outcome for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub index: usize,
    pub clean_correct: bool,
    pub success: bool,
    /// Smallest adversarial perturbation norm found (+inf on failure).
    pub best_norm: f64,
    /// The perturbation achieving `best_norm`; present iff `success`.
    pub best_delta: Option<Vec<f64>>,
    pub trace: Option<Vec<TraceRow>>,
}

/// Batch attack outcome, one entry per input sample in order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub per_sample: Vec<SampleResult>,
}

impl AttackResult {
    pub fn norms(&self) -> Vec<f64> {
        self.per_sample.iter().map(|s| s.best_norm).collect()
    }

    pub fn success_count(&self) -> usize {
        self.per_sample.iter().filter(|s| s.success).count()
    }

    pub fn clean_accuracy(&self) -> f64 {
        if self.per_sample.is_empty() {
            return 0.0;
        }
        self.per_sample.iter().filter(|s| s.clean_correct).count() as f64
            / self.per_sample.len() as f64
    }
}

/// Maximizer of `v . g` over the unit infinity-norm ball: component signs,
/// with sign(0) = 0 so a zero gradient stays put.
pub fn project_gradient_linf(g: &[f64]) -> Vec<f64> {
    g.iter()
        .map(|&v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Maximizer of `v . g` over the unit 2-norm ball: the normalized gradient.
pub fn project_gradient_l2(g: &[f64]) -> Vec<f64> {
    let n = LpNorm::L2.norm(g);
    if n == 0.0 {
        return vec![0.0; g.len()];
    }
    g.iter().map(|&v| v / n).collect()
}

/// Cosine-annealed epsilon-step size at iteration `k` of `k_total`,
/// decaying from `gamma0` to [`GAMMA_FLOOR`].
pub fn gamma_schedule(gamma0: f64, k: usize, k_total: usize) -> Result<f64> {
    if k < 1 || k > k_total {
        return Err(Error::invalid(format!(
            "iteration {k} outside 1..={k_total}"
        )));
    }
    let ratio = k as f64 / k_total as f64;
    Ok(GAMMA_FLOOR + (gamma0 - GAMMA_FLOOR) * (1.0 + (std::f64::consts::PI * ratio).cos()) / 2.0)
}

/// Multiplicative epsilon update. Shrinks the bound below the smallest
/// adversarial norm seen while the iterate is adversarial, grows it when the
/// iterate is not; an infinite bound stays infinite until the first
/// adversarial hit seeds it from the current norm.
pub fn eps_step(eps_prev: f64, gamma_k: f64, is_adv: bool, best_norm: f64, delta_norm: f64) -> f64 {
    if is_adv {
        eps_prev.min(best_norm).min(delta_norm) * (1.0 - gamma_k)
    } else if eps_prev.is_finite() {
        eps_prev * (1.0 + gamma_k)
    } else {
        f64::INFINITY
    }
}

/// Project `delta` onto the epsilon-ball around zero intersected with the
/// box constraint `x + delta` in `[0,1]^d`. Exactly idempotent: both stages
/// are clamps in delta space with fixed bounds.
pub fn project_feasible(x: &[f64], delta: &mut [f64], eps: f64, norm: LpNorm) {
    debug_assert_eq!(x.len(), delta.len());
    if eps.is_finite() {
        match norm {
            LpNorm::Linf => {
                for d in delta.iter_mut() {
                    *d = d.clamp(-eps, eps);
                }
            }
            LpNorm::L2 => {
                let n = LpNorm::L2.norm(delta);
                if n > eps {
                    let scale = eps / n;
                    for d in delta.iter_mut() {
                        *d *= scale;
                    }
                    // Rounding can leave the norm a hair above the bound;
                    // nudge down so the projection is a true fixed point.
                    while LpNorm::L2.norm(delta) > eps {
                        for d in delta.iter_mut() {
                            *d *= 1.0 - f64::EPSILON;
                        }
                    }
                }
            }
        }
    }
    for (d, &xi) in delta.iter_mut().zip(x.iter()) {
        *d = d.clamp(-xi, 1.0 - xi);
    }
}

/// Run the attack on one sample. `index` is carried through into the result.
pub fn fmn_run_sample(
    model: &Model,
    index: usize,
    x: &[f64],
    y: usize,
    config: &AttackConfig,
) -> Result<SampleResult> {
    config.validate()?;
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: x.len(),
        });
    }
    if y >= model.class_count() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            model.class_count()
        )));
    }

    let dim = x.len();
    let k_total = config.iterations;
    let alpha0 = config.optimizer.learning_rate();

    let mut ws = model.workspace();
    let mut delta = vec![0.0f64; dim];
    let mut point = vec![0.0f64; dim];
    let mut grad = vec![0.0f64; dim];
    let mut eps = f64::INFINITY;
    let mut best_norm = f64::INFINITY;
    let mut best_delta: Option<Vec<f64>> = None;
    let mut clean_correct = true;

    let mut opt_state = OptimState::new(&config.optimizer, dim);
    let mut rlrop_state = [RlropState::new()];
    let mut trace = config.record_trace.then(Vec::new);

    for k in 1..=k_total {
        for i in 0..dim {
            point[i] = x[i] + delta[i];
        }
        model.forward_ws(&point, &mut ws);
        let adv = loss::is_adversarial(ws.logits(), y);
        if k == 1 {
            clean_correct = !adv;
        }
        let delta_norm = config.norm.norm(&delta);
        if adv && delta_norm < best_norm {
            best_norm = delta_norm;
            best_delta = Some(delta.clone());
        }

        // Loss and head gradient; a degenerate DLR step contributes a zero
        // gradient for this sample instead of aborting the run.
        let (loss_val, head_grad) = match loss::loss_value(config.loss, ws.logits(), y) {
            Ok(v) => (v, loss::loss_head_grad(config.loss, ws.logits(), y)?),
            Err(Error::DegenerateDenominator) => (f64::NAN, vec![0.0; model.class_count()]),
            Err(e) => return Err(e),
        };

        let gamma_k = gamma_schedule(config.gamma0, k, k_total)?;
        eps = eps_step(eps, gamma_k, adv, best_norm, delta_norm);

        model.input_gradient_ws(&head_grad, &mut ws, &mut grad);
        let direction = match config.norm {
            LpNorm::Linf => project_gradient_linf(&grad),
            LpNorm::L2 => project_gradient_l2(&grad),
        };

        let alpha = match config.scheduler {
            SchedulerHypers::Calr => calr_alpha(alpha0, k, k_total)?,
            SchedulerHypers::Fixed => alpha0,
            SchedulerHypers::Rlrop { factor, patience } => {
                rlrop_update(&mut rlrop_state, &[loss_val], factor, patience, alpha0)[0]
            }
        };

        optimizer_step(&config.optimizer, &mut opt_state, &mut delta, &direction, alpha)?;
        project_feasible(x, &mut delta, eps, config.norm);

        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                k,
                norm: config.norm.norm(&delta),
                loss: loss_val,
                eps,
                alpha,
                delta: delta.clone(),
            });
        }
    }

    // The loop inspected iterates delta_0 .. delta_{K-1}; give the final
    // iterate its chance at the best solution too.
    for i in 0..dim {
        point[i] = x[i] + delta[i];
    }
    model.forward_ws(&point, &mut ws);
    if loss::is_adversarial(ws.logits(), y) {
        let delta_norm = config.norm.norm(&delta);
        if delta_norm < best_norm {
            best_norm = delta_norm;
            best_delta = Some(delta.clone());
        }
    }

    Ok(SampleResult {
        index,
        clean_correct,
        success: best_delta.is_some(),
        best_norm,
        best_delta,
        trace,
    })
}

/// Run the attack over a whole dataset batch.
pub fn fmn_run(model: &Model, batch: &Dataset, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("attack batch must not be empty"));
    }
    if batch.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: batch.dim(),
        });
    }
    let mut per_sample = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        per_sample.push(fmn_run_sample(model, i, &s.x, s.y, config)?);
    }
    Ok(AttackResult { per_sample })
}
