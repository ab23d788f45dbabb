//! Hyperparameter optimization of attack configurations.
//!
//! The configuration set crosses losses, optimizers, and schedulers (with
//! Adam/AdaMax pinned to the fixed scheduler) into twelve attack variants.
//! Each variant is tuned independently: a Sobol-initialized observation
//! history feeds a Gaussian-process surrogate of the median perturbation
//! norm, and noisy expected improvement proposes the remaining trials.

pub mod acquire;
pub mod gp;
pub mod sobol;
pub mod space;

use crate::attack::{fmn_run, AttackConfig, LpNorm, GAMMA0};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::median;
use crate::loss::LossKind;
use crate::model::Model;
use crate::seed;
use crate::stepper::{OptimizerHypers, SchedulerHypers, ADAM_EPS, RLROP_THRESHOLD};

pub use acquire::{expected_improvement_min, nei_acquisition, propose_next, DEFAULT_MC_SAMPLES};
pub use gp::{gp_fit, GpModel};
pub use sobol::{sobol_points, SobolSequence};
pub use space::{HyperPoint, ParamSpec, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Gd,
    Adam,
    AdaMax,
}

impl OptimizerKind {
    pub fn token(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdaMax => "adamax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    Calr,
    Rlrop,
    Fixed,
}

impl SchedulerKind {
    pub fn token(self) -> &'static str {
        match self {
            SchedulerKind::Calr => "calr",
            SchedulerKind::Rlrop => "rlrop",
            SchedulerKind::Fixed => "fixed",
        }
    }
}

/// One (loss, optimizer, scheduler) attack configuration together with its
/// hyperparameter search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigSpec {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub scheduler: SchedulerKind,
}

const LR_LOW: f64 = 8.0 / 255.0;
const LR_HIGH: f64 = 10.0;

impl ConfigSpec {
    /// Identifier in optimizer-scheduler-loss order, e.g. `gd-calr-ll`.
    pub fn id(&self) -> String {
        format!(
            "{}-{}-{}",
            self.optimizer.token(),
            self.scheduler.token(),
            self.loss.token()
        )
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!(
                "config id '{s}' is not optimizer-scheduler-loss"
            )));
        }
        let optimizer = match parts[0] {
            "gd" => OptimizerKind::Gd,
            "adam" => OptimizerKind::Adam,
            "adamax" => OptimizerKind::AdaMax,
            other => return Err(Error::Parse(format!("unknown optimizer '{other}'"))),
        };
        let scheduler = match parts[1] {
            "calr" => SchedulerKind::Calr,
            "rlrop" => SchedulerKind::Rlrop,
            "fixed" => SchedulerKind::Fixed,
            other => return Err(Error::Parse(format!("unknown scheduler '{other}'"))),
        };
        let loss = LossKind::parse(parts[2])?;
        let spec = ConfigSpec {
            loss,
            optimizer,
            scheduler,
        };
        spec.check_pairing()?;
        Ok(spec)
    }

    fn check_pairing(&self) -> Result<()> {
        let auto = matches!(self.optimizer, OptimizerKind::Adam | OptimizerKind::AdaMax);
        if auto && self.scheduler != SchedulerKind::Fixed {
            return Err(Error::UnsupportedConfiguration(format!(
                "{} carries its own scheduling and pairs only with fixed",
                self.optimizer.token()
            )));
        }
        if !auto && self.scheduler == SchedulerKind::Fixed {
            return Err(Error::UnsupportedConfiguration(
                "gd pairs with calr or rlrop".into(),
            ));
        }
        Ok(())
    }

    /// The tuning search space of this configuration.
    pub fn search_space(&self) -> SearchSpace {
        let mut params = vec![ParamSpec::Range {
            name: "gamma".into(),
            low: LR_LOW,
            high: LR_HIGH,
            log: true,
        }];
        match self.optimizer {
            OptimizerKind::Gd => {
                params.push(ParamSpec::Range {
                    name: "mu".into(),
                    low: 0.0,
                    high: 0.9,
                    log: false,
                });
                params.push(ParamSpec::Range {
                    name: "lambda".into(),
                    low: 0.01,
                    high: 1.0,
                    log: false,
                });
                params.push(ParamSpec::Range {
                    name: "tau".into(),
                    low: 0.0,
                    high: 0.2,
                    log: false,
                });
            }
            OptimizerKind::Adam | OptimizerKind::AdaMax => {
                params.push(ParamSpec::Range {
                    name: "lambda".into(),
                    low: 0.01,
                    high: 1.0,
                    log: false,
                });
                params.push(ParamSpec::Range {
                    name: "beta1".into(),
                    low: 0.0,
                    high: 0.999,
                    log: false,
                });
                params.push(ParamSpec::Range {
                    name: "beta2".into(),
                    low: 0.0,
                    high: 0.999,
                    log: false,
                });
                params.push(ParamSpec::Fixed {
                    name: "eps".into(),
                    value: ADAM_EPS,
                });
            }
        }
        match self.scheduler {
            SchedulerKind::Calr => {
                params.push(ParamSpec::Fixed {
                    name: "eta_min".into(),
                    value: 0.0,
                });
                params.push(ParamSpec::Fixed {
                    name: "last_epoch".into(),
                    value: -1.0,
                });
            }
            SchedulerKind::Rlrop => {
                params.push(ParamSpec::Range {
                    name: "factor".into(),
                    low: 0.1,
                    high: 0.5,
                    log: false,
                });
                params.push(ParamSpec::Choice {
                    name: "patience".into(),
                    values: vec![2.0, 5.0, 10.0],
                });
                params.push(ParamSpec::Fixed {
                    name: "threshold".into(),
                    value: RLROP_THRESHOLD,
                });
                params.push(ParamSpec::Fixed {
                    name: "eps".into(),
                    value: 1e-8,
                });
            }
            SchedulerKind::Fixed => {}
        }
        SearchSpace::new(params).expect("static search space is valid")
    }

    /// Bind a tuned point into a runnable attack configuration.
    pub fn instantiate(
        &self,
        point: &HyperPoint,
        iterations: usize,
        norm: LpNorm,
    ) -> Result<AttackConfig> {
        let need = |name: &str| -> Result<f64> {
            point
                .get(name)
                .ok_or_else(|| Error::invalid(format!("hyper point lacks '{name}'")))
        };
        let optimizer = match self.optimizer {
            OptimizerKind::Gd => OptimizerHypers::Gd {
                learning_rate: need("gamma")?,
                momentum: need("mu")?,
                weight_decay: need("lambda")?,
                dampening: need("tau")?,
            },
            OptimizerKind::Adam => OptimizerHypers::Adam {
                learning_rate: need("gamma")?,
                weight_decay: need("lambda")?,
                beta1: need("beta1")?,
                beta2: need("beta2")?,
            },
            OptimizerKind::AdaMax => OptimizerHypers::AdaMax {
                learning_rate: need("gamma")?,
                weight_decay: need("lambda")?,
                beta1: need("beta1")?,
                beta2: need("beta2")?,
            },
        };
        let scheduler = match self.scheduler {
            SchedulerKind::Calr => SchedulerHypers::Calr,
            SchedulerKind::Fixed => SchedulerHypers::Fixed,
            SchedulerKind::Rlrop => SchedulerHypers::Rlrop {
                factor: need("factor")?,
                patience: need("patience")? as usize,
            },
        };
        let config = AttackConfig {
            loss: self.loss,
            optimizer,
            scheduler,
            iterations,
            gamma0: GAMMA0,
            norm,
            record_trace: false,
        };
        config.validate()?;
        Ok(config)
    }
}

/// The twelve admissible configurations in declaration order: for each loss,
/// GD under both schedulers, then the auto-scheduled optimizers.
pub fn configuration_set() -> Vec<ConfigSpec> {
    let mut out = Vec::with_capacity(12);
    for loss in LossKind::all() {
        for (optimizer, scheduler) in [
            (OptimizerKind::Gd, SchedulerKind::Calr),
            (OptimizerKind::Gd, SchedulerKind::Rlrop),
            (OptimizerKind::Adam, SchedulerKind::Fixed),
            (OptimizerKind::AdaMax, SchedulerKind::Fixed),
        ] {
            out.push(ConfigSpec {
                loss,
                optimizer,
                scheduler,
            });
        }
    }
    out
}

/// One completed trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub trial: usize,
    pub point: HyperPoint,
    /// Median best norm of the attack run (+inf when it mostly failed).
    pub median: f64,
}

/// The growing observation history of one configuration's tuning run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    observations: Vec<Observation>,
}

impl History {
    pub fn new() -> Self {
        History::default()
    }

    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        for (i, o) in observations.iter().enumerate() {
            if o.trial != i {
                return Err(Error::invalid(
                    "history trial indices must be contiguous from zero",
                ));
            }
        }
        Ok(History { observations })
    }

    pub fn push(&mut self, obs: Observation) {
        debug_assert_eq!(obs.trial, self.observations.len());
        self.observations.push(obs);
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Observations with finite medians (the GP training set).
    pub fn finite(&self) -> Vec<&Observation> {
        self.observations
            .iter()
            .filter(|o| o.median.is_finite())
            .collect()
    }

    /// Best finite observation; earliest wins ties.
    pub fn best(&self) -> Option<&Observation> {
        self.observations
            .iter()
            .filter(|o| o.median.is_finite())
            .fold(None, |best: Option<&Observation>, o| match best {
                Some(b) if b.median <= o.median => Some(b),
                _ => Some(o),
            })
    }

    /// Running incumbent after each trial (+inf before the first finite one).
    pub fn incumbent_trajectory(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.observations
            .iter()
            .map(|o| {
                if o.median < best {
                    best = o.median;
                }
                best
            })
            .collect()
    }
}

/// Knobs of the tuning loop.
#[derive(Debug, Clone)]
pub struct HoParams {
    /// Total trials T.
    pub trials: usize,
    /// Sobol initialization trials P.
    pub init_trials: usize,
    /// Acquisition candidates per proposal.
    pub candidates: usize,
    /// Monte-Carlo samples of the noisy incumbent.
    pub mc_samples: usize,
    pub seed: u64,
}

impl HoParams {
    pub fn new(trials: usize, init_trials: usize, seed: u64) -> Self {
        HoParams {
            trials,
            init_trials,
            candidates: 1024,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.init_trials < 1 {
            return Err(Error::invalid("need at least one initialization trial"));
        }
        if self.trials < self.init_trials {
            return Err(Error::invalid("total trials must be at least the initialization count"));
        }
        if self.candidates < 1 || self.mc_samples < 1 {
            return Err(Error::invalid("candidates and mc_samples must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct HoOutcome {
    /// Best point and its median; absent when every trial returned +inf.
    pub best: Option<(HyperPoint, f64)>,
    pub history: History,
}

impl HoOutcome {
    pub fn best_median(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |(_, m)| *m)
    }
}

/// First `init_trials` points come from a scrambled Sobol stream; the rest
/// are NEI proposals from a GP fitted on the finite observations, falling
/// back to the Sobol stream while fewer than two finite observations exist.
/// Resumable: continues from `history.len()`, reproducing what an
/// uninterrupted run would have done.
pub fn ho_run(
    space: &SearchSpace,
    params: &HoParams,
    history: History,
    mut objective: impl FnMut(&HyperPoint) -> Result<f64>,
) -> Result<HoOutcome> {
    params.validate()?;
    if history.len() > params.trials {
        return Err(Error::invalid("history already longer than the trial budget"));
    }
    let mut history = history;
    let mut stream = SobolSequence::new(
        space.free_dims(),
        seed::derive(params.seed, "sobol-init"),
    )?;
    stream.advance_to(history.len() as u64);

    for trial in history.len()..params.trials {
        // The stream advances once per trial regardless of use, so resumed
        // runs stay aligned with uninterrupted ones.
        let sobol_unit = stream.next_point();
        let point = if trial < params.init_trials {
            space.decode(&sobol_unit)?
        } else {
            let finite = history.finite();
            if finite.len() >= 2 {
                let xs: Vec<Vec<f64>> = finite.iter().map(|o| o.point.unit.clone()).collect();
                let ys: Vec<f64> = finite.iter().map(|o| o.median).collect();
                let gp = gp_fit(xs, ys, seed::derive_indexed(params.seed, "gp-fit", trial as u64))?;
                propose_next(
                    &gp,
                    space,
                    params.candidates,
                    params.mc_samples,
                    seed::derive_indexed(params.seed, "propose", trial as u64),
                )?
            } else {
                space.decode(&sobol_unit)?
            }
        };
        let median = objective(&point)?;
        history.push(Observation {
            trial,
            point,
            median,
        });
    }

    let best = history
        .best()
        .map(|o| (o.point.clone(), o.median));
    Ok(HoOutcome { best, history })
}

/// The tuning objective: run the attack with the decoded hyperparameters
/// and return the median best norm over the batch.
pub fn median_objective(
    model: &Model,
    batch: &Dataset,
    spec: &ConfigSpec,
    point: &HyperPoint,
    iterations: usize,
    norm: LpNorm,
) -> Result<f64> {
    let config = spec.instantiate(point, iterations, norm)?;
    let result = fmn_run(model, batch, &config)?;
    Ok(median(&result.norms()))
}

/// Tune one configuration against a model.
pub fn ho_fmn_run(
    model: &Model,
    batch: &Dataset,
    spec: &ConfigSpec,
    params: &HoParams,
    iterations: usize,
    norm: LpNorm,
) -> Result<HoOutcome> {
    spec.check_pairing()?;
    ho_run(&spec.search_space(), params, History::new(), |point| {
        median_objective(model, batch, spec, point, iterations, norm)
    })
}

/// One configuration's tuning summary.
#[derive(Debug, Clone)]
pub struct RankedConfig {
    pub spec: ConfigSpec,
    pub best: Option<(HyperPoint, f64)>,
    pub history: History,
}

impl RankedConfig {
    pub fn best_median(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |(_, m)| *m)
    }
}

/// Tune every configuration and sort ascending by best median (stable, so
/// ties keep declaration order). Each configuration draws its own sub-seed.
pub fn rank_configurations(
    model: &Model,
    batch: &Dataset,
    specs: &[ConfigSpec],
    params: &HoParams,
    iterations: usize,
    norm: LpNorm,
) -> Result<Vec<RankedConfig>> {
    if specs.is_empty() {
        return Err(Error::invalid("configuration set must not be empty"));
    }
    let mut ranked = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let sub = HoParams {
            seed: seed::derive_indexed(params.seed, "config", i as u64),
            ..params.clone()
        };
        let outcome = ho_fmn_run(model, batch, spec, &sub, iterations, norm)?;
        ranked.push(RankedConfig {
            spec: *spec,
            best: outcome.best,
            history: outcome.history,
        });
    }
    ranked.sort_by(|a, b| a.best_median().partial_cmp(&b.best_median()).unwrap());
    Ok(ranked)
}
