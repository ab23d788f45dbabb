//! Pure demo logic: everything the browser page renders is computed here,
//! so it can be exercised by ordinary host-side tests.

use serde::Serialize;

use hofmn_core::attack::{fmn_run, fmn_run_sample, AttackConfig, LpNorm};
use hofmn_core::data::{make_rings, Dataset};
use hofmn_core::error::{Error, Result};
use hofmn_core::eval::RobustnessCurve;
use hofmn_core::hyperopt::{ho_run, ConfigSpec, History, HoParams};
use hofmn_core::model::Model;
use hofmn_core::seed;
use hofmn_core::train::{train_adversarial, AdvTrainConfig, TrainConfig};
use hofmn_core::Architecture;

/// A trained toy subject plus the dataset it came from.
pub struct Scene {
    pub model: Model,
    pub dataset: Dataset,
}

pub const CLASSES: usize = 3;

impl Scene {
    /// Train a small adversarially trained rings classifier.
    pub fn build(seed_value: u64) -> Result<Scene> {
        let dataset = make_rings(384, CLASSES, 0.03, seed::derive(seed_value, "demo-data"));
        let arch = Architecture::new(vec![2, 16, CLASSES])?;
        let report = train_adversarial(
            &dataset,
            &arch,
            &AdvTrainConfig {
                base: TrainConfig {
                    epochs: 120,
                    learning_rate: 0.5,
                    batch_size: 32,
                    seed: seed::derive(seed_value, "demo-train"),
                },
                eps_train: 0.03,
                pgd_steps: 5,
            },
        )?;
        Ok(Scene {
            model: report.model,
            dataset,
        })
    }

    /// Predicted class for every cell of a res x res grid over the unit
    /// square, row-major from the top (y = 1) down.
    pub fn decision_grid(&self, res: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(res * res);
        let mut ws = self.model.workspace();
        for row in 0..res {
            let y = 1.0 - (row as f64 + 0.5) / res as f64;
            for col in 0..res {
                let x = (col as f64 + 0.5) / res as f64;
                self.model.forward_ws(&[x, y], &mut ws);
                out.push(argmax_u8(ws.logits()));
            }
        }
        out
    }

    pub fn points(&self) -> Vec<DataPoint> {
        self.dataset
            .iter()
            .map(|s| DataPoint {
                x: s.x[0],
                y: s.x[1],
                class: s.y as u8,
            })
            .collect()
    }

    /// Run the configured attack on one sample with a full trace.
    pub fn attack_trajectory(&self, index: usize, config: &DemoConfig) -> Result<Trajectory> {
        let sample = self
            .dataset
            .samples()
            .get(index)
            .ok_or_else(|| Error::invalid(format!("sample {index} out of range")))?;
        let mut cfg = config.to_attack_config()?;
        cfg.record_trace = true;
        let result = fmn_run_sample(&self.model, index, &sample.x, sample.y, &cfg)?;
        let trace = result.trace.as_deref().unwrap_or(&[]);
        let mut positions = vec![(sample.x[0], sample.x[1])];
        positions.extend(
            trace
                .iter()
                .map(|t| (sample.x[0] + t.delta[0], sample.x[1] + t.delta[1])),
        );
        Ok(Trajectory {
            sample: index,
            class: sample.y as u8,
            success: result.success,
            best_norm: finite_or_null(result.best_norm),
            best_point: result.best_delta.as_ref().map(|d| {
                (sample.x[0] + d[0], sample.x[1] + d[1])
            }),
            positions,
            norms: trace.iter().map(|t| t.norm).collect(),
            eps: trace.iter().map(|t| finite_or_null(t.eps)).collect(),
            alphas: trace.iter().map(|t| t.alpha).collect(),
            losses: trace.iter().map(|t| finite_or_null(t.loss)).collect(),
        })
    }

    /// Robust-accuracy curves of the custom configuration and the untuned
    /// reference, over the first `batch` samples.
    pub fn curves(&self, config: &DemoConfig, batch: usize) -> Result<CurvePair> {
        let subset = self.dataset.take(batch.max(1));
        let custom_cfg = config.to_attack_config()?;
        let baseline_cfg = AttackConfig {
            iterations: custom_cfg.iterations,
            ..AttackConfig::baseline_fmn()
        };
        let grid: Vec<f64> = (0..=60).map(|i| i as f64 * 0.005).collect();
        let custom = fmn_run(&self.model, &subset, &custom_cfg)?;
        let baseline = fmn_run(&self.model, &subset, &baseline_cfg)?;
        Ok(CurvePair {
            custom: RobustnessCurve::from_attack_result(&custom)?.export(&grid)?,
            baseline: RobustnessCurve::from_attack_result(&baseline)?.export(&grid)?,
            custom_median: finite_or_null(hofmn_core::eval::median(&custom.norms())),
            baseline_median: finite_or_null(hofmn_core::eval::median(&baseline.norms())),
        })
    }

    /// Tune the learning rate alone (one-dimensional space) for the chosen
    /// configuration and expose the GP view of the objective.
    pub fn tune_learning_rate(
        &self,
        config: &DemoConfig,
        trials: usize,
        init: usize,
        batch: usize,
        seed_value: u64,
    ) -> Result<TunerView> {
        use hofmn_core::hyperopt::{gp_fit, ParamSpec, SearchSpace};
        let spec = config.spec()?;
        let space = SearchSpace::new(vec![ParamSpec::Range {
            name: "gamma".into(),
            low: 8.0 / 255.0,
            high: 10.0,
            log: true,
        }])?;
        let subset = self.dataset.take(batch.max(1));
        let full_space = spec.search_space();
        let defaults = full_space.decode(&vec![0.5; full_space.free_dims()])?;
        let params = HoParams {
            candidates: 256,
            ..HoParams::new(trials, init, seed_value)
        };
        let outcome = ho_run(&space, &params, History::new(), |point| {
            let mut values = defaults.values.clone();
            values.insert("gamma".into(), point.get("gamma").expect("gamma present"));
            let full = full_space.point_from_values(&values)?;
            let cfg = spec.instantiate(&full, config.iterations.max(1), LpNorm::Linf)?;
            let result = fmn_run(&self.model, &subset, &cfg)?;
            Ok(hofmn_core::eval::median(&result.norms()))
        })?;

        let observations: Vec<(f64, Option<f64>)> = outcome
            .history
            .observations()
            .iter()
            .map(|o| (o.point.unit[0], finite_or_null(o.median)))
            .collect();
        let finite: Vec<&hofmn_core::hyperopt::Observation> = outcome
            .history
            .observations()
            .iter()
            .filter(|o| o.median.is_finite())
            .collect();
        let mut posterior = Vec::new();
        if finite.len() >= 2 {
            let xs: Vec<Vec<f64>> = finite.iter().map(|o| o.point.unit.clone()).collect();
            let ys: Vec<f64> = finite.iter().map(|o| o.median).collect();
            let gp = gp_fit(xs, ys, seed::derive(seed_value, "demo-gp"))?;
            for i in 0..=100 {
                let u = i as f64 / 100.0;
                let (mean, std) = gp.posterior(&[u]);
                posterior.push((u, mean, std));
            }
        }
        Ok(TunerView {
            observations,
            posterior,
            best_unit: outcome.best.as_ref().map(|(p, _)| p.unit[0]),
            best_gamma: outcome.best.as_ref().and_then(|(p, _)| p.get("gamma")),
            best_median: finite_or_null(outcome.best_median()),
        })
    }
}

fn argmax_u8(logits: &[f64]) -> u8 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u8
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// User-facing attack configuration of the demo page.
#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub loss: String,
    pub optimizer: String,
    pub scheduler: String,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl DemoConfig {
    pub fn spec(&self) -> Result<ConfigSpec> {
        ConfigSpec::parse(&format!("{}-{}-{}", self.optimizer, self.scheduler, self.loss))
    }

    pub fn to_attack_config(&self) -> Result<AttackConfig> {
        let spec = self.spec()?;
        let space = spec.search_space();
        let mut values = space.decode(&vec![0.5; space.free_dims()])?.values;
        let lr = self
            .learning_rate
            .clamp(8.0 / 255.0, 10.0);
        values.insert("gamma".into(), lr);
        let point = space.point_from_values(&values)?;
        spec.instantiate(&point, self.iterations.max(1), LpNorm::Linf)
    }
}

#[derive(Serialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub class: u8,
}

#[derive(Serialize)]
pub struct Trajectory {
    pub sample: usize,
    pub class: u8,
    pub success: bool,
    pub best_norm: Option<f64>,
    pub best_point: Option<(f64, f64)>,
    pub positions: Vec<(f64, f64)>,
    pub norms: Vec<f64>,
    pub eps: Vec<Option<f64>>,
    pub alphas: Vec<f64>,
    pub losses: Vec<Option<f64>>,
}

#[derive(Serialize)]
pub struct CurvePair {
    pub custom: Vec<(f64, f64)>,
    pub baseline: Vec<(f64, f64)>,
    pub custom_median: Option<f64>,
    pub baseline_median: Option<f64>,
}

#[derive(Serialize)]
pub struct TunerView {
    /// (normalized gamma, median) per trial; null when the attack failed.
    pub observations: Vec<(f64, Option<f64>)>,
    /// (normalized gamma, posterior mean, posterior std) over a grid.
    pub posterior: Vec<(f64, f64, f64)>,
    pub best_unit: Option<f64>,
    pub best_gamma: Option<f64>,
    pub best_median: Option<f64>,
}
