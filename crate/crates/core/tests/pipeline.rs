//! Cross-module flows: tune, instantiate, attack, persist, reload, query.

use hofmn_core::attack::{fmn_run, AttackConfig, LpNorm};
use hofmn_core::data::make_rings;
use hofmn_core::eval::{median, RobustnessCurve};
use hofmn_core::hyperopt::{ho_fmn_run, ho_run, ConfigSpec, History, HoParams};
use hofmn_core::io::{self, FileHeader, TrialRecord};
use hofmn_core::model::{Architecture, Model};
use hofmn_core::train::{train_adversarial, AdvTrainConfig, TrainConfig};

fn toy_subject() -> (Model, hofmn_core::Dataset) {
    let data = make_rings(96, 3, 0.03, 404);
    let report = train_adversarial(
        &data,
        &Architecture::new(vec![2, 12, 3]).unwrap(),
        &AdvTrainConfig {
            base: TrainConfig::new(60, 0.5, 405),
            eps_train: 0.03,
            pgd_steps: 4,
        },
    )
    .unwrap();
    (report.model, data)
}

#[test]
fn tune_instantiate_attack_and_reload() {
    let (model, data) = toy_subject();
    let batch = data.take(24);
    let spec = ConfigSpec::parse("gd-calr-dlr").unwrap();
    let outcome = ho_fmn_run(&model, &batch, &spec, &HoParams::new(6, 3, 9), 40, LpNorm::Linf).unwrap();
    let (best_point, best_median) = outcome.best.expect("tuning finds something");

    // Re-running the winning configuration reproduces its recorded median.
    let cfg = spec.instantiate(&best_point, 40, LpNorm::Linf).unwrap();
    let result = fmn_run(&model, &batch, &cfg).unwrap();
    assert_eq!(median(&result.norms()), best_median);

    // Result files round-trip into identical curves.
    let dir = std::env::temp_dir().join(format!("hofmn-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let header = FileHeader::new("attack", 9, serde_json::json!({"test": true}));
    let path = dir.join("result.json");
    io::save_result(&path, &header, &result, true).unwrap();
    let (_, reloaded) = io::load_result(&path).unwrap();
    let original = RobustnessCurve::from_attack_result(&result).unwrap();
    let roundtrip = RobustnessCurve::from_attack_result(&reloaded).unwrap();
    for i in 0..=100 {
        let eps = i as f64 * 0.003;
        assert_eq!(original.robust_accuracy(eps), roundtrip.robust_accuracy(eps));
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn history_file_supports_resuming_a_tuning_run() {
    let (model, data) = toy_subject();
    let batch = data.take(16);
    let spec = ConfigSpec::parse("adam-fixed-ll").unwrap();
    let space = spec.search_space();
    let params_full = HoParams::new(8, 4, 31);
    let objective = |point: &hofmn_core::hyperopt::HyperPoint| {
        let cfg = spec.instantiate(point, 30, LpNorm::Linf)?;
        Ok(median(&fmn_run(&model, &batch, &cfg)?.norms()))
    };

    let full = ho_run(&space, &params_full, History::new(), objective).unwrap();

    // Persist the first 5 trials, reload, and continue.
    let partial = ho_run(&space, &HoParams::new(5, 4, 31), History::new(), objective).unwrap();
    let header = FileHeader::new("tune", 31, serde_json::json!({}));
    let records: Vec<TrialRecord> = partial
        .history
        .observations()
        .iter()
        .map(|o| TrialRecord::from_observation(&spec.id(), o, 0.0))
        .collect();
    let dir = std::env::temp_dir().join(format!("hofmn-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("hist.jsonl");
    io::save_history(&path, &header, &records).unwrap();

    let (_, loaded) = io::load_history(&path).unwrap();
    let rebuilt = io::history_for_config(&loaded, &spec.id(), &space).unwrap();
    assert_eq!(rebuilt.len(), 5);
    let resumed = ho_run(&space, &params_full, rebuilt, objective).unwrap();
    assert_eq!(resumed.history.observations().len(), 8);
    // Hyperparameters and medians agree with the uninterrupted run.
    for (a, b) in full
        .history
        .observations()
        .iter()
        .zip(resumed.history.observations())
    {
        assert_eq!(a.point.values, b.point.values);
        assert_eq!(a.median, b.median);
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn model_disk_round_trip_preserves_attack_outcomes() {
    let (model, data) = toy_subject();
    let dir = std::env::temp_dir().join(format!("hofmn-model-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    model.save(&path).unwrap();
    let reloaded = Model::load(&path).unwrap();
    assert_eq!(model, reloaded);

    let cfg = AttackConfig {
        iterations: 50,
        ..AttackConfig::baseline_fmn()
    };
    let batch = data.take(12);
    assert_eq!(
        fmn_run(&model, &batch, &cfg).unwrap(),
        fmn_run(&reloaded, &batch, &cfg).unwrap()
    );
    let _ = std::fs::remove_dir_all(&dir);
}
