//! Training loop, checkpoints and sweeps on the synthetic dataset.

use std::fs;

use concrete_core::data::{synth_dataset, SynthConfig, TaskKind};
use concrete_core::estimators::{EstimatorKind, RelaxationMode};
use concrete_core::model::load_checkpoint;
use concrete_core::oracle::EnumeratedModel;
use concrete_core::train::{self, TrainConfig, TrainError, METRICS_HEADER, SWEEP_HEADER};

fn quick(model: &str, arity: usize) -> TrainConfig {
    let mut c = TrainConfig::new(model, arity);
    c.steps = 200;
    c.eval_every = 50;
    c.m_eval = 20;
    c.eval_rows = 100;
    c.lr = 3e-3;
    c
}

fn metrics_without_wall_time(path: &std::path::Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(4);
            cols.join(",")
        })
        .collect()
}

#[test]
fn smoke_run_writes_one_finite_row_per_interval() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quick("(4H~16V)", 2);
    c.out_dir = Some(dir.path().to_path_buf());
    let out = train::train(&c).unwrap();
    assert_eq!(out.metrics.len(), 4);
    for (i, r) in out.metrics.iter().enumerate() {
        assert_eq!(r.step, 50 * (i + 1));
        assert!(r.train_relaxed.is_finite() && r.train_discrete.is_finite() && r.eval_discrete.is_finite());
        assert_eq!(r.baseline, 0.0);
    }
    let text = fs::read_to_string(out.metrics_path.unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(out.final_test_nll < out.initial_test_nll);
}

#[test]
fn score_function_estimator_is_a_drop_in_replacement() {
    let mut c = quick("(4H~16V)", 2);
    c.estimator = EstimatorKind::Sfe;
    let out = train::train(&c).unwrap();
    assert_eq!(out.metrics.len(), 4);
    assert!(out.metrics.iter().all(|r| r.eval_discrete.is_finite()));
    assert!(out.metrics.iter().any(|r| r.baseline != 0.0));
    assert!(out.final_test_nll.is_finite());
}

#[test]
fn identical_configs_give_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut c = quick("(4H~16V)", 2);
    c.out_dir = Some(a.path().to_path_buf());
    train::train(&c).unwrap();
    c.out_dir = Some(b.path().to_path_buf());
    train::train(&c).unwrap();
    assert_eq!(
        metrics_without_wall_time(&a.path().join("metrics.csv")),
        metrics_without_wall_time(&b.path().join("metrics.csv"))
    );
    assert_eq!(fs::read(a.path().join("model.ckpt")).unwrap(), fs::read(b.path().join("model.ckpt")).unwrap());
}

#[test]
fn checkpoint_round_trips_the_trained_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quick("(8H~4H~16V)", 2);
    c.steps = 60;
    c.eval_every = 30;
    c.out_dir = Some(dir.path().to_path_buf());
    let out = train::train(&c).unwrap();
    let (spec, params) = load_checkpoint(&dir.path().join("model.ckpt")).unwrap();
    assert_eq!(spec, out.spec);
    assert_eq!(params.tensors(), out.params.tensors());
    assert_eq!(params.centering_means(), out.params.centering_means());
}

#[test]
fn categorical_units_train() {
    for arity in [4, 8] {
        let mut c = quick("(24H~16V)", arity);
        c.steps = 100;
        let out = train::train(&c).unwrap();
        assert!(out.final_test_nll.is_finite(), "arity {arity}");
        assert_eq!(out.metrics.len(), 2);
    }
}

#[test]
fn structured_task_rejects_density_only_modes() {
    let mut c = quick("(8V~2H~8V)", 2);
    c.task = TaskKind::Structured;
    c.relaxation_mode = RelaxationMode::AnalyticKl;
    assert!(matches!(train::train(&c), Err(TrainError::Estimator(_))));
}

#[test]
fn sweep_writes_one_row_per_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quick("(8V~2H~8V)", 2);
    c.task = TaskKind::Structured;
    c.data = train::DataSource::Synth(SynthConfig::structured());
    c.out_dir = Some(dir.path().to_path_buf());
    let rows = train::temperature_sweep(&c, &[0.5, 2.0]).unwrap();
    assert_eq!(rows.len(), 2);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(dir.path().join("lambda-0.5").join("metrics.csv").exists());
}

#[test]
fn single_temperature_sweep_is_one_training_run() {
    let mut c = quick("(4H~16V)", 2);
    c.steps = 50;
    let rows = train::temperature_sweep(&c, &[0.8]).unwrap();
    c.lambda_post = 0.8;
    c.lambda_prior = 0.8;
    let out = train::train(&c).unwrap();
    assert_eq!(rows[0].discrete, out.final_test_nll);
    assert_eq!(rows[0].relaxed, out.final_relaxed_test_nll);
    assert!(train::temperature_sweep(&c, &[]).is_err());
}

#[test]
fn generator_likelihood_matches_enumeration() {
    let cfg = SynthConfig::default();
    let (d, g) = synth_dataset(&cfg, 3).unwrap();
    let (lf, lk) = (cfg.flip_prob.ln(), (1.0 - cfg.flip_prob).ln());
    for r in 0..50 {
        let x = d.test.row(r);
        let log_lik: Vec<f64> = g
            .prototypes()
            .iter()
            .map(|p| p.iter().zip(x).map(|(a, b)| if a == b { lk } else { lf }).sum())
            .collect();
        let k = log_lik.len();
        let m = EnumeratedModel::from_logits(&vec![0.0; k], log_lik, &vec![0.0; k]).unwrap();
        assert!((m.log_marginal() - g.log_prob(x)).abs() < 1e-12);
    }
}
