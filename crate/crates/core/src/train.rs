//! Optimization and experiments: Adam, the training loop with periodic
//! discrete-graph evaluation, metrics CSV output, and temperature sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::{self, BinaryMatrix, DataError, Dataset, SynthConfig, SynthGenerator, TaskInstance, TaskKind};
use crate::estimators::{
    self, default_temperatures, Baseline, EstimatorError, EstimatorKind, ObjectiveConfig, RelaxationMode,
};
use crate::model::{self, init_params, parse_model_spec, Model, ModelError, ParameterStore};
use crate::noise::{streams, RngStream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite gradient for {key} at step {step}")]
    NonFiniteGradient { key: String, step: usize },
    #[error("non-finite objective at step {step}; last good checkpoint kept")]
    NonFiniteObjective { step: usize },
    #[error("gradient for {0} has the wrong shape")]
    GradientShape(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

// ---------------------------------------------------------------------------
// Adam

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam step on the loss gradient `grads`. Weight decay
/// adds `weight_decay · W` to the gradient of every weight matrix (the
/// gradient of `weight_decay · ½‖W‖²`). Aborts, leaving parameters
/// untouched, if any gradient entry is non-finite.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    for (k, g) in grads {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                key: k.clone(),
                step: state.t as usize + 1,
            });
        }
        match params.get(k) {
            Some(p) if p.shape() == g.shape() => {}
            _ => return Err(TrainError::GradientShape(k.clone())),
        }
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (k, g) in grads {
        let p = params.get_mut(k).expect("checked above");
        let decay = if weight_decay != 0.0 && ParameterStore::is_weight(k) {
            weight_decay
        } else {
            0.0
        };
        let m = state.m.entry(k.clone()).or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
        let v = state.v.entry(k.clone()).or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
        for i in 0..g.len() {
            let w = p.data()[i];
            let gi = g.data()[i] + decay * w;
            let mi = ADAM_BETA1 * m.data()[i] + (1.0 - ADAM_BETA1) * gi;
            let vi = ADAM_BETA2 * v.data()[i] + (1.0 - ADAM_BETA2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
            p.data_mut()[i] = w - step;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth(SynthConfig),
    Mnist(PathBuf),
    Omniglot(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: String,
    pub arity: usize,
    pub task: TaskKind,
    pub m_train: usize,
    pub m_eval: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lambda_post: f64,
    pub lambda_prior: f64,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub relaxation_mode: RelaxationMode,
    pub eval_every: usize,
    /// Evaluation sets are truncated to this many rows (0 = no limit).
    pub eval_rows: usize,
    pub centering: bool,
    pub data: DataSource,
    /// Directory for `metrics.csv` and `model.ckpt`; nothing is written when
    /// unset.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Desk-scale defaults for `model` at `arity`, with the arity's default
    /// temperatures.
    pub fn new(model: &str, arity: usize) -> Self {
        let (lambda_post, lambda_prior) = default_temperatures(arity);
        Self {
            model: model.to_string(),
            arity,
            task: TaskKind::Density,
            m_train: 5,
            m_eval: 100,
            lr: 3e-4,
            weight_decay: 0.0,
            batch_size: 64,
            steps: 5000,
            lambda_post,
            lambda_prior,
            seed: 1,
            estimator: EstimatorKind::Concrete,
            relaxation_mode: RelaxationMode::RelaxedKl,
            eval_every: 250,
            eval_rows: 0,
            centering: true,
            data: DataSource::Synth(SynthConfig::default()),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.m_train == 0 || self.m_eval == 0 {
            return bad("sample counts must be positive");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch size and evaluation interval must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        self.objective_config()?;
        Ok(())
    }

    pub fn objective_config(&self) -> Result<ObjectiveConfig> {
        Ok(ObjectiveConfig::new(
            self.m_train,
            self.relaxation_mode,
            self.lambda_post,
            self.lambda_prior,
        )?)
    }
}

/// One evaluation interval. Objectives are per-example bounds in nats
/// (higher is better).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Relaxed bound (`m_train` samples) on the training evaluation subset.
    pub train_relaxed: f64,
    /// Discrete bound (`m_eval` samples) on the same subset.
    pub train_discrete: f64,
    /// Discrete bound (`m_eval` samples) on held-out data.
    pub eval_discrete: f64,
    pub wall_time: f64,
    /// Clamped log weights since the previous row.
    pub clamp_count: usize,
    /// Score-function baseline (0 for the Concrete estimator).
    pub baseline: f64,
}

pub const METRICS_HEADER: &str = "step,train_relaxed,train_discrete,eval_discrete,wall_time,clamp_count,baseline";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.10},{:.10},{:.10},{:.3},{},{:.10}",
            self.step,
            self.train_relaxed,
            self.train_discrete,
            self.eval_discrete,
            self.wall_time,
            self.clamp_count,
            self.baseline
        )
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub spec: model::NetworkSpec,
    pub params: ParameterStore,
    pub metrics: Vec<MetricsRow>,
    /// Discrete `m_eval` test NLL (nats per example) before the first step.
    pub initial_test_nll: f64,
    /// Discrete `m_eval` test NLL of the returned parameters.
    pub final_test_nll: f64,
    /// Relaxed `m_eval` test NLL of the returned parameters.
    pub final_relaxed_test_nll: f64,
    pub steps_run: usize,
    pub checkpoint: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
}

/// Loads the dataset named by `source`; synthetic data comes from `seed`.
pub fn load_data(source: &DataSource, seed: u64) -> Result<(Dataset, Option<SynthGenerator>)> {
    Ok(match source {
        DataSource::Synth(cfg) => {
            let (d, g) = data::synth_dataset(cfg, seed)?;
            (d, Some(g))
        }
        DataSource::Mnist(dir) => (data::load_mnist(dir)?, None),
        DataSource::Omniglot(dir) => (data::load_omniglot(dir)?, None),
    })
}

fn first_rows(m: &BinaryMatrix, cap: usize) -> Vec<usize> {
    let n = if cap == 0 { m.rows() } else { m.rows().min(cap) };
    (0..n).collect()
}

const EVAL_CHUNK: usize = 50;

/// Mean discrete `m`-sample bound over `rows`, with noise from `rng`.
pub fn evaluate_discrete(
    model: &Model,
    params: &ParameterStore,
    task: &TaskInstance,
    m_data: &BinaryMatrix,
    rows: &[usize],
    m: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (input, target) = task.batch(m_data, chunk);
        total += estimators::discrete_objective(model, params, &input, &target, m, rng)?
            .iter()
            .sum::<f64>();
    }
    Ok(total / rows.len() as f64)
}

/// Mean relaxed bound over `rows`.
pub fn evaluate_relaxed(
    model: &Model,
    params: &ParameterStore,
    task: &TaskInstance,
    m_data: &BinaryMatrix,
    rows: &[usize],
    cfg: &ObjectiveConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (input, target) = task.batch(m_data, chunk);
        total += estimators::relaxed_value(model, params, &input, &target, cfg, rng)?
            .iter()
            .sum::<f64>();
    }
    Ok(total / rows.len() as f64)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads data per `cfg.data` and trains.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (dataset, _) = load_data(&cfg.data, cfg.seed)?;
    train_on(cfg, &dataset)
}

/// Trains on an already loaded dataset.
///
/// Streams derived from `cfg.seed`: parameter init, minibatch shuffling,
/// training noise, and evaluation noise (a fresh child stream per
/// evaluation, so every evaluation of identical parameters is identical).
pub fn train_on(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = parse_model_spec(&cfg.model)?.with_arity(cfg.arity)?;
    let model = Model::new(spec.clone());
    let task = TaskInstance::new(cfg.task, dataset.dims())?;
    task.check_model(&model)?;
    let obj_cfg = cfg.objective_config()?;
    let base_rates = task.target_base_rates(dataset);
    let mut params = init_params(&spec, Some(&base_rates), &mut RngStream::new(cfg.seed, streams::INIT))?;

    let mut shuffle_rng = RngStream::new(cfg.seed, streams::SHUFFLE);
    let mut noise_rng = RngStream::new(cfg.seed, streams::TRAIN_NOISE);
    let eval_root = RngStream::new(cfg.seed, streams::EVAL_NOISE);

    let (eval_split, eval_name) = if dataset.valid.is_empty() {
        (&dataset.test, "test")
    } else {
        (&dataset.valid, "valid")
    };
    let eval_rows = first_rows(eval_split, cfg.eval_rows);
    let train_rows = first_rows(&dataset.train, if cfg.eval_rows == 0 { 500 } else { cfg.eval_rows });
    let test_rows = first_rows(&dataset.test, cfg.eval_rows);

    let initial_test_nll =
        -evaluate_discrete(&model, &params, &task, &dataset.test, &test_rows, cfg.m_eval, &mut eval_root.child(0))?;
    log::info!(
        "{} {} arity {}: step-0 test NLL {:.4}",
        cfg.task,
        spec,
        cfg.arity,
        initial_test_nll
    );

    let mut metrics_file = match &cfg.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join("metrics.csv");
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            writeln!(f, "{METRICS_HEADER}").map_err(io_err(&path))?;
            Some((f, path))
        }
        None => None,
    };
    let ckpt_path = cfg.out_dir.as_ref().map(|d| d.join("model.ckpt"));

    let mut order: Vec<usize> = (0..dataset.train.rows()).collect();
    let mut cursor = order.len();
    let mut adam = AdamState::default();
    let mut baseline = Baseline::new(cfg.estimator == EstimatorKind::Sfe);
    let mut metrics = Vec::new();
    let mut clamp_since = 0usize;
    let mut best: Option<(f64, ParameterStore)> = None;
    let start = Instant::now();

    for step in 1..=cfg.steps {
        if cursor + cfg.batch_size > order.len() {
            shuffle_rng.shuffle(&mut order);
            cursor = 0;
        }
        let batch_end = (cursor + cfg.batch_size).min(order.len());
        let rows = &order[cursor..batch_end];
        cursor = batch_end;
        let (input, target) = task.batch(&dataset.train, rows);
        let (est, activity) = estimators::model_gradient(
            &model,
            &params,
            &input,
            &target,
            &obj_cfg,
            cfg.estimator,
            &mut baseline,
            &mut noise_rng,
        )
        .map_err(|e| match e {
            EstimatorError::NonFinite(_) => TrainError::NonFiniteObjective { step },
            other => other.into(),
        })?;
        clamp_since += est.diagnostics.clamp_count;
        // Ascent direction of the bound → loss gradient.
        let loss_grads: BTreeMap<String, Tensor> = est.grads.into_iter().map(|(k, g)| (k, g.map(|v| -v))).collect();
        adam_step(params.tensors_mut(), &loss_grads, &mut adam, cfg.lr, cfg.weight_decay)?;
        if cfg.centering {
            params.centering_update(&activity);
        }

        if step % cfg.eval_every == 0 {
            let mut rng = eval_root.child(step as u64);
            let train_relaxed =
                evaluate_relaxed(&model, &params, &task, &dataset.train, &train_rows, &obj_cfg, &mut rng)?;
            let train_discrete =
                evaluate_discrete(&model, &params, &task, &dataset.train, &train_rows, cfg.m_eval, &mut rng)?;
            let eval_discrete = evaluate_discrete(&model, &params, &task, eval_split, &eval_rows, cfg.m_eval, &mut rng)?;
            let row = MetricsRow {
                step,
                train_relaxed,
                train_discrete,
                eval_discrete,
                wall_time: start.elapsed().as_secs_f64(),
                clamp_count: clamp_since,
                baseline: baseline.current(),
            };
            clamp_since = 0;
            log::info!(
                "step {step}: relaxed {train_relaxed:.4}, discrete {train_discrete:.4}, {eval_name} {eval_discrete:.4}"
            );
            if let Some((f, path)) = metrics_file.as_mut() {
                writeln!(f, "{}", row.to_csv()).map_err(io_err(path))?;
            }
            metrics.push(row);
            if !(train_relaxed.is_finite() && train_discrete.is_finite() && eval_discrete.is_finite()) {
                return Err(TrainError::NonFiniteObjective { step });
            }
            if cfg.estimator == EstimatorKind::Sfe && best.as_ref().is_none_or(|(b, _)| eval_discrete > *b) {
                best = Some((eval_discrete, params.clone()));
            }
            if let Some(p) = &ckpt_path {
                model::save_checkpoint(p, &spec, &params)?;
            }
        }
    }

    // Early stopping for the score-function estimator.
    if let Some((_, p)) = best {
        params = p;
    }
    // Both final evaluations read the same noise, so for binary units the
    // discrete samples are exactly the rounded relaxed samples.
    let final_eval = eval_root.child(u64::MAX);
    let final_test_nll =
        -evaluate_discrete(&model, &params, &task, &dataset.test, &test_rows, cfg.m_eval, &mut final_eval.clone())?;
    let eval_cfg = ObjectiveConfig { m: cfg.m_eval, ..obj_cfg };
    let final_relaxed_test_nll =
        -evaluate_relaxed(&model, &params, &task, &dataset.test, &test_rows, &eval_cfg, &mut final_eval.clone())?;
    if let Some(p) = &ckpt_path {
        model::save_checkpoint(p, &spec, &params)?;
    }
    log::info!("final test NLL {final_test_nll:.4} (relaxed {final_relaxed_test_nll:.4})");
    Ok(TrainOutcome {
        spec,
        params,
        metrics,
        initial_test_nll,
        final_test_nll,
        final_relaxed_test_nll,
        steps_run: cfg.steps,
        checkpoint: ckpt_path,
        metrics_path: metrics_file.map(|(_, p)| p),
    })
}

// ---------------------------------------------------------------------------
// Temperature sweep

/// Final test objectives (NLL, lower is better) for one temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub relaxed: f64,
    pub discrete: f64,
}

impl SweepRow {
    /// Integrality gap: discrete minus relaxed NLL.
    pub fn gap(&self) -> f64 {
        self.discrete - self.relaxed
    }
}

pub const SWEEP_HEADER: &str = "lambda,relaxed,discrete,gap";

/// Trains one model per temperature and records final relaxed and discrete
/// test NLL. Each λ is used for every relaxed node (posterior and prior).
pub fn temperature_sweep(cfg: &TrainConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(TrainError::Config("empty temperature list".into()));
    }
    let (dataset, _) = load_data(&cfg.data, cfg.seed)?;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut c = cfg.clone();
        c.lambda_post = lambda;
        c.lambda_prior = lambda;
        c.out_dir = cfg.out_dir.as_ref().map(|d| d.join(format!("lambda-{lambda}")));
        let out = train_on(&c, &dataset)?;
        rows.push(SweepRow {
            lambda,
            relaxed: out.final_relaxed_test_nll,
            discrete: out.final_test_nll,
        });
    }
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{:.10},{:.10},{:.10}\n", r.lambda, r.relaxed, r.discrete, r.gap()));
    }
    fs::write(path, s).map_err(io_err(path))
}
