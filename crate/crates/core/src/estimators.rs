//! Gradient estimators and objective builders.
//!
//! * [`pathwise_gradient`] differentiates a Monte Carlo objective built from
//!   reparameterized noise (the Concrete relaxation);
//! * [`score_function_gradient`] forms `(1/S) Σ (f(X^s) - b) ∇ log p(X^s)`
//!   with a scalar moving-average baseline `b`;
//! * [`multisample_bound`] is `logsumexp(log w) - log m`;
//! * [`relaxed_objective`], [`discrete_objective`] and [`model_gradient`]
//!   wire these to a [`Model`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use thiserror::Error;

use crate::autodiff::{AutodiffError, Axis, Tape, Tensor, Var};
use crate::math::log_sum_exp;
use crate::model::{LatentSource, Mode, Model, ModelError, Objective, ParameterStore, Topology};
use crate::noise::RngStream;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("sample count must be at least 1")]
    InvalidSampleCount,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("relaxation mode {mode} does not apply: {reason}")]
    ModeMismatch { mode: RelaxationMode, reason: &'static str },
    #[error("cannot differentiate through a discrete sampler: {0}")]
    NonDifferentiable(AutodiffError),
    #[error("objective is not finite ({0})")]
    NonFinite(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(AutodiffError),
}

impl From<AutodiffError> for EstimatorError {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::NonDifferentiable(_) => EstimatorError::NonDifferentiable(e),
            other => EstimatorError::Autodiff(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// How the latent terms of the relaxed bound are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RelaxationMode {
    /// `log ρ_{a,λ2}(Y) - log κ_{α,λ1}(Y)`: densities of the relaxed nodes;
    /// the only variant that remains a lower bound.
    #[default]
    RelaxedKl,
    /// `Σ_i Z_i log(P_a / Q_α)(d_i)`: discrete log-masses weighted by the
    /// relaxed one-hot.
    RelaxedLogMass,
    /// `-KL(Q_α ‖ P_a)` computed exactly on the discrete distributions.
    AnalyticKl,
}

impl fmt::Display for RelaxationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RelaxedKl => "relaxed_kl",
            Self::RelaxedLogMass => "relaxed_log_mass",
            Self::AnalyticKl => "analytic_kl",
        })
    }
}

impl FromStr for RelaxationMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relaxed_kl" => Ok(Self::RelaxedKl),
            "relaxed_log_mass" => Ok(Self::RelaxedLogMass),
            "analytic_kl" => Ok(Self::AnalyticKl),
            other => Err(format!(
                "unknown relaxation mode {other:?} (expected relaxed_kl, relaxed_log_mass or analytic_kl)"
            )),
        }
    }
}

/// Default `(λ1, λ2)` (posterior, prior) temperatures by arity.
pub fn default_temperatures(arity: usize) -> (f64, f64) {
    match arity {
        2 => (2.0 / 3.0, 0.5),
        4 => (1.0, 2.0 / 3.0),
        8 => (2.0 / 3.0, 0.4),
        // No recommendation exists beyond 8 states; keep the prior at the
        // largest temperature without interior modes.
        n => (2.0 / 3.0, 1.0 / (n as f64 - 1.0)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub m: usize,
    pub relaxation_mode: RelaxationMode,
    /// Posterior temperature λ1 (also used for the whole chain of
    /// structured-prediction models).
    pub lambda_post: f64,
    /// Prior temperature λ2.
    pub lambda_prior: f64,
}

impl ObjectiveConfig {
    pub fn new(m: usize, relaxation_mode: RelaxationMode, lambda_post: f64, lambda_prior: f64) -> Result<Self> {
        let cfg = Self {
            m,
            relaxation_mode,
            lambda_post,
            lambda_prior,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn default_for_arity(arity: usize, m: usize) -> Self {
        let (lambda_post, lambda_prior) = default_temperatures(arity);
        Self {
            m: m.max(1),
            relaxation_mode: RelaxationMode::RelaxedKl,
            lambda_post,
            lambda_prior,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(EstimatorError::InvalidSampleCount);
        }
        for l in [self.lambda_post, self.lambda_prior] {
            if !(l > 0.0 && l.is_finite()) {
                return Err(EstimatorError::InvalidTemperature(l));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Per-sample (clamped) log weights, when the objective has them.
    pub log_weights: Vec<f64>,
    pub clamp_count: usize,
    pub baseline: Option<f64>,
}

/// Gradient of an objective (ascent direction) keyed like the parameters.
#[derive(Clone, Debug)]
pub struct GradEstimate {
    pub grads: BTreeMap<String, Tensor>,
    pub value: f64,
    pub diagnostics: Diagnostics,
}

/// What an objective builder hands back to [`pathwise_gradient`].
pub struct Built<'t> {
    /// Scalar objective to differentiate.
    pub objective: Var<'t>,
    pub log_weights: Option<Var<'t>>,
    pub clamp_count: usize,
}

impl<'t> From<Var<'t>> for Built<'t> {
    fn from(objective: Var<'t>) -> Self {
        Self {
            objective,
            log_weights: None,
            clamp_count: 0,
        }
    }
}

impl<'t> From<Objective<'t>> for Built<'t> {
    fn from(o: Objective<'t>) -> Self {
        Self {
            objective: o.value,
            log_weights: Some(o.log_weights),
            clamp_count: o.clamp_count,
        }
    }
}

fn collect_grads(tape: &Tape, vars: &BTreeMap<String, Var<'_>>, root: Var<'_>) -> Result<BTreeMap<String, Tensor>> {
    let g = tape.backward(root)?;
    Ok(vars.iter().map(|(k, v)| (k.clone(), g.wrt(*v))).collect())
}

/// Differentiates the objective produced by `loss_builder` with the noise it
/// draws from `rng` held fixed. The builder receives `m` so it can draw that
/// many inner samples.
pub fn pathwise_gradient<F>(
    loss_builder: F,
    params: &BTreeMap<String, Tensor>,
    rng: &mut RngStream,
    m: usize,
) -> Result<GradEstimate>
where
    F: for<'t> FnOnce(&'t Tape, &BTreeMap<String, Var<'t>>, &mut RngStream, usize) -> Result<Built<'t>>,
{
    if m == 0 {
        return Err(EstimatorError::InvalidSampleCount);
    }
    let tape = Tape::new();
    let vars: BTreeMap<String, Var<'_>> = params.iter().map(|(k, t)| (k.clone(), tape.leaf(t.clone()))).collect();
    let built = loss_builder(&tape, &vars, rng, m)?;
    let value = built.objective.item();
    let grads = collect_grads(&tape, &vars, built.objective)?;
    Ok(GradEstimate {
        grads,
        value,
        diagnostics: Diagnostics {
            log_weights: built.log_weights.map(|v| v.value().into_data()).unwrap_or_default(),
            clamp_count: built.clamp_count,
            baseline: None,
        },
    })
}

/// Scalar exponential-moving-average baseline for score-function estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    value: f64,
    rate: f64,
    enabled: bool,
}

impl Baseline {
    pub const DEFAULT_RATE: f64 = 0.9;

    /// Starts at zero.
    pub fn new(enabled: bool) -> Self {
        Self {
            value: 0.0,
            rate: Self::DEFAULT_RATE,
            enabled,
        }
    }

    pub fn with_value(value: f64) -> Self {
        Self {
            value,
            rate: Self::DEFAULT_RATE,
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        Self::new(false)
    }

    /// The value subtracted from `f` (zero when disabled).
    pub fn current(&self) -> f64 {
        if self.enabled {
            self.value
        } else {
            0.0
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    /// `b ← rate·b + (1 - rate)·mean_f`.
    pub fn update(&mut self, mean_f: f64) {
        if self.enabled {
            self.value = self.rate * self.value + (1.0 - self.rate) * mean_f;
        }
    }
}

/// `(1/S) Σ_s (f_s - b) ∇ log p(X^s)`. `mass_fn` builds the `(S, 1)` column
/// of sample log-masses on the tape; `f_values` are the payoffs `f(X^s)`.
/// The baseline is used first and then updated with the mean payoff.
pub fn score_function_gradient<F>(
    mass_fn: F,
    f_values: &[f64],
    params: &BTreeMap<String, Tensor>,
    baseline: &mut Baseline,
) -> Result<GradEstimate>
where
    F: for<'t> FnOnce(&'t Tape, &BTreeMap<String, Var<'t>>) -> Result<Var<'t>>,
{
    let s = f_values.len();
    if s == 0 {
        return Err(EstimatorError::InvalidSampleCount);
    }
    let tape = Tape::new();
    let vars: BTreeMap<String, Var<'_>> = params.iter().map(|(k, t)| (k.clone(), tape.leaf(t.clone()))).collect();
    let log_mass = mass_fn(&tape, &vars)?;
    let b = baseline.current();
    let centered = tape.constant(Tensor::column(f_values.iter().map(|f| f - b).collect()));
    let surrogate = log_mass.try_mul(centered)?.mean(None);
    let grads = collect_grads(&tape, &vars, surrogate)?;
    let mean_f = f_values.iter().sum::<f64>() / s as f64;
    baseline.update(mean_f);
    Ok(GradEstimate {
        grads,
        value: mean_f,
        diagnostics: Diagnostics {
            log_weights: Vec::new(),
            clamp_count: 0,
            baseline: baseline.enabled().then_some(b),
        },
    })
}

/// `log((1/m) Σ_i w_i)` from log weights.
pub fn multisample_bound(log_weights: &[f64]) -> f64 {
    assert!(!log_weights.is_empty(), "multisample_bound needs m >= 1");
    log_sum_exp(log_weights) - (log_weights.len() as f64).ln()
}

static WARNED_LOG_MASS: AtomicBool = AtomicBool::new(false);
static WARNED_ANALYTIC: AtomicBool = AtomicBool::new(false);

fn check_mode(model: &Model, cfg: &ObjectiveConfig) -> Result<()> {
    cfg.validate()?;
    let flag = match cfg.relaxation_mode {
        RelaxationMode::RelaxedKl => return Ok(()),
        RelaxationMode::RelaxedLogMass => &WARNED_LOG_MASS,
        RelaxationMode::AnalyticKl => &WARNED_ANALYTIC,
    };
    if model.topology() == Topology::Structured {
        return Err(EstimatorError::ModeMismatch {
            mode: cfg.relaxation_mode,
            reason: "structured prediction has no KL term",
        });
    }
    if !flag.swap(true, Ordering::Relaxed) {
        log::warn!(
            "relaxation mode {} does not yield a lower bound; its value is not interpretable",
            cfg.relaxation_mode
        );
    }
    Ok(())
}

/// The `m`-sample relaxed bound on the tape (Concrete nodes at λ1/λ2).
#[allow(clippy::too_many_arguments)]
pub fn relaxed_objective<'t>(
    tape: &'t Tape,
    vars: &BTreeMap<String, Var<'t>>,
    model: &Model,
    params: &ParameterStore,
    input: &Tensor,
    target: &Tensor,
    cfg: &ObjectiveConfig,
    rng: &mut RngStream,
) -> Result<(Objective<'t>, BTreeMap<usize, Tensor>)> {
    check_mode(model, cfg)?;
    let out = model.forward(tape, vars, params, input, target, cfg.m, Mode::Relaxed, cfg, LatentSource::Noise(rng))?;
    Ok((out.objective(), out.activity))
}

/// The `m`-sample bound of the discrete graph, evaluated with the same
/// parameters. Returns per-example values.
pub fn discrete_objective(
    model: &Model,
    params: &ParameterStore,
    input: &Tensor,
    target: &Tensor,
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let vars = params.attach_constants(&tape);
    let cfg = ObjectiveConfig::default_for_arity(model.spec().arity(), m);
    let out = model.forward(
        &tape,
        &vars,
        params,
        input,
        target,
        m,
        Mode::Discrete { block_gradients: false },
        &cfg,
        LatentSource::Noise(rng),
    )?;
    Ok(out.objective().per_example.value().into_data())
}

/// Relaxed bound evaluated without gradients, per example.
pub fn relaxed_value(
    model: &Model,
    params: &ParameterStore,
    input: &Tensor,
    target: &Tensor,
    cfg: &ObjectiveConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let vars = params.attach_constants(&tape);
    let (obj, _) = relaxed_objective(&tape, &vars, model, params, input, target, cfg, rng)?;
    Ok(obj.per_example.value().into_data())
}

/// Which gradient estimator drives training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Concrete,
    Sfe,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Concrete => "concrete",
            Self::Sfe => "sfe",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "concrete" => Ok(Self::Concrete),
            "sfe" => Ok(Self::Sfe),
            other => Err(format!("unknown estimator {other:?} (expected concrete or sfe)")),
        }
    }
}

/// One stochastic gradient of the model's objective for a batch, plus the
/// batch-mean layer activity for centering updates.
///
/// With [`EstimatorKind::Concrete`] this is the pathwise gradient of the
/// relaxed bound. With [`EstimatorKind::Sfe`] the discrete bound `L` is
/// differentiated through its explicit parameter dependence and the
/// sampling distribution contributes `(L - b) ∇ Σ_s log q(z_s)`.
#[allow(clippy::too_many_arguments)]
pub fn model_gradient(
    model: &Model,
    params: &ParameterStore,
    input: &Tensor,
    target: &Tensor,
    cfg: &ObjectiveConfig,
    estimator: EstimatorKind,
    baseline: &mut Baseline,
    rng: &mut RngStream,
) -> Result<(GradEstimate, BTreeMap<usize, Tensor>)> {
    let tape = Tape::new();
    let vars = params.attach(&tape);
    match estimator {
        EstimatorKind::Concrete => {
            let (obj, activity) = relaxed_objective(&tape, &vars, model, params, input, target, cfg, rng)?;
            let value = obj.value.item();
            if !value.is_finite() {
                return Err(EstimatorError::NonFinite(value));
            }
            let grads = collect_grads(&tape, &vars, obj.value)?;
            Ok((
                GradEstimate {
                    grads,
                    value,
                    diagnostics: Diagnostics {
                        log_weights: obj.log_weights.value().into_data(),
                        clamp_count: obj.clamp_count,
                        baseline: None,
                    },
                },
                activity,
            ))
        }
        EstimatorKind::Sfe => {
            cfg.validate()?;
            let out = model.forward(
                &tape,
                &vars,
                params,
                input,
                target,
                cfg.m,
                Mode::Discrete { block_gradients: false },
                cfg,
                LatentSource::Noise(rng),
            )?;
            let obj = out.objective();
            let value = obj.value.item();
            if !value.is_finite() {
                return Err(EstimatorError::NonFinite(value));
            }
            let b = baseline.current();
            let surrogate = match out.log_q {
                Some(lq) => {
                    let per_ex_lq = lq.reshape(out.batch, out.m).sum(Some(Axis(1)));
                    let f = obj.per_example.value().map(|v| v - b);
                    let score = per_ex_lq.try_mul(tape.constant(f))?;
                    obj.per_example.try_add(score)?.mean(None)
                }
                None => obj.value,
            };
            let grads = collect_grads(&tape, &vars, surrogate)?;
            baseline.update(value);
            Ok((
                GradEstimate {
                    grads,
                    value,
                    diagnostics: Diagnostics {
                        log_weights: obj.log_weights.value().into_data(),
                        clamp_count: obj.clamp_count,
                        baseline: Some(b),
                    },
                },
                out.activity,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::mean_se;

    #[test]
    fn multisample_bound_basics() {
        assert_eq!(multisample_bound(&[-3.2]), -3.2);
        assert!((multisample_bound(&[-1.5; 7]) + 1.5).abs() < 1e-14);
        assert!(multisample_bound(&[0.0, -1000.0]).is_finite());
    }

    #[test]
    fn config_validation() {
        assert!(ObjectiveConfig::new(0, RelaxationMode::RelaxedKl, 1.0, 1.0).is_err());
        assert!(ObjectiveConfig::new(1, RelaxationMode::RelaxedKl, 0.0, 1.0).is_err());
        assert!(ObjectiveConfig::new(1, RelaxationMode::RelaxedKl, 1.0, -1.0).is_err());
        assert_eq!(ObjectiveConfig::default_for_arity(2, 5).lambda_prior, 0.5);
        assert_eq!(default_temperatures(4), (1.0, 2.0 / 3.0));
        assert_eq!(default_temperatures(8), (2.0 / 3.0, 0.4));
        for m in ["relaxed_kl", "relaxed_log_mass", "analytic_kl"] {
            assert_eq!(m.parse::<RelaxationMode>().unwrap().to_string(), m);
        }
    }

    fn binary_concrete_mean_builder<'t>(
        tape: &'t Tape,
        vars: &BTreeMap<String, Var<'t>>,
        rng: &mut RngStream,
        m: usize,
        lambda: f64,
    ) -> Result<Built<'t>> {
        let l = tape.constant(Tensor::column((0..m).map(|_| rng.logistic()).collect()));
        let x = ((vars["log_alpha"] + l) / lambda).sigmoid();
        Ok(x.mean(None).into())
    }

    #[test]
    fn pathwise_matches_common_random_number_differences() {
        let la = 0.4;
        let lambda = 0.5;
        let m = 10_000;
        let params: BTreeMap<String, Tensor> = [("log_alpha".to_string(), Tensor::scalar(la))].into();
        let est = pathwise_gradient(
            |t, v, r, m| binary_concrete_mean_builder(t, v, r, m, lambda),
            &params,
            &mut RngStream::new(3, 3),
            m,
        )
        .unwrap();
        let f = |a: f64| {
            let mut rng = RngStream::new(3, 3);
            (0..m)
                .map(|_| crate::math::sigmoid((a + rng.logistic()) / lambda))
                .sum::<f64>()
                / m as f64
        };
        let h = 1e-5;
        let fd = (f(la + h) - f(la - h)) / (2.0 * h);
        let g = est.grads["log_alpha"].item();
        assert!(((g - fd) / fd).abs() < 1e-4, "{g} vs {fd}");
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let params: BTreeMap<String, Tensor> = [("w".to_string(), Tensor::row(vec![1.0, 2.0]))].into();
        let est = pathwise_gradient(
            |t, v, _, _| Ok((v["w"] * 0.0 + t.scalar(3.0)).sum_all().into()),
            &params,
            &mut RngStream::new(1, 1),
            1,
        )
        .unwrap();
        assert!(est.grads["w"].data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn zero_temperature_gradient_approaches_bernoulli() {
        let la = 0.3;
        let m = 100_000;
        let params: BTreeMap<String, Tensor> = [("log_alpha".to_string(), Tensor::scalar(la))].into();
        // Per-sample gradients, to get a standard error.
        let tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(la));
        let mut rng = RngStream::new(11, 2);
        let l = tape.constant(Tensor::column((0..m).map(|_| rng.logistic()).collect()));
        let x = ((a + l) / 0.01).sigmoid();
        // d/da of each sample: σ'(u)/λ.
        let per: Vec<f64> = x.value().data().iter().map(|s| s * (1.0 - s) / 0.01).collect();
        let ms = mean_se(&per);
        let target = crate::math::sigmoid(la) * (1.0 - crate::math::sigmoid(la));
        assert!((ms.mean - target).abs() < 3.0 * ms.se, "{} ± {} vs {target}", ms.mean, ms.se);
        let est = pathwise_gradient(
            |t, v, r, m| binary_concrete_mean_builder(t, v, r, m, 0.01),
            &params,
            &mut RngStream::new(11, 2),
            m,
        )
        .unwrap();
        assert!((est.grads["log_alpha"].item() - ms.mean).abs() < 1e-9);
    }

    fn four_state_sfe(
        rng: &mut RngStream,
        baseline: &mut Baseline,
        draws: usize,
    ) -> Vec<Vec<f64>> {
        let payoff = [1.0, 2.0, 3.0, 4.0];
        let params: BTreeMap<String, Tensor> = [("logits".to_string(), Tensor::row(vec![0.0; 4]))].into();
        (0..draws)
            .map(|_| {
                let k = rng.below(4);
                let est = score_function_gradient(
                    |tape, v| {
                        let mut oh = Tensor::zeros(1, 4);
                        oh.set(0, k, 1.0);
                        let l = v["logits"];
                        let lp = crate::nodes::discrete_log_mass(l, tape.constant(oh));
                        Ok(lp)
                    },
                    &[payoff[k]],
                    &params,
                    baseline,
                )
                .unwrap();
                est.grads["logits"].data().to_vec()
            })
            .collect()
    }

    #[test]
    fn score_function_is_unbiased_and_baseline_reduces_variance() {
        let exact = [-0.375, -0.125, 0.125, 0.375];
        let n = 40_000;
        let plain = four_state_sfe(&mut RngStream::new(7, 1), &mut Baseline::disabled(), n);
        let based = four_state_sfe(&mut RngStream::new(7, 2), &mut Baseline::new(true), n);
        for k in 0..4 {
            let a = mean_se(&plain.iter().map(|g| g[k]).collect::<Vec<_>>());
            let b = mean_se(&based.iter().map(|g| g[k]).collect::<Vec<_>>());
            assert!((a.mean - exact[k]).abs() < 3.0 * a.se, "plain {k}: {a:?}");
            assert!((b.mean - exact[k]).abs() < 3.0 * b.se, "baseline {k}: {b:?}");
            assert!(b.variance < a.variance);
        }
    }

    #[test]
    fn matching_baseline_gives_zero_gradient() {
        let params: BTreeMap<String, Tensor> = [("logits".to_string(), Tensor::row(vec![0.2, -0.1]))].into();
        let mut b = Baseline::with_value(2.5);
        let est = score_function_gradient(
            |tape, v| Ok(crate::nodes::discrete_log_mass(v["logits"], tape.constant(Tensor::row(vec![0.0, 1.0])))),
            &[2.5],
            &params,
            &mut b,
        )
        .unwrap();
        assert!(est.grads["logits"].data().iter().all(|g| *g == 0.0));
        assert_eq!(b.current(), 2.5);
    }

    #[test]
    fn discrete_sampler_rejects_pathwise() {
        let params: BTreeMap<String, Tensor> = [("l".to_string(), Tensor::row(vec![0.0, 0.0]))].into();
        let err = pathwise_gradient(
            |_, v, _, _| Ok(v["l"].discrete_output(Tensor::scalar(1.0)).into()),
            &params,
            &mut RngStream::new(1, 1),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, EstimatorError::NonDifferentiable(_)));
    }
}
