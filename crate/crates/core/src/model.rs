//! Networks of `n`-ary stochastic layers.
//!
//! A model description such as `(200H~784V)` is read left to right as the
//! generative direction: `H` layers are latent, `V` layers observed, `-`
//! (or `–`) is a linear conditioning function and `~` (or `∼`) a nonlinear
//! one (two tanh layers sized like the conditioning input, then an affine
//! output).
//!
//! Two topologies are supported:
//!
//! * density models `H … H V`: the first latent layer has learnable prior
//!   logits, and an encoder runs the chain in reverse with the same link
//!   types;
//! * structured-prediction models `V H … H V`: the first layer is an observed
//!   context and the latent chain conditioned on it serves as both prior and
//!   variational distribution.
//!
//! Parameter keys: `prior.logits`, `gen.{i}.{w,b}{k}` for the conditioner
//! producing layer `i` from layer `i-1`, and `enc.{i}.{w,b}{k}` for the
//! encoder conditioner producing layer `i` from layer `i+1`.
//!
//! Each latent layer stores a centering mean that is subtracted (as a
//! constant, so without gradient) wherever that layer's activity enters a
//! conditioner.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Axis, Tape, Tensor, Var};
use crate::estimators::{ObjectiveConfig, RelaxationMode};
use crate::math::logit;
use crate::nodes::{self, GroupShape, LayerSample};
use crate::noise::RngStream;
use crate::relaxations::{bits_per_state, RelaxError};

/// Clamp applied to per-sample log weights before the log-sum-exp.
pub const LOG_WEIGHT_CLAMP: f64 = 500.0;

/// Clamp applied to the base-rate logit of the output bias.
pub const BASE_RATE_LOGIT_CLAMP: f64 = 5.0;

/// Decay of the centering moving average.
pub const CENTERING_DECAY: f64 = 0.9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model spec: unbalanced parentheses")]
    UnbalancedParens,
    #[error("model spec: unknown separator {ch:?} at character {pos}")]
    UnknownSeparator { ch: char, pos: usize },
    #[error("model spec: dangling separator at character {pos}")]
    DanglingSeparator { pos: usize },
    #[error("model spec: layer at character {pos} has zero units")]
    ZeroUnits { pos: usize },
    #[error("model spec: {msg} at character {pos}")]
    Syntax { msg: String, pos: usize },
    #[error("unsupported topology: {0}")]
    Topology(String),
    #[error("latent layer {layer} has {units} units, not divisible by log2(n) = {bits}")]
    UnitsNotDivisible { layer: usize, units: usize, bits: usize },
    #[error(transparent)]
    Arity(#[from] RelaxError),
    #[error("dataset base rates are required to initialize the observed output layer")]
    MissingBaseRates,
    #[error("expected {expected} base rates, got {found}")]
    BaseRateLength { expected: usize, found: usize },
    #[error("{what}: expected {expected} columns, got {found}")]
    InputShape { what: &'static str, expected: usize, found: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("explicit noise for layer {layer} has shape {found:?}, expected {expected:?}")]
    NoiseShape { layer: usize, expected: (usize, usize), found: (usize, usize) },
    #[error("latent source does not fit the mode: {0}")]
    SourceMismatch(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

// ---------------------------------------------------------------------------
// Spec

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Observed,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    Linear,
    Nonlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub role: Role,
    pub units: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    Density,
    Structured,
}

/// A parsed model description plus the arity shared by its latent layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    links: Vec<Link>,
    arity: usize,
}

/// Parses a model description. The arity defaults to 2; see
/// [`NetworkSpec::with_arity`].
pub fn parse_model_spec(text: &str) -> Result<NetworkSpec> {
    let chars: Vec<(usize, char)> = text.trim().chars().enumerate().collect();
    let open = chars.iter().filter(|(_, c)| *c == '(').count();
    let close = chars.iter().filter(|(_, c)| *c == ')').count();
    let body: &[(usize, char)] = match (open, close) {
        (0, 0) => &chars,
        (1, 1) if chars.first().map(|c| c.1) == Some('(') && chars.last().map(|c| c.1) == Some(')') => {
            &chars[1..chars.len() - 1]
        }
        _ => return Err(ModelError::UnbalancedParens),
    };

    let mut layers = Vec::new();
    let mut links = Vec::new();
    let mut i = 0;
    let mut pending_sep: Option<usize> = None;
    while i < body.len() {
        let (pos, c) = body[i];
        if c.is_ascii_digit() {
            let start = i;
            while i < body.len() && body[i].1.is_ascii_digit() {
                i += 1;
            }
            let digits: String = body[start..i].iter().map(|(_, c)| c).collect();
            let units: usize = digits.parse().map_err(|_| ModelError::Syntax {
                msg: format!("unit count {digits:?} out of range"),
                pos,
            })?;
            if units == 0 {
                return Err(ModelError::ZeroUnits { pos });
            }
            let role = match body.get(i).map(|c| c.1) {
                Some('H') => Role::Latent,
                Some('V') => Role::Observed,
                Some(other) => {
                    return Err(ModelError::Syntax {
                        msg: format!("expected H or V, found {other:?}"),
                        pos: body[i].0,
                    })
                }
                None => {
                    return Err(ModelError::Syntax {
                        msg: "expected H or V".into(),
                        pos: pos + digits.len(),
                    })
                }
            };
            i += 1;
            if !layers.is_empty() && pending_sep.is_none() {
                return Err(ModelError::Syntax {
                    msg: "missing separator".into(),
                    pos,
                });
            }
            pending_sep = None;
            layers.push(LayerSpec { role, units });
            if let Some(&(pos, c)) = body.get(i) {
                let link = match c {
                    '-' | '–' => Link::Linear,
                    '~' | '∼' => Link::Nonlinear,
                    _ => return Err(ModelError::UnknownSeparator { ch: c, pos }),
                };
                links.push(link);
                pending_sep = Some(pos);
                i += 1;
            }
        } else if layers.is_empty() || pending_sep.is_some() {
            return Err(ModelError::Syntax {
                msg: format!("expected a unit count, found {c:?}"),
                pos,
            });
        } else {
            return Err(ModelError::UnknownSeparator { ch: c, pos });
        }
    }
    if let Some(pos) = pending_sep {
        return Err(ModelError::DanglingSeparator { pos });
    }
    if layers.is_empty() {
        return Err(ModelError::Syntax {
            msg: "empty model".into(),
            pos: 0,
        });
    }
    let spec = NetworkSpec {
        layers,
        links,
        arity: 2,
    };
    spec.topology()?;
    Ok(spec)
}

impl FromStr for NetworkSpec {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        parse_model_spec(s)
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, l) in self.layers.iter().enumerate() {
            let r = if l.role == Role::Latent { 'H' } else { 'V' };
            write!(f, "{}{}", l.units, r)?;
            if let Some(link) = self.links.get(i) {
                write!(f, "{}", if *link == Link::Linear { '-' } else { '~' })?;
            }
        }
        write!(f, ")")
    }
}

impl NetworkSpec {
    /// Sets the latent arity, checking that it is a power of two and that
    /// every latent layer splits into whole groups.
    pub fn with_arity(mut self, arity: usize) -> Result<Self> {
        let bits = bits_per_state(arity)?;
        for (layer, l) in self.layers.iter().enumerate() {
            if l.role == Role::Latent && l.units % bits != 0 {
                return Err(ModelError::UnitsNotDivisible {
                    layer,
                    units: l.units,
                    bits,
                });
            }
        }
        self.arity = arity;
        Ok(self)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// `links()[i]` connects layer `i` to layer `i + 1`.
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn topology(&self) -> Result<Topology> {
        let k = self.layers.len() - 1;
        if self.layers[k].role != Role::Observed {
            return Err(ModelError::Topology("the last layer must be observed".into()));
        }
        if self.layers[1..k.max(1)].iter().any(|l| l.role == Role::Observed) && k > 1 {
            return Err(ModelError::Topology("observed layers are only allowed at the ends".into()));
        }
        Ok(if k > 0 && self.layers[0].role == Role::Observed {
            Topology::Structured
        } else {
            Topology::Density
        })
    }

    /// Index of the final (observed) layer.
    pub fn last(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn latent_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].role == Role::Latent)
            .collect()
    }

    /// Columns of the conditioning input: the data for density models, the
    /// context for structured ones.
    pub fn input_units(&self) -> usize {
        match self.topology().expect("validated") {
            Topology::Density => self.layers[self.last()].units,
            Topology::Structured => self.layers[0].units,
        }
    }

    pub fn output_units(&self) -> usize {
        self.layers[self.last()].units
    }

    /// Number of logits that parameterize layer `i`.
    pub fn logit_count(&self, i: usize) -> usize {
        let l = self.layers[i];
        match l.role {
            Role::Observed => l.units,
            Role::Latent => l.units / self.bits() * self.arity,
        }
    }

    fn bits(&self) -> usize {
        self.arity.trailing_zeros() as usize
    }

    fn group_shape(&self, rows: usize, i: usize) -> GroupShape {
        GroupShape::new(rows, self.layers[i].units, self.arity).expect("arity validated")
    }

    /// Conditioners as `(net, target layer, source layer, link)`, in the
    /// order parameters are initialized.
    fn conditioners(&self) -> Vec<(&'static str, usize, usize, Link)> {
        let mut out = Vec::new();
        for i in 1..self.layers.len() {
            out.push(("gen", i, i - 1, self.links[i - 1]));
        }
        if self.topology().expect("validated") == Topology::Density {
            for i in (0..self.last()).rev() {
                out.push(("enc", i, i + 1, self.links[i]));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Parameters

/// Keyed parameter tensors plus per-layer centering means.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
    centering: BTreeMap<usize, Tensor>,
}

fn conditioner_shapes(link: Link, fan_in: usize, out: usize) -> Vec<(&'static str, usize, usize)> {
    match link {
        Link::Linear => vec![("w0", fan_in, out), ("b0", 1, out)],
        Link::Nonlinear => vec![
            ("w0", fan_in, fan_in),
            ("b0", 1, fan_in),
            ("w1", fan_in, fan_in),
            ("b1", 1, fan_in),
            ("w2", fan_in, out),
            ("b2", 1, out),
        ],
    }
}

/// Glorot-uniform weights, zero biases, output bias at the clamped logit of
/// the per-pixel base rate, zero prior logits.
pub fn init_params(spec: &NetworkSpec, base_rates: Option<&[f64]>, rng: &mut RngStream) -> Result<ParameterStore> {
    let out_units = spec.output_units();
    let rates = base_rates.ok_or(ModelError::MissingBaseRates)?;
    if rates.len() != out_units {
        return Err(ModelError::BaseRateLength {
            expected: out_units,
            found: rates.len(),
        });
    }
    let output_bias: Vec<f64> = rates
        .iter()
        .map(|&r| logit(r).clamp(-BASE_RATE_LOGIT_CLAMP, BASE_RATE_LOGIT_CLAMP))
        .collect();

    let mut tensors = BTreeMap::new();
    let last = spec.last();
    if spec.topology()? == Topology::Density {
        let prior = if last == 0 {
            Tensor::row(output_bias.clone())
        } else {
            Tensor::zeros(1, spec.logit_count(0))
        };
        tensors.insert("prior.logits".to_string(), prior);
    }
    for (net, target, source, link) in spec.conditioners() {
        let shapes = conditioner_shapes(link, spec.layers[source].units, spec.logit_count(target));
        let n_shapes = shapes.len();
        for (k, (name, rows, cols)) in shapes.into_iter().enumerate() {
            let t = if name.starts_with('w') {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
                Tensor::new(rows, cols, data).expect("sized")
            } else if net == "gen" && target == last && k == n_shapes - 1 {
                Tensor::row(output_bias.clone())
            } else {
                Tensor::zeros(rows, cols)
            };
            tensors.insert(format!("{net}.{target}.{name}"), t);
        }
    }
    let centering = spec
        .latent_layers()
        .into_iter()
        .map(|i| (i, Tensor::zeros(1, spec.layers[i].units)))
        .collect();
    Ok(ParameterStore { tensors, centering })
}

impl ParameterStore {
    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.tensors.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    pub fn centering(&self, layer: usize) -> Option<&Tensor> {
        self.centering.get(&layer)
    }

    pub fn centering_means(&self) -> &BTreeMap<usize, Tensor> {
        &self.centering
    }

    /// Weight matrices (not biases or prior logits) receive weight decay.
    pub fn is_weight(key: &str) -> bool {
        key.rsplit('.').next().is_some_and(|k| k.starts_with('w'))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn attach<'t>(&self, tape: &'t Tape) -> BTreeMap<String, Var<'t>> {
        self.tensors.iter().map(|(k, t)| (k.clone(), tape.leaf(t.clone()))).collect()
    }

    /// Records every parameter as a constant (evaluation).
    pub fn attach_constants<'t>(&self, tape: &'t Tape) -> BTreeMap<String, Var<'t>> {
        self.tensors.iter().map(|(k, t)| (k.clone(), tape.constant(t.clone()))).collect()
    }

    /// `mean ← 0.9 mean + 0.1 batch_mean` for each reported layer.
    pub fn centering_update(&mut self, activity: &BTreeMap<usize, Tensor>) {
        for (layer, batch_mean) in activity {
            if let Some(mean) = self.centering.get_mut(layer) {
                for (m, b) in mean.data_mut().iter_mut().zip(batch_mean.data()) {
                    *m = CENTERING_DECAY * *m + (1.0 - CENTERING_DECAY) * b;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward

/// Which graph to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Concrete nodes at the configured temperatures.
    Relaxed,
    /// Discrete nodes. With `block_gradients` the samples are recorded as
    /// discrete sampler outputs so pathwise differentiation through them
    /// fails; without it they are plain constants (score-function and
    /// evaluation use).
    Discrete { block_gradients: bool },
}

/// Where latent randomness comes from.
pub enum LatentSource<'a> {
    Noise(&'a mut RngStream),
    /// Raw noise per latent layer: logistic `(R, G)` on the binary relaxed
    /// path, Gumbel `(R, G·n)` otherwise.
    Explicit(&'a BTreeMap<usize, Tensor>),
    /// Discrete states per latent layer, row-major `R·G` (discrete mode only).
    States(&'a BTreeMap<usize, Vec<usize>>),
}

/// Everything one forward pass produces, per row `r = b·m + s`.
pub struct ForwardOutput<'t> {
    pub batch: usize,
    pub m: usize,
    /// `log p(target | latents)`, `(R, 1)`.
    pub log_lik: Var<'t>,
    /// Latent contribution to the log weight under the configured
    /// relaxation mode, `(R, 1)`; a zero constant without latent terms.
    pub latent_term: Var<'t>,
    /// `log p(z)` and `log q(z|x)` (or relaxed densities), `(R, 1)`;
    /// present for density models.
    pub log_prior: Option<Var<'t>>,
    pub log_q: Option<Var<'t>>,
    pub samples: BTreeMap<usize, LayerSample<'t>>,
    /// Batch-mean activity per latent layer, for centering updates.
    pub activity: BTreeMap<usize, Tensor>,
}

impl<'t> ForwardOutput<'t> {
    pub fn rows(&self) -> usize {
        self.batch * self.m
    }

    /// Clamped log weights and the number of clamped entries.
    pub fn log_weights(&self) -> (Var<'t>, usize) {
        let lw = self.log_lik + self.latent_term;
        let clamped = lw
            .value()
            .data()
            .iter()
            .filter(|v| v.abs() > LOG_WEIGHT_CLAMP || v.is_nan())
            .count();
        (lw.clamp(-LOG_WEIGHT_CLAMP, LOG_WEIGHT_CLAMP), clamped)
    }
}

/// Objective built from a forward pass.
pub struct Objective<'t> {
    /// Mean per-example bound (scalar, to be maximized).
    pub value: Var<'t>,
    /// Per-example `m`-sample bound, `(B, 1)`.
    pub per_example: Var<'t>,
    /// Clamped log weights, `(R, 1)`.
    pub log_weights: Var<'t>,
    pub clamp_count: usize,
}

/// `logsumexp_s(log w_{b,s}) - log m` per example, `(R, 1) → (B, 1)`.
pub fn multisample_bound_var<'t>(log_weights: Var<'t>, batch: usize, m: usize) -> Var<'t> {
    log_weights.reshape(batch, m).log_sum_exp(Axis(1)) - (m as f64).ln()
}

impl<'t> ForwardOutput<'t> {
    pub fn objective(&self) -> Objective<'t> {
        let (lw, clamp_count) = self.log_weights();
        let per_example = multisample_bound_var(lw, self.batch, self.m);
        Objective {
            value: per_example.mean(None),
            per_example,
            log_weights: lw,
            clamp_count,
        }
    }
}

fn repeat_rows(x: &Tensor, m: usize) -> Tensor {
    let (b, d) = x.shape();
    let mut data = Vec::with_capacity(b * m * d);
    for r in 0..b {
        for _ in 0..m {
            data.extend_from_slice(x.row_slice(r));
        }
    }
    Tensor::new(b * m, d, data).expect("sized")
}

fn param<'t>(vars: &BTreeMap<String, Var<'t>>, key: &str) -> Result<Var<'t>> {
    vars.get(key).copied().ok_or_else(|| ModelError::MissingParam(key.to_string()))
}

/// Applies the conditioner of `net` that produces layer `target`.
fn condition<'t>(vars: &BTreeMap<String, Var<'t>>, net: &str, target: usize, link: Link, input: Var<'t>) -> Result<Var<'t>> {
    let p = |k: &str| param(vars, &format!("{net}.{target}.{k}"));
    Ok(match link {
        Link::Linear => input.try_matmul(p("w0")?)?.try_add(p("b0")?)?,
        Link::Nonlinear => {
            let h = input.try_matmul(p("w0")?)?.try_add(p("b0")?)?.tanh();
            let h = h.try_matmul(p("w1")?)?.try_add(p("b1")?)?.tanh();
            h.try_matmul(p("w2")?)?.try_add(p("b2")?)?
        }
    })
}

fn bernoulli_log_lik<'t>(logits: Var<'t>, x: Var<'t>) -> Var<'t> {
    (x * logits - logits.softplus()).sum(Some(Axis(1)))
}

fn column_means(t: &Tensor) -> Tensor {
    let (r, c) = t.shape();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
            *o += v;
        }
    }
    Tensor::row(out.into_iter().map(|v| v / r as f64).collect())
}

/// A network spec bound to its forward computation.
#[derive(Clone, Debug)]
pub struct Model {
    spec: NetworkSpec,
}

struct Sampler<'a, 'b> {
    source: &'a mut LatentSource<'b>,
}

impl Sampler<'_, '_> {
    fn noise(&mut self, layer: usize, rows: usize, cols: usize, logistic: bool) -> Result<Tensor> {
        match self.source {
            LatentSource::Noise(rng) => {
                let data = (0..rows * cols)
                    .map(|_| if logistic { rng.logistic() } else { rng.gumbel() })
                    .collect();
                Ok(Tensor::new(rows, cols, data).expect("sized"))
            }
            LatentSource::Explicit(map) => {
                let t = map.get(&layer).ok_or(ModelError::SourceMismatch("missing explicit noise"))?;
                if t.shape() != (rows, cols) {
                    return Err(ModelError::NoiseShape {
                        layer,
                        expected: (rows, cols),
                        found: t.shape(),
                    });
                }
                Ok(t.clone())
            }
            LatentSource::States(_) => Err(ModelError::SourceMismatch("states need discrete mode")),
        }
    }
}

impl Model {
    pub fn new(spec: NetworkSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn topology(&self) -> Topology {
        self.spec.topology().expect("validated at parse time")
    }

    fn sample_layer<'t>(
        &self,
        layer: usize,
        rows: usize,
        logits: Var<'t>,
        mode: Mode,
        lambda: f64,
        sampler: &mut Sampler<'_, '_>,
    ) -> Result<LayerSample<'t>> {
        let shape = self.spec.group_shape(rows, layer);
        match mode {
            Mode::Relaxed if self.spec.arity == 2 => {
                let l = sampler.noise(layer, rows, shape.noise_cols(true), true)?;
                Ok(nodes::binary_logit_layer(&shape, logits, lambda, &l))
            }
            Mode::Relaxed => {
                let g = sampler.noise(layer, rows, shape.noise_cols(false), false)?;
                Ok(nodes::exp_concrete_layer(&shape, logits, lambda, &g))
            }
            Mode::Discrete { block_gradients } => {
                let states = match sampler.source {
                    LatentSource::States(map) => {
                        let s = map.get(&layer).ok_or(ModelError::SourceMismatch("missing states"))?;
                        if s.len() != rows * shape.groups || s.iter().any(|&v| v >= shape.arity) {
                            return Err(ModelError::SourceMismatch("state table size or value"));
                        }
                        s.clone()
                    }
                    // Binary units threshold log α + L, the rounding of the
                    // relaxed sample drawn from the same logistic noise.
                    _ if self.spec.arity == 2 => {
                        let l = sampler.noise(layer, rows, shape.noise_cols(true), true)?;
                        nodes::logistic_threshold_states(&logits.value(), &l)
                    }
                    _ => {
                        let g = sampler.noise(layer, rows, shape.noise_cols(false), false)?;
                        nodes::gumbel_max_states(&shape, &logits.value(), &g)
                    }
                };
                Ok(nodes::discrete_layer(&shape, logits, states, block_gradients))
            }
        }
    }

    /// Log-density (or log-mass) of a sampled layer under `logits`, per row.
    fn layer_log_density<'t>(
        &self,
        layer: usize,
        rows: usize,
        logits: Var<'t>,
        sample: &LayerSample<'t>,
        mode: Mode,
        lambda: f64,
    ) -> Var<'t> {
        let shape = self.spec.group_shape(rows, layer);
        let per_group = match mode {
            Mode::Relaxed if self.spec.arity == 2 => {
                nodes::binary_logit_log_density(nodes::binary_log_alpha(&shape, logits), sample.point, lambda)
            }
            Mode::Relaxed => nodes::exp_concrete_log_density(shape.by_group(logits), sample.point, lambda),
            Mode::Discrete { .. } => nodes::discrete_log_mass(shape.by_group(logits), sample.onehot),
        };
        shape.sum_groups(per_group)
    }

    fn layer_input<'t>(
        &self,
        tape: &'t Tape,
        params: &ParameterStore,
        samples: &BTreeMap<usize, LayerSample<'t>>,
        layer: usize,
        observed: Var<'t>,
    ) -> Var<'t> {
        match samples.get(&layer) {
            Some(s) => match params.centering(layer) {
                Some(c) => s.embedding - tape.constant(c.clone()),
                None => s.embedding,
            },
            None => observed,
        }
    }

    /// Builds one forward pass for a batch: `input` is the conditioning data
    /// (the image for density models, the context for structured ones) and
    /// `target` the scored observation. Each row is replicated `m` times.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        vars: &BTreeMap<String, Var<'t>>,
        params: &ParameterStore,
        input: &Tensor,
        target: &Tensor,
        m: usize,
        mode: Mode,
        cfg: &ObjectiveConfig,
        mut source: LatentSource<'_>,
    ) -> Result<ForwardOutput<'t>> {
        let spec = &self.spec;
        if input.cols() != spec.input_units() {
            return Err(ModelError::InputShape {
                what: "input",
                expected: spec.input_units(),
                found: input.cols(),
            });
        }
        if target.cols() != spec.output_units() || target.rows() != input.rows() {
            return Err(ModelError::InputShape {
                what: "target",
                expected: spec.output_units(),
                found: target.cols(),
            });
        }
        let batch = input.rows();
        let rows = batch * m;
        let x = tape.constant(repeat_rows(input, m));
        let y = tape.constant(repeat_rows(target, m));
        let last = spec.last();
        let mut sampler = Sampler { source: &mut source };
        let mut samples: BTreeMap<usize, LayerSample<'t>> = BTreeMap::new();

        let (log_lik, latent_term, log_prior, log_q) = match self.topology() {
            Topology::Structured => {
                let mut chain: Option<Var<'t>> = None;
                for i in 1..last {
                    let inp = self.layer_input(tape, params, &samples, i - 1, x);
                    let logits = condition(vars, "gen", i, spec.links[i - 1], inp)?;
                    let s = self.sample_layer(i, rows, logits, mode, cfg.lambda_post, &mut sampler)?;
                    if let Mode::Discrete { .. } = mode {
                        // The chain is both prior and variational distribution;
                        // its log-mass feeds score-function surrogates.
                        let lm = self.layer_log_density(i, rows, logits, &s, mode, cfg.lambda_post);
                        chain = Some(match chain {
                            Some(c) => c + lm,
                            None => lm,
                        });
                    }
                    samples.insert(i, s);
                }
                let inp = self.layer_input(tape, params, &samples, last - 1, x);
                let out = condition(vars, "gen", last, spec.links[last - 1], inp)?;
                let zero = tape.constant(Tensor::zeros(rows, 1));
                (bernoulli_log_lik(out, y), zero, chain, chain)
            }
            Topology::Density if last == 0 => {
                let out = param(vars, "prior.logits")?.try_broadcast_to(rows, spec.output_units())?;
                let zero = tape.constant(Tensor::zeros(rows, 1));
                (bernoulli_log_lik(out, y), zero, Some(zero), Some(zero))
            }
            Topology::Density => {
                // Encoder, top-down from the data.
                let mut post_logits = BTreeMap::new();
                for i in (0..last).rev() {
                    let inp = self.layer_input(tape, params, &samples, i + 1, x);
                    let logits = condition(vars, "enc", i, spec.links[i], inp)?;
                    let s = self.sample_layer(i, rows, logits, mode, cfg.lambda_post, &mut sampler)?;
                    samples.insert(i, s);
                    post_logits.insert(i, logits);
                }
                // Generative chain scored at the encoder's samples.
                let mut lp_total: Option<Var<'t>> = None;
                let mut lq_total: Option<Var<'t>> = None;
                let mut term_total: Option<Var<'t>> = None;
                let add = |acc: &mut Option<Var<'t>>, v: Var<'t>| {
                    *acc = Some(match acc.take() {
                        Some(a) => a + v,
                        None => v,
                    });
                };
                for i in 0..last {
                    let prior_logits = if i == 0 {
                        param(vars, "prior.logits")?.try_broadcast_to(rows, spec.logit_count(0))?
                    } else {
                        let inp = self.layer_input(tape, params, &samples, i - 1, x);
                        condition(vars, "gen", i, spec.links[i - 1], inp)?
                    };
                    let s = &samples[&i];
                    let q_logits = post_logits[&i];
                    let lp = self.layer_log_density(i, rows, prior_logits, s, mode, cfg.lambda_prior);
                    let lq = self.layer_log_density(i, rows, q_logits, s, mode, cfg.lambda_post);
                    let shape = spec.group_shape(rows, i);
                    let term = match (mode, cfg.relaxation_mode) {
                        (Mode::Relaxed, RelaxationMode::RelaxedLogMass) => shape.sum_groups(
                            nodes::relaxed_log_mass_ratio(shape.by_group(prior_logits), shape.by_group(q_logits), s.onehot),
                        ),
                        (Mode::Relaxed, RelaxationMode::AnalyticKl) => shape.sum_groups(nodes::neg_discrete_kl(
                            shape.by_group(prior_logits),
                            shape.by_group(q_logits),
                        )),
                        _ => lp - lq,
                    };
                    add(&mut lp_total, lp);
                    add(&mut lq_total, lq);
                    add(&mut term_total, term);
                }
                let inp = self.layer_input(tape, params, &samples, last - 1, x);
                let out = condition(vars, "gen", last, spec.links[last - 1], inp)?;
                (
                    bernoulli_log_lik(out, y),
                    term_total.expect("at least one latent layer"),
                    lp_total,
                    lq_total,
                )
            }
        };
        let activity = samples
            .iter()
            .map(|(&i, s)| (i, column_means(&s.embedding.value())))
            .collect();
        Ok(ForwardOutput {
            batch,
            m,
            log_lik,
            latent_term,
            log_prior,
            log_q,
            samples,
            activity,
        })
    }

    /// Enumerates every joint latent state for a single example, returning
    /// the per-state `log p(z)`, `log p(target|z)` and `log q(z|input)` (the
    /// last two coinciding with the prior chain for structured models).
    /// Fails above 2^12 states.
    pub fn enumerate(&self, params: &ParameterStore, input: &[f64], target: &[f64]) -> Result<Enumeration> {
        let spec = &self.spec;
        let latents = spec.latent_layers();
        let groups: Vec<usize> = latents.iter().map(|&i| spec.layers[i].units / spec.bits()).collect();
        let total_groups: usize = groups.iter().sum();
        let states = (spec.arity as f64).powi(total_groups as i32);
        if states > crate::oracle::ENUMERATION_CAP as f64 {
            return Err(ModelError::Topology(format!("{states} latent states exceed the enumeration cap")));
        }
        let s = states as usize;
        // State j enumerates digits base n, first latent layer most significant.
        let mut tables: BTreeMap<usize, Vec<usize>> = latents.iter().map(|&i| (i, Vec::new())).collect();
        for j in 0..s {
            let mut rem = j;
            let mut digits = vec![0; total_groups];
            for d in digits.iter_mut().rev() {
                *d = rem % spec.arity;
                rem /= spec.arity;
            }
            let mut off = 0;
            for (&layer, &g) in latents.iter().zip(&groups) {
                tables.get_mut(&layer).unwrap().extend_from_slice(&digits[off..off + g]);
                off += g;
            }
        }
        let tape = Tape::new();
        let vars = params.attach_constants(&tape);
        let inp = Tensor::new(s, input.len(), input.iter().copied().cycle().take(s * input.len()).collect())
            .expect("sized");
        let tgt = Tensor::new(s, target.len(), target.iter().copied().cycle().take(s * target.len()).collect())
            .expect("sized");
        let cfg = ObjectiveConfig::default_for_arity(spec.arity, 1);
        let out = self.forward(
            &tape,
            &vars,
            params,
            &inp,
            &tgt,
            1,
            Mode::Discrete { block_gradients: false },
            &cfg,
            LatentSource::States(&tables),
        )?;
        let col = |v: Var<'_>| v.value().into_data();
        let log_lik = col(out.log_lik);
        let zeros = || vec![0.0; s];
        let log_prior = out.log_prior.map(col).unwrap_or_else(zeros);
        let log_q = out.log_q.map(col).unwrap_or_else(zeros);
        Ok(Enumeration {
            log_prior,
            log_lik,
            log_q,
        })
    }
}

/// Per-state tables produced by [`Model::enumerate`].
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub log_prior: Vec<f64>,
    pub log_lik: Vec<f64>,
    pub log_q: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Checkpoints

const CHECKPOINT_MAGIC: &[u8; 4] = b"CCKP";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes `spec`, arity, parameters and centering means atomically (temp
/// file in the same directory, then rename).
pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, params: &ParameterStore) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let s = spec.to_string();
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    buf.extend_from_slice(&(spec.arity as u32).to_le_bytes());
    let put_tensor = |buf: &mut Vec<u8>, t: &Tensor| {
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    buf.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for (k, t) in &params.tensors {
        buf.extend_from_slice(&(k.len() as u32).to_le_bytes());
        buf.extend_from_slice(k.as_bytes());
        put_tensor(&mut buf, t);
    }
    buf.extend_from_slice(&(params.centering.len() as u32).to_le_bytes());
    for (layer, t) in &params.centering {
        buf.extend_from_slice(&(*layer as u32).to_le_bytes());
        put_tensor(&mut buf, t);
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(ModelError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Checkpoint("invalid utf-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let (r, c) = (self.u32()? as usize, self.u32()? as usize);
        let bytes = self.take(r * c * 8)?;
        let data = bytes.chunks(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Tensor::new(r, c, data)?)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, ParameterStore)> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let spec = parse_model_spec(&c.string()?)?.with_arity(c.u32()? as usize)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..c.u32()? {
        let k = c.string()?;
        tensors.insert(k, c.tensor()?);
    }
    let mut centering = BTreeMap::new();
    for _ in 0..c.u32()? {
        let layer = c.u32()? as usize;
        centering.insert(layer, c.tensor()?);
    }
    Ok((spec, ParameterStore { tensors, centering }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::streams;

    fn spec(s: &str, n: usize) -> NetworkSpec {
        parse_model_spec(s).unwrap().with_arity(n).unwrap()
    }

    #[test]
    fn parses_documented_examples() {
        let s = parse_model_spec("(200H~784V)").unwrap();
        assert_eq!(
            s.layers(),
            &[
                LayerSpec { role: Role::Latent, units: 200 },
                LayerSpec { role: Role::Observed, units: 784 }
            ]
        );
        assert_eq!(s.links(), &[Link::Nonlinear]);
        let s = parse_model_spec("(392V–240H–240H–392V)").unwrap();
        assert_eq!(s.links(), &[Link::Linear; 3]);
        assert_eq!(s.topology().unwrap(), Topology::Structured);
        assert_eq!(s.to_string(), "(392V-240H-240H-392V)");
        assert_eq!(parse_model_spec("(200H∼784V)").unwrap().to_string(), "(200H~784V)");
    }

    #[test]
    fn rejects_malformed_specs() {
        assert!(matches!(parse_model_spec("(200H~)"), Err(ModelError::DanglingSeparator { .. })));
        assert!(matches!(parse_model_spec("(200H~784V"), Err(ModelError::UnbalancedParens)));
        assert!(matches!(parse_model_spec("(200H+784V)"), Err(ModelError::UnknownSeparator { ch: '+', .. })));
        assert!(matches!(parse_model_spec("(0H~784V)"), Err(ModelError::ZeroUnits { .. })));
        assert!(matches!(parse_model_spec("(200H~784H)"), Err(ModelError::Topology(_))));
        assert!(matches!(
            parse_model_spec("(3H~8V)").unwrap().with_arity(4),
            Err(ModelError::UnitsNotDivisible { .. })
        ));
        assert!(parse_model_spec("(4H~8V)").unwrap().with_arity(3).is_err());
    }

    #[test]
    fn round_trips() {
        for s in ["(200H~784V)", "(200H-200H-784V)", "(8V~4H~8V)", "(16V)"] {
            assert_eq!(parse_model_spec(s).unwrap().to_string(), s);
        }
    }

    #[test]
    fn init_follows_glorot_and_base_rates() {
        let sp = spec("(100H-100V)", 2);
        let mut rates = vec![0.5; 100];
        rates[0] = 0.0;
        rates[1] = 1.0;
        let p = init_params(&sp, Some(&rates), &mut RngStream::new(1, streams::INIT)).unwrap();
        // gen.1.w0 is 100 x 100 (fan_in = fan_out = 100).
        let w = p.get("gen.1.w0").unwrap();
        assert_eq!(w.shape(), (100, 100));
        let bound = (6.0f64 / 200.0).sqrt();
        assert!((bound - 0.1732).abs() < 1e-4);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > 0.9 * bound));
        let b = p.get("gen.1.b0").unwrap();
        assert_eq!(b.get(0, 0), -5.0);
        assert_eq!(b.get(0, 1), 5.0);
        assert_eq!(b.get(0, 2), 0.0);
        assert!(p.get("enc.0.b0").unwrap().data().iter().all(|v| *v == 0.0));
        assert!(p.get("prior.logits").unwrap().data().iter().all(|v| *v == 0.0));
        assert!(matches!(
            init_params(&sp, None, &mut RngStream::new(1, 1)),
            Err(ModelError::MissingBaseRates)
        ));
    }

    #[test]
    fn encoder_logit_count_is_groups_times_arity() {
        let sp = spec("(8H~16V)", 4);
        let p = init_params(&sp, Some(&[0.5; 16]), &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(p.get("enc.0.w2").unwrap().shape(), (16, 16));
        assert_eq!(p.get("prior.logits").unwrap().shape(), (1, 16));
        assert_eq!(p.get("gen.1.w0").unwrap().shape(), (8, 8));
    }

    fn toy(s: &str, n: usize) -> (Model, ParameterStore) {
        let sp = spec(s, n);
        let rates = vec![0.3; sp.output_units()];
        let p = init_params(&sp, Some(&rates), &mut RngStream::new(4, streams::INIT)).unwrap();
        (Model::new(sp), p)
    }

    #[test]
    fn relaxed_and_discrete_share_parameters() {
        let (model, params) = toy("(4H~8V)", 2);
        let x = Tensor::new(2, 8, (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
        let cfg = ObjectiveConfig::default_for_arity(2, 3);
        for mode in [Mode::Relaxed, Mode::Discrete { block_gradients: false }] {
            let tape = Tape::new();
            let vars = params.attach(&tape);
            let mut rng = RngStream::new(2, 3);
            let out = model
                .forward(&tape, &vars, &params, &x, &x, 3, mode, &cfg, LatentSource::Noise(&mut rng))
                .unwrap();
            let obj = out.objective();
            assert!(obj.value.item().is_finite());
            let g = tape.backward(obj.value).unwrap();
            for (k, v) in &vars {
                assert_eq!(g.wrt(*v).shape(), params.get(k).unwrap().shape());
            }
        }
    }

    #[test]
    fn discrete_embeddings_are_signs() {
        let (model, params) = toy("(4H~8V)", 4);
        let x = Tensor::full(3, 8, 1.0);
        let tape = Tape::new();
        let vars = params.attach_constants(&tape);
        let cfg = ObjectiveConfig::default_for_arity(4, 1);
        let out = model
            .forward(
                &tape,
                &vars,
                &params,
                &x,
                &x,
                1,
                Mode::Discrete { block_gradients: true },
                &cfg,
                LatentSource::Noise(&mut RngStream::new(1, 1)),
            )
            .unwrap();
        assert!(out.samples[&0].embedding.value().data().iter().all(|v| *v == 1.0 || *v == -1.0));
    }

    #[test]
    fn blocked_discrete_graph_refuses_pathwise_gradients() {
        let (model, params) = toy("(2H-4V)", 2);
        let x = Tensor::full(1, 4, 1.0);
        let tape = Tape::new();
        let vars = params.attach(&tape);
        let cfg = ObjectiveConfig::default_for_arity(2, 1);
        let out = model
            .forward(
                &tape,
                &vars,
                &params,
                &x,
                &x,
                1,
                Mode::Discrete { block_gradients: true },
                &cfg,
                LatentSource::Noise(&mut RngStream::new(1, 1)),
            )
            .unwrap();
        assert!(matches!(
            tape.backward(out.objective().value),
            Err(AutodiffError::NonDifferentiable(_))
        ));
    }

    #[test]
    fn zero_noise_zero_logit_binary_unit_is_zero() {
        let (model, mut params) = toy("(1H-2V)", 2);
        for t in params.tensors_mut().values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::row(vec![1.0, 0.0]);
        let tape = Tape::new();
        let vars = params.attach_constants(&tape);
        let noise: BTreeMap<usize, Tensor> = [(0, Tensor::row(vec![0.0]))].into();
        let cfg = ObjectiveConfig::default_for_arity(2, 1);
        let out = model
            .forward(&tape, &vars, &params, &x, &x, 1, Mode::Relaxed, &cfg, LatentSource::Explicit(&noise))
            .unwrap();
        assert_eq!(out.samples[&0].embedding.item(), 0.0);
    }

    #[test]
    fn low_temperature_units_saturate() {
        let (model, params) = toy("(8H~8V)", 2);
        let x = Tensor::full(50, 8, 1.0);
        let tape = Tape::new();
        let vars = params.attach_constants(&tape);
        let cfg = ObjectiveConfig::new(20, RelaxationMode::RelaxedKl, 0.01, 0.01).unwrap();
        let out = model
            .forward(
                &tape,
                &vars,
                &params,
                &x,
                &x,
                20,
                Mode::Relaxed,
                &cfg,
                LatentSource::Noise(&mut RngStream::new(8, 8)),
            )
            .unwrap();
        let e = out.samples[&0].embedding.value();
        let frac = e.data().iter().filter(|v| v.abs() > 0.98).count() as f64 / e.len() as f64;
        assert!(frac > 0.95, "{frac}");
    }

    #[test]
    fn centering_converges_geometrically_and_eval_is_frozen() {
        let (_, mut params) = toy("(2H-4V)", 2);
        let act: BTreeMap<usize, Tensor> = [(0, Tensor::row(vec![1.0, -1.0]))].into();
        let mut prev = 1.0;
        for _ in 0..50 {
            params.centering_update(&act);
            let gap = (params.centering(0).unwrap().get(0, 0) - 1.0).abs();
            assert!((gap - 0.9 * prev).abs() < 1e-12);
            prev = gap;
        }
        let before = params.clone();
        let (model, _) = toy("(2H-4V)", 2);
        let tape = Tape::new();
        let vars = params.attach_constants(&tape);
        let x = Tensor::full(2, 4, 1.0);
        let cfg = ObjectiveConfig::default_for_arity(2, 1);
        model
            .forward(
                &tape,
                &vars,
                &params,
                &x,
                &x,
                1,
                Mode::Discrete { block_gradients: false },
                &cfg,
                LatentSource::Noise(&mut RngStream::new(1, 1)),
            )
            .unwrap();
        assert_eq!(before, params);
    }

    #[test]
    fn binary_and_nary_paths_agree_in_distribution() {
        // Relaxed binary path at tiny temperature vs Gumbel-max discrete path.
        let (model, params) = toy("(1H-2V)", 2);
        let x = Tensor::new(1, 2, vec![1.0, 0.0]).unwrap();
        let n = 100_000;
        let cfg = ObjectiveConfig::new(n, RelaxationMode::RelaxedKl, 1e-3, 1e-3).unwrap();
        let count = |mode| {
            let tape = Tape::new();
            let vars = params.attach_constants(&tape);
            let out = model
                .forward(&tape, &vars, &params, &x, &x, n, mode, &cfg, LatentSource::Noise(&mut RngStream::new(5, 9)))
                .unwrap();
            out.samples[&0].embedding.value().data().iter().filter(|v| **v > 0.0).count() as f64 / n as f64
        };
        let a = count(Mode::Relaxed);
        let b = count(Mode::Discrete { block_gradients: false });
        let se = (0.5 * 0.5 / n as f64).sqrt() * 2f64.sqrt();
        assert!((a - b).abs() < 3.0 * se + 1e-3, "{a} {b}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let (model, mut params) = toy("(4H~8V)", 4);
        params.centering_update(&[(0, Tensor::row(vec![0.5, -0.5, 0.25, 1.0]))].into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, model.spec(), &params).unwrap();
        let (s, p) = load_checkpoint(&path).unwrap();
        assert_eq!(&s, model.spec());
        assert_eq!(p, params);
        fs::write(&path, b"nope").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn enumeration_tables_are_normalized() {
        let (model, params) = toy("(3H~6V)", 2);
        let x = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let e = model.enumerate(&params, &x, &x).unwrap();
        assert_eq!(e.log_prior.len(), 8);
        assert!(crate::math::log_sum_exp(&e.log_prior).abs() < 1e-12);
        assert!(crate::math::log_sum_exp(&e.log_q).abs() < 1e-12);
        let (model, params) = toy("(4V~4H~4V)", 4);
        let e = model.enumerate(&params, &[1.0, 0.0, 1.0, 1.0], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(e.log_prior.len(), 16);
        assert!(crate::math::log_sum_exp(&e.log_q).abs() < 1e-12);
    }
}
