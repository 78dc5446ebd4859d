//! On-tape stochastic nodes for grouped latent layers.
//!
//! A latent layer with `units` hypercube coordinates and arity `n` is made of
//! `G = units / log2(n)` independent `n`-state groups. Logits arrive as an
//! `(R, G·n)` matrix whose columns are group-major. Internally every group
//! becomes one row of an `(R·G, n)` matrix, so reductions over states are
//! reductions along `Axis(1)`, and per-row totals are recovered by reshaping
//! an `(R·G, 1)` column to `(R, G)` and summing.

use crate::autodiff::{concat, Axis, Tensor, Var};
use crate::math::{argmax, log_factorial};
use crate::relaxations::{bits_per_state, corner, corner_matrix, RelaxError};

/// Shape bookkeeping for one latent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupShape {
    pub rows: usize,
    pub groups: usize,
    pub arity: usize,
}

impl GroupShape {
    pub fn new(rows: usize, units: usize, arity: usize) -> Result<Self, RelaxError> {
        let bits = bits_per_state(arity)?;
        Ok(Self {
            rows,
            groups: units / bits,
            arity,
        })
    }

    pub fn bits(&self) -> usize {
        self.arity.trailing_zeros() as usize
    }

    pub fn units(&self) -> usize {
        self.groups * self.bits()
    }

    pub fn logit_cols(&self) -> usize {
        self.groups * self.arity
    }

    /// Number of noise columns per row: one logistic per group for the binary
    /// path, one Gumbel per state otherwise.
    pub fn noise_cols(&self, binary: bool) -> usize {
        if binary {
            self.groups
        } else {
            self.groups * self.arity
        }
    }

    /// `(R·G, n)` view of `(R, G·n)` logits.
    pub fn by_group<'t>(&self, logits: Var<'t>) -> Var<'t> {
        logits.reshape(self.rows * self.groups, self.arity)
    }

    /// Sums an `(R·G, 1)` column back to `(R, 1)`.
    pub fn sum_groups<'t>(&self, v: Var<'t>) -> Var<'t> {
        v.reshape(self.rows, self.groups).sum(Some(Axis(1)))
    }
}

/// A sampled latent layer.
#[derive(Clone, Debug)]
pub struct LayerSample<'t> {
    /// Hypercube coordinates, `(R, units)`.
    pub embedding: Var<'t>,
    /// Relaxed (or exact) one-hot vectors, `(R·G, n)`.
    pub onehot: Var<'t>,
    /// The value the density is evaluated at: ExpConcrete log-coordinates
    /// `(R·G, n)`, or binary logits `(R·G, 1)` on the binary path.
    pub point: Var<'t>,
    /// Chosen states (discrete mode only), row-major `R·G`.
    pub states: Option<Vec<usize>>,
}

fn corner_transpose(n: usize) -> Result<Tensor, RelaxError> {
    let c = corner_matrix(n)?;
    let bits = c.len();
    let mut t = Tensor::zeros(n, bits);
    for (r, row) in c.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            t.set(j, r, *v);
        }
    }
    Ok(t)
}

/// Binary log-odds `log α = l_1 - l_0` per group, `(R·G, 1)`.
pub fn binary_log_alpha<'t>(shape: &GroupShape, logits: Var<'t>) -> Var<'t> {
    let diff = logits.tape().constant(Tensor::column(vec![-1.0, 1.0]));
    shape.by_group(logits).matmul(diff)
}

/// ExpConcrete sample `Y = (L + G)/λ - logsumexp((L + G)/λ)` with embedding
/// `exp(Y) Cᵀ`.
pub fn exp_concrete_layer<'t>(
    shape: &GroupShape,
    logits: Var<'t>,
    lambda: f64,
    gumbels: &Tensor,
) -> LayerSample<'t> {
    let tape = logits.tape();
    let g = tape.constant(gumbels.clone());
    let z = shape.by_group((logits + g) / lambda);
    let y = z - z.log_sum_exp(Axis(1));
    let onehot = y.exp();
    let ct = tape.constant(corner_transpose(shape.arity).expect("arity validated"));
    let embedding = onehot.matmul(ct).reshape(shape.rows, shape.units());
    LayerSample {
        embedding,
        onehot,
        point: y,
        states: None,
    }
}

/// ExpConcrete log-density of `y` under `logits` (both `(R·G, n)` after
/// grouping), returned per group `(R·G, 1)`.
pub fn exp_concrete_log_density<'t>(grouped_logits: Var<'t>, y: Var<'t>, lambda: f64) -> Var<'t> {
    let n = y.shape().1;
    let c = log_factorial(n - 1) + (n as f64 - 1.0) * lambda.ln();
    let t = grouped_logits - y * lambda;
    t.sum(Some(Axis(1))) - t.log_sum_exp(Axis(1)) * n as f64 + c
}

/// Binary path: `Y = (log α + L)/λ`, embedding `2σ(Y) - 1`.
pub fn binary_logit_layer<'t>(
    shape: &GroupShape,
    logits: Var<'t>,
    lambda: f64,
    logistic: &Tensor,
) -> LayerSample<'t> {
    let tape = logits.tape();
    let la = binary_log_alpha(shape, logits);
    let l = tape.constant(logistic.clone()).reshape(shape.rows * shape.groups, 1);
    let y = (la + l) / lambda;
    let s = y.sigmoid();
    let embedding = (s * 2.0 - 1.0).reshape(shape.rows, shape.groups);
    let onehot = concat(&[y.neg().sigmoid(), s], Axis(1));
    LayerSample {
        embedding,
        onehot,
        point: y,
        states: None,
    }
}

/// `log g(y) = log λ + t - 2 softplus(t)` with `t = log α - λy`, per group.
pub fn binary_logit_log_density<'t>(log_alpha: Var<'t>, y: Var<'t>, lambda: f64) -> Var<'t> {
    let t = log_alpha - y * lambda;
    t - t.softplus() * 2.0 + lambda.ln()
}

/// Log-softmax over states, `(R·G, n)`.
pub fn log_softmax<'t>(grouped_logits: Var<'t>) -> Var<'t> {
    grouped_logits - grouped_logits.log_sum_exp(Axis(1))
}

/// Gumbel-max states for each group, given logits values and noise.
pub fn gumbel_max_states(shape: &GroupShape, logits: &Tensor, gumbels: &Tensor) -> Vec<usize> {
    let n = shape.arity;
    let mut states = Vec::with_capacity(shape.rows * shape.groups);
    let mut buf = vec![0.0; n];
    for (chunk_l, chunk_g) in logits.data().chunks(n).zip(gumbels.data().chunks(n)) {
        for k in 0..n {
            buf[k] = chunk_l[k] + chunk_g[k];
        }
        states.push(argmax(&buf));
    }
    states
}

/// Binary states from logistic noise `(R, G)`: state 1 iff
/// `l1 - l0 + L >= 0`. Same law as Gumbel-max on the two logits.
pub fn logistic_threshold_states(logits: &Tensor, logistic: &Tensor) -> Vec<usize> {
    logits
        .data()
        .chunks(2)
        .zip(logistic.data())
        .map(|(l, n)| usize::from(l[1] - l[0] + n >= 0.0))
        .collect()
}

/// Discrete layer for given states. With `block` set, the embedding is
/// recorded as a discrete sampler output of `logits`, so any gradient that
/// tries to flow through it fails; otherwise it is a plain constant.
pub fn discrete_layer<'t>(
    shape: &GroupShape,
    logits: Var<'t>,
    states: Vec<usize>,
    block: bool,
) -> LayerSample<'t> {
    let tape = logits.tape();
    let (n, bits) = (shape.arity, shape.bits());
    let mut onehot = Tensor::zeros(shape.rows * shape.groups, n);
    let mut emb = Vec::with_capacity(shape.rows * shape.units());
    for (i, &s) in states.iter().enumerate() {
        onehot.set(i, s, 1.0);
        emb.extend(corner(n, s).expect("state below arity"));
    }
    debug_assert_eq!(emb.len(), shape.rows * shape.groups * bits);
    let emb = Tensor::new(shape.rows, shape.units(), emb).expect("embedding size");
    let embedding = if block {
        logits.discrete_output(emb)
    } else {
        tape.constant(emb)
    };
    let onehot = tape.constant(onehot);
    LayerSample {
        embedding,
        point: onehot,
        onehot,
        states: Some(states),
    }
}

/// `Σ_k d_k log π_k` per group for one-hot `d`.
pub fn discrete_log_mass<'t>(grouped_logits: Var<'t>, onehot: Var<'t>) -> Var<'t> {
    (log_softmax(grouped_logits) * onehot).sum(Some(Axis(1)))
}

/// `Σ_k z_k (log P_k - log Q_k)` per group.
pub fn relaxed_log_mass_ratio<'t>(prior_grouped: Var<'t>, post_grouped: Var<'t>, z: Var<'t>) -> Var<'t> {
    ((log_softmax(prior_grouped) - log_softmax(post_grouped)) * z).sum(Some(Axis(1)))
}

/// `-KL(Q ‖ P)` per group.
pub fn neg_discrete_kl<'t>(prior_grouped: Var<'t>, post_grouped: Var<'t>) -> Var<'t> {
    let lq = log_softmax(post_grouped);
    let lp = log_softmax(prior_grouped);
    (lq.exp() * (lp - lq)).sum(Some(Axis(1)))
}
