//! Discrete variables and their Concrete relaxations.
//!
//! Every family here exposes a reparameterized sampler (a pure transform of
//! fixed noise plus a convenience wrapper drawing that noise from an
//! [`RngStream`]), a log-density or log-mass, and the discretization back to
//! one-hot states.
//!
//! | family | sample space | noise | log-density |
//! |---|---|---|---|
//! | Discrete(α) | one-hot | Gumbel | [`discrete_log_mass`] |
//! | Concrete(α, λ) | open simplex | Gumbel | [`concrete_log_density`] |
//! | ExpConcrete(α, λ) | log-simplex | Gumbel | [`exp_concrete_log_density`] |
//! | BinaryConcrete(α, λ) | (0, 1) | Logistic | [`binary_concrete_log_density`] |
//! | tempered Logistic | ℝ (pre-sigmoid) | Logistic | [`binary_logit_log_density`] |
//!
//! Locations are always held as logits `log α`. Densities are only ever
//! computed in log space.
//!
//! The corner matrix used by [`hypercube_embed`] lists `{-1, 1}^b` corners
//! (b = log2 n) in binary-counting order: column `j` holds the bits of `j`,
//! most significant bit in row 0, with bit value 0 mapped to -1. For `n = 2`
//! state 0 embeds to -1 and state 1 to +1.

use thiserror::Error;

use crate::math::{argmax, log_factorial, log_sum_exp, log_sum_exp2, softplus};
use crate::noise::RngStream;

/// Inputs on the simplex must sum to one within this tolerance.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxError {
    #[error("location vector must have at least one state")]
    EmptyLocation,
    #[error("logit {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },
    #[error("alpha {index} must be positive and finite, got {value}")]
    NonPositiveAlpha { index: usize, value: f64 },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("arity mismatch: expected {expected}, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("coordinate {index} = {value} lies outside the open unit interval")]
    CoordinateOutOfRange { index: usize, value: f64 },
    #[error("coordinates sum to {sum}, not 1")]
    NotOnSimplex { sum: f64 },
    #[error("log-coordinates have log-sum-exp {lse}, not 0")]
    NotOnLogSimplex { lse: f64 },
    #[error("log-coordinate {index} = {value} must be finite and non-positive")]
    InvalidLogCoordinate { index: usize, value: f64 },
    #[error("arity {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("one-hot index {index} out of range for arity {arity}")]
    IndexOutOfRange { index: usize, arity: usize },
}

pub type Result<T> = std::result::Result<T, RelaxError>;

/// Unnormalized probabilities α, stored as logits `log α`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationVector {
    log_alpha: Vec<f64>,
}

impl LocationVector {
    pub fn from_logits(log_alpha: Vec<f64>) -> Result<Self> {
        if log_alpha.is_empty() {
            return Err(RelaxError::EmptyLocation);
        }
        if let Some((index, &value)) = log_alpha.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(RelaxError::NonFiniteLogit { index, value });
        }
        Ok(Self { log_alpha })
    }

    pub fn from_alphas(alphas: &[f64]) -> Result<Self> {
        if alphas.is_empty() {
            return Err(RelaxError::EmptyLocation);
        }
        if let Some((index, &value)) = alphas
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0))
        {
            return Err(RelaxError::NonPositiveAlpha { index, value });
        }
        Self::from_logits(alphas.iter().map(|a| a.ln()).collect())
    }

    pub fn arity(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.log_alpha
    }

    /// Normalized probabilities `α_k / Σ α_i`.
    pub fn probabilities(&self) -> Vec<f64> {
        crate::math::softmax(&self.log_alpha)
    }

    fn check_arity(&self, found: usize) -> Result<()> {
        if found != self.arity() {
            return Err(RelaxError::ArityMismatch {
                expected: self.arity(),
                found,
            });
        }
        Ok(())
    }
}

/// Relaxation temperature λ > 0.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_finite() && lambda > 0.0 {
            Ok(Self(lambda))
        } else {
            Err(RelaxError::InvalidTemperature(lambda))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A one-hot vector `d ∈ {0,1}^n`, stored as the index of its single 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OneHot {
    index: usize,
    arity: usize,
}

impl OneHot {
    pub fn new(index: usize, arity: usize) -> Result<Self> {
        if index >= arity {
            return Err(RelaxError::IndexOutOfRange { index, arity });
        }
        Ok(Self { index, arity })
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn arity(self) -> usize {
        self.arity
    }

    pub fn to_vec(self) -> Vec<f64> {
        let mut v = vec![0.0; self.arity];
        v[self.index] = 1.0;
        v
    }
}

/// A point of the probability simplex.
///
/// Points built with [`SimplexPoint::new`] are validated: every coordinate in
/// the open interval (0, 1) and the sum within [`SIMPLEX_TOLERANCE`] of one.
/// Sampler outputs are normalized in log space and may carry exact 0 or 1
/// coordinates after underflow at very low temperatures; those points are
/// fine for rounding but are rejected by the density.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(RelaxError::EmptyLocation);
        }
        for (index, &value) in coords.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) && coords.len() > 1 {
                return Err(RelaxError::CoordinateOutOfRange { index, value });
            }
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(RelaxError::NotOnSimplex { sum });
        }
        Ok(Self { coords })
    }

    pub(crate) fn from_sampler(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn arity(&self) -> usize {
        self.coords.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }
}

/// A point `y` with `logsumexp(y) = 0`, i.e. the log of a simplex point.
#[derive(Clone, Debug, PartialEq)]
pub struct LogSimplexPoint {
    log_coords: Vec<f64>,
}

impl LogSimplexPoint {
    /// Validates finiteness, non-positivity and `|logsumexp(y)| <= 1e-9`.
    pub fn new(log_coords: Vec<f64>) -> Result<Self> {
        if log_coords.is_empty() {
            return Err(RelaxError::EmptyLocation);
        }
        for (index, &value) in log_coords.iter().enumerate() {
            if !value.is_finite() || value > 0.0 {
                return Err(RelaxError::InvalidLogCoordinate { index, value });
            }
        }
        let lse = log_sum_exp(&log_coords);
        if lse.abs() > SIMPLEX_TOLERANCE {
            return Err(RelaxError::NotOnLogSimplex { lse });
        }
        Ok(Self { log_coords })
    }

    pub fn log_coords(&self) -> &[f64] {
        &self.log_coords
    }

    pub fn arity(&self) -> usize {
        self.log_coords.len()
    }

    /// Componentwise `exp`, a Concrete-distributed point.
    pub fn exp(&self) -> SimplexPoint {
        SimplexPoint::from_sampler(self.log_coords.iter().map(|y| y.exp()).collect())
    }
}

/// The pre-sigmoid value of a binary relaxation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryLogit(pub f64);

impl BinaryLogit {
    /// `σ(y)`, a Binary Concrete value.
    pub fn squash(self) -> f64 {
        crate::math::sigmoid(self.0)
    }
}

// ---------------------------------------------------------------------------
// Discrete

/// Gumbel-max: `argmax_k (log α_k + G_k)`.
pub fn discrete_from_gumbels(alpha: &LocationVector, gumbels: &[f64]) -> Result<OneHot> {
    alpha.check_arity(gumbels.len())?;
    let perturbed: Vec<f64> = alpha
        .logits()
        .iter()
        .zip(gumbels)
        .map(|(l, g)| l + g)
        .collect();
    OneHot::new(argmax(&perturbed), alpha.arity())
}

pub fn discrete_sample(alpha: &LocationVector, rng: &mut RngStream) -> OneHot {
    let g = rng.gumbels(alpha.arity());
    discrete_from_gumbels(alpha, &g).expect("noise length matches arity")
}

/// `log α_k - logsumexp(log α)`.
pub fn discrete_log_mass(alpha: &LocationVector, d: OneHot) -> Result<f64> {
    alpha.check_arity(d.arity())?;
    Ok(alpha.logits()[d.index()] - log_sum_exp(alpha.logits()))
}

// ---------------------------------------------------------------------------
// Concrete and ExpConcrete

/// `Y_k = (log α_k + G_k)/λ - logsumexp_i((log α_i + G_i)/λ)`.
pub fn exp_concrete_from_gumbels(
    alpha: &LocationVector,
    lambda: Temperature,
    gumbels: &[f64],
) -> Result<LogSimplexPoint> {
    alpha.check_arity(gumbels.len())?;
    let z: Vec<f64> = alpha
        .logits()
        .iter()
        .zip(gumbels)
        .map(|(l, g)| (l + g) / lambda.value())
        .collect();
    let lse = log_sum_exp(&z);
    Ok(LogSimplexPoint {
        log_coords: z.iter().map(|z| z - lse).collect(),
    })
}

pub fn exp_concrete_sample(
    alpha: &LocationVector,
    lambda: Temperature,
    rng: &mut RngStream,
) -> LogSimplexPoint {
    let g = rng.gumbels(alpha.arity());
    exp_concrete_from_gumbels(alpha, lambda, &g).expect("noise length matches arity")
}

/// Tempered softmax of Gumbel-perturbed logits.
pub fn concrete_from_gumbels(
    alpha: &LocationVector,
    lambda: Temperature,
    gumbels: &[f64],
) -> Result<SimplexPoint> {
    Ok(exp_concrete_from_gumbels(alpha, lambda, gumbels)?.exp())
}

pub fn concrete_sample(
    alpha: &LocationVector,
    lambda: Temperature,
    rng: &mut RngStream,
) -> SimplexPoint {
    exp_concrete_sample(alpha, lambda, rng).exp()
}

/// Log-density of Concrete(α, λ) at a simplex point:
///
/// `log((n-1)!) + (n-1) log λ + Σ_k [log α_k - (λ+1) log x_k]
///  - n logsumexp_k(log α_k - λ log x_k)`.
pub fn concrete_log_density(
    alpha: &LocationVector,
    lambda: Temperature,
    x: &SimplexPoint,
) -> Result<f64> {
    alpha.check_arity(x.arity())?;
    for (index, &value) in x.coords().iter().enumerate() {
        if !(value > 0.0 && value < 1.0) && x.arity() > 1 {
            return Err(RelaxError::CoordinateOutOfRange { index, value });
        }
    }
    let n = alpha.arity();
    let lam = lambda.value();
    let log_x: Vec<f64> = x.coords().iter().map(|c| c.ln()).collect();
    let mut acc = log_factorial(n - 1) + (n as f64 - 1.0) * lam.ln();
    let mut inner = Vec::with_capacity(n);
    for (la, lx) in alpha.logits().iter().zip(&log_x) {
        acc += la + (-lam - 1.0) * lx;
        inner.push(la - lam * lx);
    }
    Ok(acc - n as f64 * log_sum_exp(&inner))
}

/// Log-density of ExpConcrete(α, λ):
///
/// `log((n-1)!) + (n-1) log λ + Σ_k (log α_k - λ y_k)
///  - n logsumexp_k(log α_k - λ y_k)`.
pub fn exp_concrete_log_density(
    alpha: &LocationVector,
    lambda: Temperature,
    y: &LogSimplexPoint,
) -> Result<f64> {
    alpha.check_arity(y.arity())?;
    let n = alpha.arity();
    let lam = lambda.value();
    let mut acc = log_factorial(n - 1) + (n as f64 - 1.0) * lam.ln();
    let mut inner = Vec::with_capacity(n);
    for (la, yk) in alpha.logits().iter().zip(y.log_coords()) {
        let t = la - lam * yk;
        acc += t;
        inner.push(t);
    }
    Ok(acc - n as f64 * log_sum_exp(&inner))
}

// ---------------------------------------------------------------------------
// Binary special case

/// `X = σ((log α + L)/λ)`.
pub fn binary_concrete_from_logistic(log_alpha: f64, lambda: Temperature, logistic: f64) -> f64 {
    crate::math::sigmoid((log_alpha + logistic) / lambda.value())
}

pub fn binary_concrete_sample(log_alpha: f64, lambda: Temperature, rng: &mut RngStream) -> f64 {
    binary_concrete_from_logistic(log_alpha, lambda, rng.logistic())
}

/// Log-density of BinaryConcrete(α, λ) on (0, 1):
///
/// `log λ + log α + (-λ-1)(log x + log(1-x)) - 2 log(α x^-λ + (1-x)^-λ)`.
pub fn binary_concrete_log_density(log_alpha: f64, lambda: Temperature, x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(RelaxError::CoordinateOutOfRange { index: 0, value: x });
    }
    let lam = lambda.value();
    let lx = x.ln();
    let l1x = (-x).ln_1p();
    Ok(lam.ln() + log_alpha + (-lam - 1.0) * lx + (-lam - 1.0) * l1x
        - 2.0 * log_sum_exp2(log_alpha - lam * lx, -lam * l1x))
}

/// `Y = (log α + log U - log(1-U))/λ`, the node that precedes σ.
pub fn binary_logit_from_uniform(log_alpha: f64, lambda: Temperature, u: f64) -> BinaryLogit {
    BinaryLogit((log_alpha + crate::noise::logistic_from_uniform(u)) / lambda.value())
}

pub fn binary_logit_sample(log_alpha: f64, lambda: Temperature, rng: &mut RngStream) -> BinaryLogit {
    binary_logit_from_uniform(log_alpha, lambda, rng.uniform())
}

/// `log g(y) = log λ - λy + log α - 2 log(1 + exp(-λy + log α))`.
pub fn binary_logit_log_density(log_alpha: f64, lambda: Temperature, y: BinaryLogit) -> f64 {
    let lam = lambda.value();
    let t = -lam * y.0 + log_alpha;
    lam.ln() + t - 2.0 * softplus(t)
}

/// Hard binary state `H(log α + L)`.
pub fn bernoulli_from_logistic(log_alpha: f64, logistic: f64) -> bool {
    log_alpha + logistic >= 0.0
}

// ---------------------------------------------------------------------------
// Discretization and embedding

/// Argmax of the coordinates, lowest index on ties.
pub fn round_to_onehot(x: &SimplexPoint) -> OneHot {
    OneHot {
        index: argmax(x.coords()),
        arity: x.arity(),
    }
}

/// `log2(n)` for a power of two `n >= 2`.
pub fn bits_per_state(n: usize) -> Result<usize> {
    if n < 2 || !n.is_power_of_two() {
        return Err(RelaxError::NotPowerOfTwo(n));
    }
    Ok(n.trailing_zeros() as usize)
}

/// Corner `j` of `{-1, 1}^log2(n)` (column `j` of the corner matrix).
pub fn corner(n: usize, j: usize) -> Result<Vec<f64>> {
    let bits = bits_per_state(n)?;
    if j >= n {
        return Err(RelaxError::IndexOutOfRange { index: j, arity: n });
    }
    Ok((0..bits)
        .map(|r| {
            if (j >> (bits - 1 - r)) & 1 == 1 {
                1.0
            } else {
                -1.0
            }
        })
        .collect())
}

/// The `log2(n) × n` corner matrix, row-major.
pub fn corner_matrix(n: usize) -> Result<Vec<Vec<f64>>> {
    let bits = bits_per_state(n)?;
    let cols: Vec<Vec<f64>> = (0..n).map(|j| corner(n, j)).collect::<Result<_>>()?;
    Ok((0..bits).map(|r| cols.iter().map(|c| c[r]).collect()).collect())
}

/// `C x` for a one-hot or relaxed point of arity `n`.
pub fn hypercube_embed(x: &[f64]) -> Result<Vec<f64>> {
    let c = corner_matrix(x.len())?;
    Ok(c
        .iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect())
}

pub fn hypercube_embed_onehot(d: OneHot) -> Result<Vec<f64>> {
    corner(d.arity(), d.index())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RngStream;

    fn loc(alphas: &[f64]) -> LocationVector {
        LocationVector::from_alphas(alphas).unwrap()
    }

    fn t(l: f64) -> Temperature {
        Temperature::new(l).unwrap()
    }

    #[test]
    fn location_validation() {
        assert_eq!(LocationVector::from_logits(vec![]), Err(RelaxError::EmptyLocation));
        assert!(matches!(
            LocationVector::from_alphas(&[1.0, 0.0]),
            Err(RelaxError::NonPositiveAlpha { index: 1, .. })
        ));
        assert!(LocationVector::from_logits(vec![f64::NAN]).is_err());
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
    }

    #[test]
    fn discrete_frequencies_match_normalized_alpha() {
        let alpha = loc(&[2.0, 0.5, 1.0]);
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[discrete_sample(&alpha, &mut rng).index()] += 1;
        }
        for (c, p) in counts.iter().zip([4.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.005);
        }
    }

    #[test]
    fn discrete_single_state() {
        let alpha = loc(&[3.0]);
        let mut rng = RngStream::new(1, 0);
        for _ in 0..10 {
            assert_eq!(discrete_sample(&alpha, &mut rng).index(), 0);
        }
    }

    #[test]
    fn discrete_fair_coin() {
        let alpha = loc(&[1.0, 1.0]);
        let mut rng = RngStream::new(12, 0);
        let n = 100_000;
        let ones = (0..n).filter(|_| discrete_sample(&alpha, &mut rng).index() == 0).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.005);
    }

    #[test]
    fn discrete_log_mass_values() {
        let alpha = loc(&[2.0, 0.5, 1.0]);
        let lm = discrete_log_mass(&alpha, OneHot::new(0, 3).unwrap()).unwrap();
        assert!((lm - (4.0f64 / 7.0).ln()).abs() < 1e-12);
        assert!((lm + 0.5596).abs() < 1e-4);
        let uniform = loc(&[1.0; 4]);
        for k in 0..4 {
            let lm = discrete_log_mass(&uniform, OneHot::new(k, 4).unwrap()).unwrap();
            assert!((lm + 4f64.ln()).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let lm = discrete_log_mass(&loc(&[e, 1.0]), OneHot::new(0, 2).unwrap()).unwrap();
        assert!((lm - (e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((lm + 0.3133).abs() < 1e-4);
        assert!(matches!(
            discrete_log_mass(&alpha, OneHot::new(0, 2).unwrap()),
            Err(RelaxError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn concrete_with_zero_noise_is_softmax() {
        let x = concrete_from_gumbels(&loc(&[2.0, 0.5, 1.0]), t(1.0), &[0.0; 3]).unwrap();
        for (a, b) in x.coords().iter().zip([4.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        for lam in [0.1, 1.0, 7.0] {
            let x = concrete_from_gumbels(&loc(&[3.0; 5]), t(lam), &[0.7; 5]).unwrap();
            for c in x.coords() {
                assert!((c - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn concrete_low_temperature_argmax_frequencies() {
        let alpha = loc(&[2.0, 0.5, 1.0]);
        let mut rng = RngStream::new(13, 0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let x = concrete_sample(&alpha, t(0.01), &mut rng);
            counts[round_to_onehot(&x).index()] += 1;
        }
        for (c, p) in counts.iter().zip([4.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.005);
        }
    }

    #[test]
    fn concrete_density_uniform_case() {
        let alpha = loc(&[1.0, 1.0]);
        for x in [0.5, 0.25] {
            let p = SimplexPoint::new(vec![x, 1.0 - x]).unwrap();
            assert!(concrete_log_density(&alpha, t(1.0), &p).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn concrete_density_rejects_boundary() {
        let alpha = loc(&[1.0, 1.0]);
        let p = SimplexPoint::from_sampler(vec![0.0, 1.0]);
        assert!(concrete_log_density(&alpha, t(1.0), &p).is_err());
        assert!(SimplexPoint::new(vec![0.0, 1.0]).is_err());
        assert!(matches!(
            SimplexPoint::new(vec![0.3, 0.3]),
            Err(RelaxError::NotOnSimplex { .. })
        ));
    }

    #[test]
    fn exp_concrete_zero_noise() {
        let y = exp_concrete_from_gumbels(&loc(&[1.0, 1.0]), t(1.0), &[0.0, 0.0]).unwrap();
        for c in y.log_coords() {
            assert!((c + 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn exp_concrete_matches_concrete_and_stays_on_log_simplex() {
        let alpha = loc(&[0.3, 2.0, 1.0, 4.0]);
        let mut rng = RngStream::new(14, 0);
        for _ in 0..10_000 {
            let g = rng.gumbels(4);
            let y = exp_concrete_from_gumbels(&alpha, t(0.5), &g).unwrap();
            let x = concrete_from_gumbels(&alpha, t(0.5), &g).unwrap();
            assert_eq!(y.exp(), x);
            assert!(log_sum_exp(y.log_coords()).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_concrete_density_values() {
        let alpha = loc(&[1.0, 1.0]);
        let y = LogSimplexPoint::new(vec![0.5f64.ln(), 0.5f64.ln()]).unwrap();
        let v = exp_concrete_log_density(&alpha, t(1.0), &y).unwrap();
        assert!((v + 2.0 * 2f64.ln()).abs() < 1e-12);
        let y = LogSimplexPoint::new(vec![0.25f64.ln(), 0.75f64.ln()]).unwrap();
        let v = exp_concrete_log_density(&alpha, t(1.0), &y).unwrap();
        assert!((v + (16.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((v + 1.6740).abs() < 1e-4);
    }

    #[test]
    fn log_simplex_validation() {
        assert!(LogSimplexPoint::new(vec![-0.1, -0.1]).is_err());
        assert!(LogSimplexPoint::new(vec![0.1, -3.0]).is_err());
        assert!(LogSimplexPoint::new(vec![f64::NEG_INFINITY, 0.0]).is_err());
    }

    #[test]
    fn binary_concrete_points() {
        assert_eq!(binary_concrete_from_logistic(0.0, t(0.3), 0.0), 0.5);
        let v = binary_concrete_from_logistic(1.0, t(1.0), 0.0);
        assert!((v - 0.731_058_578_6).abs() < 1e-9);
    }

    #[test]
    fn binary_concrete_rounding_probability() {
        let mut rng = RngStream::new(15, 0);
        let n = 100_000;
        let above = (0..n)
            .filter(|_| binary_concrete_sample(3f64.ln(), t(0.7), &mut rng) > 0.5)
            .count();
        assert!((above as f64 / n as f64 - 0.75).abs() < 0.004);
    }

    #[test]
    fn binary_concrete_density_uniform_case() {
        for x in [0.5, 0.1, 0.37, 0.9] {
            assert!(binary_concrete_log_density(0.0, t(1.0), x).unwrap().abs() < 1e-14);
        }
        assert!(binary_concrete_log_density(0.0, t(1.0), 0.0).is_err());
        assert!(binary_concrete_log_density(0.0, t(1.0), 1.0).is_err());
    }

    #[test]
    fn binary_logit_points() {
        let v = binary_logit_log_density(0.0, t(1.0), BinaryLogit(0.0));
        assert!((v + 2.0 * 2f64.ln()).abs() < 1e-15);
        for la in [-2.0, 0.0, 1.3] {
            let y = binary_logit_from_uniform(la, t(0.5), 0.5);
            assert!((y.0 - la / 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rounding_and_ties() {
        let x = SimplexPoint::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(round_to_onehot(&x).index(), 1);
        let x = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(round_to_onehot(&x).index(), 0);
    }

    #[test]
    fn rounding_recovers_discrete_distribution() {
        let alpha = loc(&[2.0, 0.5, 1.0]);
        let mut rng = RngStream::new(16, 0);
        let n = 100_000;
        let zero = (0..n)
            .filter(|_| round_to_onehot(&concrete_sample(&alpha, t(1.0), &mut rng)).index() == 0)
            .count();
        assert!((zero as f64 / n as f64 - 4.0 / 7.0).abs() < 0.005);
    }

    #[test]
    fn corners() {
        assert_eq!(hypercube_embed_onehot(OneHot::new(1, 2).unwrap()).unwrap(), vec![1.0]);
        assert_eq!(hypercube_embed_onehot(OneHot::new(0, 2).unwrap()).unwrap(), vec![-1.0]);
        assert_eq!(hypercube_embed(&[0.25; 4]).unwrap(), vec![0.0, 0.0]);
        for k in 0..8 {
            let c = hypercube_embed_onehot(OneHot::new(k, 8).unwrap()).unwrap();
            let expect: Vec<f64> = (0..3)
                .map(|r| if (k >> (2 - r)) & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            assert_eq!(c, expect);
        }
        assert_eq!(corner(8, 5).unwrap(), vec![1.0, -1.0, 1.0]);
        assert_eq!(hypercube_embed(&[0.2, 0.3, 0.5]), Err(RelaxError::NotPowerOfTwo(3)));
    }

    #[test]
    fn binary_embedding_is_step_function() {
        // 2H(log α + L) - 1 agrees with Gumbel-max + corner embedding under α ↦ (1, α).
        let mut rng = RngStream::new(17, 0);
        for _ in 0..1000 {
            let la: f64 = rng.uniform() * 4.0 - 2.0;
            let g = rng.gumbels(2);
            let d = discrete_from_gumbels(&LocationVector::from_logits(vec![0.0, la]).unwrap(), &g).unwrap();
            let via_corner = hypercube_embed_onehot(d).unwrap()[0];
            let via_step = if bernoulli_from_logistic(la, g[1] - g[0]) { 1.0 } else { -1.0 };
            assert_eq!(via_corner, via_step);
        }
    }
}
