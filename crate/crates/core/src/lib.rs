//! Concrete relaxations of discrete random variables for stochastic
//! computation graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`noise`]: seedable streams and Uniform/Gumbel/Logistic noise.
//! - [`relaxations`]: Discrete, Concrete, ExpConcrete and Binary Concrete
//!   variables with samplers, log-densities and hypercube embeddings.
//! - [`autodiff`]: a small reverse-mode tape over dense matrices.
//! - [`nodes`]: the same densities recorded on a tape.
//! - [`estimators`]: pathwise and score-function gradients, the multi-sample
//!   bound and the relaxed variational objective.
//! - [`model`]: layered networks of n-ary stochastic units.
//! - [`data`]: IDX ingestion, fixed binarization, synthetic data and tasks.
//! - [`train`]: Adam, the training loop, checkpoints and temperature sweeps.
//! - [`oracle`]: quadrature, enumeration, finite differences and KS tests
//!   used to verify everything above; [`verify`] bundles them into checks.

pub mod autodiff;
pub mod math;
pub mod noise;
pub mod oracle;
pub mod relaxations;
pub mod estimators;
pub mod model;
pub mod nodes;
pub mod data;
pub mod train;
pub mod verify;
