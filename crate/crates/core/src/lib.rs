//! Random-feature ridge regression (RFRR), its expected-kernel counterpart
//! (KRR) and the truncated polynomial-kernel regression (PKRR), together with
//! the diagnostics used to check how closely the three agree.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`hermite`] | normalized Hermite polynomials, activations and their Gaussian expansions |
//! | [`dataset`] | sphere / hypercube / CSV data and near-orthogonality diagnostics |
//! | [`kernel`] | empirical conjugate kernel, expected kernel, polynomial kernel, spectra |
//! | [`ridge`] | ridge fits, training error, LOOCV (shortcut and naive), GCV |
//! | [`teacher`] | single-neuron teacher, Monte-Carlo test error, approximation-barrier bound |
//! | [`experiment`] | seeded sweeps over the feature count `N`, CSV output and slope fits |
//!
//! Data matrices follow the `d × n` convention: each column is one sample of
//! unit Euclidean norm.
//!
//! With the default `parallel` feature the feature-block, replicate and sweep
//! loops run on rayon. Every reduction is carried out in a fixed order, so
//! results do not depend on the number of threads. Building with
//! `--no-default-features` gives the sequential fallback.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod hermite;
pub mod kernel;
pub mod linalg;
pub mod par;
pub mod quadrature;
pub mod ridge;
pub mod rng;
pub mod teacher;

pub use error::{Error, Result};
