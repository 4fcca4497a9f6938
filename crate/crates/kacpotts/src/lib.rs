//! Kac-Potts model on the discrete torus, with fuzzy coarse-graining.
//!
//! The model lives on Δ_n^d = {0, ..., n-1}^d viewed as the torus (Z/nZ)^d,
//! with q colors per site and a translation-invariant interaction kernel J
//! scaled to the macroscopic torus T^d = [0,1)^d:
//!
//!   H_n(σ) = -(1/n^d) Σ_{x,y} J((x-y)/n) 1{σ(x) = σ(y)}
//!
//! summed over ordered pairs including x = y, and Gibbs weight exp(-β H_n).
//! A fuzzy partition merges the q colors into s classes; the library computes
//! the conditional law of a single site's class given the fuzzy image of the
//! rest, both by brute-force enumeration and through an exact factorization
//! into per-class diluted Potts expectations, and compares against the n → ∞
//! limit. Companion modules cover the mean-field (Ellis-Wang) theory, the
//! large-deviation rate functional with spatial dilution and its minimizers,
//! and MCMC samplers (heat bath and cluster) with exact small-system checks.

pub mod error;
pub mod exec;
pub mod experiments;
pub mod fuzzy;
pub mod io;
pub mod meanfield;
pub mod profiles;
pub mod rng;
pub mod sampler;
pub mod torus;
pub mod variational;

pub use error::ModelError;
pub use exec::ExecMode;
