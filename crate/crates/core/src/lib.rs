//! Simulation and statistical verification for the collision spectrum of
//! Λ-coalescents.
//!
//! The block-counting chain of a Λ-coalescent started from `n` singleton
//! blocks decrements from `m` to `m − k` at rate `C(m, k+1)·λ_{m,k+1}`,
//! where `λ_{m,k} = ∫ x^{k−2}(1−x)^{m−k} Λ(dx)` for a finite measure Λ on
//! [0, 1]. The collision spectrum `(X_{n,k})` counts, over the whole
//! history, the mergers involving exactly `k` blocks. This crate provides:
//!
//! - [`measure`]: the measure Λ, its negative-order and logarithmic
//!   moments, the law of the post-collision fraction `W`, and the Laplace
//!   exponent of the dust subordinator;
//! - [`kernel`]: collision rates `λ_{m,k}`, total rates `λ_m`, the
//!   merge-size law `p_{m,k}`, and exact merge-size samplers;
//! - [`sim`]: jump-chain simulation of the spectrum, the extended
//!   (primary/secondary block) coalescent, the first-passage random-walk
//!   oracle, and the exact first-moment dynamic program;
//! - [`limits`]: the reference limit laws (stable, normal, Poisson,
//!   exponential functional of a subordinator, inverse stable
//!   subordinator) with characteristic functions, moments and samplers;
//! - [`harness`]: empirical-CF / KS / chi-square machinery and the
//!   verification suites that compare simulations against the limit laws.

pub mod error;
pub mod harness;
pub mod kernel;
pub mod limits;
pub mod measure;
pub mod quad;
pub mod sim;
pub mod special;

pub use error::CoalError;
pub use measure::{CoalescentMeasure, MeasureMoments, Singularity};
