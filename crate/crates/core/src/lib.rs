//! Multiparameter stochastic sewing numerics.
//!
//! The crate is organised bottom-up:
//!
//! * [`algebra`]: index sets, projections, rectangular increments, the
//!   ψ/δ operators and grid-like partitions.
//! * [`identities`]: randomised identity suite for the algebra layer.
//! * [`fields`]: covariance models and exact samplers for Gaussian sheets.
//! * [`conditioning`]: finite Gaussian conditioning and local
//!   non-determinism checks.
//! * [`sewing`]: multilevel Riemann sums, convergence rates, BDG checks and
//!   the conditional exponential germ.
//! * [`occupation`]: occupation-measure spectra, local times, Bessel
//!   potential norms and regularity fits.
//! * [`young`]: averaged fields, the 2D nonlinear Young integral and the
//!   Picard solver for the regularised equation.

pub mod algebra;
pub mod conditioning;
pub mod error;
pub mod fields;
pub mod identities;
pub mod linalg;
pub mod occupation;
pub mod registry;
pub mod rng;
pub mod sewing;
pub mod stats;
pub mod young;

pub use error::{Error, Result};
