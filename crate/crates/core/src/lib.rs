//! Synthetic-control weighting and semi-parametric growth regression for
//! evaluating regional epidemic interventions.
//!
//! The library is organised as a pipeline over a regional panel of
//! cumulative case and test counts:
//!
//! 1. [`panel`] — ingest and normalise the raw per-region series into an
//!    aligned [`panel::Panel`] (monotone cumulative counts, common date
//!    window, derived daily increments).
//! 2. [`synth`] — construct a synthetic comparison unit for the treated
//!    region: a convex combination of donor regions whose weights solve a
//!    quadratic program over the pre-intervention predictors, with the
//!    predictor importance matrix `V` itself chosen by nested optimisation
//!    of the pre-period forecast error.
//! 3. [`spline`] — a low-rank penalized spline basis on the cumulative-case
//!    axis used by the semi-parametric growth models.
//! 4. [`gam`] — count-data growth regressions (Poisson / negative
//!    binomial) of daily new cases on cumulative cases, with an
//!    intervention x region interaction term as the difference-in-differences
//!    effect of interest and an optional penalized smooth in cumulative
//!    cases fitted by marginal-likelihood smoothing-parameter selection.
//! 5. [`inference`] — delta-method growth-rate changes and Wald intervals.
//! 6. [`evaluation`] — placebo distribution of the intervention effect
//!    across untreated regions, counterfactual case projection, and a
//!    parametric Monte Carlo calibration harness.
//!
//! The numerical kernels in [`synth::qp`] and [`growth`] are generic over
//! the scalar type through [`num_traits::Float`]; the estimation stack is
//! concrete `f64` (aliases at the crate root fix the scalar once for
//! downstream users).

pub mod error;
pub mod evaluation;
pub mod gam;
pub mod growth;
pub mod inference;
pub mod panel;
pub mod spline;
pub mod synth;

pub use error::{CoreError, Result};

/// Dense matrix with the crate's concrete scalar type.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector with the crate's concrete scalar type.
pub type Vector = nalgebra::DVector<f64>;
