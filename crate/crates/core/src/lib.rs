//! Numerical laboratory for score-based diffusion sampling.
//!
//! The forward process is a time-rescaled Ornstein–Uhlenbeck flow
//! `dx = -½ g(t)² x dt + g(t) dw` started from a Gaussian-mixture data law.
//! Everything needed to study its reverse-time discretizations lives here:
//!
//! - [`schedules`]: variance functions `g`, closed-form `G_{t,s}`, grids and
//!   the step functionals `Π₂`, `Π₃`, `Π`.
//! - [`distributions`]: mixtures with exact forward marginals, scores and
//!   Hessians.
//! - [`score_models`]: exact, perturbed and affine denoising-score-matching
//!   score estimators.
//! - [`samplers`]: Euler–Maruyama and exponential-integrator chains plus exact
//!   Gaussian law propagation.
//! - [`metrics`]: KL / W2 closed forms, sliced W2, energy distance, bound
//!   formulas and rate fits.
//! - [`harness`]: config-driven sweeps, CSV output and reports.

pub mod distributions;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod samplers;
pub mod schedules;
pub mod score_models;

pub use error::{Error, Result};
