//! Adversarial training for linear regression and two-layer lazy-trained
//! networks under L2 and Linf attacks.
//!
//! The crate provides:
//!
//! - exact and smoothed (surrogate) attacks with closed forms for linear
//!   models, FGM/PGD approximations for networks ([`attack`]);
//! - closed-form population adversarial risks, a Monte-Carlo risk oracle,
//!   and the robust optimum (theta*, R*) ([`risk`]);
//! - the two-step attack-then-descend training loop with theorem-driven
//!   (xi, eta, T) schedules and an optional L1 proximal step ([`train`]);
//! - min-norm interpolation and the high-dimensional interpolation
//!   diagnostics ([`highdim`]);
//! - Gaussian data generation with pinned, cross-platform RNG ([`datagen`]);
//! - a preset-based experiment harness with CSV output ([`experiment`]).

pub mod attack;
pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod highdim;
pub mod linalg;
pub mod network;
pub mod presets;
pub mod rng;
pub mod risk;
pub mod train;

pub use error::{Error, Result};
