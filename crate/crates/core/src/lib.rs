//! Optimal timing of repeated, irreversible capacity investments when the
//! underlying commodity price follows a geometric Brownian motion.
//!
//! Each investment buys one capacity unit that starts producing after a fixed
//! lead time and runs for a finite lifetime. Consecutive investments must be
//! separated by at least one lifetime, so the owner of several investment
//! rights faces a refracted stopping problem: after exercising a right the
//! next one only becomes available a refraction period later. The solver in
//! [`solver`] computes the exercise boundaries and value functions for any
//! number of rights by iterating on the one-right problem; [`oracle`] replays
//! the resulting threshold policies on simulated paths, and [`critical_cost`]
//! compares scenarios of different scale through their value functions.

pub mod cli;
pub mod critical_cost;
mod error;
pub mod gbm_model;
pub mod numerics;
pub mod oracle;
pub mod reward;
pub mod solver;

pub use error::{Error, Result};
