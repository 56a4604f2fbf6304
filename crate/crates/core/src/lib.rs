//! Range-deviation probabilities of a supercritical super-Brownian motion,
//! computed three ways: a radial semilinear PDE with a blow-up boundary,
//! a branching Brownian particle system, and Feynman–Kac path integrals
//! that certify the PDE output.
//!
//! Run `cargo run --release --example <name>` for a tour; every major
//! capability has an example under `examples/`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod deviations;
pub mod error;
pub mod feynman_kac;
pub mod mechanism;
pub mod particles;
pub mod pde;

pub use error::{Error, Result};
pub use mechanism::BranchingMechanism;

/// Locale-free float formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
