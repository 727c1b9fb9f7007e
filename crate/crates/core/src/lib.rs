//! Numerical reconstruction of a closed manifold and a Schrödinger potential
//! from interior spectral data, validated on flat-torus grid models.
//!
//! The pipeline runs forward solve → perturbation → cell partition → slice
//! catalog → finite metric space → potential estimate → oracle evaluation.
//! Each stage lives in its own module and can be driven on its own.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod metric;
pub mod potential;
pub mod slicing;
pub mod spectra;

pub use error::{Error, Result, Stage};
pub use geometry::{DiscreteManifold, GridPoint, RegionSpec};

/// Volume of the unit ball in ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}
