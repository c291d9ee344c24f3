//! Numerical laboratory for complex Monge-Ampere equations on model
//! geometries.
//!
//! The crate solves `(omega_0 + i ddbar u)^n = e^F omega_0^n` on desk-scale
//! discretizations (flat torus, round sphere, radial log-domain), applies the
//! smoothing and Legendre-type transforms used in continuity estimates for
//! such equations, measures level-set energies and moduli of continuity, and
//! computes geodesic diameters of the solved metrics.  Module layout:
//!
//! * [`geometry`] — backgrounds, grids, distances, quadrature.
//! * [`field`] — scalar fields, differential operators, norms.
//! * [`solver`] — the equation solvers and auxiliary solves.
//! * [`transforms`] — smoothing kernels, regularization, Legendre transform.
//! * [`estimates`] — level sets, iteration analysis, modulus fitting.
//! * [`metric`] — solved-metric distances, diameter, Dini and Morrey checks.
//! * [`scenarios`] — problem families and experiment orchestration.
//! * [`verify`] — the acceptance suite backing `malab verify`.

pub mod error;
pub mod field;
mod fft;
pub mod geometry;
pub mod solver;
pub mod transforms;

pub use error::{Error, Result};
