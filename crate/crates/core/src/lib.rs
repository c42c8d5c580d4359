//! Particle simulation of multi-species Vlasov-Poisson plasmas moving outside a
//! body that is screened by a singular external magnetic field.
//!
//! The plasma is represented by weighted macro-particles that follow the
//! characteristics of the kinetic equation. The self-consistent electric field
//! comes from softened direct Coulomb summation; the external field diverges on
//! the border of the screened body (a torus, an infinite cylinder or a
//! half-space). Diagnostics measure the identities that make the shield work:
//! the speed-work balance, the canonical momentum balance near the torus, the
//! local energy and its scaling, and the convergence of cutoff dynamics.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod convergence;
pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod geometry;
mod quadrature;
pub mod runner;
pub mod selffield;

pub use error::{Error, Result};

/// Cartesian 3-vector used for positions, velocities and fields.
pub type Vec3 = nalgebra::Vector3<f64>;
