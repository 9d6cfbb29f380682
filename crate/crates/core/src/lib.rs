//! Numerical laboratory for the stratification of Higgs bundle / flat connection
//! moduli over compact Riemann surfaces.
//!
//! The crate provides a discretized surface substrate (spectral torus, hyperbolic
//! Bolza octagon), graded chains of line bundles with Higgs fields, a Newton solver
//! for the harmonic-metric (self-duality) equation, slice/Kuranishi/gauge-fixing
//! algorithms, the hyperkähler tangent algebra, and the ħ-conformal-limit
//! continuation machinery.

pub mod bundle;
pub mod conformal;
pub mod error;
pub mod linalg;
pub mod nahc;
pub mod strata;
pub mod surface;
pub mod twistor;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
