//! Zero-temperature Monge-Ampère regularization of envelopes on the flat torus.
//!
//! The torus is the unit square with periodic identifications, discretized on an
//! `N x N` grid. In complex dimension one the Monge-Ampère measure of a potential
//! `u` relative to a background form with density `f_theta` is the twisted
//! Laplacian density `f_theta + KAPPA * lap(u)`, so every nonlinear object in the
//! crate reduces to a stencil, an exponential or an obstacle constraint.
//!
//! Layout:
//!
//! * [`grid`]: periodic discrete calculus and the spectral Poisson solve.
//! * [`forms`]: background forms, volume densities and divisor data.
//! * [`ma_solver`]: damped Newton for `MA(u) = e^{beta u} g`.
//! * [`envelope`]: obstacle-problem envelopes and free boundaries.
//! * [`functionals`]: energy, `L_beta`, `G_beta`, relative entropy.
//! * [`zero_temp`]: beta-sweep harness for the zero-temperature limit.
//! * [`hele_shaw`]: lambda-families of divisor envelopes.
//! * [`geodesic`]: Legendre-transform rays and their subgeodesic approximants.
//! * [`scenario`]: config parsing and the experiment runner behind the CLI.

pub mod contour;
pub mod envelope;
pub mod error;
pub mod forms;
pub mod functionals;
pub mod geodesic;
pub mod grid;
pub mod hele_shaw;
pub mod io;
pub mod linalg;
pub mod ma_solver;
pub mod scenario;
pub mod zero_temp;

pub use error::{Error, Result};
pub use grid::{ScalarField, TorusGrid};

/// Normalization of `dd^c` on the unit torus: `dd^c u = KAPPA * lap(u) dA`.
///
/// Every module reads the constant from here.
pub const KAPPA: f64 = 1.0 / (4.0 * std::f64::consts::PI);
