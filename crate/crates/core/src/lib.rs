//! Density transport of a stochastic process through a time grid by
//! orthogonal-series density estimation, with the series coefficients read
//! out by classically simulated quantum amplitude estimation.
//!
//! Modules, bottom-up:
//!
//! - [`quad`]: adaptive Gauss–Kronrod integration in 1D and 2D
//! - [`legendre`]: Legendre polynomials, index lattices, projection
//! - [`density`]: [`LegendreSeries`] density estimates and their functionals
//! - [`rbm`]: the reflected Brownian motion test process
//! - [`qae`]: random-depth and low-depth amplitude estimation simulators
//! - [`pipeline`]: step-by-step coefficient estimation through the time grid
//! - [`bench`]: sweeps over the number of time steps and scaling fits
//! - [`seed`]: reproducible per-task random streams

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod density;
pub mod error;
pub mod legendre;
pub mod pipeline;
pub mod qae;
pub mod quad;
pub mod rbm;
pub mod seed;

pub use density::LegendreSeries;
pub use error::{OsdeError, Result};
pub use legendre::{MultiIndex, MultiIndexSet};
pub use qae::{QaeBackend, QaeOutcome};
pub use rbm::RbmKernel;
