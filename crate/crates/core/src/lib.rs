//! Restricted isometry constants (RICs) of Gaussian measurement matrices.
//!
//! Two independent routes are provided:
//!
//! * [`rs`]: replica-symmetric saddle-point equations whose free entropy
//!   `phi(mu)` is Legendre-transformed into entropy curves `Sigma(lambda)`
//!   over the extreme eigenvalue of `S`-column Gram submatrices.
//! * [`emc`] + [`dos`]: exchange Monte Carlo over fixed-cardinality column
//!   subsets, with multihistogram reconstruction of the density of states and
//!   a brute-force enumeration oracle for small instances.
//!
//! [`ric`] turns the zero-points of the entropy curves into RICs and
//! recovery phase diagrams.

pub mod branch;
pub mod dos;
pub mod emc;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod plot;
pub mod quadrature;
pub mod ric;
pub mod rng;
pub mod roots;
pub mod rs;

pub use branch::Branch;
pub use error::{Error, Result};
