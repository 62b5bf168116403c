//! Proxy-point compression of kernel-matrix blocks.
//!
//! A kernel block `K(X0, Y0)` whose source cluster lives in a box `X` and whose
//! targets live in an admissible far-field region `Y` is approximated by an
//! interpolative decomposition `W · K(X_rep, Y0)`. The skeleton `X_rep` and the
//! interpolation matrix `W` are computed from the much smaller matrix
//! `K(X0, Y_p)`, where `Y_p` is a set of proxy points chosen once per domain
//! pair, so the cost does not depend on `|Y0|`.
//!
//! Modules:
//!
//! - [`geometry`]: points, boxes, shell regions, admissibility, point generation.
//! - [`kernels`]: kernel evaluation and dense block assembly.
//! - [`linalg`]: Householder QR, strong rank-revealing QR, interpolative
//!   decomposition, least squares, SVD and ACA baselines.
//! - [`proxy`]: random, surface and ID-based proxy-point selection plus a
//!   translation-aware cache.
//! - [`compress`]: the proxy compressor, the hybrid near/far variant, weight
//!   refinement and error diagnostics.
//! - [`h2`]: 2^d-tree partitioning, H² construction, matvec and audit.
//! - [`experiments`]: runners that regenerate the numerical experiments as CSV.

pub mod compress;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod h2;
pub mod kernels;
pub mod linalg;
pub mod proxy;

pub use error::{Error, Result};
