//! Dense factorizations used by the compressors.
//!
//! Matrices are `nalgebra::DMatrix<f64>` (column-major). Everything that
//! selects a subset does so over *columns*: a row interpolative decomposition
//! of `A` is computed on `A^T`, which callers usually assemble directly in that
//! layout (see [`crate::kernels::assemble_transposed`]).

mod aca;
mod blas;
mod id;
mod io;
mod lstsq;
mod qr;
mod srrqr;
mod svd;

pub use aca::{aca, AcaResult, AcaStop};
pub use id::{id_columns, id_rows, select_columns, IdResult};
pub use io::{read_matrix, write_matrix};
pub use lstsq::{least_squares, ls_project, LeastSquares, LsFactor, DEFAULT_RCOND};
pub use qr::{householder_qr, pivoted_qr, PivotedQr, Qr, QrStop};
pub use srrqr::{srrqr, srrqr_in_place, SrrqrResult, Stop};
pub use svd::{singular_values, svd, truncated_svd, Svd};
