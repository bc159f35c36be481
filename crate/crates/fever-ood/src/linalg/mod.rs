//! Dense real linear algebra: matrix arithmetic, full SVD, numerical rank,
//! null-space bases and orthogonal decomposition. Everything is `f64`,
//! immutable after construction and deterministic for a fixed input.

mod matrix;
mod subspace;
mod svd;

#[cfg(test)]
pub(crate) mod test_oracles;

pub use matrix::{axpy, dot, norm2, norm_inf, Matrix};
pub use subspace::{null_space_of_transpose, SubspaceBasis};
pub use svd::{svd, SigmaExtremes, SvdResult, DEFAULT_REL_TOL};
