//! Null-space bases and orthogonal decomposition against them.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, norm2, Matrix};
use crate::linalg::svd::svd;

/// An orthonormal (possibly empty) basis of a subspace of `R^dim_ambient`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    dim_ambient: usize,
    vectors: Vec<Vec<f64>>,
}

impl SubspaceBasis {
    /// Validating constructor: every vector must live in the ambient space,
    /// have unit norm within 1e-12 and be orthogonal to the others within
    /// 1e-10.
    pub fn new(dim_ambient: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if dim_ambient == 0 {
            return Err(Error::shape("dim_ambient >= 1", "0"));
        }
        for v in &vectors {
            if v.len() != dim_ambient {
                return Err(Error::shape(format!("vectors of length {dim_ambient}"), format!("{}", v.len())));
            }
            if (norm2(v) - 1.0).abs() > 1e-12 {
                return Err(Error::NumericalFailure {
                    message: "basis vector is not unit length".into(),
                    residual: (norm2(v) - 1.0).abs(),
                });
            }
        }
        for i in 0..vectors.len() {
            for j in (i + 1)..vectors.len() {
                let d = dot(&vectors[i], &vectors[j]).abs();
                if d > 1e-10 {
                    return Err(Error::NumericalFailure {
                        message: format!("basis vectors {i} and {j} are not orthogonal"),
                        residual: d,
                    });
                }
            }
        }
        Ok(Self { dim_ambient, vectors })
    }

    fn from_trusted(dim_ambient: usize, vectors: Vec<Vec<f64>>) -> Self {
        Self { dim_ambient, vectors }
    }

    pub fn dim_ambient(&self) -> usize {
        self.dim_ambient
    }

    /// Number of basis vectors (the subspace dimension).
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Orthogonal projection of `v` onto the spanned subspace.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim_ambient {
            return Err(Error::shape(format!("vector of length {}", self.dim_ambient), format!("{}", v.len())));
        }
        let mut out = vec![0.0; self.dim_ambient];
        for b in &self.vectors {
            let c = dot(b, v);
            for (o, &bi) in out.iter_mut().zip(b) {
                *o += c * bi;
            }
        }
        Ok(out)
    }

    /// Split `v` into its component inside the subspace and the remainder:
    /// `v = v_in + v_perp`, with `v_perp` orthogonal to every basis vector.
    pub fn decompose(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let v_in = self.project(v)?;
        let v_perp: Vec<f64> = v.iter().zip(&v_in).map(|(a, b)| a - b).collect();
        Ok((v_in, v_perp))
    }
}

/// Orthonormal basis of `{ delta : W^T delta = 0 }` for a `d' x K` weight
/// matrix `w`. These are the left singular vectors whose singular values fall
/// below the rank tolerance, together with the orthogonal complement columns
/// of `U`; the dimension is `d' - rank(w)` by rank-nullity. An empty basis is
/// a valid result (full-rank square or wide heads have no blind spot).
pub fn null_space_of_transpose(w: &Matrix, rel_tol: f64) -> Result<SubspaceBasis> {
    let decomp = svd(w)?;
    let rank = decomp.rank(rel_tol);
    let m = w.rows();
    let vectors: Vec<Vec<f64>> = (rank..m).map(|j| decomp.u().column(j)).collect();
    Ok(SubspaceBasis::from_trusted(m, vectors))
}
