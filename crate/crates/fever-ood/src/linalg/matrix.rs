//! Dense row-major matrix over `f64` and the small vector helpers used
//! throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix, row-major. The universal carrier for weights,
/// features and gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build a matrix from row-major data. Rejects empty shapes, length
    /// mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("rows >= 1 and cols >= 1", format!("{rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{} entries for {rows}x{cols}", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                message: format!("non-finite entry {bad} in matrix constructor"),
                residual: f64::NAN,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        let cols = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(format!("{cols} columns per row"), format!("{}", r.len())));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Fill from a function of (row, col). Entries are trusted finite.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        assert_eq!(col.len(), self.rows);
        for (i, &v) in col.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                format!("inner dimension {}", self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(format!("vector of length {}", self.cols), format!("{}", v.len())));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v` without materializing the transpose.
    pub fn transpose_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::shape(format!("vector of length {}", self.rows), format!("{}", v.len())));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for j in 0..self.cols {
                out[j] += vi * self.get(i, j);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// In-place `self += c · other`.
    pub fn add_scaled(&mut self, other: &Matrix, c: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// Rank-one update `self += c · u vᵀ`.
    pub fn add_outer(&mut self, c: f64, u: &[f64], v: &[f64]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let cu = c * ui;
            for (j, &vj) in v.iter().enumerate() {
                self.data[i * self.cols + j] += cu * vj;
            }
        }
    }

    /// Outer product `u vᵀ` as a fresh matrix.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        m.add_outer(1.0, u, v);
        m
    }

    /// Parse the fixture text format: first line `m n`, then m lines of n
    /// decimal numbers separated by spaces.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::ParseError {
            line: 1,
            message: "missing `m n` header".into(),
        })?;
        let dims: Vec<&str> = header.split_whitespace().collect();
        if dims.len() != 2 {
            return Err(Error::ParseError {
                line: 1,
                message: format!("expected `m n`, got {header:?}"),
            });
        }
        let parse_dim = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::ParseError {
                line: 1,
                message: format!("bad dimension {s:?}: {e}"),
            })
        };
        let rows = parse_dim(dims[0])?;
        let cols = parse_dim(dims[1])?;
        if rows == 0 || cols == 0 {
            return Err(Error::ParseError {
                line: 1,
                message: format!("dimensions must be positive, got {rows} {cols}"),
            });
        }

        let mut data = Vec::with_capacity(rows * cols);
        let mut consumed = 0usize;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if consumed == rows {
                return Err(Error::ParseError {
                    line: lineno,
                    message: format!("expected {rows} data rows, found extra content"),
                });
            }
            let entries: Vec<&str> = line.split_whitespace().collect();
            if entries.len() != cols {
                return Err(Error::ParseError {
                    line: lineno,
                    message: format!("expected {cols} values, got {}", entries.len()),
                });
            }
            for e in entries {
                let x: f64 = e.parse().map_err(|err| Error::ParseError {
                    line: lineno,
                    message: format!("bad number {e:?}: {err}"),
                })?;
                if !x.is_finite() {
                    return Err(Error::ParseError {
                        line: lineno,
                        message: format!("non-finite entry {e:?}"),
                    });
                }
                data.push(x);
            }
            consumed += 1;
        }
        if consumed != rows {
            return Err(Error::ParseError {
                line: text.lines().count(),
                message: format!("expected {rows} data rows, got {consumed}"),
            });
        }
        Matrix::new(rows, cols, data)
    }

    /// Render the fixture text format at 17 significant digits, which
    /// round-trips `f64` losslessly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Max-magnitude entry.
#[inline]
pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `a + c·b` elementwise.
pub fn axpy(a: &[f64], c: f64, b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + c * y).collect()
}
