//! Independent numerical oracles and seeded fixtures for the linalg tests.
//! Nothing here touches the Jacobi code path it is used to check.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::matrix::{norm2, Matrix};

/// Dense matrix with standard-normal entries, deterministic per seed.
pub fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Unit vector with standard-normal direction, stream-indexed per sample.
pub fn seeded_unit_vector(dim: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = norm2(&v);
    for x in v.iter_mut() {
        *x /= n;
    }
    v
}

/// Determinant of a 3x3 matrix by the rule of Sarrus.
pub fn gram_det3(m: &Matrix) -> f64 {
    assert_eq!((m.rows(), m.cols()), (3, 3));
    let a = |i: usize, j: usize| m.get(i, j);
    a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
        - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
        + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
}

/// Closed-form eigenvalues of a symmetric 3x3 matrix (trigonometric form of
/// the characteristic cubic). Returned in no particular order.
pub fn sym3_eigenvalues(m: &Matrix) -> Vec<f64> {
    assert_eq!((m.rows(), m.cols()), (3, 3));
    let a = |i: usize, j: usize| m.get(i, j);
    let p1 = a(0, 1).powi(2) + a(0, 2).powi(2) + a(1, 2).powi(2);
    if p1 == 0.0 {
        return vec![a(0, 0), a(1, 1), a(2, 2)];
    }
    let q = (a(0, 0) + a(1, 1) + a(2, 2)) / 3.0;
    let p2 = (a(0, 0) - q).powi(2) + (a(1, 1) - q).powi(2) + (a(2, 2) - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = Matrix::from_fn(3, 3, |i, j| {
        let shift = if i == j { q } else { 0.0 };
        (m.get(i, j) - shift) / p
    });
    let r = (gram_det3(&b) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let eig1 = q + 2.0 * p * phi.cos();
    let eig3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let eig2 = 3.0 * q - eig1 - eig3;
    vec![eig1, eig2, eig3]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalue_oracle_on_known_matrix() {
        // diag(1, 4, 9) rotated by nothing: eigenvalues are the diagonal.
        let m = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 4.0, 0.0], vec![0.0, 0.0, 9.0]]).unwrap();
        let mut eigs = sym3_eigenvalues(&m);
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(eigs, vec![1.0, 4.0, 9.0]);

        // A symmetric matrix with known spectrum {0, 1, 3}:
        // [[1,1,0],[1,2,1],[0,1,1]]
        let m = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![1.0, 2.0, 1.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let mut eigs = sym3_eigenvalues(&m);
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in eigs.iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}
