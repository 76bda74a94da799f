//! Small dense Hermitian solves used by the per-bin beamformer math.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Cholesky factorization A = L·Lᴴ of a Hermitian positive-definite matrix.
/// Fails when a pivot is not strictly positive.
pub fn cholesky(a: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid("matrix must be square"));
    }
    let mut l: Array2<Complex64> = Array2::zeros((n, n));
    for j in 0..n {
        let mut diag = a[(j, j)].re;
        for k in 0..j {
            diag -= l[(j, k)].norm_sqr();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Numerical(format!(
                "matrix is not positive definite (pivot {j}: {diag})"
            )));
        }
        let djj = diag.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solve A·x = b for Hermitian positive-definite A via Cholesky.
pub fn solve_hermitian(a: &Array2<Complex64>, b: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    let l = cholesky(a)?;
    let n = l.nrows();
    if b.len() != n {
        return Err(Error::invalid("right-hand side length mismatch"));
    }
    // Forward: L·y = b.
    let mut y: Array1<Complex64> = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    // Backward: Lᴴ·x = y.
    let mut x: Array1<Complex64> = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)].conj() * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(n: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut m: Array2<Complex64> = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    s += a[(i, k)] * a[(j, k)].conj();
                }
                m[(i, j)] = s;
            }
            m[(i, i)] += Complex64::new(0.5, 0.0);
        }
        m
    }

    #[test]
    fn solve_recovers_known_solution() {
        for n in [1usize, 2, 4, 8] {
            let a = random_pd(n, n as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + n as u64);
            let x_true = Array1::from_shape_fn(n, |_| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let b = a.dot(&x_true);
            let x = solve_hermitian(&a, &b).unwrap();
            for (u, v) in x.iter().zip(x_true.iter()) {
                assert!((u - v).norm() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m: Array2<Complex64> = Array2::zeros((2, 2));
        m[(0, 0)] = Complex64::new(1.0, 0.0);
        m[(1, 1)] = Complex64::new(-1.0, 0.0);
        assert!(cholesky(&m).is_err());
    }
}
