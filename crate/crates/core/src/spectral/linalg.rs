//! Dense symmetric positive-definite factorization for the small (n ≤ ~16)
//! band covariance matrices used by the RX detector.
//!
//! Matrices are stored row-major in a flat slice of length `n * n`.

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factor a symmetric matrix. Returns `None` when a pivot is not positive
    /// relative to the largest diagonal entry, i.e. the matrix is singular or
    /// indefinite to working precision. Only the lower triangle is read.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n, "matrix must be n×n");
        let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0_f64, f64::max);
        let tol = f64::EPSILON * n as f64 * max_diag;

        let mut lower = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= lower[j * n + k] * lower[j * n + k];
            }
            if !d.is_finite() || d <= tol {
                return None;
            }
            let ljj = d.sqrt();
            lower[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= lower[i * n + k] * lower[j * n + k];
                }
                lower[i * n + j] = s / ljj;
            }
        }
        Some(Self { n, lower })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` in place by forward then backward substitution.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let l = &self.lower;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
    }

    /// Full inverse, symmetrized so that `inv[i][j] == inv[j][i]` bitwise.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (inv[i * n + j] + inv[j * n + i]);
                inv[i * n + j] = m;
                inv[j * n + i] = m;
            }
        }
        inv
    }
}
