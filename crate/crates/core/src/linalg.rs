//! Small dense/banded linear algebra helpers that nalgebra does not cover.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals.
///
/// `lower[i]` sits at `(i + 1, i)`, `upper[i]` at `(i, i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = diag.len();
        assert!(n >= 1, "empty tridiagonal matrix");
        assert_eq!(lower.len(), n - 1);
        assert_eq!(upper.len(), n - 1);
        Self { lower, diag, upper }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `out = self * x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.mul_vec_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// `self * m` for a dense right-hand matrix.
    pub fn mul_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.dim());
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            let col = m.column(c);
            let mut dst = out.column_mut(c);
            self.mul_vec_into(col.as_slice(), dst.as_mut_slice());
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.upper[i];
                m[(i + 1, i)] = self.lower[i];
            }
        }
        m
    }
}

/// Solves a tridiagonal system in place with partial pivoting (LAPACK `gtsv` scheme).
///
/// On entry `rhs` holds b, on exit x. The diagonals are consumed as workspace.
pub fn solve_tridiagonal(
    lower: &mut [f64],
    diag: &mut [f64],
    upper: &mut [f64],
    rhs: &mut [f64],
) -> Result<()> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    let scale = diag
        .iter()
        .chain(lower.iter())
        .chain(upper.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let tiny = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    // Second superdiagonal fill-in created by row interchanges.
    let mut upper2 = vec![0.0; n.saturating_sub(2)];

    for i in 0..n - 1 {
        if diag[i].abs() >= lower[i].abs() {
            if diag[i].abs() <= tiny {
                return Err(Error::Singular(format!("zero pivot at row {i}")));
            }
            let f = lower[i] / diag[i];
            diag[i + 1] -= f * upper[i];
            rhs[i + 1] -= f * rhs[i];
            if i + 2 < n {
                upper2[i] = 0.0;
            }
        } else {
            // Swap rows i and i+1.
            let f = diag[i] / lower[i];
            diag[i] = lower[i];
            let tmp = diag[i + 1];
            diag[i + 1] = upper[i] - f * tmp;
            if i + 2 < n {
                upper2[i] = upper[i + 1];
                upper[i + 1] = -f * upper2[i];
            }
            upper[i] = tmp;
            rhs.swap(i, i + 1);
            rhs[i + 1] -= f * rhs[i];
        }
    }
    if diag[n - 1].abs() <= tiny {
        return Err(Error::Singular(format!("zero pivot at row {}", n - 1)));
    }

    rhs[n - 1] /= diag[n - 1];
    if n > 1 {
        rhs[n - 2] = (rhs[n - 2] - upper[n - 2] * rhs[n - 1]) / diag[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1] - upper2[i] * rhs[i + 2]) / diag[i];
    }
    Ok(())
}

/// Dense LU solve with partial pivoting.
pub fn solve_dense(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("dense LU found a zero pivot".into()))
}

/// In-place Gaussian elimination with partial pivoting for a small row-major system.
///
/// `a` is n×n row-major and is overwritten; `b` holds the right-hand side on entry and
/// the solution on exit.
pub fn solve_small_in_place(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in col + 1..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if !(best > 0.0) || !best.is_finite() {
            return Err(Error::Singular(format!("zero pivot in column {col}")));
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for c in col + 1..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * b[c];
        }
        b[r] = s / a[r * n + r];
    }
    Ok(())
}

/// Frobenius norm of a sequence of vectors treated as matrix columns.
pub fn frobenius<'a, I>(columns: I) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    columns
        .into_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tridiagonal_solve_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 3, 5, 40] {
            let lower: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-3.0..3.0)).collect();
            let upper: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-3.0..3.0)).collect();
            // Small diagonal forces row interchanges.
            let diag: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            let t = Tridiagonal::new(lower, diag, upper);
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));

            let dense = solve_dense(t.to_dense(), &b).unwrap();
            let mut x = b.as_slice().to_vec();
            let (mut l, mut d, mut u) = (t.lower.clone(), t.diag.clone(), t.upper.clone());
            solve_tridiagonal(&mut l, &mut d, &mut u, &mut x).unwrap();
            for i in 0..n {
                assert!((x[i] - dense[i]).abs() < 1e-9 * (1.0 + dense[i].abs()), "n={n} i={i}");
            }
        }
    }

    #[test]
    fn tridiagonal_singular_is_reported() {
        let mut l = vec![0.0];
        let mut d = vec![0.0, 1.0];
        let mut u = vec![0.0];
        let mut b = vec![1.0, 1.0];
        assert!(solve_tridiagonal(&mut l, &mut d, &mut u, &mut b).is_err());
    }

    #[test]
    fn small_solver_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 4, 15] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let want = solve_dense(a.clone(), &b).unwrap();
            let mut rm: Vec<f64> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
            let mut x = b.as_slice().to_vec();
            solve_small_in_place(&mut rm, &mut x, n).unwrap();
            for i in 0..n {
                assert!((x[i] - want[i]).abs() < 1e-9 * (1.0 + want[i].abs()));
            }
        }
    }

    #[test]
    fn mul_mat_matches_dense() {
        let t = Tridiagonal::new(vec![1.0, 2.0], vec![3.0, 4.0, 5.0], vec![6.0, 7.0]);
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.mul_mat(&m), t.to_dense() * &m);
    }
}
