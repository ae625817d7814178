//! Box-constrained quasi-Newton minimizer for a handful of parameters.

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Stop when the relative decrease of f over one iteration drops below this.
    pub f_rel_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-6,
            f_rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Projected BFGS with Armijo backtracking. `f` returns value and gradient.
///
/// Components pinned at a bound with the gradient pushing outward are frozen for
/// the step. An evaluation error at a trial point is treated as an infinite value.
pub fn minimize<F>(mut f: F, x0: &[f64], bounds: &[(f64, f64)], opts: MinimizeOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    assert_eq!(bounds.len(), n);
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut fx, mut g) = f(&x)?;
    // Inverse Hessian approximation, row-major.
    let mut h = identity(n);
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let (lo, hi) = bounds[i];
                !((x[i] <= lo && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0))
            })
            .collect();
        let gnorm = (0..n).filter(|&i| free[i]).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
        if gnorm < opts.grad_tol {
            break;
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| {
                if !free[i] {
                    return 0.0;
                }
                -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>()
            })
            .collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if !(slope < 0.0) {
            // Lost descent: restart from steepest descent.
            h = identity(n);
            dir = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, bounds);
            let actual: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| (t - xi) * gi).sum();
            match f(&trial) {
                Ok((ft, gt)) if ft.is_finite() && ft <= fx + 1e-4 * actual => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let rel = (fx - fnew).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fnew;
        g = gn;
        if rel < opts.f_rel_tol {
            break;
        }
    }
    Ok(Minimum { x, f: fx, iterations })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((v, g))
        };
        let m = minimize(
            f,
            &[-1.2, 1.0],
            &[(-5.0, 5.0), (-5.0, 5.0)],
            MinimizeOptions { max_iter: 500, grad_tol: 1e-9, f_rel_tol: 0.0 },
        )
        .unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| Ok(((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]));
        let m = minimize(f, &[0.0], &[(-1.0, 1.0)], MinimizeOptions::default()).unwrap();
        assert_eq!(m.x[0], 1.0);
    }
}
