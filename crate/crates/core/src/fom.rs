//! High-fidelity viscous Burgers model.
//!
//! Central finite differences on a uniform grid with homogeneous Dirichlet
//! boundaries give the semi-discrete system
//!
//! ```text
//! u' = -u ⊙ (A_x u) + mu A_xx u
//! ```
//!
//! which is integrated with backward Euler. Each implicit step is solved by
//! Newton-Raphson with the analytic Jacobian.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{solve_dense, solve_tridiagonal, Tridiagonal};

/// Viscosity range the model was designed for. Values outside are allowed with a warning.
pub const MU_RANGE: (f64, f64) = (0.01, 1.0);

/// Data points of the initial-condition least-squares fit.
pub const INITIAL_CONDITION_POINTS: [(f64, f64); 8] = [
    (0.0, 0.0),
    (0.2, 1.0),
    (0.4, 0.5),
    (0.6, 1.0),
    (0.8, 0.2),
    (0.9, 0.1),
    (0.95, 0.05),
    (1.0, 0.0),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    pub length: f64,
    pub n_points: usize,
}

impl Default for SpatialGrid {
    fn default() -> Self {
        Self {
            length: 1.0,
            n_points: 201,
        }
    }
}

impl SpatialGrid {
    pub fn new(length: f64, n_points: usize) -> Result<Self> {
        if n_points < 3 || !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "spatial grid needs n_points >= 3 and length > 0 (got {n_points}, {length})"
            )));
        }
        Ok(Self { length, n_points })
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.n_points - 1) as f64
    }

    /// Number of unknowns once both boundary nodes are removed.
    pub fn n_state(&self) -> usize {
        self.n_points - 2
    }

    /// Interior node coordinates x_i = i dx, i = 1..n_state.
    pub fn interior_nodes(&self) -> Vec<f64> {
        let dx = self.dx();
        (1..=self.n_state()).map(|i| i as f64 * dx).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_points: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            n_points: 301,
        }
    }
}

impl TimeGrid {
    pub fn new(t_final: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time grid needs n_points >= 2 and t_final > 0 (got {n_points}, {t_final})"
            )));
        }
        Ok(Self { t_final, n_points })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / (self.n_points - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.n_points)
            .map(|j| {
                if j + 1 == self.n_points {
                    self.t_final
                } else {
                    j as f64 * dt
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub max_iter: usize,
    /// Bound on the Euclidean norm of the final residual.
    pub tol: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
        }
    }
}

/// Linear solver used for the Newton corrections of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Tridiagonal elimination with partial pivoting. The Jacobian is exactly tridiagonal.
    #[default]
    Banded,
    /// Dense LU with partial pivoting.
    Dense,
}

impl std::str::FromStr for LinearSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "banded" => Ok(Self::Banded),
            "dense" => Ok(Self::Dense),
            other => Err(Error::Parse(format!("unknown linear solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for LinearSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Banded => "banded",
            Self::Dense => "dense",
        })
    }
}

/// Full-order model: grids, difference operators, initial state and solver limits.
#[derive(Debug, Clone)]
pub struct FomModel {
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub a_x: Tridiagonal,
    pub a_xx: Tridiagonal,
    pub u0: DVector<f64>,
    pub newton: NewtonSettings,
    pub linear_solver: LinearSolver,
}

/// Per-solve Newton diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    /// Largest final residual norm over all accepted steps.
    pub max_residual: f64,
    pub newton_iterations: usize,
}

/// Full-order states over the time grid; column j is the state at t_j, column 0 is u0.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mu: f64,
    pub states: DMatrix<f64>,
    pub stats: SolveStats,
}

impl Trajectory {
    pub fn n_times(&self) -> usize {
        self.states.ncols()
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.states.column(self.states.ncols() - 1).into_owned()
    }

    /// CSV: first row is the time grid, then one row per interior node.
    pub fn write_csv<W: Write>(&self, times: &[f64], mut out: W) -> Result<()> {
        if times.len() != self.n_times() {
            return Err(Error::InvalidArgument(format!(
                "time grid has {} points, trajectory has {} columns",
                times.len(),
                self.n_times()
            )));
        }
        let row = |vals: &mut dyn Iterator<Item = f64>| -> String {
            vals.map(fmt_f64).collect::<Vec<_>>().join(",")
        };
        writeln!(out, "{}", row(&mut times.iter().copied()))?;
        for i in 0..self.states.nrows() {
            writeln!(out, "{}", row(&mut self.states.row(i).iter().copied()))?;
        }
        Ok(())
    }
}

/// Least-squares polynomial fit; coefficients in ascending powers.
pub fn fit_polynomial(points: &[(f64, f64)], degree: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if n < degree + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} points cannot determine a degree-{degree} polynomial"
        )));
    }
    let v = DMatrix::from_fn(n, degree + 1, |i, j| points[i].0.powi(j as i32));
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let svd = v.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-13) {
        return Err(Error::Singular(format!(
            "polynomial fit is ill-conditioned (singular values {smax:.3e} / {smin:.3e})"
        )));
    }
    let coeffs = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok(coeffs.iter().copied().collect())
}

pub fn eval_polynomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Degree-7 least-squares polynomial through [`INITIAL_CONDITION_POINTS`] at the interior nodes.
pub fn build_initial_condition(grid: &SpatialGrid) -> Result<DVector<f64>> {
    let coeffs = fit_polynomial(&INITIAL_CONDITION_POINTS, 7)?;
    Ok(DVector::from_iterator(
        grid.n_state(),
        grid.interior_nodes()
            .into_iter()
            .map(|x| eval_polynomial(&coeffs, x)),
    ))
}

/// Central-difference first and second derivative operators on the interior nodes.
pub fn assemble_operators(grid: &SpatialGrid) -> (Tridiagonal, Tridiagonal) {
    let n = grid.n_state();
    let dx = grid.dx();
    let h1 = 1.0 / (2.0 * dx);
    let h2 = 1.0 / (dx * dx);
    let a_x = Tridiagonal::new(vec![-h1; n - 1], vec![0.0; n], vec![h1; n - 1]);
    let a_xx = Tridiagonal::new(vec![h2; n - 1], vec![-2.0 * h2; n], vec![h2; n - 1]);
    (a_x, a_xx)
}

impl FomModel {
    pub fn new(grid: SpatialGrid, time: TimeGrid) -> Result<Self> {
        let (a_x, a_xx) = assemble_operators(&grid);
        let u0 = build_initial_condition(&grid)?;
        Ok(Self {
            grid,
            time,
            a_x,
            a_xx,
            u0,
            newton: NewtonSettings::default(),
            linear_solver: LinearSolver::default(),
        })
    }

    pub fn with_linear_solver(mut self, solver: LinearSolver) -> Self {
        self.linear_solver = solver;
        self
    }

    pub fn with_newton(mut self, newton: NewtonSettings) -> Self {
        self.newton = newton;
        self
    }

    pub fn n_state(&self) -> usize {
        self.grid.n_state()
    }

    /// `-u ⊙ (A_x u) + mu A_xx u`
    pub fn rhs(&self, u: &DVector<f64>, mu: f64) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        let mut scratch = vec![0.0; u.len()];
        self.rhs_into(u.as_slice(), mu, out.as_mut_slice(), &mut scratch);
        out
    }

    fn rhs_into(&self, u: &[f64], mu: f64, out: &mut [f64], ux: &mut [f64]) {
        self.a_x.mul_vec_into(u, ux);
        self.a_xx.mul_vec_into(u, out);
        for i in 0..u.len() {
            out[i] = -u[i] * ux[i] + mu * out[i];
        }
    }

    /// Backward-Euler residual `u - u_prev - dt rhs(u)`.
    pub fn implicit_residual(&self, u: &DVector<f64>, u_prev: &DVector<f64>, mu: f64) -> DVector<f64> {
        let dt = self.time.dt();
        u - u_prev - self.rhs(u, mu) * dt
    }

    /// Tridiagonal Jacobian of the backward-Euler residual, `I - dt (-diag(A_x u) - diag(u) A_x + mu A_xx)`.
    pub fn step_jacobian(&self, u: &[f64], mu: f64) -> Tridiagonal {
        let n = u.len();
        let dt = self.time.dt();
        let mut ux = vec![0.0; n];
        self.a_x.mul_vec_into(u, &mut ux);
        let diag = (0..n)
            .map(|i| 1.0 + dt * (ux[i] + u[i] * self.a_x.diag[i] - mu * self.a_xx.diag[i]))
            .collect();
        let lower = (0..n - 1)
            .map(|i| dt * (u[i + 1] * self.a_x.lower[i] - mu * self.a_xx.lower[i]))
            .collect();
        let upper = (0..n - 1)
            .map(|i| dt * (u[i] * self.a_x.upper[i] - mu * self.a_xx.upper[i]))
            .collect();
        Tridiagonal::new(lower, diag, upper)
    }

    /// One implicit step from `u_prev`. Returns the new state and its final residual norm.
    pub fn step_backward_euler(&self, u_prev: &DVector<f64>, mu: f64) -> Result<(DVector<f64>, f64)> {
        self.step_with_index(u_prev, mu, 1).map(|(u, r, _)| (u, r))
    }

    fn step_with_index(
        &self,
        u_prev: &DVector<f64>,
        mu: f64,
        time_index: usize,
    ) -> Result<(DVector<f64>, f64, usize)> {
        let n = u_prev.len();
        let dt = self.time.dt();
        let mut u = u_prev.clone();
        let mut f = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut res_norm = f64::INFINITY;
        for it in 0..=self.newton.max_iter {
            self.rhs_into(u.as_slice(), mu, &mut f, &mut scratch);
            for i in 0..n {
                f[i] = u[i] - u_prev[i] - dt * f[i];
            }
            res_norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !res_norm.is_finite() {
                break;
            }
            if res_norm < self.newton.tol {
                return Ok((u, res_norm, it));
            }
            if it == self.newton.max_iter {
                break;
            }
            let jac = self.step_jacobian(u.as_slice(), mu);
            for v in f.iter_mut() {
                *v = -*v;
            }
            match self.linear_solver {
                LinearSolver::Banded => {
                    let Tridiagonal {
                        mut lower,
                        mut diag,
                        mut upper,
                    } = jac;
                    solve_tridiagonal(&mut lower, &mut diag, &mut upper, &mut f)?;
                }
                LinearSolver::Dense => {
                    let delta = solve_dense(jac.to_dense(), &DVector::from_column_slice(&f))?;
                    f.copy_from_slice(delta.as_slice());
                }
            }
            for i in 0..n {
                u[i] += f[i];
            }
        }
        Err(Error::NonConvergence {
            time_index,
            iterations: self.newton.max_iter,
            residual: res_norm,
        })
    }

    /// Integrates from u0 over the whole time grid.
    pub fn solve(&self, mu: f64) -> Result<Trajectory> {
        if !mu.is_finite() {
            return Err(Error::InvalidArgument(format!("viscosity must be finite, got {mu}")));
        }
        if mu < MU_RANGE.0 || mu > MU_RANGE.1 {
            log::warn!("viscosity {mu} lies outside [{}, {}]", MU_RANGE.0, MU_RANGE.1);
        }
        let nt = self.time.n_points;
        let mut states = DMatrix::zeros(self.n_state(), nt);
        states.set_column(0, &self.u0);
        let mut u = self.u0.clone();
        let mut stats = SolveStats::default();
        for j in 1..nt {
            let (next, res, iters) = self.step_with_index(&u, mu, j)?;
            stats.max_residual = stats.max_residual.max(res);
            stats.newton_iterations += iters;
            states.set_column(j, &next);
            u = next;
        }
        Ok(Trajectory { mu, states, stats })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(n_s: usize, n_t: usize) -> FomModel {
        FomModel::new(
            SpatialGrid::new(1.0, n_s).unwrap(),
            TimeGrid::new(1.0, n_t).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn initial_condition_hits_data_points() {
        let c = fit_polynomial(&INITIAL_CONDITION_POINTS, 7).unwrap();
        assert!(eval_polynomial(&c, 0.0).abs() < 1e-8);
        assert!((eval_polynomial(&c, 0.2) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn initial_condition_coefficients_match_vandermonde_lu() {
        let c = fit_polynomial(&INITIAL_CONDITION_POINTS, 7).unwrap();
        let v = DMatrix::from_fn(8, 8, |i, j| INITIAL_CONDITION_POINTS[i].0.powi(j as i32));
        let y = DVector::from_iterator(8, INITIAL_CONDITION_POINTS.iter().map(|p| p.1));
        let oracle = v.lu().solve(&y).unwrap();
        for (a, b) in c.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn ill_conditioned_fit_is_an_error() {
        let pts = [(0.5, 1.0), (0.5, 2.0), (0.5, 3.0)];
        assert!(fit_polynomial(&pts, 2).is_err());
    }

    #[test]
    fn operator_stencils_on_five_points() {
        let grid = SpatialGrid::new(1.0, 5).unwrap();
        let (a_x, a_xx) = assemble_operators(&grid);
        let dx_dense = a_x.to_dense();
        let dxx_dense = a_xx.to_dense();
        assert_eq!(dxx_dense.row(1).iter().copied().collect::<Vec<_>>(), vec![16.0, -32.0, 16.0]);
        assert_eq!(dx_dense.row(1).iter().copied().collect::<Vec<_>>(), vec![-2.0, 0.0, 2.0]);
        // Dirichlet truncation on the boundary rows.
        assert_eq!(dxx_dense.row(0).iter().copied().collect::<Vec<_>>(), vec![-32.0, 16.0, 0.0]);
    }

    #[test]
    fn second_difference_of_linear_function_vanishes() {
        let grid = SpatialGrid::new(1.0, 21).unwrap();
        let (_, a_xx) = assemble_operators(&grid);
        let x = DVector::from_vec(grid.interior_nodes().iter().map(|x| 3.0 * x - 1.0).collect());
        let y = a_xx.mul_vec(&x);
        for i in 1..y.len() - 1 {
            assert!(y[i].abs() < 1e-10);
        }
    }

    #[test]
    fn operator_symmetry() {
        let (a_x, a_xx) = assemble_operators(&SpatialGrid::new(1.0, 12).unwrap());
        let d = a_x.to_dense();
        assert!((&d + d.transpose()).amax() < 1e-12);
        let s = a_xx.to_dense();
        assert!((&s - s.transpose()).amax() < 1e-12);
    }

    #[test]
    fn rhs_of_zero_and_constant() {
        let m = small_model(41, 5);
        let zero = DVector::zeros(m.n_state());
        assert_eq!(m.rhs(&zero, 0.3).amax(), 0.0);
        let c = DVector::from_element(m.n_state(), 0.7);
        let r = m.rhs(&c, 0.0);
        for i in 1..r.len() - 1 {
            assert!(r[i].abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_matches_loop_oracle() {
        let m = small_model(31, 5);
        let n = m.n_state();
        let dx = m.grid.dx();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mu = 0.7;
        let got = m.rhs(&u, mu);
        for i in 0..n {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            let ux = (right - left) / (2.0 * dx);
            let uxx = (right - 2.0 * u[i] + left) / (dx * dx);
            let want = -u[i] * ux + mu * uxx;
            assert!((got[i] - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let m = small_model(21, 11);
        let zero = DVector::zeros(m.n_state());
        let (u, res) = m.step_backward_euler(&zero, 0.5).unwrap();
        assert_eq!(u.amax(), 0.0);
        assert_eq!(res, 0.0);
    }

    #[test]
    fn step_satisfies_implicit_equation() {
        let m = small_model(201, 301);
        let (u, res) = m.step_backward_euler(&m.u0, 0.05).unwrap();
        assert!(res < 1e-10);
        assert!(m.implicit_residual(&u, &m.u0, 0.05).norm() < 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = small_model(15, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = DVector::from_fn(m.n_state(), |_, _| rng.random_range(-1.0..1.0));
        let mu = 0.3;
        let jac = m.step_jacobian(u.as_slice(), mu).to_dense();
        let h = 1e-6;
        for k in 0..m.n_state() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[k] += h;
            um[k] -= h;
            let col = (m.implicit_residual(&up, &m.u0, mu) - m.implicit_residual(&um, &m.u0, mu)) / (2.0 * h);
            for i in 0..m.n_state() {
                assert!((col[i] - jac[(i, k)]).abs() < 1e-6, "({i},{k})");
            }
        }
    }

    #[test]
    fn banded_and_dense_solvers_agree() {
        let banded = small_model(61, 31);
        let dense = banded.clone().with_linear_solver(LinearSolver::Dense);
        let a = banded.solve(0.2).unwrap();
        let b = dense.solve(0.2).unwrap();
        assert!((a.states - b.states).amax() < 1e-11);
    }

    #[test]
    fn nonconvergence_is_reported_with_time_index() {
        let m = small_model(41, 3).with_newton(NewtonSettings { max_iter: 0, tol: 1e-10 });
        match m.solve(0.5) {
            Err(Error::NonConvergence { time_index, .. }) => assert_eq!(time_index, 1),
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let m = small_model(6, 3);
        let traj = m.solve(0.5).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&m.time.times(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + m.n_state());
        assert_eq!(lines[0].split(',').count(), 3);
        assert!(lines[0].starts_with("0.0000000000000000e0"));
    }
}
