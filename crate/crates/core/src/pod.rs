//! Local POD bases, tensorial Galerkin reduced models and their error measures.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fom::{FomModel, NewtonSettings, SolveStats, TimeGrid, Trajectory};
use crate::io::{fmt_f64, write_matrix};
use crate::linalg::solve_small_in_place;

/// How many left singular vectors to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimensionRule {
    Fixed(usize),
    /// Smallest m with captured energy I(m) >= gamma.
    Energy(f64),
}

/// Orthonormal POD basis built from the trajectory at `mu_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub mu_p: f64,
    /// n_state × k_pod, orthonormal columns.
    pub u_matrix: DMatrix<f64>,
    /// All singular values of the snapshot matrix, nonincreasing.
    pub singular_values: Vec<f64>,
    pub k_pod: usize,
}

/// Left singular vectors and spectrum of a snapshot matrix, before truncation.
#[derive(Debug, Clone)]
pub struct SnapshotSvd {
    pub mu_p: f64,
    pub left_vectors: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

impl SnapshotSvd {
    pub fn new(traj: &Trajectory) -> Result<Self> {
        let x = &traj.states;
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(Error::InvalidArgument("empty snapshot matrix".into()));
        }
        let svd = x.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors were requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let left_vectors = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
        let tol = singular_values[0] * x.nrows().max(x.ncols()) as f64 * f64::EPSILON;
        let rank = singular_values.iter().filter(|&&s| s > tol).count();
        Ok(Self {
            mu_p: traj.mu,
            left_vectors,
            singular_values,
            rank,
        })
    }

    /// Captured energy fraction I(m) of the leading m modes.
    pub fn energy(&self, m: usize) -> f64 {
        energy_fraction(&self.singular_values, m)
    }

    pub fn dimension_for(&self, rule: DimensionRule) -> Result<usize> {
        match rule {
            DimensionRule::Fixed(k) => Ok(k),
            DimensionRule::Energy(gamma) => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "energy fraction must lie in (0, 1], got {gamma}"
                    )));
                }
                let n = self.singular_values.len();
                Ok((1..=n)
                    .find(|&m| self.energy(m) >= gamma - 1e-15)
                    .unwrap_or(n))
            }
        }
    }

    pub fn truncate(&self, rule: DimensionRule) -> Result<PodBasis> {
        let k = self.dimension_for(rule)?;
        if k == 0 {
            return Err(Error::InvalidArgument("basis dimension must be at least 1".into()));
        }
        if k > self.rank {
            return Err(Error::RankDeficient {
                requested: k,
                rank: self.rank,
            });
        }
        Ok(PodBasis {
            mu_p: self.mu_p,
            u_matrix: self.left_vectors.columns(0, k).into_owned(),
            singular_values: self.singular_values.clone(),
            k_pod: k,
        })
    }
}

/// I(m) = Σ_{i<=m} λ_i² / Σ λ_i²
pub fn energy_fraction(singular_values: &[f64], m: usize) -> f64 {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1.0;
    }
    singular_values.iter().take(m).map(|s| s * s).sum::<f64>() / total
}

/// Builds the POD basis of a trajectory with a fixed size or an energy criterion.
pub fn compute_pod_basis(traj: &Trajectory, rule: DimensionRule) -> Result<PodBasis> {
    SnapshotSvd::new(traj)?.truncate(rule)
}

/// Basis size chosen from the singular value tail alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SvdDimension {
    pub k: usize,
    /// False when even the full spectrum misses the threshold; `k` is then the full rank.
    pub reached: bool,
}

/// Smallest K >= 1 with sqrt(Σ_{i>K} λ_i²) <= eps_bar.
pub fn select_dimension_by_svd(singular_values: &[f64], eps_bar: f64) -> Result<SvdDimension> {
    if !(eps_bar > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {eps_bar}")));
    }
    if singular_values.is_empty() {
        return Err(Error::InvalidArgument("empty spectrum".into()));
    }
    // tail[k] = Σ_{i>=k} λ_i² (0-based)
    let mut tail = vec![0.0; singular_values.len() + 1];
    for i in (0..singular_values.len()).rev() {
        tail[i] = tail[i + 1] + singular_values[i] * singular_values[i];
    }
    let eps2 = eps_bar * eps_bar;
    match (1..=singular_values.len()).find(|&k| tail[k] <= eps2) {
        Some(k) => Ok(SvdDimension { k, reached: true }),
        None => Ok(SvdDimension {
            k: singular_values.len(),
            reached: false,
        }),
    }
}

/// Reduced operators of the tensorial POD Galerkin model.
#[derive(Debug, Clone, PartialEq)]
pub struct RomOperators {
    pub mu_p: f64,
    /// Uᵀ A_xx U
    pub b_lin: DMatrix<f64>,
    /// Row-major K×K×K, `t_quad[(i*K + j)*K + k] = <u_i, u_j ⊙ (A_x u_k)>`.
    pub t_quad: Vec<f64>,
    /// Uᵀ u0
    pub x0_red: DVector<f64>,
    /// `t_quad` symmetrized in its last two indices; drives the Jacobian.
    t_sym: Vec<f64>,
}

impl RomOperators {
    pub fn new(mu_p: f64, b_lin: DMatrix<f64>, t_quad: Vec<f64>, x0_red: DVector<f64>) -> Self {
        let k = x0_red.len();
        assert_eq!(b_lin.shape(), (k, k));
        assert_eq!(t_quad.len(), k * k * k);
        let mut t_sym = vec![0.0; k * k * k];
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    t_sym[(i * k + j) * k + l] = t_quad[(i * k + j) * k + l] + t_quad[(i * k + l) * k + j];
                }
            }
        }
        Self {
            mu_p,
            b_lin,
            t_quad,
            x0_red,
            t_sym,
        }
    }

    pub fn k_pod(&self) -> usize {
        self.x0_red.len()
    }

    pub fn t(&self, i: usize, j: usize, l: usize) -> f64 {
        let k = self.k_pod();
        self.t_quad[(i * k + j) * k + l]
    }

    /// Quadratic term q_i(x) = -Σ_{j,l} T[i][j][l] x_j x_l.
    pub fn quadratic(&self, x: &DVector<f64>) -> DVector<f64> {
        let k = self.k_pod();
        DVector::from_fn(k, |i, _| {
            let mut s = 0.0;
            for j in 0..k {
                for l in 0..k {
                    s += self.t(i, j, l) * x[j] * x[l];
                }
            }
            -s
        })
    }

    /// Reduced right-hand side `mu B x + q(x)`.
    pub fn rhs(&self, x: &DVector<f64>, mu: f64) -> DVector<f64> {
        &self.b_lin * x * mu + self.quadratic(x)
    }
}

/// Precomputes Uᵀ A_xx U, the quadratic tensor and the reduced initial state.
pub fn build_rom_operators(basis: &PodBasis, fom: &FomModel) -> Result<RomOperators> {
    let u = &basis.u_matrix;
    if u.nrows() != fom.n_state() {
        return Err(Error::InvalidArgument(format!(
            "basis has {} rows, model has {} states",
            u.nrows(),
            fom.n_state()
        )));
    }
    let k = basis.k_pod;
    let axx_u = fom.a_xx.mul_mat(u);
    let ax_u = fom.a_x.mul_mat(u);
    let b_lin = u.transpose() * axx_u;
    let n = u.nrows();
    let mut t_quad = vec![0.0; k * k * k];
    let mut w = vec![0.0; n];
    for i in 0..k {
        for j in 0..k {
            for r in 0..n {
                w[r] = u[(r, i)] * u[(r, j)];
            }
            for l in 0..k {
                let col = ax_u.column(l);
                t_quad[(i * k + j) * k + l] = w.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            }
        }
    }
    let x0_red = u.transpose() * &fom.u0;
    let ops = RomOperators::new(basis.mu_p, b_lin, t_quad, x0_red);
    if ops.b_lin.iter().chain(ops.t_quad.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite reduced operator".into()));
    }
    Ok(ops)
}

/// Reduced coordinates over the time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RomTrajectory {
    pub mu: f64,
    /// K × N_t
    pub red_states: DMatrix<f64>,
    pub stats: SolveStats,
}

/// Backward-Euler/Newton integration of the reduced model.
pub fn solve_rom(ops: &RomOperators, mu: f64, time: &TimeGrid) -> Result<RomTrajectory> {
    solve_rom_with(ops, mu, time, NewtonSettings::default())
}

pub fn solve_rom_with(
    ops: &RomOperators,
    mu: f64,
    time: &TimeGrid,
    newton: NewtonSettings,
) -> Result<RomTrajectory> {
    if !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("viscosity must be finite, got {mu}")));
    }
    let k = ops.k_pod();
    let nt = time.n_points;
    let dt = time.dt();
    let mut red_states = DMatrix::zeros(k, nt);
    red_states.set_column(0, &ops.x0_red);

    // Row-major copy of mu*B for cache-friendly access.
    let mb: Vec<f64> = (0..k * k).map(|idx| mu * ops.b_lin[(idx / k, idx % k)]).collect();
    let mut prev = ops.x0_red.as_slice().to_vec();
    let mut x = prev.clone();
    let mut m = vec![0.0; k * k];
    let mut jac = vec![0.0; k * k];
    let mut g = vec![0.0; k];
    let mut stats = SolveStats::default();

    for step in 1..nt {
        x.copy_from_slice(&prev);
        let mut converged = false;
        let mut res_norm = f64::INFINITY;
        for it in 0..=newton.max_iter {
            // M[i][j] = Σ_l S[i][j][l] x_l, so q = -½ M x and dq/dx = -M.
            for row in 0..k * k {
                let s = &ops.t_sym[row * k..(row + 1) * k];
                m[row] = s.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            }
            for i in 0..k {
                let mut f = 0.0;
                for j in 0..k {
                    f += (mb[i * k + j] - 0.5 * m[i * k + j]) * x[j];
                }
                g[i] = x[i] - prev[i] - dt * f;
            }
            res_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !res_norm.is_finite() {
                break;
            }
            if res_norm < newton.tol {
                stats.newton_iterations += it;
                converged = true;
                break;
            }
            if it == newton.max_iter {
                break;
            }
            for i in 0..k {
                for j in 0..k {
                    let id = if i == j { 1.0 } else { 0.0 };
                    jac[i * k + j] = id - dt * (mb[i * k + j] - m[i * k + j]);
                }
                g[i] = -g[i];
            }
            solve_small_in_place(&mut jac, &mut g, k)?;
            for i in 0..k {
                x[i] += g[i];
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                time_index: step,
                iterations: newton.max_iter,
                residual: res_norm,
            });
        }
        stats.max_residual = stats.max_residual.max(res_norm);
        red_states.column_mut(step).copy_from_slice(&x);
        prev.copy_from_slice(&x);
    }
    Ok(RomTrajectory {
        mu,
        red_states,
        stats,
    })
}

/// Frobenius norm of `X - U X̃` over all time columns (absolute error).
pub fn rom_error(fom_traj: &Trajectory, basis: &PodBasis, rom_traj: &RomTrajectory) -> Result<f64> {
    if fom_traj.n_times() != rom_traj.red_states.ncols() {
        return Err(Error::InvalidArgument(format!(
            "time columns differ: {} vs {}",
            fom_traj.n_times(),
            rom_traj.red_states.ncols()
        )));
    }
    if basis.k_pod != rom_traj.red_states.nrows() {
        return Err(Error::InvalidArgument("basis and reduced trajectory dimensions differ".into()));
    }
    let lifted = &basis.u_matrix * &rom_traj.red_states;
    Ok((&fom_traj.states - lifted).norm())
}

/// Frobenius norm of the full-model backward-Euler residuals of the lifted reduced solution.
pub fn residual_indicator(
    fom: &FomModel,
    basis: &PodBasis,
    rom_traj: &RomTrajectory,
    mu: f64,
) -> Result<f64> {
    if basis.u_matrix.nrows() != fom.n_state() || basis.k_pod != rom_traj.red_states.nrows() {
        return Err(Error::InvalidArgument("basis, model and reduced trajectory disagree".into()));
    }
    let lifted = &basis.u_matrix * &rom_traj.red_states;
    Ok(lifted_residual_norm(fom, &lifted, mu))
}

/// ρ for a matrix of full-order states (columns are time points).
pub fn lifted_residual_norm(fom: &FomModel, states: &DMatrix<f64>, mu: f64) -> f64 {
    let mut sum = 0.0;
    for j in 1..states.ncols() {
        let cur = states.column(j).into_owned();
        let prev = states.column(j - 1).into_owned();
        sum += fom.implicit_residual(&cur, &prev, mu).norm_squared();
    }
    sum.sqrt()
}

impl PodBasis {
    /// Writes the spectrum as `index,singular_value` CSV.
    pub fn write_singular_values<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# mu_p = {}", fmt_f64(self.mu_p))?;
        writeln!(out, "# k_pod = {}", self.k_pod)?;
        writeln!(out, "index,singular_value")?;
        for (i, s) in self.singular_values.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, fmt_f64(*s))?;
        }
        Ok(())
    }

    /// Writes U as a headerless CSV matrix (n_state rows).
    pub fn write_basis<W: Write>(&self, mut out: W) -> Result<()> {
        write_matrix(&mut out, &self.u_matrix)
    }

    /// ‖X - U Uᵀ X‖_F of the basis' own snapshots, from the spectrum.
    pub fn projection_error(&self) -> f64 {
        self.singular_values
            .iter()
            .skip(self.k_pod)
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }
}
