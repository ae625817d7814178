//! Gaussian-process regression with a squared-exponential kernel.
//!
//! Hyperparameters (length scale, signal variance, noise variance) are fitted by
//! minimizing the negative log marginal likelihood in log space, with several
//! seeded restarts. Inputs and targets are z-scored before fitting and the prior
//! mean is zero in standardized units.

use std::f64::consts::{LN_10, PI};
use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::optim::{minimize, MinimizeOptions};
use crate::standardize::Standardizer;

/// Jitter ladder (relative to the prior variance) tried when Cholesky fails.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Which distance enters the exponent of the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    /// Squared Euclidean distance: the standard squared-exponential kernel.
    #[default]
    Squared,
    /// Plain Euclidean distance, `exp(-‖zi - zj‖ / (2ℓ²))`.
    Euclidean,
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Self::Squared),
            "euclidean" => Ok(Self::Euclidean),
            other => Err(Error::Parse(format!("unknown kernel distance '{other}'"))),
        }
    }
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Squared => "squared",
            Self::Euclidean => "euclidean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperparams {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        Self {
            length_scale: 1.0,
            signal_var: 1.0,
            noise_var: 1e-2,
        }
    }
}

impl GpHyperparams {
    pub fn new(length_scale: f64, signal_var: f64, noise_var: f64) -> Result<Self> {
        let h = Self {
            length_scale,
            signal_var,
            noise_var,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.length_scale, self.signal_var, self.noise_var]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("hyperparameters must be positive: {self:?}")))
        }
    }

    pub fn to_log(&self) -> [f64; 3] {
        [self.length_scale.ln(), self.signal_var.ln(), self.noise_var.ln()]
    }

    pub fn from_log(t: &[f64]) -> Self {
        Self {
            length_scale: t[0].exp(),
            signal_var: t[1].exp(),
            noise_var: t[2].exp(),
        }
    }
}

fn distance(a: &[f64], b: &[f64], kind: Distance) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match kind {
        Distance::Squared => d2,
        Distance::Euclidean => d2.sqrt(),
    }
}

/// `σ_φ² exp(-d/(2ℓ²)) + σ_n² δ_ij`; `same_index` supplies the Kronecker delta.
pub fn kernel(zi: &[f64], zj: &[f64], hyper: &GpHyperparams, same_index: bool, kind: Distance) -> f64 {
    let d = distance(zi, zj, kind);
    let l2 = hyper.length_scale * hyper.length_scale;
    let noise = if same_index { hyper.noise_var } else { 0.0 };
    hyper.signal_var * (-d / (2.0 * l2)).exp() + noise
}

/// Training covariance; returns (K, the noise-free part, the distances used).
fn covariance(z: &[Vec<f64>], hyper: &GpHyperparams, kind: Distance) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = z.len();
    let l2 = hyper.length_scale * hyper.length_scale;
    let mut d = DMatrix::zeros(n, n);
    let mut kf = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let dij = distance(&z[i], &z[j], kind);
            let v = hyper.signal_var * (-dij / (2.0 * l2)).exp();
            d[(i, j)] = dij;
            d[(j, i)] = dij;
            kf[(i, j)] = v;
            kf[(j, i)] = v;
        }
    }
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += hyper.noise_var;
    }
    (k, kf, d)
}

/// Cholesky with the jitter ladder. Returns the factor and the jitter actually added.
fn factor(mut k: DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let mut added = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        for i in 0..k.nrows() {
            k[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok((c, jitter));
        }
    }
    Err(Error::NotPositiveDefinite { jitter: added })
}

/// Negative log marginal likelihood and its gradient in log-hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllValue {
    pub value: f64,
    /// d/d(log ℓ), d/d(log σ_φ²), d/d(log σ_n²)
    pub grad: [f64; 3],
    pub jitter: f64,
}

/// `½ log det K + ½ yᵀK⁻¹y + (n/2) log 2π` with zero prior mean.
pub fn nll(hyper: &GpHyperparams, z: &[Vec<f64>], y: &[f64], kind: Distance) -> Result<NllValue> {
    hyper.validate()?;
    let n = z.len();
    if n == 0 || y.len() != n {
        return Err(Error::InvalidArgument("nll needs matching, nonempty inputs and targets".into()));
    }
    let (k, kf, d) = covariance(z, hyper, kind);
    let (chol, jitter) = factor(k, hyper.signal_var + hyper.noise_var)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let value = 0.5 * logdet + 0.5 * yv.dot(&alpha) + 0.5 * n as f64 * (2.0 * PI).ln();

    // W = K⁻¹ - ααᵀ; dL/dθ = ½ tr(W dK/dθ).
    let kinv = chol.inverse();
    let l2 = hyper.length_scale * hyper.length_scale;
    let mut g = [0.0; 3];
    for j in 0..n {
        for i in 0..n {
            let w = kinv[(i, j)] - alpha[i] * alpha[j];
            let kij = kf[(i, j)];
            g[0] += w * kij * d[(i, j)] / l2;
            g[1] += w * kij;
        }
        g[2] += (kinv[(j, j)] - alpha[j] * alpha[j]) * hyper.noise_var;
    }
    for v in &mut g {
        *v *= 0.5;
    }
    Ok(NllValue { value, grad: g, jitter })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpConfig {
    /// Starting point of the first restart, in standardized units.
    pub init: GpHyperparams,
    pub restarts: usize,
    pub seed: u64,
    pub distance: Distance,
    /// Standardize inputs and targets before fitting.
    pub standardize: bool,
    /// Hyperparameters are optimized on at most this many (seeded, random) points.
    pub max_opt_points: usize,
    /// The posterior is conditioned on at most this many (seeded, random) points.
    pub max_train_points: usize,
    pub max_iter: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            init: GpHyperparams::default(),
            restarts: 5,
            seed: 0,
            distance: Distance::Squared,
            standardize: true,
            max_opt_points: 300,
            max_train_points: 3000,
            max_iter: 100,
        }
    }
}

/// Log-space box for the optimizer: length scale, signal and noise variance (standardized units).
const LOG_BOUNDS: [(f64, f64); 3] = [
    (-3.0 * LN_10, 3.0 * LN_10),
    (-4.0 * LN_10, 4.0 * LN_10),
    (-10.0 * LN_10, LN_10),
];

/// Summary of a hyperparameter fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub init_nll: Option<f64>,
    pub best_nll: f64,
    pub successful_restarts: usize,
    pub opt_points: usize,
    pub train_points: usize,
}

/// Fitted GP: cached Cholesky factor and weights over the (standardized) training set.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyperparams,
    pub distance: Distance,
    pub input_scaler: Standardizer,
    pub target_scaler: Standardizer,
    /// Standardized training inputs, one row per point.
    pub train_inputs: Vec<Vec<f64>>,
    /// Standardized training targets.
    pub train_targets: Vec<f64>,
    pub jitter: f64,
    pub diagnostics: Option<FitDiagnostics>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn seeded_subset(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if m < n {
        idx.shuffle(rng);
        idx.truncate(m);
        idx.sort_unstable();
    }
    idx
}

fn scalers(z: &[Vec<f64>], y: &[f64], standardize: bool) -> Result<(Standardizer, Standardizer)> {
    if standardize {
        Ok((Standardizer::fit(z)?, Standardizer::fit_scalar(y)?))
    } else {
        Ok((Standardizer::identity(z[0].len()), Standardizer::identity(1)))
    }
}

fn check_data(z: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if z.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} inputs but {} targets", z.len(), y.len())));
    }
    let r = z.first().map_or(0, Vec::len);
    if r == 0 || z.iter().any(|row| row.len() != r) {
        return Err(Error::InvalidArgument("inputs must be nonempty rows of equal length".into()));
    }
    if z.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite training data".into()));
    }
    Ok(())
}

impl GpModel {
    /// Conditions on the data with fixed hyperparameters (no optimization).
    pub fn with_hyperparams(
        z: &[Vec<f64>],
        y: &[f64],
        hyper: GpHyperparams,
        kind: Distance,
        standardize: bool,
    ) -> Result<Self> {
        check_data(z, y)?;
        hyper.validate()?;
        let (xs, ys) = scalers(z, y, standardize)?;
        let zs: Vec<Vec<f64>> = z.iter().map(|r| xs.apply(r)).collect();
        let ys_v: Vec<f64> = y.iter().map(|v| ys.apply_scalar(*v)).collect();
        Self::condition(zs, ys_v, hyper, kind, xs, ys, None)
    }

    fn condition(
        train_inputs: Vec<Vec<f64>>,
        train_targets: Vec<f64>,
        hyper: GpHyperparams,
        distance: Distance,
        input_scaler: Standardizer,
        target_scaler: Standardizer,
        diagnostics: Option<FitDiagnostics>,
    ) -> Result<Self> {
        let (k, _, _) = covariance(&train_inputs, &hyper, distance);
        let (chol, jitter) = factor(k, hyper.signal_var + hyper.noise_var)?;
        let alpha = chol.solve(&DVector::from_column_slice(&train_targets));
        Ok(Self {
            hyper,
            distance,
            input_scaler,
            target_scaler,
            train_inputs,
            train_targets,
            jitter,
            diagnostics,
            chol,
            alpha,
        })
    }

    /// Fits hyperparameters by multi-start NLL minimization and conditions on the data.
    pub fn fit(z: &[Vec<f64>], y: &[f64], cfg: &GpConfig) -> Result<Self> {
        check_data(z, y)?;
        if z.len() < 2 {
            return Err(Error::InvalidArgument("GP fit needs at least two points".into()));
        }
        cfg.init.validate()?;
        let (xs, ys) = scalers(z, y, cfg.standardize)?;
        let zs: Vec<Vec<f64>> = z.iter().map(|r| xs.apply(r)).collect();
        let ys_v: Vec<f64> = y.iter().map(|v| ys.apply_scalar(*v)).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let opt_idx = seeded_subset(zs.len(), cfg.max_opt_points.max(2), &mut rng);
        let oz: Vec<Vec<f64>> = opt_idx.iter().map(|&i| zs[i].clone()).collect();
        let oy: Vec<f64> = opt_idx.iter().map(|&i| ys_v[i]).collect();

        let mut starts = vec![cfg.init.to_log()];
        for _ in 1..cfg.restarts.max(1) {
            starts.push([
                rng.random_range((0.05f64).ln()..(5.0f64).ln()),
                rng.random_range((0.1f64).ln()..(10.0f64).ln()),
                rng.random_range((1e-6f64).ln()..(1e-1f64).ln()),
            ]);
        }

        let objective = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = nll(&GpHyperparams::from_log(t), &oz, &oy, cfg.distance)?;
            Ok((v.value, v.grad.to_vec()))
        };
        let init_nll = objective(&starts[0]).ok().map(|v| v.0);
        let opts = MinimizeOptions {
            max_iter: cfg.max_iter,
            ..MinimizeOptions::default()
        };
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut ok = 0;
        let mut last_err = None;
        for s in &starts {
            match minimize(objective, s, &LOG_BOUNDS, opts) {
                Ok(m) if m.f.is_finite() => {
                    ok += 1;
                    if best.as_ref().is_none_or(|(f, _)| m.f < *f) {
                        best = Some((m.f, m.x));
                    }
                }
                Ok(_) => {}
                Err(e) => last_err = Some(e),
            }
        }
        let Some((best_nll, theta)) = best else {
            return Err(Error::TrainingDivergence(format!(
                "all {} GP restarts failed; last error: {}",
                starts.len(),
                last_err.map_or_else(|| "non-finite likelihood".to_string(), |e| e.to_string())
            )));
        };

        let train_idx = seeded_subset(zs.len(), cfg.max_train_points.max(2), &mut rng);
        let tz: Vec<Vec<f64>> = train_idx.iter().map(|&i| zs[i].clone()).collect();
        let ty: Vec<f64> = train_idx.iter().map(|&i| ys_v[i]).collect();
        let diagnostics = FitDiagnostics {
            init_nll,
            best_nll,
            successful_restarts: ok,
            opt_points: oz.len(),
            train_points: tz.len(),
        };
        Self::condition(tz, ty, GpHyperparams::from_log(&theta), cfg.distance, xs, ys, Some(diagnostics))
    }

    pub fn input_dim(&self) -> usize {
        self.input_scaler.dim()
    }

    /// Posterior mean and variance at each query row, in original target units.
    pub fn predict(&self, queries: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let r = self.input_dim();
        if queries.iter().any(|q| q.len() != r) {
            return Err(Error::InvalidArgument(format!("queries must have {r} features")));
        }
        let n = self.train_inputs.len();
        let scale = self.target_scaler.std[0];
        let mut means = Vec::with_capacity(queries.len());
        let mut vars = Vec::with_capacity(queries.len());
        let mut kstar = DVector::zeros(n);
        for q in queries {
            let qs = self.input_scaler.apply(q);
            for (i, zi) in self.train_inputs.iter().enumerate() {
                kstar[i] = kernel(zi, &qs, &self.hyper, false, self.distance);
            }
            let mean = kstar.dot(&self.alpha);
            let v = self.chol.l_dirty().solve_lower_triangular(&kstar).expect("triangular factor is nonsingular");
            let prior = self.hyper.signal_var + self.hyper.noise_var;
            let var = (prior - v.norm_squared()).max(0.0);
            means.push(self.target_scaler.invert_scalar(mean));
            vars.push(var * scale * scale);
        }
        Ok((means, vars))
    }

    /// Posterior mean only; skips the triangular solve needed for the variance.
    pub fn predict_mean(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
        let r = self.input_dim();
        if queries.iter().any(|q| q.len() != r) {
            return Err(Error::InvalidArgument(format!("queries must have {r} features")));
        }
        Ok(queries
            .iter()
            .map(|q| {
                let qs = self.input_scaler.apply(q);
                let mean: f64 = self
                    .train_inputs
                    .iter()
                    .zip(self.alpha.iter())
                    .map(|(zi, a)| a * kernel(zi, &qs, &self.hyper, false, self.distance))
                    .sum();
                self.target_scaler.invert_scalar(mean)
            })
            .collect())
    }

    /// NLL of the conditioned training set at the fitted hyperparameters.
    pub fn training_nll(&self) -> Result<f64> {
        nll(&self.hyper, &self.train_inputs, &self.train_targets, self.distance).map(|v| v.value)
    }

    /// Self-contained text dump: hyperparameters, scalers and the training set.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "mplrom-gp 1");
        let _ = writeln!(s, "distance {}", self.distance);
        let _ = writeln!(s, "length_scale {}", fmt_f64(self.hyper.length_scale));
        let _ = writeln!(s, "signal_var {}", fmt_f64(self.hyper.signal_var));
        let _ = writeln!(s, "noise_var {}", fmt_f64(self.hyper.noise_var));
        let _ = writeln!(s, "input_mean {}", join(&self.input_scaler.mean));
        let _ = writeln!(s, "input_std {}", join(&self.input_scaler.std));
        let _ = writeln!(s, "target_mean {}", fmt_f64(self.target_scaler.mean[0]));
        let _ = writeln!(s, "target_std {}", fmt_f64(self.target_scaler.std[0]));
        let _ = writeln!(s, "train {} {}", self.train_inputs.len(), self.input_dim());
        for (z, y) in self.train_inputs.iter().zip(&self.train_targets) {
            let _ = writeln!(s, "{},{}", join(z), fmt_f64(*y));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |what: &str| Error::Parse(format!("GP model file: {what}"));
        if lines.next().map(str::trim) != Some("mplrom-gp 1") {
            return Err(bad("missing 'mplrom-gp 1' header"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {name}")))?;
            line.strip_prefix(name)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| bad(&format!("expected {name}, found '{line}'")))
        };
        let nums = |v: &str| -> Result<Vec<f64>> {
            v.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect()
        };
        let num = |v: String| -> Result<f64> { v.parse::<f64>().map_err(|e| Error::Parse(e.to_string())) };
        let distance: Distance = field("distance")?.parse()?;
        let hyper = GpHyperparams::new(num(field("length_scale")?)?, num(field("signal_var")?)?, num(field("noise_var")?)?)?;
        let input_scaler = Standardizer {
            mean: nums(&field("input_mean")?)?,
            std: nums(&field("input_std")?)?,
        };
        let target_scaler = Standardizer {
            mean: vec![num(field("target_mean")?)?],
            std: vec![num(field("target_std")?)?],
        };
        let header = field("train")?;
        let mut parts = header.split_whitespace();
        let n: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("train count"))?;
        let r: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("train dim"))?;
        let mut zs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let row = nums(lines.next().ok_or_else(|| bad("truncated training set"))?)?;
            if row.len() != r + 1 {
                return Err(bad("training row width"));
            }
            ys.push(row[r]);
            zs.push(row[..r].to_vec());
        }
        Self::condition(zs, ys, hyper, distance, input_scaler, target_scaler, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_set(n: usize, r: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<Vec<f64>> = (0..n).map(|_| (0..r).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y = z.iter().map(|p| p.iter().map(|v| v.sin()).sum::<f64>() + rng.random_range(-0.1..0.1)).collect();
        (z, y)
    }

    #[test]
    fn kernel_values() {
        let h = GpHyperparams::new(1.0, 1.0, 0.0f64.max(1e-300)).unwrap();
        let a = [0.0, 0.0];
        let b = [1.0, 1.0]; // squared distance 2
        assert!((kernel(&a, &b, &h, false, Distance::Squared) - (-1.0f64).exp()).abs() < 1e-12);
        let h2 = GpHyperparams::new(0.7, 2.0, 0.3).unwrap();
        assert!((kernel(&a, &a, &h2, true, Distance::Squared) - 2.3).abs() < 1e-12);
        let far = [1e3, 1e3];
        assert_eq!(kernel(&a, &far, &h2, false, Distance::Squared), 0.0);
        // Unsquared variant uses the plain norm.
        let e = kernel(&a, &b, &h, false, Distance::Euclidean);
        assert!((e - (-(2.0f64).sqrt() / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn nll_single_point() {
        // k11 = 1, y = 0 → ½ log 2π
        let h = GpHyperparams::new(1.0, 0.5, 0.5).unwrap();
        let v = nll(&h, &[vec![0.3]], &[0.0], Distance::Squared).unwrap();
        assert!((v.value - 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((v.value - 0.9189385332).abs() < 1e-9);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        for kind in [Distance::Squared, Distance::Euclidean] {
            let (z, y) = random_set(10, 2, 21);
            let h = GpHyperparams::new(0.8, 1.3, 0.05).unwrap();
            let g = nll(&h, &z, &y, kind).unwrap().grad;
            let t = h.to_log();
            let step = 1e-5;
            for k in 0..3 {
                let mut tp = t;
                let mut tm = t;
                tp[k] += step;
                tm[k] -= step;
                let fp = nll(&GpHyperparams::from_log(&tp), &z, &y, kind).unwrap().value;
                let fm = nll(&GpHyperparams::from_log(&tm), &z, &y, kind).unwrap().value;
                let fd = (fp - fm) / (2.0 * step);
                let rel = (fd - g[k]).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-5, "{kind:?} component {k}: analytic {} vs fd {fd}", g[k]);
            }
        }
    }

    #[test]
    fn duplicated_points_stay_defined() {
        let z = vec![vec![0.1], vec![0.1], vec![0.5]];
        let y = vec![1.0, 1.0, 2.0];
        let h = GpHyperparams::new(1.0, 1.0, 1e-3).unwrap();
        assert!(nll(&h, &z, &y, Distance::Squared).unwrap().value.is_finite());
    }

    #[test]
    fn noiseless_interpolation_and_prior_reversion() {
        let z: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.4]).collect();
        let y: Vec<f64> = z.iter().map(|p| p[0].cos()).collect();
        let h = GpHyperparams::new(0.7, 1.0, 1e-12).unwrap();
        let gp = GpModel::with_hyperparams(&z, &y, h, Distance::Squared, false).unwrap();
        let (m, _) = gp.predict(&z).unwrap();
        for (a, b) in m.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6);
        }
        let (m, v) = gp.predict(&[vec![1e4]]).unwrap();
        assert!(m[0].abs() < 1e-12);
        assert!((v[0] - (h.signal_var + h.noise_var)).abs() < 1e-12);
    }

    #[test]
    fn variance_bounded_by_prior() {
        let (z, y) = random_set(30, 2, 5);
        let h = GpHyperparams::new(0.5, 1.7, 0.01).unwrap();
        let gp = GpModel::with_hyperparams(&z, &y, h, Distance::Squared, false).unwrap();
        let (q, _) = random_set(50, 2, 6);
        let (_, v) = gp.predict(&q).unwrap();
        assert!(v.iter().all(|&x| x >= 0.0 && x <= h.signal_var + h.noise_var + 1e-8));
    }

    #[test]
    fn sine_benchmark() {
        let z: Vec<Vec<f64>> = (0..30).map(|i| vec![2.0 * PI * i as f64 / 29.0]).collect();
        let y: Vec<f64> = z.iter().map(|p| p[0].sin()).collect();
        let gp = GpModel::fit(&z, &y, &GpConfig::default()).unwrap();
        let q: Vec<Vec<f64>> = (0..97).map(|i| vec![2.0 * PI * (i as f64 + 0.5) / 97.0]).collect();
        let m = gp.predict_mean(&q).unwrap();
        let rmse = (q.iter().zip(&m).map(|(x, p)| (x[0].sin() - p).powi(2)).sum::<f64>() / q.len() as f64).sqrt();
        assert!(rmse < 1e-2, "rmse {rmse}");
    }

    #[test]
    fn fit_is_deterministic_and_improves_nll() {
        let (z, y) = random_set(40, 2, 8);
        let cfg = GpConfig { seed: 3, ..GpConfig::default() };
        let a = GpModel::fit(&z, &y, &cfg).unwrap();
        let b = GpModel::fit(&z, &y, &cfg).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let d = a.diagnostics.clone().unwrap();
        assert!(d.best_nll <= d.init_nll.unwrap() + 1e-12);
    }

    #[test]
    fn constant_targets_predict_constant() {
        let z: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y = vec![-3.25; 20];
        let gp = GpModel::fit(&z, &y, &GpConfig::default()).unwrap();
        let m = gp.predict_mean(&[vec![3.5, 2.0], vec![100.0, -4.0]]).unwrap();
        assert!(m.iter().all(|v| (v + 3.25).abs() < 1e-6));
    }

    #[test]
    fn text_round_trip_predicts_identically() {
        let (z, y) = random_set(25, 3, 12);
        let gp = GpModel::fit(&z, &y, &GpConfig::default()).unwrap();
        let back = GpModel::from_text(&gp.to_text()).unwrap();
        let (q, _) = random_set(10, 3, 13);
        let (m1, v1) = gp.predict(&q).unwrap();
        let (m2, v2) = back.predict(&q).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn permutation_invariance() {
        let (z, y) = random_set(20, 2, 30);
        let h = GpHyperparams::new(0.9, 1.0, 0.02).unwrap();
        let gp = GpModel::with_hyperparams(&z, &y, h, Distance::Squared, true).unwrap();
        let mut order: Vec<usize> = (0..20).collect();
        order.reverse();
        let zp: Vec<Vec<f64>> = order.iter().map(|&i| z[i].clone()).collect();
        let yp: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let gpp = GpModel::with_hyperparams(&zp, &yp, h, Distance::Squared, true).unwrap();
        let (q, _) = random_set(7, 2, 31);
        let a = gp.predict_mean(&q).unwrap();
        let b = gpp.predict_mean(&q).unwrap();
        for (x, w) in a.iter().zip(&b) {
            assert!((x - w).abs() < 1e-9);
        }
    }
}
