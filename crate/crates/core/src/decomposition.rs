//! Feasible intervals around a basis centre and the greedy right-to-left cover of the
//! viscosity range by such intervals.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::fom::FomModel;
use crate::io::fmt_f64;
use crate::pod::{build_rom_operators, rom_error, solve_rom_with, DimensionRule, PodBasis, RomOperators, SnapshotSvd};
use crate::surrogate::ErrorModel;

/// Slack used when comparing probe positions against the domain edges.
pub const EDGE_TOL: f64 = 1e-12;

/// Anything that predicts log ε for (μ, μ_p, K).
pub trait ErrorPredictor {
    fn log_error(&mut self, mu: f64, mu_p: f64, k_pod: usize) -> Result<f64>;
}

impl<F> ErrorPredictor for F
where
    F: FnMut(f64, f64, usize) -> Result<f64>,
{
    fn log_error(&mut self, mu: f64, mu_p: f64, k_pod: usize) -> Result<f64> {
        self(mu, mu_p, k_pod)
    }
}

impl ErrorPredictor for ErrorModel {
    fn log_error(&mut self, mu: f64, mu_p: f64, k_pod: usize) -> Result<f64> {
        Ok(self.predict_log(&[(mu, mu_p, k_pod)])?[0])
    }
}

/// Memoizes another predictor per exact (μ, μ_p, K) triple.
pub struct Cached<P> {
    inner: P,
    cache: HashMap<(u64, u64, usize), f64>,
    pub calls: usize,
}

impl<P: ErrorPredictor> Cached<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            cache: HashMap::new(),
            calls: 0,
        }
    }

    pub fn distinct_queries(&self) -> usize {
        self.cache.len()
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: ErrorPredictor> ErrorPredictor for Cached<P> {
    fn log_error(&mut self, mu: f64, mu_p: f64, k_pod: usize) -> Result<f64> {
        self.calls += 1;
        let key = (mu.to_bits(), mu_p.to_bits(), k_pod);
        if let Some(v) = self.cache.get(&key) {
            return Ok(*v);
        }
        let v = self.inner.log_error(mu, mu_p, k_pod)?;
        self.cache.insert(key, v);
        Ok(v)
    }
}

/// Direct error computation: one FOM solve per centre and per probed μ.
///
/// A reduced model whose Newton iteration fails is reported as infinitely wrong.
pub struct OracleErrorModel<'a> {
    fom: &'a FomModel,
    centres: HashMap<(u64, usize), (PodBasis, RomOperators)>,
    pub fom_solves: usize,
}

impl<'a> OracleErrorModel<'a> {
    pub fn new(fom: &'a FomModel) -> Self {
        Self {
            fom,
            centres: HashMap::new(),
            fom_solves: 0,
        }
    }
}

impl ErrorPredictor for OracleErrorModel<'_> {
    fn log_error(&mut self, mu: f64, mu_p: f64, k_pod: usize) -> Result<f64> {
        let key = (mu_p.to_bits(), k_pod);
        if !self.centres.contains_key(&key) {
            let traj = self.fom.solve(mu_p)?;
            self.fom_solves += 1;
            let basis = SnapshotSvd::new(&traj)?.truncate(DimensionRule::Fixed(k_pod))?;
            let ops = build_rom_operators(&basis, self.fom)?;
            self.centres.insert(key, (basis, ops));
        }
        let (basis, ops) = &self.centres[&key];
        let truth = self.fom.solve(mu)?;
        self.fom_solves += 1;
        match solve_rom_with(ops, mu, &self.fom.time, self.fom.newton) {
            Ok(rom) => Ok(rom_error(&truth, basis, &rom)?.ln()),
            Err(e) if e.is_nonconvergence() => {
                log::debug!("reduced model at mu={mu} (centre {mu_p}, K={k_pod}) failed: {e}");
                Ok(f64::INFINITY)
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleInterval {
    pub mu_p: f64,
    pub d_l: f64,
    pub d_r: f64,
    pub eps_bar: f64,
    pub k_pod: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScanEnd {
    /// A probe exceeded the threshold.
    Threshold,
    /// The probe grid ran past the domain edge.
    Bound,
    /// The allotted number of probes all passed.
    Exhausted,
}

#[derive(Debug, Clone, Copy)]
struct Scan {
    edge: f64,
    /// Index of the probe that ended the scan (probe count + 1 when exhausted).
    index: usize,
    end: ScanEnd,
}

fn passes(p: &mut impl ErrorPredictor, mu: f64, mu_p: f64, k: usize, log_eps: f64) -> Result<bool> {
    // NaN predictions count as failures.
    Ok(p.log_error(mu, mu_p, k)? <= log_eps)
}

/// Probes μ_p + dir·i·step for i = 1, 2, … (at most `max_probes`).
///
/// When the grid jumps past `bound`, the bound itself is probed so that the edge can
/// land exactly on it.
fn scan(
    p: &mut impl ErrorPredictor,
    mu_p: f64,
    k: usize,
    log_eps: f64,
    step: f64,
    dir: f64,
    max_probes: Option<usize>,
    bound: f64,
) -> Result<Scan> {
    let mut i = 1;
    loop {
        if max_probes.is_some_and(|n| i > n) {
            return Ok(Scan {
                edge: mu_p + dir * (i - 1) as f64 * step,
                index: i,
                end: ScanEnd::Exhausted,
            });
        }
        let last = mu_p + dir * (i - 1) as f64 * step;
        let mu = mu_p + dir * i as f64 * step;
        if dir * (mu - bound) > EDGE_TOL {
            if (last - bound).abs() <= EDGE_TOL || passes(p, bound, mu_p, k, log_eps)? {
                return Ok(Scan {
                    edge: bound,
                    index: i,
                    end: ScanEnd::Bound,
                });
            }
            return Ok(Scan {
                edge: last,
                index: i,
                end: ScanEnd::Threshold,
            });
        }
        if !passes(p, mu, mu_p, k, log_eps)? {
            return Ok(Scan {
                edge: last,
                index: i,
                end: ScanEnd::Threshold,
            });
        }
        i += 1;
    }
}

fn snap(v: f64, a: f64, b: f64) -> f64 {
    if (v - a).abs() <= EDGE_TOL {
        a
    } else if (v - b).abs() <= EDGE_TOL {
        b
    } else {
        v.clamp(a, b)
    }
}

/// Widest interval around `mu_p` on the `step` grid whose probes all meet `eps_bar`.
pub fn find_feasible_interval(
    p: &mut impl ErrorPredictor,
    mu_p: f64,
    k_pod: usize,
    eps_bar: f64,
    step: f64,
    bounds: (f64, f64),
) -> Result<FeasibleInterval> {
    let (a, b) = bounds;
    if !(eps_bar > 0.0) || !(step > 0.0) || !(a <= b) {
        return Err(Error::InvalidArgument(format!(
            "need eps_bar > 0, step > 0 and a <= b (got {eps_bar}, {step}, [{a}, {b}])"
        )));
    }
    if mu_p < a - EDGE_TOL || mu_p > b + EDGE_TOL {
        return Err(Error::InvalidArgument(format!("centre {mu_p} outside [{a}, {b}]")));
    }
    let log_eps = eps_bar.ln();
    let right = scan(p, mu_p, k_pod, log_eps, step, 1.0, None, b)?;
    let left = scan(p, mu_p, k_pod, log_eps, step, -1.0, None, a)?;
    Ok(FeasibleInterval {
        mu_p,
        d_l: snap(left.edge, a, b),
        d_r: snap(right.edge, a, b),
        eps_bar,
        k_pod,
    })
}

/// Parameters of the greedy cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionConfig {
    pub a: f64,
    pub b: f64,
    pub eps0: f64,
    pub delta_r: f64,
    pub r0: f64,
    pub k_pod: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub mu_p0: f64,
    /// Outer iterations allowed (every rescan counts); `None` means 10·(b − a)/Δr.
    pub max_iterations: Option<usize>,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            a: 0.01,
            b: 1.0,
            eps0: 1e-2,
            delta_r: 5e-3,
            r0: 0.5,
            k_pod: 9,
            beta1: 1.2,
            beta2: 0.9,
            beta3: 1.4,
            mu_p0: 0.87,
            max_iterations: None,
        }
    }
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(format!("decomposition config: {m}")));
        if !(self.a < self.b) {
            return fail("need a < b");
        }
        if !(self.beta1 > 1.0) {
            return fail("beta1 must exceed 1");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("beta2 must lie in (0, 1)");
        }
        if !(self.beta3 > 1.0) {
            return fail("beta3 must exceed 1");
        }
        if !(self.delta_r > 0.0 && self.r0 > 0.0 && self.eps0 > 0.0) {
            return fail("delta_r, r0 and eps0 must be positive");
        }
        if self.k_pod == 0 {
            return fail("k_pod must be positive");
        }
        if self.mu_p0 < self.a || self.mu_p0 > self.b {
            return fail("mu_p0 must lie in [a, b]");
        }
        Ok(())
    }

    pub fn iteration_cap(&self) -> usize {
        self.max_iterations
            .unwrap_or_else(|| (10.0 * (self.b - self.a) / self.delta_r).ceil() as usize)
    }
}

/// Intervals in the order they were built (right to left).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDecomposition {
    pub intervals: Vec<FeasibleInterval>,
    /// Outer iterations used, including threshold relaxations and overlap repairs.
    pub iterations: usize,
}

impl DomainDecomposition {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "idx,mu_p,d_l,d_r,eps_bar")?;
        for (i, iv) in self.intervals.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{}",
                fmt_f64(iv.mu_p),
                fmt_f64(iv.d_l),
                fmt_f64(iv.d_r),
                fmt_f64(iv.eps_bar)
            )?;
        }
        Ok(())
    }

    /// Step plot of the threshold over μ: two rows (left and right edge) per interval.
    pub fn write_plot_data<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "idx,mu,eps_bar,mu_p")?;
        for (i, iv) in self.intervals.iter().enumerate() {
            for mu in [iv.d_l, iv.d_r] {
                writeln!(out, "{i},{},{},{}", fmt_f64(mu), fmt_f64(iv.eps_bar), fmt_f64(iv.mu_p))?;
            }
        }
        Ok(())
    }
}

/// Runs the greedy cover and also returns whatever was built before a failure.
pub fn decompose_domain_partial(
    p: &mut impl ErrorPredictor,
    cfg: &DecompositionConfig,
) -> (DomainDecomposition, Option<Error>) {
    let mut out = DomainDecomposition {
        intervals: Vec::new(),
        iterations: 0,
    };
    if let Err(e) = cfg.validate() {
        return (out, Some(e));
    }
    match greedy(p, cfg, &mut out) {
        Ok(()) => (out, None),
        Err(e) => (out, Some(e)),
    }
}

/// Greedy right-to-left cover of [a, b]; fails past the iteration cap.
///
/// Only the left end is chased: [a, b] is covered when the first interval reaches b,
/// which is guaranteed for `mu_p0 = b`.
pub fn decompose_domain(p: &mut impl ErrorPredictor, cfg: &DecompositionConfig) -> Result<DomainDecomposition> {
    match decompose_domain_partial(p, cfg) {
        (d, None) => Ok(d),
        (_, Some(e)) => Err(e),
    }
}

fn probe_count(r: f64, dr: f64) -> usize {
    // floor with a little slack so that e.g. 0.5 / 0.005 counts as 100
    (r / dr + 1e-9).floor().max(0.0) as usize + 1
}

/// Halvings toward the left edge before the candidate centre collapses onto it.
const MAX_HALVINGS: usize = 60;

fn greedy(p: &mut impl ErrorPredictor, cfg: &DecompositionConfig, out: &mut DomainDecomposition) -> Result<()> {
    let (a, b, dr, k) = (cfg.a, cfg.b, cfg.delta_r, cfg.k_pod);
    let cap = cfg.iteration_cap();
    let mut mu_p = cfg.mu_p0;
    let mut eps = cfg.eps0;
    let mut r = cfg.r0;
    let mut prev_left: Option<f64> = None;
    let mut repairs = 0;

    loop {
        // Build the interval around mu_p, relaxing or recentring as needed.
        let (left, right) = loop {
            out.iterations += 1;
            if out.iterations > cap {
                return Err(Error::IterationCap {
                    iterations: cap,
                    intervals: out.intervals.len(),
                });
            }
            let n = probe_count(r, dr);
            let log_eps = eps.ln();
            let right = scan(p, mu_p, k, log_eps, dr, 1.0, Some(n), b)?;
            if let Some(pl) = prev_left {
                if right.edge < pl - EDGE_TOL {
                    repairs += 1;
                    mu_p = if repairs >= MAX_HALVINGS { pl } else { 0.5 * (mu_p + pl) };
                    continue;
                }
            }
            let left = scan(p, mu_p, k, log_eps, dr, -1.0, Some(n), a)?;
            let first_fail = |s: &Scan| s.end == ScanEnd::Threshold && s.index == 1;
            if first_fail(&right) || first_fail(&left) {
                eps *= cfg.beta1;
                r *= cfg.beta2;
                continue;
            }
            break (left, right);
        };
        repairs = 0;
        let d_l = snap(left.edge, a, b);
        let d_r = snap(right.edge, a, b);
        out.intervals.push(FeasibleInterval {
            mu_p,
            d_l,
            d_r,
            eps_bar: eps,
            k_pod: k,
        });
        log::debug!("interval {}: centre {mu_p:.6} [{d_l:.6}, {d_r:.6}] eps {eps:.4e}", out.intervals.len() - 1);
        if d_l <= a + EDGE_TOL {
            return Ok(());
        }

        let mut next = (mu_p - cfg.beta3 * (left.index - 1) as f64 * dr).max(a);
        let log_eps = eps.ln();
        let mut halvings = 0;
        while !passes(p, d_l, next, k, log_eps)? {
            halvings += 1;
            if halvings >= MAX_HALVINGS {
                next = d_l;
                break;
            }
            next = 0.5 * (next + d_l);
        }
        // The radius starts again from r0 but must at least reach back to d_l.
        r = cfg.r0.max(d_l - next);
        prev_left = Some(d_l);
        mu_p = next;
    }
}

/// Problems found when checking a decomposition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    /// Uncovered pieces of [a, b].
    pub gaps: Vec<(f64, f64)>,
    /// (interval index, μ, predicted log ε) where the threshold is exceeded.
    pub threshold_violations: Vec<(usize, f64, f64)>,
    /// Interval indices whose threshold is below that of the interval to their right.
    pub monotonicity_violations: Vec<usize>,
    /// Interval indices whose centre lies outside the interval or the domain.
    pub shape_violations: Vec<usize>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.gaps.is_empty()
            && self.threshold_violations.is_empty()
            && self.monotonicity_violations.is_empty()
            && self.shape_violations.is_empty()
    }
}

/// Checks coverage, per-interval thresholds on the `step` grid around each centre
/// (edges included), and that thresholds never decrease from right to left.
pub fn verify_decomposition(
    decomp: &DomainDecomposition,
    p: &mut impl ErrorPredictor,
    bounds: (f64, f64),
    step: f64,
) -> Result<VerificationReport> {
    if decomp.intervals.is_empty() {
        return Err(Error::InvalidArgument("empty decomposition".into()));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("probe step must be positive".into()));
    }
    let (a, b) = bounds;
    let mut report = VerificationReport::default();

    let mut spans: Vec<(f64, f64)> = decomp.intervals.iter().map(|iv| (iv.d_l, iv.d_r)).collect();
    spans.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut reach = a;
    for (l, r) in spans {
        if l > reach + EDGE_TOL {
            report.gaps.push((reach, l.min(b)));
        }
        reach = reach.max(r);
        if reach >= b - EDGE_TOL {
            break;
        }
    }
    if reach < b - EDGE_TOL {
        report.gaps.push((reach, b));
    }

    for (idx, iv) in decomp.intervals.iter().enumerate() {
        if !(iv.d_l <= iv.mu_p && iv.mu_p <= iv.d_r) || iv.d_l < a - EDGE_TOL || iv.d_r > b + EDGE_TOL {
            report.shape_violations.push(idx);
        }
        if idx > 0 && iv.eps_bar < decomp.intervals[idx - 1].eps_bar {
            report.monotonicity_violations.push(idx);
        }
        let log_eps = iv.eps_bar.ln();
        let mut probes = vec![iv.d_l, iv.d_r];
        for dir in [1.0, -1.0] {
            let mut i = 1;
            loop {
                let mu = iv.mu_p + dir * i as f64 * step;
                if mu < iv.d_l - EDGE_TOL || mu > iv.d_r + EDGE_TOL {
                    break;
                }
                probes.push(mu);
                i += 1;
            }
        }
        for mu in probes {
            let v = p.log_error(mu, iv.mu_p, iv.k_pod)?;
            if !(v <= log_eps) {
                report.threshold_violations.push((idx, mu, v));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// log ε = log |μ − μ_p|, with a floor at the centre.
    fn distance_model(mu: f64, mu_p: f64, _k: usize) -> Result<f64> {
        Ok((mu - mu_p).abs().max(1e-12).ln())
    }

    /// Error grows as the centre moves left, forcing relaxations.
    fn steep_model(mu: f64, mu_p: f64, _k: usize) -> Result<f64> {
        Ok(((mu - mu_p).abs() / (mu_p * mu_p)).max(1e-12).ln())
    }

    #[test]
    fn feasible_interval_examples() {
        let mut m = distance_model;
        let iv = find_feasible_interval(&mut m, 0.5, 9, 0.0105, 0.001, (0.01, 1.0)).unwrap();
        assert!((iv.d_l - 0.49).abs() < 1e-12 && (iv.d_r - 0.51).abs() < 1e-12, "{iv:?}");
        // Clipped at the domain edge.
        let iv = find_feasible_interval(&mut m, 0.995, 9, 0.0105, 0.001, (0.01, 1.0)).unwrap();
        assert_eq!(iv.d_r, 1.0);
        // Always above the threshold: the interval collapses onto the centre.
        let mut above = |_: f64, _: f64, _: usize| Ok(1.0);
        let iv = find_feasible_interval(&mut above, 0.7, 9, 1e-2, 0.001, (0.01, 1.0)).unwrap();
        assert_eq!((iv.d_l, iv.d_r), (0.7, 0.7));
        assert!(find_feasible_interval(&mut m, 1.5, 9, 1e-2, 0.001, (0.01, 1.0)).is_err());
    }

    #[test]
    fn uniform_model_gives_equal_steps() {
        let cfg = DecompositionConfig {
            a: 0.0,
            b: 1.0,
            eps0: 0.055,
            delta_r: 0.01,
            r0: 0.5,
            mu_p0: 1.0,
            ..DecompositionConfig::default()
        };
        let mut m = Cached::new(distance_model);
        let d = decompose_domain(&mut m, &cfg).unwrap();
        let first = d.intervals[0];
        assert_eq!(first.d_r, 1.0);
        assert!((first.d_l - 0.95).abs() < 1e-12);
        let second = d.intervals[1];
        assert!((second.mu_p - 0.93).abs() < 1e-12);
        assert!((second.d_l - 0.88).abs() < 1e-12 && (second.d_r - 0.98).abs() < 1e-12);
        assert!(d.intervals.iter().all(|iv| iv.eps_bar == 0.055));
        for w in d.intervals.windows(2) {
            assert!(w[1].mu_p < w[0].mu_p);
        }
        let report = verify_decomposition(&d, &mut m, (0.0, 1.0), 0.01).unwrap();
        assert!(report.is_clean(), "{report:?}");
        assert!(m.calls > m.distinct_queries());
    }

    #[test]
    fn steep_model_relaxes_thresholds() {
        let cfg = DecompositionConfig {
            a: 0.05,
            b: 1.0,
            eps0: 0.02,
            delta_r: 0.005,
            mu_p0: 1.0,
            ..DecompositionConfig::default()
        };
        let mut m = steep_model;
        let d = decompose_domain(&mut m, &cfg).unwrap();
        let last = d.intervals.last().unwrap();
        assert_eq!(last.d_l, 0.05);
        assert!(last.eps_bar > cfg.eps0);
        let report = verify_decomposition(&d, &mut m, (0.05, 1.0), 0.005).unwrap();
        assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn constant_model_relaxes_until_feasible() {
        let cfg = DecompositionConfig {
            eps0: 1.0,
            ..DecompositionConfig::default()
        };
        let mut m = |_: f64, _: f64, _: usize| Ok(1.0);
        let d = decompose_domain(&mut m, &cfg).unwrap();
        // Six relaxations take the threshold from 1 past e.
        let want = 1.2f64.powi(6);
        assert!((d.intervals[0].eps_bar - want).abs() < 1e-12);
        assert_eq!(d.intervals[0].d_r, 1.0);
    }

    #[test]
    fn hopeless_model_hits_the_cap() {
        let mut m = |_: f64, _: f64, _: usize| Ok(f64::INFINITY);
        let cfg = DecompositionConfig {
            max_iterations: Some(50),
            ..DecompositionConfig::default()
        };
        let (partial, err) = decompose_domain_partial(&mut m, &cfg);
        assert!(matches!(err, Some(Error::IterationCap { iterations: 50, intervals: 0 })));
        assert!(partial.intervals.is_empty());
    }

    #[test]
    fn deleting_an_interval_leaves_a_gap() {
        let cfg = DecompositionConfig {
            a: 0.0,
            eps0: 0.055,
            delta_r: 0.01,
            mu_p0: 1.0,
            ..DecompositionConfig::default()
        };
        let mut m = distance_model;
        let mut d = decompose_domain(&mut m, &cfg).unwrap();
        d.intervals.remove(3);
        let report = verify_decomposition(&d, &mut m, (0.0, 1.0), 0.01).unwrap();
        assert_eq!(report.gaps.len(), 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut m = distance_model;
        for bad in [
            DecompositionConfig { beta1: 1.0, ..Default::default() },
            DecompositionConfig { beta2: 1.0, ..Default::default() },
            DecompositionConfig { beta3: 0.5, ..Default::default() },
            DecompositionConfig { a: 1.0, b: 0.5, ..Default::default() },
        ] {
            assert!(decompose_domain(&mut m, &bad).is_err());
        }
    }

    proptest! {
        #[test]
        fn shrinking_threshold_never_widens(
            mu_p in 0.05f64..0.95,
            eps in 1e-3f64..0.3,
            shrink in 0.1f64..1.0,
            slope in 0.5f64..20.0,
        ) {
            let mut m = move |mu: f64, c: f64, _: usize| Ok((slope * (mu - c).abs() + (mu * 7.0).sin().abs() * 1e-3).max(1e-12).ln());
            let wide = find_feasible_interval(&mut m, mu_p, 9, eps, 0.001, (0.01, 1.0)).unwrap();
            let narrow = find_feasible_interval(&mut m, mu_p, 9, eps * shrink, 0.001, (0.01, 1.0)).unwrap();
            prop_assert!(narrow.d_l >= wide.d_l - 1e-15 && narrow.d_r <= wide.d_r + 1e-15);
            prop_assert!(wide.d_l <= mu_p && mu_p <= wide.d_r);
        }

        #[test]
        fn greedy_covers_and_keeps_centres_inside(
            slope in 1.0f64..50.0,
            power in 0.0f64..2.0,
            eps0 in 1e-3f64..0.1,
        ) {
            let mu_p0 = 1.0;
            let mut m = move |mu: f64, c: f64, _: usize| Ok((slope * (mu - c).abs() / c.powf(power)).max(1e-12).ln());
            let cfg = DecompositionConfig { eps0, mu_p0, ..DecompositionConfig::default() };
            let d = decompose_domain(&mut m, &cfg).unwrap();
            let report = verify_decomposition(&d, &mut m, (cfg.a, cfg.b), cfg.delta_r).unwrap();
            prop_assert!(report.is_clean(), "{:?}", report);
            for w in d.intervals.windows(2) {
                prop_assert!(w[1].mu_p < w[0].mu_p);
            }
        }
    }
}
