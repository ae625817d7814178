//! Training corpora: local-ROM error samples and basis-dimension samples, CSV
//! persistence, and seeded splits.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fom::{FomModel, Trajectory};
use crate::io::{fmt_f64, write_metadata, CsvTable};
use crate::pod::{
    build_rom_operators, residual_indicator, rom_error, solve_rom_with, DimensionRule, PodBasis, RomOperators,
    SnapshotSvd,
};

pub const ERROR_HEADER: [&str; 5] = ["mu", "mu_p", "k_pod", "log_err", "log_residual"];
pub const DIMENSION_HEADER: [&str; 3] = ["mu_p", "k_pod", "log_err"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    pub mu: f64,
    pub mu_p: f64,
    pub k_pod: usize,
    /// Natural log of the ROM error.
    pub log_err: f64,
    /// Natural log of the lifted-state residual norm.
    pub log_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionRecord {
    pub mu_p: f64,
    pub k_pod: usize,
    /// Natural log of the ROM error at μ = μ_p.
    pub log_err: f64,
}

/// Parameter grid of the error corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrid {
    pub mu_p: Vec<f64>,
    pub mu: Vec<f64>,
    pub k_pod: Vec<usize>,
}

fn ladder(count: usize, step_denominator: f64, stride: usize) -> Vec<f64> {
    (1..=count).map(|i| (i * stride) as f64 / step_denominator).collect()
}

impl ErrorGrid {
    /// μ_p ∈ {0.1, …, 1}, μ ∈ {0.01, …, 1}, K ∈ {4, …, 15}: 12000 samples.
    pub fn full() -> Self {
        Self {
            mu_p: ladder(10, 10.0, 1),
            mu: ladder(100, 100.0, 1),
            k_pod: (4..=15).collect(),
        }
    }

    /// 5 × 25 × 6 = 750 samples for quick runs.
    pub fn ci() -> Self {
        Self {
            mu_p: ladder(5, 10.0, 2),
            mu: ladder(25, 100.0, 4),
            k_pod: (4..=15).step_by(2).collect(),
        }
    }

    pub fn n_records(&self) -> usize {
        self.mu_p.len() * self.mu.len() * self.k_pod.len()
    }

    fn validate(&self) -> Result<()> {
        if self.mu_p.is_empty() || self.mu.is_empty() || self.k_pod.is_empty() {
            return Err(Error::InvalidArgument("error grid lists must be nonempty".into()));
        }
        validate_k(&self.k_pod)
    }
}

fn validate_k(k: &[usize]) -> Result<()> {
    if k.is_empty() {
        return Err(Error::InvalidArgument("basis dimension list is empty".into()));
    }
    if k.contains(&0) {
        return Err(Error::InvalidArgument("basis dimensions must be positive".into()));
    }
    Ok(())
}

/// 0.01 + 0.0013·i while ≤ 0.9956 (759 values).
pub fn dimension_mu_p_grid() -> Vec<f64> {
    spaced_grid(0.01, 0.0013, 0.9956)
}

/// Coarser dimension grid for quick runs: every tenth value of the default grid.
pub fn dimension_mu_p_grid_ci() -> Vec<f64> {
    dimension_mu_p_grid().into_iter().step_by(10).collect()
}

/// Basis dimensions of the dimension corpus.
pub fn dimension_k_list() -> Vec<usize> {
    (4..=15).collect()
}

pub fn spaced_grid(start: f64, step: f64, last: f64) -> Vec<f64> {
    (0..)
        .map(|i| start + step * i as f64)
        .take_while(|v| *v <= last + 1e-12)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerationStats {
    pub fom_solves: usize,
    pub rom_solves: usize,
    /// Distinct (μ, μ_p) pairs whose ROM error required a high-fidelity truth.
    pub truth_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDataset {
    pub records: Vec<ErrorRecord>,
    pub stats: GenerationStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionDataset {
    pub records: Vec<DimensionRecord>,
    pub stats: GenerationStats,
}

/// Reduced operators for every K of one centre.
struct LocalModels {
    bases: Vec<(PodBasis, RomOperators)>,
}

fn local_models(fom: &FomModel, traj: &Trajectory, ks: &[usize]) -> Result<LocalModels> {
    let svd = SnapshotSvd::new(traj)?;
    let bases = ks
        .iter()
        .map(|&k| {
            let wrap = |e: Error| Error::SampleFailure {
                mu: traj.mu,
                mu_p: traj.mu,
                k_pod: Some(k),
                source: Box::new(e),
            };
            let basis = svd.truncate(DimensionRule::Fixed(k)).map_err(wrap)?;
            let ops = build_rom_operators(&basis, fom).map_err(wrap)?;
            Ok((basis, ops))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalModels { bases })
}

fn solve_all(fom: &FomModel, mus: &[f64]) -> Result<Vec<Trajectory>> {
    mus.par_iter()
        .map(|&mu| {
            fom.solve(mu).map_err(|e| Error::SampleFailure {
                mu,
                mu_p: mu,
                k_pod: None,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Log error and log residual of one local ROM against a truth trajectory.
fn evaluate_sample(
    fom: &FomModel,
    truth: &Trajectory,
    basis: &PodBasis,
    ops: &RomOperators,
) -> Result<(f64, f64)> {
    let mu = truth.mu;
    let rom = solve_rom_with(ops, mu, &fom.time, fom.newton)?;
    let err = rom_error(truth, basis, &rom)?;
    let res = residual_indicator(fom, basis, &rom, mu)?;
    let (le, lr) = (err.ln(), res.ln());
    if !le.is_finite() || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "error {err:e} or residual {res:e} has no finite logarithm"
        )));
    }
    Ok((le, lr))
}

/// Builds the (μ, μ_p, K) error corpus in grid order (μ_p, then μ, then K).
///
/// One FOM solve per listed μ_p (for the bases) and one per listed μ (for the truths);
/// every ROM is derived from the cached bases.
pub fn generate_error_dataset(fom: &FomModel, grid: &ErrorGrid) -> Result<ErrorDataset> {
    grid.validate()?;
    let centre_trajs = solve_all(fom, &grid.mu_p)?;
    let truths = solve_all(fom, &grid.mu)?;
    let locals = centre_trajs
        .par_iter()
        .map(|t| local_models(fom, t, &grid.k_pod))
        .collect::<Result<Vec<_>>>()?;

    let nk = grid.k_pod.len();
    let nmu = grid.mu.len();
    let records = (0..grid.n_records())
        .into_par_iter()
        .map(|idx| {
            let (p, rest) = (idx / (nmu * nk), idx % (nmu * nk));
            let (m, k) = (rest / nk, rest % nk);
            let (basis, ops) = &locals[p].bases[k];
            let truth = &truths[m];
            let (log_err, log_residual) =
                evaluate_sample(fom, truth, basis, ops).map_err(|e| Error::SampleFailure {
                    mu: truth.mu,
                    mu_p: grid.mu_p[p],
                    k_pod: Some(grid.k_pod[k]),
                    source: Box::new(e),
                })?;
            Ok(ErrorRecord {
                mu: truth.mu,
                mu_p: grid.mu_p[p],
                k_pod: grid.k_pod[k],
                log_err,
                log_residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorDataset {
        stats: GenerationStats {
            fom_solves: grid.mu_p.len() + grid.mu.len(),
            rom_solves: records.len(),
            truth_evaluations: grid.mu_p.len() * grid.mu.len(),
        },
        records,
    })
}

/// One record per (μ_p, K) with the error of the ROM evaluated at its own centre.
pub fn generate_dimension_dataset(fom: &FomModel, mu_p: &[f64], ks: &[usize]) -> Result<DimensionDataset> {
    validate_k(ks)?;
    if mu_p.is_empty() {
        return Err(Error::InvalidArgument("centre list is empty".into()));
    }
    let per_centre = mu_p
        .par_iter()
        .map(|&c| {
            let traj = fom.solve(c).map_err(|e| Error::SampleFailure {
                mu: c,
                mu_p: c,
                k_pod: None,
                source: Box::new(e),
            })?;
            let local = local_models(fom, &traj, ks)?;
            local
                .bases
                .iter()
                .map(|(basis, ops)| {
                    let (log_err, _) = evaluate_sample(fom, &traj, basis, ops).map_err(|e| Error::SampleFailure {
                        mu: c,
                        mu_p: c,
                        k_pod: Some(basis.k_pod),
                        source: Box::new(e),
                    })?;
                    Ok(DimensionRecord {
                        mu_p: c,
                        k_pod: basis.k_pod,
                        log_err,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<DimensionRecord> = per_centre.into_iter().flatten().collect();
    Ok(DimensionDataset {
        stats: GenerationStats {
            fom_solves: mu_p.len(),
            rom_solves: records.len(),
            truth_evaluations: mu_p.len(),
        },
        records,
    })
}

/// Recomputes (log ε, log ρ) for one triple from scratch.
pub fn replay_sample(fom: &FomModel, mu: f64, mu_p: f64, k_pod: usize) -> Result<(f64, f64)> {
    let centre = fom.solve(mu_p)?;
    let local = local_models(fom, &centre, &[k_pod])?;
    let truth = fom.solve(mu)?;
    let (basis, ops) = &local.bases[0];
    evaluate_sample(fom, &truth, basis, ops)
}

pub fn write_error_csv<W: Write>(out: &mut W, records: &[ErrorRecord], meta: &[(String, String)]) -> Result<()> {
    write_metadata(out, meta)?;
    writeln!(out, "{}", ERROR_HEADER.join(","))?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(r.mu),
            fmt_f64(r.mu_p),
            r.k_pod,
            fmt_f64(r.log_err),
            fmt_f64(r.log_residual)
        )?;
    }
    Ok(())
}

pub fn write_dimension_csv<W: Write>(
    out: &mut W,
    records: &[DimensionRecord],
    meta: &[(String, String)],
) -> Result<()> {
    write_metadata(out, meta)?;
    writeln!(out, "{}", DIMENSION_HEADER.join(","))?;
    for r in records {
        writeln!(out, "{},{},{}", fmt_f64(r.mu_p), r.k_pod, fmt_f64(r.log_err))?;
    }
    Ok(())
}

fn to_k(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Parse(format!("k_pod must be a positive integer, got {v}")))
    }
}

pub fn read_error_csv<R: BufRead>(input: R) -> Result<(Vec<ErrorRecord>, Vec<(String, String)>)> {
    let table = CsvTable::read(input)?;
    table.expect_header(&ERROR_HEADER)?;
    let records = table
        .rows
        .iter()
        .map(|r| {
            Ok(ErrorRecord {
                mu: r[0],
                mu_p: r[1],
                k_pod: to_k(r[2])?,
                log_err: r[3],
                log_residual: r[4],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, table.metadata))
}

pub fn read_dimension_csv<R: BufRead>(input: R) -> Result<(Vec<DimensionRecord>, Vec<(String, String)>)> {
    let table = CsvTable::read(input)?;
    table.expect_header(&DIMENSION_HEADER)?;
    let records = table
        .rows
        .iter()
        .map(|r| {
            Ok(DimensionRecord {
                mu_p: r[0],
                k_pod: to_k(r[1])?,
                log_err: r[2],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, table.metadata))
}

/// Fold id per record index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded shuffle, then round-robin into `k` folds (sizes differ by at most one).
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot make {k} folds from {n} records")));
    }
    let mut assignment = vec![0; n];
    for (pos, i) in shuffled(n, seed).into_iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldAssignment { k, seed, assignment })
}

/// Seeded random split; returns sorted (train, test) index lists.
pub fn split(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need 0 < train fraction < 1 and at least two records (got {train_frac}, {n})"
        )));
    }
    let idx = shuffled(n, seed);
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Sorted seeded subset of `m` out of `n` indices (all of them when m ≥ n).
pub fn random_subset(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut idx = shuffled(n, seed);
    idx.truncate(m.min(n));
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{SpatialGrid, TimeGrid};
    use crate::pod::compute_pod_basis;
    use proptest::prelude::*;

    fn small_fom() -> FomModel {
        FomModel::new(SpatialGrid::new(1.0, 41).unwrap(), TimeGrid::new(1.0, 61).unwrap()).unwrap()
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(ErrorGrid::full().n_records(), 12000);
        assert_eq!(ErrorGrid::ci().n_records(), 750);
        let g = ErrorGrid::full();
        assert_eq!(g.mu[0], 0.01);
        assert_eq!(*g.mu.last().unwrap(), 1.0);
        assert_eq!(*g.mu_p.last().unwrap(), 1.0);
        let d = dimension_mu_p_grid();
        assert_eq!(d.len(), 759);
        for w in d.windows(2) {
            assert!((w[1] - w[0] - 0.0013).abs() < 1e-12);
        }
        // 0.9956 itself is off the lattice; the last point below it is 0.9954.
        assert!((d.last().unwrap() - 0.9954).abs() < 1e-12);
    }

    #[test]
    fn single_triple_matches_direct_computation() {
        let fom = small_fom();
        let grid = ErrorGrid {
            mu_p: vec![0.6],
            mu: vec![0.4],
            k_pod: vec![5],
        };
        let ds = generate_error_dataset(&fom, &grid).unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.stats.fom_solves, 2);
        let basis = compute_pod_basis(&fom.solve(0.6).unwrap(), DimensionRule::Fixed(5)).unwrap();
        let ops = build_rom_operators(&basis, &fom).unwrap();
        let truth = fom.solve(0.4).unwrap();
        let rom = solve_rom_with(&ops, 0.4, &fom.time, fom.newton).unwrap();
        let want = rom_error(&truth, &basis, &rom).unwrap().ln();
        assert_eq!(ds.records[0].log_err, want);
        let (le, lr) = replay_sample(&fom, 0.4, 0.6, 5).unwrap();
        assert_eq!((le, lr), (ds.records[0].log_err, ds.records[0].log_residual));
    }

    #[test]
    fn error_corpus_order_and_csv_round_trip() {
        let fom = small_fom();
        let grid = ErrorGrid {
            mu_p: vec![0.3, 0.9],
            mu: vec![0.2, 0.5, 0.8],
            k_pod: vec![3, 6],
        };
        let ds = generate_error_dataset(&fom, &grid).unwrap();
        assert_eq!(ds.records.len(), 12);
        assert_eq!((ds.records[1].mu, ds.records[1].k_pod), (0.2, 6));
        assert_eq!(ds.records[6].mu_p, 0.9);
        let again = generate_error_dataset(&fom, &grid).unwrap();
        assert_eq!(ds, again);

        let mut buf = Vec::new();
        let meta = vec![("seed".to_string(), "3".to_string())];
        write_error_csv(&mut buf, &ds.records, &meta).unwrap();
        let (back, m) = read_error_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds.records);
        assert_eq!(m, meta);
    }

    #[test]
    fn dimension_corpus() {
        let fom = FomModel::new(SpatialGrid::default(), TimeGrid::default()).unwrap();
        let ds = generate_dimension_dataset(&fom, &[0.8], &(4..=15).collect::<Vec<_>>()).unwrap();
        assert_eq!(ds.records.len(), 12);
        // Error at the centre shrinks with the basis on this trajectory.
        for w in ds.records.windows(2) {
            assert!(w[1].log_err < w[0].log_err, "{w:?}");
        }
        assert!(generate_dimension_dataset(&fom, &[0.8], &[]).is_err());
        let mut buf = Vec::new();
        write_dimension_csv(&mut buf, &ds.records, &[]).unwrap();
        assert_eq!(read_dimension_csv(buf.as_slice()).unwrap().0, ds.records);
    }

    #[test]
    fn kfold_examples() {
        let f = kfold(10, 5, 1).unwrap();
        for fold in 0..5 {
            assert_eq!(f.test_indices(fold).len(), 2);
            assert_eq!(f.train_indices(fold).len(), 8);
        }
        assert_eq!(f, kfold(10, 5, 1).unwrap());
        assert!(kfold(3, 5, 0).is_err());
        let (tr, te) = split(10, 0.8, 4).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
    }

    proptest! {
        #[test]
        fn folds_partition_indices(n in 1usize..200, k in 1usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let f = kfold(n, k, seed).unwrap();
            let mut seen = vec![false; n];
            let mut sizes = vec![0usize; k];
            for fold in 0..k {
                for i in f.test_indices(fold) {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                    sizes[fold] += 1;
                }
            }
            prop_assert!(seen.iter().all(|s| *s));
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }

        #[test]
        fn split_partitions(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let (tr, te) = split(n, frac, seed).unwrap();
            prop_assert_eq!(tr.len() + te.len(), n);
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
