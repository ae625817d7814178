//! Error and dimension surrogates, the univariate baselines (residual-based and
//! viscosity-based), and cross-validation metrics.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::dataset::{kfold, DimensionRecord, ErrorRecord};
use crate::error::{Error, Result};
use crate::fom::FomModel;
use crate::gp::{GpConfig, GpModel};
use crate::io::fmt_f64;
use crate::mlp::{Architecture, MlpModel, TrainConfig};
use crate::pod::{select_dimension_by_svd, SnapshotSvd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Gp,
    Ann,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gp" => Ok(Self::Gp),
            "ann" | "mlp" => Ok(Self::Ann),
            other => Err(Error::Parse(format!("unknown regression method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gp => "gp",
            Self::Ann => "ann",
        })
    }
}

/// Settings for either regression engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorConfig {
    pub method: Method,
    pub gp: GpConfig,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub ann: TrainConfig,
}

impl RegressorConfig {
    pub fn new(method: Method, hidden_layers: usize) -> Self {
        Self {
            method,
            gp: GpConfig::default(),
            hidden_layers,
            hidden_width: 20,
            ann: TrainConfig::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gp.seed = seed;
        self.ann.seed = seed;
        self
    }
}

/// Error model: 6 hidden layers by default.
pub fn error_model_config(method: Method) -> RegressorConfig {
    RegressorConfig::new(method, 6)
}

/// Dimension model: 5 hidden layers by default.
pub fn dimension_model_config(method: Method) -> RegressorConfig {
    RegressorConfig::new(method, 5)
}

/// Univariate baselines: small data, so a shallower net.
pub fn baseline_config(method: Method) -> RegressorConfig {
    let mut cfg = RegressorConfig::new(method, 2);
    cfg.hidden_width = 10;
    cfg.ann.batch_size = 16;
    cfg.ann.learning_rate = 3e-3;
    cfg
}

#[derive(Debug, Clone)]
pub enum Regressor {
    Gp(GpModel),
    Ann(MlpModel),
}

impl Regressor {
    pub fn fit(z: &[Vec<f64>], y: &[f64], cfg: &RegressorConfig) -> Result<Self> {
        match cfg.method {
            Method::Gp => GpModel::fit(z, y, &cfg.gp).map(Self::Gp),
            Method::Ann => {
                let dim = z.first().map_or(0, Vec::len);
                let arch = Architecture::new(dim, cfg.hidden_layers, cfg.hidden_width)?;
                MlpModel::train(arch, z, y, &cfg.ann).map(Self::Ann)
            }
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Self::Gp(_) => Method::Gp,
            Self::Ann(_) => Method::Ann,
        }
    }

    pub fn predict(&self, z: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Self::Gp(m) => m.predict_mean(z),
            Self::Ann(m) => m.predict(z),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            Self::Gp(m) => m.to_text(),
            Self::Ann(m) => m.to_text(),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        if first.starts_with("mplrom-gp") {
            GpModel::from_text(text).map(Self::Gp)
        } else if first.starts_with("mplrom-mlp") {
            MlpModel::from_text(text).map(Self::Ann)
        } else {
            Err(Error::Parse(format!("unrecognized model header '{first}'")))
        }
    }
}

/// What the error model regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorTarget {
    /// log ε (default).
    #[default]
    Log,
    /// ε itself; kept to show how much worse it fits.
    Linear,
}

/// Maps (μ, μ_p, K) to a predicted log error.
#[derive(Debug, Clone)]
pub struct ErrorModel {
    pub target: ErrorTarget,
    pub regressor: Regressor,
}

fn error_features(r: &ErrorRecord) -> Vec<f64> {
    vec![r.mu, r.mu_p, r.k_pod as f64]
}

/// Smallest positive error reported when a linear-target model predicts ε ≤ 0.
const LINEAR_FLOOR: f64 = 1e-300;

impl ErrorModel {
    pub fn train(records: &[ErrorRecord], cfg: &RegressorConfig, target: ErrorTarget) -> Result<Self> {
        require_records(records.len(), 50)?;
        let z: Vec<Vec<f64>> = records.iter().map(error_features).collect();
        let y: Vec<f64> = records
            .iter()
            .map(|r| match target {
                ErrorTarget::Log => r.log_err,
                ErrorTarget::Linear => r.log_err.exp(),
            })
            .collect();
        Ok(Self {
            target,
            regressor: Regressor::fit(&z, &y, cfg)?,
        })
    }

    /// Predicted log ε for each (μ, μ_p, K).
    pub fn predict_log(&self, queries: &[(f64, f64, usize)]) -> Result<Vec<f64>> {
        let z: Vec<Vec<f64>> = queries.iter().map(|&(m, p, k)| vec![m, p, k as f64]).collect();
        let raw = self.regressor.predict(&z)?;
        Ok(match self.target {
            ErrorTarget::Log => raw,
            ErrorTarget::Linear => raw.into_iter().map(|v| v.max(LINEAR_FLOOR).ln()).collect(),
        })
    }

    pub fn predict_records(&self, records: &[ErrorRecord]) -> Result<Vec<f64>> {
        let q: Vec<(f64, f64, usize)> = records.iter().map(|r| (r.mu, r.mu_p, r.k_pod)).collect();
        self.predict_log(&q)
    }

    pub fn to_text(&self) -> String {
        let t = match self.target {
            ErrorTarget::Log => "log",
            ErrorTarget::Linear => "linear",
        };
        format!("mplrom-error-model 1\ntarget {t}\n{}", self.regressor.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut parts = text.splitn(3, '\n');
        if parts.next().map(str::trim) != Some("mplrom-error-model 1") {
            return Err(Error::Parse("missing error-model header".into()));
        }
        let target = match parts.next().map(str::trim) {
            Some("target log") => ErrorTarget::Log,
            Some("target linear") => ErrorTarget::Linear,
            other => return Err(Error::Parse(format!("bad target line {other:?}"))),
        };
        let regressor = Regressor::from_text(parts.next().unwrap_or(""))?;
        Ok(Self { target, regressor })
    }
}

fn require_records(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidArgument(format!("need at least {min} records, got {n}")));
    }
    Ok(())
}

/// Maps (μ_p, log ε̄) to a basis dimension.
#[derive(Debug, Clone)]
pub struct DimensionModel {
    pub regressor: Regressor,
    /// Upper clamp for predictions.
    pub max_dim: usize,
}

impl DimensionModel {
    pub fn train(records: &[DimensionRecord], cfg: &RegressorConfig, max_dim: usize) -> Result<Self> {
        require_records(records.len(), 50)?;
        Self::train_unchecked(records, cfg, max_dim)
    }

    fn train_unchecked(records: &[DimensionRecord], cfg: &RegressorConfig, max_dim: usize) -> Result<Self> {
        if max_dim == 0 {
            return Err(Error::InvalidArgument("maximum dimension must be positive".into()));
        }
        let z: Vec<Vec<f64>> = records.iter().map(|r| vec![r.mu_p, r.log_err]).collect();
        let y: Vec<f64> = records.iter().map(|r| r.k_pod as f64).collect();
        Ok(Self {
            regressor: Regressor::fit(&z, &y, cfg)?,
            max_dim,
        })
    }

    /// Unrounded regression output.
    pub fn predict_raw(&self, queries: &[(f64, f64)]) -> Result<Vec<f64>> {
        let z: Vec<Vec<f64>> = queries.iter().map(|&(p, e)| vec![p, e]).collect();
        self.regressor.predict(&z)
    }

    /// Rounded to the nearest integer and clamped to [1, max_dim].
    pub fn predict(&self, queries: &[(f64, f64)]) -> Result<Vec<usize>> {
        Ok(self
            .predict_raw(queries)?
            .into_iter()
            .map(|v| round_dimension(v, self.max_dim))
            .collect())
    }

    pub fn to_text(&self) -> String {
        format!("mplrom-dimension-model 1\nmax_dim {}\n{}", self.max_dim, self.regressor.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut parts = text.splitn(3, '\n');
        if parts.next().map(str::trim) != Some("mplrom-dimension-model 1") {
            return Err(Error::Parse("missing dimension-model header".into()));
        }
        let max_dim = parts
            .next()
            .and_then(|l| l.trim().strip_prefix("max_dim "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse("bad max_dim line".into()))?;
        let regressor = Regressor::from_text(parts.next().unwrap_or(""))?;
        Ok(Self { regressor, max_dim })
    }
}

pub fn round_dimension(raw: f64, max_dim: usize) -> usize {
    if !raw.is_finite() {
        return if raw > 0.0 { max_dim } else { 1 };
    }
    raw.round().clamp(1.0, max_dim as f64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// log ρ → log ε
    Romes,
    /// μ → log ε
    Mfc,
}

impl BaselineKind {
    fn feature(&self, r: &ErrorRecord) -> f64 {
        match self {
            Self::Romes => r.log_residual,
            Self::Mfc => r.mu,
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "romes" => Ok(Self::Romes),
            "mfc" => Ok(Self::Mfc),
            other => Err(Error::Parse(format!("unknown baseline '{other}'"))),
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Romes => "romes",
            Self::Mfc => "mfc",
        })
    }
}

/// Univariate error model for one fixed (μ_p, K).
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub mu_p: f64,
    pub k_pod: usize,
    pub regressor: Regressor,
}

impl BaselineModel {
    pub fn train(kind: BaselineKind, records: &[ErrorRecord], cfg: &RegressorConfig) -> Result<Self> {
        require_records(records.len(), 2)?;
        let (mu_p, k_pod) = (records[0].mu_p, records[0].k_pod);
        if records.iter().any(|r| r.mu_p != mu_p || r.k_pod != k_pod) {
            return Err(Error::InvalidArgument(
                "baseline records must share one centre and one basis dimension".into(),
            ));
        }
        let z: Vec<Vec<f64>> = records.iter().map(|r| vec![kind.feature(r)]).collect();
        let y: Vec<f64> = records.iter().map(|r| r.log_err).collect();
        Ok(Self {
            kind,
            mu_p,
            k_pod,
            regressor: Regressor::fit(&z, &y, cfg)?,
        })
    }

    pub fn predict_records(&self, records: &[ErrorRecord]) -> Result<Vec<f64>> {
        let z: Vec<Vec<f64>> = records.iter().map(|r| vec![self.kind.feature(r)]).collect();
        self.regressor.predict(&z)
    }

    pub fn to_text(&self) -> String {
        format!(
            "mplrom-baseline 1\nkind {}\nmu_p {}\nk_pod {}\n{}",
            self.kind,
            fmt_f64(self.mu_p),
            self.k_pod,
            self.regressor.to_text()
        )
    }
}

/// How VAR_fold is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    /// Sample variance (n − 1) of the absolute errors.
    #[default]
    AbsoluteErrors,
    /// Σ (ŷ_i − E_fold)² / (n − 1), predictions around the mean absolute error.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldMetrics {
    pub e_fold: f64,
    pub var_fold: f64,
    pub n: usize,
}

pub fn fold_metrics(pred: &[f64], truth: &[f64], mode: VarianceMode) -> Result<FoldMetrics> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::InvalidArgument("metrics need equally long, nonempty vectors".into()));
    }
    let n = pred.len();
    let abs: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    let e = abs.iter().sum::<f64>() / n as f64;
    let var = if n < 2 {
        0.0
    } else {
        let centred: Box<dyn Iterator<Item = f64>> = match mode {
            VarianceMode::AbsoluteErrors => Box::new(abs.iter().map(|a| a - e)),
            VarianceMode::Literal => Box::new(pred.iter().map(|p| p - e)),
        };
        centred.map(|d| d * d).sum::<f64>() / (n - 1) as f64
    };
    Ok(FoldMetrics {
        e_fold: e,
        var_fold: var,
        n,
    })
}

/// Per-fold metrics plus the across-fold mean E and sample variance VAR of E_fold.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub e: f64,
    pub var: f64,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::InvalidArgument("no folds to aggregate".into()));
        }
        let n = folds.len() as f64;
        let e = folds.iter().map(|f| f.e_fold).sum::<f64>() / n;
        let var = if folds.len() < 2 {
            0.0
        } else {
            folds.iter().map(|f| (f.e_fold - e).powi(2)).sum::<f64>() / (n - 1.0)
        };
        Ok(Self { folds, e, var })
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "fold,n,e_fold,var_fold")?;
        for (i, f) in self.folds.iter().enumerate() {
            writeln!(out, "{i},{},{},{}", f.n, fmt_f64(f.e_fold), fmt_f64(f.var_fold))?;
        }
        writeln!(out, "all,{},{},{}", self.folds.iter().map(|f| f.n).sum::<usize>(), fmt_f64(self.e), fmt_f64(self.var))?;
        Ok(())
    }
}

fn pick<T: Copy>(records: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| records[i]).collect()
}

/// Trains on `train`, evaluates on `test` (log-error space).
pub fn evaluate_error_model(
    train: &[ErrorRecord],
    test: &[ErrorRecord],
    cfg: &RegressorConfig,
    target: ErrorTarget,
    mode: VarianceMode,
) -> Result<FoldMetrics> {
    let model = ErrorModel::train(train, cfg, target)?;
    let pred = model.predict_records(test)?;
    let truth: Vec<f64> = test.iter().map(|r| r.log_err).collect();
    fold_metrics(&pred, &truth, mode)
}

/// k-fold cross-validation of the error model; folds train in parallel.
pub fn crossval_error_model(
    records: &[ErrorRecord],
    cfg: &RegressorConfig,
    target: ErrorTarget,
    k: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let folds = kfold(records.len(), k, seed)?;
    let metrics = (0..k)
        .into_par_iter()
        .map(|f| {
            let train = pick(records, &folds.train_indices(f));
            let test = pick(records, &folds.test_indices(f));
            evaluate_error_model(&train, &test, cfg, target, VarianceMode::default())
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_folds(metrics)
}

/// Dimension-model cross-validation: metrics on the rounded output plus hit rates.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionReport {
    pub metrics: MetricsReport,
    /// Fraction of test points whose rounded prediction equals the true K.
    pub exact_rate: f64,
    /// Fraction within one of the true K.
    pub within_one_rate: f64,
    /// (record index, predicted K) for every test point.
    pub predictions: Vec<(usize, usize)>,
}

pub fn crossval_dimension_model(
    records: &[DimensionRecord],
    cfg: &RegressorConfig,
    max_dim: usize,
    k: usize,
    seed: u64,
) -> Result<DimensionReport> {
    let folds = kfold(records.len(), k, seed)?;
    let per_fold = (0..k)
        .into_par_iter()
        .map(|f| {
            let test_idx = folds.test_indices(f);
            let model = DimensionModel::train(&pick(records, &folds.train_indices(f)), cfg, max_dim)?;
            let q: Vec<(f64, f64)> = test_idx.iter().map(|&i| (records[i].mu_p, records[i].log_err)).collect();
            let pred = model.predict(&q)?;
            let pf: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
            let truth: Vec<f64> = test_idx.iter().map(|&i| records[i].k_pod as f64).collect();
            let m = fold_metrics(&pf, &truth, VarianceMode::default())?;
            Ok((m, test_idx.into_iter().zip(pred).collect::<Vec<_>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut predictions: Vec<(usize, usize)> = per_fold.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    predictions.sort_unstable();
    let n = predictions.len() as f64;
    let exact = predictions.iter().filter(|&&(i, p)| p == records[i].k_pod).count() as f64;
    let within = predictions.iter().filter(|&&(i, p)| p.abs_diff(records[i].k_pod) <= 1).count() as f64;
    Ok(DimensionReport {
        metrics: MetricsReport::from_folds(per_fold.into_iter().map(|(m, _)| m).collect())?,
        exact_rate: exact / n,
        within_one_rate: within / n,
        predictions,
    })
}

/// Smallest listed K whose recorded error at μ_p meets `eps_bar`, per centre.
pub fn true_dimensions(records: &[DimensionRecord], eps_bar: f64) -> Vec<(f64, Option<usize>)> {
    let log_eps = eps_bar.ln();
    let mut centres: Vec<f64> = records.iter().map(|r| r.mu_p).collect();
    centres.sort_by(f64::total_cmp);
    centres.dedup();
    centres
        .into_iter()
        .map(|c| {
            let k = records
                .iter()
                .filter(|r| r.mu_p == c && r.log_err <= log_eps)
                .map(|r| r.k_pod)
                .min();
            (c, k)
        })
        .collect()
}

/// Singular-value tail estimate of the basis dimension for each centre.
pub fn svd_dimensions(fom: &FomModel, centres: &[f64], eps_bar: f64) -> Result<Vec<usize>> {
    centres
        .par_iter()
        .map(|&c| {
            let svd = SnapshotSvd::new(&fom.solve(c)?)?;
            Ok(select_dimension_by_svd(&svd.singular_values, eps_bar)?.k)
        })
        .collect()
}

/// Per-subset E of the multi-parameter model and the two univariate baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetComparison {
    pub mu_p: f64,
    pub k_pod: usize,
    pub e_mplrom: f64,
    pub e_mfc: f64,
    pub e_romes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub method: Method,
    pub subsets: Vec<SubsetComparison>,
    pub e_mplrom: f64,
    pub e_mfc: f64,
    pub e_romes: f64,
}

impl ComparisonReport {
    pub fn ordering_holds(&self) -> bool {
        self.e_mplrom < self.e_mfc && self.e_mfc < self.e_romes
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "mu_p,k_pod,e_mplrom,e_mfc,e_romes")?;
        for s in &self.subsets {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(s.mu_p),
                s.k_pod,
                fmt_f64(s.e_mplrom),
                fmt_f64(s.e_mfc),
                fmt_f64(s.e_romes)
            )?;
        }
        Ok(())
    }
}

/// Settings for the subset comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonConfig {
    pub folds: usize,
    pub seed: u64,
    /// Cap on the records used to train the multi-parameter model per fold.
    pub max_mplrom_train: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            max_mplrom_train: usize::MAX,
        }
    }
}

/// Cross-validated comparison on the listed (μ_p, K) subsets.
///
/// One fold assignment over all records is shared. In each fold the multi-parameter
/// model trains on every training record, the baselines on the training records of
/// their own subset, and all three are scored on the subset's test records.
pub fn compare_with_baselines(
    records: &[ErrorRecord],
    subsets: &[(f64, usize)],
    mplrom_cfg: &RegressorConfig,
    baseline_cfg: &RegressorConfig,
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if subsets.is_empty() {
        return Err(Error::InvalidArgument("no subsets to compare".into()));
    }
    let folds = kfold(records.len(), cfg.folds, cfg.seed)?;
    let members: Vec<Vec<usize>> = subsets
        .iter()
        .map(|&(p, k)| (0..records.len()).filter(|&i| records[i].mu_p == p && records[i].k_pod == k).collect())
        .collect();
    if let Some(pos) = members.iter().position(|m| m.len() < cfg.folds + 2) {
        return Err(Error::InvalidArgument(format!(
            "subset (mu_p={}, K={}) has only {} records",
            subsets[pos].0,
            subsets[pos].1,
            members[pos].len()
        )));
    }

    // e[fold][subset] = (mplrom, mfc, romes)
    let per_fold = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let mut train_idx = folds.train_indices(f);
            if train_idx.len() > cfg.max_mplrom_train {
                let keep = crate::dataset::random_subset(train_idx.len(), cfg.max_mplrom_train, cfg.seed ^ f as u64);
                train_idx = keep.into_iter().map(|i| train_idx[i]).collect();
            }
            let model = ErrorModel::train(&pick(records, &train_idx), mplrom_cfg, ErrorTarget::Log)?;
            members
                .iter()
                .map(|idx| {
                    let train: Vec<ErrorRecord> =
                        idx.iter().filter(|&&i| folds.assignment[i] != f).map(|&i| records[i]).collect();
                    let test: Vec<ErrorRecord> =
                        idx.iter().filter(|&&i| folds.assignment[i] == f).map(|&i| records[i]).collect();
                    if test.is_empty() {
                        return Ok(None);
                    }
                    let truth: Vec<f64> = test.iter().map(|r| r.log_err).collect();
                    let score = |pred: Vec<f64>| fold_metrics(&pred, &truth, VarianceMode::default()).map(|m| m.e_fold);
                    let e_m = score(model.predict_records(&test)?)?;
                    let e_f = score(BaselineModel::train(BaselineKind::Mfc, &train, baseline_cfg)?.predict_records(&test)?)?;
                    let e_r =
                        score(BaselineModel::train(BaselineKind::Romes, &train, baseline_cfg)?.predict_records(&test)?)?;
                    Ok(Some((e_m, e_f, e_r)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let subsets_out: Vec<SubsetComparison> = subsets
        .iter()
        .enumerate()
        .map(|(s, &(mu_p, k_pod))| {
            let vals: Vec<(f64, f64, f64)> = per_fold.iter().filter_map(|fold| fold[s]).collect();
            let n = vals.len() as f64;
            SubsetComparison {
                mu_p,
                k_pod,
                e_mplrom: vals.iter().map(|v| v.0).sum::<f64>() / n,
                e_mfc: vals.iter().map(|v| v.1).sum::<f64>() / n,
                e_romes: vals.iter().map(|v| v.2).sum::<f64>() / n,
            }
        })
        .collect();
    let n = subsets_out.len() as f64;
    Ok(ComparisonReport {
        method: mplrom_cfg.method,
        e_mplrom: subsets_out.iter().map(|s| s.e_mplrom).sum::<f64>() / n,
        e_mfc: subsets_out.iter().map(|s| s.e_mfc).sum::<f64>() / n,
        e_romes: subsets_out.iter().map(|s| s.e_romes).sum::<f64>() / n,
        subsets: subsets_out,
    })
}

/// Mean absolute log-error per test point of one subset, averaged over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTestRow {
    pub mu: f64,
    pub log_residual: f64,
    pub abs_mplrom: f64,
    pub abs_mfc: f64,
    pub abs_romes: f64,
}

/// Holds out a seeded 20% of one (μ_p, K) subset as a fixed test set, then `reps` times
/// trains every model on a fresh random 80% of the remaining data and scores it there.
/// The multi-parameter model draws from all records outside the test set.
pub fn fixed_test_set_comparison(
    records: &[ErrorRecord],
    subset: (f64, usize),
    mplrom_cfg: &RegressorConfig,
    baseline_cfg: &RegressorConfig,
    reps: usize,
    seed: u64,
    max_mplrom_train: usize,
) -> Result<Vec<FixedTestRow>> {
    let members: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].mu_p == subset.0 && records[i].k_pod == subset.1)
        .collect();
    if members.len() < 5 || reps == 0 {
        return Err(Error::InvalidArgument(format!(
            "subset (mu_p={}, K={}) has {} records; need at least 5 and one repetition",
            subset.0,
            subset.1,
            members.len()
        )));
    }
    let (rest_pos, test_pos) = crate::dataset::split(members.len(), 0.8, seed)?;
    let test: Vec<ErrorRecord> = test_pos.iter().map(|&i| records[members[i]]).collect();
    let test_set: std::collections::HashSet<usize> = test_pos.iter().map(|&i| members[i]).collect();
    let subset_rest: Vec<ErrorRecord> = rest_pos.iter().map(|&i| records[members[i]]).collect();
    let global_rest: Vec<ErrorRecord> =
        (0..records.len()).filter(|i| !test_set.contains(i)).map(|i| records[i]).collect();
    let truth: Vec<f64> = test.iter().map(|r| r.log_err).collect();

    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = seed.wrapping_add(1 + rep as u64);
            let (g_idx, _) = crate::dataset::split(global_rest.len(), 0.8, s)?;
            let g_idx: Vec<usize> = if g_idx.len() > max_mplrom_train {
                crate::dataset::random_subset(g_idx.len(), max_mplrom_train, s)
                    .into_iter()
                    .map(|i| g_idx[i])
                    .collect()
            } else {
                g_idx
            };
            let (b_idx, _) = crate::dataset::split(subset_rest.len(), 0.8, s)?;
            let b_train = pick(&subset_rest, &b_idx);
            let m = ErrorModel::train(&pick(&global_rest, &g_idx), mplrom_cfg, ErrorTarget::Log)?
                .predict_records(&test)?;
            let f = BaselineModel::train(BaselineKind::Mfc, &b_train, baseline_cfg)?.predict_records(&test)?;
            let r = BaselineModel::train(BaselineKind::Romes, &b_train, baseline_cfg)?.predict_records(&test)?;
            Ok((m, f, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = reps as f64;
    Ok(test
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let avg = |sel: fn(&(Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
                per_rep.iter().map(|p| (sel(p)[i] - truth[i]).abs()).sum::<f64>() / n
            };
            FixedTestRow {
                mu: rec.mu,
                log_residual: rec.log_residual,
                abs_mplrom: avg(|p| &p.0),
                abs_mfc: avg(|p| &p.1),
                abs_romes: avg(|p| &p.2),
            }
        })
        .collect())
}

/// Every distinct (μ_p, K) pair in corpus order.
pub fn subsets_of(records: &[ErrorRecord]) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in records {
        if !out.iter().any(|&(p, k)| p == r.mu_p && k == r.k_pod) {
            out.push((r.mu_p, r.k_pod));
        }
    }
    out
}

/// Text dump of a metrics report for logs.
pub fn describe(report: &MetricsReport) -> String {
    let mut s = String::new();
    for (i, f) in report.folds.iter().enumerate() {
        let _ = writeln!(s, "fold {i}: E_fold={:.6} VAR_fold={:.6} (n={})", f.e_fold, f.var_fold, f.n);
    }
    let _ = write!(s, "E={:.6} VAR={:.6}", report.e, report.var);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m = fold_metrics(&[1.0, 2.0], &[1.0, 1.0], VarianceMode::AbsoluteErrors).unwrap();
        assert_eq!(m.e_fold, 0.5);
        assert_eq!(m.var_fold, 0.5);
        let lit = fold_metrics(&[1.0, 2.0], &[1.0, 1.0], VarianceMode::Literal).unwrap();
        // (1 - 0.5)² + (2 - 0.5)² = 2.5
        assert!((lit.var_fold - 2.5).abs() < 1e-15);
        let folds = [0.1, 0.3].map(|e| FoldMetrics {
            e_fold: e,
            var_fold: 0.0,
            n: 1,
        });
        let r = MetricsReport::from_folds(folds.to_vec()).unwrap();
        assert!((r.e - 0.2).abs() < 1e-15);
        assert!((r.var - 0.02).abs() < 1e-15);
        assert!(fold_metrics(&[], &[], VarianceMode::default()).is_err());
    }

    proptest! {
        #[test]
        fn metrics_permutation_invariant(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40), rot in 0usize..40) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let r = rot % p.len();
            let mut p2 = p.clone();
            let mut t2 = t.clone();
            p2.rotate_left(r);
            t2.rotate_left(r);
            let a = fold_metrics(&p, &t, VarianceMode::default()).unwrap();
            let b = fold_metrics(&p2, &t2, VarianceMode::default()).unwrap();
            prop_assert!((a.e_fold - b.e_fold).abs() < 1e-12);
            prop_assert!((a.var_fold - b.var_fold).abs() < 1e-12);
            prop_assert!(a.e_fold >= 0.0);
        }

        #[test]
        fn rounded_dimension_in_range(raw in proptest::num::f64::ANY, max_dim in 1usize..300) {
            let k = round_dimension(raw, max_dim);
            prop_assert!(k >= 1 && k <= max_dim);
        }
    }

    fn synthetic_records() -> Vec<ErrorRecord> {
        let mut out = Vec::new();
        for &mu_p in &[0.3, 0.7] {
            for k in [4usize, 8] {
                for i in 1..=20 {
                    let mu = i as f64 / 20.0;
                    let log_err = -(k as f64) + 3.0 * (mu - mu_p).abs();
                    out.push(ErrorRecord {
                        mu,
                        mu_p,
                        k_pod: k,
                        log_err,
                        log_residual: log_err - 2.0 + 0.1 * mu,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn gp_constant_target_is_reproduced() {
        let mut recs = synthetic_records();
        for r in &mut recs {
            r.log_err = -4.5;
        }
        let m = ErrorModel::train(&recs, &error_model_config(Method::Gp), ErrorTarget::Log).unwrap();
        for v in m.predict_log(&[(0.12, 0.3, 4), (0.9, 0.7, 8), (0.5, 0.5, 6)]).unwrap() {
            assert!((v + 4.5).abs() < 1e-6, "{v}");
        }
        let back = ErrorModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back.predict_records(&recs).unwrap(), m.predict_records(&recs).unwrap());
    }

    #[test]
    fn log_targets_give_positive_errors() {
        let recs = synthetic_records();
        let mut cfg = error_model_config(Method::Ann);
        cfg.ann.max_epochs = 100;
        let m = ErrorModel::train(&recs, &cfg, ErrorTarget::Log).unwrap();
        assert!(m.predict_records(&recs).unwrap().iter().all(|v| v.exp() > 0.0));
    }

    #[test]
    fn too_few_records_rejected() {
        let recs = synthetic_records();
        assert!(ErrorModel::train(&recs[..10], &error_model_config(Method::Gp), ErrorTarget::Log).is_err());
        let single = &recs[..1];
        assert!(BaselineModel::train(BaselineKind::Mfc, single, &baseline_config(Method::Gp)).is_err());
        // Mixed subsets are rejected.
        assert!(BaselineModel::train(BaselineKind::Mfc, &recs[15..25], &baseline_config(Method::Gp)).is_err());
    }

    #[test]
    fn baseline_constant_subset() {
        let mut recs: Vec<ErrorRecord> = synthetic_records().into_iter().take(20).collect();
        for r in &mut recs {
            r.log_err = 1.25;
        }
        for kind in [BaselineKind::Mfc, BaselineKind::Romes] {
            let m = BaselineModel::train(kind, &recs, &baseline_config(Method::Gp)).unwrap();
            assert!(m.predict_records(&recs).unwrap().iter().all(|v| (v - 1.25).abs() < 1e-6));
        }
    }

    #[test]
    fn mfc_gp_monotone_between_points() {
        // ε grows with |μ - μ_p| on each side of the centre.
        let recs: Vec<ErrorRecord> = (0..15)
            .map(|i| {
                let mu = 0.5 + 0.03 * i as f64;
                ErrorRecord {
                    mu,
                    mu_p: 0.5,
                    k_pod: 6,
                    log_err: -8.0 + 10.0 * (mu - 0.5),
                    log_residual: 0.0,
                }
            })
            .collect();
        let m = BaselineModel::train(BaselineKind::Mfc, &recs, &baseline_config(Method::Gp)).unwrap();
        let probes: Vec<ErrorRecord> = (0..85)
            .map(|i| ErrorRecord {
                mu: 0.5 + 0.005 * i as f64,
                ..recs[0]
            })
            .collect();
        let p = m.predict_records(&probes).unwrap();
        for w in p.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn dimension_model_recovers_training_points() {
        let recs: Vec<DimensionRecord> = (0..10)
            .map(|i| DimensionRecord {
                mu_p: 0.1 * (i + 1) as f64,
                k_pod: 4 + i,
                log_err: -2.0 - 0.8 * i as f64 + 0.05 * i as f64 * i as f64,
            })
            .collect();
        let mut cfg = dimension_model_config(Method::Ann);
        cfg.ann.max_epochs = 4000;
        cfg.ann.batch_size = 10;
        cfg.ann.learning_rate = 1e-2;
        let m = DimensionModel::train_unchecked(&recs, &cfg, 199).unwrap();
        let q: Vec<(f64, f64)> = recs.iter().map(|r| (r.mu_p, r.log_err)).collect();
        let k = m.predict(&q).unwrap();
        assert_eq!(k, recs.iter().map(|r| r.k_pod).collect::<Vec<_>>());
        let back = DimensionModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back.predict(&q).unwrap(), k);
    }

    #[test]
    fn true_dimension_is_first_k_below_threshold() {
        let recs = vec![
            DimensionRecord { mu_p: 0.5, k_pod: 4, log_err: -1.0 },
            DimensionRecord { mu_p: 0.5, k_pod: 5, log_err: -8.0 },
            DimensionRecord { mu_p: 0.5, k_pod: 6, log_err: -9.0 },
            DimensionRecord { mu_p: 0.6, k_pod: 4, log_err: -1.0 },
        ];
        assert_eq!(true_dimensions(&recs, 1e-3), vec![(0.5, Some(5)), (0.6, None)]);
    }

    #[test]
    fn comparison_runs_on_synthetic_subsets() {
        let recs = synthetic_records();
        let subs = subsets_of(&recs);
        assert_eq!(subs.len(), 4);
        let cfg = ComparisonConfig::default();
        let r = compare_with_baselines(
            &recs,
            &subs,
            &error_model_config(Method::Gp),
            &baseline_config(Method::Gp),
            &cfg,
        )
        .unwrap();
        assert_eq!(r.subsets.len(), 4);
        assert!(r.e_mplrom.is_finite() && r.e_mfc.is_finite() && r.e_romes.is_finite());
    }
}
