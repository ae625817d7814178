//! `mplrom`: command-line driver for the full pipeline.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use mplrom::dataset::{
    dimension_k_list, dimension_mu_p_grid, dimension_mu_p_grid_ci, generate_dimension_dataset, generate_error_dataset, kfold,
    random_subset, read_dimension_csv, read_error_csv, split, write_dimension_csv, write_error_csv,
    DimensionRecord, ErrorGrid, ErrorRecord,
};
use mplrom::decomposition::{
    decompose_domain_partial, find_feasible_interval, verify_decomposition, Cached, ErrorPredictor,
    FeasibleInterval, OracleErrorModel,
};
use mplrom::fom::MU_RANGE;
use mplrom::io::{fmt_f64, write_metadata};
use mplrom::surrogate::{
    compare_with_baselines, crossval_dimension_model, describe, evaluate_error_model, fixed_test_set_comparison,
    fold_metrics, subsets_of, BaselineKind, BaselineModel, ComparisonConfig, DimensionModel, ErrorModel,
    FoldMetrics, Method, MetricsReport,
};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "mplrom", version, about = "Local POD reduced-order models with learned error surrogates")]
struct Cli {
    /// `key = value` config file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusKind {
    Error,
    Dimension,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Ci,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum ModelKind {
    MplromError,
    MplromDim,
    Romes,
    Mfc,
}

#[derive(Clone, Copy, ValueEnum)]
enum CrossvalKind {
    MplromError,
    MplromDim,
    Baselines,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gp,
    Ann,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gp => Method::Gp,
            MethodArg::Ann => Method::Ann,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    ParamContour,
    Expm2Range,
    Expm2NumMus,
    ErrorMulromes,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-order model and write the trajectory.
    FomSolve {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate an error or dimension corpus.
    DatasetGen {
        #[arg(long, value_enum)]
        kind: CorpusKind,
        #[arg(long, value_enum, default_value = "full")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a random split and score it on the held-out part.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long, value_enum, default_value = "ann")]
        method: MethodArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Centre of the baseline subset (romes/mfc only).
        #[arg(long)]
        mu_p: Option<f64>,
        /// Basis dimension of the baseline subset (romes/mfc only).
        #[arg(long)]
        k: Option<usize>,
    },
    /// k-fold cross-validation.
    Crossval {
        #[arg(long, value_enum)]
        model: CrossvalKind,
        #[arg(long, value_enum, default_value = "ann")]
        method: MethodArg,
        #[arg(long)]
        data: PathBuf,
        /// Number of folds; defaults to the `folds` config key.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feasible interval around one centre from a trained model and/or the direct oracle.
    FeasibleInterval {
        #[arg(long)]
        mu_p: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        /// Probe spacing; defaults to the `feasible_step` config key.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy decomposition of the viscosity domain.
    Decompose {
        #[arg(long, conflicts_with = "oracle")]
        model: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Plot-ready CSV for one of the standard figures.
    Report {
        #[arg(long, value_enum)]
        figure: Figure,
        /// Error corpus (param-contour, error-mulromes).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trained error model(s) (expm2-range, expm2-num-mus).
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 0.8)]
        mu_p: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Lib(mplrom::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

impl From<mplrom::Error> for CliError {
    fn from(e: mplrom::Error) -> Self {
        Self::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Lib(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Lib(e) if e.is_nonconvergence() => 3,
            Self::Lib(mplrom::Error::TrainingDivergence(_)) => 4,
            Self::Lib(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Lib(mplrom::Error::TrainingDivergence(m)) => {
                write!(f, "training diverged: {m}; try a smaller ann_learning_rate")
            }
            Self::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.apply_env()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli)?;
    log::info!("resolved config (hash {}):\n{}", cfg.hash(), cfg.render());
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::FomSolve { mu, out } => fom_solve(&cfg, mu, &out),
        Command::DatasetGen { kind, preset, out } => dataset_gen(&cfg, kind, preset, &out),
        Command::Train {
            model,
            method,
            data,
            out,
            metrics,
            mu_p,
            k,
        } => train(&cfg, model, method.into(), &data, &out, metrics.as_deref(), mu_p.zip(k)),
        Command::Crossval {
            model,
            method,
            data,
            k,
            out,
        } => crossval(&cfg, model, method.into(), &data, k, &out),
        Command::FeasibleInterval {
            mu_p,
            k,
            eps,
            model,
            oracle,
            step,
            out,
        } => feasible_interval(&cfg, mu_p, k, eps, model.as_deref(), oracle, step, out.as_deref()),
        Command::Decompose {
            model,
            oracle,
            out,
            plot,
        } => decompose(&cfg, model.as_deref(), oracle, &out, plot.as_deref()),
        Command::Report {
            figure,
            data,
            model,
            oracle,
            mu_p,
            out,
        } => report(&cfg, figure, data.as_deref(), &model, oracle, mu_p, &out),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Opens `path` and stamps the config metadata plus any extra lines.
fn artifact(path: &Path, cfg: &RunConfig, extra: &[(&str, String)]) -> CliResult<BufWriter<File>> {
    let mut w = create(path)?;
    let mut meta = cfg.metadata();
    meta.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    write_metadata(&mut w, &meta)?;
    Ok(w)
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Model files carry `#` metadata lines ahead of the serialized model.
fn read_model_text(path: &Path) -> CliResult<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().skip_while(|l| l.starts_with('#')).collect::<Vec<_>>().join("\n") + "\n")
}

fn load_error_model(path: &Path) -> CliResult<ErrorModel> {
    Ok(ErrorModel::from_text(&read_model_text(path)?)?)
}

fn load_error_corpus(path: &Path) -> CliResult<Vec<ErrorRecord>> {
    let (records, meta) = read_error_csv(BufReader::new(File::open(path)?))?;
    log::info!("{} error records from {} ({:?})", records.len(), path.display(), meta);
    Ok(records)
}

fn load_dimension_corpus(path: &Path) -> CliResult<Vec<DimensionRecord>> {
    let (records, meta) = read_dimension_csv(BufReader::new(File::open(path)?))?;
    log::info!("{} dimension records from {} ({:?})", records.len(), path.display(), meta);
    Ok(records)
}

fn check_mu(mu: f64) -> CliResult<()> {
    if !(MU_RANGE.0..=MU_RANGE.1).contains(&mu) {
        return Err(CliError::Config(format!(
            "viscosity {mu} outside [{}, {}]",
            MU_RANGE.0, MU_RANGE.1
        )));
    }
    Ok(())
}

fn fom_solve(cfg: &RunConfig, mu: f64, out: &Path) -> CliResult<()> {
    check_mu(mu)?;
    let fom = cfg.fom()?;
    let traj = fom.solve(mu)?;
    log::info!(
        "mu={mu}: max Newton residual {:.3e}, {} Newton iterations",
        traj.stats.max_residual,
        traj.stats.newton_iterations
    );
    let mut w = artifact(out, cfg, &[("mu", fmt_f64(mu))])?;
    traj.write_csv(&fom.time.times(), &mut w)?;
    finish(w, out)
}

fn dataset_gen(cfg: &RunConfig, kind: CorpusKind, preset: Preset, out: &Path) -> CliResult<()> {
    let fom = cfg.fom()?;
    let preset_name = match preset {
        Preset::Full => "full",
        Preset::Ci => "ci",
    };
    match kind {
        CorpusKind::Error => {
            let grid = match preset {
                Preset::Full => ErrorGrid::full(),
                Preset::Ci => ErrorGrid::ci(),
            };
            let ds = generate_error_dataset(&fom, &grid)?;
            log::info!("{} records, {:?}", ds.records.len(), ds.stats);
            let mut w = create(out)?;
            let mut meta = cfg.metadata();
            meta.push(("kind".into(), "error".into()));
            meta.push(("preset".into(), preset_name.into()));
            write_error_csv(&mut w, &ds.records, &meta)?;
            finish(w, out)
        }
        CorpusKind::Dimension => {
            let centres = match preset {
                Preset::Full => dimension_mu_p_grid(),
                Preset::Ci => dimension_mu_p_grid_ci(),
            };
            let ds = generate_dimension_dataset(&fom, &centres, &dimension_k_list())?;
            log::info!("{} records, {:?}", ds.records.len(), ds.stats);
            let mut w = create(out)?;
            let mut meta = cfg.metadata();
            meta.push(("kind".into(), "dimension".into()));
            meta.push(("preset".into(), preset_name.into()));
            write_dimension_csv(&mut w, &ds.records, &meta)?;
            finish(w, out)
        }
    }
}

fn pick<T: Copy>(records: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| records[i]).collect()
}

fn write_metrics(path: &Path, cfg: &RunConfig, extra: &[(&str, String)], report: &MetricsReport) -> CliResult<()> {
    let mut w = artifact(path, cfg, extra)?;
    report.write_csv(&mut w)?;
    finish(w, path)
}

#[allow(clippy::too_many_arguments)]
fn train(
    cfg: &RunConfig,
    model: ModelKind,
    method: Method,
    data: &Path,
    out: &Path,
    metrics: Option<&Path>,
    subset: Option<(f64, usize)>,
) -> CliResult<()> {
    let seed = cfg.seed()?;
    let frac: f64 = cfg.get("train_fraction")?;
    let mode = cfg.variance_mode()?;
    let tag = [("model", model.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()), ("method", method.to_string())];
    let (text, fold) = match model {
        ModelKind::MplromError => {
            let records = load_error_corpus(data)?;
            let records = maybe_subsample(cfg, records)?;
            let (tr, te) = split(records.len(), frac, seed)?;
            let (train, test) = (pick(&records, &tr), pick(&records, &te));
            let m = ErrorModel::train(&train, &cfg.error_regressor(method)?, cfg.error_target()?)?;
            let truth: Vec<f64> = test.iter().map(|r| r.log_err).collect();
            let fold = fold_metrics(&m.predict_records(&test)?, &truth, mode)?;
            (m.to_text(), fold)
        }
        ModelKind::MplromDim => {
            let records = load_dimension_corpus(data)?;
            let (tr, te) = split(records.len(), frac, seed)?;
            let (train, test) = (pick(&records, &tr), pick(&records, &te));
            let max_dim = records.iter().map(|r| r.k_pod).max().unwrap_or(1);
            let m = DimensionModel::train(&train, &cfg.dimension_regressor(method)?, max_dim)?;
            let q: Vec<(f64, f64)> = test.iter().map(|r| (r.mu_p, r.log_err)).collect();
            let pred: Vec<f64> = m.predict(&q)?.into_iter().map(|v| v as f64).collect();
            let truth: Vec<f64> = test.iter().map(|r| r.k_pod as f64).collect();
            (m.to_text(), fold_metrics(&pred, &truth, mode)?)
        }
        ModelKind::Romes | ModelKind::Mfc => {
            let (mu_p, k) = subset
                .ok_or_else(|| CliError::Config("baseline training needs --mu-p and --k".into()))?;
            let kind = if model == ModelKind::Romes {
                BaselineKind::Romes
            } else {
                BaselineKind::Mfc
            };
            let records: Vec<ErrorRecord> = load_error_corpus(data)?
                .into_iter()
                .filter(|r| r.mu_p == mu_p && r.k_pod == k)
                .collect();
            if records.len() < 5 {
                return Err(CliError::Config(format!(
                    "subset mu_p={mu_p}, K={k} has {} records in {}",
                    records.len(),
                    data.display()
                )));
            }
            let (tr, te) = split(records.len(), frac, seed)?;
            let (train, test) = (pick(&records, &tr), pick(&records, &te));
            let m = BaselineModel::train(kind, &train, &cfg.baseline_regressor(method)?)?;
            let truth: Vec<f64> = test.iter().map(|r| r.log_err).collect();
            (m.to_text(), fold_metrics(&m.predict_records(&test)?, &truth, mode)?)
        }
    };
    log::info!("held-out E_fold={:.6} VAR_fold={:.6} (n={})", fold.e_fold, fold.var_fold, fold.n);
    let mut w = artifact(out, cfg, &tag)?;
    w.write_all(text.as_bytes())?;
    finish(w, out)?;
    if let Some(path) = metrics {
        write_metrics(path, cfg, &tag, &MetricsReport::from_folds(vec![fold])?)?;
    }
    Ok(())
}

/// Optional random subset of the corpus (`subset_size`, 0 keeps everything).
fn maybe_subsample(cfg: &RunConfig, records: Vec<ErrorRecord>) -> CliResult<Vec<ErrorRecord>> {
    let m: usize = cfg.get("subset_size")?;
    if m == 0 || m >= records.len() {
        return Ok(records);
    }
    let idx = random_subset(records.len(), m, cfg.seed()?);
    Ok(pick(&records, &idx))
}

fn crossval(
    cfg: &RunConfig,
    model: CrossvalKind,
    method: Method,
    data: &Path,
    k: Option<usize>,
    out: &Path,
) -> CliResult<()> {
    let k = match k {
        Some(k) => k,
        None => cfg.get("folds")?,
    };
    let seed = cfg.seed()?;
    let mode = cfg.variance_mode()?;
    match model {
        CrossvalKind::MplromError => {
            let records = maybe_subsample(cfg, load_error_corpus(data)?)?;
            let folds = kfold(records.len(), k, seed)?;
            let reg = cfg.error_regressor(method)?;
            let target = cfg.error_target()?;
            let per_fold = (0..k)
                .into_par_iter()
                .map(|f| {
                    let train = pick(&records, &folds.train_indices(f));
                    let test = pick(&records, &folds.test_indices(f));
                    evaluate_error_model(&train, &test, &reg, target, mode)
                })
                .collect::<mplrom::Result<Vec<FoldMetrics>>>()?;
            let report = MetricsReport::from_folds(per_fold)?;
            log::info!("{}", describe(&report));
            write_metrics(out, cfg, &[("model", "mplrom-error".into()), ("method", method.to_string())], &report)
        }
        CrossvalKind::MplromDim => {
            let records = load_dimension_corpus(data)?;
            let max_dim = records.iter().map(|r| r.k_pod).max().unwrap_or(1);
            let rep = crossval_dimension_model(&records, &cfg.dimension_regressor(method)?, max_dim, k, seed)?;
            log::info!(
                "{}\nexact {:.4}, within one {:.4}",
                describe(&rep.metrics),
                rep.exact_rate,
                rep.within_one_rate
            );
            write_metrics(
                out,
                cfg,
                &[
                    ("model", "mplrom-dim".into()),
                    ("method", method.to_string()),
                    ("exact_rate", fmt_f64(rep.exact_rate)),
                    ("within_one_rate", fmt_f64(rep.within_one_rate)),
                ],
                &rep.metrics,
            )
        }
        CrossvalKind::Baselines => {
            let records = load_error_corpus(data)?;
            let mut subsets = subsets_of(&records);
            let n_sub: usize = cfg.get("baseline_subsets")?;
            if n_sub > 0 && n_sub < subsets.len() {
                let mut idx = random_subset(subsets.len(), n_sub, seed);
                idx.sort_unstable();
                subsets = pick(&subsets, &idx);
            }
            let cmp_cfg = ComparisonConfig {
                folds: k,
                seed,
                max_mplrom_train: cfg.cap("mplrom_max_train")?,
            };
            let rep = compare_with_baselines(
                &records,
                &subsets,
                &cfg.error_regressor(method)?,
                &cfg.baseline_regressor(method)?,
                &cmp_cfg,
            )?;
            log::info!(
                "{} subsets: E mplrom {:.6}, mfc {:.6}, romes {:.6}; ordering {}",
                rep.subsets.len(),
                rep.e_mplrom,
                rep.e_mfc,
                rep.e_romes,
                if rep.ordering_holds() { "holds" } else { "violated" }
            );
            let mut w = artifact(
                out,
                cfg,
                &[
                    ("method", method.to_string()),
                    ("e_mplrom", fmt_f64(rep.e_mplrom)),
                    ("e_mfc", fmt_f64(rep.e_mfc)),
                    ("e_romes", fmt_f64(rep.e_romes)),
                ],
            )?;
            rep.write_csv(&mut w)?;
            finish(w, out)
        }
    }
}

fn interval_row(w: &mut impl Write, source: &str, iv: &FeasibleInterval) -> CliResult<()> {
    writeln!(w, "{source},{},{},{}", fmt_f64(iv.mu_p), fmt_f64(iv.d_l), fmt_f64(iv.d_r))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn feasible_interval(
    cfg: &RunConfig,
    mu_p: f64,
    k: usize,
    eps: f64,
    model: Option<&Path>,
    oracle: bool,
    step: Option<f64>,
    out: Option<&Path>,
) -> CliResult<()> {
    if model.is_none() && !oracle {
        return Err(CliError::Config("give --model, --oracle or both".into()));
    }
    check_mu(mu_p)?;
    let step = match step {
        Some(s) => s,
        None => cfg.get("feasible_step")?,
    };
    let bounds = (cfg.get::<f64>("a")?, cfg.get::<f64>("b")?);
    let mut rows = Vec::new();
    if let Some(path) = model {
        let mut m = load_error_model(path)?;
        let iv = find_feasible_interval(&mut m, mu_p, k, eps, step, bounds)?;
        println!("model  [{:.4}, {:.4}]", iv.d_l, iv.d_r);
        rows.push(("model", iv));
    }
    if oracle {
        let fom = cfg.fom()?;
        let mut o = Cached::new(OracleErrorModel::new(&fom));
        let iv = find_feasible_interval(&mut o, mu_p, k, eps, step, bounds)?;
        log::info!("oracle used {} full-order solves", o.into_inner().fom_solves);
        println!("oracle [{:.4}, {:.4}]", iv.d_l, iv.d_r);
        rows.push(("oracle", iv));
    }
    if let Some(path) = out {
        let mut w = artifact(
            path,
            cfg,
            &[("k_pod", k.to_string()), ("eps_bar", fmt_f64(eps)), ("step", fmt_f64(step))],
        )?;
        writeln!(w, "source,mu_p,d_l,d_r")?;
        for (src, iv) in &rows {
            interval_row(&mut w, src, iv)?;
        }
        finish(w, path)?;
    }
    Ok(())
}

/// Runs the greedy cover with either a trained model or the direct oracle.
fn run_decomposition(
    cfg: &RunConfig,
    model: Option<&Path>,
    oracle: bool,
) -> CliResult<mplrom::decomposition::DomainDecomposition> {
    let dcfg = cfg.decomposition()?;
    let step: f64 = cfg.get("feasible_step")?;
    let bounds = (dcfg.a, dcfg.b);
    let fom;
    let mut predictor: Box<dyn FnMut(f64, f64, usize) -> mplrom::Result<f64>> = match (model, oracle) {
        (Some(path), false) => {
            let mut m = load_error_model(path)?;
            Box::new(move |mu, mu_p, k| m.log_error(mu, mu_p, k))
        }
        (None, true) => {
            fom = cfg.fom()?;
            let mut o = Cached::new(OracleErrorModel::new(&fom));
            Box::new(move |mu, mu_p, k| o.log_error(mu, mu_p, k))
        }
        _ => return Err(CliError::Config("give exactly one of --model or --oracle".into())),
    };
    let mut cached = Cached::new(&mut predictor);
    let (decomp, err) = decompose_domain_partial(&mut cached, &dcfg);
    if let Some(e) = err {
        log::error!("decomposition stopped after {} intervals", decomp.intervals.len());
        return Err(e.into());
    }
    let check = verify_decomposition(&decomp, &mut cached, bounds, step)?;
    log::info!(
        "{} intervals in {} iterations, final threshold {:.4e}, verification {}",
        decomp.intervals.len(),
        decomp.iterations,
        decomp.intervals.last().map_or(f64::NAN, |iv| iv.eps_bar),
        if check.is_clean() { "clean" } else { "FAILED" }
    );
    if !check.is_clean() {
        log::warn!("{check:?}");
    }
    Ok(decomp)
}

fn decompose(cfg: &RunConfig, model: Option<&Path>, oracle: bool, out: &Path, plot: Option<&Path>) -> CliResult<()> {
    let decomp = run_decomposition(cfg, model, oracle)?;
    let mut w = artifact(out, cfg, &[("iterations", decomp.iterations.to_string())])?;
    decomp.write_csv(&mut w)?;
    finish(w, out)?;
    if let Some(path) = plot {
        let mut w = artifact(path, cfg, &[])?;
        decomp.write_plot_data(&mut w)?;
        finish(w, path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn report(
    cfg: &RunConfig,
    figure: Figure,
    data: Option<&Path>,
    models: &[PathBuf],
    oracle: bool,
    mu_p: f64,
    out: &Path,
) -> CliResult<()> {
    let need_data = || data.ok_or_else(|| CliError::Config("this figure needs --data".into()));
    match figure {
        Figure::ParamContour => {
            let records: Vec<ErrorRecord> =
                load_error_corpus(need_data()?)?.into_iter().filter(|r| r.mu_p == mu_p).collect();
            if records.is_empty() {
                return Err(CliError::Config(format!("no records with mu_p={mu_p}")));
            }
            let mut w = artifact(out, cfg, &[("mu_p", fmt_f64(mu_p))])?;
            writeln!(w, "mu,k_pod,err,log_err")?;
            for r in &records {
                writeln!(w, "{},{},{},{}", fmt_f64(r.mu), r.k_pod, fmt_f64(r.log_err.exp()), fmt_f64(r.log_err))?;
            }
            finish(w, out)
        }
        Figure::Expm2Range => {
            let dcfg = cfg.decomposition()?;
            let step: f64 = cfg.get("feasible_step")?;
            let centre: f64 = 0.7;
            let eps: f64 = dcfg.eps0;
            let bounds = (dcfg.a, dcfg.b);
            let mut w = artifact(
                out,
                cfg,
                &[("k_pod", dcfg.k_pod.to_string()), ("eps_bar", fmt_f64(eps)), ("step", fmt_f64(step))],
            )?;
            writeln!(w, "source,mu_p,d_l,d_r")?;
            let mut model_ivs = Vec::new();
            for path in models {
                let mut m = load_error_model(path)?;
                model_ivs.push(find_feasible_interval(&mut m, centre, dcfg.k_pod, eps, step, bounds)?);
            }
            for (i, iv) in model_ivs.iter().enumerate() {
                interval_row(&mut w, &format!("model{i}"), iv)?;
            }
            if !model_ivs.is_empty() {
                let n = model_ivs.len() as f64;
                let avg = FeasibleInterval {
                    d_l: model_ivs.iter().map(|iv| iv.d_l).sum::<f64>() / n,
                    d_r: model_ivs.iter().map(|iv| iv.d_r).sum::<f64>() / n,
                    ..model_ivs[0]
                };
                interval_row(&mut w, "model_mean", &avg)?;
            }
            if oracle {
                let fom = cfg.fom()?;
                let mut o = Cached::new(OracleErrorModel::new(&fom));
                interval_row(&mut w, "truth", &find_feasible_interval(&mut o, centre, dcfg.k_pod, eps, step, bounds)?)?;
            }
            finish(w, out)
        }
        Figure::Expm2NumMus => {
            let model = match models {
                [] => None,
                [one] => Some(one.as_path()),
                _ => return Err(CliError::Config("expm2-num-mus takes one --model".into())),
            };
            let decomp = run_decomposition(cfg, model, oracle)?;
            let mut w = artifact(out, cfg, &[])?;
            decomp.write_plot_data(&mut w)?;
            finish(w, out)
        }
        Figure::ErrorMulromes => {
            let records = load_error_corpus(need_data()?)?;
            let method = Method::Ann;
            let rows = fixed_test_set_comparison(
                &records,
                (1.0, 10),
                &cfg.error_regressor(method)?,
                &cfg.baseline_regressor(method)?,
                5,
                cfg.seed()?,
                cfg.cap("mplrom_max_train")?,
            )?;
            let mut w = artifact(out, cfg, &[("mu_p", fmt_f64(1.0)), ("k_pod", "10".into())])?;
            writeln!(w, "mu,log_residual,abs_mplrom,abs_mfc,abs_romes")?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt_f64(r.mu),
                    fmt_f64(r.log_residual),
                    fmt_f64(r.abs_mplrom),
                    fmt_f64(r.abs_mfc),
                    fmt_f64(r.abs_romes)
                )?;
            }
            finish(w, out)
        }
    }
}
