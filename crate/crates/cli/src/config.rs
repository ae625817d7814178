//! Flat `key = value` run configuration with defaults for every pipeline stage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use mplrom::decomposition::DecompositionConfig;
use mplrom::fom::{FomModel, LinearSolver, NewtonSettings, SpatialGrid, TimeGrid};
use mplrom::gp::Distance;
use mplrom::mlp::Optimizer;
use mplrom::surrogate::{ErrorTarget, Method, RegressorConfig, VarianceMode};

pub const SEED_ENV: &str = "MPLROM_SEED";

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    // full-order model
    ("length", "1"),
    ("n_space", "201"),
    ("t_final", "1"),
    ("n_time", "301"),
    ("newton_tol", "1e-10"),
    ("newton_max_iter", "50"),
    ("linear_solver", "banded"),
    // regression engines
    ("ann_hidden_width", "20"),
    ("ann_error_layers", "6"),
    ("ann_dimension_layers", "5"),
    ("ann_baseline_layers", "2"),
    ("ann_baseline_width", "10"),
    ("ann_max_epochs", "2000"),
    ("ann_batch_size", "32"),
    ("ann_learning_rate", "1e-3"),
    ("ann_optimizer", "adam"),
    ("ann_loss_tol", "1e-8"),
    ("gp_restarts", "5"),
    ("gp_max_opt_points", "300"),
    ("gp_max_train_points", "3000"),
    ("gp_distance", "squared"),
    // evaluation
    ("folds", "5"),
    ("train_fraction", "0.8"),
    ("subset_size", "0"),
    ("baseline_subsets", "0"),
    ("mplrom_max_train", "0"),
    ("variance_mode", "absolute"),
    ("error_target", "log"),
    // decomposition
    ("a", "0.01"),
    ("b", "1"),
    ("eps0", "1e-2"),
    ("delta_r", "5e-3"),
    ("r0", "0.5"),
    ("k_pod", "9"),
    ("beta1", "1.2"),
    ("beta2", "0.9"),
    ("beta3", "1.4"),
    ("mu_p0", "0.87"),
    ("max_iterations", "0"),
    ("feasible_step", "0.001"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

/// Fully resolved configuration: defaults, then the file, then overrides, then the env seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(ConfigError(format!("unknown config key '{key}'"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> CResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected 'key = value', got '{raw}'", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| ConfigError(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, kv: &str) -> CResult<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn apply_env(&mut self) -> CResult<()> {
        if let Ok(seed) = std::env::var(SEED_ENV) {
            self.set("seed", &seed)?;
            self.get::<u64>("seed")?;
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CResult<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| ConfigError(format!("unknown config key '{key}'")))?;
        raw.parse::<T>()
            .map_err(|e| ConfigError(format!("config key '{key}' = '{raw}': {e}")))
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Metadata lines stamped into every artifact.
    pub fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("config_hash".to_string(), self.hash()),
            ("seed".to_string(), self.values["seed"].clone()),
        ]
    }

    pub fn seed(&self) -> CResult<u64> {
        self.get("seed")
    }

    pub fn fom(&self) -> CResult<FomModel> {
        let grid = SpatialGrid::new(self.get("length")?, self.get("n_space")?).map_err(lib_err)?;
        let time = TimeGrid::new(self.get("t_final")?, self.get("n_time")?).map_err(lib_err)?;
        let solver: LinearSolver = self.get::<String>("linear_solver")?.parse().map_err(lib_err)?;
        let newton = NewtonSettings {
            max_iter: self.get("newton_max_iter")?,
            tol: self.get("newton_tol")?,
        };
        Ok(FomModel::new(grid, time)
            .map_err(lib_err)?
            .with_linear_solver(solver)
            .with_newton(newton))
    }

    fn regressor(&self, method: Method, layers: usize, width: usize) -> CResult<RegressorConfig> {
        let mut cfg = RegressorConfig::new(method, layers).with_seed(self.seed()?);
        cfg.hidden_width = width;
        cfg.ann.max_epochs = self.get("ann_max_epochs")?;
        cfg.ann.batch_size = self.get("ann_batch_size")?;
        cfg.ann.learning_rate = self.get("ann_learning_rate")?;
        cfg.ann.optimizer = self.get::<String>("ann_optimizer")?.parse::<Optimizer>().map_err(lib_err)?;
        cfg.ann.loss_tol = self.get("ann_loss_tol")?;
        cfg.gp.restarts = self.get("gp_restarts")?;
        cfg.gp.max_opt_points = self.get("gp_max_opt_points")?;
        cfg.gp.max_train_points = self.get("gp_max_train_points")?;
        cfg.gp.distance = self.get::<String>("gp_distance")?.parse::<Distance>().map_err(lib_err)?;
        Ok(cfg)
    }

    pub fn error_regressor(&self, method: Method) -> CResult<RegressorConfig> {
        self.regressor(method, self.get("ann_error_layers")?, self.get("ann_hidden_width")?)
    }

    pub fn dimension_regressor(&self, method: Method) -> CResult<RegressorConfig> {
        self.regressor(method, self.get("ann_dimension_layers")?, self.get("ann_hidden_width")?)
    }

    pub fn baseline_regressor(&self, method: Method) -> CResult<RegressorConfig> {
        let mut cfg = self.regressor(method, self.get("ann_baseline_layers")?, self.get("ann_baseline_width")?)?;
        let defaults = mplrom::surrogate::baseline_config(method);
        cfg.ann.batch_size = cfg.ann.batch_size.min(defaults.ann.batch_size);
        cfg.ann.learning_rate = defaults.ann.learning_rate;
        Ok(cfg)
    }

    pub fn error_target(&self) -> CResult<ErrorTarget> {
        match self.get::<String>("error_target")?.as_str() {
            "log" => Ok(ErrorTarget::Log),
            "linear" => Ok(ErrorTarget::Linear),
            other => Err(ConfigError(format!("error_target must be log or linear, got '{other}'"))),
        }
    }

    pub fn variance_mode(&self) -> CResult<VarianceMode> {
        match self.get::<String>("variance_mode")?.as_str() {
            "absolute" => Ok(VarianceMode::AbsoluteErrors),
            "literal" => Ok(VarianceMode::Literal),
            other => Err(ConfigError(format!("variance_mode must be absolute or literal, got '{other}'"))),
        }
    }

    pub fn decomposition(&self) -> CResult<DecompositionConfig> {
        let cap: usize = self.get("max_iterations")?;
        let cfg = DecompositionConfig {
            a: self.get("a")?,
            b: self.get("b")?,
            eps0: self.get("eps0")?,
            delta_r: self.get("delta_r")?,
            r0: self.get("r0")?,
            k_pod: self.get("k_pod")?,
            beta1: self.get("beta1")?,
            beta2: self.get("beta2")?,
            beta3: self.get("beta3")?,
            mu_p0: self.get("mu_p0")?,
            max_iterations: (cap > 0).then_some(cap),
        };
        cfg.validate().map_err(lib_err)?;
        Ok(cfg)
    }

    /// 0 in the config means "no cap".
    pub fn cap(&self, key: &str) -> CResult<usize> {
        let v: usize = self.get(key)?;
        Ok(if v == 0 { usize::MAX } else { v })
    }
}

fn lib_err(e: mplrom::Error) -> ConfigError {
    ConfigError(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_and_rejects_unknown_keys() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nseed = 7\n  k_pod=12  # trailing\n\n").unwrap();
        assert_eq!(c.seed().unwrap(), 7);
        assert_eq!(c.get::<usize>("k_pod").unwrap(), 12);
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.apply_text("no equals sign").is_err());
        assert!(c.apply_override("beta1=2").is_ok());
        assert!(c.apply_override("nope=2").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.set("seed", "1").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn typed_views() {
        let c = RunConfig::default();
        assert_eq!(c.fom().unwrap().n_state(), 199);
        let d = c.decomposition().unwrap();
        assert_eq!((d.k_pod, d.mu_p0), (9, 0.87));
        let mut bad = RunConfig::default();
        bad.set("beta2", "1.5").unwrap();
        assert!(bad.decomposition().is_err());
        bad.set("n_space", "abc").unwrap();
        assert!(bad.fom().is_err());
    }
}
