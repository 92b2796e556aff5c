//! Run configuration: a TOML file plus `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use ltpdpm::basis::{BasisConfig, EofRule, SpatialLayout};
use ltpdpm::ingest::DatasetFormat;
use ltpdpm::predict::ExceedanceMode;
use ltpdpm::sampler::{Hyperparameters, MCMCConfig};
use ltpdpm::synthetic::ScenarioConfig;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for every stochastic stage.
    pub seed: u64,
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
    pub task: TaskConfig,
    pub simulate: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            paths: PathsConfig::default(),
            model: ModelConfig::default(),
            mcmc: McmcConfig::default(),
            task: TaskConfig::default(),
            simulate: ScenarioConfig::default(),
        }
    }
}

/// Relative paths are taken relative to the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    /// `binary` or `csv-long`.
    pub dataset_format: String,
    pub covariate: PathBuf,
    pub basis: PathBuf,
    pub samples: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: "dataset.bin".into(),
            dataset_format: "binary".into(),
            covariate: "covariate.csv".into(),
            basis: "basis.bin".into(),
            samples: "samples".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Mixture components.
    pub k: usize,
    /// Weeks per year of the dataset calendar.
    pub weeks_per_year: usize,
    pub p_t: usize,
    pub layout: SpatialLayout,
    pub prune_mass: f64,
    /// Explicit EOF count; takes precedence over `q`.
    pub l: Option<usize>,
    /// Keep EOFs with eigenvalue at least `q` times the largest.
    pub q: f64,
    /// Fit the Gaussian benchmark instead (K = 1, df pinned at 40).
    pub lgp: bool,
    pub hyper: Hyperparameters,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let basis = BasisConfig::default();
        ModelConfig {
            k: 5,
            weeks_per_year: ltpdpm::ingest::WEEKS_PER_YEAR,
            p_t: basis.p_t,
            layout: basis.layout,
            prune_mass: basis.prune_mass,
            l: None,
            q: 0.01,
            lgp: false,
            hyper: Hyperparameters::default(),
        }
    }
}

impl ModelConfig {
    pub fn basis_config(&self) -> BasisConfig {
        BasisConfig {
            p_t: self.p_t,
            layout: self.layout.clone(),
            prune_mass: self.prune_mass,
            eof_rule: match self.l {
                Some(l) => EofRule::Count(l),
                None => EofRule::Threshold(self.q),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        let d = MCMCConfig::default();
        McmcConfig {
            n_iter: d.n_iter,
            burn_in: d.burn_in,
            thin: d.thin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Target time index, 1-based; alternatively `year` and `week`.
    pub t0: Option<usize>,
    pub year: Option<i64>,
    pub week: Option<usize>,
    /// Fixed threshold.
    pub u: Option<f64>,
    /// Site-quantile level for exceedance probabilities.
    pub p: Option<f64>,
    pub alpha: f64,
    /// `union` or `intersection`.
    pub mode: String,
    /// Return period in years; enables return levels.
    pub return_period: Option<usize>,
    pub reference_year: Option<i64>,
    /// Week for the decadal rate of change; 0 averages over the year.
    pub drc_week: Option<usize>,
    pub d0_sites: Option<Vec<usize>>,
    /// `[lon, lat]`.
    pub d0_center: Option<[f64; 2]>,
    pub d0_radius_km: Option<f64>,
    /// Last training week of the chronological split.
    pub cut: Option<usize>,
    pub level_lo: f64,
    pub level_hi: f64,
    pub level_steps: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            t0: None,
            year: None,
            week: None,
            u: None,
            p: None,
            alpha: 0.05,
            mode: "union".into(),
            return_period: None,
            reference_year: None,
            drc_week: None,
            d0_sites: None,
            d0_center: None,
            d0_radius_km: None,
            cut: None,
            level_lo: 0.95,
            level_hi: 0.999,
            level_steps: 10,
        }
    }
}

impl RunConfig {
    pub fn mcmc_config(&self) -> MCMCConfig {
        let (k, fixed_df) = if self.model.lgp { (1, Some(40.0)) } else { (self.model.k, None) };
        MCMCConfig {
            n_iter: self.mcmc.n_iter,
            burn_in: self.mcmc.burn_in,
            thin: self.mcmc.thin,
            k,
            seed: self.seed,
            fixed_df,
            hyper: self.model.hyper.clone(),
        }
    }

    pub fn dataset_format(&self) -> Result<DatasetFormat, CliError> {
        self.paths.dataset_format.parse().map_err(|e: ltpdpm::Error| CliError::Usage(e.to_string()))
    }

    pub fn exceedance_mode(&self) -> Result<ExceedanceMode, CliError> {
        self.task.mode.parse().map_err(|e: ltpdpm::Error| CliError::Usage(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{assignment}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key '{key}'")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override key '{key}': '{p}' is not a section")))?;
    }
    let last = parts[parts.len() - 1];
    if raw.trim().is_empty() {
        // `key=` unsets an entry, restoring its default.
        table.remove(last);
    } else {
        table.insert(last.to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

/// Read `path` (if any), apply overrides in order and validate the result.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("cannot parse config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let mut cfg: RunConfig = Value::Table(root)
        .try_into()
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    cfg.simulate.seed = cfg.seed;
    Ok(cfg)
}

/// Resolve `p` against `base` unless absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
