//! TOML run configuration. Relative paths resolve against the config file's
//! directory; command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spatial_factor::checks::{GewekeConfig, RecoveryConfig};
use spatial_factor::simulate::SimulationSpec;
use spatial_factor::SamplerConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub adjacency: PathBuf,
    pub data: PathBuf,
    pub covariates: Option<PathBuf>,
    /// Subset and order of covariate columns; all columns when absent.
    pub covariate_columns: Option<Vec<String>>,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

fn default_chains() -> usize {
    4
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeConfig {
    #[serde(default)]
    pub chains: Vec<PathBuf>,
    pub level: Option<f64>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::validation(format!("config {}: {}", path.display(), e.message())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_fit(path: &Path) -> Result<FitConfig, CliError> {
    let mut c: FitConfig = read_toml(path)?;
    let base = base_dir(path);
    c.adjacency = resolve(&base, &c.adjacency);
    c.data = resolve(&base, &c.data);
    c.covariates = c.covariates.map(|p| resolve(&base, &p));
    Ok(c)
}

pub fn load_summarize(path: &Path) -> Result<SummarizeConfig, CliError> {
    let mut c: SummarizeConfig = read_toml(path)?;
    let base = base_dir(path);
    c.chains = c.chains.iter().map(|p| resolve(&base, p)).collect();
    Ok(c)
}

pub fn load_simulation(path: &Path) -> Result<SimulationSpec, CliError> {
    let mut spec: SimulationSpec = read_toml(path)?;
    if let spatial_factor::simulate::GraphSpec::EdgeList { path: p, .. } = &mut spec.graph {
        *p = resolve(&base_dir(path), p);
    }
    Ok(spec)
}

pub fn load_geweke(path: Option<&Path>) -> Result<GewekeConfig, CliError> {
    path.map_or_else(|| Ok(GewekeConfig::default()), read_toml)
}

pub fn load_recovery(path: Option<&Path>) -> Result<RecoveryConfig, CliError> {
    path.map_or_else(|| Ok(RecoveryConfig::default()), read_toml)
}
