//! Command arguments and the TOML experiment file.
//!
//! Every argument struct doubles as a config-file section. Values given on
//! the command line override the file, which overrides built-in defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct Common {
    /// Base seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads for the parallel phases.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Experiment config file (TOML).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenArgs {
    /// uniform, implosion, explosion or expansion.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Disk center as `x,y`; drawn per instance when absent.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Training manifest written by `gen`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Number of tour positions.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    /// generalized or legacy.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    /// none, sqrt_nm_t or nm_h.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescale: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_m: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// A single instance file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<PathBuf>,
    /// A candidate file from `heatmap`, used instead of the model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<PathBuf>,
    /// Every instance of a manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Comma-separated candidate widths.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_m: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_no_improve: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_budget_ms: Option<u64>,
    #[arg(long, action = clap::ArgAction::Set)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub or_opt: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_m: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_no_improve: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_budget_ms: Option<u64>,
    #[arg(long, action = clap::ArgAction::Set)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub or_opt: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauArgs {
    /// Comma-separated families; all four when absent.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist: Option<Vec<String>>,
    /// Comma-separated instance sizes.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// exact or approx.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
    /// bbox or hull.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area: Option<String>,
}

/// Contents of a `--config` file. Each command reads the top-level common
/// keys and its own section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauArgs>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingFile(format!("config {} not found", path.display())),
            _ => CliError::Io(format!("reading {}: {e}", path.display())),
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the config as `config.toml` in `dir`.
    pub fn save_into(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
    }
}

/// Overlays the keys set in `over` onto `base`.
pub fn overlay<T: Serialize + DeserializeOwned + Default>(base: Option<T>, over: &T) -> CliResult<T> {
    let table = |v: &T| toml::Table::try_from(v).map_err(|e| CliError::Usage(format!("invalid arguments: {e}")));
    let mut merged = table(&base.unwrap_or_default())?;
    merged.extend(table(over)?);
    merged.try_into().map_err(|e| CliError::Usage(format!("invalid arguments: {e}")))
}

/// Common flags after applying the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
}

impl Resolved {
    pub fn from(common: &Common, file: &ExperimentConfig) -> CliResult<Self> {
        let out = common
            .out
            .clone()
            .or_else(|| file.out.clone())
            .ok_or_else(|| CliError::Usage("missing required option --out".into()))?;
        Ok(Self {
            seed: common.seed.or(file.seed).unwrap_or(0),
            workers: common.workers.or(file.workers).unwrap_or(1),
            out,
        })
    }

    /// Config file equivalent to this run, with `section` filled in.
    pub fn record(&self, fill: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seed: Some(self.seed),
            workers: Some(self.workers),
            out: Some(self.out.clone()),
            ..ExperimentConfig::default()
        };
        fill(&mut cfg);
        cfg
    }
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::Usage(format!("missing required option --{flag}")))
}

pub fn parse_value<T: std::str::FromStr<Err = utsplab::Error>>(value: &str) -> CliResult<T> {
    value.parse().map_err(|e: utsplab::Error| CliError::Usage(e.to_string()))
}
