//! Pipeline configuration: one JSON document, every key optional, every
//! relevant key overridable from the command line.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hotspot_core::featurize::FeaturizeError;
use hotspot_core::gbdt::GbdtError;
use hotspot_core::ingest::IngestError;
use hotspot_core::metrics::MetricsError;
use hotspot_core::synth::SynthError;
use hotspot_core::{SynthConfig, TrainParams};

/// Failures grouped by exit code: 2 for configuration problems, 3 for data
/// problems (missing or inconsistent inputs), 4 for everything unexpected.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FeaturizeError> for CliError {
    fn from(e: FeaturizeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GbdtError> for CliError {
    fn from(e: GbdtError) -> Self {
        match e {
            GbdtError::InvalidParams(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(m) => CliError::Config(m),
            SynthError::UnknownPreset(_) => CliError::Config(e.to_string()),
            SynthError::Ingest(inner) => inner.into(),
            SynthError::Io(inner) => CliError::Internal(inner.to_string()),
        }
    }
}

/// Write failures are environment trouble, not bad input.
pub fn write_err(e: impl fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Raw dataset directory: cp.csv, up.csv, labels.csv, truth.json.
    pub data_dir: PathBuf,
    /// Artifact directory: cleaned CSVs, features, model, reports.
    pub out_dir: PathBuf,
    pub window_secs: u32,
    /// Share of users (not rows) placed in the training part.
    pub split_ratio: f64,
    pub split_seed: u64,
    /// Decision threshold on the positive-class probability.
    pub threshold: f64,
    /// Positive-class weights for `evaluate --sweep`; empty = no sweep.
    pub weight_sweep: Vec<f64>,
    /// A user enters affected_users.csv when more than this many of their
    /// windows in the latest hour are flagged.
    pub min_flagged_windows: u32,
    pub train: TrainParams,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            window_secs: 300,
            split_ratio: 0.7,
            split_seed: 42,
            threshold: 0.5,
            weight_sweep: Vec::new(),
            min_flagged_windows: 2,
            train: TrainParams::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(CliError::Config(format!(
                "split_ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.window_secs == 0 {
            return Err(CliError::Config("window_secs must be positive".into()));
        }
        if self.data_dir.as_os_str().is_empty() || self.out_dir.as_os_str().is_empty() {
            return Err(CliError::Config("data_dir and out_dir must be non-empty".into()));
        }
        if self.weight_sweep.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(CliError::Config("weight_sweep entries must be positive".into()));
        }
        Ok(())
    }

    // Fixed artifact names; directories come from the config.
    pub fn cp_csv(&self) -> PathBuf {
        self.data_dir.join("cp.csv")
    }
    pub fn up_csv(&self) -> PathBuf {
        self.data_dir.join("up.csv")
    }
    pub fn labels_csv(&self) -> PathBuf {
        self.data_dir.join("labels.csv")
    }
    pub fn cp_clean_csv(&self) -> PathBuf {
        self.out_dir.join("cp_clean.csv")
    }
    pub fn up_clean_csv(&self) -> PathBuf {
        self.out_dir.join("up_clean.csv")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.out_dir.join("ingest_report.json")
    }
    pub fn imputation_means(&self) -> PathBuf {
        self.out_dir.join("imputation_means.json")
    }
    pub fn features_csv(&self) -> PathBuf {
        self.out_dir.join("features.csv")
    }
    pub fn columns_json(&self) -> PathBuf {
        self.out_dir.join("columns.json")
    }
    pub fn model_json(&self) -> PathBuf {
        self.out_dir.join("model.json")
    }
    pub fn train_log_csv(&self) -> PathBuf {
        self.out_dir.join("train_log.csv")
    }
    pub fn eval_json(&self) -> PathBuf {
        self.out_dir.join("eval.json")
    }
    pub fn roc_csv(&self) -> PathBuf {
        self.out_dir.join("roc.csv")
    }
    pub fn pr_csv(&self) -> PathBuf {
        self.out_dir.join("pr.csv")
    }
    pub fn importance_csv(&self) -> PathBuf {
        self.out_dir.join("importance.csv")
    }
    pub fn weight_sweep_csv(&self) -> PathBuf {
        self.out_dir.join("weight_sweep.csv")
    }
    pub fn predictions_csv(&self) -> PathBuf {
        self.out_dir.join("predictions.csv")
    }
    pub fn affected_users_csv(&self) -> PathBuf {
        self.out_dir.join("affected_users.csv")
    }
}
