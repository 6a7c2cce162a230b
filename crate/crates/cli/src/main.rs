//! `hotspot` — batch pipeline for predicting complaint hotspots from
//! signalling records: generate/ingest/featurize/train/evaluate/predict.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CliError, PipelineConfig};
use hotspot_core::synth;

#[derive(Parser)]
#[command(name = "hotspot", version, about = "Complaint-hotspot prediction pipeline")]
struct Cli {
    /// JSON config file; command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory with the raw dataset (cp.csv, up.csv, labels.csv).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory for the produced artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Master seed; overrides every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset
    Generate {
        /// Named configuration: separable, hard or paper-scale.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        windows: Option<usize>,
        #[arg(long)]
        affected_fraction: Option<f64>,
        /// Inject out-of-domain codes, negative traffic and duplicates at
        /// this rate each.
        #[arg(long)]
        dirty: Option<f64>,
    },
    /// Clean the raw CSVs: consistency checks, imputation, derived fields
    Ingest,
    /// Aggregate cleaned records into per-(user, window) feature rows
    Featurize {
        #[arg(long)]
        window_secs: Option<u32>,
        /// Do not attach labels even when labels.csv is present.
        #[arg(long)]
        no_labels: bool,
    },
    /// Train the boosted-tree model on a by-user split of features.csv
    Train {
        #[arg(long)]
        split_ratio: Option<f64>,
        /// Positive-class weight.
        #[arg(long)]
        weight: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Score the held-out split: eval.json, curves, feature importance
    Evaluate {
        #[arg(long)]
        threshold: Option<f64>,
        /// Comma-separated positive-class weights to sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
    },
    /// Score feature rows and report the potential affected user group
    Predict {
        #[arg(long)]
        threshold: Option<f64>,
        /// Flagged windows in the latest hour a user must exceed.
        #[arg(long)]
        min_flagged: Option<u32>,
    },
    /// Schema catalogue operations
    Schema {
        #[command(subcommand)]
        action: SchemaAction,
    },
}

#[derive(Subcommand)]
enum SchemaAction {
    /// Print the shipped schema as JSON (or write it with --output)
    Export {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = cli.data_dir {
        config.data_dir = dir;
    }
    if let Some(dir) = cli.out_dir {
        config.out_dir = dir;
    }
    let apply_seed = |config: &mut PipelineConfig| {
        if let Some(seed) = cli.seed {
            config.split_seed = seed;
            config.train.seed = seed;
            config.synth.seed = seed;
        }
    };
    apply_seed(&mut config);

    match cli.command {
        Command::Generate { preset, users, windows, affected_fraction, dirty } => {
            if let Some(name) = &preset {
                config.synth = synth::preset(name)?;
                apply_seed(&mut config);
            }
            if let Some(n) = users {
                config.synth.n_users = n;
            }
            if let Some(n) = windows {
                config.synth.n_windows = n;
                config.synth.event_end_window = n;
                config.synth.event_start_window = config.synth.event_start_window.min(n / 2);
            }
            if let Some(f) = affected_fraction {
                config.synth.affected_fraction = f;
            }
            if let Some(rate) = dirty {
                config.synth.dirty_invalid_rate = rate;
                config.synth.dirty_erroneous_rate = rate;
                config.synth.dirty_duplicate_rate = rate;
            }
            config.validate()?;
            config.synth.validate()?;
            commands::generate(&config)
        }
        Command::Ingest => {
            config.validate()?;
            commands::run_ingest(&config)
        }
        Command::Featurize { window_secs, no_labels } => {
            if let Some(w) = window_secs {
                config.window_secs = w;
            }
            config.validate()?;
            commands::featurize(&config, !no_labels)
        }
        Command::Train { split_ratio, weight, iterations } => {
            if let Some(r) = split_ratio {
                config.split_ratio = r;
            }
            if let Some(w) = weight {
                config.train.positive_class_weight = w;
            }
            if let Some(n) = iterations {
                config.train.max_iterations = n;
            }
            config.validate()?;
            config.train.validate().map_err(CliError::from)?;
            commands::run_train(&config)
        }
        Command::Evaluate { threshold, sweep } => {
            if let Some(t) = threshold {
                config.threshold = t;
            }
            if let Some(s) = sweep {
                config.weight_sweep = s;
            }
            config.validate()?;
            commands::evaluate(&config)
        }
        Command::Predict { threshold, min_flagged } => {
            if let Some(t) = threshold {
                config.threshold = t;
            }
            if let Some(m) = min_flagged {
                config.min_flagged_windows = m;
            }
            config.validate()?;
            commands::predict(&config)
        }
        Command::Schema { action } => match action {
            SchemaAction::Export { output } => commands::schema_export(output.as_deref()),
        },
    }
}
