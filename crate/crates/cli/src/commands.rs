//! One function per subcommand. Each reads its inputs from the configured
//! directories, writes its artifacts, and prints a one-line summary.

use std::collections::BTreeMap;
use std::fs;

use hotspot_core::featurize::{
    build_matrix, column_provenance, read_features_csv_file, write_features_csv_file,
};
use hotspot_core::gbdt::{train, Ensemble};
use hotspot_core::ingest::{self, format_float};
use hotspot_core::metrics::{self, confusion, prf1, write_curve_csv, write_sweep_csv};
use hotspot_core::split::split_matrix;
use hotspot_core::synth;
use hotspot_core::{default_schema, Plane};

use crate::config::{write_err, CliError, PipelineConfig};

pub fn generate(config: &PipelineConfig) -> Result<(), CliError> {
    let dataset = synth::generate(&config.synth)?;
    fs::create_dir_all(&config.data_dir).map_err(write_err)?;
    synth::write_dataset(&dataset, &config.synth, &config.data_dir)?;
    let affected = dataset.labels.values().filter(|&&l| l == 1).count();
    println!(
        "generated {} cp records, {} up records for {} users ({} affected) in {}",
        dataset.cp.len(),
        dataset.up.len(),
        dataset.labels.len(),
        affected,
        config.data_dir.display()
    );
    Ok(())
}

pub fn run_ingest(config: &PipelineConfig) -> Result<(), CliError> {
    let reg = default_schema();
    let (cp_raw, cp_issues) = ingest::read_raw_csv(&config.cp_csv(), &reg, Plane::ControlPlane)?;
    let (up_raw, up_issues) = ingest::read_raw_csv(&config.up_csv(), &reg, Plane::UserPlane)?;
    let (cp_clean, up_clean, mut report, means) =
        ingest::ingest_planes(cp_raw, up_raw, &reg, None)?;
    report.rows_malformed = (cp_issues.len() + up_issues.len()) as u64;

    fs::create_dir_all(&config.out_dir).map_err(write_err)?;
    ingest::write_records_csv_file(&config.cp_clean_csv(), &cp_clean, &reg, Plane::ControlPlane)?;
    ingest::write_records_csv_file(&config.up_clean_csv(), &up_clean, &reg, Plane::UserPlane)?;
    write_json(config.ingest_report(), &report)?;
    write_json(config.imputation_means(), &means)?;
    println!(
        "kept {} of {} rows ({} malformed, {} invalid, {} erroneous, {} duplicate)",
        report.rows_kept,
        report.rows_read,
        report.rows_malformed,
        report.rows_invalid,
        report.rows_erroneous,
        report.rows_duplicate
    );
    Ok(())
}

pub fn featurize(config: &PipelineConfig, attach_labels: bool) -> Result<(), CliError> {
    let reg = default_schema();
    let cp = ingest::read_clean_csv(&config.cp_clean_csv(), &reg, Plane::ControlPlane)?;
    let up = ingest::read_clean_csv(&config.up_clean_csv(), &reg, Plane::UserPlane)?;
    let labels = if attach_labels && config.labels_csv().exists() {
        Some(synth::read_labels(&config.labels_csv())?)
    } else {
        None
    };
    let matrix = build_matrix(&cp, &up, &reg, config.window_secs, labels.as_ref())?;
    fs::create_dir_all(&config.out_dir).map_err(write_err)?;
    write_features_csv_file(&config.features_csv(), &matrix)?;
    write_json(config.columns_json(), &column_provenance(&reg))?;
    println!(
        "featurized {} rows x {} columns ({})",
        matrix.n_rows(),
        matrix.columns.len(),
        if labels.is_some() { "labelled" } else { "unlabelled" }
    );
    Ok(())
}

pub fn run_train(config: &PipelineConfig) -> Result<(), CliError> {
    let matrix = read_features_csv_file(&config.features_csv())?;
    let (train_m, valid_m) = split_matrix(matrix, config.split_ratio, config.split_seed);
    if train_m.rows.is_empty() {
        return Err(CliError::Data("training split is empty".into()));
    }
    let validation = (!valid_m.rows.is_empty()).then_some(&valid_m);
    let out = train(&train_m, &config.train, validation)?;

    fs::create_dir_all(&config.out_dir).map_err(write_err)?;
    out.ensemble.save(&config.model_json()).map_err(write_err)?;
    let mut wtr = csv::Writer::from_path(config.train_log_csv()).map_err(write_err)?;
    wtr.write_record(["iteration", "train_loss", "valid_loss"]).map_err(write_err)?;
    for entry in &out.log {
        wtr.write_record([
            entry.iteration.to_string(),
            format_float(entry.train_loss),
            entry.valid_loss.map(format_float).unwrap_or_default(),
        ])
        .map_err(write_err)?;
    }
    wtr.flush().map_err(write_err)?;
    println!(
        "trained {} rounds (kept {}) on {} rows, validated on {}; model in {}",
        out.log.len(),
        out.ensemble.best_iteration,
        train_m.n_rows(),
        valid_m.n_rows(),
        config.model_json().display()
    );
    Ok(())
}

pub fn evaluate(config: &PipelineConfig) -> Result<(), CliError> {
    let model = Ensemble::load(&config.model_json())?;
    let matrix = read_features_csv_file(&config.features_csv())?;
    let (train_m, valid_m) = split_matrix(matrix, config.split_ratio, config.split_seed);
    if valid_m.rows.is_empty() {
        return Err(CliError::Data("held-out split is empty".into()));
    }
    let labels = valid_m
        .labels()
        .ok_or_else(|| CliError::Data("evaluation requires labelled feature rows".into()))?;
    let scores = model.predict_positive(&valid_m)?;
    let (report, roc, pr) = metrics::evaluate(&labels, &scores, config.threshold)?;

    fs::create_dir_all(&config.out_dir).map_err(write_err)?;
    write_json(config.eval_json(), &report)?;
    let roc_file = fs::File::create(config.roc_csv()).map_err(write_err)?;
    write_curve_csv(roc_file, &roc).map_err(write_err)?;
    let pr_file = fs::File::create(config.pr_csv()).map_err(write_err)?;
    write_curve_csv(pr_file, &pr).map_err(write_err)?;

    let mut wtr = csv::Writer::from_path(config.importance_csv()).map_err(write_err)?;
    wtr.write_record(["column", "gain", "splits"]).map_err(write_err)?;
    for row in model.feature_importance() {
        wtr.write_record([row.column, format_float(row.gain), row.splits.to_string()])
            .map_err(write_err)?;
    }
    wtr.flush().map_err(write_err)?;

    if !config.weight_sweep.is_empty() {
        // The sweep is a weight-calibration aid: metrics are computed on the
        // training split, where flagged-row counts respond to the weight
        // deterministically rather than through generalization noise.
        let train_labels = train_m
            .labels()
            .ok_or_else(|| CliError::Data("weight sweep requires labelled feature rows".into()))?;
        let (rows, best) = metrics::weight_sweep(
            |w| -> Result<(f64, f64, f64), CliError> {
                let mut params = config.train.clone();
                params.positive_class_weight = w;
                let swept = train(&train_m, &params, Some(&valid_m))?;
                let scores = swept.ensemble.predict_positive(&train_m)?;
                let counts = confusion(&train_labels, &scores, config.threshold)?;
                Ok(prf1(&counts))
            },
            &config.weight_sweep,
        )?;
        let sweep_file = fs::File::create(config.weight_sweep_csv()).map_err(write_err)?;
        write_sweep_csv(sweep_file, &rows, best).map_err(write_err)?;
    }
    println!(
        "precision {:.4} recall {:.4} f1 {:.4} roc_auc {:.4} pr_area {:.4} on {} held-out rows",
        report.precision, report.recall, report.f1, report.roc_auc, report.pr_area, report.rows_evaluated
    );
    Ok(())
}

pub fn predict(config: &PipelineConfig) -> Result<(), CliError> {
    let model = Ensemble::load(&config.model_json())?;
    let matrix = read_features_csv_file(&config.features_csv())?;
    let scores = if matrix.rows.is_empty() {
        Vec::new()
    } else {
        model.predict_positive(&matrix)?
    };

    fs::create_dir_all(&config.out_dir).map_err(write_err)?;
    let mut wtr = csv::Writer::from_path(config.predictions_csv()).map_err(write_err)?;
    wtr.write_record(["user_id", "window_start", "p_affected", "flag"]).map_err(write_err)?;
    for (row, p) in matrix.rows.iter().zip(&scores) {
        wtr.write_record([
            row.user_id.clone(),
            row.window_start_ms.to_string(),
            format_float(*p),
            ((*p >= config.threshold) as u8).to_string(),
        ])
        .map_err(write_err)?;
    }
    wtr.flush().map_err(write_err)?;

    // Potential affected user group: users with more than the configured
    // number of flagged windows inside the hour ending at the latest window.
    let mut flagged: BTreeMap<&str, u32> = BTreeMap::new();
    if let Some(latest) = matrix.rows.iter().map(|r| r.window_start_ms).max() {
        let cutoff = latest - 3_600_000;
        for (row, p) in matrix.rows.iter().zip(&scores) {
            if *p >= config.threshold && row.window_start_ms > cutoff {
                *flagged.entry(row.user_id.as_str()).or_default() += 1;
            }
        }
    }
    let mut wtr = csv::Writer::from_path(config.affected_users_csv()).map_err(write_err)?;
    wtr.write_record(["user_id", "flagged_windows"]).map_err(write_err)?;
    let mut n_affected = 0;
    for (user, count) in &flagged {
        if *count > config.min_flagged_windows {
            wtr.write_record([user.to_string(), count.to_string()]).map_err(write_err)?;
            n_affected += 1;
        }
    }
    wtr.flush().map_err(write_err)?;
    println!(
        "scored {} rows; {} users in the affected group ({})",
        matrix.n_rows(),
        n_affected,
        config.affected_users_csv().display()
    );
    Ok(())
}

pub fn schema_export(output: Option<&std::path::Path>) -> Result<(), CliError> {
    let json = default_schema().to_json();
    match output {
        Some(path) => {
            fs::write(path, json).map_err(write_err)?;
            println!("schema written to {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(
    path: std::path::PathBuf,
    value: &T,
) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(write_err)?;
    fs::write(path, text).map_err(write_err)
}
