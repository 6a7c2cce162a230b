//! Record ingestion: CSV parsing, consistency checks, mean imputation and
//! derived-field materialization.
//!
//! Input files carry one plane each with header `user_id,timestamp,<field...>`
//! (timestamps are integer epoch milliseconds, an empty cell is a missing
//! value). Cleaning removes invalid rows (enumerated code outside its
//! domain), erroneous rows (negative or non-finite numerics) and duplicate
//! rows, then fills missing numerics with per-column means and concatenates
//! the derived control-plane pairs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{
    CleanRecord, FieldId, FieldKind, FieldValue, Plane, RawRecord, SchemaRegistry,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record set is not clean: {0}")]
    NotClean(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// A data row the parser had to skip entirely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowIssue {
    /// 1-based line number in the source file.
    pub line: u64,
    pub problem: RowProblem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowProblem {
    WrongColumnCount,
    BadTimestamp,
    EmptyUserId,
}

/// Counts and imputation summary for one ingest run.
///
/// `rows_read` counts parsed records, so
/// `rows_read = rows_kept + rows_invalid + rows_erroneous + rows_duplicate`;
/// rows the parser skipped are tallied separately in `rows_malformed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_malformed: u64,
    pub rows_invalid: u64,
    pub rows_erroneous: u64,
    pub rows_duplicate: u64,
    pub rows_kept: u64,
    pub imputation_means: BTreeMap<String, f64>,
    /// Numeric columns with no present value at all; filled with zero.
    pub all_missing_columns: Vec<String>,
}

impl IngestReport {
    pub fn reconciles(&self) -> bool {
        self.rows_read
            == self.rows_kept + self.rows_invalid + self.rows_erroneous + self.rows_duplicate
    }
}

/// Per-column means fitted on a training corpus, reusable on later data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationMeans {
    pub means: BTreeMap<String, f64>,
    pub all_missing: Vec<String>,
}

/// Parse one plane's CSV stream into raw records.
///
/// Unparseable cells become missing values; rows with a wrong column count,
/// a bad timestamp or an empty user id are skipped and reported with their
/// line number.
pub fn parse_csv<R: Read>(
    reader: R,
    registry: &SchemaRegistry,
    plane: Plane,
) -> Result<(Vec<RawRecord>, Vec<RowIssue>), IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let columns = resolve_header(&headers, registry, plane)?;
    let n_cols = headers.len();

    let mut records = Vec::new();
    let mut issues = Vec::new();
    for result in rdr.records() {
        let row = result?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != n_cols {
            issues.push(RowIssue { line, problem: RowProblem::WrongColumnCount });
            continue;
        }
        let user_id = row.get(0).unwrap_or("").trim();
        if user_id.is_empty() {
            issues.push(RowIssue { line, problem: RowProblem::EmptyUserId });
            continue;
        }
        let Ok(timestamp_ms) = row.get(1).unwrap_or("").trim().parse::<i64>() else {
            issues.push(RowIssue { line, problem: RowProblem::BadTimestamp });
            continue;
        };
        let mut record = RawRecord::new(user_id, timestamp_ms, plane);
        for (cell_idx, field_id) in &columns {
            let cell = row.get(*cell_idx).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            if let Some(value) = parse_cell(cell, *field_id, registry) {
                record.set(*field_id, value);
            }
        }
        records.push(record);
    }
    Ok((records, issues))
}

fn resolve_header(
    headers: &csv::StringRecord,
    registry: &SchemaRegistry,
    plane: Plane,
) -> Result<Vec<(usize, FieldId)>, IngestError> {
    if headers.get(0) != Some("user_id") || headers.get(1) != Some("timestamp") {
        return Err(IngestError::HeaderMismatch(
            "first two columns must be user_id,timestamp".into(),
        ));
    }
    let mut columns = Vec::new();
    for (idx, name) in headers.iter().enumerate().skip(2) {
        let Some(field_id) = registry.field_id(name) else {
            return Err(IngestError::HeaderMismatch(format!("unknown field column `{name}`")));
        };
        let field_plane = match registry.field_ref(field_id) {
            crate::schema::FieldRef::Base(f) => f.plane,
            crate::schema::FieldRef::Derived(d) => {
                registry
                    .base
                    .iter()
                    .find(|f| f.name == d.source_a)
                    .map(|f| f.plane)
                    .ok_or_else(|| IngestError::Internal("derived source missing".into()))?
            }
        };
        if field_plane != plane {
            return Err(IngestError::HeaderMismatch(format!(
                "field `{name}` does not belong to the {plane} plane"
            )));
        }
        columns.push((idx, field_id));
    }
    Ok(columns)
}

fn parse_cell(cell: &str, field_id: FieldId, registry: &SchemaRegistry) -> Option<FieldValue> {
    if let Some(spec) = registry.base_field(field_id) {
        match spec.kind {
            FieldKind::Enumerated => Some(match spec.code_index(cell) {
                Some(idx) => FieldValue::Code(idx),
                None => FieldValue::OutOfDomain(cell.into()),
            }),
            // An unparseable numeric cell degrades to a missing value.
            FieldKind::Numeric => cell.parse::<f64>().ok().map(FieldValue::Number),
        }
    } else {
        let spec = registry.derived_field(field_id)?;
        let pair = cell.split_once(crate::schema::CODE_SEPARATOR);
        Some(match pair.and_then(|(a, b)| spec.pair_index(a, b)) {
            Some(idx) => FieldValue::Code(idx),
            None => FieldValue::OutOfDomain(cell.into()),
        })
    }
}

/// Outcome of [`consistency_check`]: counts only, means are filled in later.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckCounts {
    pub invalid: u64,
    pub erroneous: u64,
    pub duplicate: u64,
}

/// Remove invalid, erroneous and duplicate records, preserving order.
///
/// Invalid: an enumerated value outside its domain. Erroneous: a numeric
/// value that is non-finite, or negative where the unit demands otherwise.
/// Duplicate: identical (user_id, timestamp, plane, present values) as an
/// earlier surviving record; the first occurrence is kept. A record
/// failing several checks counts once, in the order above.
pub fn consistency_check(
    records: Vec<RawRecord>,
    registry: &SchemaRegistry,
) -> (Vec<RawRecord>, CheckCounts) {
    let mut counts = CheckCounts::default();
    let mut seen: HashSet<DupKey> = HashSet::new();
    let mut kept = Vec::with_capacity(records.len());
    for record in records {
        if record.values.iter().any(|(_, v)| matches!(v, FieldValue::OutOfDomain(_))) {
            counts.invalid += 1;
            continue;
        }
        let erroneous = record.values.iter().any(|(id, v)| match v {
            FieldValue::Number(x) => {
                !x.is_finite()
                    || (*x < 0.0 && registry.base_field(*id).map(|f| f.non_negative()).unwrap_or(false))
            }
            _ => false,
        });
        if erroneous {
            counts.erroneous += 1;
            continue;
        }
        if !seen.insert(DupKey::of(&record)) {
            counts.duplicate += 1;
            continue;
        }
        kept.push(record);
    }
    (kept, counts)
}

#[derive(PartialEq, Eq, Hash)]
struct DupKey {
    user_id: String,
    timestamp_ms: i64,
    plane: Plane,
    values: Vec<(u16, u8, u64)>,
}

impl DupKey {
    fn of(record: &RawRecord) -> Self {
        let values = record
            .values
            .iter()
            .map(|(id, v)| match v {
                FieldValue::Code(c) => (id.0, 0u8, *c as u64),
                FieldValue::OutOfDomain(s) => (id.0, 1u8, crate::util::fnv1a64(s.as_bytes())),
                FieldValue::Number(x) => (id.0, 2u8, x.to_bits()),
            })
            .collect();
        DupKey {
            user_id: record.user_id.clone(),
            timestamp_ms: record.timestamp_ms,
            plane: record.plane,
            values,
        }
    }
}

/// Fit per-column means on the present numeric values and fill the gaps.
/// A column with no present value is filled with zero and flagged.
pub fn impute_numeric(
    records: Vec<RawRecord>,
    registry: &SchemaRegistry,
) -> (Vec<RawRecord>, ImputationMeans) {
    let mut sums: HashMap<FieldId, (f64, u64)> = HashMap::new();
    for record in &records {
        for (id, v) in &record.values {
            if let FieldValue::Number(x) = v {
                let e = sums.entry(*id).or_insert((0.0, 0));
                e.0 += x;
                e.1 += 1;
            }
        }
    }
    let mut means = ImputationMeans::default();
    for (i, spec) in registry.base.iter().enumerate() {
        if spec.kind != FieldKind::Numeric {
            continue;
        }
        let id = FieldId(i as u16);
        match sums.get(&id) {
            Some((sum, n)) if *n > 0 => {
                means.means.insert(spec.name.clone(), sum / *n as f64);
            }
            _ => {
                means.means.insert(spec.name.clone(), 0.0);
                means.all_missing.push(spec.name.clone());
            }
        }
    }
    let filled = apply_means(records, registry, &means);
    (filled, means)
}

/// Fill missing numerics using previously fitted means (prediction-time path).
pub fn impute_numeric_with(
    records: Vec<RawRecord>,
    registry: &SchemaRegistry,
    means: &ImputationMeans,
) -> Vec<RawRecord> {
    apply_means(records, registry, means)
}

fn apply_means(
    mut records: Vec<RawRecord>,
    registry: &SchemaRegistry,
    means: &ImputationMeans,
) -> Vec<RawRecord> {
    let numeric_ids: Vec<(FieldId, f64, Plane)> = registry
        .base
        .iter()
        .enumerate()
        .filter(|(_, f)| f.kind == FieldKind::Numeric)
        .map(|(i, f)| {
            (FieldId(i as u16), means.means.get(&f.name).copied().unwrap_or(0.0), f.plane)
        })
        .collect();
    for record in &mut records {
        for (id, mean, plane) in &numeric_ids {
            if record.plane == *plane && record.value(*id).is_none() {
                record.set(*id, FieldValue::Number(*mean));
            }
        }
    }
    records
}

/// Populate derived concatenated fields and freeze records as clean.
///
/// A control-plane record gets each derived field whose two sources are both
/// present; user-plane records pass through unchanged. Domain violations
/// cannot occur after the consistency check, so one here is an internal error.
pub fn derive_fields(
    records: Vec<RawRecord>,
    registry: &SchemaRegistry,
) -> Result<Vec<CleanRecord>, IngestError> {
    let derived: Vec<(FieldId, FieldId, FieldId)> = registry
        .plane_derived(Plane::ControlPlane)
        .map(|(id, d)| {
            let a = registry.field_id(&d.source_a).expect("validated source");
            let b = registry.field_id(&d.source_b).expect("validated source");
            (id, a, b)
        })
        .collect();

    let mut out = Vec::with_capacity(records.len());
    for mut record in records {
        if record.plane == Plane::ControlPlane {
            for (derived_id, a_id, b_id) in &derived {
                let (Some(FieldValue::Code(a)), Some(FieldValue::Code(b))) =
                    (record.value(*a_id), record.value(*b_id))
                else {
                    continue;
                };
                let spec = registry.derived_field(*derived_id).expect("derived id");
                let a_code = &registry.base_field(*a_id).expect("source id").domain[*a as usize];
                let b_code = &registry.base_field(*b_id).expect("source id").domain[*b as usize];
                let Some(pair) = spec.pair_index(a_code, b_code) else {
                    return Err(IngestError::Internal(format!(
                        "pair ({a_code},{b_code}) missing from `{}` after consistency check",
                        spec.name
                    )));
                };
                record.set(*derived_id, FieldValue::Code(pair));
            }
        }
        out.push(CleanRecord {
            user_id: record.user_id,
            timestamp_ms: record.timestamp_ms,
            plane: record.plane,
            values: record.values,
        });
    }
    Ok(out)
}

/// Full cleaning pass over both planes. When `reuse_means` is given the
/// persisted training means are applied instead of fitting new ones.
pub fn ingest_planes(
    cp_raw: Vec<RawRecord>,
    up_raw: Vec<RawRecord>,
    registry: &SchemaRegistry,
    reuse_means: Option<&ImputationMeans>,
) -> Result<(Vec<CleanRecord>, Vec<CleanRecord>, IngestReport, ImputationMeans), IngestError> {
    let rows_read = (cp_raw.len() + up_raw.len()) as u64;
    let (cp_kept, cp_counts) = consistency_check(cp_raw, registry);
    let (up_kept, up_counts) = consistency_check(up_raw, registry);

    let n_cp = cp_kept.len();
    let mut all: Vec<RawRecord> = cp_kept;
    all.extend(up_kept);
    let (all, means) = match reuse_means {
        Some(m) => (impute_numeric_with(all, registry, m), m.clone()),
        None => impute_numeric(all, registry),
    };
    let mut all = derive_fields(all, registry)?;
    let up_clean = all.split_off(n_cp);
    let cp_clean = all;

    let report = IngestReport {
        rows_read,
        rows_malformed: 0,
        rows_invalid: cp_counts.invalid + up_counts.invalid,
        rows_erroneous: cp_counts.erroneous + up_counts.erroneous,
        rows_duplicate: cp_counts.duplicate + up_counts.duplicate,
        rows_kept: (cp_clean.len() + up_clean.len()) as u64,
        imputation_means: means.means.clone(),
        all_missing_columns: means.all_missing.clone(),
    };
    debug_assert!(report.reconciles());
    Ok((cp_clean, up_clean, report, means))
}

/// Columns of one plane's CSV: base fields plus (for the control plane)
/// the derived fields, in registry order.
pub fn plane_columns(registry: &SchemaRegistry, plane: Plane, with_derived: bool) -> Vec<String> {
    let mut cols: Vec<String> =
        registry.plane_fields(plane).map(|(_, f)| f.name.clone()).collect();
    if with_derived {
        cols.extend(registry.plane_derived(plane).map(|(_, d)| d.name.clone()));
    }
    cols
}

pub fn read_raw_csv(
    path: &Path,
    registry: &SchemaRegistry,
    plane: Plane,
) -> Result<(Vec<RawRecord>, Vec<RowIssue>), IngestError> {
    let file = std::fs::File::open(path)?;
    parse_csv(std::io::BufReader::new(file), registry, plane)
}

/// Re-validate records loaded from an already-cleaned CSV.
pub fn read_clean_csv(
    path: &Path,
    registry: &SchemaRegistry,
    plane: Plane,
) -> Result<Vec<CleanRecord>, IngestError> {
    let (records, issues) = read_raw_csv(path, registry, plane)?;
    if let Some(issue) = issues.first() {
        return Err(IngestError::NotClean(format!(
            "line {}: {:?}",
            issue.line, issue.problem
        )));
    }
    for r in &records {
        if r.values.iter().any(|(_, v)| matches!(v, FieldValue::OutOfDomain(_))) {
            return Err(IngestError::NotClean(format!(
                "out-of-domain value for user {} at {}",
                r.user_id, r.timestamp_ms
            )));
        }
    }
    derive_fields(records, registry)
}

pub fn write_records_csv<W: Write>(
    writer: W,
    records: &[CleanRecord],
    registry: &SchemaRegistry,
    plane: Plane,
) -> Result<(), IngestError> {
    let columns = plane_columns(registry, plane, true);
    let ids: Vec<FieldId> =
        columns.iter().map(|c| registry.field_id(c).expect("column exists")).collect();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id".to_string(), "timestamp".to_string()];
    header.extend(columns);
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![r.user_id.clone(), r.timestamp_ms.to_string()];
        for id in &ids {
            row.push(match r.value(*id) {
                Some(FieldValue::Code(c)) => match registry.base_field(*id) {
                    Some(f) => f.domain[*c as usize].clone(),
                    None => registry.derived_field(*id).expect("derived id").code_at(*c),
                },
                Some(FieldValue::Number(x)) => format_float(*x),
                Some(FieldValue::OutOfDomain(s)) => s.to_string(),
                None => String::new(),
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest round-trip decimal form, stable across runs.
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

pub fn write_records_csv_file(
    path: &Path,
    records: &[CleanRecord],
    registry: &SchemaRegistry,
    plane: Plane,
) -> Result<(), IngestError> {
    let file = std::fs::File::create(path)?;
    write_records_csv(std::io::BufWriter::new(file), records, registry, plane)
}

/// Write records as they come off the tap: base fields only, derived
/// columns absent, out-of-domain text emitted verbatim.
pub fn write_raw_csv<W: Write>(
    writer: W,
    records: &[RawRecord],
    registry: &SchemaRegistry,
    plane: Plane,
) -> Result<(), IngestError> {
    let columns = plane_columns(registry, plane, false);
    let ids: Vec<FieldId> =
        columns.iter().map(|c| registry.field_id(c).expect("column exists")).collect();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id".to_string(), "timestamp".to_string()];
    header.extend(columns);
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![r.user_id.clone(), r.timestamp_ms.to_string()];
        for id in &ids {
            row.push(match r.value(*id) {
                Some(FieldValue::Code(c)) => {
                    registry.base_field(*id).expect("base id").domain[*c as usize].clone()
                }
                Some(FieldValue::Number(x)) => format_float(*x),
                Some(FieldValue::OutOfDomain(s)) => s.to_string(),
                None => String::new(),
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_raw_csv_file(
    path: &Path,
    records: &[RawRecord],
    registry: &SchemaRegistry,
    plane: Plane,
) -> Result<(), IngestError> {
    let file = std::fs::File::create(path)?;
    write_raw_csv(std::io::BufWriter::new(file), records, registry, plane)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::default_schema;

    fn cp_csv(rows: &[&str]) -> String {
        let mut s = String::from(
            "user_id,timestamp,procedure_type,procedure_status,request_cause,failure_cause,paging_result,erab_release_flag\n",
        );
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn parse_well_formed_rows() {
        let reg = default_schema();
        let csv = cp_csv(&["u1,1000,1,0,1,0,,", "u2,2000,2,1,2,1,0,1", "u1,3000,3,255,,,1,"]);
        let (records, issues) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        assert_eq!(records.len(), 3);
        assert!(issues.is_empty());
        let id = reg.field_id("procedure_status").unwrap();
        assert_eq!(records[2].value(id), Some(&FieldValue::Code(2)));
    }

    #[test]
    fn empty_cell_becomes_missing() {
        let reg = default_schema();
        let csv = "user_id,timestamp,upload_traffic,download_traffic\nu1,1000,,42\n";
        let (records, issues) = parse_csv(csv.as_bytes(), &reg, Plane::UserPlane).unwrap();
        assert!(issues.is_empty());
        let up = reg.field_id("upload_traffic").unwrap();
        let down = reg.field_id("download_traffic").unwrap();
        assert_eq!(records[0].value(up), None);
        assert_eq!(records[0].value(down), Some(&FieldValue::Number(42.0)));
    }

    #[test]
    fn bad_timestamp_reported_with_line() {
        let reg = default_schema();
        let csv = cp_csv(&["u1,abc,1,0,1,0,,", "u2,2000,1,0,1,0,,"]);
        let (records, issues) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(issues, vec![RowIssue { line: 2, problem: RowProblem::BadTimestamp }]);
    }

    #[test]
    fn header_mismatch_is_an_error() {
        let reg = default_schema();
        let csv = "user,ts,procedure_type\nu1,1,1\n";
        assert!(matches!(
            parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane),
            Err(IngestError::HeaderMismatch(_))
        ));
        let csv = "user_id,timestamp,no_such_field\nu1,1,1\n";
        assert!(matches!(
            parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane),
            Err(IngestError::HeaderMismatch(_))
        ));
        let csv = "user_id,timestamp,upload_traffic\nu1,1,1\n";
        assert!(matches!(
            parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane),
            Err(IngestError::HeaderMismatch(_))
        ));
    }

    #[test]
    fn consistency_check_rejects_out_of_domain() {
        let reg = default_schema();
        let csv = cp_csv(&["u1,1000,1,7,,,,"]);
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        let (kept, counts) = consistency_check(records, &reg);
        assert!(kept.is_empty());
        assert_eq!(counts.invalid, 1);
    }

    #[test]
    fn consistency_check_rejects_negative_traffic() {
        let reg = default_schema();
        let csv = "user_id,timestamp,upload_traffic\nu1,1000,-5\n";
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::UserPlane).unwrap();
        let (kept, counts) = consistency_check(records, &reg);
        assert!(kept.is_empty());
        assert_eq!(counts.erroneous, 1);
    }

    #[test]
    fn consistency_check_rejects_non_finite() {
        let reg = default_schema();
        let csv = "user_id,timestamp,upload_traffic\nu1,1000,NaN\nu2,1000,inf\n";
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::UserPlane).unwrap();
        let (kept, counts) = consistency_check(records, &reg);
        assert!(kept.is_empty());
        assert_eq!(counts.erroneous, 2);
    }

    #[test]
    fn consistency_check_drops_second_duplicate() {
        let reg = default_schema();
        let csv = cp_csv(&["u1,1000,1,0,1,0,,", "u1,1000,1,0,1,0,,", "u1,1000,1,1,1,0,,"]);
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        let (kept, counts) = consistency_check(records, &reg);
        assert_eq!(kept.len(), 2);
        assert_eq!(counts.duplicate, 1);
        let id = reg.field_id("procedure_status").unwrap();
        assert_eq!(kept[0].value(id), Some(&FieldValue::Code(0)));
        assert_eq!(kept[1].value(id), Some(&FieldValue::Code(1)));
    }

    #[test]
    fn consistency_check_is_idempotent() {
        let reg = default_schema();
        let csv = cp_csv(&["u1,1000,1,0,1,0,,", "u1,1000,1,0,1,0,,", "u2,1000,1,9,1,0,,"]);
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        let (kept, _) = consistency_check(records, &reg);
        let (kept2, counts2) = consistency_check(kept.clone(), &reg);
        assert_eq!(kept, kept2);
        assert_eq!(counts2, CheckCounts::default());
    }

    #[test]
    fn imputation_fills_with_column_mean() {
        let reg = default_schema();
        let csv = "user_id,timestamp,upload_traffic\nu1,1000,1\nu2,2000,\nu3,3000,3\n";
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::UserPlane).unwrap();
        let (filled, means) = impute_numeric(records, &reg);
        let id = reg.field_id("upload_traffic").unwrap();
        assert_eq!(filled[1].value(id), Some(&FieldValue::Number(2.0)));
        assert_eq!(means.means["upload_traffic"], 2.0);
    }

    #[test]
    fn imputation_preserves_column_mean() {
        let reg = default_schema();
        let id = reg.field_id("spendtime").unwrap();
        let mut records = Vec::new();
        for i in 0..100 {
            let mut r = RawRecord::new(&format!("u{i}"), i, Plane::UserPlane);
            if i % 3 != 0 {
                r.set(id, FieldValue::Number(0.37 * i as f64 + 1.25));
            }
            records.push(r);
        }
        let present: Vec<f64> = records
            .iter()
            .filter_map(|r| match r.value(id) {
                Some(FieldValue::Number(x)) => Some(*x),
                _ => None,
            })
            .collect();
        let before = present.iter().sum::<f64>() / present.len() as f64;
        let (filled, _) = impute_numeric(records, &reg);
        let after: f64 = filled
            .iter()
            .map(|r| match r.value(id) {
                Some(FieldValue::Number(x)) => *x,
                _ => unreachable!("imputation is total"),
            })
            .sum::<f64>()
            / filled.len() as f64;
        assert!((after - before).abs() <= 1e-12 * before.abs());
    }

    #[test]
    fn all_missing_column_fills_zero_and_flags() {
        let reg = default_schema();
        let csv = "user_id,timestamp,upload_traffic\nu1,1000,\nu2,2000,\n";
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::UserPlane).unwrap();
        let (filled, means) = impute_numeric(records, &reg);
        let id = reg.field_id("upload_traffic").unwrap();
        assert_eq!(filled[0].value(id), Some(&FieldValue::Number(0.0)));
        assert!(means.all_missing.contains(&"upload_traffic".to_string()));
    }

    #[test]
    fn enumerated_missing_is_never_imputed() {
        let reg = default_schema();
        let csv = cp_csv(&["u1,1000,1,,,,,"]);
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        let (filled, _) = impute_numeric(records, &reg);
        let id = reg.field_id("procedure_status").unwrap();
        assert_eq!(filled[0].value(id), None);
    }

    #[test]
    fn derive_fields_concatenates_present_sources() {
        let reg = default_schema();
        let csv = cp_csv(&["u1,1000,1,0,1,0,,", "u2,2000,1,0,1,,,"]);
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        let clean = derive_fields(records, &reg).unwrap();
        let ps = reg.field_id("procedure_type_x_procedure_status").unwrap();
        let fc = reg.field_id("procedure_type_x_failure_cause").unwrap();
        // (1,0) is pair index 0 in the type x status domain.
        assert_eq!(clean[0].value(ps), Some(&FieldValue::Code(0)));
        assert!(clean[0].value(fc).is_some());
        // u2 has no failure_cause, so the failure pair stays missing.
        assert_eq!(clean[1].value(fc), None);
    }

    #[test]
    fn up_records_get_no_derived_fields() {
        let reg = default_schema();
        let csv = "user_id,timestamp,upload_traffic\nu1,1000,7\n";
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::UserPlane).unwrap();
        let clean = derive_fields(records, &reg).unwrap();
        let derived_start = reg.base.len() as u16;
        assert!(clean[0].values.iter().all(|(id, _)| id.0 < derived_start));
    }

    #[test]
    fn report_reconciles_counts() {
        let reg = default_schema();
        let csv = cp_csv(&[
            "u1,1000,1,0,1,0,,",
            "u1,1000,1,0,1,0,,",
            "u2,1000,1,9,1,0,,",
            "u3,1000,1,1,2,1,0,1",
        ]);
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        let (cp, up, report, _) = ingest_planes(records, Vec::new(), &reg, None).unwrap();
        assert!(report.reconciles());
        assert_eq!(report.rows_read, 4);
        assert_eq!(report.rows_invalid, 1);
        assert_eq!(report.rows_duplicate, 1);
        assert_eq!(cp.len(), 2);
        assert!(up.is_empty());
    }

    #[test]
    fn clean_csv_round_trip() {
        let reg = default_schema();
        let csv = cp_csv(&["u1,1000,1,0,1,0,,", "u2,2000,2,1,2,1,0,1"]);
        let (records, _) = parse_csv(csv.as_bytes(), &reg, Plane::ControlPlane).unwrap();
        let (cp, _, _, _) = ingest_planes(records, Vec::new(), &reg, None).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &cp, &reg, Plane::ControlPlane).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("1|0"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.csv");
        std::fs::write(&path, &buf).unwrap();
        let back = read_clean_csv(&path, &reg, Plane::ControlPlane).unwrap();
        assert_eq!(cp, back);
    }
}
