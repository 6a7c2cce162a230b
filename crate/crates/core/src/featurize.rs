//! Feature extraction over tumbling windows.
//!
//! Clean records are grouped into epoch-aligned windows per user; every
//! window turns into one row of one-hot code counts, per-plane record and
//! event totals, and six-statistic numeric aggregates, with the control and
//! user planes joined side by side. Each aggregate column additionally gets
//! first- and second-order backward differences along the user's window
//! sequence, so a row at window t only ever looks at t−1 and t−2 and can be
//! produced in real time. Missing intermediate windows count as empty
//! (all-zero) windows for differencing — a user falling silent is a signal,
//! not a gap to interpolate over.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::schema::{
    display_code, CleanRecord, FieldId, FieldKind, FieldValue, Plane, SchemaRegistry,
};

/// Statistic order within a numeric aggregate block.
pub const STAT_NAMES: [&str; 6] = ["max", "min", "mean", "std", "median", "sum"];

#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error("series too short: need {need} points, have {have}")]
    TooShort { need: usize, have: usize },
    #[error("one-hot index {index} outside domain of size {size}")]
    OutOfDomain { index: usize, size: usize },
    #[error("no label for user `{0}`")]
    MissingLabel(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed features file: {0}")]
    Malformed(String),
}

/// Start of the tumbling window containing `timestamp_ms`, aligned to epoch.
pub fn window_start(timestamp_ms: i64, window_secs: u32) -> i64 {
    let len = window_secs as i64 * 1000;
    timestamp_ms.div_euclid(len) * len
}

/// Encode one categorical value as a dense indicator vector; a missing value
/// encodes as all zeros.
pub fn one_hot(domain_size: usize, index: Option<usize>) -> Result<Vec<f64>, FeaturizeError> {
    let mut v = vec![0.0; domain_size];
    if let Some(i) = index {
        if i >= domain_size {
            return Err(FeaturizeError::OutOfDomain { index: i, size: domain_size });
        }
        v[i] = 1.0;
    }
    Ok(v)
}

/// (max, min, mean, population std, median, sum); all zero for no values.
/// An even count takes the median as the mean of the two middle values.
pub fn six_stats(values: &[f64]) -> [f64; 6] {
    if values.is_empty() {
        return [0.0; 6];
    }
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    let mean = sum / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("clean values are comparable"));
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    let max = *sorted.last().unwrap();
    let min = sorted[0];
    [max, min, mean, var.sqrt(), median, sum]
}

/// Group records into tumbling windows keyed by (user_id, window_start).
/// Windows nobody reports into are not materialized.
pub fn slice_windows<'a>(
    records: &'a [CleanRecord],
    window_secs: u32,
) -> BTreeMap<(String, i64), Vec<&'a CleanRecord>> {
    let mut map: BTreeMap<(String, i64), Vec<&CleanRecord>> = BTreeMap::new();
    for r in records {
        let w = window_start(r.timestamp_ms, window_secs);
        map.entry((r.user_id.clone(), w)).or_default().push(r);
    }
    map
}

/// Δy_t = y(t+1) − y(t); output is one shorter than the input.
pub fn diff1(values: &[f64]) -> Result<Vec<f64>, FeaturizeError> {
    if values.len() < 2 {
        return Err(FeaturizeError::TooShort { need: 2, have: values.len() });
    }
    Ok(values.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Second-order difference; identically `diff1(diff1(values))`.
pub fn diff2(values: &[f64]) -> Result<Vec<f64>, FeaturizeError> {
    if values.len() < 3 {
        return Err(FeaturizeError::TooShort { need: 3, have: values.len() });
    }
    diff1(&diff1(values)?)
}

/// Invert [`diff1`] by cumulative summation from the first original value.
pub fn undiff1(first: f64, diffs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(diffs.len() + 1);
    let mut acc = first;
    out.push(acc);
    for d in diffs {
        acc += d;
        out.push(acc);
    }
    out
}

/// One feature row: a user's aggregates for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub user_id: String,
    pub window_start_ms: i64,
    pub values: Vec<f64>,
    pub label: Option<u8>,
}

/// The assembled matrix; column set identical across rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<WindowRow>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Label vector when every row is labelled.
    pub fn labels(&self) -> Option<Vec<u8>> {
        self.rows.iter().map(|r| r.label).collect()
    }
}

struct CatSlot {
    /// Offset of the count block inside the plane segment.
    offset: usize,
    arity: usize,
}

struct PlaneLayout {
    offset: usize,
    width: usize,
    /// field id → categorical slot, parallel to the registry's field ids.
    cat_slot: Vec<Option<usize>>,
    slots: Vec<CatSlot>,
    /// field id → index into the per-window numeric scratch.
    num_index: Vec<Option<usize>>,
    n_nums: usize,
    /// Offset of the first stat block inside the plane segment.
    nums_offset: usize,
}

/// Column layout of the feature matrix for one schema.
pub struct MatrixLayout {
    /// All column names: base aggregates, then d1_*, then d2_*.
    pub columns: Vec<String>,
    /// Number of base aggregate columns (a third of `columns`).
    pub n_base: usize,
    cp: PlaneLayout,
    up: PlaneLayout,
    /// field id → is a base enumerated field (counts toward event totals).
    is_base_enum: Vec<bool>,
}

impl MatrixLayout {
    pub fn new(registry: &SchemaRegistry) -> Self {
        let mut names = Vec::new();
        let cp = plane_layout(registry, Plane::ControlPlane, 0, &mut names);
        let up = plane_layout(registry, Plane::UserPlane, cp.width, &mut names);
        let n_base = names.len();
        let mut columns = names.clone();
        columns.extend(names.iter().map(|n| format!("d1_{n}")));
        columns.extend(names.iter().map(|n| format!("d2_{n}")));
        let is_base_enum = (0..registry.field_count())
            .map(|i| {
                registry
                    .base_field(FieldId(i as u16))
                    .map(|f| f.kind == FieldKind::Enumerated)
                    .unwrap_or(false)
            })
            .collect();
        MatrixLayout { columns, n_base, cp, up, is_base_enum }
    }

    fn plane(&self, plane: Plane) -> &PlaneLayout {
        match plane {
            Plane::ControlPlane => &self.cp,
            Plane::UserPlane => &self.up,
        }
    }
}

fn plane_layout(
    registry: &SchemaRegistry,
    plane: Plane,
    offset: usize,
    names: &mut Vec<String>,
) -> PlaneLayout {
    let p = plane.as_str();
    let n_fields = registry.field_count();
    let mut cat_slot = vec![None; n_fields];
    let mut num_index = vec![None; n_fields];
    let mut slots = Vec::new();
    let mut cur = 0usize;

    // The two per-plane totals head the segment: how many records the user
    // produced in the window, and how many enumerated values they carried.
    names.push(format!("{p}_record_count"));
    names.push(format!("{p}_event_count"));
    cur += 2;

    for (id, f) in registry.plane_fields(plane) {
        if f.kind != FieldKind::Enumerated {
            continue;
        }
        cat_slot[id.0 as usize] = Some(slots.len());
        slots.push(CatSlot { offset: cur, arity: f.domain.len() });
        for code in &f.domain {
            names.push(format!("{p}_{}_{}", f.name, display_code(code)));
        }
        cur += f.domain.len();
    }
    for (id, d) in registry.plane_derived(plane) {
        cat_slot[id.0 as usize] = Some(slots.len());
        slots.push(CatSlot { offset: cur, arity: d.domain.len() });
        for i in 0..d.domain.len() {
            names.push(format!("{p}_{}_{}", d.name, display_code(&d.code_at(i as u16))));
        }
        cur += d.domain.len();
    }

    let nums_offset = cur;
    let mut n_nums = 0usize;
    for (id, f) in registry.plane_fields(plane) {
        if f.kind != FieldKind::Numeric {
            continue;
        }
        num_index[id.0 as usize] = Some(n_nums);
        n_nums += 1;
        for stat in STAT_NAMES {
            names.push(format!("{p}_{}_{stat}", f.name));
        }
        cur += STAT_NAMES.len();
    }

    PlaneLayout { offset, width: cur, cat_slot, slots, num_index, n_nums, nums_offset }
}

/// Accumulate one plane's windows into the joined per-key base vectors.
fn aggregate_plane(
    acc: &mut BTreeMap<(String, i64), Vec<f64>>,
    records: &[CleanRecord],
    layout: &MatrixLayout,
    plane: Plane,
    window_secs: u32,
) {
    let lay = layout.plane(plane);
    let mut scratch: Vec<Vec<f64>> = vec![Vec::new(); lay.n_nums];
    for ((user, wstart), members) in slice_windows(records, window_secs) {
        let base = acc.entry((user, wstart)).or_insert_with(|| vec![0.0; layout.n_base]);
        let seg = &mut base[lay.offset..lay.offset + lay.width];
        for s in &mut scratch {
            s.clear();
        }
        seg[0] = members.len() as f64;
        for r in &members {
            for (id, v) in &r.values {
                let idx = id.0 as usize;
                match v {
                    FieldValue::Code(c) => {
                        if let Some(slot) = lay.cat_slot[idx] {
                            let slot = &lay.slots[slot];
                            debug_assert!((*c as usize) < slot.arity);
                            seg[slot.offset + *c as usize] += 1.0;
                            if layout.is_base_enum[idx] {
                                seg[1] += 1.0;
                            }
                        }
                    }
                    FieldValue::Number(x) => {
                        if let Some(k) = lay.num_index[idx] {
                            scratch[k].push(*x);
                        }
                    }
                    FieldValue::OutOfDomain(_) => {
                        debug_assert!(false, "clean records carry no out-of-domain values")
                    }
                }
            }
        }
        for (k, values) in scratch.iter().enumerate() {
            let stats = six_stats(values);
            seg[lay.nums_offset + 6 * k..lay.nums_offset + 6 * k + 6].copy_from_slice(&stats);
        }
    }
}

/// Build the full feature matrix from both planes' clean records.
///
/// Rows are sorted by (user_id, window_start). When `labels` is given every
/// user present must be covered and the user's label is broadcast to all of
/// their rows; `None` leaves rows unlabelled for scoring.
pub fn build_matrix(
    cp: &[CleanRecord],
    up: &[CleanRecord],
    registry: &SchemaRegistry,
    window_secs: u32,
    labels: Option<&BTreeMap<String, u8>>,
) -> Result<FeatureMatrix, FeaturizeError> {
    let layout = MatrixLayout::new(registry);
    let mut acc: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    aggregate_plane(&mut acc, cp, &layout, Plane::ControlPlane, window_secs);
    aggregate_plane(&mut acc, up, &layout, Plane::UserPlane, window_secs);

    let window_ms = window_secs as i64 * 1000;
    let n_base = layout.n_base;
    let mut rows: Vec<WindowRow> = Vec::with_capacity(acc.len());
    // BTreeMap iteration delivers each user's windows consecutively in time
    // order, which is exactly the shape differencing needs.
    let mut user_rows: Vec<(i64, Vec<f64>)> = Vec::new();
    let mut current: Option<String> = None;

    let flush = |user: &str, group: &mut Vec<(i64, Vec<f64>)>, rows: &mut Vec<WindowRow>| -> Result<(), FeaturizeError> {
        let label = match labels {
            Some(map) => Some(
                *map.get(user).ok_or_else(|| FeaturizeError::MissingLabel(user.to_string()))?,
            ),
            None => None,
        };
        let first = group[0].0;
        // Dense window index → group position, so gaps read as zero windows.
        let dense: BTreeMap<i64, usize> =
            group.iter().enumerate().map(|(i, (w, _))| ((w - first) / window_ms, i)).collect();
        let zeros = vec![0.0; n_base];
        let at = |k: i64| -> &[f64] {
            match dense.get(&k) {
                Some(i) => &group[*i].1,
                None => &zeros,
            }
        };
        for (wstart, base) in group.iter() {
            let k = (wstart - first) / window_ms;
            let mut values = vec![0.0; 3 * n_base];
            values[..n_base].copy_from_slice(base);
            if k > 0 {
                let prev = at(k - 1);
                for j in 0..n_base {
                    values[n_base + j] = base[j] - prev[j];
                }
                // Δ² against t−1, t−2: zero history below the user's first
                // window, like Δ itself.
                let d1_prev: Vec<f64> = if k == 1 {
                    vec![0.0; n_base]
                } else {
                    let pp = at(k - 2);
                    prev.iter().zip(pp).map(|(a, b)| a - b).collect()
                };
                for j in 0..n_base {
                    values[2 * n_base + j] = values[n_base + j] - d1_prev[j];
                }
            }
            rows.push(WindowRow {
                user_id: user.to_string(),
                window_start_ms: *wstart,
                values,
                label,
            });
        }
        group.clear();
        Ok(())
    };

    for ((user, wstart), base) in acc {
        if current.as_deref() != Some(user.as_str()) {
            if let Some(prev_user) = current.take() {
                flush(&prev_user, &mut user_rows, &mut rows)?;
            }
            current = Some(user);
        }
        user_rows.push((wstart, base));
    }
    if let Some(prev_user) = current.take() {
        flush(&prev_user, &mut user_rows, &mut rows)?;
    }

    Ok(FeatureMatrix { columns: layout.columns, rows })
}

/// Provenance of one matrix column, for `columns.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ColumnInfo {
    pub name: String,
    pub plane: Plane,
    pub transform: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

/// Describe every column of the matrix built from `registry`.
pub fn column_provenance(registry: &SchemaRegistry) -> Vec<ColumnInfo> {
    let mut base = Vec::new();
    for plane in [Plane::ControlPlane, Plane::UserPlane] {
        let p = plane.as_str();
        base.push(ColumnInfo {
            name: format!("{p}_record_count"),
            plane,
            transform: "record_count".into(),
            source: None,
            code: None,
        });
        base.push(ColumnInfo {
            name: format!("{p}_event_count"),
            plane,
            transform: "event_count".into(),
            source: None,
            code: None,
        });
        for (_, f) in registry.plane_fields(plane) {
            if f.kind != FieldKind::Enumerated {
                continue;
            }
            for c in &f.domain {
                base.push(ColumnInfo {
                    name: format!("{p}_{}_{}", f.name, display_code(c)),
                    plane,
                    transform: "code_count".into(),
                    source: Some(f.name.clone()),
                    code: Some(c.clone()),
                });
            }
        }
        for (_, d) in registry.plane_derived(plane) {
            for i in 0..d.domain.len() {
                let code = d.code_at(i as u16);
                base.push(ColumnInfo {
                    name: format!("{p}_{}_{}", d.name, display_code(&code)),
                    plane,
                    transform: "code_count".into(),
                    source: Some(d.name.clone()),
                    code: Some(code),
                });
            }
        }
        for (_, f) in registry.plane_fields(plane) {
            if f.kind != FieldKind::Numeric {
                continue;
            }
            for stat in STAT_NAMES {
                base.push(ColumnInfo {
                    name: format!("{p}_{}_{stat}", f.name),
                    plane,
                    transform: stat.to_string(),
                    source: Some(f.name.clone()),
                    code: None,
                });
            }
        }
    }
    let mut out = base.clone();
    for order in ["d1", "d2"] {
        out.extend(base.iter().map(|c| ColumnInfo {
            name: format!("{order}_{}", c.name),
            plane: c.plane,
            transform: if order == "d1" { "diff1".into() } else { "diff2".into() },
            source: Some(c.name.clone()),
            code: None,
        }));
    }
    out
}

/// Write `features.csv`: user_id, window_start, the feature columns, label
/// (empty when unknown).
pub fn write_features_csv<W: Write>(
    writer: W,
    matrix: &FeatureMatrix,
) -> Result<(), FeaturizeError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id".to_string(), "window_start".to_string()];
    header.extend(matrix.columns.iter().cloned());
    header.push("label".into());
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for r in &matrix.rows {
        row.clear();
        row.push(r.user_id.clone());
        row.push(r.window_start_ms.to_string());
        row.extend(r.values.iter().map(|v| format!("{v}")));
        row.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(reader: R) -> Result<FeatureMatrix, FeaturizeError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("user_id")
        || header.get(1) != Some("window_start")
        || header.get(header.len().wrapping_sub(1)) != Some("label")
    {
        return Err(FeaturizeError::Malformed(
            "expected user_id,window_start,...,label header".into(),
        ));
    }
    let columns: Vec<String> = header.iter().skip(2).take(header.len() - 3).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(FeaturizeError::Malformed(format!(
                "row with {} cells, expected {}",
                rec.len(),
                header.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64, FeaturizeError> {
            s.parse::<f64>()
                .map_err(|_| FeaturizeError::Malformed(format!("bad {what} `{s}`")))
        };
        let window_start_ms = rec[1]
            .parse::<i64>()
            .map_err(|_| FeaturizeError::Malformed(format!("bad window_start `{}`", &rec[1])))?;
        let mut values = Vec::with_capacity(columns.len());
        for cell in rec.iter().skip(2).take(columns.len()) {
            values.push(parse(cell, "feature value")?);
        }
        let label_cell = &rec[rec.len() - 1];
        let label = if label_cell.is_empty() {
            None
        } else {
            Some(label_cell.parse::<u8>().map_err(|_| {
                FeaturizeError::Malformed(format!("bad label `{label_cell}`"))
            })?)
        };
        rows.push(WindowRow { user_id: rec[0].to_string(), window_start_ms, values, label });
    }
    Ok(FeatureMatrix { columns, rows })
}

pub fn write_features_csv_file(
    path: &std::path::Path,
    matrix: &FeatureMatrix,
) -> Result<(), FeaturizeError> {
    let file = std::fs::File::create(path)?;
    write_features_csv(std::io::BufWriter::new(file), matrix)
}

pub fn read_features_csv_file(path: &std::path::Path) -> Result<FeatureMatrix, FeaturizeError> {
    let file = std::fs::File::open(path)?;
    read_features_csv(std::io::BufReader::new(file))
}
