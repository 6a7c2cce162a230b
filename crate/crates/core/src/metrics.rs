//! Binary classification evaluation: confusion counts, precision/recall/F1,
//! ROC and PR curves, and the positive-weight sweep.
//!
//! The decision rule is `score >= threshold` throughout, and any metric
//! whose denominator is zero is defined as zero, so every function is total
//! over its stated preconditions. ROC area uses exact integer accumulation
//! and equals the pairwise rank statistic (ties counted half) bit for bit;
//! PR area is average precision (right-step), deliberately not trapezoidal.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("labels and scores have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("ROC needs both classes present")]
    SingleClassLabels,
    #[error("PR needs at least one positive label")]
    NoPositives,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Count outcomes of thresholding scores against binary labels.
pub fn confusion(
    labels: &[u8],
    scores: &[f64],
    threshold: f64,
) -> Result<ConfusionCounts, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), scores.len()));
    }
    let mut c = ConfusionCounts::default();
    for (&label, &score) in labels.iter().zip(scores) {
        match (label != 0, score >= threshold) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// (precision, recall, F1); zero whenever the respective denominator is zero.
pub fn prf1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
    pub area: f64,
}

/// Scores sorted descending and grouped by exact value, with per-group
/// positive/negative counts.
fn score_groups(labels: &[u8], scores: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in order {
        let s = scores[i];
        match groups.last_mut() {
            Some((gs, pos, neg)) if *gs == s => {
                if labels[i] != 0 {
                    *pos += 1;
                } else {
                    *neg += 1;
                }
            }
            _ => groups.push((s, (labels[i] != 0) as u64, (labels[i] == 0) as u64)),
        }
    }
    groups
}

/// ROC curve over every distinct score threshold, descending, with (0,0)
/// prepended; the lowest threshold lands on (1,1). Area by the trapezoid
/// rule, accumulated in integers so ties are counted exactly half.
pub fn roc_curve(labels: &[u8], scores: &[f64]) -> Result<Curve, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), scores.len()));
    }
    let p: u64 = labels.iter().filter(|&&l| l != 0).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(MetricsError::SingleClassLabels);
    }
    let mut points = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut numerator: u128 = 0;
    for (s, pos, neg) in score_groups(labels, scores) {
        let (tp0, fp0) = (tp, fp);
        tp += pos;
        fp += neg;
        numerator += (fp - fp0) as u128 * (tp0 + tp) as u128;
        points.push(CurvePoint { threshold: s, x: fp as f64 / n as f64, y: tp as f64 / p as f64 });
    }
    let area = numerator as f64 / (2 * p * n) as f64;
    Ok(Curve { kind: CurveKind::Roc, points, area })
}

/// PR curve over every distinct score threshold, descending; area is
/// average precision (right-step summation).
pub fn pr_curve(labels: &[u8], scores: &[f64]) -> Result<Curve, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), scores.len()));
    }
    let p: u64 = labels.iter().filter(|&&l| l != 0).count() as u64;
    if p == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (s, pos, neg) in score_groups(labels, scores) {
        tp += pos;
        fp += neg;
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint { threshold: s, x: recall, y: precision });
    }
    Ok(Curve { kind: CurveKind::Pr, points, area })
}

/// One row of the F1-vs-weight table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSweepRow {
    pub weight: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Train and evaluate once per candidate positive-class weight; returns the
/// rows in input order and the weight with the best F1 (first on ties).
pub fn weight_sweep<F, E>(
    mut train_eval: F,
    weights: &[f64],
) -> Result<(Vec<WeightSweepRow>, f64), E>
where
    F: FnMut(f64) -> Result<(f64, f64, f64), E>,
{
    assert!(!weights.is_empty(), "weight sweep needs at least one weight");
    let mut rows = Vec::with_capacity(weights.len());
    for &weight in weights {
        let (precision, recall, f1) = train_eval(weight)?;
        rows.push(WeightSweepRow { weight, precision, recall, f1 });
    }
    let best = rows
        .iter()
        .fold(rows[0], |best, r| if r.f1 > best.f1 { *r } else { best })
        .weight;
    Ok((rows, best))
}

/// The `eval.json` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub pr_area: f64,
    pub rows_evaluated: u64,
    /// Conventions the numbers above depend on.
    pub notes: String,
}

/// Threshold metrics plus both curve areas in one pass.
pub fn evaluate(
    labels: &[u8],
    scores: &[f64],
    threshold: f64,
) -> Result<(EvalReport, Curve, Curve), MetricsError> {
    let counts = confusion(labels, scores, threshold)?;
    let (precision, recall, f1) = prf1(&counts);
    let roc = roc_curve(labels, scores)?;
    let pr = pr_curve(labels, scores)?;
    let report = EvalReport {
        threshold,
        counts,
        precision,
        recall,
        f1,
        roc_auc: roc.area,
        pr_area: pr.area,
        rows_evaluated: labels.len() as u64,
        notes: "decision rule: score >= threshold; zero-denominator metrics are 0; \
                PR area is average precision (right-step), not trapezoidal"
            .into(),
    };
    Ok((report, roc, pr))
}

/// Curve CSV: `threshold,x,y` per point, plot-ready.
pub fn write_curve_csv<W: Write>(writer: W, curve: &Curve) -> Result<(), std::io::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["threshold", "x", "y"])?;
    for pt in &curve.points {
        wtr.write_record([
            format!("{}", pt.threshold),
            format!("{}", pt.x),
            format!("{}", pt.y),
        ])?;
    }
    wtr.flush()
}

pub fn write_sweep_csv<W: Write>(
    writer: W,
    rows: &[WeightSweepRow],
    best_weight: f64,
) -> Result<(), std::io::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["weight", "precision", "recall", "f1", "best"])?;
    for r in rows {
        wtr.write_record([
            format!("{}", r.weight),
            format!("{}", r.precision),
            format!("{}", r.recall),
            format!("{}", r.f1),
            if r.weight == best_weight { "1".into() } else { "0".to_string() },
        ])?;
    }
    wtr.flush()
}

/// Pairwise rank statistic: P(score⁺ > score⁻) with ties counted half.
/// Quadratic; this is the independent cross-check for [`roc_curve`]'s area.
pub fn rank_auc(labels: &[u8], scores: &[f64]) -> Result<f64, MetricsError> {
    let pos: Vec<f64> =
        labels.iter().zip(scores).filter(|(l, _)| **l != 0).map(|(_, s)| *s).collect();
    let neg: Vec<f64> =
        labels.iter().zip(scores).filter(|(l, _)| **l == 0).map(|(_, s)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::SingleClassLabels);
    }
    let mut wins: u128 = 0;
    let mut ties: u128 = 0;
    for &sp in &pos {
        for &sn in &neg {
            if sp > sn {
                wins += 1;
            } else if sp == sn {
                ties += 1;
            }
        }
    }
    Ok((2 * wins + ties) as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}
