//! Gradient-boosted decision trees over binned features, from scratch:
//! multiclass softmax loss with positive-class weighting, K trees per
//! boosting round, gradient-based one-side sampling (GOSS) and exclusive
//! feature bundling (EFB).
//!
//! Training is single-threaded and strictly deterministic: same matrix,
//! parameters and seed give a byte-identical model. Switching GOSS off
//! equals `a = 1, b = 0` bit for bit, and bundling never changes a trained
//! tree (see [`tree`] for why).

pub mod binning;
pub mod bundle;
pub mod tree;

pub use binning::BinMapper;
pub use bundle::{bundle_column, efb_bundle, FeatureBundle};
pub use tree::{variance_gain, FeatureView, GainForm, Tree, TreeNode};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::FeatureMatrix;
use crate::util::derive_seed;
use tree::{grow_tree, GrowContext};

pub const MODEL_FORMAT: &str = "hotspot-gbdt/1";

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("training labels contain a single class")]
    SingleClassData,
    #[error("matrix contains non-finite values")]
    NonFiniteInput,
    #[error("matrix rows are not labelled")]
    UnlabelledData,
    #[error("feature columns do not match the model: {0}")]
    ColumnMismatch(String),
    #[error("model format: {0}")]
    ModelFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// All training knobs; the defaults mirror the deployed configuration
/// (120 leaves, learning rate 0.1, positive weight 5, GOSS a=0.2 b=0.1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub num_classes: usize,
    pub max_leaves: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop after this many rounds without validation-loss improvement;
    /// 0 disables early stopping.
    pub early_stop_rounds: usize,
    pub positive_class_weight: f64,
    pub goss_enabled: bool,
    /// Fraction of samples kept by largest gradient.
    pub goss_a: f64,
    /// Fraction of samples drawn uniformly from the remainder.
    pub goss_b: f64,
    pub efb_enabled: bool,
    /// Fraction of rows allowed to carry two non-default members per bundle.
    pub efb_conflict_budget: f64,
    pub histogram_bins: usize,
    pub min_samples_per_leaf: usize,
    pub gain_form: GainForm,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            num_classes: 2,
            max_leaves: 120,
            learning_rate: 0.1,
            max_iterations: 500,
            early_stop_rounds: 20,
            positive_class_weight: 5.0,
            goss_enabled: true,
            goss_a: 0.2,
            goss_b: 0.1,
            efb_enabled: true,
            efb_conflict_budget: 0.0,
            histogram_bins: 255,
            min_samples_per_leaf: 20,
            gain_form: GainForm::Squared,
            seed: 42,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let err = |m: &str| Err(GbdtError::InvalidParams(m.to_string()));
        if self.num_classes < 2 {
            return err("num_classes must be at least 2");
        }
        if self.max_leaves < 2 {
            return err("max_leaves must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be positive");
        }
        if !(self.positive_class_weight > 0.0 && self.positive_class_weight.is_finite()) {
            return err("positive_class_weight must be positive");
        }
        if !(self.goss_a > 0.0 && self.goss_a <= 1.0) {
            return err("goss_a must lie in (0, 1]");
        }
        if !(self.goss_b >= 0.0 && self.goss_b <= 1.0 - self.goss_a + 1e-12) {
            return err("goss_b must lie in [0, 1 - goss_a]");
        }
        if !(0.0..=1.0).contains(&self.efb_conflict_budget) {
            return err("efb_conflict_budget must lie in [0, 1]");
        }
        if !(2..=u16::MAX as usize).contains(&self.histogram_bins) {
            return err("histogram_bins must lie in [2, 65535]");
        }
        if self.min_samples_per_leaf == 0 {
            return err("min_samples_per_leaf must be at least 1");
        }
        Ok(())
    }
}

/// Numerically stable softmax (max-shifted exponents).
pub fn softmax_proba(scores: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    softmax_into(scores, &mut out);
    out
}

fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-class gradient targets r = q − P and hessians P(1−P), both scaled by
/// the positive-class weight for samples whose true class is 1.
///
/// Returns (gradients, hessians) indexed `[class][sample]`.
pub fn residuals(
    labels: &[u8],
    probs: &[Vec<f64>],
    positive_weight: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = probs.first().map(|p| p.len()).unwrap_or(0);
    let n = labels.len();
    let mut grad = vec![vec![0.0; n]; k];
    let mut hess = vec![vec![0.0; n]; k];
    for i in 0..n {
        let w = if labels[i] == 1 { positive_weight } else { 1.0 };
        for m in 0..k {
            let p = probs[i][m];
            let q = (labels[i] as usize == m) as u8 as f64;
            grad[m][i] = w * (q - p);
            hess[m][i] = w * p * (1.0 - p);
        }
    }
    (grad, hess)
}

/// Mean multiclass negative log-likelihood (unweighted).
pub fn multiclass_log_loss(labels: &[u8], probs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= probs[i][y as usize].max(f64::MIN_POSITIVE).ln();
    }
    total / labels.len() as f64
}

/// GOSS selection: `a_indices` are the top-⌈a·n⌉ samples by gradient
/// magnitude (ties by ascending index), `b_indices` a uniform
/// without-replacement draw of ⌈b·n⌉ from the rest; both ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GossSample {
    pub a_indices: Vec<u32>,
    pub b_indices: Vec<u32>,
    /// (1 − a)/b applied to every member of B.
    pub amplification: f64,
}

impl GossSample {
    /// All sampled indices ascending with their per-sample coefficients.
    pub fn merged(&self) -> (Vec<u32>, Vec<f64>) {
        let mut indices = Vec::with_capacity(self.a_indices.len() + self.b_indices.len());
        let mut coef = Vec::with_capacity(indices.capacity());
        let (mut x, mut y) = (0, 0);
        while x < self.a_indices.len() || y < self.b_indices.len() {
            let take_a = match (self.a_indices.get(x), self.b_indices.get(y)) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                _ => false,
            };
            if take_a {
                indices.push(self.a_indices[x]);
                coef.push(1.0);
                x += 1;
            } else {
                indices.push(self.b_indices[y]);
                coef.push(self.amplification);
                y += 1;
            }
        }
        (indices, coef)
    }
}

pub fn goss_sample(magnitudes: &[f64], a: f64, b: f64, seed: u64) -> GossSample {
    let n = magnitudes.len();
    let n_a = ((a * n as f64).ceil() as usize).min(n);
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&x, &y| {
        magnitudes[y as usize]
            .partial_cmp(&magnitudes[x as usize])
            .expect("finite gradient magnitudes")
            .then(x.cmp(&y))
    });
    let mut a_indices = order[..n_a].to_vec();
    a_indices.sort_unstable();
    let rest = &order[n_a..];
    let n_b = ((b * n as f64).ceil() as usize).min(rest.len());
    let mut b_indices: Vec<u32> = if n_b == 0 {
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, rest.len(), n_b).iter().map(|p| rest[p]).collect()
    };
    b_indices.sort_unstable();
    let amplification = if n_b == 0 { 0.0 } else { (1.0 - a) / b };
    GossSample { a_indices, b_indices, amplification }
}

/// A trained model: everything needed to score new rows and to audit which
/// columns carried the signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub format: String,
    pub params: TrainParams,
    pub columns: Vec<String>,
    pub mappers: Vec<BinMapper>,
    /// Which logical columns shared a physical column during training;
    /// informational only, prediction never consults it.
    pub bundles: Vec<Vec<usize>>,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Tree>>,
    pub best_iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

pub struct TrainOutput {
    pub ensemble: Ensemble,
    pub log: Vec<IterationLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceRow {
    pub column: String,
    pub gain: f64,
    pub splits: u64,
}

/// Train an ensemble; `validation` (labelled) enables early stopping on its
/// log-loss, with the returned model truncated to the best round.
pub fn train(
    matrix: &FeatureMatrix,
    params: &TrainParams,
    validation: Option<&FeatureMatrix>,
) -> Result<TrainOutput, GbdtError> {
    params.validate()?;
    let k = params.num_classes;
    let labels = matrix.labels().ok_or(GbdtError::UnlabelledData)?;
    let n = labels.len();
    if labels.iter().any(|&l| l as usize >= k) {
        return Err(GbdtError::InvalidParams(format!("label out of range for {k} classes")));
    }
    let first = labels.first().copied();
    if n == 0 || labels.iter().all(|&l| Some(l) == first) {
        return Err(GbdtError::SingleClassData);
    }
    ensure_finite(matrix)?;

    let n_cols = matrix.columns.len();
    let mut mappers = Vec::with_capacity(n_cols);
    let mut binned: Vec<Vec<u16>> = Vec::with_capacity(n_cols);
    let mut tmp = vec![0.0f64; n];
    for j in 0..n_cols {
        for (i, row) in matrix.rows.iter().enumerate() {
            tmp[i] = row.values[j];
        }
        let mapper = BinMapper::fit(&tmp, params.histogram_bins);
        binned.push(tmp.iter().map(|&v| mapper.bin(v)).collect());
        mappers.push(mapper);
    }
    let logical_bins: Vec<usize> = mappers.iter().map(|m| m.n_bins()).collect();

    // Physical layout: raw columns, or bundles when EFB is on.
    let mut views = vec![FeatureView { phys_col: 0, base: 1, n_bins: 1 }; n_cols];
    let mut physical: Vec<Vec<u16>> = Vec::new();
    let mut bundle_map: Vec<Vec<usize>> = Vec::new();
    if params.efb_enabled {
        let bundles = efb_bundle(&binned, &logical_bins, n, params.efb_conflict_budget);
        for (c, bundle) in bundles.iter().enumerate() {
            for (m, &j) in bundle.members.iter().enumerate() {
                views[j] = FeatureView {
                    phys_col: c,
                    base: bundle.offsets[m],
                    n_bins: logical_bins[j] as u16,
                };
            }
            let col = if bundle.members.len() == 1 {
                std::mem::take(&mut binned[bundle.members[0]])
            } else {
                bundle_column(bundle, &binned, n)
            };
            physical.push(col);
            bundle_map.push(bundle.members.clone());
        }
    } else {
        for (j, bins) in logical_bins.iter().enumerate() {
            views[j] = FeatureView { phys_col: j, base: 1, n_bins: *bins as u16 };
            bundle_map.push(vec![j]);
        }
        physical = binned;
    }
    let phys_bins: Vec<usize> = bundle_map
        .iter()
        .map(|members| 1 + members.iter().map(|&j| logical_bins[j] - 1).sum::<usize>())
        .collect();
    let mut phys_offsets = Vec::with_capacity(phys_bins.len());
    let mut hist_len = 0usize;
    for b in &phys_bins {
        phys_offsets.push(hist_len);
        hist_len += b;
    }

    // Validation rows binned to logical bins, aligned by column name.
    let valid = match validation {
        Some(vm) => {
            ensure_finite(vm)?;
            let vlabels = vm.labels().ok_or(GbdtError::UnlabelledData)?;
            let perm = column_permutation(&matrix.columns, vm)?;
            let mut vbinned: Vec<Vec<u16>> = Vec::with_capacity(n_cols);
            for (j, mapper) in mappers.iter().enumerate() {
                vbinned.push(vm.rows.iter().map(|r| mapper.bin(r.values[perm[j]])).collect());
            }
            Some((vlabels, vbinned))
        }
        None => None,
    };

    let mut scores = vec![vec![0.0f64; n]; k];
    let mut vscores = valid.as_ref().map(|(vl, _)| vec![vec![0.0f64; vl.len()]; k]);
    let mut trees: Vec<Vec<Tree>> = Vec::new();
    let mut log = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_iter = 0usize;
    let mut stall = 0usize;

    let mut probs = vec![0.0f64; k];
    let mut class_scores = vec![0.0f64; k];
    for t in 0..params.max_iterations {
        let mut grad = vec![vec![0.0f64; n]; k];
        let mut hess = vec![vec![0.0f64; n]; k];
        let mut mags = vec![0.0f64; n];
        for i in 0..n {
            for m in 0..k {
                class_scores[m] = scores[m][i];
            }
            softmax_into(&class_scores, &mut probs);
            let w = if labels[i] == 1 { params.positive_class_weight } else { 1.0 };
            let mut sq = 0.0;
            for m in 0..k {
                let q = (labels[i] as usize == m) as u8 as f64;
                let g = w * (q - probs[m]);
                grad[m][i] = g;
                hess[m][i] = w * probs[m] * (1.0 - probs[m]);
                sq += g * g;
            }
            mags[i] = sq.sqrt();
        }

        let (samples, sample_coef) = if params.goss_enabled {
            goss_sample(
                &mags,
                params.goss_a,
                params.goss_b,
                derive_seed(params.seed, "goss", t as u64),
            )
            .merged()
        } else {
            ((0..n as u32).collect(), vec![1.0; n])
        };
        let mut coef = vec![0.0f64; n];
        for (pos, &i) in samples.iter().enumerate() {
            coef[i as usize] = sample_coef[pos];
        }

        let mut round = Vec::with_capacity(k);
        for m in 0..k {
            let mut gw = std::mem::take(&mut grad[m]);
            let mut hw = std::mem::take(&mut hess[m]);
            for i in 0..n {
                gw[i] *= coef[i];
                hw[i] *= coef[i];
            }
            let ctx = GrowContext {
                physical: &physical,
                phys_offsets: &phys_offsets,
                hist_len,
                views: &views,
                grad: &gw,
                hess: &hw,
                coef: &coef,
                max_leaves: params.max_leaves,
                min_samples_per_leaf: params.min_samples_per_leaf as u32,
                learning_rate: params.learning_rate,
                gain_form: params.gain_form,
            };
            let tree = grow_tree(&ctx, samples.clone());
            for i in 0..n {
                scores[m][i] += tree.leaf_value_for(|f| {
                    let v = &views[f as usize];
                    v.logical_bin(physical[v.phys_col][i])
                });
            }
            if let (Some(vs), Some((_, vb))) = (vscores.as_mut(), valid.as_ref()) {
                for (i, s) in vs[m].iter_mut().enumerate() {
                    *s += tree.leaf_value_for(|f| vb[f as usize][i]);
                }
            }
            round.push(tree);
        }
        trees.push(round);

        let train_loss = loss_from_scores(&labels, &scores, &mut class_scores, &mut probs);
        let valid_loss = match (<Option<_>>::as_ref(&valid), vscores.as_ref()) {
            (Some((vl, _)), Some(vs)) => {
                Some(loss_from_scores(vl, vs, &mut class_scores, &mut probs))
            }
            _ => None,
        };
        log.push(IterationLog { iteration: t + 1, train_loss, valid_loss });

        match valid_loss {
            Some(vl) => {
                if vl < best_loss {
                    best_loss = vl;
                    best_iter = t + 1;
                    stall = 0;
                } else {
                    stall += 1;
                    if params.early_stop_rounds > 0 && stall >= params.early_stop_rounds {
                        break;
                    }
                }
            }
            None => best_iter = t + 1,
        }
    }
    trees.truncate(best_iter);

    Ok(TrainOutput {
        ensemble: Ensemble {
            format: MODEL_FORMAT.to_string(),
            params: params.clone(),
            columns: matrix.columns.clone(),
            mappers,
            bundles: bundle_map,
            trees,
            best_iteration: best_iter,
        },
        log,
    })
}

fn loss_from_scores(
    labels: &[u8],
    scores: &[Vec<f64>],
    class_scores: &mut [f64],
    probs: &mut [f64],
) -> f64 {
    let k = scores.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        for m in 0..k {
            class_scores[m] = scores[m][i];
        }
        softmax_into(class_scores, probs);
        total -= probs[y as usize].max(f64::MIN_POSITIVE).ln();
    }
    total / labels.len() as f64
}

fn ensure_finite(matrix: &FeatureMatrix) -> Result<(), GbdtError> {
    for row in &matrix.rows {
        if row.values.iter().any(|v| !v.is_finite()) {
            return Err(GbdtError::NonFiniteInput);
        }
    }
    Ok(())
}

/// model column index → matrix column index, by name.
fn column_permutation(
    model_columns: &[String],
    matrix: &FeatureMatrix,
) -> Result<Vec<usize>, GbdtError> {
    if matrix.columns.len() != model_columns.len() {
        return Err(GbdtError::ColumnMismatch(format!(
            "model has {} columns, input has {}",
            model_columns.len(),
            matrix.columns.len()
        )));
    }
    model_columns
        .iter()
        .map(|c| {
            matrix
                .column_index(c)
                .ok_or_else(|| GbdtError::ColumnMismatch(format!("missing column `{c}`")))
        })
        .collect()
}

impl Ensemble {
    pub fn n_classes(&self) -> usize {
        self.params.num_classes
    }

    /// Per-row class probabilities; columns are aligned by name, so any
    /// permutation of the training layout scores identically.
    pub fn predict_proba(&self, matrix: &FeatureMatrix) -> Result<Vec<Vec<f64>>, GbdtError> {
        let perm = column_permutation(&self.columns, matrix)?;
        ensure_finite(matrix)?;
        let k = self.n_classes();
        let mut out = Vec::with_capacity(matrix.rows.len());
        let mut bins = vec![0u16; self.columns.len()];
        let mut scores = vec![0.0f64; k];
        for row in &matrix.rows {
            for (j, mapper) in self.mappers.iter().enumerate() {
                bins[j] = mapper.bin(row.values[perm[j]]);
            }
            scores.iter_mut().for_each(|s| *s = 0.0);
            for round in &self.trees {
                for (m, tree) in round.iter().enumerate() {
                    scores[m] += tree.leaf_value_for(|f| bins[f as usize]);
                }
            }
            out.push(softmax_proba(&scores));
        }
        Ok(out)
    }

    /// Probability of class 1 per row.
    pub fn predict_positive(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        Ok(self.predict_proba(matrix)?.into_iter().map(|p| p[1]).collect())
    }

    /// Total recorded split gain and split count per column, descending by
    /// gain with ties by column name; unused columns close the list.
    pub fn feature_importance(&self) -> Vec<ImportanceRow> {
        let mut gain = vec![0.0f64; self.columns.len()];
        let mut splits = vec![0u64; self.columns.len()];
        for round in &self.trees {
            for tree in round {
                tree.for_each_split(|f, g| {
                    gain[f as usize] += g;
                    splits[f as usize] += 1;
                });
            }
        }
        let mut rows: Vec<ImportanceRow> = self
            .columns
            .iter()
            .zip(gain)
            .zip(splits)
            .map(|((column, gain), splits)| ImportanceRow { column: column.clone(), gain, splits })
            .collect();
        rows.sort_by(|a, b| {
            b.gain.partial_cmp(&a.gain).expect("finite gains").then(a.column.cmp(&b.column))
        });
        rows
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Ensemble, GbdtError> {
        let model: Ensemble =
            serde_json::from_str(s).map_err(|e| GbdtError::ModelFormat(e.to_string()))?;
        if model.format != MODEL_FORMAT {
            return Err(GbdtError::ModelFormat(format!(
                "unsupported model format `{}`, expected `{MODEL_FORMAT}`",
                model.format
            )));
        }
        if model.mappers.len() != model.columns.len() {
            return Err(GbdtError::ModelFormat(
                "bin mapper count does not match column count".into(),
            ));
        }
        for round in &model.trees {
            if round.len() != model.params.num_classes {
                return Err(GbdtError::ModelFormat("round with wrong tree count".into()));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), GbdtError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Ensemble, GbdtError> {
        Ensemble::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::WindowRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(columns: &[&str], rows: &[(&[f64], u8)]) -> FeatureMatrix {
        FeatureMatrix {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (values, label))| WindowRow {
                    user_id: format!("u{i}"),
                    window_start_ms: 0,
                    values: values.to_vec(),
                    label: Some(*label),
                })
                .collect(),
        }
    }

    fn small_params() -> TrainParams {
        TrainParams {
            max_leaves: 8,
            max_iterations: 30,
            early_stop_rounds: 0,
            positive_class_weight: 1.0,
            goss_enabled: false,
            goss_a: 1.0,
            goss_b: 0.0,
            efb_enabled: false,
            min_samples_per_leaf: 1,
            learning_rate: 0.3,
            ..TrainParams::default()
        }
    }

    #[test]
    fn default_params_are_valid() {
        TrainParams::default().validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_fractions() {
        let mut p = TrainParams::default();
        p.goss_a = 0.0;
        assert!(p.validate().is_err());
        p.goss_a = 0.9;
        p.goss_b = 0.2;
        assert!(p.validate().is_err());
        p = TrainParams::default();
        p.positive_class_weight = 0.0;
        assert!(p.validate().is_err());
        p = TrainParams::default();
        p.histogram_bins = 1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_proba(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax_proba(&[2.0f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax_proba(&[1000.0, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-12);
        // Shifted-exponent oracle: exp(0)/(exp(0)+exp(−1000)).
        let oracle = 1.0 / (1.0 + (-1000.0f64).exp());
        assert_eq!(p[0], oracle);
        let p = softmax_proba(&[3.0, 1.0, -2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let (g, h) = residuals(&[0], &[vec![0.5, 0.5]], 1.0);
        assert_eq!(g[0][0], 0.5);
        assert_eq!(g[1][0], -0.5);
        assert_eq!(h[0][0], 0.25);
        // Perfect prediction leaves nothing to fit.
        let (g, _) = residuals(&[1], &[vec![0.0, 1.0]], 1.0);
        assert_eq!((g[0][0], g[1][0]), (0.0, 0.0));
        // Positive-class samples are amplified on both derivative orders.
        let (g, h) = residuals(&[1], &[vec![0.9, 0.1]], 5.0);
        assert_eq!(g[1][0], 5.0 * (1.0 - 0.1));
        assert_eq!(g[0][0], 5.0 * (0.0 - 0.9));
        assert!((h[1][0] - 5.0 * 0.1 * 0.9).abs() < 1e-15);
    }

    #[test]
    fn residuals_match_finite_differences() {
        // Loss(scores) = Σ_i w_i · (−ln softmax(scores_i)[y_i]).
        let loss = |scores: &Vec<Vec<f64>>, labels: &[u8], w_pos: f64| -> f64 {
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let p = softmax_proba(&scores[i]);
                let w = if y == 1 { w_pos } else { 1.0 };
                total -= w * p[y as usize].ln();
            }
            total
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &w_pos in &[1.0, 5.0] {
            for k in [2usize, 3] {
                let n = 12;
                let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..k as u8)).collect();
                let scores: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
                let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax_proba(s)).collect();
                let (grad, _) = residuals(&labels, &probs, w_pos);
                let eps = 1e-6;
                for i in 0..n {
                    for m in 0..k {
                        let mut up = scores.clone();
                        up[i][m] += eps;
                        let mut down = scores.clone();
                        down[i][m] -= eps;
                        let numeric =
                            (loss(&up, &labels, w_pos) - loss(&down, &labels, w_pos)) / (2.0 * eps);
                        // The residual is the negative gradient of the loss.
                        let analytic = -grad[m][i];
                        assert!(
                            (numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1.0),
                            "i={i} m={m}: {numeric} vs {analytic}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn goss_degenerate_a1_keeps_everything() {
        let s = goss_sample(&[0.5, 0.1, 0.9], 1.0, 0.0, 7);
        assert_eq!(s.a_indices, vec![0, 1, 2]);
        assert!(s.b_indices.is_empty());
        let (idx, coef) = s.merged();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(coef, vec![1.0; 3]);
    }

    #[test]
    fn goss_sizes_and_amplification() {
        let mags: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let s = goss_sample(&mags, 0.2, 0.1, 7);
        assert_eq!(s.a_indices, vec![8, 9]);
        assert_eq!(s.b_indices.len(), 1);
        assert_eq!(s.amplification, (1.0 - 0.2) / 0.1);
        assert!(!s.b_indices.iter().any(|i| s.a_indices.contains(i)));
    }

    #[test]
    fn goss_ties_break_by_ascending_index() {
        let s = goss_sample(&[1.0; 10], 0.5, 0.0, 7);
        assert_eq!(s.a_indices, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn goss_is_seed_deterministic() {
        let mags: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        assert_eq!(goss_sample(&mags, 0.2, 0.3, 9), goss_sample(&mags, 0.2, 0.3, 9));
        assert_ne!(goss_sample(&mags, 0.2, 0.3, 9).b_indices, goss_sample(&mags, 0.2, 0.3, 10).b_indices);
    }

    fn separable() -> FeatureMatrix {
        let rows: Vec<(Vec<f64>, u8)> = (0..40)
            .map(|i| {
                let x = i as f64 / 39.0;
                (vec![x], (x > 0.5) as u8)
            })
            .collect();
        let slices: Vec<(&[f64], u8)> = rows.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        matrix(&["x"], &slices)
    }

    #[test]
    fn training_loss_decreases_on_separable_data() {
        let out = train(&separable(), &small_params(), None).unwrap();
        assert_eq!(out.log.len(), 30);
        for w in out.log.windows(2) {
            assert!(
                w[1].train_loss < w[0].train_loss,
                "loss must keep falling: {} then {}",
                w[0].train_loss,
                w[1].train_loss
            );
        }
        let m = separable();
        let probs = out.ensemble.predict_proba(&m).unwrap();
        for (row, p) in m.rows.iter().zip(&probs) {
            let pred = (p[1] >= 0.5) as u8;
            assert_eq!(pred, row.label.unwrap());
        }
    }

    #[test]
    fn learns_xor_pattern() {
        // Unequal cluster sizes keep the root split's gain strictly positive.
        let mut rows: Vec<(Vec<f64>, u8)> = Vec::new();
        for (x, y, count) in [(0.0, 0.0, 5), (0.0, 1.0, 4), (1.0, 0.0, 5), (1.0, 1.0, 4)] {
            for _ in 0..count {
                rows.push((vec![x, y], ((x != y) as u8)));
            }
        }
        let slices: Vec<(&[f64], u8)> = rows.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let m = matrix(&["x", "y"], &slices);
        let mut params = small_params();
        params.max_iterations = 50;
        let out = train(&m, &params, None).unwrap();
        let probs = out.ensemble.predict_proba(&m).unwrap();
        for (row, p) in m.rows.iter().zip(&probs) {
            assert_eq!((p[1] >= 0.5) as u8, row.label.unwrap());
        }
    }

    #[test]
    fn single_class_and_unlabelled_inputs_fail() {
        let m = matrix(&["x"], &[(&[0.0], 0), (&[1.0], 0)]);
        assert!(matches!(train(&m, &small_params(), None), Err(GbdtError::SingleClassData)));
        let mut m = matrix(&["x"], &[(&[0.0], 0), (&[1.0], 1)]);
        m.rows[0].label = None;
        assert!(matches!(train(&m, &small_params(), None), Err(GbdtError::UnlabelledData)));
    }

    #[test]
    fn non_finite_input_fails() {
        let m = matrix(&["x"], &[(&[f64::NAN], 0), (&[1.0], 1)]);
        assert!(matches!(train(&m, &small_params(), None), Err(GbdtError::NonFiniteInput)));
    }

    #[test]
    fn goss_off_equals_degenerate_goss_bit_for_bit() {
        let m = separable();
        let mut on = small_params();
        on.goss_enabled = true;
        on.goss_a = 1.0;
        on.goss_b = 0.0;
        let mut off = small_params();
        off.goss_enabled = false;
        let e_on = train(&m, &on, None).unwrap().ensemble;
        let e_off = train(&m, &off, None).unwrap().ensemble;
        assert_eq!(e_on.trees, e_off.trees);
        assert_eq!(
            serde_json::to_string(&e_on.trees).unwrap(),
            serde_json::to_string(&e_off.trees).unwrap()
        );
    }

    /// Three groups of three mutually exclusive columns each.
    fn exclusive_matrix() -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let columns: Vec<String> = (0..9).map(|j| format!("c{j}")).collect();
        let mut rows = Vec::new();
        for i in 0..240 {
            let mut values = vec![0.0; 9];
            let mut hot = 0usize;
            for g in 0..3 {
                let pick = rng.random_range(0..4usize);
                if pick < 3 {
                    values[g * 3 + pick] = rng.random_range(1..5) as f64;
                    hot += g * 3 + pick;
                }
            }
            let label = ((hot + i % 2) % 2) as u8;
            rows.push(WindowRow {
                user_id: format!("u{i}"),
                window_start_ms: 0,
                values,
                label: Some(label),
            });
        }
        FeatureMatrix { columns, rows }
    }

    #[test]
    fn efb_is_transparent_at_budget_zero() {
        let m = exclusive_matrix();
        let mut with = small_params();
        with.efb_enabled = true;
        let mut without = small_params();
        without.efb_enabled = false;
        let e_with = train(&m, &with, None).unwrap().ensemble;
        let e_without = train(&m, &without, None).unwrap().ensemble;
        assert_eq!(e_with.bundles.len(), 3, "one bundle per exclusive group");
        assert_eq!(e_with.trees, e_without.trees);
        let (p_with, p_without) =
            (e_with.predict_proba(&m).unwrap(), e_without.predict_proba(&m).unwrap());
        for (a, b) in p_with.iter().zip(&p_without) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn empty_ensemble_predicts_uniform() {
        let m = separable();
        let mut params = small_params();
        params.max_iterations = 0;
        let out = train(&m, &params, None).unwrap();
        assert!(out.ensemble.trees.is_empty());
        let probs = out.ensemble.predict_proba(&m).unwrap();
        assert!(probs.iter().all(|p| p == &vec![0.5, 0.5]));
    }

    #[test]
    fn permuted_columns_predict_identically() {
        let rows: Vec<(Vec<f64>, u8)> = (0..30)
            .map(|i| (vec![i as f64, (i * i % 7) as f64], (i % 2) as u8))
            .collect();
        let slices: Vec<(&[f64], u8)> = rows.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let m = matrix(&["a", "b"], &slices);
        let e = train(&m, &small_params(), None).unwrap().ensemble;
        let mut permuted = m.clone();
        permuted.columns.reverse();
        for row in &mut permuted.rows {
            row.values.reverse();
        }
        assert_eq!(e.predict_proba(&m).unwrap(), e.predict_proba(&permuted).unwrap());
    }

    #[test]
    fn column_mismatch_is_rejected() {
        let m = matrix(&["a"], &[(&[0.0], 0), (&[1.0], 1)]);
        let e = train(&m, &small_params(), None).unwrap().ensemble;
        let wrong = matrix(&["z"], &[(&[0.0], 0)]);
        assert!(matches!(e.predict_proba(&wrong), Err(GbdtError::ColumnMismatch(_))));
        let extra = matrix(&["a", "b"], &[(&[0.0, 1.0], 0)]);
        assert!(matches!(e.predict_proba(&extra), Err(GbdtError::ColumnMismatch(_))));
    }

    #[test]
    fn early_stopping_truncates_to_best_round() {
        let m = separable();
        let mut params = small_params();
        params.max_iterations = 200;
        params.early_stop_rounds = 5;
        // A validation set the model can only overfit away from: random labels.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vrows: Vec<(Vec<f64>, u8)> =
            (0..40).map(|_| (vec![rng.random_range(0.0..1.0)], rng.random_range(0..2u8))).collect();
        let vslices: Vec<(&[f64], u8)> = vrows.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let valid = matrix(&["x"], &vslices);
        let out = train(&m, &params, Some(&valid)).unwrap();
        assert!(out.log.len() < 200, "early stop must trigger");
        assert_eq!(out.ensemble.trees.len(), out.ensemble.best_iteration);
        let best = out
            .log
            .iter()
            .min_by(|a, b| a.valid_loss.partial_cmp(&b.valid_loss).unwrap())
            .unwrap();
        assert_eq!(best.iteration, out.ensemble.best_iteration);
    }

    #[test]
    fn importance_finds_planted_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<(Vec<f64>, u8)> = (0..100)
            .map(|i| {
                let label = (i % 2) as u8;
                (vec![rng.random_range(0.0..1.0), label as f64], label)
            })
            .collect();
        let slices: Vec<(&[f64], u8)> = rows.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
        let m = matrix(&["noise", "signal"], &slices);
        let e = train(&m, &small_params(), None).unwrap().ensemble;
        let imp = e.feature_importance();
        assert_eq!(imp[0].column, "signal");
        assert!(imp[0].gain > 0.0);
        assert_eq!(imp.last().unwrap().column, "noise");
        let max_leaves = e.trees.iter().flatten().map(|t| t.n_leaves()).max().unwrap();
        assert!(max_leaves <= e.params.max_leaves);
    }

    #[test]
    fn model_json_round_trips() {
        let m = separable();
        let e = train(&m, &small_params(), None).unwrap().ensemble;
        let json = e.to_json();
        let back = Ensemble::from_json(&json).unwrap();
        assert_eq!(e, back);
        assert_eq!(json, back.to_json());
        assert_eq!(e.predict_proba(&m).unwrap(), back.predict_proba(&m).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        e.save(&path).unwrap();
        assert_eq!(Ensemble::load(&path).unwrap(), e);
    }

    #[test]
    fn rejects_foreign_model_format() {
        let m = separable();
        let e = train(&m, &small_params(), None).unwrap().ensemble;
        let json = e.to_json().replace("hotspot-gbdt/1", "hotspot-gbdt/999");
        assert!(matches!(Ensemble::from_json(&json), Err(GbdtError::ModelFormat(_))));
    }
}
