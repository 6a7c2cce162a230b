//! Quantile binning of raw feature columns into small integer histogram bins.

use serde::{Deserialize, Serialize};

/// Monotone value→bin mapping for one column, persisted with the model.
///
/// `boundaries` are strictly increasing cut points placed between observed
/// values; a value maps to the count of boundaries strictly below it, so
/// `v1 <= v2` implies `bin(v1) <= bin(v2)` and every training value of a
/// column with few distinct values keeps its own exact bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub boundaries: Vec<f64>,
}

impl BinMapper {
    /// Fit boundaries from a column at value quantiles, emitting at most
    /// `max_bins` bins.
    pub fn fit(values: &[f64], max_bins: usize) -> BinMapper {
        assert!(max_bins >= 2, "binning needs at least two bins");
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite features"));
        // Distinct values with cumulative counts.
        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for &v in &sorted {
            match distinct.last_mut() {
                Some((d, c)) if *d == v => *c += 1,
                _ => {
                    let cum = distinct.last().map(|(_, c)| *c).unwrap_or(0);
                    distinct.push((v, cum + 1));
                }
            }
        }
        let n = sorted.len();
        let m = distinct.len();
        let mut boundaries = Vec::new();
        if m <= max_bins {
            for w in distinct.windows(2) {
                boundaries.push(midpoint(w[0].0, w[1].0));
            }
        } else {
            // Greedy equal-count cuts: close a bin once it holds its share
            // of the remaining values.
            let mut bins_left = max_bins;
            let mut bin_start_cum = 0usize;
            for w in distinct.windows(2) {
                if bins_left <= 1 {
                    break;
                }
                let (val, cum) = w[0];
                let target = (n - bin_start_cum) as f64 / bins_left as f64;
                if (cum - bin_start_cum) as f64 >= target {
                    boundaries.push(midpoint(val, w[1].0));
                    bins_left -= 1;
                    bin_start_cum = cum;
                }
            }
        }
        BinMapper { boundaries }
    }

    pub fn n_bins(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn bin(&self, v: f64) -> u16 {
        self.boundaries.partition_point(|b| *b < v) as u16
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a / 2.0 + b / 2.0;
    // Guard against equal-midpoint collapse for adjacent representable
    // values; the boundary only has to separate a from b.
    if mid > a {
        mid
    } else {
        b
    }
}
