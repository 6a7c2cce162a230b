//! Histogram-based leaf-wise tree growth.
//!
//! Histograms are built per physical column (a raw binned column or an EFB
//! bundle), while split enumeration walks logical features. A logical
//! feature's bin 0 is never read from the histogram: it is reconstructed as
//! node totals minus the non-default bins. That subtraction is what makes
//! training with bundling bit-identical to training without it — bundles
//! cannot attribute their shared default bin to a member, so neither layout
//! gets to use a materialized bin 0.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// How a split's quality is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainForm {
    /// Variance gain: amplified gradient sums are squared before dividing
    /// by child weight. The default everywhere.
    Squared,
    /// The same expression without the squares, kept only for side-by-side
    /// comparison; not scale-consistent and not used by any shipped preset.
    PaperLiteral,
}

/// Where a logical feature's bins live inside the physical columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureView {
    pub phys_col: usize,
    /// Physical bin holding the feature's logical bin 1.
    pub base: u16,
    /// Logical bin count (the feature's own bin count).
    pub n_bins: u16,
}

impl FeatureView {
    pub fn logical_bin(&self, physical: u16) -> u16 {
        if physical >= self.base && physical < self.base + self.n_bins - 1 {
            physical - self.base + 1
        } else {
            0
        }
    }
}

/// Accumulated gradient statistics of one histogram bin or node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinStats {
    pub grad: f64,
    pub hess: f64,
    /// GOSS-amplified sample weight.
    pub weight: f64,
    /// Raw sample count.
    pub count: u32,
}

impl BinStats {
    fn add(&mut self, o: &BinStats) {
        self.grad += o.grad;
        self.hess += o.hess;
        self.weight += o.weight;
        self.count += o.count;
    }

    fn sub(&self, o: &BinStats) -> BinStats {
        BinStats {
            grad: self.grad - o.grad,
            hess: self.hess - o.hess,
            weight: self.weight - o.weight,
            count: self.count - o.count,
        }
    }
}

/// Split quality as improvement over leaving the node whole, per the node's
/// amplified weight. Strictly positive gain is required to split.
pub fn variance_gain(
    grad_l: f64,
    weight_l: f64,
    grad_r: f64,
    weight_r: f64,
    grad_parent: f64,
    weight_parent: f64,
    form: GainForm,
) -> f64 {
    let score = |g: f64, w: f64| match form {
        GainForm::Squared => g * g / w,
        GainForm::PaperLiteral => g / w,
    };
    (score(grad_l, weight_l) + score(grad_r, weight_r) - score(grad_parent, weight_parent))
        / weight_parent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        /// Logical feature index.
        feature: u32,
        /// Highest logical bin routed left.
        bin: u16,
        gain: f64,
        left: u32,
        right: u32,
    },
}

/// One regression tree, nodes stored flat with index links; node 0 is the
/// root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    /// Route one sample to its leaf; `bin_of` yields the logical bin of a
    /// feature for this sample.
    pub fn leaf_value_for<F: Fn(u32) -> u16>(&self, bin_of: F) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, bin, left, right, .. } => {
                    idx = if bin_of(*feature) <= *bin { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn for_each_split<F: FnMut(u32, f64)>(&self, mut f: F) {
        for n in &self.nodes {
            if let TreeNode::Split { feature, gain, .. } = n {
                f(*feature, *gain);
            }
        }
    }
}

/// Immutable inputs shared by every node of one tree.
pub struct GrowContext<'a> {
    pub physical: &'a [Vec<u16>],
    /// Histogram offset of each physical column.
    pub phys_offsets: &'a [usize],
    pub hist_len: usize,
    pub views: &'a [FeatureView],
    /// Per-sample GOSS-amplified gradient, hessian and coefficient; only
    /// sampled indices are ever read.
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub coef: &'a [f64],
    pub max_leaves: usize,
    pub min_samples_per_leaf: u32,
    pub learning_rate: f64,
    pub gain_form: GainForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCand {
    pub gain: f64,
    pub feature: u32,
    pub bin: u16,
}

struct HeapEntry {
    gain: f64,
    grow_id: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Max-heap on gain; equal gains split the earliest-created leaf.
        self.gain
            .partial_cmp(&other.gain)
            .expect("gains are finite")
            .then_with(|| other.grow_id.cmp(&self.grow_id))
    }
}

struct GrowNode {
    arena: usize,
    samples: Vec<u32>,
    total: BinStats,
    hist: Option<Vec<BinStats>>,
    cand: Option<SplitCand>,
}

fn node_totals(ctx: &GrowContext, samples: &[u32]) -> BinStats {
    let mut t = BinStats::default();
    for &i in samples {
        let i = i as usize;
        t.grad += ctx.grad[i];
        t.hess += ctx.hess[i];
        t.weight += ctx.coef[i];
        t.count += 1;
    }
    t
}

fn build_hist(ctx: &GrowContext, samples: &[u32]) -> Vec<BinStats> {
    let mut hist = vec![BinStats::default(); ctx.hist_len];
    for (c, col) in ctx.physical.iter().enumerate() {
        let seg = &mut hist[ctx.phys_offsets[c]..];
        for &i in samples {
            let i = i as usize;
            let e = &mut seg[col[i] as usize];
            e.grad += ctx.grad[i];
            e.hess += ctx.hess[i];
            e.weight += ctx.coef[i];
            e.count += 1;
        }
    }
    hist
}

/// Best admissible split of a node, or None when nothing has positive gain.
/// Features are scanned ascending and bins ascending with a strict
/// improvement test, so equal gains resolve to the lowest feature, then the
/// lowest bin.
fn best_split(ctx: &GrowContext, hist: &[BinStats], total: &BinStats) -> Option<SplitCand> {
    if total.count < 2 * ctx.min_samples_per_leaf {
        return None;
    }
    let mut best: Option<SplitCand> = None;
    for (j, view) in ctx.views.iter().enumerate() {
        if view.n_bins < 2 {
            continue;
        }
        let start = ctx.phys_offsets[view.phys_col] + view.base as usize;
        let seg = &hist[start..start + view.n_bins as usize - 1];
        // Reconstruct the default bin from the node totals.
        let mut rest = BinStats::default();
        for e in seg {
            rest.add(e);
        }
        let mut left = total.sub(&rest);
        for d in 0..view.n_bins - 1 {
            if d > 0 {
                left.add(&seg[d as usize - 1]);
            }
            let right = total.sub(&left);
            if left.count < ctx.min_samples_per_leaf || right.count < ctx.min_samples_per_leaf {
                continue;
            }
            if left.weight <= 0.0 || right.weight <= 0.0 {
                continue;
            }
            let gain = variance_gain(
                left.grad,
                left.weight,
                right.grad,
                right.weight,
                total.grad,
                total.weight,
                ctx.gain_form,
            );
            if gain > 0.0 && best.map(|b| gain > b.gain).unwrap_or(true) {
                best = Some(SplitCand { gain, feature: j as u32, bin: d });
            }
        }
    }
    best
}

fn leaf_value(ctx: &GrowContext, total: &BinStats) -> f64 {
    // Newton step on the weighted loss; the hessian guard and output clamp
    // keep near-pure leaves from emitting unbounded logits.
    let raw = total.grad / total.hess.max(1e-12);
    ctx.learning_rate * raw.clamp(-10.0, 10.0)
}

/// Grow one tree leaf-wise from the sampled rows (ascending indices).
pub fn grow_tree(ctx: &GrowContext, root_samples: Vec<u32>) -> Tree {
    let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
    let mut grows: Vec<GrowNode> = Vec::new();
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();

    let total = node_totals(ctx, &root_samples);
    let hist = build_hist(ctx, &root_samples);
    let cand = best_split(ctx, &hist, &total);
    if let Some(c) = &cand {
        heap.push(HeapEntry { gain: c.gain, grow_id: 0 });
    }
    grows.push(GrowNode { arena: 0, samples: root_samples, total, hist: Some(hist), cand });

    let mut n_leaves = 1usize;
    while n_leaves < ctx.max_leaves {
        let Some(entry) = heap.pop() else { break };
        let (cand, samples, parent_hist, parent_total, arena) = {
            let g = &mut grows[entry.grow_id];
            (
                g.cand.take().expect("queued leaves have candidates"),
                std::mem::take(&mut g.samples),
                g.hist.take().expect("queued leaves keep their histograms"),
                g.total,
                g.arena,
            )
        };

        let view = &ctx.views[cand.feature as usize];
        let col = &ctx.physical[view.phys_col];
        let mut left_samples = Vec::new();
        let mut right_samples = Vec::new();
        for &i in &samples {
            if view.logical_bin(col[i as usize]) <= cand.bin {
                left_samples.push(i);
            } else {
                right_samples.push(i);
            }
        }
        drop(samples);

        // Accumulate the smaller child, derive the larger by subtraction.
        let left_is_small = left_samples.len() <= right_samples.len();
        let small = if left_is_small { &left_samples } else { &right_samples };
        let small_total = node_totals(ctx, small);
        let small_hist = build_hist(ctx, small);
        let large_total = parent_total.sub(&small_total);
        let mut large_hist = parent_hist;
        for (a, b) in large_hist.iter_mut().zip(&small_hist) {
            *a = a.sub(b);
        }
        let (lt, lh, rt, rh) = if left_is_small {
            (small_total, small_hist, large_total, large_hist)
        } else {
            (large_total, large_hist, small_total, small_hist)
        };

        let left_arena = nodes.len();
        nodes.push(TreeNode::Leaf { value: 0.0 });
        nodes.push(TreeNode::Leaf { value: 0.0 });
        nodes[arena] = TreeNode::Split {
            feature: cand.feature,
            bin: cand.bin,
            gain: cand.gain,
            left: left_arena as u32,
            right: (left_arena + 1) as u32,
        };

        for (child_arena, child_samples, child_total, child_hist) in [
            (left_arena, left_samples, lt, lh),
            (left_arena + 1, right_samples, rt, rh),
        ] {
            let cand = best_split(ctx, &child_hist, &child_total);
            let grow_id = grows.len();
            if let Some(c) = &cand {
                heap.push(HeapEntry { gain: c.gain, grow_id });
            }
            grows.push(GrowNode {
                arena: child_arena,
                samples: child_samples,
                total: child_total,
                hist: cand.is_some().then_some(child_hist),
                cand,
            });
        }
        n_leaves += 1;
    }

    for g in &grows {
        if matches!(nodes[g.arena], TreeNode::Leaf { .. }) {
            nodes[g.arena] = TreeNode::Leaf { value: leaf_value(ctx, &g.total) };
        }
    }
    Tree { nodes }
}
