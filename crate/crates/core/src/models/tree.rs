//! Regression trees shared by the forest and the boosted ensemble.
//!
//! [`grow_exact`] is the CART builder used by the forest: it scans every
//! distinct-value midpoint of every feature and keeps the split with the
//! largest reduction in squared error. The histogram builder for boosting
//! lives in `gbt.rs` but emits the same [`Tree`] representation.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary tree in arena form; node 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Midpoint between two distinct sorted values that still separates them.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

/// Gains at or below this fraction of the node's squared error are treated as
/// numerical noise.
pub(crate) const RELATIVE_GAIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

/// Per-feature sample orders for one tree. `order[f]` lists sample indices
/// (with bootstrap repeats) sorted by `x[., f]`, ties by index.
pub(crate) struct SortedSamples {
    order: Vec<Vec<usize>>,
    by_index: Vec<usize>,
}

impl SortedSamples {
    /// `global_order[f]` is `0..n` sorted by feature `f`; `counts[i]` is the
    /// multiplicity of sample `i` (bootstrap weights).
    pub(crate) fn from_counts(global_order: &[Vec<usize>], counts: &[u32]) -> Self {
        let expand = |ord: &[usize]| -> Vec<usize> {
            let mut out = Vec::with_capacity(ord.len());
            for &i in ord {
                for _ in 0..counts[i] {
                    out.push(i);
                }
            }
            out
        };
        let natural: Vec<usize> = (0..counts.len()).collect();
        SortedSamples {
            order: global_order.iter().map(|o| expand(o)).collect(),
            by_index: expand(&natural),
        }
    }
}

pub(crate) fn global_orders(x: ArrayView2<f64>) -> Vec<Vec<usize>> {
    (0..x.ncols())
        .map(|f| {
            let col = x.column(f);
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Grows one exact CART regression tree. `importance[f]` accumulates the
/// squared-error reduction of every split on feature `f`.
pub(crate) fn grow_exact(
    x: ArrayView2<f64>,
    y: &[f64],
    mut samples: SortedSamples,
    params: GrowParams,
    importance: &mut [f64],
) -> Tree {
    let total = samples.by_index.len();
    let d = x.ncols();
    let mut nodes: Vec<Node> = Vec::new();
    // (node slot, start, end, depth)
    let mut stack = vec![(0usize, 0usize, total, 0usize)];
    nodes.push(Node::Leaf { value: 0.0 });
    let mut scratch: Vec<usize> = Vec::with_capacity(total);

    while let Some((slot, start, end, depth)) = stack.pop() {
        let members = &samples.by_index[start..end];
        let count = members.len();
        let sum: f64 = members.iter().map(|&i| y[i]).sum();
        let mean = sum / count as f64;
        nodes[slot] = Node::Leaf { value: mean };

        if depth >= params.max_depth || count < params.min_samples_split.max(2) {
            continue;
        }
        let sse: f64 = members.iter().map(|&i| (y[i] - mean).powi(2)).sum();
        if !(sse > 0.0) {
            continue;
        }

        let parent_score = sum * sum / count as f64;
        let mut best: Option<Best> = None;
        for f in 0..d {
            let ord = &samples.order[f][start..end];
            let col = x.column(f);
            let mut left_sum = 0.0;
            for p in 1..count {
                left_sum += y[ord[p - 1]];
                let lo = col[ord[p - 1]];
                let hi = col[ord[p]];
                if lo == hi {
                    continue;
                }
                let right_sum = sum - left_sum;
                let nl = p as f64;
                let nr = (count - p) as f64;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent_score;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        feature: f,
                        threshold: midpoint(lo, hi),
                        gain,
                    });
                }
            }
        }
        let Some(best) = best else { continue };
        if !(best.gain > RELATIVE_GAIN_FLOOR * sse) {
            continue;
        }
        importance[best.feature] += best.gain;

        let col = x.column(best.feature);
        let goes_left = |i: usize| col[i] <= best.threshold;
        let n_left = stable_partition(&mut samples.by_index[start..end], &mut scratch, goes_left);
        for f in 0..d {
            stable_partition(&mut samples.order[f][start..end], &mut scratch, goes_left);
        }

        let left = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        let right = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[slot] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        let mid = start + n_left;
        stack.push((right, mid, end, depth + 1));
        stack.push((left, start, mid, depth + 1));
    }
    Tree { nodes }
}

/// Moves elements satisfying `pred` to the front, preserving relative order
/// on both sides. Returns the number of matching elements.
fn stable_partition(seg: &mut [usize], scratch: &mut Vec<usize>, pred: impl Fn(usize) -> bool) -> usize {
    scratch.clear();
    let mut w = 0;
    for r in 0..seg.len() {
        let v = seg[r];
        if pred(v) {
            seg[w] = v;
            w += 1;
        } else {
            scratch.push(v);
        }
    }
    seg[w..].copy_from_slice(scratch);
    w
}
