//! Stagewise squared-error gradient boosting over histogram-binned features.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Node, Tree, RELATIVE_GAIN_FLOOR};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtSpec {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub subsample_rows: f64,
    pub subsample_cols: f64,
    pub l2_lambda: f64,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for GbtSpec {
    fn default() -> Self {
        GbtSpec {
            learning_rate: 0.05,
            max_depth: 6,
            n_estimators: 800,
            subsample_rows: 0.8,
            subsample_cols: 0.8,
            l2_lambda: 1.0,
            n_bins: 256,
            seed: 0,
        }
    }
}

impl GbtSpec {
    fn validate(&self) -> Result<()> {
        if self.n_bins < 2 || self.n_bins > u16::MAX as usize + 1 {
            return Err(Error::Parameter(format!(
                "n_bins must be in [2, 65536], got {}",
                self.n_bins
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Parameter("max_depth must be positive".into()));
        }
        for (name, v) in [("subsample_rows", self.subsample_rows), ("subsample_cols", self.subsample_cols)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Parameter(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::Parameter("l2_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub base: f64,
    pub trees: Vec<Tree>,
}

/// Quantile cut points for one feature. With at most `n_bins` distinct
/// values every gap between neighbours gets a cut.
pub(crate) fn bin_thresholds(col: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut unique = sorted.clone();
    unique.dedup();
    let cut = |u: usize| super::tree::midpoint(unique[u - 1], unique[u]);
    if unique.len() <= n_bins {
        return (1..unique.len()).map(cut).collect();
    }
    let n = sorted.len();
    let mut out: Vec<f64> = Vec::with_capacity(n_bins - 1);
    for q in 1..n_bins {
        let v = sorted[q * n / n_bins];
        let u = unique.partition_point(|&w| w < v);
        if u == 0 {
            continue;
        }
        let t = cut(u);
        if out.last().is_none_or(|&last| t > last) {
            out.push(t);
        }
    }
    out
}

fn bin_of(thresholds: &[f64], x: f64) -> usize {
    thresholds.partition_point(|&t| t < x)
}

struct Binned {
    thresholds: Vec<Vec<f64>>,
    /// bins[f][i]
    bins: Vec<Vec<u16>>,
}

impl Binned {
    fn new(x: ArrayView2<f64>, n_bins: usize) -> Self {
        let (thresholds, bins) = (0..x.ncols())
            .into_par_iter()
            .map(|f| {
                let col: Vec<f64> = x.column(f).to_vec();
                let th = bin_thresholds(&col, n_bins);
                let b = col.iter().map(|&v| bin_of(&th, v) as u16).collect();
                (th, b)
            })
            .unzip();
        Binned { thresholds, bins }
    }
}

struct Candidate {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct StageCtx<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    lambda: f64,
    lr: f64,
    max_depth: usize,
}

impl StageCtx<'_> {
    fn best_for_feature(&self, f: usize, rows: &[usize], g_total: f64) -> Option<Candidate> {
        let nb = self.binned.thresholds[f].len() + 1;
        if nb < 2 {
            return None;
        }
        let bins = &self.binned.bins[f];
        let mut hg = vec![0.0; nb];
        let mut hn = vec![0usize; nb];
        for &i in rows {
            let b = bins[i] as usize;
            hg[b] += self.grad[i];
            hn[b] += 1;
        }
        let n = rows.len();
        let parent = g_total * g_total / (n as f64 + self.lambda);
        let mut gl = 0.0;
        let mut nl = 0usize;
        let mut best: Option<Candidate> = None;
        for b in 0..nb - 1 {
            gl += hg[b];
            nl += hn[b];
            if hn[b] == 0 || nl == 0 || nl == n {
                continue;
            }
            let gr = g_total - gl;
            let nr = n - nl;
            let gain = gl * gl / (nl as f64 + self.lambda) + gr * gr / (nr as f64 + self.lambda) - parent;
            if best.as_ref().is_none_or(|c| gain > c.gain) {
                best = Some(Candidate { feature: f, bin: b, gain });
            }
        }
        best
    }

    fn grow(&self, rows: Vec<usize>, cols: &[usize], importance: &mut [f64]) -> Tree {
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut stack = vec![(0usize, rows, 0usize)];
        while let Some((slot, rows, depth)) = stack.pop() {
            let n = rows.len();
            let g_total: f64 = rows.iter().map(|&i| self.grad[i]).sum();
            nodes[slot] = Node::Leaf {
                value: self.lr * g_total / (n as f64 + self.lambda),
            };
            if depth >= self.max_depth || n < 2 {
                continue;
            }
            let mean = g_total / n as f64;
            let sse: f64 = rows.iter().map(|&i| (self.grad[i] - mean).powi(2)).sum();
            if !(sse > 0.0) {
                continue;
            }
            let per_feature: Vec<Option<Candidate>> = if n * cols.len() >= 4096 {
                cols.par_iter().map(|&f| self.best_for_feature(f, &rows, g_total)).collect()
            } else {
                cols.iter().map(|&f| self.best_for_feature(f, &rows, g_total)).collect()
            };
            let mut best: Option<Candidate> = None;
            for c in per_feature.into_iter().flatten() {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
            let Some(best) = best else { continue };
            if !(best.gain > 0.0 && best.gain > RELATIVE_GAIN_FLOOR * sse) {
                continue;
            }
            importance[best.feature] += best.gain;
            let bins = &self.binned.bins[best.feature];
            let (lrows, rrows): (Vec<usize>, Vec<usize>) =
                rows.into_iter().partition(|&i| bins[i] as usize <= best.bin);
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            let right = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[slot] = Node::Split {
                feature: best.feature,
                threshold: self.binned.thresholds[best.feature][best.bin],
                left,
                right,
            };
            stack.push((right, rrows, depth + 1));
            stack.push((left, lrows, depth + 1));
        }
        Tree { nodes }
    }
}

fn subsample_count(frac: f64, n: usize) -> usize {
    ((frac * n as f64).round() as usize).clamp(1, n)
}

/// Output of a boosting fit: parameters, raw gain importances and the
/// training MSE after each stage (entry 0 is the constant model).
pub(crate) struct GbtFit {
    pub params: GbtParams,
    pub importance: Vec<f64>,
    pub stage_mse: Vec<f64>,
}

pub(crate) fn fit(x: ArrayView2<f64>, y: &[f64], spec: &GbtSpec) -> Result<GbtFit> {
    spec.validate()?;
    let (n, d) = x.dim();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mse = |pred: &[f64]| y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let mut stage_mse = vec![mse(&pred)];
    let mut importance = vec![0.0; d];
    let mut trees = Vec::with_capacity(spec.n_estimators);
    if spec.n_estimators == 0 || d == 0 {
        return Ok(GbtFit {
            params: GbtParams { base, trees },
            importance,
            stage_mse,
        });
    }

    let binned = Binned::new(x, spec.n_bins);
    let n_rows = subsample_count(spec.subsample_rows, n);
    let n_cols = subsample_count(spec.subsample_cols, d);
    let mut grad = vec![0.0; n];

    for m in 0..spec.n_estimators {
        for i in 0..n {
            grad[i] = y[i] - pred[i];
        }
        let mut r = rng::rng_from(rng::derive_seed(spec.seed, m as u64));
        let mut rows: Vec<usize> = if n_rows == n {
            (0..n).collect()
        } else {
            sample(&mut r, n, n_rows).into_vec()
        };
        rows.sort_unstable();
        let mut cols: Vec<usize> = if n_cols == d {
            (0..d).collect()
        } else {
            sample(&mut r, d, n_cols).into_vec()
        };
        cols.sort_unstable();

        let ctx = StageCtx {
            binned: &binned,
            grad: &grad,
            lambda: spec.l2_lambda,
            lr: spec.learning_rate,
            max_depth: spec.max_depth,
        };
        let tree = ctx.grow(rows, &cols, &mut importance);
        for (i, row) in x.rows().into_iter().enumerate() {
            pred[i] += tree.predict_row(row);
        }
        stage_mse.push(mse(&pred));
        trees.push(tree);
    }
    Ok(GbtFit {
        params: GbtParams { base, trees },
        importance,
        stage_mse,
    })
}

pub(crate) fn predict(params: &GbtParams, x: ArrayView2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut p = params.base;
            for t in &params.trees {
                p += t.predict_row(row);
            }
            p
        })
        .collect()
}
