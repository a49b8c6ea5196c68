use ndarray::ArrayView2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{global_orders, grow_exact, GrowParams, SortedSamples, Tree};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestSpec {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub min_samples_split: usize,
    /// Draw a bootstrap sample per tree; when false every tree sees all rows
    /// once.
    pub bootstrap: bool,
}

impl Default for ForestSpec {
    fn default() -> Self {
        ForestSpec {
            n_trees: 200,
            max_depth: 10,
            seed: 0,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: Vec<Tree>,
}

/// Fits the ensemble; returns the trees and raw (unnormalized) importances.
pub(crate) fn fit(x: ArrayView2<f64>, y: &[f64], spec: &ForestSpec) -> Result<(ForestParams, Vec<f64>)> {
    if spec.n_trees == 0 {
        return Err(Error::Parameter("forest needs at least one tree".into()));
    }
    if spec.max_depth == 0 {
        return Err(Error::Parameter("forest max_depth must be positive".into()));
    }
    let n = x.nrows();
    let d = x.ncols();
    let orders = global_orders(x);
    let grow = GrowParams {
        max_depth: spec.max_depth,
        min_samples_split: spec.min_samples_split,
    };

    let fitted: Vec<(Tree, Vec<f64>)> = (0..spec.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut counts = vec![0u32; n];
            if spec.bootstrap {
                let mut r = rng::rng_from(rng::derive_seed(spec.seed, t as u64));
                for _ in 0..n {
                    counts[r.random_range(0..n)] += 1;
                }
            } else {
                counts.iter_mut().for_each(|c| *c = 1);
            }
            let samples = SortedSamples::from_counts(&orders, &counts);
            let mut imp = vec![0.0; d];
            let tree = grow_exact(x, y, samples, grow, &mut imp);
            (tree, imp)
        })
        .collect();

    let mut importance = vec![0.0; d];
    let mut trees = Vec::with_capacity(fitted.len());
    for (tree, imp) in fitted {
        for (acc, v) in importance.iter_mut().zip(imp) {
            *acc += v;
        }
        trees.push(tree);
    }
    Ok((ForestParams { trees }, importance))
}

pub(crate) fn predict(params: &ForestParams, x: ArrayView2<f64>) -> Vec<f64> {
    let k = params.trees.len() as f64;
    x.rows()
        .into_iter()
        .map(|row| params.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k)
        .collect()
}
