//! Brute-force reference implementations and the checks that compare the
//! library against them. Shared by the oracle tests and the acceptance run.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftlab_core::diagnostics::feature_label_corr;
use driftlab_core::features::ContextMatrix;
use driftlab_core::labels::{build_contrast_label, build_external_split_traced, LabelConstruction, WeakLabelVector};
use driftlab_core::metrics::{mae, r2, spearman};
use driftlab_core::models::tree::Node;
use driftlab_core::models::{fit_forest, fit_gbt_traced, fit_ridge, FittedParams, ForestSpec, GbtSpec, RidgeSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

// ---------------------------------------------------------------- metrics

pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if ties {
                r.random_range(0..6) as f64
            } else {
                r.random_range(-10.0..10.0)
            }
        })
        .collect()
}

pub fn metrics_match_brute_force_on_random_pairs() {
    let mut r = rng(11);
    for case in 0..1000 {
        let n = r.random_range(2..=200);
        let ties = case % 2 == 0;
        let a = random_vec(&mut r, n, ties);
        let b = random_vec(&mut r, n, ties);

        let oracle = brute_pearson(&brute_ranks(&a), &brute_ranks(&b));
        match (spearman(&a, &b), oracle) {
            (Ok(v), Some(o)) => assert!((v - o).abs() <= 1e-12, "case {case}: {v} vs {o}"),
            (Err(_), None) => {}
            (got, want) => panic!("case {case}: {got:?} vs {want:?}"),
        }

        let m = a.iter().sum::<f64>() / n as f64;
        let ss_tot: f64 = a.iter().map(|y| (y - m).powi(2)).sum();
        let ss_res: f64 = a.iter().zip(&b).map(|(y, p)| (y - p).powi(2)).sum();
        if ss_tot > 0.0 {
            let o = 1.0 - ss_res / ss_tot;
            let v = r2(&a, &b).unwrap();
            assert!((v - o).abs() <= 1e-12 * o.abs().max(1.0), "case {case}: r2 {v} vs {o}");
        } else {
            assert!(r2(&a, &b).is_err());
        }

        let o = a.iter().zip(&b).map(|(y, p)| (y - p).abs()).sum::<f64>() / n as f64;
        assert!((mae(&a, &b).unwrap() - o).abs() <= 1e-12);
    }
}

pub fn feature_label_corr_matches_brute_force() {
    let mut r = rng(5);
    let n = 100;
    let ids: Arc<[String]> = (0..n).map(|i| format!("t{i:03}")).collect::<Vec<_>>().into();
    let y = random_vec(&mut r, n, false);
    let cols: Vec<(String, Vec<f64>)> = (0..3)
        .map(|j| (format!("c{j}"), random_vec(&mut r, n, j == 2)))
        .collect();
    let label = WeakLabelVector::new(ids.clone(), y.clone(), LabelConstruction::FixedContrast, None).unwrap();
    let m = ContextMatrix::new("A_D1", ids, cols.clone()).unwrap();
    for (rec, (_, col)) in feature_label_corr(&m, &label).unwrap().iter().zip(&cols) {
        let o = brute_pearson(&brute_ranks(col), &brute_ranks(&y)).unwrap();
        assert!((rec.rho.unwrap() - o).abs() <= 1e-12);
    }
}

// ---------------------------------------------------------------- ridge

pub fn dense_ridge(x: &Array2<f64>, y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let (n, d) = x.dim();
    let xm: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - xm[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - ym);
    let a = xc.transpose() * &xc + DMatrix::identity(d, d) * alpha;
    let b = xc.transpose() * yc;
    let w = a.lu().solve(&b).expect("regularized system is nonsingular");
    let intercept = ym - (0..d).map(|j| w[j] * xm[j]).sum::<f64>();
    (w.iter().copied().collect(), intercept)
}

pub fn ridge_matches_dense_normal_equations() {
    let mut r = rng(3);
    for case in 0..100 {
        let d = r.random_range(1..=20);
        let n = r.random_range(2..=500);
        let alpha = [0.1, 1.0, 10.0][case % 3];
        let x = Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0));
        let beta: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| (0..d).map(|j| beta[j] * x[[i, j]]).sum::<f64>() + r.random_range(-0.5..0.5))
            .collect();

        let model = fit_ridge(x.view(), &y, &names(d), RidgeSpec { alpha }).unwrap();
        let FittedParams::Ridge(p) = &model.params else { unreachable!() };
        let (w, b) = dense_ridge(&x, &y, alpha);
        for (got, want) in p.coefficients.iter().zip(&w) {
            assert!((got - want).abs() <= 1e-8, "case {case}: {got} vs {want}");
        }
        assert!((p.intercept - b).abs() <= 1e-8);

        let pred = model.predict(x.view(), &names(d)).unwrap();
        for (i, got) in pred.iter().enumerate() {
            let want = b + (0..d).map(|j| w[j] * x[[i, j]]).sum::<f64>();
            assert!((got - want).abs() <= 1e-8, "case {case} row {i}");
        }
    }
}

pub fn ridge_small_fixture() {
    let x = ndarray::array![[1.0], [2.0], [3.0]];
    let y = [1.0, 2.0, 2.0];
    let m = fit_ridge(x.view(), &y, &names(1), RidgeSpec { alpha: 1.0 }).unwrap();
    let FittedParams::Ridge(p) = &m.params else { unreachable!() };
    let (w, b) = dense_ridge(&x, &y, 1.0);
    assert!((p.coefficients[0] - w[0]).abs() <= 1e-10);
    assert!((p.intercept - b).abs() <= 1e-10);
}

// ---------------------------------------------------------------- trees

/// Best single split by total squared error over every midpoint of every
/// feature. Ties keep the first (lowest feature, then lowest threshold).
pub fn exhaustive_stump(x: &Array2<f64>, y: &[f64]) -> Option<(usize, f64, f64, f64)> {
    let (n, d) = x.dim();
    let sse = |idx: &[usize]| {
        let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>()
    };
    let all: Vec<usize> = (0..n).collect();
    let parent = sse(&all);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..d {
        let mut vals: Vec<f64> = x.column(f).to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = w[0] + (w[1] - w[0]) / 2.0;
            let (l, rr): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[[i, f]] <= t);
            let s = sse(&l) + sse(&rr);
            if best.is_none_or(|(_, _, bs)| s < bs) {
                best = Some((f, t, s));
            }
        }
    }
    let (f, t, s) = best?;
    if s >= parent {
        return None;
    }
    let mean_of = |pred: &dyn Fn(usize) -> bool| {
        let idx: Vec<usize> = (0..n).filter(|&i| pred(i)).collect();
        idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
    };
    Some((f, t, mean_of(&|i| x[[i, f]] <= t), mean_of(&|i| x[[i, f]] > t)))
}

pub fn depth_one_tree_matches_exhaustive_split() {
    let mut r = rng(21);
    for case in 0..100 {
        let n = r.random_range(4..=40);
        let d = r.random_range(1..=4);
        let x = Array2::from_shape_fn((n, d), |_| r.random_range(-5.0..5.0));
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let spec = ForestSpec {
            n_trees: 1,
            max_depth: 1,
            seed: case as u64,
            min_samples_split: 2,
            bootstrap: false,
        };
        let model = fit_forest(x.view(), &y, &names(d), spec).unwrap();
        let FittedParams::Forest(p) = &model.params else { unreachable!() };
        let tree = &p.trees[0];
        let (f, t, lv, rv) = exhaustive_stump(&x, &y).expect("random targets always split");
        match &tree.nodes[0] {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                assert_eq!((*feature, *threshold), (f, t), "case {case}");
                let leaf = |k: usize| match tree.nodes[k] {
                    Node::Leaf { value } => value,
                    _ => panic!("depth exceeded"),
                };
                assert!((leaf(*left) - lv).abs() <= 1e-12);
                assert!((leaf(*right) - rv).abs() <= 1e-12);
            }
            other => panic!("case {case}: expected a split, got {other:?}"),
        }
    }
}

/// Plain stagewise boosting with exact splits on residuals, λ = 0.
pub struct RefTree {
    nodes: Vec<RefNode>,
}

pub enum RefNode {
    Leaf(f64),
    Split(usize, f64, usize, usize),
}

impl RefTree {
    fn predict(&self, x: &Array2<f64>, i: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                RefNode::Leaf(v) => return v,
                RefNode::Split(f, t, l, r) => at = if x[[i, f]] <= t { l } else { r },
            }
        }
    }
}

pub fn ref_grow(x: &Array2<f64>, g: &[f64], rows: Vec<usize>, depth: usize, max_depth: usize, lr: f64, nodes: &mut Vec<RefNode>) -> usize {
    let slot = nodes.len();
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| g[i]).sum();
    nodes.push(RefNode::Leaf(lr * total / n as f64));
    if depth >= max_depth || n < 2 {
        return slot;
    }
    let mean = total / n as f64;
    let sse: f64 = rows.iter().map(|&i| (g[i] - mean).powi(2)).sum();
    if !(sse > 0.0) {
        return slot;
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x.ncols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x[[i, f]]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = w[0] + (w[1] - w[0]) / 2.0;
            let (mut gl, mut nl) = (0.0, 0.0);
            for &i in &rows {
                if x[[i, f]] <= t {
                    gl += g[i];
                    nl += 1.0;
                }
            }
            let gr = total - gl;
            let nr = n as f64 - nl;
            let gain = gl * gl / nl + gr * gr / nr - total * total / n as f64;
            if best.is_none_or(|(_, _, b)| gain > b) {
                best = Some((f, t, gain));
            }
        }
    }
    let Some((f, t, gain)) = best else { return slot };
    if !(gain > 0.0 && gain > 1e-12 * sse) {
        return slot;
    }
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, f]] <= t);
    let li = ref_grow(x, g, l, depth + 1, max_depth, lr, nodes);
    let ri = ref_grow(x, g, r, depth + 1, max_depth, lr, nodes);
    nodes[slot] = RefNode::Split(f, t, li, ri);
    slot
}

pub fn ref_boost(x: &Array2<f64>, y: &[f64], stages: usize, max_depth: usize, lr: f64) -> Vec<f64> {
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    for _ in 0..stages {
        let g: Vec<f64> = (0..n).map(|i| y[i] - pred[i]).collect();
        let mut nodes = Vec::new();
        ref_grow(x, &g, (0..n).collect(), 0, max_depth, lr, &mut nodes);
        let t = RefTree { nodes };
        for (i, p) in pred.iter_mut().enumerate() {
            *p += t.predict(x, i);
        }
    }
    pred
}

pub fn gbt_matches_stagewise_reference() {
    let mut r = rng(8);
    for case in 0..20 {
        let n = 50;
        let d = 1 + case % 3;
        let x = Array2::from_shape_fn((n, d), |_| r.random_range(-3.0..3.0));
        let y: Vec<f64> = (0..n)
            .map(|i| f64::sin(x[[i, 0]]) + 0.3 * r.random_range(-1.0..1.0))
            .collect();
        let spec = GbtSpec {
            learning_rate: 0.1,
            max_depth: 3,
            n_estimators: 10,
            subsample_rows: 1.0,
            subsample_cols: 1.0,
            l2_lambda: 0.0,
            n_bins: 256,
            seed: case as u64,
        };
        let (model, stage_mse) = fit_gbt_traced(x.view(), &y, &names(d), spec).unwrap();
        let pred = model.predict(x.view(), &names(d)).unwrap();
        let want = ref_boost(&x, &y, 10, 3, 0.1);
        for (i, (a, b)) in pred.iter().zip(&want).enumerate() {
            assert!((a - b).abs() <= 1e-8, "case {case} row {i}: {a} vs {b}");
        }
        assert_eq!(stage_mse.len(), 11);
        for w in stage_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "case {case}: mse rose {} -> {}", w[0], w[1]);
        }
    }
}

// ---------------------------------------------------------------- labels

pub fn external_split_matches_brute_force_neighbors() {
    for (seed, n, k, ties) in [(1u64, 20usize, 3usize, false), (2, 200, 25, true), (3, 1000, 25, true)] {
        let mut r = rng(seed);
        let ids: Arc<[String]> = (0..n).map(|i| format!("t{i:05}")).collect::<Vec<_>>().into();
        let reference: Vec<f64> = (0..n)
            .map(|_| {
                if ties {
                    (r.random_range(0..40) as f64 * 0.25).ln_1p()
                } else {
                    r.random_range(0.0..8.0)
                }
            })
            .collect();
        let late: Vec<f64> = (0..n).map(|_| r.random_range(0.0..8.0)).collect();
        let contrast = build_contrast_label(ids, &late, &reference, None).unwrap();
        let trace = build_external_split_traced(&reference, &contrast, seed, k).unwrap();

        let y = contrast.values();
        for i in 0..n {
            let mut cand: Vec<usize> = (0..n).filter(|&j| trace.in_half_a[j] != trace.in_half_a[i]).collect();
            cand.sort_by(|&a, &b| {
                (reference[a] - reference[i])
                    .abs()
                    .total_cmp(&(reference[b] - reference[i]).abs())
                    .then(a.cmp(&b))
            });
            cand.truncate(k);
            assert!(!trace.neighbors[i].contains(&i), "transcript {i} is its own neighbour");
            assert_eq!(trace.neighbors[i], cand, "n={n} transcript {i}");
            let want = cand.iter().map(|&j| y[j]).sum::<f64>() / k as f64;
            assert_eq!(trace.label.values()[i], want);
        }
        assert_eq!(trace.in_half_a.iter().filter(|&&a| a).count(), n / 2);
    }
}
