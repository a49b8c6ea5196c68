//! Invariance and determinism properties of models, mitigations and the run
//! protocol.

use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftlab_core::features::{assemble, ContextMatrix, FeatureSet, LOGTPM, RANK_PCT};
use driftlab_core::models::{fit_ridge, FittedParams, RidgeSpec};
use driftlab_core::protocol::{run_all, Mitigation, RunConfig};

#[path = "support/invariants.rs"]
mod invariants;

use invariants::small_world;

fn names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

fn ridge_coefs(x: &Array2<f64>, y: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let d = x.ncols();
    let m = fit_ridge(x.view(), y, &names(d), RidgeSpec { alpha }).unwrap();
    let pred = m.predict(x.view(), &names(d)).unwrap();
    let FittedParams::Ridge(p) = m.params else { unreachable!() };
    (p.coefficients, pred)
}

#[test]
fn ridge_ignores_constant_columns() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let n = 200;
    let x = Array2::from_shape_fn((n, 2), |_| r.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..n).map(|i| 2.0 * x[[i, 0]] - x[[i, 1]] + r.random_range(-0.1..0.1)).collect();
    let mut xc = Array2::zeros((n, 3));
    for i in 0..n {
        xc[[i, 0]] = x[[i, 0]];
        xc[[i, 1]] = 7.5;
        xc[[i, 2]] = x[[i, 1]];
    }
    let (w, p) = ridge_coefs(&x, &y, 1.0);
    let (wc, pc) = ridge_coefs(&xc, &y, 1.0);
    assert!(wc[1].abs() <= 1e-12);
    assert!((w[0] - wc[0]).abs() <= 1e-10 && (w[1] - wc[2]).abs() <= 1e-10);
    for (a, b) in p.iter().zip(&pc) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn ridge_shrinks_monotonically_in_alpha() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let n = 150;
    let x = Array2::from_shape_fn((n, 4), |_| r.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..n).map(|i| x.row(i).sum() + r.random_range(-0.2..0.2)).collect();
    let norms: Vec<f64> = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0]
        .iter()
        .map(|&a| ridge_coefs(&x, &y, a).0.iter().map(|w| w * w).sum::<f64>())
        .collect();
    for w in norms.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{norms:?}");
    }
}

#[test]
fn onehot_is_a_no_op_for_single_context_training() {
    invariants::onehot_is_a_no_op(3);
}

#[test]
fn standardized_ridge_is_affine_invariant() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let n = 300;
    let ids: Arc<[String]> = (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().into();
    let a: Vec<f64> = (0..n).map(|_| r.random_range(0.0..5.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|i| a[i] - 2.0 * b[i] + r.random_range(-0.3..0.3)).collect();
    let (sa, sb, ta, tb) = (3.5, -0.25, 100.0, -4.0);

    let fit_predict = |ca: Vec<f64>, cb: Vec<f64>| {
        let m = ContextMatrix::new("A_D1", ids.clone(), vec![("a".into(), ca), ("b".into(), cb)]).unwrap();
        let s = driftlab_core::features::fit_standardizer(&m).unwrap();
        let z = driftlab_core::features::apply_standardizer(&s, &m).unwrap();
        let model = fit_ridge(z.design().view(), &y, z.column_names(), RidgeSpec { alpha: 1.0 }).unwrap();
        model.predict(z.design().view(), z.column_names()).unwrap()
    };
    let p0 = fit_predict(a.clone(), b.clone());
    let p1 = fit_predict(
        a.iter().map(|v| sa * v + ta).collect(),
        b.iter().map(|v| sb * v + tb).collect(),
    );
    for (x, y) in p0.iter().zip(&p1) {
        assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
    }
}

#[test]
fn run_all_is_deterministic_and_thread_invariant() {
    let data = small_world(5);
    let cfg = RunConfig::standard(5);
    let once = run_all(&data, &cfg).unwrap();
    let twice = run_all(&data, &cfg).unwrap();
    assert_eq!(once.eval_records, twice.eval_records);
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let other = pool.install(|| run_all(&data, &cfg)).unwrap();
        assert_eq!(once.eval_records, other.eval_records, "{threads} threads");
        assert_eq!(once.feature_label_corr, other.feature_label_corr);
        assert_eq!(once.shift.pairs, other.shift.pairs);
        assert_eq!(once.shift.correlations, other.shift.correlations);
    }
}

#[test]
fn every_cell_sees_the_same_label() {
    let data = small_world(6);
    let fp = data.label.fingerprint();
    for mitigation in [Mitigation::None, Mitigation::ContextOnehot, Mitigation::TrainStandardize] {
        let mut cfg = RunConfig::standard(6);
        cfg.mitigation = mitigation;
        let res = run_all(&data, &cfg).unwrap();
        assert_eq!(res.eval_records.len(), 18);
        assert!(res.eval_records.iter().all(|r| r.label_fingerprint == fp));
    }
}

#[test]
fn temporal_fit_never_reads_the_test_context() {
    assert_eq!(invariants::temporal_fit_reads(7), 0);
}

#[test]
fn logtpm_and_rank_share_label_spearman() {
    invariants::representations_share_spearman(200, 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Strictly increasing transforms of TPM keep rank features fixed and
    /// keep the logTPM ordering.
    #[test]
    fn rank_features_are_monotone_invariant(
        tpm in prop::collection::vec(0.0f64..1e4, 2..60),
        scale in 0.01f64..100.0,
    ) {
        let n = tpm.len();
        let ids: Arc<[String]> = (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().into();
        let moved: Vec<f64> = tpm.iter().map(|t| scale * t.powf(1.5)).collect();
        let a = assemble("A_D1", ids.clone(), &tpm, FeatureSet::Both).unwrap();
        let b = assemble("A_D1", ids, &moved, FeatureSet::Both).unwrap();
        let (ra, rb) = (a.column(RANK_PCT).unwrap(), b.column(RANK_PCT).unwrap());
        for i in 0..n {
            prop_assert!((ra[i] - rb[i]).abs() <= 1e-12);
        }
        let (la, lb) = (a.column(LOGTPM).unwrap(), b.column(LOGTPM).unwrap());
        for i in 0..n {
            for j in 0..n {
                if tpm[i] < tpm[j] && moved[i] < moved[j] {
                    prop_assert!(la[i] <= la[j] && lb[i] <= lb[j]);
                }
            }
        }
    }
}
