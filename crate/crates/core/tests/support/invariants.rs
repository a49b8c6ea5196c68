//! Protocol invariants shared by the property tests and the acceptance run.
#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftlab_core::diagnostics::feature_label_corr;
use driftlab_core::features::{assemble, ContextMatrix, FeatureSet, LOGTPM, RANK_PCT};
use driftlab_core::labels::{LabelConstruction, WeakLabelVector};
use driftlab_core::models::{ModelSpec, RidgeSpec};
use driftlab_core::protocol::{
    run_setting, Dataset, FitObserver, Mitigation, NoopObserver, RunConfig, Setting, SettingName,
};
use driftlab_core::synthetic::{paper_world, PaperWorldConfig};

pub fn small_world(seed: u64) -> Dataset {
    let mut cfg = PaperWorldConfig::standard(seed);
    cfg.n_transcripts = 600;
    let w = paper_world(&cfg).unwrap();
    Dataset::new(w.registry, w.label).unwrap()
}

/// Ridge with context one-hot columns against plain ridge, for every setting
/// and feature set. Predictions agree to 1e-9 and metric rows match.
pub fn onehot_is_a_no_op(seed: u64) {
    let data = small_world(seed);
    let ridge = ModelSpec::Ridge(RidgeSpec::default());
    let plain = RunConfig::standard(seed);
    let mut onehot = plain.clone();
    onehot.mitigation = Mitigation::ContextOnehot;
    for s in &plain.settings {
        for fs in FeatureSet::ALL {
            let a = run_setting(&data, &plain, s, &ridge, fs, &NoopObserver).unwrap();
            let b = run_setting(&data, &onehot, s, &ridge, fs, &NoopObserver).unwrap();
            for (x, y) in a.predictions.iter().zip(&b.predictions) {
                assert!((x - y).abs() <= 1e-9, "{:?} {fs}: {x} vs {y}", s.name);
            }
            let (ma, mb) = (a.record.metrics.unwrap(), b.record.metrics.unwrap());
            assert_eq!(ma.n, mb.n);
            let close = |p: Option<f64>, q: Option<f64>| match (p, q) {
                (Some(p), Some(q)) => (p - q).abs() <= 1e-9,
                (None, None) => true,
                _ => false,
            };
            assert!(close(ma.r2, mb.r2) && close(ma.spearman, mb.spearman) && close(Some(ma.mae), Some(mb.mae)));
        }
    }
}

/// Records the test matrix's read count around each fit.
#[derive(Default)]
pub struct LeakageProbe {
    before: AtomicU64,
    pub during: AtomicU64,
    pub calls: AtomicU64,
}

impl FitObserver for LeakageProbe {
    fn before_fit(&self, _s: &Setting, test: &ContextMatrix) {
        self.before.store(test.reads(), Ordering::SeqCst);
    }
    fn after_fit(&self, _s: &Setting, test: &ContextMatrix) {
        let delta = test.reads() - self.before.load(Ordering::SeqCst);
        self.during.fetch_add(delta, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
    }
}

/// Test-context reads observed while fitting TEMPORAL cells, summed over
/// every mitigation, model family and feature set.
pub fn temporal_fit_reads(seed: u64) -> u64 {
    let data = small_world(seed);
    let mut total = 0;
    for mitigation in [Mitigation::None, Mitigation::ContextOnehot, Mitigation::TrainStandardize] {
        let mut cfg = RunConfig::standard(seed);
        cfg.mitigation = mitigation;
        let temporal = cfg.settings.iter().find(|s| s.name == SettingName::Temporal).unwrap().clone();
        for spec in cfg.model_grid.clone() {
            for fs in FeatureSet::ALL {
                let probe = LeakageProbe::default();
                run_setting(&data, &cfg, &temporal, &spec, fs, &probe).unwrap();
                assert_eq!(probe.calls.load(Ordering::SeqCst), 1);
                total += probe.during.load(Ordering::SeqCst);
            }
        }
    }
    total
}

/// On random contexts with tied and untied TPM, the logTPM and rank features
/// have the same Spearman correlation with the label to 1e-12.
pub fn representations_share_spearman(cases: usize, seed: u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = r.random_range(3..=300);
        let ids: Arc<[String]> = (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().into();
        let tpm: Vec<f64> = (0..n)
            .map(|_| {
                if case % 2 == 0 {
                    r.random_range(0..20) as f64 * 0.5
                } else {
                    r.random_range(0.0..1e4)
                }
            })
            .collect();
        let y: Vec<f64> = tpm.iter().map(|t| -t.ln_1p() + r.random_range(-2.0..2.0)).collect();
        let label = WeakLabelVector::new(ids.clone(), y, LabelConstruction::FixedContrast, None).unwrap();
        let m = assemble("A_D1", ids, &tpm, FeatureSet::Both).unwrap();
        let c = feature_label_corr(&m, &label).unwrap();
        let get = |name: &str| c.iter().find(|x| x.feature_name == name).unwrap().rho;
        match (get(LOGTPM), get(RANK_PCT)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}"),
            (None, None) => {}
            other => panic!("case {case}: {other:?}"),
        }
    }
}
