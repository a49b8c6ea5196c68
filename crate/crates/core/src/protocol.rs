//! Evaluation harness: in-domain, cross-domain and temporal settings over a
//! model × feature-set grid, all sharing one fixed label vector.
//!
//! A [`Dataset`] pairs an aligned registry with the label built once for the
//! run. [`run_setting`] trains in one context and evaluates in another (or on
//! a held-out split of the same context); [`run_all`] executes the grid, the
//! per-pair transfer sweep used for the shift-score analysis and the
//! diagnostics, and returns everything in canonical order.

use std::collections::BTreeSet;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    self, feature_label_corr, importance_rank_stability, shift_score, FeatureLabelCorr, ImportanceStability,
    ShiftScore,
};
use crate::error::{Error, Result};
use crate::features::{
    apply_standardizer, assemble, augment_context_onehot, fit_standardizer, ContextMatrix, FeatureSet, Standardizer,
    LOGTPM,
};
use crate::ingest::ContextRegistry;
use crate::labels::{build_contrast_label, build_external_split_label, WeakLabelVector, DEFAULT_NEIGHBORS};
use crate::metrics::{undefined_as_none, MetricTriple};
use crate::models::{self, Family, ModelSpec};
use crate::rng;

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SettingName {
    InDomain,
    CrossDomain,
    Temporal,
}

impl SettingName {
    pub fn as_str(self) -> &'static str {
        match self {
            SettingName::InDomain => "IN_DOMAIN",
            SettingName::CrossDomain => "CROSS_DOMAIN",
            SettingName::Temporal => "TEMPORAL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub name: SettingName,
    pub train_context: String,
    pub test_context: String,
    /// Training fraction; used by `IN_DOMAIN` only.
    pub split_fraction: f64,
    pub split_seed: u64,
}

impl Setting {
    pub fn in_domain(ctx: &str, split_seed: u64) -> Self {
        Setting {
            name: SettingName::InDomain,
            train_context: ctx.to_string(),
            test_context: ctx.to_string(),
            split_fraction: DEFAULT_SPLIT_FRACTION,
            split_seed,
        }
    }

    pub fn transfer(name: SettingName, train: &str, test: &str) -> Self {
        Setting {
            name,
            train_context: train.to_string(),
            test_context: test.to_string(),
            split_fraction: DEFAULT_SPLIT_FRACTION,
            split_seed: 0,
        }
    }

    /// In-domain on `HEK293FT_D2`, cross-domain `K562_D2 → HEK293FT_D2`,
    /// temporal `HEK293FT_D2 → HEK293FT_D7`.
    pub fn standard_trio(split_seed: u64) -> Vec<Setting> {
        vec![
            Setting::in_domain("HEK293FT_D2", split_seed),
            Setting::transfer(SettingName::CrossDomain, "K562_D2", "HEK293FT_D2"),
            Setting::transfer(SettingName::Temporal, "HEK293FT_D2", "HEK293FT_D7"),
        ]
    }

    fn validate(&self, registry: &ContextRegistry) -> Result<()> {
        for ctx in [&self.train_context, &self.test_context] {
            if !registry.contains(ctx) {
                return Err(Error::Setting(format!(
                    "{}: context `{ctx}` is not in the registry",
                    self.name.as_str()
                )));
            }
        }
        match self.name {
            SettingName::InDomain => {
                if self.train_context != self.test_context {
                    return Err(Error::Setting("IN_DOMAIN trains and tests on one context".into()));
                }
                if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
                    return Err(Error::Setting(format!(
                        "split fraction {} outside (0, 1)",
                        self.split_fraction
                    )));
                }
                let (train, test) = split_sizes(registry.n_transcripts(), self.split_fraction);
                if train < 2 || test < 2 {
                    return Err(Error::Setting(format!(
                        "split of {} rows leaves {train} train / {test} test rows",
                        registry.n_transcripts()
                    )));
                }
            }
            SettingName::CrossDomain | SettingName::Temporal => {
                if self.train_context == self.test_context {
                    return Err(Error::Setting(format!(
                        "{} needs two different contexts",
                        self.name.as_str()
                    )));
                }
                if registry.n_transcripts() < 2 {
                    return Err(Error::Setting("fewer than 2 test rows".into()));
                }
            }
        }
        Ok(())
    }
}

fn split_sizes(n: usize, fraction: f64) -> (usize, usize) {
    let train = ((fraction * n as f64).round() as usize).min(n);
    (train, n - train)
}

/// Seeded shuffle of `0..n`: first `fraction` of the permutation trains, the
/// rest tests. Both index lists are returned sorted.
pub fn in_domain_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_from(rng::derive_seed_str(seed, "in-domain-split")));
    let (n_train, _) = split_sizes(n, fraction);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mitigation {
    None,
    ContextOnehot,
    TrainStandardize,
}

impl Mitigation {
    pub fn as_str(self) -> &'static str {
        match self {
            Mitigation::None => "none",
            Mitigation::ContextOnehot => "onehot",
            Mitigation::TrainStandardize => "standardize",
        }
    }
}

impl FromStr for Mitigation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Mitigation::None),
            "onehot" | "context_onehot" => Ok(Mitigation::ContextOnehot),
            "standardize" | "train_standardize" => Ok(Mitigation::TrainStandardize),
            other => Err(Error::Config(format!("unknown mitigation `{other}`"))),
        }
    }
}

/// Metric used as "performance" when correlating with shift scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerfMetric {
    Spearman,
    R2,
}

impl PerfMetric {
    pub fn pick(self, m: &MetricTriple) -> Option<f64> {
        match self {
            PerfMetric::Spearman => m.spearman,
            PerfMetric::R2 => m.r2,
        }
    }
}

/// How the run's single label vector is built.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSpec {
    FixedContrast {
        late: String,
        early: String,
    },
    ExternalSplit {
        late: String,
        early: String,
        split_seed: u64,
        k: usize,
    },
    Provided(WeakLabelVector),
}

impl LabelSpec {
    pub fn standard_contrast() -> Self {
        LabelSpec::FixedContrast {
            late: "HEK293FT_D7".into(),
            early: "HEK293FT_D2".into(),
        }
    }

    pub fn standard_external(split_seed: u64) -> Self {
        LabelSpec::ExternalSplit {
            late: "HEK293FT_D7".into(),
            early: "HEK293FT_D2".into(),
            split_seed,
            k: DEFAULT_NEIGHBORS,
        }
    }
}

fn log_column(registry: &ContextRegistry, ctx: &str) -> Result<Vec<f64>> {
    if !registry.contains(ctx) {
        return Err(Error::Setting(format!("label reference context `{ctx}` is not registered")));
    }
    registry
        .tpm(ctx)?
        .into_iter()
        .map(crate::features::log_tpm)
        .collect()
}

/// Builds the label vector for a registry.
pub fn build_label(registry: &ContextRegistry, spec: &LabelSpec) -> Result<WeakLabelVector> {
    let ids: Arc<[String]> = registry.shared_transcripts().to_vec().into();
    match spec {
        LabelSpec::FixedContrast { late, early } => {
            let l = log_column(registry, late)?;
            let e = log_column(registry, early)?;
            build_contrast_label(ids, &l, &e, Some((late.clone(), early.clone())))
        }
        LabelSpec::ExternalSplit {
            late,
            early,
            split_seed,
            k,
        } => {
            let l = log_column(registry, late)?;
            let e = log_column(registry, early)?;
            let contrast = build_contrast_label(ids, &l, &e, Some((late.clone(), early.clone())))?;
            build_external_split_label(&e, &contrast, *split_seed, *k)
        }
        LabelSpec::Provided(label) => label.align_to(&ids),
    }
}

/// Aligned registry plus the one label every setting consumes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub registry: ContextRegistry,
    pub label: Arc<WeakLabelVector>,
    transcript_ids: Arc<[String]>,
}

impl Dataset {
    pub fn new(registry: ContextRegistry, label: WeakLabelVector) -> Result<Self> {
        let transcript_ids: Arc<[String]> = registry.shared_transcripts().to_vec().into();
        let label = label.align_to(&transcript_ids)?;
        Ok(Dataset {
            registry,
            label: Arc::new(label),
            transcript_ids,
        })
    }

    pub fn build(registry: ContextRegistry, spec: &LabelSpec) -> Result<Self> {
        let label = build_label(&registry, spec)?;
        Dataset::new(registry, label)
    }

    pub fn features(&self, ctx: &str, set: FeatureSet) -> Result<ContextMatrix> {
        let tpm = self.registry.tpm(ctx)?;
        assemble(ctx, Arc::clone(&self.transcript_ids), &tpm, set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub settings: Vec<Setting>,
    pub model_grid: Vec<ModelSpec>,
    pub feature_grid: Vec<FeatureSet>,
    pub mitigation: Mitigation,
    pub master_seed: u64,
    /// Run boosting on every feature set rather than logTPM only.
    pub gbt_all_features: bool,
    pub shift_metric: PerfMetric,
}

impl RunConfig {
    /// Standard trio, ridge + forest, all three feature sets.
    pub fn standard(master_seed: u64) -> Self {
        RunConfig {
            settings: Setting::standard_trio(rng::derive_seed_str(master_seed, "split")),
            model_grid: vec![
                ModelSpec::default_for(Family::Ridge, master_seed),
                ModelSpec::default_for(Family::Forest, rng::derive_seed_str(master_seed, "forest")),
            ],
            feature_grid: FeatureSet::ALL.to_vec(),
            mitigation: Mitigation::None,
            master_seed,
            gbt_all_features: false,
            shift_metric: PerfMetric::Spearman,
        }
    }

    /// Grid cells in canonical (setting, family, feature set) order.
    pub fn cells(&self) -> Vec<(&Setting, &ModelSpec, FeatureSet)> {
        let mut specs: Vec<&ModelSpec> = self.model_grid.iter().collect();
        specs.sort_by_key(|s| s.family());
        let mut features = self.feature_grid.clone();
        features.sort();
        features.dedup();
        let mut out = Vec::new();
        for s in &self.settings {
            for spec in &specs {
                for &fs in &features {
                    if spec.family() == Family::Gbt && !self.gbt_all_features && fs != FeatureSet::LogtpmOnly {
                        continue;
                    }
                    out.push((s, *spec, fs));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub setting: SettingName,
    pub train_context: String,
    pub test_context: String,
    pub family: Family,
    pub feature_set: FeatureSet,
    pub mitigation: Mitigation,
    pub metrics: Option<MetricTriple>,
    pub feature_names: Vec<String>,
    pub importance: Vec<f64>,
    pub degenerate_importance: bool,
    /// Training-row statistics when `TRAIN_STANDARDIZE` is active.
    pub standardizer: Option<Standardizer>,
    pub label_fingerprint: String,
    /// `code: message` when the cell failed.
    pub error: Option<String>,
}

/// Hooks around model fitting; used to instrument leakage checks.
pub trait FitObserver: Sync {
    fn before_fit(&self, _setting: &Setting, _test: &ContextMatrix) {}
    fn after_fit(&self, _setting: &Setting, _test: &ContextMatrix) {}
}

pub struct NoopObserver;

impl FitObserver for NoopObserver {}

/// Result of one train/evaluate pass, with predictions kept for inspection.
#[derive(Debug, Clone)]
pub struct SettingOutcome {
    pub record: EvalRecord,
    pub predictions: Vec<f64>,
    pub model: models::TrainedModel,
}

/// Trains on the setting's training rows and evaluates on its test rows.
pub fn run_setting(
    data: &Dataset,
    cfg: &RunConfig,
    setting: &Setting,
    spec: &ModelSpec,
    features: FeatureSet,
    observer: &dyn FitObserver,
) -> Result<SettingOutcome> {
    setting.validate(&data.registry)?;
    let y = data.label.values();
    let (train, test, y_train, y_test) = match setting.name {
        SettingName::InDomain => {
            let full = data.features(&setting.train_context, features)?;
            let (tr, te) = in_domain_split(full.n_rows(), setting.split_fraction, setting.split_seed);
            let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<f64>>();
            let (yt, ye) = (pick(&tr), pick(&te));
            (full.select_rows(&tr), full.select_rows(&te), yt, ye)
        }
        SettingName::CrossDomain | SettingName::Temporal => (
            data.features(&setting.train_context, features)?,
            data.features(&setting.test_context, features)?,
            y.to_vec(),
            y.to_vec(),
        ),
    };

    observer.before_fit(setting, &test);

    let vocabulary = data.registry.context_ids();
    let mut standardizer = None;
    let train = match cfg.mitigation {
        Mitigation::None => train,
        Mitigation::ContextOnehot => augment_context_onehot(&train, &vocabulary)?,
        Mitigation::TrainStandardize => {
            let s = fit_standardizer(&train)?;
            let t = apply_standardizer(&s, &train)?;
            standardizer = Some(s);
            t
        }
    };
    let names = train.column_names().to_vec();
    let model = models::fit(spec, train.design().view(), &y_train, &names)?;

    observer.after_fit(setting, &test);

    let test = match cfg.mitigation {
        Mitigation::None => test,
        Mitigation::ContextOnehot => augment_context_onehot(&test, &vocabulary)?,
        Mitigation::TrainStandardize => apply_standardizer(standardizer.as_ref().expect("fitted above"), &test)?,
    };
    let predictions = model.predict(test.design().view(), test.column_names())?;
    let metrics = MetricTriple::compute(&y_test, &predictions)?;

    let record = EvalRecord {
        setting: setting.name,
        train_context: setting.train_context.clone(),
        test_context: setting.test_context.clone(),
        family: spec.family(),
        feature_set: features,
        mitigation: cfg.mitigation,
        metrics: Some(metrics),
        feature_names: names,
        importance: model.importance.clone(),
        degenerate_importance: model.degenerate_importance,
        standardizer,
        label_fingerprint: data.label.fingerprint(),
        error: None,
    };
    Ok(SettingOutcome {
        record,
        predictions,
        model,
    })
}

/// Transfer result for one ordered context pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPerformance {
    pub family: Family,
    pub train_context: String,
    pub test_context: String,
    pub shift_score: Option<f64>,
    pub performance: Option<f64>,
}

/// Spearman correlation between shift score and transfer performance over
/// all ordered pairs, per model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCorrelation {
    pub family: Family,
    pub metric: PerfMetric,
    pub rho: Option<f64>,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub pairs: Vec<PairPerformance>,
    pub correlations: Vec<ShiftCorrelation>,
    pub importance_stability: Vec<ImportanceStability>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResults {
    pub eval_records: Vec<EvalRecord>,
    pub feature_label_corr: Vec<FeatureLabelCorr>,
    pub stability_diffs: Vec<ShiftScore>,
    pub shift: ShiftReport,
    pub partial: bool,
}

fn failed_record(data: &Dataset, cfg: &RunConfig, s: &Setting, spec: &ModelSpec, fs: FeatureSet, e: &Error) -> EvalRecord {
    EvalRecord {
        setting: s.name,
        train_context: s.train_context.clone(),
        test_context: s.test_context.clone(),
        family: spec.family(),
        feature_set: fs,
        mitigation: cfg.mitigation,
        metrics: None,
        feature_names: Vec::new(),
        importance: Vec::new(),
        degenerate_importance: false,
        standardizer: None,
        label_fingerprint: data.label.fingerprint(),
        error: Some(format!("{}: {e}", e.code())),
    }
}

/// Executes the full grid plus diagnostics. Setting-level problems (unknown
/// contexts, too few rows) abort with [`Error::Setting`]; failures inside a
/// single cell are recorded on that cell and flag the run as partial.
pub fn run_all(data: &Dataset, cfg: &RunConfig) -> Result<RunResults> {
    if cfg.settings.is_empty() || cfg.model_grid.is_empty() || cfg.feature_grid.is_empty() {
        return Err(Error::Config("run needs settings, models and feature sets".into()));
    }
    for s in &cfg.settings {
        s.validate(&data.registry)?;
    }

    let cells = cfg.cells();
    let eval_records: Vec<EvalRecord> = cells
        .par_iter()
        .map(|(s, spec, fs)| match run_setting(data, cfg, s, spec, *fs, &NoopObserver) {
            Ok(o) => o.record,
            Err(e) => failed_record(data, cfg, s, spec, *fs, &e),
        })
        .collect();
    let mut partial = eval_records.iter().any(|r| r.error.is_some());

    // feature-label correlations for every context, both representations
    let contexts = data.registry.context_ids();
    let per_ctx: Vec<Vec<FeatureLabelCorr>> = contexts
        .par_iter()
        .map(|ctx| feature_label_corr(&data.features(ctx, FeatureSet::Both)?, &data.label))
        .collect::<Result<_>>()?;
    let feature_label_corr: Vec<FeatureLabelCorr> = per_ctx.into_iter().flatten().collect();

    let mut stability_pairs: Vec<(String, String)> = Vec::new();
    for s in &cfg.settings {
        let p = (s.train_context.clone(), s.test_context.clone());
        if p.0 != p.1 && !stability_pairs.contains(&p) {
            stability_pairs.push(p);
        }
    }
    let stability_diffs = diagnostics::stability_diffs(&feature_label_corr, &stability_pairs);

    let shift = shift_sweep(data, cfg, &contexts, &feature_label_corr, &stability_pairs)?;
    if shift.pairs.iter().any(|p| p.performance.is_none() && p.shift_score.is_some()) {
        partial = true;
    }

    Ok(RunResults {
        eval_records,
        feature_label_corr,
        stability_diffs,
        shift,
        partial,
    })
}

/// Trains each family on every context (logTPM features) and evaluates on
/// every other context.
fn shift_sweep(
    data: &Dataset,
    cfg: &RunConfig,
    contexts: &[String],
    corrs: &[FeatureLabelCorr],
    stability_pairs: &[(String, String)],
) -> Result<ShiftReport> {
    let mut specs: Vec<&ModelSpec> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut sorted: Vec<&ModelSpec> = cfg.model_grid.iter().collect();
    sorted.sort_by_key(|s| s.family());
    for s in sorted {
        if seen.insert(s.family()) {
            specs.push(s);
        }
    }

    let logtpm_corr = |ctx: &str| {
        corrs
            .iter()
            .find(|c| c.context_id == ctx && c.feature_name == LOGTPM)
    };

    let mut jobs = Vec::new();
    for spec in &specs {
        for a in contexts {
            for b in contexts {
                if a != b {
                    jobs.push((*spec, a.clone(), b.clone()));
                }
            }
        }
    }
    let results: Vec<(PairPerformance, Option<models::TrainedModel>)> = jobs
        .par_iter()
        .map(|(spec, a, b)| {
            let setting = Setting::transfer(SettingName::CrossDomain, a, b);
            let shift = match (logtpm_corr(a), logtpm_corr(b)) {
                (Some(ca), Some(cb)) => undefined_as_none(shift_score(ca, cb).map(|s| s.value)).ok().flatten(),
                _ => None,
            };
            let outcome = run_setting(data, cfg, &setting, spec, FeatureSet::LogtpmOnly, &NoopObserver).ok();
            let performance = outcome
                .as_ref()
                .and_then(|o| o.record.metrics.as_ref().and_then(|m| cfg.shift_metric.pick(m)));
            (
                PairPerformance {
                    family: spec.family(),
                    train_context: a.clone(),
                    test_context: b.clone(),
                    shift_score: shift,
                    performance,
                },
                outcome.map(|o| o.model),
            )
        })
        .collect();

    let mut correlations = Vec::new();
    for spec in &specs {
        let fam = spec.family();
        let usable: Vec<&PairPerformance> = results
            .iter()
            .map(|(p, _)| p)
            .filter(|p| p.family == fam && p.shift_score.is_some() && p.performance.is_some())
            .collect();
        let scores: Vec<ShiftScore> = usable
            .iter()
            .map(|p| ShiftScore {
                feature_name: LOGTPM.to_string(),
                context_pair: (p.train_context.clone(), p.test_context.clone()),
                value: p.shift_score.unwrap(),
            })
            .collect();
        let perfs: Vec<f64> = usable.iter().map(|p| p.performance.unwrap()).collect();
        let rho = diagnostics::shift_vs_performance(&scores, &perfs).ok();
        correlations.push(ShiftCorrelation {
            family: fam,
            metric: cfg.shift_metric,
            rho,
            n_pairs: usable.len(),
        });
    }

    // importance stability between models trained in each context of a pair
    let mut importance_stability = Vec::new();
    for spec in &specs {
        let fam = spec.family();
        let model_for = |ctx: &str| {
            results
                .iter()
                .find(|(p, m)| p.family == fam && p.train_context == ctx && m.is_some())
                .and_then(|(_, m)| m.as_ref())
        };
        for (a, b) in stability_pairs {
            if let (Some(ma), Some(mb)) = (model_for(a), model_for(b)) {
                importance_stability.push(importance_rank_stability(
                    fam,
                    (a.clone(), b.clone()),
                    &ma.feature_names,
                    &ma.importance,
                    &mb.feature_names,
                    &mb.importance,
                )?);
            }
        }
    }

    Ok(ShiftReport {
        pairs: results.into_iter().map(|(p, _)| p).collect(),
        correlations,
        importance_stability,
    })
}
