//! Generative model with a drift dial, plus the checks built on it.
//!
//! Features are standard normal; the latent target is linear in them with
//! coefficients `β(δ) = (1 − δ)·β_S + δ·β_alt`; the weak label is a strictly
//! increasing distortion of the latent target plus bounded noise. Features,
//! latent noise and label noise come from separate generator streams, so
//! changing `δ` at a fixed seed changes only the labels.
//!
//! Three presets drive the CLI: ranking consistency as the training sample
//! grows, transfer decay as the mechanism drifts, and a three-context world
//! shaped like the transcript data on which the full protocol is run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diagnostics::importance_rank_stability;
use crate::error::{Error, Result};
use crate::features::{ContextMatrix, FeatureSet};
use crate::ingest::{ContextRegistry, SampleMeta};
use crate::io_util::write_atomic;
use crate::labels::{LabelConstruction, WeakLabelVector};
use crate::metrics::{spearman, undefined_as_none};
use crate::models::{self, Family, ModelSpec, RidgeSpec};
use crate::protocol::{self, Dataset, RunConfig, SettingName};
use crate::report::{Provenance, RunReport};
use crate::rng;

/// `g(t) = t + a·t³`, strictly increasing for `a ≥ 0`.
pub fn g(t: f64, a: f64) -> f64 {
    t + a * t * t * t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    /// Indices carrying the source mechanism.
    pub invariant_set: Vec<usize>,
    /// Source coefficients, one per entry of `invariant_set`.
    pub beta_s: Vec<f64>,
    /// Alternative coefficients over all `d` features.
    pub beta_alt: Vec<f64>,
    pub eta_sd: f64,
    pub sigma: f64,
    pub g_shape: f64,
    pub delta: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Five features, all invariant, tie-free source coefficients.
    pub fn five_feature(seed: u64) -> Self {
        SyntheticConfig {
            n: 2000,
            d: 5,
            invariant_set: vec![0, 1, 2, 3, 4],
            beta_s: vec![2.0, -1.5, 1.0, -0.6, 0.3],
            beta_alt: vec![-0.3, 0.6, -1.0, 1.5, -2.0],
            eta_sd: 0.5,
            sigma: 0.0,
            g_shape: 0.0,
            delta: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.invariant_set.is_empty() && self.beta_s.iter().any(|&b| b != 0.0) {
            return bad("empty invariant set with nonzero source coefficients".into());
        }
        if self.invariant_set.len() > self.d || self.invariant_set.len() != self.beta_s.len() {
            return bad("invariant set and beta_s must have equal length ≤ d".into());
        }
        let mut seen = vec![false; self.d];
        for &j in &self.invariant_set {
            if j >= self.d || seen[j] {
                return bad(format!("invariant index {j} out of range or repeated"));
            }
            seen[j] = true;
        }
        if self.beta_alt.len() != self.d {
            return bad(format!("beta_alt has {} entries for d = {}", self.beta_alt.len(), self.d));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta {} outside [0, 1]", self.delta));
        }
        for (name, v) in [("eta_sd", self.eta_sd), ("sigma", self.sigma), ("g_shape", self.g_shape)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and ≥ 0"));
            }
        }
        Ok(())
    }

    /// `β(δ)` over all `d` features.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut src = vec![0.0; self.d];
        for (&j, &b) in self.invariant_set.iter().zip(&self.beta_s) {
            src[j] = b;
        }
        src.iter()
            .zip(&self.beta_alt)
            .map(|(s, a)| (1.0 - self.delta) * s + self.delta * a)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticContext {
    pub matrix: ContextMatrix,
    pub y_star: Vec<f64>,
    pub y_weak: WeakLabelVector,
}

fn synthetic_ids(n: usize) -> Arc<[String]> {
    (0..n).map(|i| format!("s{i:06}")).collect::<Vec<_>>().into()
}

fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

pub fn generate_context(cfg: &SyntheticConfig) -> Result<SyntheticContext> {
    cfg.validate()?;
    let (n, d) = (cfg.n, cfg.d);
    let mut fx = rng::rng_from(rng::derive_seed_str(cfg.seed, "features"));
    let mut columns = vec![Vec::with_capacity(n); d];
    for _ in 0..n {
        for col in columns.iter_mut() {
            col.push(fx.sample::<f64, _>(StandardNormal));
        }
    }
    let beta = cfg.coefficients();
    let mut feta = rng::rng_from(rng::derive_seed_str(cfg.seed, "latent-noise"));
    let mut feps = rng::rng_from(rng::derive_seed_str(cfg.seed, "label-noise"));
    let mut y_star = Vec::with_capacity(n);
    let mut y_weak = Vec::with_capacity(n);
    for i in 0..n {
        let signal: f64 = (0..d).map(|j| beta[j] * columns[j][i]).sum();
        let eta = cfg.eta_sd * feta.sample::<f64, _>(StandardNormal);
        let eps = if cfg.sigma > 0.0 {
            feps.random_range(-cfg.sigma..=cfg.sigma)
        } else {
            0.0
        };
        let ys = signal + eta;
        y_star.push(ys);
        y_weak.push(g(ys, cfg.g_shape) + eps);
    }
    let ids = synthetic_ids(n);
    let matrix = ContextMatrix::new(
        format!("synthetic_delta{}", cfg.delta),
        Arc::clone(&ids),
        feature_names(d).into_iter().zip(columns).collect(),
    )?;
    let y_weak = WeakLabelVector::new(
        ids,
        y_weak,
        LabelConstruction::Provided {
            source: format!("synthetic seed={} delta={}", cfg.seed, cfg.delta),
        },
        None,
    )?;
    Ok(SyntheticContext { matrix, y_star, y_weak })
}

/// Fraction of `n_pairs` random pairs `(i ≠ j)` on which `f` and `y` order
/// the two items the same way.
pub fn pairwise_agreement(f: &[f64], y: &[f64], n_pairs: usize, seed: u64) -> Result<f64> {
    let n = f.len();
    if n != y.len() || n < 2 || n_pairs == 0 {
        return Err(Error::Domain("pairwise agreement needs ≥ 2 aligned items and ≥ 1 pair".into()));
    }
    let mut r = rng::rng_from(seed);
    let mut agree = 0usize;
    for _ in 0..n_pairs {
        let i = r.random_range(0..n);
        let mut j = r.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if (f[i] - f[j]) * (y[i] - y[j]) > 0.0 {
            agree += 1;
        }
    }
    Ok(agree as f64 / n_pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementPoint {
    pub n: usize,
    pub agreement: f64,
}

pub const THEOREM1_PAIRS: usize = 10_000;
pub const THEOREM1_TEST_SIZE: usize = 5000;
/// Independent training sets per sample size; the curve reports their mean
/// agreement, an estimate of the expected agreement at that size.
pub const THEOREM1_REPLICATES: usize = 10;

/// Trains on weak labels at each sample size and measures pairwise ranking
/// agreement with the latent target on a fresh test sample, averaged over
/// [`THEOREM1_REPLICATES`] training sets.
pub fn theorem1_check(cfg: &SyntheticConfig, spec: &ModelSpec, sizes: &[usize]) -> Result<Vec<AgreementPoint>> {
    if cfg.delta != 0.0 {
        return Err(Error::Config("ranking consistency is checked at delta = 0".into()));
    }
    if sizes.len() < 2 {
        return Err(Error::Config("need at least 2 sample sizes".into()));
    }
    let test = generate_context(&SyntheticConfig {
        n: THEOREM1_TEST_SIZE,
        seed: rng::derive_seed_str(cfg.seed, "theorem1-test"),
        ..cfg.clone()
    })?;
    let names = test.matrix.column_names().to_vec();
    let xt = test.matrix.design();
    let pair_seed = rng::derive_seed_str(cfg.seed, "pairs");
    sizes
        .iter()
        .map(|&n| {
            let mut total = 0.0;
            for rep in 0..THEOREM1_REPLICATES {
                let train = generate_context(&SyntheticConfig {
                    n,
                    seed: rng::derive_seed(rng::derive_seed(cfg.seed, n as u64), rep as u64),
                    ..cfg.clone()
                })?;
                let model = models::fit(spec, train.matrix.design().view(), train.y_weak.values(), &names)?;
                let pred = model.predict(xt.view(), &names)?;
                total += pairwise_agreement(&pred, &test.y_star, THEOREM1_PAIRS, pair_seed)?;
            }
            Ok(AgreementPoint {
                n,
                agreement: total / THEOREM1_REPLICATES as f64,
            })
        })
        .collect()
}

/// True when no point falls more than `tol` below any earlier point.
pub fn non_decreasing_within(values: &[f64], tol: f64) -> bool {
    let mut best = f64::NEG_INFINITY;
    for &v in values {
        if v < best - tol {
            return false;
        }
        best = best.max(v);
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub delta: f64,
    pub family: Family,
    /// Mean over features of the absolute change in feature-label rank
    /// correlation between the source and the drifted context.
    pub shift_magnitude: f64,
    pub rank_rho: Option<f64>,
    pub transfer_rho: Option<f64>,
    pub in_domain_rho: Option<f64>,
}

fn feature_label_rhos(ctx: &SyntheticContext) -> Result<Vec<Option<f64>>> {
    ctx.matrix
        .columns()
        .map(|(_, c)| undefined_as_none(spearman(c, ctx.y_weak.values())))
        .collect()
}

/// For every `δ` and model family: train in the source context and in the
/// drifted context, compare importance rankings, and measure source → drifted
/// transfer. All drifted contexts share one feature sample.
pub fn theorem2_check(cfg: &SyntheticConfig, deltas: &[f64], specs: &[ModelSpec]) -> Result<Vec<DriftRow>> {
    if deltas.len() < 3 || !deltas.contains(&0.0) {
        return Err(Error::Config("delta grid needs ≥ 3 values including 0".into()));
    }
    let source = generate_context(&SyntheticConfig {
        delta: 0.0,
        seed: rng::derive_seed_str(cfg.seed, "source"),
        ..cfg.clone()
    })?;
    let holdout = generate_context(&SyntheticConfig {
        delta: 0.0,
        seed: rng::derive_seed_str(cfg.seed, "holdout"),
        ..cfg.clone()
    })?;
    let names = source.matrix.column_names().to_vec();
    let src_rhos = feature_label_rhos(&source)?;
    let mut rows = Vec::new();
    for spec in specs {
        let src_model = models::fit(spec, source.matrix.design().view(), source.y_weak.values(), &names)?;
        let hold_pred = src_model.predict(holdout.matrix.design().view(), &names)?;
        let in_domain_rho = undefined_as_none(spearman(&hold_pred, holdout.y_weak.values()))?;
        for &delta in deltas {
            let drifted = generate_context(&SyntheticConfig {
                delta,
                seed: rng::derive_seed_str(cfg.seed, "target"),
                ..cfg.clone()
            })?;
            let x = drifted.matrix.design();
            let pred = src_model.predict(x.view(), &names)?;
            let transfer_rho = undefined_as_none(spearman(&pred, drifted.y_weak.values()))?;
            let drift_model = models::fit(spec, x.view(), drifted.y_weak.values(), &names)?;
            let stability = importance_rank_stability(
                spec.family(),
                ("source".into(), format!("delta={delta}")),
                &names,
                &src_model.importance,
                &names,
                &drift_model.importance,
            )?;
            let drift_rhos = feature_label_rhos(&drifted)?;
            let diffs: Vec<f64> = src_rhos
                .iter()
                .zip(&drift_rhos)
                .filter_map(|(a, b)| Some((a.as_ref()? - b.as_ref()?).abs()))
                .collect();
            let shift_magnitude = diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;
            rows.push(DriftRow {
                delta,
                family: spec.family(),
                shift_magnitude,
                rank_rho: stability.rank_rho,
                transfer_rho,
                in_domain_rho,
            });
        }
    }
    Ok(rows)
}

/// Three-context world shaped like the transcript data: one latent target and
/// one weak label shared by all contexts, with each context's expression
/// feature tied to the latent target by its own drifted coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperWorldConfig {
    pub n_transcripts: usize,
    /// (context id, drift δ).
    pub contexts: Vec<(String, f64)>,
    /// Correlation of the source context's feature with the latent target.
    pub beta_source: f64,
    pub beta_alt: f64,
    pub g_shape: f64,
    pub sigma: f64,
    /// `TPM = exp(log_mean + log_scale·x)`.
    pub log_mean: f64,
    pub log_scale: f64,
    pub seed: u64,
}

impl PaperWorldConfig {
    /// Small cell-line drift, large temporal drift.
    pub fn standard(seed: u64) -> Self {
        PaperWorldConfig {
            n_transcripts: 6000,
            contexts: vec![
                ("HEK293FT_D2".into(), 0.0),
                ("K562_D2".into(), 0.3),
                ("HEK293FT_D7".into(), 0.5),
            ],
            beta_source: 0.7,
            beta_alt: -0.7,
            g_shape: 0.3,
            sigma: 0.3,
            log_mean: 1.5,
            log_scale: 1.2,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PaperWorld {
    pub registry: ContextRegistry,
    pub label: WeakLabelVector,
    pub y_star: Vec<f64>,
}

/// Builds the registry and weak label. With a standard-normal latent target
/// and `x_c = b_c·y* + sqrt(1 − b_c²)·ξ_c`, every context's feature is
/// standard normal while `E[y* | x_c] = b_c·x_c`.
pub fn paper_world(cfg: &PaperWorldConfig) -> Result<PaperWorld> {
    let n = cfg.n_transcripts;
    if n < 10 || cfg.contexts.is_empty() {
        return Err(Error::Config("paper world needs ≥ 10 transcripts and ≥ 1 context".into()));
    }
    let mut lat = rng::rng_from(rng::derive_seed_str(cfg.seed, "latent"));
    let y_star: Vec<f64> = (0..n).map(|_| lat.sample(StandardNormal)).collect();
    let mut noise = rng::rng_from(rng::derive_seed_str(cfg.seed, "label-noise"));
    let y: Vec<f64> = y_star
        .iter()
        .map(|&t| {
            let eps = if cfg.sigma > 0.0 {
                noise.random_range(-cfg.sigma..=cfg.sigma)
            } else {
                0.0
            };
            g(t, cfg.g_shape) + eps
        })
        .collect();
    let ids: Vec<String> = (0..n).map(|i| format!("TX{i:06}")).collect();

    let mut tpm = BTreeMap::new();
    let mut metas = Vec::new();
    for (ctx, delta) in &cfg.contexts {
        if !(0.0..=1.0).contains(delta) {
            return Err(Error::Config(format!("delta {delta} outside [0, 1]")));
        }
        let b = (1.0 - delta) * cfg.beta_source + delta * cfg.beta_alt;
        if b.abs() > 1.0 {
            return Err(Error::Config(format!("context coefficient {b} exceeds 1 in magnitude")));
        }
        let resid = (1.0 - b * b).sqrt();
        let mut fx = rng::rng_from(rng::derive_seed_str(cfg.seed, ctx));
        let values: Vec<f64> = y_star
            .iter()
            .map(|&t| {
                let xi: f64 = fx.sample(StandardNormal);
                (cfg.log_mean + cfg.log_scale * (b * t + resid * xi)).exp()
            })
            .collect();
        tpm.insert(ctx.clone(), values);
        if let Some((cell, day)) = ctx.rsplit_once("_D") {
            if let Ok(day) = day.parse() {
                metas.push(SampleMeta {
                    context_id: ctx.clone(),
                    cell_line: cell.to_string(),
                    timepoint_days: day,
                    percent_mapped: 100.0,
                    quant: None,
                });
            }
        }
    }
    let registry = ContextRegistry::from_tpm(ids, tpm)?.with_meta(metas);
    let label = WeakLabelVector::new(
        registry.shared_transcripts().to_vec().into(),
        y,
        LabelConstruction::Provided {
            source: format!("synthetic paper world seed={}", cfg.seed),
        },
        None,
    )?;
    Ok(PaperWorld {
        registry,
        label,
        y_star,
    })
}

/// One named pass/fail check with the measured value and its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub threshold: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, measured: impl Into<String>, threshold: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            measured: measured.into(),
            threshold: threshold.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub preset: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl CheckReport {
    fn new(preset: &str, seed: u64, checks: Vec<Check>) -> Self {
        CheckReport {
            preset: preset.into(),
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Theorem1,
    Theorem2,
    PaperPattern,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem1" => Ok(Preset::Theorem1),
            "theorem2" => Ok(Preset::Theorem2),
            "paper-pattern" => Ok(Preset::PaperPattern),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Theorem1 => "theorem1",
            Preset::Theorem2 => "theorem2",
            Preset::PaperPattern => "paper-pattern",
        }
    }
}

pub const THEOREM1_SIZES: [usize; 5] = [50, 100, 500, 1000, 5000];
pub const THEOREM1_NOISELESS_MIN: f64 = 0.999;
pub const THEOREM1_NOISY_MIN: f64 = 0.9;
pub const THEOREM1_MONOTONE_TOL: f64 = 0.02;
/// Near-zero penalty so the noiseless fit recovers the ranking direction at
/// the smallest sample size.
pub const THEOREM1_RIDGE_ALPHA: f64 = 1e-3;

pub const THEOREM2_DELTAS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const THEOREM2_SHIFT_CORR_MAX: f64 = -0.5;
pub const THEOREM2_IN_DOMAIN_TOL: f64 = 0.05;

pub const PATTERN_TEMPORAL_RHO_MAX: f64 = 0.2;
pub const PATTERN_TEMPORAL_R2_MAX: f64 = 0.0;

fn f(x: f64) -> String {
    crate::io_util::fmt_f64(x)
}

fn fo(x: Option<f64>) -> String {
    crate::io_util::fmt_opt(x)
}

pub struct Theorem1Cases {
    pub noiseless: Vec<AgreementPoint>,
    pub noisy: Vec<AgreementPoint>,
}

pub fn theorem1_preset(seed: u64) -> Result<(Theorem1Cases, CheckReport)> {
    let spec = ModelSpec::Ridge(RidgeSpec {
        alpha: THEOREM1_RIDGE_ALPHA,
    });
    let base = SyntheticConfig {
        eta_sd: 0.0,
        ..SyntheticConfig::five_feature(rng::derive_seed_str(seed, "noiseless"))
    };
    let noiseless = theorem1_check(&base, &spec, &THEOREM1_SIZES)?;
    let noisy_cfg = SyntheticConfig {
        eta_sd: 0.1,
        sigma: 0.1,
        g_shape: 0.5,
        seed: rng::derive_seed_str(seed, "noisy"),
        ..base
    };
    let noisy = theorem1_check(&noisy_cfg, &spec, &THEOREM1_SIZES)?;

    let mut checks = Vec::new();
    let min_clean = noiseless.iter().map(|p| p.agreement).fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "noiseless agreement at every n >= 50",
        min_clean >= THEOREM1_NOISELESS_MIN,
        f(min_clean),
        format!(">= {THEOREM1_NOISELESS_MIN}"),
    ));
    let curve: Vec<f64> = noisy.iter().map(|p| p.agreement).collect();
    checks.push(Check::new(
        "noisy agreement curve non-decreasing",
        non_decreasing_within(&curve, THEOREM1_MONOTONE_TOL),
        curve.iter().map(|&v| f(v)).collect::<Vec<_>>().join(","),
        format!("tolerance {THEOREM1_MONOTONE_TOL}"),
    ));
    let last = noisy.iter().find(|p| p.n == 5000).map(|p| p.agreement).unwrap_or(f64::NAN);
    checks.push(Check::new(
        "noisy agreement at n = 5000",
        last >= THEOREM1_NOISY_MIN,
        f(last),
        format!(">= {THEOREM1_NOISY_MIN}"),
    ));
    Ok((Theorem1Cases { noiseless, noisy }, CheckReport::new("theorem1", seed, checks)))
}

pub fn theorem2_specs(seed: u64) -> Vec<ModelSpec> {
    vec![
        ModelSpec::default_for(Family::Ridge, seed),
        ModelSpec::default_for(Family::Forest, rng::derive_seed_str(seed, "forest")),
    ]
}

pub fn theorem2_preset(seed: u64) -> Result<(Vec<DriftRow>, CheckReport)> {
    let cfg = SyntheticConfig::five_feature(seed);
    let specs = theorem2_specs(seed);
    let rows = theorem2_check(&cfg, &THEOREM2_DELTAS, &specs)?;
    let mut checks = Vec::new();
    for spec in &specs {
        let fam = spec.family();
        let fr: Vec<&DriftRow> = rows.iter().filter(|r| r.family == fam).collect();
        let transfer: Vec<Option<f64>> = fr.iter().map(|r| r.transfer_rho).collect();
        let monotone = transfer.iter().all(Option::is_some)
            && transfer.windows(2).all(|w| w[1].unwrap() <= w[0].unwrap());
        checks.push(Check::new(
            format!("{}: transfer rho non-increasing in delta", fam.as_str()),
            monotone,
            transfer.iter().map(|&v| fo(v)).collect::<Vec<_>>().join(","),
            "non-increasing",
        ));
        let at_zero = fr.iter().find(|r| r.delta == 0.0);
        let rr = at_zero.and_then(|r| r.rank_rho);
        checks.push(Check::new(
            format!("{}: rank_rho at delta = 0", fam.as_str()),
            rr == Some(1.0),
            fo(rr),
            "== 1",
        ));
        let gap = at_zero.and_then(|r| Some((r.transfer_rho? - r.in_domain_rho?).abs()));
        checks.push(Check::new(
            format!("{}: transfer rho at delta = 0 matches in-domain rho", fam.as_str()),
            gap.is_some_and(|g| g <= THEOREM2_IN_DOMAIN_TOL),
            fo(gap),
            format!("<= {THEOREM2_IN_DOMAIN_TOL}"),
        ));
        let shifts: Vec<f64> = fr.iter().map(|r| r.shift_magnitude).collect();
        let perfs: Vec<f64> = fr.iter().map(|r| r.transfer_rho.unwrap_or(f64::NAN)).collect();
        let corr = if perfs.iter().all(|p| p.is_finite()) {
            undefined_as_none(spearman(&shifts, &perfs))?
        } else {
            None
        };
        checks.push(Check::new(
            format!("{}: spearman(shift magnitude, transfer rho)", fam.as_str()),
            corr.is_some_and(|c| c <= THEOREM2_SHIFT_CORR_MAX),
            fo(corr),
            format!("<= {THEOREM2_SHIFT_CORR_MAX}"),
        ));
    }
    Ok((rows, CheckReport::new("theorem2", seed, checks)))
}

/// Run configuration for the paper-pattern preset: the standard trio over
/// every family and every feature set.
pub fn paper_pattern_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::standard(seed);
    cfg.model_grid.push(ModelSpec::default_for(
        Family::Gbt,
        rng::derive_seed_str(seed, "gbt"),
    ));
    cfg.gbt_all_features = true;
    cfg
}

/// Checks the in-domain > cross-domain > temporal ordering (on R²) for each
/// family and feature set, plus the temporal collapse thresholds.
pub fn paper_pattern_checks(records: &[protocol::EvalRecord]) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut cells: Vec<(Family, FeatureSet)> = records.iter().map(|r| (r.family, r.feature_set)).collect();
    cells.sort();
    cells.dedup();
    for (fam, fs) in cells {
        let get = |s: SettingName| {
            records
                .iter()
                .find(|r| r.family == fam && r.feature_set == fs && r.setting == s)
                .and_then(|r| r.metrics.clone())
        };
        let label = format!("{}/{}", fam.as_str(), fs.as_str());
        let (Some(ind), Some(cross), Some(temp)) =
            (get(SettingName::InDomain), get(SettingName::CrossDomain), get(SettingName::Temporal))
        else {
            checks.push(Check::new(format!("{label}: all settings evaluated"), false, "missing", "present"));
            continue;
        };
        let r2 = |m: &crate::metrics::MetricTriple| m.r2.unwrap_or(f64::NAN);
        let ordered = r2(&ind) > r2(&cross) && r2(&cross) > r2(&temp);
        checks.push(Check::new(
            format!("{label}: R2 in-domain > cross-domain > temporal"),
            ordered,
            format!("{} > {} > {}", fo(ind.r2), fo(cross.r2), fo(temp.r2)),
            "strict ordering",
        ));
        checks.push(Check::new(
            format!("{label}: temporal spearman"),
            temp.spearman.is_some_and(|v| v <= PATTERN_TEMPORAL_RHO_MAX),
            fo(temp.spearman),
            format!("<= {PATTERN_TEMPORAL_RHO_MAX}"),
        ));
        checks.push(Check::new(
            format!("{label}: temporal R2"),
            temp.r2.is_some_and(|v| v <= PATTERN_TEMPORAL_R2_MAX),
            fo(temp.r2),
            format!("<= {PATTERN_TEMPORAL_R2_MAX}"),
        ));
    }
    checks
}

pub fn paper_pattern_preset(seed: u64) -> Result<(PaperWorld, RunReport, CheckReport)> {
    let world = paper_world(&PaperWorldConfig::standard(seed))?;
    let data = Dataset::new(world.registry.clone(), world.label.clone())?;
    let cfg = paper_pattern_config(seed);
    let results = protocol::run_all(&data, &cfg)?;
    let checks = paper_pattern_checks(&results.eval_records);
    let mut config = BTreeMap::new();
    config.insert("preset".to_string(), "paper-pattern".to_string());
    config.insert("seed".to_string(), seed.to_string());
    let provenance = Provenance::new(&cfg, &data, config, Vec::new());
    let report = RunReport::new(results, provenance);
    Ok((world, report, CheckReport::new("paper-pattern", seed, checks)))
}

fn write_context(dir: &Path, name: &str, ctx: &SyntheticContext, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut latent = String::from("transcript_id\ty_star\n");
    for (id, v) in ctx.matrix.transcript_ids().iter().zip(&ctx.y_star) {
        latent.push_str(&format!("{id}\t{}\n", f(*v)));
    }
    for (suffix, body) in [
        ("features.tsv", ctx.matrix.to_tsv()),
        ("labels.tsv", ctx.y_weak.to_tsv()),
        ("latent.tsv", latent),
    ] {
        let p = dir.join(format!("{name}.{suffix}"));
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
    }
    Ok(())
}

/// Generates the preset's data under `out`, runs its checks, and writes
/// `checks.json` plus the preset's tables. Returns the check report.
pub fn run_preset(preset: Preset, seed: u64, out: &Path) -> Result<CheckReport> {
    let mut written = Vec::new();
    let report = match preset {
        Preset::Theorem1 => {
            let (cases, report) = theorem1_preset(seed)?;
            let mut tsv = String::from("case\tn\tagreement\n");
            for (case, pts) in [("noiseless", &cases.noiseless), ("noisy", &cases.noisy)] {
                for p in pts.iter() {
                    tsv.push_str(&format!("{case}\t{}\t{}\n", p.n, f(p.agreement)));
                }
            }
            let p = out.join("agreement_curve.tsv");
            write_atomic(&p, tsv.as_bytes())?;
            written.push(p);
            let noisy = generate_context(&SyntheticConfig {
                n: THEOREM1_TEST_SIZE,
                eta_sd: 0.1,
                sigma: 0.1,
                g_shape: 0.5,
                seed: rng::derive_seed_str(seed, "noisy"),
                ..SyntheticConfig::five_feature(seed)
            })?;
            write_context(&out.join("data"), "noisy_source", &noisy, &mut written)?;
            report
        }
        Preset::Theorem2 => {
            let (rows, report) = theorem2_preset(seed)?;
            let mut tsv = String::from("delta\tfamily\tshift_magnitude\trank_rho\ttransfer_rho\tin_domain_rho\n");
            for r in &rows {
                tsv.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    f(r.delta),
                    r.family.as_str(),
                    f(r.shift_magnitude),
                    fo(r.rank_rho),
                    fo(r.transfer_rho),
                    fo(r.in_domain_rho)
                ));
            }
            let p = out.join("drift_table.tsv");
            write_atomic(&p, tsv.as_bytes())?;
            written.push(p);
            let cfg = SyntheticConfig::five_feature(seed);
            let source = generate_context(&SyntheticConfig {
                seed: rng::derive_seed_str(seed, "source"),
                ..cfg.clone()
            })?;
            write_context(&out.join("data"), "source", &source, &mut written)?;
            for &delta in &THEOREM2_DELTAS {
                let ctx = generate_context(&SyntheticConfig {
                    delta,
                    seed: rng::derive_seed_str(seed, "target"),
                    ..cfg.clone()
                })?;
                write_context(&out.join("data"), &format!("drifted_delta{delta}"), &ctx, &mut written)?;
            }
            report
        }
        Preset::PaperPattern => {
            let (world, run_report, report) = paper_pattern_preset(seed)?;
            written.extend(world.registry.write_dir(&out.join("registry"))?);
            let lp = out.join("registry").join("labels.tsv");
            world.label.export(&lp)?;
            written.push(lp);
            written.extend(run_report.emit(&out.join("report"))?);
            report
        }
    };
    let p = out.join("checks.json");
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_atomic(&p, text.as_bytes())?;
    Ok(report)
}
