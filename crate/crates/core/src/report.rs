//! Consolidated run report and its table exports.
//!
//! The JSON report is canonical: records are in grid order, maps are sorted,
//! floats use the shortest round-trip representation and undefined values are
//! `null`. Parsing a report and emitting it again reproduces the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{FeatureLabelCorr, ImportanceStability, ShiftScore};
use crate::error::Result;
use crate::io_util::{fmt_f64, write_atomic};
use crate::labels::LabelConstruction;
use crate::protocol::{Dataset, EvalRecord, PairPerformance, RunConfig, RunResults, ShiftCorrelation};
use crate::{CONFIG_SCHEMA_VERSION, VERSION};

pub const REPORT_FILE: &str = "report.json";
pub const EVAL_TSV: &str = "eval.tsv";
pub const CORR_TSV: &str = "feature_label_corr.tsv";
pub const STABILITY_TSV: &str = "stability.tsv";
pub const SHIFT_TSV: &str = "shift_score.tsv";
pub const SHIFT_CORR_TSV: &str = "shift_vs_performance.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProvenance {
    pub construction: LabelConstruction,
    pub reference_contexts: Option<(String, String)>,
    pub n: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub config_schema_version: u32,
    pub master_seed: u64,
    /// Every derived seed the run used, by name.
    pub seeds: BTreeMap<String, u64>,
    pub label: LabelProvenance,
    /// Effective configuration as key/value pairs.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputFingerprint>,
}

impl Provenance {
    pub fn new(
        cfg: &RunConfig,
        data: &Dataset,
        config: BTreeMap<String, String>,
        inputs: Vec<InputFingerprint>,
    ) -> Self {
        let mut seeds = BTreeMap::new();
        for s in &cfg.settings {
            if s.name == crate::protocol::SettingName::InDomain {
                seeds.insert(format!("split.{}", s.train_context), s.split_seed);
            }
        }
        for spec in &cfg.model_grid {
            match spec {
                crate::models::ModelSpec::Forest(f) => {
                    seeds.insert("model.forest".into(), f.seed);
                }
                crate::models::ModelSpec::Gbt(g) => {
                    seeds.insert("model.gbt".into(), g.seed);
                }
                crate::models::ModelSpec::Ridge(_) => {}
            }
        }
        if let LabelConstruction::ExternalSplit { split_seed, .. } = data.label.construction() {
            seeds.insert("label.split".into(), *split_seed);
        }
        Provenance {
            toolkit_version: VERSION.to_string(),
            config_schema_version: CONFIG_SCHEMA_VERSION,
            master_seed: cfg.master_seed,
            seeds,
            label: LabelProvenance {
                construction: data.label.construction().clone(),
                reference_contexts: data.label.reference_contexts().cloned(),
                n: data.label.len(),
                fingerprint: data.label.fingerprint(),
            },
            config,
            inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub partial: bool,
    pub eval_records: Vec<EvalRecord>,
    pub feature_label_corr: Vec<FeatureLabelCorr>,
    pub stability_diffs: Vec<ShiftScore>,
    /// Per ordered context pair: shift score and transfer performance.
    pub shift_scores: Vec<PairPerformance>,
    pub shift_vs_performance: Vec<ShiftCorrelation>,
    pub importance_stability: Vec<ImportanceStability>,
    pub provenance: Provenance,
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "null".to_string())
}

impl RunReport {
    pub fn new(results: RunResults, provenance: Provenance) -> Self {
        RunReport {
            partial: results.partial,
            eval_records: results.eval_records,
            feature_label_corr: results.feature_label_corr,
            stability_diffs: results.stability_diffs,
            shift_scores: results.shift.pairs,
            shift_vs_performance: results.shift.correlations,
            importance_stability: results.shift.importance_stability,
            provenance,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn eval_tsv(&self) -> String {
        let mut out = String::from(
            "setting\ttrain_context\ttest_context\tfamily\tfeature_set\tmitigation\tn\tr2\tmae\tspearman\terror\n",
        );
        for r in &self.eval_records {
            let (n, r2, mae, rho) = match &r.metrics {
                Some(m) => (m.n.to_string(), opt(m.r2), fmt_f64(m.mae), opt(m.spearman)),
                None => ("null".into(), "null".into(), "null".into(), "null".into()),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{n}\t{r2}\t{mae}\t{rho}\t{}",
                r.setting.as_str(),
                r.train_context,
                r.test_context,
                r.family.as_str(),
                r.feature_set.as_str(),
                r.mitigation.as_str(),
                r.error.as_deref().unwrap_or("")
            );
        }
        out
    }

    pub fn corr_tsv(&self) -> String {
        let mut out = String::from("context_id\tfeature\tspearman_rho\tn\n");
        for c in &self.feature_label_corr {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", c.context_id, c.feature_name, opt(c.rho), c.n);
        }
        out
    }

    pub fn stability_tsv(&self) -> String {
        let mut out = String::from("feature\tcontext_a\tcontext_b\tabs_diff\n");
        for s in &self.stability_diffs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                s.feature_name,
                s.context_pair.0,
                s.context_pair.1,
                fmt_f64(s.value)
            );
        }
        out
    }

    pub fn shift_tsv(&self) -> String {
        let mut out = String::from("family\ttrain_context\ttest_context\tshift_score\tperformance\n");
        for p in &self.shift_scores {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                p.family.as_str(),
                p.train_context,
                p.test_context,
                opt(p.shift_score),
                opt(p.performance)
            );
        }
        out
    }

    pub fn shift_corr_tsv(&self) -> String {
        let mut out = String::from("family\tmetric\tspearman_rho\tcontext_pairs\n");
        for c in &self.shift_vs_performance {
            let metric = match c.metric {
                crate::protocol::PerfMetric::Spearman => "spearman",
                crate::protocol::PerfMetric::R2 => "r2",
            };
            let _ = writeln!(out, "{}\t{metric}\t{}\t{}", c.family.as_str(), opt(c.rho), c.n_pairs);
        }
        out
    }

    /// Writes `report.json` and the table exports into `dir`. Returns the
    /// written paths.
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            (REPORT_FILE, self.to_json()?),
            (EVAL_TSV, self.eval_tsv()),
            (CORR_TSV, self.corr_tsv()),
            (STABILITY_TSV, self.stability_tsv()),
            (SHIFT_TSV, self.shift_tsv()),
            (SHIFT_CORR_TSV, self.shift_corr_tsv()),
        ];
        let mut written = Vec::with_capacity(files.len());
        for (name, body) in files {
            let p = dir.join(name);
            write_atomic(&p, body.as_bytes())?;
            written.push(p);
        }
        Ok(written)
    }
}
