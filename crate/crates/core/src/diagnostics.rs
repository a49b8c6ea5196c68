//! Supervision-drift diagnostics.
//!
//! With the label held fixed, a change in how features relate to it between
//! two contexts is visible directly in the feature-label rank correlations.
//! The shift score of a feature between two contexts is the absolute change
//! in that correlation; importance-rank stability compares how two models
//! trained in different contexts order the same features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ContextMatrix;
use crate::labels::WeakLabelVector;
use crate::metrics::{spearman, undefined_as_none};
use crate::models::Family;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLabelCorr {
    pub context_id: String,
    pub feature_name: String,
    /// `None` when the column (or the label) is constant.
    pub rho: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScore {
    pub feature_name: String,
    pub context_pair: (String, String),
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceStability {
    pub model_family: Family,
    pub context_pair: (String, String),
    pub rank_rho: Option<f64>,
}

/// Spearman correlation of every feature column with the label. Constant
/// columns yield `rho = None`; use [`feature_label_corr_strict`] to treat
/// them as errors.
pub fn feature_label_corr(matrix: &ContextMatrix, y: &WeakLabelVector) -> Result<Vec<FeatureLabelCorr>> {
    check_rows(matrix, y)?;
    matrix
        .columns()
        .map(|(name, col)| {
            Ok(FeatureLabelCorr {
                context_id: matrix.context_id().to_string(),
                feature_name: name.to_string(),
                rho: undefined_as_none(spearman(col, y.values()))?,
                n: col.len(),
            })
        })
        .collect()
}

pub fn feature_label_corr_strict(matrix: &ContextMatrix, y: &WeakLabelVector) -> Result<Vec<FeatureLabelCorr>> {
    check_rows(matrix, y)?;
    matrix
        .columns()
        .map(|(name, col)| {
            Ok(FeatureLabelCorr {
                context_id: matrix.context_id().to_string(),
                feature_name: name.to_string(),
                rho: Some(spearman(col, y.values())?),
                n: col.len(),
            })
        })
        .collect()
}

fn check_rows(matrix: &ContextMatrix, y: &WeakLabelVector) -> Result<()> {
    if matrix.n_rows() != y.len() {
        return Err(Error::Alignment(format!(
            "matrix has {} rows, label has {}",
            matrix.n_rows(),
            y.len()
        )));
    }
    Ok(())
}

/// `|rho_c - rho_c'|` for the same feature in two contexts.
pub fn shift_score(a: &FeatureLabelCorr, b: &FeatureLabelCorr) -> Result<ShiftScore> {
    if a.feature_name != b.feature_name {
        return Err(Error::Pairing(format!(
            "cannot compare feature `{}` with `{}`",
            a.feature_name, b.feature_name
        )));
    }
    let (Some(ra), Some(rb)) = (a.rho, b.rho) else {
        return Err(Error::UndefinedMetric(format!(
            "feature-label correlation of `{}` undefined in {} or {}",
            a.feature_name, a.context_id, b.context_id
        )));
    };
    Ok(ShiftScore {
        feature_name: a.feature_name.clone(),
        context_pair: (a.context_id.clone(), b.context_id.clone()),
        value: (ra - rb).abs(),
    })
}

/// Shift scores for every feature over the given context pairs, in
/// (feature, pair) order. Pairs with an undefined correlation are skipped.
pub fn stability_diffs(corrs: &[FeatureLabelCorr], pairs: &[(String, String)]) -> Vec<ShiftScore> {
    let mut features: Vec<&str> = Vec::new();
    for c in corrs {
        if !features.contains(&c.feature_name.as_str()) {
            features.push(&c.feature_name);
        }
    }
    let find = |ctx: &str, feat: &str| {
        corrs
            .iter()
            .find(|c| c.context_id == ctx && c.feature_name == feat)
    };
    let mut out = Vec::new();
    for feat in features {
        for (a, b) in pairs {
            if let (Some(ca), Some(cb)) = (find(a, feat), find(b, feat)) {
                if let Ok(s) = shift_score(ca, cb) {
                    out.push(s);
                }
            }
        }
    }
    out
}

/// Spearman correlation between shift magnitudes and per-pair performance.
pub fn shift_vs_performance(scores: &[ShiftScore], perfs: &[f64]) -> Result<f64> {
    if scores.len() != perfs.len() {
        return Err(Error::Pairing(format!(
            "{} shift scores for {} performance values",
            scores.len(),
            perfs.len()
        )));
    }
    if scores.len() < 3 {
        return Err(Error::Domain(format!(
            "need at least 3 context pairs, got {}",
            scores.len()
        )));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    spearman(&values, perfs)
}

fn distinct_count(v: &[f64]) -> usize {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s.len()
}

/// Rank agreement of two importance vectors over the same features.
pub fn importance_rank_stability(
    family: Family,
    context_pair: (String, String),
    names_c: &[String],
    phi_c: &[f64],
    names_cprime: &[String],
    phi_cprime: &[f64],
) -> Result<ImportanceStability> {
    if names_c != names_cprime || phi_c.len() != names_c.len() || phi_cprime.len() != names_cprime.len() {
        return Err(Error::Pairing(format!(
            "importance vectors over different features: {names_c:?} vs {names_cprime:?}"
        )));
    }
    let rank_rho = if distinct_count(phi_c) < 2 || distinct_count(phi_cprime) < 2 {
        None
    } else {
        Some(spearman(phi_c, phi_cprime)?)
    };
    Ok(ImportanceStability {
        model_family: family,
        context_pair,
        rank_rho,
    })
}
