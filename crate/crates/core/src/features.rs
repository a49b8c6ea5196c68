//! Transcript-level feature construction and the mitigation transforms.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::fmt_f64;
use crate::metrics::average_ranks;

pub const LOGTPM: &str = "logTPM";
pub const RANK_PCT: &str = "rank_pct_within_sample";

/// Floor applied to standard deviations in [`Standardizer`].
pub const SD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureSet {
    LogtpmOnly,
    RankOnly,
    Both,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::LogtpmOnly, FeatureSet::RankOnly, FeatureSet::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::LogtpmOnly => "logtpm",
            FeatureSet::RankOnly => "rank",
            FeatureSet::Both => "both",
        }
    }
}

impl std::fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logtpm" | "logtpm_only" => Ok(FeatureSet::LogtpmOnly),
            "rank" | "rank_only" => Ok(FeatureSet::RankOnly),
            "both" => Ok(FeatureSet::Both),
            other => Err(Error::Config(format!("unknown feature set `{other}`"))),
        }
    }
}

/// `ln(tpm + 1)`.
pub fn log_tpm(tpm: f64) -> Result<f64> {
    if !(tpm >= 0.0) || !tpm.is_finite() {
        return Err(Error::Domain(format!("TPM must be finite and >= 0, got {tpm}")));
    }
    Ok(tpm.ln_1p())
}

/// Average rank divided by n; values lie in (0, 1].
pub fn rank_pct_within_sample(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Domain("rank percentile of an empty vector".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in rank input".into()));
    }
    let n = values.len() as f64;
    Ok(average_ranks(values).into_iter().map(|r| r / n).collect())
}

/// Transcript-by-feature matrix for one context.
///
/// Every data accessor bumps a read counter, which lets callers prove that a
/// matrix was not touched during some phase (e.g. no test-context reads while
/// fitting).
#[derive(Debug)]
pub struct ContextMatrix {
    context_id: String,
    transcript_ids: Arc<[String]>,
    column_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    reads: AtomicU64,
}

impl Clone for ContextMatrix {
    fn clone(&self) -> Self {
        ContextMatrix {
            context_id: self.context_id.clone(),
            transcript_ids: Arc::clone(&self.transcript_ids),
            column_names: self.column_names.clone(),
            columns: self.columns.clone(),
            reads: AtomicU64::new(0),
        }
    }
}

impl PartialEq for ContextMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.context_id == other.context_id
            && self.transcript_ids == other.transcript_ids
            && self.column_names == other.column_names
            && self.columns == other.columns
    }
}

impl ContextMatrix {
    pub fn new(
        context_id: impl Into<String>,
        transcript_ids: Arc<[String]>,
        columns: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let n = transcript_ids.len();
        let mut names = Vec::with_capacity(columns.len());
        let mut cols = Vec::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n {
                return Err(Error::Schema(format!(
                    "column `{name}` has {} rows, expected {n}",
                    col.len()
                )));
            }
            if names.contains(&name) {
                return Err(Error::Schema(format!("duplicate column `{name}`")));
            }
            names.push(name);
            cols.push(col);
        }
        Ok(ContextMatrix {
            context_id: context_id.into(),
            transcript_ids,
            column_names: names,
            columns: cols,
            reads: AtomicU64::new(0),
        })
    }

    fn touch(&self) {
        self.reads.fetch_add(1, Ordering::Relaxed);
    }

    pub fn context_id(&self) -> &str {
        &self.context_id
    }

    pub fn n_rows(&self) -> usize {
        self.transcript_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn transcript_ids(&self) -> &Arc<[String]> {
        &self.transcript_ids
    }

    /// Number of data reads so far.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.touch();
        let idx = self.column_names.iter().position(|c| c == name)?;
        Some(&self.columns[idx])
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.touch();
        self.column_names
            .iter()
            .map(String::as_str)
            .zip(self.columns.iter().map(Vec::as_slice))
    }

    /// Row-major n × d design matrix.
    pub fn design(&self) -> Array2<f64> {
        self.touch();
        let n = self.n_rows();
        let d = self.n_cols();
        Array2::from_shape_fn((n, d), |(i, j)| self.columns[j][i])
    }

    /// New matrix holding only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> ContextMatrix {
        self.touch();
        let ids: Vec<String> = rows.iter().map(|&r| self.transcript_ids[r].clone()).collect();
        ContextMatrix {
            context_id: self.context_id.clone(),
            transcript_ids: ids.into(),
            column_names: self.column_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            reads: AtomicU64::new(0),
        }
    }

    /// Tab-separated export: `transcript_id` then one column per feature.
    pub fn to_tsv(&self) -> String {
        self.touch();
        let mut out = String::from("transcript_id");
        for name in &self.column_names {
            out.push('\t');
            out.push_str(name);
        }
        out.push('\n');
        for (i, id) in self.transcript_ids.iter().enumerate() {
            out.push_str(id);
            for col in &self.columns {
                out.push('\t');
                out.push_str(&fmt_f64(col[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(context_id: &str, text: &str) -> Result<ContextMatrix> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").trim_end_matches('\r');
        let mut names = header.split('\t');
        if names.next() != Some("transcript_id") {
            return Err(Error::Format {
                path: context_id.to_string(),
                msg: "matrix header must start with transcript_id".into(),
            });
        }
        let names: Vec<String> = names.map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut cols = vec![Vec::new(); names.len()];
        for (i, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut f = line.split('\t');
            ids.push(f.next().unwrap_or("").to_string());
            for col in cols.iter_mut() {
                let v = f.next().and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| Error::Parse {
                    path: context_id.to_string(),
                    line: i + 2,
                    msg: "missing or non-numeric feature value".into(),
                })?;
                col.push(v);
            }
        }
        ContextMatrix::new(context_id, ids.into(), names.into_iter().zip(cols).collect())
    }
}

/// Builds the feature columns for one context from its aligned TPM vector.
pub fn assemble(
    context_id: &str,
    transcript_ids: Arc<[String]>,
    tpm: &[f64],
    set: FeatureSet,
) -> Result<ContextMatrix> {
    if tpm.len() != transcript_ids.len() {
        return Err(Error::Alignment(format!(
            "{} TPM values for {} transcripts",
            tpm.len(),
            transcript_ids.len()
        )));
    }
    let mut columns = Vec::with_capacity(2);
    if matches!(set, FeatureSet::LogtpmOnly | FeatureSet::Both) {
        let col = tpm.iter().map(|&t| log_tpm(t)).collect::<Result<Vec<_>>>()?;
        columns.push((LOGTPM.to_string(), col));
    }
    if matches!(set, FeatureSet::RankOnly | FeatureSet::Both) {
        columns.push((RANK_PCT.to_string(), rank_pct_within_sample(tpm)?));
    }
    ContextMatrix::new(context_id, transcript_ids, columns)
}

/// Column name used for the one-hot indicator of `ctx`.
pub fn onehot_column(ctx: &str) -> String {
    format!("ctx={ctx}")
}

/// Appends one indicator column per vocabulary entry.
pub fn augment_context_onehot(matrix: &ContextMatrix, vocabulary: &[String]) -> Result<ContextMatrix> {
    if !vocabulary.iter().any(|c| c == matrix.context_id()) {
        return Err(Error::Vocabulary(matrix.context_id().to_string()));
    }
    let n = matrix.n_rows();
    let mut columns: Vec<(String, Vec<f64>)> = matrix
        .columns()
        .map(|(name, c)| (name.to_string(), c.to_vec()))
        .collect();
    for ctx in vocabulary {
        let v = if ctx == matrix.context_id() { 1.0 } else { 0.0 };
        columns.push((onehot_column(ctx), vec![v; n]));
    }
    ContextMatrix::new(matrix.context_id(), Arc::clone(matrix.transcript_ids()), columns)
}

/// Per-column affine standardization fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub column_names: Vec<String>,
    pub means: Vec<f64>,
    /// Population standard deviations, floored at [`SD_FLOOR`].
    pub sds: Vec<f64>,
    /// Columns whose raw training sd was below the floor.
    pub degenerate: Vec<String>,
}

pub fn fit_standardizer(train: &ContextMatrix) -> Result<Standardizer> {
    let n = train.n_rows();
    if n < 2 {
        return Err(Error::Domain("standardizer needs at least 2 training rows".into()));
    }
    let mut s = Standardizer {
        column_names: Vec::new(),
        means: Vec::new(),
        sds: Vec::new(),
        degenerate: Vec::new(),
    };
    for (name, col) in train.columns() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd < SD_FLOOR {
            s.degenerate.push(name.to_string());
        }
        s.column_names.push(name.to_string());
        s.means.push(mean);
        s.sds.push(sd.max(SD_FLOOR));
    }
    Ok(s)
}

pub fn apply_standardizer(s: &Standardizer, m: &ContextMatrix) -> Result<ContextMatrix> {
    if m.column_names() != s.column_names.as_slice() {
        return Err(Error::Schema(format!(
            "standardizer columns {:?} do not match matrix columns {:?}",
            s.column_names,
            m.column_names()
        )));
    }
    let columns = m
        .columns()
        .zip(s.means.iter().zip(&s.sds))
        .map(|((name, col), (&mean, &sd))| {
            (name.to_string(), col.iter().map(|v| (v - mean) / sd).collect())
        })
        .collect();
    ContextMatrix::new(m.context_id(), Arc::clone(m.transcript_ids()), columns)
}
