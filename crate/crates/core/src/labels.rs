//! The fixed weak-supervision vector.
//!
//! A run builds exactly one label vector and every evaluation setting consumes
//! it unchanged. Two constructions are available: the plain late-minus-early
//! logTPM contrast, and a leakage-robust variant in which each transcript's
//! label is transferred from transcripts in the opposite half of a seeded
//! split, so no transcript contributes to its own supervision value.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{fmt_f64, sha256_hex, write_atomic};
use crate::rng;

pub const DEFAULT_NEIGHBORS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelConstruction {
    FixedContrast,
    ExternalSplit { split_seed: u64, k: usize },
    /// Supplied from outside the toolkit (e.g. a synthetic generator).
    Provided { source: String },
}

impl LabelConstruction {
    pub fn name(&self) -> &'static str {
        match self {
            LabelConstruction::FixedContrast => "FIXED_CONTRAST",
            LabelConstruction::ExternalSplit { .. } => "EXTERNAL_SPLIT",
            LabelConstruction::Provided { .. } => "PROVIDED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabelVector {
    transcript_ids: Arc<[String]>,
    values: Vec<f64>,
    construction: LabelConstruction,
    /// (late, early) contexts of the contrast.
    reference_contexts: Option<(String, String)>,
}

impl WeakLabelVector {
    pub fn new(
        transcript_ids: Arc<[String]>,
        values: Vec<f64>,
        construction: LabelConstruction,
        reference_contexts: Option<(String, String)>,
    ) -> Result<Self> {
        if values.len() != transcript_ids.len() {
            return Err(Error::Alignment(format!(
                "{} label values for {} transcripts",
                values.len(),
                transcript_ids.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite weak label".into()));
        }
        Ok(WeakLabelVector {
            transcript_ids,
            values,
            construction,
            reference_contexts,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn transcript_ids(&self) -> &Arc<[String]> {
        &self.transcript_ids
    }

    pub fn construction(&self) -> &LabelConstruction {
        &self.construction
    }

    pub fn reference_contexts(&self) -> Option<&(String, String)> {
        self.reference_contexts.as_ref()
    }

    /// SHA-256 over ids and the exact bit patterns of the values.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::with_capacity(self.values.len() * 16);
        for (id, v) in self.transcript_ids.iter().zip(&self.values) {
            buf.extend_from_slice(id.as_bytes());
            buf.push(0);
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        sha256_hex(&buf)
    }

    /// `transcript_id\ty` table.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("transcript_id\ty\n");
        for (id, v) in self.transcript_ids.iter().zip(&self.values) {
            let _ = writeln!(out, "{id}\t{}", fmt_f64(*v));
        }
        out
    }

    /// Provenance sidecar as `key=value` lines.
    pub fn provenance(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "construction={}", self.construction.name());
        if let Some((late, early)) = &self.reference_contexts {
            let _ = writeln!(out, "reference_late={late}");
            let _ = writeln!(out, "reference_early={early}");
        }
        match &self.construction {
            LabelConstruction::ExternalSplit { split_seed, k } => {
                let _ = writeln!(out, "split_seed={split_seed}");
                let _ = writeln!(out, "k={k}");
            }
            LabelConstruction::Provided { source } => {
                let _ = writeln!(out, "source={source}");
            }
            LabelConstruction::FixedContrast => {}
        }
        let _ = writeln!(out, "n={}", self.values.len());
        let _ = writeln!(out, "fingerprint={}", self.fingerprint());
        out
    }

    /// Writes `<path>` and `<path>.provenance`.
    pub fn export(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())?;
        let mut side = path.as_os_str().to_owned();
        side.push(".provenance");
        write_atomic(Path::new(&side), self.provenance().as_bytes())
    }

    /// Reads a `transcript_id\ty` table as a provided label.
    pub fn from_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(|l| l.trim_end_matches('\r')) != Some("transcript_id\ty") {
            return Err(Error::Format {
                path: origin.to_string(),
                msg: "label header must be `transcript_id\\ty`".into(),
            });
        }
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (id, v) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: i + 2,
                msg: "expected two fields".into(),
            })?;
            let v: f64 = v.parse().map_err(|_| Error::Parse {
                path: origin.to_string(),
                line: i + 2,
                msg: format!("label `{v}` is not numeric"),
            })?;
            ids.push(id.to_string());
            values.push(v);
        }
        WeakLabelVector::new(
            ids.into(),
            values,
            LabelConstruction::Provided {
                source: origin.to_string(),
            },
            None,
        )
    }

    /// Reorders this label onto `ids`; every id must be present.
    pub fn align_to(&self, ids: &Arc<[String]>) -> Result<Self> {
        if Arc::ptr_eq(ids, &self.transcript_ids) || ids[..] == self.transcript_ids[..] {
            return Ok(WeakLabelVector {
                transcript_ids: Arc::clone(ids),
                ..self.clone()
            });
        }
        let index: std::collections::HashMap<&str, usize> = self
            .transcript_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let values = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.values[i])
                    .ok_or_else(|| Error::Alignment(format!("no label for transcript `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        WeakLabelVector::new(
            Arc::clone(ids),
            values,
            self.construction.clone(),
            self.reference_contexts.clone(),
        )
    }
}

/// `y_i = late_i - early_i` on logTPM vectors.
pub fn build_contrast_label(
    transcript_ids: Arc<[String]>,
    late: &[f64],
    early: &[f64],
    reference_contexts: Option<(String, String)>,
) -> Result<WeakLabelVector> {
    if late.len() != early.len() {
        return Err(Error::Alignment(format!(
            "late has {} values, early has {}",
            late.len(),
            early.len()
        )));
    }
    let values = late.iter().zip(early).map(|(l, e)| l - e).collect();
    WeakLabelVector::new(
        transcript_ids,
        values,
        LabelConstruction::FixedContrast,
        reference_contexts,
    )
}

/// External-split label plus, for every transcript, the source transcripts
/// its value was averaged from.
#[derive(Debug, Clone)]
pub struct ExternalSplitTrace {
    pub label: WeakLabelVector,
    /// `true` for transcripts in half A.
    pub in_half_a: Vec<bool>,
    pub neighbors: Vec<Vec<usize>>,
}

pub fn build_external_split_label(
    reference_logtpm: &[f64],
    contrast: &WeakLabelVector,
    split_seed: u64,
    k: usize,
) -> Result<WeakLabelVector> {
    build_external_split_traced(reference_logtpm, contrast, split_seed, k).map(|t| t.label)
}

/// Seeded half split of `0..n`: returns membership in half A (size n/2).
pub fn split_halves(n: usize, split_seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_from(rng::derive_seed_str(split_seed, "external-split")));
    let mut in_a = vec![false; n];
    for &i in &order[..n / 2] {
        in_a[i] = true;
    }
    in_a
}

pub fn build_external_split_traced(
    reference_logtpm: &[f64],
    contrast: &WeakLabelVector,
    split_seed: u64,
    k: usize,
) -> Result<ExternalSplitTrace> {
    let n = contrast.len();
    if reference_logtpm.len() != n {
        return Err(Error::Alignment(format!(
            "reference has {} values, contrast has {n}",
            reference_logtpm.len()
        )));
    }
    if reference_logtpm.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite reference logTPM".into()));
    }
    if k == 0 || n < 2 * k {
        return Err(Error::Parameter(format!(
            "k = {k} needs 1 <= k <= n/2 (n = {n})"
        )));
    }

    let in_a = split_halves(n, split_seed);
    let pool_a = NeighborPool::new(reference_logtpm, (0..n).filter(|&i| in_a[i]));
    let pool_b = NeighborPool::new(reference_logtpm, (0..n).filter(|&i| !in_a[i]));

    let y = contrast.values();
    let mut values = Vec::with_capacity(n);
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let pool = if in_a[i] { &pool_b } else { &pool_a };
        let nn = pool.nearest(reference_logtpm[i], k);
        let sum: f64 = nn.iter().map(|&j| y[j]).sum();
        values.push(sum / k as f64);
        neighbors.push(nn);
    }

    let label = WeakLabelVector::new(
        Arc::clone(contrast.transcript_ids()),
        values,
        LabelConstruction::ExternalSplit { split_seed, k },
        contrast.reference_contexts().cloned(),
    )?;
    Ok(ExternalSplitTrace {
        label,
        in_half_a: in_a,
        neighbors,
    })
}

/// Candidates grouped by distinct reference value, ascending; each group's
/// indices ascending (index order is transcript-id order).
struct NeighborPool {
    values: Vec<f64>,
    groups: Vec<Vec<usize>>,
}

impl NeighborPool {
    fn new(reference: &[f64], members: impl Iterator<Item = usize>) -> Self {
        let mut idx: Vec<usize> = members.collect();
        idx.sort_by(|&a, &b| reference[a].total_cmp(&reference[b]).then(a.cmp(&b)));
        let mut values: Vec<f64> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in idx {
            if values.last() == Some(&reference[i]) {
                groups.last_mut().unwrap().push(i);
            } else {
                values.push(reference[i]);
                groups.push(vec![i]);
            }
        }
        NeighborPool { values, groups }
    }

    /// The `k` members closest to `q` by absolute difference, ties broken by
    /// index; returned in (distance, index) order.
    fn nearest(&self, q: f64, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        let mut right = self.values.partition_point(|&v| v < q);
        let mut left = right; // next group to the left is left - 1
        while out.len() < k {
            let dl = (left > 0).then(|| (q - self.values[left - 1]).abs());
            let dr = (right < self.values.len()).then(|| (q - self.values[right]).abs());
            let mut take: Vec<usize> = match (dl, dr) {
                (Some(a), Some(b)) if a == b => {
                    left -= 1;
                    right += 1;
                    let mut m = self.groups[left].clone();
                    m.extend_from_slice(&self.groups[right - 1]);
                    m.sort_unstable();
                    m
                }
                (Some(a), Some(b)) if a < b => {
                    left -= 1;
                    self.groups[left].clone()
                }
                (Some(_), None) => {
                    left -= 1;
                    self.groups[left].clone()
                }
                (_, Some(_)) => {
                    right += 1;
                    self.groups[right - 1].clone()
                }
                (None, None) => break,
            };
            take.truncate(k - out.len());
            out.extend(take);
        }
        out
    }
}
