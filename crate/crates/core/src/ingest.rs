//! Transcript-quantification ingestion.
//!
//! Reads Salmon-style `quant.sf` tables, applies mapping-rate QC from a
//! sidecar metadata file and aligns the admitted contexts on the strict
//! intersection of their transcript ids. The aligned registry is the unit the
//! rest of the toolkit works on: every context exposes one row per shared
//! transcript, in the same (lexically sorted) order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{fmt_f64, read_to_string, write_atomic};

pub const QUANT_HEADER: &str = "Name\tLength\tEffectiveLength\tTPM\tNumReads";

/// Mapping-rate threshold (percent) below which a sample is excluded.
pub const DEFAULT_QC_THRESHOLD: f64 = 50.0;

const MANIFEST: &str = "contexts.tsv";
const MANIFEST_HEADER: &str = "context_id\tcell_line\ttimepoint_days\tpercent_mapped\tquant_file";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantRecord {
    pub transcript_id: String,
    pub length: u64,
    pub effective_length: f64,
    pub tpm: f64,
    pub num_reads: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub context_id: String,
    pub cell_line: String,
    pub timepoint_days: u32,
    pub percent_mapped: f64,
    /// Optional file name of the quantification table for this sample.
    pub quant: Option<String>,
}

impl SampleMeta {
    pub fn canonical_id(cell_line: &str, timepoint_days: u32) -> String {
        format!("{cell_line}_D{timepoint_days}")
    }
}

/// Aligned per-context quantifications.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextRegistry {
    contexts: BTreeMap<String, Vec<QuantRecord>>,
    shared_transcripts: Vec<String>,
    meta: BTreeMap<String, SampleMeta>,
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses the text of a quantification table. `origin` labels errors.
pub fn parse_quant_str(text: &str, origin: &str) -> Result<Vec<QuantRecord>> {
    let mut lines = text.split('\n').enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l.strip_suffix('\r').unwrap_or(l))
        .unwrap_or("");
    if header != QUANT_HEADER {
        return Err(Error::Format {
            path: origin.to_string(),
            msg: format!("expected header `{}`, found `{}`", QUANT_HEADER.replace('\t', "\\t"), header.replace('\t', "\\t")),
        });
    }

    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut pending_blank: Option<usize> = None;
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            // Only trailing blank lines are tolerated.
            pending_blank.get_or_insert(lineno);
            continue;
        }
        if let Some(blank) = pending_blank {
            return Err(parse_err(origin, blank, "blank line inside data section"));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                origin,
                lineno,
                format!("expected 5 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(parse_err(origin, lineno, "empty transcript id"));
        }
        let length: u64 = fields[1]
            .parse()
            .map_err(|_| parse_err(origin, lineno, format!("Length `{}` is not an integer", fields[1])))?;
        if length < 1 {
            return Err(parse_err(origin, lineno, "Length must be >= 1"));
        }
        let real = |name: &str, s: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(origin, lineno, format!("{name} `{s}` is not numeric")))?;
            if !v.is_finite() {
                return Err(parse_err(origin, lineno, format!("{name} is not finite")));
            }
            Ok(v)
        };
        let effective_length = real("EffectiveLength", fields[2])?;
        let tpm = real("TPM", fields[3])?;
        let num_reads = real("NumReads", fields[4])?;
        if effective_length <= 0.0 {
            return Err(parse_err(origin, lineno, "EffectiveLength must be > 0"));
        }
        if tpm < 0.0 {
            return Err(parse_err(origin, lineno, "TPM must be >= 0"));
        }
        if num_reads < 0.0 {
            return Err(parse_err(origin, lineno, "NumReads must be >= 0"));
        }
        if let Some(first) = seen.insert(id.to_string(), lineno) {
            return Err(Error::DuplicateId {
                path: origin.to_string(),
                id: format!("{id} (first seen line {first})"),
                line: lineno,
            });
        }
        records.push(QuantRecord {
            transcript_id: id.to_string(),
            length,
            effective_length,
            tpm,
            num_reads,
        });
    }
    Ok(records)
}

pub fn parse_quant_file(path: &Path) -> Result<Vec<QuantRecord>> {
    let text = read_to_string(path)?;
    parse_quant_str(&text, &path.display().to_string())
}

/// Serializes records in the quantification format (shortest round-trip
/// decimals).
pub fn serialize_quant(records: &[QuantRecord]) -> String {
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(QUANT_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.transcript_id,
            r.length,
            fmt_f64(r.effective_length),
            fmt_f64(r.tpm),
            fmt_f64(r.num_reads)
        );
    }
    out
}

/// True iff the sample's mapping rate reaches the threshold (boundary admits).
pub fn qc_admit(meta: &SampleMeta, threshold_pct: f64) -> bool {
    meta.percent_mapped >= threshold_pct
}

/// Parses a metadata sidecar: blocks of `key=value` lines separated by blank
/// lines, one block per sample. `#` starts a comment line.
pub fn parse_meta_str(text: &str, origin: &str) -> Result<Vec<SampleMeta>> {
    let fmt_err = |msg: String| Error::Format {
        path: origin.to_string(),
        msg,
    };
    let mut blocks: Vec<Vec<(usize, &str, &str)>> = vec![Vec::new()];
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !blocks.last().unwrap().is_empty() {
                blocks.push(Vec::new());
            }
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| fmt_err(format!("line {}: expected key=value", idx + 1)))?;
        blocks.last_mut().unwrap().push((idx + 1, k.trim(), v.trim()));
    }

    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for block in blocks.into_iter().filter(|b| !b.is_empty()) {
        let first_line = block[0].0;
        let mut kv: HashMap<&str, &str> = HashMap::new();
        for (line, k, v) in &block {
            if kv.insert(k, v).is_some() {
                return Err(fmt_err(format!("line {line}: repeated key `{k}`")));
            }
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| fmt_err(format!("sample starting line {first_line}: missing `{k}`")))
        };
        let context_id = get("context_id")?.to_string();
        let cell_line = get("cell_line")?.to_string();
        let timepoint_days: u32 = get("timepoint_days")?
            .parse()
            .map_err(|_| fmt_err(format!("{context_id}: timepoint_days must be a non-negative integer")))?;
        let percent_mapped: f64 = get("percent_mapped")?
            .parse()
            .map_err(|_| fmt_err(format!("{context_id}: percent_mapped is not numeric")))?;
        if !(0.0..=100.0).contains(&percent_mapped) {
            return Err(fmt_err(format!("{context_id}: percent_mapped outside [0, 100]")));
        }
        let canonical = SampleMeta::canonical_id(&cell_line, timepoint_days);
        if context_id != canonical {
            return Err(fmt_err(format!(
                "context_id `{context_id}` is not canonical (expected `{canonical}`)"
            )));
        }
        if !ids.insert(context_id.clone()) {
            return Err(fmt_err(format!("duplicate context_id `{context_id}`")));
        }
        out.push(SampleMeta {
            context_id,
            cell_line,
            timepoint_days,
            percent_mapped,
            quant: kv.get("quant").map(|s| s.to_string()),
        });
    }
    Ok(out)
}

pub fn parse_meta_file(path: &Path) -> Result<Vec<SampleMeta>> {
    let text = read_to_string(path)?;
    parse_meta_str(&text, &path.display().to_string())
}

/// Aligns contexts on the sorted intersection of their transcript ids.
pub fn align_contexts(contexts: BTreeMap<String, Vec<QuantRecord>>) -> Result<ContextRegistry> {
    if contexts.is_empty() {
        return Err(Error::Alignment("no contexts to align".into()));
    }
    let mut shared: Option<BTreeSet<String>> = None;
    for (ctx, records) in &contexts {
        let mut ids = BTreeSet::new();
        for r in records {
            if !ids.insert(r.transcript_id.clone()) {
                return Err(Error::DuplicateId {
                    path: ctx.clone(),
                    id: r.transcript_id.clone(),
                    line: 0,
                });
            }
        }
        shared = Some(match shared {
            None => ids,
            Some(prev) => prev.intersection(&ids).cloned().collect(),
        });
    }
    let shared: Vec<String> = shared.unwrap_or_default().into_iter().collect();
    if shared.is_empty() {
        return Err(Error::Alignment(
            "transcript intersection across contexts is empty".into(),
        ));
    }

    let aligned = contexts
        .into_iter()
        .map(|(ctx, records)| {
            let mut by_id: HashMap<String, QuantRecord> = records
                .into_iter()
                .map(|r| (r.transcript_id.clone(), r))
                .collect();
            let rows = shared
                .iter()
                .map(|id| by_id.remove(id).expect("id in intersection"))
                .collect();
            (ctx, rows)
        })
        .collect();

    Ok(ContextRegistry {
        contexts: aligned,
        shared_transcripts: shared,
        meta: BTreeMap::new(),
    })
}

impl ContextRegistry {
    /// Registry built directly from aligned TPM vectors (used by the
    /// synthetic generator). Lengths are filled with placeholder values.
    pub fn from_tpm(transcripts: Vec<String>, tpm: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut contexts = BTreeMap::new();
        for (ctx, values) in tpm {
            if values.len() != transcripts.len() {
                return Err(Error::Alignment(format!(
                    "context {ctx} has {} values for {} transcripts",
                    values.len(),
                    transcripts.len()
                )));
            }
            let records = transcripts
                .iter()
                .zip(values)
                .map(|(id, v)| QuantRecord {
                    transcript_id: id.clone(),
                    length: 1000,
                    effective_length: 1000.0,
                    tpm: v,
                    num_reads: 0.0,
                })
                .collect();
            contexts.insert(ctx, records);
        }
        align_contexts(contexts)
    }

    pub fn with_meta(mut self, meta: impl IntoIterator<Item = SampleMeta>) -> Self {
        for m in meta {
            if self.contexts.contains_key(&m.context_id) {
                self.meta.insert(m.context_id.clone(), m);
            }
        }
        self
    }

    pub fn shared_transcripts(&self) -> &[String] {
        &self.shared_transcripts
    }

    pub fn n_transcripts(&self) -> usize {
        self.shared_transcripts.len()
    }

    /// Context ids in sorted order; this is also the one-hot vocabulary.
    pub fn context_ids(&self) -> Vec<String> {
        self.contexts.keys().cloned().collect()
    }

    pub fn contains(&self, ctx: &str) -> bool {
        self.contexts.contains_key(ctx)
    }

    pub fn records(&self, ctx: &str) -> Option<&[QuantRecord]> {
        self.contexts.get(ctx).map(Vec::as_slice)
    }

    /// Record for one transcript of one context.
    pub fn record(&self, ctx: &str, transcript_id: &str) -> Option<&QuantRecord> {
        let idx = self
            .shared_transcripts
            .binary_search_by(|t| t.as_str().cmp(transcript_id))
            .ok()?;
        self.contexts.get(ctx).map(|rows| &rows[idx])
    }

    /// TPM column of a context, aligned to `shared_transcripts`.
    pub fn tpm(&self, ctx: &str) -> Result<Vec<f64>> {
        self.records(ctx)
            .map(|rows| rows.iter().map(|r| r.tpm).collect())
            .ok_or_else(|| Error::Setting(format!("context `{ctx}` is not registered")))
    }

    pub fn meta(&self, ctx: &str) -> Option<&SampleMeta> {
        self.meta.get(ctx)
    }

    /// Writes the registry as a manifest plus one aligned quant file per
    /// context. Returns the written paths.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut manifest = String::new();
        manifest.push_str(MANIFEST_HEADER);
        manifest.push('\n');
        for (ctx, rows) in &self.contexts {
            let file = format!("{ctx}.quant.sf");
            let path = dir.join("quant").join(&file);
            write_atomic(&path, serialize_quant(rows).as_bytes())?;
            written.push(path);
            let (cell, day, pct) = match self.meta.get(ctx) {
                Some(m) => (
                    m.cell_line.clone(),
                    m.timepoint_days.to_string(),
                    fmt_f64(m.percent_mapped),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            let _ = writeln!(manifest, "{ctx}\t{cell}\t{day}\t{pct}\tquant/{file}");
        }
        let mpath = dir.join(MANIFEST);
        write_atomic(&mpath, manifest.as_bytes())?;
        written.push(mpath);
        Ok(written)
    }

    /// Loads a registry written by [`ContextRegistry::write_dir`]. Returns the
    /// registry and the list of files read (for fingerprinting).
    pub fn read_dir(dir: &Path) -> Result<(Self, Vec<PathBuf>)> {
        let mpath = dir.join(MANIFEST);
        let text = read_to_string(&mpath)?;
        let origin = mpath.display().to_string();
        let mut lines = text.lines();
        if lines.next().map(|l| l.trim_end_matches('\r')) != Some(MANIFEST_HEADER) {
            return Err(Error::Format {
                path: origin,
                msg: "bad registry manifest header".into(),
            });
        }
        let mut files = vec![mpath.clone()];
        let mut contexts = BTreeMap::new();
        let mut metas = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(parse_err(&origin, i + 2, "expected 5 manifest fields"));
            }
            let qpath = dir.join(f[4]);
            let records = parse_quant_file(&qpath)?;
            files.push(qpath);
            if !f[1].is_empty() {
                let timepoint_days = f[2]
                    .parse()
                    .map_err(|_| parse_err(&origin, i + 2, "bad timepoint_days"))?;
                let percent_mapped = f[3]
                    .parse()
                    .map_err(|_| parse_err(&origin, i + 2, "bad percent_mapped"))?;
                metas.push(SampleMeta {
                    context_id: f[0].to_string(),
                    cell_line: f[1].to_string(),
                    timepoint_days,
                    percent_mapped,
                    quant: None,
                });
            }
            contexts.insert(f[0].to_string(), records);
        }
        let reg = align_contexts(contexts)?.with_meta(metas);
        Ok((reg, files))
    }
}
