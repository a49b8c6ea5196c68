//! Command-line driver: `ingest`, `run` and `synth`.
//!
//! Every subcommand returns an exit code instead of panicking so the binary
//! and the integration tests share one code path. The code map is fixed:
//! 0 ok, 1 other failure, 2 format or parse error, 3 alignment error,
//! 4 setting error, 5 failed check.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use driftlab_core::features::FeatureSet;
use driftlab_core::ingest::{self, ContextRegistry, QuantRecord, SampleMeta};
use driftlab_core::io_util::{file_fingerprint, fmt_f64, read_to_string, write_atomic};
use driftlab_core::labels::{WeakLabelVector, DEFAULT_NEIGHBORS};
use driftlab_core::models::{Family, ModelSpec};
use driftlab_core::protocol::{self, Dataset, LabelSpec, Mitigation, PerfMetric, RunConfig, Setting, SettingName};
use driftlab_core::report::{InputFingerprint, Provenance, RunReport, REPORT_FILE};
use driftlab_core::rng;
use driftlab_core::synthetic::{self, Preset};
use driftlab_core::{Error, CONFIG_SCHEMA_VERSION, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_ALIGNMENT: i32 = 3;
pub const EXIT_SETTING: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

pub const ADMISSION_LOG: &str = "admission.tsv";

#[derive(Debug, Parser)]
#[command(name = "driftlab", about = "Weak-supervision evaluation under structured distribution shift")]
pub struct Cli {
    /// Worker threads for parallel fitting (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse quantification files, apply mapping-rate QC and write an aligned registry.
    Ingest(IngestArgs),
    /// Run the evaluation grid and diagnostics on a registry.
    Run(RunArgs),
    /// Generate a synthetic preset and run its checks.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub quant: Vec<PathBuf>,
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long, default_value_t = ingest::DEFAULT_QC_THRESHOLD)]
    pub qc_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub registry: PathBuf,
    /// Plain-text `key=value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// fixed | external | provided
    #[arg(long)]
    pub label_mode: Option<String>,
    /// `transcript_id<TAB>y` table used as the label (implies `provided`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub label_late: Option<String>,
    #[arg(long)]
    pub label_early: Option<String>,
    /// Neighbours per transcript for the external-split label.
    #[arg(long)]
    pub k: Option<usize>,
    /// none | onehot | standardize
    #[arg(long)]
    pub mitigation: Option<String>,
    /// Comma-separated subset of ridge,forest,gbt.
    #[arg(long)]
    pub models: Option<String>,
    /// Comma-separated subset of logtpm,rank,both.
    #[arg(long)]
    pub features: Option<String>,
    /// Run boosting on every feature set, not only logTPM.
    #[arg(long)]
    pub gbt_all_features: bool,
    /// Performance metric for the shift-score correlation: spearman | r2.
    #[arg(long)]
    pub perf_metric: Option<String>,
    /// In-domain context.
    #[arg(long)]
    pub in_domain: Option<String>,
    /// Cross-domain pair as TRAIN:TEST.
    #[arg(long)]
    pub cross: Option<String>,
    /// Temporal pair as TRAIN:TEST.
    #[arg(long)]
    pub temporal: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the report and table exports.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// theorem1 | theorem2 | paper-pattern
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Exit code for a core error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Format { .. } | Error::Parse { .. } | Error::DuplicateId { .. } | Error::Config(_) => EXIT_FORMAT,
        Error::Alignment(_) => EXIT_ALIGNMENT,
        Error::Setting(_) => EXIT_SETTING,
        _ => EXIT_OTHER,
    }
}

pub fn version_string() -> String {
    format!("{VERSION} (config schema {CONFIG_SCHEMA_VERSION})")
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let version: &'static str = Box::leak(version_string().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FORMAT } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_FORMAT;
        }
    };
    if let Some(n) = cli.threads {
        // the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Run(a) => cmd_run(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), Error> {
    if path.exists() && !force {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                "output exists; pass --force to overwrite",
            ),
        });
    }
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Finds the metadata block for a quant file: by its `quant` key when given,
/// otherwise by file stem equal to the context id.
fn meta_for<'a>(path: &Path, metas: &'a [SampleMeta]) -> Option<&'a SampleMeta> {
    let name = file_name(path);
    let shown = path.display().to_string();
    metas
        .iter()
        .find(|m| {
            m.quant
                .as_deref()
                .is_some_and(|q| q == name || q == shown || Path::new(q).file_name() == path.file_name())
        })
        .or_else(|| {
            let stem = name.strip_suffix(".quant.sf").or_else(|| name.strip_suffix(".sf")).unwrap_or(&name);
            metas.iter().find(|m| m.quant.is_none() && m.context_id == stem)
        })
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<i32, Error> {
    refuse_overwrite(&a.out.join("contexts.tsv"), a.force)?;
    // parse everything before writing anything
    let metas = ingest::parse_meta_file(&a.meta)?;
    let mut parsed: Vec<(PathBuf, Vec<QuantRecord>, SampleMeta)> = Vec::new();
    for q in &a.quant {
        let records = ingest::parse_quant_file(q)?;
        let meta = meta_for(q, &metas).ok_or_else(|| Error::Format {
            path: a.meta.display().to_string(),
            msg: format!("no metadata block for {}", q.display()),
        })?;
        if parsed.iter().any(|(_, _, m)| m.context_id == meta.context_id) {
            return Err(Error::DuplicateId {
                path: a.meta.display().to_string(),
                id: meta.context_id.clone(),
                line: 0,
            });
        }
        parsed.push((q.clone(), records, meta.clone()));
    }

    let mut log = String::from("context_id\tquant_file\tpercent_mapped\tstatus\treason\n");
    let mut admitted = BTreeMap::new();
    let mut admitted_meta = Vec::new();
    for (path, records, meta) in parsed {
        let ok = ingest::qc_admit(&meta, a.qc_threshold);
        let (status, reason) = if ok {
            ("admitted", String::new())
        } else {
            (
                "excluded",
                format!(
                    "qc_failed: percent_mapped {} < {}",
                    fmt_f64(meta.percent_mapped),
                    fmt_f64(a.qc_threshold)
                ),
            )
        };
        log.push_str(&format!(
            "{}\t{}\t{}\t{status}\t{reason}\n",
            meta.context_id,
            path.display(),
            fmt_f64(meta.percent_mapped)
        ));
        if ok {
            admitted.insert(meta.context_id.clone(), records);
            admitted_meta.push(meta);
        }
    }
    let registry = ingest::align_contexts(admitted)?.with_meta(admitted_meta);
    registry.write_dir(&a.out)?;
    write_atomic(&a.out.join(ADMISSION_LOG), log.as_bytes())?;
    println!(
        "registry: {} contexts, {} shared transcripts -> {}",
        registry.context_ids().len(),
        registry.n_transcripts(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

/// Reads a `key=value` config file. Blank lines and `#` comments are ignored.
pub fn parse_config(text: &str, origin: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        let key = k.trim().replace('_', "-");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: format!("unknown key `{}`", k.trim()),
            });
        }
        if out.insert(key, v.trim().to_string()).is_some() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: format!("repeated key `{}`", k.trim()),
            });
        }
    }
    Ok(out)
}

const CONFIG_KEYS: &[&str] = &[
    "label-mode",
    "labels",
    "label-late",
    "label-early",
    "k",
    "mitigation",
    "models",
    "features",
    "gbt-all-features",
    "perf-metric",
    "in-domain",
    "cross",
    "temporal",
    "seed",
];

/// Effective run configuration: file values overlaid by flags, with defaults
/// filled in. Every key appears in the report's provenance.
pub fn effective_config(a: &RunArgs) -> Result<BTreeMap<String, String>, Error> {
    let mut cfg = match &a.config {
        Some(p) => parse_config(&read_to_string(p)?, &p.display().to_string())?,
        None => BTreeMap::new(),
    };
    let flags: [(&str, Option<String>); 13] = [
        ("label-mode", a.label_mode.clone()),
        ("labels", a.labels.as_ref().map(|p| p.display().to_string())),
        ("label-late", a.label_late.clone()),
        ("label-early", a.label_early.clone()),
        ("k", a.k.map(|k| k.to_string())),
        ("mitigation", a.mitigation.clone()),
        ("models", a.models.clone()),
        ("features", a.features.clone()),
        ("gbt-all-features", a.gbt_all_features.then(|| "true".to_string())),
        ("perf-metric", a.perf_metric.clone()),
        ("in-domain", a.in_domain.clone()),
        ("cross", a.cross.clone()),
        ("temporal", a.temporal.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.insert(k.to_string(), v);
        }
    }
    if let Some(s) = a.seed {
        cfg.insert("seed".into(), s.to_string());
    }
    let defaults = [
        ("label-mode", if cfg.contains_key("labels") { "provided" } else { "fixed" }),
        ("label-late", "HEK293FT_D7"),
        ("label-early", "HEK293FT_D2"),
        ("mitigation", "none"),
        ("models", "ridge,forest"),
        ("features", "logtpm,rank,both"),
        ("gbt-all-features", "false"),
        ("perf-metric", "spearman"),
        ("in-domain", "HEK293FT_D2"),
        ("cross", "K562_D2:HEK293FT_D2"),
        ("temporal", "HEK293FT_D2:HEK293FT_D7"),
        ("seed", "0"),
    ];
    for (k, v) in defaults {
        cfg.entry(k.to_string()).or_insert_with(|| v.to_string());
    }
    if cfg["label-mode"] == "external" {
        cfg.entry("k".into()).or_insert_with(|| DEFAULT_NEIGHBORS.to_string());
    }
    Ok(cfg)
}

fn bad_config(msg: String) -> Error {
    Error::Config(msg)
}

fn parse_pair(v: &str, key: &str) -> Result<(String, String), Error> {
    v.split_once(':')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .ok_or_else(|| bad_config(format!("{key} must be TRAIN:TEST, got `{v}`")))
}

fn parse_list<T: std::str::FromStr<Err = Error>>(v: &str) -> Result<Vec<T>, Error> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.parse()).collect()
}

fn parse_bool(v: &str, key: &str) -> Result<bool, Error> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad_config(format!("{key} must be true or false"))),
    }
}

/// Builds the protocol configuration and label specification.
pub fn build_run(cfg: &BTreeMap<String, String>) -> Result<(RunConfig, LabelSpec), Error> {
    let seed: u64 = cfg["seed"]
        .parse()
        .map_err(|_| bad_config(format!("seed `{}` is not an unsigned integer", cfg["seed"])))?;
    let families: Vec<Family> = parse_list(&cfg["models"])?;
    let mut features: Vec<FeatureSet> = parse_list(&cfg["features"])?;
    features.sort();
    features.dedup();
    if families.is_empty() || features.is_empty() {
        return Err(bad_config("need at least one model and one feature set".into()));
    }
    let mut model_grid = Vec::new();
    for fam in families {
        if model_grid.iter().any(|s: &ModelSpec| s.family() == fam) {
            continue;
        }
        let model_seed = match fam {
            Family::Ridge => seed,
            Family::Forest => rng::derive_seed_str(seed, "forest"),
            Family::Gbt => rng::derive_seed_str(seed, "gbt"),
        };
        model_grid.push(ModelSpec::default_for(fam, model_seed));
    }
    let (ct, cs) = parse_pair(&cfg["cross"], "cross")?;
    let (tt, ts) = parse_pair(&cfg["temporal"], "temporal")?;
    let settings = vec![
        Setting::in_domain(&cfg["in-domain"], rng::derive_seed_str(seed, "split")),
        Setting::transfer(SettingName::CrossDomain, &ct, &cs),
        Setting::transfer(SettingName::Temporal, &tt, &ts),
    ];
    let shift_metric = match cfg["perf-metric"].as_str() {
        "spearman" => PerfMetric::Spearman,
        "r2" => PerfMetric::R2,
        other => return Err(bad_config(format!("unknown performance metric `{other}`"))),
    };
    let run = RunConfig {
        settings,
        model_grid,
        feature_grid: features,
        mitigation: cfg["mitigation"].parse::<Mitigation>()?,
        master_seed: seed,
        gbt_all_features: parse_bool(&cfg["gbt-all-features"], "gbt-all-features")?,
        shift_metric,
    };

    let late = cfg["label-late"].clone();
    let early = cfg["label-early"].clone();
    let label = match cfg["label-mode"].as_str() {
        "fixed" => LabelSpec::FixedContrast { late, early },
        "external" => {
            let k: usize = cfg["k"]
                .parse()
                .map_err(|_| bad_config(format!("k `{}` is not a positive integer", cfg["k"])))?;
            LabelSpec::ExternalSplit {
                late,
                early,
                split_seed: seed,
                k,
            }
        }
        "provided" => {
            let path = cfg
                .get("labels")
                .ok_or_else(|| bad_config("label-mode provided needs --labels".into()))?;
            let text = read_to_string(Path::new(path))?;
            LabelSpec::Provided(WeakLabelVector::from_tsv(&text, path)?)
        }
        other => return Err(bad_config(format!("unknown label mode `{other}`"))),
    };
    Ok((run, label))
}

pub fn cmd_run(a: &RunArgs) -> Result<i32, Error> {
    let report_path = a.out.join(REPORT_FILE);
    refuse_overwrite(&report_path, a.force)?;
    let cfg = effective_config(a)?;
    let (registry, files) = ContextRegistry::read_dir(&a.registry)?;
    let (run_cfg, label_spec) = build_run(&cfg)?;

    let mut inputs = Vec::new();
    for f in &files {
        let rel = f.strip_prefix(&a.registry).unwrap_or(f);
        inputs.push(InputFingerprint {
            path: format!("registry/{}", rel.display()),
            sha256: file_fingerprint(f)?,
        });
    }
    if let Some(p) = cfg.get("labels").filter(|_| cfg["label-mode"] == "provided") {
        inputs.push(InputFingerprint {
            path: p.clone(),
            sha256: file_fingerprint(Path::new(p))?,
        });
    }
    if let Some(p) = &a.config {
        inputs.push(InputFingerprint {
            path: p.display().to_string(),
            sha256: file_fingerprint(p)?,
        });
    }

    let data = Dataset::build(registry, &label_spec)?;
    let results = protocol::run_all(&data, &run_cfg)?;
    let provenance = Provenance::new(&run_cfg, &data, cfg, inputs);
    let report = RunReport::new(results, provenance);
    data.label.export(&a.out.join("labels.tsv"))?;
    report.emit(&a.out)?;
    let failed = report.eval_records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} eval records ({failed} failed){} -> {}",
        report.eval_records.len(),
        if report.partial { ", partial" } else { "" },
        report_path.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32, Error> {
    let preset: Preset = a.preset.parse()?;
    refuse_overwrite(&a.out.join("checks.json"), a.force)?;
    let report = synthetic::run_preset(preset, a.seed, &a.out)?;
    for c in &report.checks {
        println!(
            "{} {} (measured {}, threshold {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        );
    }
    println!("{}: {}", preset.as_str(), if report.passed { "pass" } else { "fail" });
    Ok(if report.passed { EXIT_OK } else { EXIT_CHECK })
}
