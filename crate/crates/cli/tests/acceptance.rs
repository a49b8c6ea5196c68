//! Acceptance run: one PASS/FAIL line per criterion, each with a pinned
//! tolerance and a wall-clock budget. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use driftlab_core::diagnostics::{stability_diffs, FeatureLabelCorr};
use driftlab_core::features::FeatureSet;
use driftlab_core::metrics::spearman;
use driftlab_core::models::Family;
use driftlab_core::protocol::SettingName;
use driftlab_core::report::RunReport;
use tempfile::TempDir;

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

#[path = "../../core/tests/support/invariants.rs"]
mod invariants;

/// Reference feature-label correlations and the stability values derived
/// from them.
const REFERENCE_RHO: [(&str, f64); 3] = [("K562_D2", -0.282), ("HEK293FT_D2", -0.468), ("HEK293FT_D7", -0.001)];
const STABILITY_CROSS: f64 = 0.186;
const STABILITY_TEMPORAL: f64 = 0.468;
const STABILITY_EXACT_TOL: f64 = 1e-12;
const STABILITY_TEMPORAL_TOL: f64 = 0.002;

const NOISELESS_AGREEMENT_MIN: f64 = 0.999;
const NOISY_AGREEMENT_MIN: f64 = 0.9;
const AGREEMENT_MONOTONE_TOL: f64 = 0.02;

const SHIFT_CORR_MAX: f64 = -0.5;
const RANK_RHO_AT_ZERO: f64 = 1.0;

const TEMPORAL_RHO_MAX: f64 = 0.2;
const TEMPORAL_R2_MAX: f64 = 0.0;

const SEED: u64 = 0;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    title: &'static str,
    budget: Duration,
    check: fn(&Path) -> Outcome,
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_driftlab"))
}

fn run_bin(args: &[&str]) -> Result<(), String> {
    let o = bin().args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "driftlab {} exited {:?}: {}",
            args.join(" "),
            o.status.code(),
            String::from_utf8_lossy(&o.stderr).trim()
        ))
    }
}

fn synth(preset: &str, work: &Path) -> Result<PathBuf, String> {
    let out = work.join(preset);
    run_bin(&["synth", "--preset", preset, "--seed", &SEED.to_string(), "--out", out.to_str().unwrap(), "--force"])?;
    Ok(out)
}

fn read_tsv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty table")?.split('\t').collect();
    Ok(lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split('\t').map(str::to_string)).collect())
        .collect())
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    row[key].parse().map_err(|_| format!("{key} = `{}` is not numeric", row[key]))
}

fn table_arithmetic(_: &Path) -> Outcome {
    let corrs: Vec<FeatureLabelCorr> = REFERENCE_RHO
        .iter()
        .map(|(ctx, rho)| FeatureLabelCorr {
            context_id: ctx.to_string(),
            feature_name: "logTPM".into(),
            rho: Some(*rho),
            n: 0,
        })
        .collect();
    let pairs = [
        ("K562_D2".to_string(), "HEK293FT_D2".to_string()),
        ("HEK293FT_D2".to_string(), "HEK293FT_D7".to_string()),
    ];
    let d = stability_diffs(&corrs, &pairs);
    let (cross, temporal) = (d[0].value, d[1].value);
    if (cross - STABILITY_CROSS).abs() > STABILITY_EXACT_TOL {
        return Err(format!("cross stability {cross} != {STABILITY_CROSS}"));
    }
    if (temporal - STABILITY_TEMPORAL).abs() > STABILITY_TEMPORAL_TOL {
        return Err(format!("temporal stability {temporal} not within {STABILITY_TEMPORAL_TOL} of {STABILITY_TEMPORAL}"));
    }
    Ok(format!("cross {cross:.3}, temporal {temporal:.3}"))
}

fn metric_oracles(_: &Path) -> Outcome {
    oracle::metrics_match_brute_force_on_random_pairs();
    oracle::feature_label_corr_matches_brute_force();
    Ok("1000 pairs within 1e-12".into())
}

fn ridge_oracle(_: &Path) -> Outcome {
    oracle::ridge_matches_dense_normal_equations();
    Ok("100 problems within 1e-8".into())
}

fn tree_oracles(_: &Path) -> Outcome {
    oracle::depth_one_tree_matches_exhaustive_split();
    oracle::gbt_matches_stagewise_reference();
    Ok("100 stumps exact, 20 boosting fixtures within 1e-8, stage MSE non-increasing".into())
}

fn onehot_no_op(_: &Path) -> Outcome {
    invariants::onehot_is_a_no_op(SEED);
    Ok("predictions and metric rows within 1e-9".into())
}

fn theorem1(work: &Path) -> Outcome {
    let out = synth("theorem1", work)?;
    let rows = read_tsv(&out.join("agreement_curve.tsv"))?;
    let curve = |case: &str| -> Result<Vec<(usize, f64)>, String> {
        rows.iter()
            .filter(|r| r["case"] == case)
            .map(|r| Ok((r["n"].parse().map_err(|_| "bad n")?, num(r, "agreement")?)))
            .collect()
    };
    let noiseless = curve("noiseless")?;
    let noisy = curve("noisy")?;
    if noiseless.is_empty() || noisy.is_empty() {
        return Err("agreement curve is missing a case".into());
    }
    for (n, a) in &noiseless {
        if *n >= 50 && *a < NOISELESS_AGREEMENT_MIN {
            return Err(format!("noiseless agreement {a} at n = {n}"));
        }
    }
    for w in noisy.windows(2) {
        if w[1].1 < w[0].1 - AGREEMENT_MONOTONE_TOL {
            return Err(format!("noisy agreement drops {} -> {} at n = {}", w[0].1, w[1].1, w[1].0));
        }
    }
    let at_5000 = noisy.iter().find(|(n, _)| *n == 5000).ok_or("no n = 5000 point")?.1;
    if at_5000 < NOISY_AGREEMENT_MIN {
        return Err(format!("noisy agreement {at_5000} at n = 5000"));
    }
    Ok(format!("noisy agreement at n = 5000: {at_5000:.4}"))
}

fn theorem2(work: &Path) -> Outcome {
    let out = synth("theorem2", work)?;
    let rows = read_tsv(&out.join("drift_table.tsv"))?;
    let mut notes = Vec::new();
    for family in [Family::Ridge, Family::Forest] {
        let fam: Vec<_> = rows.iter().filter(|r| r["family"] == family.as_str()).collect();
        if fam.len() != 6 {
            return Err(format!("{}: expected 6 delta rows, got {}", family.as_str(), fam.len()));
        }
        let transfer: Vec<f64> = fam.iter().map(|r| num(r, "transfer_rho")).collect::<Result<_, _>>()?;
        let shift: Vec<f64> = fam.iter().map(|r| num(r, "shift_magnitude")).collect::<Result<_, _>>()?;
        for w in transfer.windows(2) {
            if w[1] > w[0] {
                return Err(format!("{}: transfer rho rises {} -> {}", family.as_str(), w[0], w[1]));
            }
        }
        let rank0 = num(fam[0], "rank_rho")?;
        if num(fam[0], "delta")? != 0.0 || rank0 != RANK_RHO_AT_ZERO {
            return Err(format!("{}: rank_rho at delta 0 is {rank0}", family.as_str()));
        }
        let rho = spearman(&shift, &transfer).map_err(|e| e.to_string())?;
        if rho > SHIFT_CORR_MAX {
            return Err(format!("{}: spearman(shift, transfer) = {rho}", family.as_str()));
        }
        notes.push(format!("{} {rho:.3}", family.as_str()));
    }
    Ok(format!("spearman(shift, transfer): {}", notes.join(", ")))
}

fn paper_pattern(work: &Path) -> Outcome {
    let out = synth("paper-pattern", work)?;
    let text = fs::read_to_string(out.join("report").join("report.json")).map_err(|e| e.to_string())?;
    let report = RunReport::parse(&text).map_err(|e| e.to_string())?;
    let mut cells = 0;
    for family in [Family::Ridge, Family::Forest, Family::Gbt] {
        for fs in FeatureSet::ALL {
            let get = |name: SettingName| {
                report
                    .eval_records
                    .iter()
                    .find(|r| r.setting == name && r.family == family && r.feature_set == fs)
                    .and_then(|r| r.metrics.clone())
                    .ok_or_else(|| format!("{}/{fs}: no {} metrics", family.as_str(), name.as_str()))
            };
            let (ind, cross, temp) = (get(SettingName::InDomain)?, get(SettingName::CrossDomain)?, get(SettingName::Temporal)?);
            let r2 = |m: &driftlab_core::metrics::MetricTriple| m.r2.ok_or("undefined R2".to_string());
            let (a, b, c) = (r2(&ind)?, r2(&cross)?, r2(&temp)?);
            if !(a > b && b > c) {
                return Err(format!("{}/{fs}: R2 ordering {a} > {b} > {c} fails", family.as_str()));
            }
            let rho = temp.spearman.ok_or("undefined temporal spearman")?;
            if rho > TEMPORAL_RHO_MAX || c > TEMPORAL_R2_MAX {
                return Err(format!("{}/{fs}: temporal rho {rho}, R2 {c}", family.as_str()));
            }
            cells += 1;
        }
    }
    Ok(format!("{cells} family/feature combinations"))
}

fn leakage(_: &Path) -> Outcome {
    let reads = invariants::temporal_fit_reads(SEED);
    if reads != 0 {
        return Err(format!("{reads} test-context reads during temporal fits"));
    }
    oracle::external_split_matches_brute_force_neighbors();
    Ok("0 test reads while fitting; no self-neighbours on 1000 transcripts".into())
}

fn determinism(work: &Path) -> Outcome {
    let registry = work.join("paper-pattern").join("registry");
    if !registry.join("contexts.tsv").exists() {
        synth("paper-pattern", work)?;
    }
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = work.join(format!("run-threads-{threads}"));
        run_bin(&[
            "--threads", threads, "run", "--registry", registry.to_str().unwrap(), "--seed", "3",
            "--out", out.to_str().unwrap(), "--force",
        ])?;
        outputs.push(out);
    }
    let mut names: Vec<String> = fs::read_dir(&outputs[0])
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in &names {
        let a = fs::read(outputs[0].join(name)).map_err(|e| e.to_string())?;
        let b = fs::read(outputs[1].join(name)).map_err(|e| format!("{name}: {e}"))?;
        if a != b {
            return Err(format!("{name} differs between --threads 1 and --threads 4"));
        }
    }
    Ok(format!("{} files byte-identical", names.len()))
}

fn monotone_invariance(_: &Path) -> Outcome {
    invariants::representations_share_spearman(200, SEED);
    Ok("200 fixtures within 1e-12".into())
}

fn main() {
    let criteria = [
        Criterion { id: 1, title: "table arithmetic", budget: Duration::from_secs(1), check: table_arithmetic },
        Criterion { id: 2, title: "metric oracles", budget: Duration::from_secs(10), check: metric_oracles },
        Criterion { id: 3, title: "ridge oracle", budget: Duration::from_secs(30), check: ridge_oracle },
        Criterion { id: 4, title: "tree oracles", budget: Duration::from_secs(120), check: tree_oracles },
        Criterion { id: 5, title: "context one-hot no-op", budget: Duration::from_secs(10), check: onehot_no_op },
        Criterion { id: 6, title: "ranking consistency", budget: Duration::from_secs(60), check: theorem1 },
        Criterion { id: 7, title: "shift-score sign", budget: Duration::from_secs(120), check: theorem2 },
        Criterion { id: 8, title: "paper pattern", budget: Duration::from_secs(180), check: paper_pattern },
        Criterion { id: 9, title: "leakage invariants", budget: Duration::from_secs(10), check: leakage },
        Criterion { id: 10, title: "determinism", budget: Duration::from_secs(60), check: determinism },
        Criterion { id: 11, title: "monotone invariance", budget: Duration::from_secs(10), check: monotone_invariance },
    ];
    let work = TempDir::new().expect("temporary directory");
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| (c.check)(work.path()))).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took <= c.budget {
                Ok(msg)
            } else {
                Err(format!("took {took:.1?}, budget {:?}", c.budget))
            }
        });
        match outcome {
            Ok(msg) => println!("PASS criterion {}: {} ({msg}; {took:.2?})", c.id, c.title),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {}: {} ({msg}; {took:.2?})", c.id, c.title);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
