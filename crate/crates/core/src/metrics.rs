//! Regression and rank metrics.
//!
//! Spearman correlation is computed as the Pearson correlation of average
//! ranks, which stays correct under ties. A constant input has no defined
//! rank correlation and is reported as [`Error::UndefinedMetric`] rather than
//! coerced to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// R², MAE and Spearman ρ for one evaluation. `spearman` and `r2` are `None`
/// when undefined on the evaluation rows (constant labels or predictions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub r2: Option<f64>,
    pub mae: f64,
    pub spearman: Option<f64>,
    pub n: usize,
}

impl MetricTriple {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self> {
        let mae = mae(y, yhat)?;
        let r2 = undefined_as_none(r2(y, yhat))?;
        let spearman = undefined_as_none(spearman(y, yhat))?;
        Ok(MetricTriple {
            r2,
            mae,
            spearman,
            n: y.len(),
        })
    }
}

/// Maps `UndefinedMetric` to `None`, passing other errors through.
pub fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_len {
        return Err(Error::Domain(format!(
            "need at least {min_len} values, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in metric input".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination, `1 - SS_res / SS_tot`. Negative when the
/// predictor is worse than the label mean.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 2)?;
    let ybar = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("r2 of constant labels".into()));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Ascending 1-based ranks; tied values receive the mean of their rank span.
///
/// Values must be finite (callers validate).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end; their mean:
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation; errors when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric(
            "correlation with a constant vector".into(),
        ));
    }
    // equal spreads (always the case for tie-free ranks of equal length)
    // avoid the rounding of the square roots, so identical or reversed
    // orderings give exactly ±1
    let denom = if saa == sbb { saa } else { saa.sqrt() * sbb.sqrt() };
    Ok((sab / denom).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (tie-aware).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}
