use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::cholesky_solve;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeSpec {
    pub alpha: f64,
}

impl Default for RidgeSpec {
    fn default() -> Self {
        RidgeSpec { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeParams {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// Ridge with an unpenalized intercept: columns and labels are centered, then
/// `(XcᵀXc + αI) w = Xcᵀ yc` is solved directly and the intercept is
/// recovered as `ȳ - w·x̄`.
pub(crate) fn fit(x: ArrayView2<f64>, y: &[f64], spec: &RidgeSpec) -> Result<RidgeParams> {
    let (n, d) = x.dim();
    if !(spec.alpha >= 0.0) || !spec.alpha.is_finite() {
        return Err(Error::Parameter(format!("ridge alpha must be >= 0, got {}", spec.alpha)));
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    if d == 0 {
        return Ok(RidgeParams {
            coefficients: Vec::new(),
            intercept: ybar,
        });
    }
    let xbar = x.mean_axis(Axis(0)).expect("n >= 1");
    let xc: Array2<f64> = &x - &xbar.view().insert_axis(Axis(0));
    let yc: Array1<f64> = y.iter().map(|v| v - ybar).collect();

    let mut gram = xc.t().dot(&xc);
    for j in 0..d {
        gram[[j, j]] += spec.alpha;
    }
    let rhs = xc.t().dot(&yc);
    let w = cholesky_solve(&gram, &rhs)?;
    let intercept = ybar - w.dot(&xbar);
    Ok(RidgeParams {
        coefficients: w.to_vec(),
        intercept,
    })
}

pub(crate) fn predict(params: &RidgeParams, x: ArrayView2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|row| {
            params.intercept
                + row
                    .iter()
                    .zip(&params.coefficients)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect()
}
