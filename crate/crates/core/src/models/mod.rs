//! Regression families with fixed hyperparameters and normalized importances.
//!
//! Importances are reported as a probability vector over the feature columns:
//! `|w_j|` for ridge, accumulated squared-error reduction for the tree
//! ensembles. When a model assigns no importance at all (constant target,
//! all-zero coefficients) the vector is uniform and `degenerate_importance`
//! is set.

mod forest;
mod gbt;
pub mod linalg;
mod ridge;
pub mod tree;

use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use forest::{ForestParams, ForestSpec};
pub use gbt::{GbtParams, GbtSpec};
pub use ridge::{RidgeParams, RidgeSpec};

use crate::error::{Error, Result};
use crate::io_util::{read_to_string, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    Ridge,
    Forest,
    Gbt,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Ridge => "ridge",
            Family::Forest => "forest",
            Family::Gbt => "gbt",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ridge" => Ok(Family::Ridge),
            "forest" | "rf" | "randomforest" => Ok(Family::Forest),
            "gbt" | "xgboost" | "boosting" => Ok(Family::Gbt),
            other => Err(Error::Config(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelSpec {
    Ridge(RidgeSpec),
    Forest(ForestSpec),
    Gbt(GbtSpec),
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Ridge(_) => Family::Ridge,
            ModelSpec::Forest(_) => Family::Forest,
            ModelSpec::Gbt(_) => Family::Gbt,
        }
    }

    /// Default hyperparameters for a family, seeded with `seed`.
    pub fn default_for(family: Family, seed: u64) -> Self {
        match family {
            Family::Ridge => ModelSpec::Ridge(RidgeSpec::default()),
            Family::Forest => ModelSpec::Forest(ForestSpec {
                seed,
                ..ForestSpec::default()
            }),
            Family::Gbt => ModelSpec::Gbt(GbtSpec {
                seed,
                ..GbtSpec::default()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FittedParams {
    Ridge(RidgeParams),
    Forest(ForestParams),
    Gbt(GbtParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    /// Non-negative, sums to 1 (empty when there are no features).
    pub importance: Vec<f64>,
    pub degenerate_importance: bool,
    pub params: FittedParams,
}

fn validate_xy(x: ArrayView2<f64>, y: &[f64], names: &[String]) -> Result<()> {
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(Error::Schema(format!("{n} rows but {} labels", y.len())));
    }
    if names.len() != d {
        return Err(Error::Schema(format!("{d} columns but {} feature names", names.len())));
    }
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 training rows, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in training data".into()));
    }
    Ok(())
}

/// Normalizes raw importances to sum to one; falls back to uniform.
pub fn normalize_importance(raw: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = raw.iter().sum();
    if raw.is_empty() {
        return (Vec::new(), true);
    }
    if !(total > 0.0) || !total.is_finite() {
        let u = 1.0 / raw.len() as f64;
        return (vec![u; raw.len()], true);
    }
    (raw.iter().map(|v| v / total).collect(), false)
}

fn finish(spec: ModelSpec, names: &[String], raw: &[f64], params: FittedParams) -> TrainedModel {
    let (importance, degenerate_importance) = normalize_importance(raw);
    TrainedModel {
        spec,
        feature_names: names.to_vec(),
        importance,
        degenerate_importance,
        params,
    }
}

pub fn fit_ridge(x: ArrayView2<f64>, y: &[f64], names: &[String], spec: RidgeSpec) -> Result<TrainedModel> {
    validate_xy(x, y, names)?;
    let params = ridge::fit(x, y, &spec)?;
    let raw: Vec<f64> = params.coefficients.iter().map(|w| w.abs()).collect();
    Ok(finish(ModelSpec::Ridge(spec), names, &raw, FittedParams::Ridge(params)))
}

pub fn fit_forest(x: ArrayView2<f64>, y: &[f64], names: &[String], spec: ForestSpec) -> Result<TrainedModel> {
    validate_xy(x, y, names)?;
    let (params, raw) = forest::fit(x, y, &spec)?;
    Ok(finish(ModelSpec::Forest(spec), names, &raw, FittedParams::Forest(params)))
}

pub fn fit_gbt(x: ArrayView2<f64>, y: &[f64], names: &[String], spec: GbtSpec) -> Result<TrainedModel> {
    fit_gbt_traced(x, y, names, spec).map(|(m, _)| m)
}

/// Like [`fit_gbt`], also returning training MSE after each stage
/// (entry 0 is the constant model).
pub fn fit_gbt_traced(
    x: ArrayView2<f64>,
    y: &[f64],
    names: &[String],
    spec: GbtSpec,
) -> Result<(TrainedModel, Vec<f64>)> {
    validate_xy(x, y, names)?;
    let fit = gbt::fit(x, y, &spec)?;
    let model = finish(ModelSpec::Gbt(spec), names, &fit.importance, FittedParams::Gbt(fit.params));
    Ok((model, fit.stage_mse))
}

pub fn fit(spec: &ModelSpec, x: ArrayView2<f64>, y: &[f64], names: &[String]) -> Result<TrainedModel> {
    match *spec {
        ModelSpec::Ridge(s) => fit_ridge(x, y, names, s),
        ModelSpec::Forest(s) => fit_forest(x, y, names, s),
        ModelSpec::Gbt(s) => fit_gbt(x, y, names, s),
    }
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        self.spec.family()
    }

    /// Predicts for `x`, whose columns must be `names` in the model's order.
    pub fn predict(&self, x: ArrayView2<f64>, names: &[String]) -> Result<Vec<f64>> {
        if names != self.feature_names.as_slice() || x.ncols() != self.feature_names.len() {
            return Err(Error::Schema(format!(
                "model expects columns {:?}, got {:?}",
                self.feature_names, names
            )));
        }
        Ok(match &self.params {
            FittedParams::Ridge(p) => ridge::predict(p, x),
            FittedParams::Forest(p) => forest::predict(p, x),
            FittedParams::Gbt(p) => gbt::predict(p, x),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }
}
