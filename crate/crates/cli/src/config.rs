//! JSON experiment configuration.
//!
//! Matrices are row-major nested arrays. Every validation failure names the
//! offending field with a path such as `model.B` or `filters[2].c`.

use std::fs;
use std::path::Path;

use lowrank_rkf::pseudolinalg::DEFAULT_RANK_TOL;
use lowrank_rkf::static_robust::DEFAULT_EPS;
use lowrank_rkf::{FilterVariant, StateSpaceModel, SymPsdMatrix, SystemMatrices};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    x0: Option<Vec<f64>>,
    #[serde(rename = "P0")]
    p0: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFilter {
    #[serde(rename = "type")]
    kind: String,
    c: Option<f64>,
    theta: Option<f64>,
    name: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    rank_tol: Option<f64>,
    eps: Option<f64>,
    conv_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    horizon: i64,
    filters: Vec<RawFilter>,
    adversary_c: Option<f64>,
    #[serde(default)]
    trials: i64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    outputs: Vec<String>,
    #[serde(default)]
    tolerances: RawTolerances,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub name: String,
    pub variant: FilterVariant,
}

impl FilterSpec {
    pub fn new(name: impl Into<String>, variant: FilterVariant) -> Self {
        Self { name: name.into(), variant }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rank_tol: f64,
    /// Bisection tolerance on `|gamma(P, theta) - c|`.
    pub eps: f64,
    /// Thompson-distance threshold for fixed point iterations.
    pub conv_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rank_tol: DEFAULT_RANK_TOL, eps: DEFAULT_EPS, conv_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Prefix of every emitted file name.
    pub name: String,
    pub model: StateSpaceModel,
    pub horizon: usize,
    pub filters: Vec<FilterSpec>,
    pub adversary_c: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    pub outputs: Vec<Artifact>,
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn wants(&self, artifact: Artifact) -> bool {
        self.outputs.contains(&artifact)
    }
}

/// Reads and validates a configuration file. The file stem becomes the
/// experiment name.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
    parse_config(&text, name)
}

pub fn parse_config(text: &str, name: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: match e.path().to_string() {
            p if p == "." => "<root>".to_string(),
            p => p,
        },
        message: e.inner().to_string(),
    })?;
    validate(raw, name)
}

fn matrix(rows: &[Vec<f64>], path: &str, shape: (usize, Option<usize>)) -> Result<DMatrix<f64>, ConfigError> {
    let (want_rows, want_cols) = shape;
    if rows.len() != want_rows {
        return Err(invalid(path, format!("expected {want_rows} rows, found {}", rows.len())));
    }
    let cols = want_cols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(invalid(format!("{path}[{i}]"), format!("expected {cols} entries, found {}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("{path}[{i}][{j}]"), "entry is not finite"));
        }
    }
    Ok(DMatrix::from_fn(want_rows, cols, |i, j| rows[i][j]))
}

fn positive(value: Option<f64>, path: &str) -> Result<f64, ConfigError> {
    match value {
        None => Err(invalid(path, "missing")),
        Some(v) if v.is_finite() && v > 0.0 => Ok(v),
        Some(v) => Err(invalid(path, format!("must be a finite number > 0, found {v}"))),
    }
}

fn build_model(raw: &RawModel, rank_tol: f64) -> Result<StateSpaceModel, ConfigError> {
    let n = raw.a.len();
    if n == 0 {
        return Err(invalid("model.A", "state dimension must be at least 1"));
    }
    let a = matrix(&raw.a, "model.A", (n, Some(n)))?;
    let b = matrix(&raw.b, "model.B", (n, None))?;
    let m = b.ncols();
    let p = raw.c.len();
    if p == 0 {
        return Err(invalid("model.C", "observation dimension must be at least 1"));
    }
    let c = matrix(&raw.c, "model.C", (p, Some(n)))?;
    let d = matrix(&raw.d, "model.D", (p, Some(m)))?;
    let x0 = match &raw.x0 {
        None => DVector::zeros(n),
        Some(v) if v.len() == n => DVector::from_column_slice(v),
        Some(v) => return Err(invalid("model.x0", format!("expected {n} entries, found {}", v.len()))),
    };
    let p0 = matrix(&raw.p0, "model.P0", (n, Some(n)))?;
    let p0 = SymPsdMatrix::with_tol(p0, rank_tol).map_err(|e| invalid("model.P0", e.to_string()))?;
    let sys = SystemMatrices::new(a, b, c, d).map_err(|e| invalid("model.D", e.to_string()))?;
    StateSpaceModel::constant(sys, x0, p0).map_err(|e| invalid("model", e.to_string()))
}

fn build_filter(raw: &RawFilter, i: usize, counts: &mut [usize; 2]) -> Result<FilterSpec, ConfigError> {
    let path = format!("filters[{i}]");
    let (variant, default_name) = match raw.kind.as_str() {
        "kf" => (FilterVariant::Kalman, "kf".to_string()),
        "rkf" => {
            counts[0] += 1;
            let c = positive(raw.c, &format!("{path}.c"))?;
            (FilterVariant::Robust { c }, format!("rkf{}", counts[0]))
        }
        "rs" => {
            counts[1] += 1;
            let theta = positive(raw.theta, &format!("{path}.theta"))?;
            (FilterVariant::RiskSensitive { theta }, format!("rs{}", counts[1]))
        }
        other => return Err(invalid(format!("{path}.type"), format!("unknown filter type {other:?}, expected kf, rkf or rs"))),
    };
    let name = raw.name.clone().unwrap_or(default_name);
    if name.is_empty() || !name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') {
        return Err(invalid(format!("{path}.name"), format!("{name:?} is not a plain identifier")));
    }
    Ok(FilterSpec { name, variant })
}

fn validate(raw: RawConfig, name: &str) -> Result<ExperimentConfig, ConfigError> {
    let defaults = Tolerances::default();
    let rank_tol = raw.tolerances.rank_tol.unwrap_or(defaults.rank_tol);
    if !(rank_tol.is_finite() && rank_tol >= 0.0) {
        return Err(invalid("tolerances.rank_tol", format!("must be finite and >= 0, found {rank_tol}")));
    }
    let tolerances = Tolerances {
        rank_tol,
        eps: positive(Some(raw.tolerances.eps.unwrap_or(defaults.eps)), "tolerances.eps")?,
        conv_tol: positive(Some(raw.tolerances.conv_tol.unwrap_or(defaults.conv_tol)), "tolerances.conv_tol")?,
    };
    let model = build_model(&raw.model, rank_tol)?;
    if raw.horizon < 1 {
        return Err(invalid("horizon", format!("must be >= 1, found {}", raw.horizon)));
    }
    if raw.trials < 0 {
        return Err(invalid("trials", format!("must be >= 0, found {}", raw.trials)));
    }
    if raw.filters.is_empty() {
        return Err(invalid("filters", "at least one filter is required"));
    }
    let mut counts = [0; 2];
    let filters = raw
        .filters
        .iter()
        .enumerate()
        .map(|(i, f)| build_filter(f, i, &mut counts))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, f) in filters.iter().enumerate() {
        if filters[..i].iter().any(|g| g.name == f.name) {
            return Err(invalid(format!("filters[{i}].name"), format!("duplicate filter name {:?}", f.name)));
        }
    }
    let adversary_c = match raw.adversary_c {
        None => None,
        Some(c) => Some(positive(Some(c), "adversary_c")?),
    };
    let outputs = if raw.outputs.is_empty() { vec!["csv".to_string()] } else { raw.outputs };
    let outputs = outputs
        .iter()
        .enumerate()
        .map(|(i, o)| match o.as_str() {
            "csv" => Ok(Artifact::Csv),
            "svg" => Ok(Artifact::Svg),
            other => Err(invalid(format!("outputs[{i}]"), format!("unknown artifact {other:?}, expected csv or svg"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentConfig {
        name: name.to_string(),
        model,
        horizon: raw.horizon as usize,
        filters,
        adversary_c,
        trials: raw.trials as usize,
        seed: raw.seed,
        outputs,
        tolerances,
    })
}
