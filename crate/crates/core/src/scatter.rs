//! Second-moment summaries of multi-environment data and the
//! leave-one-out differences that drive connectivity estimation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::par;

/// Which second-moment summary to compute per environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterMode {
    /// Column-centered covariance with divisor n - 1.
    Covariance,
    /// Uncentered Gram matrix X'X / n. Robust to location shifts of the
    /// noise between environments.
    Gram,
}

/// Observations collected in one environment. Rows are observations,
/// columns are variables.
#[derive(Debug, Clone)]
pub struct Environment {
    pub label: String,
    pub data: DMatrix<f64>,
}

/// A collection of environments over the same variables.
#[derive(Debug, Clone)]
pub struct MultiEnvDataset {
    pub environments: Vec<Environment>,
    pub variable_names: Vec<String>,
}

impl MultiEnvDataset {
    /// Validates shapes and finiteness. Environment labels must be unique
    /// and every environment must share the same column count.
    pub fn new(environments: Vec<Environment>) -> Result<Self> {
        if environments.is_empty() {
            return Err(Error::ContractViolation("no environments given".into()));
        }
        let p = environments[0].data.ncols();
        if p == 0 {
            return Err(Error::ShapeError("environments have zero columns".into()));
        }
        for env in &environments {
            if env.data.ncols() != p {
                return Err(Error::ShapeError(format!(
                    "environment {:?} has {} columns, expected {}",
                    env.label,
                    env.data.ncols(),
                    p
                )));
            }
            if env.data.nrows() == 0 {
                return Err(Error::InsufficientData { needed: 1, got: 0 });
            }
            if env.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::ContractViolation(format!(
                    "environment {:?} contains a non-finite value",
                    env.label
                )));
            }
        }
        for (a, env) in environments.iter().enumerate() {
            if environments[..a].iter().any(|e| e.label == env.label) {
                return Err(Error::ContractViolation(format!(
                    "duplicate environment label {:?}",
                    env.label
                )));
            }
        }
        let variable_names = (1..=p).map(|k| format!("x{k}")).collect();
        Ok(Self {
            environments,
            variable_names,
        })
    }

    pub fn with_variable_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::ShapeError(format!(
                "{} variable names for {} columns",
                names.len(),
                self.p()
            )));
        }
        self.variable_names = names;
        Ok(self)
    }

    /// Number of variables.
    pub fn p(&self) -> usize {
        self.environments[0].data.ncols()
    }

    /// Number of environments.
    pub fn n_env(&self) -> usize {
        self.environments.len()
    }

    pub fn env_labels(&self) -> Vec<String> {
        self.environments.iter().map(|e| e.label.clone()).collect()
    }
}

/// Per-environment summaries and their leave-one-out differences.
///
/// `deltas[j] = per_env[j] - mean of the other environments' summaries`,
/// so the deltas sum to zero up to rounding.
#[derive(Debug, Clone)]
pub struct ScatterSet {
    pub per_env: Vec<DMatrix<f64>>,
    pub deltas: Vec<DMatrix<f64>>,
    pub mode: ScatterMode,
    pub env_labels: Vec<String>,
    pub variable_names: Vec<String>,
}

impl ScatterSet {
    pub fn p(&self) -> usize {
        self.per_env[0].nrows()
    }

    pub fn n_env(&self) -> usize {
        self.per_env.len()
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for k in 0..p {
        for l in (k + 1)..p {
            let avg = 0.5 * (m[(k, l)] + m[(l, k)]);
            m[(k, l)] = avg;
            m[(l, k)] = avg;
        }
    }
}

/// Column-centered covariance with divisor n - 1. Output is exactly
/// symmetric entrywise.
pub fn covariance(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    symmetrize(&mut cov);
    Ok(cov)
}

/// Uncentered second-moment matrix X'X / n. Output is exactly symmetric
/// entrywise.
pub fn gram(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = data.nrows();
    if n < 1 {
        return Err(Error::InsufficientData { needed: 1, got: n });
    }
    let mut g = data.tr_mul(data) / n as f64;
    symmetrize(&mut g);
    Ok(g)
}

fn scatter_of(data: &DMatrix<f64>, mode: ScatterMode) -> Result<DMatrix<f64>> {
    match mode {
        ScatterMode::Covariance => covariance(data),
        ScatterMode::Gram => gram(data),
    }
}

/// Computes per-environment summaries and the leave-one-out deltas.
/// Requires at least two environments.
pub fn build_scatter_set(dataset: &MultiEnvDataset, mode: ScatterMode) -> Result<ScatterSet> {
    let j = dataset.n_env();
    if j < 2 {
        return Err(Error::NeedMultipleEnvironments);
    }
    let per_env: Vec<DMatrix<f64>> = par::map_slice(&dataset.environments, |env| {
        scatter_of(&env.data, mode)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let p = dataset.p();
    let mut total = DMatrix::<f64>::zeros(p, p);
    for s in &per_env {
        total += s;
    }
    let deltas: Vec<DMatrix<f64>> = per_env
        .iter()
        .map(|s| s - (&total - s) / (j - 1) as f64)
        .collect();

    Ok(ScatterSet {
        per_env,
        deltas,
        mode,
        env_labels: dataset.env_labels(),
        variable_names: dataset.variable_names.clone(),
    })
}

/// Splits a single time series (rows in time order) into overlapping
/// blocks that act as pseudo-environments. Block k covers rows
/// `[k * stride, k * stride + window_len)`; the trailing remainder that
/// does not fill a block is dropped.
pub fn window_group(
    series: &DMatrix<f64>,
    window_len: usize,
    stride: usize,
) -> Result<MultiEnvDataset> {
    if window_len < 2 {
        return Err(Error::ContractViolation(
            "window length must be at least 2".into(),
        ));
    }
    if stride == 0 {
        return Err(Error::ContractViolation("stride must be positive".into()));
    }
    let t = series.nrows();
    if t < window_len {
        return Err(Error::InsufficientData {
            needed: window_len,
            got: t,
        });
    }
    let count = (t - window_len) / stride + 1;
    let environments = (0..count)
        .map(|k| Environment {
            label: format!("w{k}"),
            data: series.rows(k * stride, window_len).into_owned(),
        })
        .collect();
    MultiEnvDataset::new(environments)
}
