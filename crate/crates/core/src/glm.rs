//! Weighted Gaussian and logistic regression.
//!
//! Both fits accept arbitrary nonnegative per-row weights, and the logistic
//! fit accepts fractional responses in `[0, 1]`. That is exactly what an EM
//! M-step or a compliance-weighted estimating equation needs.
//!
//! Least-squares problems are solved through a Householder QR of the
//! row-scaled design, never through an explicit inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{log_logistic, logistic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("rank-deficient design; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("effective sample size {sum_weights} does not exceed {columns} columns")]
    InsufficientWeight { sum_weights: f64, columns: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weights must be finite and nonnegative")]
    InvalidWeights,
    #[error("responses must be finite{}", if *.unit_interval { " and lie in [0, 1]" } else { "" })]
    InvalidResponse { unit_interval: bool },
    #[error("variance must be positive, got {0}")]
    InvalidVariance(f64),
}

/// Dense design matrix with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<String>) -> Self {
        assert_eq!(matrix.ncols(), labels.len(), "one label per column");
        DesignMatrix { matrix, labels }
    }

    pub fn from_row_slice(rows: usize, cols: usize, values: &[f64], labels: Vec<String>) -> Self {
        Self::new(DMatrix::from_row_slice(rows, cols, values), labels)
    }

    /// Columns labelled `c0, c1, ...`.
    pub fn unlabeled(matrix: DMatrix<f64>) -> Self {
        let labels = (0..matrix.ncols()).map(|j| format!("c{j}")).collect();
        Self::new(matrix, labels)
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    /// Weighted MLE of the residual variance: `sum w r^2 / sum w`.
    pub sigma2: f64,
    /// Sum of weights.
    pub n_effective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the linear predictor left `[-30, 30]` and iteration stopped.
    pub separated: bool,
    pub log_likelihood: f64,
    /// Objective after each accepted iteration, starting at the initial value.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LogisticOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Option<Vec<f64>>,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions { tol: 1e-8, max_iter: 100, init: None }
    }
}

/// Bound on the linear predictor beyond which a logistic fit is treated as
/// separated (fitted probabilities within ~1e-13 of 0 or 1).
pub const SEPARATION_BOUND: f64 = 30.0;

const RANK_TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weights(w: &[f64], rows: usize, cols: usize) -> Result<f64, GlmError> {
    if w.len() != rows {
        return Err(GlmError::DimensionMismatch { expected: rows, got: w.len() });
    }
    if w.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(GlmError::InvalidWeights);
    }
    let sum: f64 = w.iter().sum();
    if sum <= cols as f64 {
        return Err(GlmError::InsufficientWeight { sum_weights: sum, columns: cols });
    }
    Ok(sum)
}

/// Least squares `min ||diag(s) (X b - t)||` where `s` are row scales.
/// Rows with zero scale drop out.
fn scaled_least_squares(x: &DesignMatrix, scale: &[f64], target: &[f64]) -> Result<Vec<f64>, GlmError> {
    let (n, p) = (x.rows(), x.columns());
    let mut a = x.matrix.clone();
    for j in 0..p {
        let mut col = a.column_mut(j);
        for i in 0..n {
            col[i] *= scale[i];
        }
    }
    let col_norms: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
    let mut rhs = DVector::from_iterator(n, (0..n).map(|i| scale[i] * target[i]));
    let qr = a.qr();
    let r = qr.r();
    let deficient: Vec<String> = (0..p)
        .filter(|&j| col_norms[j] == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norms[j])
        .map(|j| x.labels[j].clone())
        .collect();
    if !deficient.is_empty() {
        return Err(GlmError::RankDeficient { columns: deficient });
    }
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, p).into_owned();
    let beta = r.solve_upper_triangular(&top).ok_or_else(|| GlmError::RankDeficient { columns: x.labels.clone() })?;
    Ok(beta.iter().copied().collect())
}

/// Weighted least squares; the Gaussian MLE under per-row weights.
pub fn fit_weighted_linear(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<LinearFit, GlmError> {
    let (n, p) = (x.rows(), x.columns());
    if y.len() != n {
        return Err(GlmError::DimensionMismatch { expected: n, got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::InvalidResponse { unit_interval: false });
    }
    let sum_w = check_weights(w, n, p)?;
    let scale: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let coefficients = scaled_least_squares(x, &scale, y)?;
    let fitted = x.matrix() * DVector::from_column_slice(&coefficients);
    let rss: f64 = (0..n).map(|i| w[i] * (y[i] - fitted[i]).powi(2)).sum();
    Ok(LinearFit { coefficients, sigma2: rss / sum_w, n_effective: sum_w })
}

fn logistic_objective(eta: &[f64], y: &[f64], w: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|((&e, &yi), &wi)| wi * (yi * log_logistic(e) + (1.0 - yi) * log_logistic(-e)))
        .sum()
}

fn linear_predictor(x: &DesignMatrix, beta: &[f64]) -> Vec<f64> {
    let eta = x.matrix() * DVector::from_column_slice(beta);
    eta.iter().copied().collect()
}

/// Weighted logistic regression by iteratively reweighted least squares,
/// maximizing `sum w [y log p + (1 - y) log(1 - p)]`. Each Newton step is
/// halved until the objective does not decrease.
pub fn fit_weighted_logistic(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    opts: &LogisticOptions,
) -> Result<LogisticFit, GlmError> {
    let (n, p) = (x.rows(), x.columns());
    if y.len() != n {
        return Err(GlmError::DimensionMismatch { expected: n, got: y.len() });
    }
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(GlmError::InvalidResponse { unit_interval: true });
    }
    check_weights(w, n, p)?;
    let mut beta = match &opts.init {
        Some(b) if b.len() == p && b.iter().all(|v| v.is_finite()) => b.clone(),
        _ => vec![0.0; p],
    };
    let mut eta = linear_predictor(x, &beta);
    let mut objective = logistic_objective(&eta, y, w);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let mut scale = vec![0.0; n];
    let mut target = vec![0.0; n];
    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n {
            let pi = logistic(eta[i]);
            let v = pi * (1.0 - pi);
            if w[i] > 0.0 && v > 0.0 {
                scale[i] = (w[i] * v).sqrt();
                target[i] = (y[i] - pi) / v;
            } else {
                scale[i] = 0.0;
                target[i] = 0.0;
            }
        }
        let step = scaled_least_squares(x, &scale, &target)?;
        let mut t = 1.0;
        let mut candidate: Vec<f64>;
        let mut cand_eta: Vec<f64>;
        let mut cand_obj;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            cand_eta = linear_predictor(x, &candidate);
            cand_obj = logistic_objective(&cand_eta, y, w);
            if cand_obj >= objective || halvings >= 40 {
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
        if cand_obj < objective {
            // No ascent direction left at working precision.
            converged = true;
            break;
        }
        let change = beta.iter().zip(&candidate).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = candidate;
        eta = cand_eta;
        objective = cand_obj;
        trace.push(objective);
        if eta.iter().any(|e| e.abs() > SEPARATION_BOUND) {
            separated = true;
            break;
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(LogisticFit { coefficients: beta, converged, iterations, separated, log_likelihood: objective, trace })
}

impl LinearFit {
    pub fn predict(&self, x: &DesignMatrix) -> Result<Vec<f64>, GlmError> {
        if x.columns() != self.coefficients.len() {
            return Err(GlmError::DimensionMismatch { expected: self.coefficients.len(), got: x.columns() });
        }
        Ok(linear_predictor(x, &self.coefficients))
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        dot(&self.coefficients, row)
    }
}

impl LogisticFit {
    /// Fitted probabilities.
    pub fn predict(&self, x: &DesignMatrix) -> Result<Vec<f64>, GlmError> {
        if x.columns() != self.coefficients.len() {
            return Err(GlmError::DimensionMismatch { expected: self.coefficients.len(), got: x.columns() });
        }
        Ok(linear_predictor(x, &self.coefficients).into_iter().map(logistic).collect())
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        logistic(dot(&self.coefficients, row))
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn gaussian_log_density(y: f64, mean: f64, sigma2: f64) -> Result<f64, GlmError> {
    if sigma2.is_nan() || sigma2 <= 0.0 || sigma2.is_infinite() {
        return Err(GlmError::InvalidVariance(sigma2));
    }
    Ok(-LN_SQRT_2PI - 0.5 * sigma2.ln() - 0.5 * (y - mean).powi(2) / sigma2)
}

pub fn gaussian_density(y: f64, mean: f64, sigma2: f64) -> Result<f64, GlmError> {
    gaussian_log_density(y, mean, sigma2).map(f64::exp)
}
