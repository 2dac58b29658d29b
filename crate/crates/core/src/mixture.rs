//! Two-class mixture of Gaussian regressions with a logistic mixing model,
//! fitted by EM.
//!
//! Class 1 (compliant) has density `rho * prod_r g1_r` and class 0 has
//! `(1 - rho) * prod_r g0_r`, where each `g_r` is a Gaussian linear model
//! for one response. The biomarker mixture uses a single response; the joint
//! biomarker-outcome mixture uses two. All density arithmetic is done in
//! log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{
    fit_weighted_linear, fit_weighted_logistic, gaussian_log_density, DesignMatrix, GlmError, LinearFit,
    LogisticOptions,
};
use crate::stats::{log_add_exp, log_logistic, mean};

/// Lower bound on component residual variances.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Response {
    pub values: Vec<f64>,
    pub design: DesignMatrix,
}

#[derive(Debug, Clone)]
pub struct MixtureData {
    pub mixing: DesignMatrix,
    /// The first response defines the class labels (lower mean = compliant).
    pub responses: Vec<Response>,
}

impl MixtureData {
    pub fn len(&self) -> usize {
        self.mixing.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub mixing: Vec<f64>,
    pub compliant: Vec<LinearFit>,
    pub noncompliant: Vec<LinearFit>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmTrace {
    /// Observed-data log-likelihood, starting with the initial parameters.
    pub loglik: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    /// Relative change in observed log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { tol: 1e-6, max_iter: 500 }
    }
}

/// Joint log density of each class, per row: `(log rho g1, log (1-rho) g0)`.
pub fn class_log_densities(params: &MixtureParams, data: &MixtureData) -> Result<Vec<(f64, f64)>> {
    let eta = crate::glm::LinearFit { coefficients: params.mixing.clone(), sigma2: 1.0, n_effective: 0.0 }
        .predict(&data.mixing)?;
    let mut out: Vec<(f64, f64)> = eta.iter().map(|&e| (log_logistic(e), log_logistic(-e))).collect();
    for (r, resp) in data.responses.iter().enumerate() {
        let m1 = params.compliant[r].predict(&resp.design)?;
        let m0 = params.noncompliant[r].predict(&resp.design)?;
        let (s1, s0) = (params.compliant[r].sigma2, params.noncompliant[r].sigma2);
        for i in 0..out.len() {
            out[i].0 += gaussian_log_density(resp.values[i], m1[i], s1)?;
            out[i].1 += gaussian_log_density(resp.values[i], m0[i], s0)?;
        }
    }
    Ok(out)
}

/// Observed-data log-likelihood and posterior class-1 probabilities.
pub fn evaluate(params: &MixtureParams, data: &MixtureData) -> Result<(f64, Vec<f64>)> {
    let dens = class_log_densities(params, data)?;
    let mut ll = crate::stats::CompensatedSum::new();
    let mut w = Vec::with_capacity(dens.len());
    for &(l1, l0) in &dens {
        let total = log_add_exp(l1, l0);
        if !total.is_finite() {
            return Err(Error::NonFiniteDensity);
        }
        ll.add(total);
        w.push((l1 - total).exp().clamp(0.0, 1.0));
    }
    Ok((ll.value(), w))
}

fn fit_component(resp: &Response, w: &[f64]) -> std::result::Result<LinearFit, GlmError> {
    let mut fit = fit_weighted_linear(&resp.design, &resp.values, w)?;
    fit.sigma2 = fit.sigma2.max(VARIANCE_FLOOR);
    Ok(fit)
}

/// Which classes were held at their previous value during an M-step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Frozen {
    pub compliant: bool,
    pub noncompliant: bool,
}

impl Frozen {
    pub fn any(&self) -> bool {
        self.compliant || self.noncompliant
    }
}

fn fit_class(data: &MixtureData, w: &[f64], previous: Option<&[LinearFit]>) -> Result<(Vec<LinearFit>, bool)> {
    let needed = data.responses.iter().map(|r| r.design.columns()).max().unwrap_or(0) as f64 + 1.0;
    let total: f64 = w.iter().sum();
    let attempt = || -> std::result::Result<Vec<LinearFit>, GlmError> {
        if total < needed {
            return Err(GlmError::InsufficientWeight { sum_weights: total, columns: needed as usize - 1 });
        }
        data.responses.iter().map(|r| fit_component(r, w)).collect()
    };
    match (attempt(), previous) {
        (Ok(fits), _) => Ok((fits, false)),
        (Err(GlmError::InsufficientWeight { .. }), Some(prev)) => Ok((prev.to_vec(), true)),
        (Err(e), _) => Err(e.into()),
    }
}

/// Weighted refits given posterior weights `w`: fractional-response
/// logistic for the mixing model, `w`-weighted fits for class 1 and
/// `(1 - w)`-weighted fits for class 0. A class whose effective weight falls
/// below `columns + 1` keeps its previous fit.
pub fn m_step(data: &MixtureData, w: &[f64], previous: Option<&MixtureParams>) -> Result<(MixtureParams, Frozen)> {
    if w.len() != data.len() {
        return Err(GlmError::DimensionMismatch { expected: data.len(), got: w.len() }.into());
    }
    let opts = LogisticOptions { init: previous.map(|p| p.mixing.clone()), ..Default::default() };
    let ones = vec![1.0; w.len()];
    let mixing = fit_weighted_logistic(&data.mixing, w, &ones, &opts)?;
    let (compliant, f1) = fit_class(data, w, previous.map(|p| p.compliant.as_slice()))?;
    let w0: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
    let (noncompliant, f0) = fit_class(data, &w0, previous.map(|p| p.noncompliant.as_slice()))?;
    Ok((
        MixtureParams { mixing: mixing.coefficients, compliant, noncompliant },
        Frozen { compliant: f1, noncompliant: f0 },
    ))
}

/// Mean fitted first-response value of each class across the rows.
pub fn class_means(params: &MixtureParams, data: &MixtureData) -> Result<(f64, f64)> {
    let resp = &data.responses[0];
    Ok((mean(&params.compliant[0].predict(&resp.design)?), mean(&params.noncompliant[0].predict(&resp.design)?)))
}

/// Relabels so that class 1 has the lower mean first response.
pub fn apply_label_convention(params: MixtureParams, data: &MixtureData) -> Result<(MixtureParams, bool)> {
    let (m1, m0) = class_means(&params, data)?;
    if m1 <= m0 {
        return Ok((params, false));
    }
    Ok((
        MixtureParams {
            mixing: params.mixing.iter().map(|v| -v).collect(),
            compliant: params.noncompliant,
            noncompliant: params.compliant,
        },
        true,
    ))
}

/// Runs EM from `start` until the relative log-likelihood change drops
/// below `opts.tol`.
pub fn run_em(data: &MixtureData, start: MixtureParams, opts: &EmOptions) -> Result<(MixtureParams, EmTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyView("no observations for the mixture fit".into()));
    }
    let mut params = start;
    let (mut ll, mut w) = evaluate(&params, data)?;
    let mut trace = EmTrace { loglik: vec![ll], iterations: 0, converged: false };
    let mut frozen = Frozen::default();
    while trace.iterations < opts.max_iter {
        trace.iterations += 1;
        let (next, fr) = m_step(data, &w, Some(&params))?;
        frozen = fr;
        let (ll_next, w_next) = evaluate(&next, data)?;
        params = next;
        w = w_next;
        trace.loglik.push(ll_next);
        let rel = (ll_next - ll).abs() / ll.abs().max(1.0);
        ll = ll_next;
        if rel < opts.tol {
            trace.converged = true;
            break;
        }
    }
    if frozen.any() {
        trace.converged = false;
    }
    let (params, _) = apply_label_convention(params, data)?;
    Ok((params, trace))
}
