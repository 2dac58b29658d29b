//! Weighted model fitting and Monte Carlo G-computation.
//!
//! Each confounder and the outcome get a linear mean model fitted on the
//! estimation view with compliance weights, sharing parameters across time
//! points. Trajectories under full compliance are then generated forward
//! from resampled baselines: confounders by predictive mean matching (or
//! from the fitted Gaussian), the outcome from its fitted Gaussian. The
//! causal mean is the average terminal outcome.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance_em::{e_step, ComplianceData, MixtureModel};
use crate::data_model::{Bounds, LongitudinalDataset};
use crate::design::{recipes, DesignRecipe, Layout, RowInput, ViewFrame};
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_linear, LinearFit};
use crate::pmm::{build_pool, DonorFloor, DonorPool, PoolOptions, DEFAULT_K};
use crate::rng::{stream, Domain};
use crate::stats::{sample_variance, CompensatedSum};

pub const DEFAULT_MC_SAMPLES: usize = 10_000;

/// Where the compliance weights of the estimating equations come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSource {
    /// Posterior compliance probabilities from the biomarker mixture.
    Posterior,
    /// Self-report taken at face value: every view row has weight 1.
    SelfReport,
    /// Known compliance (simulated data only).
    TrueCompliance,
    /// `b < t` counts as compliant.
    Threshold(f64),
}

impl WeightSource {
    pub fn floor(self) -> DonorFloor {
        match self {
            WeightSource::Posterior => DonorFloor::Posterior,
            _ => DonorFloor::Indicator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Pmm,
    /// Gaussian draws from the fitted confounder models, clipped to bounds.
    Parametric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcompOptions {
    pub mode: SamplingMode,
    /// Donor count for matching.
    pub k: usize,
    /// Also draw the outcome by matching instead of from its Gaussian.
    pub pmm_outcome: bool,
}

impl Default for GcompOptions {
    fn default() -> Self {
        GcompOptions { mode: SamplingMode::Pmm, k: DEFAULT_K, pmm_outcome: false }
    }
}

/// Compliance weights for the rows of `frame`.
pub fn view_weights(frame: &ViewFrame, source: WeightSource, mixture: Option<&MixtureModel>) -> Result<Vec<f64>> {
    match source {
        WeightSource::Posterior => {
            let m = mixture.ok_or_else(|| Error::Config("posterior weights need a fitted mixture".into()))?;
            e_step(m, &ComplianceData::new(frame, &m.recipe))
        }
        WeightSource::SelfReport => Ok(vec![1.0; frame.len()]),
        WeightSource::TrueCompliance => frame
            .c
            .iter()
            .map(|c| c.map(|v| if v { 1.0 } else { 0.0 }))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::NotApplicable("true compliance is only available for simulated data".into())),
        WeightSource::Threshold(t) => Ok(frame.b.iter().map(|&b| if b < t { 1.0 } else { 0.0 }).collect()),
    }
}

#[derive(Debug, Clone)]
pub struct FittedGcompModels {
    pub layout: Layout,
    pub z_recipe: DesignRecipe,
    pub y_recipe: DesignRecipe,
    pub z_fits: Vec<LinearFit>,
    pub y_fit: LinearFit,
    /// One per confounder; empty in parametric mode.
    pub z_pools: Vec<DonorPool>,
    pub y_pool: Option<DonorPool>,
    pub z_bounds: Vec<Option<Bounds>>,
    pub options: GcompOptions,
}

/// Fits the confounder and outcome models with weights `w` and builds the
/// donor pools the sampling mode needs.
pub fn fit_models(
    frame: &ViewFrame,
    w: &[f64],
    floor: DonorFloor,
    z_bounds: &[Option<Bounds>],
    options: &GcompOptions,
) -> Result<FittedGcompModels> {
    if frame.is_empty() {
        return Err(Error::EmptyView("no self-reported compliant transitions".into()));
    }
    if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(crate::glm::GlmError::InvalidWeights.into());
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyView("all compliance weights are zero".into()));
    }
    let z_recipe = recipes::confounder();
    let y_recipe = recipes::outcome();
    let z_design = z_recipe.build(frame);
    let y_design = y_recipe.build(frame);
    let bound = |j: usize| z_bounds.get(j).copied().flatten();
    let mut z_fits = Vec::with_capacity(frame.n_z());
    let mut z_pools = Vec::new();
    for j in 0..frame.n_z() {
        let z = frame.z_column(j);
        let fit = fit_weighted_linear(&z_design, &z, w)?;
        if options.mode == SamplingMode::Pmm {
            let opts = PoolOptions { floor, bounds: bound(j), k: options.k };
            z_pools.push(build_pool(&frame.layout.z_names[j], &fit, &z_design, &z, w, &opts)?);
        }
        z_fits.push(fit);
    }
    let y_fit = fit_weighted_linear(&y_design, &frame.y, w)?;
    let y_pool = if options.pmm_outcome {
        let opts = PoolOptions { floor, bounds: None, k: options.k };
        Some(build_pool("y", &y_fit, &y_design, &frame.y, w, &opts)?)
    } else {
        None
    };
    Ok(FittedGcompModels {
        layout: frame.layout.clone(),
        z_recipe,
        y_recipe,
        z_fits,
        y_fit,
        z_pools,
        y_pool,
        z_bounds: (0..frame.n_z()).map(bound).collect(),
        options: *options,
    })
}

/// Baseline state of one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub y: f64,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

/// Participants with a complete baseline observation, in dataset order.
pub fn baselines(ds: &LongitudinalDataset) -> Vec<Baseline> {
    ds.participants
        .iter()
        .filter_map(|p| {
            let b = p.baseline()?;
            if b.is_missing() {
                return None;
            }
            Some(Baseline { y: b.y?, z: b.z_values()?, x: p.x.clone() })
        })
        .collect()
}

fn gaussian<R: Rng + ?Sized>(mean: f64, sigma2: f64, rng: &mut R) -> f64 {
    let e: f64 = StandardNormal.sample(rng);
    mean + sigma2.sqrt() * e
}

/// Generates one trajectory under full compliance and returns the outcome
/// at the last time point.
pub fn simulate_trajectory<R: Rng + ?Sized>(m: &FittedGcompModels, start: &Baseline, rng: &mut R) -> f64 {
    walk(m, start, rng, |_, _, _| {})
}

/// A simulated trajectory, time points `1..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPath {
    pub z: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// Like [`simulate_trajectory`] but keeps every drawn value. Consumes the
/// random stream identically.
pub fn simulate_path<R: Rng + ?Sized>(m: &FittedGcompModels, start: &Baseline, rng: &mut R) -> TrajectoryPath {
    let mut path = TrajectoryPath { z: Vec::new(), y: Vec::new() };
    walk(m, start, rng, |_, z, y| {
        path.z.push(z.to_vec());
        path.y.push(y);
    });
    path
}

fn walk<R: Rng + ?Sized>(
    m: &FittedGcompModels,
    start: &Baseline,
    rng: &mut R,
    mut visit: impl FnMut(usize, &[f64], f64),
) -> f64 {
    let k = m.layout.k;
    let nz = m.z_fits.len();
    let mut y_lag = start.y;
    let mut z_lag = start.z.clone();
    let mut z = vec![0.0; nz];
    let mut row = Vec::new();
    for time in 1..k {
        let input = RowInput { time, y: f64::NAN, z: &z_lag, y_lag, z_lag: &z_lag, x: &start.x };
        m.z_recipe.fill_row(k, &input, &mut row);
        for (j, fit) in m.z_fits.iter().enumerate() {
            let z_hat = fit.predict_row(&row);
            z[j] = match m.options.mode {
                SamplingMode::Pmm => m.z_pools[j].draw(z_hat, rng),
                SamplingMode::Parametric => {
                    let v = gaussian(z_hat, fit.sigma2, rng);
                    match m.z_bounds[j] {
                        Some((lo, hi)) => v.clamp(lo, hi),
                        None => v,
                    }
                }
            };
        }
        let input = RowInput { time, y: f64::NAN, z: &z, y_lag, z_lag: &z_lag, x: &start.x };
        m.y_recipe.fill_row(k, &input, &mut row);
        let y_hat = m.y_fit.predict_row(&row);
        let y = match &m.y_pool {
            Some(pool) => pool.draw(y_hat, rng),
            None => gaussian(y_hat, m.y_fit.sigma2, rng),
        };
        visit(time, &z, y);
        y_lag = y;
        std::mem::swap(&mut z_lag, &mut z);
    }
    y_lag
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEstimate {
    /// Average of the `r` terminal outcomes.
    pub mean: f64,
    pub r: usize,
    /// Sample variance of the terminal outcomes.
    pub outcome_variance: f64,
    /// Monte Carlo standard error of `mean`.
    pub mc_se: f64,
    pub seed: u64,
}

/// Monte Carlo estimate of the mean terminal outcome under full compliance.
/// Trajectory `r` uses its own random stream, so the result does not depend
/// on the number of worker threads.
pub fn estimate(m: &FittedGcompModels, starts: &[Baseline], r: usize, seed: u64) -> Result<CausalEstimate> {
    if starts.is_empty() {
        return Err(Error::EmptyView("no participants with a complete baseline".into()));
    }
    if r == 0 {
        return Err(Error::Config("Monte Carlo sample count must be at least 1".into()));
    }
    let outcomes: Vec<f64> = (0..r)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let mut rng = stream(seed, Domain::Trajectory, i as u64);
            let start = &starts[rng.random_range(0..starts.len())];
            simulate_trajectory(m, start, &mut rng)
        })
        .collect();
    let mut total = CompensatedSum::new();
    for &v in &outcomes {
        total.add(v);
    }
    let mean = total.value() / r as f64;
    let outcome_variance = if r > 1 { sample_variance(&outcomes) } else { 0.0 };
    Ok(CausalEstimate { mean, r, outcome_variance, mc_se: (outcome_variance / r as f64).sqrt(), seed })
}
