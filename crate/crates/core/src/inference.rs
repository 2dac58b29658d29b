//! Participant-level bootstrap.
//!
//! Each replicate draws participants with replacement (within arm, so arm
//! sizes are kept), carries every time point of a drawn participant along
//! and reruns the whole pipeline on the resample: mixture refit, model
//! refits, donor pools and Monte Carlo integration. Mixture fits start from
//! the full-data fit, which saves iterations and keeps the class labels
//! aligned across replicates.
//!
//! The interval is the percentile interval with endpoints at the order
//! statistics of ranks `ceil(0.025 B)` and `ceil(0.975 B)` (1-based) of the
//! sorted successful replicates.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{LongitudinalDataset, Participant};
use crate::error::{Error, Result};
use crate::pipeline::{Analysis, AnalysisConfig, EstimatorKind};
use crate::rng::{derive_seed, stream, Domain, StreamRng};
use crate::sim_study::MAX_FAILURE_SHARE;
use crate::stats::sample_sd;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimator: String,
    pub point: f64,
    /// Estimates of the successful replicates, in replicate order.
    pub replicates: Vec<f64>,
    pub se: f64,
    pub ci95: (f64, f64),
    /// Requested number of replicates.
    pub b: usize,
    /// Monte Carlo sample size per G-computation run.
    pub r: usize,
    pub seed: u64,
    /// `(replicate index, message)` of failed replicates.
    pub failures: Vec<(usize, String)>,
}

impl BootstrapResult {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("bootstrap result serializes")
    }
}

/// Monte Carlo seed of the point estimate.
pub fn point_seed(seed: u64) -> u64 {
    derive_seed(seed, Domain::Trajectory, 0)
}

/// Resample with replacement within each arm. Copies get fresh ids `1..=n`
/// in draw order so the resample is a valid dataset.
pub fn resample(ds: &LongitudinalDataset, rng: &mut StreamRng) -> LongitudinalDataset {
    let mut out = ds.clone_layout();
    let mut next_id = 1usize;
    for arm in ds.arms() {
        let members: Vec<&Participant> = ds.participants.iter().filter(|p| p.arm == arm).collect();
        for _ in 0..members.len() {
            let p = members[rng.random_range(0..members.len())];
            out.participants.push(Participant { id: next_id.to_string(), ..p.clone() });
            next_id += 1;
        }
    }
    out
}

/// Percentile interval of ascending `sorted` values.
pub fn percentile_ci(sorted: &[f64]) -> (f64, f64) {
    let b = sorted.len();
    assert!(b > 0, "no replicates");
    let rank = |p: f64| ((p * b as f64).ceil() as usize).clamp(1, b);
    (sorted[rank(0.025) - 1], sorted[rank(0.975) - 1])
}

pub fn bootstrap(
    ds: &LongitudinalDataset,
    kind: EstimatorKind,
    config: &AnalysisConfig,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let mut full = Analysis::new(ds, config)?;
    let point = full.run(kind, point_seed(seed))?.value;
    let warm_mixture = full.fitted_mixture().cloned();
    let warm_em_reg = full.fitted_em_reg().cloned();

    let runs: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let rep_seed = derive_seed(seed, Domain::Bootstrap, i as u64);
            let sample = resample(ds, &mut stream(rep_seed, Domain::Generate, 0));
            let mut a = Analysis::new(&sample, config)?.with_warm_start(warm_mixture.clone(), warm_em_reg.clone());
            Ok(a.run(kind, point_seed(rep_seed))?.value)
        })
        .collect();

    let mut replicates = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(v) => replicates.push(v),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_SHARE * b as f64 {
        return Err(Error::TooManyFailures { failed: failures.len(), total: b });
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let se = if replicates.len() > 1 { sample_sd(&replicates) } else { 0.0 };
    Ok(BootstrapResult {
        estimator: kind.name().to_string(),
        point,
        ci95: percentile_ci(&sorted),
        se,
        replicates,
        b,
        r: config.mc_samples,
        seed,
        failures,
    })
}
