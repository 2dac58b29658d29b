//! Predictive mean matching.
//!
//! A donor pool holds `(predicted mean, observed value)` pairs sorted by
//! predicted mean. A draw for a query mean takes the `k` pool entries with
//! the nearest predicted means (plus every entry tied with the `k`-th
//! distance) and returns the observed value of one of them, chosen
//! uniformly. Draws therefore always come from the observed support.

use std::ops::Range;

use rand::Rng;

use crate::data_model::Bounds;
use crate::error::{Error, Result};
use crate::glm::{DesignMatrix, LinearFit};

pub const DEFAULT_K: usize = 5;

/// How weights decide donor eligibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DonorFloor {
    /// Posterior probabilities: eligible when `w > 0.5`.
    Posterior,
    /// 0/1 indicators: eligible when `w == 1`.
    Indicator,
}

impl DonorFloor {
    pub fn admits(self, w: f64) -> bool {
        match self {
            DonorFloor::Posterior => w > 0.5,
            DonorFloor::Indicator => w == 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DonorPool {
    pub name: String,
    means: Vec<f64>,
    values: Vec<f64>,
    pub k: usize,
}

impl DonorPool {
    /// Pool from explicit pairs; sorted by predicted mean, then value.
    pub fn from_pairs(name: &str, mut pairs: Vec<(f64, f64)>, k: usize) -> Result<DonorPool> {
        if pairs.is_empty() {
            return Err(Error::EmptyDonorPool(name.to_string()));
        }
        if k == 0 {
            return Err(Error::Config("donor count k must be at least 1".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (means, values) = pairs.into_iter().unzip();
        Ok(DonorPool { name: name.to_string(), means, values, k })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index range of the candidate set for a query mean.
    pub fn candidates(&self, z_hat: f64) -> Range<usize> {
        let n = self.means.len();
        let k = self.k.min(n);
        let dist = |i: usize| (self.means[i] - z_hat).abs();
        let start = self.means.partition_point(|&m| m < z_hat);
        let (mut lo, mut hi) = (start, start);
        while hi - lo < k {
            let take_left = match (lo > 0, hi < n) {
                (true, true) => dist(lo - 1) <= dist(hi),
                (true, false) => true,
                (false, true) => false,
                (false, false) => break,
            };
            if take_left {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        let radius = dist(lo).max(dist(hi - 1));
        while lo > 0 && dist(lo - 1) <= radius {
            lo -= 1;
        }
        while hi < n && dist(hi) <= radius {
            hi += 1;
        }
        lo..hi
    }

    pub fn draw<R: Rng + ?Sized>(&self, z_hat: f64, rng: &mut R) -> f64 {
        let c = self.candidates(z_hat);
        self.values[rng.random_range(c)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolOptions {
    pub floor: DonorFloor,
    /// Declared support; donors outside it are rejected.
    pub bounds: Option<Bounds>,
    pub k: usize,
}

/// Pools the eligible view rows of one response: predicted means from `fit`
/// on `design`, observed values from `observed`.
pub fn build_pool(
    name: &str,
    fit: &LinearFit,
    design: &DesignMatrix,
    observed: &[f64],
    weights: &[f64],
    opts: &PoolOptions,
) -> Result<DonorPool> {
    let PoolOptions { floor, bounds, k } = *opts;
    let predicted = fit.predict(design)?;
    let mut pairs = Vec::new();
    for i in 0..observed.len() {
        if !floor.admits(weights[i]) {
            continue;
        }
        if let Some((lo, hi)) = bounds {
            if observed[i] < lo || observed[i] > hi {
                return Err(Error::Config(format!("{name} value {} outside bounds [{lo}, {hi}]", observed[i])));
            }
        }
        pairs.push((predicted[i], observed[i]));
    }
    DonorPool::from_pairs(name, pairs, k)
}
