//! End-to-end estimation on one dataset: arm selection, the mixture fit
//! (shared by every estimator that needs it) and dispatch to the individual
//! estimators.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compliance_em::{fit_em, ComplianceData, ComplianceRecipe, InitStrategy, MixtureModel};
use crate::data_model::LongitudinalDataset;
use crate::design::ViewFrame;
use crate::error::{Error, Result};
use crate::estimators::{em_reg_estimate, fit_em_reg, itt, per_protocol, EmRegInit, EmRegModel};
use crate::gcomp::{
    baselines, estimate, fit_models, view_weights, Baseline, CausalEstimate, GcompOptions, SamplingMode, WeightSource,
    DEFAULT_MC_SAMPLES,
};
use crate::mixture::{EmOptions, EmTrace};
use crate::pmm::DEFAULT_K;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimatorKind {
    Itt,
    PerProtocol,
    EmReg,
    GcompParametric,
    GcompSelfReport,
    GcompTrue,
    GcompFull,
    GcompThreshold,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Itt,
        EstimatorKind::PerProtocol,
        EstimatorKind::EmReg,
        EstimatorKind::GcompParametric,
        EstimatorKind::GcompSelfReport,
        EstimatorKind::GcompTrue,
        EstimatorKind::GcompFull,
        EstimatorKind::GcompThreshold,
    ];

    /// Estimators compared in single-arm simulations.
    pub const SIMULATION: [EstimatorKind; 6] = [
        EstimatorKind::PerProtocol,
        EstimatorKind::EmReg,
        EstimatorKind::GcompParametric,
        EstimatorKind::GcompSelfReport,
        EstimatorKind::GcompTrue,
        EstimatorKind::GcompFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Itt => "itt",
            EstimatorKind::PerProtocol => "pp",
            EstimatorKind::EmReg => "emreg",
            EstimatorKind::GcompParametric => "gcomp-parametric",
            EstimatorKind::GcompSelfReport => "gcomp-selfreport",
            EstimatorKind::GcompTrue => "gcomp-true",
            EstimatorKind::GcompFull => "gcomp-full",
            EstimatorKind::GcompThreshold => "gcomp-threshold",
        }
    }

    /// Row label for result tables.
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Itt => "ITT",
            EstimatorKind::PerProtocol => "Per Protocol",
            EstimatorKind::EmReg => "EM-REG",
            EstimatorKind::GcompParametric => "G-computation without predictive mean matching",
            EstimatorKind::GcompSelfReport => "G-computation with self-reported compliance",
            EstimatorKind::GcompTrue => "G-computation with true compliance",
            EstimatorKind::GcompFull => "Full G-computation",
            EstimatorKind::GcompThreshold => "G-computation with biomarker threshold",
        }
    }

    pub fn uses_mixture(self) -> bool {
        matches!(self, EstimatorKind::GcompFull | EstimatorKind::GcompParametric)
    }

    pub fn parse_list(s: &str) -> Result<Vec<EstimatorKind>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let k: EstimatorKind = part.parse()?;
            if !out.contains(&k) {
                out.push(k);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("empty estimator list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Arm to analyse; may be omitted when the data hold a single arm.
    pub arm: Option<String>,
    /// Comparison arm for ITT.
    pub control_arm: Option<String>,
    /// Per-time intercepts in the compliance model of the mixture.
    pub per_time_intercepts: bool,
    /// `biomarker_split`, `threshold:<t>` or `random:<seed>`.
    pub em_init: String,
    pub em_tol: f64,
    pub em_max_iter: usize,
    /// Treat a non-converged mixture fit as a failure.
    pub require_em_convergence: bool,
    pub donors: usize,
    pub pmm_outcome: bool,
    pub mc_samples: usize,
    /// Biomarker cutoff for `gcomp-threshold`.
    pub threshold: Option<f64>,
    /// Missing post-baseline visits count as self-reported noncompliance.
    pub missing_as_noncompliant: bool,
    /// Confounder support, `name = [lo, hi]`.
    pub bounds: BTreeMap<String, [f64; 2]>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            arm: None,
            control_arm: None,
            per_time_intercepts: false,
            em_init: "biomarker_split".into(),
            em_tol: EmOptions::default().tol,
            em_max_iter: EmOptions::default().max_iter,
            require_em_convergence: true,
            donors: DEFAULT_K,
            pmm_outcome: false,
            mc_samples: DEFAULT_MC_SAMPLES,
            threshold: None,
            missing_as_noncompliant: true,
            bounds: BTreeMap::new(),
        }
    }
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<AnalysisConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions { tol: self.em_tol, max_iter: self.em_max_iter }
    }

    pub fn init_strategy(&self) -> Result<InitStrategy> {
        self.em_init.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmSummary {
    pub iterations: usize,
    pub converged: bool,
    pub loglik: f64,
}

impl From<&EmTrace> for EmSummary {
    fn from(t: &EmTrace) -> Self {
        EmSummary {
            iterations: t.iterations,
            converged: t.converged,
            loglik: t.loglik.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput {
    pub estimator: EstimatorKind,
    pub value: f64,
    pub monte_carlo: Option<CausalEstimate>,
    pub em: Option<EmSummary>,
    /// ITT arm means (treated, control).
    pub arm_means: Option<(f64, f64)>,
}

/// One dataset prepared for estimation.
pub struct Analysis {
    pub config: AnalysisConfig,
    pub arm: String,
    full: LongitudinalDataset,
    pub data: LongitudinalDataset,
    pub frame: ViewFrame,
    starts: Vec<Baseline>,
    mixture: Option<(MixtureModel, EmTrace)>,
    em_reg: Option<(EmRegModel, EmTrace)>,
    warm_mixture: Option<MixtureModel>,
    warm_em_reg: Option<EmRegModel>,
}

impl Analysis {
    pub fn new(ds: &LongitudinalDataset, config: &AnalysisConfig) -> Result<Analysis> {
        let mut full = ds.clone();
        if config.missing_as_noncompliant {
            full.mark_missing_noncompliant();
        }
        for (name, [lo, hi]) in &config.bounds {
            let j = full
                .z_names
                .iter()
                .position(|z| z == name)
                .ok_or_else(|| Error::Config(format!("bounds given for unknown confounder `{name}`")))?;
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::Config(format!("empty bounds for `{name}`")));
            }
            full.z_bounds[j] = Some((*lo, *hi));
        }
        let arms = full.arms();
        let arm = match &config.arm {
            Some(a) if arms.contains(a.as_str()) => a.clone(),
            Some(a) => return Err(Error::Config(format!("arm `{a}` not present in the data"))),
            None if arms.len() == 1 => arms.first().expect("one arm").to_string(),
            None if arms.is_empty() => return Err(Error::Config("dataset has no participants".into())),
            None => return Err(Error::Config("data hold several arms; choose one with `arm`".into())),
        };
        let data = full.restrict_to_arm(&arm);
        let frame = ViewFrame::of_dataset(&data);
        let starts = baselines(&data);
        Ok(Analysis {
            config: config.clone(),
            arm,
            full,
            data,
            frame,
            starts,
            mixture: None,
            em_reg: None,
            warm_mixture: None,
            warm_em_reg: None,
        })
    }

    /// Starts later mixture fits from these models instead of `em_init`.
    pub fn with_warm_start(mut self, mixture: Option<MixtureModel>, em_reg: Option<EmRegModel>) -> Self {
        self.warm_mixture = mixture;
        self.warm_em_reg = em_reg;
        self
    }

    fn check_em(&self, trace: &EmTrace) -> Result<()> {
        if self.config.require_em_convergence && !trace.converged {
            return Err(Error::EmNotConverged { iterations: trace.iterations });
        }
        Ok(())
    }

    /// The biomarker mixture fit, computed once.
    pub fn mixture(&mut self) -> Result<&(MixtureModel, EmTrace)> {
        if self.mixture.is_none() {
            let recipe = ComplianceRecipe::standard(self.config.per_time_intercepts);
            let data = ComplianceData::new(&self.frame, &recipe);
            let init = match &self.warm_mixture {
                Some(m) => InitStrategy::FromModel(Box::new(m.clone())),
                None => self.config.init_strategy()?,
            };
            let fit = fit_em(&data, &init, &self.config.em_options())?;
            self.check_em(&fit.1)?;
            self.mixture = Some(fit);
        }
        Ok(self.mixture.as_ref().expect("just set"))
    }

    pub fn em_reg(&mut self) -> Result<&(EmRegModel, EmTrace)> {
        if self.em_reg.is_none() {
            let init = match &self.warm_em_reg {
                Some(m) => EmRegInit::FromModel(Box::new(m.clone())),
                None => EmRegInit::Weights(self.config.init_strategy()?),
            };
            let fit = fit_em_reg(&self.frame, self.config.per_time_intercepts, &init, &self.config.em_options())?;
            self.check_em(&fit.1)?;
            self.em_reg = Some(fit);
        }
        Ok(self.em_reg.as_ref().expect("just set"))
    }

    pub fn baselines(&self) -> &[Baseline] {
        &self.starts
    }

    fn gcomp(
        &mut self,
        source: WeightSource,
        mode: SamplingMode,
        seed: u64,
    ) -> Result<(CausalEstimate, Option<EmSummary>)> {
        let (mixture, em) = if source == WeightSource::Posterior {
            let (m, t) = self.mixture()?;
            (Some(m.clone()), Some(EmSummary::from(t)))
        } else {
            (None, None)
        };
        let w = view_weights(&self.frame, source, mixture.as_ref())?;
        let opts = GcompOptions { mode, k: self.config.donors, pmm_outcome: self.config.pmm_outcome };
        let models = fit_models(&self.frame, &w, source.floor(), &self.data.z_bounds, &opts)?;
        Ok((estimate(&models, &self.starts, self.config.mc_samples, seed)?, em))
    }

    /// Runs one estimator. `seed` drives the Monte Carlo integration.
    pub fn run(&mut self, kind: EstimatorKind, seed: u64) -> Result<EstimateOutput> {
        let plain = |value| EstimateOutput { estimator: kind, value, monte_carlo: None, em: None, arm_means: None };
        let gcomp = |this: &mut Self, source, mode| -> Result<EstimateOutput> {
            let (mc, em) = this.gcomp(source, mode, seed)?;
            Ok(EstimateOutput { estimator: kind, value: mc.mean, monte_carlo: Some(mc), em, arm_means: None })
        };
        match kind {
            EstimatorKind::Itt => {
                let control = match &self.config.control_arm {
                    Some(c) => c.clone(),
                    None => {
                        let others: Vec<&str> = self.full.arms().into_iter().filter(|a| *a != self.arm).collect();
                        match others.as_slice() {
                            [one] => one.to_string(),
                            [] => return Err(Error::NotApplicable("ITT needs two arms".into())),
                            _ => return Err(Error::Config("several comparison arms; set `control_arm`".into())),
                        }
                    }
                };
                let r = itt(&self.full, &self.arm, &control)?;
                Ok(EstimateOutput { arm_means: Some((r.mean_treated, r.mean_control)), ..plain(r.difference) })
            }
            EstimatorKind::PerProtocol => Ok(plain(per_protocol(&self.data)?)),
            EstimatorKind::EmReg => {
                let frame = self.frame.clone();
                let (m, t) = self.em_reg()?;
                let value = em_reg_estimate(m, &frame)?;
                Ok(EstimateOutput { em: Some(EmSummary::from(t)), ..plain(value) })
            }
            EstimatorKind::GcompFull => gcomp(self, WeightSource::Posterior, SamplingMode::Pmm),
            EstimatorKind::GcompParametric => gcomp(self, WeightSource::Posterior, SamplingMode::Parametric),
            EstimatorKind::GcompSelfReport => gcomp(self, WeightSource::SelfReport, SamplingMode::Pmm),
            EstimatorKind::GcompTrue => {
                if !self.data.has_true_compliance() {
                    return Err(Error::NotApplicable("true compliance is only available for simulated data".into()));
                }
                gcomp(self, WeightSource::TrueCompliance, SamplingMode::Pmm)
            }
            EstimatorKind::GcompThreshold => {
                let t =
                    self.config.threshold.ok_or_else(|| Error::Config("gcomp-threshold needs `threshold`".into()))?;
                gcomp(self, WeightSource::Threshold(t), SamplingMode::Pmm)
            }
        }
    }

    pub fn fitted_mixture(&self) -> Option<&MixtureModel> {
        self.mixture.as_ref().map(|m| &m.0)
    }

    pub fn fitted_em_reg(&self) -> Option<&EmRegModel> {
        self.em_reg.as_ref().map(|m| &m.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert_eq!(
            EstimatorKind::parse_list("pp, gcomp-full,pp").unwrap(),
            vec![EstimatorKind::PerProtocol, EstimatorKind::GcompFull]
        );
        assert!(EstimatorKind::parse_list("pp,bogus").is_err());
    }

    #[test]
    fn config_defaults_and_round_trip() {
        let c = AnalysisConfig::from_toml("mc_samples = 500\n[bounds]\nz = [0.0, inf]\n").unwrap();
        assert_eq!(c.mc_samples, 500);
        assert_eq!(c.donors, 5);
        assert_eq!(c.bounds["z"], [0.0, f64::INFINITY]);
        assert_eq!(AnalysisConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(AnalysisConfig::from_toml("unknown_key = 1").is_err());
    }
}
