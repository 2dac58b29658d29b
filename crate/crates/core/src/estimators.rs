//! Comparison estimators: intention to treat, per protocol, and the
//! regression estimator from a joint biomarker-outcome mixture (EM-REG).

use serde::{Deserialize, Serialize};

use crate::compliance_em::{initial_weights, InitStrategy};
use crate::data_model::LongitudinalDataset;
use crate::design::{recipes, DesignRecipe, ViewFrame};
use crate::error::{Error, Result};
use crate::glm::LinearFit;
use crate::mixture::{self, EmOptions, EmTrace, MixtureData, MixtureParams, Response};
use crate::stats::CompensatedSum;

/// Complete-case mean of the final-time outcome.
pub fn terminal_mean(ds: &LongitudinalDataset) -> Option<f64> {
    let last = ds.k.checked_sub(1)?;
    let mut s = CompensatedSum::new();
    let mut n = 0usize;
    for p in &ds.participants {
        if let Some(y) = p.at(last).filter(|o| !o.is_missing()).and_then(|o| o.y) {
            s.add(y);
            n += 1;
        }
    }
    (n > 0).then(|| s.value() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IttResult {
    pub mean_treated: f64,
    pub mean_control: f64,
    /// `mean_treated - mean_control`.
    pub difference: f64,
}

/// Difference of complete-case terminal outcome means between two arms.
pub fn itt(ds: &LongitudinalDataset, treated: &str, control: &str) -> Result<IttResult> {
    let arm_mean = |a: &str| {
        terminal_mean(&ds.restrict_to_arm(a))
            .ok_or_else(|| Error::NotApplicable(format!("arm `{a}` has no final-time outcomes")))
    };
    let mean_treated = arm_mean(treated)?;
    let mean_control = arm_mean(control)?;
    Ok(IttResult { mean_treated, mean_control, difference: mean_treated - mean_control })
}

/// Terminal outcome mean among participants who self-reported compliance at
/// every post-baseline visit.
pub fn per_protocol(ds: &LongitudinalDataset) -> Result<f64> {
    let last = ds.k.saturating_sub(1);
    let mut s = CompensatedSum::new();
    let mut n = 0usize;
    for p in &ds.participants {
        let compliant = (1..ds.k).all(|t| p.at(t).is_some_and(|o| !o.is_missing() && o.d == Some(true)));
        if !compliant {
            continue;
        }
        if let Some(y) = p.at(last).and_then(|o| o.y) {
            s.add(y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NotApplicable("no participant self-reported full compliance".into()));
    }
    Ok(s.value() / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmRegModel {
    /// Compliance model given current confounders and the lagged state
    /// (the current outcome is excluded).
    pub delta: Vec<f64>,
    pub delta_labels: Vec<String>,
    pub xi_c1: LinearFit,
    pub xi_c0: LinearFit,
    pub beta_y_c1: LinearFit,
    pub beta_y_c0: LinearFit,
    pub mixing_recipe: DesignRecipe,
}

impl EmRegModel {
    fn params(&self) -> MixtureParams {
        MixtureParams {
            mixing: self.delta.clone(),
            compliant: vec![self.xi_c1.clone(), self.beta_y_c1.clone()],
            noncompliant: vec![self.xi_c0.clone(), self.beta_y_c0.clone()],
        }
    }
}

/// Mixture data for the joint fit: biomarker first, outcome second.
pub fn em_reg_data(frame: &ViewFrame, per_time_intercepts: bool) -> (MixtureData, DesignRecipe) {
    let mixing_recipe = recipes::joint_compliance(per_time_intercepts);
    let data = MixtureData {
        mixing: mixing_recipe.build(frame),
        responses: vec![
            Response { values: frame.b.clone(), design: recipes::biomarker().build(frame) },
            Response { values: frame.y.clone(), design: recipes::outcome().build(frame) },
        ],
    };
    (data, mixing_recipe)
}

#[derive(Debug, Clone)]
pub enum EmRegInit {
    Weights(InitStrategy),
    FromModel(Box<EmRegModel>),
}

pub fn fit_em_reg(
    frame: &ViewFrame,
    per_time_intercepts: bool,
    init: &EmRegInit,
    opts: &EmOptions,
) -> Result<(EmRegModel, EmTrace)> {
    if frame.is_empty() {
        return Err(Error::EmptyView("no self-reported compliant transitions".into()));
    }
    let (data, mixing_recipe) = em_reg_data(frame, per_time_intercepts);
    let start = match init {
        EmRegInit::FromModel(m) => m.params(),
        EmRegInit::Weights(InitStrategy::FromModel(_)) => {
            return Err(Error::Config("EM-REG cannot start from a biomarker-only model".into()))
        }
        EmRegInit::Weights(mode) => mixture::m_step(&data, &initial_weights(&frame.b, mode)?, None)?.0,
    };
    let (p, trace) = mixture::run_em(&data, start, opts)?;
    let [xi_c1, beta_y_c1]: [LinearFit; 2] = p.compliant.try_into().expect("two responses");
    let [xi_c0, beta_y_c0]: [LinearFit; 2] = p.noncompliant.try_into().expect("two responses");
    let model = EmRegModel {
        delta: p.mixing,
        delta_labels: data.mixing.labels().to_vec(),
        xi_c1,
        xi_c0,
        beta_y_c1,
        beta_y_c0,
        mixing_recipe,
    };
    Ok((model, trace))
}

/// Average compliant-class outcome mean over the final-time view rows.
pub fn em_reg_estimate(m: &EmRegModel, frame: &ViewFrame) -> Result<f64> {
    let last = frame.layout.k.saturating_sub(1);
    let recipe = recipes::outcome();
    let mut row = Vec::new();
    let mut s = CompensatedSum::new();
    let mut n = 0usize;
    for i in (0..frame.len()).filter(|&i| frame.time[i] == last) {
        recipe.fill_row(frame.layout.k, &frame.row_input(i), &mut row);
        s.add(m.beta_y_c1.predict_row(&row));
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyView("no final-time transitions".into()));
    }
    Ok(s.value() / n as f64)
}
