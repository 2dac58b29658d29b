//! Posterior compliance probabilities from a biomarker mixture.
//!
//! Among self-reported compliers, the biomarker density is a two-class
//! mixture `psi = rho g1 + (1 - rho) g0`: `rho` is a logistic model for
//! compliance given the current and lagged confounders and baseline
//! covariates, and `g1`, `g0` are Gaussian regressions of the (log-scale)
//! biomarker within each class. The mixture is fitted by EM and the
//! posterior `rho g1 / psi` replaces the unobserved compliance indicator in
//! the weighted estimating equations.
//!
//! Class labels are fixed after convergence: the class with the lower mean
//! fitted biomarker is the compliant one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::Transition;
use crate::design::{recipes, DesignRecipe, RowInput, ViewFrame};
use crate::error::{Error, Result};
use crate::glm::{DesignMatrix, LinearFit};
use crate::mixture::{self, EmOptions, EmTrace, MixtureData, MixtureParams, Response};
use crate::rng::{stream, Domain};
use crate::stats::{log_add_exp, log_logistic, median};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceRecipe {
    pub mixing: DesignRecipe,
    pub biomarker: DesignRecipe,
}

impl ComplianceRecipe {
    pub fn standard(per_time_intercepts: bool) -> Self {
        ComplianceRecipe { mixing: recipes::compliance(per_time_intercepts), biomarker: recipes::biomarker() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub alpha: Vec<f64>,
    pub alpha_labels: Vec<String>,
    /// Biomarker model among compliers.
    pub xi_c1: LinearFit,
    /// Biomarker model among noncompliers.
    pub xi_c0: LinearFit,
    pub biomarker_labels: Vec<String>,
    pub recipe: ComplianceRecipe,
}

/// Design matrices for the mixture fit over an estimation view.
#[derive(Debug, Clone)]
pub struct ComplianceData {
    pub(crate) inner: MixtureData,
    pub recipe: ComplianceRecipe,
    /// Number of time points of the source dataset.
    pub k: usize,
}

impl ComplianceData {
    pub fn new(frame: &ViewFrame, recipe: &ComplianceRecipe) -> Self {
        ComplianceData {
            inner: MixtureData {
                mixing: recipe.mixing.build(frame),
                responses: vec![Response { values: frame.b.clone(), design: recipe.biomarker.build(frame) }],
            },
            recipe: recipe.clone(),
            k: frame.layout.k,
        }
    }

    /// From explicit designs; the recipe is recorded but not used to build rows.
    pub fn from_parts(mixing: DesignMatrix, biomarker_design: DesignMatrix, b: Vec<f64>) -> Self {
        ComplianceData {
            inner: MixtureData { mixing, responses: vec![Response { values: b, design: biomarker_design }] },
            recipe: ComplianceRecipe::standard(false),
            k: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn biomarker(&self) -> &[f64] {
        &self.inner.responses[0].values
    }

    fn model_from(&self, p: MixtureParams) -> MixtureModel {
        let [xi_c1]: [LinearFit; 1] = p.compliant.try_into().expect("single response");
        let [xi_c0]: [LinearFit; 1] = p.noncompliant.try_into().expect("single response");
        MixtureModel {
            alpha: p.mixing,
            alpha_labels: self.inner.mixing.labels().to_vec(),
            xi_c1,
            xi_c0,
            biomarker_labels: self.inner.responses[0].design.labels().to_vec(),
            recipe: self.recipe.clone(),
        }
    }
}

impl MixtureModel {
    fn params(&self) -> MixtureParams {
        MixtureParams {
            mixing: self.alpha.clone(),
            compliant: vec![self.xi_c1.clone()],
            noncompliant: vec![self.xi_c0.clone()],
        }
    }

    /// Key-value text export: recipes, then coefficient name = value per model.
    pub fn to_text(&self) -> String {
        use toml::{Table, Value};
        let coeffs = |labels: &[String], values: &[f64]| -> Table {
            labels.iter().zip(values).map(|(l, v)| (l.clone(), Value::Float(*v))).collect()
        };
        let component = |fit: &LinearFit| -> Table {
            let mut t = Table::new();
            t.insert("sigma2".into(), Value::Float(fit.sigma2));
            t.insert("n_effective".into(), Value::Float(fit.n_effective));
            t.insert("coefficients".into(), Value::Table(coeffs(&self.biomarker_labels, &fit.coefficients)));
            t
        };
        let recipe = Value::try_from(&self.recipe).expect("recipe serializes");
        let mut doc = Table::new();
        doc.insert("recipe".into(), recipe);
        doc.insert("alpha".into(), Value::Table(coeffs(&self.alpha_labels, &self.alpha)));
        doc.insert("xi_c1".into(), Value::Table(component(&self.xi_c1)));
        doc.insert("xi_c0".into(), Value::Table(component(&self.xi_c0)));
        format!("# two-class biomarker mixture\n{}", toml::to_string(&doc).expect("model serializes"))
    }

    pub fn from_text(text: &str) -> Result<MixtureModel> {
        use toml::{Table, Value};
        let bad = |what: &str| Error::Config(format!("mixture model: {what}"));
        let doc: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let recipe: ComplianceRecipe = doc
            .get("recipe")
            .cloned()
            .ok_or_else(|| bad("missing recipe"))?
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let read_coeffs = |t: &Value| -> Result<(Vec<String>, Vec<f64>)> {
            let t = t.as_table().ok_or_else(|| bad("coefficients must be a table"))?;
            let mut labels = Vec::new();
            let mut values = Vec::new();
            for (k, v) in t {
                labels.push(k.clone());
                values.push(v.as_float().ok_or_else(|| bad("coefficient must be a float"))?);
            }
            Ok((labels, values))
        };
        let read_component = |name: &str| -> Result<(Vec<String>, LinearFit)> {
            let t = doc.get(name).and_then(Value::as_table).ok_or_else(|| bad(name))?;
            let float = |k: &str| t.get(k).and_then(Value::as_float).ok_or_else(|| bad(k));
            let (labels, coefficients) = read_coeffs(t.get("coefficients").ok_or_else(|| bad("coefficients"))?)?;
            Ok((labels, LinearFit { coefficients, sigma2: float("sigma2")?, n_effective: float("n_effective")? }))
        };
        let (alpha_labels, alpha) = read_coeffs(doc.get("alpha").ok_or_else(|| bad("alpha"))?)?;
        let (biomarker_labels, xi_c1) = read_component("xi_c1")?;
        let (_, xi_c0) = read_component("xi_c0")?;
        Ok(MixtureModel { alpha, alpha_labels, xi_c1, xi_c0, biomarker_labels, recipe })
    }
}

fn check_dims(m: &MixtureModel, data: &ComplianceData) -> Result<()> {
    let expected = m.alpha.len();
    let got = data.inner.mixing.columns();
    if expected != got {
        return Err(crate::glm::GlmError::DimensionMismatch { expected, got }.into());
    }
    let expected = m.xi_c1.coefficients.len();
    let got = data.inner.responses[0].design.columns();
    if expected != got {
        return Err(crate::glm::GlmError::DimensionMismatch { expected, got }.into());
    }
    Ok(())
}

/// `sum log psi(b)` over the view.
pub fn observed_loglik(m: &MixtureModel, data: &ComplianceData) -> Result<f64> {
    check_dims(m, data)?;
    Ok(mixture::evaluate(&m.params(), &data.inner)?.0)
}

/// Posterior compliance probabilities `rho g1 / psi` for every view row.
pub fn e_step(m: &MixtureModel, data: &ComplianceData) -> Result<Vec<f64>> {
    check_dims(m, data)?;
    Ok(mixture::evaluate(&m.params(), &data.inner)?.1)
}

/// Weighted refits. A class with too little weight keeps its value from
/// `previous`; without a previous model that is an error.
pub fn m_step(data: &ComplianceData, w: &[f64], previous: Option<&MixtureModel>) -> Result<MixtureModel> {
    if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(crate::glm::GlmError::InvalidResponse { unit_interval: true }.into());
    }
    let prev = previous.map(MixtureModel::params);
    let (p, _) = mixture::m_step(&data.inner, w, prev.as_ref())?;
    Ok(data.model_from(p))
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Below-median biomarker = compliant.
    BiomarkerSplit,
    /// `b < t` = compliant.
    Threshold(f64),
    /// Weights uniform on `[0.25, 0.75]`.
    Random(u64),
    /// Start from an existing model.
    FromModel(Box<MixtureModel>),
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let arg = |p: &str| s.strip_prefix(p).map(str::trim);
        if s == "biomarker_split" {
            Ok(InitStrategy::BiomarkerSplit)
        } else if let Some(t) = arg("threshold:") {
            t.parse().map(InitStrategy::Threshold).map_err(|_| Error::Config(format!("bad threshold `{t}`")))
        } else if let Some(seed) = arg("random:") {
            seed.parse().map(InitStrategy::Random).map_err(|_| Error::Config(format!("bad seed `{seed}`")))
        } else {
            Err(Error::Config(format!("unknown EM initialization `{s}`")))
        }
    }
}

/// Initial weights for the weight-based strategies.
pub fn init_weights(data: &ComplianceData, mode: &InitStrategy) -> Result<Vec<f64>> {
    initial_weights(data.biomarker(), mode)
}

/// Initial compliance weights computed from biomarker values alone.
pub fn initial_weights(b: &[f64], mode: &InitStrategy) -> Result<Vec<f64>> {
    match mode {
        InitStrategy::BiomarkerSplit => {
            let m = median(b);
            Ok(b.iter().map(|&v| if v < m { 1.0 } else { 0.0 }).collect())
        }
        InitStrategy::Threshold(t) => Ok(b.iter().map(|&v| if v < *t { 1.0 } else { 0.0 }).collect()),
        InitStrategy::Random(seed) => {
            let mut rng = stream(*seed, Domain::Init, 0);
            Ok(b.iter().map(|_| rng.random_range(0.25..0.75)).collect())
        }
        InitStrategy::FromModel(_) => Err(Error::Config("model initialization has no weight vector".into())),
    }
}

/// Fits the mixture by EM; non-convergence is reported in the trace.
pub fn fit_em(data: &ComplianceData, init: &InitStrategy, opts: &EmOptions) -> Result<(MixtureModel, EmTrace)> {
    if data.is_empty() {
        return Err(Error::EmptyView("no self-reported compliant transitions".into()));
    }
    let start = match init {
        InitStrategy::FromModel(m) => {
            check_dims(m, data)?;
            m.params()
        }
        other => {
            let w = init_weights(data, other)?;
            mixture::m_step(&data.inner, &w, None)?.0
        }
    };
    let (p, trace) = mixture::run_em(&data.inner, start, opts)?;
    Ok((data.model_from(p), trace))
}

/// Posterior compliance for one observation. Self-reported noncompliance
/// returns 0 without consulting the model.
pub fn posterior_compliance(m: &MixtureModel, t: &Transition<'_>, k: usize) -> Result<f64> {
    if t.current.d != Some(true) {
        return Ok(0.0);
    }
    let missing = || Error::NotApplicable("posterior needs a complete observation and lag".into());
    let z = t.current.z_values().ok_or_else(missing)?;
    let z_lag = t.lagged.z_values().ok_or_else(missing)?;
    let input = RowInput {
        time: t.current.time,
        y: t.current.y.ok_or_else(missing)?,
        z: &z,
        y_lag: t.lagged.y.ok_or_else(missing)?,
        z_lag: &z_lag,
        x: &t.participant.x,
    };
    let b = t.current.b.ok_or_else(missing)?;
    let mut row = Vec::new();
    m.recipe.mixing.fill_row(k, &input, &mut row);
    if row.len() != m.alpha.len() {
        return Err(crate::glm::GlmError::DimensionMismatch { expected: m.alpha.len(), got: row.len() }.into());
    }
    let eta: f64 = row.iter().zip(&m.alpha).map(|(a, b)| a * b).sum();
    m.recipe.biomarker.fill_row(k, &input, &mut row);
    let g1 = crate::glm::gaussian_log_density(b, m.xi_c1.predict_row(&row), m.xi_c1.sigma2)?;
    let g0 = crate::glm::gaussian_log_density(b, m.xi_c0.predict_row(&row), m.xi_c0.sigma2)?;
    let l1 = log_logistic(eta) + g1;
    let l0 = log_logistic(-eta) + g0;
    Ok((l1 - log_add_exp(l1, l0)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{fit_weighted_linear, gaussian_density};
    use crate::stats::logistic;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn intercept_only(n: usize) -> DesignMatrix {
        DesignMatrix::new(DMatrix::from_element(n, 1, 1.0), vec!["intercept".into()])
    }

    fn model(alpha: f64, mu1: f64, s1: f64, mu0: f64, s0: f64) -> MixtureModel {
        MixtureModel {
            alpha: vec![alpha],
            alpha_labels: vec!["intercept".into()],
            xi_c1: LinearFit { coefficients: vec![mu1], sigma2: s1, n_effective: 1.0 },
            xi_c0: LinearFit { coefficients: vec![mu0], sigma2: s0, n_effective: 1.0 },
            biomarker_labels: vec!["intercept".into()],
            recipe: ComplianceRecipe::standard(false),
        }
    }

    fn data(b: &[f64]) -> ComplianceData {
        ComplianceData::from_parts(intercept_only(b.len()), intercept_only(b.len()), b.to_vec())
    }

    /// Covariate-dependent two-class data: x ~ N(0,1), c ~ Bern(logistic(a0 + a1 x)),
    /// b = mu_c + slope x + noise.
    fn simulated(n: usize, seed: u64, mu1: f64, mu0: f64, a0: f64) -> (ComplianceData, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mix = Vec::with_capacity(2 * n);
        let mut b = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let comp = rand::Rng::random::<f64>(&mut rng) < logistic(a0 + 0.8 * x);
            let e: f64 = StandardNormal.sample(&mut rng);
            b.push(if comp { mu1 } else { mu0 } + 0.5 * x + e);
            mix.extend_from_slice(&[1.0, x]);
            c.push(comp);
        }
        let design = DesignMatrix::from_row_slice(n, 2, &mix, vec!["intercept".into(), "x".into()]);
        (ComplianceData::from_parts(design.clone(), design, b), c)
    }

    #[test]
    fn degenerate_mixture_loglik() {
        let m = model(0.0, 1.0, 2.0, 1.0, 2.0);
        let ll = observed_loglik(&m, &data(&[0.3])).unwrap();
        assert!((ll - gaussian_density(0.3, 1.0, 2.0).unwrap().ln()).abs() < 1e-14);
    }

    #[test]
    fn saturated_mixing_reduces_to_class_one() {
        let m = model(40.0, 1.0, 2.0, 5.0, 1.0);
        let b = [0.1, 1.4, 3.0];
        let ll = observed_loglik(&m, &data(&b)).unwrap();
        let direct: f64 = b.iter().map(|&v| gaussian_density(v, 1.0, 2.0).unwrap().ln()).sum();
        assert!((ll - direct).abs() < 1e-12);
    }

    #[test]
    fn loglik_matches_term_by_term_sum() {
        // ten rows with a covariate; computed directly in probability space
        let xs = [-1.2, -0.7, -0.3, 0.0, 0.2, 0.5, 0.9, 1.1, 1.6, 2.0];
        let bs = [0.4, 2.2, 1.1, 3.5, 0.2, 2.9, 1.7, 0.8, 3.3, 2.4];
        let mut rows = Vec::new();
        for &x in &xs {
            rows.extend_from_slice(&[1.0, x]);
        }
        let d = DesignMatrix::from_row_slice(10, 2, &rows, vec!["intercept".into(), "x".into()]);
        let cd = ComplianceData::from_parts(d.clone(), d, bs.to_vec());
        let m = MixtureModel {
            alpha: vec![0.3, -0.8],
            alpha_labels: vec!["intercept".into(), "x".into()],
            xi_c1: LinearFit { coefficients: vec![1.0, 0.2], sigma2: 0.6, n_effective: 1.0 },
            xi_c0: LinearFit { coefficients: vec![2.8, -0.1], sigma2: 0.9, n_effective: 1.0 },
            biomarker_labels: vec!["intercept".into(), "x".into()],
            recipe: ComplianceRecipe::standard(false),
        };
        let mut direct = 0.0;
        let mut post = Vec::new();
        for (&x, &b) in xs.iter().zip(&bs) {
            let rho = 1.0 / (1.0 + (-(0.3 - 0.8 * x)).exp());
            let g1 = (-(b - (1.0 + 0.2 * x)).powi(2) / (2.0 * 0.6)).exp() / (2.0 * std::f64::consts::PI * 0.6).sqrt();
            let g0 = (-(b - (2.8 - 0.1 * x)).powi(2) / (2.0 * 0.9)).exp() / (2.0 * std::f64::consts::PI * 0.9).sqrt();
            direct += (rho * g1 + (1.0 - rho) * g0).ln();
            post.push(rho * g1 / (rho * g1 + (1.0 - rho) * g0));
        }
        assert!((observed_loglik(&m, &cd).unwrap() - direct).abs() < 1e-12);
        let w = e_step(&m, &cd).unwrap();
        for (a, b) in w.iter().zip(&post) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uninformative_biomarker_returns_prior() {
        let m = model(0.7, 2.0, 1.0, 2.0, 1.0);
        let w = e_step(&m, &data(&[-3.0, 0.0, 2.0, 9.0])).unwrap();
        for v in w {
            assert!((v - logistic(0.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn far_biomarker_is_decisive() {
        // sd 1, class means 0 and 20: an observation at the compliant mean
        let m = model(0.0, 0.0, 1.0, 20.0, 1.0);
        let w = e_step(&m, &data(&[0.0])).unwrap();
        assert!(w[0] > 1.0 - 1e-6);
    }

    #[test]
    fn e_step_five_row_hand_computation() {
        let (alpha, mu1, s1, mu0, s0) = (-0.4, 1.5, 0.8, 3.0, 1.2);
        let m = model(alpha, mu1, s1, mu0, s0);
        let b = [0.9, 1.8, 2.4, 3.1, 4.2];
        let w = e_step(&m, &data(&b)).unwrap();
        let rho = 1.0 / (1.0 + (0.4f64).exp());
        for (i, &v) in b.iter().enumerate() {
            let g1 = gaussian_density(v, mu1, s1).unwrap();
            let g0 = gaussian_density(v, mu0, s0).unwrap();
            let expected = rho * g1 / (rho * g1 + (1.0 - rho) * g0);
            assert!((w[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn m_step_freezes_empty_class() {
        let b = [1.0, 2.0, 1.5, 0.5, 2.5, 1.2];
        let d = data(&b);
        assert!(m_step(&d, &[1.0; 6], None).is_err());
        let prev = model(0.0, 1.0, 1.0, 4.0, 1.0);
        let m = m_step(&d, &[1.0; 6], Some(&prev)).unwrap();
        assert_eq!(m.xi_c0, prev.xi_c0);
        assert!((m.xi_c1.coefficients[0] - 1.45).abs() < 1e-12);
    }

    #[test]
    fn hard_labels_give_per_class_fits() {
        let (d, c) = simulated(300, 11, 0.0, 3.0, 0.0);
        let w: Vec<f64> = c.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let m = m_step(&d, &w, None).unwrap();
        let resp = &d.inner.responses[0];
        let keep1: Vec<usize> = (0..300).filter(|&i| c[i]).collect();
        let sub = DesignMatrix::unlabeled(resp.design.matrix().select_rows(keep1.iter()));
        let yb: Vec<f64> = keep1.iter().map(|&i| resp.values[i]).collect();
        let direct = fit_weighted_linear(&sub, &yb, &vec![1.0; keep1.len()]).unwrap();
        for (a, b) in m.xi_c1.coefficients.iter().zip(&direct.coefficients) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn one_em_step_from_perturbed_truth_does_not_decrease_loglik() {
        let (d, _) = simulated(500, 12, 0.0, 2.5, 0.3);
        let start = MixtureModel {
            alpha: vec![0.1, 0.5],
            alpha_labels: vec!["intercept".into(), "x".into()],
            xi_c1: LinearFit { coefficients: vec![0.3, 0.4], sigma2: 1.3, n_effective: 1.0 },
            xi_c0: LinearFit { coefficients: vec![2.2, 0.6], sigma2: 0.8, n_effective: 1.0 },
            biomarker_labels: vec!["intercept".into(), "x".into()],
            recipe: ComplianceRecipe::standard(false),
        };
        let before = observed_loglik(&start, &d).unwrap();
        let w = e_step(&start, &d).unwrap();
        let next = m_step(&d, &w, Some(&start)).unwrap();
        assert!(observed_loglik(&next, &d).unwrap() >= before - 1e-8);
    }

    #[test]
    fn em_recovers_separated_components() {
        // means 0 and 5 with unit noise
        let (d, _) = simulated(2000, 13, 0.0, 5.0, 0.0);
        let (m, trace) = fit_em(&d, &InitStrategy::BiomarkerSplit, &EmOptions::default()).unwrap();
        assert!(trace.converged);
        assert!(trace.loglik.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        let se1 = (m.xi_c1.sigma2 / m.xi_c1.n_effective).sqrt();
        let se0 = (m.xi_c0.sigma2 / m.xi_c0.n_effective).sqrt();
        assert!((m.xi_c1.coefficients[0] - 0.0).abs() < 2.0 * se1 * 1.5, "{:?}", m.xi_c1);
        assert!((m.xi_c0.coefficients[0] - 5.0).abs() < 2.0 * se0 * 1.5, "{:?}", m.xi_c0);
        assert!((m.xi_c1.coefficients[1] - 0.5).abs() < 0.1);
    }

    #[test]
    fn single_class_data_saturates_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let normal = Normal::new(1.0, 1.0).unwrap();
        let b: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
        let (m, _) = fit_em(&data(&b), &InitStrategy::BiomarkerSplit, &EmOptions::default()).unwrap();
        // one class absorbs nearly everything; the pooled mean is recovered by the mixture
        let rho = logistic(m.alpha[0]);
        let mix_mean = rho * m.xi_c1.coefficients[0] + (1.0 - rho) * m.xi_c0.coefficients[0];
        let se = (1.0f64 / 1000.0).sqrt();
        assert!((mix_mean - 1.0).abs() < 2.0 * se * 1.5, "{mix_mean}");
    }

    #[test]
    fn fit_is_invariant_to_row_order() {
        let (d, _) = simulated(400, 15, 0.0, 3.0, 0.0);
        let n = d.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let resp = &d.inner.responses[0];
        let mix = DesignMatrix::new(d.inner.mixing.matrix().select_rows(perm.iter()), d.inner.mixing.labels().to_vec());
        let bd = DesignMatrix::new(resp.design.matrix().select_rows(perm.iter()), resp.design.labels().to_vec());
        let b: Vec<f64> = perm.iter().map(|&i| resp.values[i]).collect();
        let d2 = ComplianceData::from_parts(mix, bd, b);
        let (m1, _) = fit_em(&d, &InitStrategy::BiomarkerSplit, &EmOptions::default()).unwrap();
        let (m2, _) = fit_em(&d2, &InitStrategy::BiomarkerSplit, &EmOptions::default()).unwrap();
        for (a, b) in m1.alpha.iter().zip(&m2.alpha) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in m1.xi_c1.coefficients.iter().zip(&m2.xi_c1.coefficients) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn swapped_initial_labels_give_same_labeled_model() {
        let (d, _) = simulated(800, 16, 0.0, 4.0, 0.2);
        let w = init_weights(&d, &InitStrategy::BiomarkerSplit).unwrap();
        let flipped: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
        let start_a = m_step(&d, &w, None).unwrap();
        let start_b = m_step(&d, &flipped, None).unwrap();
        let opts = EmOptions { tol: 1e-10, max_iter: 2000 };
        let (a, _) = fit_em(&d, &InitStrategy::FromModel(Box::new(start_a)), &opts).unwrap();
        let (b, _) = fit_em(&d, &InitStrategy::FromModel(Box::new(start_b)), &opts).unwrap();
        assert!(a.xi_c1.coefficients[0] < a.xi_c0.coefficients[0]);
        for (x, y) in a.xi_c1.coefficients.iter().zip(&b.xi_c1.coefficients) {
            assert!((x - y).abs() < 1e-5);
        }
        for (x, y) in a.alpha.iter().zip(&b.alpha) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn init_modes() {
        let b = [6.0, 6.5, 6.3, 7.2, 5.1];
        let d = data(&b);
        assert_eq!(init_weights(&d, &InitStrategy::Threshold(6.41)).unwrap(), vec![1.0, 0.0, 1.0, 0.0, 1.0]);
        let sym = data(&[-3.0, -1.0, -0.5, 0.5, 1.0, 3.0]);
        let half = init_weights(&sym, &InitStrategy::BiomarkerSplit).unwrap();
        assert_eq!(half.iter().sum::<f64>(), 3.0);
        let r1 = init_weights(&d, &InitStrategy::Random(3)).unwrap();
        let r2 = init_weights(&d, &InitStrategy::Random(3)).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.iter().all(|v| (0.25..0.75).contains(v)));
        assert!("bogus".parse::<InitStrategy>().is_err());
        assert_eq!("threshold:6.41".parse::<InitStrategy>().unwrap(), InitStrategy::Threshold(6.41));
    }

    #[test]
    fn text_export_round_trips() {
        let (d, _) = simulated(300, 17, 0.0, 3.0, 0.0);
        let (m, _) = fit_em(&d, &InitStrategy::BiomarkerSplit, &EmOptions::default()).unwrap();
        let text = m.to_text();
        assert!(text.contains("[alpha]"));
        assert_eq!(MixtureModel::from_text(&text).unwrap(), m);
    }
}
