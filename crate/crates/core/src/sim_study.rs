//! Synthetic single-arm trials with unobserved compliance, calibration of
//! the generating coefficients to target operating characteristics, and
//! replicate studies reporting bias, Monte Carlo SD and MSE.
//!
//! Generating process, per participant and for `j = 1..K-1`:
//!
//! ```text
//! X ~ N(0, 1),  Y_0 = 0,  Z_0 ~ ZIP(pi, softplus(z0_intercept + z_x X))
//! C_j ~ Bern(logistic(c_j + c_lag_y Y_{j-1} + c_lag_z Z_{j-1} + c_x X))
//! D_j = 1 if C_j = 1, else Bern(dishonesty)
//! Z_j ~ ZIP(pi, softplus(z_intercept + z_lag_z Z_{j-1} + z_lag_y Y_{j-1} + z_x X + z_c C_j))
//! Y_j = y_intercept + y_z Z_j + y_lag_y Y_{j-1} + y_lag_z Z_{j-1} + y_x X
//!       + y_noncompliance (1 - C_j) + y_sd e
//! B_j = b_intercept + b_y Y_j + b_z Z_j + b_lag_y Y_{j-1} + b_lag_z Z_{j-1} + b_x X
//!       + b_c C_j + b_sd e'
//! ```
//!
//! `ZIP(pi, mu)` is a structural zero with probability `pi` and
//! `Poisson(mu)` otherwise. All random inputs of a participant are drawn in
//! a fixed order from that participant's own stream, and the Poisson draw
//! uses inversion, so changing a coefficient never reshuffles the noise.
//! Calibration relies on this to search over smooth functions.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance_em::{e_step, fit_em, ComplianceData, ComplianceRecipe, InitStrategy};
use crate::data_model::{LongitudinalDataset, Observation, Participant};
use crate::design::{recipes, ViewFrame};
use crate::error::{Error, Result};
use crate::glm::fit_weighted_linear;
use crate::mixture::EmOptions;
use crate::pipeline::{Analysis, AnalysisConfig, EstimatorKind};
use crate::rng::{derive_seed, stream, Domain, StreamRng};
use crate::stats::{auc, logistic, mean, sample_sd, softplus, CompensatedSum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Probability that a noncomplier reports compliance.
    pub dishonesty: f64,
    /// Per-time intercepts in the fitted compliance model.
    pub per_time_intercepts: bool,

    /// Compliance logit intercept per post-baseline time point.
    pub c_intercepts: Vec<f64>,
    pub c_lag_y: f64,
    pub c_lag_z: f64,
    pub c_x: f64,

    /// Structural-zero probability of the confounder.
    pub z_zero_prob: f64,
    pub z0_intercept: f64,
    pub z_intercept: f64,
    pub z_lag_z: f64,
    pub z_lag_y: f64,
    pub z_x: f64,
    pub z_c: f64,

    pub y_intercept: f64,
    pub y_z: f64,
    pub y_lag_y: f64,
    pub y_lag_z: f64,
    pub y_x: f64,
    /// Outcome shift under noncompliance.
    pub y_noncompliance: f64,
    pub y_sd: f64,

    pub b_intercept: f64,
    pub b_y: f64,
    pub b_z: f64,
    pub b_lag_y: f64,
    pub b_lag_z: f64,
    pub b_x: f64,
    pub b_c: f64,
    pub b_sd: f64,

    pub target_compliance: f64,
    /// Increase of the per-time compliance rate from one time point to the next.
    pub target_compliance_step: f64,
    pub target_r2: f64,
    pub target_zero_share: f64,
    pub target_poisson_mean: f64,
    pub target_auc: f64,
    pub pilot_size: usize,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario `{}`: {m}", self.name)));
        if self.k < 2 {
            return bad("need at least two time points");
        }
        if self.c_intercepts.len() != self.k - 1 {
            return bad("c_intercepts needs one value per post-baseline time point");
        }
        if !(0.0..=1.0).contains(&self.dishonesty) || !(0.0..1.0).contains(&self.z_zero_prob) {
            return bad("probabilities must lie in [0, 1)");
        }
        if self.y_sd < 0.0 || self.b_sd <= 0.0 {
            return bad("noise scales must be positive");
        }
        if !(0.0 < self.target_compliance && self.target_compliance < 1.0) {
            return bad("target_compliance must lie in (0, 1)");
        }
        if !(0.5 < self.target_auc && self.target_auc < 1.0) {
            return bad(
                "target_auc must lie in (0.5, 1); an AUC of 1 is not attainable with overlapping biomarker classes",
            );
        }
        if !(0.0 < self.target_r2 && self.target_r2 < 1.0) || !(0.0..1.0).contains(&self.target_zero_share) {
            return bad("target_r2 and target_zero_share must lie in (0, 1)");
        }
        if self.pilot_size == 0 || self.n == 0 {
            return bad("n and pilot_size must be positive");
        }
        let finite = [
            self.c_lag_y,
            self.c_lag_z,
            self.c_x,
            self.z0_intercept,
            self.z_intercept,
            self.z_lag_z,
            self.z_lag_y,
            self.z_x,
            self.z_c,
            self.y_intercept,
            self.y_z,
            self.y_lag_y,
            self.y_lag_z,
            self.y_x,
            self.y_noncompliance,
            self.y_sd,
            self.b_intercept,
            self.b_y,
            self.b_z,
            self.b_lag_y,
            self.b_lag_z,
            self.b_x,
            self.b_c,
            self.b_sd,
        ];
        if finite.iter().chain(&self.c_intercepts).any(|v| !v.is_finite()) {
            return bad("coefficients must be finite");
        }
        Ok(())
    }

    pub fn analysis_config(&self) -> AnalysisConfig {
        AnalysisConfig { per_time_intercepts: self.per_time_intercepts, ..AnalysisConfig::default() }
    }
}

/// Inversion draw from `Poisson(mu)` with a single uniform.
pub fn poisson_inverse(mu: f64, u: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    let mut k = 0.0;
    let mut log_p = -mu;
    let mut cdf = log_p.exp();
    while u > cdf {
        k += 1.0;
        log_p += (mu / k).ln();
        let p = log_p.exp();
        cdf += p;
        if p < 1e-300 && k > mu {
            break;
        }
    }
    k
}

/// ZIP log mass up to the `-ln z!` term shared by every rate.
fn zip_log_kernel(z: f64, pi: f64, mu: f64) -> f64 {
    if z == 0.0 {
        (pi + (1.0 - pi) * (-mu).exp()).ln()
    } else {
        (1.0 - pi).ln() + z * mu.ln() - mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStep {
    pub y: f64,
    pub z: f64,
    /// Poisson rate of `z`.
    pub mu: f64,
    pub c: bool,
    pub d: bool,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParticipant {
    pub x: f64,
    /// Baseline then post-baseline states; baseline `c`, `d`, `b` are unused.
    pub steps: Vec<SimStep>,
}

impl ScenarioConfig {
    /// Poisson rate of the non-structural-zero part of `Z_j`.
    pub fn z_rate(&self, z_lag: f64, y_lag: f64, x: f64, c: bool) -> f64 {
        softplus(
            self.z_intercept + self.z_lag_z * z_lag + self.z_lag_y * y_lag + self.z_x * x + self.z_c * c as u8 as f64,
        )
    }

    pub fn y_mean(&self, z: f64, z_lag: f64, y_lag: f64, x: f64, c: bool) -> f64 {
        self.y_intercept
            + self.y_z * z
            + self.y_lag_y * y_lag
            + self.y_lag_z * z_lag
            + self.y_x * x
            + self.y_noncompliance * (1.0 - c as u8 as f64)
    }

    pub fn b_mean(&self, y: f64, z: f64, z_lag: f64, y_lag: f64, x: f64, c: bool) -> f64 {
        self.b_intercept
            + self.b_y * y
            + self.b_z * z
            + self.b_lag_y * y_lag
            + self.b_lag_z * z_lag
            + self.b_x * x
            + self.b_c * c as u8 as f64
    }

    /// Logit of `P(C_j = 1)` given the lagged state.
    pub fn compliance_logit(&self, j: usize, z_lag: f64, y_lag: f64, x: f64) -> f64 {
        self.c_intercepts[j - 1] + self.c_lag_y * y_lag + self.c_lag_z * z_lag + self.c_x * x
    }

    /// Draws one participant; `force_compliance` sets every `C_j = 1`.
    pub fn simulate_participant(&self, rng: &mut StreamRng, force_compliance: bool) -> SimParticipant {
        let normal = |rng: &mut StreamRng| -> f64 { StandardNormal.sample(rng) };
        let x = normal(rng);
        let (u_zero, u_pois): (f64, f64) = (rng.random(), rng.random());
        let mu0 = softplus(self.z0_intercept + self.z_x * x);
        let z0 = if u_zero < self.z_zero_prob { 0.0 } else { poisson_inverse(mu0, u_pois) };
        let mut steps = Vec::with_capacity(self.k);
        steps.push(SimStep { y: 0.0, z: z0, mu: mu0, c: true, d: true, b: f64::NAN });
        for j in 1..self.k {
            let (u_c, u_d, u_zero, u_pois): (f64, f64, f64, f64) =
                (rng.random(), rng.random(), rng.random(), rng.random());
            let (e_y, e_b) = (normal(rng), normal(rng));
            let prev = steps[j - 1];
            let c = force_compliance || u_c < logistic(self.compliance_logit(j, prev.z, prev.y, x));
            let d = c || u_d < self.dishonesty;
            let mu = self.z_rate(prev.z, prev.y, x, c);
            let z = if u_zero < self.z_zero_prob { 0.0 } else { poisson_inverse(mu, u_pois) };
            let y = self.y_mean(z, prev.z, prev.y, x, c) + self.y_sd * e_y;
            let b = self.b_mean(y, z, prev.z, prev.y, x, c) + self.b_sd * e_b;
            steps.push(SimStep { y, z, mu, c, d, b });
        }
        SimParticipant { x, steps }
    }

    /// True `P(C_j = 1 | Y_j, Z_j, B_j, lagged state, X, D_j = 1)`.
    pub fn true_posterior(&self, j: usize, step: &SimStep, prev: &SimStep, x: f64) -> f64 {
        let prior = self.compliance_logit(j, prev.z, prev.y, x);
        let class = |c: bool| {
            let z = zip_log_kernel(step.z, self.z_zero_prob, self.z_rate(prev.z, prev.y, x, c));
            let y = gauss_kernel(step.y, self.y_mean(step.z, prev.z, prev.y, x, c), self.y_sd);
            let b = gauss_kernel(step.b, self.b_mean(step.y, step.z, prev.z, prev.y, x, c), self.b_sd);
            z + y + b
        };
        let l1 = crate::stats::log_logistic(prior) + class(true);
        let l0 = crate::stats::log_logistic(-prior) + self.dishonesty.ln() + class(false);
        logistic(l1 - l0)
    }
}

fn gauss_kernel(v: f64, m: f64, sd: f64) -> f64 {
    -0.5 * ((v - m) / sd).powi(2)
}

/// Simulated participants of one dataset, in id order.
pub fn simulate_participants(cfg: &ScenarioConfig, n: usize, seed: u64) -> Vec<SimParticipant> {
    (0..n)
        .into_par_iter()
        .with_min_len(64)
        .map(|i| cfg.simulate_participant(&mut stream(seed, Domain::Generate, i as u64), false))
        .collect()
}

/// Long-format dataset from simulated participants (arm `a`, ids `1..=n`).
pub fn to_dataset(cfg: &ScenarioConfig, sims: &[SimParticipant]) -> LongitudinalDataset {
    let participants = sims
        .iter()
        .enumerate()
        .map(|(i, s)| Participant {
            id: (i + 1).to_string(),
            arm: "a".into(),
            x: vec![s.x],
            observations: s
                .steps
                .iter()
                .enumerate()
                .map(|(t, st)| Observation {
                    time: t,
                    y: Some(st.y),
                    z: vec![Some(st.z)],
                    b: (t > 0).then_some(st.b),
                    d: (t > 0).then_some(st.d),
                    c: (t > 0).then_some(st.c),
                })
                .collect(),
        })
        .collect();
    LongitudinalDataset {
        participants,
        k: cfg.k,
        z_names: vec!["z".into()],
        x_names: vec!["x".into()],
        z_bounds: vec![Some((0.0, f64::INFINITY))],
    }
}

pub fn generate_dataset(cfg: &ScenarioConfig, n: usize, seed: u64) -> LongitudinalDataset {
    to_dataset(cfg, &simulate_participants(cfg, n, seed))
}

/// Dataset of replicate `r` of a study with master seed `master`.
pub fn replicate_dataset(cfg: &ScenarioConfig, master: u64, r: usize) -> LongitudinalDataset {
    generate_dataset(cfg, cfg.n, derive_seed(master, Domain::Replicate, r as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    /// Share of compliant post-baseline observations.
    pub compliance: f64,
    pub compliance_by_time: Vec<f64>,
    /// Share of post-baseline observations with `D = 1`.
    pub view_share: f64,
    /// Among self-reported compliers:
    pub zero_share: f64,
    pub poisson_mean: f64,
    /// R-squared of the outcome regression among true compliers.
    pub r2: f64,
    /// AUC of the fitted posterior compliance probabilities.
    pub auc: Option<f64>,
}

fn basic_characteristics(cfg: &ScenarioConfig, sims: &[SimParticipant]) -> OperatingCharacteristics {
    let k = cfg.k;
    let mut by_time = vec![0usize; k];
    let (mut total, mut compliant, mut reported, mut zeros) = (0usize, 0usize, 0usize, 0usize);
    let mut mu_sum = CompensatedSum::new();
    let mut rows = Vec::new();
    let mut yv = Vec::new();
    for s in sims {
        for (j, pair) in s.steps.windows(2).enumerate().take(k - 1) {
            let (prev, st) = (&pair[0], &pair[1]);
            total += 1;
            if st.c {
                compliant += 1;
                by_time[j + 1] += 1;
                rows.extend_from_slice(&[1.0, st.z, prev.y, prev.z, s.x]);
                yv.push(st.y);
            }
            if st.d {
                reported += 1;
                zeros += (st.z == 0.0) as usize;
                mu_sum.add(st.mu);
            }
        }
    }
    let n = sims.len().max(1) as f64;
    OperatingCharacteristics {
        compliance: compliant as f64 / total.max(1) as f64,
        compliance_by_time: (1..k).map(|j| by_time[j] as f64 / n).collect(),
        view_share: reported as f64 / total.max(1) as f64,
        zero_share: zeros as f64 / reported.max(1) as f64,
        poisson_mean: mu_sum.value() / reported.max(1) as f64,
        r2: r_squared(&rows, &yv, 5),
        auc: None,
    }
}

fn r_squared(rows: &[f64], y: &[f64], p: usize) -> f64 {
    if y.len() <= p {
        return f64::NAN;
    }
    let design = crate::glm::DesignMatrix::from_row_slice(y.len(), p, rows, (0..p).map(|i| format!("v{i}")).collect());
    let Ok(fit) = fit_weighted_linear(&design, y, &vec![1.0; y.len()]) else {
        return f64::NAN;
    };
    let m = mean(y);
    let tss: f64 = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64;
    1.0 - fit.sigma2 / tss
}

/// AUC of fitted posterior compliance against true compliance on the view.
pub fn fitted_auc(
    cfg: &ScenarioConfig,
    ds: &LongitudinalDataset,
    init: &InitStrategy,
) -> Result<(f64, crate::compliance_em::MixtureModel)> {
    let frame = ViewFrame::of_dataset(ds);
    let data = ComplianceData::new(&frame, &ComplianceRecipe::standard(cfg.per_time_intercepts));
    let (m, _) = fit_em(&data, init, &EmOptions::default())?;
    let w = e_step(&m, &data)?;
    let labels: Vec<bool> = frame.c.iter().map(|c| c.unwrap_or(false)).collect();
    let a = auc(&w, &labels).ok_or_else(|| Error::Calibration("AUC undefined: one class is empty".into()))?;
    Ok((a, m))
}

/// Operating characteristics on a pilot of `cfg.pilot_size` participants.
pub fn pilot_characteristics(cfg: &ScenarioConfig, seed: u64, with_auc: bool) -> Result<OperatingCharacteristics> {
    let sims = simulate_participants(cfg, cfg.pilot_size, seed);
    let mut oc = basic_characteristics(cfg, &sims);
    if with_auc {
        oc.auc = Some(fitted_auc(cfg, &to_dataset(cfg, &sims), &InitStrategy::BiomarkerSplit)?.0);
    }
    Ok(oc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub parameter: String,
    pub value: f64,
    pub metric: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub steps: Vec<CalibrationStep>,
    pub achieved: OperatingCharacteristics,
}

impl CalibrationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("parameter,value,metric,target\n");
        for st in &self.steps {
            let _ = writeln!(s, "{},{},{},{}", st.parameter, st.value, st.metric, st.target);
        }
        s
    }
}

/// Tolerances for calibration.
pub const TOL_COMPLIANCE: f64 = 0.01;
pub const TOL_R2: f64 = 0.02;
pub const TOL_ZERO_SHARE: f64 = 0.01;
pub const TOL_POISSON_MEAN: f64 = 1.0;
pub const TOL_AUC: f64 = 0.02;

#[derive(Clone, Copy)]
enum Knob {
    /// Intercept of post-baseline time point `j`.
    ComplianceAt(usize),
    ZeroProb,
    ZIntercept,
    YSd,
    BC,
}

impl Knob {
    fn name(self) -> String {
        match self {
            Knob::ComplianceAt(j) => format!("c_intercepts[{j}]"),
            Knob::ZeroProb => "z_zero_prob".into(),
            Knob::ZIntercept => "z_intercept".into(),
            Knob::YSd => "y_sd".into(),
            Knob::BC => "b_c".into(),
        }
    }

    fn set(self, cfg: &mut ScenarioConfig, v: f64) {
        match self {
            Knob::ComplianceAt(j) => cfg.c_intercepts[j - 1] = v,
            Knob::ZeroProb => cfg.z_zero_prob = v,
            Knob::ZIntercept => cfg.z_intercept = v,
            Knob::YSd => cfg.y_sd = v,
            Knob::BC => cfg.b_c = v,
        }
    }
}

/// Finds the knob value whose metric hits `target`, assuming the metric is
/// monotone on `[lo, hi]`. Returns the best value found and its metric.
fn bisect(
    cfg: &mut ScenarioConfig,
    knob: Knob,
    (lo, hi): (f64, f64),
    target: f64,
    tol: f64,
    steps: &mut Vec<CalibrationStep>,
    metric: &mut dyn FnMut(&ScenarioConfig) -> Result<f64>,
) -> Result<f64> {
    let mut eval = |cfg: &mut ScenarioConfig, v: f64, steps: &mut Vec<CalibrationStep>| -> Result<f64> {
        knob.set(cfg, v);
        let m = metric(cfg)?;
        steps.push(CalibrationStep { parameter: knob.name(), value: v, metric: m, target });
        Ok(m)
    };
    let (mut a, mut b) = (lo, hi);
    let fa = eval(cfg, a, steps)? - target;
    let fb = eval(cfg, b, steps)? - target;
    if fa.signum() == fb.signum() {
        let (v, f) = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
        knob.set(cfg, v);
        return Ok(f + target);
    }
    let increasing = fb > fa;
    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        let f = eval(cfg, mid, steps)? - target;
        if f.abs() < best.1.abs() {
            best = (mid, f);
        }
        if f.abs() < tol {
            break;
        }
        if (f < 0.0) == increasing {
            a = mid;
        } else {
            b = mid;
        }
    }
    knob.set(cfg, best.0);
    Ok(best.1 + target)
}

/// Coordinate search over the compliance intercepts, the structural-zero
/// probability, the confounder intercept, the outcome noise and the
/// biomarker compliance shift until every target is met.
pub fn calibrate(start: &ScenarioConfig) -> Result<(ScenarioConfig, CalibrationReport)> {
    let (mut cfg, mut steps) = calibrate_structure(start)?;
    let seed = pilot_seed(&cfg);
    calibrate_auc(&mut cfg, &mut steps)?;
    let achieved = pilot_characteristics(&cfg, seed, true)?;
    let misses = [
        ("compliance", achieved.compliance, cfg.target_compliance, TOL_COMPLIANCE),
        ("r2", achieved.r2, cfg.target_r2, TOL_R2),
        ("zero_share", achieved.zero_share, cfg.target_zero_share, TOL_ZERO_SHARE),
        ("poisson_mean", achieved.poisson_mean, cfg.target_poisson_mean, TOL_POISSON_MEAN),
        ("auc", achieved.auc.unwrap_or(f64::NAN), cfg.target_auc, TOL_AUC),
    ];
    let worst = misses
        .iter()
        .map(|(n, v, t, tol)| (n, v, t, (v - t).abs() / tol))
        .max_by(|a, b| a.3.total_cmp(&b.3))
        .expect("nonempty");
    if worst.3.is_nan() || worst.3 > 1.0 {
        return Err(Error::Calibration(format!("worst miss: {} = {} against target {}", worst.0, worst.1, worst.2)));
    }
    Ok((cfg, CalibrationReport { steps, achieved }))
}

fn pilot_seed(cfg: &ScenarioConfig) -> u64 {
    derive_seed(cfg.seed, Domain::Pilot, 0)
}

/// The calibration steps that do not involve the biomarker: per-time
/// compliance, confounder rate and zeros, outcome R-squared.
pub fn calibrate_structure(start: &ScenarioConfig) -> Result<(ScenarioConfig, Vec<CalibrationStep>)> {
    start.validate()?;
    let mut cfg = start.clone();
    let seed = pilot_seed(&cfg);
    let mut steps = Vec::new();
    let pilot = |cfg: &ScenarioConfig| basic_characteristics(cfg, &simulate_participants(cfg, cfg.pilot_size, seed));
    // everything except the biomarker shift is cheap to evaluate
    let per_time = |cfg: &ScenarioConfig, j: usize| {
        cfg.target_compliance + cfg.target_compliance_step * (j as f64 - cfg.k as f64 / 2.0)
    };
    for _sweep in 0..8 {
        for j in 1..cfg.k {
            let c0 = cfg.c_intercepts[j - 1];
            let target = per_time(&cfg, j);
            bisect(
                &mut cfg,
                Knob::ComplianceAt(j),
                (c0 - 8.0, c0 + 8.0),
                target,
                TOL_COMPLIANCE / 10.0,
                &mut steps,
                &mut |c| Ok(pilot(c).compliance_by_time[j - 1]),
            )?;
        }
        let zi = cfg.z_intercept;
        let target = cfg.target_poisson_mean;
        bisect(
            &mut cfg,
            Knob::ZIntercept,
            (zi - 60.0, zi + 60.0),
            target,
            TOL_POISSON_MEAN / 10.0,
            &mut steps,
            &mut |c| Ok(pilot(c).poisson_mean),
        )?;
        let target = cfg.target_zero_share;
        bisect(&mut cfg, Knob::ZeroProb, (0.0, 0.5), target, TOL_ZERO_SHARE / 10.0, &mut steps, &mut |c| {
            Ok(pilot(c).zero_share)
        })?;
        let target = cfg.target_r2;
        bisect(&mut cfg, Knob::YSd, (1e-3, 100.0), target, TOL_R2 / 10.0, &mut steps, &mut |c| Ok(pilot(c).r2))?;
        let oc = pilot(&cfg);
        let compliance_ok =
            (1..cfg.k).all(|j| (oc.compliance_by_time[j - 1] - per_time(&cfg, j)).abs() < TOL_COMPLIANCE / 5.0);
        if compliance_ok
            && (oc.poisson_mean - cfg.target_poisson_mean).abs() < TOL_POISSON_MEAN / 5.0
            && (oc.zero_share - cfg.target_zero_share).abs() < TOL_ZERO_SHARE / 5.0
            && (oc.r2 - cfg.target_r2).abs() < TOL_R2 / 5.0
        {
            break;
        }
    }
    Ok((cfg, steps))
}

/// Bisection on the biomarker compliance shift until the fitted posterior
/// reaches the target AUC. The pilot noise is held fixed, so only the
/// biomarker values move between evaluations.
pub fn calibrate_auc(cfg: &mut ScenarioConfig, steps: &mut Vec<CalibrationStep>) -> Result<f64> {
    let seed = pilot_seed(cfg);
    let sims = simulate_participants(cfg, cfg.pilot_size, seed);
    let target = cfg.target_auc;
    let b0 = cfg.b_c;
    let scale = if b0 == 0.0 { -1.0 } else { b0 };
    let (lo, hi) = if scale < 0.0 { (3.0 * scale, 0.25 * scale) } else { (0.25 * scale, 3.0 * scale) };
    // Every evaluation starts EM afresh: warm starts from a better separated
    // fit can settle in a poor mode and send the bisection the wrong way.
    bisect(cfg, Knob::BC, (lo, hi), target, TOL_AUC / 5.0, steps, &mut |c| {
        // same noise, new biomarker shift: only b changes
        let shifted: Vec<SimParticipant> = sims
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for st in s.steps.iter_mut().skip(1) {
                    st.b += (c.b_c - b0) * st.c as u8 as f64;
                }
                s
            })
            .collect();
        Ok(fitted_auc(c, &to_dataset(c, &shifted), &InitStrategy::BiomarkerSplit)?.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleMean {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Mean final-time outcome with compliance forced at every time point.
pub fn oracle_causal_mean(cfg: &ScenarioConfig, n: usize, seed: u64) -> OracleMean {
    let y: Vec<f64> = (0..n)
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            let s = cfg.simulate_participant(&mut stream(seed, Domain::Oracle, i as u64), true);
            s.steps[cfg.k - 1].y
        })
        .collect();
    let mut total = CompensatedSum::new();
    y.iter().for_each(|&v| total.add(v));
    OracleMean { mean: total.value() / n as f64, se: sample_sd(&y) / (n as f64).sqrt(), n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: String,
    pub bias: f64,
    pub mc_sd: f64,
    pub mse: f64,
    pub n_replicates: usize,
}

impl MetricsRow {
    /// Bias and MSE against `truth`; MC SD is the sample SD.
    pub fn from_estimates(estimator: &str, estimates: &[f64], truth: f64) -> MetricsRow {
        let n = estimates.len();
        let bias = mean(estimates) - truth;
        let mut sq = CompensatedSum::new();
        estimates.iter().for_each(|e| sq.add((e - truth).powi(2)));
        MetricsRow {
            estimator: estimator.to_string(),
            bias,
            mc_sd: if n > 1 { sample_sd(estimates) } else { 0.0 },
            mse: sq.value() / n as f64,
            n_replicates: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub rows: Vec<MetricsRow>,
    pub oracle: OracleMean,
    /// `estimates[e][r]` for the non-failed replicates, in replicate order.
    pub estimates: Vec<Vec<f64>>,
    pub estimators: Vec<EstimatorKind>,
    pub failed: Vec<(usize, String)>,
    pub replicates: usize,
}

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// Runs every estimator on `reps` replicate datasets. A replicate in which
/// any estimator fails is dropped for all estimators.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    reps: usize,
    estimators: &[EstimatorKind],
    analysis: &AnalysisConfig,
    master: u64,
    oracle: OracleMean,
) -> Result<ScenarioResult> {
    let per_rep: Vec<std::result::Result<Vec<f64>, String>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ds = replicate_dataset(cfg, master, r);
            let mc_seed = derive_seed(derive_seed(master, Domain::Replicate, r as u64), Domain::Trajectory, 0);
            let mut a = Analysis::new(&ds, analysis).map_err(|e| e.to_string())?;
            estimators.iter().map(|&k| a.run(k, mc_seed).map(|o| o.value).map_err(|e| format!("{k}: {e}"))).collect()
        })
        .collect();
    let mut estimates = vec![Vec::new(); estimators.len()];
    let mut failed = Vec::new();
    for (r, res) in per_rep.into_iter().enumerate() {
        match res {
            Ok(v) => v.into_iter().enumerate().for_each(|(e, x)| estimates[e].push(x)),
            Err(msg) => failed.push((r, msg)),
        }
    }
    if failed.len() as f64 > MAX_FAILURE_SHARE * reps as f64 {
        return Err(Error::TooManyFailures { failed: failed.len(), total: reps });
    }
    let rows =
        estimators.iter().zip(&estimates).map(|(k, e)| MetricsRow::from_estimates(k.label(), e, oracle.mean)).collect();
    Ok(ScenarioResult { rows, oracle, estimates, estimators: estimators.to_vec(), failed, replicates: reps })
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("estimator,bias,mc_sd,mse,n_replicates\n");
    for r in rows {
        let _ = writeln!(s, "\"{}\",{},{},{},{}", r.estimator, r.bias, r.mc_sd, r.mse, r.n_replicates);
    }
    s
}

/// Aligned plain-text table with columns Estimator, Bias, MC SD, MSE.
pub fn metrics_table(rows: &[MetricsRow]) -> String {
    let w = rows.iter().map(|r| r.estimator.len()).max().unwrap_or(0).max("Estimator".len());
    let mut s = format!("{:<w$}  {:>8}  {:>8}  {:>8}\n", "Estimator", "Bias", "MC SD", "MSE");
    for r in rows {
        let _ = writeln!(s, "{:<w$}  {:>8.3}  {:>8.3}  {:>8.3}", r.estimator, r.bias, r.mc_sd, r.mse);
    }
    s
}

/// The outcome-model design used by the data-generating process, for
/// checking fitted coefficients against generating values.
pub fn generating_outcome_coefficients(cfg: &ScenarioConfig) -> Vec<f64> {
    // intercept, z, lag_y, lag_z, x
    debug_assert_eq!(recipes::outcome().terms.len(), 5);
    vec![cfg.y_intercept, cfg.y_z, cfg.y_lag_y, cfg.y_lag_z, cfg.y_x]
}

/// Generating coefficients of the compliant-class biomarker model
/// (intercept, y, z, lag_y, lag_z, x).
pub fn generating_biomarker_coefficients(cfg: &ScenarioConfig) -> Vec<f64> {
    vec![cfg.b_intercept + cfg.b_c, cfg.b_y, cfg.b_z, cfg.b_lag_y, cfg.b_lag_z, cfg.b_x]
}
