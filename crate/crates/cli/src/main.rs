//! `gcomp`: calibration, simulation studies, single-dataset analysis and
//! bootstrap inference.
//!
//! Every command writes its outputs plus a `manifest.toml` into `--out-dir`.
//! Apart from the manifest (which records wall-clock times and the thread
//! count) outputs depend only on the inputs and `--seed`.
//!
//! Exit codes: 0 success, 2 bad input (arguments, files, configuration,
//! inapplicable estimator), 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gcomp_core::data_model::{load_dataset, write_csv, LongitudinalDataset};
use gcomp_core::inference::{bootstrap, point_seed};
use gcomp_core::pipeline::{Analysis, AnalysisConfig, EstimateOutput, EstimatorKind};
use gcomp_core::rng::{derive_seed, Domain};
use gcomp_core::sim_study::{
    calibrate, metrics_csv, metrics_table, oracle_causal_mean, replicate_dataset, run_scenario, ScenarioConfig,
};
use gcomp_core::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "gcomp", version, about = "G-computation under unobserved noncompliance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Directory receiving the outputs (created if absent).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a scenario to its operating-characteristic targets.
    Calibrate {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo study of the estimators on a scenario.
    Simulate {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Analysis settings (TOML); derived from the scenario when absent.
        #[arg(long)]
        analysis: Option<PathBuf>,
        /// Simulated datasets.
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// Monte Carlo trajectories per G-computation run.
        #[arg(long)]
        mc_samples: Option<usize>,
        /// Comma-separated estimator names (itt, pp, emreg, gcomp-parametric,
        /// gcomp-selfreport, gcomp-true, gcomp-full, gcomp-threshold).
        #[arg(long)]
        estimators: Option<String>,
        /// Participants simulated for the oracle causal mean.
        #[arg(long, default_value_t = 1_000_000)]
        oracle_size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Write one simulated dataset as CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Replicate index within the study defined by `--seed`.
        #[arg(long, default_value_t = 0)]
        replicate: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Point estimates on one dataset.
    Analyze {
        /// Long-format CSV.
        #[arg(long)]
        data: PathBuf,
        /// Analysis settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Monte Carlo trajectories per G-computation run.
        #[arg(long)]
        mc_samples: Option<usize>,
        /// Comma-separated estimator names (itt, pp, emreg, gcomp-parametric,
        /// gcomp-selfreport, gcomp-true, gcomp-full, gcomp-threshold).
        #[arg(long)]
        estimators: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Participant bootstrap of one estimator.
    Bootstrap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of bootstrap replicates.
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        /// Monte Carlo trajectories per G-computation run.
        #[arg(long)]
        mc_samples: Option<usize>,
        /// A single estimator name.
        #[arg(long, default_value = "gcomp-full")]
        estimators: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<gcomp_core::data_model::DataError> for CliError {
    fn from(e: gcomp_core::data_model::DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    config: Option<String>,
    data: Option<String>,
    seed: u64,
    threads: usize,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<String>,
    /// Effective settings with every default filled in.
    settings: toml::Table,
}

/// One row of `analyze` output.
#[derive(Debug, Clone, Serialize)]
struct EstimateReport {
    estimator: String,
    label: String,
    arm: String,
    n_participants: usize,
    value: f64,
    mc_samples: Option<usize>,
    mc_se: Option<f64>,
    mc_seed: Option<u64>,
    em_iterations: Option<usize>,
    em_converged: Option<bool>,
    em_loglik: Option<f64>,
    mean_treated: Option<f64>,
    mean_control: Option<f64>,
}

impl EstimateReport {
    fn new(out: &EstimateOutput, arm: &str, n: usize) -> Self {
        let mc = out.monte_carlo.as_ref();
        let em = out.em.as_ref();
        EstimateReport {
            estimator: out.estimator.name().into(),
            label: out.estimator.label().into(),
            arm: arm.into(),
            n_participants: n,
            value: out.value,
            mc_samples: mc.map(|m| m.r),
            mc_se: mc.map(|m| m.mc_se),
            mc_seed: mc.map(|m| m.seed),
            em_iterations: em.map(|e| e.iterations),
            em_converged: em.map(|e| e.converged),
            em_loglik: em.map(|e| e.loglik),
            mean_treated: out.arm_means.map(|m| m.0),
            mean_control: out.arm_means.map(|m| m.1),
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    toml::Table::try_from(v).expect("settings serialize to a table")
}

fn opt_str(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Output sink: records every written file for the manifest.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> CliResult<Outputs> {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    }

    fn finish(mut self, mut manifest: RunManifest) -> CliResult<()> {
        manifest.finished_unix = now();
        manifest.outputs = self.written.clone();
        manifest.outputs.push("manifest.toml".into());
        let text = toml::to_string(&manifest).expect("manifest serializes");
        self.write("manifest.toml", &text)
    }
}

fn manifest(
    command: &str,
    config: Option<&Path>,
    data: Option<&Path>,
    seed: u64,
    settings: toml::Table,
) -> RunManifest {
    RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.map(|p| p.display().to_string()),
        data: data.map(|p| p.display().to_string()),
        seed,
        threads: rayon::current_num_threads(),
        started_unix: now(),
        finished_unix: 0,
        outputs: Vec::new(),
        settings,
    }
}

fn analysis_config(path: Option<&Path>, mc_samples: Option<usize>) -> CliResult<AnalysisConfig> {
    let mut cfg = match path {
        Some(p) => AnalysisConfig::from_toml(&read(p)?)?,
        None => AnalysisConfig::default(),
    };
    if let Some(r) = mc_samples {
        cfg.mc_samples = r;
    }
    if cfg.mc_samples == 0 {
        return Err(CliError::Input("mc-samples must be positive".into()));
    }
    Ok(cfg)
}

fn scenario(path: &Path) -> CliResult<ScenarioConfig> {
    Ok(ScenarioConfig::from_toml(&read(path)?)?)
}

const DEFAULT_SEED: u64 = 1;

fn cmd_calibrate(config: &Path, common: &Common) -> CliResult<()> {
    let mut start = scenario(config)?;
    if let Some(s) = common.seed {
        start.seed = s;
    }
    let mut m = manifest("calibrate", Some(config), None, start.seed, to_table(&start));
    let mut out = Outputs::new(&common.out_dir)?;
    let (cfg, report) = calibrate(&start)?;
    m.settings = to_table(&cfg);
    out.write("scenario.toml", &cfg.to_toml())?;
    out.write("calibration.csv", &report.to_text())?;
    out.write("characteristics.toml", &toml::to_string(&report.achieved).expect("serializes"))?;
    out.finish(m)
}

fn default_simulation_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::SIMULATION.to_vec()
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &Path,
    analysis: Option<&Path>,
    reps: usize,
    mc_samples: Option<usize>,
    estimators: Option<&str>,
    oracle_size: usize,
    common: &Common,
) -> CliResult<()> {
    let cfg = scenario(config)?;
    let mut acfg = match analysis {
        Some(_) => analysis_config(analysis, mc_samples)?,
        None => cfg.analysis_config(),
    };
    if let Some(r) = mc_samples {
        acfg.mc_samples = r;
    }
    let kinds = match estimators {
        Some(s) => EstimatorKind::parse_list(s)?,
        None => default_simulation_estimators(),
    };
    if kinds.contains(&EstimatorKind::Itt) {
        return Err(CliError::Input("ITT needs two arms; simulated trials have one".into()));
    }
    if reps == 0 || oracle_size == 0 {
        return Err(CliError::Input("reps and oracle-size must be positive".into()));
    }
    let seed = common.seed.unwrap_or(DEFAULT_SEED);
    let mut settings = toml::Table::new();
    settings.insert("scenario".into(), toml::Value::Table(to_table(&cfg)));
    settings.insert("analysis".into(), toml::Value::Table(to_table(&acfg)));
    settings.insert("reps".into(), toml::Value::Integer(reps as i64));
    settings.insert("oracle_size".into(), toml::Value::Integer(oracle_size as i64));
    settings.insert(
        "estimators".into(),
        toml::Value::Array(kinds.iter().map(|k| toml::Value::String(k.name().into())).collect()),
    );
    let m = manifest("simulate", Some(config), None, seed, settings);
    let mut out = Outputs::new(&common.out_dir)?;

    let oracle = oracle_causal_mean(&cfg, oracle_size, derive_seed(seed, Domain::Oracle, 0));
    let res = run_scenario(&cfg, reps, &kinds, &acfg, seed, oracle)?;

    out.write("metrics.csv", &metrics_csv(&res.rows))?;
    let mut table = metrics_table(&res.rows);
    let _ = writeln!(
        table,
        "\noracle {:.4} (se {:.4}, n {}), {} of {} replicates used",
        oracle.mean,
        oracle.se,
        oracle.n,
        reps - res.failed.len(),
        reps
    );
    out.write("metrics.txt", &table)?;
    out.write("oracle.toml", &toml::to_string(&res.oracle).expect("serializes"))?;

    let mut est = String::from("replicate");
    for k in &kinds {
        let _ = write!(est, ",{}", k.name());
    }
    est.push('\n');
    let used: Vec<usize> = (0..reps).filter(|r| !res.failed.iter().any(|f| f.0 == *r)).collect();
    for (i, r) in used.iter().enumerate() {
        let _ = write!(est, "{r}");
        for e in &res.estimates {
            let _ = write!(est, ",{}", e[i]);
        }
        est.push('\n');
    }
    out.write("estimates.csv", &est)?;
    let mut failed = String::from("replicate,message\n");
    for (r, msg) in &res.failed {
        let _ = writeln!(failed, "{r},\"{}\"", msg.replace('"', "'"));
    }
    out.write("failures.csv", &failed)?;
    print!("{table}");
    out.finish(m)
}

fn cmd_generate(config: &Path, replicate: usize, common: &Common) -> CliResult<()> {
    let cfg = scenario(config)?;
    let seed = common.seed.unwrap_or(DEFAULT_SEED);
    let mut settings = to_table(&cfg);
    settings.insert("replicate".into(), toml::Value::Integer(replicate as i64));
    let m = manifest("generate", Some(config), None, seed, settings);
    let mut out = Outputs::new(&common.out_dir)?;
    let ds = replicate_dataset(&cfg, seed, replicate);
    let p = out.path("data.csv");
    write_csv(&ds, &p)?;
    out.finish(m)
}

/// Estimators that apply to `ds` when none are requested.
fn applicable(ds: &LongitudinalDataset, cfg: &AnalysisConfig) -> Vec<EstimatorKind> {
    EstimatorKind::ALL
        .into_iter()
        .filter(|k| match k {
            EstimatorKind::Itt => ds.arms().len() == 2 || cfg.control_arm.is_some(),
            EstimatorKind::GcompTrue => ds.has_true_compliance(),
            EstimatorKind::GcompThreshold => cfg.threshold.is_some(),
            _ => true,
        })
        .collect()
}

fn load(data: &Path) -> CliResult<LongitudinalDataset> {
    let ds = load_dataset(data, None)?;
    ds.validate()?;
    Ok(ds)
}

fn cmd_analyze(
    data: &Path,
    config: Option<&Path>,
    mc_samples: Option<usize>,
    estimators: Option<&str>,
    common: &Common,
) -> CliResult<()> {
    let acfg = analysis_config(config, mc_samples)?;
    let ds = load(data)?;
    let kinds = match estimators {
        Some(s) => EstimatorKind::parse_list(s)?,
        None => applicable(&ds, &acfg),
    };
    let seed = common.seed.unwrap_or(DEFAULT_SEED);
    let mut settings = to_table(&acfg);
    settings.insert(
        "estimators".into(),
        toml::Value::Array(kinds.iter().map(|k| toml::Value::String(k.name().into())).collect()),
    );
    let m = manifest("analyze", config, Some(data), seed, settings);
    let mut out = Outputs::new(&common.out_dir)?;

    let mut analysis = Analysis::new(&ds, &acfg)?;
    let n = analysis.data.n_participants();
    let mut reports = Vec::new();
    for &k in &kinds {
        let o = analysis.run(k, point_seed(seed))?;
        reports.push(EstimateReport::new(&o, &analysis.arm, n));
    }

    let mut csv = String::from("estimator,value,mc_se,n_participants,arm\n");
    let w = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max("Estimator".len());
    let mut table = format!("{:<w$}  {:>10}  {:>8}\n", "Estimator", "Estimate", "MC SE");
    for r in &reports {
        let _ = writeln!(csv, "{},{},{},{},{}", r.estimator, r.value, opt_str(r.mc_se), r.n_participants, r.arm);
        let se = r.mc_se.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(table, "{:<w$}  {:>10.4}  {:>8}", r.label, r.value, se);
    }
    #[derive(Serialize)]
    struct Reports<'a> {
        estimate: &'a [EstimateReport],
    }
    out.write("estimates.csv", &csv)?;
    out.write("estimates.txt", &table)?;
    out.write("report.toml", &toml::to_string(&Reports { estimate: &reports }).expect("serializes"))?;
    print!("{table}");
    out.finish(m)
}

fn cmd_bootstrap(
    data: &Path,
    config: Option<&Path>,
    reps: usize,
    mc_samples: Option<usize>,
    estimator: &str,
    common: &Common,
) -> CliResult<()> {
    let acfg = analysis_config(config, mc_samples)?;
    let kind: EstimatorKind = estimator.trim().parse()?;
    let ds = load(data)?;
    let seed = common.seed.unwrap_or(DEFAULT_SEED);
    let mut settings = to_table(&acfg);
    settings.insert("estimator".into(), toml::Value::String(kind.name().into()));
    settings.insert("reps".into(), toml::Value::Integer(reps as i64));
    let m = manifest("bootstrap", config, Some(data), seed, settings);
    let mut out = Outputs::new(&common.out_dir)?;

    let res = bootstrap(&ds, kind, &acfg, reps, seed)?;
    out.write("bootstrap.toml", &res.to_toml())?;
    let mut csv = String::from("replicate_value\n");
    res.replicates.iter().for_each(|v| {
        let _ = writeln!(csv, "{v}");
    });
    out.write("bootstrap_replicates.csv", &csv)?;
    println!(
        "{}: estimate {:.4}, bootstrap se {:.4}, 95% CI [{:.4}, {:.4}], {} of {} replicates used",
        kind.label(),
        res.point,
        res.se,
        res.ci95.0,
        res.ci95.1,
        res.replicates.len(),
        res.b
    );
    out.finish(m)
}

fn run(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::Calibrate { common, .. }
        | Command::Simulate { common, .. }
        | Command::Generate { common, .. }
        | Command::Analyze { common, .. }
        | Command::Bootstrap { common, .. } => common.clone(),
    };
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::Input("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| CliError::Input(e.to_string()))?;
    }
    match &cli.command {
        Command::Calibrate { config, .. } => cmd_calibrate(config, &common),
        Command::Simulate { config, analysis, reps, mc_samples, estimators, oracle_size, .. } => {
            cmd_simulate(config, analysis.as_deref(), *reps, *mc_samples, estimators.as_deref(), *oracle_size, &common)
        }
        Command::Generate { config, replicate, .. } => cmd_generate(config, *replicate, &common),
        Command::Analyze { data, config, mc_samples, estimators, .. } => {
            cmd_analyze(data, config.as_deref(), *mc_samples, estimators.as_deref(), &common)
        }
        Command::Bootstrap { data, config, reps, mc_samples, estimators, .. } => {
            cmd_bootstrap(data, config.as_deref(), *reps, *mc_samples, estimators, &common)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
