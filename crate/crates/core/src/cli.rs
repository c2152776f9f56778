//! Run configuration, output files, and the `run`, `benchmark-neal` and
//! `check` commands.
//!
//! Chains are written as CSV with the header
//! `iter,accepted,log_density,theta_0,...,theta_{d-1}`, one row per recorded
//! iteration. Floats use 17 significant digits, so they round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::RunSummary;
use crate::integrator::LeapfrogConfig;
use crate::model::{build_neal_target, check_derivatives, GaussianTarget, TargetModel, DEFAULT_FD_STEP};
use crate::samplers::{run_chain, ChainRun, SamplerConfig, SamplerKind};
use crate::spectral::{
    eigendecompose_sym, momentum_law, proposal_position_moments, quadratic_target_moments, Floors,
    QuadraticModel,
};
use crate::{Error, Result, Vector};

pub const NEAL_TARGET: &str = "neal";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// `"neal"` or a path to a Gaussian target JSON document.
    pub target: String,
    pub sampler: SamplerKind,
    pub epsilon: f64,
    pub steps: usize,
    pub iterations: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub lambda_floor: f64,
    pub sine_floor: f64,
    pub out: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    target: String,
    sampler: String,
    epsilon: f64,
    steps: i64,
    iterations: i64,
    seed: u64,
    #[serde(default)]
    burn_in: i64,
    lambda_floor: Option<f64>,
    sine_floor: Option<f64>,
    out: PathBuf,
}

fn positive_count(value: i64, name: &str) -> Result<usize> {
    if value < 1 {
        return Err(Error::config(format!("{name} must be at least 1")));
    }
    Ok(value as usize)
}

impl RunConfig {
    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let raw: RawConfig = serde_json::from_value(value)
            .map_err(|e| Error::config(format!("invalid run config: {e}")))?;
        let sampler: SamplerKind = raw.sampler.parse()?;
        if !(raw.epsilon > 0.0 && raw.epsilon.is_finite()) {
            return Err(Error::config("epsilon must be positive"));
        }
        if raw.burn_in < 0 {
            return Err(Error::config("burn_in must not be negative"));
        }
        let defaults = Floors::default();
        let cfg = RunConfig {
            target: raw.target,
            sampler,
            epsilon: raw.epsilon,
            steps: positive_count(raw.steps, "steps")?,
            iterations: positive_count(raw.iterations, "iterations")?,
            seed: raw.seed,
            burn_in: raw.burn_in as usize,
            lambda_floor: raw.lambda_floor.unwrap_or(defaults.eigen_floor),
            sine_floor: raw.sine_floor.unwrap_or(defaults.sine_floor),
            out: raw.out,
        };
        cfg.floors().validate()?;
        Ok(cfg)
    }

    pub fn floors(&self) -> Floors {
        Floors {
            eigen_floor: self.lambda_floor,
            sine_floor: self.sine_floor,
        }
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let mut cfg = SamplerConfig::new(
            self.sampler,
            LeapfrogConfig::new(self.epsilon, self.steps)?,
            self.iterations,
            self.seed,
        );
        cfg.burn_in = self.burn_in;
        cfg.floors = self.floors();
        Ok(cfg)
    }
}

/// Parses and validates a JSON run configuration. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::config(format!("run config is not valid JSON: {e}")))?;
    RunConfig::from_json_value(value)
}

/// Resolves `"neal"` or reads a Gaussian target document from disk.
pub fn load_target(spec: &str) -> Result<GaussianTarget> {
    if spec == NEAL_TARGET {
        return Ok(build_neal_target());
    }
    let text = fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
    GaussianTarget::from_json(&text)
}

/// Formats a float with 17 significant digits.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_samples_csv(path: &Path, run: &ChainRun) -> Result<()> {
    let dim = run.samples.ncols();
    let mut out = String::from("iter,accepted,log_density");
    for j in 0..dim {
        write!(out, ",theta_{j}").unwrap();
    }
    out.push('\n');
    for (i, row) in run.samples.row_iter().enumerate() {
        write!(
            out,
            "{i},{},{}",
            run.accepted[i] as u8,
            fmt_float(run.log_densities[i])
        )
        .unwrap();
        for v in row.iter() {
            out.push(',');
            out.push_str(&fmt_float(*v));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Serialize)]
struct SummaryDocument<'a> {
    config: &'a RunConfig,
    summary: &'a RunSummary,
}

/// Runs one chain and writes `samples.csv` and `summary.json` into `config.out`.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary> {
    let target = load_target(&config.target)?;
    let sampler = config.sampler_config()?;
    let run = run_chain(&target, &sampler, &Vector::zeros(target.dim()))?;
    let mut summary = run.summary.clone();
    summary.attach_truth(&target)?;

    prepare_out_dir(&config.out)?;
    write_samples_csv(&config.out.join(SAMPLES_FILE), &run)?;
    write_json(
        &config.out.join(SUMMARY_FILE),
        &SummaryDocument {
            config,
            summary: &summary,
        },
    )?;
    Ok(summary)
}

/// Settings of the two-sampler comparison on the heterogeneous-scale target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    pub epsilon_hmc: f64,
    pub epsilon_hhmc: f64,
    pub steps: usize,
    pub iterations: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub lambda_floor: f64,
    pub sine_floor: f64,
    pub out: PathBuf,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let floors = Floors::default();
        BenchmarkConfig {
            epsilon_hmc: 0.2,
            epsilon_hhmc: 0.2,
            steps: 10,
            iterations: 1000,
            seed: 1,
            burn_in: 0,
            lambda_floor: floors.eigen_floor,
            sine_floor: floors.sine_floor,
            out: PathBuf::from("runs/benchmark-neal"),
        }
    }
}

impl BenchmarkConfig {
    fn run_config(&self, sampler: SamplerKind) -> RunConfig {
        RunConfig {
            target: NEAL_TARGET.into(),
            sampler,
            epsilon: match sampler {
                SamplerKind::Hmc => self.epsilon_hmc,
                SamplerKind::Hhmc => self.epsilon_hhmc,
            },
            steps: self.steps,
            iterations: self.iterations,
            seed: self.seed,
            burn_in: self.burn_in,
            lambda_floor: self.lambda_floor,
            sine_floor: self.sine_floor,
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerComparison {
    pub hmc: RunSummary,
    pub hhmc: RunSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub settings: BenchmarkConfig,
    pub true_std: Vec<f64>,
    pub samplers: SamplerComparison,
}

/// Runs HMC and HHMC side by side on the heterogeneous-scale target and
/// writes `hmc_samples.csv`, `hhmc_samples.csv` and `comparison.json`.
pub fn cmd_benchmark_neal(settings: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let target = build_neal_target();
    let init = Vector::zeros(target.dim());
    let hmc_cfg = settings.run_config(SamplerKind::Hmc).sampler_config()?;
    let hhmc_cfg = settings.run_config(SamplerKind::Hhmc).sampler_config()?;
    hmc_cfg.validate()?;
    hhmc_cfg.validate()?;

    let (hmc, hhmc) = std::thread::scope(|s| {
        let hmc = s.spawn(|| run_chain(&target, &hmc_cfg, &init));
        let hhmc = run_chain(&target, &hhmc_cfg, &init);
        (hmc.join().expect("HMC chain panicked"), hhmc)
    });
    let (hmc, hhmc) = (hmc?, hhmc?);

    prepare_out_dir(&settings.out)?;
    write_samples_csv(&settings.out.join("hmc_samples.csv"), &hmc)?;
    write_samples_csv(&settings.out.join("hhmc_samples.csv"), &hhmc)?;

    let mut samplers = SamplerComparison {
        hmc: hmc.summary,
        hhmc: hhmc.summary,
    };
    samplers.hmc.attach_truth(&target)?;
    samplers.hhmc.attach_truth(&target)?;
    let report = BenchmarkReport {
        settings: settings.clone(),
        true_std: target.marginal_stds().iter().copied().collect(),
        samplers,
    };
    write_json(&settings.out.join("comparison.json"), &report)?;
    Ok(report)
}

/// Outcome of [`cmd_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub points: usize,
    pub max_gradient_error: f64,
    pub max_hessian_error: f64,
    pub max_orthonormality_error: f64,
    pub max_reconstruction_error: f64,
    /// Relative error of the proposal moments against the quadratic-model
    /// Gaussian; `None` when the Hessian was never negative definite.
    pub max_marginal_match_error: Option<f64>,
    pub passed: bool,
}

impl CheckReport {
    pub fn render(&self) -> String {
        let status = |ok: bool| if ok { "ok" } else { "FAIL" };
        let mut s = String::new();
        writeln!(s, "points checked          {}", self.points).unwrap();
        writeln!(
            s,
            "gradient rel. error     {:.3e}  {}",
            self.max_gradient_error,
            status(self.max_gradient_error <= crate::model::GRADIENT_TOLERANCE)
        )
        .unwrap();
        writeln!(
            s,
            "hessian rel. error      {:.3e}  {}",
            self.max_hessian_error,
            status(self.max_hessian_error <= crate::model::HESSIAN_TOLERANCE)
        )
        .unwrap();
        writeln!(
            s,
            "eigenvector orthonorm.  {:.3e}  {}",
            self.max_orthonormality_error,
            status(self.max_orthonormality_error <= ORTHONORMALITY_TOLERANCE)
        )
        .unwrap();
        writeln!(
            s,
            "hessian reconstruction  {:.3e}  {}",
            self.max_reconstruction_error,
            status(self.max_reconstruction_error <= RECONSTRUCTION_TOLERANCE)
        )
        .unwrap();
        match self.max_marginal_match_error {
            Some(e) => writeln!(
                s,
                "marginal match          {:.3e}  {}",
                e,
                status(e <= MARGINAL_MATCH_TOLERANCE)
            )
            .unwrap(),
            None => writeln!(s, "marginal match          skipped (Hessian not negative definite)").unwrap(),
        }
        writeln!(s, "result                  {}", if self.passed { "PASS" } else { "FAIL" }).unwrap();
        s
    }
}

const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;
const RECONSTRUCTION_TOLERANCE: f64 = 1e-8;
const MARGINAL_MATCH_TOLERANCE: f64 = 1e-8;
const CHECK_POINTS: usize = 20;
const CHECK_DURATION: f64 = 2.0;

/// Verifies derivatives of a target and the spectral machinery at random
/// points within three marginal standard deviations of its mean.
pub fn cmd_check(target_spec: &str) -> Result<CheckReport> {
    let target = load_target(target_spec)?;
    let stds = target.marginal_stds();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut report = CheckReport {
        points: CHECK_POINTS,
        max_gradient_error: 0.0,
        max_hessian_error: 0.0,
        max_orthonormality_error: 0.0,
        max_reconstruction_error: 0.0,
        max_marginal_match_error: None,
        passed: false,
    };
    for _ in 0..CHECK_POINTS {
        let theta = Vector::from_fn(target.dim(), |i, _| {
            target.mean()[i] + stds[i] * rng.random_range(-3.0..3.0)
        });
        let d = check_derivatives(&target, &theta, DEFAULT_FD_STEP)?;
        report.max_gradient_error = report.max_gradient_error.max(d.gradient_error);
        report.max_hessian_error = report.max_hessian_error.max(d.hessian_error);

        let hessian = target.hessian(&theta);
        let spectrum = eigendecompose_sym(&hessian)?;
        report.max_orthonormality_error =
            report.max_orthonormality_error.max(spectrum.orthonormality_error());
        let recon = (spectrum.reconstruct() - &hessian).norm() / hessian.norm();
        report.max_reconstruction_error = report.max_reconstruction_error.max(recon);

        let model = QuadraticModel::new(spectrum, target.gradient(&theta), CHECK_DURATION)?;
        if let Some((mode, cov)) = quadratic_target_moments(&model) {
            let law = momentum_law(&model, Floors::default());
            let (mean, prop_cov) = proposal_position_moments(&model, &law);
            let scale = cov.diagonal().map(f64::sqrt);
            let mean_err = (&mean - &mode)
                .component_div(&scale)
                .amax();
            let cov_err = (&prop_cov - &cov).norm() / cov.norm();
            let err = mean_err.max(cov_err);
            report.max_marginal_match_error =
                Some(report.max_marginal_match_error.map_or(err, |e: f64| e.max(err)));
        }
    }
    report.passed = report.max_gradient_error <= crate::model::GRADIENT_TOLERANCE
        && report.max_hessian_error <= crate::model::HESSIAN_TOLERANCE
        && report.max_orthonormality_error <= ORTHONORMALITY_TOLERANCE
        && report.max_reconstruction_error <= RECONSTRUCTION_TOLERANCE
        && report
            .max_marginal_match_error
            .is_none_or(|e| e <= MARGINAL_MATCH_TOLERANCE);
    Ok(report)
}
