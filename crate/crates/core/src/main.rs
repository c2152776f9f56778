use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use hhmc::cli::{cmd_benchmark_neal, cmd_check, cmd_run, BenchmarkConfig, RunConfig};
use hhmc::{Error, Result};

#[derive(Parser)]
#[command(name = "hhmc", version, about = "HMC and Hessian-corrected HMC samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one chain and write samples.csv and summary.json.
    Run(RunArgs),
    /// Compare HMC and HHMC on the 30-dimensional heterogeneous-scale Gaussian.
    BenchmarkNeal(BenchmarkArgs),
    /// Check a target's derivatives and the spectral routines.
    Check {
        /// "neal" or a path to a Gaussian target JSON file.
        target: String,
    },
}

/// Flags override values from the config file.
#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(conflicts_with = "config_flag")]
    config: Option<PathBuf>,
    #[arg(long = "config", value_name = "PATH")]
    config_flag: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    #[arg(long)]
    steps: Option<i64>,
    #[arg(long)]
    iterations: Option<i64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<i64>,
    #[arg(long)]
    lambda_floor: Option<f64>,
    #[arg(long)]
    sine_floor: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Step size for both samplers unless overridden per sampler.
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long)]
    epsilon_hmc: Option<f64>,
    #[arg(long)]
    epsilon_hhmc: Option<f64>,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value_t = 1e-6)]
    lambda_floor: f64,
    #[arg(long, default_value_t = 1e-12)]
    sine_floor: f64,
    #[arg(long, default_value = "runs/benchmark-neal")]
    out: PathBuf,
}

fn resolve_run_config(args: RunArgs) -> Result<RunConfig> {
    let mut doc = Map::new();
    if let Some(path) = args.config.or(args.config_flag) {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(map)) => doc = map,
            Ok(_) => return Err(Error::Config("run config must be a JSON object".into())),
            Err(e) => return Err(Error::Config(format!("run config is not valid JSON: {e}"))),
        }
    }
    let mut set = |key: &str, value: Option<Value>| {
        if let Some(v) = value {
            doc.insert(key.to_string(), v);
        }
    };
    set("target", args.target.map(Value::from));
    set("sampler", args.sampler.map(Value::from));
    set("epsilon", args.epsilon.map(Value::from));
    set("steps", args.steps.map(Value::from));
    set("iterations", args.iterations.map(Value::from));
    set("seed", args.seed.map(Value::from));
    set("burn_in", args.burn_in.map(Value::from));
    set("lambda_floor", args.lambda_floor.map(Value::from));
    set("sine_floor", args.sine_floor.map(Value::from));
    set("out", args.out.map(|p| Value::from(p.to_string_lossy().into_owned())));
    RunConfig::from_json_value(Value::Object(doc))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = resolve_run_config(args)?;
            let summary = cmd_run(&cfg)?;
            println!(
                "{} iterations, acceptance {:.3}, output in {}",
                summary.iterations,
                summary.acceptance_rate,
                cfg.out.display()
            );
        }
        Command::BenchmarkNeal(a) => {
            let settings = BenchmarkConfig {
                epsilon_hmc: a.epsilon_hmc.unwrap_or(a.epsilon),
                epsilon_hhmc: a.epsilon_hhmc.unwrap_or(a.epsilon),
                steps: a.steps,
                iterations: a.iterations,
                seed: a.seed,
                burn_in: a.burn_in,
                lambda_floor: a.lambda_floor,
                sine_floor: a.sine_floor,
                out: a.out,
            };
            let report = cmd_benchmark_neal(&settings)?;
            for (name, s) in [("hmc", &report.samplers.hmc), ("hhmc", &report.samplers.hhmc)] {
                let c0 = &s.coordinates[0];
                println!(
                    "{name:>5}: acceptance {:.3}, coord 0 std {:.2} (true {:.0}), lag-1 {:.3}",
                    s.acceptance_rate,
                    c0.std,
                    c0.true_std.unwrap_or(f64::NAN),
                    c0.lag1
                );
            }
            println!("output in {}", settings.out.display());
        }
        Command::Check { target } => {
            let report = cmd_check(&target)?;
            print!("{}", report.render());
            if !report.passed {
                return Err(Error::Evaluation("self-checks failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
