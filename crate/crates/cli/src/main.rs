use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rram_mcmc_cli::commands::Report;
use rram_mcmc_cli::config::{preset_text, Command, PRESETS};
use rram_mcmc_cli::{run, CliError, ExperimentConfig, Overrides};

/// Simulate Metropolis-Hastings sampling on resistive-memory crossbars.
#[derive(Parser)]
#[command(name = "rram-mcmc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Cycle virtual devices and fit the median and spread power laws.
    Characterize(RunArgs),
    /// Bayesian logistic regression on a crossbar.
    TrainSupervised(RunArgs),
    /// Cart-pole policy search with two competing crossbars.
    TrainRl(RunArgs),
    /// Evaluate a stored posterior on a grid or an input file.
    Infer(RunArgs),
    /// Repeat a training experiment over a list of hyper-parameter values.
    Sweep(RunArgs),
    /// List bundled presets.
    Presets,
    /// Print a bundled preset.
    ShowPreset { name: String },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML).
    #[arg(long, env = "RRAM_MCMC_CONFIG", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name.
    #[arg(long, env = "RRAM_MCMC_PRESET")]
    preset: Option<String>,
    /// Master seed.
    #[arg(long, env = "RRAM_MCMC_SEED")]
    seed: Option<u64>,
    /// Number of independent runs.
    #[arg(long, env = "RRAM_MCMC_RUNS")]
    runs: Option<usize>,
    /// Worker threads for independent runs.
    #[arg(long, env = "RRAM_MCMC_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, env = "RRAM_MCMC_OUT", default_value = "out")]
    out: PathBuf,
    /// Disable device-to-device variability.
    #[arg(long, env = "RRAM_MCMC_NO_D2D")]
    no_d2d: bool,
    /// Program currents directly instead of through the look-up table.
    #[arg(long, env = "RRAM_MCMC_NO_LUT")]
    no_lut: bool,
}

fn load(command: Command, args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(CliError::Config("pass --config PATH or --preset NAME".into())),
    };
    if cfg.command != command {
        return Err(CliError::Config(format!(
            "configuration is for `{}`, not `{}`",
            cfg.command.name(),
            command.name()
        )));
    }
    Overrides { seed: args.seed, runs: args.runs, no_d2d: args.no_d2d, no_lut: args.no_lut }.apply(&mut cfg);
    Ok(cfg)
}

fn describe(report: &Report) -> String {
    match report {
        Report::Characterize(r) => format!(
            "median law: c={:.4} d={:.4}; sd law: b={:.4} a={:.4}",
            r.sweep.median_fit.exponent,
            r.sweep.median_fit.prefactor,
            r.sweep.sd_fit.exponent,
            r.sweep.sd_fit.prefactor
        ),
        Report::Supervised(s) => format!(
            "{} runs, test accuracy median {:.4} (q1 {:.4}, q3 {:.4}, min {:.4}, max {:.4})",
            s.runs.len(),
            s.stats.median,
            s.stats.q1,
            s.stats.q3,
            s.stats.min,
            s.stats.max
        ),
        Report::Rl(s) => format!(
            "{} runs, mean test reward median {:.1} (q1 {:.1}, q3 {:.1}, min {:.1}, max {:.1})",
            s.runs.len(),
            s.stats.median,
            s.stats.q1,
            s.stats.q3,
            s.stats.min,
            s.stats.max
        ),
        Report::Infer(p) => format!("{} probabilities written", p.len()),
        Report::Sweep(points) => {
            points.iter().map(|p| format!("{}: median {:.4}", p.value, p.median)).collect::<Vec<_>>().join("\n")
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (command, args) = match &cli.command {
        Sub::Characterize(a) => (Command::Characterize, a),
        Sub::TrainSupervised(a) => (Command::TrainSupervised, a),
        Sub::TrainRl(a) => (Command::TrainRl, a),
        Sub::Infer(a) => (Command::Infer, a),
        Sub::Sweep(a) => (Command::Sweep, a),
        Sub::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            return Ok(());
        }
        Sub::ShowPreset { name } => {
            print!("{}", preset_text(name)?);
            return Ok(());
        }
    };
    let cfg = load(command, args)?;
    let started = std::time::Instant::now();
    let report = run(&cfg, &args.out, args.jobs)?;
    println!("{}", describe(&report));
    eprintln!("finished in {:.2?}; outputs in {}", started.elapsed(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
