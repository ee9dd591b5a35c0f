use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use swarmopt::harness::scenario::TriggerSpec;
use swarmopt::harness::{
    compare, constants_report, preset, run, run_batch, Algorithm, RunError, RunReport, Scenario, ScenarioConfig,
    OUT_DIR_ENV, PRESET_NAMES,
};
use swarmopt::Execution;

/// Simulator for distributed optimization over double-integrator networks.
#[derive(Parser)]
#[command(name = "swarmopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one scenario and write its CSV and JSON outputs.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory.
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
    /// Run several scenarios, in parallel, each into its own subdirectory.
    Batch {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, env = OUT_DIR_ENV)]
        out: Option<PathBuf>,
        /// Run scenarios one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Print the certificate constants of a scenario as JSON.
    Constants {
        #[command(flatten)]
        source: Source,
    },
    /// Merge error-versus-time curves of several scenarios into one CSV.
    Compare {
        configs: Vec<PathBuf>,
        /// Built-in scenarios to include, as NAME or NAME:ALGORITHM.
        #[arg(long = "preset")]
        presets: Vec<String>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the config of a built-in scenario.
    Preset { name: String },
}

#[derive(Args)]
struct Source {
    /// Scenario config file (JSON).
    config: Option<PathBuf>,
    /// Use a built-in scenario instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Replace the seed of a seeded initial state.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the algorithm.
    #[arg(long)]
    algorithm: Option<Algorithm>,
}

impl Source {
    fn load(&self) -> Result<Scenario> {
        let (mut cfg, fallback) = match (&self.config, &self.preset) {
            (Some(path), _) => read_config(path)?,
            (None, Some(name)) => (preset(name)?, None),
            (None, None) => bail!(
                "give a config file or --preset NAME (one of {})",
                PRESET_NAMES.join(", ")
            ),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed)?;
        }
        if let Some(alg) = self.algorithm {
            with_algorithm(&mut cfg, alg);
        }
        Ok(Scenario::from_config(cfg, fallback)?)
    }
}

fn with_algorithm(cfg: &mut ScenarioConfig, alg: Algorithm) {
    cfg.algorithm = alg;
    if alg == Algorithm::Event && cfg.trigger.is_none() {
        cfg.trigger = Some(TriggerSpec::default());
    }
}

fn read_config(path: &Path) -> Result<(ScenarioConfig, Option<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ScenarioConfig::from_json(&text).with_context(|| format!("in {}", path.display()))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    Ok((cfg, stem))
}

fn load_path(path: &Path) -> Result<Scenario> {
    let (cfg, stem) = read_config(path)?;
    Scenario::from_config(cfg, stem).with_context(|| format!("in {}", path.display()))
}

fn load_preset_spec(spec: &str) -> Result<Scenario> {
    let (name, alg) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a.parse::<Algorithm>().map_err(anyhow::Error::msg)?)),
        None => (spec, None),
    };
    let mut cfg = preset(name)?;
    if let Some(alg) = alg {
        with_algorithm(&mut cfg, alg);
    }
    let fallback = alg.map(|a| format!("{name}_{}", a.as_str()));
    Ok(Scenario::from_config(cfg, fallback)?)
}

fn print_report(report: &RunReport) {
    println!("{}", serde_json::to_string_pretty(report).expect("report serializes"));
    for c in report.failed_checks() {
        eprintln!("check failed: {} = {:e} (threshold {:e})", c.name, c.value, c.threshold);
    }
}

fn exit_for(report: &RunReport) -> ExitCode {
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { source, out } => {
            let scenario = source.load()?;
            let dir = out.unwrap_or_else(|| PathBuf::from("swarmopt-out").join(&scenario.name));
            match run(&scenario, &dir) {
                Ok(report) => {
                    print_report(&report);
                    Ok(exit_for(&report))
                }
                Err(e @ RunError::Diverged { .. }) => {
                    eprintln!("error: {e}");
                    Ok(ExitCode::from(2))
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Batch {
            configs,
            out,
            sequential,
        } => {
            let scenarios = configs.iter().map(|p| load_path(p)).collect::<Result<Vec<_>>>()?;
            let root = out.unwrap_or_else(|| PathBuf::from("swarmopt-out"));
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::Auto
            };
            let mut code = ExitCode::SUCCESS;
            for (s, r) in scenarios.iter().zip(run_batch(&scenarios, &root, exec)) {
                match r {
                    Ok(report) => {
                        let status = if report.passed { "passed" } else { "FAILED" };
                        println!("{}: {status}, terminal error {:e}", s.name, report.terminal.error_max);
                        if !report.passed {
                            code = ExitCode::from(1);
                        }
                    }
                    Err(e) => {
                        println!("{}: error: {e}", s.name);
                        code = ExitCode::from(2);
                    }
                }
            }
            Ok(code)
        }
        Command::Constants { source } => {
            let scenario = source.load()?;
            let report = constants_report(&scenario)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { configs, presets, out } => {
            let mut scenarios = configs.iter().map(|p| load_path(p)).collect::<Result<Vec<_>>>()?;
            for spec in &presets {
                scenarios.push(load_preset_spec(spec)?);
            }
            if scenarios.is_empty() {
                bail!("nothing to compare: give config files or --preset");
            }
            let csv = compare(&scenarios, Execution::Auto)?.to_csv();
            match out {
                Some(path) => fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Preset { name } => {
            println!("{}", preset(&name)?.to_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
