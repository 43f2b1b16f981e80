use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmm_detector::experiment::{run_experiment, sweep, ExperimentConfig, ExperimentKind, Outcome};
use qmm_detector::parallel::configure_threads;

/// Exit status when a run completed but a check failed.
const EXIT_CHECK_FAILED: u8 = 1;
/// Exit status for invalid input or a failed precondition.
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "qmm",
    version,
    about = "Quantum-metamaterial photon detector experiments"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its output bundle.
    Run(Source),
    /// Run an experiment once per value of one parameter.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Dotted field path, e.g. params.g_qq; bare names resolve in params.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Compare the numerical engines against the closed-form oracles.
    OracleSuite {
        /// Config whose [oracle] table sets the check parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the fully resolved configuration of a preset or config file.
    DescribeConfig {
        /// Preset name.
        #[arg(conflicts_with = "config")]
        experiment: Option<String>,
        /// Config file to resolve against its preset.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Source {
    /// Experiment config (TOML).
    #[arg(long, required_unless_present = "experiment")]
    config: Option<PathBuf>,
    /// Preset to run without a config file.
    #[arg(long, conflicts_with = "config")]
    experiment: Option<String>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn load(&self) -> qmm_detector::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.experiment) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name.parse()?),
            (None, None) => unreachable!("clap requires one source"),
        };
        apply_overrides(&mut cfg, self.out.clone(), self.seed);
        Ok(cfg)
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, out: Option<PathBuf>, seed: Option<u64>) {
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
}

fn report(outcome: &Outcome) -> u8 {
    for c in &outcome.checks {
        println!("{c}");
    }
    let m = &outcome.manifest;
    println!(
        "{}: snr={} amplitude={} -> {}",
        m.experiment,
        m.headline.snr,
        m.headline.amplitude,
        outcome.dir.display()
    );
    for f in &m.failures {
        eprintln!("failure: {f}");
    }
    if outcome.passed() {
        0
    } else {
        EXIT_CHECK_FAILED
    }
}

fn execute(cli: Cli) -> qmm_detector::Result<u8> {
    match cli.command {
        Command::Run(source) => Ok(report(&run_experiment(&source.load()?)?)),
        Command::Sweep {
            source,
            param,
            values,
        } => {
            let cfg = source.load()?;
            let rows = sweep(&cfg, &param, &values)?;
            println!("{param},snr,amplitude,passed");
            for r in &rows {
                println!("{},{},{},{}", r.value, r.snr, r.amplitude, r.passed);
            }
            Ok(if rows.iter().all(|r| r.passed) {
                0
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::OracleSuite { config, out, seed } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::preset(ExperimentKind::OracleSuite),
            };
            if cfg.experiment != ExperimentKind::OracleSuite {
                return Err(qmm_detector::Error::Config(format!(
                    "config describes `{}`, not the oracle suite",
                    cfg.experiment
                )));
            }
            apply_overrides(&mut cfg, out, seed);
            Ok(report(&run_experiment(&cfg)?))
        }
        Command::DescribeConfig { experiment, config } => {
            let cfg = match (config, experiment) {
                (Some(path), _) => ExperimentConfig::load(&path)?,
                (None, Some(name)) => ExperimentConfig::preset(name.parse()?),
                (None, None) => {
                    for kind in ExperimentKind::ALL {
                        println!("{kind}");
                    }
                    return Ok(0);
                }
            };
            print!("{}", cfg.to_toml_string()?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = configure_threads(n) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
