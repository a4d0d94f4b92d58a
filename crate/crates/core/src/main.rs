use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use quench_ldp::cli::{self, Overrides, EXIT_SCHEMA};
use quench_ldp::config::{self, Experiment};
use quench_ldp::corrector::CorrectorMethod;
use quench_ldp::rareevent::EstimatorMode;

#[derive(Parser)]
#[command(name = "quench-ldp", version, about = "Multiscale diffusions in random media: homogenization, action and rare-event estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_experiment)]
        experiment: Option<Experiment>,
        /// Comma-separated list, e.g. 0.2,0.1,0.05
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_method)]
        corrector_method: Option<CorrectorMethod>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EstimatorMode>,
        /// Build the control from Dχ_ρ at this ρ instead of ξ.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Check a configuration and print schema errors and physics warnings.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Shorthand for `run --experiment estimate`.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EstimatorMode>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rho: Option<f64>,
    },
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse().map_err(|e: quench_ldp::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<EstimatorMode, String> {
    s.parse().map_err(|e: quench_ldp::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<CorrectorMethod, String> {
    match s {
        "grid" => Ok(CorrectorMethod::Grid),
        "mc" => Ok(CorrectorMethod::Mc),
        _ => Err(format!("unknown corrector method {s:?} (grid, mc)")),
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("QUENCH_LDP_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("ignoring QUENCH_LDP_THREADS={v:?}"),
        }
    }
}

fn execute(config: PathBuf, o: Overrides) -> ExitCode {
    match cli::run(&config, &o) {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("{}", outcome.out_dir.join(a).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    match Cli::parse().command {
        Command::Run {
            config,
            experiment,
            eps,
            seed,
            replicas,
            out,
            corrector_method,
            mode,
            rho,
        } => execute(
            config,
            Overrides {
                experiment,
                eps,
                seed,
                replicas,
                out,
                corrector_method,
                mode,
                rho,
            },
        ),
        Command::Estimate {
            config,
            eps,
            mode,
            replicas,
            seed,
            out,
            rho,
        } => execute(
            config,
            Overrides {
                experiment: Some(Experiment::Estimate),
                eps,
                seed,
                replicas,
                out,
                mode,
                rho,
                ..Default::default()
            },
        ),
        Command::Validate { config } => {
            let report = config::validate(&config);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.errors.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SCHEMA as u8)
            }
        }
    }
}
