use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use amf_cli::checks::{self, Fault};
use amf_cli::config::{Config, Overrides};
use amf_cli::runner;
use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "amf", about = "Seeded online-learning experiments and their acceptance checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write rounds.csv and summary.json.
    Run(ConfigArgs),
    /// Run the acceptance checks; exits nonzero if any fails.
    Verify {
        /// Swap in a point-mass solver; the suite should fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Print the resolved config and its hash.
    Describe(ConfigArgs),
}

fn load(a: &ConfigArgs) -> Result<Config> {
    let mut cfg = Config::from_path(&a.config)?;
    cfg.apply(&Overrides {
        seed: a.seed,
        horizon: a.horizon,
        out: a.out.clone(),
    })?;
    Ok(cfg)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(a) => {
            let cfg = load(&a)?;
            let report = runner::run(&cfg)?;
            for (s, dir) in report.summaries.iter().zip(&report.dirs) {
                println!(
                    "seed {}: {} = {:.6} (bound {:.6}) -> {}",
                    s.seed,
                    s.metric_name,
                    s.final_metric,
                    s.bound,
                    dir.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Describe(a) => {
            let cfg = load(&a)?;
            // a closed pipe (`| head`) is not an error
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}\nconfig_hash: {}", serde_json::to_string_pretty(&cfg)?, cfg.hash());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { inject_fault } => {
            let fault = if inject_fault { Fault::PointMassSolver } else { Fault::None };
            let start = Instant::now();
            let outcomes = checks::run_all(fault);
            for o in &outcomes {
                println!("{o}");
            }
            let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
            println!("{:.1}s total", start.elapsed().as_secs_f64());
            if failed.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("failing checks: {}", failed.join(", "));
                Ok(ExitCode::FAILURE)
            }
        }
    }
}
