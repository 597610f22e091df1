//! `rideprice`: runs pricing scenarios and compares their reports.

mod compare;
mod run;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::run::RunOptions;

#[derive(Parser)]
#[command(
    name = "rideprice",
    version,
    about = "Spatial pricing on congested networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one or more scenarios (TOML, or a report JSON to re-run its echo).
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Override a scenario value, e.g. `--set demand.b=[4,4]`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; each scenario writes to a subdirectory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenarios solved concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Permit price_matching on networks above 10 nodes.
        #[arg(long)]
        allow_long: bool,
    },
    /// Print signed deltas (b - a) between two reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the deltas as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Exit status: 0 converged, 2 flagged non-convergence, 1 error.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Converged = 0,
    NotConverged = 2,
    Failed = 1,
}

impl Status {
    fn severity(self) -> u8 {
        match self {
            Status::Converged => 0,
            Status::NotConverged => 1,
            Status::Failed => 2,
        }
    }
}

fn run_one(
    path: &Path,
    overrides: &[String],
    out: Option<&PathBuf>,
    opts: RunOptions,
) -> Result<Status> {
    let sc = scenario::load(path, overrides)?;
    let out = out
        .cloned()
        .or_else(|| sc.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let (report, dir) = run::run(&sc, &out, opts)?;
    println!(
        "{}: {} converged={} iterations={} imbalance_total={:.3e} total_travel_time={:.4} -> {}",
        report.scenario,
        report.mode,
        report.converged,
        report.iterations,
        report.imbalance_total,
        report.total_travel_time,
        dir.display()
    );
    Ok(if report.converged {
        Status::Converged
    } else {
        Status::NotConverged
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let status = match cli.command {
        Command::Run {
            scenarios,
            overrides,
            out,
            jobs,
            allow_long,
        } => {
            let opts = RunOptions { allow_long };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .expect("thread pool");
            let results: Vec<Status> = pool.install(|| {
                scenarios
                    .par_iter()
                    .map(|p| {
                        run_one(p, &overrides, out.as_ref(), opts).unwrap_or_else(|e| {
                            eprintln!("error: {e:#}");
                            Status::Failed
                        })
                    })
                    .collect()
            });
            results
                .into_iter()
                .max_by_key(|s| s.severity())
                .unwrap_or(Status::Converged)
        }
        Command::Compare { a, b, csv } => match compare_cmd(&a, &b, csv.as_ref()) {
            Ok(()) => Status::Converged,
            Err(e) => {
                eprintln!("error: {e:#}");
                Status::Failed
            }
        },
    };
    ExitCode::from(status as u8)
}

fn compare_cmd(a: &Path, b: &Path, csv: Option<&PathBuf>) -> Result<()> {
    let ra = compare::read_report(a)?;
    let rb = compare::read_report(b)?;
    let deltas = compare::compare(&ra, &rb).context("cannot compare reports")?;
    compare::print_table(&deltas);
    if let Some(p) = csv {
        compare::write_csv(p, &deltas)?;
    }
    Ok(())
}
