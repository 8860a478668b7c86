mod bench;
mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use cpas_core::harness::{self, render_table, Report, Scenario};

#[derive(Parser)]
#[command(name = "cpas", version, about = "Alarm fleet simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario to completion in virtual time.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print only the verdict line.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Re-run a recorded trace and check it reproduces byte for byte.
    Replay { trace: PathBuf },
    /// Run a scenario against the wall clock with the operator API and a TE listener.
    Serve {
        scenario: PathBuf,
        /// Virtual milliseconds per wall millisecond.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 8080)]
        api_port: u16,
        #[arg(long, default_value_t = 7001)]
        te_port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Print a saved report as a table.
    Report { report: PathBuf },
    /// Measure scheduler throughput.
    BenchScheduler {
        #[arg(long, default_value_t = 1000)]
        tasks: usize,
        #[arg(long, default_value_t = 100)]
        budget: u64,
        #[arg(long, default_value_t = 500)]
        work: u64,
        #[arg(long, value_enum, default_value_t = Scalar::F64)]
        scalar: Scalar,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Scalar {
    F64,
    F32,
    Rational,
}

fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::from_json(&text).with_context(|| format!("in {}", path.display()))
}

fn verdict(r: &Report) -> ExitCode {
    if r.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<ExitCode> {
    match cmd {
        Cmd::Run { scenario, seed, report, trace, quiet } => {
            let sc = load_scenario(&scenario)?;
            let out = harness::run(sc, seed)?;
            if let Some(p) = report {
                let json = serde_json::to_string_pretty(&out.report)?;
                std::fs::write(&p, json + "\n").with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = trace {
                std::fs::write(&p, &out.trace).with_context(|| format!("writing {}", p.display()))?;
            }
            if quiet {
                println!("{}", if out.report.passed { "PASS" } else { "FAIL" });
            } else {
                print!("{}", render_table(&out.report));
            }
            Ok(verdict(&out.report))
        }
        Cmd::Replay { trace } => {
            let bytes = std::fs::read(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let r = harness::replay(&bytes)?;
            print!("{}", render_table(&r.outcome.report));
            if r.identical {
                println!("replay: identical ({} bytes)", bytes.len());
                Ok(verdict(&r.outcome.report))
            } else {
                println!(
                    "replay: DIVERGED at record {}",
                    r.first_divergence.unwrap_or_default()
                );
                Ok(ExitCode::from(1))
            }
        }
        Cmd::Serve { scenario, speed, api_port, te_port, bind } => {
            anyhow::ensure!(speed > 0.0 && speed.is_finite(), "--speed must be positive");
            let sc = load_scenario(&scenario)?;
            serve::serve(sc, serve::Options { speed, api_port, te_port, bind })?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { report } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let r: Report = serde_json::from_str(&text).with_context(|| format!("parsing {}", report.display()))?;
            print!("{}", render_table(&r));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::BenchScheduler { tasks, budget, work, scalar } => {
            anyhow::ensure!(tasks > 0 && budget > 0, "--tasks and --budget must be positive");
            println!("{}", bench::run(tasks, budget, work, scalar));
            Ok(ExitCode::SUCCESS)
        }
    }
}
