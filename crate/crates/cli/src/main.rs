use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fpp_ihrg::harness::{run_experiment, run_suite, write_outputs, ExperimentConfig, Summary};
use fpp_ihrg::kernel::{kernel_check, KernelSpec};

#[derive(Parser)]
#[command(
    name = "fpp-ihrg",
    version,
    about = "First passage percolation on inhomogeneous random graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a list of experiments and write one JSON report.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print derived quantities of a kernel file.
    KernelCheck {
        #[arg(long)]
        kernel: PathBuf,
    },
}

/// `FPP_IHRG_WORKERS` takes precedence over flags and config files.
fn env_workers() -> Result<Option<usize>> {
    match std::env::var("FPP_IHRG_WORKERS") {
        Ok(v) => {
            let w: usize = v.trim().parse().with_context(|| format!("FPP_IHRG_WORKERS={v}"))?;
            if w == 0 {
                bail!("FPP_IHRG_WORKERS must be positive");
            }
            Ok(Some(w))
        }
        Err(_) => Ok(None),
    }
}

fn print_summary(s: &Summary) {
    println!(
        "{}: accepted {}, rejected {}, {:.1} s",
        s.experiment.as_str(),
        s.accepted,
        s.rejected,
        s.wall_clock_seconds
    );
    for c in &s.criteria {
        println!(
            "  [{}] {} = {} ({} {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.relation,
            c.threshold
        );
    }
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = env_workers()?.or(workers) {
                cfg.workers = Some(w);
            }
            if out.is_some() {
                cfg.out = out;
            }
            let result = run_experiment(&cfg)?;
            let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            for p in write_outputs(&result, &dir)? {
                eprintln!("wrote {}", p.display());
            }
            print_summary(&result.summary);
            Ok(result.summary.all_pass())
        }
        Command::Suite {
            config,
            workers,
            report,
        } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let entries = match value {
                serde_json::Value::Array(v) => v,
                serde_json::Value::Object(mut o) => match o.remove("experiments") {
                    Some(serde_json::Value::Array(v)) => v,
                    _ => bail!("suite file must be a list or have an \"experiments\" list"),
                },
                _ => bail!("suite file must be a list or have an \"experiments\" list"),
            };
            let rep = run_suite(&entries, env_workers()?.or(workers));
            for e in &rep.entries {
                match (&e.summary, &e.error) {
                    (Some(s), _) => print_summary(s),
                    (None, Some(err)) => println!("entry {} skipped: {err}", e.index),
                    _ => {}
                }
            }
            for f in &rep.failures {
                println!("FAILED {f}");
            }
            let json = serde_json::to_string_pretty(&rep)?;
            match report {
                Some(p) => std::fs::write(&p, json)?,
                None => println!("{json}"),
            }
            Ok(rep.all_pass)
        }
        Command::KernelCheck { kernel } => {
            let text = std::fs::read_to_string(&kernel).with_context(|| format!("reading {}", kernel.display()))?;
            let spec: KernelSpec = serde_json::from_str(&text)?;
            let check = kernel_check(&spec.build()?);
            println!("{}", serde_json::to_string_pretty(&check)?);
            Ok(check.homogeneous && check.irreducible)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
