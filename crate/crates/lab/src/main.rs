use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lab::config::{preset, resolve, ExperimentKind};
use lab::runner::{run, verify, Verdict};
use lab::tools;
use relulab::datasets::Reduction;

/// Gradient-flow experiments on bias-free leaky-ReLU and linear networks.
#[derive(Parser)]
#[command(name = "lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (merged over the experiment's preset) into its output directory.
    Run {
        config: PathBuf,
        /// Override any leaf by dotted path, e.g. `--set train.eta=0.01`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Output directory; shorthand for `--set output=DIR`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a run directory's integrity and recompute its predicates.
    Verify { run_dir: PathBuf },
    /// Statistics of a dataset CSV.
    Stats {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        reduction: Option<ReductionArg>,
    },
    /// Evaluate the white-covariance closed form at the requested times.
    ClosedForm { spec: PathBuf },
    /// Print the default config of an experiment.
    Preset { experiment: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Mean,
    Sum,
}

fn report(v: &Verdict) -> ExitCode {
    for line in v.lines() {
        emit(format_args!("{line}"));
    }
    for d in &v.diverged {
        emit(format_args!("DIVERGED {d}"));
    }
    emit(format_args!("{} {} (run {})", if v.pass && v.diverged.is_empty() { "PASS" } else { "FAIL" }, v.experiment, v.run_id));
    ExitCode::from(v.exit_code() as u8)
}

/// Writes one line to stdout; a closed pipe (`lab ... | head`) ends the process quietly.
fn emit(args: std::fmt::Arguments) {
    use std::io::Write;
    if let Err(e) = writeln!(std::io::stdout().lock(), "{args}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("writing to stdout: {e}");
    }
}

fn main_inner() -> Result<ExitCode> {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("LAB_THREADS") {
        let n: usize = n.parse().with_context(|| format!("LAB_THREADS={n:?} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Run { config, mut sets, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let doc = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", config.display()))?;
            if let Some(o) = out {
                sets.push(format!("output={}", o.display()));
            }
            let cfg = resolve(&doc, &sets)?;
            let v = run(&cfg)?;
            emit(format_args!("wrote {}", cfg.output.display()));
            Ok(report(&v))
        }
        Command::Verify { run_dir } => Ok(report(&verify(&run_dir)?)),
        Command::Stats { dataset, reduction } => {
            let r = reduction.map(|r| match r {
                ReductionArg::Mean => Reduction::Mean,
                ReductionArg::Sum => Reduction::Sum,
            });
            emit(format_args!("{}", serde_json::to_string_pretty(&tools::stats(&dataset, r)?)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::ClosedForm { spec } => {
            emit(format_args!("{}", serde_json::to_string_pretty(&tools::closed_form(&spec)?)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::Preset { experiment } => {
            emit(format_args!("{}", serde_json::to_string_pretty(&preset(ExperimentKind::parse(&experiment)?))?));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
