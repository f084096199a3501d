//! `gbdlab`: batch experiments on displacement fields with jumps.
//!
//! Exit status: 0 on success, 2 when an experiment ran but an inequality was violated, 1 on errors.

mod commands;
mod config;
mod images;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands::{Outcome, Run};
use crate::config::{parse_list, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "gbdlab", version, about = "Slice measures, rigid fits, partitions and compactness experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Per-line and per-direction slice measures of one field.
    SliceMeasure,
    /// Rigid-motion fit on one cube.
    PkFit,
    /// Multiscale piecewise-rigid partition of a sequence.
    Partition,
    /// Partition plus convergence, Cauchy and lower-semicontinuity ledgers.
    Compactness,
    /// Lower-semicontinuity ledger against a given partition.
    LscCheck,
    /// Total slice measure, elastic energy and jump area of one field.
    Energy,
    /// Writes the fields and true partition of a built-in suite.
    Generate,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat TOML config (schema "gbdlab.config/1").
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Number of slicing directions.
    #[arg(long, global = true)]
    directions: Option<usize>,
    /// Comma-separated truncation levels.
    #[arg(long, global = true, value_parser = parse_list)]
    sigma: Option<Vec<f64>>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    delta0: Option<f64>,
    #[arg(long, global = true)]
    jmax: Option<usize>,
    /// Energy exponent.
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Input field file.
    #[arg(long, global = true)]
    field: Option<PathBuf>,
    /// Built-in suite name.
    #[arg(long, global = true)]
    suite: Option<String>,
    /// Cells per side for suites.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Sequence length for suites.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Partition file.
    #[arg(long, global = true)]
    partition: Option<PathBuf>,
    /// Skip the PGM images.
    #[arg(long, global = true)]
    no_images: bool,
}

impl Common {
    fn overrides(&self) -> ExperimentConfig {
        ExperimentConfig {
            field: self.field.clone(),
            suite: self.suite.clone(),
            n: self.n,
            k: self.k,
            partition: self.partition.clone(),
            out: self.out.clone(),
            seed: self.seed,
            jobs: self.jobs,
            directions: self.directions,
            sigma: self.sigma.clone(),
            eta: self.eta,
            delta0: self.delta0,
            jmax: self.jmax,
            p: self.p,
            images: self.no_images.then_some(false),
            ..Default::default()
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let file = match &cli.common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = file.merge(cli.common.overrides());
    cfg.validate()?;
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    let r = Run::new(cfg)?;
    match cli.command {
        Command::SliceMeasure => commands::slice_measure(&r),
        Command::PkFit => commands::pk_fit_cmd(&r),
        Command::Partition => commands::partition(&r),
        Command::Compactness => commands::compactness(&r),
        Command::LscCheck => commands::lsc(&r),
        Command::Energy => commands::energy(&r),
        Command::Generate => commands::generate(&r),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors; 2 is reserved for violated inequalities here
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(o) if o.violations.is_empty() => ExitCode::SUCCESS,
        Ok(o) => {
            for v in &o.violations {
                eprintln!("violated: {v}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
