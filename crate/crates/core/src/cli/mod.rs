//! Experiment driver: config loading, subcommands and exit codes.
//!
//! Precedence is command-line flag, then config file, then built-in default.

mod check;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use check::{run_checks, CheckResult};
pub use commands::{
    cmd_evaluate, cmd_simulate, cmd_sweep, cmd_train, read_validation_trace, write_atomic, Manifest, RunEntry, Summary,
    MANIFEST_FILE, MANIFEST_FORMAT,
};
pub use config::{
    EvaluateSection, ExperimentConfig, OutputSection, PolicySection, ProblemSection, SweepSection, TrainSection,
    MANIFEST_KEY,
};

use crate::error::{Error, Result};
use crate::problems::ProblemParams;
use crate::schemes::{SchemeConfig, SchemeKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NC: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "deep-bsde", version, about = "Deep-learning solvers for decoupled FBSDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed, then write checkpoints, records, metric CSVs and a manifest.
    Train(Overrides),
    /// Recompute the metric CSVs from the checkpoints in the output directory.
    Evaluate(Overrides),
    /// Train and evaluate every cell of the scheme x d x N product.
    Sweep(SweepArgs),
    /// Dump the first training batch of forward paths for every seed.
    Simulate(Overrides),
    /// Run the built-in invariant checks.
    Check,
}

fn parse_scheme(s: &str) -> std::result::Result<SchemeKind, String> {
    SchemeKind::parse(s).ok_or_else(|| format!("unknown scheme `{s}`, expected dbsde, ldbsde or ladbsde"))
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML config or a manifest written by a previous run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces the configured seed list; repeat for an ensemble.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<SchemeKind>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Maximum optimisation steps.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub base: Overrides,
    #[arg(long, value_delimiter = ',', value_parser = parse_scheme)]
    pub schemes: Vec<SchemeKind>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    #[arg(long = "steps-list", value_delimiter = ',')]
    pub steps_list: Vec<usize>,
}

impl Overrides {
    /// Loads the config file (if any) and applies the flags on top.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let id = self
                    .problem
                    .clone()
                    .ok_or_else(|| Error::config("problem.id", "missing; pass --config or --problem"))?;
                let steps = self
                    .steps
                    .ok_or_else(|| Error::config("problem.steps", "missing; pass --config or --steps"))?;
                ExperimentConfig {
                    problem: ProblemSection {
                        id,
                        dim: self.dim.unwrap_or(1),
                        steps,
                        params: ProblemParams::default(),
                    },
                    scheme: SchemeConfig::new(self.scheme.unwrap_or(SchemeKind::Ladbsde)),
                    train: TrainSection::default(),
                    evaluate: EvaluateSection::default(),
                    output: OutputSection::default(),
                    sweep: SweepSection::default(),
                }
            }
        };
        if let Some(v) = &self.problem {
            c.problem.id = v.clone();
        }
        if let Some(v) = self.dim {
            c.problem.dim = v;
        }
        if let Some(v) = self.steps {
            c.problem.steps = v;
        }
        if let Some(v) = self.scheme {
            c.scheme.kind = v;
        }
        if let Some(v) = &self.out {
            c.output.dir = v.clone();
        }
        if !self.seeds.is_empty() {
            c.train.seeds = self.seeds.clone();
        }
        if let Some(v) = self.iters {
            c.train.policy.max_steps = Some(v);
        }
        if let Some(v) = self.batch {
            c.train.batch = v;
        }
        if let Some(v) = self.workers {
            c.train.workers = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

fn report(summary: &Summary) -> i32 {
    for r in &summary.rows {
        let e = &r.errors;
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3e}"));
        if e.nc {
            println!("{} {} d={} N={}: NC", r.scheme, r.problem, r.d, r.n);
        } else {
            println!(
                "{} {} d={} N={}: eps_y0={} eps_z0={}",
                r.scheme,
                r.problem,
                r.d,
                r.n,
                fmt(e.y.map(|s| s.mean)),
                fmt(e.z.map(|s| s.mean))
            );
        }
    }
    if summary.nc_runs > 0 {
        eprintln!("{} run(s) did not converge", summary.nc_runs);
        EXIT_NC
    } else {
        EXIT_OK
    }
}

/// Executes a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Check => {
            let results = run_checks();
            let mut failed = 0;
            for c in &results {
                match &c.outcome {
                    Ok(()) => println!("PASS {}", c.name),
                    Err(msg) => {
                        failed += 1;
                        println!("FAIL {}: {msg}", c.name);
                    }
                }
            }
            return if failed == 0 { EXIT_OK } else { EXIT_RUNTIME };
        }
        Command::Train(o) => o.resolve().and_then(|c| in_pool(c.train.workers, || cmd_train(&c))),
        Command::Evaluate(o) => o.resolve().and_then(|c| in_pool(c.train.workers, || cmd_evaluate(&c))),
        Command::Simulate(o) => o.resolve().and_then(|c| in_pool(c.train.workers, || cmd_simulate(&c))),
        Command::Sweep(s) => s.base.resolve().and_then(|mut c| {
            if !s.schemes.is_empty() {
                c.sweep.schemes = s.schemes.clone();
            }
            if !s.dims.is_empty() {
                c.sweep.dims = s.dims.clone();
            }
            if !s.steps_list.is_empty() {
                c.sweep.steps = s.steps_list.clone();
            }
            c.validate()?;
            in_pool(c.train.workers, || cmd_sweep(&c))
        }),
    };
    match result {
        Ok(summary) => report(&summary),
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
