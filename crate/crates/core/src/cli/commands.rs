use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    analytic_prediction, mean_loss, regression_errors, t0_errors, write_loss_csv, write_regression_csv, write_t0_csv,
    RegressionRow, RunT0, T0Row,
};
use crate::problems::Fbsde;
use crate::sde::ForwardSde;
use crate::schemes::{Prediction, Solver};
use crate::sde::{write_path_dump, TimeGrid, TEST_STREAM};
use crate::train::{simulate, train_with, Checkpoint, Termination};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_FORMAT: u32 = 1;
const PREDICT_CHUNK: usize = 256;

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut w = BufWriter::new(File::create(&tmp)?);
    body(&mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub termination: Termination,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub elapsed_seconds: f64,
    pub checkpoint: String,
    pub record: String,
}

/// Reproduction record written next to every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_format: u32,
    pub version: String,
    pub command: String,
    #[serde(default)]
    pub runs: Vec<RunEntry>,
    #[serde(default)]
    pub cells: Vec<String>,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            manifest_format: MANIFEST_FORMAT,
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            runs: Vec::new(),
            cells: Vec::new(),
            files: Vec::new(),
            config: config.resolved(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {}", path.display(), e.message())))
    }

    fn write(&mut self, dir: &Path) -> Result<()> {
        self.files.sort();
        self.files.dedup();
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST_FILE), |w| Ok(w.write_all(text.as_bytes())?))
    }

    pub fn has_nc(&self) -> bool {
        self.runs.iter().any(|r| r.termination == Termination::Nc)
    }
}

/// What a command reports back to the exit-code logic.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub nc_runs: usize,
    pub rows: Vec<T0Row>,
}

fn rel(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Trains every seed, writes checkpoints, record CSVs and the manifest, then
/// evaluates.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let out = &config.output.dir;
    let problem = config.build_problem()?;
    let solver = config.build_solver()?;
    let tc = config.train_config();
    let runs = config
        .train
        .seeds
        .par_iter()
        .map(|&seed| -> Result<RunEntry> {
            let ckpt = out.join("checkpoints").join(format!("seed-{seed}.ckpt"));
            let record = out.join("records").join(format!("seed-{seed}.csv"));
            let save = |c: &Checkpoint| write_atomic(&ckpt, |w| c.write_to(w));
            let outcome = train_with(&problem, &solver, &tc, seed, save)?;
            save(&outcome.checkpoint())?;
            write_atomic(&record, |w| outcome.record.write_csv(w))?;
            Ok(RunEntry {
                seed,
                termination: outcome.record.termination,
                steps: outcome.record.steps,
                failure: outcome.record.failure.clone(),
                elapsed_seconds: outcome.record.elapsed.as_secs_f64(),
                checkpoint: rel(&ckpt, out),
                record: rel(&record, out),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = Manifest::new("train", config);
    for r in &runs {
        manifest.files.push(r.checkpoint.clone());
        manifest.files.push(r.record.clone());
    }
    manifest.runs = runs;
    evaluate_runs(config, &mut manifest)
}

/// Re-evaluates the checkpoints listed in the manifest of `config.output.dir`.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let out = &config.output.dir;
    let previous = Manifest::load(out)?;
    // Scheme kinds can share a parameter layout, so the checkpoints alone
    // cannot tell a mismatched model apart.
    let (trained, now) = (previous.config.resolved(), config.resolved());
    if trained.scheme != now.scheme {
        return Err(Error::config("scheme", "differs from the configuration the checkpoints were trained with"));
    }
    if trained.problem != now.problem {
        return Err(Error::config("problem", "differs from the configuration the checkpoints were trained with"));
    }
    let mut manifest = Manifest::new("evaluate", config);
    manifest.runs = previous.runs;
    manifest.files = previous.files;
    evaluate_runs(config, &mut manifest)
}

fn load_checkpoint(path: &Path, solver: &Solver) -> Result<Checkpoint> {
    let ck = Checkpoint::read_from(&mut BufReader::new(File::open(path)?))?;
    if ck.params.len() != solver.implemented_param_count() {
        return Err(Error::config(
            "checkpoint",
            format!(
                "{} holds {} parameters but the configured model has {}",
                path.display(),
                ck.params.len(),
                solver.implemented_param_count()
            ),
        ));
    }
    if ck.params.layout().iter().map(|s| (&s.name, &s.shape)).ne(solver.blocks().iter().map(|b| (&b.0, &b.1))) {
        return Err(Error::config(
            "checkpoint",
            format!("{} has a different parameter layout", path.display()),
        ));
    }
    Ok(ck)
}

/// `(step, val_loss)` rows of a record CSV.
pub fn read_validation_trace(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut trace = Vec::new();
    for row in reader.records() {
        let row = row?;
        let (Some(step), Some(val)) = (row.get(0), row.get(2)) else {
            return Err(Error::Format(format!("{}: short row", path.display())));
        };
        if val.is_empty() {
            continue;
        }
        let parse_err = |_| Error::Format(format!("{}: bad number in `{step},{val}`", path.display()));
        trace.push((step.parse().map_err(|_| parse_err(()))?, val.parse().map_err(|_| parse_err(()))?));
    }
    Ok(trace)
}

/// Truncates traces to their common step prefix (runs may stop early).
fn common_prefix(mut traces: Vec<Vec<(usize, f64)>>) -> Vec<Vec<(usize, f64)>> {
    let Some(first) = traces.first() else {
        return traces;
    };
    let mut len = first.len();
    for t in &traces[1..] {
        len = len.min(t.iter().zip(first).take_while(|(a, b)| a.0 == b.0).count());
    }
    traces.iter_mut().for_each(|t| t.truncate(len));
    traces
}

fn evaluate_runs(config: &ExperimentConfig, manifest: &mut Manifest) -> Result<Summary> {
    let out = &config.output.dir;
    let problem = config.build_problem()?;
    let solver = config.build_solver()?;
    let scheme = config.scheme.kind.name();
    let grid = TimeGrid::new(problem.horizon(), solver.steps())?;
    let test = simulate(&problem, &grid, config.evaluate.test_seed, TEST_STREAM, config.evaluate.test_size)?;

    let mut predictions: Vec<Option<Prediction>> = Vec::with_capacity(manifest.runs.len());
    for run in &manifest.runs {
        let ck = load_checkpoint(&out.join(&run.checkpoint), &solver)?;
        predictions.push(match run.termination {
            Termination::Nc => None,
            _ => Some(solver.predict(&ck.params, &ck.state, &problem, &test, PREDICT_CHUNK)?),
        });
    }
    let t0: Vec<RunT0> = predictions
        .iter()
        .map(|p| p.as_ref().map(|p| (p.y(0, 0), p.z(0, 0).to_vec())))
        .collect();
    let convention = config.evaluate.sd;
    let errors = match problem.reference() {
        Some(r) => t0_errors(&t0, &r, convention)?,
        None => crate::metrics::T0Errors {
            nc: t0.iter().any(Option::is_none),
            y: None,
            z: None,
        },
    };
    let row = T0Row {
        scheme: scheme.to_string(),
        problem: config.problem.id.clone(),
        d: config.problem.dim,
        n: config.problem.steps,
        errors,
    };
    write_atomic(&out.join("t0_errors.csv"), |w| write_t0_csv(w, std::slice::from_ref(&row)))?;

    let times = grid.times();
    let completed: Vec<Prediction> = predictions.iter().flatten().cloned().collect();
    let has_analytic = problem.analytic(0.0, &problem.x0()).is_some();
    let regression: Option<Vec<RegressionRow>> = if completed.len() == predictions.len() && has_analytic && !completed.is_empty() {
        let exact = analytic_prediction(&problem, &test, solver.steps())?;
        Some(regression_errors(&completed, &exact, &times, convention)?)
    } else {
        None
    };
    let status = if row.errors.nc { "NC" } else { "NA" };
    write_atomic(&out.join("regression.csv"), |w| match &regression {
        Some(rows) => write_regression_csv(w, scheme, rows),
        None => write_regression_placeholder(w, scheme, &times[..solver.steps()], status),
    })?;

    let traces = manifest
        .runs
        .iter()
        .filter(|r| r.termination != Termination::Nc)
        .map(|r| read_validation_trace(&out.join(&r.record)))
        .collect::<Result<Vec<_>>>()?;
    let loss = if traces.is_empty() {
        Vec::new()
    } else {
        mean_loss(&common_prefix(traces), convention)?
    };
    write_atomic(&out.join("loss.csv"), |w| write_loss_csv(w, &loss))?;

    manifest.files.extend(["t0_errors.csv", "regression.csv", "loss.csv"].map(String::from));
    manifest.write(out)?;
    Ok(Summary {
        nc_runs: manifest.runs.iter().filter(|r| r.termination == Termination::Nc).count(),
        rows: vec![row],
    })
}

fn write_regression_placeholder(w: impl Write, scheme: &str, times: &[f64], status: &str) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "i", "t_i", "eps_y", "sd_y", "eps_z", "sd_z"])?;
    for (i, t) in times.iter().enumerate() {
        out.write_record([scheme, &i.to_string(), &t.to_string(), status, status, status, status])?;
    }
    out.flush()?;
    Ok(())
}

/// Runs every cell of the sweep product and writes `sweep.csv` with one
/// row per cell in the `t0_errors.csv` layout.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let cells = config.sweep_cells();
    for c in &cells {
        c.validate()?;
    }
    let results = cells.par_iter().map(cmd_train).collect::<Result<Vec<_>>>()?;
    let rows: Vec<T0Row> = results.iter().flat_map(|s| s.rows.clone()).collect();
    let out = &config.output.dir;
    write_atomic(&out.join("sweep.csv"), |w| write_t0_csv(w, &rows))?;
    let mut manifest = Manifest::new("sweep", config);
    manifest.cells = cells.iter().map(|c| rel(&c.output.dir, out)).collect();
    manifest.files.push("sweep.csv".into());
    manifest.write(out)?;
    Ok(Summary {
        nc_runs: results.iter().map(|s| s.nc_runs).sum(),
        rows,
    })
}

/// Dumps the first training batch of every seed.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let problem = config.build_problem()?;
    let grid = TimeGrid::new(problem.horizon(), config.problem.steps)?;
    let out = &config.output.dir;
    let mut manifest = Manifest::new("simulate", config);
    for &seed in &config.train.seeds {
        let paths = simulate(&problem, &grid, seed, 1, config.train.batch)?;
        let path = out.join("paths").join(format!("seed-{seed}.bin"));
        write_atomic(&path, |w| write_path_dump(w, &paths, problem.id()))?;
        manifest.files.push(rel(&path, out));
    }
    manifest.write(out)?;
    Ok(Summary {
        nc_runs: 0,
        rows: Vec::new(),
    })
}
