//! Adam, learning-rate policies and the training loop.

mod adam;
mod checkpoint;
mod policy;

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use checkpoint::Checkpoint;
pub use policy::{plateau_update, step_schedule, DecayPolicy, PlateauDecision, PlateauState, PolicyKind, SCHEDULE_MAX_STEP};

use crate::ad::Tape;
use crate::error::{Error, Result};
use crate::nets::{BnMode, ParameterSet};
use crate::problems::Fbsde;
use crate::schemes::{ModelState, Solver};
use crate::sde::{euler_forward, BrownianBatch, PathBatch, TimeGrid, VALIDATION_STREAM};

/// Optimisation settings shared by every seed of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Mini-batch size `M`.
    pub batch: usize,
    /// Samples per gradient task. Fixed so the reduction order, and hence
    /// every bit of the result, is independent of the worker count.
    pub chunk: usize,
    pub policy: DecayPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            chunk: 16,
            policy: DecayPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("train.batch", "must be positive"));
        }
        if self.chunk == 0 {
            return Err(Error::config("train.chunk", "must be positive"));
        }
        self.policy.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxSteps,
    PlateauStop,
    #[serde(rename = "NC")]
    Nc,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::MaxSteps => "max_steps",
            Termination::PlateauStop => "plateau_stop",
            Termination::Nc => "NC",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Loss and learning-rate history of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    /// `train_loss[k - 1]` is the mini-batch loss of step `k`.
    pub train_loss: Vec<f64>,
    /// `lr[k - 1]` is the rate applied at step `k`.
    pub lr: Vec<f64>,
    /// `(step, validation loss)`; step 0 is the untrained model.
    pub probes: Vec<(usize, f64)>,
    pub steps: usize,
    pub termination: Termination,
    /// Why the run was flagged NC, if it was.
    pub failure: Option<String>,
    pub elapsed: Duration,
}

#[derive(Serialize)]
struct RecordRow {
    step: usize,
    train_loss: Option<f64>,
    val_loss: Option<f64>,
    lr: Option<f64>,
}

impl TrainRecord {
    /// Validation losses of the probes, in step order.
    pub fn validation(&self) -> Vec<f64> {
        self.probes.iter().map(|p| p.1).collect()
    }

    /// One row per step `0..=steps` with columns `step, train_loss, val_loss,
    /// lr`; absent values are left empty. Wall-clock time is not written.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut probes = self.probes.iter().peekable();
        for step in 0..=self.steps {
            let val_loss = probes.next_if(|p| p.0 == step).map(|p| p.1);
            let (train_loss, lr) = match step {
                0 => (None, None),
                k => (Some(self.train_loss[k - 1]), Some(self.lr[k - 1])),
            };
            out.serialize(RecordRow {
                step,
                train_loss,
                val_loss,
                lr,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Result of [`train`]. On NC the parameters are those before the failing step.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub state: ModelState,
    pub adam: AdamState,
    pub plateau: PlateauState,
    pub record: TrainRecord,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.record.steps as u64,
            plateau: self.plateau.clone(),
            adam: self.adam.clone(),
            state: self.state.clone(),
            params: self.params.clone(),
        }
    }
}

/// Simulates the paths of one mini-batch.
pub fn simulate(problem: &dyn Fbsde, grid: &TimeGrid, seed: u64, stream: u32, samples: usize) -> Result<PathBatch> {
    let bm = BrownianBatch::sample(seed, stream, samples, grid, problem.dim())?;
    euler_forward(problem, grid, &bm)
}

fn chunk_starts(samples: usize, chunk: usize) -> Vec<(usize, usize)> {
    (0..samples).step_by(chunk).map(|s| (s, chunk.min(samples - s))).collect()
}

/// Mean loss over `paths` and its parameter gradient.
///
/// Schemes without batch coupling evaluate fixed sample chunks on separate
/// tapes in parallel; the partial results are summed in chunk order.
pub fn batch_gradient(
    solver: &Solver,
    problem: &dyn Fbsde,
    paths: &PathBatch,
    params: &ParameterSet,
    state: &mut ModelState,
    chunk: usize,
) -> Result<(f64, Vec<f64>)> {
    let m = paths.samples();
    let weight = 1.0 / m as f64;
    let one = |part: &PathBatch, st: &mut ModelState| -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let vars = params.to_vars(&tape);
        let loss = solver.loss(&tape, &vars, problem, part, weight, st, BnMode::Train)?;
        let grads = tape.backward(loss.total, &vars)?;
        Ok((loss.total.item()?, params.flatten_grads(&vars, &grads)))
    };
    if !solver.splits_batches() || chunk >= m {
        return one(paths, state);
    }
    let parts = chunk_starts(m, chunk)
        .into_par_iter()
        .map(|(s, len)| one(&paths.slice(s, len), &mut state.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut parts = parts.into_iter();
    let (mut loss, mut grad) = parts.next().expect("at least one chunk");
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

/// Mean loss over `paths` in inference mode, chunked like [`batch_gradient`].
pub fn evaluate_loss(
    solver: &Solver,
    problem: &dyn Fbsde,
    paths: &PathBatch,
    params: &ParameterSet,
    state: &ModelState,
    chunk: usize,
) -> Result<f64> {
    let m = paths.samples();
    let weight = 1.0 / m as f64;
    let chunk = chunk.max(1);
    let parts = chunk_starts(m, chunk)
        .into_par_iter()
        .map(|(s, len)| {
            let tape = Tape::new();
            let vars = params.to_vars(&tape);
            let loss = solver.loss(&tape, &vars, problem, &paths.slice(s, len), weight, &mut state.clone(), BnMode::Inference)?;
            loss.total.item()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().sum())
}

/// Trains `solver` on `problem` from `seed`. See [`train_with`].
pub fn train(problem: &dyn Fbsde, solver: &Solver, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_with(problem, solver, config, seed, |_| Ok(()))
}

/// Step `k` draws a fresh batch on Brownian stream `k`; the validation batch
/// is drawn once on its own stream. `on_period` receives a checkpoint at
/// every period boundary. Divergence and non-finite losses or gradients end
/// the run with [`Termination::Nc`] rather than an error.
pub fn train_with(
    problem: &dyn Fbsde,
    solver: &Solver,
    config: &TrainConfig,
    seed: u64,
    mut on_period: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let policy = &config.policy;
    if policy.max_steps >= VALIDATION_STREAM as usize {
        return Err(Error::config("train.policy.max_steps", "exceeds the number of Brownian streams"));
    }
    let started = Instant::now();
    let grid = TimeGrid::new(problem.horizon(), solver.steps())?;
    let validation = simulate(problem, &grid, seed, VALIDATION_STREAM, policy.validation_size)?;

    let mut params = solver.init_params(seed);
    let mut state = solver.init_state();
    let mut adam = AdamState::new(params.len());
    let mut plateau = policy.start();
    let mut record = TrainRecord {
        train_loss: Vec::new(),
        lr: Vec::new(),
        probes: Vec::new(),
        steps: 0,
        termination: Termination::MaxSteps,
        failure: None,
        elapsed: Duration::ZERO,
    };
    let mut period_probes = Vec::with_capacity(policy.probes_per_period());

    let probe = |params: &ParameterSet, state: &ModelState| -> Result<f64> {
        let v = evaluate_loss(solver, problem, &validation, params, state, config.chunk)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Diverged(format!("validation loss is {v}")))
        }
    };

    let result = (|| -> Result<()> {
        record.probes.push((0, probe(&params, &state)?));
        for k in 1..=policy.max_steps {
            let lr = policy.rate(&plateau, k)?;
            let paths = simulate(problem, &grid, seed, k as u32, config.batch)?;
            let mut next_state = state.clone();
            let (loss, grad) = batch_gradient(solver, problem, &paths, &params, &mut next_state, config.chunk)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("training loss is {loss} at step {k}")));
            }
            adam_step(params.theta_mut(), &grad, &mut adam, lr)?;
            state = next_state;
            record.train_loss.push(loss);
            record.lr.push(lr);
            record.steps = k;

            if k % policy.probe_every == 0 {
                let v = probe(&params, &state)?;
                record.probes.push((k, v));
                period_probes.push(v);
            }
            if k % policy.period == 0 {
                let decision = policy.end_period(&mut plateau, k, &period_probes);
                period_probes.clear();
                on_period(&Checkpoint {
                    step: k as u64,
                    plateau: plateau.clone(),
                    adam: adam.clone(),
                    state: state.clone(),
                    params: params.clone(),
                })?;
                if decision == PlateauDecision::Stop {
                    record.termination = Termination::PlateauStop;
                    return Ok(());
                }
            }
        }
        Ok(())
    })();
    match result {
        Ok(()) => {}
        Err(Error::Diverged(msg)) => {
            record.termination = Termination::Nc;
            record.failure = Some(msg);
        }
        Err(e) => return Err(e),
    }
    record.elapsed = started.elapsed();
    Ok(TrainOutcome {
        params,
        state,
        adam,
        plateau,
        record,
    })
}
