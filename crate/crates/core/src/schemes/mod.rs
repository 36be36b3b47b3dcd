//! Loss formulations of the three schemes and the models feeding them.

mod dbsde;
mod loss;
mod model;
#[cfg(test)]
mod tests;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dbsde::{DbsdeModel, DIVERGENCE_BOUND};
pub use loss::{dbsde_loss, ladbsde_loss_backward, ladbsde_loss_forward, ldbsde_loss, LossBreakdown, LossValues};
pub use model::{apply_sigma, z_from_network, AnalyticModel, ModelOutput, NetworkModel, SolutionModel};

use crate::ad::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{initialize, param_count, BatchNormState, BnMode, CountScheme, InitDist, MlpConfig, ParameterSet, RnnConfig};
use crate::problems::Fbsde;
use crate::sde::PathBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Dbsde,
    Ldbsde,
    Ladbsde,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Dbsde => "dbsde",
            SchemeKind::Ldbsde => "ldbsde",
            SchemeKind::Ladbsde => "ladbsde",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dbsde" => Some(SchemeKind::Dbsde),
            "ldbsde" => Some(SchemeKind::Ldbsde),
            "ladbsde" => Some(SchemeKind::Ladbsde),
            _ => None,
        }
    }

    /// `(gamma_0, gamma_min)` used with the plateau policy.
    pub fn learning_rates(self) -> (f64, f64) {
        match self {
            SchemeKind::Dbsde => (1e-2, 1e-4),
            SchemeKind::Ldbsde | SchemeKind::Ladbsde => (1e-3, 1e-5),
        }
    }

    pub fn default_activation(self) -> Activation {
        match self {
            SchemeKind::Dbsde => Activation::Relu,
            SchemeKind::Ldbsde => Activation::Sin,
            SchemeKind::Ladbsde => Activation::Tanh,
        }
    }

    pub fn default_hidden_layers(self) -> usize {
        match self {
            SchemeKind::Dbsde => 2,
            SchemeKind::Ldbsde | SchemeKind::Ladbsde => 4,
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Mlp,
    Rnn,
}

/// Which implementation of the locally additive loss to train with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossImpl {
    #[default]
    Backward,
    Forward,
}

/// Scheme selection and architecture; unset fields take the scheme default
/// (width `d + 10` for every scheme).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    #[serde(default)]
    pub backbone: Backbone,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default = "default_init")]
    pub init: InitDist,
    #[serde(default)]
    pub loss: LossImpl,
}

fn default_init() -> InitDist {
    InitDist::Uniform
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            backbone: Backbone::Mlp,
            hidden_layers: None,
            hidden_width: None,
            activation: None,
            init: InitDist::Uniform,
            loss: LossImpl::Backward,
        }
    }
}

/// Mutable, non-trained model state (batch-norm running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelState {
    pub bn: Vec<Vec<BatchNormState>>,
}

/// Plain `(Y_i, Z_i)` for `i = 0..points-1` on a path batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub points: usize,
    pub samples: usize,
    pub dim: usize,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Prediction {
    /// `y` is `[points, samples]` and `z` is `[points, samples, dim]`, both
    /// row-major.
    pub fn new(points: usize, samples: usize, dim: usize, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if y.len() != points * samples || z.len() != points * samples * dim {
            return Err(Error::invalid(format!(
                "prediction of {points} x {samples} x {dim} needs {} Y and {} Z values, got {} and {}",
                points * samples,
                points * samples * dim,
                y.len(),
                z.len()
            )));
        }
        Ok(Self {
            points,
            samples,
            dim,
            y,
            z,
        })
    }

    pub fn y(&self, i: usize, m: usize) -> f64 {
        self.y[i * self.samples + m]
    }

    pub fn z(&self, i: usize, m: usize) -> &[f64] {
        let o = (i * self.samples + m) * self.dim;
        &self.z[o..o + self.dim]
    }

    pub fn from_output(out: &ModelOutput<'_>, points: usize) -> Result<Self> {
        let samples = out.y[0].shape()[0];
        let dim = out.z[0].shape()[1];
        let mut p = Self {
            points,
            samples,
            dim,
            y: Vec::with_capacity(points * samples),
            z: Vec::with_capacity(points * samples * dim),
        };
        for i in 0..points {
            out.y[i].with_value(|v| p.y.extend_from_slice(v.data()));
            out.z[i].with_value(|v| p.z.extend_from_slice(v.data()));
        }
        Ok(p)
    }

    /// Concatenates predictions over consecutive sample ranges.
    fn concat(parts: Vec<Prediction>) -> Self {
        let points = parts[0].points;
        let dim = parts[0].dim;
        let samples = parts.iter().map(|p| p.samples).sum();
        let mut y = Vec::with_capacity(points * samples);
        let mut z = Vec::with_capacity(points * samples * dim);
        for i in 0..points {
            for p in &parts {
                y.extend_from_slice(&p.y[i * p.samples..(i + 1) * p.samples]);
                z.extend_from_slice(&p.z[i * p.samples * dim..(i + 1) * p.samples * dim]);
            }
        }
        Self {
            points,
            samples,
            dim,
            y,
            z,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Arch {
    Dbsde(DbsdeModel),
    Local(NetworkModel),
}

/// A scheme bound to a dimension and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Solver {
    config: SchemeConfig,
    dim: usize,
    steps: usize,
    arch: Arch,
}

impl Solver {
    pub fn new(config: &SchemeConfig, dim: usize, steps: usize) -> Result<Self> {
        let kind = config.kind;
        let layers = config.hidden_layers.unwrap_or(kind.default_hidden_layers());
        let width = config.hidden_width.unwrap_or(dim + 10);
        let activation = config.activation.unwrap_or(kind.default_activation());
        let arch = match (kind, config.backbone) {
            (SchemeKind::Dbsde, Backbone::Rnn) => {
                return Err(Error::config("scheme.backbone", "dbsde has no recurrent variant"))
            }
            (SchemeKind::Dbsde, Backbone::Mlp) => Arch::Dbsde(DbsdeModel::new(dim, steps, layers, width, activation)?),
            (_, Backbone::Mlp) => {
                let c = MlpConfig {
                    input_dim: dim + 1,
                    output_dim: 1,
                    hidden_layers: layers,
                    hidden_width: width,
                    activation,
                    batch_norm: false,
                };
                c.validate()?;
                Arch::Local(NetworkModel::Mlp(c))
            }
            (_, Backbone::Rnn) => {
                let c = RnnConfig {
                    input_dim: dim + 1,
                    output_dim: 1,
                    hidden_width: width,
                    activation,
                };
                c.validate()?;
                Arch::Local(NetworkModel::Rnn(c))
            }
        };
        Ok(Self {
            config: config.clone(),
            dim,
            steps,
            arch,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.config.kind
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        match &self.arch {
            Arch::Dbsde(m) => m.blocks(),
            Arch::Local(m) => m.blocks(),
        }
    }

    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let mut p = ParameterSet::zeros(&self.blocks());
        initialize(&mut p, seed, self.config.init);
        p
    }

    pub fn init_state(&self) -> ModelState {
        match &self.arch {
            Arch::Dbsde(m) => ModelState { bn: m.bn_states() },
            Arch::Local(_) => ModelState::default(),
        }
    }

    /// Size of the parameter vector actually trained.
    pub fn implemented_param_count(&self) -> usize {
        match &self.arch {
            Arch::Dbsde(m) => m.param_count(),
            Arch::Local(m) => m.param_count(),
        }
    }

    /// Published closed-form count for this architecture, when one exists.
    pub fn formula_param_count(&self) -> Option<u64> {
        let (d, n) = (self.dim as u64, self.steps as u64);
        let default_shape = self.config.hidden_layers.is_none_or(|l| l == self.kind().default_hidden_layers());
        match (&self.arch, self.kind()) {
            (Arch::Local(NetworkModel::Rnn(_)), _) => None,
            (Arch::Dbsde(_), _) => param_count(CountScheme::Dbsde, d, n).ok(),
            (_, SchemeKind::Ldbsde) if self.config.hidden_width == Some(256) && default_shape => {
                param_count(CountScheme::LdbsdeOriginal, d, n).ok()
            }
            (_, kind) if default_shape && self.config.hidden_width.is_none_or(|w| w == self.dim + 10) => {
                let scheme = if kind == SchemeKind::Ldbsde {
                    CountScheme::LdbsdePaper
                } else {
                    CountScheme::Ladbsde
                };
                param_count(scheme, d, n).ok()
            }
            _ => None,
        }
    }

    /// Batch statistics couple samples, so the free-parameter scheme cannot
    /// split a training batch.
    pub fn splits_batches(&self) -> bool {
        !matches!(self.arch, Arch::Dbsde(_))
    }

    /// Model predictions used by the loss.
    pub fn evaluate<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        problem: &dyn Fbsde,
        paths: &PathBatch,
        state: &mut ModelState,
        mode: BnMode,
    ) -> Result<ModelOutput<'t>> {
        self.check_paths(problem, paths)?;
        match &self.arch {
            Arch::Dbsde(m) => m.rollout(tape, params, problem, paths, &mut state.bn, mode),
            Arch::Local(m) => {
                let points = match self.kind() {
                    SchemeKind::Ldbsde => self.steps + 1,
                    _ => self.steps,
                };
                m.evaluate(tape, params, problem, paths, points)
            }
        }
    }

    /// Scheme loss on `paths`, every term scaled by `weight`.
    pub fn loss<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        problem: &dyn Fbsde,
        paths: &PathBatch,
        weight: f64,
        state: &mut ModelState,
        mode: BnMode,
    ) -> Result<LossBreakdown<'t>> {
        let out = self.evaluate(tape, params, problem, paths, state, mode)?;
        match (self.kind(), self.config.loss) {
            (SchemeKind::Dbsde, _) => dbsde_loss(problem, paths, &out, weight),
            (SchemeKind::Ldbsde, _) => ldbsde_loss(problem, paths, &out, weight),
            (SchemeKind::Ladbsde, LossImpl::Backward) => ladbsde_loss_backward(problem, paths, &out, weight),
            (SchemeKind::Ladbsde, LossImpl::Forward) => ladbsde_loss_forward(problem, paths, &out, weight),
        }
    }

    /// `(Y_i, Z_i)` for `i = 0..N-1` in inference mode, computed over
    /// fixed-size sample chunks in parallel.
    pub fn predict(
        &self,
        params: &ParameterSet,
        state: &ModelState,
        problem: &dyn Fbsde,
        paths: &PathBatch,
        chunk: usize,
    ) -> Result<Prediction> {
        let m = paths.samples();
        let chunk = chunk.max(1);
        let starts: Vec<usize> = (0..m).step_by(chunk).collect();
        let parts = starts
            .par_iter()
            .map(|&s| {
                let part = paths.slice(s, chunk.min(m - s));
                let tape = Tape::new();
                let vars = params.to_vars(&tape);
                let mut st = state.clone();
                let out = self.evaluate(&tape, &vars, problem, &part, &mut st, BnMode::Inference)?;
                Prediction::from_output(&out, self.steps)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prediction::concat(parts))
    }

    fn check_paths(&self, problem: &dyn Fbsde, paths: &PathBatch) -> Result<()> {
        if paths.dim() != self.dim || problem.dim() != self.dim || paths.grid.steps() != self.steps {
            return Err(Error::invalid(format!(
                "solver is set up for d = {}, N = {} but got paths with d = {}, N = {} and a problem with d = {}",
                self.dim,
                self.steps,
                paths.dim(),
                paths.grid.steps(),
                problem.dim()
            )));
        }
        Ok(())
    }
}
