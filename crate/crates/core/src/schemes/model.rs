use std::rc::Rc;

use crate::ad::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{MlpConfig, RnnConfig};
use crate::problems::Fbsde;
use crate::sde::{Diffusion, PathBatch};

/// Per-time predictions: `y[i]` is `[M, 1]`, `z[i]` is `[M, d]`.
#[derive(Clone, Debug)]
pub struct ModelOutput<'t> {
    pub y: Vec<Var<'t>>,
    pub z: Vec<Var<'t>>,
}

/// Anything that produces `(Y_i, Z_i)` for the first `points` time indices
/// of a path batch.
pub trait SolutionModel: Sync {
    fn evaluate<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        problem: &dyn Fbsde,
        paths: &PathBatch,
        points: usize,
    ) -> Result<ModelOutput<'t>>;
}

/// `grad . sigma(t, x)` row by row; `grad` is `[R, d]`, one diffusion per row.
pub fn apply_sigma<'t>(grad: Var<'t>, diffusions: &[Diffusion]) -> Result<Var<'t>> {
    let shape = grad.shape();
    let (rows, d) = (shape[0], shape[1]);
    if diffusions.len() != rows {
        return Err(Error::invalid(format!(
            "{} diffusion matrices for {rows} rows",
            diffusions.len()
        )));
    }
    let tape = grad.tape();
    if let Some(Diffusion::Scalar(s0)) = diffusions.first() {
        if diffusions.iter().all(|s| *s == Diffusion::Scalar(*s0)) {
            return Ok(grad.scale(*s0));
        }
    }
    if diffusions.iter().all(|s| !matches!(s, Diffusion::Full(_))) {
        let mut data = Vec::with_capacity(rows * d);
        for s in diffusions {
            match s {
                Diffusion::Scalar(v) => data.extend(std::iter::repeat_n(*v, d)),
                Diffusion::Diagonal(v) => data.extend_from_slice(v),
                Diffusion::Full(_) => unreachable!("checked above"),
            }
        }
        let scale = tape.constant(Tensor::matrix(rows, d, data)?);
        return grad.mul(scale);
    }
    let mats: Vec<f64> = diffusions.iter().flat_map(|s| s.to_matrix(d)).collect();
    grad.row_vec_mat(Rc::from(mats), false)
}

/// Network input `[t_i, X_i]` for one time index, `[M, d + 1]`.
fn time_state_input(paths: &PathBatch, i: usize) -> Tensor {
    let (m, d) = (paths.samples(), paths.dim());
    let t = paths.grid.time(i);
    let mut data = Vec::with_capacity(m * (d + 1));
    for s in 0..m {
        data.push(t);
        data.extend_from_slice(paths.state(s, i));
    }
    Tensor::matrix(m, d + 1, data).expect("consistent sizes")
}

fn diffusions_at(problem: &dyn Fbsde, paths: &PathBatch, i: usize) -> Vec<Diffusion> {
    let t = paths.grid.time(i);
    (0..paths.samples())
        .map(|s| problem.diffusion(t, paths.state(s, i)))
        .collect()
}

/// `Z = (d psi / d x) sigma` for a network `psi(t, x)` evaluated on the
/// leaf `input` (`[R, d + 1]`, time in column 0).
///
/// The gradient is recorded on the tape, so parameter gradients of any loss
/// built from `Z` differentiate through it.
pub fn z_from_network<'t>(y: Var<'t>, input: Var<'t>, diffusions: &[Diffusion]) -> Result<Var<'t>> {
    let tape = y.tape();
    let d = input.shape()[1] - 1;
    let grad = tape.grad(y.sum(), &[input])?.remove(0);
    apply_sigma(grad.slice_cols(1, d)?, diffusions)
}

/// A single network `psi(t, x)` shared across time.
#[derive(Clone, Debug, PartialEq)]
pub enum NetworkModel {
    Mlp(MlpConfig),
    Rnn(RnnConfig),
}

impl NetworkModel {
    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            NetworkModel::Mlp(c) => c.blocks(),
            NetworkModel::Rnn(c) => c.blocks(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            NetworkModel::Mlp(c) => c.param_count(),
            NetworkModel::Rnn(c) => c.param_count(),
        }
    }
}

impl SolutionModel for NetworkModel {
    fn evaluate<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        problem: &dyn Fbsde,
        paths: &PathBatch,
        points: usize,
    ) -> Result<ModelOutput<'t>> {
        if points == 0 || points > paths.grid.steps() + 1 {
            return Err(Error::invalid(format!("cannot evaluate {points} time points")));
        }
        let m = paths.samples();
        match self {
            NetworkModel::Mlp(cfg) => {
                // All time points in one time-major matrix: row i * M + m.
                let mut data = Vec::with_capacity(points * m * (cfg.input_dim));
                let mut diffusions = Vec::with_capacity(points * m);
                for i in 0..points {
                    data.extend(time_state_input(paths, i).into_data());
                    diffusions.extend(diffusions_at(problem, paths, i));
                }
                let input = tape.leaf(Tensor::matrix(points * m, cfg.input_dim, data)?);
                let y = cfg.forward(params, input)?;
                let z = z_from_network(y, input, &diffusions)?;
                let mut out = ModelOutput {
                    y: Vec::with_capacity(points),
                    z: Vec::with_capacity(points),
                };
                for i in 0..points {
                    out.y.push(y.slice_rows(i * m, m)?);
                    out.z.push(z.slice_rows(i * m, m)?);
                }
                Ok(out)
            }
            NetworkModel::Rnn(cfg) => {
                let inputs: Vec<Var<'t>> = (0..points)
                    .map(|i| tape.leaf(time_state_input(paths, i)))
                    .collect();
                let ys = cfg.forward(params, &inputs)?;
                let z = ys
                    .iter()
                    .zip(&inputs)
                    .enumerate()
                    .map(|(i, (y, x))| z_from_network(*y, *x, &diffusions_at(problem, paths, i)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ModelOutput { y: ys, z })
            }
        }
    }
}

/// Stub returning the closed-form solution; has no parameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct AnalyticModel;

impl SolutionModel for AnalyticModel {
    fn evaluate<'t>(
        &self,
        tape: &'t Tape,
        _params: &[Var<'t>],
        problem: &dyn Fbsde,
        paths: &PathBatch,
        points: usize,
    ) -> Result<ModelOutput<'t>> {
        let (m, d) = (paths.samples(), paths.dim());
        let mut out = ModelOutput {
            y: Vec::with_capacity(points),
            z: Vec::with_capacity(points),
        };
        for i in 0..points {
            let t = paths.grid.time(i);
            let mut ys = Vec::with_capacity(m);
            let mut zs = Vec::with_capacity(m * d);
            for s in 0..m {
                let (y, z) = problem
                    .analytic(t, paths.state(s, i))
                    .ok_or_else(|| Error::NoAnalyticSolution(problem.id().to_string()))?;
                ys.push(y);
                zs.extend(z);
            }
            out.y.push(tape.constant(Tensor::column(ys)));
            out.z.push(tape.constant(Tensor::matrix(m, d, zs)?));
        }
        Ok(out)
    }
}
