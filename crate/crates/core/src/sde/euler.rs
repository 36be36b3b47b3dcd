use rayon::prelude::*;

use super::brownian::{BrownianBatch, TimeGrid};
use crate::ad::Tensor;
use crate::error::{Error, Result};

/// Diffusion coefficient of a forward SDE at one state.
#[derive(Clone, Debug, PartialEq)]
pub enum Diffusion {
    /// `sigma * I`.
    Scalar(f64),
    /// `diag(s)`.
    Diagonal(Vec<f64>),
    /// Row-major `d x d` matrix.
    Full(Vec<f64>),
}

impl Diffusion {
    /// `out = sigma . dw`.
    pub fn apply(&self, dw: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::Scalar(s) => out.iter_mut().zip(dw).for_each(|(o, w)| *o = s * w),
            Diffusion::Diagonal(s) => {
                for ((o, w), s) in out.iter_mut().zip(dw).zip(s) {
                    *o = s * w;
                }
            }
            Diffusion::Full(m) => {
                let d = dw.len();
                for (r, o) in out.iter_mut().enumerate() {
                    *o = (0..d).map(|c| m[r * d + c] * dw[c]).sum();
                }
            }
        }
    }

    /// Dense row-major form.
    pub fn to_matrix(&self, d: usize) -> Vec<f64> {
        let mut m = vec![0.0; d * d];
        match self {
            Diffusion::Scalar(s) => (0..d).for_each(|i| m[i * d + i] = *s),
            Diffusion::Diagonal(s) => (0..d).for_each(|i| m[i * d + i] = s[i]),
            Diffusion::Full(full) => m.copy_from_slice(full),
        }
        m
    }
}

/// Forward dynamics `dX = mu(t, X) dt + sigma(t, X) dW`.
pub trait ForwardSde: Sync {
    fn dim(&self) -> usize;
    fn x0(&self) -> Vec<f64>;
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64]) -> Diffusion;
}

/// Forward paths stored sample-major: `x[(m * (N + 1) + i) * d + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub brownian: BrownianBatch,
    x: Vec<f64>,
}

impl PathBatch {
    pub fn samples(&self) -> usize {
        self.brownian.samples()
    }

    pub fn dim(&self) -> usize {
        self.brownian.dim()
    }

    pub fn data(&self) -> &[f64] {
        &self.x
    }

    pub fn state(&self, m: usize, i: usize) -> &[f64] {
        let d = self.dim();
        let o = (m * (self.grid.steps() + 1) + i) * d;
        &self.x[o..o + d]
    }

    pub fn terminal(&self, m: usize) -> &[f64] {
        self.state(m, self.grid.steps())
    }

    /// `[M, d]` matrix of the states at time index `i`.
    pub fn state_matrix(&self, i: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.samples() * self.dim());
        for m in 0..self.samples() {
            data.extend_from_slice(self.state(m, i));
        }
        Tensor::matrix(self.samples(), self.dim(), data).expect("consistent sizes")
    }

    /// Keeps samples `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let s = (self.grid.steps() + 1) * self.dim();
        Self {
            grid: self.grid,
            brownian: self.brownian.slice(start, len),
            x: self.x[start * s..(start + len) * s].to_vec(),
        }
    }
}

/// Euler-Maruyama: `X_{i+1} = X_i + mu dt + sigma dW_i`, `X_0 = x0`.
pub fn euler_forward(sde: &dyn ForwardSde, grid: &TimeGrid, brownian: &BrownianBatch) -> Result<PathBatch> {
    let d = sde.dim();
    if brownian.dim() != d || brownian.steps() != grid.steps() {
        return Err(Error::invalid(format!(
            "Brownian batch is {} steps x {} dims but the problem needs {} x {}",
            brownian.steps(),
            brownian.dim(),
            grid.steps(),
            d
        )));
    }
    let n = grid.steps();
    let dt = grid.dt();
    let x0 = sde.x0();
    let mut x = vec![0.0; brownian.samples() * (n + 1) * d];
    let first_bad: Vec<Option<usize>> = x
        .par_chunks_mut((n + 1) * d)
        .enumerate()
        .map(|(m, path)| {
            let mut mu = vec![0.0; d];
            let mut noise = vec![0.0; d];
            path[..d].copy_from_slice(&x0);
            let mut bad = None;
            for i in 0..n {
                let t = grid.time(i);
                let (head, tail) = path.split_at_mut((i + 1) * d);
                let cur = &head[i * d..];
                sde.drift(t, cur, &mut mu);
                sde.diffusion(t, cur).apply(brownian.increment(m, i), &mut noise);
                for j in 0..d {
                    tail[j] = cur[j] + mu[j] * dt + noise[j];
                }
                if bad.is_none() && tail[..d].iter().any(|v| !v.is_finite()) {
                    bad = Some(i + 1);
                }
            }
            bad
        })
        .collect();
    let count = first_bad.iter().filter(|b| b.is_some()).count();
    if let Some((sample, step)) = first_bad.iter().enumerate().find_map(|(m, b)| b.map(|s| (m, s))) {
        return Err(Error::NonFiniteState {
            count,
            first_sample: sample,
            first_step: step,
        });
    }
    Ok(PathBatch {
        grid: *grid,
        brownian: brownian.clone(),
        x,
    })
}

/// A forward SDE whose terminal state is known pathwise given the increments.
pub trait ExactTerminal: ForwardSde {
    /// Exact `X_T` for one sample from its increments `[N * d]`.
    fn exact_terminal(&self, grid: &TimeGrid, dw: &[f64]) -> Vec<f64>;
}

/// Componentwise geometric Brownian motion `dX = mu X dt + sigma X dW`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gbm {
    pub mu: f64,
    pub sigma: f64,
    pub x0: Vec<f64>,
}

impl ForwardSde for Gbm {
    fn dim(&self) -> usize {
        self.x0.len()
    }

    fn x0(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = self.mu * v);
    }

    fn diffusion(&self, _t: f64, x: &[f64]) -> Diffusion {
        Diffusion::Diagonal(x.iter().map(|v| self.sigma * v).collect())
    }
}

impl ExactTerminal for Gbm {
    fn exact_terminal(&self, grid: &TimeGrid, dw: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let t = grid.horizon();
        (0..d)
            .map(|j| {
                let w: f64 = dw.iter().skip(j).step_by(d).sum();
                self.x0[j] * ((self.mu - 0.5 * self.sigma * self.sigma) * t + self.sigma * w).exp()
            })
            .collect()
    }
}

/// Monte-Carlo `E|X_T - exact|` (mean over samples of the Euclidean norm) for
/// each step count in `ladder`, all driven by one coupled Brownian draw on
/// the finest grid.
pub fn strong_error(
    sde: &dyn ExactTerminal,
    horizon: f64,
    ladder: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let finest = *ladder
        .iter()
        .max()
        .ok_or_else(|| Error::invalid("strong_error needs a non-empty ladder"))?;
    let fine_grid = TimeGrid::new(horizon, finest)?;
    let fine = BrownianBatch::sample(seed, 0, samples, &fine_grid, sde.dim())?;
    let exact: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|m| sde.exact_terminal(&fine_grid, fine.path(m)))
        .collect();
    ladder
        .iter()
        .map(|&n| {
            if n == 0 || finest % n != 0 {
                return Err(Error::invalid(format!("{n} does not divide the finest grid {finest}")));
            }
            let grid = TimeGrid::new(horizon, n)?;
            let dw = fine.coarsen(finest / n)?;
            let paths = euler_forward(sde, &grid, &dw)?;
            let total: f64 = (0..samples)
                .map(|m| {
                    paths
                        .terminal(m)
                        .iter()
                        .zip(&exact[m])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum();
            Ok((grid.dt(), total / samples as f64))
        })
        .collect()
}

/// Least-squares slope of `log err` against `log dt`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
