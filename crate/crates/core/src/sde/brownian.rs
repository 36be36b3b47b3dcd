use rayon::prelude::*;

use super::philox::{normal_pair, seed_key};
use crate::ad::Tensor;
use crate::error::{Error, Result};

/// Uniform partition of `[0, T]` into `N` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_i`; the last point is exactly `T`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

/// Stream reserved for validation batches.
pub const VALIDATION_STREAM: u32 = u32::MAX - 1;
/// Stream reserved for the shared test batch.
pub const TEST_STREAM: u32 = u32::MAX;

/// Brownian increments stored sample-major: `dw[(m * N + i) * d + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianBatch {
    samples: usize,
    steps: usize,
    dim: usize,
    dt: f64,
    seed: u64,
    stream: u32,
    dw: Vec<f64>,
}

impl BrownianBatch {
    /// Counter-based draw keyed by `(seed, stream, sample, step, component)`.
    ///
    /// Every entry is a pure function of its coordinates, so the batch is
    /// identical under any parallel schedule.
    pub fn sample(seed: u64, stream: u32, samples: usize, grid: &TimeGrid, dim: usize) -> Result<Self> {
        if samples == 0 || dim == 0 {
            return Err(Error::invalid("Brownian batch needs M >= 1 and d >= 1"));
        }
        let (n, dt) = (grid.steps(), grid.dt());
        let sq = dt.sqrt();
        let key = seed_key(seed);
        let mut dw = vec![0.0; samples * n * dim];
        dw.par_chunks_mut(n * dim).enumerate().for_each(|(m, block)| {
            for i in 0..n {
                let row = &mut block[i * dim..(i + 1) * dim];
                for pair in 0..dim.div_ceil(2) {
                    let (a, b) = normal_pair([m as u32, i as u32, pair as u32, stream], key);
                    row[2 * pair] = a * sq;
                    if 2 * pair + 1 < dim {
                        row[2 * pair + 1] = b * sq;
                    }
                }
            }
        });
        Ok(Self {
            samples,
            steps: n,
            dim,
            dt,
            seed,
            stream,
            dw,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u32 {
        self.stream
    }

    pub fn data(&self) -> &[f64] {
        &self.dw
    }

    /// Increment of sample `m` over step `i`.
    pub fn increment(&self, m: usize, i: usize) -> &[f64] {
        let o = (m * self.steps + i) * self.dim;
        &self.dw[o..o + self.dim]
    }

    /// All increments of sample `m`, `[N * d]`.
    pub fn path(&self, m: usize) -> &[f64] {
        let s = self.steps * self.dim;
        &self.dw[m * s..(m + 1) * s]
    }

    /// `[M, d]` matrix of the step-`i` increments.
    pub fn step_matrix(&self, i: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.samples * self.dim);
        for m in 0..self.samples {
            data.extend_from_slice(self.increment(m, i));
        }
        Tensor::matrix(self.samples, self.dim, data).expect("consistent sizes")
    }

    /// Sums consecutive blocks of `factor` increments, giving the coupled
    /// batch on the grid with `N / factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.steps
            )));
        }
        let n = self.steps / factor;
        let d = self.dim;
        let mut dw = vec![0.0; self.samples * n * d];
        for m in 0..self.samples {
            for i in 0..n {
                let out = &mut dw[(m * n + i) * d..(m * n + i + 1) * d];
                for k in 0..factor {
                    for (o, v) in out.iter_mut().zip(self.increment(m, i * factor + k)) {
                        *o += v;
                    }
                }
            }
        }
        Ok(Self {
            samples: self.samples,
            steps: n,
            dim: d,
            dt: self.dt * factor as f64,
            seed: self.seed,
            stream: self.stream,
            dw,
        })
    }

    /// Keeps samples `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let s = self.steps * self.dim;
        Self {
            samples: len,
            dw: self.dw[start * s..(start + len) * s].to_vec(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            samples: self.samples,
            steps: self.steps,
            dim: self.dim,
            dt: self.dt,
            seed: self.seed,
            stream: self.stream,
            dw: Vec::new(),
        }
    }

    /// Wraps caller-supplied increments laid out as `dw[(m * N + i) * d + j]`.
    pub fn from_increments(samples: usize, grid: &TimeGrid, dim: usize, dw: Vec<f64>) -> Result<Self> {
        if dw.len() != samples * grid.steps() * dim || samples == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "{} increments do not form a {samples} x {} x {dim} batch",
                dw.len(),
                grid.steps()
            )));
        }
        Ok(Self {
            samples,
            steps: grid.steps(),
            dim,
            dt: grid.dt(),
            seed: 0,
            stream: 0,
            dw,
        })
    }
}
