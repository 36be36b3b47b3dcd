use crate::ad::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{BatchNormState, BnMode, MlpConfig};
use crate::problems::Fbsde;
use crate::sde::PathBatch;

use super::loss::euler_step;
use super::model::ModelOutput;

/// `|Y|` above this marks a rollout as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e10;

/// Free `(Y_0, Z_0)` plus one `d -> d` network per interior time step.
#[derive(Clone, Debug, PartialEq)]
pub struct DbsdeModel {
    pub dim: usize,
    pub steps: usize,
    pub net: MlpConfig,
}

impl DbsdeModel {
    pub fn new(dim: usize, steps: usize, hidden_layers: usize, hidden_width: usize, activation: Activation) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("the free-parameter scheme needs N >= 2"));
        }
        let net = MlpConfig {
            input_dim: dim,
            output_dim: dim,
            hidden_layers,
            hidden_width,
            activation,
            batch_norm: true,
        };
        net.validate()?;
        Ok(Self { dim, steps, net })
    }

    /// `y0`, `z0`, then `step{i}.*` for `i = 1..N-1`.
    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![("y0".to_string(), vec![1, 1]), ("z0".to_string(), vec![1, self.dim])];
        let net = self.net.blocks();
        for i in 1..self.steps {
            out.extend(net.iter().map(|(name, shape)| (format!("step{i}.{name}"), shape.clone())));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        1 + self.dim + (self.steps - 1) * self.net.param_count()
    }

    pub fn bn_states(&self) -> Vec<Vec<BatchNormState>> {
        (1..self.steps).map(|_| self.net.bn_states()).collect()
    }

    /// Iterates `Y_{i+1} = Y_i - f_i dt + Z_i dW_i` from the free `(Y_0, Z_0)`,
    /// with `Z_i = net_i(X_i)` for `i >= 1`. Returns `Y_0..Y_N` and
    /// `Z_0..Z_{N-1}`.
    pub fn rollout<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        problem: &dyn Fbsde,
        paths: &PathBatch,
        states: &mut [Vec<BatchNormState>],
        mode: BnMode,
    ) -> Result<ModelOutput<'t>> {
        let per_net = self.net.blocks().len();
        if params.len() != 2 + (self.steps - 1) * per_net {
            return Err(Error::invalid(format!(
                "expected {} parameter blocks, got {}",
                2 + (self.steps - 1) * per_net,
                params.len()
            )));
        }
        if paths.grid.steps() != self.steps || paths.dim() != self.dim {
            return Err(Error::invalid("path batch does not match the model grid"));
        }
        let m = paths.samples();
        let mut y = params[0].broadcast_rows(m)?;
        let mut z = params[1].broadcast_rows(m)?;
        let mut out = ModelOutput {
            y: vec![y],
            z: Vec::with_capacity(self.steps),
        };
        for i in 0..self.steps {
            if i > 0 {
                let block = &params[2 + (i - 1) * per_net..2 + i * per_net];
                let x = tape.constant(paths.state_matrix(i));
                z = self.net.forward_bn(block, x, &mut states[i - 1], mode)?;
            }
            out.z.push(z);
            y = euler_step(problem, paths, i, y, z)?;
            let bad = y.with_value(|v| v.data().iter().any(|a| !a.is_finite() || a.abs() > DIVERGENCE_BOUND));
            if bad {
                return Err(Error::Diverged(format!("Y left the bounded range at step {}", i + 1)));
            }
            out.y.push(y);
        }
        Ok(out)
    }
}
