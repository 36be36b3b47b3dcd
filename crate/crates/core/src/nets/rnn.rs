use serde::{Deserialize, Serialize};

use super::params::{initialize, InitDist, ParameterSet};
use crate::ad::{Activation, Tensor, Var};
use crate::error::{Error, Result};

/// Elman recurrent network: `h_i = act(x_i Wx + h_{i-1} Wh + bh)`,
/// `y_i = h_i Wy + by`, with `h_0 = 0`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 {
            return Err(Error::invalid("rnn dimensions must be positive"));
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        let n = self.hidden_width;
        vec![
            ("input.weight".into(), vec![self.input_dim, n]),
            ("hidden.weight".into(), vec![n, n]),
            ("hidden.bias".into(), vec![1, n]),
            ("output.weight".into(), vec![n, self.output_dim]),
            ("output.bias".into(), vec![1, self.output_dim]),
        ]
    }

    pub fn param_count(&self) -> usize {
        let n = self.hidden_width;
        self.input_dim * n + n * n + n + n * self.output_dim + self.output_dim
    }

    pub fn init_params(&self, seed: u64, dist: InitDist) -> Result<ParameterSet> {
        self.validate()?;
        let mut p = ParameterSet::zeros(&self.blocks());
        initialize(&mut p, seed, dist);
        Ok(p)
    }

    /// Runs the sequence `xs` (each `[M, input_dim]`) and returns every `y_i`.
    pub fn forward<'t>(&self, params: &[Var<'t>], xs: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let [wx, wh, bh, wy, by] = params else {
            return Err(Error::invalid(format!(
                "rnn expects 5 parameter blocks, got {}",
                params.len()
            )));
        };
        let Some(first) = xs.first() else {
            return Err(Error::invalid("rnn_forward on an empty sequence"));
        };
        let m = first.shape()[0];
        let tape = first.tape();
        let mut h = tape.constant(Tensor::zeros(&[m, self.hidden_width]));
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let shape = x.shape();
            if shape != [m, self.input_dim] {
                return Err(Error::Shape {
                    op: "rnn_forward",
                    lhs: shape,
                    rhs: vec![m, self.input_dim],
                });
            }
            h = x
                .matmul(*wx)?
                .add(h.matmul(*wh)?)?
                .add(bh.broadcast_rows(m)?)?
                .activation(self.activation);
            out.push(h.matmul(*wy)?.add(by.broadcast_rows(m)?)?);
        }
        Ok(out)
    }
}
