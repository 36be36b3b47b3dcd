use serde::{Deserialize, Serialize};

use super::batchnorm::{BatchNormState, BnMode};
use super::params::{initialize, InitDist, ParameterSet};
use crate::ad::{Activation, Var};
use crate::error::{Error, Result};

/// Fully connected network with `hidden_layers` hidden layers of equal width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::invalid(format!(
                "mlp dimensions must be positive, got d0={} d1={} L={} n={}",
                self.input_dim, self.output_dim, self.hidden_layers, self.hidden_width
            )));
        }
        Ok(())
    }

    /// `(name, shape)` of every block, in the order they appear in theta.
    ///
    /// With batch norm the input is normalised first, then every hidden
    /// affine map is followed by a normalisation before its activation.
    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let bn = |out: &mut Vec<(String, Vec<usize>)>, site: &str, n: usize| {
            out.push((format!("{site}.gamma"), vec![1, n]));
            out.push((format!("{site}.beta"), vec![1, n]));
        };
        if self.batch_norm {
            bn(&mut out, "input_bn", self.input_dim);
        }
        let mut fan_in = self.input_dim;
        for l in 1..=self.hidden_layers {
            out.push((format!("layer{l}.weight"), vec![fan_in, self.hidden_width]));
            out.push((format!("layer{l}.bias"), vec![1, self.hidden_width]));
            if self.batch_norm {
                bn(&mut out, &format!("layer{l}.bn"), self.hidden_width);
            }
            fan_in = self.hidden_width;
        }
        let l = self.hidden_layers + 1;
        out.push((format!("layer{l}.weight"), vec![fan_in, self.output_dim]));
        out.push((format!("layer{l}.bias"), vec![1, self.output_dim]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Fresh running statistics, one entry per normalisation site.
    pub fn bn_states(&self) -> Vec<BatchNormState> {
        if !self.batch_norm {
            return Vec::new();
        }
        let mut v = vec![BatchNormState::new(self.input_dim)];
        v.extend((0..self.hidden_layers).map(|_| BatchNormState::new(self.hidden_width)));
        v
    }

    pub fn init_params(&self, seed: u64, dist: InitDist) -> Result<ParameterSet> {
        self.validate()?;
        let mut p = ParameterSet::zeros(&self.blocks());
        initialize(&mut p, seed, dist);
        Ok(p)
    }

    /// Forward pass for a network without batch norm.
    ///
    /// `params` are the tape leaves of this network's blocks in layout order;
    /// `x` is `[M, input_dim]`.
    pub fn forward<'t>(&self, params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        if self.batch_norm {
            return Err(Error::invalid(
                "network uses batch norm; call forward_bn with running statistics",
            ));
        }
        self.run(params, x, None)
    }

    pub fn forward_bn<'t>(
        &self,
        params: &[Var<'t>],
        x: Var<'t>,
        states: &mut [BatchNormState],
        mode: BnMode,
    ) -> Result<Var<'t>> {
        if !self.batch_norm {
            return self.run(params, x, None);
        }
        if states.len() != self.hidden_layers + 1 {
            return Err(Error::invalid(format!(
                "expected {} batch-norm states, got {}",
                self.hidden_layers + 1,
                states.len()
            )));
        }
        self.run(params, x, Some((states, mode)))
    }

    fn run<'t>(
        &self,
        params: &[Var<'t>],
        x: Var<'t>,
        mut bn: Option<(&mut [BatchNormState], BnMode)>,
    ) -> Result<Var<'t>> {
        let expected = self.blocks().len();
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "mlp expects {expected} parameter blocks, got {}",
                params.len()
            )));
        }
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: shape,
                rhs: vec![0, self.input_dim],
            });
        }
        let m = shape[0];
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("block count checked above");
        let mut h = x;
        if let Some((states, mode)) = bn.as_mut() {
            let (g, b) = (next(), next());
            h = states[0].apply(h, g, b, *mode)?;
        }
        for l in 0..self.hidden_layers {
            let (w, b) = (next(), next());
            h = h.matmul(w)?.add(b.broadcast_rows(m)?)?;
            if let Some((states, mode)) = bn.as_mut() {
                let (g, beta) = (next(), next());
                h = states[l + 1].apply(h, g, beta, *mode)?;
            }
            h = h.activation(self.activation);
        }
        let (w, b) = (next(), next());
        h.matmul(w)?.add(b.broadcast_rows(m)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Tape, Tensor};

    fn config(act: Activation, bn: bool) -> MlpConfig {
        MlpConfig {
            input_dim: 2,
            output_dim: 1,
            hidden_layers: 4,
            hidden_width: 12,
            activation: act,
            batch_norm: bn,
        }
    }

    #[test]
    fn layout_matches_count() {
        let c = config(Activation::Tanh, false);
        let p = c.init_params(3, InitDist::Uniform).unwrap();
        assert_eq!(p.len(), c.param_count());
        assert_eq!(p.len(), 12 * 3 + 3 * 12 * 13 + 13);
    }

    #[test]
    fn init_is_deterministic() {
        let c = config(Activation::Sin, false);
        assert_eq!(
            c.init_params(9, InitDist::Normal).unwrap(),
            c.init_params(9, InitDist::Normal).unwrap()
        );
        assert_ne!(
            c.init_params(9, InitDist::Normal).unwrap(),
            c.init_params(10, InitDist::Normal).unwrap()
        );
    }

    #[test]
    fn zero_params_give_zero_output() {
        let c = config(Activation::Tanh, false);
        let p = ParameterSet::zeros(&c.blocks());
        let tape = Tape::new();
        let vars = p.to_vars(&tape);
        let x = tape.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, -3.0, 4.0, 0.5, 9.0]).unwrap());
        let y = c.forward(&vars, x).unwrap().value();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_two_neuron_net() {
        let c = MlpConfig {
            input_dim: 2,
            output_dim: 1,
            hidden_layers: 1,
            hidden_width: 2,
            activation: Activation::Tanh,
            batch_norm: false,
        };
        let theta = vec![1.0, 0.0, 0.0, 1.0, 0.1, -0.2, 2.0, -1.0, 0.3];
        let mut p = ParameterSet::zeros(&c.blocks());
        p.theta_mut().copy_from_slice(&theta);
        let tape = Tape::new();
        let vars = p.to_vars(&tape);
        let x = tape.constant(Tensor::row(vec![0.5, 0.7]));
        let y = c.forward(&vars, x).unwrap().item().unwrap();
        let want = 2.0 * (0.6f64).tanh() - (0.5f64).tanh() + 0.3;
        assert!((y - want).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_rejected() {
        let c = config(Activation::Relu, false);
        let p = c.init_params(1, InitDist::Uniform).unwrap();
        let tape = Tape::new();
        let vars = p.to_vars(&tape);
        let x = tape.constant(Tensor::zeros(&[4, 3]));
        assert!(c.forward(&vars, x).is_err());
    }

    #[test]
    fn batch_rows_match_single_rows() {
        let c = config(Activation::Sin, false);
        let p = c.init_params(5, InitDist::Uniform).unwrap();
        let rows = [[0.1, 0.2], [-1.0, 3.0], [2.5, -0.4]];
        let tape = Tape::new();
        let vars = p.to_vars(&tape);
        let batch = tape.constant(Tensor::matrix(3, 2, rows.concat()).unwrap());
        let yb = c.forward(&vars, batch).unwrap().value();
        for (r, row) in rows.iter().enumerate() {
            let x = tape.constant(Tensor::row(row.to_vec()));
            let y = c.forward(&vars, x).unwrap().item().unwrap();
            assert_eq!(y, yb.data()[r]);
        }
    }

    #[test]
    fn batch_norm_counts_and_runs() {
        let c = MlpConfig {
            input_dim: 3,
            output_dim: 3,
            hidden_layers: 2,
            hidden_width: 13,
            activation: Activation::Relu,
            batch_norm: true,
        };
        // 2 * 3 (input bn) + 2 * (weights, bias, bn) + output affine
        let want = 6 + (3 * 13 + 13 + 26) + (13 * 13 + 13 + 26) + (13 * 3 + 3);
        assert_eq!(c.param_count(), want);
        let p = c.init_params(0, InitDist::Uniform).unwrap();
        let tape = Tape::new();
        let vars = p.to_vars(&tape);
        let x = tape.constant(Tensor::matrix(4, 3, (0..12).map(|i| i as f64 * 0.3).collect()).unwrap());
        let mut st = c.bn_states();
        let y = c.forward_bn(&vars, x, &mut st, BnMode::Train).unwrap();
        assert_eq!(y.shape(), vec![4, 3]);
        assert_ne!(st, c.bn_states());
        assert!(c.forward(&vars, x).is_err());
    }
}
