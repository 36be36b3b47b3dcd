use crate::ad::{Tensor, Var};
use crate::error::Result;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Inference,
}

/// Running statistics for one normalisation site.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
        }
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    /// Normalises `x` ([M, n]) and applies the affine `gamma`/`beta` ([1, n]).
    ///
    /// Train mode uses the biased batch statistics and folds them into the
    /// running averages; inference mode uses the running averages as constants.
    pub fn apply<'t>(
        &mut self,
        x: Var<'t>,
        gamma: Var<'t>,
        beta: Var<'t>,
        mode: BnMode,
    ) -> Result<Var<'t>> {
        let tape = x.tape();
        let shape = x.shape();
        let (m, n) = (shape[0], shape[1]);
        let xhat = match mode {
            BnMode::Train => {
                let mean = x.sum_rows()?.scale(1.0 / m as f64);
                let centered = x.sub(mean.broadcast_rows(m)?)?;
                let var = centered.square().sum_rows()?.scale(1.0 / m as f64);
                let inv = var.add_scalar(self.eps).powf(-0.5);
                let (mv, vv) = (mean.value(), var.value());
                for j in 0..n {
                    self.mean[j] = self.momentum * self.mean[j] + (1.0 - self.momentum) * mv.data()[j];
                    self.var[j] = self.momentum * self.var[j] + (1.0 - self.momentum) * vv.data()[j];
                }
                centered.mul(inv.broadcast_rows(m)?)?
            }
            BnMode::Inference => {
                let mean = tape.constant(Tensor::row(self.mean.clone()));
                let inv = tape.constant(Tensor::row(
                    self.var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect(),
                ));
                x.sub(mean.broadcast_rows(m)?)?.mul(inv.broadcast_rows(m)?)?
            }
        };
        xhat.mul(gamma.broadcast_rows(m)?)?
            .add(beta.broadcast_rows(m)?)
    }
}
