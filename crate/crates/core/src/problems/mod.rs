//! Decoupled FBSDE benchmark problems.

mod examples;

use serde::{Deserialize, Serialize};

pub use examples::{Example1, Example2, Example3, Example4};

use crate::ad::{Tensor, Var};
use crate::error::{Error, Result};
use crate::sde::{Diffusion, ForwardSde};

/// Reference value of the solution at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub y0: f64,
    pub z0: Option<Vec<f64>>,
    pub provenance: String,
}

/// A decoupled FBSDE: forward dynamics plus the backward equation
/// `-dY = f(t, X, Y, Z) dt - Z dW`, `Y_T = g(X_T)`.
pub trait Fbsde: ForwardSde {
    fn id(&self) -> &str;
    fn horizon(&self) -> f64;

    /// Driver on a batch: `x` is `[M, d]`, `y` is `[M, 1]`, `z` is `[M, d]`;
    /// returns `[M, 1]` recorded on the tape of `y`.
    fn driver<'t>(&self, t: f64, x: &Tensor, y: Var<'t>, z: Var<'t>) -> Result<Var<'t>>;

    fn terminal(&self, x: &[f64]) -> f64;

    /// Closed-form `(Y(t, x), Z(t, x))`, if known.
    fn analytic(&self, _t: f64, _x: &[f64]) -> Option<(f64, Vec<f64>)> {
        None
    }

    fn reference(&self) -> Option<Reference> {
        let x0 = self.x0();
        self.analytic(0.0, &x0).map(|(y0, z0)| Reference {
            y0,
            z0: Some(z0),
            provenance: "analytic solution".into(),
        })
    }

    /// `g` applied row-wise to `[M, d]`, as `[M, 1]`.
    fn terminal_batch(&self, x: &Tensor) -> Tensor {
        let d = x.shape()[1];
        Tensor::column(x.data().chunks(d).map(|r| self.terminal(r)).collect())
    }

    /// Diffusion of every row of `x` (`[M, d]`) at time `t`.
    fn diffusion_batch(&self, t: f64, x: &Tensor) -> Vec<Diffusion> {
        let d = x.shape()[1];
        x.data().chunks(d).map(|r| self.diffusion(t, r)).collect()
    }
}

/// `(Y(t, x), Z(t, x))` or an error for problems without a closed form.
pub fn analytic_solution(problem: &dyn Fbsde, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    problem
        .analytic(t, x)
        .ok_or_else(|| Error::NoAnalyticSolution(problem.id().to_string()))
}

/// Optional overrides of a problem's standard parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    pub horizon: Option<f64>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    /// Every component of the initial state.
    pub x0: Option<f64>,
    pub alpha: Option<f64>,
    pub r: Option<f64>,
    pub rl: Option<f64>,
    pub rb: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
}

impl ProblemParams {
    fn reject_unused(&self, id: &str, allowed: &[&str]) -> Result<()> {
        let set = [
            ("horizon", self.horizon.is_some()),
            ("mu", self.mu.is_some()),
            ("sigma", self.sigma.is_some()),
            ("x0", self.x0.is_some()),
            ("alpha", self.alpha.is_some()),
            ("r", self.r.is_some()),
            ("rl", self.rl.is_some()),
            ("rb", self.rb.is_some()),
            ("k1", self.k1.is_some()),
            ("k2", self.k2.is_some()),
        ];
        for (name, present) in set {
            if present && !allowed.contains(&name) {
                return Err(Error::config(
                    format!("problem.params.{name}"),
                    format!("not a parameter of {id}"),
                ));
            }
        }
        Ok(())
    }
}

/// One of the four benchmark problems.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSpec {
    Ex1(Example1),
    Ex2(Example2),
    Ex3(Example3),
    Ex4(Example4),
}

pub const PROBLEM_IDS: [&str; 4] = ["ex1", "ex2", "ex3", "ex4"];

impl ProblemSpec {
    /// Builds problem `id` in dimension `d` from its standard parameters
    /// with `params` applied on top.
    pub fn build(id: &str, d: usize, params: &ProblemParams) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("problem.dim", "must be at least 1"));
        }
        let spec = match id {
            "ex1" => {
                params.reject_unused(id, &["horizon", "mu", "sigma", "x0"])?;
                let mut p = Example1::standard(d);
                if let Some(v) = params.horizon {
                    p.horizon = v;
                }
                if let Some(v) = params.mu {
                    p.mu = v;
                }
                if let Some(v) = params.sigma {
                    p.sigma = v;
                }
                if let Some(v) = params.x0 {
                    p.x0 = vec![v; d];
                }
                ProblemSpec::Ex1(p)
            }
            "ex2" => {
                params.reject_unused(id, &["horizon", "alpha"])?;
                ProblemSpec::Ex2(Example2::new(
                    d,
                    params.horizon.unwrap_or(1.0),
                    params.alpha.unwrap_or(0.4),
                ))
            }
            "ex3" => {
                params.reject_unused(id, &["horizon", "r", "sigma", "x0"])?;
                let mut p = Example3::standard(d);
                if let Some(v) = params.horizon {
                    p.horizon = v;
                }
                if let Some(v) = params.r {
                    p.r = v;
                }
                if let Some(v) = params.sigma {
                    p.sigma = v;
                }
                if let Some(v) = params.x0 {
                    p.s0 = vec![v; d];
                }
                ProblemSpec::Ex3(p)
            }
            "ex4" => {
                params.reject_unused(id, &["horizon", "mu", "sigma", "x0", "rl", "rb", "k1", "k2"])?;
                let mut p = Example4::standard(d);
                let fields = [
                    (&mut p.horizon, params.horizon),
                    (&mut p.mu, params.mu),
                    (&mut p.sigma, params.sigma),
                    (&mut p.s0, params.x0),
                    (&mut p.rl, params.rl),
                    (&mut p.rb, params.rb),
                    (&mut p.k1, params.k1),
                    (&mut p.k2, params.k2),
                ];
                for (slot, value) in fields {
                    if let Some(v) = value {
                        *slot = v;
                    }
                }
                ProblemSpec::Ex4(p)
            }
            other => {
                return Err(Error::config(
                    "problem.id",
                    format!("unknown problem `{other}`, expected one of {PROBLEM_IDS:?}"),
                ))
            }
        };
        if !(spec.horizon().is_finite() && spec.horizon() > 0.0) {
            return Err(Error::config("problem.params.horizon", "must be positive"));
        }
        Ok(spec)
    }

    fn inner(&self) -> &dyn Fbsde {
        match self {
            ProblemSpec::Ex1(p) => p,
            ProblemSpec::Ex2(p) => p,
            ProblemSpec::Ex3(p) => p,
            ProblemSpec::Ex4(p) => p,
        }
    }
}

impl ForwardSde for ProblemSpec {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn x0(&self) -> Vec<f64> {
        self.inner().x0()
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner().drift(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64]) -> Diffusion {
        self.inner().diffusion(t, x)
    }
}

impl Fbsde for ProblemSpec {
    fn id(&self) -> &str {
        self.inner().id()
    }
    fn horizon(&self) -> f64 {
        self.inner().horizon()
    }
    fn driver<'t>(&self, t: f64, x: &Tensor, y: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        self.inner().driver(t, x, y, z)
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        self.inner().terminal(x)
    }
    fn analytic(&self, t: f64, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.inner().analytic(t, x)
    }
    fn reference(&self) -> Option<Reference> {
        self.inner().reference()
    }
}
