use crate::ad::{Tensor, Var};
use crate::error::Result;
use crate::sde::{Diffusion, ForwardSde};

use super::{Fbsde, Reference};

fn row_sums(x: &Tensor) -> Vec<f64> {
    let d = x.shape()[1];
    x.data().chunks(d).map(|r| r.iter().sum()).collect()
}

fn column<'t>(y: Var<'t>, values: Vec<f64>) -> Var<'t> {
    y.tape().constant(Tensor::column(values))
}

/// Additive dynamics `dX = mu dt + sigma dW` with a trigonometric solution
/// `Y = exp((T-t)/2) cos(sum x)`.
///
/// The driver is written for general `(d, mu, sigma)`:
/// `f = ((1/2 + d sigma^2 / 2) cos(xs) + d mu sin(xs)) e^{(T-t)/2}
///      - (sin(xs) cos(xs) e^{T-t})^2 / 2 + (y zs)^2 / (2 d^2 sigma^2)`
/// which is the published driver when `d = 1, mu = 0.2, sigma = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example1 {
    pub d: usize,
    pub horizon: f64,
    pub mu: f64,
    pub sigma: f64,
    pub x0: Vec<f64>,
}

impl Example1 {
    pub fn new(d: usize, horizon: f64, mu: f64, sigma: f64, x0: Vec<f64>) -> Self {
        Self {
            d,
            horizon,
            mu,
            sigma,
            x0,
        }
    }

    /// `d = 1`: `T = 2, mu = 0.2, sigma = 1, x0 = 1`; otherwise
    /// `T = 1, mu = 0.2/d, sigma = 1/sqrt(d), x0 = 1`.
    pub fn standard(d: usize) -> Self {
        if d == 1 {
            Self::new(1, 2.0, 0.2, 1.0, vec![1.0])
        } else {
            let df = d as f64;
            Self::new(d, 1.0, 0.2 / df, 1.0 / df.sqrt(), vec![1.0; d])
        }
    }
}

impl ForwardSde for Example1 {
    fn dim(&self) -> usize {
        self.d
    }
    fn x0(&self) -> Vec<f64> {
        self.x0.clone()
    }
    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(self.mu);
    }
    fn diffusion(&self, _t: f64, _x: &[f64]) -> Diffusion {
        Diffusion::Scalar(self.sigma)
    }
}

impl Fbsde for Example1 {
    fn id(&self) -> &str {
        "ex1"
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn driver<'t>(&self, t: f64, x: &Tensor, y: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let d = self.d as f64;
        let e = ((self.horizon - t) / 2.0).exp();
        let known: Vec<f64> = row_sums(x)
            .into_iter()
            .map(|s| {
                let (sn, cs) = s.sin_cos();
                ((0.5 + 0.5 * d * self.sigma * self.sigma) * cs + d * self.mu * sn) * e
                    - 0.5 * (sn * cs * e * e).powi(2)
            })
            .collect();
        let coupling = y
            .mul(z.sum_cols()?)?
            .square()
            .scale(1.0 / (2.0 * d * d * self.sigma * self.sigma));
        column(y, known).add(coupling)
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        x.iter().sum::<f64>().cos()
    }
    fn analytic(&self, t: f64, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let e = ((self.horizon - t) / 2.0).exp();
        let (sn, cs) = x.iter().sum::<f64>().sin_cos();
        Some((e * cs, vec![-self.sigma * e * sn; self.d]))
    }
}

/// `X = W` with `Y = sin((T - t + |w|^2)^alpha)`.
///
/// With `s = T - t + |w|^2` and `h(s) = sin(s^alpha)`:
/// `(d_t + Lap/2) psi = (d - 1) h'(s) + 2 |w|^2 h''(s)`,
/// `|grad psi|^2 = 4 h'(s)^2 |w|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example2 {
    pub d: usize,
    pub horizon: f64,
    pub alpha: f64,
}

impl Example2 {
    pub fn new(d: usize, horizon: f64, alpha: f64) -> Self {
        Self { d, horizon, alpha }
    }

    fn h1(&self, s: f64) -> f64 {
        let a = self.alpha;
        a * s.powf(a - 1.0) * s.powf(a).cos()
    }

    fn h2(&self, s: f64) -> f64 {
        let a = self.alpha;
        let sa = s.powf(a);
        a * (a - 1.0) * s.powf(a - 2.0) * sa.cos() - a * a * s.powf(2.0 * a - 2.0) * sa.sin()
    }
}

impl ForwardSde for Example2 {
    fn dim(&self) -> usize {
        self.d
    }
    fn x0(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }
    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion(&self, _t: f64, _x: &[f64]) -> Diffusion {
        Diffusion::Scalar(1.0)
    }
}

impl Fbsde for Example2 {
    fn id(&self) -> &str {
        "ex2"
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn driver<'t>(&self, t: f64, x: &Tensor, y: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let d = self.d as f64;
        let known: Vec<f64> = x
            .data()
            .chunks(self.d)
            .map(|w| {
                let w2: f64 = w.iter().map(|v| v * v).sum();
                let s = self.horizon - t + w2;
                let h1 = self.h1(s);
                let generator = (d - 1.0) * h1 + 2.0 * w2 * self.h2(s);
                -4.0 * h1 * h1 * w2 - generator
            })
            .collect();
        z.square().sum_cols()?.add(column(y, known))
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        let w2: f64 = x.iter().map(|v| v * v).sum();
        w2.powf(self.alpha).sin()
    }
    fn analytic(&self, t: f64, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let w2: f64 = x.iter().map(|v| v * v).sum();
        let s = self.horizon - t + w2;
        let h1 = self.h1(s);
        Some((s.powf(self.alpha).sin(), x.iter().map(|w| 2.0 * w * h1).collect()))
    }
}

/// Black-Scholes-Barenblatt: `dS = sigma S dW`,
/// `f = -r (y - sum_i z_i / sigma)`, `g = |s|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example3 {
    pub d: usize,
    pub horizon: f64,
    pub r: f64,
    pub sigma: f64,
    pub s0: Vec<f64>,
}

impl Example3 {
    pub fn new(d: usize, horizon: f64, r: f64, sigma: f64, s0: Vec<f64>) -> Self {
        Self {
            d,
            horizon,
            r,
            sigma,
            s0,
        }
    }

    /// `T = 1, r = 0.05, sigma = 0.4, s0 = (1, 0.5, 1, 0.5, ...)`.
    pub fn standard(d: usize) -> Self {
        Self::new(d, 1.0, 0.05, 0.4, alternating(d))
    }
}

pub(crate) fn alternating(d: usize) -> Vec<f64> {
    (0..d).map(|i| if i % 2 == 0 { 1.0 } else { 0.5 }).collect()
}

impl ForwardSde for Example3 {
    fn dim(&self) -> usize {
        self.d
    }
    fn x0(&self) -> Vec<f64> {
        self.s0.clone()
    }
    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion(&self, _t: f64, x: &[f64]) -> Diffusion {
        Diffusion::Diagonal(x.iter().map(|s| self.sigma * s).collect())
    }
}

impl Fbsde for Example3 {
    fn id(&self) -> &str {
        "ex3"
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn driver<'t>(&self, _t: f64, _x: &Tensor, y: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        y.sub(z.sum_cols()?.scale(1.0 / self.sigma))
            .map(|v| v.scale(-self.r))
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        x.iter().map(|s| s * s).sum()
    }
    fn analytic(&self, t: f64, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let e = ((self.r + self.sigma * self.sigma) * (self.horizon - t)).exp();
        Some((
            e * self.terminal(x),
            x.iter().map(|s| 2.0 * self.sigma * e * s * s).collect(),
        ))
    }
}

/// Pricing with different lending and borrowing rates under a
/// componentwise GBM; payoff is a call spread on the maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct Example4 {
    pub d: usize,
    pub horizon: f64,
    pub mu: f64,
    pub sigma: f64,
    pub rl: f64,
    pub rb: f64,
    pub k1: f64,
    pub k2: f64,
    pub s0: f64,
}

impl Example4 {
    pub const REFERENCE_Y0: f64 = 21.2988;
    pub const REFERENCE_PROVENANCE: &'static str = "multilevel Monte Carlo with 7 Picard iterations";

    /// `T = 0.5, mu = 0.06, sigma = 0.2, Rl = 0.04, Rb = 0.06, K1 = 120,
    /// K2 = 150, s0 = 100`.
    pub fn standard(d: usize) -> Self {
        Self {
            d,
            horizon: 0.5,
            mu: 0.06,
            sigma: 0.2,
            rl: 0.04,
            rb: 0.06,
            k1: 120.0,
            k2: 150.0,
            s0: 100.0,
        }
    }
}

impl ForwardSde for Example4 {
    fn dim(&self) -> usize {
        self.d
    }
    fn x0(&self) -> Vec<f64> {
        vec![self.s0; self.d]
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, s)| *o = self.mu * s);
    }
    fn diffusion(&self, _t: f64, x: &[f64]) -> Diffusion {
        Diffusion::Diagonal(x.iter().map(|s| self.sigma * s).collect())
    }
}

impl Fbsde for Example4 {
    fn id(&self) -> &str {
        "ex4"
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn driver<'t>(&self, _t: f64, _x: &Tensor, y: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let zs = z.sum_cols()?;
        let spread = zs.scale(1.0 / self.sigma).sub(y)?.relu().scale(self.rb - self.rl);
        y.scale(-self.rl)
            .sub(zs.scale((self.mu - self.rl) / self.sigma))?
            .add(spread)
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (top - self.k1).max(0.0) - 2.0 * (top - self.k2).max(0.0)
    }
    fn analytic(&self, _t: f64, _x: &[f64]) -> Option<(f64, Vec<f64>)> {
        None
    }
    fn reference(&self) -> Option<Reference> {
        (*self == Self::standard(100)).then(|| Reference {
            y0: Self::REFERENCE_Y0,
            z0: None,
            provenance: Self::REFERENCE_PROVENANCE.into(),
        })
    }
}
