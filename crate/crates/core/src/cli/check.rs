//! Fast self-checks behind the `check` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::{Activation, Tape, Tensor};
use crate::nets::{param_count, BnMode, CountScheme, InitDist, MlpConfig};
use crate::problems::{analytic_solution, Example1, Example2, Example3};
use crate::sde::ForwardSde;
use crate::schemes::{LossImpl, ModelState, SchemeConfig, SchemeKind, Solver};
use crate::sde::{euler_forward, log_log_slope, strong_error, BrownianBatch, Gbm, TimeGrid};
use crate::train::{plateau_update, step_schedule, DecayPolicy, PlateauDecision};

pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, expected {want} (tol {tol})"))
}

fn analytic_values() -> Result<(), String> {
    let e = |r: crate::Result<(f64, Vec<f64>)>| r.map_err(|e| e.to_string());
    let p = Example1::standard(1);
    let (y, z) = e(analytic_solution(&p, 0.0, &p.x0))?;
    close(y, 1.4687, 5e-5, "ex1 d=1 Y0")?;
    close(z[0], -2.2874, 5e-5, "ex1 d=1 Z0")?;
    let p = Example2::new(100, 1.0, 0.4);
    let (y, _) = e(analytic_solution(&p, 0.0, &p.x0()))?;
    close(y, 0.8415, 5e-5, "ex2 Y0")?;
    let p = Example3::standard(2);
    let (y, z) = e(analytic_solution(&p, 0.0, &p.s0))?;
    close(y, 1.5421, 5e-5, "ex3 d=2 Y0")?;
    close(z[0], 0.9869, 5e-5, "ex3 Z0[0]")?;
    close(z[1], 0.2467, 5e-5, "ex3 Z0[1]")
}

fn counts() -> Result<(), String> {
    for d in [1u64, 2, 10, 50, 100] {
        let a = param_count(CountScheme::LdbsdeOriginal, d, 1).map_err(|e| e.to_string())?;
        let b = param_count(CountScheme::Ladbsde, d, 1).map_err(|e| e.to_string())?;
        ensure(a == 256 * d + 198_145, || format!("original count at d={d}: {a}"))?;
        ensure(b == 2 * d * d + 56 * d + 361, || format!("compact count at d={d}: {b}"))?;
    }
    let big = param_count(CountScheme::LdbsdeOriginal, 100, 1).map_err(|e| e.to_string())?;
    let small = param_count(CountScheme::Ladbsde, 100, 1).map_err(|e| e.to_string())?;
    let ratio = big as f64 / small as f64;
    ensure((8.5..=9.0).contains(&ratio), || format!("ratio {ratio}"))
}

fn mlp_gradients() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..10 {
        let act = [Activation::Tanh, Activation::Sin][case % 2];
        let cfg = MlpConfig {
            input_dim: rng.random_range(1..=4),
            output_dim: 1,
            hidden_layers: rng.random_range(1..=3),
            hidden_width: rng.random_range(1..=8),
            activation: act,
            batch_norm: false,
        };
        let params = cfg.init_params(case as u64, InitDist::Normal).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..cfg.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |theta: &[f64]| -> f64 {
            let mut p = params.clone();
            p.theta_mut().copy_from_slice(theta);
            let tape = Tape::new();
            let v = p.to_vars(&tape);
            let out = cfg.forward(&v, tape.constant(Tensor::row(x.clone()))).expect("valid");
            out.item().expect("scalar")
        };
        let tape = Tape::new();
        let vars = params.to_vars(&tape);
        let out = cfg.forward(&vars, tape.constant(Tensor::row(x.clone()))).map_err(|e| e.to_string())?;
        let g = tape.backward(out, &vars).map_err(|e| e.to_string())?;
        let grad = params.flatten_grads(&vars, &g);
        let h = 1e-6;
        for k in 0..params.len() {
            let (mut a, mut b) = (params.theta().to_vec(), params.theta().to_vec());
            a[k] += h;
            b[k] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let err = (grad[k] - fd).abs() / fd.abs().max(1e-3);
            ensure(err < 1e-5, || format!("case {case} parameter {k}: {} vs {fd}", grad[k]))?;
        }
    }
    Ok(())
}

fn loss_forms_agree() -> Result<(), String> {
    let p = Example3::standard(2);
    let grid = TimeGrid::new(1.0, 12).map_err(|e| e.to_string())?;
    let bm = BrownianBatch::sample(5, 0, 6, &grid, 2).map_err(|e| e.to_string())?;
    let paths = euler_forward(&p, &grid, &bm).map_err(|e| e.to_string())?;
    let mut values = Vec::new();
    for imp in [LossImpl::Backward, LossImpl::Forward] {
        let mut cfg = SchemeConfig::new(SchemeKind::Ladbsde);
        cfg.loss = imp;
        let s = Solver::new(&cfg, 2, 12).map_err(|e| e.to_string())?;
        let params = s.init_params(3);
        let tape = Tape::new();
        let vars = params.to_vars(&tape);
        let l = s
            .loss(&tape, &vars, &p, &paths, 1.0 / 6.0, &mut ModelState::default(), BnMode::Train)
            .map_err(|e| e.to_string())?;
        values.push(l.total.item().map_err(|e| e.to_string())?);
    }
    ensure((values[0] - values[1]).abs() <= 1e-10 * values[0].abs(), || format!("{values:?}"))
}

fn euler_order() -> Result<(), String> {
    let g = Gbm {
        mu: 0.05,
        sigma: 0.4,
        x0: vec![1.0],
    };
    let pts = strong_error(&g, 1.0, &[8, 16, 32, 64], 20_000, 7).map_err(|e| e.to_string())?;
    let slope = log_log_slope(&pts);
    ensure((0.4..=0.6).contains(&slope), || format!("slope {slope}"))
}

fn policies() -> Result<(), String> {
    let p = DecayPolicy::default();
    let mut s = p.start();
    let trace: Vec<PlateauDecision> = [1.0, 1.0, 0.5].iter().map(|&v| plateau_update(&p, &mut s, &[v])).collect();
    ensure(
        trace == [PlateauDecision::Hold, PlateauDecision::Halve, PlateauDecision::Hold],
        || format!("{trace:?}"),
    )?;
    let rates: Vec<f64> = [1, 20_001, 50_001, 80_001].iter().map(|&k| step_schedule(k).unwrap_or(f64::NAN)).collect();
    let want = [1e-3, 1e-4, 1e-5, 1e-6];
    ensure(rates.iter().zip(want).all(|(r, w)| (r - w).abs() <= 1e-12 * w), || format!("{rates:?}"))
}

/// Runs every check; none takes more than a few seconds.
pub fn run_checks() -> Vec<CheckResult> {
    let checks: [(&'static str, fn() -> Result<(), String>); 6] = [
        ("analytic reference values", analytic_values),
        ("parameter-count formulas", counts),
        ("reverse-mode gradients vs finite differences", mlp_gradients),
        ("forward and backward locally additive losses", loss_forms_agree),
        ("Euler-Maruyama strong order", euler_order),
        ("learning-rate policies", policies),
    ];
    checks
        .into_iter()
        .map(|(name, f)| CheckResult { name, outcome: f() })
        .collect()
}
