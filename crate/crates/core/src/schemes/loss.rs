use crate::ad::{Tensor, Var};
use crate::error::{Error, Result};
use crate::problems::Fbsde;
use crate::sde::PathBatch;

use super::model::ModelOutput;

/// Loss split into its per-index terms.
///
/// `total` is accumulated as `((local[0] + local[1]) + ...) + terminal`.
#[derive(Clone, Debug)]
pub struct LossBreakdown<'t> {
    pub total: Var<'t>,
    pub local: Vec<Var<'t>>,
    pub terminal: Var<'t>,
}

/// Plain values of a [`LossBreakdown`].
#[derive(Clone, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub local: Vec<f64>,
    pub terminal: f64,
}

impl<'t> LossBreakdown<'t> {
    fn assemble(local: Vec<Var<'t>>, terminal: Var<'t>) -> Result<Self> {
        let total = match local.split_first() {
            Some((first, rest)) => rest
                .iter()
                .try_fold(*first, |acc, v| acc.add(*v))?
                .add(terminal)?,
            None => terminal,
        };
        Ok(Self {
            total,
            local,
            terminal,
        })
    }

    pub fn values(&self) -> Result<LossValues> {
        Ok(LossValues {
            total: self.total.item()?,
            local: self.local.iter().map(|v| v.item()).collect::<Result<_>>()?,
            terminal: self.terminal.item()?,
        })
    }
}

/// `weight * sum_m v_m^2` for a `[M, 1]` column.
fn weighted_square_sum(v: Var<'_>, weight: f64) -> Var<'_> {
    v.square().sum().scale(weight)
}

fn row_dot<'t>(z: Var<'t>, dw: &Tensor) -> Result<Var<'t>> {
    z.mul(z.tape().constant(dw.clone()))?.sum_cols()
}

/// `out` must carry `Y` at `y_points` indices and `Z` at the first `N`.
fn check_output(out: &ModelOutput<'_>, paths: &PathBatch, y_points: usize, what: &str) -> Result<()> {
    let n = paths.grid.steps();
    if out.y.len() < y_points || out.z.len() < n {
        return Err(Error::invalid(format!(
            "{what} needs Y at {y_points} and Z at {n} time points, got {} and {}",
            out.y.len(),
            out.z.len()
        )));
    }
    Ok(())
}

/// `f(t_i, X_i, Y_i, Z_i) dt - Z_i . dW_i` for `i = 0..N-1`.
fn increments<'t>(problem: &dyn Fbsde, paths: &PathBatch, out: &ModelOutput<'t>) -> Result<Vec<Var<'t>>> {
    let (n, dt) = (paths.grid.steps(), paths.grid.dt());
    (0..n)
        .map(|i| {
            let x = paths.state_matrix(i);
            let f = problem.driver(paths.grid.time(i), &x, out.y[i], out.z[i])?;
            f.scale(dt).sub(row_dot(out.z[i], &paths.brownian.step_matrix(i))?)
        })
        .collect()
}

/// `Y_{i+1} = Y_i - f_i dt + Z_i dW_i` from `(Y_0, Z_0)` and the per-step
/// `Z_i`. Used by the free-parameter scheme; `z` holds `Z_0..Z_{N-1}`.
pub(crate) fn euler_step<'t>(
    problem: &dyn Fbsde,
    paths: &PathBatch,
    i: usize,
    y: Var<'t>,
    z: Var<'t>,
) -> Result<Var<'t>> {
    let x = paths.state_matrix(i);
    let f = problem.driver(paths.grid.time(i), &x, y, z)?;
    y.sub(f.scale(paths.grid.dt()))?
        .add(row_dot(z, &paths.brownian.step_matrix(i))?)
}

fn terminal_values<'t>(problem: &dyn Fbsde, paths: &PathBatch, like: Var<'t>) -> Var<'t> {
    like.tape()
        .constant(problem.terminal_batch(&paths.state_matrix(paths.grid.steps())))
}

/// Terminal mismatch `weight * sum_m |g(X_N) - Y_N|^2`; `out.y` must hold
/// `Y_0..Y_N`.
pub fn dbsde_loss<'t>(
    problem: &dyn Fbsde,
    paths: &PathBatch,
    out: &ModelOutput<'t>,
    weight: f64,
) -> Result<LossBreakdown<'t>> {
    let n = paths.grid.steps();
    check_output(out, paths, n + 1, "dbsde_loss")?;
    let g = terminal_values(problem, paths, out.y[n]);
    let terminal = weighted_square_sum(g.sub(out.y[n])?, weight);
    LossBreakdown::assemble(Vec::new(), terminal)
}

/// One-step residuals `Y_i - f_i dt + Z_i dW_i - Y_{i+1}` for `i < N` plus
/// the terminal penalty `|Y_N - g(X_N)|^2`, each as `weight * sum_m`.
pub fn ldbsde_loss<'t>(
    problem: &dyn Fbsde,
    paths: &PathBatch,
    out: &ModelOutput<'t>,
    weight: f64,
) -> Result<LossBreakdown<'t>> {
    let n = paths.grid.steps();
    check_output(out, paths, n + 1, "ldbsde_loss")?;
    let inc = increments(problem, paths, out)?;
    let local = (0..n)
        .map(|i| Ok(weighted_square_sum(out.y[i].sub(inc[i])?.sub(out.y[i + 1])?, weight)))
        .collect::<Result<Vec<_>>>()?;
    let g = terminal_values(problem, paths, out.y[n]);
    let terminal = weighted_square_sum(out.y[n].sub(g)?, weight);
    LossBreakdown::assemble(local, terminal)
}

/// Locally additive loss, backward recursion: `Y~_N = g(X_N)`,
/// `Y~_i = Y~_{i+1} + f_i dt - Z_i dW_i`, `L_i = weight * sum_m |Y_i - Y~_i|^2`.
pub fn ladbsde_loss_backward<'t>(
    problem: &dyn Fbsde,
    paths: &PathBatch,
    out: &ModelOutput<'t>,
    weight: f64,
) -> Result<LossBreakdown<'t>> {
    let n = paths.grid.steps();
    check_output(out, paths, n, "ladbsde_loss")?;
    let inc = increments(problem, paths, out)?;
    let mut target = terminal_values(problem, paths, out.y[0]);
    let mut targets = vec![target; n];
    for i in (0..n).rev() {
        target = target.add(inc[i])?;
        targets[i] = target;
    }
    let local = (0..n)
        .map(|i| Ok(weighted_square_sum(out.y[i].sub(targets[i])?, weight)))
        .collect::<Result<Vec<_>>>()?;
    let terminal = out.y[0].tape().scalar(0.0);
    LossBreakdown::assemble(local, terminal)
}

/// Locally additive loss, forward double loop: every `Y~_i` restarts from
/// `g(X_N)` and adds `f_j dt - Z_j dW_j` for `j = i..N-1`. Quadratic in `N`.
pub fn ladbsde_loss_forward<'t>(
    problem: &dyn Fbsde,
    paths: &PathBatch,
    out: &ModelOutput<'t>,
    weight: f64,
) -> Result<LossBreakdown<'t>> {
    let (n, dt) = (paths.grid.steps(), paths.grid.dt());
    check_output(out, paths, n, "ladbsde_loss")?;
    let mut local = Vec::with_capacity(n);
    for i in 0..n {
        let mut target = terminal_values(problem, paths, out.y[0]);
        for j in i..n {
            let x = paths.state_matrix(j);
            let f = problem.driver(paths.grid.time(j), &x, out.y[j], out.z[j])?;
            let noise = row_dot(out.z[j], &paths.brownian.step_matrix(j))?;
            target = target.add(f.scale(dt))?.sub(noise)?;
        }
        local.push(weighted_square_sum(out.y[i].sub(target)?, weight));
    }
    let terminal = out.y[0].tape().scalar(0.0);
    LossBreakdown::assemble(local, terminal)
}
