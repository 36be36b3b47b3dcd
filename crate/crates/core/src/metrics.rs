//! Ensemble error metrics at `t_0` and along the grid, mean loss traces, and
//! their CSV layouts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{analytic_solution, Fbsde, Reference};
use crate::schemes::Prediction;
use crate::sde::PathBatch;

/// Divisor of the standard deviation across runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdConvention {
    /// Divide by the run count.
    #[default]
    Population,
    /// Divide by the run count minus one.
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

/// Mean and standard deviation. Values are summed in sorted order, so the
/// result does not depend on the order of the runs.
pub fn mean_sd(values: &[f64], convention: SdConvention) -> Result<Stat> {
    if values.is_empty() {
        return Err(Error::invalid("statistics of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let ss = dev.iter().sum::<f64>();
    let sd = match convention {
        SdConvention::Population => (ss / n).sqrt(),
        SdConvention::Sample if v.len() > 1 => (ss / (n - 1.0)).sqrt(),
        SdConvention::Sample => 0.0,
    };
    Ok(Stat { mean, sd })
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Learned `(Y_0, Z_0)` of one run; `None` marks a run that did not converge.
pub type RunT0 = Option<(f64, Vec<f64>)>;

/// Errors at `t_0` across an ensemble. `z` is `None` when the reference has
/// no `Z_0`; both are `None` when any run is NC.
#[derive(Clone, Debug, PartialEq)]
pub struct T0Errors {
    pub nc: bool,
    pub y: Option<Stat>,
    pub z: Option<Stat>,
}

impl T0Errors {
    /// `eps_y0 / |Y_0|`.
    pub fn relative_y(&self, reference: &Reference) -> Option<f64> {
        self.y.map(|s| s.mean / reference.y0.abs())
    }

    /// `eps_z0 / mean_j |Z_0^j|`.
    pub fn relative_z(&self, reference: &Reference) -> Option<f64> {
        let z0 = reference.z0.as_ref()?;
        let scale = z0.iter().map(|v| v.abs()).sum::<f64>() / z0.len() as f64;
        self.z.map(|s| s.mean / scale)
    }
}

/// `eps_Y0 = mean_runs |Y_0 - Y_0^run|` and
/// `eps_Z0 = mean_runs (1/d) sum_j |Z_0^j - Z_0^{run,j}|`.
pub fn t0_errors(runs: &[RunT0], reference: &Reference, convention: SdConvention) -> Result<T0Errors> {
    if runs.iter().any(Option::is_none) || runs.is_empty() {
        return Ok(T0Errors {
            nc: !runs.is_empty(),
            y: None,
            z: None,
        });
    }
    let runs: Vec<&(f64, Vec<f64>)> = runs.iter().flatten().collect();
    let ey: Vec<f64> = runs.iter().map(|r| (reference.y0 - r.0).abs()).collect();
    let z = match &reference.z0 {
        Some(z0) => {
            if let Some(r) = runs.iter().find(|r| r.1.len() != z0.len()) {
                return Err(Error::invalid(format!(
                    "run Z_0 has {} components, reference has {}",
                    r.1.len(),
                    z0.len()
                )));
            }
            let ez: Vec<f64> = runs.iter().map(|r| mean_abs_diff(z0, &r.1)).collect();
            Some(mean_sd(&ez, convention)?)
        }
        None => None,
    };
    Ok(T0Errors {
        nc: false,
        y: Some(mean_sd(&ey, convention)?),
        z,
    })
}

/// Analytic `(Y_i, Z_i)` on every path of `paths` for `i < points`.
pub fn analytic_prediction(problem: &dyn Fbsde, paths: &PathBatch, points: usize) -> Result<Prediction> {
    let (m, d) = (paths.samples(), paths.dim());
    let mut y = Vec::with_capacity(points * m);
    let mut z = Vec::with_capacity(points * m * d);
    for i in 0..points {
        let t = paths.grid.time(i);
        for s in 0..m {
            let (yv, zv) = analytic_solution(problem, t, paths.state(s, i))?;
            y.push(yv);
            z.extend_from_slice(&zv);
        }
    }
    Prediction::new(points, m, d, y, z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionRow {
    pub i: usize,
    pub t: f64,
    pub y: Stat,
    pub z: Stat,
}

/// Per-index errors `eps_Yi = mean_runs E|Y_i - Y_i^run|` (and the
/// component-averaged analogue for Z), the expectation taken over the test
/// paths behind `exact`. `times[i]` is `t_i`.
pub fn regression_errors(
    runs: &[Prediction],
    exact: &Prediction,
    times: &[f64],
    convention: SdConvention,
) -> Result<Vec<RegressionRow>> {
    if runs.is_empty() {
        return Err(Error::invalid("regression errors of an empty ensemble"));
    }
    let (points, m, d) = (exact.points, exact.samples, exact.dim);
    if times.len() < points {
        return Err(Error::invalid(format!("{} time points for {points} indices", times.len())));
    }
    if let Some(r) = runs.iter().find(|r| (r.points, r.samples, r.dim) != (points, m, d)) {
        return Err(Error::invalid(format!(
            "run prediction is {} x {} x {}, reference is {points} x {m} x {d}",
            r.points, r.samples, r.dim
        )));
    }
    (0..points)
        .map(|i| {
            let ey: Vec<f64> = runs
                .iter()
                .map(|r| (0..m).map(|s| (r.y(i, s) - exact.y(i, s)).abs()).sum::<f64>() / m as f64)
                .collect();
            let ez: Vec<f64> = runs
                .iter()
                .map(|r| (0..m).map(|s| mean_abs_diff(r.z(i, s), exact.z(i, s))).sum::<f64>() / m as f64)
                .collect();
            Ok(RegressionRow {
                i,
                t: times[i],
                y: mean_sd(&ey, convention)?,
                z: mean_sd(&ez, convention)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Pointwise mean and spread of `(step, loss)` traces across runs.
pub fn mean_loss(traces: &[Vec<(usize, f64)>], convention: SdConvention) -> Result<Vec<LossRow>> {
    let Some(first) = traces.first() else {
        return Err(Error::invalid("mean loss of an empty ensemble"));
    };
    for (r, t) in traces.iter().enumerate() {
        if t.len() != first.len() || t.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(Error::invalid(format!("loss trace of run {r} is not aligned with run 0")));
        }
    }
    first
        .iter()
        .enumerate()
        .map(|(k, &(step, _))| {
            let v: Vec<f64> = traces.iter().map(|t| t[k].1).collect();
            let s = mean_sd(&v, convention)?;
            Ok(LossRow {
                step,
                mean: s.mean,
                sd: s.sd,
            })
        })
        .collect()
}

/// One line of `t0_errors.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct T0Row {
    pub scheme: String,
    pub problem: String,
    pub d: usize,
    pub n: usize,
    pub errors: T0Errors,
}

fn cell(v: Option<f64>, nc: bool) -> String {
    match (v, nc) {
        (_, true) => "NC".to_string(),
        (Some(x), false) => x.to_string(),
        (None, false) => "NA".to_string(),
    }
}

/// `scheme, problem, d, N, eps_y0, sd_y0, eps_z0, sd_z0, status`. NC cells
/// read `NC`; a missing Z reference reads `NA`.
pub fn write_t0_csv(w: impl Write, rows: &[T0Row]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "problem", "d", "N", "eps_y0", "sd_y0", "eps_z0", "sd_z0", "status"])?;
    for r in rows {
        let e = &r.errors;
        out.write_record([
            r.scheme.clone(),
            r.problem.clone(),
            r.d.to_string(),
            r.n.to_string(),
            cell(e.y.map(|s| s.mean), e.nc),
            cell(e.y.map(|s| s.sd), e.nc),
            cell(e.z.map(|s| s.mean), e.nc),
            cell(e.z.map(|s| s.sd), e.nc),
            if e.nc { "NC" } else { "ok" }.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `scheme, i, t_i, eps_y, sd_y, eps_z, sd_z`.
pub fn write_regression_csv(w: impl Write, scheme: &str, rows: &[RegressionRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "i", "t_i", "eps_y", "sd_y", "eps_z", "sd_z"])?;
    for r in rows {
        out.write_record([
            scheme.to_string(),
            r.i.to_string(),
            r.t.to_string(),
            r.y.mean.to_string(),
            r.y.sd.to_string(),
            r.z.mean.to_string(),
            r.z.sd.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `step, mean, sd`.
pub fn write_loss_csv(w: impl Write, rows: &[LossRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "mean", "sd"])?;
    for r in rows {
        out.write_record([r.step.to_string(), r.mean.to_string(), r.sd.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Example3;
    use crate::sde::{euler_forward, BrownianBatch, TimeGrid};

    fn reference(y0: f64, z0: Option<Vec<f64>>) -> Reference {
        Reference {
            y0,
            z0,
            provenance: "test".into(),
        }
    }

    #[test]
    fn exact_runs_have_zero_error() {
        let r = reference(1.5, Some(vec![0.1, 0.2]));
        let e = t0_errors(&vec![Some((1.5, vec![0.1, 0.2])); 3], &r, SdConvention::Population).unwrap();
        assert_eq!(e.y, Some(Stat { mean: 0.0, sd: 0.0 }));
        assert_eq!(e.z, Some(Stat { mean: 0.0, sd: 0.0 }));
    }

    #[test]
    fn two_run_hand_values() {
        let r = reference(1.0, Some(vec![0.0, 0.0]));
        let runs = [Some((1.1, vec![0.1, -0.3])), Some((0.7, vec![0.0, 0.0]))];
        let e = t0_errors(&runs, &r, SdConvention::Population).unwrap();
        let y = e.y.unwrap();
        assert!((y.mean - 0.2).abs() < 1e-15 && (y.sd - 0.1).abs() < 1e-15);
        let z = e.z.unwrap();
        assert!((z.mean - 0.1).abs() < 1e-15);
        let s = t0_errors(&runs, &r, SdConvention::Sample).unwrap().y.unwrap();
        assert!((s.sd - 0.1 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_run_z_mismatch() {
        let r = reference(0.0, Some(vec![1.0, 1.0]));
        let e = t0_errors(&[Some((0.0, vec![1.1, 0.7]))], &r, SdConvention::Population).unwrap();
        assert!((e.z.unwrap().mean - 0.2).abs() < 1e-15);
        assert!((e.relative_z(&r).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn nc_and_missing_z() {
        let r = reference(21.2988, None);
        let e = t0_errors(&[Some((21.0, vec![0.0])), None], &r, SdConvention::Population).unwrap();
        assert!(e.nc && e.y.is_none());
        let e = t0_errors(&[Some((21.0, vec![0.0]))], &r, SdConvention::Population).unwrap();
        assert!(!e.nc && e.z.is_none());
        let mut buf = Vec::new();
        let row = T0Row {
            scheme: "dbsde".into(),
            problem: "ex4".into(),
            d: 100,
            n: 120,
            errors: e,
        };
        write_t0_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",NA,NA,ok"), "{text}");
    }

    fn prediction(points: usize, samples: usize, dim: usize, f: impl Fn(usize, usize) -> f64) -> Prediction {
        let y = (0..points).flat_map(|i| (0..samples).map(move |m| (i, m))).map(|(i, m)| f(i, m)).collect();
        Prediction::new(points, samples, dim, y, vec![0.5; points * samples * dim]).unwrap()
    }

    #[test]
    fn constant_offset_regression() {
        let exact = prediction(3, 4, 2, |i, m| (i * m) as f64);
        let off = prediction(3, 4, 2, |i, m| (i * m) as f64 + 0.25);
        let rows = regression_errors(&[off.clone(), off], &exact, &[0.0, 0.5, 1.0], SdConvention::Population).unwrap();
        for r in &rows {
            assert_eq!(r.y.mean, 0.25);
            assert_eq!(r.z.mean, 0.0);
        }
    }

    #[test]
    fn two_sample_hand_regression() {
        let exact = Prediction::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let run = Prediction::new(2, 2, 1, vec![1.5, 1.5, 3.0, 5.0], vec![0.2, -0.2, 1.0, 0.0]).unwrap();
        let rows = regression_errors(&[run], &exact, &[0.0, 0.5], SdConvention::Population).unwrap();
        assert_eq!((rows[0].y.mean, rows[1].y.mean), (0.5, 0.5));
        assert!((rows[0].z.mean - 0.2).abs() < 1e-15);
        assert_eq!(rows[1].z.mean, 0.5);
    }

    #[test]
    fn analytic_stub_has_no_regression_error() {
        let p = Example3::standard(2);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let paths = euler_forward(&p, &grid, &BrownianBatch::sample(0, 0, 8, &grid, 2).unwrap()).unwrap();
        let exact = analytic_prediction(&p, &paths, 4).unwrap();
        let rows = regression_errors(&[exact.clone()], &exact, &grid.times(), SdConvention::Population).unwrap();
        assert!(rows.iter().all(|r| r.y.mean < 1e-12 && r.z.mean < 1e-12));
    }

    #[test]
    fn loss_traces() {
        let a = vec![(0, 1.0), (100, 2.0)];
        let b = vec![(0, 3.0), (100, 2.0)];
        let rows = mean_loss(&[a.clone(), b], SdConvention::Population).unwrap();
        assert_eq!(rows[0], LossRow { step: 0, mean: 2.0, sd: 1.0 });
        assert_eq!(rows[1].sd, 0.0);
        assert!(mean_loss(&[a, vec![(0, 1.0), (200, 2.0)]], SdConvention::Population).is_err());
    }

    #[test]
    fn ten_synthetic_traces() {
        let traces: Vec<Vec<(usize, f64)>> = (0..10).map(|r| (0..5).map(|k| (k * 100, (r + k) as f64)).collect()).collect();
        let rows = mean_loss(&traces, SdConvention::Population).unwrap();
        for (k, row) in rows.iter().enumerate() {
            assert!((row.mean - (4.5 + k as f64)).abs() < 1e-12);
            assert!((row.sd - 8.25f64.sqrt()).abs() < 1e-12);
        }
    }
}
