use deep_bsde::ad::{Tape, Tensor};
use deep_bsde::metrics::{analytic_prediction, mean_sd, regression_errors, t0_errors, RunT0, SdConvention};
use deep_bsde::problems::{Fbsde, ProblemParams, ProblemSpec, Reference};
use deep_bsde::schemes::Prediction;
use deep_bsde::sde::{BrownianBatch, TimeGrid};
use deep_bsde::train::{adam_step, plateau_update, simulate, AdamState, DecayPolicy, PlateauDecision};
use proptest::prelude::*;

fn small() -> impl Strategy<Value = f64> {
    -2.0f64..2.0
}

/// `sum(tanh(x) * sin(a x) + (x - c)^2)` with its hand-written derivative.
fn composite(x: &[f64], a: f64, c: f64) -> (f64, Vec<f64>) {
    let f = x.iter().map(|v| v.tanh() * (a * v).sin() + (v - c).powi(2)).sum();
    let g = x
        .iter()
        .map(|v| (1.0 - v.tanh().powi(2)) * (a * v).sin() + v.tanh() * a * (a * v).cos() + 2.0 * (v - c))
        .collect();
    (f, g)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composite_gradient_matches_closed_form(x in prop::collection::vec(small(), 1..12), a in small(), c in small()) {
        let tape = Tape::new();
        let v = tape.leaf(Tensor::column(x.clone()));
        let out = v.tanh().mul(v.scale(a).sin()).unwrap().add(v.add_scalar(-c).square()).unwrap().sum();
        let (f, g) = composite(&x, a, c);
        prop_assert!((out.item().unwrap() - f).abs() <= 1e-12 * f.abs().max(1.0));
        let got = tape.grad_wrt_input(out, v).unwrap();
        for (p, q) in got.data().iter().zip(&g) {
            prop_assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
    }

    #[test]
    fn gradients_are_linear(x in prop::collection::vec(small(), 1..10), a in small(), b in small()) {
        let grad = |wa: f64, wb: f64| {
            let tape = Tape::new();
            let v = tape.leaf(Tensor::column(x.clone()));
            let out = v.sin().scale(wa).add(v.cos().mul(v).unwrap().scale(wb)).unwrap().sum();
            tape.grad_wrt_input(out, v).unwrap().into_data()
        };
        let (ga, gb, gab) = (grad(1.0, 0.0), grad(0.0, 1.0), grad(a, b));
        for k in 0..x.len() {
            let want = a * ga[k] + b * gb[k];
            prop_assert!((gab[k] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn matmul_gradient_is_ones_times_transpose(
        (m, k, n, a, b) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(m, k, n)| {
            (Just(m), Just(k), Just(n), prop::collection::vec(small(), m * k), prop::collection::vec(small(), k * n))
        })
    ) {
        let tape = Tape::new();
        let va = tape.leaf(Tensor::matrix(m, k, a).unwrap());
        let vb = tape.constant(Tensor::matrix(k, n, b.clone()).unwrap());
        let out = va.matmul(vb).unwrap().sum();
        let g = tape.grad_wrt_input(out, va).unwrap();
        for r in 0..m {
            for c in 0..k {
                let want: f64 = b[c * n..(c + 1) * n].iter().sum();
                prop_assert!((g.get2(r, c) - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn plateau_never_raises_gamma_or_undershoots_the_floor(
        means in prop::collection::vec(prop_oneof![0.0f64..2.0, Just(f64::NAN), Just(f64::INFINITY)], 1..40),
        patience in 1usize..4,
    ) {
        let policy = DecayPolicy { gamma0: 1e-3, gamma_min: 1e-5, patience, ..DecayPolicy::default() };
        let mut state = policy.start();
        for (k, &m) in means.iter().enumerate() {
            let before = state.gamma;
            let at_min = before <= policy.gamma_min;
            let d = plateau_update(&policy, &mut state, &[m]);
            prop_assert!(state.gamma <= before);
            prop_assert!(state.gamma >= policy.gamma_min);
            match d {
                PlateauDecision::Halve => prop_assert!(!at_min && k > 0),
                PlateauDecision::Stop => {
                    prop_assert!(at_min && state.stagnant_at_min >= patience);
                    break;
                }
                PlateauDecision::Hold => prop_assert!(state.stagnant_at_min < patience),
            }
        }
    }

    #[test]
    fn mean_sd_ignores_order(mut v in prop::collection::vec(-1e3f64..1e3, 1..30), seed in any::<u64>()) {
        let a = mean_sd(&v, SdConvention::Population).unwrap();
        let s = mean_sd(&v, SdConvention::Sample).unwrap();
        let n = v.len();
        let mut rng = seed;
        for i in (1..n).rev() {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            v.swap(i, (rng >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(mean_sd(&v, SdConvention::Population).unwrap(), a);
        prop_assert_eq!(mean_sd(&v, SdConvention::Sample).unwrap(), s);
        prop_assert!(s.sd >= a.sd);
    }

    #[test]
    fn t0_errors_ignore_run_order_and_reduce_to_mean_abs_at_d1(
        runs in prop::collection::vec((small(), small()), 1..8),
        y0 in small(),
        z0 in small(),
    ) {
        let reference = Reference { y0, z0: Some(vec![z0]), provenance: String::new() };
        let t0: Vec<RunT0> = runs.iter().map(|&(y, z)| Some((y, vec![z]))).collect();
        let mut rev = t0.clone();
        rev.reverse();
        let e = t0_errors(&t0, &reference, SdConvention::Population).unwrap();
        prop_assert_eq!(&e, &t0_errors(&rev, &reference, SdConvention::Population).unwrap());
        let plain = runs.iter().map(|r| (r.1 - z0).abs()).sum::<f64>() / runs.len() as f64;
        prop_assert!((e.z.unwrap().mean - plain).abs() <= 1e-12);
        let mut with_nc = t0.clone();
        with_nc.push(None);
        prop_assert!(t0_errors(&with_nc, &reference, SdConvention::Population).unwrap().nc);
    }

    #[test]
    fn regression_at_t0_equals_the_t0_error(shifts in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 1..4), d in 1usize..4) {
        let p = ProblemSpec::build("ex3", d, &ProblemParams::default()).unwrap();
        let grid = TimeGrid::new(p.horizon(), 3).unwrap();
        let test = simulate(&p, &grid, 0, 9, 5).unwrap();
        let exact = analytic_prediction(&p, &test, 3).unwrap();
        let shifted: Vec<Prediction> = shifts
            .iter()
            .map(|&(dy, dz)| {
                let y = (0..3 * 5).map(|k| exact.y(k / 5, k % 5) + dy).collect();
                let z = (0..3 * 5).flat_map(|k| exact.z(k / 5, k % 5).iter().map(move |v| v + dz)).collect();
                Prediction::new(3, 5, d, y, z).unwrap()
            })
            .collect();
        let rows = regression_errors(&shifted, &exact, &grid.times(), SdConvention::Population).unwrap();
        let reference = p.reference().unwrap();
        let t0: Vec<RunT0> = shifted.iter().map(|s| Some((s.y(0, 0), s.z(0, 0).to_vec()))).collect();
        let e = t0_errors(&t0, &reference, SdConvention::Population).unwrap();
        prop_assert!((rows[0].y.mean - e.y.unwrap().mean).abs() <= 1e-12);
        prop_assert!((rows[0].z.mean - e.z.unwrap().mean).abs() <= 1e-12);
    }

    #[test]
    fn coarsening_preserves_path_sums(seed in any::<u64>(), factor in prop_oneof![Just(1usize), Just(2), Just(4), Just(8)]) {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let fine = BrownianBatch::sample(seed, 3, 4, &grid, 2).unwrap();
        let coarse = fine.coarsen(factor).unwrap();
        prop_assert_eq!(coarse.steps(), 16 / factor);
        for m in 0..4 {
            for j in 0..2 {
                let a: f64 = fine.path(m).iter().skip(j).step_by(2).sum();
                let b: f64 = coarse.path(m).iter().skip(j).step_by(2).sum();
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
        let again = BrownianBatch::sample(seed, 3, 4, &grid, 2).unwrap();
        prop_assert_eq!(again.data(), fine.data());
    }

    #[test]
    fn adam_moves_each_parameter_by_at_most_about_the_rate(
        g in prop::collection::vec(-1e3f64..1e3, 1..10),
        steps in 1usize..20,
    ) {
        let mut theta = vec![0.0; g.len()];
        let mut state = AdamState::new(g.len());
        let lr = 1e-2;
        for _ in 0..steps {
            let before = theta.clone();
            adam_step(&mut theta, &g, &mut state, lr).unwrap();
            for (a, b) in theta.iter().zip(&before) {
                prop_assert!((a - b).abs() <= lr * (1.0 + 1e-9));
            }
        }
    }
}
