use super::*;
use crate::ad::Tensor;
use crate::problems::{Example1, Example3};
use crate::sde::{euler_forward, BrownianBatch, Diffusion, ForwardSde, TimeGrid};

/// `f = c_f`, `g = c_g`, `dX = sigma dW` from the origin.
struct Toy {
    d: usize,
    horizon: f64,
    f: f64,
    g: f64,
}

impl ForwardSde for Toy {
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

impl Fbsde for Toy {
    fn id(&self) -> &str {
        "toy"
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn driver<'t>(&self, _t: f64, x: &Tensor, y: Var<'t>, _z: Var<'t>) -> Result<Var<'t>> {
        Ok(y.tape().constant(Tensor::filled(&[x.shape()[0], 1], self.f)))
    }
    fn terminal(&self, _x: &[f64]) -> f64 {
        self.g
    }
}

fn toy_paths(p: &Toy, n: usize, m: usize, dw: Option<Vec<f64>>) -> PathBatch {
    let grid = TimeGrid::new(p.horizon, n).unwrap();
    let bm = match dw {
        Some(dw) => BrownianBatch::from_increments(m, &grid, p.d, dw).unwrap(),
        None => BrownianBatch::sample(3, 0, m, &grid, p.d).unwrap(),
    };
    euler_forward(p, &grid, &bm).unwrap()
}

fn constant_output<'t>(tape: &'t Tape, points: usize, m: usize, d: usize, y: f64, z: f64) -> ModelOutput<'t> {
    ModelOutput {
        y: (0..points).map(|_| tape.constant(Tensor::filled(&[m, 1], y))).collect(),
        z: (0..points).map(|_| tape.constant(Tensor::filled(&[m, d], z))).collect(),
    }
}

#[test]
fn linear_network_gives_its_weights() {
    let tape = Tape::new();
    let input = tape.leaf(Tensor::matrix(3, 3, vec![0.0, 1.0, 2.0, 0.5, -1.0, 4.0, 1.0, 0.0, 0.0]).unwrap());
    let w = tape.leaf(Tensor::column(vec![0.3, -0.7, 1.9]));
    let y = input.matmul(w).unwrap().add_scalar(0.25);
    let z = z_from_network(y, input, &vec![Diffusion::Scalar(1.0); 3]).unwrap().value();
    for r in 0..3 {
        assert_eq!((z.get2(r, 0), z.get2(r, 1)), (-0.7, 1.9));
    }
}

#[test]
fn state_independent_network_has_zero_z() {
    let cfg = MlpConfig {
        input_dim: 3,
        output_dim: 1,
        hidden_layers: 2,
        hidden_width: 4,
        activation: Activation::Tanh,
        batch_norm: false,
    };
    let mut p = ParameterSet::zeros(&cfg.blocks());
    p.segment_mut("layer3.bias").unwrap()[0] = 1.5;
    let tape = Tape::new();
    let vars = p.to_vars(&tape);
    let input = tape.leaf(Tensor::matrix(2, 3, vec![0.1, 2.0, 3.0, 0.4, -1.0, 0.0]).unwrap());
    let y = cfg.forward(&vars, input).unwrap();
    let z = z_from_network(y, input, &vec![Diffusion::Scalar(2.0); 2]).unwrap().value();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn network_z_matches_finite_differences() {
    let cfg = MlpConfig {
        input_dim: 4,
        output_dim: 1,
        hidden_layers: 3,
        hidden_width: 7,
        activation: Activation::Sin,
        batch_norm: false,
    };
    let p = cfg.init_params(21, InitDist::Normal).unwrap();
    let rows = [[0.2, 0.5, -0.3, 1.1], [0.7, -1.2, 0.4, 0.0]];
    let sig = [Diffusion::Diagonal(vec![0.5, 2.0, -1.0]), Diffusion::Full(vec![1.0, 0.2, 0.0, 0.3, 1.0, -0.5, 0.0, 0.1, 0.7])];
    let tape = Tape::new();
    let vars = p.to_vars(&tape);
    let input = tape.leaf(Tensor::matrix(2, 4, rows.concat()).unwrap());
    let y = cfg.forward(&vars, input).unwrap();
    let z = z_from_network(y, input, &sig).unwrap().value();
    let eval = |row: &[f64]| {
        let t = Tape::new();
        let v = p.to_vars(&t);
        cfg.forward(&v, t.constant(Tensor::row(row.to_vec()))).unwrap().item().unwrap()
    };
    let h = 1e-6;
    for (r, row) in rows.iter().enumerate() {
        let grad: Vec<f64> = (1..4)
            .map(|j| {
                let (mut a, mut b) = (row.to_vec(), row.to_vec());
                a[j] += h;
                b[j] -= h;
                (eval(&a) - eval(&b)) / (2.0 * h)
            })
            .collect();
        let s = sig[r].to_matrix(3);
        for k in 0..3 {
            let want: f64 = (0..3).map(|j| grad[j] * s[j * 3 + k]).sum();
            let got = z.get2(r, k);
            assert!((got - want).abs() <= 1e-5 * want.abs().max(1e-3), "row {r} col {k}: {got} vs {want}");
        }
    }
}

#[test]
fn dbsde_rollout_with_frozen_z_drifts_by_the_driver() {
    let p = Toy {
        d: 2,
        horizon: 1.5,
        f: 0.4,
        g: 0.0,
    };
    let paths = toy_paths(&p, 3, 5, None);
    let model = DbsdeModel::new(2, 3, 2, 12, Activation::Relu).unwrap();
    let mut params = ParameterSet::zeros(&model.blocks());
    params.segment_mut("y0").unwrap()[0] = 2.0;
    let tape = Tape::new();
    let vars = params.to_vars(&tape);
    let mut bn = model.bn_states();
    let out = model.rollout(&tape, &vars, &p, &paths, &mut bn, BnMode::Train).unwrap();
    let yn = out.y[3].value();
    assert!(yn.data().iter().all(|&v| (v - (2.0 - 0.4 * 1.5)).abs() < 1e-12));

    let p0 = Toy { f: 0.0, ..p };
    let out = model.rollout(&tape, &vars, &p0, &paths, &mut bn, BnMode::Train).unwrap();
    assert_eq!(out.y[3].value().data(), out.y[0].value().data());
}

#[test]
fn euler_step_hand_values() {
    let p = Toy {
        d: 1,
        horizon: 0.5,
        f: 1.0,
        g: 0.0,
    };
    let paths = toy_paths(&p, 1, 1, Some(vec![0.1]));
    let tape = Tape::new();
    let y0 = tape.constant(Tensor::scalar(3.0));
    let z0 = tape.constant(Tensor::scalar(2.0));
    let y1 = loss::euler_step(&p, &paths, 0, y0, z0).unwrap().item().unwrap();
    assert!((y1 - (3.0 - 0.5 + 0.2)).abs() < 1e-15);
}

#[test]
fn dbsde_loss_hand_values() {
    let p = Toy {
        d: 1,
        horizon: 1.0,
        f: 0.0,
        g: 1.0,
    };
    let paths = toy_paths(&p, 2, 2, None);
    let tape = Tape::new();
    let exact = constant_output(&tape, 3, 2, 1, 1.0, 0.0);
    assert_eq!(dbsde_loss(&p, &paths, &exact, 0.5).unwrap().total.item().unwrap(), 0.0);
    let offset = constant_output(&tape, 3, 2, 1, 1.0 + 0.3, 0.0);
    let v = dbsde_loss(&p, &paths, &offset, 0.5).unwrap().total.item().unwrap();
    assert!((v - 0.09).abs() < 1e-15);
    let mut mixed = constant_output(&tape, 3, 2, 1, 0.0, 0.0);
    mixed.y[2] = tape.constant(Tensor::column(vec![0.0, -2.0]));
    let v = dbsde_loss(&p, &paths, &mixed, 0.5).unwrap().total.item().unwrap();
    assert_eq!(v, 5.0);
}

#[test]
fn ldbsde_constant_net_only_pays_the_terminal_term() {
    let p = Toy {
        d: 2,
        horizon: 1.0,
        f: 0.0,
        g: 0.5,
    };
    let paths = toy_paths(&p, 4, 3, None);
    let tape = Tape::new();
    let out = constant_output(&tape, 5, 3, 2, 2.0, 0.0);
    let l = ldbsde_loss(&p, &paths, &out, 1.0 / 3.0).unwrap().values().unwrap();
    assert!(l.local.iter().all(|&v| v == 0.0));
    assert!((l.terminal - 2.25).abs() < 1e-15);
    assert_eq!(l.total, l.terminal);
}

#[test]
fn ldbsde_single_step() {
    let p = Toy {
        d: 1,
        horizon: 0.5,
        f: 1.0,
        g: 0.2,
    };
    let paths = toy_paths(&p, 1, 1, Some(vec![0.1]));
    let tape = Tape::new();
    let out = ModelOutput {
        y: vec![tape.constant(Tensor::scalar(0.9)), tape.constant(Tensor::scalar(0.4))],
        z: vec![tape.constant(Tensor::scalar(2.0)), tape.constant(Tensor::scalar(0.0))],
    };
    let l = ldbsde_loss(&p, &paths, &out, 1.0).unwrap().values().unwrap();
    let r = 0.9 - 0.5 + 0.2 - 0.4;
    assert!((l.local[0] - r * r).abs() < 1e-15);
    assert!((l.terminal - 0.04).abs() < 1e-15);
}

#[test]
fn ladbsde_zero_net_pays_c_squared_per_index() {
    let p = Toy {
        d: 2,
        horizon: 1.0,
        f: 0.0,
        g: 1.5,
    };
    let paths = toy_paths(&p, 6, 1, None);
    let tape = Tape::new();
    let out = constant_output(&tape, 6, 1, 2, 0.0, 0.0);
    for l in [
        ladbsde_loss_backward(&p, &paths, &out, 1.0).unwrap(),
        ladbsde_loss_forward(&p, &paths, &out, 1.0).unwrap(),
    ] {
        let v = l.values().unwrap();
        assert!(v.local.iter().all(|&x| x == 2.25));
        assert_eq!(v.total, 6.0 * 2.25);
    }
}

#[test]
fn ladbsde_single_step_forms_agree() {
    let p = Toy {
        d: 1,
        horizon: 0.5,
        f: 1.0,
        g: 0.2,
    };
    let paths = toy_paths(&p, 1, 1, Some(vec![0.1]));
    let tape = Tape::new();
    let out = ModelOutput {
        y: vec![tape.constant(Tensor::scalar(0.9))],
        z: vec![tape.constant(Tensor::scalar(2.0))],
    };
    let b = ladbsde_loss_backward(&p, &paths, &out, 1.0).unwrap().values().unwrap();
    let f = ladbsde_loss_forward(&p, &paths, &out, 1.0).unwrap().values().unwrap();
    let r = 0.9 - 0.2 - 0.5 + 0.2;
    assert!((b.total - r * r).abs() < 1e-15);
    assert!((b.total - f.total).abs() < 1e-15);
}

#[test]
fn last_locally_additive_term_is_the_local_residual_with_terminal_target() {
    let p = Example1::standard(1);
    let grid = TimeGrid::new(2.0, 2).unwrap();
    let bm = BrownianBatch::sample(8, 0, 4, &grid, 1).unwrap();
    let paths = euler_forward(&p, &grid, &bm).unwrap();
    let tape = Tape::new();
    let mut out = AnalyticModel.evaluate(&tape, &[], &p, &paths, 3).unwrap();
    out.y[0] = out.y[0].add_scalar(0.1);
    out.y[1] = out.y[1].scale(0.8);
    out.y[2] = tape.constant(p.terminal_batch(&paths.state_matrix(2)));
    let la = ladbsde_loss_backward(&p, &paths, &out, 0.25).unwrap().values().unwrap();
    let lo = ldbsde_loss(&p, &paths, &out, 0.25).unwrap().values().unwrap();
    assert!((la.local[1] - lo.local[1]).abs() < 1e-14);
    assert_eq!(lo.terminal, 0.0);
}

#[test]
fn forward_and_backward_losses_agree_on_random_nets() {
    for (seed, problem) in [(1u64, ProblemKind::Ex1), (2, ProblemKind::Ex3)] {
        let (p, d): (Box<dyn Fbsde>, usize) = match problem {
            ProblemKind::Ex1 => (Box::new(Example1::standard(3)), 3),
            ProblemKind::Ex3 => (Box::new(Example3::standard(2)), 2),
        };
        let grid = TimeGrid::new(p.horizon(), 9).unwrap();
        let paths = euler_forward(p.as_ref(), &grid, &BrownianBatch::sample(seed, 0, 5, &grid, d).unwrap()).unwrap();
        let mut cfg = SchemeConfig::new(SchemeKind::Ladbsde);
        let solver = Solver::new(&cfg, d, 9).unwrap();
        let params = solver.init_params(seed);
        let run = |cfg: &SchemeConfig| {
            let s = Solver::new(cfg, d, 9).unwrap();
            let tape = Tape::new();
            let vars = params.to_vars(&tape);
            let l = s
                .loss(&tape, &vars, p.as_ref(), &paths, 0.2, &mut ModelState::default(), BnMode::Train)
                .unwrap();
            let g = tape.backward(l.total, &vars).unwrap();
            (l.values().unwrap(), params.flatten_grads(&vars, &g))
        };
        let (lb, gb) = run(&cfg);
        cfg.loss = LossImpl::Forward;
        let (lf, gf) = run(&cfg);
        assert!((lb.total - lf.total).abs() / lb.total.max(1.0) < 1e-10);
        let scale = gb.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in gb.iter().zip(&gf) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }
    }
}

enum ProblemKind {
    Ex1,
    Ex3,
}

#[test]
fn solver_counts_and_prediction_shape() {
    let s = Solver::new(&SchemeConfig::new(SchemeKind::Ladbsde), 100, 10).unwrap();
    assert_eq!(s.formula_param_count(), Some(25_961));
    assert_eq!(s.implemented_param_count(), 4 * 100 * 100 + 76 * 100 + 361);
    let s = Solver::new(&SchemeConfig::new(SchemeKind::Dbsde), 1, 2).unwrap();
    assert_eq!(s.formula_param_count(), Some(191));
    assert_eq!(s.implemented_param_count(), 191 + 2 * 11 + 1);

    let p = Example3::standard(2);
    let s = Solver::new(&SchemeConfig::new(SchemeKind::Ldbsde), 2, 4).unwrap();
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let paths = euler_forward(&p, &grid, &BrownianBatch::sample(0, 0, 7, &grid, 2).unwrap()).unwrap();
    let params = s.init_params(0);
    let whole = s.predict(&params, &s.init_state(), &p, &paths, 100).unwrap();
    let chunked = s.predict(&params, &s.init_state(), &p, &paths, 3).unwrap();
    assert_eq!((whole.points, whole.samples, whole.dim), (4, 7, 2));
    for i in 0..4 {
        for m in 0..7 {
            assert!((whole.y(i, m) - chunked.y(i, m)).abs() < 1e-14);
        }
    }
}

#[test]
fn rnn_backbone_runs_both_local_schemes() {
    let p = Example1::standard(2);
    let grid = TimeGrid::new(1.0, 5).unwrap();
    let paths = euler_forward(&p, &grid, &BrownianBatch::sample(4, 0, 6, &grid, 2).unwrap()).unwrap();
    for kind in [SchemeKind::Ldbsde, SchemeKind::Ladbsde] {
        let mut cfg = SchemeConfig::new(kind);
        cfg.backbone = Backbone::Rnn;
        let s = Solver::new(&cfg, 2, 5).unwrap();
        let params = s.init_params(1);
        let tape = Tape::new();
        let vars = params.to_vars(&tape);
        let l = s
            .loss(&tape, &vars, &p, &paths, 1.0 / 6.0, &mut ModelState::default(), BnMode::Train)
            .unwrap();
        let g = tape.backward(l.total, &vars).unwrap();
        assert!(params.flatten_grads(&vars, &g).iter().any(|v| *v != 0.0));
    }
}
