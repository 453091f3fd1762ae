use kkt_hardnet::bench::{gen_example1, gen_example2, gen_example3};
use kkt_hardnet::compiler::CompileOptions;
use kkt_hardnet::expr::{ConstraintEvaluator, ConstraintSet};
use kkt_hardnet::net::loss::{half_mse, mape, mse, pinn_loss};
use kkt_hardnet::net::*;
use kkt_hardnet::solver::{PinvMode, SolverConfig, VjpMode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EX1: &str = include_str!("../constraints/example1.txt");
const EX2: &str = include_str!("../constraints/example2.txt");
const EX3: &str = include_str!("../constraints/example3.txt");

fn set(text: &str) -> ConstraintSet {
    ConstraintSet::parse_file(text).unwrap()
}

fn small(data: &Dataset, n_train: usize, n_val: usize) -> Dataset {
    let mut d = data.clone();
    d.inputs.truncate(n_train + n_val);
    d.targets.truncate(n_train + n_val);
    d.n_train = n_train;
    d.n_val = n_val;
    d
}

fn tight() -> SolverConfig {
    SolverConfig {
        tol: 1e-13,
        max_iters: 60,
        ..Default::default()
    }
}

#[test]
fn zero_weights_output_the_final_bias() {
    let mut net = Mlp::zeros(&[3, 5, 2]);
    net.biases[1] = DVector::from_column_slice(&[0.5, -2.0]);
    assert_eq!(net.forward(&[1.0, 2.0, 3.0]), vec![0.5, -2.0]);
}

#[test]
fn identity_layer_passes_the_input() {
    let mut net = Mlp::zeros(&[3, 3]);
    net.weights[0] = DMatrix::identity(3, 3);
    assert_eq!(net.forward(&[1.5, -2.0, 0.25]), vec![1.5, -2.0, 0.25]);
}

#[test]
fn initialization_is_seeded_and_bounded() {
    let a = Mlp::new(&[1, 64, 64, 2], 7);
    assert_eq!(a, Mlp::new(&[1, 64, 64, 2], 7));
    assert_ne!(a, Mlp::new(&[1, 64, 64, 2], 8));
    assert_eq!(a.n_params(), 64 + 64 + 64 * 64 + 64 + 2 * 64 + 2);
    let limit = (6.0f64 / 64.0).sqrt();
    assert!(a.weights[1].iter().all(|w| w.abs() <= limit));
    assert!(a.biases.iter().all(|b| b.iter().all(|v| *v == 0.0)));
}

#[test]
fn backward_matches_finite_differences() {
    let net = Mlp::new(&[2, 8, 8, 3], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = DMatrix::from_fn(2, 5, |_, _| rng.gen_range(-1.0..1.0));
    let w = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
    let scalar = |n: &Mlp| n.forward_batch(&x).output().component_mul(&w).sum();
    let g = net.backward(&net.forward_batch(&x), &w).flat();
    let theta = net.flat();
    let h = 1e-6;
    for k in 0..theta.len() {
        let mut p = net.clone();
        let mut t = theta.clone();
        t[k] += h;
        p.set_flat(&t);
        let up = scalar(&p);
        t[k] -= 2.0 * h;
        p.set_flat(&t);
        let fd = (up - scalar(&p)) / (2.0 * h);
        assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0), "param {k}: {fd} vs {}", g[k]);
    }
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let mut net = Mlp::zeros(&[2, 1]);
    let mut grad = Mlp::zeros(&[2, 1]);
    grad.weights[0] = DMatrix::from_row_slice(1, 2, &[3.0, -0.5]);
    let mut opt = Adam::new(net.n_params(), 0.01, AdamConfig::default());
    opt.step(&mut net, &grad);
    assert!((net.weights[0][(0, 0)] + 0.01).abs() < 1e-9);
    assert!((net.weights[0][(0, 1)] - 0.01).abs() < 1e-9);
    assert_eq!(net.biases[0][0], 0.0);
}

#[test]
fn loss_conventions() {
    let y = vec![vec![1.0, 2.0]];
    assert_eq!(half_mse(&y, &y), 0.0);
    let off = vec![vec![2.0, 3.0]];
    assert_eq!(half_mse(&off, &y), 1.0);
    assert_eq!(mse(&off, &y), 2.0);
    assert!((mape(&off, &y) - 0.75).abs() < 1e-15);
    // the floor keeps zero targets finite
    assert_eq!(mape(&[vec![1e-8]], &[vec![0.0]]), 1.0);
    // feasible predictions carry no penalty
    let cs = set(EX1);
    let ev = ConstraintEvaluator::new(&cs);
    let x = vec![vec![1.5]];
    let feasible = vec![vec![8.0 * 1.5f64.powi(3) + 5.0, 2.0]];
    let target = vec![vec![30.0, 2.5]];
    assert!((pinn_loss(&ev, &x, &feasible, &target, 100.0) - half_mse(&feasible, &target)).abs() < 1e-9);
}

#[test]
fn evaluation_of_hand_computed_cases() {
    let cs = set(EX2);
    let ev = ConstraintEvaluator::new(&cs);
    let (eq, ineq) = loss::violations(&ev, &[vec![1.0, 1.0]], &[vec![0.0, 0.0]]);
    assert!((eq - 5.0).abs() < 1e-12 && ineq == 0.0);
    // perfect predictions on feasible data
    let data = small(&gen_example2(0), 10, 5);
    let pred = data.train_y().to_vec();
    let ranges = target_ranges(data.train_y());
    assert_eq!(loss::mse(&pred, data.train_y()), 0.0);
    assert_eq!(loss::mape(&pred, data.train_y()), 0.0);
    let (eq, ineq) = loss::violations(&ev, data.train_x(), &pred);
    assert!(eq <= 1e-10 && ineq == 0.0);
    assert_eq!(loss::nrmse(&pred, data.train_y(), &ranges), 0.0);
}

fn layer_ex1() -> Projection {
    Projection::newton(&set(EX1), &CompileOptions::signed(), tight(), VjpMode::Implicit).unwrap()
}

fn check_gradient(model: &Model, mode: Mode, layer: Option<&Projection>, cs: &ConstraintSet, data: &Dataset) {
    let ev = ConstraintEvaluator::new(cs);
    let (xs, ys) = (data.train_x(), data.train_y());
    let g = batch_gradient(model, mode, layer, &ev, xs, ys).unwrap();
    let grad = g.grad.flat();
    let gmax = grad.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let theta = model.mlp.flat();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    for _ in 0..40 {
        let k = rng.gen_range(0..theta.len());
        let loss_at = |d: f64| {
            let mut m = model.clone();
            let mut t = theta.clone();
            t[k] += d;
            m.mlp.set_flat(&t);
            batch_gradient(&m, mode, layer, &ev, xs, ys).unwrap().loss
        };
        let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        let scale = grad[k].abs().max(1e-3 * gmax);
        assert!((fd - grad[k]).abs() <= 1e-5 * scale, "{mode:?} param {k}: fd {fd} vs {}", grad[k]);
    }
}

#[test]
fn gradients_match_finite_differences_in_every_mode() {
    let cs = set(EX1);
    let data = small(&gen_example1(3), 4, 0);
    let model = Model::for_dataset(&data, &[6, 6], 11);
    check_gradient(&model, Mode::Mlp, None, &cs, &data);
    check_gradient(&model, Mode::Pinn { omega: 100.0 }, None, &cs, &data);
    check_gradient(&model, Mode::Hardnet, Some(&layer_ex1()), &cs, &data);
    let unrolled = Projection::newton(&cs, &CompileOptions::signed(), tight(), VjpMode::Unrolled).unwrap();
    check_gradient(&model, Mode::Hardnet, Some(&unrolled), &cs, &data);
    // inequality and closed-form layers
    let cs3 = set(EX3);
    let d3 = small(&gen_example3(3), 4, 0);
    let m3 = Model::for_dataset(&d3, &[6, 6], 11);
    let l3 = Projection::newton(&cs3, &CompileOptions::default(), tight(), VjpMode::Implicit).unwrap();
    check_gradient(&m3, Mode::Hardnet, Some(&l3), &cs3, &d3);
    let cs2 = set(EX2);
    let d2 = small(&gen_example2(3), 4, 0);
    let m2 = Model::for_dataset(&d2, &[6, 6], 11);
    let l2 = Projection::affine(&cs2, PinvMode::Strict).unwrap();
    check_gradient(&m2, Mode::Hardnet, Some(&l2), &cs2, &d2);
}

fn cfg(mode: Mode, epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs,
        mode,
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic_and_lowers_the_loss() {
    let cs = set(EX2);
    let data = small(&gen_example2(1), 64, 16);
    let run = || {
        let mut m = Model::for_dataset(&data, &[16, 16], 2);
        let mut c = cfg(Mode::Mlp, 40);
        c.batch_size = Some(16);
        train(&mut m, &data, &cs, None, &c).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.epochs, b.epochs);
    assert_eq!((a.train, a.val), (b.train, b.val));
    assert_eq!(a.epochs.len(), 40);
    assert!(a.epochs.last().unwrap().loss < 0.5 * a.epochs[0].loss);
}

#[test]
fn pinn_without_penalty_is_the_mlp() {
    let cs = set(EX1);
    let data = small(&gen_example1(1), 32, 8);
    let mut m1 = Model::for_dataset(&data, &[8, 8], 4);
    let mut m2 = m1.clone();
    let a = train(&mut m1, &data, &cs, None, &cfg(Mode::Mlp, 25)).unwrap();
    let b = train(&mut m2, &data, &cs, None, &cfg(Mode::Pinn { omega: 0.0 }, 25)).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(a.epochs, b.epochs);
}

#[test]
fn hardnet_outputs_stay_feasible_every_epoch() {
    let cs = set(EX1);
    let data = small(&gen_example1(2), 64, 16);
    let layer = Projection::newton(&cs, &CompileOptions::signed(), SolverConfig::default(), VjpMode::Implicit).unwrap();
    // shift-only outputs start below the y2 > 0 domain for some inputs
    let mut m = Model::with_scaling(&data, &[16, 16], 1, OutputScaling::Standardize);
    let rep = train(&mut m, &data, &cs, Some(&layer), &cfg(Mode::Hardnet, 10)).unwrap();
    for e in &rep.epochs {
        assert_eq!(e.train.failures + e.val.failures, 0);
        assert!(e.train.eq_violation <= 1e-9 && e.val.eq_violation <= 1e-9, "{e:?}");
    }
    // PINN penalty reduces the violation relative to its value at the start
    let mut p = Model::for_dataset(&data, &[16, 16], 1);
    let pr = train(&mut p, &data, &cs, None, &cfg(Mode::Pinn { omega: 100.0 }, 10)).unwrap();
    assert!(pr.val.eq_violation > 1e-3);
}

#[test]
fn degenerate_inputs_are_rejected() {
    let cs = set(EX1);
    let mut data = small(&gen_example1(0), 8, 2);
    let mut m = Model::for_dataset(&data, &[4], 0);
    assert!(matches!(
        train(&mut m, &data, &cs, None, &cfg(Mode::Hardnet, 1)),
        Err(TrainError::MissingProjection)
    ));
    let mut bad = cfg(Mode::Mlp, 1);
    bad.lr = 0.0;
    assert!(matches!(train(&mut m, &data, &cs, None, &bad), Err(TrainError::Config(_))));
    assert!(matches!(
        train(&mut m, &data, &set(EX2), None, &cfg(Mode::Mlp, 1)),
        Err(TrainError::Dimension(_))
    ));
    data.inputs.clear();
    data.targets.clear();
    data.n_train = 0;
    data.n_val = 0;
    assert!(matches!(train(&mut m, &data, &cs, None, &cfg(Mode::Mlp, 1)), Err(TrainError::EmptyDataset)));
}

#[test]
fn divergence_returns_the_last_finite_report() {
    let cs = set(EX1);
    let data = small(&gen_example1(0), 8, 2);
    let mut m = Model::for_dataset(&data, &[4], 0);
    let mut c = cfg(Mode::Mlp, 5);
    c.lr = f64::MAX;
    match train(&mut m, &data, &cs, None, &c) {
        Err(TrainError::Diverged { epoch, report }) => {
            assert_eq!(report.epochs.len(), epoch - 1);
            assert!(report.epochs.iter().all(|e| e.loss.is_finite()));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn report_csvs_have_one_row_per_epoch() {
    let cs = set(EX3);
    let data = small(&gen_example3(0), 16, 4);
    let mut m = Model::for_dataset(&data, &[4], 0);
    let rep = train(&mut m, &data, &cs, None, &cfg(Mode::Mlp, 7)).unwrap();
    let mut curve = Vec::new();
    rep.write_curve_csv(&mut curve).unwrap();
    let text = String::from_utf8(curve).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# nrmse"));
    assert!(lines[1].starts_with("epoch,loss,train_nrmse"));
    assert_eq!(lines.len(), 2 + 7);
    let mut table = Vec::new();
    write_metrics_csv(&[&rep], &mut table).unwrap();
    let text = String::from_utf8(table).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], METRICS_HEADER.join(","));
    assert!(rows[1].starts_with("MLP,train,") && rows[2].starts_with("MLP,val,"));
    // the data violate y <= x, so the unconstrained fit does too
    assert!(rep.val.ineq_violation > 0.1);
}
