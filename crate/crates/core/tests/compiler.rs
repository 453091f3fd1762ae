use kkt_hardnet::compiler::{
    assemble_kkt, emit_system, load_system, logexp_transform, AuxStyle, CompileError, CompileOptions,
    KktSystem, MultiplierMode, RowKind,
};
use kkt_hardnet::expr::{ConstraintEvaluator, ConstraintSet};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EX1: &str = include_str!("../constraints/example1.txt");
const EX2: &str = include_str!("../constraints/example2.txt");
const EX3: &str = include_str!("../constraints/example3.txt");
const DFULL: &str = include_str!("../constraints/distill_full.txt");
const DAFF: &str = include_str!("../constraints/distill_affine.txt");

fn set(text: &str) -> ConstraintSet {
    ConstraintSet::parse_file(text).unwrap()
}

fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
}

/// Residual computed straight from the dense blocks.
fn dense_residual(sys: &KktSystem, xs: &[f64], tau: &[f64], y0: &[f64]) -> Vec<f64> {
    let s = &sys.structured;
    let cat = &sys.catalog;
    let (p, q) = (cat.p(), cat.q());
    let x = DVector::from_column_slice(xs);
    // columns without an exponential may hold large inputs; skip them
    let ex = DVector::from_iterator(
        xs.len(),
        xs.iter()
            .enumerate()
            .map(|(j, v)| if s.a_x.column(j).iter().any(|a| *a != 0.0) { v.exp() } else { 0.0 }),
    );
    let y = DVector::from_column_slice(&tau[..p]);
    let z = DVector::from_column_slice(&tau[p..p + q]);
    let l = DVector::from_column_slice(&tau[p + q..]);
    let y0 = DVector::from_column_slice(y0);
    let f1 = &s.a * &x + &s.b_y * &y + &s.a_x * &ex + &s.c_z * &z + &s.c_l * &l - &s.b - &s.p_y0 * &y0;
    let f2 = &s.d_y * &y + &s.d_z * &z + &s.d_l * &l - &s.d;
    let arg = &s.h_y * &y + &s.h_z * &z;
    let f3 = &s.e_y * &y + &s.e_z * &z + &s.e_l * &l - &s.g * arg.map(f64::exp);
    f1.iter().chain(f2.iter()).chain(f3.iter()).copied().collect()
}

#[test]
fn example1_transform_matches_golden_matrices() {
    let opts = CompileOptions {
        aux_style: AuxStyle::ExpNodes,
        ..Default::default()
    };
    let sys = logexp_transform(&set(EX1), &opts).unwrap();
    let s = &sys.structured;
    assert_eq!(s.block_sizes(), (4, 3, 2));
    assert_eq!(sys.catalog.inputs, ["x", "x^2", "log(x^2)", "log(x)"]);
    assert_eq!(sys.catalog.aux.len(), 5);
    assert_eq!(
        s.a,
        mat(&[&[6., -12., 0., 0.], &[0., 0., 1., -2.], &[0., 1., 0., 0.], &[1., 0., 0., 0.]])
    );
    assert_eq!(s.b_y, mat(&[&[1., 0.], &[0., 0.], &[0., 0.], &[0., 0.]]));
    assert_eq!(
        s.a_x,
        mat(&[&[0., 0., 0., 0.], &[0., 0., 0., 0.], &[0., 0., -1., 0.], &[0., 0., 0., -1.]])
    );
    assert_eq!(s.c_z.row(0).iter().copied().collect::<Vec<_>>(), [0., 0., -1., 0., 0.]);
    assert!(s.c_z.rows(1, 3).iter().all(|v| *v == 0.0));
    assert_eq!(s.b.as_slice(), [6., 0., 0., 0.]);
    // z = [e^{log y2}, e^{log y2^3}, y2^3, log(y2^3), log(y2)]
    assert_eq!(
        s.d_y,
        mat(&[&[0., 0.], &[0., 1.], &[0., 0.]])
    );
    assert_eq!(
        s.d_z,
        mat(&[&[0., 0., 0., 1., -3.], &[-1., 0., 0., 0., 0.], &[0., -1., 1., 0., 0.]])
    );
    assert_eq!(s.e_z, mat(&[&[1., 0., 0., 0., 0.], &[0., 1., 0., 0., 0.]]));
    assert_eq!(s.h_z, mat(&[&[0., 0., 0., 0., 1.], &[0., 0., 0., 1., 0.]]));
    assert!(emit_system(&sys).contains("\nb: 6 0 0 0\n"));
}

#[test]
fn example1_kkt_dimensions() {
    let sys = assemble_kkt(&set(EX1), &CompileOptions::default()).unwrap();
    assert_eq!(sys.n_rows(), 12);
    assert_eq!((sys.catalog.p(), sys.catalog.q(), sys.catalog.r()), (2, 6, 1));
    assert_eq!(sys.catalog.m(), 4);
    assert_eq!(sys.catalog.multipliers, ["mu[h1]"]);
    assert!(sys.catalog.positive_multipliers[0]);
}

#[test]
fn example3_kkt_dimensions() {
    let sys = assemble_kkt(&set(EX3), &CompileOptions::default()).unwrap();
    assert_eq!(sys.n_rows(), 14);
    assert_eq!(sys.n_unknowns(), 14);
    assert_eq!(sys.catalog.q(), 10);
    assert_eq!(sys.catalog.multipliers, ["muE[g1]", "muI[g1]", "s[g1]"]);
    assert_eq!(sys.fb_chains.len(), 1);
    assert_eq!(sys.fb_chains[0].aux.len(), 10);
}

#[test]
fn affine_set_has_no_exponentials() {
    let sys = logexp_transform(&set(EX2), &CompileOptions::default()).unwrap();
    let s = &sys.structured;
    assert_eq!(s.n_exp(), 0);
    assert!(s.c_z.iter().all(|v| *v == 0.0));
    assert!(s.c_l.iter().all(|v| *v == 0.0));
    assert_eq!(s.b_y.row(0).iter().copied().collect::<Vec<_>>(), [1.0, 0.5]);
    // input lifts x1^2 and x2^3 stay on the input side
    assert!(sys.catalog.inputs.contains(&"x1^2".to_string()));
    assert!(sys.catalog.inputs.contains(&"x2^3".to_string()));
}

#[test]
fn equality_only_set_has_no_chains() {
    let sys = assemble_kkt(&set(EX2), &CompileOptions::default()).unwrap();
    assert!(sys.fb_chains.is_empty());
    assert!(sys
        .catalog
        .multiplier_kinds
        .iter()
        .all(|k| k.section() == 0));
}

#[test]
fn sign_modes() {
    let cs = set(EX1);
    let reject = CompileOptions {
        multipliers: MultiplierMode::Reject,
        ..Default::default()
    };
    assert_eq!(
        assemble_kkt(&cs, &reject).unwrap_err(),
        CompileError::SignedMultiplier { label: "h1".into() }
    );
    let signed = assemble_kkt(&cs, &CompileOptions::signed()).unwrap();
    assert_eq!(signed.catalog.multipliers, ["mu+[h1]", "mu-[h1]"]);
    assert_eq!(signed.active_rows().len(), signed.n_unknowns());
    assert!(signed.row_kinds.iter().any(|k| matches!(k, RowKind::Gauge(_))));
    // linear gradients never need a split
    let ex2 = assemble_kkt(&set(EX2), &reject).unwrap();
    assert_eq!(ex2.catalog.multipliers, ["mu[h1]"]);
}

#[test]
fn unbounded_input_in_a_product_is_rejected() {
    let cs = set("inputs: x\noutputs: y\nc : y - x^2 = 0\n");
    let err = logexp_transform(&cs, &CompileOptions::default()).unwrap_err();
    assert!(matches!(err, CompileError::NotPositive { ref var, .. } if var == "x"));
}

#[test]
fn empty_set_is_an_error() {
    let cs = set("inputs: x\noutputs: y\n");
    assert_eq!(
        assemble_kkt(&cs, &CompileOptions::default()).unwrap_err(),
        CompileError::NoConstraints
    );
}

fn all_systems() -> Vec<(&'static str, KktSystem)> {
    let mut out = Vec::new();
    for (name, text) in [("ex1", EX1), ("ex2", EX2), ("ex3", EX3), ("dfull", DFULL), ("daff", DAFF)] {
        let cs = set(text);
        for style in [AuxStyle::Compact, AuxStyle::ExpNodes] {
            for mode in [MultiplierMode::Positive, MultiplierMode::Signed] {
                let opts = CompileOptions {
                    aux_style: style,
                    multipliers: mode,
                    ..Default::default()
                };
                out.push((name, assemble_kkt(&cs, &opts).unwrap()));
                out.push((name, logexp_transform(&cs, &opts).unwrap()));
            }
        }
    }
    out
}

#[test]
fn emission_round_trips() {
    for (name, sys) in all_systems() {
        let text = emit_system(&sys);
        let back = load_system(&text).unwrap();
        assert_eq!(emit_system(&back), text, "{name}");
        assert_eq!(back, sys, "{name}");
    }
}

#[test]
fn structural_audit() {
    for (name, sys) in all_systems() {
        let s = &sys.structured;
        let cat = &sys.catalog;
        let n = sys.n_rows();
        let plan = sys.plan();
        // every unknown is referenced somewhere
        let mut used = vec![false; sys.n_unknowns()];
        for row in &plan.lin {
            for &(j, _) in row {
                used[j] = true;
            }
        }
        for (_, h) in &plan.exps {
            for &(j, _) in h {
                used[j] = true;
            }
        }
        assert!(used.iter().all(|u| *u), "{name}: unreferenced unknown");
        // one definition per auxiliary
        assert_eq!(cat.defs.len(), cat.q() + cat.m() - cat.base_inputs, "{name}");
        let aux_rows = sys
            .row_kinds
            .iter()
            .filter(|k| matches!(k, RowKind::SumDef | RowKind::LogLinear | RowKind::Copy | RowKind::Exp))
            .count();
        assert_eq!(aux_rows, cat.defs.len(), "{name}");
        if sys.is_kkt {
            assert_eq!(sys.active_rows().len(), sys.n_unknowns(), "{name}: square system");
            assert!(n >= sys.n_unknowns());
            assert_eq!(sys.stationarity_rows.len(), cat.p());
            for (j, &r) in sys.stationarity_rows.iter().enumerate() {
                for k in 0..cat.p() {
                    let expect = if j == k { 1.0 } else { 0.0 };
                    assert_eq!(s.b_y[(r, k)], expect, "{name}");
                    assert_eq!(s.p_y0[(r, k)], expect, "{name}");
                }
            }
        }
        // exps only on block 3, one per row
        for (rows, h) in &plan.exps {
            assert_eq!(rows.len(), 1);
            assert_eq!(h.len(), 1);
        }
    }
}

fn random_feasible(name: &str, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    match name {
        "ex1" => {
            let x: f64 = rng.gen_range(1.0..2.0);
            (vec![x], vec![8.0 * x.powi(3) + 5.0, 2.0 * x - 1.0])
        }
        "ex2" => {
            let (a, b): (f64, f64) = (rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0));
            let y2: f64 = rng.gen_range(0.5..20.0);
            (vec![a, b], vec![3.0 * a * a + 2.0 * b.powi(3) - 0.5 * y2, y2])
        }
        "ex3" => {
            let x: f64 = rng.gen_range(1.0..2.0);
            (vec![x], vec![rng.gen_range(0.1..x)])
        }
        _ => {
            let ff: f64 = rng.gen_range(95.0..110.0);
            let fil: f64 = rng.gen_range(800.0..950.0);
            let r: f64 = rng.gen_range(2.5..4.3);
            let fd: f64 = rng.gen_range(70.0..100.0);
            let fb = ff + fil - fd;
            let xd32: f64 = rng.gen_range(0.3..0.5);
            let xd125 = (0.302383054 * ff * 0.9) / fd;
            let xb32 = (0.697616946 * ff - fd * xd32) / fb;
            let xb125 = (0.302383054 * ff - fd * xd125) / fb;
            (
                vec![ff, fil, r],
                vec![fd, fb, r * fd, xd32, xd125, 1.0 - xd32 - xd125, xb32, xb125, 1.0 - xb32 - xb125],
            )
        }
    }
}

#[test]
fn lift_is_consistent_on_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, sys) in all_systems() {
        let text = match name {
            "ex1" => EX1,
            "ex2" => EX2,
            "ex3" => EX3,
            "dfull" => DFULL,
            _ => DAFF,
        };
        let eval = ConstraintEvaluator::new(&set(text));
        for _ in 0..200 {
            let (x, y) = random_feasible(name, &mut rng);
            let vals = eval.values(&x, &y);
            assert!(vals.iter().all(|v| v.abs() < 1e-8 || *v < 0.0), "{name}: {vals:?}");
            let cat = &sys.catalog;
            let mut lambda = vec![0.0; cat.r()];
            for (k, kind) in cat.multiplier_kinds.iter().enumerate() {
                if let kkt_hardnet::compiler::MultiplierKind::Slack(label) = kind {
                    let idx = set(text).inequalities.iter().position(|c| &c.label == label).unwrap();
                    lambda[k] = -vals[set(text).equalities.len() + idx];
                }
            }
            let (xs, tau) = sys.lift(&x, &y, &lambda);
            let f = dense_residual(&sys, &xs, &tau, &y);
            for (i, fi) in f.iter().enumerate() {
                if sys.is_feasibility_row(i) {
                    let tol = 1e-10 * (1.0 + xs.iter().chain(&tau).fold(0.0f64, |a, v| a.max(v.abs())));
                    assert!(fi.abs() <= tol, "{name} row {i} {:?}: {fi}", sys.row_kinds[i]);
                }
            }
        }
    }
}

#[test]
fn plan_matches_dense_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (name, sys) in all_systems() {
        let plan = sys.plan();
        let xs: Vec<f64> = (0..sys.catalog.m()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tau: Vec<f64> = (0..sys.n_unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y0: Vec<f64> = (0..sys.catalog.p()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = dense_residual(&sys, &xs, &tau, &y0);
        let mut sparse: Vec<f64> = (0..plan.n_rows)
            .map(|i| {
                kkt_hardnet::compiler::row_constant(plan, i, &xs, &y0)
                    + plan.lin[i].iter().map(|&(j, v)| v * tau[j]).sum::<f64>()
            })
            .collect();
        for (rows, h) in &plan.exps {
            let e = h.iter().map(|&(j, v)| v * tau[j]).sum::<f64>().exp();
            for &(r, g) in rows {
                sparse[r] -= g * e;
            }
        }
        for (a, b) in dense.iter().zip(&sparse) {
            assert!((a - b).abs() < 1e-12, "{name}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn complementarity_chain_evaluates_fb(lmu in -7.0f64..2.5, ls in -7.0f64..2.5) {
        let sys = assemble_kkt(&set(EX3), &CompileOptions::default()).unwrap();
        let (mu, s) = (lmu.exp(), ls.exp());
        let chain = &sys.fb_chains[0];
        let cat = &sys.catalog;
        let off = cat.p() + cat.q();
        let mut lambda = vec![0.0; cat.r()];
        lambda[chain.mu - off] = mu;
        lambda[chain.slack - off] = s;
        let (xs, tau) = sys.lift(&[1.5], &[1.0], &lambda);
        let f = dense_residual(&sys, &xs, &tau, &[1.0]);
        for (i, kind) in sys.row_kinds.iter().enumerate() {
            if !matches!(kind, RowKind::FbHead(_) | RowKind::Stationarity(_) | RowKind::Coupling(_) | RowKind::Feasibility(_)) {
                prop_assert!(f[i].abs() <= 1e-12 * (1.0 + mu + s), "row {i}: {}", f[i]);
            }
        }
        let phi = mu + s - (mu * mu + s * s).sqrt();
        prop_assert!((f[chain.head_row] + phi).abs() <= 1e-12 * (1.0 + mu + s));
    }
}
