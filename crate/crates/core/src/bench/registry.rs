use super::generate::{gen_distillation_synthetic, gen_example1, gen_example2, gen_example3, N_TRAIN, N_VAL};
use crate::compiler::{CompileOptions, MultiplierMode};
use crate::expr::{ConstraintSet, ConstraintSetError};
use crate::net::{Dataset, OutputScaling};
use crate::solver::PinvMode;

/// How the hardnet model projects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorKind {
    Newton,
    /// Closed form with constant coefficients.
    Affine,
    /// Closed form rebuilt from the inputs of each sample.
    LinearOutput,
}

/// A published result, shown next to ours and never asserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub model: &'static str,
    pub split: &'static str,
    pub mse: f64,
    pub mape: f64,
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub name: &'static str,
    pub table: &'static str,
    pub truth: &'static str,
    /// Constraint file text.
    pub constraints: &'static str,
    pub projector: ProjectorKind,
    pub multipliers: MultiplierMode,
    pub pinv: PinvMode,
    pub hidden: &'static [usize],
    pub scaling: OutputScaling,
    pub omega: f64,
    /// Source and table of the reference values.
    pub citation: &'static str,
    pub reference: &'static [Reference],
    pub generate: fn(u64) -> Dataset,
}

impl BenchmarkSpec {
    pub fn constraint_set(&self) -> Result<ConstraintSet, ConstraintSetError> {
        ConstraintSet::parse_file(self.constraints)
    }

    pub fn compile_options(&self) -> CompileOptions {
        CompileOptions {
            multipliers: self.multipliers,
            ..Default::default()
        }
    }

    pub fn dataset(&self, seed: u64) -> Dataset {
        (self.generate)(seed)
    }
}

const fn r(model: &'static str, split: &'static str, mse: f64, mape: f64, violation: f64) -> Reference {
    Reference {
        model,
        split,
        mse,
        mape,
        violation,
    }
}

const T1: &[Reference] = &[
    r("MLP", "train", 1.361e2, 2.585e-1, 9.61),
    r("MLP", "val", 1.235e2, 2.630e-1, 9.13),
    r("PINN", "train", 6.445e2, 1.664, 1.27e-1),
    r("PINN", "val", 6.066e2, 1.672, 1.24e-1),
    r("KKT-Hardnet", "train", 8.253e1, 6.167e-1, 4.21e-8),
    r("KKT-Hardnet", "val", 7.585e1, 6.134e-1, 3.50e-8),
];

const T2: &[Reference] = &[
    r("MLP", "train", 1.443e1, 0.210, 2.77),
    r("MLP", "val", 1.248e1, 0.192, 2.51),
    r("PINN", "train", 1.045e2, 0.979, 2.81),
    r("PINN", "val", 1.004e2, 0.978, 2.55),
    r("KKT-Hardnet", "train", 9.051, 0.289, 4.60e-7),
    r("KKT-Hardnet", "val", 7.863, 0.266, 4.23e-7),
];

const T3: &[Reference] = &[
    r("MLP", "train", 3.038e-2, 7.269e-2, 8.48e-1),
    r("MLP", "val", 2.767e-2, 7.401e-2, 8.22e-1),
    r("PINN", "train", 1.037, 3.035e-1, 8.32e-3),
    r("PINN", "val", 9.648e-1, 2.948e-1, 8.00e-3),
    r("KKT-Hardnet", "train", 1.059, 3.068e-1, 1.00e-9),
    r("KKT-Hardnet", "val", 9.857e-1, 2.979e-1, 1.00e-9),
];

const T4: &[Reference] = &[
    r("MLP", "train", 1.542e1, 8.358e8, 2.48e-1),
    r("MLP", "val", 1.605e1, 8.361e8, 2.49e-1),
    r("PINN", "train", 1.499e1, 1.308e10, 2.61e-2),
    r("PINN", "val", 1.565e1, 1.307e10, 2.59e-2),
    r("KKT-Hardnet", "train", 1.553e1, 5.914e9, 7.90e-9),
    r("KKT-Hardnet", "val", 1.616e1, 5.829e9, 1.26e-7),
];

const T5: &[Reference] = &[
    r("MLP", "train", 8.996e2, 2.617e8, 2.25e-2),
    r("MLP", "val", 8.614e2, 2.646e8, 2.25e-2),
    r("PINN", "train", 9.061e2, 2.533e9, 2.84e-2),
    r("PINN", "val", 8.675e2, 2.485e9, 2.82e-2),
    r("KKT-Hardnet", "train", 9.752e2, 2.234e9, 1.04e-6),
    r("KKT-Hardnet", "val", 9.336e2, 2.198e9, 1.05e-6),
];

fn distill(seed: u64) -> Dataset {
    gen_distillation_synthetic(seed, N_TRAIN + N_VAL).expect("distillation generator parameters are valid")
}

/// Every registered benchmark, in table order.
pub fn registry() -> Vec<BenchmarkSpec> {
    vec![
        BenchmarkSpec {
            name: "example1",
            table: "t1",
            truth: "y = (8x^3 + 5, 2x - 1), x in [1, 2]",
            constraints: include_str!("../../constraints/example1.txt"),
            projector: ProjectorKind::Newton,
            multipliers: MultiplierMode::Signed,
            pinv: PinvMode::Strict,
            hidden: &[64, 64],
            scaling: OutputScaling::Shift,
            omega: 100.0,
            citation: "paper Table 1",
            reference: T1,
            generate: gen_example1,
        },
        BenchmarkSpec {
            name: "example2",
            table: "t2",
            truth: "y = (x1^2 + x2^2, 4x1^2 + 4x2^3 - 2x2^2), x in [1, 2]^2",
            constraints: include_str!("../../constraints/example2.txt"),
            projector: ProjectorKind::Affine,
            multipliers: MultiplierMode::Positive,
            pinv: PinvMode::Strict,
            hidden: &[64, 64],
            scaling: OutputScaling::Shift,
            omega: 100.0,
            citation: "paper Table 2",
            reference: T2,
            generate: gen_example2,
        },
        BenchmarkSpec {
            name: "example3",
            table: "t3",
            truth: "y = x^2, x in [1, 2] (data violates y <= x)",
            constraints: include_str!("../../constraints/example3.txt"),
            projector: ProjectorKind::Newton,
            multipliers: MultiplierMode::Positive,
            pinv: PinvMode::Strict,
            hidden: &[64, 64],
            scaling: OutputScaling::Shift,
            omega: 100.0,
            citation: "paper Table 3",
            reference: T3,
            generate: gen_example3,
        },
        BenchmarkSpec {
            name: "distill-full",
            table: "t4",
            truth: "synthetic balances C1-C6 (sigmoidal free functions)",
            constraints: include_str!("../../constraints/distill_full.txt"),
            projector: ProjectorKind::Newton,
            multipliers: MultiplierMode::Signed,
            pinv: PinvMode::Strict,
            hidden: &[64, 64],
            scaling: OutputScaling::Standardize,
            omega: 10.0,
            citation: "paper (Aspen data) Table 4",
            reference: T4,
            generate: distill,
        },
        BenchmarkSpec {
            name: "distill-affine",
            table: "t5",
            truth: "synthetic balances, affine subset C1, C4, C5, C6",
            constraints: include_str!("../../constraints/distill_affine.txt"),
            projector: ProjectorKind::LinearOutput,
            multipliers: MultiplierMode::Signed,
            pinv: PinvMode::Strict,
            hidden: &[64, 64],
            scaling: OutputScaling::Standardize,
            omega: 10.0,
            citation: "paper (Aspen data) Table 5",
            reference: T5,
            generate: distill,
        },
    ]
}

pub fn find(name: &str) -> Option<BenchmarkSpec> {
    registry().into_iter().find(|b| b.name == name || b.table == name)
}

pub fn names() -> Vec<&'static str> {
    registry().iter().map(|b| b.name).collect()
}
