//! Log-exp lowering of constraint sets and assembly of the projection KKT system.
//!
//! Every nonlinear monomial `c·Π vᵢ^aᵢ` becomes an unknown `z` with
//! `log z = Σ aᵢ log vᵢ` and `z = e^{log z}`, so the only nonlinearity left is
//! elementwise `exp`. The result is split into three row blocks:
//!
//! ```text
//! A x' + B y + A_x e^{x'} + C_z z + C_λ λ = b + P ŷ0
//! D_y y + D_z z + D_λ λ = d
//! E_y y + E_z z + E_λ λ = G exp(H_y y + H_z z)
//! ```

mod builder;
mod emit;
mod system;

pub use emit::{emit_system, load_system, EmitError};
pub use system::{
    row_constant, AuxDef, AuxKind, ColRef, FbChain, KktSystem, MultiplierKind, RowKind, Segment,
    SparsePlan, StructuredSystem, VariableCatalog, EPS_LOG,
};

use crate::expr::ConstraintSet;
use builder::Builder;

/// How `v = e^{L}` links between unknowns are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuxStyle {
    /// One row `v − e^{L} = 0` per link.
    #[default]
    Compact,
    /// A separate node `n = e^{L}` plus the copy row `v − n = 0`.
    ExpNodes,
}

/// Treatment of equality multipliers that multiply a nonlinear gradient
/// and therefore have to enter a logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MultiplierMode {
    /// `λ = e^{log λ}`, restricting λ to be positive.
    #[default]
    Positive,
    /// `λ = λ⁺ − λ⁻` with both parts positive and `λ⁺λ⁻ = ε_init²`.
    Signed,
    /// Refuse to compile.
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileOptions {
    pub aux_style: AuxStyle,
    pub multipliers: MultiplierMode,
    /// Gauge `λ⁺λ⁻ = ε_init²` of split multipliers, which also start at
    /// `ε_init` so that `λ = 0`. Values near 1 keep the multiplier chains well
    /// scaled.
    pub eps_init: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            aux_style: AuxStyle::Compact,
            multipliers: MultiplierMode::Positive,
            eps_init: 1.0,
        }
    }
}

impl CompileOptions {
    pub fn signed() -> Self {
        CompileOptions {
            multipliers: MultiplierMode::Signed,
            ..Default::default()
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CompileError {
    #[error("no constraints to compile")]
    NoConstraints,
    #[error("`{var}` must be positive to take its logarithm (in `{context}`); declare a positive lower bound")]
    NotPositive { var: String, context: String },
    #[error("unsupported construct: {0}")]
    Unsupported(String),
    #[error("multiplier of `{label}` multiplies a nonlinear gradient and needs a sign split")]
    SignedMultiplier { label: String },
    #[error("duplicate column name `{0}`")]
    Duplicate(String),
}

/// Lowers only the constraints: `h = 0` and `g + s = 0` in structured form.
pub fn logexp_transform(cs: &ConstraintSet, opts: &CompileOptions) -> Result<KktSystem, CompileError> {
    Builder::new(cs, *opts)?.transform()
}

/// Lowers the full projection problem `min ½‖y − ŷ0‖²` subject to `cs`:
/// stationarity, equalities, inequality couplings, feasibility with slacks,
/// and Fischer–Burmeister complementarity `√(μ² + s²) − μ − s = 0`.
pub fn assemble_kkt(cs: &ConstraintSet, opts: &CompileOptions) -> Result<KktSystem, CompileError> {
    Builder::new(cs, *opts)?.assemble()
}
