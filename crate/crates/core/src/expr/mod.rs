//! Algebraic constraint expressions: AST, parser, normalization and evaluation.

mod ast;
mod compiled;
mod constraint;
mod normalize;
mod parse;

pub use ast::{eval_expr, pow_checked, rational_to_f64, EvalError, Expr, Rational, VarClass};
pub use compiled::{ConstraintEvaluator, SlotExpr};
pub use constraint::{
    Constraint, ConstraintSet, ConstraintSetError, Declarations, Relation, VarDecl,
};
pub use normalize::{normalize, Base, Monomial, Polynomial};
pub use parse::{parse_constraint, parse_expr, ParseError};
