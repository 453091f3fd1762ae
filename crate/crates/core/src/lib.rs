//! Neural networks with hard algebraic constraints enforced by a
//! differentiable KKT projection layer.
//!
//! Constraints are parsed ([`expr`]), rewritten into a structured system of
//! linear and exponential equations ([`compiler`]), solved per sample by a
//! regularized Gauss-Newton iteration ([`solver`]), and embedded after a
//! small MLP backbone ([`net`]). [`bench`] holds the reference problems.

pub mod bench;
pub mod compiler;
pub mod expr;
pub mod net;
pub mod solver;
