//! Slot-indexed evaluation for hot loops (metrics, penalties).

use super::ast::{rational_to_f64, Expr};
use super::constraint::{ConstraintSet, Relation};

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Slot(usize),
    Sum(Vec<(f64, Node)>),
    Product(Vec<Node>),
    PowI(Box<Node>, i32),
    PowF(Box<Node>, f64),
    Exp(Box<Node>),
    Log(Box<Node>),
}

/// An expression with variables resolved to positions in a value slice.
/// Domain violations evaluate to NaN instead of erroring.
#[derive(Debug, Clone)]
pub struct SlotExpr {
    root: Node,
}

impl SlotExpr {
    /// Resolves variable names against `slots`; panics on an unknown name,
    /// which validated constraint sets rule out.
    pub fn compile(e: &Expr, slots: &[&str]) -> SlotExpr {
        SlotExpr {
            root: lower(e, slots),
        }
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        eval(&self.root, vals)
    }
}

fn lower(e: &Expr, slots: &[&str]) -> Node {
    match e {
        Expr::Const(c) => Node::Const(*c),
        Expr::Var { name, .. } => Node::Slot(
            slots
                .iter()
                .position(|s| s == name)
                .unwrap_or_else(|| panic!("variable `{name}` has no slot")),
        ),
        Expr::Sum(ts) => Node::Sum(ts.iter().map(|(c, t)| (*c, lower(t, slots))).collect()),
        Expr::Product(fs) => Node::Product(fs.iter().map(|f| lower(f, slots)).collect()),
        Expr::Power(b, r) => {
            let b = Box::new(lower(b, slots));
            if *r.denom() == 1 {
                Node::PowI(b, *r.numer() as i32)
            } else {
                Node::PowF(b, rational_to_f64(*r))
            }
        }
        Expr::Exp(a) => Node::Exp(Box::new(lower(a, slots))),
        Expr::Log(a) => Node::Log(Box::new(lower(a, slots))),
    }
}

fn eval(n: &Node, v: &[f64]) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Slot(i) => v[*i],
        Node::Sum(ts) => ts.iter().map(|(c, t)| c * eval(t, v)).sum(),
        Node::Product(fs) => fs.iter().map(|f| eval(f, v)).product(),
        Node::PowI(b, k) => eval(b, v).powi(*k),
        Node::PowF(b, r) => {
            let x = eval(b, v);
            if x < 0.0 {
                f64::NAN
            } else {
                x.powf(*r)
            }
        }
        Node::Exp(a) => eval(a, v).exp(),
        Node::Log(a) => {
            let x = eval(a, v);
            if x <= 0.0 {
                f64::NAN
            } else {
                x.ln()
            }
        }
    }
}

/// Residuals of every constraint and their gradients with respect to the
/// outputs. Values are laid out as `[inputs..., outputs...]`.
#[derive(Debug, Clone)]
pub struct ConstraintEvaluator {
    m: usize,
    p: usize,
    relations: Vec<Relation>,
    residuals: Vec<SlotExpr>,
    /// `gradients[k][j] = ∂c_k/∂y_j`.
    gradients: Vec<Vec<SlotExpr>>,
}

impl ConstraintEvaluator {
    pub fn new(cs: &ConstraintSet) -> Self {
        let mut slots: Vec<&str> = cs.input_names();
        slots.extend(cs.output_names());
        let mut relations = Vec::new();
        let mut residuals = Vec::new();
        let mut gradients = Vec::new();
        for c in cs.all() {
            relations.push(c.relation);
            residuals.push(SlotExpr::compile(&c.lhs, &slots));
            gradients.push(
                cs.output_names()
                    .iter()
                    .map(|y| SlotExpr::compile(&c.lhs.diff(y), &slots))
                    .collect(),
            );
        }
        ConstraintEvaluator {
            m: cs.m(),
            p: cs.p(),
            relations,
            residuals,
            gradients,
        }
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    fn point(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.m);
        debug_assert_eq!(y.len(), self.p);
        let mut v = Vec::with_capacity(self.m + self.p);
        v.extend_from_slice(x);
        v.extend_from_slice(y);
        v
    }

    /// Raw constraint values `c_k(x, y)`.
    pub fn values(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let v = self.point(x, y);
        self.residuals.iter().map(|r| r.eval(&v)).collect()
    }

    /// Violations: `|h|` for equalities, `max(g, 0)` for inequalities.
    pub fn violations(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.values(x, y)
            .into_iter()
            .zip(&self.relations)
            .map(|(c, rel)| match rel {
                Relation::Eq => c.abs(),
                Relation::Le => c.max(0.0),
            })
            .collect()
    }

    /// Signed penalty residuals (`h` or `max(g, 0)`) and their output gradients.
    pub fn penalty_terms(&self, x: &[f64], y: &[f64]) -> Vec<(f64, Vec<f64>)> {
        let v = self.point(x, y);
        self.residuals
            .iter()
            .zip(&self.gradients)
            .zip(&self.relations)
            .map(|((r, g), rel)| {
                let c = r.eval(&v);
                let active = match rel {
                    Relation::Eq => c,
                    Relation::Le => c.max(0.0),
                };
                let grad = if active == 0.0 {
                    vec![0.0; self.p]
                } else {
                    g.iter().map(|gj| gj.eval(&v)).collect()
                };
                (active, grad)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ast::eval_expr;
    use crate::expr::constraint::{Declarations, VarDecl};
    use crate::expr::parse::parse_expr;
    use std::collections::HashMap;

    #[test]
    fn matches_tree_evaluation() {
        let d = Declarations::new(vec![VarDecl::bounded("x", 1.0, 2.0)], vec!["y"]);
        let e = parse_expr("exp(x/3) * y^(3/2) - log(x + y)", &d).unwrap();
        let s = SlotExpr::compile(&e, &["x", "y"]);
        let p: HashMap<String, f64> = [("x".into(), 1.3), ("y".into(), 0.7)].into();
        assert_eq!(s.eval(&[1.3, 0.7]), eval_expr(&e, &p).unwrap());
    }
}
