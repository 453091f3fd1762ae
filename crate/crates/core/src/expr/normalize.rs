//! Flattening of expressions into sums of signed monomials.

use std::fmt;

use super::ast::{rational_to_f64, Expr, Rational, VarClass};

/// Highest integer power of a multi-term sum that is expanded in place.
const MAX_EXPANSION: i64 = 8;

/// Multiplicative base of a monomial factor.
#[derive(Debug, Clone, PartialEq)]
pub enum Base {
    Var(String, VarClass),
    /// `exp(inner)`, inner already normalized.
    Exp(Box<Expr>),
    /// `log(inner)`, inner already normalized.
    Log(Box<Expr>),
    /// A sum that could not be flattened, e.g. `(a + b)^(1/2)`; kept opaque.
    Composite(Box<Expr>),
}

impl Base {
    fn to_expr(&self) -> Expr {
        match self {
            Base::Var(n, c) => Expr::var(n.clone(), *c),
            Base::Exp(e) => Expr::Exp(e.clone()),
            Base::Log(e) => Expr::Log(e.clone()),
            Base::Composite(e) => (**e).clone(),
        }
    }

    fn sort_key(&self) -> (u8, String) {
        match self {
            Base::Var(n, c) => (*c as u8, n.clone()),
            Base::Exp(e) => (10, e.to_string()),
            Base::Log(e) => (11, e.to_string()),
            Base::Composite(e) => (12, e.to_string()),
        }
    }
}

/// `coef · Π baseᵢ^aᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub factors: Vec<(Base, Rational)>,
}

impl Monomial {
    pub fn constant(c: f64) -> Self {
        Monomial {
            coef: c,
            factors: Vec::new(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    /// The single variable if this monomial is `coef·v`.
    pub fn as_linear_var(&self) -> Option<&str> {
        match self.factors.as_slice() {
            [(Base::Var(n, _), r)] if *r == Rational::from_integer(1) => Some(n),
            _ => None,
        }
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut factors = self.factors.clone();
        for (b, r) in &other.factors {
            push_factor(&mut factors, b.clone(), *r);
        }
        sort_factors(&mut factors);
        Monomial {
            coef: self.coef * other.coef,
            factors,
        }
    }

    fn to_expr(&self) -> Expr {
        let mut fs = vec![Expr::Const(self.coef)];
        for (b, r) in &self.factors {
            fs.push(Expr::power(b.to_expr(), *r));
        }
        Expr::product(fs)
    }
}

fn push_factor(factors: &mut Vec<(Base, Rational)>, b: Base, r: Rational) {
    if let Some(slot) = factors.iter_mut().find(|(fb, _)| *fb == b) {
        slot.1 += r;
    } else {
        factors.push((b, r));
    }
    factors.retain(|(_, r)| *r != Rational::from_integer(0));
}

fn sort_factors(factors: &mut [(Base, Rational)]) {
    factors.sort_by_key(|(b, _)| b.sort_key());
}

/// Sum of monomials with like terms merged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn constant(c: f64) -> Self {
        let mut p = Polynomial::default();
        p.add_term(Monomial::constant(c));
        p
    }

    pub fn add_term(&mut self, m: Monomial) {
        if m.coef == 0.0 {
            return;
        }
        if let Some(t) = self.terms.iter_mut().find(|t| t.factors == m.factors) {
            t.coef += m.coef;
        } else {
            self.terms.push(m);
        }
        self.terms.retain(|t| t.coef != 0.0);
    }

    pub fn scaled(&self, c: f64) -> Polynomial {
        let mut out = Polynomial::default();
        for t in &self.terms {
            out.add_term(Monomial {
                coef: t.coef * c,
                factors: t.factors.clone(),
            });
        }
        out
    }

    pub fn add(&mut self, other: &Polynomial) {
        for t in &other.terms {
            self.add_term(t.clone());
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::default();
        for a in &self.terms {
            for b in &other.terms {
                out.add_term(a.mul(b));
            }
        }
        out
    }

    pub fn constant_term(&self) -> f64 {
        self.terms.iter().filter(|t| t.is_constant()).map(|t| t.coef).sum()
    }

    pub fn single_monomial(&self) -> Option<&Monomial> {
        match self.terms.as_slice() {
            [m] => Some(m),
            _ => None,
        }
    }

    /// Flattens `e`.
    pub fn from_expr(e: &Expr) -> Polynomial {
        match e {
            Expr::Const(c) => Polynomial::constant(*c),
            Expr::Var { name, class } => Polynomial {
                terms: vec![Monomial {
                    coef: 1.0,
                    factors: vec![(Base::Var(name.clone(), *class), Rational::from_integer(1))],
                }],
            },
            Expr::Sum(terms) => {
                let mut out = Polynomial::default();
                for (c, t) in terms {
                    out.add(&Polynomial::from_expr(t).scaled(*c));
                }
                out
            }
            Expr::Product(fs) => fs
                .iter()
                .fold(Polynomial::constant(1.0), |acc, f| acc.mul(&Polynomial::from_expr(f))),
            Expr::Power(b, r) => Polynomial::from_expr(b).pow(*r),
            Expr::Exp(inner) => Polynomial::opaque(Base::Exp(Box::new(normalize(inner)))),
            Expr::Log(inner) => Polynomial::opaque(Base::Log(Box::new(normalize(inner)))),
        }
    }

    fn opaque(b: Base) -> Polynomial {
        Polynomial {
            terms: vec![Monomial {
                coef: 1.0,
                factors: vec![(b, Rational::from_integer(1))],
            }],
        }
    }

    fn pow(&self, r: Rational) -> Polynomial {
        if r == Rational::from_integer(0) {
            return Polynomial::constant(1.0);
        }
        if self.terms.is_empty() {
            return Polynomial::default();
        }
        if let Some(m) = self.single_monomial() {
            if *r.denom() == 1 || m.coef > 0.0 {
                let coef = if *r.denom() == 1 {
                    m.coef.powi(*r.numer() as i32)
                } else {
                    m.coef.powf(rational_to_f64(r))
                };
                let mut factors: Vec<(Base, Rational)> =
                    m.factors.iter().map(|(b, a)| (b.clone(), a * r)).collect();
                sort_factors(&mut factors);
                return Polynomial {
                    terms: vec![Monomial { coef, factors }],
                };
            }
        }
        if *r.denom() == 1 && *r.numer() > 0 && *r.numer() <= MAX_EXPANSION {
            let mut acc = self.clone();
            for _ in 1..*r.numer() {
                acc = acc.mul(self);
            }
            return acc;
        }
        Polynomial {
            terms: vec![Monomial {
                coef: 1.0,
                factors: vec![(Base::Composite(Box::new(self.to_expr())), r)],
            }],
        }
    }

    pub fn to_expr(&self) -> Expr {
        Expr::sum(self.terms.iter().map(|t| (1.0, t.to_expr())).collect())
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_expr())
    }
}

/// Rewrites `e` as a sum of signed monomials; exp, log and unflattenable
/// powers of sums remain as opaque factors.
pub fn normalize(e: &Expr) -> Expr {
    Polynomial::from_expr(e).to_expr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::constraint::{Declarations, VarDecl};
    use crate::expr::parse::parse_expr;

    fn decls() -> Declarations {
        Declarations::new(vec![VarDecl::bounded("x", 1.0, 2.0)], vec!["y1", "y2"])
    }

    #[test]
    fn example_constraint_monomials() {
        let e = parse_expr("y1 - y2^3 - 12*x^2 + 6*x - 6", &decls()).unwrap();
        let p = Polynomial::from_expr(&e);
        let coefs: Vec<f64> = p.terms.iter().map(|t| t.coef).collect();
        assert_eq!(coefs, vec![1.0, -1.0, -12.0, 6.0, -6.0]);
    }

    #[test]
    fn identity() {
        let e = parse_expr("x", &decls()).unwrap();
        let p = Polynomial::from_expr(&e);
        assert_eq!(p.terms.len(), 1);
        assert_eq!(p.terms[0].as_linear_var(), Some("x"));
    }

    #[test]
    fn like_terms_merge_and_cancel() {
        let e = parse_expr("(y1 + x)^2 - y1^2 - x^2 - 2*x*y1", &decls()).unwrap();
        assert!(Polynomial::from_expr(&e).terms.is_empty());
    }

    #[test]
    fn root_of_sum_is_composite() {
        let e = parse_expr("(y1^2 + y2^2)^(1/2)", &decls()).unwrap();
        let p = Polynomial::from_expr(&e);
        let m = p.single_monomial().unwrap();
        assert!(matches!(m.factors[0].0, Base::Composite(_)));
        assert_eq!(m.factors[0].1, Rational::new(1, 2));
    }

    #[test]
    fn power_of_monomial_distributes() {
        let e = parse_expr("(2*x*y1^2)^(1/2)", &decls()).unwrap();
        let p = Polynomial::from_expr(&e);
        let m = p.single_monomial().unwrap();
        assert!((m.coef - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.factors.len(), 2);
    }
}
