use std::collections::HashMap;
use std::fmt;

use num_rational::Rational64;
use thiserror::Error;

/// Exact rational exponent.
pub type Rational = Rational64;

/// Whether a variable is a network input (known per sample) or an output.
/// `Multiplier` marks Lagrange multipliers and slacks introduced by KKT assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarClass {
    Input,
    Output,
    Multiplier,
}

/// Algebraic expression over declared input and output variables.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var { name: String, class: VarClass },
    /// Weighted sum, `Σ cᵢ·eᵢ`.
    Sum(Vec<(f64, Expr)>),
    Product(Vec<Expr>),
    Power(Box<Expr>, Rational),
    Exp(Box<Expr>),
    Log(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl Expr {
    pub fn var(name: impl Into<String>, class: VarClass) -> Self {
        Expr::Var {
            name: name.into(),
            class,
        }
    }

    /// Builds a sum, dropping zero terms and collapsing trivial cases.
    pub fn sum(terms: Vec<(f64, Expr)>) -> Self {
        let mut kept: Vec<(f64, Expr)> = Vec::with_capacity(terms.len());
        let mut constant = 0.0;
        for (c, e) in terms {
            match e {
                Expr::Const(v) => constant += c * v,
                _ if c == 0.0 => {}
                other => kept.push((c, other)),
            }
        }
        if constant != 0.0 {
            kept.push((1.0, Expr::Const(constant)));
        }
        match kept.len() {
            0 => Expr::Const(0.0),
            1 if kept[0].0 == 1.0 => kept.pop().unwrap().1,
            _ => Expr::Sum(kept),
        }
    }

    /// Builds a product, folding numeric factors.
    pub fn product(factors: Vec<Expr>) -> Self {
        let mut coef = 1.0;
        let mut kept = Vec::with_capacity(factors.len());
        for f in factors {
            match f {
                Expr::Const(v) => coef *= v,
                Expr::Product(inner) => {
                    for g in inner {
                        match g {
                            Expr::Const(v) => coef *= v,
                            other => kept.push(other),
                        }
                    }
                }
                other => kept.push(other),
            }
        }
        if coef == 0.0 {
            return Expr::Const(0.0);
        }
        let body = match kept.len() {
            0 => return Expr::Const(coef),
            1 => kept.pop().unwrap(),
            _ => Expr::Product(kept),
        };
        if coef == 1.0 {
            body
        } else {
            Expr::Sum(vec![(coef, body)])
        }
    }

    pub fn power(base: Expr, exponent: Rational) -> Self {
        if exponent == Rational::from_integer(0) {
            return Expr::Const(1.0);
        }
        if exponent == Rational::from_integer(1) {
            return base;
        }
        if let Expr::Const(c) = base {
            if *exponent.denom() == 1 {
                return Expr::Const(c.powi(*exponent.numer() as i32));
            }
            if c > 0.0 {
                return Expr::Const(c.powf(rational_to_f64(exponent)));
            }
        }
        Expr::Power(Box::new(base), exponent)
    }

    /// Evaluates with a caller-supplied variable lookup.
    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var { name, .. } => lookup(name).ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Sum(terms) => {
                let mut acc = 0.0;
                for (c, e) in terms {
                    acc += c * e.eval_with(lookup)?;
                }
                Ok(acc)
            }
            Expr::Product(fs) => {
                let mut acc = 1.0;
                for f in fs {
                    acc *= f.eval_with(lookup)?;
                }
                Ok(acc)
            }
            Expr::Power(b, r) => pow_checked(b.eval_with(lookup)?, *r),
            Expr::Exp(e) => Ok(e.eval_with(lookup)?.exp()),
            Expr::Log(e) => {
                let v = e.eval_with(lookup)?;
                if v <= 0.0 {
                    Err(EvalError::Domain(format!("log of non-positive value {v}")))
                } else {
                    Ok(v.ln())
                }
            }
        }
    }

    /// Symbolic derivative with respect to the named variable.
    pub fn diff(&self, var: &str) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var { name, .. } => Expr::Const(if name == var { 1.0 } else { 0.0 }),
            Expr::Sum(terms) => Expr::sum(terms.iter().map(|(c, e)| (*c, e.diff(var))).collect()),
            Expr::Product(fs) => {
                let mut terms = Vec::new();
                for i in 0..fs.len() {
                    let d = fs[i].diff(var);
                    if d == Expr::Const(0.0) {
                        continue;
                    }
                    let mut factors: Vec<Expr> = fs
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, f)| f.clone())
                        .collect();
                    factors.push(d);
                    terms.push((1.0, Expr::product(factors)));
                }
                Expr::sum(terms)
            }
            Expr::Power(b, r) => {
                let d = b.diff(var);
                if d == Expr::Const(0.0) {
                    return Expr::Const(0.0);
                }
                let lowered = Expr::power((**b).clone(), r - Rational::from_integer(1));
                Expr::product(vec![Expr::Const(rational_to_f64(*r)), lowered, d])
            }
            Expr::Exp(e) => {
                let d = e.diff(var);
                if d == Expr::Const(0.0) {
                    return Expr::Const(0.0);
                }
                Expr::product(vec![self.clone(), d])
            }
            Expr::Log(e) => {
                let d = e.diff(var);
                if d == Expr::Const(0.0) {
                    return Expr::Const(0.0);
                }
                Expr::product(vec![d, Expr::power((**e).clone(), Rational::from_integer(-1))])
            }
        }
    }

    /// Names of all variables referenced, in first-appearance order.
    pub fn variables(&self) -> Vec<(String, VarClass)> {
        let mut out: Vec<(String, VarClass)> = Vec::new();
        self.visit_vars(&mut |n, c| {
            if !out.iter().any(|(m, _)| m == n) {
                out.push((n.to_string(), c));
            }
        });
        out
    }

    pub fn contains_class(&self, class: VarClass) -> bool {
        let mut found = false;
        self.visit_vars(&mut |_, c| found |= c == class);
        found
    }

    fn visit_vars(&self, f: &mut dyn FnMut(&str, VarClass)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var { name, class } => f(name, *class),
            Expr::Sum(terms) => terms.iter().for_each(|(_, e)| e.visit_vars(f)),
            Expr::Product(fs) => fs.iter().for_each(|e| e.visit_vars(f)),
            Expr::Power(b, _) => b.visit_vars(f),
            Expr::Exp(e) | Expr::Log(e) => e.visit_vars(f),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Sum(terms) if terms.len() > 1 || terms.first().map_or(false, |t| t.0 != 1.0) => 1,
            Expr::Sum(_) => 4,
            Expr::Product(_) => 2,
            Expr::Const(c) if *c < 0.0 => 1,
            Expr::Power(..) => 3,
            _ => 4,
        }
    }

    fn render_at(&self, min_prec: u8) -> String {
        let s = self.to_string();
        if self.precedence() < min_prec {
            format!("({s})")
        } else {
            s
        }
    }
}

/// `base^r` with the domain rules of real arithmetic.
pub fn pow_checked(base: f64, r: Rational) -> Result<f64, EvalError> {
    if *r.denom() == 1 {
        let n = *r.numer();
        if base == 0.0 && n < 0 {
            return Err(EvalError::Domain("0 raised to a negative power".into()));
        }
        Ok(base.powi(n as i32))
    } else if base < 0.0 {
        Err(EvalError::Domain(format!(
            "negative base {base} with non-integer exponent {r}"
        )))
    } else if base == 0.0 && r < Rational::from_integer(0) {
        Err(EvalError::Domain("0 raised to a negative power".into()))
    } else {
        Ok(base.powf(rational_to_f64(r)))
    }
}

/// Evaluates `e` at a named point.
pub fn eval_expr(e: &Expr, point: &HashMap<String, f64>) -> Result<f64, EvalError> {
    e.eval_with(&|n| point.get(n).copied())
}

fn fmt_number(c: f64) -> String {
    if c == 0.0 {
        "0".to_string()
    } else {
        format!("{c}")
    }
}

fn fmt_exponent(r: Rational) -> String {
    if *r.denom() == 1 {
        if *r.numer() < 0 {
            format!("({})", r.numer())
        } else {
            format!("{}", r.numer())
        }
    } else {
        format!("({}/{})", r.numer(), r.denom())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{}", fmt_number(*c)),
            Expr::Var { name, .. } => write!(f, "{name}"),
            Expr::Sum(terms) => {
                if terms.is_empty() {
                    return write!(f, "0");
                }
                for (i, (c, e)) in terms.iter().enumerate() {
                    let signed = match e {
                        Expr::Const(v) => c * v,
                        _ => *c,
                    };
                    let (neg, mag) = if signed < 0.0 { (true, -signed) } else { (false, signed) };
                    if i == 0 {
                        if neg {
                            write!(f, "-")?;
                        }
                    } else if neg {
                        write!(f, " - ")?;
                    } else {
                        write!(f, " + ")?;
                    }
                    if let Expr::Const(_) = e {
                        write!(f, "{}", fmt_number(mag))?;
                    } else if mag == 1.0 {
                        write!(f, "{}", e.render_at(2))?;
                    } else {
                        write!(f, "{}*{}", fmt_number(mag), e.render_at(3))?;
                    }
                }
                Ok(())
            }
            Expr::Product(fs) => {
                let parts: Vec<String> = fs.iter().map(|e| e.render_at(2)).collect();
                write!(f, "{}", parts.join("*"))
            }
            Expr::Power(b, r) => {
                let base = match **b {
                    Expr::Var { .. } | Expr::Exp(_) | Expr::Log(_) => b.to_string(),
                    Expr::Const(c) if c >= 0.0 => b.to_string(),
                    _ => format!("({b})"),
                };
                write!(f, "{base}^{}", fmt_exponent(*r))
            }
            Expr::Exp(e) => write!(f, "exp({e})"),
            Expr::Log(e) => write!(f, "log({e})"),
        }
    }
}
