use std::fmt;

use thiserror::Error;

use super::ast::{Expr, Rational, VarClass};
use super::parse::{parse_constraint, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
}

/// A declared input with an optional box domain.
#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl VarDecl {
    pub fn free(name: impl Into<String>) -> Self {
        VarDecl {
            name: name.into(),
            lower: None,
            upper: None,
        }
    }

    pub fn bounded(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        VarDecl {
            name: name.into(),
            lower: Some(lower),
            upper: Some(upper),
        }
    }

    /// True when the declared domain excludes zero and negatives.
    pub fn is_positive(&self) -> bool {
        self.lower.is_some_and(|l| l > 0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Declarations {
    pub inputs: Vec<VarDecl>,
    pub outputs: Vec<String>,
}

impl Declarations {
    pub fn new(inputs: Vec<VarDecl>, outputs: Vec<&str>) -> Self {
        Declarations {
            inputs,
            outputs: outputs.into_iter().map(String::from).collect(),
        }
    }

    pub fn class_of(&self, name: &str) -> Option<VarClass> {
        if self.inputs.iter().any(|d| d.name == name) {
            Some(VarClass::Input)
        } else if self.outputs.iter().any(|n| n == name) {
            Some(VarClass::Output)
        } else {
            None
        }
    }

    pub fn input(&self, name: &str) -> Option<&VarDecl> {
        self.inputs.iter().find(|d| d.name == name)
    }
}

/// A relation normalized to `lhs REL 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub label: String,
    pub relation: Relation,
    pub lhs: Expr,
    /// Transformations applied while normalizing, e.g. clearing a quotient.
    pub notes: Vec<String>,
}

impl Constraint {
    /// Builds `difference REL 0`, multiplying through by any variable denominator.
    pub fn from_difference(
        label: String,
        relation: Relation,
        difference: Expr,
    ) -> Result<Self, ParseError> {
        let (num, den) = split_fraction(&difference);
        let mut notes = Vec::new();
        let lhs = match den {
            None => difference,
            Some(den) => {
                if relation == Relation::Le {
                    return Err(ParseError::DivisionInInequality { label });
                }
                notes.push(format!("multiplied through by {den}, valid where it is non-zero"));
                num
            }
        };
        Ok(Constraint {
            label,
            relation,
            lhs,
            notes,
        })
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = match self.relation {
            Relation::Eq => "=",
            Relation::Le => "<=",
        };
        if self.label.is_empty() {
            write!(f, "{} {rel} 0", self.lhs)
        } else {
            write!(f, "{} : {} {rel} 0", self.label, self.lhs)
        }
    }
}

/// Numerator and variable denominator, or `None` when there is no variable denominator.
fn split_fraction(e: &Expr) -> (Expr, Option<Expr>) {
    let (n, d) = fraction(e);
    match d {
        Expr::Const(c) if c == 1.0 => (n, None),
        d => (n, Some(d)),
    }
}

fn one() -> Expr {
    Expr::Const(1.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 1.0)
}

fn mul(a: Expr, b: Expr) -> Expr {
    if is_one(&a) {
        b
    } else if is_one(&b) {
        a
    } else {
        Expr::product(vec![a, b])
    }
}

/// Rewrites `e` as `num / den`. Only negative integer powers of non-constant
/// bases produce denominators; negative fractional powers stay as monomials.
fn fraction(e: &Expr) -> (Expr, Expr) {
    match e {
        Expr::Const(_) | Expr::Var { .. } | Expr::Exp(_) | Expr::Log(_) => (e.clone(), one()),
        Expr::Sum(terms) => {
            let parts: Vec<(f64, Expr, Expr)> = terms
                .iter()
                .map(|(c, t)| {
                    let (n, d) = fraction(t);
                    (*c, n, d)
                })
                .collect();
            // Distinct denominators, shared when structurally equal.
            let mut dens: Vec<Expr> = Vec::new();
            for (_, _, d) in &parts {
                if !is_one(d) && !dens.contains(d) {
                    dens.push(d.clone());
                }
            }
            if dens.is_empty() {
                return (e.clone(), one());
            }
            let mut out = Vec::with_capacity(parts.len());
            for (c, n, d) in parts {
                let mut t = n;
                for other in &dens {
                    if *other != d {
                        t = mul(t, other.clone());
                    }
                }
                out.push((c, t));
            }
            let den = dens.into_iter().reduce(mul).unwrap_or_else(one);
            (Expr::Sum(out), den)
        }
        Expr::Product(fs) => {
            let mut num = one();
            let mut den = one();
            for f in fs {
                let (n, d) = fraction(f);
                num = mul(num, n);
                den = mul(den, d);
            }
            (num, den)
        }
        Expr::Power(b, r) => {
            let (n, d) = fraction(b);
            if *r.denom() != 1 {
                if is_one(&d) {
                    return (e.clone(), one());
                }
                return (Expr::power(n, *r), Expr::power(d, *r));
            }
            let k = *r.numer();
            let abs = Rational::from_integer(k.abs());
            let (top, bottom) = if k < 0 { (d, n) } else { (n, d) };
            let raise = |x: Expr| if is_one(&x) { x } else { Expr::power(x, abs) };
            (raise(top), raise(bottom))
        }
    }
}

#[derive(Debug, Error)]
pub enum ConstraintSetError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{equalities} equality constraints exceed the {outputs} output dimensions")]
    TooManyEqualities { equalities: usize, outputs: usize },
    #[error("constraint `{label}` references undeclared variable `{name}`")]
    Undeclared { label: String, name: String },
    #[error(transparent)]
    Declaration(#[from] ParseError),
}

/// Validated collection of constraints over declared inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub decls: Declarations,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(
        decls: Declarations,
        constraints: Vec<Constraint>,
    ) -> Result<Self, ConstraintSetError> {
        let mut seen: Vec<&str> = Vec::new();
        for n in decls.inputs.iter().map(|d| d.name.as_str()).chain(decls.outputs.iter().map(String::as_str)) {
            if seen.contains(&n) {
                return Err(ParseError::DuplicateDeclaration(n.to_string()).into());
            }
            seen.push(n);
        }
        for c in &constraints {
            for (name, _) in c.lhs.variables() {
                if decls.class_of(&name).is_none() {
                    return Err(ConstraintSetError::Undeclared {
                        label: c.label.clone(),
                        name,
                    });
                }
            }
        }
        let (equalities, inequalities): (Vec<_>, Vec<_>) =
            constraints.into_iter().partition(|c| c.relation == Relation::Eq);
        if equalities.len() > decls.outputs.len() {
            return Err(ConstraintSetError::TooManyEqualities {
                equalities: equalities.len(),
                outputs: decls.outputs.len(),
            });
        }
        Ok(ConstraintSet {
            decls,
            equalities,
            inequalities,
        })
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.decls.inputs.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.decls.outputs.iter().map(String::as_str).collect()
    }

    pub fn m(&self) -> usize {
        self.decls.inputs.len()
    }

    pub fn p(&self) -> usize {
        self.decls.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equalities.is_empty() && self.inequalities.is_empty()
    }

    /// All constraints, equalities first.
    pub fn all(&self) -> impl Iterator<Item = &Constraint> {
        self.equalities.iter().chain(self.inequalities.iter())
    }

    /// Parses the line-oriented constraint file format.
    ///
    /// ```text
    /// # comment
    /// inputs: x[1,2]
    /// outputs: y1 y2
    /// h1 : y1 - y2^3 - 12*x^2 + 6*x - 6 = 0
    /// ```
    pub fn parse_file(text: &str) -> Result<Self, ConstraintSetError> {
        let mut decls = Declarations::default();
        let mut have_inputs = false;
        let mut have_outputs = false;
        let mut pending: Vec<(usize, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("inputs:") {
                decls.inputs = parse_input_decls(rest).map_err(|message| ConstraintSetError::Format {
                    line: line_no,
                    message,
                })?;
                have_inputs = true;
            } else if let Some(rest) = line.strip_prefix("outputs:") {
                decls.outputs = rest.split_whitespace().map(String::from).collect();
                have_outputs = true;
            } else {
                pending.push((line_no, line.to_string()));
            }
        }
        if !have_inputs || !have_outputs {
            return Err(ConstraintSetError::Format {
                line: 0,
                message: "missing `inputs:` or `outputs:` header".into(),
            });
        }
        let mut constraints = Vec::with_capacity(pending.len());
        for (k, (line, text)) in pending.into_iter().enumerate() {
            let mut c = parse_constraint(&text, &decls)
                .map_err(|source| ConstraintSetError::Parse { line, source })?;
            if c.label.is_empty() {
                c.label = format!("c{}", k + 1);
            }
            constraints.push(c);
        }
        ConstraintSet::new(decls, constraints)
    }

    /// Renders back into the file format.
    pub fn to_file(&self) -> String {
        let mut out = String::from("inputs:");
        for d in &self.decls.inputs {
            out.push(' ');
            out.push_str(&d.name);
            if let (Some(l), Some(u)) = (d.lower, d.upper) {
                out.push_str(&format!("[{l},{u}]"));
            }
        }
        out.push_str("\noutputs: ");
        out.push_str(&self.decls.outputs.join(" "));
        out.push('\n');
        for c in self.all() {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }
}

fn parse_input_decls(rest: &str) -> Result<Vec<VarDecl>, String> {
    let mut out = Vec::new();
    let mut chars = rest.trim().chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace() || *c == ',') {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut name = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_alphanumeric() || c == '_' {
                name.push(c);
                chars.next();
            } else {
                break;
            }
        }
        if name.is_empty() {
            return Err(format!("invalid input declaration near `{}`", chars.collect::<String>()));
        }
        let mut decl = VarDecl::free(name);
        if chars.peek() == Some(&'[') {
            chars.next();
            let body: String = chars.by_ref().take_while(|c| *c != ']').collect();
            let parts: Vec<&str> = body.split(',').map(str::trim).collect();
            let [lo, hi] = parts.as_slice() else {
                return Err(format!("bounds for `{}` must be [lower,upper]", decl.name));
            };
            let lo: f64 = lo.parse().map_err(|_| format!("invalid lower bound `{lo}`"))?;
            let hi: f64 = hi.parse().map_err(|_| format!("invalid upper bound `{hi}`"))?;
            if lo > hi {
                return Err(format!("empty domain for `{}`", decl.name));
            }
            decl.lower = Some(lo);
            decl.upper = Some(hi);
        }
        out.push(decl);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ast::eval_expr;
    use std::collections::HashMap;

    const DISTILL_C6: &str = "inputs: R[2.5,4.3]\noutputs: L FD\nC6 : R = L / FD\n";

    #[test]
    fn quotient_is_cleared() {
        let cs = ConstraintSet::parse_file(DISTILL_C6).unwrap();
        let c = &cs.equalities[0];
        assert_eq!(c.notes.len(), 1);
        let p: HashMap<String, f64> =
            [("R".into(), 3.0), ("L".into(), 7.0), ("FD".into(), 2.0)].into();
        // R*FD - L
        assert_eq!(eval_expr(&c.lhs, &p).unwrap(), -1.0);
    }

    #[test]
    fn division_in_inequality_rejected() {
        let text = "inputs: x[1,2]\noutputs: y\ng : y / x <= 1\n";
        assert!(matches!(
            ConstraintSet::parse_file(text),
            Err(ConstraintSetError::Parse {
                source: ParseError::DivisionInInequality { .. },
                ..
            })
        ));
    }

    #[test]
    fn constant_division_is_plain_scaling() {
        let text = "inputs: x[1,2]\noutputs: y\nh : y - x/2 = 0\n";
        let cs = ConstraintSet::parse_file(text).unwrap();
        assert!(cs.equalities[0].notes.is_empty());
    }

    #[test]
    fn too_many_equalities() {
        let text = "inputs: x\noutputs: y\na : y = x\nb : y = 2*x\n";
        assert!(matches!(
            ConstraintSet::parse_file(text),
            Err(ConstraintSetError::TooManyEqualities { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let text = "# example\ninputs: x[1,2]\noutputs: y1 y2\nh1 : y1 - y2^3 - 12*x^2 + 6*x - 6 = 0\ng1 : y1 - x <= 0\n";
        let cs = ConstraintSet::parse_file(text).unwrap();
        assert_eq!(cs.equalities.len(), 1);
        assert_eq!(cs.inequalities.len(), 1);
        let again = ConstraintSet::parse_file(&cs.to_file()).unwrap();
        assert_eq!(again.decls, cs.decls);
        assert_eq!(again.to_file(), cs.to_file());
    }
}
