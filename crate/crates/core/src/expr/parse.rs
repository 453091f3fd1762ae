//! Recursive-descent parser for constraint text.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! relation := expr ('=' | '<=' | '≤') expr
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := ('-' | '+') unary | power
//! power    := primary ('^' exponent)?
//! exponent := ['-'] number | '(' ['-'] number ['/' ['-'] number] ')' ; right-assoc '^'
//! primary  := number | ident | ('exp' | 'log') '(' expr ')' | '(' expr ')'
//! ```

use num_rational::Rational64;
use thiserror::Error;

use super::ast::{Expr, Rational};
use super::constraint::{Constraint, Declarations, Relation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at column {pos}: expected {expected}, found {found}")]
    Syntax {
        pos: usize,
        expected: String,
        found: String,
    },
    #[error("undeclared variable `{name}` at column {pos}")]
    Undeclared { name: String, pos: usize },
    #[error("unsupported relation `{rel}` at column {pos}; write g >= 0 as -g <= 0")]
    UnsupportedRelation { rel: String, pos: usize },
    #[error("division by a variable expression is not allowed in inequality `{label}`")]
    DivisionInInequality { label: String },
    #[error("duplicate variable declaration `{0}`")]
    DuplicateDeclaration(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eq,
    Le,
    Ge,
    Lt,
    Gt,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(s) => format!("number `{s}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            if s.matches('.').count() > 1 {
                return Err(ParseError::Syntax {
                    pos,
                    expected: "number".into(),
                    found: format!("`{s}`"),
                });
            }
            out.push((Tok::Num(s), pos));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            continue;
        }
        let tok = match c {
            '+' => Tok::Plus,
            '-' | '−' => Tok::Minus,
            '*' | '·' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    i += 1;
                }
                Tok::Eq
            }
            '≤' => Tok::Le,
            '≥' => Tok::Ge,
            '<' | '>' => {
                let le = chars.get(i + 1) == Some(&'=');
                if le {
                    i += 1;
                }
                match (c, le) {
                    ('<', true) => Tok::Le,
                    ('<', false) => Tok::Lt,
                    ('>', true) => Tok::Ge,
                    _ => Tok::Gt,
                }
            }
            other => {
                return Err(ParseError::Syntax {
                    pos,
                    expected: "operator, number or identifier".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        out.push((tok, pos));
        i += 1;
    }
    out.push((Tok::End, chars.len() + 1));
    Ok(out)
}

/// Parses a decimal literal exactly.
fn literal_to_rational(s: &str) -> Option<Rational> {
    if s.contains(['e', 'E']) {
        return None;
    }
    let (int, frac) = match s.split_once('.') {
        Some((a, b)) => (a, b),
        None => (s, ""),
    };
    let digits = format!("{int}{frac}");
    let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let denom = 10i64.checked_pow(frac.len() as u32)?;
    Some(Rational64::new(numer, denom))
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    decls: &'a Declarations,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            pos: self.pos(),
            expected: expected.into(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![(1.0, self.term()?)];
        loop {
            let sign = match self.peek() {
                Tok::Plus => 1.0,
                Tok::Minus => -1.0,
                _ => break,
            };
            self.bump();
            terms.push((sign, self.term()?));
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap().1
        } else {
            Expr::Sum(terms)
        })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut factors = vec![self.unary()?];
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    factors.push(self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    let d = self.unary()?;
                    factors.push(match d {
                        Expr::Const(c) => Expr::Const(1.0 / c),
                        other => Expr::Power(Box::new(other), Rational::from_integer(-1)),
                    });
                }
                _ => break,
            }
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Expr::Product(factors)
        })
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                let inner = self.unary()?;
                Ok(match inner {
                    Expr::Const(c) => Expr::Const(-c),
                    other => Expr::Sum(vec![(-1.0, other)]),
                })
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let r = self.exponent()?;
            Ok(match base {
                Expr::Const(c) if *r.denom() == 1 => Expr::Const(c.powi(*r.numer() as i32)),
                other => Expr::Power(Box::new(other), r),
            })
        } else {
            Ok(base)
        }
    }

    fn signed_number(&mut self) -> Result<Rational, ParseError> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let pos = self.pos();
        match self.bump() {
            Tok::Num(s) => {
                let r = literal_to_rational(&s).ok_or(ParseError::Syntax {
                    pos,
                    expected: "exact rational exponent".into(),
                    found: format!("number `{s}`"),
                })?;
                Ok(if neg { -r } else { r })
            }
            other => Err(ParseError::Syntax {
                pos,
                expected: "numeric exponent".into(),
                found: other.describe(),
            }),
        }
    }

    fn exponent(&mut self) -> Result<Rational, ParseError> {
        let r = if *self.peek() == Tok::LParen {
            self.bump();
            let num = self.signed_number()?;
            let r = if *self.peek() == Tok::Slash {
                let pos = self.pos();
                self.bump();
                let den = self.signed_number()?;
                if den == Rational::from_integer(0) {
                    return Err(ParseError::Syntax {
                        pos,
                        expected: "non-zero denominator".into(),
                        found: "0".into(),
                    });
                }
                num / den
            } else {
                num
            };
            self.expect(Tok::RParen, "`)`")?;
            r
        } else {
            self.signed_number()?
        };
        if *self.peek() == Tok::Caret {
            let pos = self.pos();
            self.bump();
            let outer = self.exponent()?;
            if *outer.denom() != 1 || *outer.numer() < 0 {
                return Err(ParseError::Syntax {
                    pos,
                    expected: "non-negative integer in chained exponent".into(),
                    found: outer.to_string(),
                });
            }
            Ok(num_traits_pow(r, *outer.numer() as u32))
        } else {
            Ok(r)
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(s) => {
                self.bump();
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    pos,
                    expected: "number".into(),
                    found: format!("`{s}`"),
                })?;
                Ok(Expr::Const(v))
            }
            Tok::Ident(name) => {
                self.bump();
                if (name == "exp" || name == "log") && *self.peek() == Tok::LParen {
                    self.bump();
                    let inner = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(if name == "exp" {
                        Expr::Exp(Box::new(inner))
                    } else {
                        Expr::Log(Box::new(inner))
                    });
                }
                let class = self
                    .decls
                    .class_of(&name)
                    .ok_or(ParseError::Undeclared { name: name.clone(), pos })?;
                Ok(Expr::Var { name, class })
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(self.unexpected("number, variable, function or `(`")),
        }
    }
}

fn num_traits_pow(r: Rational, n: u32) -> Rational {
    let mut acc = Rational::from_integer(1);
    for _ in 0..n {
        acc *= r;
    }
    acc
}

/// Parses a standalone expression over the declared variables.
pub fn parse_expr(text: &str, decls: &Declarations) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
        decls,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("operator or end of input"));
    }
    Ok(e)
}

/// Parses `[label :] lhs REL rhs` into a normalized constraint `lhs - rhs REL 0`.
pub fn parse_constraint(text: &str, decls: &Declarations) -> Result<Constraint, ParseError> {
    let (label, body, offset) = match text.split_once(':') {
        Some((l, b)) => (l.trim().to_string(), b, l.chars().count() + 1),
        None => (String::new(), text, 0),
    };
    let shift = |e: ParseError| match e {
        ParseError::Syntax { pos, expected, found } => ParseError::Syntax {
            pos: pos + offset,
            expected,
            found,
        },
        ParseError::Undeclared { name, pos } => ParseError::Undeclared {
            name,
            pos: pos + offset,
        },
        ParseError::UnsupportedRelation { rel, pos } => ParseError::UnsupportedRelation {
            rel,
            pos: pos + offset,
        },
        other => other,
    };
    let mut p = Parser {
        toks: tokenize(body).map_err(shift)?,
        at: 0,
        decls,
    };
    let lhs = p.expr().map_err(shift)?;
    let pos = p.pos();
    let relation = match p.bump() {
        Tok::Eq => Relation::Eq,
        Tok::Le => Relation::Le,
        t @ (Tok::Ge | Tok::Lt | Tok::Gt) => {
            let rel = match t {
                Tok::Ge => ">=",
                Tok::Lt => "<",
                _ => ">",
            };
            return Err(shift(ParseError::UnsupportedRelation {
                rel: rel.into(),
                pos,
            }));
        }
        other => {
            return Err(shift(ParseError::Syntax {
                pos,
                expected: "`=` or `<=`".into(),
                found: other.describe(),
            }))
        }
    };
    let rhs = p.expr().map_err(shift)?;
    if *p.peek() != Tok::End {
        return Err(shift(p.unexpected("end of constraint")));
    }
    let difference = match rhs {
        Expr::Const(c) if c == 0.0 => lhs,
        rhs => Expr::Sum(vec![(1.0, lhs), (-1.0, rhs)]),
    };
    Constraint::from_difference(label, relation, difference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::constraint::VarDecl;
    use std::collections::HashMap;

    fn decls() -> Declarations {
        Declarations {
            inputs: vec![VarDecl::bounded("x", 1.0, 2.0)],
            outputs: vec!["y1".into(), "y2".into()],
        }
    }

    fn at(e: &Expr, x: f64, y1: f64, y2: f64) -> f64 {
        let p: HashMap<String, f64> =
            [("x".to_string(), x), ("y1".to_string(), y1), ("y2".to_string(), y2)].into();
        super::super::ast::eval_expr(e, &p).unwrap()
    }

    #[test]
    fn precedence_power_over_unary_minus() {
        let e = parse_expr("-x^2", &decls()).unwrap();
        assert_eq!(at(&e, 3.0, 0.0, 0.0), -9.0);
        let e = parse_expr("2^3^2", &decls()).unwrap();
        assert_eq!(at(&e, 0.0, 0.0, 0.0), 512.0);
    }

    #[test]
    fn rational_exponent() {
        let e = parse_expr("x^(1/2)", &decls()).unwrap();
        assert!(matches!(&e, Expr::Power(_, r) if *r == Rational::new(1, 2)));
        let e = parse_expr("x^-2", &decls()).unwrap();
        assert!((at(&e, 2.0, 0.0, 0.0) - 0.25).abs() < 1e-15);
        let e = parse_expr("x^0.5", &decls()).unwrap();
        assert!(matches!(&e, Expr::Power(_, r) if *r == Rational::new(1, 2)));
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_expr("y1 + * x", &decls()) {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_expr("(x + y1", &decls()), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn undeclared_variable_is_reported() {
        let err = parse_constraint("x1 = 0", &decls()).unwrap_err();
        assert_eq!(
            err,
            ParseError::Undeclared {
                name: "x1".into(),
                pos: 1
            }
        );
    }

    #[test]
    fn ge_relation_rejected() {
        assert!(matches!(
            parse_constraint("y1 >= x", &decls()),
            Err(ParseError::UnsupportedRelation { .. })
        ));
    }

    #[test]
    fn label_prefix() {
        let c = parse_constraint("h1 : y1 - y2^3 - 12*x^2 + 6*x - 6 = 0", &decls()).unwrap();
        assert_eq!(c.label, "h1");
        assert_eq!(c.relation, Relation::Eq);
    }
}
