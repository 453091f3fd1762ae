//! Plain-text serialization of compiled systems.
//!
//! Floats use Rust's shortest round-trip formatting, so `emit(load(emit(s)))`
//! reproduces the original bytes.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::system::{
    AuxDef, AuxKind, ColRef, FbChain, KktSystem, MultiplierKind, RowKind, Segment,
    StructuredSystem, VariableCatalog,
};

const HEADER: &str = "# kkt-hardnet system v1";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EmitError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

fn col_token(c: ColRef) -> String {
    let s = match c.seg {
        Segment::Input => "x",
        Segment::Y => "y",
        Segment::Z => "z",
        Segment::Lambda => "l",
    };
    format!("{s}{}", c.idx)
}

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

fn list(out: &mut String, key: &str, items: &[String]) {
    if items.is_empty() {
        writeln!(out, "{key}:").unwrap();
    } else {
        writeln!(out, "{key}: {}", items.join(" ")).unwrap();
    }
}

fn vector(out: &mut String, key: &str, v: &DVector<f64>) {
    list(out, key, &v.iter().map(f64::to_string).collect::<Vec<_>>());
}

fn matrix(out: &mut String, key: &str, m: &DMatrix<f64>) {
    writeln!(out, "{key}: {}x{}", m.nrows(), m.ncols()).unwrap();
    for i in 0..m.nrows() {
        writeln!(out, "  {}", join(m.row(i).iter())).unwrap();
    }
}

/// Renders a system as text.
pub fn emit_system(sys: &KktSystem) -> String {
    let cat = &sys.catalog;
    let s = &sys.structured;
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "kind: {}", if sys.is_kkt { "kkt" } else { "transform" }).unwrap();
    writeln!(out, "eps_init: {}", sys.eps_init).unwrap();
    writeln!(out, "base_inputs: {}", cat.base_inputs).unwrap();
    list(&mut out, "inputs", &cat.inputs);
    list(&mut out, "input_kinds", &cat.input_kinds.iter().map(|k| k.tag().to_string()).collect::<Vec<_>>());
    list(&mut out, "outputs", &cat.outputs);
    list(&mut out, "aux", &cat.aux);
    list(&mut out, "aux_kinds", &cat.aux_kinds.iter().map(|k| k.tag().to_string()).collect::<Vec<_>>());
    list(&mut out, "multipliers", &cat.multipliers);
    list(&mut out, "multiplier_kinds", &cat.multiplier_kinds.iter().map(|k| k.tag()).collect::<Vec<_>>());
    list(
        &mut out,
        "positive",
        &cat.positive_multipliers.iter().map(|p| u8::from(*p).to_string()).collect::<Vec<_>>(),
    );
    writeln!(out, "defs: {}", cat.defs.len()).unwrap();
    for (c, d) in &cat.defs {
        let body = match d {
            AuxDef::Linear { terms, constant } => {
                let mut b = format!("linear {constant}");
                for (t, w) in terms {
                    write!(b, " {}={w}", col_token(*t)).unwrap();
                }
                b
            }
            AuxDef::Product { factors, log } => {
                let mut b = format!("product {}", col_token(*log));
                for (t, e, a) in factors {
                    write!(b, " {}{}={a}", if *e { "e" } else { "" }, col_token(*t)).unwrap();
                }
                b
            }
            AuxDef::Log { of } => format!("log {}", col_token(*of)),
            AuxDef::Exp { arg } => format!("exp {}", col_token(*arg)),
        };
        writeln!(out, "  {} {body}", col_token(*c)).unwrap();
    }
    list(&mut out, "rows", &sys.row_kinds.iter().map(RowKind::tag).collect::<Vec<_>>());
    writeln!(out, "fb: {}", sys.fb_chains.len()).unwrap();
    for f in &sys.fb_chains {
        let mut line = format!("  {} {} {} {}", f.label, f.head_row, f.mu, f.slack);
        for a in &f.aux {
            write!(line, " {a}").unwrap();
        }
        writeln!(out, "{line}").unwrap();
    }
    let (n1, n2, n3) = s.block_sizes();
    writeln!(out, "blocks: {n1} {n2} {n3} {}", s.n_exp()).unwrap();
    matrix(&mut out, "A", &s.a);
    matrix(&mut out, "B", &s.b_y);
    matrix(&mut out, "A_x", &s.a_x);
    matrix(&mut out, "C_z", &s.c_z);
    matrix(&mut out, "C_l", &s.c_l);
    vector(&mut out, "b", &s.b);
    matrix(&mut out, "P", &s.p_y0);
    matrix(&mut out, "D_y", &s.d_y);
    matrix(&mut out, "D_z", &s.d_z);
    matrix(&mut out, "D_l", &s.d_l);
    vector(&mut out, "d", &s.d);
    matrix(&mut out, "E_y", &s.e_y);
    matrix(&mut out, "E_z", &s.e_z);
    matrix(&mut out, "E_l", &s.e_l);
    matrix(&mut out, "G", &s.g);
    matrix(&mut out, "H_y", &s.h_y);
    matrix(&mut out, "H_z", &s.h_z);
    out
}

struct Reader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, EmitError> {
        Err(EmitError::Format {
            line: self.pos,
            message: message.into(),
        })
    }

    fn next(&mut self) -> Result<&'a str, EmitError> {
        let l = self.lines.get(self.pos).copied();
        self.pos += 1;
        match l {
            Some(l) => Ok(l),
            None => self.err("unexpected end of input"),
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str, EmitError> {
        let l = self.next()?;
        match l.strip_prefix(key).and_then(|r| r.strip_prefix(':')) {
            Some(rest) => Ok(rest.trim()),
            None => self.err(format!("expected `{key}:`")),
        }
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, EmitError> {
        let v = self.field(key)?;
        self.num(v)
    }

    fn words(&mut self, key: &str) -> Result<Vec<String>, EmitError> {
        Ok(self.field(key)?.split_whitespace().map(str::to_string).collect())
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T, EmitError> {
        match s.parse() {
            Ok(v) => Ok(v),
            Err(_) => self.err(format!("bad number `{s}`")),
        }
    }

    fn col(&self, s: &str) -> Result<ColRef, EmitError> {
        let seg = match s.chars().next() {
            Some('x') => Segment::Input,
            Some('y') => Segment::Y,
            Some('z') => Segment::Z,
            Some('l') => Segment::Lambda,
            _ => return self.err(format!("bad column `{s}`")),
        };
        Ok(ColRef::new(seg, self.num(&s[1..])?))
    }

    fn vector(&mut self, key: &str) -> Result<DVector<f64>, EmitError> {
        let w = self.words(key)?;
        let v = w.iter().map(|t| self.num(t)).collect::<Result<Vec<f64>, _>>()?;
        Ok(DVector::from_vec(v))
    }

    fn matrix(&mut self, key: &str) -> Result<DMatrix<f64>, EmitError> {
        let dims = self.field(key)?;
        let Some((r, c)) = dims.split_once('x') else {
            return self.err("expected `rows x cols`");
        };
        let (r, c): (usize, usize) = (self.num(r)?, self.num(c)?);
        let mut m = DMatrix::zeros(r, c);
        for i in 0..r {
            let l = self.next()?;
            let vals = l.split_whitespace().map(|t| self.num(t)).collect::<Result<Vec<f64>, _>>()?;
            if vals.len() != c {
                return self.err(format!("expected {c} entries"));
            }
            for (j, v) in vals.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

/// Parses the output of [`emit_system`].
pub fn load_system(text: &str) -> Result<KktSystem, EmitError> {
    let mut r = Reader {
        lines: text.lines().collect(),
        pos: 0,
    };
    if r.next()? != HEADER {
        return r.err("missing header");
    }
    let is_kkt = match r.field("kind")? {
        "kkt" => true,
        "transform" => false,
        other => return r.err(format!("unknown kind `{other}`")),
    };
    let eps_init = r.scalar("eps_init")?;
    let base_inputs = r.scalar("base_inputs")?;
    let inputs = r.words("inputs")?;
    let input_kinds = r
        .words("input_kinds")?
        .iter()
        .map(|t| AuxKind::from_tag(t).ok_or(()))
        .collect::<Result<Vec<_>, _>>()
        .or_else(|_| r.err("bad input kind"))?;
    let outputs = r.words("outputs")?;
    let aux = r.words("aux")?;
    let aux_kinds = r
        .words("aux_kinds")?
        .iter()
        .map(|t| AuxKind::from_tag(t).ok_or(()))
        .collect::<Result<Vec<_>, _>>()
        .or_else(|_| r.err("bad aux kind"))?;
    let multipliers = r.words("multipliers")?;
    let multiplier_kinds = r
        .words("multiplier_kinds")?
        .iter()
        .map(|t| MultiplierKind::from_tag(t).ok_or(()))
        .collect::<Result<Vec<_>, _>>()
        .or_else(|_| r.err("bad multiplier kind"))?;
    let positive_multipliers = r.words("positive")?.iter().map(|t| t == "1").collect();
    let n_defs: usize = r.scalar("defs")?;
    let mut defs = Vec::with_capacity(n_defs);
    for _ in 0..n_defs {
        let l = r.next()?;
        let w: Vec<&str> = l.split_whitespace().collect();
        if w.len() < 3 {
            return r.err("truncated definition");
        }
        let target = r.col(w[0])?;
        let def = match w[1] {
            "linear" => {
                let constant = r.num(w[2])?;
                let mut terms = Vec::new();
                for t in &w[3..] {
                    let Some((c, v)) = t.split_once('=') else { return r.err("bad term") };
                    terms.push((r.col(c)?, r.num(v)?));
                }
                AuxDef::Linear { terms, constant }
            }
            "product" => {
                let log = r.col(w[2])?;
                let mut factors = Vec::new();
                for t in &w[3..] {
                    let Some((c, v)) = t.split_once('=') else { return r.err("bad factor") };
                    let (c, e) = match c.strip_prefix('e') {
                        Some(rest) => (rest, true),
                        None => (c, false),
                    };
                    factors.push((r.col(c)?, e, r.num(v)?));
                }
                AuxDef::Product { factors, log }
            }
            "log" => AuxDef::Log { of: r.col(w[2])? },
            "exp" => AuxDef::Exp { arg: r.col(w[2])? },
            other => return r.err(format!("unknown definition `{other}`")),
        };
        defs.push((target, def));
    }
    let row_kinds = r
        .words("rows")?
        .iter()
        .map(|t| RowKind::from_tag(t).ok_or(()))
        .collect::<Result<Vec<_>, _>>()
        .or_else(|_| r.err("bad row kind"))?;
    let n_fb: usize = r.scalar("fb")?;
    let mut fb_chains = Vec::with_capacity(n_fb);
    for _ in 0..n_fb {
        let w: Vec<&str> = r.next()?.split_whitespace().collect();
        if w.len() < 4 {
            return r.err("truncated complementarity chain");
        }
        let nums = w[1..].iter().map(|t| r.num(t)).collect::<Result<Vec<usize>, _>>()?;
        fb_chains.push(FbChain {
            label: w[0].to_string(),
            head_row: nums[0],
            mu: nums[1],
            slack: nums[2],
            aux: nums[3..].to_vec(),
        });
    }
    r.field("blocks")?;
    let structured = StructuredSystem {
        a: r.matrix("A")?,
        b_y: r.matrix("B")?,
        a_x: r.matrix("A_x")?,
        c_z: r.matrix("C_z")?,
        c_l: r.matrix("C_l")?,
        b: r.vector("b")?,
        p_y0: r.matrix("P")?,
        d_y: r.matrix("D_y")?,
        d_z: r.matrix("D_z")?,
        d_l: r.matrix("D_l")?,
        d: r.vector("d")?,
        e_y: r.matrix("E_y")?,
        e_z: r.matrix("E_z")?,
        e_l: r.matrix("E_l")?,
        g: r.matrix("G")?,
        h_y: r.matrix("H_y")?,
        h_z: r.matrix("H_z")?,
    };
    if structured.n_rows() != row_kinds.len() {
        return r.err("row count does not match the row list");
    }
    let catalog = VariableCatalog {
        inputs,
        base_inputs,
        outputs,
        aux,
        aux_kinds,
        multipliers,
        multiplier_kinds,
        positive_multipliers,
        input_kinds,
        defs,
    };
    Ok(KktSystem::new(structured, catalog, row_kinds, fb_chains, eps_init, is_kkt))
}
