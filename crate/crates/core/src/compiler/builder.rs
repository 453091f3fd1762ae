//! Lowering of normalized polynomials into linear rows plus `v = e^{L}` links.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::system::{
    AuxDef, AuxKind, ColRef, FbChain, KktSystem, MultiplierKind, RowKind, Segment,
    StructuredSystem, VariableCatalog,
};
use super::{AuxStyle, CompileError, CompileOptions, MultiplierMode};
use crate::expr::{rational_to_f64, Base, ConstraintSet, Expr, Monomial, Polynomial, Rational, VarClass};

type VarId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Input,
    Output(usize),
    Multiplier,
    Aux(AuxKind),
}

#[derive(Debug, Clone)]
enum BDef {
    Linear(Vec<(VarId, f64)>, f64),
    Product(Vec<(VarId, bool, f64)>, VarId),
    Log(VarId),
    Exp(VarId),
}

#[derive(Debug, Clone)]
struct BVar {
    name: String,
    origin: Origin,
    input_side: bool,
    positive: bool,
    def: Option<BDef>,
    mult: Option<MultiplierKind>,
}

/// Row residual: `Σ terms + constant − Σ y0 − g·e^{arg}`.
#[derive(Debug, Clone)]
struct BRow {
    kind: RowKind,
    terms: Vec<(VarId, f64)>,
    constant: f64,
    y0: Vec<(usize, f64)>,
    exp: Option<(VarId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct LinearForm {
    terms: Vec<(VarId, f64)>,
    constant: f64,
}

impl LinearForm {
    fn add(&mut self, v: VarId, c: f64) {
        if let Some(t) = self.terms.iter_mut().find(|t| t.0 == v) {
            t.1 += c;
        } else {
            self.terms.push((v, c));
        }
        self.terms.retain(|t| t.1 != 0.0);
    }
}

fn compact(s: String) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn sanitize(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join("_")
}

fn mult_var(name: &str) -> Expr {
    Expr::var(name, VarClass::Multiplier)
}

fn mult_poly(name: &str) -> Polynomial {
    Polynomial::from_expr(&mult_var(name))
}

struct FbRecord {
    label: String,
    head: usize,
    mu: VarId,
    slack: VarId,
    first_var: VarId,
    end_var: VarId,
}

pub(crate) struct Builder<'a> {
    cs: &'a ConstraintSet,
    opts: CompileOptions,
    vars: Vec<BVar>,
    by_name: HashMap<String, VarId>,
    rows: Vec<BRow>,
    log_cache: HashMap<VarId, VarId>,
    exp_cache: HashMap<VarId, VarId>,
    sum_cache: Vec<(LinearForm, VarId)>,
    mono_cache: Vec<(Vec<(Base, Rational)>, VarId)>,
    fb: Vec<FbRecord>,
}

impl<'a> Builder<'a> {
    pub(crate) fn new(cs: &'a ConstraintSet, opts: CompileOptions) -> Result<Self, CompileError> {
        let mut b = Builder {
            cs,
            opts,
            vars: Vec::new(),
            by_name: HashMap::new(),
            rows: Vec::new(),
            log_cache: HashMap::new(),
            exp_cache: HashMap::new(),
            sum_cache: Vec::new(),
            mono_cache: Vec::new(),
            fb: Vec::new(),
        };
        for d in &cs.decls.inputs {
            b.push_var(BVar {
                name: d.name.clone(),
                origin: Origin::Input,
                input_side: true,
                positive: d.is_positive(),
                def: None,
                mult: None,
            })?;
        }
        for (j, n) in cs.decls.outputs.iter().enumerate() {
            b.push_var(BVar {
                name: n.clone(),
                origin: Origin::Output(j),
                input_side: false,
                // outputs are assumed non-negative; logs use a positive floor
                positive: true,
                def: None,
                mult: None,
            })?;
        }
        Ok(b)
    }

    fn push_var(&mut self, v: BVar) -> Result<VarId, CompileError> {
        if self.by_name.contains_key(&v.name) {
            return Err(CompileError::Duplicate(v.name));
        }
        let id = self.vars.len();
        self.by_name.insert(v.name.clone(), id);
        self.vars.push(v);
        Ok(id)
    }

    fn add_aux(&mut self, name: String, kind: AuxKind, input_side: bool, positive: bool, def: BDef) -> Result<VarId, CompileError> {
        self.push_var(BVar {
            name,
            origin: Origin::Aux(kind),
            input_side,
            positive,
            def: Some(def),
            mult: None,
        })
    }

    fn add_multiplier(&mut self, name: String, kind: MultiplierKind, positive: bool) -> Result<VarId, CompileError> {
        self.push_var(BVar {
            name,
            origin: Origin::Multiplier,
            input_side: false,
            positive,
            def: None,
            mult: Some(kind),
        })
    }

    fn lookup(&self, name: &str) -> Result<VarId, CompileError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| CompileError::Unsupported(format!("unknown variable `{name}`")))
    }

    fn push_row(&mut self, kind: RowKind, lf: LinearForm, y0: Vec<(usize, f64)>) -> usize {
        self.rows.push(BRow {
            kind,
            terms: lf.terms,
            constant: lf.constant,
            y0,
            exp: None,
        });
        self.rows.len() - 1
    }

    /// Lowers a polynomial to a linear form, introducing monomial auxiliaries.
    fn linear(&mut self, p: &Polynomial) -> Result<LinearForm, CompileError> {
        let mut lf = LinearForm::default();
        for m in &p.terms {
            if m.is_constant() {
                lf.constant += m.coef;
            } else if let Some(name) = m.as_linear_var() {
                let v = self.lookup(name)?;
                lf.add(v, m.coef);
            } else {
                let v = self.monomial_value(&m.factors)?;
                lf.add(v, m.coef);
            }
        }
        Ok(lf)
    }

    fn linear_expr(&mut self, e: &Expr) -> Result<LinearForm, CompileError> {
        self.linear(&Polynomial::from_expr(e))
    }

    fn render_linear(&self, lf: &LinearForm) -> String {
        let mut s = String::new();
        for (i, (v, c)) in lf.terms.iter().enumerate() {
            let sign = if *c < 0.0 { "-" } else if i == 0 { "" } else { "+" };
            let mag = c.abs();
            if mag == 1.0 {
                s.push_str(&format!("{sign}{}", self.vars[*v].name));
            } else {
                s.push_str(&format!("{sign}{mag}*{}", self.vars[*v].name));
            }
        }
        if lf.constant != 0.0 {
            let sign = if lf.constant < 0.0 { "-" } else if s.is_empty() { "" } else { "+" };
            s.push_str(&format!("{sign}{}", lf.constant.abs()));
        }
        if s.is_empty() {
            s.push('0');
        }
        s
    }

    /// A column holding the value of `lf`, reusing a variable when `lf = v`.
    fn value_col(&mut self, lf: LinearForm) -> Result<VarId, CompileError> {
        if lf.constant == 0.0 && lf.terms.len() == 1 && lf.terms[0].1 == 1.0 {
            return Ok(lf.terms[0].0);
        }
        if let Some((_, v)) = self.sum_cache.iter().find(|(f, _)| *f == lf) {
            return Ok(*v);
        }
        let input_side = lf.terms.iter().all(|(v, _)| self.vars[*v].input_side);
        let positive = !lf.terms.is_empty()
            && lf.constant >= 0.0
            && lf.terms.iter().all(|(v, c)| *c > 0.0 && self.vars[*v].positive);
        let name = format!("({})", self.render_linear(&lf));
        let s = self.add_aux(
            name,
            AuxKind::Sum,
            input_side,
            positive,
            BDef::Linear(lf.terms.clone(), lf.constant),
        )?;
        let mut row = LinearForm::default();
        row.add(s, 1.0);
        for (v, c) in &lf.terms {
            row.add(*v, -c);
        }
        row.constant = -lf.constant;
        self.push_row(RowKind::SumDef, row, Vec::new());
        self.sum_cache.push((lf, s));
        Ok(s)
    }

    /// Emits `value = e^{arg}` in the configured style.
    fn exp_link(&mut self, value: VarId, arg: VarId) -> Result<(), CompileError> {
        if self.vars[value].input_side || self.opts.aux_style == AuxStyle::Compact {
            self.rows.push(BRow {
                kind: RowKind::Exp,
                terms: vec![(value, 1.0)],
                constant: 0.0,
                y0: Vec::new(),
                exp: Some((arg, 1.0)),
            });
            return Ok(());
        }
        let name = format!("e^{}", self.vars[arg].name);
        let node = self.add_aux(name, AuxKind::Node, false, true, BDef::Exp(arg))?;
        let mut copy = LinearForm::default();
        copy.add(value, 1.0);
        copy.add(node, -1.0);
        self.push_row(RowKind::Copy, copy, Vec::new());
        self.rows.push(BRow {
            kind: RowKind::Exp,
            terms: vec![(node, 1.0)],
            constant: 0.0,
            y0: Vec::new(),
            exp: Some((arg, 1.0)),
        });
        Ok(())
    }

    fn log_of(&mut self, v: VarId, context: &str) -> Result<VarId, CompileError> {
        if let Some(l) = self.log_cache.get(&v) {
            return Ok(*l);
        }
        if !self.vars[v].positive {
            return Err(CompileError::NotPositive {
                var: self.vars[v].name.clone(),
                context: context.to_string(),
            });
        }
        let name = format!("log({})", self.vars[v].name);
        let input_side = self.vars[v].input_side;
        let l = self.add_aux(name, AuxKind::BaseLog, input_side, false, BDef::Log(v))?;
        self.exp_link(v, l)?;
        self.log_cache.insert(v, l);
        Ok(l)
    }

    fn exp_of(&mut self, arg: VarId) -> Result<VarId, CompileError> {
        if let Some(w) = self.exp_cache.get(&arg) {
            return Ok(*w);
        }
        let name = format!("exp({})", self.vars[arg].name);
        let input_side = self.vars[arg].input_side;
        let w = self.add_aux(name, AuxKind::ExpValue, input_side, true, BDef::Exp(arg))?;
        self.exp_link(w, arg)?;
        self.exp_cache.insert(arg, w);
        Ok(w)
    }

    fn monomial_value(&mut self, factors: &[(Base, Rational)]) -> Result<VarId, CompileError> {
        if let Some((_, v)) = self.mono_cache.iter().find(|(f, _)| f == factors) {
            return Ok(*v);
        }
        let one = Rational::from_integer(1);
        let rendered = compact(
            Monomial {
                coef: 1.0,
                factors: factors.to_vec(),
            }
            .to_string_expr(),
        );
        let v = match factors {
            [(Base::Exp(u), a)] => {
                let lf = self.linear(&Polynomial::from_expr(u).scaled(rational_to_f64(*a)))?;
                let arg = self.value_col(lf)?;
                self.exp_of(arg)?
            }
            [(Base::Log(u), a)] if *a == one => {
                let lf = self.linear_expr(u)?;
                let col = self.value_col(lf)?;
                self.log_of(col, &rendered)?
            }
            [(Base::Composite(u), a)] if *a == one => {
                let lf = self.linear_expr(u)?;
                self.value_col(lf)?
            }
            _ => {
                let mut logs = Vec::with_capacity(factors.len());
                let mut vals = Vec::with_capacity(factors.len());
                for (b, a) in factors {
                    let af = rational_to_f64(*a);
                    let (val, is_exp, l) = match b {
                        Base::Var(n, _) => {
                            let v = self.lookup(n)?;
                            (v, false, self.log_of(v, &rendered)?)
                        }
                        Base::Exp(u) => {
                            let lf = self.linear_expr(u)?;
                            let arg = self.value_col(lf)?;
                            (arg, true, arg)
                        }
                        Base::Composite(u) => {
                            let lf = self.linear_expr(u)?;
                            let col = self.value_col(lf)?;
                            (col, false, self.log_of(col, &rendered)?)
                        }
                        Base::Log(_) => {
                            return Err(CompileError::Unsupported(format!(
                                "log factor inside the product `{rendered}`"
                            )))
                        }
                    };
                    vals.push((val, is_exp, af));
                    logs.push((l, af));
                }
                let input_side = logs.iter().all(|(l, _)| self.vars[*l].input_side);
                let ell = self.add_aux(
                    format!("log({rendered})"),
                    AuxKind::MonoLog,
                    input_side,
                    false,
                    BDef::Linear(logs.clone(), 0.0),
                )?;
                let mut row = LinearForm::default();
                row.add(ell, 1.0);
                for (l, a) in &logs {
                    row.add(*l, -a);
                }
                self.push_row(RowKind::LogLinear, row, Vec::new());
                let z = self.add_aux(rendered.clone(), AuxKind::Monomial, input_side, true, BDef::Product(vals, ell))?;
                self.exp_link(z, ell)?;
                z
            }
        };
        self.mono_cache.push((factors.to_vec(), v));
        Ok(v)
    }

    /// Constraint rows only: `h = 0` and `g + s = 0`.
    pub(crate) fn transform(mut self) -> Result<KktSystem, CompileError> {
        let cs = self.cs;
        if cs.is_empty() {
            return Err(CompileError::NoConstraints);
        }
        for c in &cs.equalities {
            let lf = self.linear_expr(&c.lhs)?;
            self.push_row(RowKind::Equality(sanitize(&c.label)), lf, Vec::new());
        }
        for c in &cs.inequalities {
            let label = sanitize(&c.label);
            let s = self.add_multiplier(format!("s[{label}]"), MultiplierKind::Slack(label.clone()), true)?;
            let mut lf = self.linear_expr(&c.lhs)?;
            lf.add(s, 1.0);
            self.push_row(RowKind::Feasibility(label), lf, Vec::new());
        }
        self.finish(false)
    }

    /// Full projection KKT system.
    pub(crate) fn assemble(mut self) -> Result<KktSystem, CompileError> {
        let cs = self.cs;
        if cs.is_empty() {
            return Err(CompileError::NoConstraints);
        }
        let outputs = cs.output_names();
        let grad = |c: &crate::expr::Constraint| -> Vec<Polynomial> {
            outputs
                .iter()
                .map(|y| Polynomial::from_expr(&c.lhs.diff(y)))
                .collect()
        };
        // Equality multipliers.
        let mut eq_polys = Vec::new();
        let mut splits = Vec::new();
        let mut eq_grads = Vec::new();
        for c in &cs.equalities {
            let label = sanitize(&c.label);
            let g = grad(c);
            let nonlinear = g.iter().any(|p| p.terms.iter().any(|t| !t.is_constant()));
            let poly = match (self.opts.multipliers, nonlinear) {
                (MultiplierMode::Reject, true) => {
                    return Err(CompileError::SignedMultiplier { label });
                }
                (MultiplierMode::Signed, true) => {
                    let plus = format!("mu+[{label}]");
                    let minus = format!("mu-[{label}]");
                    self.add_multiplier(plus.clone(), MultiplierKind::EqualityPlus(label.clone()), true)?;
                    self.add_multiplier(minus.clone(), MultiplierKind::EqualityMinus(label.clone()), true)?;
                    splits.push((label.clone(), plus.clone(), minus.clone()));
                    let mut p = mult_poly(&plus);
                    p.add(&mult_poly(&minus).scaled(-1.0));
                    p
                }
                (mode, nonlinear) => {
                    let name = format!("mu[{label}]");
                    let positive = mode == MultiplierMode::Positive && nonlinear;
                    self.add_multiplier(name.clone(), MultiplierKind::Equality(label.clone()), positive)?;
                    mult_poly(&name)
                }
            };
            eq_polys.push(poly);
            eq_grads.push(g);
        }
        // Inequality multipliers and slacks.
        let mut ineq = Vec::new();
        for c in &cs.inequalities {
            let label = sanitize(&c.label);
            let me = format!("muE[{label}]");
            self.add_multiplier(me.clone(), MultiplierKind::Coupling(label.clone()), false)?;
            ineq.push((label, me, grad(c)));
        }
        let mut ineq_vars = Vec::new();
        for (label, _, _) in &ineq {
            let mi = format!("muI[{label}]");
            let v = self.add_multiplier(mi.clone(), MultiplierKind::Inequality(label.clone()), true)?;
            ineq_vars.push((mi, v));
        }
        let mut slack_vars = Vec::new();
        for (label, _, _) in &ineq {
            let s = format!("s[{label}]");
            let v = self.add_multiplier(s.clone(), MultiplierKind::Slack(label.clone()), true)?;
            slack_vars.push((s, v));
        }

        // Stationarity: y − ŷ0 + Σ multiplier · ∇_y constraint = 0.
        for (j, y) in outputs.iter().enumerate() {
            let mut poly = Polynomial::default();
            for (mp, g) in eq_polys.iter().zip(&eq_grads) {
                poly.add(&mp.mul(&g[j]));
            }
            for (k, (_, me, g)) in ineq.iter().enumerate() {
                let mut lin = Polynomial::default();
                let mut rest = Polynomial::default();
                for t in &g[j].terms {
                    if t.is_constant() {
                        lin.add_term(t.clone());
                    } else {
                        rest.add_term(t.clone());
                    }
                }
                poly.add(&mult_poly(me).mul(&lin));
                poly.add(&mult_poly(&ineq_vars[k].0).mul(&rest));
            }
            let mut lf = self.linear(&poly)?;
            lf.add(self.lookup(y)?, 1.0);
            self.push_row(RowKind::Stationarity(j), lf, vec![(j, 1.0)]);
        }
        for c in &cs.equalities {
            let lf = self.linear_expr(&c.lhs)?;
            self.push_row(RowKind::Equality(sanitize(&c.label)), lf, Vec::new());
        }
        for (k, c) in cs.inequalities.iter().enumerate() {
            let (label, me, _) = &ineq[k];
            let (mi, mu) = ineq_vars[k].clone();
            let (sn, s) = slack_vars[k].clone();
            let mut coupling = LinearForm::default();
            coupling.add(self.lookup(me)?, 1.0);
            coupling.add(mu, -1.0);
            self.push_row(RowKind::Coupling(label.clone()), coupling, Vec::new());
            let mut feas = self.linear_expr(&c.lhs)?;
            feas.add(s, 1.0);
            self.push_row(RowKind::Feasibility(label.clone()), feas, Vec::new());
            // sqrt(μ² + s²) − μ − s = 0
            let first_var = self.vars.len();
            let inner = Expr::Sum(vec![
                (1.0, Expr::Power(Box::new(mult_var(&mi)), Rational::from_integer(2))),
                (1.0, Expr::Power(Box::new(mult_var(&sn)), Rational::from_integer(2))),
            ]);
            let mut fb = Polynomial::default();
            fb.add_term(Monomial {
                coef: 1.0,
                factors: vec![(Base::Composite(Box::new(inner)), Rational::new(1, 2))],
            });
            fb.add(&mult_poly(&mi).scaled(-1.0));
            fb.add(&mult_poly(&sn).scaled(-1.0));
            let lf = self.linear(&fb)?;
            let head = self.push_row(RowKind::FbHead(label.clone()), lf, Vec::new());
            self.fb.push(FbRecord {
                label: label.clone(),
                head,
                mu,
                slack: s,
                first_var,
                end_var: self.vars.len(),
            });
        }
        // log λ⁺ + log λ⁻ = 2 log ε_init pins the otherwise free split.
        for (label, plus, minus) in splits {
            let lp = self.log_of(self.lookup(&plus)?, &plus)?;
            let lm = self.log_of(self.lookup(&minus)?, &minus)?;
            let mut row = LinearForm::default();
            row.add(lp, 1.0);
            row.add(lm, 1.0);
            row.constant = -2.0 * self.opts.eps_init.ln();
            self.push_row(RowKind::Gauge(label), row, Vec::new());
        }
        self.finish(true)
    }

    fn finish(self, is_kkt: bool) -> Result<KktSystem, CompileError> {
        let n = self.vars.len();
        // Column assignment.
        let mut cols: Vec<Option<ColRef>> = vec![None; n];
        let mut input_names = Vec::new();
        let mut input_kinds = Vec::new();
        let mut base_inputs = 0;
        for (id, v) in self.vars.iter().enumerate() {
            if v.origin == Origin::Input {
                cols[id] = Some(ColRef::new(Segment::Input, input_names.len()));
                input_names.push(v.name.clone());
                base_inputs += 1;
            }
        }
        let mut aux_ids: Vec<VarId> = (0..n)
            .filter(|&i| matches!(self.vars[i].origin, Origin::Aux(_)))
            .collect();
        aux_ids.sort_by_key(|&i| match self.vars[i].origin {
            Origin::Aux(k) => (k, i),
            _ => unreachable!(),
        });
        let mut aux_names = Vec::new();
        let mut aux_kinds = Vec::new();
        for &i in &aux_ids {
            let Origin::Aux(kind) = self.vars[i].origin else { unreachable!() };
            if self.vars[i].input_side {
                cols[i] = Some(ColRef::new(Segment::Input, input_names.len()));
                input_names.push(self.vars[i].name.clone());
                input_kinds.push(kind);
            } else {
                cols[i] = Some(ColRef::new(Segment::Z, aux_names.len()));
                aux_names.push(self.vars[i].name.clone());
                aux_kinds.push(kind);
            }
        }
        let mut outputs = Vec::new();
        for (id, v) in self.vars.iter().enumerate() {
            if let Origin::Output(j) = v.origin {
                cols[id] = Some(ColRef::new(Segment::Y, j));
                outputs.push(v.name.clone());
            }
        }
        let mut mult_ids: Vec<VarId> = (0..n).filter(|&i| self.vars[i].origin == Origin::Multiplier).collect();
        mult_ids.sort_by_key(|&i| (self.vars[i].mult.as_ref().unwrap().section(), i));
        let mut multipliers = Vec::new();
        let mut multiplier_kinds = Vec::new();
        let mut positive_multipliers = Vec::new();
        for &i in &mult_ids {
            cols[i] = Some(ColRef::new(Segment::Lambda, multipliers.len()));
            multipliers.push(self.vars[i].name.clone());
            multiplier_kinds.push(self.vars[i].mult.clone().unwrap());
            // exp-parameterized exactly when a log of it exists
            positive_multipliers.push(self.log_cache.contains_key(&i));
        }
        let col = |id: VarId| cols[id].unwrap();
        let defs: Vec<(ColRef, AuxDef)> = (0..n)
            .filter_map(|i| {
                let def = self.vars[i].def.as_ref()?;
                let d = match def {
                    BDef::Linear(t, c) => AuxDef::Linear {
                        terms: t.iter().map(|(v, w)| (col(*v), *w)).collect(),
                        constant: *c,
                    },
                    BDef::Product(f, l) => AuxDef::Product {
                        factors: f.iter().map(|(v, e, a)| (col(*v), *e, *a)).collect(),
                        log: col(*l),
                    },
                    BDef::Log(v) => AuxDef::Log { of: col(*v) },
                    BDef::Exp(v) => AuxDef::Exp { arg: col(*v) },
                };
                Some((col(i), d))
            })
            .collect();
        let catalog = VariableCatalog {
            inputs: input_names,
            base_inputs,
            outputs,
            aux: aux_names,
            aux_kinds,
            multipliers,
            multiplier_kinds,
            positive_multipliers,
            input_kinds,
            defs,
        };

        // Row blocks and canonical order.
        let block_of = |r: &BRow| -> u8 {
            let has_input = r.terms.iter().any(|(v, _)| col(*v).seg == Segment::Input)
                || r.exp.is_some_and(|(a, _)| col(a).seg == Segment::Input);
            if has_input || !r.y0.is_empty() {
                1
            } else if r.exp.is_some() {
                3
            } else {
                2
            }
        };
        let mut order: Vec<(u8, u8, usize, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let blk = block_of(r);
                let key = match (r.exp, blk) {
                    (Some((arg, _)), 1) => col(arg).idx,
                    (Some(_), _) => catalog.tau_index(col(r.terms[0].0)).unwrap(),
                    _ => 0,
                };
                (blk, r.kind.rank(), key, i)
            })
            .collect();
        order.sort();
        let n1 = order.iter().filter(|o| o.0 == 1).count();
        let n2 = order.iter().filter(|o| o.0 == 2).count();
        let n3 = order.len() - n1 - n2;
        let (m, p, q, r) = (catalog.m(), catalog.p(), catalog.q(), catalog.r());
        let mut s = StructuredSystem::zeros(n1, n2, n3, n3, m, p, q, r);
        let mut row_kinds = Vec::with_capacity(order.len());
        let mut global_of = vec![0usize; self.rows.len()];
        for (g, &(blk, _, _, i)) in order.iter().enumerate() {
            let row = &self.rows[i];
            global_of[i] = g;
            row_kinds.push(row.kind.clone());
            let local = match blk {
                1 => g,
                2 => g - n1,
                _ => g - n1 - n2,
            };
            for &(v, c) in &row.terms {
                let cr = col(v);
                let target: &mut DMatrix<f64> = match (blk, cr.seg) {
                    (1, Segment::Input) => &mut s.a,
                    (1, Segment::Y) => &mut s.b_y,
                    (1, Segment::Z) => &mut s.c_z,
                    (1, Segment::Lambda) => &mut s.c_l,
                    (2, Segment::Y) => &mut s.d_y,
                    (2, Segment::Z) => &mut s.d_z,
                    (2, Segment::Lambda) => &mut s.d_l,
                    (3, Segment::Y) => &mut s.e_y,
                    (3, Segment::Z) => &mut s.e_z,
                    (3, Segment::Lambda) => &mut s.e_l,
                    _ => unreachable!("input column outside block 1"),
                };
                target[(local, cr.idx)] += c;
            }
            for &(j, c) in &row.y0 {
                s.p_y0[(local, j)] += c;
            }
            match blk {
                1 => s.b[local] = 0.0 - row.constant,
                2 => s.d[local] = 0.0 - row.constant,
                _ => assert!(row.constant == 0.0, "exponential rows carry no constant"),
            }
            if let Some((arg, gcoef)) = row.exp {
                let a = col(arg);
                match (blk, a.seg) {
                    (1, Segment::Input) => s.a_x[(local, a.idx)] -= gcoef,
                    (3, Segment::Y) => {
                        s.g[(local, local)] = gcoef;
                        s.h_y[(local, a.idx)] = 1.0;
                    }
                    (3, Segment::Z) => {
                        s.g[(local, local)] = gcoef;
                        s.h_z[(local, a.idx)] = 1.0;
                    }
                    _ => {
                        return Err(CompileError::Unsupported(
                            "exponential of a multiplier".into(),
                        ))
                    }
                }
            }
        }
        let tau = |id: VarId| catalog.tau_index(col(id)).unwrap();
        let fb_chains = self
            .fb
            .iter()
            .map(|f| FbChain {
                label: f.label.clone(),
                head_row: global_of[f.head],
                mu: tau(f.mu),
                slack: tau(f.slack),
                aux: (f.first_var..f.end_var)
                    .filter(|&i| col(i).seg != Segment::Input)
                    .map(tau)
                    .collect(),
            })
            .collect();
        Ok(KktSystem::new(s, catalog, row_kinds, fb_chains, self.opts.eps_init, is_kkt))
    }
}

trait RenderMonomial {
    fn to_string_expr(&self) -> String;
}

impl RenderMonomial for Monomial {
    fn to_string_expr(&self) -> String {
        let fs: Vec<String> = self
            .factors
            .iter()
            .map(|(b, r)| {
                let base = match b {
                    Base::Var(n, _) => n.clone(),
                    Base::Exp(e) => format!("exp({e})"),
                    Base::Log(e) => format!("log({e})"),
                    Base::Composite(e) => format!("({e})"),
                };
                if *r == Rational::from_integer(1) {
                    base
                } else if *r.denom() == 1 {
                    format!("{base}^{}", r.numer())
                } else {
                    format!("{base}^({}/{})", r.numer(), r.denom())
                }
            })
            .collect();
        fs.join("*")
    }
}
