use nalgebra::{DMatrix, DVector};

/// Column segments of the structured system. Unknowns are laid out as
/// `τ = [y | z | λ]`; inputs are known per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Input,
    Y,
    Z,
    Lambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ColRef {
    pub seg: Segment,
    pub idx: usize,
}

impl ColRef {
    pub fn new(seg: Segment, idx: usize) -> Self {
        ColRef { seg, idx }
    }
}

/// Role of an auxiliary column; also fixes the canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuxKind {
    /// Standalone exponential node `n = e^{L}` (expanded style only).
    Node,
    /// Linear combination `s = Σ cᵢvᵢ + c₀`.
    Sum,
    /// Nonlinear monomial value `z_M = e^{log z_M}`.
    Monomial,
    /// `w = e^{u}` for an `exp(u)` subexpression.
    ExpValue,
    /// `log z_M = Σ aᵢ log vᵢ`.
    MonoLog,
    /// `log v` of a variable entering a product.
    BaseLog,
}

impl AuxKind {
    pub fn tag(self) -> &'static str {
        match self {
            AuxKind::Node => "node",
            AuxKind::Sum => "sum",
            AuxKind::Monomial => "mono",
            AuxKind::ExpValue => "expval",
            AuxKind::MonoLog => "monolog",
            AuxKind::BaseLog => "log",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Some(match s {
            "node" => AuxKind::Node,
            "sum" => AuxKind::Sum,
            "mono" => AuxKind::Monomial,
            "expval" => AuxKind::ExpValue,
            "monolog" => AuxKind::MonoLog,
            "log" => AuxKind::BaseLog,
            _ => return None,
        })
    }
}

/// How an auxiliary is evaluated when lifting inputs or initializing unknowns.
#[derive(Debug, Clone, PartialEq)]
pub enum AuxDef {
    /// `Σ cᵢ·colᵢ + constant`
    Linear { terms: Vec<(ColRef, f64)>, constant: f64 },
    /// `Π valueᵢ^aᵢ`; a factor flagged `true` contributes `e^{aᵢ·col}`.
    /// Falls back to `e^{log}` when the product is undefined.
    Product { factors: Vec<(ColRef, bool, f64)>, log: ColRef },
    /// `ln(max(col, ε_log))`
    Log { of: ColRef },
    /// `e^{col}`
    Exp { arg: ColRef },
}

/// Role of a multiplier column; the label is the constraint's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MultiplierKind {
    /// Equality multiplier μᴱ.
    Equality(String),
    /// Positive part of a split equality multiplier.
    EqualityPlus(String),
    /// Negative part of a split equality multiplier.
    EqualityMinus(String),
    /// Equality copy μᴱ of an inequality multiplier (coupled to μᴵ).
    Coupling(String),
    /// Inequality multiplier μᴵ.
    Inequality(String),
    /// Slack s of an inequality.
    Slack(String),
}

impl MultiplierKind {
    pub fn tag(&self) -> String {
        match self {
            MultiplierKind::Equality(l) => format!("eq:{l}"),
            MultiplierKind::EqualityPlus(l) => format!("eq+:{l}"),
            MultiplierKind::EqualityMinus(l) => format!("eq-:{l}"),
            MultiplierKind::Coupling(l) => format!("couple:{l}"),
            MultiplierKind::Inequality(l) => format!("ineq:{l}"),
            MultiplierKind::Slack(l) => format!("slack:{l}"),
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        let (k, l) = s.split_once(':')?;
        let l = l.to_string();
        Some(match k {
            "eq" => MultiplierKind::Equality(l),
            "eq+" => MultiplierKind::EqualityPlus(l),
            "eq-" => MultiplierKind::EqualityMinus(l),
            "couple" => MultiplierKind::Coupling(l),
            "ineq" => MultiplierKind::Inequality(l),
            "slack" => MultiplierKind::Slack(l),
            _ => return None,
        })
    }

    /// Section of λ = [μᴱ | μᴵ | s] this multiplier belongs to (0, 1, 2).
    pub fn section(&self) -> u8 {
        match self {
            MultiplierKind::Inequality(_) => 1,
            MultiplierKind::Slack(_) => 2,
            _ => 0,
        }
    }
}

/// Names, roles and evaluation rules of every column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariableCatalog {
    /// Base inputs followed by augmented input auxiliaries.
    pub inputs: Vec<String>,
    pub base_inputs: usize,
    pub outputs: Vec<String>,
    pub aux: Vec<String>,
    pub aux_kinds: Vec<AuxKind>,
    pub multipliers: Vec<String>,
    pub multiplier_kinds: Vec<MultiplierKind>,
    /// Multipliers parameterized as exponentials, kept strictly positive.
    pub positive_multipliers: Vec<bool>,
    /// Kinds of the augmented inputs (index `i - base_inputs`).
    pub input_kinds: Vec<AuxKind>,
    /// Definitions of augmented inputs and auxiliaries in evaluation order.
    pub defs: Vec<(ColRef, AuxDef)>,
}

impl VariableCatalog {
    pub fn m(&self) -> usize {
        self.inputs.len()
    }

    pub fn p(&self) -> usize {
        self.outputs.len()
    }

    pub fn q(&self) -> usize {
        self.aux.len()
    }

    pub fn r(&self) -> usize {
        self.multipliers.len()
    }

    /// Number of unknowns `|τ| = p + q + |λ|`.
    pub fn n_unknowns(&self) -> usize {
        self.p() + self.q() + self.r()
    }

    /// Position of a column inside τ; `None` for inputs.
    pub fn tau_index(&self, c: ColRef) -> Option<usize> {
        match c.seg {
            Segment::Input => None,
            Segment::Y => Some(c.idx),
            Segment::Z => Some(self.p() + c.idx),
            Segment::Lambda => Some(self.p() + self.q() + c.idx),
        }
    }

    pub fn name(&self, c: ColRef) -> &str {
        match c.seg {
            Segment::Input => &self.inputs[c.idx],
            Segment::Y => &self.outputs[c.idx],
            Segment::Z => &self.aux[c.idx],
            Segment::Lambda => &self.multipliers[c.idx],
        }
    }

    pub fn find(&self, name: &str) -> Option<ColRef> {
        let look = |v: &[String], seg| v.iter().position(|n| n == name).map(|i| ColRef::new(seg, i));
        look(&self.inputs, Segment::Input)
            .or_else(|| look(&self.outputs, Segment::Y))
            .or_else(|| look(&self.aux, Segment::Z))
            .or_else(|| look(&self.multipliers, Segment::Lambda))
    }

    /// Unknown names in τ order.
    pub fn unknown_names(&self) -> Vec<&str> {
        self.outputs
            .iter()
            .chain(&self.aux)
            .chain(&self.multipliers)
            .map(String::as_str)
            .collect()
    }
}

/// Floor applied to log arguments during lifting and initialization.
pub const EPS_LOG: f64 = 1e-12;

fn eval_def(def: &AuxDef, get: &dyn Fn(ColRef) -> f64) -> f64 {
    match def {
        AuxDef::Linear { terms, constant } => terms.iter().map(|(c, w)| w * get(*c)).sum::<f64>() + constant,
        AuxDef::Product { factors, log } => {
            let mut v = 1.0;
            for (c, is_exp, a) in factors {
                let b = get(*c);
                v *= if *is_exp {
                    (a * b).exp()
                } else if a.fract() == 0.0 {
                    b.powi(*a as i32)
                } else {
                    b.powf(*a)
                };
            }
            if v.is_finite() {
                v
            } else {
                get(*log).exp()
            }
        }
        AuxDef::Log { of } => get(*of).max(EPS_LOG).ln(),
        AuxDef::Exp { arg } => get(*arg).exp(),
    }
}

/// Row role; also fixes the canonical row order within a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowKind {
    Stationarity(usize),
    Equality(String),
    Coupling(String),
    Feasibility(String),
    FbHead(String),
    Gauge(String),
    SumDef,
    LogLinear,
    Copy,
    Exp,
}

impl RowKind {
    pub fn rank(&self) -> u8 {
        match self {
            RowKind::Stationarity(_) => 0,
            RowKind::Equality(_) => 1,
            RowKind::Coupling(_) => 2,
            RowKind::Feasibility(_) => 3,
            RowKind::FbHead(_) => 4,
            RowKind::Gauge(_) => 5,
            RowKind::SumDef => 6,
            RowKind::LogLinear => 7,
            RowKind::Copy => 8,
            RowKind::Exp => 9,
        }
    }

    pub fn tag(&self) -> String {
        match self {
            RowKind::Stationarity(j) => format!("stat:{j}"),
            RowKind::Equality(l) => format!("eq:{l}"),
            RowKind::Coupling(l) => format!("couple:{l}"),
            RowKind::Feasibility(l) => format!("feas:{l}"),
            RowKind::FbHead(l) => format!("fb:{l}"),
            RowKind::Gauge(l) => format!("gauge:{l}"),
            RowKind::SumDef => "sum".into(),
            RowKind::LogLinear => "loglin".into(),
            RowKind::Copy => "copy".into(),
            RowKind::Exp => "exp".into(),
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "sum" => return Some(RowKind::SumDef),
            "loglin" => return Some(RowKind::LogLinear),
            "copy" => return Some(RowKind::Copy),
            "exp" => return Some(RowKind::Exp),
            _ => {}
        }
        let (k, l) = s.split_once(':')?;
        let l = l.to_string();
        Some(match k {
            "stat" => RowKind::Stationarity(l.parse().ok()?),
            "eq" => RowKind::Equality(l),
            "couple" => RowKind::Coupling(l),
            "feas" => RowKind::Feasibility(l),
            "fb" => RowKind::FbHead(l),
            "gauge" => RowKind::Gauge(l),
            _ => return None,
        })
    }
}

/// Dense blocks of the structured form
///
/// ```text
/// (1) A x + B y + A_x exp(x) + C_z z + C_λ λ = b + P ŷ0
/// (2) D_y y + D_z z + D_λ λ = d
/// (3) E_y y + E_z z + E_λ λ = G exp(H_y y + H_z z)
/// ```
///
/// `P` carries the raw prediction into the stationarity rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredSystem {
    pub a: DMatrix<f64>,
    pub b_y: DMatrix<f64>,
    pub a_x: DMatrix<f64>,
    pub c_z: DMatrix<f64>,
    pub c_l: DMatrix<f64>,
    pub b: DVector<f64>,
    pub p_y0: DMatrix<f64>,
    pub d_y: DMatrix<f64>,
    pub d_z: DMatrix<f64>,
    pub d_l: DMatrix<f64>,
    pub d: DVector<f64>,
    pub e_y: DMatrix<f64>,
    pub e_z: DMatrix<f64>,
    pub e_l: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h_y: DMatrix<f64>,
    pub h_z: DMatrix<f64>,
}

impl StructuredSystem {
    pub fn zeros(n1: usize, n2: usize, n3: usize, ne: usize, m: usize, p: usize, q: usize, r: usize) -> Self {
        let z = DMatrix::zeros;
        StructuredSystem {
            a: z(n1, m),
            b_y: z(n1, p),
            a_x: z(n1, m),
            c_z: z(n1, q),
            c_l: z(n1, r),
            b: DVector::zeros(n1),
            p_y0: z(n1, p),
            d_y: z(n2, p),
            d_z: z(n2, q),
            d_l: z(n2, r),
            d: DVector::zeros(n2),
            e_y: z(n3, p),
            e_z: z(n3, q),
            e_l: z(n3, r),
            g: z(n3, ne),
            h_y: z(ne, p),
            h_z: z(ne, q),
        }
    }

    pub fn block_sizes(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.d_y.nrows(), self.e_y.nrows())
    }

    pub fn n_rows(&self) -> usize {
        let (a, b, c) = self.block_sizes();
        a + b + c
    }

    pub fn n_exp(&self) -> usize {
        self.g.ncols()
    }
}

/// One Fischer-Burmeister chain `z8 − μ − s = 0` with its auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FbChain {
    pub label: String,
    pub head_row: usize,
    pub mu: usize,
    pub slack: usize,
    /// τ indices of the chain's auxiliary unknowns.
    pub aux: Vec<usize>,
}

/// Sparse row view used by the solver: `F = Mτ + c(x) − Pŷ0 − Σₑ Gₑ exp(hₑ·τ)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparsePlan {
    pub n_rows: usize,
    pub n_unknowns: usize,
    pub lin: Vec<Vec<(usize, f64)>>,
    pub y0: Vec<Vec<(usize, f64)>>,
    /// Per row input part: `(input col, A coef)`.
    pub input_lin: Vec<Vec<(usize, f64)>>,
    /// Per row `(input col, A_x coef)`.
    pub input_exp: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
    /// Exponential terms: `(rows with G coefficients, exponent row over τ)`.
    pub exps: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)>,
}

/// Compiled projection system: structured blocks, catalogs and hooks.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSystem {
    pub structured: StructuredSystem,
    pub catalog: VariableCatalog,
    pub row_kinds: Vec<RowKind>,
    /// Global row indices of stationarity rows, one per output.
    pub stationarity_rows: Vec<usize>,
    pub fb_chains: Vec<FbChain>,
    /// Initialization value of exp-parameterized multipliers and slacks.
    pub eps_init: f64,
    /// Whether the system carries the KKT rows or only the constraint transform.
    pub is_kkt: bool,
    plan: SparsePlan,
    active: Vec<usize>,
}

fn sparse_row(m: &DMatrix<f64>, i: usize, offset: usize, out: &mut Vec<(usize, f64)>) {
    for j in 0..m.ncols() {
        let v = m[(i, j)];
        if v != 0.0 {
            out.push((offset + j, v));
        }
    }
}

impl KktSystem {
    pub fn new(
        structured: StructuredSystem,
        catalog: VariableCatalog,
        row_kinds: Vec<RowKind>,
        fb_chains: Vec<FbChain>,
        eps_init: f64,
        is_kkt: bool,
    ) -> Self {
        let stationarity_rows = row_kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| matches!(k, RowKind::Stationarity(_)))
            .map(|(i, _)| i)
            .collect();
        let plan = build_plan(&structured, &catalog);
        let mut touched: Vec<bool> = plan.lin.iter().map(|r| !r.is_empty()).collect();
        for (rows, _) in &plan.exps {
            for &(r, _) in rows {
                touched[r] = true;
            }
        }
        let active = (0..plan.n_rows).filter(|&i| touched[i]).collect();
        KktSystem {
            structured,
            catalog,
            row_kinds,
            stationarity_rows,
            fb_chains,
            eps_init,
            is_kkt,
            plan,
            active,
        }
    }

    /// Rows that reference at least one unknown. Rows over inputs only are
    /// satisfied by the input lift and drop out of the projection.
    pub fn active_rows(&self) -> &[usize] {
        &self.active
    }

    pub fn plan(&self) -> &SparsePlan {
        &self.plan
    }

    pub fn n_rows(&self) -> usize {
        self.structured.n_rows()
    }

    pub fn n_unknowns(&self) -> usize {
        self.catalog.n_unknowns()
    }

    /// Augmented inputs computed from base inputs.
    pub fn lift_inputs(&self, x: &[f64]) -> Vec<f64> {
        let cat = &self.catalog;
        assert_eq!(x.len(), cat.base_inputs, "input dimension mismatch");
        let mut xs = vec![0.0; cat.m()];
        xs[..x.len()].copy_from_slice(x);
        for (c, def) in &cat.defs {
            if c.seg == Segment::Input {
                let v = eval_def(def, &|r: ColRef| {
                    debug_assert_eq!(r.seg, Segment::Input);
                    xs[r.idx]
                });
                xs[c.idx] = v;
            }
        }
        xs
    }

    /// Completes τ from outputs and multipliers by evaluating every auxiliary
    /// definition in order. `lambda` must have length `|λ|`.
    pub fn complete_aux(&self, xs: &[f64], tau: &mut [f64]) {
        let cat = &self.catalog;
        for (c, def) in &cat.defs {
            if c.seg == Segment::Input {
                continue;
            }
            let v = eval_def(def, &|r: ColRef| match cat.tau_index(r) {
                Some(k) => tau[k],
                None => xs[r.idx],
            });
            tau[cat.tau_index(*c).unwrap()] = v;
        }
    }

    /// Lift of a point `(y, λ)` to the full unknown vector.
    pub fn lift(&self, x: &[f64], y: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cat = &self.catalog;
        let xs = self.lift_inputs(x);
        let mut tau = vec![0.0; cat.n_unknowns()];
        tau[..cat.p()].copy_from_slice(y);
        let off = cat.p() + cat.q();
        tau[off..].copy_from_slice(lambda);
        self.complete_aux(&xs, &mut tau);
        (xs, tau)
    }

    /// Residual of each row with the exponential terms and slacks removed,
    /// i.e. the value `g(x, y)` for feasibility rows `g + s = 0`.
    fn feasibility_values(&self, xs: &[f64], tau: &[f64], y0: &[f64]) -> Vec<(usize, usize, f64)> {
        let plan = &self.plan;
        let mut out = Vec::new();
        for (i, kind) in self.row_kinds.iter().enumerate() {
            let RowKind::Feasibility(label) = kind else { continue };
            let slack = self
                .catalog
                .multiplier_kinds
                .iter()
                .position(|k| *k == MultiplierKind::Slack(label.clone()))
                .expect("feasibility row without slack");
            let s_tau = self.catalog.p() + self.catalog.q() + slack;
            let mut g = row_constant(plan, i, xs, y0);
            for &(j, v) in &plan.lin[i] {
                if j != s_tau {
                    g += v * tau[j];
                }
            }
            out.push((i, slack, g));
        }
        out
    }

    /// Starting point of the projection: `y = ŷ0`, equality multipliers at 0
    /// (or `eps` when exp-parameterized; split pairs sit at the gauge value), `μᴵ = ReLU(g) + eps`,
    /// `s = ReLU(−g) + eps`, auxiliaries from their definitions.
    pub fn initial_point(&self, x: &[f64], y0: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
        let cat = &self.catalog;
        let lambda: Vec<f64> = cat
            .multiplier_kinds
            .iter()
            .zip(&cat.positive_multipliers)
            .map(|(k, pos)| match k {
                MultiplierKind::Coupling(_) => 0.0,
                // λ⁺ = λ⁻ on the gauge, so λ = 0
                MultiplierKind::EqualityPlus(_) | MultiplierKind::EqualityMinus(_) => self.eps_init,
                _ if *pos => eps,
                _ => 0.0,
            })
            .collect();
        let (xs, mut tau) = self.lift(x, y0, &lambda);
        let off = cat.p() + cat.q();
        let feas = self.feasibility_values(&xs, &tau, y0);
        if feas.is_empty() {
            return (xs, tau);
        }
        for (_, slack, g) in feas {
            let MultiplierKind::Slack(label) = &cat.multiplier_kinds[slack] else { unreachable!() };
            tau[off + slack] = (-g).max(0.0) + eps;
            if let Some(mu) = cat
                .multiplier_kinds
                .iter()
                .position(|k| *k == MultiplierKind::Inequality(label.clone()))
            {
                tau[off + mu] = g.max(0.0) + eps;
            }
        }
        self.complete_aux(&xs, &mut tau);
        (xs, tau)
    }

    /// Derivative of [`initial_point`](Self::initial_point) along `dy0`,
    /// evaluated at its result `tau0`.
    pub fn initial_tangent(&self, xs: &[f64], tau0: &[f64], y0: &[f64], dy0: &[f64]) -> Vec<f64> {
        let cat = &self.catalog;
        let off = cat.p() + cat.q();
        let mut t = vec![0.0; cat.n_unknowns()];
        t[..cat.p()].copy_from_slice(dy0);
        self.complete_aux_tangent(xs, tau0, &mut t);
        let feas = self.feasibility_values(xs, tau0, y0);
        if feas.is_empty() {
            return t;
        }
        for (i, slack, g) in feas {
            let s_tau = off + slack;
            let dg: f64 = self.plan.lin[i]
                .iter()
                .filter(|(j, _)| *j != s_tau)
                .map(|&(j, v)| v * t[j])
                .sum();
            t[s_tau] = if g < 0.0 { -dg } else { 0.0 };
            let MultiplierKind::Slack(label) = &cat.multiplier_kinds[slack] else { unreachable!() };
            if let Some(mu) = cat
                .multiplier_kinds
                .iter()
                .position(|k| *k == MultiplierKind::Inequality(label.clone()))
            {
                t[off + mu] = if g > 0.0 { dg } else { 0.0 };
            }
        }
        self.complete_aux_tangent(xs, tau0, &mut t);
        t
    }

    /// Forward-mode pass over the auxiliary definitions; inputs have zero tangent.
    fn complete_aux_tangent(&self, xs: &[f64], tau: &[f64], t: &mut [f64]) {
        let cat = &self.catalog;
        let val = |c: ColRef| cat.tau_index(c).map_or(xs[c.idx], |k| tau[k]);
        for (c, def) in &cat.defs {
            let Some(target) = cat.tau_index(*c) else { continue };
            let tan = |r: ColRef| cat.tau_index(r).map_or(0.0, |k| t[k]);
            let d = match def {
                AuxDef::Linear { terms, .. } => terms.iter().map(|(r, w)| w * tan(*r)).sum(),
                AuxDef::Product { factors, log } => {
                    // Σᵢ tᵢ·∂/∂vᵢ Π vₖ^aₖ, robust to zero factors
                    let mut sum = 0.0;
                    for (i, (r, _, _)) in factors.iter().enumerate() {
                        let dr = tan(*r);
                        if dr == 0.0 {
                            continue;
                        }
                        let mut term = dr;
                        for (k, (r2, is_exp, a)) in factors.iter().enumerate() {
                            let b = val(*r2);
                            term *= match (k == i, *is_exp) {
                                (true, true) => a * (a * b).exp(),
                                (true, false) => a * b.powf(a - 1.0),
                                (false, true) => (a * b).exp(),
                                (false, false) => b.powf(*a),
                            };
                        }
                        sum += term;
                    }
                    if sum.is_finite() {
                        sum
                    } else {
                        tau[target] * tan(*log)
                    }
                }
                AuxDef::Log { of } => {
                    let v = val(*of);
                    if v > EPS_LOG {
                        tan(*of) / v
                    } else {
                        0.0
                    }
                }
                AuxDef::Exp { arg } => tau[target] * tan(*arg),
            };
            t[target] = d;
        }
    }

    /// Constraint rows and auxiliary definitions, i.e. every row except
    /// stationarity, coupling, complementarity heads and gauges.
    pub fn is_feasibility_row(&self, i: usize) -> bool {
        !matches!(
            self.row_kinds[i],
            RowKind::Stationarity(_) | RowKind::FbHead(_) | RowKind::Gauge(_) | RowKind::Coupling(_)
        )
    }
}

/// Input-dependent constant of row `i`: `A x + A_x e^x − b − P ŷ0`.
pub fn row_constant(plan: &SparsePlan, i: usize, xs: &[f64], y0: &[f64]) -> f64 {
    let mut c = -plan.rhs[i];
    for &(j, v) in &plan.input_lin[i] {
        c += v * xs[j];
    }
    for &(j, v) in &plan.input_exp[i] {
        c += v * xs[j].exp();
    }
    for &(j, v) in &plan.y0[i] {
        c -= v * y0[j];
    }
    c
}

fn build_plan(s: &StructuredSystem, cat: &VariableCatalog) -> SparsePlan {
    let (n1, n2, n3) = s.block_sizes();
    let n = n1 + n2 + n3;
    let (p, q) = (cat.p(), cat.q());
    let mut plan = SparsePlan {
        n_rows: n,
        n_unknowns: cat.n_unknowns(),
        lin: vec![Vec::new(); n],
        y0: vec![Vec::new(); n],
        input_lin: vec![Vec::new(); n],
        input_exp: vec![Vec::new(); n],
        rhs: vec![0.0; n],
        exps: Vec::new(),
    };
    for i in 0..n1 {
        sparse_row(&s.b_y, i, 0, &mut plan.lin[i]);
        sparse_row(&s.c_z, i, p, &mut plan.lin[i]);
        sparse_row(&s.c_l, i, p + q, &mut plan.lin[i]);
        sparse_row(&s.p_y0, i, 0, &mut plan.y0[i]);
        sparse_row(&s.a, i, 0, &mut plan.input_lin[i]);
        sparse_row(&s.a_x, i, 0, &mut plan.input_exp[i]);
        plan.rhs[i] = s.b[i];
    }
    for i in 0..n2 {
        let r = n1 + i;
        sparse_row(&s.d_y, i, 0, &mut plan.lin[r]);
        sparse_row(&s.d_z, i, p, &mut plan.lin[r]);
        sparse_row(&s.d_l, i, p + q, &mut plan.lin[r]);
        plan.rhs[r] = s.d[i];
    }
    for i in 0..n3 {
        let r = n1 + n2 + i;
        sparse_row(&s.e_y, i, 0, &mut plan.lin[r]);
        sparse_row(&s.e_z, i, p, &mut plan.lin[r]);
        sparse_row(&s.e_l, i, p + q, &mut plan.lin[r]);
    }
    for e in 0..s.n_exp() {
        let mut rows = Vec::new();
        for i in 0..n3 {
            let g = s.g[(i, e)];
            if g != 0.0 {
                rows.push((n1 + n2 + i, g));
            }
        }
        let mut h = Vec::new();
        sparse_row(&s.h_y.rows(e, 1).into_owned(), 0, 0, &mut h);
        sparse_row(&s.h_z.rows(e, 1).into_owned(), 0, p, &mut h);
        plan.exps.push((rows, h));
    }
    plan
}
