//! Compilation of a PDE system into residual evaluators.
//!
//! Each equation becomes an interior term over the domain box, restricted to
//! the axes it actually depends on. Each boundary condition becomes a term
//! over the face obtained by fixing its pinned coordinates; with every
//! coordinate pinned the term is a single point. Periodic conditions such as `u(t,0) = u(t,L)` need nothing special:
//! both applications are evaluated at the same free coordinates.

mod tape;

use crate::ir::{validate_system, Apply, Arg, BinOp, Equation, Expr, PdeSystem, ValidationError};
use crate::mlp::{init_params, jet_backward, jet_forward, JetPlan, JetWorkspace, MlpError, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::ops::Range;
use tape::{Op, Tape};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LowerError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Network(#[from] MlpError),
    #[error("term `{term}`: non-finite value {value} at `{node}`")]
    NonFinite { term: String, node: String, value: f64 },
    #[error("wrapper for `{dvar}` claims boundary condition {bc} but leaves residual {residual:e}")]
    WrapperMismatch { dvar: String, bc: usize, residual: f64 },
    #[error("expression for `{dvar}` may only use its own arguments and constants: {message}")]
    CoordinateExpr { dvar: String, message: String },
    #[error("additional loss has no data points")]
    EmptyData,
    #[error("data for `{dvar}`: {message}")]
    DataShape { dvar: String, message: String },
    #[error("unknown dependent variable `{0}`")]
    UnknownDvar(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Interior,
    Boundary,
}

/// `ψ = g·N + h` replacing the network of `dvar`, built so that the claimed
/// boundary conditions hold for every `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialWrapper {
    pub dvar: String,
    pub g: Expr,
    pub h: Expr,
    /// Indices into the system's boundary conditions.
    pub claims: Vec<usize>,
}

/// Observations of one dependent variable at points of its argument space.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub dvar: String,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// `weight · Σ_sets mean (ψ(x) − d)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditionalLoss {
    pub weight: f64,
    pub data: Vec<DataSet>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LowerOptions {
    /// Read physical parameters from the tail of the parameter vector.
    pub param_estim: bool,
    pub wrappers: Vec<TrialWrapper>,
    pub additional: Option<AdditionalLoss>,
}

/// Where each network's weights and the physical parameters live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub nets: Vec<Range<usize>>,
    pub lambda: Range<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Free(usize),
    Pin(f64),
}

#[derive(Debug, Clone)]
struct Probe {
    dvar: usize,
    slots: Vec<Slot>,
    plan: JetPlan,
}

#[derive(Debug, Clone)]
pub struct LossTerm {
    pub kind: TermKind,
    /// `eq1`, `bc3`, ... (1-based within kind).
    pub label: String,
    pub source: Equation,
    /// Free independent variables (system indices) and their intervals.
    pub free: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    probes: Vec<Probe>,
    tape: Tape,
}

impl LossTerm {
    pub fn dim(&self) -> usize {
        self.free.len()
    }

    /// Volume of the free box (1 for point terms).
    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }
}

#[derive(Debug, Clone)]
struct CompiledWrapper {
    g: Tape,
    h: Tape,
}

#[derive(Debug, Clone)]
struct CompiledData {
    weight: f64,
    sets: Vec<(usize, Vec<Vec<f64>>, Vec<f64>)>,
}

/// Closed-form fields, one coordinate expression per dependent variable.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    tapes: Vec<Tape>,
}

#[derive(Debug, Clone)]
pub struct LossProgram {
    pub system: PdeSystem,
    pub nets: Vec<MlpSpec>,
    pub layout: ParamLayout,
    pub terms: Vec<LossTerm>,
    pub param_estim: bool,
    lambda_defaults: Vec<f64>,
    wrappers: Vec<Option<CompiledWrapper>>,
    data: Option<CompiledData>,
}

#[derive(Debug, Clone, Default)]
struct ProbeBuf {
    jet: JetWorkspace,
    input: Vec<f64>,
    out: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    net_chan: Vec<f64>,
    adj: Vec<f64>,
    seed: Vec<f64>,
}

/// Scratch space for residual evaluation, one per thread.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    probes: Vec<ProbeBuf>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    jetbuf: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

// --- Compilation ---

struct ResidualCompiler<'a> {
    sys: &'a PdeSystem,
    free_pos: Vec<Option<usize>>,
    param_estim: bool,
    probes: Vec<Probe>,
    keys: HashMap<(usize, Vec<(bool, u64)>), usize>,
    tape: Tape,
}

fn slot_key(s: &Slot) -> (bool, u64) {
    match s {
        Slot::Free(k) => (false, *k as u64),
        Slot::Pin(v) => (true, v.to_bits()),
    }
}

impl<'a> ResidualCompiler<'a> {
    fn probe_for(&mut self, app: &Apply) -> usize {
        let dvar = self.sys.dvar_index(&app.dvar).expect("validated");
        let slots: Vec<Slot> = app
            .args
            .iter()
            .zip(&self.sys.dvars[dvar].args)
            .map(|(a, name)| match a {
                Arg::Var(_) => Slot::Free(self.free_pos[self.sys.ivar_index(name).expect("validated")].expect("free")),
                Arg::Pin(v) => Slot::Pin(*v),
            })
            .collect();
        let key = (dvar, slots.iter().map(slot_key).collect());
        if let Some(&p) = self.keys.get(&key) {
            return p;
        }
        self.probes.push(Probe { dvar, slots, plan: JetPlan::value_only() });
        self.keys.insert(key, self.probes.len() - 1);
        self.probes.len() - 1
    }

    fn axis(&self, app: &Apply, var: &str) -> usize {
        let d = self.sys.dvar_index(&app.dvar).expect("validated");
        self.sys.dvars[d].args.iter().position(|a| a == var).expect("validated")
    }

    /// First pass: register every probe and the channels it needs.
    fn collect(&mut self, e: &Expr) {
        let mut requests = Vec::new();
        e.walk(&mut |n| match n {
            Expr::Apply(a) => requests.push((a.clone(), Vec::new(), Vec::new())),
            Expr::Derivative { app, var, order } => {
                let ax = vec![var.clone()];
                let second = if *order == 2 { ax.clone() } else { Vec::new() };
                requests.push((app.clone(), ax, second));
            }
            Expr::GradNorm { app, vars } => requests.push((app.clone(), vars.clone(), Vec::new())),
            _ => {}
        });
        for (app, first, second) in requests {
            let p = self.probe_for(&app);
            let f = first.iter().map(|v| self.axis(&app, v)).collect();
            let s = second.iter().map(|v| self.axis(&app, v)).collect();
            let extra = JetPlan::new(f, s).expect("second axes are also first axes");
            self.probes[p].plan = self.probes[p].plan.union(&extra);
        }
    }

    fn emit(&mut self, e: &Expr) -> usize {
        let label = e.to_string();
        let op = match e {
            Expr::Const(c) => Op::Const(*c),
            Expr::Ivar(n) => Op::Coord(self.free_pos[self.sys.ivar_index(n).expect("validated")].expect("free")),
            Expr::Param(n) => {
                let j = self.sys.param_index(n).expect("validated");
                if self.param_estim {
                    Op::Lambda(j)
                } else {
                    Op::Const(self.sys.params[j].default)
                }
            }
            Expr::Apply(a) => Op::Chan { probe: self.probe_for(a), chan: 0 },
            Expr::Derivative { app, var, order } => {
                let p = self.probe_for(app);
                let ax = self.axis(app, var);
                let plan = &self.probes[p].plan;
                let chan = if *order == 1 { plan.first_channel(ax) } else { plan.second_channel(ax) };
                Op::Chan { probe: p, chan: chan.expect("collected") }
            }
            Expr::GradNorm { app, vars } => {
                let p = self.probe_for(app);
                let mut sum = None;
                for v in vars {
                    let ax = self.axis(app, v);
                    let chan = self.probes[p].plan.first_channel(ax).expect("collected");
                    let d = self.tape.push(Op::Chan { probe: p, chan }, format!("D{v}({app})"));
                    let sq = self.tape.push(Op::Bin(BinOp::Mul, d, d), format!("D{v}({app})^2"));
                    sum = Some(match sum {
                        None => sq,
                        Some(s) => self.tape.push(Op::Bin(BinOp::Add, s, sq), label.clone()),
                    });
                }
                let s = sum.expect("at least one variable");
                Op::Func(crate::ir::Func::Sqrt, s)
            }
            Expr::Neg(a) => Op::Neg(self.emit(a)),
            Expr::Func { func, arg } => Op::Func(*func, self.emit(arg)),
            Expr::Binary { op: BinOp::Pow, lhs, rhs } if rhs.const_value().is_some() => {
                let c = rhs.const_value().expect("checked");
                Op::PowC(self.emit(lhs), c)
            }
            Expr::Binary { op, lhs, rhs } => {
                let a = self.emit(lhs);
                let b = self.emit(rhs);
                Op::Bin(*op, a, b)
            }
            Expr::Piecewise { selector, branches, otherwise } => {
                let sel = self.emit(selector);
                let br = branches.iter().map(|(_, v)| self.emit(v)).collect();
                let ow = self.emit(otherwise);
                Op::Select { sel, breaks: branches.iter().map(|(b, _)| *b).collect(), branches: br, otherwise: ow }
            }
        };
        self.tape.push(op, label)
    }
}

/// Axes a term integrates over: those some application leaves free or an
/// explicit coordinate mentions. The residual is constant along the rest.
fn term_axes(sys: &PdeSystem, eq: &Equation) -> Vec<bool> {
    let mut used = vec![false; sys.ivars.len()];
    for side in [&eq.lhs, &eq.rhs] {
        side.walk(&mut |e| {
            if let Expr::Ivar(v) = e {
                used[sys.ivar_index(v).expect("validated")] = true;
            }
        });
        for app in side.applications() {
            let dv = &sys.dvars[sys.dvar_index(&app.dvar).expect("validated")];
            for (name, arg) in dv.args.iter().zip(&app.args) {
                if let Arg::Var(_) = arg {
                    used[sys.ivar_index(name).expect("validated")] = true;
                }
            }
        }
    }
    used
}

fn compile_term(
    sys: &PdeSystem,
    eq: &Equation,
    kind: TermKind,
    label: String,
    param_estim: bool,
) -> LossTerm {
    let bounds = sys.bounds();
    let used = term_axes(sys, eq);
    let free: Vec<usize> = (0..sys.ivars.len()).filter(|&i| used[i]).collect();
    let mut free_pos = vec![None; sys.ivars.len()];
    for (k, &i) in free.iter().enumerate() {
        free_pos[i] = Some(k);
    }
    let mut c = ResidualCompiler { sys, free_pos, param_estim, probes: Vec::new(), keys: HashMap::new(), tape: Tape::default() };
    c.collect(&eq.lhs);
    c.collect(&eq.rhs);
    let l = c.emit(&eq.lhs);
    let r = c.emit(&eq.rhs);
    c.tape.push(Op::Bin(BinOp::Sub, l, r), format!("{} - ({})", eq.lhs, eq.rhs));
    LossTerm {
        kind,
        label,
        source: eq.clone(),
        lower: free.iter().map(|&i| bounds[i].0).collect(),
        upper: free.iter().map(|&i| bounds[i].1).collect(),
        free,
        probes: c.probes,
        tape: c.tape,
    }
}

/// Compile an expression in the arguments of `dvar` alone.
fn compile_coordinate(sys: &PdeSystem, dvar: usize, e: &Expr) -> Result<Tape, LowerError> {
    let args = &sys.dvars[dvar].args;
    let name = &sys.dvars[dvar].name;
    let fail = |m: String| LowerError::CoordinateExpr { dvar: name.clone(), message: m };
    fn go(sys: &PdeSystem, args: &[String], e: &Expr, t: &mut Tape, fail: &dyn Fn(String) -> LowerError) -> Result<usize, LowerError> {
        let op = match e {
            Expr::Const(c) => Op::Const(*c),
            Expr::Ivar(v) => Op::Coord(args.iter().position(|a| a == v).ok_or_else(|| fail(format!("`{v}`")))?),
            Expr::Param(p) => Op::Const(sys.params[sys.param_index(p).ok_or_else(|| fail(format!("`{p}`")))?].default),
            Expr::Neg(a) => Op::Neg(go(sys, args, a, t, fail)?),
            Expr::Func { func, arg } => Op::Func(*func, go(sys, args, arg, t, fail)?),
            Expr::Binary { op: BinOp::Pow, lhs, rhs } if rhs.const_value().is_some() => {
                Op::PowC(go(sys, args, lhs, t, fail)?, rhs.const_value().expect("checked"))
            }
            Expr::Binary { op, lhs, rhs } => {
                let a = go(sys, args, lhs, t, fail)?;
                let b = go(sys, args, rhs, t, fail)?;
                Op::Bin(*op, a, b)
            }
            Expr::Piecewise { selector, branches, otherwise } => {
                let sel = go(sys, args, selector, t, fail)?;
                let br = branches.iter().map(|(_, v)| go(sys, args, v, t, fail)).collect::<Result<_, _>>()?;
                let ow = go(sys, args, otherwise, t, fail)?;
                Op::Select { sel, breaks: branches.iter().map(|(b, _)| *b).collect(), branches: br, otherwise: ow }
            }
            other => return Err(fail(format!("`{other}` is not a coordinate expression"))),
        };
        Ok(t.push(op, e.to_string()))
    }
    let mut t = Tape::default();
    go(sys, args, e, &mut t, &fail)?;
    Ok(t)
}

/// A closed-form function of one dependent variable's arguments.
#[derive(Debug, Clone)]
pub struct CoordinateField {
    tape: Tape,
}

impl CoordinateField {
    /// Compile `e`, which may use only the arguments of `dvar`, constants
    /// and parameter defaults.
    pub fn compile(sys: &PdeSystem, dvar: usize, e: &Expr) -> Result<Self, LowerError> {
        Ok(CoordinateField { tape: compile_coordinate(sys, dvar, e)? })
    }

    pub fn eval(&self, input: &[f64]) -> Result<f64, LowerError> {
        let mut out = [0.0];
        self.tape.eval_jet(input, &JetPlan::value_only(), &mut Vec::new(), &mut out).map_err(|e| LowerError::NonFinite {
            term: "field".into(),
            node: e.node,
            value: e.value,
        })?;
        Ok(out[0])
    }
}

/// Compile a system against one network per dependent variable.
pub fn lower_system(sys: &PdeSystem, nets: &[MlpSpec], options: &LowerOptions) -> Result<LossProgram, LowerError> {
    validate_system(sys, nets)?;
    let mut ranges = Vec::new();
    let mut off = 0;
    for n in nets {
        ranges.push(off..off + n.param_count());
        off += n.param_count();
    }
    let n_lambda = if options.param_estim { sys.params.len() } else { 0 };
    let layout = ParamLayout { nets: ranges, lambda: off..off + n_lambda, total: off + n_lambda };

    let mut wrappers: Vec<Option<CompiledWrapper>> = vec![None; sys.dvars.len()];
    let mut claimed = vec![false; sys.bcs.len()];
    for w in &options.wrappers {
        let d = sys.dvar_index(&w.dvar).ok_or_else(|| LowerError::UnknownDvar(w.dvar.clone()))?;
        wrappers[d] = Some(CompiledWrapper { g: compile_coordinate(sys, d, &w.g)?, h: compile_coordinate(sys, d, &w.h)? });
    }

    let mut terms = Vec::new();
    for (i, eq) in sys.equations.iter().enumerate() {
        terms.push(compile_term(sys, eq, TermKind::Interior, format!("eq{}", i + 1), options.param_estim));
    }
    let mut bc_terms = Vec::new();
    for (i, bc) in sys.bcs.iter().enumerate() {
        bc_terms.push(compile_term(sys, bc, TermKind::Boundary, format!("bc{}", i + 1), options.param_estim));
    }

    let data = match &options.additional {
        None => None,
        Some(a) => {
            if a.data.iter().all(|s| s.points.is_empty()) {
                return Err(LowerError::EmptyData);
            }
            let mut sets = Vec::new();
            for s in &a.data {
                let d = sys.dvar_index(&s.dvar).ok_or_else(|| LowerError::UnknownDvar(s.dvar.clone()))?;
                let dim = sys.dvars[d].args.len();
                let shape_err = |m: &str| LowerError::DataShape { dvar: s.dvar.clone(), message: m.to_string() };
                if s.points.len() != s.values.len() {
                    return Err(shape_err("points and values differ in length"));
                }
                if s.points.iter().any(|p| p.len() != dim) {
                    return Err(shape_err("point dimension does not match the variable's arguments"));
                }
                if !s.points.is_empty() {
                    sets.push((d, s.points.clone(), s.values.clone()));
                }
            }
            Some(CompiledData { weight: a.weight, sets })
        }
    };

    let mut program = LossProgram {
        system: sys.clone(),
        nets: nets.to_vec(),
        layout,
        terms: Vec::new(),
        param_estim: options.param_estim,
        lambda_defaults: sys.params.iter().map(|p| p.default).collect(),
        wrappers,
        data,
    };

    // Wrapped variables must satisfy their claimed conditions for any weights.
    program.terms = bc_terms.clone();
    for w in &options.wrappers {
        for &bc in &w.claims {
            if bc >= sys.bcs.len() {
                return Err(LowerError::WrapperMismatch { dvar: w.dvar.clone(), bc, residual: f64::NAN });
            }
            claimed[bc] = true;
            for seed in 0..2u64 {
                let params = program.initial_params(seed);
                let term = &program.terms[bc];
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + bc as u64);
                let mut ws = Workspace::new();
                for _ in 0..16 {
                    let p: Vec<f64> = term.lower.iter().zip(&term.upper).map(|(a, b)| rng.gen_range(*a..=*b)).collect();
                    let r = program.residual(bc, &p, &params, &mut ws)?;
                    if r.abs() > 1e-10 {
                        return Err(LowerError::WrapperMismatch { dvar: w.dvar.clone(), bc, residual: r });
                    }
                }
            }
        }
    }
    terms.extend(bc_terms.into_iter().enumerate().filter(|(i, _)| !claimed[*i]).map(|(_, t)| t));
    program.terms = terms;
    Ok(program)
}

// --- Evaluation ---

/// What the probes read: networks under parameters, or closed-form fields.
#[derive(Clone, Copy)]
enum Fields<'a> {
    Nets(&'a [f64]),
    Exact(&'a ExactSolution),
}

/// `out = a·b + c` in jet arithmetic.
fn jet_fma(plan: &JetPlan, a: &[f64], b: &[f64], c: &[f64], out: &mut [f64]) {
    let nf = plan.first_axes().len();
    out[0] = a[0] * b[0] + c[0];
    for k in 1..=nf {
        out[k] = a[k] * b[0] + a[0] * b[k] + c[k];
    }
    for (s, &p) in plan.second_pairs().iter().enumerate() {
        let k = 1 + nf + s;
        out[k] = a[k] * b[0] + 2.0 * a[1 + p] * b[1 + p] + a[0] * b[k] + c[k];
    }
}

impl LossProgram {
    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Glorot initialization of every network, physical parameters at their
    /// defaults. Network `i` uses seed `seed + i`.
    pub fn initial_params(&self, seed: u64) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.layout.total);
        for (i, n) in self.nets.iter().enumerate() {
            p.extend(init_params(n, seed.wrapping_add(i as u64)));
        }
        if self.param_estim {
            p.extend_from_slice(&self.lambda_defaults);
        }
        p
    }

    /// Physical parameters in effect for `params`.
    pub fn lambda<'a>(&'a self, params: &'a [f64]) -> &'a [f64] {
        if self.param_estim {
            &params[self.layout.lambda.clone()]
        } else {
            &self.lambda_defaults
        }
    }

    pub fn has_data(&self) -> bool {
        self.data.is_some()
    }

    fn check_len(&self, params: &[f64]) -> Result<(), LowerError> {
        if params.len() != self.layout.total {
            return Err(LowerError::ParamLength { expected: self.layout.total, got: params.len() });
        }
        Ok(())
    }

    fn nan_err(&self, term: &str, e: tape::NonFinite) -> LowerError {
        LowerError::NonFinite { term: term.to_string(), node: e.node, value: e.value }
    }

    /// Jet of dependent variable `dvar` at `input` into `buf.out`.
    fn eval_field(
        &self,
        dvar: usize,
        plan: &JetPlan,
        fields: Fields<'_>,
        buf: &mut ProbeBuf,
        jetbuf: &mut Vec<f64>,
        label: &str,
    ) -> Result<(), LowerError> {
        let nc = plan.channels();
        buf.out.clear();
        buf.out.resize(nc, 0.0);
        match fields {
            Fields::Exact(sol) => {
                sol.tapes[dvar].eval_jet(&buf.input, plan, jetbuf, &mut buf.out).map_err(|e| self.nan_err(label, e))?;
            }
            Fields::Nets(params) => {
                let w = &params[self.layout.nets[dvar].clone()];
                jet_forward(&self.nets[dvar], w, &buf.input, plan, &mut buf.jet).map_err(|e| match e {
                    MlpError::NonFinite(v) => LowerError::NonFinite {
                        term: label.to_string(),
                        node: format!("network {}", self.system.dvars[dvar].name),
                        value: v,
                    },
                    other => other.into(),
                })?;
                match &self.wrappers[dvar] {
                    None => buf.out.copy_from_slice(buf.jet.output()),
                    Some(wr) => {
                        buf.g.resize(nc, 0.0);
                        buf.h.resize(nc, 0.0);
                        wr.g.eval_jet(&buf.input, plan, jetbuf, &mut buf.g).map_err(|e| self.nan_err(label, e))?;
                        wr.h.eval_jet(&buf.input, plan, jetbuf, &mut buf.h).map_err(|e| self.nan_err(label, e))?;
                        buf.net_chan.clear();
                        buf.net_chan.extend_from_slice(buf.jet.output());
                        jet_fma(plan, &buf.g, &buf.net_chan, &buf.h, &mut buf.out);
                    }
                }
            }
        }
        Ok(())
    }

    fn forward_term(&self, ti: usize, point: &[f64], fields: Fields<'_>, ws: &mut Workspace) -> Result<f64, LowerError> {
        let term = &self.terms[ti];
        if point.len() != term.dim() {
            return Err(LowerError::DataShape {
                dvar: term.label.clone(),
                message: format!("point has {} coordinates, term has {}", point.len(), term.dim()),
            });
        }
        if let Fields::Nets(p) = fields {
            self.check_len(p)?;
        }
        ws.probes.resize_with(term.probes.len().max(ws.probes.len()), ProbeBuf::default);
        for (pi, probe) in term.probes.iter().enumerate() {
            let buf = &mut ws.probes[pi];
            buf.input.clear();
            buf.input.extend(probe.slots.iter().map(|s| match s {
                Slot::Free(k) => point[*k],
                Slot::Pin(v) => *v,
            }));
            self.eval_field(probe.dvar, &probe.plan, fields, buf, &mut ws.jetbuf, &term.label)?;
        }
        let lambda: &[f64] = match fields {
            Fields::Nets(p) => self.lambda(p),
            Fields::Exact(_) => &self.lambda_defaults,
        };
        let probes = &ws.probes;
        term.tape
            .forward(point, lambda, &|p, c| probes[p].out[c], &mut ws.vals)
            .map_err(|e| self.nan_err(&term.label, e))
    }

    /// Residual of term `ti` at a point of its free box.
    pub fn residual(&self, ti: usize, point: &[f64], params: &[f64], ws: &mut Workspace) -> Result<f64, LowerError> {
        self.forward_term(ti, point, Fields::Nets(params), ws)
    }

    /// Allocate-on-call convenience form of [`LossProgram::residual`].
    pub fn eval_residual(&self, ti: usize, point: &[f64], params: &[f64]) -> Result<f64, LowerError> {
        self.residual(ti, point, params, &mut Workspace::new())
    }

    /// Residual with a closed-form solution substituted for the networks.
    pub fn exact_residual(&self, ti: usize, point: &[f64], sol: &ExactSolution) -> Result<f64, LowerError> {
        self.forward_term(ti, point, Fields::Exact(sol), &mut Workspace::new())
    }

    /// Residual `r` at a point; adds `weight · ∂(r²)/∂θ` to `grad`.
    pub fn residual_grad(
        &self,
        ti: usize,
        point: &[f64],
        params: &[f64],
        ws: &mut Workspace,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64, LowerError> {
        let r = self.forward_term(ti, point, Fields::Nets(params), ws)?;
        let seed = 2.0 * weight * r;
        if seed == 0.0 {
            return Ok(r);
        }
        let term = &self.terms[ti];
        for (pi, probe) in term.probes.iter().enumerate() {
            let b = &mut ws.probes[pi];
            b.adj.clear();
            b.adj.resize(probe.plan.channels(), 0.0);
        }
        {
            let probes = &mut ws.probes;
            let lam = self.layout.lambda.start;
            let estim = self.param_estim;
            let (vals, adj) = (&ws.vals, &mut ws.adj);
            let mut lam_grad = vec![0.0; self.layout.lambda.len()];
            term.tape.backward(
                vals,
                seed,
                adj,
                &mut |p, c, g| probes[p].adj[c] += g,
                &mut |j, g| {
                    if estim {
                        lam_grad[j] += g
                    }
                },
            );
            for (j, g) in lam_grad.iter().enumerate() {
                grad[lam + j] += g;
            }
        }
        for (pi, probe) in term.probes.iter().enumerate() {
            self.backprop_field(probe.dvar, &probe.plan, params, &mut ws.probes[pi], grad);
        }
        Ok(r)
    }

    /// Push the channel adjoints in `buf.adj` through wrapper and network.
    fn backprop_field(&self, dvar: usize, plan: &JetPlan, params: &[f64], buf: &mut ProbeBuf, grad: &mut [f64]) {
        if buf.adj.iter().all(|&a| a == 0.0) {
            return;
        }
        buf.seed.clear();
        match &self.wrappers[dvar] {
            None => buf.seed.extend_from_slice(&buf.adj),
            Some(_) => {
                // ψ = g·N + h: adjoint of N's channels.
                let nf = plan.first_axes().len();
                let (g, a) = (&buf.g, &buf.adj);
                buf.seed.resize(a.len(), 0.0);
                let s = &mut buf.seed;
                s[0] = g[0] * a[0];
                for k in 1..=nf {
                    s[0] += g[k] * a[k];
                    s[k] = g[0] * a[k];
                }
                for (si, &p) in plan.second_pairs().iter().enumerate() {
                    let k = 1 + nf + si;
                    s[0] += g[k] * a[k];
                    s[1 + p] += 2.0 * g[1 + p] * a[k];
                    s[k] = g[0] * a[k];
                }
            }
        }
        let range = self.layout.nets[dvar].clone();
        let w = &params[range.clone()];
        jet_backward(&self.nets[dvar], w, plan, &mut buf.jet, &buf.seed, &mut grad[range]);
    }

    /// Value of dependent variable `dvar` (wrapper applied) at `input`.
    pub fn predict(&self, dvar: usize, params: &[f64], input: &[f64]) -> Result<f64, LowerError> {
        self.check_len(params)?;
        let mut buf = ProbeBuf { input: input.to_vec(), ..Default::default() };
        self.eval_field(dvar, &JetPlan::value_only(), Fields::Nets(params), &mut buf, &mut Vec::new(), "predict")?;
        Ok(buf.out[0])
    }

    /// Additional data loss, if configured. Adds its gradient to `grad` when given.
    pub fn data_loss(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> Result<Option<f64>, LowerError> {
        let Some(data) = &self.data else { return Ok(None) };
        self.check_len(params)?;
        let plan = JetPlan::value_only();
        let mut buf = ProbeBuf::default();
        let mut jetbuf = Vec::new();
        let mut total = 0.0;
        for (dvar, points, values) in &data.sets {
            let scale = data.weight / points.len() as f64;
            for (x, v) in points.iter().zip(values) {
                buf.input.clear();
                buf.input.extend_from_slice(x);
                self.eval_field(*dvar, &plan, Fields::Nets(params), &mut buf, &mut jetbuf, "data")?;
                let r = buf.out[0] - v;
                total += scale * r * r;
                if let Some(g) = grad.as_deref_mut() {
                    buf.adj.clear();
                    buf.adj.push(2.0 * scale * r);
                    self.backprop_field(*dvar, &plan, params, &mut buf, g);
                }
            }
        }
        Ok(Some(total))
    }

    /// Compile closed-form fields, one expression per dependent variable in
    /// declaration order.
    pub fn compile_exact(&self, exprs: &[Expr]) -> Result<ExactSolution, LowerError> {
        if exprs.len() != self.system.dvars.len() {
            return Err(LowerError::UnknownDvar(format!("expected {} expressions", self.system.dvars.len())));
        }
        let tapes = exprs.iter().enumerate().map(|(d, e)| compile_coordinate(&self.system, d, e)).collect::<Result<_, _>>()?;
        Ok(ExactSolution { tapes })
    }

    /// Value of a closed-form field at a point of its argument space.
    pub fn exact_value(&self, sol: &ExactSolution, dvar: usize, input: &[f64]) -> Result<f64, LowerError> {
        let mut out = [0.0];
        sol.tapes[dvar]
            .eval_jet(input, &JetPlan::value_only(), &mut Vec::new(), &mut out)
            .map_err(|e| self.nan_err("exact", e))?;
        Ok(out[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_spec;
    use crate::mlp::Activation;

    const POISSON: &str = "ivars x y\ndvars u(x,y)\ndomain x in [0, 1]\ndomain y in [0, 1]
eq Dxx(u(x,y)) + Dyy(u(x,y)) = -sin(pi*x)*sin(pi*y)
bc u(0,y) = 0\nbc u(1,y) = -sin(pi*1)*sin(pi*y)\nbc u(x,0) = 0\nbc u(x,1) = -sin(pi*x)*sin(pi*1)";

    fn poisson() -> LossProgram {
        let sys = parse_spec(POISSON).unwrap();
        lower_system(&sys, &[MlpSpec::dense(2, &[16, 16], 1, Activation::Sigmoid)], &LowerOptions::default()).unwrap()
    }

    #[test]
    fn poisson_terms_and_dims() {
        let p = poisson();
        assert_eq!(p.terms.len(), 5);
        assert_eq!(p.terms[0].kind, TermKind::Interior);
        assert_eq!(p.terms[0].dim(), 2);
        assert!(p.terms[1..].iter().all(|t| t.kind == TermKind::Boundary && t.dim() == 1));
        assert_eq!(p.param_count(), 337);
    }

    #[test]
    fn exact_solution_nulls_poisson() {
        let p = poisson();
        let decl = p.system.declarations();
        let e = crate::ir::parse_expression("sin(pi*x)*sin(pi*y)/(2*pi^2)", &decl).unwrap();
        let sol = p.compile_exact(&[e]).unwrap();
        let r = p.exact_residual(0, &[0.3, 0.7], &sol).unwrap();
        assert!(r.abs() < 1e-12, "{r}");
        for t in 1..5 {
            assert!(p.exact_residual(t, &[0.4], &sol).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn zero_dimensional_boundary_term() {
        let sys = parse_spec("ivars t\ndvars x(t)\ndomain t in [0, 1]\neq Dt(x(t)) = -x(t)\nbc x(0) = 1").unwrap();
        let p = lower_system(&sys, &[MlpSpec::dense(1, &[4], 1, Activation::Tanh)], &LowerOptions::default()).unwrap();
        assert_eq!(p.terms[1].dim(), 0);
        assert_eq!(p.terms[1].volume(), 1.0);
        let params = p.initial_params(0);
        let n = crate::mlp::forward(&p.nets[0], &params, &[0.0]).unwrap()[0];
        assert!((p.eval_residual(1, &[], &params).unwrap() - (n - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn wrapper_absorbs_initial_condition() {
        let sys = parse_spec("ivars t\ndvars x(t)\ndomain t in [0, 1]\neq Dt(x(t)) = -x(t)\nbc x(0) = 1").unwrap();
        let decl = sys.declarations();
        let w = TrialWrapper {
            dvar: "x".into(),
            g: crate::ir::parse_expression("t", &decl).unwrap(),
            h: crate::ir::parse_expression("1", &decl).unwrap(),
            claims: vec![0],
        };
        let opts = LowerOptions { wrappers: vec![w.clone()], ..Default::default() };
        let p = lower_system(&sys, &[MlpSpec::dense(1, &[4], 1, Activation::Tanh)], &opts).unwrap();
        assert_eq!(p.terms.len(), 1);
        // A wrapper that does not satisfy its claim is rejected.
        let bad = TrialWrapper { h: crate::ir::parse_expression("2", &decl).unwrap(), ..w };
        let opts = LowerOptions { wrappers: vec![bad], ..Default::default() };
        assert!(matches!(
            lower_system(&sys, &[MlpSpec::dense(1, &[4], 1, Activation::Tanh)], &opts),
            Err(LowerError::WrapperMismatch { .. })
        ));
    }

    #[test]
    fn data_loss_single_point() {
        let sys = parse_spec("ivars t\ndvars x(t)\ndomain t in [0, 1]\neq Dt(x(t)) = 0\nbc x(0) = 0").unwrap();
        let net = MlpSpec::dense(1, &[3], 1, Activation::Tanh);
        let probe = lower_system(&sys, &[net.clone()], &LowerOptions::default()).unwrap();
        let params = probe.initial_params(1);
        let n = probe.predict(0, &params, &[0.5]).unwrap();
        let data = AdditionalLoss { weight: 1.0, data: vec![DataSet { dvar: "x".into(), points: vec![vec![0.5]], values: vec![n - 2.0] }] };
        let p = lower_system(&sys, &[net.clone()], &LowerOptions { additional: Some(data), ..Default::default() }).unwrap();
        assert!((p.data_loss(&params, None).unwrap().unwrap() - 4.0).abs() < 1e-12);
        let empty = AdditionalLoss { weight: 1.0, data: vec![DataSet { dvar: "x".into(), points: vec![], values: vec![] }] };
        assert_eq!(
            lower_system(&sys, &[net], &LowerOptions { additional: Some(empty), ..Default::default() }).unwrap_err(),
            LowerError::EmptyData
        );
    }

    #[test]
    fn param_estim_reads_tail() {
        let sys = parse_spec("ivars t\ndvars x(t)\nparams k\ndefault k = 3\ndomain t in [0, 1]\neq Dt(x(t)) = k\nbc x(0) = 0").unwrap();
        let net = MlpSpec::dense(1, &[3], 1, Activation::Tanh);
        let off = lower_system(&sys, &[net.clone()], &LowerOptions::default()).unwrap();
        let on = lower_system(&sys, &[net], &LowerOptions { param_estim: true, ..Default::default() }).unwrap();
        let mut p = on.initial_params(0);
        assert_eq!(*p.last().unwrap(), 3.0);
        let base = off.eval_residual(0, &[0.5], &p[..p.len() - 1]).unwrap();
        *p.last_mut().unwrap() = 5.0;
        let moved = on.eval_residual(0, &[0.5], &p).unwrap();
        assert!((base - moved - 2.0).abs() < 1e-12);
        let mut g = vec![0.0; p.len()];
        let r = on.residual_grad(0, &[0.5], &p, &mut Workspace::new(), 1.0, &mut g).unwrap();
        assert!((g[p.len() - 1] + 2.0 * r).abs() < 1e-12);
    }

    #[test]
    fn non_finite_names_the_node() {
        let sys = parse_spec("ivars x\ndvars u(x)\ndomain x in [0, 1]\neq log(x - 2) = u(x)\nbc u(0) = 0").unwrap();
        let p = lower_system(&sys, &[MlpSpec::dense(1, &[3], 1, Activation::Tanh)], &LowerOptions::default()).unwrap();
        let err = p.eval_residual(0, &[0.5], &p.initial_params(0)).unwrap_err();
        assert!(matches!(err, LowerError::NonFinite { ref node, .. } if node == "log(x - 2)"), "{err}");
    }
}
