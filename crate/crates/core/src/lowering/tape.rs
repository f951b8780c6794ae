//! Flat instruction lists compiled from expressions.
//!
//! Residual tapes read network jet channels and are differentiated in
//! reverse. Coordinate tapes (wrappers, closed-form solutions) contain only
//! coordinates and constants and are evaluated in forward jet arithmetic.

use crate::ir::{BinOp, Func};
use crate::mlp::JetPlan;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Const(f64),
    Coord(usize),
    Lambda(usize),
    Chan { probe: usize, chan: usize },
    Neg(usize),
    Func(Func, usize),
    Bin(BinOp, usize, usize),
    PowC(usize, f64),
    Select { sel: usize, breaks: Vec<f64>, branches: Vec<usize>, otherwise: usize },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Tape {
    pub ops: Vec<Op>,
    /// Printed source node of each op, for error messages.
    pub labels: Vec<String>,
}

/// Non-finite intermediate: offending node and its value.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NonFinite {
    pub node: String,
    pub value: f64,
}

fn select(v: f64, breaks: &[f64], branches: &[usize], otherwise: usize) -> usize {
    breaks.iter().position(|&b| v < b).map_or(otherwise, |i| branches[i])
}

fn pow_c(a: f64, c: f64) -> f64 {
    if c.fract() == 0.0 && c.abs() < 64.0 {
        a.powi(c as i32)
    } else {
        a.powf(c)
    }
}

impl Tape {
    pub fn push(&mut self, op: Op, label: String) -> usize {
        self.ops.push(op);
        self.labels.push(label);
        self.ops.len() - 1
    }

    pub fn out(&self) -> usize {
        self.ops.len() - 1
    }

    /// Scalar forward pass. `chan(probe, chan)` supplies jet channels.
    pub fn forward(
        &self,
        coords: &[f64],
        lambda: &[f64],
        chan: &dyn Fn(usize, usize) -> f64,
        vals: &mut Vec<f64>,
    ) -> Result<f64, NonFinite> {
        vals.clear();
        vals.reserve(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Const(c) => *c,
                Op::Coord(k) => coords[*k],
                Op::Lambda(j) => lambda[*j],
                Op::Chan { probe, chan: c } => chan(*probe, *c),
                Op::Neg(a) => -vals[*a],
                Op::Func(f, a) => f.eval3(vals[*a]).0,
                Op::PowC(a, c) => pow_c(vals[*a], *c),
                Op::Bin(op, a, b) => {
                    let (x, y) = (vals[*a], vals[*b]);
                    match op {
                        BinOp::Add => x + y,
                        BinOp::Sub => x - y,
                        BinOp::Mul => x * y,
                        BinOp::Div => x / y,
                        BinOp::Pow => x.powf(y),
                        BinOp::Max => x.max(y),
                        BinOp::Min => x.min(y),
                    }
                }
                Op::Select { sel, breaks, branches, otherwise } => vals[select(vals[*sel], breaks, branches, *otherwise)],
            };
            if !v.is_finite() {
                return Err(NonFinite { node: self.labels[i].clone(), value: v });
            }
            vals.push(v);
        }
        Ok(vals[self.out()])
    }

    /// Reverse pass after `forward`, seeded with `seed` at the output.
    /// Channel adjoints go to `chan_adj(probe, chan, value)`, parameter
    /// adjoints to `lambda_adj`.
    pub fn backward(
        &self,
        vals: &[f64],
        seed: f64,
        adj: &mut Vec<f64>,
        chan_adj: &mut dyn FnMut(usize, usize, f64),
        lambda_adj: &mut dyn FnMut(usize, f64),
    ) {
        adj.clear();
        adj.resize(self.ops.len(), 0.0);
        adj[self.out()] = seed;
        for i in (0..self.ops.len()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match &self.ops[i] {
                Op::Const(_) | Op::Coord(_) => {}
                Op::Lambda(j) => lambda_adj(*j, g),
                Op::Chan { probe, chan } => chan_adj(*probe, *chan, g),
                Op::Neg(a) => adj[*a] -= g,
                Op::Func(f, a) => adj[*a] += g * f.eval3(vals[*a]).1,
                Op::PowC(a, c) => adj[*a] += g * c * pow_c(vals[*a], c - 1.0),
                Op::Bin(op, a, b) => {
                    let (x, y) = (vals[*a], vals[*b]);
                    match op {
                        BinOp::Add => {
                            adj[*a] += g;
                            adj[*b] += g;
                        }
                        BinOp::Sub => {
                            adj[*a] += g;
                            adj[*b] -= g;
                        }
                        BinOp::Mul => {
                            adj[*a] += g * y;
                            adj[*b] += g * x;
                        }
                        BinOp::Div => {
                            adj[*a] += g / y;
                            adj[*b] -= g * x / (y * y);
                        }
                        BinOp::Pow => {
                            adj[*a] += g * y * x.powf(y - 1.0);
                            if x > 0.0 {
                                adj[*b] += g * vals[i] * x.ln();
                            }
                        }
                        BinOp::Max | BinOp::Min => {
                            let first = if *op == BinOp::Max { x >= y } else { x <= y };
                            adj[if first { *a } else { *b }] += g;
                        }
                    }
                }
                Op::Select { sel, breaks, branches, otherwise } => {
                    adj[select(vals[*sel], breaks, branches, *otherwise)] += g
                }
            }
        }
    }

    /// Forward jet arithmetic over coordinates. Only valid for tapes without
    /// channel or parameter reads. Writes `plan.channels()` values to `out`.
    pub fn eval_jet(&self, coords: &[f64], plan: &JetPlan, buf: &mut Vec<f64>, out: &mut [f64]) -> Result<(), NonFinite> {
        let nc = plan.channels();
        let nf = plan.first_axes().len();
        let pairs = plan.second_pairs();
        buf.clear();
        buf.resize(self.ops.len() * nc, 0.0);
        for (i, op) in self.ops.iter().enumerate() {
            let (done, rest) = buf.split_at_mut(i * nc);
            let y = &mut rest[..nc];
            let v = |k: usize| &done[k * nc..(k + 1) * nc];
            // Chain rule for y = f(x) with f', f''.
            let unary = |y: &mut [f64], x: &[f64], f0: f64, f1: f64, f2: f64| {
                y[0] = f0;
                for c in 0..nf {
                    y[1 + c] = f1 * x[1 + c];
                }
                for (s, &p) in pairs.iter().enumerate() {
                    y[1 + nf + s] = f2 * x[1 + p] * x[1 + p] + f1 * x[1 + nf + s];
                }
            };
            let product = |y: &mut [f64], a: &[f64], b: &[f64]| {
                y[0] = a[0] * b[0];
                for c in 0..nf {
                    y[1 + c] = a[1 + c] * b[0] + a[0] * b[1 + c];
                }
                for (s, &p) in pairs.iter().enumerate() {
                    let k = 1 + nf + s;
                    y[k] = a[k] * b[0] + 2.0 * a[1 + p] * b[1 + p] + a[0] * b[k];
                }
            };
            match op {
                Op::Const(c) => y[0] = *c,
                Op::Coord(k) => {
                    y[0] = coords[*k];
                    if let Some(c) = plan.first_channel(*k) {
                        y[c] = 1.0;
                    }
                }
                Op::Lambda(_) | Op::Chan { .. } => unreachable!("coordinate tapes are checked at compile time"),
                Op::Neg(a) => y.iter_mut().zip(v(*a)).for_each(|(o, x)| *o = -x),
                Op::Func(f, a) => {
                    let x = v(*a);
                    let (f0, f1, f2) = f.eval3(x[0]);
                    unary(y, x, f0, f1, f2);
                }
                Op::PowC(a, c) => {
                    let x = v(*a);
                    let x0 = x[0];
                    let (f0, f1, f2) = (pow_c(x0, *c), c * pow_c(x0, c - 1.0), c * (c - 1.0) * pow_c(x0, c - 2.0));
                    unary(y, x, f0, f1, f2);
                }
                Op::Bin(op, a, b) => {
                    let (xa, xb) = (v(*a), v(*b));
                    match op {
                        BinOp::Add => y.iter_mut().enumerate().for_each(|(c, o)| *o = xa[c] + xb[c]),
                        BinOp::Sub => y.iter_mut().enumerate().for_each(|(c, o)| *o = xa[c] - xb[c]),
                        BinOp::Mul => product(y, xa, xb),
                        BinOp::Div => {
                            let b0 = xb[0];
                            let mut r = vec![0.0; nc];
                            unary(&mut r, xb, 1.0 / b0, -1.0 / (b0 * b0), 2.0 / (b0 * b0 * b0));
                            product(y, xa, &r);
                        }
                        BinOp::Pow => {
                            // a^b = exp(b ln a)
                            let a0 = xa[0];
                            let mut l = vec![0.0; nc];
                            unary(&mut l, xa, a0.ln(), 1.0 / a0, -1.0 / (a0 * a0));
                            let mut m = vec![0.0; nc];
                            product(&mut m, xb, &l);
                            let e = m[0].exp();
                            unary(y, &m, e, e, e);
                        }
                        BinOp::Max | BinOp::Min => {
                            let first = if *op == BinOp::Max { xa[0] >= xb[0] } else { xa[0] <= xb[0] };
                            y.copy_from_slice(if first { xa } else { xb });
                        }
                    }
                }
                Op::Select { sel, breaks, branches, otherwise } => {
                    let k = select(v(*sel)[0], breaks, branches, *otherwise);
                    let src = v(k).to_vec();
                    y.copy_from_slice(&src);
                }
            }
            if let Some(bad) = y.iter().find(|x| !x.is_finite()) {
                return Err(NonFinite { node: self.labels[i].clone(), value: *bad });
            }
        }
        out.copy_from_slice(&buf[self.out() * nc..(self.out() + 1) * nc]);
        Ok(())
    }
}
