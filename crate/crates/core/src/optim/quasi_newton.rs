use super::{Objective, OptimError, Status};
use std::collections::VecDeque;

/// Skip curvature pairs with `sᵀy` at or below this.
const CURVATURE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QnKind {
    Bfgs,
    Lbfgs { memory: usize },
}

/// Strong-Wolfe line search: bracketing followed by cubic-interpolation zoom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub c1: f64,
    pub c2: f64,
    pub max_trials: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch { c1: 1e-4, c2: 0.1, max_trials: 30 }
    }
}

#[derive(Clone)]
struct Trial {
    a: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

fn cubic_min(lo: &Trial, hi: &Trial) -> f64 {
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let (a, b) = (lo.a.min(hi.a), lo.a.max(hi.a));
    let mid = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (hi.a - lo.a).signum() * disc.sqrt();
    let t = hi.a - (hi.a - lo.a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    // Keep well inside the bracket so it keeps shrinking.
    let pad = 0.1 * (b - a);
    if t.is_finite() && t > a + pad && t < b - pad {
        t
    } else {
        mid
    }
}

impl LineSearch {
    fn probe(obj: &mut dyn Objective, x: &[f64], d: &[f64], a: f64) -> Trial {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        match obj.evaluate(&xt) {
            Ok((f, g)) if f.is_finite() => {
                let slope = dot(&g, d);
                Trial { a, f, slope, x: xt, g }
            }
            _ => Trial { a, f: f64::INFINITY, slope: f64::NAN, x: xt, g: Vec::new() },
        }
    }

    /// Step along descent direction `d` from `x` (loss `f0`, slope `s0 < 0`).
    fn search(&self, obj: &mut dyn Objective, x: &[f64], d: &[f64], f0: f64, s0: f64, a0: f64) -> Option<Trial> {
        let armijo = |t: &Trial| t.f <= f0 + self.c1 * t.a * s0;
        let curvature = |t: &Trial| t.slope.abs() <= -self.c2 * s0;
        let mut prev = Trial { a: 0.0, f: f0, slope: s0, x: x.to_vec(), g: Vec::new() };
        let mut a = a0;
        let mut trials = 0;
        let (mut lo, mut hi) = loop {
            if trials == self.max_trials {
                return (prev.a > 0.0).then_some(prev);
            }
            trials += 1;
            let t = Self::probe(obj, x, d, a);
            if !t.f.is_finite() {
                // Overshot into a non-finite region; pull back.
                a = 0.5 * (prev.a + a);
                continue;
            }
            if !armijo(&t) || (prev.a > 0.0 && t.f >= prev.f) {
                break (prev, t);
            }
            if curvature(&t) {
                return Some(t);
            }
            if t.slope >= 0.0 {
                break (t, prev);
            }
            a = 2.0 * t.a;
            prev = t;
        };
        while trials < self.max_trials {
            trials += 1;
            let a = if hi.f.is_finite() && hi.slope.is_finite() { cubic_min(&lo, &hi) } else { 0.5 * (lo.a + hi.a) };
            let t = Self::probe(obj, x, d, a);
            if !armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if curvature(&t) {
                    return Some(t);
                }
                if t.slope * (hi.a - lo.a) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
            if (hi.a - lo.a).abs() <= 1e-16 * lo.a.abs().max(1e-300) {
                break;
            }
        }
        // Out of trials: the low end still satisfies sufficient decrease.
        (lo.a > 0.0).then_some(lo)
    }
}

/// Result of one quasi-Newton iteration: loss at the (possibly unchanged)
/// current point, and a stop reason if the method cannot continue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QnStep {
    pub loss: f64,
    pub moved: bool,
    pub stop: Option<Status>,
}

#[derive(Debug, Clone)]
pub struct QuasiNewton {
    pub kind: QnKind,
    pub line_search: LineSearch,
    /// Stop when `‖g‖∞` falls below this.
    pub gtol: f64,
    n: usize,
    /// Dense inverse Hessian (BFGS), row-major; empty until the first pair.
    h: Vec<f64>,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    current: Option<(f64, Vec<f64>)>,
    skipped: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl QuasiNewton {
    pub fn new(kind: QnKind, n: usize) -> Self {
        QuasiNewton {
            kind,
            line_search: LineSearch::default(),
            gtol: 1e-8,
            n,
            h: Vec::new(),
            pairs: VecDeque::new(),
            current: None,
            skipped: 0,
        }
    }

    /// Curvature pairs rejected so far.
    pub fn skipped_pairs(&self) -> usize {
        self.skipped
    }

    /// Dense inverse-Hessian approximation (BFGS only, after one update).
    pub fn inverse_hessian(&self) -> Option<&[f64]> {
        (!self.h.is_empty()).then_some(&self.h[..])
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n;
        match self.kind {
            QnKind::Bfgs => {
                if self.h.is_empty() {
                    return g.iter().map(|x| -x).collect();
                }
                (0..n).map(|i| -dot(&self.h[i * n..(i + 1) * n], g)).collect()
            }
            QnKind::Lbfgs { .. } => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(self.pairs.len());
                for (s, y, rho) in self.pairs.iter().rev() {
                    let a = rho * dot(s, &q);
                    q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                    alphas.push(a);
                }
                if let Some((s, y, _)) = self.pairs.back() {
                    let gamma = dot(s, y) / dot(y, y);
                    q.iter_mut().for_each(|v| *v *= gamma);
                }
                for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
                    let b = rho * dot(y, &q);
                    q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
                }
                q.iter_mut().for_each(|v| *v = -*v);
                q
            }
        }
    }

    fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > CURVATURE_EPS) {
            self.skipped += 1;
            return;
        }
        let rho = 1.0 / sy;
        let n = self.n;
        match self.kind {
            QnKind::Bfgs => {
                if self.h.is_empty() {
                    // Unscaled identity start; the sᵀy/yᵀy scaling took
                    // markedly shorter early steps on network losses.
                    self.h = vec![0.0; n * n];
                    for i in 0..n {
                        self.h[i * n + i] = 1.0;
                    }
                }
                let hy: Vec<f64> = (0..n).map(|i| dot(&self.h[i * n..(i + 1) * n], &y)).collect();
                let yhy = dot(&y, &hy);
                let c = rho * rho * yhy + rho;
                // Upper triangle, mirrored, so H stays exactly symmetric.
                for i in 0..n {
                    for j in i..n {
                        let v = self.h[i * n + j] + c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                        self.h[i * n + j] = v;
                        self.h[j * n + i] = v;
                    }
                }
            }
            QnKind::Lbfgs { memory } => {
                if self.pairs.len() == memory.max(1) {
                    self.pairs.pop_front();
                }
                self.pairs.push_back((s, y, rho));
            }
        }
    }

    fn reset(&mut self) {
        self.h.clear();
        self.pairs.clear();
    }

    /// One iteration from `x`. With `refresh` the loss and gradient at `x`
    /// are recomputed rather than carried over from the previous iteration
    /// (needed when the objective changes between iterations).
    pub fn step(&mut self, obj: &mut dyn Objective, x: &mut [f64], refresh: bool) -> Result<QnStep, OptimError> {
        if refresh || self.current.is_none() {
            let (f, g) = obj.evaluate(x)?;
            if !f.is_finite() {
                return Err(OptimError::NonFiniteLoss(f));
            }
            self.current = Some((f, g));
        }
        let (f0, g0) = self.current.clone().expect("set above");
        if g0.iter().all(|v| v.abs() < self.gtol) {
            return Ok(QnStep { loss: f0, moved: false, stop: Some(Status::GradientConverged) });
        }
        let mut d = self.direction(&g0);
        let mut slope = dot(&g0, &d);
        if !(slope < 0.0) {
            self.reset();
            d = g0.iter().map(|v| -v).collect();
            slope = dot(&g0, &d);
        }
        let fresh_start = self.h.is_empty() && self.pairs.is_empty();
        let alpha = if fresh_start { (1.0 / d.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0) } else { 1.0 };
        let Some(Trial { x: xt, f: ft, g: gt, .. }) = self.line_search.search(obj, x, &d, f0, slope, alpha) else {
            return Ok(QnStep { loss: f0, moved: false, stop: Some(Status::LineSearchFailed) });
        };
        let s: Vec<f64> = xt.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g0).map(|(a, b)| a - b).collect();
        x.copy_from_slice(&xt);
        self.update(s, y);
        let stop = gt.iter().all(|v| v.abs() < self.gtol).then_some(Status::GradientConverged);
        self.current = Some((ft, gt));
        Ok(QnStep { loss: ft, moved: true, stop })
    }
}

/// Run up to `maxiters` iterations; returns the final status and the
/// number of iterations taken.
pub fn quasi_newton_run(
    kind: QnKind,
    obj: &mut dyn Objective,
    x: &mut [f64],
    maxiters: usize,
) -> Result<(Status, usize), OptimError> {
    let mut qn = QuasiNewton::new(kind, x.len());
    let refresh = !obj.stationary();
    for it in 0..maxiters {
        obj.begin_iteration(it, x)?;
        let r = qn.step(obj, x, refresh)?;
        if let Some(s) = r.stop {
            return Ok((s, it + r.moved as usize));
        }
    }
    Ok((Status::MaxIters, maxiters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::FnObjective;

    fn quad() -> FnObjective<impl FnMut(&[f64]) -> (f64, Vec<f64>)> {
        FnObjective::new(2, |x: &[f64]| (x[0] * x[0] + 10.0 * x[1] * x[1], vec![2.0 * x[0], 20.0 * x[1]]))
    }

    #[test]
    fn lbfgs_and_bfgs_solve_a_quadratic() {
        for kind in [QnKind::Bfgs, QnKind::Lbfgs { memory: 10 }] {
            let mut x = vec![3.0, -1.0];
            let (s, _) = quasi_newton_run(kind, &mut quad(), &mut x, 50).unwrap();
            assert_eq!(s, Status::GradientConverged);
            assert!(x.iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn stationary_start_takes_no_iterations() {
        let mut x = vec![0.0, 0.0];
        let (s, n) = quasi_newton_run(QnKind::Bfgs, &mut quad(), &mut x, 10).unwrap();
        assert_eq!((s, n), (Status::GradientConverged, 0));
    }

    #[test]
    fn non_descent_objective_fails_line_search() {
        // Gradient points the wrong way, so no step decreases f.
        let mut obj = FnObjective::new(1, |x: &[f64]| (x[0], vec![-1.0]));
        let mut x = vec![0.0];
        let (s, _) = quasi_newton_run(QnKind::Bfgs, &mut obj, &mut x, 10).unwrap();
        assert_eq!(s, Status::LineSearchFailed);
        assert_eq!(x, vec![0.0]);
    }
}
