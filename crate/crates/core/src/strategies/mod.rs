//! Turning a [`LossProgram`] into a scalar loss and its gradient.
//!
//! Grid, stochastic and quasi-random strategies differentiate the discrete
//! sum at the points held by the [`Discretizer`]. Quadrature integrates the
//! squared residual adaptively and, separately, the parameter gradient of the
//! squared residual with its own adaptive run.

mod lhs;
pub mod quadrature;
pub mod sobol;

pub use lhs::lhs_points;
pub use quadrature::{integrate_adaptive, integrate_adaptive_vec, IntegralEstimate, VecIntegralEstimate};
pub use sobol::{sobol_points, Sobol};

use crate::lowering::{LossProgram, LowerError, TermKind, Workspace};
use crate::parallel::map_indexed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Points per parallel task.
const CHUNK: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("bad strategy `{text}`: {message}")]
    Parse { text: String, message: String },
    #[error("grid spacing {dx} leaves no interior points on [{lo}, {hi}] (term {term})")]
    EmptyLattice { term: String, dx: f64, lo: f64, hi: f64 },
    #[error("grid needs one spacing or one per independent variable ({expected}), got {got}")]
    GridArity { expected: usize, got: usize },
    #[error("term {term} has {dim} free variables; quasi-random sampling supports at most {max}")]
    TooManyDims { term: String, dim: usize, max: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Sobol,
    Lhs,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainingStrategy {
    /// Uniform lattice; `dx` is one spacing for all axes or one per ivar.
    Grid { dx: Vec<f64> },
    /// Fresh uniform points every iteration. Boundary terms default to
    /// `max(4, points / 4)`.
    Stochastic { points: usize, boundary_points: Option<usize> },
    QuasiRandom { points: usize, sampler: Sampler, resample: bool },
    Quadrature { reltol: f64, abstol: f64, maxiters: usize },
}

impl TrainingStrategy {
    pub fn quadrature() -> Self {
        TrainingStrategy::Quadrature { reltol: 1.0, abstol: 1e-4, maxiters: 100 }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            TrainingStrategy::Grid { .. } => "grid",
            TrainingStrategy::Stochastic { .. } => "stochastic",
            TrainingStrategy::QuasiRandom { .. } => "quasirandom",
            TrainingStrategy::Quadrature { .. } => "quadrature",
        }
    }

    fn check(&self) -> Result<(), StrategyError> {
        let bad = |m: &str| Err(StrategyError::Invalid(m.to_string()));
        match self {
            TrainingStrategy::Grid { dx } if dx.is_empty() || dx.iter().any(|d| !(*d > 0.0 && d.is_finite())) => {
                bad("grid spacing must be positive")
            }
            TrainingStrategy::Stochastic { points, boundary_points } if *points == 0 || *boundary_points == Some(0) => {
                bad("point count must be at least 1")
            }
            TrainingStrategy::QuasiRandom { points: 0, .. } => bad("point count must be at least 1"),
            TrainingStrategy::Quadrature { reltol, abstol, maxiters } => {
                if !(*reltol > 0.0 || *abstol > 0.0) || *reltol < 0.0 || *abstol < 0.0 {
                    bad("quadrature needs abstol > 0 or reltol > 0")
                } else if *maxiters == 0 {
                    bad("maxiters must be at least 1")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for TrainingStrategy {
    type Err = StrategyError;

    /// `grid:<dx>[:<dx>...]`, `stochastic:<n>[:<boundary n>]`,
    /// `quasirandom:<n>[:sobol|lhs][:fixed]`,
    /// `quadrature[:abstol=..][:reltol=..][:maxiters=..]`.
    fn from_str(text: &str) -> Result<Self, StrategyError> {
        let err = |m: &str| StrategyError::Parse { text: text.to_string(), message: m.to_string() };
        let mut parts = text.trim().split(':');
        let head = parts.next().unwrap_or("").to_ascii_lowercase();
        let rest: Vec<&str> = parts.map(str::trim).collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("`{s}` is not a number")));
        let count = |s: &str| s.parse::<usize>().map_err(|_| err(&format!("`{s}` is not a count")));
        let s = match head.as_str() {
            "grid" => {
                if rest.is_empty() {
                    return Err(err("grid needs a spacing, e.g. grid:0.1"));
                }
                TrainingStrategy::Grid { dx: rest.iter().map(|s| num(s)).collect::<Result<_, _>>()? }
            }
            "stochastic" => match rest.as_slice() {
                [n] => TrainingStrategy::Stochastic { points: count(n)?, boundary_points: None },
                [n, b] => TrainingStrategy::Stochastic { points: count(n)?, boundary_points: Some(count(b)?) },
                _ => return Err(err("expected stochastic:<n>[:<boundary n>]")),
            },
            "quasirandom" => {
                let Some(n) = rest.first() else { return Err(err("quasirandom needs a point count")) };
                let mut sampler = Sampler::Sobol;
                let mut resample = true;
                for opt in &rest[1..] {
                    match opt.to_ascii_lowercase().as_str() {
                        "sobol" => sampler = Sampler::Sobol,
                        "lhs" => sampler = Sampler::Lhs,
                        "fixed" => resample = false,
                        "resample" => resample = true,
                        o => return Err(err(&format!("unknown quasirandom option `{o}`"))),
                    }
                }
                TrainingStrategy::QuasiRandom { points: count(n)?, sampler, resample }
            }
            "quadrature" => {
                let TrainingStrategy::Quadrature { mut reltol, mut abstol, mut maxiters } = TrainingStrategy::quadrature() else {
                    unreachable!()
                };
                for opt in &rest {
                    let (k, v) = opt.split_once('=').ok_or_else(|| err(&format!("expected key=value, got `{opt}`")))?;
                    match k.trim() {
                        "abstol" => abstol = num(v.trim())?,
                        "reltol" => reltol = num(v.trim())?,
                        "maxiters" => maxiters = count(v.trim())?,
                        k => return Err(err(&format!("unknown quadrature option `{k}`"))),
                    }
                }
                TrainingStrategy::Quadrature { reltol, abstol, maxiters }
            }
            _ => return Err(err("expected grid, stochastic, quasirandom or quadrature")),
        };
        s.check().map_err(|e| err(&e.to_string()))?;
        Ok(s)
    }
}

impl fmt::Display for TrainingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainingStrategy::Grid { dx } => {
                write!(f, "grid")?;
                for d in dx {
                    write!(f, ":{d}")?;
                }
                Ok(())
            }
            TrainingStrategy::Stochastic { points, boundary_points: None } => write!(f, "stochastic:{points}"),
            TrainingStrategy::Stochastic { points, boundary_points: Some(b) } => write!(f, "stochastic:{points}:{b}"),
            TrainingStrategy::QuasiRandom { points, sampler, resample } => {
                let s = match sampler {
                    Sampler::Sobol => "sobol",
                    Sampler::Lhs => "lhs",
                };
                write!(f, "quasirandom:{points}:{s}{}", if *resample { "" } else { ":fixed" })
            }
            TrainingStrategy::Quadrature { reltol, abstol, maxiters } => {
                write!(f, "quadrature:abstol={abstol}:reltol={reltol}:maxiters={maxiters}")
            }
        }
    }
}

/// Lattice on the box `[lower, upper]` with per-axis spacing. Without
/// endpoints the lattice is strictly interior; with endpoints both ends are
/// included. Axes whose extent is not a multiple of `dx` stop at the last
/// whole step.
pub fn grid_points(lower: &[f64], upper: &[f64], dx: &[f64], endpoints: bool) -> Result<Vec<Vec<f64>>, StrategyError> {
    let mut axes = Vec::with_capacity(lower.len());
    for ((&lo, &hi), &h) in lower.iter().zip(upper).zip(dx) {
        let ratio = (hi - lo) / h;
        let steps = if (ratio - ratio.round()).abs() < 1e-9 { ratio.round() as usize } else { ratio.floor() as usize };
        let divides = (ratio - ratio.round()).abs() < 1e-9;
        let mut xs: Vec<f64> = (0..=steps).map(|k| if k == steps && divides { hi } else { lo + k as f64 * h }).collect();
        if !endpoints {
            xs.retain(|&x| x > lo && x < hi);
        }
        if xs.is_empty() {
            return Err(StrategyError::EmptyLattice { term: String::new(), dx: h, lo, hi });
        }
        axes.push(xs);
    }
    let mut pts = vec![Vec::with_capacity(lower.len())];
    for xs in &axes {
        pts = pts.into_iter().flat_map(|p| xs.iter().map(move |&x| {
            let mut q = p.clone();
            q.push(x);
            q
        })).collect();
    }
    Ok(pts)
}

/// Loss and gradient at one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `Σ α_i C_i` plus the data loss.
    pub total: f64,
    /// Unweighted per-term values `C_i`.
    pub terms: Vec<f64>,
    pub data: Option<f64>,
    /// Gradient of `total`.
    pub grad: Option<Vec<f64>>,
    /// Gradients of the unweighted `C_i`.
    pub term_grads: Option<Vec<Vec<f64>>>,
    /// Quadrature error estimate per term.
    pub error_bounds: Option<Vec<f64>>,
    /// Residual evaluations (sampling strategies) or region evaluations
    /// (quadrature) spent.
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
struct TermSample {
    dim: usize,
    /// Flattened `n × dim` coordinates.
    coords: Vec<f64>,
    weight: f64,
}

impl TermSample {
    fn len(&self) -> usize {
        if self.dim == 0 {
            1
        } else {
            self.coords.len() / self.dim
        }
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

/// Strategy state bound to one program: current points, samplers, RNG.
#[derive(Debug, Clone)]
pub struct Discretizer {
    strategy: TrainingStrategy,
    samples: Vec<TermSample>,
    bounds: Vec<(Vec<f64>, Vec<f64>)>,
    sobol: Vec<Option<Sobol>>,
    rng: ChaCha8Rng,
    draws: usize,
}

impl Discretizer {
    pub fn new(program: &LossProgram, strategy: TrainingStrategy, seed: u64) -> Result<Self, StrategyError> {
        strategy.check()?;
        let bounds: Vec<_> = program.terms.iter().map(|t| (t.lower.clone(), t.upper.clone())).collect();
        let mut samples = Vec::with_capacity(program.terms.len());
        let mut sobol = Vec::new();
        match &strategy {
            TrainingStrategy::Grid { dx } => {
                let n = program.system.ivars.len();
                if dx.len() != 1 && dx.len() != n {
                    return Err(StrategyError::GridArity { expected: n, got: dx.len() });
                }
                for t in &program.terms {
                    let h: Vec<f64> = t.free.iter().map(|&k| if dx.len() == 1 { dx[0] } else { dx[k] }).collect();
                    let pts = grid_points(&t.lower, &t.upper, &h, t.kind == TermKind::Boundary).map_err(|e| match e {
                        StrategyError::EmptyLattice { dx, lo, hi, .. } => {
                            StrategyError::EmptyLattice { term: t.label.clone(), dx, lo, hi }
                        }
                        e => e,
                    })?;
                    samples.push(TermSample { dim: t.dim(), coords: pts.concat(), weight: h.iter().product() });
                }
            }
            TrainingStrategy::QuasiRandom { sampler: Sampler::Sobol, .. } => {
                for t in &program.terms {
                    if t.dim() > sobol::MAX_DIM {
                        return Err(StrategyError::TooManyDims { term: t.label.clone(), dim: t.dim(), max: sobol::MAX_DIM });
                    }
                    sobol.push((t.dim() > 0).then(|| Sobol::new(t.dim())));
                }
            }
            _ => {}
        }
        let mut d = Discretizer { strategy, samples, bounds, sobol, rng: ChaCha8Rng::seed_from_u64(seed), draws: 0 };
        d.kinds_and_draw(program);
        Ok(d)
    }

    fn kinds_and_draw(&mut self, program: &LossProgram) {
        let kinds: Vec<TermKind> = program.terms.iter().map(|t| t.kind).collect();
        self.draw(&kinds);
    }

    pub fn strategy(&self) -> &TrainingStrategy {
        &self.strategy
    }

    /// Whether [`Discretizer::resample`] changes the points.
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self.strategy,
            TrainingStrategy::Stochastic { .. } | TrainingStrategy::QuasiRandom { resample: true, .. }
        )
    }

    fn count_for(&self, kind: TermKind) -> usize {
        match (&self.strategy, kind) {
            (TrainingStrategy::Stochastic { points, boundary_points }, TermKind::Boundary) => {
                boundary_points.unwrap_or((points / 4).max(4))
            }
            (TrainingStrategy::Stochastic { points, .. }, TermKind::Interior) => *points,
            (TrainingStrategy::QuasiRandom { points, .. }, TermKind::Boundary) => (points / 4).max(4),
            (TrainingStrategy::QuasiRandom { points, .. }, TermKind::Interior) => *points,
            _ => 0,
        }
    }

    fn draw(&mut self, kinds: &[TermKind]) {
        let sampling = matches!(self.strategy, TrainingStrategy::Stochastic { .. } | TrainingStrategy::QuasiRandom { .. });
        if !sampling {
            return;
        }
        let mut samples = Vec::with_capacity(kinds.len());
        for (ti, &kind) in kinds.iter().enumerate() {
            let (lo, hi) = &self.bounds[ti];
            let dim = lo.len();
            if dim == 0 {
                samples.push(TermSample { dim, coords: Vec::new(), weight: 1.0 });
                continue;
            }
            let n = self.count_for(kind);
            let mut coords = Vec::with_capacity(n * dim);
            match &self.strategy {
                TrainingStrategy::Stochastic { .. } => {
                    for _ in 0..n {
                        coords.extend((0..dim).map(|_| self.rng.gen::<f64>()));
                    }
                }
                TrainingStrategy::QuasiRandom { sampler: Sampler::Sobol, .. } => {
                    let s = self.sobol[ti].as_mut().expect("stream per positive-dimensional term");
                    let mut p = vec![0.0; dim];
                    for _ in 0..n {
                        s.next_point(&mut p);
                        coords.extend_from_slice(&p);
                    }
                }
                TrainingStrategy::QuasiRandom { sampler: Sampler::Lhs, .. } => {
                    coords = lhs::lhs_with(n, dim, &mut self.rng).concat();
                }
                _ => unreachable!(),
            }
            for (i, c) in coords.iter_mut().enumerate() {
                let k = i % dim;
                *c = lo[k] + *c * (hi[k] - lo[k]);
            }
            samples.push(TermSample { dim, coords, weight: 1.0 / n as f64 });
        }
        self.samples = samples;
        self.draws += 1;
    }

    /// Draw the next sample for resampling strategies; otherwise a no-op.
    pub fn resample(&mut self, program: &LossProgram) {
        if self.is_stochastic() {
            self.kinds_and_draw(program);
        }
    }

    /// Number of samples drawn so far (1 after construction for sampling
    /// strategies).
    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Current points of term `ti` (empty for quadrature).
    pub fn points(&self, ti: usize) -> Vec<Vec<f64>> {
        self.samples.get(ti).map_or_else(Vec::new, |s| (0..s.len()).map(|i| s.point(i).to_vec()).collect())
    }

    pub fn loss_value(&self, program: &LossProgram, params: &[f64], weights: &[f64]) -> Result<Evaluation, LowerError> {
        self.evaluate(program, params, weights, false)
    }

    pub fn loss_gradient(&self, program: &LossProgram, params: &[f64], weights: &[f64]) -> Result<Evaluation, LowerError> {
        self.evaluate(program, params, weights, true)
    }

    /// Loss, and with `want_grad` its gradient, under per-term `weights`.
    pub fn evaluate(&self, program: &LossProgram, params: &[f64], weights: &[f64], want_grad: bool) -> Result<Evaluation, LowerError> {
        assert_eq!(weights.len(), program.terms.len(), "one weight per term");
        if params.len() != program.param_count() {
            return Err(LowerError::ParamLength { expected: program.param_count(), got: params.len() });
        }
        let mut ev = match &self.strategy {
            TrainingStrategy::Quadrature { reltol, abstol, maxiters } => {
                quadrature_eval(program, params, *reltol, *abstol, *maxiters, want_grad)?
            }
            _ => self.sample_eval(program, params, want_grad)?,
        };
        let p = program.param_count();
        let mut total = ev.terms.iter().zip(weights).map(|(c, a)| a * c).sum::<f64>();
        if let Some(tg) = &ev.term_grads {
            let mut g = vec![0.0; p];
            for (gi, a) in tg.iter().zip(weights) {
                g.iter_mut().zip(gi).for_each(|(o, x)| *o += a * x);
            }
            ev.grad = Some(g);
        }
        ev.data = program.data_loss(params, ev.grad.as_deref_mut())?;
        total += ev.data.unwrap_or(0.0);
        ev.total = total;
        Ok(ev)
    }

    fn sample_eval(&self, program: &LossProgram, params: &[f64], want_grad: bool) -> Result<Evaluation, LowerError> {
        let mut tasks = Vec::new();
        for (ti, s) in self.samples.iter().enumerate() {
            let n = s.len();
            for start in (0..n).step_by(CHUNK) {
                tasks.push((ti, start, (start + CHUNK).min(n)));
            }
        }
        let p = program.param_count();
        let parts = map_indexed(tasks.len(), Workspace::new, |ws, k| {
            let (ti, a, b) = tasks[k];
            let s = &self.samples[ti];
            let mut v = 0.0;
            let mut g = if want_grad { vec![0.0; p] } else { Vec::new() };
            for i in a..b {
                let r = if want_grad {
                    program.residual_grad(ti, s.point(i), params, ws, s.weight, &mut g)?
                } else {
                    program.residual(ti, s.point(i), params, ws)?
                };
                v += s.weight * r * r;
            }
            Ok::<_, LowerError>((v, g))
        })?;
        let nt = program.terms.len();
        let mut terms = vec![0.0; nt];
        let mut grads = if want_grad { vec![vec![0.0; p]; nt] } else { Vec::new() };
        for (&(ti, _, _), (v, g)) in tasks.iter().zip(parts) {
            terms[ti] += v;
            if want_grad {
                grads[ti].iter_mut().zip(&g).for_each(|(o, x)| *o += x);
            }
        }
        let evaluations = self.samples.iter().map(TermSample::len).sum();
        Ok(Evaluation {
            total: 0.0,
            terms,
            data: None,
            grad: None,
            term_grads: want_grad.then_some(grads),
            error_bounds: None,
            evaluations,
        })
    }
}

fn quadrature_eval(
    program: &LossProgram,
    params: &[f64],
    reltol: f64,
    abstol: f64,
    maxiters: usize,
    want_grad: bool,
) -> Result<Evaluation, LowerError> {
    let p = program.param_count();
    let parts = map_indexed(program.terms.len(), Workspace::new, |ws, ti| {
        let t = &program.terms[ti];
        let mut vws = Workspace::new();
        let est = integrate_adaptive(
            |x| {
                let r = program.residual(ti, x, params, &mut vws)?;
                Ok::<_, LowerError>(r * r)
            },
            &t.lower,
            &t.upper,
            reltol,
            abstol,
            maxiters,
        )?;
        let mut evals = est.evaluations;
        let grad = if want_grad {
            let g = integrate_adaptive_vec(
                |x, out| program.residual_grad(ti, x, params, ws, 1.0, out).map(|_| ()),
                p,
                &t.lower,
                &t.upper,
                reltol,
                abstol,
                maxiters,
            )?;
            evals += g.evaluations;
            g.values
        } else {
            Vec::new()
        };
        Ok::<_, LowerError>((est.value, est.error, grad, evals))
    })?;
    let mut terms = Vec::new();
    let mut bounds = Vec::new();
    let mut grads = Vec::new();
    let mut evaluations = 0;
    for (v, e, g, n) in parts {
        terms.push(v);
        bounds.push(e);
        grads.push(g);
        evaluations += n;
    }
    Ok(Evaluation {
        total: 0.0,
        terms,
        data: None,
        grad: None,
        term_grads: want_grad.then_some(grads),
        error_bounds: Some(bounds),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_lattice_excludes_endpoints() {
        let p = grid_points(&[0.0], &[1.0], &[0.25], false).unwrap();
        assert_eq!(p, vec![vec![0.25], vec![0.5], vec![0.75]]);
        assert_eq!(grid_points(&[0.0, 0.0], &[1.0, 1.0], &[0.25, 0.25], false).unwrap().len(), 9);
    }

    #[test]
    fn boundary_lattice_includes_endpoints() {
        let p = grid_points(&[0.0], &[1.0], &[0.5], true).unwrap();
        assert_eq!(p, vec![vec![0.0], vec![0.5], vec![1.0]]);
    }

    #[test]
    fn non_dividing_spacing_clips() {
        let p = grid_points(&[0.0], &[1.0], &[0.3], false).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|x| x[0] > 0.0 && x[0] < 1.0));
        let b = grid_points(&[0.0], &[1.0], &[0.3], true).unwrap();
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn empty_lattice_is_an_error() {
        assert!(matches!(grid_points(&[0.0], &[1.0], &[1.0], false), Err(StrategyError::EmptyLattice { .. })));
    }

    #[test]
    fn parse_and_print() {
        for s in ["grid:0.05", "grid:0.2:0.1", "stochastic:100", "quasirandom:100:lhs:fixed", "quadrature:abstol=0.00001"] {
            let t: TrainingStrategy = s.parse().unwrap();
            assert_eq!(t.to_string().parse::<TrainingStrategy>().unwrap(), t);
        }
        assert_eq!(
            "quadrature".parse::<TrainingStrategy>().unwrap(),
            TrainingStrategy::Quadrature { reltol: 1.0, abstol: 1e-4, maxiters: 100 }
        );
        for bad in ["grid", "grid:-1", "stochastic:0", "quasirandom:10:halton", "quadrature:tol=1", "newton"] {
            assert!(bad.parse::<TrainingStrategy>().is_err(), "{bad}");
        }
    }
}
