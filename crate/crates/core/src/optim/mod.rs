//! Optimizers over flat parameter vectors and phase schedules.

mod first_order;
mod quasi_newton;

pub use first_order::{Adam, RmsProp};
pub use quasi_newton::{quasi_newton_run, LineSearch, QnKind, QnStep, QuasiNewton};

use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("gradient has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite gradient component {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("bad optimizer schedule `{text}`: {message}")]
    Parse { text: String, message: String },
    #[error(transparent)]
    Objective(Box<dyn std::error::Error + Send + Sync>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    MaxIters,
    GradientConverged,
    LineSearchFailed,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::MaxIters => "maxiters",
            Status::GradientConverged => "gradient_converged",
            Status::LineSearchFailed => "line_search_failed",
        })
    }
}

/// A loss with gradient, possibly changing between iterations (resampled
/// points, adaptive weights).
pub trait Objective {
    fn dim(&self) -> usize;

    /// Called once before each iteration, never inside a line search.
    fn begin_iteration(&mut self, _iter: usize, _x: &[f64]) -> Result<(), OptimError> {
        Ok(())
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), OptimError>;

    /// False if `begin_iteration` can change the function.
    fn stationary(&self) -> bool {
        true
    }
}

/// Objective from a closure returning `(f, ∇f)`.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
    pub evaluations: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f, evaluations: 0 }
    }
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), OptimError> {
        self.evaluations += 1;
        Ok((self.f)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerConfig {
    Adam { lr: f64 },
    RmsProp { lr: f64 },
    Bfgs,
    Lbfgs { memory: usize },
}

impl fmt::Display for OptimizerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerConfig::Adam { lr } => write!(f, "adam:{lr}"),
            OptimizerConfig::RmsProp { lr } => write!(f, "rmsprop:{lr}"),
            OptimizerConfig::Bfgs => write!(f, "bfgs"),
            OptimizerConfig::Lbfgs { memory: 10 } => write!(f, "lbfgs"),
            OptimizerConfig::Lbfgs { memory } => write!(f, "lbfgs:m={memory}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub optimizer: OptimizerConfig,
    /// `None` takes the run's default iteration count.
    pub iters: Option<usize>,
}

/// Optimizer phases run in sequence, e.g. `adam:0.001:50+bfgs:150`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub phases: Vec<Phase>,
}

impl Schedule {
    /// Total iterations with `default` filling unspecified phases.
    pub fn total_iters(&self, default: usize) -> usize {
        self.phases.iter().map(|p| p.iters.unwrap_or(default)).sum()
    }
}

impl FromStr for Schedule {
    type Err = OptimError;

    fn from_str(text: &str) -> Result<Self, OptimError> {
        let err = |m: String| OptimError::Parse { text: text.to_string(), message: m };
        let mut phases = Vec::new();
        for part in text.split('+') {
            let fields: Vec<&str> = part.trim().split(':').map(str::trim).collect();
            let name = fields[0].to_ascii_lowercase();
            let iters = |s: &str| s.parse::<usize>().map_err(|_| err(format!("`{s}` is not an iteration count")));
            let rate = |s: &str| match s.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
                _ => Err(err(format!("`{s}` is not a positive learning rate"))),
            };
            let phase = match (name.as_str(), &fields[1..]) {
                ("adam" | "rmsprop", [lr, rest @ ..]) if rest.len() <= 1 => {
                    let lr = rate(lr)?;
                    let optimizer = if name == "adam" { OptimizerConfig::Adam { lr } } else { OptimizerConfig::RmsProp { lr } };
                    Phase { optimizer, iters: rest.first().map(|s| iters(s)).transpose()? }
                }
                ("bfgs", rest) if rest.len() <= 1 => {
                    Phase { optimizer: OptimizerConfig::Bfgs, iters: rest.first().map(|s| iters(s)).transpose()? }
                }
                ("lbfgs", rest) if rest.len() <= 2 => {
                    let mut memory = 10;
                    let mut it = None;
                    for f in rest {
                        if let Some(m) = f.strip_prefix("m=") {
                            memory = match m.parse::<usize>() {
                                Ok(v) if v > 0 => v,
                                _ => return Err(err(format!("`{m}` is not a history size"))),
                            };
                        } else {
                            it = Some(iters(f)?);
                        }
                    }
                    Phase { optimizer: OptimizerConfig::Lbfgs { memory }, iters: it }
                }
                _ => return Err(err(format!("cannot read phase `{part}`; expected adam:<lr>[:<iters>], rmsprop:<lr>[:<iters>], bfgs[:<iters>] or lbfgs[:<iters>]"))),
            };
            phases.push(phase);
        }
        Ok(Schedule { phases })
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.phases.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{}", p.optimizer)?;
            if let Some(n) = p.iters {
                write!(f, ":{n}")?;
            }
        }
        Ok(())
    }
}

/// Passed to the observer once per iteration.
#[derive(Debug)]
pub struct IterationInfo<'a> {
    /// Global iteration index across phases.
    pub iter: usize,
    pub phase: usize,
    /// Loss at `params`, on the sample active during this iteration.
    pub loss: f64,
    pub params: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub optimizer: OptimizerConfig,
    pub iterations: usize,
    pub status: Status,
    pub best_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    /// Lowest-loss parameters seen (the start point if nothing ran).
    pub params: Vec<f64>,
    pub loss: Option<f64>,
    pub phases: Vec<PhaseOutcome>,
    pub iterations: usize,
}

/// Run each phase from the best parameters of the one before.
pub fn run_schedule(
    schedule: &Schedule,
    obj: &mut dyn Objective,
    x0: &[f64],
    default_iters: usize,
    observe: &mut dyn FnMut(&IterationInfo<'_>),
) -> Result<ScheduleOutcome, OptimError> {
    if x0.len() != obj.dim() {
        return Err(OptimError::Dimension { expected: obj.dim(), got: x0.len() });
    }
    let mut best: (Option<f64>, Vec<f64>) = (None, x0.to_vec());
    let mut iter = 0;
    let mut phases = Vec::new();
    for (pi, phase) in schedule.phases.iter().enumerate() {
        let n = phase.iters.unwrap_or(default_iters);
        let mut x = best.1.clone();
        let mut phase_best = f64::INFINITY;
        let mut status = Status::MaxIters;
        let mut taken = 0;
        let mut record = |iter: usize, loss: f64, at: &[f64], best: &mut (Option<f64>, Vec<f64>), phase_best: &mut f64| {
            observe(&IterationInfo { iter, phase: pi, loss, params: at });
            *phase_best = phase_best.min(loss);
            if best.0.map_or(true, |b| loss < b) {
                *best = (Some(loss), at.to_vec());
            }
        };
        match phase.optimizer {
            OptimizerConfig::Adam { lr } | OptimizerConfig::RmsProp { lr } => {
                let mut adam = Adam::new(lr, x.len());
                let mut rms = RmsProp::new(lr, x.len());
                let is_adam = matches!(phase.optimizer, OptimizerConfig::Adam { .. });
                for _ in 0..n {
                    obj.begin_iteration(iter, &x)?;
                    let (f, g) = obj.evaluate(&x)?;
                    if !f.is_finite() {
                        return Err(OptimError::NonFiniteLoss(f));
                    }
                    record(iter, f, &x, &mut best, &mut phase_best);
                    if is_adam {
                        adam.step(&mut x, &g)?;
                    } else {
                        rms.step(&mut x, &g)?;
                    }
                    iter += 1;
                    taken += 1;
                }
            }
            OptimizerConfig::Bfgs | OptimizerConfig::Lbfgs { .. } => {
                let kind = match phase.optimizer {
                    OptimizerConfig::Lbfgs { memory } => QnKind::Lbfgs { memory },
                    _ => QnKind::Bfgs,
                };
                let mut qn = QuasiNewton::new(kind, x.len());
                let refresh = !obj.stationary();
                for _ in 0..n {
                    obj.begin_iteration(iter, &x)?;
                    let r = qn.step(obj, &mut x, refresh)?;
                    if r.moved {
                        record(iter, r.loss, &x, &mut best, &mut phase_best);
                        iter += 1;
                        taken += 1;
                    }
                    if let Some(s) = r.stop {
                        status = s;
                        break;
                    }
                }
            }
        }
        phases.push(PhaseOutcome { optimizer: phase.optimizer, iterations: taken, status, best_loss: phase_best });
    }
    Ok(ScheduleOutcome { params: best.1, loss: best.0, phases, iterations: iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_syntax() {
        let s: Schedule = "adam:0.001:50+bfgs:150".parse().unwrap();
        assert_eq!(
            s.phases,
            vec![
                Phase { optimizer: OptimizerConfig::Adam { lr: 0.001 }, iters: Some(50) },
                Phase { optimizer: OptimizerConfig::Bfgs, iters: Some(150) }
            ]
        );
        assert_eq!(s.total_iters(0), 200);
        for t in ["adam:0.05", "rmsprop:0.005:200", "bfgs", "lbfgs:m=5:30", "bfgs:10+adam:0.01:20+bfgs:30"] {
            let s: Schedule = t.parse().unwrap();
            assert_eq!(s.to_string().parse::<Schedule>().unwrap(), s);
        }
        for bad in ["", "adam", "adam:-1", "sgd:0.1", "bfgs:x", "adam:0.1:5:6"] {
            assert!(bad.parse::<Schedule>().is_err(), "{bad}");
        }
    }

    #[test]
    fn zero_iterations_return_start() {
        let mut obj = FnObjective::new(1, |x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]));
        let s: Schedule = "adam:0.1:0".parse().unwrap();
        let out = run_schedule(&s, &mut obj, &[0.7], 0, &mut |_| {}).unwrap();
        assert_eq!(out.params, vec![0.7]);
        assert_eq!(out.iterations, 0);
        assert_eq!(obj.evaluations, 0);
    }

    #[test]
    fn phases_hand_over_best_params() {
        let mut obj = FnObjective::new(2, |x: &[f64]| {
            let f = (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
            (f, vec![2.0 * (x[0] - 1.0), 6.0 * (x[1] + 2.0)])
        });
        let s: Schedule = "adam:0.05:50+bfgs:150".parse().unwrap();
        let mut iters = Vec::new();
        let out = run_schedule(&s, &mut obj, &[0.0, 0.0], 0, &mut |i| iters.push(i.iter)).unwrap();
        assert!(out.iterations <= 200);
        assert_eq!(iters, (0..out.iterations).collect::<Vec<_>>());
        assert!(out.loss.unwrap() < 1e-14);
        assert_eq!(out.phases[1].status, Status::GradientConverged);
    }
}
