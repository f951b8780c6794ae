//! Training loop: strategy loss, adaptive weights, optimizer schedule,
//! evaluation against the problem's oracle, and per-iteration history.

use crate::bench::{BenchError, BenchmarkProblem, Oracle};
use crate::lowering::{LossProgram, LowerError, TermKind};
use crate::optim::{run_schedule, Objective, OptimError, Schedule, ScheduleOutcome};
use crate::reweight::{ReweightError, Reweighter, WeightScheme};
use crate::strategies::{grid_points, Discretizer, Evaluation, StrategyError, TrainingStrategy};
use std::cell::RefCell;
use std::collections::VecDeque;
use std::path::PathBuf;
use std::rc::Rc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Problem(#[from] BenchError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Reweight(#[from] ReweightError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("non-finite initial loss {0}")]
    InitialLoss(f64),
    #[error("parameter estimation requested but the system declares no parameters")]
    NoParameters,
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("evaluation spacing must be positive, got {0}")]
    EvalSpacing(f64),
}

/// Everything a run needs beyond the problem itself. `None` fields fall
/// back to the problem's defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub spec: Option<PathBuf>,
    pub strategy: Option<TrainingStrategy>,
    pub schedule: Option<Schedule>,
    pub weights: Option<WeightScheme>,
    pub init_seed: u64,
    pub sample_seed: u64,
    pub iters: Option<usize>,
    pub eval_dx: Option<f64>,
    /// Log every n-th iteration; default every one up to 2000 total, else 10.
    pub log_every: Option<usize>,
    pub params: Vec<(String, f64)>,
    pub out: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: None,
            spec: None,
            strategy: None,
            schedule: None,
            weights: None,
            init_seed: 0,
            sample_seed: 1,
            iters: None,
            eval_dx: None,
            log_every: None,
            params: Vec::new(),
            out: None,
            plot: None,
        }
    }
}

impl RunConfig {
    /// `key = value` lines; `#` starts a comment. Keys: problem, spec,
    /// strategy, optimizer, weights, seed, sample_seed, iters, eval_dx,
    /// log_every, out, plot, and `param.<name>`.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let err = |m: String| TrainError::Config { line, message: m };
            let (k, v) = l.split_once('=').ok_or_else(|| err(format!("expected key = value, got `{l}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<u64>().map_err(|_| err(format!("`{v}` is not a non-negative integer")));
            match k {
                "problem" => c.problem = Some(v.to_string()),
                "spec" => c.spec = Some(PathBuf::from(v)),
                "strategy" => c.strategy = Some(v.parse().map_err(|e: StrategyError| err(e.to_string()))?),
                "optimizer" | "opt" => c.schedule = Some(v.parse().map_err(|e: OptimError| err(e.to_string()))?),
                "weights" => c.weights = Some(v.parse().map_err(|e: ReweightError| err(e.to_string()))?),
                "seed" => c.init_seed = num(v)?,
                "sample_seed" => c.sample_seed = num(v)?,
                "iters" => c.iters = Some(num(v)? as usize),
                "log_every" => c.log_every = Some((num(v)? as usize).max(1)),
                "eval_dx" => c.eval_dx = Some(v.parse().map_err(|_| err(format!("`{v}` is not a number")))?),
                "out" => c.out = Some(PathBuf::from(v)),
                "plot" => c.plot = Some(PathBuf::from(v)),
                _ => match k.strip_prefix("param.") {
                    Some(name) => {
                        let x = v.parse().map_err(|_| err(format!("`{v}` is not a number")))?;
                        c.params.push((name.to_string(), x));
                    }
                    None => return Err(err(format!("unknown key `{k}`"))),
                },
            }
        }
        Ok(c)
    }
}

/// Accuracy of one dependent variable on the evaluation lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub dvar: String,
    pub rel_l2: f64,
    pub max_abs: f64,
    pub points: usize,
}

/// Compare the networks with the oracle on an endpoint-inclusive lattice of
/// spacing `dx` over each variable's arguments. When the oracle vanishes on
/// the whole lattice the absolute L2 norm is reported instead.
pub fn evaluate_error(program: &LossProgram, params: &[f64], oracle: &Oracle, dx: f64) -> Result<Vec<FieldError>, TrainError> {
    if !(dx > 0.0) {
        return Err(TrainError::EvalSpacing(dx));
    }
    let sys = &program.system;
    let mut out = Vec::new();
    for (d, dv) in sys.dvars.iter().enumerate() {
        let (lo, hi): (Vec<f64>, Vec<f64>) =
            dv.args.iter().map(|a| sys.domain(a).expect("validated system has a domain per ivar")).unzip();
        let pts = grid_points(&lo, &hi, &vec![dx; lo.len()], true)?;
        let (mut num, mut den, mut max_abs) = (0.0, 0.0, 0.0f64);
        for p in &pts {
            let u = oracle.value(d, p)?;
            let n = program.predict(d, params, p)?;
            num += (n - u) * (n - u);
            den += u * u;
            max_abs = max_abs.max((n - u).abs());
        }
        let rel_l2 = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        out.push(FieldError { dvar: dv.name.clone(), rel_l2, max_abs, points: pts.len() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub iter: usize,
    pub wall_s: f64,
    pub loss: f64,
    /// Largest relative L2 error over the dependent variables.
    pub rel_l2: Option<f64>,
    pub term_losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub error_bounds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub term_labels: Vec<String>,
    pub entries: Vec<HistoryEntry>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub problem: String,
    pub strategy: TrainingStrategy,
    pub schedule: Schedule,
    pub weights: WeightScheme,
    /// Lowest-loss parameters seen during the schedule; with adaptive
    /// weights, lowest unit-weight loss.
    pub params: Vec<f64>,
    /// Physical-parameter slice of `params` (empty without estimation).
    pub lambda: Vec<f64>,
    pub lambda_names: Vec<String>,
    pub loss: f64,
    pub errors: Option<Vec<FieldError>>,
    pub history: RunHistory,
    pub outcome: ScheduleOutcome,
    pub wall_s: f64,
}

impl TrainResult {
    pub fn rel_l2(&self) -> Option<f64> {
        self.errors.as_ref().map(|e| e.iter().map(|f| f.rel_l2).fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> Option<f64> {
        self.errors.as_ref().map(|e| e.iter().map(|f| f.max_abs).fold(0.0, f64::max))
    }

    /// `problem strategy optimizer final_loss final_relL2 wall_s`, plus the
    /// estimated parameters for inverse problems.
    pub fn summary(&self) -> String {
        let rel = self.rel_l2().map_or("nan".to_string(), |e| format!("{e:.6e}"));
        let mut s = format!(
            "{} {} {} {:.6e} {} {:.3}",
            self.problem, self.strategy, self.schedule, self.loss, rel, self.wall_s
        );
        for (n, v) in self.lambda_names.iter().zip(&self.lambda) {
            s.push_str(&format!(" {n}={v:.6}"));
        }
        s
    }
}

struct Cached {
    x: Vec<f64>,
    draw: usize,
    generation: usize,
    ev: Evaluation,
}

#[derive(Default)]
struct Cache {
    recent: VecDeque<Cached>,
}

impl Cache {
    /// Enough to still hold a line search's accepted point.
    const SIZE: usize = 8;

    fn find(&self, x: &[f64], draw: usize, generation: usize) -> Option<&Evaluation> {
        self.recent.iter().rev().find(|c| c.draw == draw && c.generation == generation && c.x == x).map(|c| &c.ev)
    }

    fn push(&mut self, c: Cached) {
        if self.recent.len() == Self::SIZE {
            self.recent.pop_front();
        }
        self.recent.push_back(c);
    }
}

/// The strategy loss under adaptive weights as an optimizer objective.
struct PinnObjective<'a> {
    program: &'a LossProgram,
    disc: Discretizer,
    reweighter: Reweighter,
    /// Bumped whenever the weights change.
    generation: usize,
    cache: Rc<RefCell<Cache>>,
    weight_log: Rc<RefCell<Vec<f64>>>,
}

fn boxed(e: impl std::error::Error + Send + Sync + 'static) -> OptimError {
    OptimError::Objective(Box::new(e))
}

impl PinnObjective<'_> {
    fn eval_at(&mut self, x: &[f64]) -> Result<Evaluation, OptimError> {
        let draw = self.disc.draws();
        if let Some(ev) = self.cache.borrow().find(x, draw, self.generation) {
            return Ok(ev.clone());
        }
        let ev = self.disc.evaluate(self.program, x, self.reweighter.weights(), true).map_err(boxed)?;
        self.cache.borrow_mut().push(Cached { x: x.to_vec(), draw, generation: self.generation, ev: ev.clone() });
        Ok(ev)
    }
}

impl Objective for PinnObjective<'_> {
    fn dim(&self) -> usize {
        self.program.param_count()
    }

    fn begin_iteration(&mut self, iter: usize, x: &[f64]) -> Result<(), OptimError> {
        if iter > 0 {
            self.disc.resample(self.program);
        }
        if self.reweighter.due(iter) {
            let ev = self.eval_at(x)?;
            let old = self.reweighter.weights().to_vec();
            let changed = self.reweighter.update(iter, &ev.terms, ev.term_grads.as_deref()).map_err(boxed)?;
            if changed {
                // Re-weight the evaluation at x so the step that follows
                // reuses it instead of recomputing.
                let new = self.reweighter.weights();
                let mut ev = ev;
                ev.total += ev.terms.iter().zip(new.iter().zip(&old)).map(|(c, (a, b))| (a - b) * c).sum::<f64>();
                if let (Some(g), Some(tg)) = (ev.grad.as_mut(), ev.term_grads.as_ref()) {
                    for (gi, (a, b)) in tg.iter().zip(new.iter().zip(&old)) {
                        let d = a - b;
                        if d != 0.0 {
                            g.iter_mut().zip(gi).for_each(|(o, v)| *o += d * v);
                        }
                    }
                }
                self.generation += 1;
                let draw = self.disc.draws();
                self.cache.borrow_mut().push(Cached { x: x.to_vec(), draw, generation: self.generation, ev });
            }
        }
        *self.weight_log.borrow_mut() = self.reweighter.weights().to_vec();
        Ok(())
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), OptimError> {
        let ev = self.eval_at(x)?;
        Ok((ev.total, ev.grad.expect("gradient requested")))
    }

    fn stationary(&self) -> bool {
        !self.disc.is_stochastic() && !self.reweighter.scheme.is_adaptive()
    }
}

/// Resolved settings for a run of `problem`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub strategy: TrainingStrategy,
    pub schedule: Schedule,
    pub weights: WeightScheme,
    pub iters: usize,
    pub eval_dx: f64,
    pub log_every: usize,
}

pub fn resolve(problem: &BenchmarkProblem, cfg: &RunConfig) -> Resolved {
    let d = &problem.defaults;
    let schedule = cfg.schedule.clone().unwrap_or_else(|| d.schedule.clone());
    let iters = cfg.iters.unwrap_or(d.iters);
    let total = schedule.total_iters(iters);
    Resolved {
        strategy: cfg.strategy.clone().unwrap_or_else(|| d.strategy.clone()),
        weights: cfg.weights.clone().unwrap_or_else(|| d.weights.clone()),
        eval_dx: cfg.eval_dx.unwrap_or(d.eval_dx),
        log_every: cfg.log_every.unwrap_or(if total <= 2000 { 1 } else { 10 }),
        schedule,
        iters,
    }
}

/// Train the problem's networks under `cfg`. `observe` sees every logged
/// history entry as it is produced.
pub fn train_with(
    problem: &BenchmarkProblem,
    cfg: &RunConfig,
    observe: &mut dyn FnMut(&HistoryEntry),
) -> Result<TrainResult, TrainError> {
    let mut problem = problem.clone();
    for (k, v) in &cfg.params {
        problem.set_param(k, *v)?;
    }
    let program = problem.lower()?;
    if program.param_estim && program.system.params.is_empty() {
        return Err(TrainError::NoParameters);
    }
    let r = resolve(&problem, cfg);
    if !(r.eval_dx > 0.0) {
        return Err(TrainError::EvalSpacing(r.eval_dx));
    }
    let oracle = problem.compile_oracle()?;
    let kinds: Vec<TermKind> = program.terms.iter().map(|t| t.kind).collect();
    let disc = Discretizer::new(&program, r.strategy.clone(), cfg.sample_seed)?;
    let reweighter = Reweighter::new(r.weights.clone(), kinds)?;
    let cache = Rc::new(RefCell::new(Cache::default()));
    let weight_log = Rc::new(RefCell::new(reweighter.weights().to_vec()));
    let mut obj = PinnObjective {
        program: &program,
        disc,
        reweighter,
        generation: 0,
        cache: cache.clone(),
        weight_log: weight_log.clone(),
    };
    let x0 = program.initial_params(cfg.init_seed);
    let (f0, _) = obj.evaluate(&x0)?;
    if !f0.is_finite() {
        return Err(TrainError::InitialLoss(f0));
    }

    let start = Instant::now();
    let mut history = RunHistory { term_labels: program.terms.iter().map(|t| t.label.clone()).collect(), entries: Vec::new() };
    let mut failure: Option<TrainError> = None;
    // Weighted losses under changing weights are not comparable across
    // iterations, so adaptive runs keep the best unit-weight loss instead.
    let adaptive = r.weights.is_adaptive();
    let mut best_plain: Option<(f64, Vec<f64>)> = None;
    let outcome = {
        let mut record = |info: &crate::optim::IterationInfo<'_>| {
            if failure.is_some() {
                return;
            }
            let logged = info.iter % r.log_every == 0;
            let (terms, bounds) = {
                let cache = cache.borrow();
                match cache.recent.iter().rev().find(|c| c.x == info.params) {
                    Some(c) => {
                        if adaptive {
                            let plain = c.ev.terms.iter().sum::<f64>() + c.ev.data.unwrap_or(0.0);
                            if plain.is_finite() && best_plain.as_ref().map_or(true, |b| plain < b.0) {
                                best_plain = Some((plain, info.params.to_vec()));
                            }
                        }
                        if logged {
                            (c.ev.terms.clone(), c.ev.error_bounds.clone())
                        } else {
                            (Vec::new(), None)
                        }
                    }
                    None => (Vec::new(), None),
                }
            };
            if !logged {
                return;
            }
            let rel_l2 = match &oracle {
                Some(o) => match evaluate_error(&program, info.params, o, r.eval_dx) {
                    Ok(e) => Some(e.iter().map(|f| f.rel_l2).fold(0.0, f64::max)),
                    Err(e) => {
                        failure = Some(e);
                        return;
                    }
                },
                None => None,
            };
            let entry = HistoryEntry {
                iter: info.iter,
                wall_s: start.elapsed().as_secs_f64(),
                loss: info.loss,
                rel_l2,
                term_losses: terms,
                weights: weight_log.borrow().clone(),
                error_bounds: bounds,
            };
            observe(&entry);
            history.entries.push(entry);
        };
        run_schedule(&r.schedule, &mut obj, &x0, r.iters, &mut record)?
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let wall_s = start.elapsed().as_secs_f64();
    let (params, loss) = match best_plain {
        Some((loss, p)) => (p, loss),
        None => (outcome.params.clone(), outcome.loss.unwrap_or(f0)),
    };
    let errors = match &oracle {
        Some(o) => Some(evaluate_error(&program, &params, o, r.eval_dx)?),
        None => None,
    };
    let lambda = program.lambda(&params).to_vec();
    let lambda_names = if program.param_estim { program.system.params.iter().map(|p| p.name.clone()).collect() } else { Vec::new() };
    Ok(TrainResult {
        problem: problem.id.clone(),
        strategy: r.strategy,
        schedule: r.schedule,
        weights: r.weights,
        params,
        lambda,
        lambda_names,
        loss,
        errors,
        history,
        outcome,
        wall_s,
    })
}

pub fn train(problem: &BenchmarkProblem, cfg: &RunConfig) -> Result<TrainResult, TrainError> {
    train_with(problem, cfg, &mut |_| {})
}

/// Train an inverse problem; the estimated parameters are in
/// [`TrainResult::lambda`].
pub fn solve_inverse(problem: &BenchmarkProblem, cfg: &RunConfig) -> Result<TrainResult, TrainError> {
    if !problem.options.param_estim || problem.system.params.is_empty() {
        return Err(TrainError::NoParameters);
    }
    train(problem, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::builtin_problem;

    #[test]
    fn config_file() {
        let c = RunConfig::parse(
            "# poisson\nproblem = poisson2d\nstrategy = grid:0.1\noptimizer = adam:0.01:20\nweights = minimax\nseed = 3\nparam.nu = 0.1\nout = run.csv\n",
        )
        .unwrap();
        assert_eq!(c.problem.as_deref(), Some("poisson2d"));
        assert_eq!(c.init_seed, 3);
        assert_eq!(c.params, vec![("nu".to_string(), 0.1)]);
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(TrainError::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("\n\nseed = x"), Err(TrainError::Config { line: 3, .. })));
    }

    #[test]
    fn zero_network_has_unit_error() {
        let p = builtin_problem("poisson2d").unwrap();
        let prog = p.lower().unwrap();
        let o = p.compile_oracle().unwrap().unwrap();
        let e = evaluate_error(&prog, &vec![0.0; prog.param_count()], &o, 0.1).unwrap();
        assert!((e[0].rel_l2 - 1.0).abs() < 1e-15);
        assert_eq!(e[0].points, 121);
    }

    #[test]
    fn short_run_history() {
        let p = builtin_problem("poisson2d").unwrap();
        let cfg = RunConfig { schedule: Some("adam:0.05:20".parse().unwrap()), strategy: Some("grid:0.1".parse().unwrap()), ..Default::default() };
        let r = train(&p, &cfg).unwrap();
        assert_eq!(r.history.entries.len(), 20);
        assert!(r.history.entries.windows(2).all(|w| w[0].iter < w[1].iter && w[0].wall_s <= w[1].wall_s));
        assert_eq!(r.history.entries[0].term_losses.len(), 5);
        let best = r.history.entries.iter().map(|e| e.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(r.loss, best);
    }

    #[test]
    fn inverse_requires_parameters() {
        let p = builtin_problem("poisson2d").unwrap();
        assert!(matches!(solve_inverse(&p, &RunConfig::default()), Err(TrainError::NoParameters)));
    }
}
