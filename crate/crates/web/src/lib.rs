//! Browser bindings: sampler scatter, adaptive cubature of a typed-in
//! integrand, and step-by-step training of the Poisson problem.

use pinn_core::bench::builtin_problem;
use pinn_core::ir::{parse_expression, parse_spec};
use pinn_core::lowering::{CoordinateField, LossProgram};
use pinn_core::optim::Adam;
use pinn_core::strategies::{integrate_adaptive, lhs_points, sobol_points, Discretizer, TrainingStrategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// `n` points in the unit square, flattened `[x0, y0, x1, y1, ...]`.
pub fn sample_square(kind: &str, n: usize, seed: u64) -> Result<Vec<f64>, String> {
    let pts = match kind {
        "sobol" => sobol_points(n, 2, 0),
        "lhs" => lhs_points(n, 2, seed),
        "uniform" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect()
        }
        _ => return Err(format!("unknown sampler `{kind}`")),
    };
    Ok(pts.into_iter().flatten().collect())
}

/// Integrate `f(x, y)` over the unit square: `[value, error, evaluations, converged]`.
pub fn integrate_square(expr: &str, reltol: f64, abstol: f64, maxiters: usize) -> Result<Vec<f64>, String> {
    let sys = parse_spec("ivars x y\ndvars u(x,y)\ndomain x in [0, 1]\ndomain y in [0, 1]\n").map_err(|e| e.to_string())?;
    let e = parse_expression(expr, &sys.declarations()).map_err(|e| e.to_string())?;
    let field = CoordinateField::compile(&sys, 0, &e).map_err(|e| e.to_string())?;
    let r = integrate_adaptive(|x| field.eval(x), &[0.0, 0.0], &[1.0, 1.0], reltol, abstol, maxiters.max(1))
        .map_err(|e| e.to_string())?;
    Ok(vec![r.value, r.error, r.evaluations as f64, r.converged as u8 as f64])
}

/// Adam on the Poisson problem, one call per animation frame.
#[wasm_bindgen]
pub struct PoissonDemo {
    program: LossProgram,
    disc: Discretizer,
    adam: Adam,
    params: Vec<f64>,
    weights: Vec<f64>,
    iter: usize,
    last_loss: f64,
}

impl PoissonDemo {
    pub fn create(strategy: &str, lr: f64, seed: u64) -> Result<PoissonDemo, String> {
        let problem = builtin_problem("poisson2d").map_err(|e| e.to_string())?;
        let program = problem.lower().map_err(|e| e.to_string())?;
        let strategy: TrainingStrategy = strategy.parse().map_err(|e: pinn_core::strategies::StrategyError| e.to_string())?;
        let disc = Discretizer::new(&program, strategy, seed).map_err(|e| e.to_string())?;
        let params = program.initial_params(seed);
        let weights = vec![1.0; program.terms.len()];
        let adam = Adam::new(lr, params.len());
        Ok(PoissonDemo { program, disc, adam, params, weights, iter: 0, last_loss: f64::NAN })
    }

    pub fn advance(&mut self, steps: usize) -> Result<f64, String> {
        for _ in 0..steps {
            if self.iter > 0 {
                self.disc.resample(&self.program);
            }
            let ev = self.disc.evaluate(&self.program, &self.params, &self.weights, true).map_err(|e| e.to_string())?;
            self.last_loss = ev.total;
            let g = ev.grad.ok_or("missing gradient")?;
            self.adam.step(&mut self.params, &g).map_err(|e| e.to_string())?;
            self.iter += 1;
        }
        Ok(self.last_loss)
    }

    /// Network and exact values on an `n × n` lattice, row-major in y.
    pub fn lattice(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>), String> {
        let n = n.max(2);
        let mut net = Vec::with_capacity(n * n);
        let mut exact = Vec::with_capacity(n * n);
        let s = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::PI);
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64);
                net.push(self.program.predict(0, &self.params, &[x, y]).map_err(|e| e.to_string())?);
                exact.push((std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin() * s);
            }
        }
        Ok((net, exact))
    }
}

#[wasm_bindgen]
impl PoissonDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(strategy: &str, lr: f64, seed: u32) -> Result<PoissonDemo, JsError> {
        PoissonDemo::create(strategy, lr, seed as u64).map_err(|e| JsError::new(&e))
    }

    /// Run `steps` Adam iterations; returns the loss before the last one.
    pub fn step(&mut self, steps: usize) -> Result<f64, JsError> {
        self.advance(steps).map_err(|e| JsError::new(&e))
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// Network prediction on an `n × n` lattice.
    pub fn prediction(&self, n: usize) -> Result<Vec<f64>, JsError> {
        self.lattice(n).map(|l| l.0).map_err(|e| JsError::new(&e))
    }

    /// Relative L2 error against the exact solution on an `n × n` lattice.
    pub fn rel_error(&self, n: usize) -> Result<f64, JsError> {
        let (net, exact) = self.lattice(n).map_err(|e| JsError::new(&e))?;
        let num: f64 = net.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = exact.iter().map(|b| b * b).sum();
        Ok((num / den).sqrt())
    }
}

#[wasm_bindgen]
pub fn points(kind: &str, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    sample_square(kind, n, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn integrate(expr: &str, reltol: f64, abstol: f64, maxiters: usize) -> Result<Vec<f64>, JsError> {
    integrate_square(expr, reltol, abstol, maxiters).map_err(|e| JsError::new(&e))
}
