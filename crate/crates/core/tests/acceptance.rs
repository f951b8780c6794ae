//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the criteria execute in order and report their own timings.

use pinn_core::bench::{builtin_problem, BenchmarkProblem, PROBLEM_IDS};
use pinn_core::lowering::{LossProgram, TermKind};
use pinn_core::mlp::{forward, init_params, input_jet};
use pinn_core::reference::{diffusion1d, diffusion1d_exact, spm, SPM_FLUX_N, SPM_FLUX_P};
use pinn_core::reweight::{update_loss_gradients, Reweighter, WeightScheme};
use pinn_core::strategies::{integrate_adaptive, sobol_points, Discretizer, TrainingStrategy};
use pinn_core::trainer::{solve_inverse, train, RunConfig, TrainResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::convert::Infallible;
use std::f64::consts::PI;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cfg(strategy: &str, schedule: &str) -> RunConfig {
    RunConfig { strategy: Some(strategy.parse().unwrap()), schedule: Some(schedule.parse().unwrap()), ..Default::default() }
}

fn domain_point(p: &BenchmarkProblem, d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    p.system.dvars[d]
        .args
        .iter()
        .map(|a| {
            let (lo, hi) = p.system.domain(a).unwrap();
            lo + (hi - lo) * rng.gen::<f64>()
        })
        .collect()
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Input jets against central differences of the forward pass, and full
/// loss gradients against central differences along random directions.
fn derivatives() -> Outcome {
    let (mut worst1, mut worst2, mut worst_p) = (0.0f64, 0.0f64, 0.0f64);
    let mut where_p = String::new();
    for (pi, id) in PROBLEM_IDS.iter().enumerate() {
        let p = builtin_problem(id).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + pi as u64);
        for (d, spec) in p.nets.iter().enumerate() {
            let dim = spec.input_dim();
            for seed in 0..100u64 {
                let mut w = init_params(spec, seed);
                w.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
                let x = domain_point(&p, d, &mut rng);
                let axes: Vec<usize> = (0..dim).collect();
                let jet = input_jet(spec, &w, &x, &axes).unwrap();
                let f = |x: &[f64]| forward(spec, &w, x).unwrap()[0];
                let f0 = f(&x);
                for i in 0..dim {
                    let at = |h: f64| {
                        let mut y = x.clone();
                        y[i] += h;
                        f(&y)
                    };
                    let h1 = 1e-5;
                    let d1 = (at(h1) - at(-h1)) / (2.0 * h1);
                    let h2 = 1e-3;
                    let d2 = (at(h2) - 2.0 * f0 + at(-h2)) / (h2 * h2);
                    worst1 = worst1.max(rel(jet.first[i][0], d1, 1e-3));
                    let exact2 = jet.second.iter().find(|(a, _)| *a == i).unwrap().1[0];
                    worst2 = worst2.max(rel(exact2, d2, 1e-2));
                }
            }
        }
        let program = p.lower().unwrap();
        let disc = Discretizer::new(&program, "quasirandom:32".parse().unwrap(), 5).unwrap();
        let weights = vec![1.0; program.terms.len()];
        for seed in 0..3u64 {
            let mut w = program.initial_params(seed);
            w.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
            let ev = disc.evaluate(&program, &w, &weights, true).unwrap();
            let g = ev.grad.unwrap();
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let noise: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nn = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut v: Vec<f64> = g.iter().zip(&noise).map(|(a, b)| a / gn + b / nn).collect();
            let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= vn);
            let loss = |s: f64| {
                let y: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + s * b).collect();
                disc.evaluate(&program, &y, &weights, false).unwrap().total
            };
            let h = 1e-5 * (1.0 + ev.total.abs()).sqrt().recip() ;
            let fd = (loss(h) - loss(-h)) / (2.0 * h);
            let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            let e = rel(an, fd, 1e-8 * (1.0 + ev.total.abs()));
            if e > worst_p {
                worst_p = e;
                where_p = id.to_string();
            }
        }
    }
    let pass = worst1 < 1e-5 && worst2 < 1e-3 && worst_p < 1e-4;
    outcome(pass, format!("max rel err: first {worst1:.2e}, second {worst2:.2e}, loss gradient {worst_p:.2e} ({where_p})"))
}

type Integrand = (usize, &'static str, fn(&[f64]) -> f64, f64);

fn integrands() -> Vec<Integrand> {
    let erf1 = libm::erf(1.0);
    let g1 = PI.sqrt() / 2.0 * erf1;
    let (a, b) = (1f64.sin(), 1.0 - 1f64.cos());
    vec![
        (1, "x^2", |x| x[0] * x[0], 1.0 / 3.0),
        (1, "exp(x)", |x| x[0].exp(), std::f64::consts::E - 1.0),
        (1, "runge", |x| 1.0 / (1.0 + 25.0 * (2.0 * x[0] - 1.0).powi(2)), 0.2 * 5f64.atan()),
        (1, "sqrt(x)", |x| x[0].sqrt(), 2.0 / 3.0),
        (2, "sin sin", |x| (PI * x[0]).sin() * (PI * x[1]).sin(), 4.0 / (PI * PI)),
        (2, "gauss2", |x| (-(x[0] * x[0] + x[1] * x[1])).exp(), g1 * g1),
        (2, "1/(1+x+y)", |x| 1.0 / (1.0 + x[0] + x[1]), 3.0 * 3f64.ln() - 4.0 * 2f64.ln()),
        (3, "xyz", |x| x[0] * x[1] * x[2], 0.125),
        (3, "exp sum", |x| (x[0] + x[1] + x[2]).exp(), (std::f64::consts::E - 1.0).powi(3)),
        (3, "cos sum", |x| (x[0] + x[1] + x[2]).cos(), a * a * a - 3.0 * a * b * b),
        (4, "product peak", |x| x.iter().map(|v| 1.0 / (1.0 + (v - 0.5).powi(2))).product(), (2.0 * 0.5f64.atan()).powi(4)),
        (4, "gauss4", |x| (-x.iter().map(|v| v * v).sum::<f64>()).exp(), g1.powi(4)),
    ]
}

fn quadrature_suite() -> Outcome {
    let tols = [(1e-3, 1e-12), (1e-6, 1e-12), (1e-8, 1e-14)];
    let (mut cases, mut within, mut bounded, mut unconverged) = (0, 0, 0, 0);
    let mut misses = Vec::new();
    for (dim, name, f, truth) in integrands() {
        for &(reltol, abstol) in &tols {
            let r = integrate_adaptive(|x| Ok::<_, Infallible>(f(x)), &vec![0.0; dim], &vec![1.0; dim], reltol, abstol, 200_000)
                .unwrap();
            cases += 1;
            let err = (r.value - truth).abs();
            if !r.converged {
                unconverged += 1;
                misses.push(format!("{name}@{reltol:e} unconverged"));
                continue;
            }
            if err <= abstol.max(reltol * truth.abs()) {
                within += 1;
            } else {
                misses.push(format!("{name}@{reltol:e} err {err:.1e}"));
            }
            if err <= r.error {
                bounded += 1;
            }
        }
    }
    let converged = cases - unconverged;
    let frac = bounded as f64 / converged.max(1) as f64;
    let pass = unconverged == 0 && within == converged && frac >= 0.95;
    outcome(
        pass,
        format!("{within}/{converged} converged cases within tolerance, bounds valid {:.0}% ({cases} cases){}", 100.0 * frac, if misses.is_empty() { String::new() } else { format!("; {}", misses.join(", ")) }),
    )
}

fn qmc_vs_mc() -> Outcome {
    let f = |x: &[f64]| x[0].exp() * (2.0 * x[1]).cos();
    let truth = (std::f64::consts::E - 1.0) * 2f64.sin() / 2.0;
    let n = 4096;
    let base = sobol_points(n, 2, 0);
    let (mut q, mut m) = (Vec::new(), Vec::new());
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = [rng.gen::<f64>(), rng.gen::<f64>()];
        let qs: f64 = base.iter().map(|p| f(&[(p[0] + shift[0]).fract(), (p[1] + shift[1]).fract()])).sum::<f64>() / n as f64;
        let ms: f64 = (0..n).map(|_| f(&[rng.gen::<f64>(), rng.gen::<f64>()])).sum::<f64>() / n as f64;
        q.push((qs - truth).abs());
        m.push((ms - truth).abs());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        0.5 * (v[9] + v[10])
    };
    let (mq, mm) = (median(&mut q), median(&mut m));
    outcome(mq <= mm / 5.0, format!("median |err| Sobol {mq:.2e}, MC {mm:.2e}, ratio {:.3}", mq / mm))
}

fn poisson() -> Outcome {
    let p = builtin_problem("poisson2d").unwrap();
    let r = train(&p, &cfg("grid:0.05", "adam:0.001:50+bfgs:150")).unwrap();
    let e = r.rel_l2().unwrap();
    outcome(r.loss < 1e-4 && e < 2e-2, format!("loss {:.3e} (< 1e-4), rel L2 {e:.3e} (< 2e-2)", r.loss))
}

fn pdae() -> Outcome {
    let p = builtin_problem("pdae_system").unwrap();
    // Strategy from the problem defaults.
    let c = RunConfig { eval_dx: Some(0.1), schedule: Some("bfgs:200+adam:0.01:10000+bfgs:200".parse().unwrap()), ..Default::default() };
    let r = train(&p, &c).unwrap();
    let m = r.max_abs().unwrap();
    let per: Vec<String> = r.errors.as_ref().unwrap().iter().map(|f| format!("{} {:.2e}", f.dvar, f.max_abs)).collect();
    outcome(m < 5e-2, format!("max abs err {m:.3e} (< 5e-2): {}", per.join(", ")))
}

fn lorenz() -> Outcome {
    let p = builtin_problem("lorenz_inverse").unwrap();
    let r: TrainResult = solve_inverse(&p, &cfg("grid:0.01", "bfgs:5000")).unwrap();
    let truth = [10.0, 28.0, 8.0 / 3.0];
    let errs: Vec<f64> = r.lambda.iter().zip(truth).map(|(a, b)| ((a - b) / b).abs()).collect();
    let pass = errs.len() == 3 && errs.iter().all(|e| *e < 0.05);
    outcome(pass, format!("sigma {:.4}, rho {:.4}, beta {:.4}; worst rel dev {:.2e} (< 5e-2)", r.lambda[0], r.lambda[1], r.lambda[2], errs.iter().cloned().fold(0.0, f64::max)))
}

fn burgers() -> Outcome {
    let p = builtin_problem("burgers").unwrap();
    let r = train(&p, &cfg("quasirandom:100", "adam:0.01:1000+bfgs:1000")).unwrap();
    let e = r.rel_l2().unwrap();
    outcome(e < 5e-2, format!("rel L2 {e:.3e} (< 5e-2) at nu = 0.07"))
}

/// Loss of `params` on a fresh uniform sample, unit weights.
fn held_out_loss(program: &LossProgram, params: &[f64]) -> f64 {
    let d = Discretizer::new(program, "stochastic:1000".parse().unwrap(), 12345).unwrap();
    d.evaluate(program, params, &vec![1.0; program.terms.len()], false).unwrap().total
}

fn high_dimensional() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (id, lr) in [("allencahn4d", 0.01), ("hjb5d", 0.005)] {
        let p = builtin_problem(id).unwrap();
        let t = Instant::now();
        let r = train(&p, &cfg("quasirandom:100", &format!("adam:{lr}:2500"))).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let held = held_out_loss(&p.lower().unwrap(), &r.params);
        let grid = train(&p, &cfg("grid:0.5", "adam:0.01:5"));
        let ok = r.loss < 5e-2 && held < 5e-2 && grid.is_ok() && secs < 600.0;
        pass &= ok;
        parts.push(format!(
            "{id}: best loss {:.2e}, held-out loss {held:.2e}, grid:0.5 {} ({secs:.0} s)",
            r.loss,
            if grid.is_ok() { "runs" } else { "failed" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn reweighting() -> Outcome {
    // (a) three terms with gradient scales spread over six decades.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grads: Vec<Vec<f64>> = [1e-3, 1.0, 1e3].iter().map(|s| (0..50).map(|_| s * rng.gen_range(-1.0..1.0)).collect()).collect();
    let eps = 1e-7;
    let mut w = vec![1.0; 3];
    update_loss_gradients(&mut w, &grads, 1.0, eps).unwrap();
    let scaled: Vec<f64> = w.iter().zip(&grads).map(|(a, g)| a * g.iter().map(|v| v.abs()).sum::<f64>() / 50.0).collect();
    let means: Vec<f64> = grads.iter().map(|g| g.iter().map(|v| v.abs()).sum::<f64>() / 50.0).collect();
    let a_ok = scaled.iter().zip(&means).all(|(s, m)| (s - 1.0).abs() <= eps / (m + eps) + 1e-12);

    // (b) minimax weights along a real training run.
    let p = builtin_problem("poisson2d").unwrap();
    let c = RunConfig { weights: Some("minimax".parse().unwrap()), log_every: Some(1), ..cfg("grid:0.1", "adam:0.01:1000") };
    let r = train(&p, &c).unwrap();
    let b_ok = r.history.entries.windows(2).all(|e| e[0].weights.iter().zip(&e[1].weights).all(|(a, b)| b >= a))
        && r.history.entries.len() == 1000;

    // (c) SPM boundary residual under each weighting, same seed.
    let spm_p = builtin_problem("spm").unwrap();
    let program = spm_p.lower().unwrap();
    let strategy: TrainingStrategy = "quadrature:abstol=1e-5:reltol=1:maxiters=1000".parse().unwrap();
    let judge = Discretizer::new(&program, "quadrature:abstol=1e-7:reltol=1e-3:maxiters=5000".parse().unwrap(), 0).unwrap();
    let mut bc = Vec::new();
    for scheme in ["fixed", "lossgrad", "minimax"] {
        let c = RunConfig {
            strategy: Some(strategy.clone()),
            schedule: Some("adam:0.0003:5000".parse().unwrap()),
            weights: Some(scheme.parse::<WeightScheme>().unwrap()),
            ..Default::default()
        };
        let r = train(&spm_p, &c).unwrap();
        let ev = judge.evaluate(&program, &r.params, &vec![1.0; program.terms.len()], false).unwrap();
        let s: f64 = program.terms.iter().zip(&ev.terms).filter(|(t, _)| t.kind == TermKind::Boundary).map(|(_, c)| c).sum();
        bc.push((scheme, s));
    }
    let c_ok = bc[1].1 < bc[0].1 && bc[2].1 < bc[0].1;
    let _ = Reweighter::new(WeightScheme::minimax(), vec![TermKind::Interior]).unwrap();
    outcome(
        a_ok && b_ok && c_ok,
        format!(
            "(a) {} scaled means {:?}; (b) {} over {} steps; (c) {} BC sums {}",
            if a_ok { "ok" } else { "FAIL" },
            scaled.iter().map(|v| format!("{v:.9}")).collect::<Vec<_>>(),
            if b_ok { "monotone" } else { "FAIL" },
            r.history.entries.len(),
            if c_ok { "ok" } else { "FAIL" },
            bc.iter().map(|(n, s)| format!("{n} {s:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn oracle_nulling() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = Vec::new();
    for id in PROBLEM_IDS {
        let p = builtin_problem(id).unwrap();
        let Some(exprs) = p.closed_form() else { continue };
        let program = p.lower().unwrap();
        let sol = program.compile_exact(&exprs).unwrap();
        for (ti, t) in program.terms.iter().enumerate() {
            let dim = t.lower.len();
            let mut rng = ChaCha8Rng::seed_from_u64(ti as u64);
            let shift: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
            let pts = if dim == 0 { vec![vec![]] } else { sobol_points(1000, dim, 0) };
            for u in pts {
                let x: Vec<f64> =
                    (0..dim).map(|k| t.lower[k] + (t.upper[k] - t.lower[k]) * (u[k] + shift[k]).fract()).collect();
                let r = program.exact_residual(ti, &x, &sol).unwrap();
                worst = worst.max(r.abs());
            }
        }
        checked.push(id);
    }
    outcome(worst < 1e-10 && !checked.is_empty(), format!("max |residual| {worst:.2e} over {}", checked.join(", ")))
}

fn reference_solver() -> Outcome {
    let err = |n: usize| {
        let t = diffusion1d(n, 1.0).unwrap();
        let mut e = 0.0f64;
        for (i, &tt) in t.axes[0].iter().enumerate() {
            for (j, &x) in t.axes[1].iter().enumerate() {
                e = e.max((t.at(&[i, j]) - diffusion1d_exact(tt, x, 1.0)).abs());
            }
        }
        e
    };
    let (e1, e2, e3) = (err(32), err(64), err(128));
    let (o1, o2) = ((e1 / e2).log2(), (e2 / e3).log2());
    let s = spm(64).unwrap();
    let mut worst_ic = 0.0f64;
    let mut worst_bc = 0.0f64;
    for (name, c0, flux) in [("cn", 0.8, SPM_FLUX_N), ("cp", 0.6, SPM_FLUX_P)] {
        let t = s.field(name).unwrap();
        let nr = t.axes[1].len();
        let h = t.axes[1][1] - t.axes[1][0];
        for j in 0..nr {
            worst_ic = worst_ic.max((t.at(&[0, j]) - c0).abs());
        }
        for i in 1..t.axes[0].len() {
            let c = |j: usize| t.at(&[i, j]);
            let inner = (-3.0 * c(0) + 4.0 * c(1) - c(2)) / (2.0 * h);
            let outer = (c(nr - 3) - 4.0 * c(nr - 2) + 3.0 * c(nr - 1)) / (2.0 * h);
            worst_bc = worst_bc.max(inner.abs()).max((outer - flux).abs());
        }
    }
    let q = s.field("Q").unwrap();
    let q0 = q.at(&[0]).abs();
    let pass = o1 >= 1.8 && o2 >= 1.8 && worst_ic == 0.0 && q0 == 0.0 && worst_bc < 1e-10;
    outcome(pass, format!("diffusion order {o1:.2}, {o2:.2} (>= 1.8); SPM initial dev {worst_ic:.1e}, Q(0) {q0:.1e}, flux rows dev {worst_bc:.1e}"))
}

fn main() {
    let criteria: Vec<(&str, f64, fn() -> Outcome)> = vec![
        ("1 derivative correctness", 60.0, derivatives),
        ("2 quadrature suite", 30.0, quadrature_suite),
        ("3 QMC vs MC", 30.0, qmc_vs_mc),
        ("4 Poisson 2-D", 180.0, poisson),
        ("5 PDAE system", 300.0, pdae),
        ("6 Lorenz inverse", 300.0, lorenz),
        ("7 Burgers", 300.0, burgers),
        ("8 high-dimensional smoke", 1200.0, high_dimensional),
        ("9 reweighting properties", 900.0, reweighting),
        ("10 oracle nulling", 10.0, oracle_nulling),
        ("11 reference solver", 60.0, reference_solver),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, limit, run) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let r = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let pass = r.pass && secs < limit;
        if !pass {
            failed += 1;
        }
        println!("[{}] {name}: {} [{secs:.1} s, limit {limit:.0} s]", if pass { "PASS" } else { "FAIL" }, r.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        // Failures are reported, not fatal, unless asked for.
        if std::env::var_os("PINN_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
