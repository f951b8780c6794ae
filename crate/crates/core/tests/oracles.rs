//! Closed-form oracles substituted for the networks must zero every
//! compiled residual.

use pinn_core::bench::{builtin_problem, PROBLEM_IDS};
use pinn_core::ir::parse_expression;
use pinn_core::lowering::LossProgram;
use pinn_core::strategies::sobol::sobol_points;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sobol points with a random shift modulo 1, mapped onto a box. The shift
/// keeps probes off dyadic coordinates such as the level-set apex.
fn probes(lower: &[f64], upper: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = lower.len();
    if d == 0 {
        return vec![Vec::new()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    sobol_points(n, d, 0)
        .into_iter()
        .map(|p| (0..d).map(|k| lower[k] + (upper[k] - lower[k]) * (p[k] + shift[k]).fract()).collect())
        .collect()
}

fn worst_residual(prog: &LossProgram, sol: &pinn_core::lowering::ExactSolution, terms: &[usize]) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for &ti in terms {
        let t = &prog.terms[ti];
        for p in probes(&t.lower, &t.upper, 1000, ti as u64) {
            let r = prog.exact_residual(ti, &p, sol).unwrap_or_else(|e| panic!("{} at {p:?}: {e}", t.label)).abs();
            if r > worst.0 {
                worst = (r, format!("{} at {p:?}", t.label));
            }
        }
    }
    worst
}

#[test]
fn closed_form_oracles_null_all_residuals() {
    let mut checked = 0;
    for id in PROBLEM_IDS {
        let p = builtin_problem(id).unwrap();
        let Some(exprs) = p.closed_form() else { continue };
        let prog = p.lower().unwrap();
        let sol = prog.compile_exact(&exprs).unwrap();
        let all: Vec<usize> = (0..prog.terms.len()).collect();
        let (r, at) = worst_residual(&prog, &sol, &all);
        assert!(r < 1e-10, "{id}: residual {r:e} at {at}");
        checked += 1;
    }
    // poisson2d, diffusion1d, burgers, levelset, pdae_system
    assert_eq!(checked, 5);
}

#[test]
fn spm_charge_oracle_nulls_its_equation() {
    let p = builtin_problem("spm").unwrap();
    let prog = p.lower().unwrap();
    let decl = p.system.declarations();
    let e = |s: &str| parse_expression(s, &decl).unwrap();
    let sol = prog.compile_exact(&[e("4.27249308415467*t"), e("0.8"), e("0.6")]).unwrap();
    let (r, at) = worst_residual(&prog, &sol, &[0, 3]);
    assert!(r < 1e-12, "{r:e} at {at}");
}
