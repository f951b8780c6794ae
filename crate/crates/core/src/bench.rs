//! Built-in benchmark problems: system, networks, oracle and run defaults.

use crate::ir::{parse_expression, parse_spec, validate_system, Expr, PdeSystem, SpecError, ValidationError};
use crate::lowering::{lower_system, AdditionalLoss, CoordinateField, DataSet, LossProgram, LowerError, LowerOptions};
use crate::mlp::{Activation, MlpSpec};
use crate::optim::Schedule;
use crate::reference::{self, ReferenceError, Table};
use crate::reweight::WeightScheme;
use crate::strategies::TrainingStrategy;
use thiserror::Error;

pub const PROBLEM_IDS: [&str; 10] = [
    "poisson2d",
    "diffusion1d",
    "burgers",
    "levelset",
    "allencahn4d",
    "hjb5d",
    "lorenz_inverse",
    "pdae_system",
    "spm",
    "reduced_p2d",
];

/// Resolution of the reference tables built for evaluation.
pub const REFERENCE_RESOLUTION: usize = 128;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown problem `{0}`; expected one of {list}", list = PROBLEM_IDS.join(", "))]
    Unknown(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("oracle for `{dvar}`: {message}")]
    Oracle { dvar: String, message: String },
    #[error("problem has no parameter `{0}`")]
    UnknownParam(String),
}

/// Source of truth for one dependent variable.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldOracle {
    /// Closed form in the variable's own arguments.
    Closed(Expr),
    /// Tabulated on a grid over the variable's arguments.
    Table(Table),
}

/// Defaults that a run config may override.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDefaults {
    pub strategy: TrainingStrategy,
    pub schedule: Schedule,
    pub weights: WeightScheme,
    /// Iterations for phases that do not name a count.
    pub iters: usize,
    /// Spacing of the evaluation lattice.
    pub eval_dx: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub id: String,
    pub system: PdeSystem,
    pub nets: Vec<MlpSpec>,
    /// One per dependent variable, or empty when nothing is known.
    pub oracle: Vec<FieldOracle>,
    pub options: LowerOptions,
    pub defaults: RunDefaults,
    /// Parameter values that generated the data of an inverse problem.
    pub true_params: Vec<(String, f64)>,
}

/// Evaluates an oracle at points of each variable's argument space.
#[derive(Debug, Clone)]
pub struct Oracle {
    fields: Vec<(String, CompiledField)>,
}

#[derive(Debug, Clone)]
enum CompiledField {
    Closed(CoordinateField),
    Table(Table),
}

impl Oracle {
    pub fn value(&self, dvar: usize, input: &[f64]) -> Result<f64, BenchError> {
        let (name, f) = &self.fields[dvar];
        let wrap = |m: String| BenchError::Oracle { dvar: name.clone(), message: m };
        match f {
            CompiledField::Closed(c) => c.eval(input).map_err(|e| wrap(e.to_string())),
            CompiledField::Table(t) => t.interp(input).map_err(|e| wrap(e.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

fn parse_run(strategy: &str, schedule: &str) -> (TrainingStrategy, Schedule) {
    (strategy.parse().expect("built-in strategy"), schedule.parse().expect("built-in schedule"))
}

fn defaults(strategy: &str, schedule: &str, iters: usize, eval_dx: f64) -> RunDefaults {
    let (strategy, schedule) = parse_run(strategy, schedule);
    RunDefaults { strategy, schedule, weights: WeightScheme::Fixed(None), iters, eval_dx }
}

const POISSON: &str = "\
ivars x y
dvars u(x,y)
domain x in [0, 1]
domain y in [0, 1]
eq Dxx(u(x,y)) + Dyy(u(x,y)) = -sin(pi*x)*sin(pi*y)
bc u(0,y) = 0
bc u(1,y) = -sin(pi*1)*sin(pi*y)
bc u(x,0) = 0
bc u(x,1) = -sin(pi*x)*sin(pi*1)
";

const DIFFUSION: &str = "\
params D
default D = 1
ivars t x
dvars u(t,x)
domain t in [0, 1]
domain x in [-1, 1]
eq Dt(u(t,x)) - D*Dxx(u(t,x)) = (exp(-t) - pi^2)*sin(pi*x)
bc u(0,x) = sin(pi*x)
bc u(t,-1) = 0
bc u(t,1) = 0
";

const BURGERS: &str = "\
params nu
default nu = 0.07
ivars t x
dvars u(t,x)
domain t in [0, 1]
domain x in [0, 2*pi]
eq Dt(u(t,x)) + u(t,x)*Dx(u(t,x)) = nu*Dxx(u(t,x))
bc u(0,x) = (x*exp(-x^2/(4*nu)) + (x - 2*pi)*exp(-(x - 2*pi)^2/(4*nu)))/(exp(-x^2/(4*nu)) + exp(-(x - 2*pi)^2/(4*nu))) + 4
bc u(t,0) = u(t,2*pi)
";

const LEVELSET: &str = "\
ivars t x y
dvars psi(t,x,y)
domain t in [0, 1]
domain x in [0, 1]
domain y in [0, 1]
# Spread rate with the wind factor taken literally; wind is (0, 2).
eq Dt(psi(t,x,y)) + 0.1125*(1 + 0.157*max(abs(0.44*2*Dy(psi(t,x,y))/norm(grad(psi(t,x,y), x, y)))^0.041, 1.45))*norm(grad(psi(t,x,y), x, y)) = 0
bc psi(0,x,y) = sqrt((x - 0.5)^2 + (y - 0.5)^2) - 0.2
";

const ALLEN_CAHN: &str = "\
ivars t x1 x2 x3 x4
dvars u(t,x1,x2,x3,x4)
domain t in [0, 1]
domain x1 in [0, 1]
domain x2 in [0, 1]
domain x3 in [0, 1]
domain x4 in [0, 1]
eq Dt(u(t,x1,x2,x3,x4)) = Dx1x1(u(t,x1,x2,x3,x4)) + Dx2x2(u(t,x1,x2,x3,x4)) + Dx3x3(u(t,x1,x2,x3,x4)) + Dx4x4(u(t,x1,x2,x3,x4)) + u(t,x1,x2,x3,x4) - u(t,x1,x2,x3,x4)^3
bc u(0,x1,x2,x3,x4) = 1/(2 + 0.4*(x1^2 + x2^2 + x3^2 + x4^2))
";

const HJB: &str = "\
params lambda
default lambda = 1
ivars t x1 x2 x3 x4
dvars u(t,x1,x2,x3,x4)
domain t in [0, 1]
domain x1 in [0, 1]
domain x2 in [0, 1]
domain x3 in [0, 1]
domain x4 in [0, 1]
eq Dt(u(t,x1,x2,x3,x4)) + Dx1x1(u(t,x1,x2,x3,x4)) + Dx2x2(u(t,x1,x2,x3,x4)) + Dx3x3(u(t,x1,x2,x3,x4)) + Dx4x4(u(t,x1,x2,x3,x4)) - lambda*norm(grad(u(t,x1,x2,x3,x4), x1, x2, x3, x4))^2 = 0
# Terminal condition at t = 1.
bc u(1,x1,x2,x3,x4) = log((1 + x1^2 + x2^2 + x3^2 + x4^2)/2)
";

const LORENZ: &str = "\
params sigma rho beta
default sigma = 1
default rho = 1
default beta = 1
ivars t
dvars x(t) y(t) z(t)
domain t in [0, 1]
eq Dt(x(t)) = sigma*(y(t) - x(t))
eq Dt(y(t)) = x(t)*(rho - z(t)) - y(t)
eq Dt(z(t)) = x(t)*y(t) - beta*z(t)
bc x(0) = 1
bc y(0) = 0
bc z(0) = 0
";

const PDAE: &str = "\
ivars t x
dvars u1(t,x) u2(t,x) u3(t,x)
domain t in [0, 1]
domain x in [0, 1]
eq Dtt(u1(t,x)) = Dxx(u1(t,x)) + u3(t,x)*sin(pi*x)
eq Dtt(u2(t,x)) = Dxx(u2(t,x)) + u3(t,x)*cos(pi*x)
eq 0 = u1(t,x)*sin(pi*x) + u2(t,x)*cos(pi*x) - exp(-t)
bc u1(0,x) = sin(pi*x)
bc u2(0,x) = cos(pi*x)
bc Dt(u1(0,x)) = -sin(pi*x)
bc Dt(u2(0,x)) = -cos(pi*x)
bc u1(t,0) = 0
bc u2(t,0) = exp(-t)
bc u1(t,1) = 0
bc u2(t,1) = -exp(-t)
";

const SPM: &str = "\
ivars t rn rp
dvars Q(t) cn(t,rn) cp(t,rp)
domain t in [0, 0.15]
domain rn in [0, 1]
domain rp in [0, 1]
eq Dt(Q(t)) = 4.27249308415467
eq rn^2*Dt(cn(t,rn)) = 8.813457647415216*(rn^2*Drnrn(cn(t,rn)) + 2*rn*Drn(cn(t,rn)))
eq rp^2*Dt(cp(t,rp)) = 22.598609352346717*(rp^2*Drprp(cp(t,rp)) + 2*rp*Drp(cp(t,rp)))
bc Q(0) = 0
bc cn(0,rn) = 0.8
bc cp(0,rp) = 0.6
bc Drn(cn(t,0)) = 0
bc Drn(cn(t,1)) = -0.14182855923368468
bc Drp(cp(t,0)) = 0
bc Drp(cp(t,1)) = 0.03237700710041634
";

const REDUCED_P2D: &str = "\
ivars t x
dvars ce(t,x) phie(t,x)
domain t in [0, 1]
domain x in [0, 1]
eq Dt(ce(t,x)) = Dxx(ce(t,x)) + piecewise(x; 0.4: 1, 0.6: 0, else: -1)
eq 0 = Dxx(ce(t,x)) - Dxx(phie(t,x)) - piecewise(x; 0.4: 1, 0.6: 0, else: -1)
bc ce(0,x) = 1
bc phie(0,x) = 0
bc Dx(ce(t,0)) = 0
bc Dx(ce(t,1)) = 0
bc phie(t,0) = 0
bc Dx(phie(t,1)) = 0
";

/// Spec-file text of a built-in problem.
pub fn problem_spec(id: &str) -> Option<&'static str> {
    Some(match id {
        "poisson2d" => POISSON,
        "diffusion1d" => DIFFUSION,
        "burgers" => BURGERS,
        "levelset" => LEVELSET,
        "allencahn4d" => ALLEN_CAHN,
        "hjb5d" => HJB,
        "lorenz_inverse" => LORENZ,
        "pdae_system" => PDAE,
        "spm" => SPM,
        "reduced_p2d" => REDUCED_P2D,
        _ => return None,
    })
}

/// Image sum of heat kernels for the periodic Burgers solution; enough
/// images that truncation is far below rounding on `[0, 1] × [0, 2π]`.
fn burgers_oracle() -> String {
    let terms: Vec<(String, String)> = (-2..=2)
        .map(|k: i32| {
            let shift = format!("(x - 4*t - {}*pi)", 2 * k);
            let e = format!("exp(-{shift}^2/(4*nu*(t + 1)))");
            (shift, e)
        })
        .collect();
    let num: Vec<String> = terms.iter().map(|(s, e)| format!("{s}*{e}")).collect();
    let den: Vec<String> = terms.iter().map(|(_, e)| e.clone()).collect();
    format!("({})/((t + 1)*({})) + 4", num.join(" + "), den.join(" + "))
}

fn closed(sys: &PdeSystem, exprs: &[&str]) -> Vec<FieldOracle> {
    let decl = sys.declarations();
    exprs.iter().map(|e| FieldOracle::Closed(parse_expression(e, &decl).expect("built-in oracle"))).collect()
}

fn lorenz_data() -> (AdditionalLoss, Vec<FieldOracle>) {
    let (ts, states) = reference::lorenz_samples(10.0, 28.0, 8.0 / 3.0);
    let mut data = Vec::new();
    let mut tables = Vec::new();
    for (i, name) in ["x", "y", "z"].iter().enumerate() {
        let values: Vec<f64> = states.iter().map(|s| s[i]).collect();
        data.push(DataSet { dvar: name.to_string(), points: ts.iter().map(|&t| vec![t]).collect(), values: values.clone() });
        tables.push(FieldOracle::Table(Table::new(vec![ts.clone()], values)));
    }
    (AdditionalLoss { weight: 1.0, data }, tables)
}

fn tables_for(sys: &PdeSystem, set: reference::ReferenceSet) -> Result<Vec<FieldOracle>, BenchError> {
    sys.dvars
        .iter()
        .map(|d| {
            set.field(&d.name).cloned().map(FieldOracle::Table).ok_or_else(|| BenchError::Oracle {
                dvar: d.name.clone(),
                message: "missing from the reference solution".into(),
            })
        })
        .collect()
}

/// Look up a built-in problem.
pub fn builtin_problem(id: &str) -> Result<BenchmarkProblem, BenchError> {
    let text = problem_spec(id).ok_or_else(|| BenchError::Unknown(id.to_string()))?;
    let system = parse_spec(text)?;
    let sig = Activation::Sigmoid;
    let gelu = Activation::Gelu;
    let mut options = LowerOptions::default();
    let mut true_params = Vec::new();
    let (nets, oracle, defaults) = match id {
        "poisson2d" => (
            vec![MlpSpec::dense(2, &[16, 16], 1, sig)],
            closed(&system, &["sin(pi*x)*sin(pi*y)/(2*pi^2)"]),
            defaults("grid:0.05", "adam:0.001:50+bfgs:150", 200, 0.1),
        ),
        "diffusion1d" => (
            vec![MlpSpec::dense(2, &[16, 16], 1, sig)],
            closed(
                &system,
                &["(exp(-t)/(D*pi^2 - 1) - 1/D + (1 - 1/(D*pi^2 - 1) + 1/D)*exp(-D*pi^2*t))*sin(pi*x)"],
            ),
            defaults("grid:0.2:0.1", "adam:0.01", 2000, 0.1),
        ),
        "burgers" => (
            vec![MlpSpec::dense(2, &[16, 16], 1, Activation::Tanh)],
            closed(&system, &[&burgers_oracle()]),
            defaults("quasirandom:100", "adam:0.01:1000+bfgs:1000", 1000, 0.1),
        ),
        "levelset" => (
            vec![MlpSpec::dense(3, &[16], 1, sig)],
            closed(&system, &["sqrt((x - 0.5)^2 + (y - 0.5)^2) - 0.2 - 0.1125*(1 + 0.157*1.45)*t"]),
            defaults("grid:0.1", "adam:0.005", 2000, 0.1),
        ),
        "allencahn4d" => (vec![MlpSpec::dense(5, &[20], 1, sig)], Vec::new(), defaults("quasirandom:100", "adam:0.01", 2500, 0.25)),
        "hjb5d" => (vec![MlpSpec::dense(5, &[20], 1, sig)], Vec::new(), defaults("quasirandom:100", "adam:0.005", 2500, 0.25)),
        "lorenz_inverse" => {
            let (data, tables) = lorenz_data();
            options.param_estim = true;
            options.additional = Some(data);
            true_params = vec![("sigma".into(), 10.0), ("rho".into(), 28.0), ("beta".into(), 8.0 / 3.0)];
            (vec![MlpSpec::dense(1, &[8, 8, 8], 1, sig); 3], tables, defaults("grid:0.01", "bfgs:5000", 5000, 0.01))
        }
        "pdae_system" => (
            vec![MlpSpec::dense(2, &[20, 20], 1, sig); 3],
            closed(&system, &["exp(-t)*sin(pi*x)", "exp(-t)*cos(pi*x)", "(1 + pi^2)*exp(-t)"]),
            defaults("quadrature", "bfgs:200+adam:0.01:10000+bfgs:200", 10_000, 0.1),
        ),
        "spm" => {
            let mut tables = tables_for(&system, reference::spm(REFERENCE_RESOLUTION)?)?;
            tables[0] = closed(&system, &["4.27249308415467*t"]).remove(0);
            (
                vec![MlpSpec::dense(1, &[50, 50], 1, gelu), MlpSpec::dense(2, &[50, 50], 1, gelu), MlpSpec::dense(2, &[50, 50], 1, gelu)],
                tables,
                defaults("quadrature:abstol=1e-5:reltol=1:maxiters=1000", "adam:0.0003", 50_000, 0.02),
            )
        }
        "reduced_p2d" => (
            vec![MlpSpec::dense(2, &[50, 50], 1, gelu); 2],
            tables_for(&system, reference::reduced_p2d(REFERENCE_RESOLUTION)?)?,
            defaults("quadrature:abstol=1e-5:reltol=1:maxiters=1000", "adam:0.0003", 50_000, 0.05),
        ),
        _ => unreachable!("spec table and problem table agree"),
    };
    validate_system(&system, &nets)?;
    Ok(BenchmarkProblem { id: id.to_string(), system, nets, oracle, options, defaults, true_params })
}

impl BenchmarkProblem {
    /// A user system with one dense network per dependent variable.
    pub fn from_spec(id: &str, text: &str, hidden: &[usize], act: Activation) -> Result<Self, BenchError> {
        let system = parse_spec(text)?;
        let nets: Vec<MlpSpec> = system.dvars.iter().map(|d| MlpSpec::dense(d.args.len(), hidden, 1, act)).collect();
        validate_system(&system, &nets)?;
        Ok(BenchmarkProblem {
            id: id.to_string(),
            system,
            nets,
            oracle: Vec::new(),
            options: LowerOptions::default(),
            defaults: defaults("grid:0.1", "adam:0.01", 1000, 0.1),
            true_params: Vec::new(),
        })
    }

    /// Change a physical parameter's default. Closed-form oracles read
    /// parameter defaults, so they follow; tabulated oracles do not.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), BenchError> {
        let p = self.system.params.iter_mut().find(|p| p.name == name).ok_or_else(|| BenchError::UnknownParam(name.to_string()))?;
        p.default = value;
        Ok(())
    }

    pub fn lower(&self) -> Result<LossProgram, BenchError> {
        Ok(lower_system(&self.system, &self.nets, &self.options)?)
    }

    pub fn has_oracle(&self) -> bool {
        !self.oracle.is_empty()
    }

    /// Closed-form expressions for every field, if all are closed form.
    pub fn closed_form(&self) -> Option<Vec<Expr>> {
        if self.oracle.is_empty() {
            return None;
        }
        self.oracle
            .iter()
            .map(|o| match o {
                FieldOracle::Closed(e) => Some(e.clone()),
                FieldOracle::Table(_) => None,
            })
            .collect()
    }

    pub fn compile_oracle(&self) -> Result<Option<Oracle>, BenchError> {
        if self.oracle.is_empty() {
            return Ok(None);
        }
        let mut fields = Vec::new();
        for (d, o) in self.oracle.iter().enumerate() {
            let name = self.system.dvars[d].name.clone();
            let f = match o {
                FieldOracle::Closed(e) => CompiledField::Closed(CoordinateField::compile(&self.system, d, e)?),
                FieldOracle::Table(t) => {
                    if t.dim() != self.system.dvars[d].args.len() {
                        return Err(BenchError::Oracle { dvar: name, message: "table dimension does not match".into() });
                    }
                    CompiledField::Table(t.clone())
                }
            };
            fields.push((name, f));
        }
        Ok(Some(Oracle { fields }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowering::TermKind;

    #[test]
    fn every_problem_builds_and_lowers() {
        for id in PROBLEM_IDS {
            let p = builtin_problem(id).unwrap_or_else(|e| panic!("{id}: {e}"));
            let prog = p.lower().unwrap_or_else(|e| panic!("{id}: {e}"));
            assert_eq!(prog.terms.len(), p.system.equations.len() + p.system.bcs.len(), "{id}");
        }
        assert!(matches!(builtin_problem("nope"), Err(BenchError::Unknown(_))));
    }

    #[test]
    fn term_shapes() {
        let pdae = builtin_problem("pdae_system").unwrap().lower().unwrap();
        let kinds: Vec<TermKind> = pdae.terms.iter().map(|t| t.kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == TermKind::Interior).count(), 3);
        assert_eq!(kinds.iter().filter(|k| **k == TermKind::Boundary).count(), 8);
        let spm = builtin_problem("spm").unwrap().lower().unwrap();
        let dims: Vec<usize> = spm.terms.iter().map(|t| t.dim()).collect();
        assert_eq!(dims, vec![1, 2, 2, 0, 1, 1, 1, 1, 1, 1]);
        let lorenz = builtin_problem("lorenz_inverse").unwrap().lower().unwrap();
        assert_eq!(lorenz.layout.lambda.len(), 3);
        assert!(lorenz.has_data());
    }

    #[test]
    fn spm_charge_is_linear() {
        let p = builtin_problem("spm").unwrap();
        let o = p.compile_oracle().unwrap().unwrap();
        assert!((o.value(0, &[0.1]).unwrap() - 0.427249308415467).abs() < 1e-15);
        assert!((o.value(1, &[0.0, 0.3]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn parameter_override() {
        let mut p = builtin_problem("burgers").unwrap();
        p.set_param("nu", 0.1).unwrap();
        assert_eq!(p.system.params[0].default, 0.1);
        assert!(matches!(p.set_param("mu", 1.0), Err(BenchError::UnknownParam(_))));
    }
}
