use super::{Apply, Arg, Equation, Expr, PdeSystem, ValidationError};
use crate::mlp::MlpSpec;
use std::collections::HashSet;

/// Summary of an accepted system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub interior_equations: usize,
    pub boundary_conditions: usize,
    pub dependent_vars: usize,
    pub dimension: usize,
}

fn is_endpoint(v: f64, lo: f64, hi: f64) -> bool {
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    (v - lo).abs() <= tol || (v - hi).abs() <= tol
}

fn check_app(sys: &PdeSystem, app: &Apply) -> Result<(), ValidationError> {
    let dv = sys
        .dvars
        .iter()
        .find(|d| d.name == app.dvar)
        .ok_or_else(|| ValidationError::Unhoused { name: app.dvar.clone() })?;
    if dv.args.len() != app.args.len() {
        return Err(ValidationError::Arity { dvar: dv.name.clone(), expected: dv.args.len(), got: app.args.len() });
    }
    for (slot, (declared, arg)) in dv.args.iter().zip(&app.args).enumerate() {
        if let Arg::Var(v) = arg {
            if v != declared {
                return Err(ValidationError::ArgOrder {
                    dvar: dv.name.clone(),
                    slot,
                    expected: declared.clone(),
                    found: v.clone(),
                });
            }
        }
    }
    Ok(())
}

fn check_expr(sys: &PdeSystem, e: &Expr) -> Result<(), ValidationError> {
    let mut err = None;
    e.walk(&mut |node| {
        if err.is_some() {
            return;
        }
        let r = match node {
            Expr::Ivar(n) if sys.ivar_index(n).is_none() => Err(ValidationError::Unhoused { name: n.clone() }),
            Expr::Param(n) if sys.param_index(n).is_none() => Err(ValidationError::Unhoused { name: n.clone() }),
            Expr::Apply(a) => check_app(sys, a),
            Expr::Derivative { app, var, order } => check_app(sys, app).and_then(|_| {
                if !(1..=2).contains(order) {
                    return Err(ValidationError::Order { order: *order });
                }
                depends_on(sys, app, var)
            }),
            Expr::GradNorm { app, vars } => {
                check_app(sys, app).and_then(|_| vars.iter().try_for_each(|v| depends_on(sys, app, v)))
            }
            _ => Ok(()),
        };
        if let Err(e) = r {
            err = Some(e);
        }
    });
    err.map_or(Ok(()), Err)
}

fn depends_on(sys: &PdeSystem, app: &Apply, var: &str) -> Result<(), ValidationError> {
    if sys.ivar_index(var).is_none() {
        return Err(ValidationError::Unhoused { name: var.to_string() });
    }
    let dv = sys.dvars.iter().find(|d| d.name == app.dvar).expect("checked");
    if dv.args.iter().any(|a| a == var) {
        Ok(())
    } else {
        Err(ValidationError::DerivVar { dvar: app.dvar.clone(), var: var.to_string() })
    }
}

fn check_bc(sys: &PdeSystem, idx: usize, bc: &Equation) -> Result<(), ValidationError> {
    for side in [&bc.lhs, &bc.rhs] {
        for app in side.applications() {
            let dv = sys.dvars.iter().find(|d| d.name == app.dvar).expect("checked");
            let mut pinned = false;
            for (declared, arg) in dv.args.iter().zip(&app.args) {
                if let Arg::Pin(v) = arg {
                    pinned = true;
                    let (lo, hi) = sys.domain(declared).expect("checked");
                    if !is_endpoint(*v, lo, hi) {
                        return Err(ValidationError::PinNotEndpoint { bc: idx, var: declared.clone(), value: *v });
                    }
                }
            }
            if !pinned {
                return Err(ValidationError::Unpinned { bc: idx, dvar: app.dvar.clone() });
            }
        }
    }
    Ok(())
}

/// Checks that need no network information.
pub(crate) fn check_structure(sys: &PdeSystem) -> Result<(), ValidationError> {
    let mut seen = HashSet::new();
    let all_names = sys
        .ivars
        .iter()
        .chain(sys.dvars.iter().map(|d| &d.name))
        .chain(sys.params.iter().map(|p| &p.name));
    for n in all_names {
        if n == "pi" || !seen.insert(n.as_str()) {
            return Err(ValidationError::Duplicate(n.clone()));
        }
    }
    for d in &sys.domains {
        if sys.ivar_index(&d.var).is_none() {
            return Err(ValidationError::Unhoused { name: d.var.clone() });
        }
    }
    for v in &sys.ivars {
        let mut doms = sys.domains.iter().filter(|d| &d.var == v);
        let d = doms.next().ok_or_else(|| ValidationError::MissingDomain(v.clone()))?;
        if doms.next().is_some() {
            return Err(ValidationError::Duplicate(format!("domain {v}")));
        }
        if !(d.lo.is_finite() && d.hi.is_finite() && d.lo < d.hi) {
            return Err(ValidationError::BadDomain { var: v.clone(), lo: d.lo, hi: d.hi });
        }
    }
    for d in &sys.dvars {
        for a in &d.args {
            if sys.ivar_index(a).is_none() {
                return Err(ValidationError::Unhoused { name: a.clone() });
            }
        }
    }
    for eq in sys.equations.iter().chain(&sys.bcs) {
        check_expr(sys, &eq.lhs)?;
        check_expr(sys, &eq.rhs)?;
    }
    for (i, bc) in sys.bcs.iter().enumerate() {
        check_bc(sys, i, bc)?;
    }
    Ok(())
}

/// Check a system against one network per dependent variable.
pub fn validate_system(sys: &PdeSystem, nets: &[MlpSpec]) -> Result<ValidationReport, ValidationError> {
    check_structure(sys)?;
    if nets.len() != sys.dvars.len() {
        return Err(ValidationError::NetCount { expected: sys.dvars.len(), got: nets.len() });
    }
    for (d, net) in sys.dvars.iter().zip(nets) {
        if net.input_dim() != d.args.len() {
            return Err(ValidationError::InputDim { dvar: d.name.clone(), net: net.input_dim(), args: d.args.len() });
        }
        if net.output_dim() != 1 {
            return Err(ValidationError::OutputDim { dvar: d.name.clone(), net: net.output_dim() });
        }
    }
    Ok(ValidationReport {
        interior_equations: sys.equations.len(),
        boundary_conditions: sys.bcs.len(),
        dependent_vars: sys.dvars.len(),
        dimension: sys.ivars.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_spec, SpecError};
    use crate::mlp::{Activation, MlpSpec};

    const POISSON: &str = "ivars x y\ndvars u(x,y)\ndomain x in [0, 1]\ndomain y in [0, 1]
eq Dxx(u(x,y)) + Dyy(u(x,y)) = -sin(pi*x)*sin(pi*y)
bc u(0,y) = 0\nbc u(1,y) = 0\nbc u(x,0) = 0\nbc u(x,1) = 0";

    #[test]
    fn poisson_ok() {
        let s = parse_spec(POISSON).unwrap();
        let net = MlpSpec::dense(2, &[16, 16], 1, Activation::Sigmoid);
        let r = validate_system(&s, &[net]).unwrap();
        assert_eq!((r.interior_equations, r.boundary_conditions), (1, 4));
    }

    #[test]
    fn input_dim_mismatch() {
        let s = parse_spec(POISSON).unwrap();
        let net = MlpSpec::dense(3, &[16], 1, Activation::Sigmoid);
        assert!(matches!(validate_system(&s, &[net]), Err(ValidationError::InputDim { .. })));
    }

    #[test]
    fn interior_pin_rejected() {
        let text = POISSON.replace("bc u(0,y) = 0", "bc u(0.5,y) = 0");
        assert!(matches!(
            parse_spec(&text),
            Err(SpecError::Invalid(ValidationError::PinNotEndpoint { .. }))
        ));
    }

    #[test]
    fn unpinned_bc_rejected() {
        let text = POISSON.replace("bc u(0,y) = 0", "bc u(x,y) = 0");
        assert!(matches!(parse_spec(&text), Err(SpecError::Invalid(ValidationError::Unpinned { .. }))));
    }

    #[test]
    fn programmatic_order_three_rejected() {
        let mut s = parse_spec(POISSON).unwrap();
        if let Expr::Binary { lhs, .. } = &mut s.equations[0].lhs {
            if let Expr::Derivative { order, .. } = lhs.as_mut() {
                *order = 3;
            }
        }
        let net = MlpSpec::dense(2, &[4], 1, Activation::Tanh);
        assert_eq!(validate_system(&s, &[net]), Err(ValidationError::Order { order: 3 }));
    }

    #[test]
    fn unhoused_name() {
        let mut s = parse_spec(POISSON).unwrap();
        s.equations[0].rhs = Expr::Ivar("z".into());
        let net = MlpSpec::dense(2, &[4], 1, Activation::Tanh);
        assert!(matches!(validate_system(&s, &[net]), Err(ValidationError::Unhoused { .. })));
    }
}
