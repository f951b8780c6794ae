//! Line-oriented PDE spec files.
//!
//! ```text
//! # Poisson on the unit square
//! ivars x y
//! dvars u(x,y)
//! domain x in [0, 1]
//! domain y in [0, 1]
//! eq Dxx(u(x,y)) + Dyy(u(x,y)) = -sin(pi*x)*sin(pi*y)
//! bc u(0,y) = 0
//! ```

use super::parser::{lex, Tok};
use super::{Declarations, DependentVar, Domain, Param, PdeSystem, SpecError};

fn stmt_err(line: usize, message: impl Into<String>) -> SpecError {
    SpecError::Statement { line, message: message.into() }
}

fn names(rest: &str, line: usize) -> Result<Vec<String>, SpecError> {
    let toks = lex(rest).map_err(|source| SpecError::Parse { line, source })?;
    let mut out = Vec::new();
    for t in toks {
        match t.tok {
            Tok::Ident(n) => out.push(n),
            Tok::Sym(',') => {}
            _ => return Err(stmt_err(line, "expected a list of names")),
        }
    }
    Ok(out)
}

fn dvars(rest: &str, line: usize) -> Result<Vec<DependentVar>, SpecError> {
    let toks = lex(rest).map_err(|source| SpecError::Parse { line, source })?;
    let mut out = Vec::new();
    let mut it = toks.into_iter().peekable();
    while let Some(t) = it.next() {
        let name = match t.tok {
            Tok::Ident(n) => n,
            Tok::Sym(',') => continue,
            _ => return Err(stmt_err(line, "expected `name(args)`")),
        };
        if it.next().map(|t| t.tok) != Some(Tok::Sym('(')) {
            return Err(stmt_err(line, format!("`{name}` needs an argument list")));
        }
        let mut args = Vec::new();
        loop {
            match it.next().map(|t| t.tok) {
                Some(Tok::Ident(a)) => args.push(a),
                Some(Tok::Sym(',')) => {}
                Some(Tok::Sym(')')) => break,
                _ => return Err(stmt_err(line, format!("bad argument list for `{name}`"))),
            }
        }
        out.push(DependentVar { name, args });
    }
    Ok(out)
}

fn constant(text: &str, line: usize) -> Result<f64, SpecError> {
    let empty = Declarations::default();
    let e = super::parse_expression(text.trim(), &empty).map_err(|source| SpecError::Parse { line, source })?;
    e.const_value().filter(|v| v.is_finite()).ok_or_else(|| stmt_err(line, "expected a constant"))
}

/// Parse a spec file into a system. The result is structurally checked
/// (domains, argument order, boundary pins) but not against networks.
pub fn parse_spec(text: &str) -> Result<PdeSystem, SpecError> {
    let mut sys = PdeSystem {
        equations: Vec::new(),
        bcs: Vec::new(),
        ivars: Vec::new(),
        dvars: Vec::new(),
        domains: Vec::new(),
        params: Vec::new(),
    };
    // Declarations may follow equations, so equations are parsed afterwards.
    let mut pending = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (kw, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
        match kw {
            "ivars" => sys.ivars.extend(names(rest, line)?),
            "params" => {
                for n in names(rest, line)? {
                    sys.params.push(Param { name: n, default: 0.0 });
                }
            }
            "dvars" => sys.dvars.extend(dvars(rest, line)?),
            "domain" => {
                let (var, interval) = rest
                    .split_once(" in ")
                    .ok_or_else(|| stmt_err(line, "expected `domain <ivar> in [a, b]`"))?;
                let interval = interval.trim();
                let inner = interval
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| stmt_err(line, "interval must be written `[a, b]`"))?;
                let (a, b) = inner.split_once(',').ok_or_else(|| stmt_err(line, "interval needs two bounds"))?;
                sys.domains.push(Domain { var: var.trim().to_string(), lo: constant(a, line)?, hi: constant(b, line)? });
            }
            "default" => {
                let (name, value) = rest.split_once('=').ok_or_else(|| stmt_err(line, "expected `default p = v`"))?;
                let name = name.trim();
                let value = constant(value, line)?;
                let p = sys
                    .params
                    .iter_mut()
                    .find(|p| p.name == name)
                    .ok_or_else(|| stmt_err(line, format!("`{name}` is not a declared parameter")))?;
                p.default = value;
            }
            "eq" | "bc" => pending.push((line, kw == "bc", rest.to_string())),
            other => return Err(stmt_err(line, format!("unknown statement `{other}`"))),
        }
    }
    let decl = sys.declarations();
    for (line, is_bc, rest) in pending {
        let eq = super::parse_equation(&rest, &decl).map_err(|source| SpecError::Parse { line, source })?;
        if is_bc {
            sys.bcs.push(eq);
        } else {
            sys.equations.push(eq);
        }
    }
    super::validate::check_structure(&sys)?;
    Ok(sys)
}
