//! Recursive-descent parser for expressions and equations.

use super::{Apply, Arg, BinOp, Declarations, Equation, Expr, Func, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub offset: usize,
}

pub(crate) fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s = &text[start..i];
            let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{s}`"),
            })?;
            if !v.is_finite() {
                return Err(ParseError::Syntax { offset: start, message: format!("number `{s}` overflows") });
            }
            out.push(Token { tok: Tok::Num(v), offset: start });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(text[start..i].to_string()), offset: start });
        } else if b"+-*/^(),;:=[]".contains(&c) {
            out.push(Token { tok: Tok::Sym(c as char), offset: i });
            i += 1;
        } else {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(ParseError::Syntax { offset: i, message: format!("unexpected character `{ch}`") });
        }
    }
    Ok(out)
}

pub(crate) struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    end: usize,
    decl: &'a Declarations,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(text: &str, decl: &'a Declarations) -> Result<Self, ParseError> {
        Ok(Parser { toks: lex(text)?, pos: 0, end: text.len(), decl })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { offset: self.offset(), message: message.into() })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.syntax(format!("expected `{c}`"))
        }
    }

    pub(crate) fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            self.syntax("unexpected trailing input")
        } else {
            Ok(())
        }
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::binary(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while self.eat('^') {
            // Allow `x^-1` without parentheses.
            let exp = if self.eat('-') { Expr::Neg(Box::new(self.primary()?)) } else { self.primary()? };
            base = Expr::binary(BinOp::Pow, base, exp);
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Sym('(')) {
                    self.call(name, offset)
                } else {
                    self.name(name, offset)
                }
            }
            Some(_) => self.syntax("expected an expression"),
            None => self.syntax("unexpected end of input"),
        }
    }

    fn name(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        if name == "pi" {
            Ok(Expr::Const(std::f64::consts::PI))
        } else if self.decl.is_ivar(&name) {
            Ok(Expr::Ivar(name))
        } else if self.decl.is_param(&name) {
            Ok(Expr::Param(name))
        } else if self.decl.dvar(&name).is_some() {
            Err(ParseError::Syntax { offset, message: format!("`{name}` must be applied to its arguments") })
        } else {
            Err(ParseError::Undeclared { offset, name })
        }
    }

    fn call(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        if self.decl.dvar(&name).is_some() {
            return Ok(Expr::Apply(self.application(name, offset)?));
        }
        self.expect('(')?;
        if let Some(func) = Func::from_name(&name) {
            let arg = self.expr()?;
            self.expect(')')?;
            return Ok(Expr::Func { func, arg: Box::new(arg) });
        }
        match name.as_str() {
            "max" | "min" => {
                let a = self.expr()?;
                self.expect(',')?;
                let b = self.expr()?;
                self.expect(')')?;
                let op = if name == "max" { BinOp::Max } else { BinOp::Min };
                Ok(Expr::binary(op, a, b))
            }
            "norm" => self.grad_norm(offset),
            "piecewise" => self.piecewise(),
            _ => match self.derivative_spec(&name) {
                Some((var, order)) => self.derivative(var, order, offset),
                None if name.starts_with('D') && name.len() > 1 => Err(ParseError::Unsupported {
                    offset,
                    message: format!("`{name}` is not a derivative of a declared variable"),
                }),
                None => Err(ParseError::Undeclared { offset, name }),
            },
        }
    }

    /// `Dx` -> (x, 1), `Dxx` -> (x, 2). Longer repetitions and mixed names
    /// are not derivatives.
    fn derivative_spec(&self, name: &str) -> Option<(String, u8)> {
        let rest = name.strip_prefix('D')?;
        let mut found = None;
        for v in &self.decl.ivars {
            if rest == v {
                found = Some((v.clone(), 1));
            } else if rest.len() == 2 * v.len() && rest.starts_with(v.as_str()) && rest.ends_with(v.as_str()) {
                // A name like `Dxx` could also be D applied to an ivar `xx`;
                // the exact single match above wins.
                if found.is_none() {
                    found = Some((v.clone(), 2));
                }
            }
        }
        found
    }

    fn derivative(&mut self, var: String, order: u8, offset: usize) -> Result<Expr, ParseError> {
        let inner_offset = self.offset();
        let operand = self.expr()?;
        self.expect(')')?;
        match operand {
            Expr::Apply(app) => Ok(Expr::Derivative { app, var, order }),
            Expr::Derivative { app, var: v2, order: o2 } if v2 == var => {
                let total = order + o2;
                if total > 2 {
                    Err(ParseError::Unsupported { offset, message: format!("derivative of order {total}") })
                } else {
                    Ok(Expr::Derivative { app, var, order: total })
                }
            }
            Expr::Derivative { .. } => {
                Err(ParseError::Unsupported { offset, message: "mixed partial derivative".into() })
            }
            _ => Err(ParseError::Unsupported {
                offset: inner_offset,
                message: "derivatives apply to dependent-variable applications only".into(),
            }),
        }
    }

    fn application(&mut self, name: String, offset: usize) -> Result<Apply, ParseError> {
        self.expect('(')?;
        let mut args = Vec::new();
        if !self.eat(')') {
            loop {
                let arg_offset = self.offset();
                let e = self.expr()?;
                let arg = match e {
                    Expr::Ivar(v) => Arg::Var(v),
                    other => match other.const_value() {
                        Some(v) if v.is_finite() => Arg::Pin(v),
                        _ => {
                            return Err(ParseError::Syntax {
                                offset: arg_offset,
                                message: "arguments must be independent variables or constants".into(),
                            })
                        }
                    },
                };
                args.push(arg);
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        let declared = self.decl.dvar(&name).map_or(0, |d| d.args.len());
        if declared != args.len() {
            return Err(ParseError::Syntax {
                offset,
                message: format!("`{name}` takes {declared} arguments, got {}", args.len()),
            });
        }
        Ok(Apply { dvar: name, args })
    }

    fn grad_norm(&mut self, offset: usize) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Ident(g)) if g == "grad" => self.pos += 1,
            _ => {
                return Err(ParseError::Unsupported { offset, message: "`norm` takes `grad(...)` only".into() })
            }
        }
        self.expect('(')?;
        let app = match self.peek().cloned() {
            Some(Tok::Ident(n)) if self.decl.dvar(&n).is_some() => {
                let at = self.offset();
                self.pos += 1;
                self.application(n, at)?
            }
            _ => return self.syntax("`grad` expects a dependent-variable application"),
        };
        let mut vars = Vec::new();
        while self.eat(',') {
            let at = self.offset();
            match self.peek().cloned() {
                Some(Tok::Ident(v)) if self.decl.is_ivar(&v) => {
                    self.pos += 1;
                    vars.push(v);
                }
                Some(Tok::Ident(v)) => return Err(ParseError::Undeclared { offset: at, name: v }),
                _ => return self.syntax("expected an independent variable"),
            }
        }
        self.expect(')')?;
        self.expect(')')?;
        if vars.is_empty() {
            vars = app
                .args
                .iter()
                .filter_map(|a| match a {
                    Arg::Var(v) => Some(v.clone()),
                    Arg::Pin(_) => None,
                })
                .collect();
        }
        Ok(Expr::GradNorm { app, vars })
    }

    fn piecewise(&mut self) -> Result<Expr, ParseError> {
        let selector = self.expr()?;
        self.expect(';')?;
        let mut branches = Vec::new();
        loop {
            if matches!(self.peek(), Some(Tok::Ident(n)) if n == "else") {
                self.pos += 1;
                self.expect(':')?;
                let otherwise = self.expr()?;
                self.expect(')')?;
                return Ok(Expr::Piecewise { selector: Box::new(selector), branches, otherwise: Box::new(otherwise) });
            }
            let at = self.offset();
            let bp = self.expr()?.const_value().filter(|v| v.is_finite());
            let Some(bp) = bp else {
                return Err(ParseError::Syntax { offset: at, message: "breakpoint must be a constant".into() });
            };
            if branches.last().is_some_and(|(prev, _): &(f64, Expr)| *prev >= bp) {
                return Err(ParseError::Syntax { offset: at, message: "breakpoints must increase".into() });
            }
            self.expect(':')?;
            let v = self.expr()?;
            self.expect(',')?;
            branches.push((bp, v));
        }
    }
}

/// Parse a single expression.
pub fn parse_expression(text: &str, decl: &Declarations) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text, decl)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Parse `lhs = rhs`.
pub fn parse_equation(text: &str, decl: &Declarations) -> Result<Equation, ParseError> {
    let mut p = Parser::new(text, decl)?;
    let lhs = p.expr()?;
    p.expect('=')?;
    let rhs = p.expr()?;
    p.finish()?;
    Ok(Equation { lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::DependentVar;

    fn decl() -> Declarations {
        Declarations {
            ivars: vec!["x".into(), "y".into()],
            dvars: vec![DependentVar { name: "u".into(), args: vec!["x".into(), "y".into()] }],
            params: vec!["k".into()],
        }
    }

    #[test]
    fn poisson_equation_has_two_second_derivatives() {
        let eq = parse_equation("Dxx(u(x,y)) + Dyy(u(x,y)) = -sin(pi*x)*sin(pi*y)", &decl()).unwrap();
        let mut orders = Vec::new();
        eq.lhs.walk(&mut |e| {
            if let Expr::Derivative { order, var, .. } = e {
                orders.push((var.clone(), *order));
            }
        });
        assert_eq!(orders, vec![("x".to_string(), 2), ("y".to_string(), 2)]);
    }

    #[test]
    fn boundary_pin() {
        let eq = parse_equation("u(0,y) = 0", &decl()).unwrap();
        assert_eq!(
            eq.lhs,
            Expr::Apply(Apply { dvar: "u".into(), args: vec![Arg::Pin(0.0), Arg::Var("y".into())] })
        );
        assert_eq!(eq.rhs, Expr::Const(0.0));
    }

    #[test]
    fn constant() {
        assert_eq!(parse_expression("0", &decl()).unwrap(), Expr::Const(0.0));
    }

    #[test]
    fn precedence() {
        let d = decl();
        // -x^2 is -(x^2); a-b-c is (a-b)-c; 2^3^2 is (2^3)^2.
        let e = parse_expression("-x^2", &d).unwrap();
        assert!(matches!(e, Expr::Neg(ref inner) if matches!(**inner, Expr::Binary { op: BinOp::Pow, .. })));
        assert_eq!(parse_expression("2^3^2", &d).unwrap().const_value(), Some(64.0));
        assert_eq!(parse_expression("1-2-3", &d).unwrap().const_value(), Some(-4.0));
        assert_eq!(parse_expression("8/2/2", &d).unwrap().const_value(), Some(2.0));
        assert_eq!(parse_expression("-2*3+1", &d).unwrap().const_value(), Some(-5.0));
    }

    #[test]
    fn errors_carry_offsets() {
        let d = decl();
        assert_eq!(
            parse_expression("x + q", &d),
            Err(ParseError::Undeclared { offset: 4, name: "q".into() })
        );
        assert!(matches!(parse_expression("x + * y", &d), Err(ParseError::Syntax { offset: 4, .. })));
        assert!(matches!(parse_expression("Dx(Dy(u(x,y)))", &d), Err(ParseError::Unsupported { .. })));
        assert!(matches!(parse_expression("Dx(Dxx(u(x,y)))", &d), Err(ParseError::Unsupported { .. })));
        assert!(matches!(parse_expression("Dx(u(x,y)*2)", &d), Err(ParseError::Unsupported { .. })));
        assert!(matches!(parse_expression("(x", &d), Err(ParseError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn nested_same_axis_derivative_folds() {
        let e = parse_expression("Dx(Dx(u(x,y)))", &decl()).unwrap();
        assert!(matches!(e, Expr::Derivative { order: 2, .. }));
    }

    #[test]
    fn grad_norm_defaults_to_free_args() {
        let e = parse_expression("norm(grad(u(x,y)))", &decl()).unwrap();
        assert!(matches!(e, Expr::GradNorm { ref vars, .. } if vars == &["x".to_string(), "y".to_string()]));
    }

    #[test]
    fn piecewise_parses() {
        let e = parse_expression("piecewise(x; 0.4: 1, 0.6: 0, else: -1)", &decl()).unwrap();
        assert!(matches!(e, Expr::Piecewise { ref branches, .. } if branches.len() == 2));
    }
}
