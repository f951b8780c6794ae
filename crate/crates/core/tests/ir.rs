use pinn_core::bench::{problem_spec, PROBLEM_IDS};
use pinn_core::ir::{parse_equation, parse_expression, parse_spec, Apply, Arg, BinOp, Expr, Func};
use proptest::prelude::*;

fn decl_system() -> pinn_core::ir::PdeSystem {
    parse_spec("params a\ndefault a = 2\nivars x y\ndvars u(x,y) v(x)\ndomain x in [0, 1]\ndomain y in [0, 1]\n").unwrap()
}

fn app_u() -> Apply {
    Apply { dvar: "u".into(), args: vec![Arg::Var("x".into()), Arg::Var("y".into())] }
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0u32..1000, 0u32..4).prop_map(|(m, e)| Expr::Const(m as f64 / 10f64.powi(e as i32))),
        Just(Expr::Ivar("x".into())),
        Just(Expr::Ivar("y".into())),
        Just(Expr::Param("a".into())),
        Just(Expr::Apply(app_u())),
        Just(Expr::Apply(Apply { dvar: "v".into(), args: vec![Arg::Var("x".into())] })),
        Just(Expr::Apply(Apply { dvar: "u".into(), args: vec![Arg::Pin(0.0), Arg::Var("y".into())] })),
        (prop_oneof![Just("x"), Just("y")], 1u8..=2)
            .prop_map(|(v, order)| Expr::Derivative { app: app_u(), var: v.into(), order }),
        Just(Expr::GradNorm { app: app_u(), vars: vec!["x".into(), "y".into()] }),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(5, 48, 3, |inner| {
        let ops = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div),
            Just(BinOp::Pow),
            Just(BinOp::Max),
            Just(BinOp::Min)
        ];
        let funcs = prop_oneof![
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Exp),
            Just(Func::Log),
            Just(Func::Sqrt),
            Just(Func::Sinh),
            Just(Func::Cosh),
            Just(Func::Tanh),
            Just(Func::Abs)
        ];
        prop_oneof![
            (ops, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (funcs, inner.clone()).prop_map(|(func, a)| Expr::Func { func, arg: Box::new(a) }),
            (inner.clone(), inner.clone(), inner).prop_map(|(s, a, b)| Expr::Piecewise {
                selector: Box::new(s),
                branches: vec![(0.25, a)],
                otherwise: Box::new(b),
            }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn printed_trees_parse_back(e in expr()) {
        let sys = decl_system();
        let printed = e.to_string();
        let back = parse_expression(&printed, &sys.declarations()).map_err(|err| TestCaseError::fail(format!("{printed}: {err}")))?;
        prop_assert_eq!(&back, &e, "{}", printed);
    }

    #[test]
    fn equations_round_trip(l in expr(), r in expr()) {
        let sys = decl_system();
        let text = format!("{l} = {r}");
        let eq = parse_equation(&text, &sys.declarations()).unwrap();
        prop_assert_eq!(eq.to_string(), text);
    }

    #[test]
    fn parser_never_panics(s in "[-+*/^(),;:. xyuva0-9DsincoexplgrtqhbmwdfeEnoabs]{0,40}") {
        let sys = decl_system();
        let _ = parse_expression(&s, &sys.declarations());
        let _ = parse_equation(&s, &sys.declarations());
    }

    #[test]
    fn spec_parser_never_panics(id in 0usize..PROBLEM_IDS.len(), cut in 0usize..400, junk in "[a-z0-9 =(),\\[\\]\n]{0,12}") {
        let text = problem_spec(PROBLEM_IDS[id]).unwrap();
        let mut mutated: String = text.chars().take(cut).collect();
        mutated.push_str(&junk);
        mutated.extend(text.chars().skip(cut));
        let _ = parse_spec(&mutated);
    }
}

#[test]
fn builtin_specs_print_and_reparse() {
    for id in PROBLEM_IDS {
        let sys = parse_spec(problem_spec(id).unwrap()).unwrap();
        for eq in sys.equations.iter().chain(&sys.bcs) {
            let again = parse_equation(&eq.to_string(), &sys.declarations()).unwrap();
            assert_eq!(&again, eq, "{id}: {eq}");
        }
    }
}
