use pinn_core::bench::builtin_problem;
use pinn_core::report::write_csv;
use pinn_core::trainer::{train, RunConfig};

fn cfg(strategy: &str, schedule: &str) -> RunConfig {
    RunConfig { strategy: Some(strategy.parse().unwrap()), schedule: Some(schedule.parse().unwrap()), ..Default::default() }
}

#[test]
fn adam_cuts_poisson_loss_tenfold() {
    let p = builtin_problem("poisson2d").unwrap();
    let r = train(&p, &cfg("grid:0.1", "adam:0.05:200")).unwrap();
    let first = r.history.entries[0].loss;
    assert!(r.loss * 10.0 <= first, "{first} -> {}", r.loss);
    assert!(r.rel_l2().unwrap().is_finite());
}

#[test]
fn quadrature_history_carries_error_bounds() {
    let p = builtin_problem("poisson2d").unwrap();
    let r = train(&p, &cfg("quadrature", "adam:0.01:20")).unwrap();
    let n = r.history.term_labels.len();
    assert_eq!(r.history.entries.len(), 20);
    for (i, e) in r.history.entries.iter().enumerate() {
        // Iteration i records the loss before step i.
        assert_eq!(e.iter, i);
        assert_eq!(e.term_losses.len(), n);
        assert_eq!(e.weights, vec![1.0; n]);
        let b = e.error_bounds.as_ref().expect("quadrature bounds");
        assert!(b.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(e.loss.is_finite());
    }
    assert!(r.history.entries.windows(2).all(|w| w[0].wall_s <= w[1].wall_s));
}

fn csv_without_wall(text: &str) -> Vec<String> {
    text.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 1).map(|(_, c)| c).collect::<Vec<_>>().join(",")).collect()
}

#[test]
fn identical_seeds_give_identical_histories() {
    let p = builtin_problem("diffusion1d").unwrap();
    let c = RunConfig { init_seed: 3, sample_seed: 9, ..cfg("stochastic:64", "adam:0.01:30+lbfgs:10") };
    let runs: Vec<String> = (0..2)
        .map(|_| {
            let r = train(&p, &c).unwrap();
            let mut out = Vec::new();
            write_csv(&r.history, &mut out).unwrap();
            String::from_utf8(out).unwrap()
        })
        .collect();
    assert_eq!(csv_without_wall(&runs[0]), csv_without_wall(&runs[1]));
    let other = train(&p, &RunConfig { sample_seed: 10, ..c }).unwrap();
    let mut out = Vec::new();
    write_csv(&other.history, &mut out).unwrap();
    assert_ne!(csv_without_wall(&runs[0]), csv_without_wall(&String::from_utf8(out).unwrap()));
}
