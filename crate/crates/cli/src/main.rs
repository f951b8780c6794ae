use clap::{Args, Parser, Subcommand};
use pinn_core::bench::{builtin_problem, BenchmarkProblem, PROBLEM_IDS, REFERENCE_RESOLUTION};
use pinn_core::mlp::Activation;
use pinn_core::optim::Schedule;
use pinn_core::reference::reference_solve;
use pinn_core::report::{render_svg, write_csv};
use pinn_core::reweight::WeightScheme;
use pinn_core::strategies::TrainingStrategy;
use pinn_core::trainer::{train_with, RunConfig, TrainResult};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pinn", version, about = "Train physics-informed networks on built-in or user PDE systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        strategy: Option<TrainingStrategy>,
        /// Optimizer schedule, e.g. adam:0.01:500+bfgs:200.
        #[arg(long)]
        opt: Option<Schedule>,
        #[arg(long)]
        weights: Option<WeightScheme>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Train several strategies (and optionally weightings) side by side.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated strategies.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<TrainingStrategy>,
        #[arg(long)]
        opt: Option<Schedule>,
        /// Comma-separated weight schemes; the default scheme when omitted.
        #[arg(long, value_delimiter = ',')]
        weights: Vec<WeightScheme>,
        /// Directory for one CSV per configuration.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Compute a finite-difference reference table.
    Reference {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = REFERENCE_RESOLUTION)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse, validate and lower a spec file without training.
    Check {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "16,16")]
        hidden: Vec<usize>,
    },
    /// List the built-in problems.
    List,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// key = value run-config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// User PDE spec file instead of a built-in problem.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Hidden layer widths for --spec networks.
    #[arg(long, value_delimiter = ',', default_value = "16,16")]
    hidden: Vec<usize>,
    #[arg(long, default_value = "sigmoid", value_parser = parse_activation)]
    activation: Activation,
    /// Network initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Iterations for schedule phases without an explicit count.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    eval_dx: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Override a physical parameter, name=value.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Suppress per-iteration progress on stderr.
    #[arg(long)]
    quiet: bool,
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    Activation::parse(s).ok_or_else(|| format!("unknown activation `{s}`"))
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let v = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

enum Failure {
    Usage(String),
    Run(String),
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                RunConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if self.problem.is_some() {
            c.problem = self.problem.clone();
        }
        if self.spec.is_some() {
            c.spec = self.spec.clone();
        }
        if let Some(s) = self.seed {
            c.init_seed = s;
        }
        if let Some(s) = self.sample_seed {
            c.sample_seed = s;
        }
        c.iters = self.iters.or(c.iters);
        c.eval_dx = self.eval_dx.or(c.eval_dx);
        c.log_every = self.log_every.map(|n| n.max(1)).or(c.log_every);
        c.params.extend(self.params.iter().cloned());
        Ok(c)
    }

    fn problem(&self, cfg: &RunConfig) -> Result<BenchmarkProblem, Failure> {
        match (&cfg.problem, &cfg.spec) {
            (_, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("spec");
                BenchmarkProblem::from_spec(id, &text, &self.hidden, self.activation).map_err(run_err)
            }
            (Some(id), None) => builtin_problem(id).map_err(|e| Failure::Usage(e.to_string())),
            (None, None) => Err(Failure::Usage("one of --problem or --spec is required".into())),
        }
    }
}

fn progress(quiet: bool, tag: String) -> impl FnMut(&pinn_core::trainer::HistoryEntry) {
    move |e| {
        if !quiet && e.iter % 100 == 0 {
            let err = e.rel_l2.map_or(String::new(), |r| format!(" rel_l2 {r:.3e}"));
            eprintln!("{tag}iter {:>6} loss {:.4e}{err}", e.iter, e.loss);
        }
    }
}

fn write_outputs(r: &TrainResult, out: Option<&Path>, plot: Option<&Path>) -> Result<(), Failure> {
    if let Some(p) = out {
        let f = fs::File::create(p).map_err(|e| run_err(format!("{}: {e}", p.display())))?;
        write_csv(&r.history, std::io::BufWriter::new(f)).map_err(run_err)?;
    }
    if let Some(p) = plot {
        let label = format!("{} {}", r.strategy, r.schedule);
        fs::write(p, render_svg(&[(&label, &r.history)])).map_err(|e| run_err(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn note_backend(s: &TrainingStrategy) {
    if matches!(s, TrainingStrategy::Quadrature { .. }) {
        eprintln!("note: quadrature uses the built-in adaptive h-cubature integrator");
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Bench { run, strategy, opt, weights, out, plot } => {
            let mut cfg = run.config()?;
            cfg.strategy = strategy.or(cfg.strategy);
            cfg.schedule = opt.or(cfg.schedule);
            cfg.weights = weights.or(cfg.weights);
            cfg.out = out.or(cfg.out);
            cfg.plot = plot.or(cfg.plot);
            let problem = run.problem(&cfg)?;
            let r = train_with(&problem, &cfg, &mut progress(run.quiet, String::new())).map_err(run_err)?;
            note_backend(&r.strategy);
            write_outputs(&r, cfg.out.as_deref(), cfg.plot.as_deref())?;
            println!("{}", r.summary());
            Ok(())
        }
        Command::Sweep { run, strategies, opt, weights, out_dir, plot } => {
            let mut base = run.config()?;
            base.schedule = opt.or(base.schedule);
            let problem = run.problem(&base)?;
            let weights: Vec<Option<WeightScheme>> =
                if weights.is_empty() { vec![base.weights.clone()] } else { weights.into_iter().map(Some).collect() };
            let mut configs = Vec::new();
            for s in &strategies {
                for w in &weights {
                    let mut c = base.clone();
                    c.strategy = Some(s.clone());
                    c.weights = w.clone();
                    configs.push(c);
                }
            }
            fs::create_dir_all(&out_dir).map_err(|e| run_err(format!("{}: {e}", out_dir.display())))?;
            let results: Vec<Result<TrainResult, String>> = std::thread::scope(|sc| {
                let handles: Vec<_> = configs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let problem = &problem;
                        let tag = format!("[{i}] ");
                        let quiet = run.quiet;
                        sc.spawn(move || train_with(problem, c, &mut progress(quiet, tag)).map_err(|e| e.to_string()))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("run panicked".into()))).collect()
            });
            let mut ok = Vec::new();
            let mut failed = 0;
            for (i, r) in results.into_iter().enumerate() {
                match r {
                    Ok(r) => {
                        let name = format!("{}_{}_{}_{}.csv", r.problem, i, slug(&r.strategy.to_string()), r.weights.short_name());
                        write_outputs(&r, Some(&out_dir.join(name)), None)?;
                        println!("{}", r.summary());
                        ok.push(r);
                    }
                    Err(e) => {
                        eprintln!("run {i} failed: {e}");
                        failed += 1;
                    }
                }
            }
            if ok.iter().any(|r| matches!(r.strategy, TrainingStrategy::Quadrature { .. })) {
                note_backend(&ok.iter().find(|r| matches!(r.strategy, TrainingStrategy::Quadrature { .. })).unwrap().strategy);
            }
            if let Some(p) = plot {
                let labels: Vec<String> = ok.iter().map(|r| format!("{} {}", r.strategy, r.weights)).collect();
                let runs: Vec<(&str, &_)> = labels.iter().map(|l| l.as_str()).zip(ok.iter().map(|r| &r.history)).collect();
                fs::write(&p, render_svg(&runs)).map_err(|e| run_err(format!("{}: {e}", p.display())))?;
            }
            if failed > 0 {
                return Err(Failure::Run(format!("{failed} of {} runs failed", failed + ok.len())));
            }
            Ok(())
        }
        Command::Reference { problem, resolution, out } => {
            let set = reference_solve(&problem, resolution).map_err(run_err)?;
            let csv = set.to_csv();
            match out {
                Some(p) => fs::write(&p, csv).map_err(|e| run_err(format!("{}: {e}", p.display())))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Check { spec, hidden } => {
            let text = fs::read_to_string(&spec).map_err(|e| Failure::Usage(format!("{}: {e}", spec.display())))?;
            let p = BenchmarkProblem::from_spec("spec", &text, &hidden, Activation::Sigmoid).map_err(run_err)?;
            let prog = p.lower().map_err(run_err)?;
            println!("{} dependent variables, {} parameters", p.system.dvars.len(), prog.param_count());
            for t in &prog.terms {
                println!("  {:?} {} over {} axes", t.kind, t.label, t.lower.len());
            }
            Ok(())
        }
        Command::List => {
            for id in PROBLEM_IDS {
                println!("{id}");
            }
            Ok(())
        }
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' }).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
