//! `zog`: command-line front end for gradient estimation and black-box attacks.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use zog::attack::{run_attack, AttackConfig};
use zog::diagnostics::bias_sweep;
use zog::directions::{DirectionKind, DEFAULT_RECIPROCAL_CAP};
use zog::estimator::{EstimatorConfig, Method, Sidedness, DEFAULT_DELTA, DEFAULT_SAMPLES};
use zog::harness::{
    desk_benchmark, run_experiment, write_report, ExperimentFile, ExperimentSpec, ReportFormat,
};
use zog::mlp::{gen_model, load_probes, save_probes, MlpModel, Probe};
use zog::oracle::{LocalOracle, Oracle, DEFAULT_BUDGET};
use zog::remote::{OracleServer, RemoteOracle};
use zog::rng::SeededRng;
use zog::synthetic::{SyntheticObjective, SyntheticOracle};

#[derive(Debug, Parser)]
#[command(name = "zog", version, about = "Zeroth-order gradient estimation and black-box attacks")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    verbosity: String,
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, env = "ZOG_OUTPUT_DIR", default_value = ".")]
    output: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random classifier and a probe set labeled by it.
    GenModel(GenModelArgs),
    /// Serve a model as a metered oracle over TCP.
    Serve(ServeArgs),
    /// Run one targeted attack.
    Attack(AttackArgs),
    /// Run an experiment grid and write a report.
    Experiment(ExperimentArgs),
    /// Measure estimator bias and accuracy on an analytic objective.
    EstimateCheck(EstimateCheckArgs),
}

#[derive(Debug, Args)]
struct GenModelArgs {
    /// Input width followed by hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,32")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    probes: usize,
    #[arg(long, default_value = "model.zog")]
    out_model: PathBuf,
    #[arg(long, default_value = "probes.csv")]
    out_probes: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7070")]
    bind: String,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[arg(long, default_value_t = 64)]
    max_connections: usize,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// Model file; the bundled benchmark is used when neither this nor --connect is given.
    #[arg(long, conflicts_with = "connect")]
    model: Option<PathBuf>,
    /// Address of a `zog serve` instance.
    #[arg(long)]
    connect: Option<String>,
    /// Probe file; defaults to the bundled benchmark probes.
    #[arg(long)]
    probes: Option<PathBuf>,
    #[arg(long, conflicts_with = "x")]
    probe_index: Option<usize>,
    /// Clean input, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    /// Target class; the least likely class when omitted.
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, default_value = "spsa")]
    method: String,
    #[arg(long, default_value = "2")]
    sided: String,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    n: usize,
    #[arg(long, default_value_t = zog::attack::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Step size; defaults to epsilon / 10.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[arg(long, default_value_t = zog::attack::DEFAULT_MAX_ITERATIONS)]
    max_iterations: u64,
    #[arg(long, default_value_t = DEFAULT_RECIPROCAL_CAP)]
    reciprocal_cap: f64,
    /// Write the machine-readable record here.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// JSON experiment description; replaces the grid flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    probes: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "nes2,rdsa2,spsa2,spsa1")]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
    deltas: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    n: usize,
    #[arg(long, default_value_t = zog::attack::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    #[arg(long, default_value_t = zog::attack::DEFAULT_MAX_ITERATIONS)]
    max_iterations: u64,
    /// Concurrent attacks; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateCheckArgs {
    /// linear, quadratic, cubic or softmax.
    #[arg(long, default_value = "cubic")]
    objective: String,
    #[arg(long, default_value_t = 6)]
    dim: usize,
    #[arg(long, default_value = "spsa")]
    method: String,
    #[arg(long, default_value = "2")]
    sided: String,
    #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-3")]
    deltas: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.verbosity)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let result = match &cli.command {
        Command::GenModel(args) => cmd_gen_model(&cli, args),
        Command::Serve(args) => cmd_serve(&cli, args),
        Command::Attack(args) => cmd_attack(&cli, args),
        Command::Experiment(args) => cmd_experiment(&cli, args),
        Command::EstimateCheck(args) => cmd_estimate_check(&cli, args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn echo_config(command: &str, config: serde_json::Value) {
    println!("config {command} {config}");
}

fn resolve(cli: &Cli, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        cli.output.join(path)
    }
}

fn parse_method(method: &str, sided: &str) -> Result<Method> {
    let kind = method.parse::<DirectionKind>()?;
    let sidedness = sided.parse::<Sidedness>().map_err(|e| anyhow!(e))?;
    Ok(Method::new(kind, sidedness))
}

fn cmd_gen_model(cli: &Cli, args: &GenModelArgs) -> Result<ExitCode> {
    let out_model = resolve(cli, &args.out_model);
    let out_probes = resolve(cli, &args.out_probes);
    echo_config(
        "gen-model",
        json!({
            "dims": args.dims, "classes": args.classes, "probes": args.probes, "seed": cli.seed,
            "out_model": out_model, "out_probes": out_probes,
        }),
    );
    let (model, probes) = gen_model(&args.dims, args.classes, args.probes, cli.seed)?;
    model.save(&out_model)?;
    save_probes(&probes, &out_probes)?;
    // Reload so a bad write surfaces here rather than in a later run.
    MlpModel::load(&out_model)?;
    load_probes(&out_probes)?;
    println!(
        "wrote model {:?} ({}) and {} probes to {}",
        model.dims(),
        out_model.display(),
        probes.len(),
        out_probes.display()
    );
    Ok(ExitCode::SUCCESS)
}

static SHUTDOWN: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    SHUTDOWN.store(true, Ordering::SeqCst);
}

fn install_signal_handlers() {
    let handler = on_signal as extern "C" fn(libc::c_int) as libc::sighandler_t;
    // SAFETY: the handler only stores to an atomic, which is async-signal-safe.
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

fn cmd_serve(_cli: &Cli, args: &ServeArgs) -> Result<ExitCode> {
    echo_config(
        "serve",
        json!({
            "model": args.model, "bind": args.bind, "budget": args.budget,
            "max_connections": args.max_connections,
        }),
    );
    let model = MlpModel::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let server = OracleServer::bind(model, args.bind.as_str(), args.budget, args.max_connections)
        .with_context(|| format!("binding {}", args.bind))?;
    let addr: SocketAddr = server.local_addr()?;
    println!("listening on {addr}");
    install_signal_handlers();
    let flag = server.shutdown_flag();
    let ledger = server.ledger();
    let watcher = std::thread::spawn(move || {
        while !SHUTDOWN.load(Ordering::SeqCst) && !flag.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(50));
        }
        flag.store(true, Ordering::SeqCst);
    });
    server.serve()?;
    let _ = watcher.join();
    println!("served {} of {} queries", ledger.used(), ledger.budget());
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack(cli: &Cli, args: &AttackArgs) -> Result<ExitCode> {
    let method = parse_method(&args.method, &args.sided)?;
    let mut estimator = EstimatorConfig::for_method(method)
        .with_samples(args.n)
        .with_delta(args.delta);
    estimator.reciprocal_cap = args.reciprocal_cap;
    let mut cfg = AttackConfig::new(estimator).with_epsilon(args.epsilon);
    if let Some(step) = args.step {
        cfg.step_size = step;
    }
    cfg.budget = args.budget;
    cfg.max_iterations = args.max_iterations;

    let bundled = args.model.is_none() && args.connect.is_none();
    let benchmark = (bundled || args.probes.is_none()).then(desk_benchmark);
    let probes: Option<Vec<Probe>> = match (&args.probes, &benchmark) {
        (Some(path), _) => Some(
            load_probes(path).with_context(|| format!("loading probes {}", path.display()))?,
        ),
        (None, Some((_, p))) => Some(p.clone()),
        (None, None) => None,
    };
    let (x0, label) = match (&args.x, args.probe_index) {
        (Some(x), _) => (x.clone(), None),
        (None, index) => {
            let probes = probes.as_ref().ok_or_else(|| anyhow!("no probes available"))?;
            let i = index.unwrap_or(0);
            let p = probes
                .get(i)
                .ok_or_else(|| anyhow!("probe index {i} out of range ({} probes)", probes.len()))?;
            (p.x.clone(), Some(p.label))
        }
    };

    let probe_index = args.x.is_none().then(|| args.probe_index.unwrap_or(0));
    let source = match (&args.model, &args.connect) {
        (Some(path), _) => path.display().to_string(),
        (None, Some(addr)) => format!("tcp://{addr}"),
        (None, None) => "bundled-benchmark".to_string(),
    };
    echo_config(
        "attack",
        json!({
            "oracle": source, "probe_index": probe_index,
            "target": args.target, "method": method.to_string(), "n": cfg.estimator.n,
            "delta": cfg.estimator.delta, "reciprocal_cap": cfg.estimator.reciprocal_cap,
            "epsilon": cfg.epsilon, "step": cfg.step_size, "budget": cfg.budget,
            "max_iterations": cfg.max_iterations, "clip": cfg.clip, "seed": cli.seed,
        }),
    );

    let oracle: Box<dyn Oracle> = match (&args.model, &args.connect, benchmark) {
        (Some(path), _, _) => Box::new(LocalOracle::new(
            MlpModel::load(path).with_context(|| format!("loading model {}", path.display()))?,
            cfg.budget,
        )),
        (None, Some(addr), _) => Box::new(
            RemoteOracle::connect(addr.as_str()).with_context(|| format!("connecting to {addr}"))?,
        ),
        (None, None, Some((model, _))) => Box::new(LocalOracle::new(model, cfg.budget)),
        (None, None, None) => bail!("no oracle"),
    };

    let outcome = run_attack(oracle.as_ref(), &x0, &cfg, &mut SeededRng::new(cli.seed), args.target)?;
    println!(
        "{}: target {} after {} iterations and {} queries, linf {:.6}{}",
        if outcome.success { "success" } else { "failure" },
        outcome.target,
        outcome.iterations,
        outcome.queries,
        outcome.linf_dist,
        outcome
            .failure_reason
            .map(|r| format!(" ({})", serde_json::to_string(&r).unwrap().trim_matches('"')))
            .unwrap_or_default()
    );
    let record = json!({ "label": label, "method": method.to_string(), "config": cfg, "outcome": outcome });
    println!("record {record}");
    if let Some(path) = &args.record {
        let path = resolve(cli, path);
        std::fs::write(&path, serde_json::to_string_pretty(&record)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if outcome.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_experiment(cli: &Cli, args: &ExperimentArgs) -> Result<ExitCode> {
    let spec: ExperimentSpec = match &args.spec {
        Some(path) => ExperimentFile::read(path)?.load()?,
        None => {
            let (model, probes) = match (&args.model, &args.probes) {
                (Some(m), Some(p)) => {
                    let file = ExperimentFile {
                        model: m.clone(),
                        probes: p.clone(),
                        methods: args.methods.clone(),
                        deltas: args.deltas.clone(),
                        epsilon: args.epsilon,
                        step_size: args.step,
                        n: args.n,
                        budget: args.budget,
                        max_iterations: args.max_iterations,
                        seed: cli.seed,
                        workers: args.workers,
                    };
                    let spec = file.load()?;
                    ((*spec.model).clone(), spec.probes)
                }
                (None, None) => desk_benchmark(),
                _ => bail!("--model and --probes must be given together"),
            };
            let methods = args
                .methods
                .iter()
                .map(|m| m.parse::<Method>().map_err(|e| anyhow!(e)))
                .collect::<Result<Vec<_>>>()?;
            let first = *methods.first().ok_or_else(|| anyhow!("no methods given"))?;
            let mut attack = AttackConfig::new(EstimatorConfig::for_method(first).with_samples(args.n))
                .with_epsilon(args.epsilon);
            if let Some(step) = args.step {
                attack.step_size = step;
            }
            attack.budget = args.budget;
            attack.max_iterations = args.max_iterations;
            ExperimentSpec {
                model: Arc::new(model),
                probes,
                methods,
                deltas: args.deltas.clone(),
                attack,
                seed: cli.seed,
                workers: args.workers,
            }
        }
    };
    let out = resolve(cli, &args.out);
    let json_out = args.json.as_ref().map(|p| resolve(cli, p));
    echo_config(
        "experiment",
        json!({
            "model_dims": spec.model.dims(), "n_probes": spec.probes.len(),
            "methods": spec.methods.iter().map(Method::to_string).collect::<Vec<_>>(),
            "deltas": spec.deltas, "n": spec.attack.estimator.n,
            "reciprocal_cap": spec.attack.estimator.reciprocal_cap, "epsilon": spec.attack.epsilon,
            "step": spec.attack.step_size, "budget": spec.attack.budget,
            "max_iterations": spec.attack.max_iterations, "clip": spec.attack.clip,
            "seed": spec.seed, "workers": spec.workers, "out": out, "json": json_out,
        }),
    );
    let report = run_experiment(&spec)?;
    write_report(&report, ReportFormat::from_path(&out), &out)?;
    if let Some(path) = &json_out {
        write_report(&report, ReportFormat::Json, path)?;
    }
    println!("method  delta    success%  median(succ)  median(all)");
    for row in &report.rows {
        println!(
            "{:<7} {:<8} {:>8.2}  {:>12}  {:>11}",
            format!("{}{}", row.method, row.sidedness),
            row.delta,
            row.success_rate_pct,
            row.median_queries_succ.map_or("-".to_string(), |q| q.to_string()),
            row.median_queries_all
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_estimate_check(cli: &Cli, args: &EstimateCheckArgs) -> Result<ExitCode> {
    let method = parse_method(&args.method, &args.sided)?;
    let (objective, x) = SyntheticObjective::preset(&args.objective, args.dim, cli.seed)?;
    let cfg = EstimatorConfig::for_method(method).with_samples(args.n);
    echo_config(
        "estimate-check",
        json!({
            "objective": objective.name(), "dim": args.dim, "method": method.to_string(),
            "deltas": args.deltas, "n": cfg.n, "trials": args.trials,
            "reciprocal_cap": cfg.reciprocal_cap, "seed": cli.seed,
        }),
    );
    let oracle = SyntheticOracle::new(objective, u64::MAX)?;
    let sweep = bias_sweep(&oracle, &x, &cfg, &args.deltas, args.trials, cli.seed)?;
    println!(
        "bias columns over {}",
        if sweep.exhaustive { "all sign vectors" } else { "sampled directions" }
    );
    println!("delta     quotient_bias  expectation_bias  mean_cosine  l2_error_of_mean");
    let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
    for row in &sweep.rows {
        println!(
            "{:<9e} {:<14.6e} {:<17} {:<12} {:.6e}",
            row.delta,
            row.quotient_bias,
            fmt_opt(row.expectation_bias),
            row.diagnostics.mean_cosine.map_or("-".to_string(), |v| format!("{v:.6}")),
            row.diagnostics.l2_error_of_mean
        );
    }
    match sweep.slope {
        Some(slope) => println!("bias slope (log-log): {slope:.4}"),
        None => println!("bias slope (log-log): n/a (bias is zero)"),
    }
    Ok(ExitCode::SUCCESS)
}
