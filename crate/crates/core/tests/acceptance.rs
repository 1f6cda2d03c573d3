//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod common;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{central_difference, relative_error};
use zog::attack::{AttackConfig, AttackOutcome, FailureReason, BALL_SLACK};
use zog::diagnostics::{bias_sweep, estimator_diagnostics, rademacher_expectation};
use zog::harness::{desk_benchmark, run_experiment_detailed, CellOutcome, ExperimentReport, ExperimentSpec};
use zog::mlp::{gen_model, MlpModel};
use zog::oracle::{argmax, Classifier, LocalOracle, Oracle};
use zog::remote::{OracleServer, RemoteOracle};
use zog::synthetic::{SyntheticObjective, SyntheticOracle};
use zog::{query_cost, run_attack, DirectionKind, EstimatorConfig, Method, SeededRng, Sidedness};

const SEED: u64 = 2024;

type Verdict = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let verdict = f();
        let elapsed = start.elapsed();
        let verdict = match verdict {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail} ({elapsed:.2?})"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL {name}: {detail} ({elapsed:.2?})");
            }
        }
    }
}

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn exhaustive_unbiasedness() -> Verdict {
    let mut worst: f64 = 0.0;
    for d in 1..=10 {
        let (objective, x) = SyntheticObjective::preset("linear", d, SEED + d as u64).unwrap();
        let g = objective.analytic_gradient(&x);
        let oracle = SyntheticOracle::new(objective, u64::MAX).unwrap();
        let cfg = EstimatorConfig::new(DirectionKind::Rademacher, Sidedness::TwoSided);
        let mean = rademacher_expectation(&oracle, &x, &cfg).map_err(|e| e.to_string())?;
        worst = mean.iter().zip(&g).map(|(m, g)| (m - g).abs()).fold(worst, f64::max);
    }
    ensure(worst < 1e-10, format!("d = 1..10, worst componentwise error {worst:.3e} (< 1e-10)"))
}

fn bias_order() -> Verdict {
    let (objective, x) = SyntheticObjective::preset("cubic", 6, SEED).unwrap();
    let c = match &objective {
        SyntheticObjective::Cubic { c } => c.clone(),
        _ => unreachable!(),
    };
    let oracle = SyntheticOracle::new(objective, u64::MAX).unwrap();
    let deltas = [1e-1, 1e-2, 1e-3];
    let slope = |sidedness| -> Result<f64, String> {
        let cfg = EstimatorConfig::new(DirectionKind::Rademacher, sidedness);
        let sweep = bias_sweep(&oracle, &x, &cfg, &deltas, 1, SEED).map_err(|e| e.to_string())?;
        if !sweep.exhaustive {
            return Err("sweep did not enumerate every sign vector".into());
        }
        sweep.slope.ok_or_else(|| "no slope".to_string())
    };
    let (two, one) = (slope(Sidedness::TwoSided)?, slope(Sidedness::OneSided)?);

    let truth = oracle.analytic_gradient(&x);
    let mut worst_rel: f64 = 0.0;
    for &delta in &deltas {
        let cfg = EstimatorConfig::new(DirectionKind::Rademacher, Sidedness::TwoSided).with_delta(delta);
        let mean = rademacher_expectation(&oracle, &x, &cfg).map_err(|e| e.to_string())?;
        for j in 0..c.len() {
            let expected = delta * delta * c[j];
            worst_rel = worst_rel.max(((mean[j] - truth[j]) - expected).abs() / expected);
        }
    }
    ensure(
        (two - 2.0).abs() <= 0.1 && (one - 1.0).abs() <= 0.1 && worst_rel < 1e-6,
        format!(
            "slope two-sided {two:.4} (2 ± 0.1), one-sided {one:.4} (1 ± 0.1); \
             two-sided bias vs δ²c worst relative error {worst_rel:.3e} (< 1e-6)"
        ),
    )
}

/// Runs the full default grid on the bundled benchmark.
fn benchmark_grid() -> Result<(ExperimentReport, Vec<CellOutcome>, Arc<MlpModel>), String> {
    let (model, probes) = desk_benchmark();
    let methods = Method::reference_grid();
    let mut attack = AttackConfig::new(EstimatorConfig::for_method(methods[0]));
    attack.budget = 200_000;
    let spec = ExperimentSpec {
        model: Arc::new(model),
        probes,
        methods,
        deltas: vec![1e-2, 1e-3, 1e-4],
        attack,
        seed: SEED,
        workers: 0,
    };
    let (report, cells) = run_experiment_detailed(&spec).map_err(|e| e.to_string())?;
    Ok((report, cells, spec.model))
}

fn desk_table(report: &ExperimentReport) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for method in ["nes", "spsa", "rdsa"] {
        let rates: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.method == method && r.sidedness == 2)
            .map(|r| r.success_rate_pct)
            .collect();
        let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ok &= rates.len() == 3 && lo >= 95.0 && hi - lo <= 5.0;
        parts.push(format!("{method}2 {rates:?} spread {:.0}", hi - lo));
    }
    ensure(ok, format!("{} (each >= 95, spread <= 5)", parts.join("; ")))
}

fn one_vs_two_sided() -> Verdict {
    let (objective, x) = SyntheticObjective::preset("cubic", 6, SEED).unwrap();
    let oracle = SyntheticOracle::new(objective, u64::MAX).unwrap();
    let cosine = |sidedness| -> Result<f64, String> {
        let cfg = EstimatorConfig::new(DirectionKind::Rademacher, sidedness)
            .with_samples(64)
            .with_delta(1e-2);
        let d = estimator_diagnostics(&oracle, &x, &cfg, 200, &mut SeededRng::new(SEED)).map_err(|e| e.to_string())?;
        d.mean_cosine.ok_or_else(|| "zero gradient".to_string())
    };
    let (one, two) = (cosine(Sidedness::OneSided)?, cosine(Sidedness::TwoSided)?);
    ensure(one < two, format!("mean cosine spsa1 {one:.6} < spsa2 {two:.6}"))
}

struct AccountingRun {
    outcome: AttackOutcome,
    epsilon: f64,
    model: MlpModel,
    x0: Vec<f64>,
}

fn query_accounting(runs: &mut Vec<AccountingRun>) -> Verdict {
    let mut rng = SeededRng::new(SEED).split(&[5]);
    let mut counts = [0usize; 3];
    for run in 0..1000u64 {
        let d = rng.uniform(2.0, 13.0) as usize;
        let hidden = rng.uniform(2.0, 9.0) as usize;
        let classes = rng.uniform(2.0, 6.0) as usize;
        let (model, probes) = gen_model(&[d, hidden], classes, 1, SEED + run).unwrap();
        let kind = DirectionKind::ALL[rng.uniform(0.0, 3.0) as usize];
        let sidedness = if rng.uniform(0.0, 1.0) < 0.5 { Sidedness::OneSided } else { Sidedness::TwoSided };
        let estimator = EstimatorConfig::new(kind, sidedness)
            .with_samples(rng.uniform(1.0, 9.0) as usize)
            .with_delta([1e-2, 1e-3, 1e-4][rng.uniform(0.0, 3.0) as usize]);
        let epsilon = if rng.uniform(0.0, 1.0) < 0.05 { 0.0 } else { rng.uniform(0.01, 0.3) };
        let mut cfg = AttackConfig::new(estimator).with_epsilon(epsilon);
        cfg.budget = rng.uniform(1.0, 3000.0) as u64;
        cfg.max_iterations = rng.uniform(1.0, 200.0) as u64;
        let target = (rng.uniform(0.0, 1.0) < 0.3).then(|| rng.uniform(0.0, classes as f64) as usize);

        let oracle = LocalOracle::new(model.clone(), u64::MAX);
        let x0 = probes[0].x.clone();
        let before = oracle.ledger().used();
        let outcome = run_attack(&oracle, &x0, &cfg, &mut SeededRng::new(run), target)
            .map_err(|e| format!("run {run}: {e}"))?;
        let delta = oracle.ledger().used() - before;
        let selection = u64::from(target.is_none());
        let closed_form = match outcome.failure_reason {
            Some(FailureReason::Budget) => cfg.budget,
            _ if epsilon == 0.0 => selection + 1,
            _ => selection + outcome.iterations * (query_cost(&cfg.estimator) + 1),
        };
        if outcome.queries != delta || outcome.queries != closed_form || outcome.queries > cfg.budget {
            return Err(format!(
                "run {run}: queries {} ledger delta {delta} closed form {closed_form} budget {}",
                outcome.queries, cfg.budget
            ));
        }
        counts[match outcome.failure_reason {
            None => 0,
            Some(FailureReason::Budget) => 1,
            _ => 2,
        }] += 1;
        runs.push(AccountingRun { outcome, epsilon, model, x0 });
    }
    Ok(format!(
        "1000 runs ({} successes, {} budget stops, {} other failures): queries = ledger delta = closed form, none over budget",
        counts[0], counts[1], counts[2]
    ))
}

fn constraint_soundness(runs: &[AccountingRun], cells: &[CellOutcome], benchmark: &MlpModel) -> Verdict {
    let (_, probes) = desk_benchmark();
    let mut checked = 0;
    let mut check = |model: &MlpModel, x0: &[f64], o: &AttackOutcome, epsilon: f64| -> Result<(), String> {
        if !o.success {
            return Ok(());
        }
        checked += 1;
        let dist = o.x_adv.iter().zip(x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let pred = argmax(&model.forward(&o.x_adv));
        if dist > epsilon + BALL_SLACK || pred != o.target || o.x_adv.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("distance {dist:e}, prediction {pred}, target {}", o.target));
        }
        Ok(())
    };
    for cell in cells {
        check(benchmark, &probes[cell.probe].x, &cell.outcome, 0.05)?;
    }
    for run in runs {
        check(&run.model, &run.x0, &run.outcome, run.epsilon)?;
    }
    ensure(
        checked > 0,
        format!("{checked} successes across the grid and the randomized runs: within ε + 1e-12 (ε = 0.05 on the grid), fresh argmax = target"),
    )
}

fn transport_transparency() -> Verdict {
    let (model, probes) = desk_benchmark();
    let cfg = AttackConfig::new(EstimatorConfig::new(DirectionKind::Gaussian, Sidedness::TwoSided));
    let local = LocalOracle::new(model.clone(), cfg.budget);
    let expected = run_attack(&local, &probes[1].x, &cfg, &mut SeededRng::new(SEED), None).map_err(|e| e.to_string())?;
    let server = OracleServer::bind(model, "127.0.0.1:0", cfg.budget, 4)
        .and_then(OracleServer::spawn)
        .map_err(|e| e.to_string())?;
    let remote = RemoteOracle::connect(server.addr()).map_err(|e| e.to_string())?;
    let got = run_attack(&remote, &probes[1].x, &cfg, &mut SeededRng::new(SEED), None).map_err(|e| e.to_string())?;
    ensure(
        got == expected && server.ledger().used() == expected.queries,
        format!(
            "nes2 attack over loopback: success {}, {} queries, outcomes field-identical: {}",
            got.success,
            got.queries,
            got == expected
        ),
    )
}

fn gradient_self_check() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut rng = SeededRng::new(SEED).split(&[9]);
    for name in ["linear", "quadratic", "cubic", "softmax"] {
        let (objective, _) = SyntheticObjective::preset(name, 8, SEED).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let err = relative_error(&objective.analytic_gradient(&x), &central_difference(&objective, &x, 1e-6));
            worst = worst.max(err);
        }
    }
    ensure(worst < 1e-5, format!("4 objectives x 100 points, worst relative error {worst:.3e} (< 1e-5)"))
}

fn main() -> ExitCode {
    let mut suite = Suite { failures: 0 };
    let secs = Duration::from_secs;

    suite.check("exhaustive unbiasedness", secs(1), exhaustive_unbiasedness);
    suite.check("bias order", secs(10), bias_order);

    let grid_start = Instant::now();
    let grid = benchmark_grid();
    let grid_time = grid_start.elapsed();
    let (report, cells, model) = match grid {
        Ok(g) => g,
        Err(e) => {
            println!("FAIL desk benchmark grid: {e}");
            return ExitCode::FAILURE;
        }
    };
    suite.check("desk-scale table", secs(600), || {
        desk_table(&report).map(|d| format!("{d}; grid took {grid_time:.2?}"))
    });
    suite.check("one-sided below two-sided", secs(10), one_vs_two_sided);

    let mut runs = Vec::new();
    suite.check("query accounting", secs(60), || query_accounting(&mut runs));
    suite.check("constraint soundness", secs(60), || constraint_soundness(&runs, &cells, &model));
    suite.check("transport transparency", secs(60), transport_transparency);
    suite.check("determinism", secs(600), || {
        let again = benchmark_grid()?.0.to_csv();
        let first = report.to_csv();
        ensure(
            again == first,
            format!("two runs of the {}-row grid, CSV byte-identical: {}", report.rows.len(), again == first),
        )
    });
    suite.check("gradient self-check", secs(10), gradient_self_check);

    println!("{} criteria failed", suite.failures);
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
