use std::sync::Arc;

use zog::attack::AttackConfig;
use zog::harness::{
    desk_benchmark, read_report, run_experiment, run_experiment_detailed, write_report, ExperimentFile,
    ExperimentReport, ExperimentSpec, HarnessError, ReportFormat, CSV_COLUMNS,
};
use zog::mlp::{save_probes, Probe};
use zog::{EstimatorConfig, Method};

fn small_spec(probes: usize) -> ExperimentSpec {
    let (model, all) = desk_benchmark();
    let methods: Vec<Method> = ["spsa2", "spsa1", "rdsa2"].iter().map(|m| m.parse().unwrap()).collect();
    let mut attack = AttackConfig::new(EstimatorConfig::for_method(methods[0]).with_samples(10));
    attack.budget = 20_000;
    ExperimentSpec {
        model: Arc::new(model),
        probes: all.into_iter().take(probes).collect(),
        methods,
        deltas: vec![1e-2, 1e-4],
        attack,
        seed: 17,
        workers: 2,
    }
}

#[test]
fn rows_follow_the_grid_in_order() {
    let report = run_experiment(&small_spec(4)).unwrap();
    let keys: Vec<(String, u8, f64)> = report
        .rows
        .iter()
        .map(|r| (r.method.clone(), r.sidedness, r.delta))
        .collect();
    let expected = [
        ("spsa", 2, 1e-2),
        ("spsa", 2, 1e-4),
        ("spsa", 1, 1e-2),
        ("spsa", 1, 1e-4),
        ("rdsa", 2, 1e-2),
        ("rdsa", 2, 1e-4),
    ];
    assert_eq!(keys.len(), expected.len());
    for (got, want) in keys.iter().zip(expected) {
        assert_eq!((got.0.as_str(), got.1, got.2), want);
    }
    for row in &report.rows {
        assert_eq!(row.n_probes, 4);
        assert_eq!(row.n_samples, 10);
        assert_eq!(row.budget, 20_000);
        assert_eq!(row.seed, 17);
        assert_eq!(row.epsilon, 0.05);
        assert!((row.step_size - 0.005).abs() < 1e-15);
    }
}

#[test]
fn reruns_are_byte_identical_whatever_the_worker_count() {
    let spec = small_spec(6);
    let first = run_experiment(&spec).unwrap().to_csv();
    let second = run_experiment(&spec).unwrap().to_csv();
    let serial = run_experiment(&ExperimentSpec { workers: 1, ..spec }).unwrap().to_csv();
    assert_eq!(first, second);
    assert_eq!(first, serial);
}

#[test]
fn permuting_probes_changes_no_aggregate() {
    let spec = small_spec(6);
    let mut reversed = spec.clone();
    reversed.probes.reverse();
    reversed.probes.swap(0, 3);
    assert_eq!(run_experiment(&spec).unwrap(), run_experiment(&reversed).unwrap());
}

#[test]
fn any_cell_can_be_rerun_alone() {
    let spec = small_spec(5);
    let (_, cells) = run_experiment_detailed(&spec).unwrap();
    let cell = &cells[7];
    let alone = ExperimentSpec {
        probes: vec![spec.probes[cell.probe].clone()],
        methods: vec![cell.method],
        deltas: vec![cell.delta],
        ..spec.clone()
    };
    let (_, single) = run_experiment_detailed(&alone).unwrap();
    assert_eq!(single[0].outcome, cell.outcome);
    assert_eq!(single[0].seed, cell.seed);
}

#[test]
fn no_successes_means_no_success_median_and_a_capped_overall_median() {
    let mut spec = small_spec(3);
    spec.attack = spec.attack.with_epsilon(0.0);
    let report = run_experiment(&spec).unwrap();
    for row in &report.rows {
        assert_eq!(row.success_rate_pct, 0.0);
        assert_eq!(row.median_queries_succ, None);
        assert_eq!(row.median_queries_all, 20_000);
    }
    let csv = report.to_csv();
    let first_row = csv.lines().nth(1).unwrap();
    assert_eq!(first_row.split(',').nth(4), Some(""));
    assert_eq!(ExperimentReport::from_csv(&csv).unwrap(), report);
}

#[test]
fn reports_round_trip_through_files() {
    let report = run_experiment(&small_spec(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["r.csv", "r.json"] {
        let path = dir.path().join(name);
        let format = ReportFormat::from_path(&path);
        write_report(&report, format, &path).unwrap();
        assert_eq!(read_report(format, &path).unwrap(), report);
    }
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
}

#[test]
fn a_tampered_header_is_rejected() {
    let csv = run_experiment(&small_spec(2)).unwrap().to_csv();
    let tampered = csv.replacen("delta,", "step,", 1);
    assert!(ExperimentReport::from_csv(&tampered).is_err());
}

#[test]
fn load_failures_name_the_offending_file() {
    let dir = tempfile::tempdir().unwrap();
    let (model, probes) = desk_benchmark();
    let model_path = dir.path().join("m.zog");
    let probe_path = dir.path().join("p.csv");
    model.save(&model_path).unwrap();
    save_probes(&probes[..2], &probe_path).unwrap();

    let file = |model, probes| ExperimentFile {
        model,
        probes,
        methods: vec!["spsa2".into()],
        deltas: vec![1e-3],
        epsilon: 0.05,
        step_size: None,
        n: 10,
        budget: 1000,
        max_iterations: 10,
        seed: 0,
        workers: 1,
    };
    let missing = dir.path().join("nope.zog");
    match file(missing.clone(), probe_path.clone()).load() {
        Err(e @ HarnessError::Load { what: "model", .. }) => {
            assert!(e.to_string().contains(&missing.display().to_string()))
        }
        other => panic!("unexpected {other:?}"),
    }
    std::fs::write(dir.path().join("bad.csv"), "0.1,0.2,x\n").unwrap();
    match file(model_path.clone(), dir.path().join("bad.csv")).load() {
        Err(e @ HarnessError::Load { what: "probes", .. }) => assert!(e.to_string().contains("bad.csv")),
        other => panic!("unexpected {other:?}"),
    }

    let spec = file(model_path, probe_path).load().unwrap();
    assert_eq!(spec.probes.len(), 2);
    assert_eq!(spec.attack.budget, 1000);
    assert_eq!(spec.attack.estimator.n, 10);
}

#[test]
fn probes_of_the_wrong_width_are_rejected() {
    let mut spec = small_spec(2);
    spec.probes.push(Probe { x: vec![0.5; 3], label: 0 });
    assert!(matches!(run_experiment(&spec), Err(HarnessError::Invalid(_))));
}
