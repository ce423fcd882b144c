use std::path::{Path, PathBuf};

use softrigid::scenario::{
    parse_config, read_csv_log, run_scenario, summary_path, write_report, MetricsSummary, ScenarioConfig, ScenarioKind,
};

fn bundled() -> Vec<(String, ScenarioConfig)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "scenario"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), parse_config(&p).unwrap()))
        .collect()
}

#[test]
fn every_bundled_scenario_builds() {
    let all = bundled();
    assert!(all.len() >= 10);
    for (name, cfg) in &all {
        let built = cfg.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(built.model.dof(), cfg.robot.dof(), "{name}");
        assert!(cfg.output_path.is_none(), "{name} writes to a fixed path");
    }
}

#[test]
fn short_runs_of_bundled_scenarios_stay_finite() {
    for (name, mut cfg) in bundled() {
        if matches!(cfg.kind, ScenarioKind::Identify | ScenarioKind::Certify) {
            continue;
        }
        cfg.duration = 200.0 * cfg.dt;
        let report = run_scenario(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(report.log.len(), 201, "{name}");
        for row in &report.log.rows {
            assert!(row.q.iter().chain(row.q_dot.iter()).chain(row.tau.iter()).all(|x| x.is_finite()), "{name}");
        }
    }
}

#[test]
fn identify_scenario_ranks_all_families() {
    let (_, cfg) = bundled().into_iter().find(|(n, _)| n == "identify.scenario").unwrap();
    let report = run_scenario(&cfg).unwrap();
    let fits = report.fits.unwrap();
    assert_eq!(fits.len(), 4);
    assert!(fits.windows(2).all(|w| w[0].r_squared >= w[1].r_squared));
    assert!(fits.iter().all(|f| f.n_samples == 90));
}

#[test]
fn certify_scenario_passes_and_nominal_gain_does_not() {
    let (_, cfg) = bundled().into_iter().find(|(n, _)| n == "certify.scenario").unwrap();
    let cert = run_scenario(&cfg).unwrap().certificate.unwrap();
    assert!(cert.verdict, "{:?}", cert.failure);

    let (_, mut finger) = bundled().into_iter().find(|(n, _)| n == "finger.scenario").unwrap();
    finger.kind = ScenarioKind::Certify;
    let cert = run_scenario(&finger).unwrap().certificate.unwrap();
    assert!(!cert.verdict);
    assert!(cert.failure.unwrap().contains("lambda_min"));
}

#[test]
fn report_files_read_back() {
    let (_, mut cfg) = bundled().into_iter().find(|(n, _)| n == "force.scenario").unwrap();
    cfg.duration = 0.5;
    let report = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("force.csv");
    write_report(&report, cfg.robot.dof(), cfg.robot.actuated.len(), &out).unwrap();
    let back = read_csv_log(&out).unwrap();
    assert_eq!(back.len(), report.log.len());
    for (a, b) in back.rows.iter().zip(&report.log.rows) {
        assert_eq!((a.t, &a.q, &a.q_dot, &a.tau), (b.t, &b.q, &b.q_dot, &b.tau));
        assert!(a.lyapunov.is_nan() && b.lyapunov.is_nan());
    }
    let summary: MetricsSummary = serde_json::from_str(&std::fs::read_to_string(summary_path(&out)).unwrap()).unwrap();
    assert_eq!(summary.steady_state_error.len(), cfg.robot.actuated.len());
    assert!(summary.force_error_pct.is_some());
}

#[test]
fn zero_dynamics_scenario_is_monotone() {
    let (_, mut cfg) = bundled().into_iter().find(|(n, _)| n == "zero_dynamics.scenario").unwrap();
    cfg.duration = 5.0;
    let report = run_scenario(&cfg).unwrap();
    assert_eq!(report.metrics.lyapunov_monotone, Some(true));
    let first = report.log.rows.first().unwrap();
    let last = report.log.last().unwrap();
    assert_eq!(first.q.rows(0, 2), last.q.rows(0, 2));
}
