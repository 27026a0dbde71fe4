use std::process::Command;

use iscd_cli::{
    parse_metadata, read_trajectory, run_doa, run_experiment, trajectory_rows, write_trajectory,
    CliError, ExperimentConfig, GridSpec,
};
use iscd_mpc::plants::{BenchmarkKind, EmagModelForm, GainTiming, Plant};

fn iscd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iscd"))
}

#[test]
fn trajectory_csv_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(BenchmarkKind::Kapitza);
    cfg.steps = Some(20);
    let out = run_experiment(&cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(&out.trajectory).unwrap();
    let parsed = read_trajectory(&text).unwrap();
    let expected = trajectory_rows(&out.record);
    assert_eq!(parsed.len(), 21);
    assert_eq!(parsed, expected);
    for (p, e) in parsed.iter().zip(&expected) {
        for (a, b) in p.x.iter().zip(&e.x) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    let last = parsed.last().unwrap();
    assert_eq!((last.rho, last.qp_status.as_str()), (0, ""));
    assert_eq!(write_trajectory(&parsed, 3, 1), text);
}

#[test]
fn malformed_csv_is_rejected() {
    assert!(matches!(
        read_trajectory(""),
        Err(CliError::Csv { line: 1, .. })
    ));
    let bad = "k,t,x1,u1,sigma_u1,rho_k,qp_status\n0,0,1.0,nan?,0,1,optimal\n";
    assert!(matches!(
        read_trajectory(bad),
        Err(CliError::Csv { line: 2, .. })
    ));
}

#[test]
fn metadata_lists_every_resolved_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(BenchmarkKind::TripleIntegrator);
    cfg.steps = Some(5);
    cfg.horizon = Some(40);
    cfg.tolerance = Some(1e-4);
    let out = run_experiment(&cfg, dir.path()).unwrap();
    let meta = parse_metadata(&std::fs::read_to_string(&out.metadata).unwrap());
    let get = |key: &str| {
        meta.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| panic!("metadata lacks {key}"))
    };
    for (key, value) in cfg.resolve().unwrap().entries() {
        assert_eq!(get(&key), value);
    }
    assert_eq!(get("horizon"), "40");
    assert_eq!(get("tolerance"), "0.0001");
    assert_eq!(get("steps"), "5");
    assert_eq!(get("aborted"), "false");
    for key in [
        "integrator",
        "integrator_rtol",
        "integrator_atol",
        "sigma_u",
        "rows",
    ] {
        get(key);
    }
}

#[test]
fn config_file_parses_and_overrides_apply() {
    let text = "\
# triple integrator with tighter levels
benchmark = triple_integrator
l = 60
rho = 10   # iteration cap
eps = 1e-4
q = 2, 2, 2
r = 0.5
levels = -0.5, 1.5
x0 = 1, 0, 0
gain_timing = newest
";
    let cfg = ExperimentConfig::parse(text, None).unwrap();
    assert_eq!(cfg.benchmark, BenchmarkKind::TripleIntegrator);
    let b = cfg.resolve().unwrap();
    let c = b.config();
    assert_eq!((c.horizon, c.max_iterations, c.tolerance), (60, 10, 1e-4));
    assert_eq!(c.weights.q()[(1, 1)], 2.0);
    assert_eq!(c.weights.q_terminal()[(2, 2)], 2.0);
    assert_eq!(c.weights.r()[(0, 0)], 0.5);
    match b.plant() {
        Plant::TripleIntegrator(p) => {
            assert_eq!((p.sat.lower(), p.sat.upper()), (-0.5, 1.5));
            assert_eq!(p.gain_timing, GainTiming::Newest);
        }
        other => panic!("wrong plant {other:?}"),
    }
    assert_eq!(b.x0()[0], 1.0);
}

#[test]
fn config_errors_name_the_offending_line() {
    let err = ExperimentConfig::parse("benchmark = kapitza\nhorizon: 3\n", None).unwrap_err();
    assert!(matches!(err, CliError::Config { line: 2, .. }));
    let err = ExperimentConfig::parse("benchmark = kapitza\nfoo = 1\n", None).unwrap_err();
    assert!(matches!(err, CliError::Config { line: 2, .. }));
    let err =
        ExperimentConfig::parse("benchmark = emag\n", Some(BenchmarkKind::Kapitza)).unwrap_err();
    assert!(matches!(err, CliError::Config { line: 1, .. }));
    assert!(ExperimentConfig::parse("l = 3\n", None).is_err());
}

#[test]
fn overrides_are_checked_against_dimensions() {
    let mut cfg = ExperimentConfig::new(BenchmarkKind::Kapitza);
    cfg.x0 = Some(vec![0.1, 0.0]);
    assert!(cfg.resolve().is_err());

    let mut cfg = ExperimentConfig::new(BenchmarkKind::Nonholonomic);
    cfg.levels = Some(vec![-1.0, 1.0]);
    assert!(cfg.resolve().is_err());
    cfg.levels = Some(vec![-1.0, 1.0, -2.0, 2.0]);
    assert!(cfg.resolve().is_ok());

    let mut cfg = ExperimentConfig::new(BenchmarkKind::Kapitza);
    cfg.model_form = Some(EmagModelForm::Exact);
    assert!(cfg.resolve().is_err());

    let mut cfg = ExperimentConfig::new(BenchmarkKind::Emag);
    cfg.horizon = Some(1);
    assert!(cfg.resolve().is_err());
}

#[test]
fn grid_spec_is_inclusive() {
    let g: GridSpec = "-10:1:10".parse().unwrap();
    let v = g.values();
    assert_eq!((v.len(), v[0], v[20]), (21, -10.0, 10.0));
    assert_eq!(
        "0:0.5:1".parse::<GridSpec>().unwrap().values(),
        vec![0.0, 0.5, 1.0]
    );
    for bad in ["1:0:2", "2:1:1", "a:1:2", "1:2"] {
        assert!(bad.parse::<GridSpec>().is_err(), "{bad}");
    }
}

#[test]
fn doa_at_origin_converges_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::new(BenchmarkKind::TripleIntegrator);
    let grid: GridSpec = "0:1:0".parse().unwrap();
    let result = run_doa(&cfg, &[50], &grid, dir.path()).unwrap();
    assert_eq!(result.converged_count(50), 1);
    let csv = std::fs::read_to_string(dir.path().join("doa_l50.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x1_0,x2_0,converged,criterion_value"));
    assert!(lines.next().unwrap().starts_with("0,0,true,"));
    let summary = std::fs::read_to_string(dir.path().join("doa_summary.csv")).unwrap();
    assert_eq!(summary, "l,converged,total\n50,1,1\n");
    assert!(dir.path().join("doa_metadata.txt").exists());
}

#[test]
fn unknown_benchmark_is_a_usage_error() {
    let status = iscd().args(["run", "pendulum"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = iscd().arg("--bogus").status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = iscd().arg("--help").output().unwrap().status;
    assert_eq!(status.code(), Some(0));
}

#[test]
fn emag_run_settles_at_equilibrium_current() {
    let dir = tempfile::tempdir().unwrap();
    let out = iscd()
        .args(["run", "emag", "--steps", "1000", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows =
        read_trajectory(&std::fs::read_to_string(dir.path().join("emag.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1001);
    let current = rows[999].sigma_u[0];
    assert!((current - 10f64.sqrt()).abs() < 1e-2, "current {current}");
}

#[test]
fn triple_integrator_run_respects_levels() {
    let dir = tempfile::tempdir().unwrap();
    let out = iscd()
        .args([
            "run",
            "triple_integrator",
            "--steps",
            "100",
            "--x0",
            "-2,0,0",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = read_trajectory(
        &std::fs::read_to_string(dir.path().join("triple_integrator.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(rows[0].x, vec![-2.0, 0.0, 0.0]);
    for r in &rows[..rows.len() - 1] {
        assert!(
            (-1.0..=2.0).contains(&r.sigma_u[0]),
            "step {}: {}",
            r.k,
            r.sigma_u[0]
        );
    }
}

#[test]
fn aborted_run_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("contact.cfg");
    std::fs::write(&cfg_path, "benchmark = emag\nrho = 1\nx0 = 0.9, 5.0\n").unwrap();
    let out = iscd()
        .args(["run", "emag", "--steps", "200", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let meta = std::fs::read_to_string(dir.path().join("emag_metadata.txt")).unwrap();
    assert!(meta.contains("aborted = step"));
}
