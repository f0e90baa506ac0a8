use std::fs;
use std::path::Path;
use std::process::Command as Process;

use proptest::prelude::*;
use skewlab_cli::{replay, run, Command, RunConfig, RunManifest, Target, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL};

fn config(sets: &[&str]) -> RunConfig {
    let overrides: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    RunConfig::from_overrides(&overrides).unwrap()
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

const QUIET: [&str; 2] = ["system.f0.name=\"zero\"", "system.f.name=\"zero\""];

#[test]
fn zero_fields_leave_slow_variable_at_xi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&[QUIET[0], QUIET[1], "simulate.xi=[0.5, -0.25]", "simulate.horizon=0.2"]);
    run(&cfg, &Command::Simulate, dir.path()).unwrap();
    let (header, rows) = table(&dir.path().join("x.csv"));
    assert_eq!(header, ["time", "x1", "x2"]);
    assert!(rows.len() > 10);
    assert!(rows.iter().all(|r| r[1] == 0.5 && r[2] == -0.25));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&["simulate.horizon=0.3", "root_seed=99"]);
    let a = run(&cfg, &Command::Simulate, &dir.path().join("a")).unwrap();
    let b = run(&cfg, &Command::Simulate, &dir.path().join("b")).unwrap();
    for out in &a.manifest.outputs {
        let x = fs::read(dir.path().join("a").join(&out.path)).unwrap();
        let y = fs::read(dir.path().join("b").join(&out.path)).unwrap();
        assert_eq!(x, y, "{}", out.path);
    }
    assert_eq!(a.manifest.outputs, b.manifest.outputs);
}

#[test]
fn unit_eps_matches_unscaled_integration() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["system.eps=1.0", "simulate.horizon=2.0", "simulate.xi=[0.3, 0.1]"];
    let mut fast = base.to_vec();
    fast.push("simulate.formulation=\"fast_time\"");
    let mut slow = base.to_vec();
    slow.push("simulate.formulation=\"slow_time\"");
    run(&config(&fast), &Command::Simulate, &dir.path().join("fast")).unwrap();
    run(&config(&slow), &Command::Simulate, &dir.path().join("slow")).unwrap();
    for name in ["x.csv", "y.csv"] {
        let (_, a) = table(&dir.path().join("fast").join(name));
        let (_, b) = table(&dir.path().join("slow").join(name));
        assert_eq!(a.len(), b.len());
        let worst = a.iter().flatten().zip(b.iter().flatten()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{name}: {worst}");
    }
}

#[test]
fn zero_f0_gives_zero_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&[QUIET[0], "sigma.ensemble=40", "sigma.n=10.0", "sigma.t_run=500.0"]);
    run(&cfg, &Command::Estimate(Target::Sigma), dir.path()).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("sigma.csv")).unwrap();
    let mut methods = Vec::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        methods.push(rec[0].to_string());
        assert_eq!(rec[3].parse::<f64>().unwrap(), 0.0);
    }
    assert_eq!(methods.len(), 8);
}

#[test]
fn y_independent_coupling_gives_drift_table_equal_to_f() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&["system.f={ name = \"tanh_relaxation\", c = 0.8 }", "drift.points=4", "drift.horizon=5.0"]);
    run(&cfg, &Command::Estimate(Target::F), dir.path()).unwrap();
    let (header, rows) = table(&dir.path().join("drift.csv"));
    assert_eq!(header, ["x1", "x2", "F1", "F2", "se1", "se2"]);
    assert_eq!(rows.len(), 16);
    for r in rows {
        assert_eq!(r[2], -0.8 * r[0].tanh());
        assert_eq!(r[3], -0.8 * r[1].tanh());
    }
}

#[test]
fn ldp_table_is_monotone_in_a() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&[
        "system.d=1",
        "ldp.t_grid=[2.0, 8.0]",
        "ldp.n_windows=100",
        "ldp.f_horizon=500.0",
        "ldp.check_t=4.0",
        "ldp.check_ensemble=100",
        "ldp.xs=[[0.0], [1.5]]",
    ]);
    run(&cfg, &Command::Estimate(Target::Ldp), dir.path()).unwrap();
    let (_, rows) = table(&dir.path().join("ldp.csv"));
    assert_eq!(rows.len(), 2 * 2 * 7);
    for x in [0.0, 1.0] {
        for t in [2.0, 8.0] {
            let b: Vec<f64> = rows.iter().filter(|r| r[0] == x && r[2] == t).map(|r| r[3]).collect();
            assert_eq!(b.len(), 7);
            assert!(b.windows(2).all(|w| w[1] <= w[0]), "{b:?}");
            assert!(b.iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(*b.last().unwrap(), 0.0);
        }
    }
}

#[test]
fn degenerate_ladder_sits_at_the_noise_floor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&[
        QUIET[0],
        QUIET[1],
        "ladder.ensemble=60",
        "ladder.eps_ladder=[0.5, 0.25]",
        "ladder.sigma_source=\"given\"",
        "ladder.sigma=[[0.0, 0.0], [0.0, 0.0]]",
        "ladder.oracle_count=5",
    ]);
    let out = run(&cfg, &Command::Ladder { check: true }, dir.path()).unwrap();
    let (header, rows) = table(&dir.path().join("ladder.csv"));
    let stat = header.iter().position(|h| h == "statistic").unwrap();
    let value = header.iter().position(|h| h == "value").unwrap();
    let text = fs::read_to_string(dir.path().join("ladder.csv")).unwrap();
    let ks: Vec<&str> = text.lines().filter(|l| l.split(',').nth(stat) == Some("ks")).collect();
    assert!(!ks.is_empty());
    let floor = 1.36 * (2.0f64 / 60.0).sqrt();
    assert!(ks.iter().all(|l| l.split(',').nth(value).unwrap().parse::<f64>().unwrap() <= floor));
    assert!(!rows.is_empty());
    assert!(out.report.contains("noise_root"));
}

#[test]
fn failed_run_leaves_no_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let good = config(&["simulate.horizon=0.1"]);
    run(&good, &Command::Simulate, dir.path()).unwrap();
    assert!(dir.path().join("manifest.toml").exists());
    // a trap too small for the attractor aborts mid-run
    let bad = config(&["simulate.horizon=0.5", "system.fast_flow.trap_radius=20.0", "system.f0.sup=20.0"]);
    let err = run(&bad, &Command::Simulate, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_NUMERICAL);
    assert!(!dir.path().join("manifest.toml").exists());
    assert!(fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn replay_detects_tampered_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&["simulate.horizon=0.1"]);
    run(&cfg, &Command::Simulate, dir.path()).unwrap();
    let path = dir.path().join("manifest.toml");
    let (_, same) = replay(&path, &dir.path().join("r1")).unwrap();
    assert!(same.is_empty());
    let mut m = RunManifest::load(&path).unwrap();
    m.outputs[0].sha256 = "00".repeat(32);
    fs::write(&path, m.to_toml().unwrap()).unwrap();
    let (_, differ) = replay(&path, &dir.path().join("r2")).unwrap();
    assert_eq!(differ.len(), 1);
}

fn skewlab(args: &[&str], cwd: &Path) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_skewlab")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| skewlab(args, d).status.code().unwrap();

    assert_eq!(code(&["config"]), 0);
    assert_eq!(code(&["frobnicate"]), EXIT_CONFIG);
    assert_eq!(code(&["--set", "system.bogus=1", "simulate"]), EXIT_CONFIG);
    assert_eq!(code(&["--set", "system.f.name=\"nope\"", "simulate"]), EXIT_CONFIG);
    assert_eq!(code(&["--set", "system.eps=2.0", "simulate"]), EXIT_CONFIG);
    assert_eq!(
        code(&["--set", "simulate.horizon=0.5", "--set", "system.fast_flow.trap_radius=20.0", "--set", "system.f0.sup=20.0", "simulate"]),
        EXIT_NUMERICAL
    );

    let out = skewlab(&["--set", "simulate.horizon=0.1", "-o", "run", "simulate"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&["replay", "run/manifest.toml"]), 0);
    let manifest = d.join("run/manifest.toml");
    let mut m = RunManifest::load(&manifest).unwrap();
    m.outputs[0].sha256 = "ff".repeat(32);
    fs::write(&manifest, m.to_toml().unwrap()).unwrap();
    assert_eq!(code(&["replay", "run/manifest.toml", "-o", "again"]), EXIT_CHECK);
}

#[test]
fn config_file_and_printed_config_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&["system.eps=0.5", "ladder.ensemble=123"]);
    let file = dir.path().join("run.toml");
    fs::write(&file, cfg.to_toml().unwrap()).unwrap();
    let out = skewlab(&["-c", file.to_str().unwrap(), "config"], dir.path());
    assert!(out.status.success());
    let printed = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap(), &[]).unwrap();
    assert_eq!(printed, cfg);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_round_trips(
        seed in 0u64..=i64::MAX as u64,
        eps in 0.01f64..1.0,
        d in 1usize..3,
        n in 1.0f64..500.0,
        windows in 100usize..5000,
        mut a in prop::collection::vec(0.001f64..10.0, 1..6),
    ) {
        a.sort_by(f64::total_cmp);
        a.dedup();
        let mut cfg = RunConfig {
            root_seed: seed,
            ..RunConfig::default()
        };
        cfg.system.eps = eps;
        cfg.system.d = d;
        cfg.sigma.n = n;
        cfg.ldp.n_windows = windows;
        cfg.ldp.a_grid = a;
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, &[]).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }
}
