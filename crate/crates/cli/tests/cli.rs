use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use overlap_dr::datagen::make_dataset;
use overlap_dr::simharness::OUTPUT_FILES;
use overlap_dr::Scenario;

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.toml");

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_overlap-dr"));
    c.env_remove("DR_OVERLAP_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(out: &Path) -> Output {
    run(&["simulate", "--config", SMOKE, "--replicates", "6", "--n", "200", "--out", out.to_str().unwrap()])
}

#[test]
fn simulate_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in OUTPUT_FILES {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["master_seed"], 20240501);
    assert_eq!(manifest["config"]["n_replicates"], 6);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(simulate(a.path()).status.success());
    let o = run(&[
        "--threads",
        "2",
        "simulate",
        "--config",
        SMOKE,
        "--replicates",
        "6",
        "--n",
        "200",
        "--out",
        b.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in OUTPUT_FILES {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from_env");
    let o = bin()
        .args(["simulate", "--config", SMOKE, "--replicates", "2", "--n", "150"])
        .env("DR_OVERLAP_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("table1.csv").exists());
}

#[test]
fn malformed_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n_replicates = 5\nscenario_list = [\"prev40_d1\"]\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    let line = err.lines().find(|l| l.starts_with('{')).expect("json error line");
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["error"], "config");
    assert_eq!(v["field"], "line 2");
    assert!(v["message"].as_str().unwrap().contains("scenario_list"));

    std::fs::write(&cfg, "scenarios = [\"prev50_d2\"]\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"field\":\"scenarios\""));
}

fn write_sim_csv(path: &Path, scenario: &str, n: usize) {
    let sc = Scenario::named(scenario).unwrap();
    let ds = make_dataset(&sc, n, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    ds.save_csv(path).unwrap();
}

#[test]
fn analyze_writes_effects_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sim.csv");
    write_sim_csv(&data, "prev40_d1", 400);
    let out = dir.path().join("res");
    let o = run(&[
        "analyze",
        "--data",
        data.to_str().unwrap(),
        "--treatment",
        "z",
        "--outcome",
        "y_obs",
        "--covariates",
        "x1,x2,x3,x4,x5,x6",
        "--boot",
        "25",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let effects = std::fs::read_to_string(out.join("effects.csv")).unwrap();
    let mut lines = effects.lines();
    assert!(lines.next().unwrap().starts_with("estimator,method,trim,estimate,sd,ci_lower,ci_upper"));
    assert_eq!(lines.count(), 8);
    let hist = std::fs::read_to_string(out.join("ps_hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 51);
    let counted: usize = hist
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[3].parse::<usize>().unwrap() + f[4].parse::<usize>().unwrap()
        })
        .sum();
    assert_eq!(counted, 400);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn analyze_rejects_bad_treatment_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "t,y,a\n1,1.0,0.3\n0,2.0,0.1\n2,0.5,0.2\n").unwrap();
    let o = run(&[
        "analyze",
        "--data",
        data.to_str().unwrap(),
        "--treatment",
        "t",
        "--outcome",
        "y",
        "--covariates",
        "a",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"row\":3"), "{}", stderr(&o));
}

#[test]
fn phi_masses_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["phi", "--scenario", "prev40_d1", "--n", "20000", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("phi.csv")).unwrap();
    let total: f64 = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let tail_line = stdout(&o).lines().find(|l| l.starts_with("outside")).unwrap().to_string();
    let pct: f64 = tail_line.rsplit(' ').next().unwrap().trim_end_matches('%').parse().unwrap();
    assert!(pct < 1.0, "{tail_line}");

    let o = run(&["phi", "--scenario", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn alpha0(o: &Output) -> f64 {
    stdout(o).lines().find_map(|l| l.strip_prefix("alpha0 ")).unwrap().parse().unwrap()
}

#[test]
fn calibrate_hits_known_intercepts() {
    let o = run(&["calibrate", "--prevalence", "0.5", "--alpha", "0,0,0,0,0,0", "--draws", "1000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(alpha0(&o).abs() < 1e-5);

    let o = run(&["calibrate", "--prevalence", "0.4", "--d", "3", "--draws", "200000"]);
    assert!((alpha0(&o) - 0.37).abs() < 0.03, "{}", stdout(&o));

    let o = run(&["calibrate", "--prevalence", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}
