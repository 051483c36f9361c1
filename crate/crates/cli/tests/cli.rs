use std::path::{Path, PathBuf};
use std::process::Command;

use roughpam_cli::config::{default_config_text, parse, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roughpam"))
}

fn small_config() -> RunConfig {
    let mut c = parse(default_config_text()).unwrap();
    c.grid.domain_length = 8.0;
    c.grid.mode_cutoff = 32;
    c.grid.dt = 1e-3;
    c.model.horizon = 0.05;
    c.solver.trajectories = 24;
    c.solver.snapshot_every = 10;
    c.fk.dt_b = Some(1e-3);
    c.fk.samples = 400;
    c.lab.t_grid = vec![0.01, 0.02, 0.03, 0.04];
    c
}

fn write(dir: &Path, name: &str, c: &RunConfig) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, toml::to_string(c).unwrap()).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path) -> (i32, String, String) {
    let o = bin().args([cmd, "--config"]).arg(cfg).arg("--out").arg(out).output().unwrap();
    (
        o.status.code().unwrap(),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

#[test]
fn validate_accepts_constant_and_rejects_bad_configs() {
    let d = tempfile::tempdir().unwrap();
    let ok = write(d.path(), "ok.toml", &small_config());
    assert_eq!(run("validate", &ok, &d.path().join("o")).0, 0);

    let mut c = small_config();
    c.model.h = 0.2;
    let (code, _, err) = run("validate", &write(d.path(), "h.toml", &c), &d.path().join("o"));
    assert_eq!(code, 2);
    assert!(err.contains("model.h"), "{err}");

    let text = toml::to_string(&small_config()).unwrap().replace("samples = 400", "samples = -1");
    std::fs::write(d.path().join("p.toml"), text).unwrap();
    let (code, _, err) = run("validate", &d.path().join("p.toml"), &d.path().join("o"));
    assert_eq!(code, 2);
    assert!(err.contains("line"), "{err}");
}

#[test]
fn inadmissible_initial_condition_never_runs() {
    let d = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.model.u0 = roughpam::heat_solver::InitialConditionSpec::PowerSpectrum { amplitude: 1.0, decay: 1.0 };
    let cfg = write(d.path(), "c.toml", &c);
    let (code, _, err) = run("validate", &cfg, &d.path().join("o"));
    assert_eq!(code, 2);
    assert!(err.contains("chaos") && err.contains("diverges"), "{err}");
    let (code, _, _) = run("moments", &cfg, &d.path().join("m"));
    assert_eq!(code, 2);
    assert!(!d.path().join("m").join("moments.csv").exists());
}

#[test]
fn moments_replay_is_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", &small_config());
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(run("moments", &cfg, &a).0, 0);
    assert_eq!(run("moments", &cfg, &b).0, 0);
    for f in ["moments.csv", "moments.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("moments.csv")).unwrap();
    assert!(csv.starts_with("# fingerprint: "));
}

#[test]
fn first_moment_equals_heat_mean() {
    let d = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.model.u0 = roughpam::heat_solver::InitialConditionSpec::GaussianBump {
        center: 0.2,
        width: 0.5,
        amplitude: 1.0,
    };
    c.fk.n_list = vec![1];
    c.fk.samples = 20_000;
    let cfg = write(d.path(), "c.toml", &c);
    let out = d.path().join("o");
    assert_eq!(run("moments", &cfg, &out).0, 0);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("moments.json")).unwrap()).unwrap();
    let e = &v["report"]["results"][0]["extrapolated"];
    let (mean, se) = (e["mean"].as_f64().unwrap(), e["stderr"].as_f64().unwrap());
    let u0 = roughpam::heat_solver::InitialCondition::bump(1.0, 0.2, 0.5);
    let exact = u0.heat_flow(0.05, 0.0, 1.0).unwrap();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} ± {se} vs {exact}");
}

#[test]
fn tampered_store_is_an_integrity_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", &small_config());
    let out = d.path().join("o");
    assert_eq!(run("chaos", &cfg, &out).0, 0);
    let store = out.join("records.jsonl");
    let text = std::fs::read_to_string(&store).unwrap();
    let mut rec: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    rec["payload_hash"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&store, format!("{}\n", rec)).unwrap();
    let (code, _, err) = run("chaos", &cfg, &out);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn synthetic_lab_recovers_exponents() {
    let d = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.lab.synthetic = Some(0.4);
    let cfg = write(d.path(), "c.toml", &c);
    let out = d.path().join("o");
    let (code, stdout, err) = run("intermittency", &cfg, &out);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("pass"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("fits.json")).unwrap()).unwrap();
    let s = &v["report"]["scaling"];
    let h = 0.35;
    assert_eq!(s["target_n"].as_f64().unwrap(), 1.0 + 1.0 / h);
    assert_eq!(s["target_kappa"].as_f64().unwrap(), 1.0 - 1.0 / h);
    assert!((s["slope_n"].as_f64().unwrap() - (1.0 + 1.0 / h)).abs() < 1e-8);
    assert!(out.join("results.csv").exists());
}

#[test]
fn solve_writes_fingerprinted_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", &small_config());
    let out = d.path().join("o");
    let (code, _, err) = run("solve", &cfg, &out);
    assert_eq!(code, 0, "{err}");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let fp = summary.lines().next().unwrap().trim_start_matches("# fingerprint: ").to_string();
    let bin = std::fs::read(out.join("trajectory.bin")).unwrap();
    assert!(bin.starts_with(b"PAMTRAJ1"));
    assert!(bin.ends_with(fp.as_bytes()));
    let json = std::fs::read_to_string(out.join("solve.json")).unwrap();
    assert!(json.contains(&fp));
}

#[test]
fn selftest_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = bin().arg("selftest").arg("--out").arg(d.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
