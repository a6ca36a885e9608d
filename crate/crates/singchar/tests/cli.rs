use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_singchar"));
    c.env_remove("SINGCHAR_SEED");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const CHAR: &str = r#"{
  "schema_version": 1,
  "name": "short",
  "seed": 3,
  "model": {"fixture": "f3"},
  "phi": {"fixture": "f3"},
  "task": {"characteristic": {"method": "euler", "x0": [0.3], "t_end": 0.5, "h": 0.00390625}},
  "assert": [{"metric": "edi.residual", "max": 5e-3}]
}"#;

#[test]
fn fixtures_list() {
    let o = bin().args(["fixtures", "list"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let s = String::from_utf8(o.stdout).unwrap();
    for f in ["f1", "f2", "f3", "f4", "f5"] {
        assert!(s.lines().any(|l| l.starts_with(f)), "{f} missing from\n{s}");
    }
}

#[test]
fn verify_scenario_on_f2_is_green() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().arg("run").arg(scenario("f2-verify.json")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["results"]["all_passed"], true);
    assert!(run["horizon"]["t_max"].as_f64().unwrap() > 0.0);
    assert!(run["tolerances"]["eps_act"].is_number());
}

#[test]
fn malformed_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("broken.json", "{ not json"),
        ("typo.json", &CHAR.replace("\"t_end\"", "\"t_edn\"") as &str),
        ("version.json", &CHAR.replace("\"schema_version\": 1", "\"schema_version\": 9")),
        ("fixture.json", &CHAR.replace("\"fixture\": \"f3\"}", "\"fixture\": \"f7\"}")),
        ("negative.json", &CHAR.replace("\"t_end\": 0.5", "\"t_end\": -1")),
    ];
    for (name, text) in cases {
        let p = write(dir.path(), name, text);
        let o = bin().arg("run").arg(&p).arg("--out").arg(dir.path().join("out")).output().unwrap();
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = bin().arg("run").arg(dir.path().join("missing.json")).output().unwrap();
    assert_eq!(code(&o), 2);
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_seed_env_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.json", CHAR);
    let o = bin().env("SINGCHAR_SEED", "abc").arg("run").arg(&p).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn assertion_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.json", &CHAR.replace("\"max\": 5e-3", "\"min\": 1"));
    let o = bin().arg("run").arg(&p).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(code(&o), 1);
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("o/run.json")).unwrap()).unwrap();
    assert_eq!(run["status"], "failed");
}

#[test]
fn non_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"schema_version": 1, "name": "nc", "model": {"fixture": "f3"},
        "task": {"weak-kam": {"grid": [16], "h": 0.25, "tol": 1e-300, "max_iter": 1}}}"#;
    let p = write(dir.path(), "nc.json", text);
    let o = bin().arg("run").arg(&p).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.json", CHAR);
    let o = bin().env("SINGCHAR_SEED", "42").arg("run").arg(&p).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(code(&o), 0);
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("o/run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 42);
    assert_eq!(run["seed_source"], "env");
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sc = scenario("f3-transport.json");
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = bin().arg("run").arg(&sc).arg("--out").arg(out).args(["--threads", threads]).output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["run.json", "cloud.csv", "mass.csv", "plot.py"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}
