//! Scenario runner behind the `singchar` binary.
//!
//! A run writes `run.json`, the CSVs of its task and a `plot.py` into the output directory.
//! Nothing time- or machine-dependent goes into the files, so reruns are byte-identical.

pub mod config;
mod plot;
pub mod suites;

use crate::action::ActionSolver;
use crate::characteristics::{RunMethod, edi_residual, energy_profile, gc_membership, integrate_euler, integrate_intrinsic, integrate_mollified};
use crate::error::{Error, Result};
use crate::geometry::{Grid, TorusPoint};
use crate::laxoleinik::{GridField, hj_residual, weak_kam_solve};
use crate::transport::{
    ParticleCloud, ce_residual, edi_aggregate, energy_averages, evolve_cloud, fourier_tests, mass_monotonicity,
};
use config::{CloudInit, PhiSpec, Scenario, Task};
use serde_json::{Value, json};
use std::path::{Path, PathBuf};

pub use config::{SCHEMA_VERSION, Suite};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ASSERTION: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NONCONVERGENCE: u8 = 3;

/// Environment variable that overrides the scenario seed.
pub const SEED_ENV: &str = "SINGCHAR_SEED";

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. } | Error::NotCauchy { .. } | Error::SpeedBoundExceeded { .. } => EXIT_NONCONVERGENCE,
        Error::Config(_) | Error::PreconditionFailed { .. } | Error::HorizonExceeded { .. } | Error::Io(_) => EXIT_CONFIG,
        Error::NotWeakKam { .. } | Error::HypothesisViolated { .. } | Error::InsufficientSamples { .. } => EXIT_ASSERTION,
    }
}

/// Parse `SINGCHAR_SEED` if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub run: Value,
    pub assertions_passed: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.assertions_passed { EXIT_OK } else { EXIT_ASSERTION }
    }
}

struct Artifacts(Vec<(String, Vec<u8>)>);

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.0.push((name.to_string(), bytes));
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = vec![];
    f(&mut buf)?;
    Ok(buf)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn run_characteristic(sc: &Scenario, t: &config::CharacteristicTask, solver: &ActionSolver, art: &mut Artifacts) -> Result<Value> {
    let model = &solver.model;
    let phi = sc.require_phi()?;
    let x0 = TorusPoint::from_slice(&t.x0);
    let run = match t.method {
        RunMethod::Euler => integrate_euler(model, &phi, &x0, t.t_end, t.h)?,
        RunMethod::Mollified => integrate_mollified(model, &phi, &x0, t.t_end, &t.mollified)?,
        RunMethod::Intrinsic => integrate_intrinsic(solver, &phi, &x0, t.t_end, &t.intrinsic)?,
    };
    art.add("characteristic.csv", csv_bytes(|b| run.write_csv(b))?);
    art.add("plot.py", plot::characteristic(model.dim()).into_bytes());
    let mut res = json!({
        "method": run.method,
        "samples": run.curve.len(),
        "step": run.step,
        "end": run.curve.points.last().map(|p| p.coords().to_vec()),
        "edi": edi_residual(model, &phi, &run),
        "energy": energy_profile(model, &phi, &run),
        "gc": gc_membership(model, &phi, &run),
        "cauchy_gaps": run.cauchy_gaps,
    });
    if t.propagation {
        let p = crate::singularity::propagation_report(model, &phi, &run)?;
        res["propagation"] = json!({
            "singular_fraction": p.singular_fraction,
            "cut_fraction": p.cut_fraction,
            "window": p.window,
            "violations": p.violations,
            "interval_in_every_window": p.interval_in_every_window,
            "sing_within_cut": p.sing_within_cut,
        });
    }
    Ok(res)
}

fn run_weak_kam(sc: &Scenario, t: &config::WeakKamTask, solver: &ActionSolver, art: &mut Artifacts) -> Result<Value> {
    let grid = Grid::new(&t.grid);
    let r = weak_kam_solve(solver, &grid, t.h, t.tol, t.max_iter, &t.lo)?;
    let (hj, hj_nodes) = hj_residual(&solver.model, &grid, &r.grads, r.c, crate::singularity::SINGULAR_TOL);
    art.add("u.csv", csv_bytes(|b| r.u.write_csv(b))?);
    art.add("plot.py", plot::weak_kam(grid.dim()).into_bytes());
    let mut res = json!({
        "c": r.c,
        "iterations": r.iterations,
        "residual": r.residual,
        "hj_residual": hj,
        "hj_nodes": hj_nodes,
    });
    if let Some(phi) = sc.phi()? {
        // distance to phi up to an additive constant
        let reference = GridField::from_fn(&grid, |x| phi.value(x));
        let (lo, hi) = r.u.values.iter().zip(&reference.values).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            (lo.min(a - b), hi.max(a - b))
        });
        res["phi_gap"] = json!(0.5 * (hi - lo));
    }
    Ok(res)
}

fn snapshot_times(t_end: f64, every: f64) -> Vec<f64> {
    let n = (t_end / every - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|k| (k as f64 * every).min(t_end)).collect()
}

fn run_transport(sc: &Scenario, t: &config::TransportTask, seed: u64, solver: &ActionSolver, art: &mut Artifacts) -> Result<Value> {
    let model = &solver.model;
    let phi = sc.require_phi()?;
    let d = model.dim();
    let cloud = match t.init {
        CloudInit::Uniform => ParticleCloud::uniform(d, t.particles),
        CloudInit::Random => ParticleCloud::random(d, t.particles, seed),
    }
    .map_err(|e| match e {
        Error::PreconditionFailed { detail, .. } => Error::Config(detail),
        e => e,
    })?;
    let evo = evolve_cloud(solver, &phi, &cloud, t.t_end, t.h, t.method)?;
    let times = snapshot_times(t.t_end, t.snapshot_every);
    let ce = ce_residual(model, &phi, &evo, &fourier_tests(d, t.tests));
    let edi = edi_aggregate(model, &phi, &evo)?;
    let mut masses = vec![];
    let mut mass_rows = vec![];
    for &delta in &t.deltas {
        let m = mass_monotonicity(model, &phi, &evo, t.region, &times, delta, t.resolution)?;
        for (tt, mass) in m.times.iter().zip(&m.masses) {
            mass_rows.push((delta, *tt, *mass));
        }
        masses.push(json!({
            "delta": m.delta,
            "nodes": m.nodes,
            "masses": m.masses,
            "violations": m.violations,
            "nondecreasing": m.nondecreasing,
        }));
    }
    let energy = energy_averages(model, &phi, &evo, &times);
    let resting = (0..evo.len()).filter(|&i| evo.rest_step(i).is_some()).count();
    art.add("cloud.csv", csv_bytes(|b| evo.write_snapshots_csv(b, &times))?);
    art.add(
        "mass.csv",
        csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            let io = |e: csv::Error| Error::Io(e.to_string());
            w.write_record(["delta", "t", "mass"]).map_err(io)?;
            for (dl, tt, m) in &mass_rows {
                w.write_record([dl.to_string(), tt.to_string(), m.to_string()]).map_err(io)?;
            }
            w.flush()?;
            Ok(())
        })?,
    );
    art.add("plot.py", plot::transport(d).into_bytes());
    Ok(json!({
        "particles": cloud.len(),
        "steps": evo.steps,
        "step": evo.step,
        "speed_bound": evo.speed_bound,
        "resting": resting,
        "snapshot_times": times,
        "ce": {
            "max_residual": ce.max_residual,
            "per_test": ce.per_test,
            "worst_t": ce.worst_t,
            "segment_residual": ce.segment_residual,
            "one_sided": ce.one_sided,
        },
        "edi": edi,
        "region": t.region,
        "mass": masses,
        "energy": energy,
    }))
}

fn run_verify(sc: &Scenario, t: &config::VerifyTask, seed: u64, solver: &ActionSolver, art: &mut Artifacts) -> Result<(Value, bool)> {
    let phi = sc.require_phi()?;
    let critical = match (&sc.model, &sc.phi) {
        (config::ModelSpec::Fixture(m), Some(PhiSpec::Fixture(p))) if m == p => crate::fixtures::by_name(p).and_then(|f| f.critical_value),
        _ => None,
    };
    let checks = suites::pair_checks(&sc.name, &solver.model, &phi, critical, t.suite, seed)?;
    let all = checks.iter().all(|c| c.passed);
    art.add("plot.py", plot::verify().into_bytes());
    Ok((json!({ "checks": checks, "all_passed": all }), all))
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |cur, key| match cur {
        Value::Object(m) => m.get(key),
        Value::Array(a) => key.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

fn evaluate_assertions(sc: &Scenario, results: &Value) -> Result<(Vec<Value>, bool)> {
    let mut out = vec![];
    let mut ok = true;
    for a in &sc.assert {
        let value = match lookup(results, &a.metric) {
            Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
            Some(Value::Bool(b)) => f64::from(u8::from(*b)),
            // non-finite numbers serialize as null
            Some(Value::Null) => f64::NAN,
            _ => return Err(Error::Config(format!("assertion metric {:?} is not a number in the results", a.metric))),
        };
        let passed = a.min.is_none_or(|m| value >= m) && a.max.is_none_or(|m| value <= m);
        ok &= passed;
        out.push(json!({ "metric": a.metric, "value": value, "min": a.min, "max": a.max, "passed": passed }));
    }
    Ok((out, ok))
}

fn tolerances() -> Value {
    json!({
        "eps_act": crate::semiconcave::EPS_ACT,
        "legendre_tol": crate::hamiltonian::LEGENDRE_TOL,
        "singular_tol": crate::singularity::SINGULAR_TOL,
        "calibration_tol": crate::singularity::CALIBRATION_TOL,
        "weak_kam_tol": crate::singularity::WEAK_KAM_TOL,
        "propagation_window": crate::singularity::PROPAGATION_WINDOW,
    })
}

/// Run a parsed scenario and write its artifacts into `out_dir`.
pub fn run(sc: &Scenario, out_dir: &Path, seed_override: Option<u64>) -> Result<Outcome> {
    sc.validate()?;
    let (seed, seed_source) = match seed_override {
        Some(s) => (s, "env"),
        None => (sc.seed, "config"),
    };
    let solver = ActionSolver::new(sc.model()?, sc.action.clone());
    let t_max = solver.t_max();
    let mut art = Artifacts(vec![]);
    let (results, task_ok) = match &sc.task {
        Task::Characteristic(t) => (run_characteristic(sc, t, &solver, &mut art)?, true),
        Task::WeakKam(t) => (run_weak_kam(sc, t, &solver, &mut art)?, true),
        Task::Transport(t) => (run_transport(sc, t, seed, &solver, &mut art)?, true),
        Task::Verify(t) => run_verify(sc, t, seed, &solver, &mut art)?,
    };
    let (assertions, asserts_ok) = evaluate_assertions(sc, &results)?;
    let passed = task_ok && asserts_ok;
    let mut names: Vec<String> = art.0.iter().map(|a| a.0.clone()).collect();
    names.push("run.json".into());
    let run = json!({
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "task": sc.task.kind(),
        "seed": seed,
        "seed_source": seed_source,
        "config": to_value(sc),
        "horizon": { "t_max": t_max, "lambda": solver.cfg.lambda },
        "tolerances": tolerances(),
        "results": results,
        "assertions": assertions,
        "artifacts": names,
        "status": if passed { "passed" } else { "failed" },
    });
    std::fs::create_dir_all(out_dir)?;
    for (name, bytes) in &art.0 {
        std::fs::write(out_dir.join(name), bytes)?;
    }
    let mut text = serde_json::to_string_pretty(&run).expect("run.json serializes");
    text.push('\n');
    std::fs::write(out_dir.join("run.json"), text)?;
    Ok(Outcome { out_dir: out_dir.to_path_buf(), run, assertions_passed: passed })
}

/// Read, parse and run a scenario file. `out_dir` defaults to `out/<name>`.
pub fn run_file(path: &Path, out_dir: Option<&Path>, seed_override: Option<u64>) -> Result<Outcome> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let sc = Scenario::parse(&text)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| Path::new("out").join(&sc.name));
    run(&sc, &dir, seed_override)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(task: &str, extra: &str) -> Scenario {
        let text = format!(
            r#"{{"schema_version": 1, "name": "t", "model": {{"fixture": "f3"}}, "phi": {{"fixture": "f3"}}, "task": {task}{extra}}}"#
        );
        Scenario::parse(&text).unwrap()
    }

    #[test]
    fn characteristic_run_is_reproducible() {
        let sc = scenario(
            r#"{"characteristic": {"method": "euler", "x0": [0.3], "t_end": 0.5, "h": 0.0078125}}"#,
            r#", "assert": [{"metric": "edi.residual", "max": 0.05}]"#,
        );
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let oa = run(&sc, a.path(), None).unwrap();
        run(&sc, b.path(), None).unwrap();
        assert!(oa.assertions_passed);
        for f in ["run.json", "characteristic.csv", "plot.py"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn failed_assertion_and_bad_metric() {
        let sc = scenario(
            r#"{"characteristic": {"method": "euler", "x0": [0.3], "t_end": 0.25, "h": 0.0078125}}"#,
            r#", "assert": [{"metric": "samples", "max": 2}]"#,
        );
        let dir = tempfile::tempdir().unwrap();
        let o = run(&sc, dir.path(), None).unwrap();
        assert_eq!(o.exit_code(), EXIT_ASSERTION);
        let sc = scenario(
            r#"{"characteristic": {"method": "euler", "x0": [0.3], "t_end": 0.25, "h": 0.0078125}}"#,
            r#", "assert": [{"metric": "no.such", "max": 2}]"#,
        );
        let e = run(&sc, dir.path(), None).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
    }

    #[test]
    fn seed_override_is_recorded() {
        let sc = scenario(r#"{"transport": {"particles": 16, "init": "random", "t_end": 0.25, "h": 0.0625, "method": "euler", "resolution": 64}}"#, "");
        let dir = tempfile::tempdir().unwrap();
        let o = run(&sc, dir.path(), Some(7)).unwrap();
        assert_eq!(o.run["seed"], 7);
        assert_eq!(o.run["seed_source"], "env");
        assert!(dir.path().join("mass.csv").exists());
    }

    #[test]
    fn non_convergence_maps_to_three() {
        let sc = scenario(r#"{"weak-kam": {"grid": [16], "h": 0.25, "tol": 1e-300, "max_iter": 1}}"#, "");
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(exit_code(&run(&sc, dir.path(), None).unwrap_err()), EXIT_NONCONVERGENCE);
    }
}
