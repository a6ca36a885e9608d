//! Three constructions of curves following the minimal energy field.

use super::band_selection;
use super::verify::edi_defects;
use crate::action::{ActionSolver, Curve};
use crate::error::{Error, Result};
use crate::geometry::{Covector, TorusPoint, Vector};
use crate::hamiltonian::HamiltonianModel;
use crate::laxoleinik::{Direction, LoConfig, point_lo};
use crate::semiconcave::{MinSmoothFn, mollify};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMethod {
    Mollified,
    Intrinsic,
    Euler,
}

/// Per-sample record: selection at the sample and the running EDI defect.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub p_sharp: Covector,
    pub h_value: f64,
    /// Sum of the EDI defects of all earlier segments.
    pub edi_partial: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharacteristicRun {
    pub curve: Curve,
    pub method: RunMethod,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Sample spacing; also the band width used for selections along the run.
    pub step: f64,
    /// Sup-distance between runs of consecutive schedule entries.
    pub cauchy_gaps: Vec<f64>,
    /// Intrinsic runs: `(t, y)` argmax points at the interval ends.
    pub argmax: Vec<(f64, Vector)>,
}

impl CharacteristicRun {
    pub fn new(model: &HamiltonianModel, phi: &MinSmoothFn, curve: Curve, method: RunMethod, step: f64) -> Self {
        let defects = edi_defects(model, phi, &curve, step);
        let mut partial = 0.0;
        let mut diagnostics = Vec::with_capacity(curve.len());
        for (k, (&t, x)) in curve.times.iter().zip(&curve.points).enumerate() {
            let s = band_selection(model, phi, x, step);
            diagnostics.push(StepDiagnostics { t, p_sharp: s.p_sharp, h_value: s.h_value, edi_partial: partial });
            if k < defects.len() {
                partial += defects[k];
            }
        }
        CharacteristicRun { curve, method, diagnostics, step, cauchy_gaps: vec![], argmax: vec![] }
    }

    /// CSV `t,x_0[,x_1],p_0[,p_1],h_value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.curve.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["t".to_string()];
        head.extend((0..d).map(|a| format!("x_{a}")));
        head.extend((0..d).map(|a| format!("p_{a}")));
        head.push("h_value".into());
        wr.write_record(&head).map_err(|e| Error::Io(e.to_string()))?;
        for (x, dg) in self.curve.points.iter().zip(&self.diagnostics) {
            let mut row = vec![dg.t.to_string()];
            row.extend(x.coords().iter().map(|c| c.to_string()));
            row.extend(dg.p_sharp.as_slice().iter().map(|c| c.to_string()));
            row.push(dg.h_value.to_string());
            wr.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !(t_end > 0.0) {
        return Err(Error::precondition("characteristic", "step and horizon must be positive"));
    }
    Ok((t_end / h - 1e-9).ceil().max(1.0) as usize)
}

/// Forward Euler on `x' = H_p(x, p#(x))`.
///
/// The selection is taken from the step-aware superdifferential of width `h`, so a point
/// within one step of a kink sees both sides and a kink that attracts from both sides holds it.
pub fn integrate_euler(model: &HamiltonianModel, phi: &MinSmoothFn, x0: &TorusPoint, t_end: f64, h: f64) -> Result<CharacteristicRun> {
    let n = step_count(t_end, h)?;
    let dt = t_end / n as f64;
    let mut x = x0.lift();
    let mut lifts = Vec::with_capacity(n + 1);
    let mut times = Vec::with_capacity(n + 1);
    lifts.push(x);
    times.push(0.0);
    for k in 1..=n {
        let s = band_selection(model, phi, &TorusPoint::new(x), dt);
        x += model.h_p(&x, &s.p_sharp) * dt;
        lifts.push(x);
        times.push(k as f64 * dt);
    }
    let curve = Curve::from_lifts(times, lifts, None)?;
    Ok(CharacteristicRun::new(model, phi, curve, RunMethod::Euler, dt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MollifiedConfig {
    pub k_schedule: Vec<f64>,
    /// Output sample spacing.
    pub h: f64,
    /// Largest accepted sup-gap between the last two schedule entries.
    pub tolerance: f64,
}

impl Default for MollifiedConfig {
    fn default() -> Self {
        MollifiedConfig { k_schedule: vec![1e2, 1e3], h: 1.0 / 1024.0, tolerance: 2e-2 }
    }
}

fn rk4_field(model: &HamiltonianModel, f: &MinSmoothFn, x: &Vector) -> Vector {
    let (_, g) = f.pieces()[0].value_grad(x);
    model.h_p(x, &g)
}

/// Classical characteristics of soft-min mollifications along `k_schedule`.
pub fn integrate_mollified(model: &HamiltonianModel, phi: &MinSmoothFn, x0: &TorusPoint, t_end: f64, cfg: &MollifiedConfig) -> Result<CharacteristicRun> {
    if cfg.k_schedule.is_empty() {
        return Err(Error::precondition("integrate_mollified", "empty schedule"));
    }
    let n = step_count(t_end, cfg.h)?;
    let dt = t_end / n as f64;
    let lip = phi.lipschitz_bound().unwrap_or(1.0);
    let c0 = phi.semiconcavity_constant().unwrap_or(1.0);
    let hpp = (0..=8)
        .map(|i| {
            let p = Vector::from_slice(&vec![lip * i as f64 / 8.0; phi.dim()]);
            model.h_pp(&x0.lift(), &p).sym_eigenvalues().into_iter().fold(0.0f64, f64::max)
        })
        .fold(0.0f64, f64::max);
    let mut runs: Vec<Curve> = vec![];
    let mut gaps = vec![];
    for &k in &cfg.k_schedule {
        let fk = mollify(phi, k);
        // soft-min curvature grows like k |grad difference|^2; keep RK4 inside its stability region
        let stiff = hpp * (c0 + k * lip * lip);
        let sub = ((dt * stiff / 1.5).ceil() as usize).max(1);
        let ds = dt / sub as f64;
        let mut x = x0.lift();
        let mut lifts = vec![x];
        let mut times = vec![0.0];
        for step in 1..=n {
            for _ in 0..sub {
                let k1 = rk4_field(model, &fk, &x);
                let k2 = rk4_field(model, &fk, &(x + k1 * (0.5 * ds)));
                let k3 = rk4_field(model, &fk, &(x + k2 * (0.5 * ds)));
                let k4 = rk4_field(model, &fk, &(x + k3 * ds));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ds / 6.0);
            }
            if !x.is_finite() {
                return Err(Error::nonconv("integrate_mollified", format!("non-finite state at k = {k}")));
            }
            lifts.push(x);
            times.push(step as f64 * dt);
        }
        let c = Curve::from_lifts(times, lifts, None)?;
        if let Some(prev) = runs.last() {
            gaps.push(prev.sup_distance(&c));
        }
        runs.push(c);
    }
    if let Some(&g) = gaps.last() {
        if g > cfg.tolerance {
            return Err(Error::NotCauchy { op: "integrate_mollified", gap: g, tol: cfg.tolerance });
        }
    }
    let curve = runs.pop().expect("non-empty schedule");
    let mut run = CharacteristicRun::new(model, phi, curve, RunMethod::Mollified, dt);
    run.cauchy_gaps = gaps;
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntrinsicConfig {
    /// Partition widths, decreasing.
    pub widths: Vec<f64>,
    /// Midpoint substeps per interval.
    pub substeps: usize,
    pub tolerance: f64,
    pub lo: LoConfig,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        IntrinsicConfig { widths: vec![1.0 / 128.0, 1.0 / 256.0], substeps: 4, tolerance: 2e-2, lo: LoConfig::default() }
    }
}

/// Curves driven by `x' = H_p(x, DT+_{tau - s} phi(x))` on a partition of width `w`, where
/// `tau` is the right end of the current interval.
pub fn integrate_intrinsic(solver: &ActionSolver, phi: &MinSmoothFn, x0: &TorusPoint, t_end: f64, cfg: &IntrinsicConfig) -> Result<CharacteristicRun> {
    if cfg.widths.is_empty() || cfg.substeps == 0 {
        return Err(Error::precondition("integrate_intrinsic", "empty width schedule"));
    }
    let horizon = solver.t_max();
    let model = &solver.model;
    let mut runs: Vec<(Curve, Vec<(f64, Vector)>, f64)> = vec![];
    let mut gaps = vec![];
    for &w in &cfg.widths {
        if !(w > 0.0) || w > horizon {
            return Err(Error::HorizonExceeded { op: "integrate_intrinsic", t: w, horizon });
        }
        let n = step_count(t_end, w)?;
        let wi = t_end / n as f64;
        let ds = wi / cfg.substeps as f64;
        let field = |x: &Vector, r: f64| -> Result<(Vector, Option<Vector>)> {
            let lo = point_lo(solver, phi, x, r, Direction::Pos, &cfg.lo)?;
            Ok((model.h_p(x, &lo.grads[0]), lo.optimizers.first().copied()))
        };
        let mut x = x0.lift();
        let mut lifts = vec![x];
        let mut times = vec![0.0];
        let mut argmax = vec![];
        for i in 0..n {
            let t0 = i as f64 * wi;
            for j in 0..cfg.substeps {
                // time left until the interval end; never zero at an evaluation
                let r = wi - j as f64 * ds;
                let (v1, y) = field(&x, r)?;
                if j == 0 {
                    if let Some(y) = y {
                        argmax.push((t0 + wi, y));
                    }
                }
                let xm = x + v1 * (0.5 * ds);
                let (v2, _) = field(&xm, r - 0.5 * ds)?;
                x += v2 * ds;
                lifts.push(x);
                times.push(t0 + (j + 1) as f64 * ds);
            }
        }
        let c = Curve::from_lifts(times, lifts, None)?;
        if let Some(prev) = runs.last() {
            gaps.push(prev.0.sup_distance(&c));
        }
        runs.push((c, argmax, ds));
    }
    if let Some(&g) = gaps.last() {
        if g > cfg.tolerance {
            return Err(Error::NotCauchy { op: "integrate_intrinsic", gap: g, tol: cfg.tolerance });
        }
    }
    let (curve, argmax, ds) = runs.pop().expect("non-empty schedule");
    let mut run = CharacteristicRun::new(model, phi, curve, RunMethod::Intrinsic, ds);
    run.cauchy_gaps = gaps;
    run.argmax = argmax;
    Ok(run)
}
