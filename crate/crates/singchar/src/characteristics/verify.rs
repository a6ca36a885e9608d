//! Checks on finished runs: energy dissipation identity, energy growth, inclusion in the
//! generalized characteristic field and stability of limits.

use super::selection::{SimplexObjective, minimize_on_simplex};
use super::{CharacteristicRun, band_selection, band_superdifferential, minimal_energy_selection_td};
use crate::action::Curve;
use crate::error::{Error, Result};
use crate::geometry::{TorusPoint, Vector};
use crate::hamiltonian::{HamiltonianModel, legendre_at};
use crate::semiconcave::{MinSmoothFn, TimeMinSmoothFn};
use serde::Serialize;

/// Per-segment defects `phi(x_{k+1}) - phi(x_k) - dt [L(m, v) + H(m, p#(m))]`, `m` the midpoint.
///
/// At the midpoint two selections are available: the exact one and the one from the band of
/// width `band`, which sees kinks within one step. A segment is scored with the one whose
/// velocity `H_p(m, p#)` it realizes more closely (exact on ties), so a curve resting next
/// to a kink and a curve arriving at it are both scored consistently.
pub fn edi_defects(model: &HamiltonianModel, phi: &MinSmoothFn, curve: &Curve, band: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(curve.len().saturating_sub(1));
    for k in 0..curve.len().saturating_sub(1) {
        let dt = curve.times[k + 1] - curve.times[k];
        let (a, b) = (curve.lifts[k], curve.lifts[k + 1]);
        let m = (a + b) * 0.5;
        let v = (b - a) * (1.0 / dt);
        let l = match legendre_at(model, &m, &v) {
            Ok(l) => l.l,
            Err(_) => f64::INFINITY,
        };
        let xm = TorusPoint::new(m);
        let exact = band_selection(model, phi, &xm, 0.0);
        let mut s = exact.clone();
        if band > 0.0 {
            let wide = band_selection(model, phi, &xm, band);
            if (model.h_p(&m, &wide.p_sharp) - v).norm() < (model.h_p(&m, &exact.p_sharp) - v).norm() {
                s = wide;
            }
        }
        let lhs = phi.value(&curve.points[k + 1]) - phi.value(&curve.points[k]);
        out.push(lhs - dt * (l + s.h_value));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdiReport {
    /// Largest `|sum of defects|` over sample windows, divided by the run length.
    pub residual: f64,
    /// Total defect per unit time; at most zero up to discretization for any curve.
    pub signed_total: f64,
    /// Largest partial sum per unit time.
    pub signed_max: f64,
    pub segments: usize,
}

fn report(defects: &[f64], duration: f64) -> EdiReport {
    let mut p = 0.0f64;
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for d in defects {
        p += d;
        hi = hi.max(p);
        lo = lo.min(p);
    }
    let t = if duration > 0.0 { duration } else { 1.0 };
    EdiReport { residual: (hi - lo) / t, signed_total: p / t, signed_max: hi / t, segments: defects.len() }
}

pub fn edi_residual(model: &HamiltonianModel, phi: &MinSmoothFn, run: &CharacteristicRun) -> EdiReport {
    edi_residual_curve(model, phi, &run.curve, run.step)
}

pub fn edi_residual_curve(model: &HamiltonianModel, phi: &MinSmoothFn, curve: &Curve, band: f64) -> EdiReport {
    let duration = curve.times.last().copied().unwrap_or(0.0) - curve.times.first().copied().unwrap_or(0.0);
    report(&edi_defects(model, phi, curve, band), duration)
}

/// Time-dependent identity `phi(t2, x2) - phi(t1, x1) = int L + q# + H(., p#)`.
pub fn edi_residual_td(model: &HamiltonianModel, phi: &TimeMinSmoothFn, curve: &Curve) -> EdiReport {
    let mut defects = vec![];
    for k in 0..curve.len().saturating_sub(1) {
        let (t0, t1) = (curve.times[k], curve.times[k + 1]);
        let dt = t1 - t0;
        let (a, b) = (curve.lifts[k], curve.lifts[k + 1]);
        let m = (a + b) * 0.5;
        let v = (b - a) * (1.0 / dt);
        let l = legendre_at(model, &m, &v).map(|l| l.l).unwrap_or(f64::INFINITY);
        let s = minimal_energy_selection_td(model, phi, 0.5 * (t0 + t1), &TorusPoint::new(m));
        let lhs = phi.value(t1, &curve.points[k + 1]) - phi.value(t0, &curve.points[k]);
        defects.push(lhs - dt * (l + s.q_sharp + model.h(&m, &s.p_sharp)));
    }
    let duration = curve.times.last().copied().unwrap_or(0.0) - curve.times[0];
    report(&defects, duration)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    /// Largest `(h(t2) - h(t1)) / (t2 - t1)` over sample pairs.
    pub max_rate: f64,
    pub lambda_hat: f64,
    /// `sup |(H_x, H_p)|` over the sampled momentum range.
    pub c: f64,
    /// Semiconcavity constant of `phi`.
    pub c0: f64,
    pub violation: bool,
}

/// Growth of `t -> H(gamma, p#(gamma))` against the bound `C^2 + C0 C^2`.
pub fn energy_profile(model: &HamiltonianModel, phi: &MinSmoothFn, run: &CharacteristicRun) -> EnergyReport {
    // the largest secant slope of a sampled path is attained on consecutive samples
    let mut max_rate = f64::NEG_INFINITY;
    for w in run.diagnostics.windows(2) {
        max_rate = max_rate.max((w[1].h_value - w[0].h_value) / (w[1].t - w[0].t));
    }
    if run.diagnostics.len() < 2 {
        max_rate = 0.0;
    }
    let lip = phi.lipschitz_bound().unwrap_or(1.0);
    let c0 = phi.semiconcavity_constant().unwrap_or(0.0);
    let d = phi.dim();
    let m = 32;
    let mut c = 0.0f64;
    for i in 0..m {
        for j in 0..(if d == 1 { 1 } else { m }) {
            let x = if d == 1 { Vector::new1(i as f64 / m as f64) } else { Vector::new2(i as f64 / m as f64, j as f64 / m as f64) };
            for a in 0..=8 {
                let th = std::f64::consts::TAU * a as f64 / 8.0;
                for r in [0.0, 0.5, 1.0] {
                    let p = if d == 1 {
                        Vector::new1(lip * r * if a % 2 == 0 { 1.0 } else { -1.0 })
                    } else {
                        Vector::new2(lip * r * th.cos(), lip * r * th.sin())
                    };
                    let hx = model.h_x(&x, &p);
                    let hp = model.h_p(&x, &p);
                    c = c.max((hx.norm_sq() + hp.norm_sq()).sqrt());
                }
            }
        }
    }
    let lambda_hat = c * c + c0 * c * c;
    EnergyReport { max_rate, lambda_hat, c, c0, violation: max_rate > lambda_hat + 0.1 }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GcReport {
    pub max_gap: f64,
    pub mean_gap: f64,
}

struct HullDistance {
    v: Vector,
}

impl SimplexObjective for HullDistance {
    fn dim(&self) -> usize {
        self.v.dim()
    }

    fn eval(&self, z: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        let mut val = 0.0;
        for i in 0..self.v.dim() {
            let r = z[i] - self.v[i];
            val += 0.5 * r * r;
            g[i] = r;
            h[i][i] = 1.0;
        }
        (val, g, h)
    }
}

/// Distance from `v` to the convex hull of `points`.
pub fn hull_distance(points: &[Vector], v: &Vector) -> f64 {
    let pts: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    let sol = minimize_on_simplex(&pts, &HullDistance { v: *v });
    (2.0 * sol.value).max(0.0).sqrt()
}

/// Distance of each forward-difference velocity to `co H_p(x, D+phi(x))`, with the
/// superdifferential taken over the run's band.
pub fn gc_membership(model: &HamiltonianModel, phi: &MinSmoothFn, run: &CharacteristicRun) -> GcReport {
    gc_membership_curve(model, phi, &run.curve, run.step)
}

pub fn gc_membership_curve(model: &HamiltonianModel, phi: &MinSmoothFn, curve: &Curve, band: f64) -> GcReport {
    let mut max_gap = 0.0f64;
    let mut sum = 0.0;
    let n = curve.len().saturating_sub(1);
    for k in 0..n {
        let dt = curve.times[k + 1] - curve.times[k];
        let v = (curve.lifts[k + 1] - curve.lifts[k]) * (1.0 / dt);
        let x = curve.lifts[k];
        let sd = band_superdifferential(model, phi, &curve.points[k], band);
        let hull: Vec<Vector> = sd.vertices.iter().map(|q| model.h_p(&x, q)).collect();
        let g = hull_distance(&hull, &v);
        max_gap = max_gap.max(g);
        sum += g;
    }
    GcReport { max_gap, mean_gap: if n > 0 { sum / n as f64 } else { 0.0 } }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityConfig {
    pub tol_h: f64,
    pub tol_phi: f64,
    pub tol_gamma: f64,
    pub tol_edi: f64,
    /// Fraction of samples excised before comparing selections.
    pub excise: f64,
    pub tol_selection: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { tol_h: 1e-2, tol_phi: 1e-2, tol_gamma: 2e-2, tol_edi: 5e-3, excise: 0.05, tol_selection: 5e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub h_gaps: Vec<f64>,
    pub phi_gaps: Vec<f64>,
    /// Sup distances between consecutive runs.
    pub gamma_gaps: Vec<f64>,
    pub limit_edi: EdiReport,
    /// Largest selection gap along the last run after excision.
    pub selection_gap: f64,
}

/// Check the hypotheses of the stability statement for a sequence `(H_k, phi_k, gamma_k)` and
/// the conclusion for the limit pair `(H, phi)` along the last run.
pub fn stability_harness(
    models: &[HamiltonianModel],
    phis: &[MinSmoothFn],
    runs: &[CharacteristicRun],
    limit_model: &HamiltonianModel,
    limit_phi: &MinSmoothFn,
    cfg: &StabilityConfig,
) -> Result<StabilityReport> {
    let n = runs.len();
    if n == 0 || models.len() != n || phis.len() != n {
        return Err(Error::HypothesisViolated { op: "stability_harness", detail: "sequences must be non-empty and of equal length".into() });
    }
    let d = limit_phi.dim();
    let m = 64;
    let samples: Vec<TorusPoint> = (0..m)
        .flat_map(|i| {
            (0..if d == 1 { 1 } else { m }).map(move |j| {
                if d == 1 {
                    TorusPoint::new1((i as f64 + 0.37) / m as f64)
                } else {
                    TorusPoint::new2((i as f64 + 0.37) / m as f64, (j as f64 + 0.61) / m as f64)
                }
            })
        })
        .collect();
    let lip = limit_phi.lipschitz_bound().unwrap_or(1.0);
    let moms: Vec<Vector> = (-4..=4).map(|k| Vector::from_slice(&vec![lip * k as f64 / 4.0; d])).collect();
    let mut h_gaps = vec![];
    let mut phi_gaps = vec![];
    for (hk, pk) in models.iter().zip(phis) {
        let mut gh = 0.0f64;
        let mut gp = 0.0f64;
        for x in &samples {
            let xl = x.lift();
            for p in &moms {
                gh = gh.max((hk.h(&xl, p) - limit_model.h(&xl, p)).abs());
            }
            gp = gp.max((pk.value(x) - limit_phi.value(x)).abs());
        }
        h_gaps.push(gh);
        phi_gaps.push(gp);
    }
    let gamma_gaps: Vec<f64> = runs.windows(2).map(|w| w[0].curve.sup_distance(&w[1].curve)).collect();
    let viol = |what: &str, v: f64, tol: f64| {
        Error::HypothesisViolated { op: "stability_harness", detail: format!("{what} gap {v:.3e} exceeds {tol:.1e}") }
    };
    if h_gaps[n - 1] > cfg.tol_h {
        return Err(viol("Hamiltonian", h_gaps[n - 1], cfg.tol_h));
    }
    if phi_gaps[n - 1] > cfg.tol_phi {
        return Err(viol("function", phi_gaps[n - 1], cfg.tol_phi));
    }
    if let Some(&g) = gamma_gaps.last() {
        if g > cfg.tol_gamma {
            return Err(viol("curve", g, cfg.tol_gamma));
        }
    }
    let last = &runs[n - 1];
    let limit_edi = edi_residual(limit_model, limit_phi, last);
    if limit_edi.residual > cfg.tol_edi {
        return Err(viol("limit EDI", limit_edi.residual, cfg.tol_edi));
    }
    let mut sel_gaps: Vec<f64> = last
        .curve
        .points
        .iter()
        .map(|x| {
            let a = band_selection(&models[n - 1], &phis[n - 1], x, last.step);
            let b = band_selection(limit_model, limit_phi, x, last.step);
            (a.p_sharp - b.p_sharp).norm()
        })
        .collect();
    sel_gaps.sort_by(|a, b| a.total_cmp(b));
    let keep = ((1.0 - cfg.excise) * sel_gaps.len() as f64).floor() as usize;
    let selection_gap = if keep == 0 { 0.0 } else { sel_gaps[keep - 1] };
    if selection_gap > cfg.tol_selection {
        return Err(viol("selection", selection_gap, cfg.tol_selection));
    }
    Ok(StabilityReport { h_gaps, phi_gaps, gamma_gaps, limit_edi, selection_gap })
}
