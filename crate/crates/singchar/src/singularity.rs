//! Singular points, cut points and the propagation of singularities along runs.
//!
//! A point is singular when its superdifferential is more than a point. It is a cut point
//! when the forward characteristic from it stops calibrating the weak KAM solution at once.

use crate::characteristics::{CharacteristicRun, minimal_energy_selection};
use crate::error::{Error, Result};
use crate::geometry::{Covector, TorusPoint, Vector};
use crate::hamiltonian::{ArcIntegrator, HamiltonianModel};
use crate::semiconcave::{MinSmoothFn, Sense, superdifferential};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::OnceLock;

pub const SINGULAR_TOL: f64 = 1e-7;
/// Calibration defect at which a forward characteristic counts as cut.
pub const CALIBRATION_TOL: f64 = 1e-5;
/// Largest spread of `H(x, q)` over reachable gradients accepted for a weak KAM solution.
pub const WEAK_KAM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularityReport {
    pub singular: bool,
    pub hull_diameter: f64,
    pub cut_time: f64,
    pub in_cut: bool,
}

/// Singular iff the hull of the active gradients has diameter above `tol`.
pub fn is_singular(phi: &MinSmoothFn, x: &TorusPoint, tol: f64) -> (bool, f64) {
    let d = superdifferential(phi, x).diameter();
    (d > tol, d)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakKamCheck {
    /// Midrange of the sampled energies.
    pub c: f64,
    /// Half the spread of the sampled energies.
    pub residual: f64,
    pub samples: usize,
}

/// Energies `H(x, q)` for every vertex `q` of `D+phi(x)` over a sample grid.
///
/// A minimum of smooth pieces is semiconcave, so it is a fixed point of the negative
/// semigroup (up to the drift `-ct`) exactly when these energies are all equal to `c`.
pub fn weak_kam_check(model: &HamiltonianModel, phi: &MinSmoothFn, samples: usize) -> WeakKamCheck {
    let d = phi.dim();
    let per = if d == 1 { samples.max(1) } else { (samples as f64).sqrt().ceil().max(1.0) as usize };
    let pts: Vec<TorusPoint> = if d == 1 {
        (0..per).map(|k| TorusPoint::new1((k as f64 + 0.5) / per as f64)).collect()
    } else {
        (0..per * per).map(|k| TorusPoint::new2(((k / per) as f64 + 0.5) / per as f64, ((k % per) as f64 + 0.5) / per as f64)).collect()
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in &pts {
        for q in superdifferential(phi, x).vertices {
            let e = model.h(&x.lift(), &q);
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    let mut residual = 0.5 * (hi - lo);
    if phi.sense() == Sense::Max {
        residual = f64::INFINITY;
    }
    WeakKamCheck { c: 0.5 * (hi + lo), residual, samples: pts.len() }
}

fn require_weak_kam(op: &'static str, model: &HamiltonianModel, phi: &MinSmoothFn) -> Result<f64> {
    let chk = weak_kam_check(model, phi, 512);
    if !(chk.residual <= WEAK_KAM_TOL) {
        return Err(Error::NotWeakKam { op, residual: chk.residual });
    }
    Ok(chk.c)
}

/// Forward calibration time with a known critical value `c`.
fn cut_time_with(model: &HamiltonianModel, phi: &MinSmoothFn, c: f64, x: &TorusPoint, t_max: f64, steps: usize) -> f64 {
    let sd = superdifferential(phi, x);
    if sd.diameter() > SINGULAR_TOL {
        return 0.0;
    }
    let p: Covector = sd.vertices[0];
    let arc = ArcIntegrator::new(model, false);
    let mut s = arc.initial(&x.lift(), &p);
    let phi0 = phi.value(x);
    let dt = t_max / steps.max(1) as f64;
    for k in 1..=steps.max(1) {
        arc.step(&mut s, dt);
        let (y, _) = arc.unpack(&s);
        let t = k as f64 * dt;
        let defect = phi.value(&TorusPoint::new(y)) - phi0 - (arc.action(&s) + c * t);
        if defect.abs() > CALIBRATION_TOL {
            return t;
        }
    }
    t_max
}

/// First time at which the forward characteristic from `(x, D phi(x))` stops calibrating `phi`.
///
/// Singular points return 0; a characteristic that calibrates throughout returns `t_max`.
pub fn cut_time_calibration(model: &HamiltonianModel, phi: &MinSmoothFn, x: &TorusPoint, t_max: f64, steps: usize) -> Result<f64> {
    let c = require_weak_kam("cut_time_calibration", model, phi)?;
    if !(t_max > 0.0) || steps == 0 {
        return Err(Error::precondition("cut_time_calibration", "t_max and steps must be positive"));
    }
    Ok(cut_time_with(model, phi, c, x, t_max, steps))
}

/// Flow steps used for the cut test at one sample.
const CUT_STEPS: usize = 64;

struct CutProbe<'a> {
    model: &'a HamiltonianModel,
    phi: &'a MinSmoothFn,
    c: OnceLock<Result<f64>>,
    /// Horizon of the cut test; a point is in the cut locus when its time is at most `step`.
    step: f64,
}

impl CutProbe<'_> {
    fn report(&self, x: &TorusPoint) -> Result<SingularityReport> {
        let (singular, hull_diameter) = is_singular(self.phi, x, SINGULAR_TOL);
        if singular {
            return Ok(SingularityReport { singular, hull_diameter, cut_time: 0.0, in_cut: true });
        }
        // only regular points need the weak KAM property
        let c = self.c.get_or_init(|| require_weak_kam("propagation_report", self.model, self.phi)).clone()?;
        let horizon = 4.0 * self.step;
        let cut_time = cut_time_with(self.model, self.phi, c, x, horizon, CUT_STEPS);
        Ok(SingularityReport { singular, hull_diameter, cut_time, in_cut: cut_time <= self.step })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowStat {
    pub start: f64,
    pub end: f64,
    pub samples: usize,
    pub singular_fraction: f64,
    /// Longest stretch of consecutive singular samples, in time.
    pub longest_singular_run: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropagationReport {
    pub times: Vec<f64>,
    pub samples: Vec<SingularityReport>,
    pub singular_fraction: f64,
    pub cut_fraction: f64,
    pub window: f64,
    pub windows: Vec<WindowStat>,
    /// Starts of windows without any singular sample.
    pub violations: Vec<f64>,
    /// Every window contains two consecutive singular samples.
    pub interval_in_every_window: bool,
    /// Every singular sample is also a cut sample.
    pub sing_within_cut: bool,
}

pub const PROPAGATION_WINDOW: f64 = 0.1;

/// Membership of every sample of `run` in the singular set and the cut locus.
pub fn propagation_report(model: &HamiltonianModel, phi: &MinSmoothFn, run: &CharacteristicRun) -> Result<PropagationReport> {
    let probe = CutProbe { model, phi, c: OnceLock::new(), step: run.step };
    let pts = &run.curve.points;
    let first = pts.first().ok_or_else(|| Error::precondition("propagation_report", "empty run"))?;
    if !probe.report(first)?.in_cut {
        return Err(Error::precondition("propagation_report", "the run does not start in the cut locus"));
    }
    let samples: Vec<SingularityReport> = pts.par_iter().map(|x| probe.report(x)).collect::<Result<_>>()?;
    let times = run.curve.times.clone();
    let n = samples.len() as f64;
    let singular_fraction = samples.iter().filter(|s| s.singular).count() as f64 / n;
    let cut_fraction = samples.iter().filter(|s| s.in_cut).count() as f64 / n;
    let t0 = times[0];
    let t1 = *times.last().expect("non-empty");
    let count = (((t1 - t0) / PROPAGATION_WINDOW) - 1e-9).ceil().max(1.0) as usize;
    let mut windows = vec![];
    for w in 0..count {
        let start = t0 + w as f64 * PROPAGATION_WINDOW;
        let end = (start + PROPAGATION_WINDOW).min(t1);
        let idx: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= start && (times[k] < end || (w + 1 == count && times[k] <= end))).collect();
        let sing = idx.iter().filter(|&&k| samples[k].singular).count();
        let mut longest = 0.0f64;
        let mut run_start: Option<f64> = None;
        for &k in &idx {
            if samples[k].singular {
                let s = *run_start.get_or_insert(times[k]);
                longest = longest.max(times[k] - s);
            } else {
                run_start = None;
            }
        }
        windows.push(WindowStat {
            start,
            end,
            samples: idx.len(),
            singular_fraction: if idx.is_empty() { 0.0 } else { sing as f64 / idx.len() as f64 },
            longest_singular_run: longest,
        });
    }
    let violations = windows.iter().filter(|w| w.singular_fraction == 0.0).map(|w| w.start).collect();
    let interval_in_every_window = windows.iter().all(|w| w.longest_singular_run > 0.0);
    let sing_within_cut = samples.iter().all(|s| !s.singular || s.in_cut);
    Ok(PropagationReport {
        times,
        samples,
        singular_fraction,
        cut_fraction,
        window: PROPAGATION_WINDOW,
        windows,
        violations,
        interval_in_every_window,
        sing_within_cut,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C11Entry {
    pub t: f64,
    /// Largest `|p - D phi(x)| t / |y - x|` over the sampled pairs.
    pub sup_ratio: f64,
    /// Sample points whose cut time is at least `t`.
    pub qualified: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C11Report {
    pub entries: Vec<C11Entry>,
    pub radius: f64,
    /// `max / median` of the sup ratios over `t`.
    pub spread: f64,
}

fn offsets(dim: usize, radius: f64) -> Vec<Vector> {
    let mut dirs = vec![];
    if dim == 1 {
        dirs.push(Vector::new1(1.0));
        dirs.push(Vector::new1(-1.0));
    } else {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in [(1.0, 0.0), (0.0, 1.0), (s, s), (s, -s)] {
            dirs.push(Vector::new2(a, b));
            dirs.push(Vector::new2(-a, -b));
        }
    }
    let mut out = vec![];
    for d in dirs {
        for j in 1..=8 {
            out.push(d * (radius * j as f64 / 8.0));
        }
    }
    out
}

/// Points whose cut time is at least `t` have a superdifferential that is Lipschitz at scale `C / t`.
///
/// For each `t`, sample points with cut time at least `t` are compared with points up to
/// `radius` away.
pub fn c11_estimate_check(model: &HamiltonianModel, phi: &MinSmoothFn, ts: &[f64], samples: usize, radius: f64) -> Result<C11Report> {
    let c = require_weak_kam("c11_estimate_check", model, phi)?;
    let d = phi.dim();
    let per = if d == 1 { samples.max(1) } else { (samples as f64).sqrt().ceil().max(1.0) as usize };
    let xs: Vec<TorusPoint> = if d == 1 {
        (0..per).map(|k| TorusPoint::new1((k as f64 + 0.5) / per as f64)).collect()
    } else {
        (0..per * per).map(|k| TorusPoint::new2(((k / per) as f64 + 0.5) / per as f64, ((k % per) as f64 + 0.5) / per as f64)).collect()
    };
    let offs = offsets(d, radius);
    let mut entries = vec![];
    for &t in ts {
        let per_x: Vec<Option<f64>> = xs
            .par_iter()
            .map(|x| {
                // cut time at least t: the characteristic calibrates over all of [0, t]
                if cut_time_with(model, phi, c, x, t, 256) < t {
                    return None;
                }
                let dx = superdifferential(phi, x).vertices[0];
                let xl = x.lift();
                let mut sup = 0.0f64;
                for o in &offs {
                    let y = TorusPoint::new(xl + *o);
                    for p in superdifferential(phi, &y).vertices {
                        sup = sup.max((p - dx).norm() * t / o.norm());
                    }
                }
                Some(sup)
            })
            .collect();
        let qualified = per_x.iter().flatten().count();
        if qualified == 0 {
            return Err(Error::InsufficientSamples { op: "c11_estimate_check", detail: format!("no sample with cut time >= {t}") });
        }
        let sup_ratio = per_x.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        entries.push(C11Entry { t, sup_ratio, qualified });
    }
    let mut sups: Vec<f64> = entries.iter().map(|e| e.sup_ratio).collect();
    sups.sort_by(f64::total_cmp);
    let median = if sups.len() % 2 == 1 { sups[sups.len() / 2] } else { 0.5 * (sups[sups.len() / 2 - 1] + sups[sups.len() / 2]) };
    let max = *sups.last().expect("non-empty t list");
    let spread = if max == 0.0 { 1.0 } else { max / median };
    Ok(C11Report { entries, radius, spread })
}

/// `H(x, p#(x))` and the energies of the vertices of `D+phi(x)`.
pub fn energy_gap(model: &HamiltonianModel, phi: &MinSmoothFn, x: &TorusPoint) -> (f64, Vec<f64>) {
    let sel = minimal_energy_selection(model, phi, x);
    let xl = x.lift();
    let vs = superdifferential(phi, x).vertices.iter().map(|q| model.h(&xl, q)).collect();
    (sel.h_value, vs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::integrate_euler;
    use crate::fixtures;
    use std::f64::consts::PI;

    #[test]
    fn singular_examples() {
        let f2 = fixtures::f2_phi();
        let (s, d) = is_singular(&f2, &TorusPoint::new1(0.25), SINGULAR_TOL);
        assert!(s && (d - 4.0 * PI).abs() < 1e-9);
        assert!(!is_singular(&f2, &TorusPoint::new1(0.1), SINGULAR_TOL).0);
        let (s, d) = is_singular(&fixtures::pendulum_u(), &TorusPoint::new1(0.5), SINGULAR_TOL);
        assert!(s && (d - 4.0).abs() < 1e-12);
    }

    #[test]
    fn weak_kam_check_separates_fixtures() {
        let f3 = fixtures::f3();
        let chk = weak_kam_check(&f3.model, &f3.phi, 512);
        assert!((chk.c - 1.0).abs() < 1e-9 && chk.residual < 1e-9);
        let f2 = fixtures::f2();
        let err = cut_time_calibration(&f2.model, &f2.phi, &TorusPoint::new1(0.1), 1.0, 100).unwrap_err();
        assert!(matches!(err, Error::NotWeakKam { .. }));
    }

    #[test]
    fn cut_time_examples() {
        let f3 = fixtures::f3();
        let oracle = ((PI / 8.0).tan().ln() / -(2.0 * PI)).abs();
        let t = cut_time_calibration(&f3.model, &f3.phi, &TorusPoint::new1(0.25), 1.0, 2000).unwrap();
        assert!((t - oracle).abs() < 0.05, "{t} vs {oracle}");
        assert_eq!(cut_time_calibration(&f3.model, &f3.phi, &TorusPoint::new1(0.5), 1.0, 100).unwrap(), 0.0);
        let f1 = fixtures::f1();
        assert_eq!(cut_time_calibration(&f1.model, &f1.phi, &TorusPoint::new1(0.3), 2.0, 100).unwrap(), 2.0);
    }

    #[test]
    fn propagation_examples() {
        let f3 = fixtures::f3();
        let run = integrate_euler(&f3.model, &f3.phi, &TorusPoint::new1(0.5), 1.0, 1.0 / 256.0).unwrap();
        let r = propagation_report(&f3.model, &f3.phi, &run).unwrap();
        assert_eq!(r.singular_fraction, 1.0);
        assert!(r.violations.is_empty() && r.interval_in_every_window && r.sing_within_cut);

        let f4 = fixtures::f4();
        let run = integrate_euler(&f4.model, &f4.phi, &TorusPoint::new2(0.25, 0.1), 1.0, 1.0 / 256.0).unwrap();
        let r = propagation_report(&f4.model, &f4.phi, &run).unwrap();
        assert_eq!(r.singular_fraction, 1.0);

        let run = integrate_euler(&f3.model, &f3.phi, &TorusPoint::new1(0.25), 1.0, 1.0 / 256.0).unwrap();
        let err = propagation_report(&f3.model, &f3.phi, &run).unwrap_err();
        assert!(matches!(err, Error::PreconditionFailed { .. }));
    }

    #[test]
    fn c11_examples() {
        let f1 = fixtures::f1();
        let r = c11_estimate_check(&f1.model, &f1.phi, &[0.05, 0.1], 32, 0.05).unwrap();
        assert!(r.entries.iter().all(|e| e.sup_ratio == 0.0));
        let f3 = fixtures::f3();
        let r = c11_estimate_check(&f3.model, &f3.phi, &[0.05, 0.1, 0.2], 128, 0.05).unwrap();
        assert!(r.entries.iter().all(|e| e.sup_ratio.is_finite() && e.sup_ratio > 0.0));
        assert!(r.spread <= 3.0, "{r:?}");
        // only the equilibrium calibrates for ever, and it is not a sample
        let err = c11_estimate_check(&f3.model, &f3.phi, &[50.0], 16, 0.05).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { .. }));
    }

    #[test]
    fn sing_inside_cut_on_grid() {
        let f3 = fixtures::f3();
        let probe = CutProbe { model: &f3.model, phi: &f3.phi, c: OnceLock::new(), step: 1.0 / 256.0 };
        for k in 0..256 {
            let r = probe.report(&TorusPoint::new1(k as f64 / 256.0)).unwrap();
            assert!(!r.singular || r.in_cut);
        }
    }

    #[test]
    fn sharp_energy_drops_below_critical_at_kink() {
        let f3 = fixtures::f3();
        let (h, vs) = energy_gap(&f3.model, &f3.phi, &TorusPoint::new1(0.5));
        assert!(h < 1.0 - 1e-3);
        assert!(vs.iter().all(|e| (e - 1.0).abs() < 1e-6));
    }

    #[test]
    fn backward_characteristic_calibrates() {
        // u(x) - u(gamma(-t)) = action + c t along the backward flow from a regular point
        let f3 = fixtures::f3();
        let x = TorusPoint::new1(0.3);
        let p = superdifferential(&f3.phi, &x).vertices[0];
        let arc = ArcIntegrator::new(&f3.model, false);
        let mut s = arc.initial(&x.lift(), &p);
        for k in 1..=200 {
            arc.step(&mut s, -0.0025);
            let (y, _) = arc.unpack(&s);
            let t = 0.0025 * k as f64;
            let gap = f3.phi.value(&x) - f3.phi.value(&TorusPoint::new(y)) - (-arc.action(&s) + t);
            assert!(gap.abs() < 1e-9, "t = {t}: {gap}");
        }
    }
}
