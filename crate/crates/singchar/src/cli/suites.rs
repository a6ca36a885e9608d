//! Invariant suites run by `singchar verify` and by scenarios with a `verify` task.

use super::config::Suite;
use crate::action::{ActionConfig, ActionSolver};
use crate::characteristics::{
    edi_residual, energy_profile, gc_membership, hull_distance, integrate_euler, minimal_energy_selection,
};
use crate::error::Result;
use crate::fixtures::{self, Fixture};
use crate::geometry::{Grid, TorusPoint, Vector};
use crate::hamiltonian::HamiltonianModel;
use crate::laxoleinik::{LoConfig, weak_kam_solve};
use crate::semiconcave::{MinSmoothFn, semiconcavity_check, superdifferential};
use crate::singularity::{SINGULAR_TOL, energy_gap, weak_kam_check};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub fixture: String,
    pub name: String,
    pub value: f64,
    /// Pass iff `value <= bound`.
    pub bound: f64,
    pub passed: bool,
}

fn check(fixture: &str, name: &str, value: f64, bound: f64) -> Check {
    Check { fixture: fixture.into(), name: name.into(), value, bound, passed: value <= bound }
}

fn sample_points(dim: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<TorusPoint> {
    // eighths hit the kinks of every fixture
    let mut pts: Vec<TorusPoint> = if dim == 1 {
        (0..8).map(|k| TorusPoint::new1(k as f64 / 8.0)).collect()
    } else {
        (0..64).map(|k| TorusPoint::new2((k / 8) as f64 / 8.0, (k % 8) as f64 / 8.0)).collect()
    };
    for _ in 0..n {
        let c: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        pts.push(TorusPoint::from_slice(&c));
    }
    pts
}

/// Largest violation of: convex weights, membership in the hull, minimality against vertices
/// and random hull points, and the variational inequality `<H_p(p#), q - p#> >= 0`.
fn selection_violation(model: &HamiltonianModel, phi: &MinSmoothFn, pts: &[TorusPoint], rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for x in pts {
        let xl = x.lift();
        let sel = minimal_energy_selection(model, phi, x);
        let sum: f64 = sel.weights.iter().sum();
        worst = worst.max((sum - 1.0).abs());
        worst = worst.max(sel.weights.iter().fold(0.0f64, |m, w| m.max(-w)));
        let mut comb = Vector::zeros(xl.dim());
        for (w, v) in sel.weights.iter().zip(&sel.vertices) {
            comb += *v * *w;
        }
        worst = worst.max((comb - sel.p_sharp).norm());
        worst = worst.max(hull_distance(&sel.vertices, &sel.p_sharp));
        let hp = model.h_p(&xl, &sel.p_sharp);
        for q in &sel.vertices {
            worst = worst.max(sel.h_value - model.h(&xl, q));
            worst = worst.max(-hp.dot(&(*q - sel.p_sharp)));
        }
        for _ in 0..16 {
            let raw: Vec<f64> = sel.vertices.iter().map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let mut q = Vector::zeros(xl.dim());
            for (w, v) in raw.iter().zip(&sel.vertices) {
                q += *v * (*w / s);
            }
            worst = worst.max(sel.h_value - model.h(&xl, &q));
        }
    }
    worst
}

/// `sup |H_p(x, q)|` over the superdifferential vertices at `pts`.
pub fn max_speed(model: &HamiltonianModel, phi: &MinSmoothFn, pts: &[TorusPoint]) -> f64 {
    let mut v = 1e-12f64;
    for x in pts {
        let xl = x.lift();
        for q in &superdifferential(phi, x).vertices {
            v = v.max(model.h_p(&xl, q).norm());
        }
    }
    v
}

fn starts(dim: usize) -> Vec<TorusPoint> {
    if dim == 1 {
        [0.1, 0.3, 0.5, 0.8].iter().map(|&x| TorusPoint::new1(x)).collect()
    } else {
        [(0.25, 0.1), (0.1, 0.3), (0.6, 0.7)].iter().map(|&(a, b)| TorusPoint::new2(a, b)).collect()
    }
}

/// Checks on one model / `phi` pair.
pub fn pair_checks(name: &str, model: &HamiltonianModel, phi: &MinSmoothFn, critical_value: Option<f64>, suite: Suite, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, t_end, h, courant) = match suite {
        Suite::Fast => (200, 1.0, 1.0 / 256.0, 64.0),
        Suite::Full => (2000, 5.0, 1.0 / 1024.0, 256.0),
    };
    let mut out = vec![];
    if phi.semiconcavity_constant().is_some() {
        let r = semiconcavity_check(phi, samples * 10, None, seed);
        out.push(check(name, "semiconcavity", r.max_violation, 1e-12));
    }
    let pts = sample_points(phi.dim(), samples, &mut rng);
    out.push(check(name, "selection", selection_violation(model, phi, &pts, &mut rng), 1e-10));
    // a step may not cross more than a fraction of the torus
    let h: f64 = f64::min(h, 1.0 / (courant * max_speed(model, phi, &pts)));
    let (mut edi, mut gc, mut rate) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for x0 in starts(phi.dim()) {
        let run = integrate_euler(model, phi, &x0, t_end, h)?;
        edi = edi.max(edi_residual(model, phi, &run).residual);
        gc = gc.max(gc_membership(model, phi, &run).max_gap);
        let e = energy_profile(model, phi, &run);
        rate = rate.max(e.max_rate - e.lambda_hat);
    }
    out.push(check(name, "euler-edi", edi, 5e-3));
    out.push(check(name, "euler-gc", gc, 1e-8));
    out.push(check(name, "energy-rate", rate, 0.1));
    if let Some(c) = critical_value {
        let chk = weak_kam_check(model, phi, samples);
        out.push(check(name, "weak-kam-energy", chk.residual.max((chk.c - c).abs()), 1e-6));
        // below the critical level at singular points, on it at every vertex
        let mut gap = f64::NEG_INFINITY;
        let mut vertex = 0.0f64;
        for x in &pts {
            if superdifferential(phi, x).diameter() > SINGULAR_TOL {
                let (hs, vs) = energy_gap(model, phi, x);
                gap = gap.max(hs - c);
                vertex = vertex.max(vs.iter().fold(0.0f64, |m, e| m.max((e - c).abs())));
            }
        }
        if gap.is_finite() {
            out.push(check(name, "singular-energy-below-critical", gap, -1e-6));
            out.push(check(name, "singular-vertex-energy", vertex, 1e-6));
        }
        if suite == Suite::Full && phi.dim() == 1 {
            let solver = ActionSolver::new(model.clone(), ActionConfig::default());
            let r = weak_kam_solve(&solver, &Grid::uniform(1, 512), 0.05, 1e-9, 20000, &LoConfig::default())?;
            out.push(check(name, "weak-kam-solver-c", (r.c - c).abs(), 1e-2));
        }
    }
    Ok(out)
}

pub fn fixture_checks(f: &Fixture, suite: Suite, seed: u64) -> Result<Vec<Check>> {
    pair_checks(f.name, &f.model, &f.phi, f.critical_value, suite, seed)
}

/// Every fixture.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    let mut out = vec![];
    for f in fixtures::all() {
        out.extend(fixture_checks(&f, suite, seed)?);
    }
    Ok(out)
}
