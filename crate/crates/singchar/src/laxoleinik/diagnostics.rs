//! Commutator cut time and the backward-flow graph check.

use super::{Direction, LoConfig, LoField, point_lo};
use crate::action::ActionSolver;
use crate::error::Result;
use crate::geometry::{Covector, TorusPoint};
use crate::hamiltonian::hamiltonian_flow;
use crate::semiconcave::{MinSmoothFn, superdifferential};
use rayon::prelude::*;
use serde::Serialize;

/// Zero threshold for the commutator.
pub const COMMUTATOR_TOL: f64 = 1e-6;

/// `(T-_t T+_t - T+_t T-_t) phi (x)`, nonnegative up to quadrature error.
pub fn commutator_at(solver: &ActionSolver, phi: &MinSmoothFn, x: &TorusPoint, t: f64, cfg: &LoConfig) -> Result<f64> {
    let plus = LoField { solver, inner: phi, t, dir: Direction::Pos, cfg: cfg.clone() };
    let minus = LoField { solver, inner: phi, t, dir: Direction::Neg, cfg: cfg.clone() };
    let xl = x.lift();
    let (a, b) = rayon::join(
        || point_lo(solver, &plus, &xl, t, Direction::Neg, cfg),
        || point_lo(solver, &minus, &xl, t, Direction::Pos, cfg),
    );
    Ok(a?.value - b?.value)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommutatorReport {
    pub tau: f64,
    /// `(t, commutator)` for each evaluated grid time.
    pub samples: Vec<(f64, f64)>,
}

/// Largest grid time before the commutator first leaves zero (0 if it is nonzero at the first time).
pub fn cut_time_commutator(solver: &ActionSolver, phi: &MinSmoothFn, x: &TorusPoint, t_grid: &[f64], cfg: &LoConfig) -> Result<CommutatorReport> {
    let mut samples = vec![];
    let mut tau = 0.0;
    for &t in t_grid {
        let v = commutator_at(solver, phi, x, t, cfg)?;
        samples.push((t, v));
        if v.abs() > COMMUTATOR_TOL {
            return Ok(CommutatorReport { tau, samples });
        }
        tau = t;
    }
    Ok(CommutatorReport { tau, samples })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArnaudReport {
    pub t: f64,
    pub max_distance: f64,
    /// Number of (x, p) pairs flowed back.
    pub checked: usize,
}

/// Flow each `(x, p)`, `p` in `D+phi(x)`, backward for time `t` and measure the distance of the
/// result to the graph of `DT+_t phi`.
///
/// Vertices are used everywhere; at kinks a few interior points of the hull are added.
pub fn arnaud_graph_check(solver: &ActionSolver, phi: &MinSmoothFn, t: f64, samples: usize, cfg: &LoConfig) -> Result<ArnaudReport> {
    if t == 0.0 {
        return Ok(ArnaudReport { t, max_distance: 0.0, checked: 0 });
    }
    let d = phi.dim();
    let mut xs = vec![];
    if d == 1 {
        for k in 0..samples {
            xs.push(TorusPoint::new1(k as f64 / samples as f64));
        }
    } else {
        let m = (samples as f64).sqrt().ceil() as usize;
        for i in 0..m {
            for j in 0..m {
                xs.push(TorusPoint::new2(i as f64 / m as f64, j as f64 / m as f64));
            }
        }
    }
    let mut pairs: Vec<(TorusPoint, Covector)> = vec![];
    for x in &xs {
        let sd = superdifferential(phi, x);
        for v in &sd.vertices {
            pairs.push((*x, *v));
        }
        if sd.vertices.len() > 1 {
            let (a, b) = (sd.vertices[0], sd.vertices[1]);
            for s in [0.1, 0.3, 0.5, 0.7, 0.9] {
                pairs.push((*x, a * (1.0 - s) + b * s));
            }
        }
    }
    let steps = solver.steps_for(t);
    let dists: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|(x, p)| {
            let path = hamiltonian_flow(&solver.model, x, p, -t, steps)?;
            let end = path.last().expect("non-empty flow");
            let r = point_lo(solver, phi, &end.x.lift(), t, Direction::Pos, cfg)?;
            Ok(r.grads.iter().map(|g| (*g - end.p).norm()).fold(f64::INFINITY, f64::min))
        })
        .collect();
    let mut max_distance = 0.0f64;
    for d in dists {
        max_distance = max_distance.max(d?);
    }
    Ok(ArnaudReport { t, max_distance, checked: pairs.len() })
}
