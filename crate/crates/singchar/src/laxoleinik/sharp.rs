//! Operators for the Lagrangian `L#(x, v) = L(x, v) + H(x, p#(x))`.
//!
//! The action is the midpoint discrete action over `steps` segments whose nodes live on a
//! fixed lattice, solved by dynamic programming. In one dimension the lattice also carries
//! the exact kinks of `phi`, so curves that rest on the singular set are representable: the
//! extra term `H(x, p#(x))` only differs from its neighbours there.

use super::{Direction, GridField};
use crate::action::ActionSolver;
use crate::characteristics::minimal_energy_selection;
use crate::error::{Error, Result};
use crate::geometry::{TorusPoint, Vector};
use crate::hamiltonian::{HamiltonianModel, legendre_at};
use crate::semiconcave::{MinSmoothFn, superdifferential};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpConfig {
    /// Lattice nodes per unit length (rounded up to a multiple of the output grid).
    pub lattice: usize,
    /// Number of time segments.
    pub steps: usize,
    /// Add the kinks of `phi` to the lattice (one dimension only).
    pub augment: bool,
}

impl Default for SharpConfig {
    fn default() -> Self {
        SharpConfig { lattice: 4096, steps: 128, augment: true }
    }
}

/// `max { H(x, p) - H(x, p#(x)) : p vertex of D+phi(x) }`.
pub fn sharp_hamiltonian_max(model: &HamiltonianModel, phi: &MinSmoothFn, x: &TorusPoint) -> f64 {
    let sel = minimal_energy_selection(model, phi, x);
    let xl = x.lift();
    superdifferential(phi, x).vertices.iter().map(|p| model.h(&xl, p) - sel.h_value).fold(f64::NEG_INFINITY, f64::max)
}

fn kinks_1d(phi: &MinSmoothFn, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let np = phi.pieces().len();
    let val = |i: usize, x: f64| phi.pieces()[i].value(&Vector::new1(x));
    let mut out = vec![];
    for k in 0..n {
        let a = nodes[k];
        let b = if k + 1 < n { nodes[k + 1] } else { 1.0 };
        for i in 0..np {
            for j in i + 1..np {
                let fa = val(i, a) - val(j, a);
                let fb = val(i, b) - val(j, b);
                if fa == 0.0 || fa.signum() == fb.signum() {
                    continue;
                }
                let (mut lo, mut hi, mut flo) = (a, b, fa);
                for _ in 0..200 {
                    let m = 0.5 * (lo + hi);
                    if m <= lo || m >= hi {
                        break;
                    }
                    let fm = val(i, m) - val(j, m);
                    if fm == 0.0 {
                        lo = m;
                        hi = m;
                        break;
                    }
                    if fm.signum() == flo.signum() {
                        lo = m;
                        flo = fm;
                    } else {
                        hi = m;
                    }
                }
                let z = if (val(i, lo) - val(j, lo)).abs() <= (val(i, hi) - val(j, hi)).abs() { lo } else { hi };
                // only ties of the minimal pieces are kinks
                let m = phi.value(&TorusPoint::new1(z));
                if val(i, z).max(val(j, z)) <= m + 1e-12 * (1.0 + m.abs()) {
                    out.push(z);
                }
            }
        }
    }
    out
}

struct Lattice {
    pos: Vec<Vector>,
    /// per node: (neighbour index, lifted displacement from the node to the neighbour)
    nbrs: Vec<Vec<(usize, Vector)>>,
    /// lattice index of each output grid node
    out: Vec<usize>,
}

fn lattice(u: &GridField, phi: &MinSmoothFn, cfg: &SharpConfig, reach: f64) -> Lattice {
    let grid = &u.grid;
    let d = grid.dim();
    if d == 1 {
        let nu = grid.resolution()[0];
        let r = cfg.lattice.div_ceil(nu).max(1);
        let nf = nu * r;
        let base: Vec<f64> = (0..nf).map(|k| k as f64 / nf as f64).collect();
        let mut all: Vec<(f64, Option<usize>)> = base.iter().enumerate().map(|(k, &x)| (x, Some(k))).collect();
        if cfg.augment {
            for z in kinks_1d(phi, &base) {
                let z = crate::geometry::wrap01(z);
                let near = base.iter().any(|&b| (b - z).abs() < 1e-13 || (b + 1.0 - z).abs() < 1e-13);
                if !near {
                    all.push((z, None));
                }
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        all.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-13);
        let n = all.len();
        let pos: Vec<Vector> = all.iter().map(|a| Vector::new1(a.0)).collect();
        let mut out = vec![0; nu];
        for (k, a) in all.iter().enumerate() {
            if let Some(b) = a.1 {
                if b % r == 0 {
                    out[b / r] = k;
                }
            }
        }
        let nbrs = (0..n)
            .map(|k| {
                let mut v = vec![(k, Vector::new1(0.0))];
                for s in [1i64, -1] {
                    let mut m = 1i64;
                    loop {
                        let raw = k as i64 + s * m;
                        let wraps = raw.div_euclid(n as i64);
                        let idx = raw.rem_euclid(n as i64) as usize;
                        let disp = all[idx].0 + wraps as f64 - all[k].0;
                        if disp.abs() > reach || m as usize >= n {
                            break;
                        }
                        v.push((idx, Vector::new1(disp)));
                        m += 1;
                    }
                }
                v
            })
            .collect();
        return Lattice { pos, nbrs, out };
    }
    let (n0, n1) = (grid.resolution()[0], grid.resolution()[1]);
    let per = (cfg.lattice as f64).sqrt().ceil() as usize;
    let (r0, r1) = (per.div_ceil(n0).max(1), per.div_ceil(n1).max(1));
    let (m0, m1) = (n0 * r0, n1 * r1);
    let pos: Vec<Vector> = (0..m0 * m1).map(|k| Vector::new2((k / m1) as f64 / m0 as f64, (k % m1) as f64 / m1 as f64)).collect();
    let (k0, k1) = ((reach * m0 as f64).floor() as i64, (reach * m1 as f64).floor() as i64);
    let mut offs = vec![];
    for i in -k0..=k0 {
        for j in -k1..=k1 {
            let v = Vector::new2(i as f64 / m0 as f64, j as f64 / m1 as f64);
            if v.norm() <= reach {
                offs.push((i, j, v));
            }
        }
    }
    let nbrs = (0..m0 * m1)
        .map(|k| {
            let (a, b) = ((k / m1) as i64, (k % m1) as i64);
            offs.iter()
                .map(|&(i, j, v)| {
                    let idx = (a + i).rem_euclid(m0 as i64) as usize * m1 + (b + j).rem_euclid(m1 as i64) as usize;
                    (idx, v)
                })
                .collect()
        })
        .collect();
    let out = (0..n0 * n1).map(|k| (k / n1) * r0 * m1 + (k % n1) * r1).collect();
    Lattice { pos, nbrs, out }
}

/// `T#_t u` (neg) or its positive counterpart (pos) on the nodes of `u`.
pub fn sharp_operator(solver: &ActionSolver, phi: &MinSmoothFn, u: &GridField, t: f64, dir: Direction, cfg: &SharpConfig) -> Result<GridField> {
    let horizon = solver.t_max();
    if !(t > 0.0) || t > horizon {
        return Err(Error::HorizonExceeded { op: "sharp_operator", t, horizon });
    }
    if phi.dim() != u.grid.dim() {
        return Err(Error::precondition("sharp_operator", "dimension mismatch"));
    }
    let model = &solver.model;
    let steps = cfg.steps.max(1);
    let dt = t / steps as f64;
    let lat = lattice(u, phi, cfg, solver.cfg.lambda * dt);
    let extra = |x: &Vector| minimal_energy_selection(model, phi, &TorusPoint::new(*x)).h_value;
    // cost of one segment from node k to neighbour (outgoing) or from neighbour to k (incoming)
    let costs: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..lat.pos.len())
        .into_par_iter()
        .map(|k| {
            let mut outgoing = vec![];
            let mut incoming = vec![];
            for (_, disp) in &lat.nbrs[k] {
                let mid = lat.pos[k] + *disp * 0.5;
                let e = extra(&mid);
                let v = *disp * (1.0 / dt);
                outgoing.push(dt * (legendre_at(model, &mid, &v)?.l + e));
                incoming.push(dt * (legendre_at(model, &mid, &(-v))?.l + e));
            }
            Ok((outgoing, incoming))
        })
        .collect();
    let mut c_out = vec![];
    let mut c_in = vec![];
    for c in costs {
        let (o, i) = c?;
        c_out.push(o);
        c_in.push(i);
    }
    let mut w: Vec<f64> = lat.pos.iter().map(|x| u.interpolate(x)).collect();
    for (i, &k) in lat.out.iter().enumerate() {
        w[k] = u.values[i];
    }
    for _ in 0..steps {
        w = (0..lat.pos.len())
            .into_par_iter()
            .map(|k| match dir {
                Direction::Neg => lat.nbrs[k].iter().zip(&c_in[k]).map(|((j, _), c)| w[*j] + c).fold(f64::INFINITY, f64::min),
                Direction::Pos => lat.nbrs[k].iter().zip(&c_out[k]).map(|((j, _), c)| w[*j] - c).fold(f64::NEG_INFINITY, f64::max),
            })
            .collect();
    }
    GridField::new(u.grid.clone(), lat.out.iter().map(|&k| w[k]).collect())
}
