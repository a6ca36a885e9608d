//! Tabulated kernels `A_t(y_j, y_j + o)` on a grid and the operators built from them.
//!
//! Refinement between nodes uses a fixed set of sub-cell points: `u` is interpolated
//! multilinearly and `A_t` by a tensor quadratic through the neighbouring table rows. The
//! candidate family does not depend on `u`, so `u <= v` gives `T u <= T v` exactly.

use super::{Direction, GridField, LoConfig};
use crate::action::ActionSolver;
use crate::error::{Error, Result};
use crate::geometry::{Covector, Grid, Vector};
use crate::hamiltonian::HamiltonianModel;
use crate::semiconcave::dedup_vertices;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Debug)]
struct SubPoint {
    /// (corner offset, weight) of the multilinear interpolation of `u`
    corners: Vec<([i64; 2], f64)>,
    /// (stencil offset, weight) of the quadratic interpolation of `A`
    stencil: Vec<([i64; 2], f64)>,
}

fn lagrange3(th: f64) -> [f64; 3] {
    [0.5 * th * (th - 1.0), 1.0 - th * th, 0.5 * th * (th + 1.0)]
}

fn subpoints(d: usize, s: usize) -> Vec<SubPoint> {
    let ths: Vec<f64> = (0..s).map(|k| k as f64 / s as f64).collect();
    let mut out = vec![];
    let combos: Vec<[usize; 2]> = if d == 1 {
        (1..s).map(|k| [k, 0]).collect()
    } else {
        let mut v = vec![];
        for a in 0..s {
            for b in 0..s {
                if a + b > 0 {
                    v.push([a, b]);
                }
            }
        }
        v
    };
    for c in combos {
        let th = [ths[c[0]], ths[c[1]]];
        let mut corners = vec![];
        let mut stencil = vec![];
        if d == 1 {
            corners.push(([0, 0], 1.0 - th[0]));
            corners.push(([1, 0], th[0]));
            let l = lagrange3(th[0]);
            for m in 0..3 {
                stencil.push(([m as i64 - 1, 0], l[m]));
            }
        } else {
            for (a, wa) in [(0, 1.0 - th[0]), (1, th[0])] {
                for (b, wb) in [(0, 1.0 - th[1]), (1, th[1])] {
                    corners.push(([a, b], wa * wb));
                }
            }
            let (la, lb) = (lagrange3(th[0]), lagrange3(th[1]));
            for a in 0..3 {
                for b in 0..3 {
                    stencil.push(([a as i64 - 1, b as i64 - 1], la[a] * lb[b]));
                }
            }
        }
        corners.retain(|c| c.1 != 0.0);
        stencil.retain(|c| c.1 != 0.0);
        out.push(SubPoint { corners, stencil });
    }
    out
}

/// `A_t(y_j, y_j + o h)` for every node `j` and offset `o` with `|o h| <= lambda t`.
#[derive(Clone, Debug)]
pub struct KernelTable {
    grid: Grid,
    t: f64,
    k: [i64; 2],
    offsets: Vec<[i64; 2]>,
    slot: Vec<usize>,
    a: Vec<f64>,
    p_start: Vec<Covector>,
    p_end: Vec<Covector>,
    subs: Vec<SubPoint>,
    /// Lower bound over sub-points of the interpolated kernel, per (node, offset), neg layout.
    amin_neg: Vec<f64>,
    /// Same for the pos layout (row of the output node).
    amin_pos: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Entry {
    a: f64,
    ps: Covector,
    pe: Covector,
    dxdp: crate::geometry::Mat,
}

impl KernelTable {
    pub fn build(solver: &ActionSolver, grid: &Grid, t: f64, cfg: &LoConfig) -> Result<Self> {
        let horizon = solver.t_max();
        if !(t > 0.0) || t > horizon {
            return Err(Error::HorizonExceeded { op: "lax_oleinik", t, horizon });
        }
        let mut fast = solver.clone();
        fast.cfg.steps_per_unit = cfg.table_steps_per_unit;
        let d = grid.dim();
        let r = solver.cfg.lambda * t;
        let n = grid.resolution();
        let h: Vec<f64> = (0..d).map(|a| grid.spacing(a)).collect();
        let mut k = [0i64; 2];
        for a in 0..d {
            k[a] = ((r / h[a]).floor() as i64).min(n[a] as i64 / 2 - 1).max(1);
        }
        let disp = |o: &[i64; 2]| -> Vector {
            if d == 1 { Vector::new1(o[0] as f64 * h[0]) } else { Vector::new2(o[0] as f64 * h[0], o[1] as f64 * h[1]) }
        };
        let mut offsets = vec![];
        for i in -k[0]..=k[0] {
            if d == 1 {
                if (i as f64 * h[0]).abs() <= r + 1e-12 {
                    offsets.push([i, 0]);
                }
            } else {
                for j in -k[1]..=k[1] {
                    if disp(&[i, j]).norm() <= r + 1e-12 {
                        offsets.push([i, j]);
                    }
                }
            }
        }
        offsets.sort_by_key(|o| (o[0].abs() + o[1].abs(), o[0], o[1]));
        let side = [(2 * k[0] + 1) as usize, if d == 1 { 1 } else { (2 * k[1] + 1) as usize }];
        let mut slot = vec![usize::MAX; side[0] * side[1]];
        let key = |o: &[i64; 2]| (o[0] + k[0]) as usize * side[1] + if d == 1 { 0 } else { (o[1] + k[1]) as usize };
        for (s, o) in offsets.iter().enumerate() {
            slot[key(o)] = s;
        }
        // reversible kinetic energies give A(x, y) = A(y, x): only half the offsets are shot
        let is_half = |o: &[i64; 2]| o[0] > 0 || (o[0] == 0 && o[1] >= 0);
        let nodes: Vec<Vector> = grid.nodes().map(|x| x.lift()).collect();
        let rows: Vec<Vec<Option<Entry>>> = nodes
            .par_iter()
            .map(|y| {
                let mut row: Vec<Option<Entry>> = vec![None; offsets.len()];
                for (s, o) in offsets.iter().enumerate() {
                    if !is_half(o) {
                        continue;
                    }
                    let mut parent = *o;
                    let ax = if d == 2 && parent[1].abs() >= parent[0].abs() { 1 } else { 0 };
                    parent[ax] -= parent[ax].signum();
                    let target = *y + disp(o);
                    let guess = if parent != *o {
                        slot.get(key(&parent)).and_then(|&ps| row.get(ps).copied().flatten()).map(|e: Entry| {
                            let dy = disp(o) - disp(&parent);
                            e.ps + e.dxdp.solve(&dy).unwrap_or(Vector::zeros(d))
                        })
                    } else {
                        None
                    };
                    let shot = fast.shoot(y, &target, t, guess).or_else(|_| fast.shoot(y, &target, t, None));
                    row[s] = shot.ok().map(|sh| Entry { a: sh.value, ps: sh.p_start, pe: sh.p_end, dxdp: sh.dxdp });
                }
                row
            })
            .collect();
        let nn = grid.len();
        let no = offsets.len();
        let mut a = vec![f64::INFINITY; nn * no];
        let mut p_start = vec![Vector::zeros(d); nn * no];
        let mut p_end = vec![Vector::zeros(d); nn * no];
        for j in 0..nn {
            let mj = grid.multi_index(j);
            for (s, o) in offsets.iter().enumerate() {
                let e = if is_half(o) {
                    rows[j][s].map(|e| (e.a, e.ps, e.pe))
                } else {
                    // A(y_j, y_j + o) = A(y_j + o, y_j), read from the row of node j + o
                    let jj = grid.flat_index(&[mj[0] as i64 + o[0], if d == 2 { mj[1] as i64 + o[1] } else { 0 }][..d]);
                    let neg = [-o[0], -o[1]];
                    rows[jj][slot[key(&neg)]].map(|e| (e.a, -e.pe, -e.ps))
                };
                if let Some((av, ps, pe)) = e {
                    a[j * no + s] = av;
                    p_start[j * no + s] = ps;
                    p_end[j * no + s] = pe;
                }
            }
        }
        let subs = subpoints(d, cfg.subcell.max(1));
        let mut table = KernelTable {
            grid: grid.clone(),
            t,
            k,
            offsets,
            slot,
            a,
            p_start,
            p_end,
            subs,
            amin_neg: vec![],
            amin_pos: vec![],
        };
        let (mn, mp): (Vec<f64>, Vec<f64>) = (0..nn * no)
            .into_par_iter()
            .map(|idx| {
                let (j, s) = (idx / no, idx % no);
                let o = table.offsets[s];
                let mut lo_n = f64::INFINITY;
                let mut lo_p = f64::INFINITY;
                for sp in &table.subs {
                    if let Some(v) = table.interp_neg(j, &o, sp) {
                        lo_n = lo_n.min(v);
                    }
                    if let Some(v) = table.interp_pos(j, &o, sp) {
                        lo_p = lo_p.min(v);
                    }
                }
                (lo_n, lo_p)
            })
            .unzip();
        table.amin_neg = mn;
        table.amin_pos = mp;
        Ok(table)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn d(&self) -> usize {
        self.grid.dim()
    }

    fn shift(&self, j: usize, o: &[i64; 2]) -> usize {
        let m = self.grid.multi_index(j);
        if self.d() == 1 {
            self.grid.flat_index(&[m[0] as i64 + o[0]])
        } else {
            self.grid.flat_index(&[m[0] as i64 + o[0], m[1] as i64 + o[1]])
        }
    }

    fn slot_of(&self, o: &[i64; 2]) -> Option<usize> {
        if o[0].abs() > self.k[0] || o[1].abs() > self.k[1] {
            return None;
        }
        let side1 = if self.d() == 1 { 1 } else { (2 * self.k[1] + 1) as usize };
        let key = (o[0] + self.k[0]) as usize * side1 + if self.d() == 1 { 0 } else { (o[1] + self.k[1]) as usize };
        let s = self.slot[key];
        (s != usize::MAX).then_some(s)
    }

    fn entry(&self, j: usize, o: &[i64; 2]) -> Option<usize> {
        let s = self.slot_of(o)?;
        let idx = j * self.offsets.len() + s;
        self.a[idx].is_finite().then_some(idx)
    }

    /// Interpolated `A(y_j + theta h, y_j + o h)` (neg layout: start varies).
    fn interp_neg(&self, j: usize, o: &[i64; 2], sp: &SubPoint) -> Option<f64> {
        let mut v = 0.0;
        for (m, w) in &sp.stencil {
            let jj = self.shift(j, m);
            let idx = self.entry(jj, &[o[0] - m[0], o[1] - m[1]])?;
            v += w * self.a[idx];
        }
        Some(v)
    }

    /// Interpolated `A(x_i, x_i + (o + theta) h)` (pos layout: end varies).
    fn interp_pos(&self, i: usize, o: &[i64; 2], sp: &SubPoint) -> Option<f64> {
        let mut v = 0.0;
        for (m, w) in &sp.stencil {
            let idx = self.entry(i, &[o[0] + m[0], o[1] + m[1]])?;
            v += w * self.a[idx];
        }
        Some(v)
    }

    fn grad_neg(&self, j: usize, o: &[i64; 2], sp: Option<&SubPoint>) -> Covector {
        match sp {
            None => self.p_end[self.entry(j, o).expect("finite entry")],
            Some(sp) => {
                let mut g = Vector::zeros(self.d());
                for (m, w) in &sp.stencil {
                    let idx = self.entry(self.shift(j, m), &[o[0] - m[0], o[1] - m[1]]).expect("finite stencil");
                    g += self.p_end[idx] * *w;
                }
                g
            }
        }
    }

    fn grad_pos(&self, i: usize, o: &[i64; 2], sp: Option<&SubPoint>) -> Covector {
        match sp {
            None => self.p_start[self.entry(i, o).expect("finite entry")],
            Some(sp) => {
                let mut g = Vector::zeros(self.d());
                for (m, w) in &sp.stencil {
                    g += self.p_start[self.entry(i, &[o[0] + m[0], o[1] + m[1]]).expect("finite stencil")] * *w;
                }
                g
            }
        }
    }

    /// Minimum over `theta in [0, 1]` of the one-dimensional cell interpolant, with the
    /// interpolated output gradient there.
    fn cell_optimum(&self, i: usize, o: &[i64; 2], u: &[f64], dir: Direction) -> Option<(f64, Covector)> {
        let (j, sign, idx) = match dir {
            Direction::Neg => {
                let j = self.shift(i, &[-o[0], 0]);
                let mut idx = [0usize; 3];
                for (q, m) in [-1i64, 0, 1].iter().enumerate() {
                    idx[q] = self.entry(self.shift(j, &[*m, 0]), &[o[0] - m, 0])?;
                }
                (j, 1.0, idx)
            }
            Direction::Pos => {
                let j = self.shift(i, o);
                let mut idx = [0usize; 3];
                for (q, m) in [-1i64, 0, 1].iter().enumerate() {
                    idx[q] = self.entry(i, &[o[0] + m, 0])?;
                }
                (j, -1.0, idx)
            }
        };
        // quadratic in u as well: this only feeds gradients, not the monotone values
        let f: Vec<f64> = (0..3).map(|q| sign * u[self.shift(j, &[q as i64 - 1, 0])] + self.a[idx[q]]).collect();
        let g = |th: f64| {
            let l = lagrange3(th);
            l[0] * f[0] + l[1] * f[1] + l[2] * f[2]
        };
        let b = 0.5 * (f[2] - f[0]);
        let c = 0.5 * (f[2] - 2.0 * f[1] + f[0]);
        let th = if c > 0.0 {
            (-b / (2.0 * c)).clamp(0.0, 1.0)
        } else if g(0.0) <= g(1.0) {
            0.0
        } else {
            1.0
        };
        let l = lagrange3(th);
        let ps = match dir {
            Direction::Neg => [self.p_end[idx[0]], self.p_end[idx[1]], self.p_end[idx[2]]],
            Direction::Pos => [self.p_start[idx[0]], self.p_start[idx[1]], self.p_start[idx[2]]],
        };
        Some((g(th), ps[0] * l[0] + ps[1] * l[1] + ps[2] * l[2]))
    }

    /// Apply `T-_t` or `T+_t` to nodal values. Gradients per node are returned on request.
    pub fn apply(&self, u: &[f64], dir: Direction, cfg: &LoConfig, want_grads: bool) -> (Vec<f64>, Option<Vec<Vec<Covector>>>) {
        assert_eq!(u.len(), self.grid.len());
        let no = self.offsets.len();
        let eps = if want_grads { cfg.eps_act } else { 0.0 };
        let res: Vec<(f64, Vec<Covector>)> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                // minimise g over candidates; for pos, g is the negated objective
                let cand_u = |j: usize, sp: Option<&SubPoint>| -> f64 {
                    match sp {
                        None => u[j],
                        Some(sp) => sp.corners.iter().map(|(c, w)| w * u[self.shift(j, c)]).sum(),
                    }
                };
                let umin = |j: usize| -> f64 {
                    let mut m = u[j];
                    for c in [[1, 0], [0, 1], [1, 1]] {
                        if self.d() == 1 && c[1] != 0 {
                            continue;
                        }
                        m = m.min(u[self.shift(j, &c)]);
                    }
                    m
                };
                let umax = |j: usize| -> f64 {
                    let mut m = u[j];
                    for c in [[1, 0], [0, 1], [1, 1]] {
                        if self.d() == 1 && c[1] != 0 {
                            continue;
                        }
                        m = m.max(u[self.shift(j, &c)]);
                    }
                    m
                };
                let neg_o = |o: &[i64; 2]| [-o[0], -o[1]];
                let mut best = f64::INFINITY;
                for (s, o) in self.offsets.iter().enumerate() {
                    let g = match dir {
                        Direction::Neg => {
                            let j = self.shift(i, &neg_o(o));
                            let a = self.a[j * no + s];
                            u[j] + a
                        }
                        Direction::Pos => {
                            let j = self.shift(i, o);
                            -u[j] + self.a[i * no + s]
                        }
                    };
                    if g < best {
                        best = g;
                    }
                }
                let mut cands: Vec<(f64, Covector)> = vec![];
                for (s, o) in self.offsets.iter().enumerate() {
                    match dir {
                        Direction::Neg => {
                            let j = self.shift(i, &neg_o(o));
                            if want_grads {
                                let g = u[j] + self.a[j * no + s];
                                if g <= best + eps {
                                    cands.push((g, self.grad_neg(j, o, None)));
                                }
                            }
                            if umin(j) + self.amin_neg[j * no + s] > best + eps {
                                continue;
                            }
                            for sp in &self.subs {
                                if let Some(a) = self.interp_neg(j, o, sp) {
                                    let g = cand_u(j, Some(sp)) + a;
                                    if g < best {
                                        best = g;
                                    }
                                    if want_grads && g <= best + eps {
                                        cands.push((g, self.grad_neg(j, o, Some(sp))));
                                    }
                                }
                            }
                        }
                        Direction::Pos => {
                            let j = self.shift(i, o);
                            if want_grads {
                                let g = -u[j] + self.a[i * no + s];
                                if g <= best + eps {
                                    cands.push((g, self.grad_pos(i, o, None)));
                                }
                            }
                            if -umax(j) + self.amin_pos[i * no + s] > best + eps {
                                continue;
                            }
                            for sp in &self.subs {
                                if let Some(a) = self.interp_pos(i, o, sp) {
                                    let g = -cand_u(j, Some(sp)) + a;
                                    if g < best {
                                        best = g;
                                    }
                                    if want_grads && g <= best + eps {
                                        cands.push((g, self.grad_pos(i, o, Some(sp))));
                                    }
                                }
                            }
                        }
                    }
                }
                let grads = if want_grads {
                    // one dimension: gradients at the exact optimum of the cell interpolant
                    let mut cont: Vec<(f64, Covector)> = vec![];
                    if self.d() == 1 {
                        for o in &self.offsets {
                            if let Some(c) = self.cell_optimum(i, o, u, dir) {
                                if c.0 <= best + 1e-5 {
                                    cont.push(c);
                                }
                            }
                        }
                    }
                    let (pool, top) = if cont.is_empty() {
                        (&cands, best)
                    } else {
                        let m = cont.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
                        (&cont, m)
                    };
                    let gs: Vec<Covector> = pool.iter().filter(|c| c.0 <= top + eps).map(|c| c.1).collect();
                    let idx: Vec<usize> = (0..gs.len()).collect();
                    dedup_vertices(&gs, &idx).0
                } else {
                    vec![]
                };
                let value = match dir {
                    Direction::Neg => best,
                    Direction::Pos => -best,
                };
                (value, grads)
            })
            .collect();
        let values = res.iter().map(|r| r.0).collect();
        let grads = want_grads.then(|| res.into_iter().map(|r| r.1).collect());
        (values, grads)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakKamResult {
    pub u: GridField,
    /// Critical value estimate.
    pub c: f64,
    /// Sup-norm change of the last iteration.
    pub residual: f64,
    pub iterations: usize,
    /// Output gradients of the last application, per node.
    #[serde(skip)]
    pub grads: Vec<Vec<Covector>>,
}

/// Fixed point of `u -> T-_h u + c h` anchored at the first node.
pub fn weak_kam_solve(solver: &ActionSolver, grid: &Grid, h: f64, tol: f64, max_iter: usize, cfg: &LoConfig) -> Result<WeakKamResult> {
    let table = KernelTable::build(solver, grid, h, cfg)?;
    const AVG_STEPS: usize = 20;
    let mut w = vec![0.0; grid.len()];
    for _ in 0..AVG_STEPS {
        w = table.apply(&w, Direction::Neg, cfg, false).0;
    }
    let mut c = -w[0] / (AVG_STEPS as f64 * h);
    let mut u: Vec<f64> = w.iter().map(|v| v - w[0]).collect();
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let (w, _) = table.apply(&u, Direction::Neg, cfg, false);
        c = -w[0] / h;
        let next: Vec<f64> = w.iter().map(|v| v - w[0]).collect();
        change = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        u = next;
        if change <= tol {
            let (_, grads) = table.apply(&u, Direction::Neg, cfg, true);
            return Ok(WeakKamResult {
                u: GridField::new(grid.clone(), u)?,
                c,
                residual: change,
                iterations: it,
                grads: grads.expect("gradients requested"),
            });
        }
    }
    Err(Error::nonconv("weak_kam_solve", format!("sup change {change:.3e} after {max_iter} iterations (c ~ {c:.6})")))
}

/// Largest `|H(x, p) - c|` over nodes whose gradient hull has diameter below `diam_tol`,
/// with the number of such nodes.
pub fn hj_residual(model: &HamiltonianModel, grid: &Grid, grads: &[Vec<Covector>], c: f64, diam_tol: f64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (k, gs) in grads.iter().enumerate() {
        if gs.is_empty() {
            continue;
        }
        let mut diam = 0.0f64;
        for a in gs {
            for b in gs {
                diam = diam.max((*a - *b).norm());
            }
        }
        if diam < diam_tol {
            let x = grid.node(k).lift();
            worst = worst.max((model.h(&x, &gs[0]) - c).abs());
            count += 1;
        }
    }
    (worst, count)
}
