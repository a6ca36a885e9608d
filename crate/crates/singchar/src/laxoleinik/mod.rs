//! Lax-Oleinik operators `T-_t u(x) = min_y u(y) + A_t(y,x)` and
//! `T+_t u(x) = max_y u(y) - A_t(x,y)`, weak KAM solutions and related diagnostics.

mod diagnostics;
mod grid;
mod sharp;

pub use diagnostics::{
    ArnaudReport, CommutatorReport, arnaud_graph_check, commutator_at, cut_time_commutator,
};
pub use grid::{KernelTable, WeakKamResult, hj_residual, weak_kam_solve};
pub use sharp::{SharpConfig, sharp_hamiltonian_max, sharp_operator};

use crate::action::{ActionSolver, Shot};
use crate::error::{Error, Result};
use crate::geometry::{Covector, Grid, TorusPoint, Vector, nearest_lift_to, wrap01};
use crate::semiconcave::{Local, MinSmoothFn, Piece, Sense, dedup_vertices};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Neg,
    Pos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoConfig {
    /// Spacing of the search lattice around `x`.
    pub lattice: f64,
    pub max_optima: usize,
    pub refine_tol: f64,
    pub refine_max_iter: usize,
    pub eps_act: f64,
    /// Sub-cell resolution of the grid refinement.
    pub subcell: usize,
    /// Integration density used when tabulating kernels on a grid.
    pub table_steps_per_unit: f64,
    pub hessian_test: bool,
}

impl Default for LoConfig {
    fn default() -> Self {
        LoConfig {
            lattice: 1.0 / 128.0,
            max_optima: 3,
            refine_tol: 1e-13,
            refine_max_iter: 100,
            eps_act: 1e-9,
            subcell: 8,
            table_steps_per_unit: 400.0,
            hessian_test: true,
        }
    }
}

/// Values on a regular grid, row-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::precondition("grid_field", "value count does not match grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::precondition("grid_field", "non-finite value"));
        }
        Ok(GridField { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&TorusPoint) -> f64) -> Self {
        let values = grid.nodes().map(|x| f(&x)).collect();
        GridField { grid: grid.clone(), values }
    }

    pub fn sup_distance(&self, o: &GridField) -> f64 {
        self.values.iter().zip(&o.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn shifted(&self, c: f64) -> GridField {
        GridField { grid: self.grid.clone(), values: self.values.iter().map(|v| v + c).collect() }
    }

    fn cell(&self, y: &Vector) -> (Vec<i64>, Vec<f64>) {
        let mut idx = vec![];
        let mut frac = vec![];
        for a in 0..self.grid.dim() {
            let n = self.grid.resolution()[a] as f64;
            let s = wrap01(y[a]) * n;
            let i = s.floor();
            idx.push(i as i64);
            frac.push(s - i);
        }
        (idx, frac)
    }

    /// Periodic multilinear interpolation.
    pub fn interpolate(&self, y: &Vector) -> f64 {
        let (idx, fr) = self.cell(y);
        if self.grid.dim() == 1 {
            let a = self.values[self.grid.flat_index(&[idx[0]])];
            let b = self.values[self.grid.flat_index(&[idx[0] + 1])];
            a * (1.0 - fr[0]) + b * fr[0]
        } else {
            let v = |i: i64, j: i64| self.values[self.grid.flat_index(&[idx[0] + i, idx[1] + j])];
            let (s, t) = (fr[0], fr[1]);
            (1.0 - s) * ((1.0 - t) * v(0, 0) + t * v(0, 1)) + s * ((1.0 - t) * v(1, 0) + t * v(1, 1))
        }
    }

    /// CSV with header `index_0[,index_1],value`, one row per node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut head: Vec<String> = (0..self.grid.dim()).map(|a| format!("index_{a}")).collect();
        head.push("value".into());
        wr.write_record(&head).map_err(|e| Error::Io(e.to_string()))?;
        for (k, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.grid.multi_index(k).iter().map(|i| i.to_string()).collect();
            row.push(v.to_string());
            wr.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// A function that can report its value and one-sided derivative data at lifted points.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn local_at(&self, y: &Vector) -> Result<Local>;
    /// Largest Hessian eigenvalue over active pieces, when available.
    fn hessian_max(&self, _y: &Vector) -> Option<f64> {
        None
    }
}

impl ScalarField for MinSmoothFn {
    fn dim(&self) -> usize {
        MinSmoothFn::dim(self)
    }

    fn local_at(&self, y: &Vector) -> Result<Local> {
        Ok(self.local(&TorusPoint::new(*y)))
    }

    fn hessian_max(&self, y: &Vector) -> Option<f64> {
        let x = TorusPoint::new(*y);
        let loc = self.local(&x);
        let mut m = f64::NEG_INFINITY;
        for &i in &loc.active {
            let h = self.pieces()[i].hessian(&x.lift())?;
            for e in h.sym_eigenvalues() {
                m = m.max(e);
            }
        }
        Some(m)
    }
}

impl ScalarField for GridField {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn local_at(&self, y: &Vector) -> Result<Local> {
        let value = self.interpolate(y);
        let (idx, fr) = self.cell(y);
        if self.grid.dim() == 1 {
            let n = self.grid.resolution()[0] as f64;
            let u = |i: i64| self.values[self.grid.flat_index(&[i])];
            let right = (u(idx[0] + 1) - u(idx[0])) * n;
            if fr[0] == 0.0 {
                let left = (u(idx[0]) - u(idx[0] - 1)) * n;
                let sense = if left >= right { Sense::Min } else { Sense::Max };
                return Ok(Local { value, active: vec![0, 1], grads: vec![Vector::new1(left), Vector::new1(right)], sense });
            }
            return Ok(Local { value, active: vec![0], grads: vec![Vector::new1(right)], sense: Sense::Min });
        }
        let (n0, n1) = (self.grid.resolution()[0] as f64, self.grid.resolution()[1] as f64);
        let v = |i: i64, j: i64| self.values[self.grid.flat_index(&[idx[0] + i, idx[1] + j])];
        let (s, t) = (fr[0], fr[1]);
        let gx = ((1.0 - t) * (v(1, 0) - v(0, 0)) + t * (v(1, 1) - v(0, 1))) * n0;
        let gy = ((1.0 - s) * (v(0, 1) - v(0, 0)) + s * (v(1, 1) - v(1, 0))) * n1;
        Ok(Local { value, active: vec![0], grads: vec![Vector::new2(gx, gy)], sense: Sense::Min })
    }
}

/// Point value of a Lax-Oleinik operator applied to another field.
pub struct LoField<'a> {
    pub solver: &'a ActionSolver,
    pub inner: &'a dyn ScalarField,
    pub t: f64,
    pub dir: Direction,
    pub cfg: LoConfig,
}

impl ScalarField for LoField<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn local_at(&self, y: &Vector) -> Result<Local> {
        let r = point_lo(self.solver, self.inner, y, self.t, self.dir, &self.cfg)?;
        let n = r.grads.len();
        let sense = match self.dir {
            Direction::Neg => Sense::Min,
            Direction::Pos => Sense::Max,
        };
        Ok(Local { value: r.value, active: (0..n).collect(), grads: r.grads, sense })
    }
}

/// Result of a pointwise Lax-Oleinik evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointLo {
    pub value: f64,
    /// Gradients of the operator output contributed by each active optimiser.
    pub grads: Vec<Covector>,
    /// Active optimisers `y*` (lifted).
    pub optimizers: Vec<Vector>,
}

#[derive(Clone, Debug)]
struct Probe {
    y: Vector,
    g: f64,
    grad_a: Covector,
    loc: Local,
    out_grad: Covector,
    shot: Shot,
}

struct Inner<'a> {
    solver: &'a ActionSolver,
    f: &'a dyn ScalarField,
    x: Vector,
    t: f64,
    dir: Direction,
}

impl Inner<'_> {
    fn sign(&self) -> f64 {
        match self.dir {
            Direction::Neg => 1.0,
            Direction::Pos => -1.0,
        }
    }

    fn probe(&self, y: &Vector, guess: Option<Covector>) -> Result<Probe> {
        let loc = self.f.local_at(y)?;
        let (shot, grad_a, out_grad) = match self.dir {
            Direction::Neg => {
                let s = self.solver.shoot(y, &self.x, self.t, guess)?;
                (s, -s.p_start, s.p_end)
            }
            Direction::Pos => {
                let s = self.solver.shoot(&self.x, y, self.t, guess)?;
                (s, s.p_end, s.p_start)
            }
        };
        let g = self.sign() * loc.value + shot.value;
        Ok(Probe { y: *y, g, grad_a, loc, out_grad, shot })
    }

    /// Right derivative of `y -> s f(y) + A` at the probe, along `e`.
    fn slope(&self, p: &Probe, e: &Vector) -> f64 {
        let fs = match self.dir {
            Direction::Neg => p.loc.one_sided(e),
            Direction::Pos => -p.loc.one_sided(e),
        };
        fs + p.grad_a.dot(e)
    }

    /// Local minimiser of the objective along `c + s e`, `|s| <= w`, starting at `pc`.
    fn line_refine(&self, pc: Probe, e: &Vector, w: f64, cfg: &LoConfig) -> Result<Probe> {
        let dp = self.slope(&pc, e);
        let dm = self.slope(&pc, &(-*e));
        if dp >= 0.0 && dm >= 0.0 {
            return Ok(pc);
        }
        let dir = if dp < 0.0 { *e } else { -*e };
        let c = pc.y;
        // bracket [0, b] with decreasing start and increasing end
        let mut b = w;
        let mut pb = None;
        for _ in 0..4 {
            match self.probe(&(c + dir * b), Some(pc.shot.p_start)) {
                Ok(p) => {
                    if self.slope(&p, &(-dir)) < 0.0 {
                        pb = Some(p);
                        break;
                    }
                    if p.g < pc.g && self.slope(&p, &dir) >= 0.0 {
                        // min sits on the far end
                        return Ok(p);
                    }
                    b *= 2.0;
                }
                Err(_) => b *= 0.5,
            }
        }
        let Some(mut pb) = pb else {
            return Ok(pc);
        };
        let mut pa = pc;
        let (mut sa, mut sb) = (0.0f64, b);
        let mut fa = self.slope(&pa, &dir);
        let mut fb = -self.slope(&pb, &(-dir));
        let mut side = 0i8;
        for _ in 0..cfg.refine_max_iter {
            if sb - sa <= cfg.refine_tol {
                break;
            }
            let mut s = sa - fa * (sb - sa) / (fb - fa);
            let lo = sa + 0.01 * (sb - sa);
            let hi = sb - 0.01 * (sb - sa);
            if !(s > lo && s < hi) {
                s = 0.5 * (sa + sb);
            }
            let guess = if s - sa < sb - s { pa.shot.p_start } else { pb.shot.p_start };
            let pm = self.probe(&(c + dir * s), Some(guess))?;
            let up = self.slope(&pm, &dir);
            let down = self.slope(&pm, &(-dir));
            if up >= 0.0 && down >= 0.0 {
                return Ok(pm);
            }
            if up < 0.0 {
                sa = s;
                fa = up;
                pa = pm;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                sb = s;
                fb = -down;
                pb = pm;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        Ok(if pa.g <= pb.g { pa } else { pb })
    }
}

/// Pointwise `T-_t f(x)` or `T+_t f(x)` by lattice search and one-sided derivative refinement.
pub fn point_lo(solver: &ActionSolver, f: &dyn ScalarField, x: &Vector, t: f64, dir: Direction, cfg: &LoConfig) -> Result<PointLo> {
    if !(t > 0.0) {
        return Err(Error::precondition("lax_oleinik", "time must be positive"));
    }
    let horizon = solver.t_max();
    if t > horizon {
        return Err(Error::HorizonExceeded { op: "lax_oleinik", t, horizon });
    }
    let d = f.dim();
    let inner = Inner { solver, f, x: *x, t, dir };
    let r = solver.cfg.lambda * t;
    let delta = cfg.lattice.min(r / 4.0);
    let k = (r / delta).floor() as i64;
    // lattice offsets, nearest first so that warm starts propagate outward
    let mut offs: Vec<Vec<i64>> = vec![];
    if d == 1 {
        offs.push(vec![0]);
        for i in 1..=k {
            offs.push(vec![i]);
        }
        for i in 1..=k {
            offs.push(vec![-i]);
        }
    } else {
        let mut all = vec![];
        for i in -k..=k {
            for j in -k..=k {
                if ((i * i + j * j) as f64).sqrt() * delta <= r + 1e-12 {
                    all.push(vec![i, j]);
                }
            }
        }
        all.sort_by_key(|o| (o[0].abs() + o[1].abs(), o[0], o[1]));
        offs = all;
    }
    let side = (2 * k + 1) as usize;
    let key = |o: &[i64]| -> usize {
        if d == 1 { (o[0] + k) as usize } else { (o[0] + k) as usize * side + (o[1] + k) as usize }
    };
    let mut table: Vec<Option<Probe>> = vec![None; if d == 1 { side } else { side * side }];
    for o in &offs {
        // warm start from the neighbour one step closer to the centre
        let mut parent = o.clone();
        if let Some(a) = (0..d).rev().max_by_key(|&a| parent[a].abs()).filter(|&a| parent[a] != 0) {
            parent[a] -= parent[a].signum();
        }
        let guess = if parent != *o { table[key(&parent)].as_ref().map(|p| p.shot.p_start) } else { None };
        let y = *x + Vector::from_slice(&o.iter().map(|&i| i as f64 * delta).collect::<Vec<_>>());
        table[key(o)] = inner.probe(&y, guess).ok();
    }
    let val = |o: &[i64]| -> f64 {
        if o.iter().any(|&i| i.abs() > k) {
            return f64::INFINITY;
        }
        table[key(o)].as_ref().map_or(f64::INFINITY, |p| p.g)
    };
    let mut minima: Vec<(f64, usize, Vec<i64>)> = vec![];
    for (n, o) in offs.iter().enumerate() {
        let g = val(o);
        if !g.is_finite() {
            continue;
        }
        let mut is_min = true;
        for a in 0..d {
            for s in [-1, 1] {
                let mut q = o.clone();
                q[a] += s;
                if val(&q) < g {
                    is_min = false;
                }
            }
        }
        if is_min {
            minima.push((g, n, o.clone()));
        }
    }
    if minima.is_empty() {
        return Err(Error::nonconv("lax_oleinik", "no admissible candidate converged"));
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    minima.truncate(cfg.max_optima.max(1));
    let mut refined: Vec<Probe> = vec![];
    for (_, _, o) in &minima {
        let start = table[key(o)].clone().expect("finite entry");
        let p = if d == 1 {
            inner.line_refine(start, &Vector::new1(1.0), delta, cfg)?
        } else {
            let mut p = start;
            let mut w = [delta, delta];
            for _ in 0..40 {
                let before = p.y;
                for a in 0..2 {
                    let prev = p.y;
                    p = inner.line_refine(p, &Vector::axis(2, a), w[a], cfg)?;
                    w[a] = (2.0 * (p.y - prev).max_abs()).max(1e-9).min(delta);
                }
                if (p.y - before).max_abs() <= cfg.refine_tol {
                    break;
                }
            }
            p
        };
        refined.push(p);
    }
    let best = refined.iter().map(|p| p.g).fold(f64::INFINITY, f64::min);
    let mut active: Vec<&Probe> = vec![];
    for p in &refined {
        if p.g <= best + cfg.eps_act && !active.iter().any(|q| (q.y - p.y).max_abs() <= 1e-9) {
            active.push(p);
        }
    }
    active.sort_by(|a, b| a.g.total_cmp(&b.g));
    if dir == Direction::Pos && cfg.hessian_test {
        for p in &active {
            if let (Some(hm), Some(d2)) = (f.hessian_max(&p.y), p.shot.d2y()) {
                let lmin = d2.sym_eigenvalues()[0];
                if hm - lmin >= 0.0 {
                    return Err(Error::HorizonExceeded { op: "lax_oleinik", t, horizon });
                }
            }
        }
    }
    let value = match dir {
        Direction::Neg => best,
        Direction::Pos => -best,
    };
    let grads: Vec<Covector> = active.iter().map(|p| p.out_grad).collect();
    let idx: Vec<usize> = (0..grads.len()).collect();
    let (grads, _) = dedup_vertices(&grads, &idx);
    Ok(PointLo { value, grads, optimizers: active.iter().map(|p| p.y).collect() })
}

/// Smooth kernel `u_j + A_t(y_j, .)` (or `u_j - A_t(., y_j)`), infinite outside the speed ball.
#[derive(Debug)]
pub struct KernelPiece {
    solver: Arc<ActionSolver>,
    node: TorusPoint,
    base: f64,
    t: f64,
    dir: Direction,
}

impl KernelPiece {
    fn shot(&self, x: &Vector) -> Option<Shot> {
        let y = nearest_lift_to(x, &self.node);
        if (y - *x).norm() > self.solver.cfg.lambda * self.t {
            return None;
        }
        match self.dir {
            Direction::Neg => self.solver.shoot(&y, x, self.t, None).ok(),
            Direction::Pos => self.solver.shoot(x, &y, self.t, None).ok(),
        }
    }

    fn outside(&self) -> f64 {
        match self.dir {
            Direction::Neg => f64::INFINITY,
            Direction::Pos => f64::NEG_INFINITY,
        }
    }
}

impl Piece for KernelPiece {
    fn dim(&self) -> usize {
        self.node.dim()
    }

    fn value(&self, x: &Vector) -> f64 {
        self.value_grad(x).0
    }

    fn grad(&self, x: &Vector) -> Covector {
        self.value_grad(x).1
    }

    fn value_grad(&self, x: &Vector) -> (f64, Covector) {
        match self.shot(x) {
            None => (self.outside(), Vector::zeros(self.dim())),
            Some(s) => match self.dir {
                Direction::Neg => (self.base + s.value, s.p_end),
                Direction::Pos => (self.base - s.value, s.p_start),
            },
        }
    }
}

/// Input of [`lax_oleinik`].
#[derive(Clone, Copy)]
pub enum LoInput<'a> {
    Grid(&'a GridField),
    Exact(&'a MinSmoothFn),
}

pub struct LoOutput {
    pub field: GridField,
    /// Active output gradients per node.
    pub grads: Vec<Vec<Covector>>,
    /// Kernel representation: min (neg) or max (pos) of per-node smooth kernels.
    pub wrapper: MinSmoothFn,
}

/// Lax-Oleinik operator evaluated on the nodes of `grid`.
pub fn lax_oleinik(solver: &ActionSolver, input: LoInput, grid: &Grid, t: f64, dir: Direction, cfg: &LoConfig) -> Result<LoOutput> {
    let horizon = solver.t_max();
    if !(t > 0.0) || t > horizon {
        return Err(Error::HorizonExceeded { op: "lax_oleinik", t, horizon });
    }
    let (values, grads, base): (Vec<f64>, Vec<Vec<Covector>>, Vec<f64>) = match input {
        LoInput::Grid(u) => {
            if u.grid != *grid {
                return Err(Error::precondition("lax_oleinik", "input grid differs from output grid"));
            }
            let table = KernelTable::build(solver, grid, t, cfg)?;
            let (v, g) = table.apply(&u.values, dir, cfg, true);
            (v, g.expect("gradients requested"), u.values.clone())
        }
        LoInput::Exact(phi) => {
            let res: Vec<Result<PointLo>> =
                (0..grid.len()).into_par_iter().map(|k| point_lo(solver, phi, &grid.node(k).lift(), t, dir, cfg)).collect();
            let mut v = vec![];
            let mut g = vec![];
            for r in res {
                let r = r?;
                v.push(r.value);
                g.push(r.grads);
            }
            (v, g, grid.nodes().map(|x| phi.value(&x)).collect())
        }
    };
    let shared = Arc::new(solver.clone());
    let pieces: Vec<Arc<dyn Piece>> = grid
        .nodes()
        .zip(&base)
        .map(|(y, &b)| Arc::new(KernelPiece { solver: shared.clone(), node: y, base: b, t, dir }) as Arc<dyn Piece>)
        .collect();
    let sense = match dir {
        Direction::Neg => Sense::Min,
        Direction::Pos => Sense::Max,
    };
    let wrapper = MinSmoothFn::with_sense(pieces, sense).with_eps_act(cfg.eps_act);
    Ok(LoOutput { field: GridField::new(grid.clone(), values)?, grads, wrapper })
}
