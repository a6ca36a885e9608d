//! Fundamental solutions `A_t(x,y)`: shooting on the initial momentum, and a
//! discrete midpoint-rule action minimised by preconditioned descent.

use crate::error::{Error, Result};
use crate::geometry::{Covector, Mat, TorusPoint, Vector, nearest_lift, torus_distance};
use crate::hamiltonian::{ArcIntegrator, HamiltonianModel, legendre_at};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Time-sampled path on the torus. Points are kept both reduced and as a continuous lift.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub times: Vec<f64>,
    pub points: Vec<TorusPoint>,
    #[serde(skip)]
    pub lifts: Vec<Vector>,
    pub momenta: Option<Vec<Covector>>,
    /// Largest observed `|gap| / dt` between consecutive samples.
    pub speed_bound: f64,
}

impl Curve {
    pub fn from_lifts(times: Vec<f64>, lifts: Vec<Vector>, momenta: Option<Vec<Covector>>) -> Result<Self> {
        if times.is_empty() || times.len() != lifts.len() {
            return Err(Error::precondition("curve", "times and points must be nonempty and aligned"));
        }
        if let Some(m) = &momenta
            && m.len() != times.len()
        {
            return Err(Error::precondition("curve", "momenta not aligned with samples"));
        }
        let mut speed: f64 = 0.0;
        for k in 1..times.len() {
            let dt = times[k] - times[k - 1];
            if dt <= 0.0 {
                return Err(Error::precondition("curve", "times must be strictly increasing"));
            }
            speed = speed.max((lifts[k] - lifts[k - 1]).norm() / dt);
        }
        let points = lifts.iter().map(|v| TorusPoint::new(*v)).collect();
        Ok(Curve { times, points, lifts, momenta, speed_bound: speed })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.lifts[0].dim()
    }

    /// Piecewise-linear position at time `t`, clamped to the sampled range.
    pub fn lift_at(&self, t: f64) -> Vector {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.lifts[0];
        }
        if t >= self.times[n - 1] {
            return self.lifts[n - 1];
        }
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.lifts[k] * (1.0 - w) + self.lifts[k + 1] * w
    }

    pub fn point_at(&self, t: f64) -> TorusPoint {
        TorusPoint::new(self.lift_at(t))
    }

    /// Sup over the union of both sample grids of the torus distance between the curves.
    pub fn sup_distance(&self, other: &Curve) -> f64 {
        let mut d: f64 = 0.0;
        for &t in self.times.iter().chain(other.times.iter()) {
            d = d.max(torus_distance(&self.point_at(t), &other.point_at(t)));
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMethod {
    Shooting,
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionConfig {
    /// Speed bound `lambda`: admissible displacement is `lambda * t`.
    pub lambda: f64,
    pub segments: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub steps_per_unit: f64,
    pub min_steps: usize,
    pub descent_max_iter: usize,
    pub descent_tol: f64,
    pub horizon_cap: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig {
            lambda: 3.0,
            segments: 64,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            steps_per_unit: 1000.0,
            min_steps: 8,
            descent_max_iter: 4000,
            descent_tol: 1e-11,
            horizon_cap: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionResult {
    pub value: f64,
    pub minimizer: Curve,
    pub dy_a: Covector,
    pub dx_a: Covector,
    pub dt_a: f64,
    /// Lift of the endpoint actually joined to the canonical lift of `x`.
    pub y_lift: Vector,
}

/// Converged two-point shot between lifted endpoints.
#[derive(Clone, Copy, Debug)]
pub struct Shot {
    pub value: f64,
    pub p_start: Covector,
    pub p_end: Covector,
    pub dxdp: Mat,
    pub dpdp: Mat,
    pub iterations: usize,
}

impl Shot {
    /// `D_y^2 A_t(x, .)` at the endpoint: `dP/dp0 (dX/dp0)^{-1}`.
    pub fn d2y(&self) -> Option<Mat> {
        Some(self.dpdp.mul(&self.dxdp.inverse()?))
    }
}

#[derive(Debug)]
pub struct ActionSolver {
    pub model: HamiltonianModel,
    pub cfg: ActionConfig,
    t_max: OnceLock<f64>,
}

impl Clone for ActionSolver {
    fn clone(&self) -> Self {
        let s = ActionSolver::new(self.model.clone(), self.cfg.clone());
        if let Some(t) = self.t_max.get() {
            let _ = s.t_max.set(*t);
        }
        s
    }
}

impl ActionSolver {
    pub fn new(model: HamiltonianModel, cfg: ActionConfig) -> Self {
        ActionSolver { model, cfg, t_max: OnceLock::new() }
    }

    pub fn steps_for(&self, t: f64) -> usize {
        ((t.abs() * self.cfg.steps_per_unit).ceil() as usize).max(self.cfg.min_steps)
    }

    /// Straight-line initial momentum.
    pub fn straight_guess(&self, x: &Vector, y: &Vector, t: f64) -> Result<Covector> {
        let v = (*y - *x) * (1.0 / t);
        Ok(legendre_at(&self.model, &(*x * 0.5 + *y * 0.5), &v)?.p_star)
    }

    /// Newton on `p0` so that the flow from `x` reaches `y` at time `t` (lifted coordinates).
    pub fn shoot(&self, x: &Vector, y: &Vector, t: f64, guess: Option<Covector>) -> Result<Shot> {
        if !self.model.tonelli {
            return Err(Error::precondition("shoot", "model is not flagged Tonelli"));
        }
        if t <= 0.0 {
            return Err(Error::precondition("shoot", "time must be positive"));
        }
        let steps = self.steps_for(t);
        let arc = ArcIntegrator::new(&self.model, true);
        let mut p = match guess {
            Some(g) => g,
            None => self.straight_guess(x, y, t)?,
        };
        let mut s = arc.run(x, &p, t, steps);
        let gap = |s: &[f64; 21]| arc.unpack(s).0 - *y;
        let mut f = gap(&s);
        let tol = self.cfg.newton_tol;
        for it in 0..=self.cfg.newton_max_iter {
            if f.norm() <= tol {
                let (_, pe) = arc.unpack(&s);
                let (_, dxdp, _, dpdp) = arc.jacobian_blocks(&s);
                return Ok(Shot { value: arc.action(&s), p_start: p, p_end: pe, dxdp, dpdp, iterations: it });
            }
            if it == self.cfg.newton_max_iter {
                break;
            }
            let (_, dxdp, _, _) = arc.jacobian_blocks(&s);
            let Some(step) = dxdp.solve(&(-f)) else {
                return Err(Error::nonconv("shoot", "singular tangent map (conjugate point)"));
            };
            if !step.is_finite() {
                return Err(Error::nonconv("shoot", "non-finite Newton step"));
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = p + step * alpha;
                let sc = arc.run(x, &cand, t, steps);
                let fc = gap(&sc);
                if fc.is_finite() && fc.norm() < f.norm() {
                    p = cand;
                    s = sc;
                    f = fc;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(Error::nonconv("shoot", format!("damping stalled, gap {:.3e}", f.norm())));
            }
        }
        Err(Error::nonconv("shoot", format!("endpoint gap {:.3e} after {} iterations", f.norm(), self.cfg.newton_max_iter)))
    }

    /// Sampled states of the flow from `(x, p0)` (lifted).
    pub fn trajectory(&self, x: &Vector, p0: &Covector, t: f64) -> Result<Curve> {
        let steps = self.steps_for(t);
        let arc = ArcIntegrator::new(&self.model, false);
        let mut s = arc.initial(x, p0);
        let h = t / steps as f64;
        let mut times = vec![0.0];
        let mut lifts = vec![*x];
        let mut moms = vec![*p0];
        for k in 1..=steps {
            arc.step(&mut s, h);
            let (xk, pk) = arc.unpack(&s);
            times.push(h * k as f64);
            lifts.push(xk);
            moms.push(pk);
        }
        Curve::from_lifts(times, lifts, Some(moms))
    }

    fn lift_candidates(&self, x: &TorusPoint, y: &TorusPoint, t: f64) -> Vec<(bool, Vector)> {
        let base = nearest_lift(x, y);
        let xl = x.lift();
        let d = x.dim();
        let shifts: Vec<Vec<f64>> = if d == 1 {
            vec![vec![-1.0], vec![0.0], vec![1.0]]
        } else {
            let mut v = vec![];
            for a in [-1.0, 0.0, 1.0] {
                for b in [-1.0, 0.0, 1.0] {
                    v.push(vec![a, b]);
                }
            }
            v
        };
        let mut out = vec![];
        for s in shifts {
            let nearest = s.iter().all(|&c| c == 0.0);
            let yl = base + Vector::from_slice(&s);
            if nearest || (yl - xl).norm() <= self.cfg.lambda * t {
                out.push((nearest, yl));
            }
        }
        out
    }

    fn check_request(&self, x: &TorusPoint, y: &TorusPoint, t: f64) -> Result<()> {
        if x.dim() != self.model.dim() || y.dim() != self.model.dim() {
            return Err(Error::precondition("fundamental_solution", "dimension mismatch"));
        }
        if !(t > 0.0) {
            return Err(Error::precondition("fundamental_solution", "time must be positive"));
        }
        let h = self.t_max();
        if t > h {
            return Err(Error::HorizonExceeded { op: "fundamental_solution", t, horizon: h });
        }
        let d = torus_distance(x, y);
        if d > self.cfg.lambda * t {
            return Err(Error::SpeedBoundExceeded {
                op: "fundamental_solution",
                detail: format!("distance {d} > lambda*t = {}", self.cfg.lambda * t),
            });
        }
        Ok(())
    }

    pub fn fundamental_solution(&self, x: &TorusPoint, y: &TorusPoint, t: f64, method: ActionMethod) -> Result<ActionResult> {
        self.check_request(x, y, t)?;
        let xl = x.lift();
        let mut best: Option<ActionResult> = None;
        for (nearest, yl) in self.lift_candidates(x, y, t) {
            let r = match method {
                ActionMethod::Shooting => self.shooting_result(&xl, &yl, t),
                ActionMethod::Discrete => self.discrete(&xl, &yl, t),
            };
            match r {
                Ok(r) => {
                    if best.as_ref().is_none_or(|b| r.value < b.value) {
                        best = Some(r);
                    }
                }
                Err(e) if nearest => return Err(e),
                Err(_) => {}
            }
        }
        best.ok_or_else(|| Error::nonconv("fundamental_solution", "no lift converged"))
    }

    /// Shooting result between lifted endpoints, with the derivative identities verified.
    pub fn shooting_result(&self, xl: &Vector, yl: &Vector, t: f64) -> Result<ActionResult> {
        let shot = self.shoot(xl, yl, t, None)?;
        let curve = self.trajectory(xl, &shot.p_start, t)?;
        let n = curve.len() - 1;
        let xe = curve.lifts[n];
        let ve = self.model.h_p(&xe, &shot.p_end);
        let lv = legendre_at(&self.model, &xe, &ve)?.p_star;
        let v0 = self.model.h_p(xl, &shot.p_start);
        let lv0 = legendre_at(&self.model, xl, &v0)?.p_star;
        let e = self.model.h(&xe, &shot.p_end);
        let tol = 1e-6 * (1.0 + shot.p_end.max_abs());
        if (lv - shot.p_end).max_abs() > tol || (lv0 - shot.p_start).max_abs() > tol {
            return Err(Error::nonconv("fundamental_solution", "endpoint momenta disagree with L_v"));
        }
        Ok(ActionResult { value: shot.value, minimizer: curve, dy_a: shot.p_end, dx_a: -shot.p_start, dt_a: -e, y_lift: *yl })
    }

    /// Riemann-sum action over `m` segments with midpoint rule, minimised over interior points.
    pub fn discrete(&self, xl: &Vector, yl: &Vector, t: f64) -> Result<ActionResult> {
        let m = self.cfg.segments.max(2);
        let d = xl.dim();
        let dt = t / m as f64;
        let mut pts: Vec<Vector> = (0..=m).map(|k| *xl + (*yl - *xl) * (k as f64 / m as f64)).collect();
        let eval = |pts: &[Vector]| -> Result<(f64, Vec<Vector>)> {
            let mut s = 0.0;
            let mut g = vec![Vector::zeros(d); m + 1];
            for k in 0..m {
                let mid = (pts[k] + pts[k + 1]) * 0.5;
                let v = (pts[k + 1] - pts[k]) * (1.0 / dt);
                let lv = legendre_at(&self.model, &mid, &v)?;
                s += dt * lv.l;
                let lx = -self.model.h_x(&mid, &lv.p_star);
                g[k] += lx * (0.5 * dt) - lv.p_star;
                g[k + 1] += lx * (0.5 * dt) + lv.p_star;
            }
            Ok((s, g))
        };
        // preconditioner: (1/dt) tridiag(-1, 2, -1) on interior nodes, per axis
        let precond = |g: &[Vector]| -> Vec<Vector> {
            let n = m - 1;
            let mut out = vec![Vector::zeros(d); m + 1];
            for a in 0..d {
                let rhs: Vec<f64> = (1..m).map(|k| g[k][a] * dt).collect();
                let sol = thomas_constant(n, -1.0, 2.0, -1.0, &rhs);
                for k in 0..n {
                    out[k + 1][a] = sol[k];
                }
            }
            out
        };
        let (mut s, mut g) = eval(&pts)?;
        let mut converged = false;
        for _ in 0..self.cfg.descent_max_iter {
            let dir = precond(&g);
            let slope: f64 = (1..m).map(|k| dir[k].dot(&g[k])).sum();
            if slope.sqrt() <= self.cfg.descent_tol * (1.0 + s.abs()).sqrt() {
                converged = true;
                break;
            }
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let cand: Vec<Vector> = (0..=m).map(|k| pts[k] - dir[k] * alpha).collect();
                // below rounding level the Armijo test is meaningless; accept non-increase
                let tiny = alpha * slope <= 1e-14 * (1.0 + s.abs());
                if let Ok((sc, gc)) = eval(&cand)
                    && (sc <= s - 1e-4 * alpha * slope || (tiny && sc <= s + 1e-15 * (1.0 + s.abs())))
                {
                    pts = cand;
                    s = sc;
                    g = gc;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                // no representable decrease left
                converged = slope.sqrt() <= 1e-7 * (1.0 + s.abs()).sqrt();
                break;
            }
        }
        if !converged {
            return Err(Error::nonconv("discrete_action", "descent did not reach tolerance"));
        }
        let seg = |k: usize| -> Result<(f64, Covector, Vector)> {
            let mid = (pts[k] + pts[k + 1]) * 0.5;
            let v = (pts[k + 1] - pts[k]) * (1.0 / dt);
            let lv = legendre_at(&self.model, &mid, &v)?;
            Ok((lv.l, lv.p_star, v))
        };
        let (l_last, p_seg_last, v_last) = seg(m - 1)?;
        let energy = p_seg_last.dot(&v_last) - l_last;
        // segment momenta sit at half steps; extrapolate linearly to the endpoints
        let p_first = seg(0)?.1 * 1.5 - seg(1)?.1 * 0.5;
        let p_last = p_seg_last * 1.5 - seg(m - 2)?.1 * 0.5;
        let mut moms = vec![p_first];
        for k in 1..m {
            moms.push((seg(k - 1)?.1 + seg(k)?.1) * 0.5);
        }
        moms.push(p_last);
        let times = (0..=m).map(|k| k as f64 * dt).collect();
        let curve = Curve::from_lifts(times, pts, Some(moms))?;
        Ok(ActionResult { value: s, minimizer: curve, dy_a: p_last, dx_a: -p_first, dt_a: -energy, y_lift: *yl })
    }

    fn horizon_ok(&self, t: f64) -> bool {
        let d = self.model.dim();
        let lam = self.cfg.lambda;
        let bases = [0.0, 0.25, 0.5, 0.75];
        let mut dirs: Vec<Vector> = vec![Vector::axis(d, 0)];
        if d == 2 {
            dirs.push(Vector::axis(2, 1));
            dirs.push(Vector::new2(1.0, 1.0) * std::f64::consts::FRAC_1_SQRT_2);
            dirs.push(Vector::new2(1.0, -1.0) * std::f64::consts::FRAC_1_SQRT_2);
        }
        let xs: Vec<Vector> = if d == 1 {
            bases.iter().map(|&a| Vector::new1(a)).collect()
        } else {
            bases.iter().flat_map(|&a| bases.iter().map(move |&b| Vector::new2(a, b))).collect()
        };
        for x in &xs {
            for dir in &dirs {
                for k in -4..=4 {
                    let y = *x + *dir * (k as f64 * lam * t / 4.0);
                    match self.shoot(x, &y, t, None) {
                        Ok(s) if s.dxdp.det() > 0.0 => {}
                        _ => return false,
                    }
                }
            }
        }
        true
    }

    /// Measured horizon: largest tested `t` for which shooting converges everywhere.
    pub fn t_max(&self) -> f64 {
        *self.t_max.get_or_init(|| {
            let cap = self.cfg.horizon_cap;
            if self.horizon_ok(cap) {
                return cap;
            }
            let (mut lo, mut hi) = (1e-3, cap);
            if !self.horizon_ok(lo) {
                return 0.0;
            }
            for _ in 0..12 {
                let mid = 0.5 * (lo + hi);
                if self.horizon_ok(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        })
    }
}

/// Solve a constant tridiagonal system `a x_{k-1} + b x_k + c x_{k+1} = r_k`.
fn thomas_constant(n: usize, a: f64, b: f64, c: f64, r: &[f64]) -> Vec<f64> {
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c / b;
    dp[0] = r[0] / b;
    for i in 1..n {
        let den = b - a * cp[i - 1];
        cp[i] = c / den;
        dp[i] = (r[i] - a * dp[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    pub t: f64,
    /// Smallest Hessian eigenvalue of `y -> A_t(x,y)` times `t`.
    pub min_eig_t: f64,
    pub max_eig_t: f64,
    pub samples: usize,
}

/// Finite-difference Hessians of `y -> A_t(x, y)` on `B(x, lambda t)`.
pub fn action_regularity_check(solver: &ActionSolver, x: &TorusPoint, t: f64, lambda: f64, samples: usize) -> Result<RegularityReport> {
    let h = solver.t_max();
    if t > h {
        return Err(Error::HorizonExceeded { op: "action_regularity_check", t, horizon: h });
    }
    let d = x.dim();
    let xl = x.lift();
    let fd = 1e-5 * t.max(1e-3);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let n = samples.max(1);
    for k in 0..n {
        let r = 0.9 * lambda * t * (k as f64 / n as f64);
        let ang = 2.399963 * k as f64;
        let off = if d == 1 {
            Vector::new1(if k % 2 == 0 { r } else { -r })
        } else {
            Vector::new2(r * ang.cos(), r * ang.sin())
        };
        let y = xl + off;
        let mut hess = Mat::zeros(d);
        for j in 0..d {
            let e = Vector::axis(d, j) * fd;
            let gp = solver.shoot(&xl, &(y + e), t, None)?.p_end;
            let gm = solver.shoot(&xl, &(y - e), t, None)?.p_end;
            for i in 0..d {
                hess.set(i, j, (gp[i] - gm[i]) / (2.0 * fd));
            }
        }
        // symmetrise before the eigen solve
        if d == 2 {
            let s = 0.5 * (hess.get(0, 1) + hess.get(1, 0));
            hess.set(0, 1, s);
            hess.set(1, 0, s);
        }
        for ev in hess.sym_eigenvalues() {
            lo = lo.min(ev * t);
            hi = hi.max(ev * t);
        }
    }
    Ok(RegularityReport { t, min_eig_t: lo, max_eig_t: hi, samples: n })
}
