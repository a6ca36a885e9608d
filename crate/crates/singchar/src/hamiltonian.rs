//! Convex Hamiltonians `H(x,p) = K(p) + V(x)`, Legendre duality, energy and the
//! Hamiltonian flow.

use crate::error::{Error, Result};
use crate::fourier::TrigPoly;
use crate::geometry::{Covector, Mat, Tangent, TorusPoint, Vector};
use serde::{Deserialize, Serialize};

pub const LEGENDRE_TOL: f64 = 1e-12;
pub const LEGENDRE_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `K(p) = |p|^2 / 2`
    Mechanical,
    /// `K(p) = |p|^4 / 4 + |p|^2 / 2`
    Quartic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HamiltonianModel {
    pub kind: ModelKind,
    pub potential: TrigPoly,
    /// Second derivatives available; required by every flow-based operation.
    pub tonelli: bool,
}

impl HamiltonianModel {
    pub fn new(kind: ModelKind, potential: TrigPoly) -> Result<Self> {
        potential.validate().map_err(Error::Config)?;
        if !potential.is_periodic() {
            return Err(Error::Config("potential frequencies must be integers".into()));
        }
        Ok(HamiltonianModel { kind, potential, tonelli: true })
    }

    pub fn mechanical(potential: TrigPoly) -> Self {
        Self::new(ModelKind::Mechanical, potential).expect("valid potential")
    }

    pub fn quartic(potential: TrigPoly) -> Self {
        Self::new(ModelKind::Quartic, potential).expect("valid potential")
    }

    pub fn free(dim: usize) -> Self {
        Self::mechanical(TrigPoly::zero(dim))
    }

    pub fn dim(&self) -> usize {
        self.potential.dim
    }

    /// Same kinetic part, potential `V + extra`.
    pub fn with_extra_potential(&self, extra: &TrigPoly) -> Self {
        HamiltonianModel { kind: self.kind, potential: self.potential.add(extra), tonelli: self.tonelli }
    }

    pub fn kinetic(&self, p: &Covector) -> f64 {
        let r2 = p.norm_sq();
        match self.kind {
            ModelKind::Mechanical => 0.5 * r2,
            ModelKind::Quartic => 0.25 * r2 * r2 + 0.5 * r2,
        }
    }

    pub fn h(&self, x: &Vector, p: &Covector) -> f64 {
        self.kinetic(p) + self.potential.value(x)
    }

    pub fn h_p(&self, _x: &Vector, p: &Covector) -> Tangent {
        match self.kind {
            ModelKind::Mechanical => *p,
            ModelKind::Quartic => *p * (p.norm_sq() + 1.0),
        }
    }

    pub fn h_x(&self, x: &Vector, _p: &Covector) -> Covector {
        self.potential.grad(x)
    }

    pub fn h_pp(&self, _x: &Vector, p: &Covector) -> Mat {
        match self.kind {
            ModelKind::Mechanical => Mat::identity(self.dim()),
            ModelKind::Quartic => {
                Mat::scaled_identity(self.dim(), p.norm_sq() + 1.0).add(&Mat::outer(p, p).scale(2.0))
            }
        }
    }

    pub fn h_xx(&self, x: &Vector, _p: &Covector) -> Mat {
        self.potential.hessian(x)
    }

    /// Mixed derivative `d/dx (H_p)`; zero for separable models.
    pub fn h_px(&self, _x: &Vector, _p: &Covector) -> Mat {
        Mat::zeros(self.dim())
    }

    pub fn has_closed_form_lagrangian(&self) -> bool {
        self.kind == ModelKind::Mechanical
    }

    /// `(L(x,v), p*)` when a closed form exists.
    pub fn closed_form_lagrangian(&self, x: &Vector, v: &Tangent) -> Option<(f64, Covector)> {
        match self.kind {
            ModelKind::Mechanical => Some((0.5 * v.norm_sq() - self.potential.value(x), *v)),
            ModelKind::Quartic => None,
        }
    }

    /// Inverse of the radial map `r -> K'(r)`, i.e. the momentum norm with `|H_p| = s`.
    pub fn momentum_for_speed(&self, s: f64) -> f64 {
        match self.kind {
            ModelKind::Mechanical => s,
            ModelKind::Quartic => {
                // r^3 + r = s, Newton from a safe start
                let mut r = s.cbrt().min(s);
                for _ in 0..100 {
                    let f = r * r * r + r - s;
                    let step = f / (3.0 * r * r + 1.0);
                    r -= step;
                    if step.abs() <= 1e-15 * (1.0 + r) {
                        break;
                    }
                }
                r
            }
        }
    }

    /// Speed `|H_p|` at momentum norm `r`.
    pub fn speed_at(&self, r: f64) -> f64 {
        match self.kind {
            ModelKind::Mechanical => r,
            ModelKind::Quartic => r * r * r + r,
        }
    }

    /// Bound on the Lipschitz constant of weak KAM solutions: `|Du|` solves
    /// `K(Du) = c - V <= max V - min V`.
    pub fn weak_kam_lipschitz_bound(&self) -> f64 {
        let (lo, hi) = self.potential.range_bound();
        let osc = (hi - lo).max(0.0);
        match self.kind {
            ModelKind::Mechanical => (2.0 * osc).sqrt(),
            // r^4/4 + r^2/2 = osc  =>  r^2 = -1 + sqrt(1 + 4 osc)
            ModelKind::Quartic => (-1.0 + (1.0 + 4.0 * osc).sqrt()).sqrt(),
        }
    }

    /// Sampled midpoint test of strict convexity in `p` and growth ratio test of
    /// superlinearity on `|p| in {1, 10, 100}`.
    pub fn check_tonelli(&self, samples: usize) -> std::result::Result<(), String> {
        let d = self.dim();
        for k in 0..samples {
            let s = (k as f64 + 0.5) / samples as f64;
            let x = if d == 1 { Vector::new1(s) } else { Vector::new2(s, (0.618 * k as f64).fract()) };
            let p = Vector::from_slice(&vec![-3.0 + 6.0 * s; d]);
            let q = Vector::from_slice(&vec![2.0 - 5.0 * s * s; d]);
            let m = (p + q) * 0.5;
            if (p - q).norm() > 1e-9 && self.h(&x, &m) >= 0.5 * (self.h(&x, &p) + self.h(&x, &q)) {
                return Err(format!("midpoint convexity fails at x={x:?}"));
            }
            let mut prev = f64::NEG_INFINITY;
            for r in [1.0, 10.0, 100.0] {
                let ratio = self.h(&x, &(Vector::axis(d, 0) * r)) / r;
                if ratio <= prev {
                    return Err("growth ratio H/|p| not increasing".into());
                }
                prev = ratio;
            }
        }
        Ok(())
    }
}

/// Value and maximiser of `sup_p <p,v> - H(x,p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LagrangianValue {
    pub l: f64,
    pub p_star: Covector,
}

/// Legendre transform of the model at `(x, v)`.
pub fn legendre(model: &HamiltonianModel, x: &TorusPoint, v: &Tangent) -> Result<LagrangianValue> {
    legendre_at(model, &x.lift(), v)
}

pub(crate) fn legendre_at(model: &HamiltonianModel, x: &Vector, v: &Tangent) -> Result<LagrangianValue> {
    if let Some((l, p)) = model.closed_form_lagrangian(x, v) {
        return Ok(LagrangianValue { l, p_star: p });
    }
    // radial kinetic energy: p* is parallel to v with |H_p(p*)| = |v|
    let s = v.norm();
    if s.is_finite() {
        let p = if s > 0.0 { *v * (model.momentum_for_speed(s) / s) } else { Vector::zeros(model.dim()) };
        return Ok(LagrangianValue { l: p.dot(v) - model.h(x, &p), p_star: p });
    }
    legendre_newton(model, x, v)
}

/// Damped Newton ascent on `p -> <p,v> - H(x,p)` from `p = 0`.
pub fn legendre_newton(model: &HamiltonianModel, x: &Vector, v: &Tangent) -> Result<LagrangianValue> {
    let obj = |p: &Covector| p.dot(v) - model.h(x, p);
    let mut p = Vector::zeros(model.dim());
    let mut f = obj(&p);
    for _ in 0..LEGENDRE_MAX_ITER {
        let g = *v - model.h_p(x, &p);
        if g.norm() <= LEGENDRE_TOL * (1.0 + v.norm()) {
            return Ok(LagrangianValue { l: f, p_star: p });
        }
        let step = model
            .h_pp(x, &p)
            .solve(&g)
            .ok_or_else(|| Error::nonconv("legendre", "singular H_pp"))?;
        let mut damp = 1.0;
        loop {
            let cand = p + step * damp;
            let fc = obj(&cand);
            if fc > f || damp < 1e-12 {
                if fc >= f {
                    p = cand;
                    f = fc;
                }
                break;
            }
            damp *= 0.5;
        }
        if damp < 1e-12 {
            // no ascent possible: accept if stationary to working precision
            let g = *v - model.h_p(x, &p);
            if g.norm() <= 1e3 * LEGENDRE_TOL * (1.0 + v.norm()) {
                return Ok(LagrangianValue { l: f, p_star: p });
            }
            return Err(Error::nonconv("legendre", format!("stalled with gradient {}", g.norm())));
        }
    }
    Err(Error::nonconv("legendre", "iteration limit"))
}

/// `E(x,v) = L_v(x,v).v - L(x,v) = H(x, p*)`.
pub fn energy(model: &HamiltonianModel, x: &TorusPoint, v: &Tangent) -> Result<f64> {
    let lv = legendre(model, x, v)?;
    Ok(lv.p_star.dot(v) - lv.l)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowState {
    pub x: TorusPoint,
    pub p: Covector,
    pub t: f64,
}

/// Fixed-step RK4 for `(X', P') = (H_p, -H_x)`; `t` may be negative.
pub fn hamiltonian_flow(
    model: &HamiltonianModel,
    x0: &TorusPoint,
    p0: &Covector,
    t: f64,
    steps: usize,
) -> Result<Vec<FlowState>> {
    if !model.tonelli {
        return Err(Error::precondition("hamiltonian_flow", "model is not flagged Tonelli"));
    }
    if steps == 0 {
        return Err(Error::precondition("hamiltonian_flow", "steps must be positive"));
    }
    let mut out = vec![FlowState { x: *x0, p: *p0, t: 0.0 }];
    if t == 0.0 {
        return Ok(out);
    }
    let dt = t / steps as f64;
    let arc = ArcIntegrator::new(model, false);
    let mut s = arc.initial(&x0.lift(), p0);
    for k in 1..=steps {
        arc.step(&mut s, dt);
        let (x, p) = arc.unpack(&s);
        out.push(FlowState { x: TorusPoint::new(x), p, t: dt * k as f64 });
    }
    Ok(out)
}

const STATE_LEN: usize = 21;

/// RK4 integrator on the lifted phase space, optionally with action and tangent map.
///
/// State layout: `x (d) | p (d) | action | J (2d x 2d, row-major)`.
pub(crate) struct ArcIntegrator<'a> {
    model: &'a HamiltonianModel,
    d: usize,
    tangent: bool,
}

impl<'a> ArcIntegrator<'a> {
    pub fn new(model: &'a HamiltonianModel, tangent: bool) -> Self {
        ArcIntegrator { model, d: model.dim(), tangent }
    }

    pub fn initial(&self, x: &Vector, p: &Covector) -> [f64; STATE_LEN] {
        let d = self.d;
        let mut s = [0.0; STATE_LEN];
        for i in 0..d {
            s[i] = x[i];
            s[d + i] = p[i];
        }
        if self.tangent {
            let n = 2 * d;
            for i in 0..n {
                s[2 * d + 1 + i * n + i] = 1.0;
            }
        }
        s
    }

    pub fn unpack(&self, s: &[f64; STATE_LEN]) -> (Vector, Covector) {
        let d = self.d;
        (Vector::from_slice(&s[..d]), Vector::from_slice(&s[d..2 * d]))
    }

    pub fn action(&self, s: &[f64; STATE_LEN]) -> f64 {
        s[2 * self.d]
    }

    /// Blocks of the tangent map: `(dX/dx0, dX/dp0, dP/dx0, dP/dp0)`.
    pub fn jacobian_blocks(&self, s: &[f64; STATE_LEN]) -> (Mat, Mat, Mat, Mat) {
        let d = self.d;
        let n = 2 * d;
        let at = |i: usize, j: usize| s[2 * d + 1 + i * n + j];
        let mut blocks = [Mat::zeros(d); 4];
        for i in 0..d {
            for j in 0..d {
                blocks[0].set(i, j, at(i, j));
                blocks[1].set(i, j, at(i, d + j));
                blocks[2].set(i, j, at(d + i, j));
                blocks[3].set(i, j, at(d + i, d + j));
            }
        }
        (blocks[0], blocks[1], blocks[2], blocks[3])
    }

    fn rhs(&self, s: &[f64; STATE_LEN]) -> [f64; STATE_LEN] {
        let d = self.d;
        let (x, p) = self.unpack(s);
        let hp = self.model.h_p(&x, &p);
        let hx = self.model.h_x(&x, &p);
        let mut out = [0.0; STATE_LEN];
        for i in 0..d {
            out[i] = hp[i];
            out[d + i] = -hx[i];
        }
        out[2 * d] = p.dot(&hp) - self.model.h(&x, &p);
        if self.tangent {
            let n = 2 * d;
            let hpp = self.model.h_pp(&x, &p);
            let hxx = self.model.h_xx(&x, &p);
            let hpx = self.model.h_px(&x, &p);
            // DF = [[H_px, H_pp], [-H_xx, -H_px^T]]
            let mut df = [[0.0; 4]; 4];
            for i in 0..d {
                for j in 0..d {
                    df[i][j] = hpx.get(i, j);
                    df[i][d + j] = hpp.get(i, j);
                    df[d + i][j] = -hxx.get(i, j);
                    df[d + i][d + j] = -hpx.get(j, i);
                }
            }
            let base = 2 * d + 1;
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += df[i][k] * s[base + k * n + j];
                    }
                    out[base + i * n + j] = acc;
                }
            }
        }
        out
    }

    fn used_len(&self) -> usize {
        let n = 2 * self.d;
        if self.tangent { 2 * self.d + 1 + n * n } else { 2 * self.d + 1 }
    }

    pub fn step(&self, s: &mut [f64; STATE_LEN], h: f64) {
        let len = self.used_len();
        let k1 = self.rhs(s);
        let mut tmp = *s;
        for i in 0..len {
            tmp[i] = s[i] + 0.5 * h * k1[i];
        }
        let k2 = self.rhs(&tmp);
        for i in 0..len {
            tmp[i] = s[i] + 0.5 * h * k2[i];
        }
        let k3 = self.rhs(&tmp);
        for i in 0..len {
            tmp[i] = s[i] + h * k3[i];
        }
        let k4 = self.rhs(&tmp);
        for i in 0..len {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    pub fn run(&self, x: &Vector, p: &Covector, t: f64, steps: usize) -> [f64; STATE_LEN] {
        let mut s = self.initial(x, p);
        let h = t / steps as f64;
        for _ in 0..steps {
            self.step(&mut s, h);
        }
        s
    }
}
