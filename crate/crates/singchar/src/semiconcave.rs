//! Semiconcave functions represented as the pointwise minimum of smooth pieces.

use crate::fourier::TrigPoly;
use crate::geometry::{Covector, Mat, TorusPoint, Vector, nearest_lift};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Debug;
use std::sync::Arc;

pub const EPS_ACT: f64 = 1e-9;

/// A smooth scalar function evaluated on canonical lifts.
pub trait Piece: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn grad(&self, x: &Vector) -> Covector;
    fn value_grad(&self, x: &Vector) -> (f64, Covector) {
        (self.value(x), self.grad(x))
    }
    fn hessian(&self, _x: &Vector) -> Option<Mat> {
        None
    }
    fn hessian_bound(&self) -> Option<f64> {
        None
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct TrigPiece(pub TrigPoly);

impl Piece for TrigPiece {
    fn dim(&self) -> usize {
        self.0.dim
    }
    fn value(&self, x: &Vector) -> f64 {
        self.0.value(x)
    }
    fn grad(&self, x: &Vector) -> Covector {
        self.0.grad(x)
    }
    fn hessian(&self, x: &Vector) -> Option<Mat> {
        Some(self.0.hessian(x))
    }
    fn hessian_bound(&self) -> Option<f64> {
        Some(self.0.hessian_bound())
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.0.lipschitz_bound())
    }
}

/// Whether the function is the minimum (semiconcave) or maximum (semiconvex) of its pieces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Clone, Debug)]
pub struct MinSmoothFn {
    dim: usize,
    pieces: Vec<Arc<dyn Piece>>,
    eps_act: f64,
    sense: Sense,
}

/// Value of the function together with its active pieces and their gradients.
#[derive(Clone, Debug)]
pub struct Local {
    pub value: f64,
    pub active: Vec<usize>,
    pub grads: Vec<Covector>,
    pub sense: Sense,
}

impl Local {
    /// One-sided derivative `lim_{s->0+} (f(x + s e) - f(x)) / s`.
    pub fn one_sided(&self, e: &Vector) -> f64 {
        let it = self.grads.iter().map(|g| g.dot(e));
        match self.sense {
            Sense::Min => it.fold(f64::INFINITY, f64::min),
            Sense::Max => it.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl MinSmoothFn {
    pub fn new(pieces: Vec<Arc<dyn Piece>>) -> Self {
        Self::with_sense(pieces, Sense::Min)
    }

    pub fn with_sense(pieces: Vec<Arc<dyn Piece>>, sense: Sense) -> Self {
        assert!(!pieces.is_empty(), "at least one piece required");
        let dim = pieces[0].dim();
        assert!(pieces.iter().all(|p| p.dim() == dim), "pieces must share a dimension");
        MinSmoothFn { dim, pieces, eps_act: EPS_ACT, sense }
    }

    pub fn from_trig(polys: Vec<TrigPoly>) -> Self {
        Self::new(polys.into_iter().map(|p| Arc::new(TrigPiece(p)) as Arc<dyn Piece>).collect())
    }

    pub fn with_eps_act(mut self, eps: f64) -> Self {
        self.eps_act = eps;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pieces(&self) -> &[Arc<dyn Piece>] {
        &self.pieces
    }

    pub fn eps_act(&self) -> f64 {
        self.eps_act
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    fn better(&self, a: f64, b: f64) -> bool {
        match self.sense {
            Sense::Min => a < b,
            Sense::Max => a > b,
        }
    }

    pub fn value(&self, x: &TorusPoint) -> f64 {
        let xl = x.lift();
        let mut best = self.pieces[0].value(&xl);
        for p in &self.pieces[1..] {
            let v = p.value(&xl);
            if self.better(v, best) || best.is_nan() {
                best = v;
            }
        }
        best
    }

    /// Piece values at `x` (canonical lift).
    pub fn piece_values(&self, x: &TorusPoint) -> Vec<f64> {
        let xl = x.lift();
        self.pieces.iter().map(|p| p.value(&xl)).collect()
    }

    /// Active set with an explicit activity tolerance.
    pub fn local_with_tol(&self, x: &TorusPoint, eps: f64) -> Local {
        let xl = x.lift();
        let vals: Vec<f64> = self.pieces.iter().map(|p| p.value(&xl)).collect();
        let best = vals.iter().copied().fold(
            match self.sense {
                Sense::Min => f64::INFINITY,
                Sense::Max => f64::NEG_INFINITY,
            },
            |b, v| if self.better(v, b) { v } else { b },
        );
        let mut active = vec![];
        let mut grads = vec![];
        for (i, &v) in vals.iter().enumerate() {
            if (v - best).abs() <= eps {
                active.push(i);
                grads.push(self.pieces[i].grad(&xl));
            }
        }
        Local { value: best, active, grads, sense: self.sense }
    }

    pub fn local(&self, x: &TorusPoint) -> Local {
        self.local_with_tol(x, self.eps_act)
    }

    /// Largest Hessian upper bound across pieces (linear semiconcavity modulus).
    pub fn semiconcavity_constant(&self) -> Option<f64> {
        self.pieces.iter().map(|p| p.hessian_bound()).try_fold(0.0f64, |m, b| b.map(|b| m.max(b)))
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.pieces.iter().map(|p| p.lipschitz_bound()).try_fold(0.0f64, |m, b| b.map(|b| m.max(b)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Superdifferential {
    pub base: TorusPoint,
    pub vertices: Vec<Covector>,
    /// Index of the piece that produced each vertex.
    pub pieces: Vec<usize>,
}

impl Superdifferential {
    pub fn is_differentiable(&self) -> bool {
        self.vertices.len() == 1
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.vertices.len() {
            for j in i + 1..self.vertices.len() {
                d = d.max((self.vertices[i] - self.vertices[j]).norm());
            }
        }
        d
    }
}

pub(crate) fn dedup_vertices(grads: &[Covector], pieces: &[usize]) -> (Vec<Covector>, Vec<usize>) {
    let mut vs: Vec<Covector> = vec![];
    let mut ps = vec![];
    for (g, &i) in grads.iter().zip(pieces) {
        if !vs.iter().any(|v| (*v - *g).max_abs() <= 1e-13 * (1.0 + g.max_abs())) {
            vs.push(*g);
            ps.push(i);
        }
    }
    (vs, ps)
}

/// Convex hull of the gradients of active pieces, ordered by piece index.
pub fn superdifferential(phi: &MinSmoothFn, x: &TorusPoint) -> Superdifferential {
    superdifferential_with_tol(phi, x, phi.eps_act)
}

pub fn superdifferential_with_tol(phi: &MinSmoothFn, x: &TorusPoint, eps: f64) -> Superdifferential {
    let loc = phi.local_with_tol(x, eps);
    let (vertices, pieces) = dedup_vertices(&loc.grads, &loc.active);
    Superdifferential { base: *x, vertices, pieces }
}

/// `min_{p in D+phi(x)} <p, v>`.
pub fn directional_derivative(phi: &MinSmoothFn, x: &TorusPoint, v: &Vector) -> f64 {
    let sd = superdifferential(phi, x);
    let it = sd.vertices.iter().map(|p| p.dot(v));
    let r = match phi.sense {
        Sense::Min => it.fold(f64::INFINITY, f64::min),
        Sense::Max => it.fold(f64::NEG_INFINITY, f64::max),
    };
    if r == 0.0 { 0.0 } else { r }
}

/// Soft-min `-(1/k) log sum_i exp(-k psi_i)` of a list of pieces.
#[derive(Clone, Debug)]
pub struct SoftMinPiece {
    pieces: Vec<Arc<dyn Piece>>,
    k: f64,
}

impl SoftMinPiece {
    fn weights(&self, x: &Vector) -> (f64, Vec<f64>, Vec<Covector>) {
        let vals: Vec<f64> = self.pieces.iter().map(|p| p.value(x)).collect();
        let m = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = vals.iter().map(|v| (-self.k * (v - m)).exp()).collect();
        let z: f64 = e.iter().sum();
        let value = m - z.ln() / self.k;
        let w = e.iter().map(|v| v / z).collect();
        let g = self.pieces.iter().map(|p| p.grad(x)).collect();
        (value, w, g)
    }
}

impl Piece for SoftMinPiece {
    fn dim(&self) -> usize {
        self.pieces[0].dim()
    }

    fn value(&self, x: &Vector) -> f64 {
        let vals: Vec<f64> = self.pieces.iter().map(|p| p.value(x)).collect();
        let m = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let z: f64 = vals.iter().map(|v| (-self.k * (v - m)).exp()).sum();
        m - z.ln() / self.k
    }

    fn grad(&self, x: &Vector) -> Covector {
        self.value_grad(x).1
    }

    fn value_grad(&self, x: &Vector) -> (f64, Covector) {
        let (v, w, g) = self.weights(x);
        let mut out = Vector::zeros(self.dim());
        for (wi, gi) in w.iter().zip(&g) {
            out += *gi * *wi;
        }
        (v, out)
    }

    fn hessian(&self, x: &Vector) -> Option<Mat> {
        let (_, w, g) = self.weights(x);
        let d = self.dim();
        let mut mean = Vector::zeros(d);
        for (wi, gi) in w.iter().zip(&g) {
            mean += *gi * *wi;
        }
        let mut h = Mat::zeros(d);
        for (i, p) in self.pieces.iter().enumerate() {
            let hi = p.hessian(x)?;
            h = h.add(&hi.scale(w[i]));
            let dg = g[i] - mean;
            h = h.add(&Mat::outer(&dg, &dg).scale(-self.k * w[i]));
        }
        Some(h)
    }

    fn hessian_bound(&self) -> Option<f64> {
        self.pieces.iter().map(|p| p.hessian_bound()).try_fold(0.0f64, |m, b| b.map(|b| m.max(b)))
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.pieces.iter().map(|p| p.lipschitz_bound()).try_fold(0.0f64, |m, b| b.map(|b| m.max(b)))
    }
}

/// Single-piece soft-min regularisation at sharpness `k`.
pub fn mollify(phi: &MinSmoothFn, k: f64) -> MinSmoothFn {
    assert!(k > 0.0, "k must be positive");
    assert_eq!(phi.sense, Sense::Min, "mollify applies to minima of pieces");
    if phi.pieces.len() == 1 {
        return MinSmoothFn::new(vec![phi.pieces[0].clone()]).with_eps_act(phi.eps_act);
    }
    let piece = SoftMinPiece { pieces: phi.pieces.clone(), k };
    MinSmoothFn::new(vec![Arc::new(piece)]).with_eps_act(phi.eps_act)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemiconcavityReport {
    pub max_violation: f64,
    pub constant: f64,
    pub samples: usize,
}

/// Random test of `l f(x) + (1-l) f(y) - f(l x + (1-l) y) <= l (1-l) C |x-y|^2`.
pub fn semiconcavity_check(phi: &MinSmoothFn, samples: usize, constant: Option<f64>, seed: u64) -> SemiconcavityReport {
    assert!(samples >= 1);
    let c = constant
        .or_else(|| phi.semiconcavity_constant())
        .expect("semiconcavity constant unavailable: pass one explicitly");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = phi.dim();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x = TorusPoint::from_slice(&(0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let y = TorusPoint::from_slice(&(0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let lam: f64 = rng.random();
        let xl = x.lift();
        let yl = nearest_lift(&x, &y);
        let z = TorusPoint::new(xl * lam + yl * (1.0 - lam));
        let lhs = lam * phi.value(&x) + (1.0 - lam) * phi.value(&y) - phi.value(&z);
        let rhs = lam * (1.0 - lam) * c * (xl - yl).norm_sq();
        worst = worst.max(lhs - rhs);
    }
    SemiconcavityReport { max_violation: worst, constant: c, samples }
}

/// Smooth piece depending on time: `psi(t,x) = a(x) + t b(x)`.
#[derive(Clone, Debug)]
pub struct TimePiece {
    pub a: TrigPoly,
    pub b: TrigPoly,
}

impl TimePiece {
    pub fn value(&self, t: f64, x: &Vector) -> f64 {
        self.a.value(x) + t * self.b.value(x)
    }
    pub fn dt(&self, _t: f64, x: &Vector) -> f64 {
        self.b.value(x)
    }
    pub fn grad(&self, t: f64, x: &Vector) -> Covector {
        self.a.grad(x) + self.b.grad(x) * t
    }
}

/// Time-dependent minimum of smooth pieces.
#[derive(Clone, Debug)]
pub struct TimeMinSmoothFn {
    pub pieces: Vec<TimePiece>,
    pub eps_act: f64,
}

impl TimeMinSmoothFn {
    pub fn new(pieces: Vec<TimePiece>) -> Self {
        TimeMinSmoothFn { pieces, eps_act: EPS_ACT }
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].a.dim
    }

    pub fn value(&self, t: f64, x: &TorusPoint) -> f64 {
        self.pieces.iter().map(|p| p.value(t, &x.lift())).fold(f64::INFINITY, f64::min)
    }

    /// Active `(d_t psi_i, grad psi_i)` pairs, deduplicated, by piece index.
    pub fn superdifferential(&self, t: f64, x: &TorusPoint) -> Vec<(f64, Covector)> {
        let xl = x.lift();
        let best = self.value(t, x);
        let mut out: Vec<(f64, Covector)> = vec![];
        for p in &self.pieces {
            if (p.value(t, &xl) - best).abs() <= self.eps_act {
                let v = (p.dt(t, &xl), p.grad(t, &xl));
                if !out.iter().any(|(q, g)| (q - v.0).abs() <= 1e-13 && (*g - v.1).max_abs() <= 1e-13) {
                    out.push(v);
                }
            }
        }
        out
    }
}
