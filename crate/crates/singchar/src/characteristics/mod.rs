//! Minimal energy selection `p#` and curves driven by it.

pub mod runs;
pub mod selection;
pub mod verify;

use crate::geometry::{Covector, TorusPoint, Vector};
use crate::hamiltonian::HamiltonianModel;
use crate::semiconcave::{
    MinSmoothFn, Sense, Superdifferential, TimeMinSmoothFn, dedup_vertices, superdifferential,
};
use selection::{SimplexObjective, minimize_on_simplex};
use serde::Serialize;

pub use runs::{
    CharacteristicRun, IntrinsicConfig, MollifiedConfig, RunMethod, StepDiagnostics, integrate_euler,
    integrate_intrinsic, integrate_mollified,
};
pub use verify::{
    EdiReport, EnergyReport, GcReport, StabilityConfig, StabilityReport, edi_defects, edi_residual,
    edi_residual_curve, edi_residual_td, energy_profile, gc_membership, gc_membership_curve, hull_distance,
    stability_harness,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionResult {
    pub p_sharp: Covector,
    pub h_value: f64,
    /// Convex weights over `vertices`.
    pub weights: Vec<f64>,
    pub vertices: Vec<Covector>,
}

struct EnergyObjective<'a> {
    model: &'a HamiltonianModel,
    x: Vector,
}

impl SimplexObjective for EnergyObjective<'_> {
    fn dim(&self) -> usize {
        self.x.dim()
    }

    fn eval(&self, z: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let p = Vector::from_slice(z);
        let v = self.model.h(&self.x, &p);
        let g = self.model.h_p(&self.x, &p);
        let hh = self.model.h_pp(&self.x, &p);
        let d = self.x.dim();
        let mut gg = [0.0; 3];
        let mut h3 = [[0.0; 3]; 3];
        for i in 0..d {
            gg[i] = g[i];
            for j in 0..d {
                h3[i][j] = hh.get(i, j);
            }
        }
        (v, gg, h3)
    }
}

/// `argmin { H(x, p) : p in co(vertices) }` at a lifted point.
pub fn select_from_vertices(model: &HamiltonianModel, x: &Vector, vertices: &[Covector]) -> SelectionResult {
    let obj = EnergyObjective { model, x: *x };
    let pts: Vec<Vec<f64>> = vertices.iter().map(|v| v.to_vec()).collect();
    let sol = minimize_on_simplex(&pts, &obj);
    let p = Vector::from_slice(&sol.point);
    SelectionResult { p_sharp: p, h_value: model.h(x, &p), weights: sol.weights, vertices: vertices.to_vec() }
}

/// Minimal energy selection over the superdifferential of `phi` at `x`.
pub fn minimal_energy_selection(model: &HamiltonianModel, phi: &MinSmoothFn, x: &TorusPoint) -> SelectionResult {
    let sd = superdifferential(phi, x);
    select_from_vertices(model, &x.lift(), &sd.vertices)
}

/// Superdifferential enlarged by every piece that can become minimal within one step of size `h`.
///
/// A piece joins when its excess over `phi(x)` is at most `h |v| |D psi_i - p#|`, with `v`
/// the velocity of the plain selection. With `h = 0` this is the exact superdifferential.
pub fn band_superdifferential(model: &HamiltonianModel, phi: &MinSmoothFn, x: &TorusPoint, h: f64) -> Superdifferential {
    let base = superdifferential(phi, x);
    if h <= 0.0 || phi.pieces().len() == 1 || phi.sense() == Sense::Max {
        return base;
    }
    let xl = x.lift();
    let sel = select_from_vertices(model, &xl, &base.vertices);
    let reach = h * model.h_p(&xl, &sel.p_sharp).norm();
    if reach == 0.0 {
        return base;
    }
    let best = phi.value(x);
    let mut grads = vec![];
    let mut idx = vec![];
    for (i, piece) in phi.pieces().iter().enumerate() {
        let (v, g) = piece.value_grad(&xl);
        let gap = v - best;
        if gap <= phi.eps_act() || gap <= reach * (g - sel.p_sharp).norm() {
            grads.push(g);
            idx.push(i);
        }
    }
    let (vertices, pieces) = dedup_vertices(&grads, &idx);
    Superdifferential { base: *x, vertices, pieces }
}

/// Selection from the step-aware superdifferential.
pub fn band_selection(model: &HamiltonianModel, phi: &MinSmoothFn, x: &TorusPoint, h: f64) -> SelectionResult {
    let sd = band_superdifferential(model, phi, x, h);
    select_from_vertices(model, &x.lift(), &sd.vertices)
}

struct TdObjective<'a> {
    model: &'a HamiltonianModel,
    x: Vector,
}

impl SimplexObjective for TdObjective<'_> {
    fn dim(&self) -> usize {
        self.x.dim() + 1
    }

    fn eval(&self, z: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let d = self.x.dim();
        let p = Vector::from_slice(&z[1..=d]);
        let hp = self.model.h_p(&self.x, &p);
        let hh = self.model.h_pp(&self.x, &p);
        let mut g = [0.0; 3];
        let mut h3 = [[0.0; 3]; 3];
        g[0] = 1.0;
        for i in 0..d {
            g[i + 1] = hp[i];
            for j in 0..d {
                h3[i + 1][j + 1] = hh.get(i, j);
            }
        }
        (z[0] + self.model.h(&self.x, &p), g, h3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TdSelection {
    pub q_sharp: f64,
    pub p_sharp: Covector,
    pub weights: Vec<f64>,
}

/// `argmin { q + H(x, p) : (q, p) in co{(d_t psi_i, D psi_i)} }` over active pieces.
pub fn minimal_energy_selection_td(model: &HamiltonianModel, phi: &TimeMinSmoothFn, t: f64, x: &TorusPoint) -> TdSelection {
    let verts = phi.superdifferential(t, x);
    let pts: Vec<Vec<f64>> = verts
        .iter()
        .map(|(q, p)| {
            let mut v = vec![*q];
            v.extend_from_slice(p.as_slice());
            v
        })
        .collect();
    let obj = TdObjective { model, x: x.lift() };
    let sol = minimize_on_simplex(&pts, &obj);
    TdSelection { q_sharp: sol.point[0], p_sharp: Vector::from_slice(&sol.point[1..]), weights: sol.weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::TrigPoly;
    use crate::semiconcave::TimePiece;
    use std::f64::consts::TAU;

    fn f2() -> MinSmoothFn {
        MinSmoothFn::from_trig(vec![
            TrigPoly::zero(1).with_term(&[1.0], 1.0, 0.0),
            TrigPoly::zero(1).with_term(&[1.0], -1.0, 0.0),
        ])
    }

    #[test]
    fn selection_examples() {
        let free = HamiltonianModel::free(1);
        let s = minimal_energy_selection(&free, &f2(), &TorusPoint::new1(0.25));
        assert!(s.p_sharp[0].abs() < 1e-12 && s.h_value.abs() < 1e-20);
        let pend = HamiltonianModel::mechanical(TrigPoly::zero(1).with_term(&[1.0], 1.0, 0.0));
        let s = minimal_energy_selection(&pend, &f2(), &TorusPoint::new1(0.25));
        assert!(s.p_sharp[0].abs() < 1e-12 && s.h_value.abs() < 1e-12);
        let free2 = HamiltonianModel::free(2);
        let s = select_from_vertices(&free2, &Vector::new2(0.1, 0.2), &[Vector::new2(1.0, 0.0), Vector::new2(0.0, 1.0)]);
        assert!((s.p_sharp[0] - 0.5).abs() < 1e-14 && (s.h_value - 0.25).abs() < 1e-14);
        let s = minimal_energy_selection(&free, &f2(), &TorusPoint::new1(0.1));
        assert!((s.p_sharp[0] - TAU * (TAU * 0.1).sin()).abs() < 1e-12);
    }

    #[test]
    fn td_examples() {
        let free = HamiltonianModel::free(1);
        let phi = TimeMinSmoothFn::new(vec![
            TimePiece { a: TrigPoly::zero(1).with_term(&[1.0], 1.0, 0.0), b: TrigPoly::constant(1, -1.0) },
            TimePiece { a: TrigPoly::zero(1).with_term(&[1.0], -1.0, 0.0), b: TrigPoly::constant(1, -1.0) },
        ]);
        let s = minimal_energy_selection_td(&free, &phi, 0.3, &TorusPoint::new1(0.25));
        assert!((s.q_sharp + 1.0).abs() < 1e-12 && s.p_sharp[0].abs() < 1e-12);
    }

    #[test]
    fn band_catches_nearby_kink() {
        let free = HamiltonianModel::free(1);
        let x = TorusPoint::new1(0.25 - 1e-4);
        assert_eq!(superdifferential(&f2(), &x).vertices.len(), 1);
        assert_eq!(band_superdifferential(&free, &f2(), &x, 1e-3).vertices.len(), 2);
        assert_eq!(band_superdifferential(&free, &f2(), &TorusPoint::new1(0.1), 1e-3).vertices.len(), 1);
    }
}
