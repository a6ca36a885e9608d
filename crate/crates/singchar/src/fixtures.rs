//! Closed-form test problems.

use crate::fourier::TrigPoly;
use crate::hamiltonian::HamiltonianModel;
use crate::semiconcave::MinSmoothFn;
use serde::Serialize;
use std::f64::consts::{FRAC_2_PI, PI};

#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub description: &'static str,
    pub model: HamiltonianModel,
    pub phi: MinSmoothFn,
    /// Critical value when `phi` is a weak KAM solution.
    pub critical_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixtureInfo {
    pub name: &'static str,
    pub dim: usize,
    pub description: &'static str,
}

fn cos1(a: f64) -> TrigPoly {
    TrigPoly::zero(1).with_term(&[1.0], a, 0.0)
}

/// `min(cos 2 pi x, -cos 2 pi x)`, kinks at 1/4 and 3/4.
pub fn f2_phi() -> MinSmoothFn {
    MinSmoothFn::from_trig(vec![cos1(1.0), cos1(-1.0)])
}

/// Pendulum weak KAM solution `(2/pi)(1 - cos pi x)` on `[0, 1/2]`, mirrored.
///
/// The two pieces use the half frequency and are evaluated on the canonical lift `[0, 1)`.
pub fn pendulum_u() -> MinSmoothFn {
    let a = TrigPoly::constant(1, FRAC_2_PI).with_term(&[0.5], -FRAC_2_PI, 0.0);
    let b = TrigPoly::constant(1, FRAC_2_PI).with_term(&[0.5], FRAC_2_PI, 0.0);
    MinSmoothFn::from_trig(vec![a, b])
}

pub fn pendulum_u_closed(x: f64) -> f64 {
    let x = crate::geometry::wrap01(x);
    FRAC_2_PI * (1.0 - (PI * x).cos().abs())
}

pub fn pendulum() -> HamiltonianModel {
    HamiltonianModel::mechanical(cos1(1.0))
}

pub fn f1() -> Fixture {
    Fixture {
        name: "f1",
        description: "free motion, u = 0",
        model: HamiltonianModel::free(1),
        phi: MinSmoothFn::from_trig(vec![TrigPoly::zero(1)]),
        critical_value: Some(0.0),
    }
}

/// Free motion with the smooth `phi = sin(2 pi x) / (2 pi)`.
pub fn f1_smooth() -> Fixture {
    Fixture {
        name: "f1-smooth",
        description: "free motion, phi = sin(2 pi x)/(2 pi)",
        model: HamiltonianModel::free(1),
        phi: MinSmoothFn::from_trig(vec![TrigPoly::zero(1).with_term(&[1.0], 0.0, 1.0 / (2.0 * PI))]),
        critical_value: None,
    }
}

pub fn f2() -> Fixture {
    Fixture {
        name: "f2",
        description: "free motion, phi = min(cos 2 pi x, -cos 2 pi x)",
        model: HamiltonianModel::free(1),
        phi: f2_phi(),
        critical_value: None,
    }
}

pub fn f3() -> Fixture {
    Fixture {
        name: "f3",
        description: "pendulum H = p^2/2 + cos 2 pi x with its weak KAM solution",
        model: pendulum(),
        phi: pendulum_u(),
        critical_value: Some(1.0),
    }
}

pub const F4_EPS: f64 = 0.1;

/// `-|cos 2 pi x1| + eps sin 2 pi x2` under free motion in two dimensions.
pub fn f4() -> Fixture {
    let s = TrigPoly::zero(2).with_term(&[0.0, 1.0], 0.0, F4_EPS);
    let a = TrigPoly::zero(2).with_term(&[1.0, 0.0], -1.0, 0.0).add(&s);
    let b = TrigPoly::zero(2).with_term(&[1.0, 0.0], 1.0, 0.0).add(&s);
    Fixture {
        name: "f4",
        description: "2D free motion, phi = -|cos 2 pi x1| + 0.1 sin 2 pi x2",
        model: HamiltonianModel::free(2),
        phi: MinSmoothFn::from_trig(vec![a, b]),
        critical_value: None,
    }
}

/// Separable solution for the second coordinate on the edge `x1 = 1/4` of F4.
pub fn f4_x2(x2_0: f64, t: f64) -> f64 {
    let gd = |s: f64| s.sinh().atan();
    let gd_inv = |s: f64| s.tan().asinh();
    let w = 2.0 * PI;
    (gd(w * w * F4_EPS * t + gd_inv(w * x2_0))) / w
}

pub fn f5() -> Fixture {
    Fixture {
        name: "f5",
        description: "quartic H = |p|^4/4 + |p|^2/2 over min(cos 2 pi x, -cos 2 pi x)",
        model: HamiltonianModel::quartic(TrigPoly::zero(1)),
        phi: f2_phi(),
        critical_value: None,
    }
}

pub fn all() -> Vec<Fixture> {
    vec![f1(), f1_smooth(), f2(), f3(), f4(), f5()]
}

pub fn by_name(name: &str) -> Option<Fixture> {
    all().into_iter().find(|f| f.name == name)
}

pub fn list() -> Vec<FixtureInfo> {
    all().iter().map(|f| FixtureInfo { name: f.name, dim: f.model.dim(), description: f.description }).collect()
}
