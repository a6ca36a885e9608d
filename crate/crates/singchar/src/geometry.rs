//! Flat unit torus `R^d / Z^d` for `d = 1, 2`: points, lifts, distances, grids.

use serde::ser::{Serialize, SerializeSeq, Serializer};
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

/// A real vector with one or two components.
///
/// Used for lifted coordinates, tangent vectors and covectors alike.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vector {
    dim: usize,
    c: [f64; 2],
}

pub type Tangent = Vector;
pub type Covector = Vector;

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim == 1 || dim == 2, "dimension must be 1 or 2");
        Vector { dim, c: [0.0; 2] }
    }

    pub fn new1(x: f64) -> Self {
        Vector { dim: 1, c: [x, 0.0] }
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Vector { dim: 2, c: [x, y] }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        match s.len() {
            1 => Self::new1(s[0]),
            2 => Self::new2(s[0], s[1]),
            n => panic!("vector of length {n}: dimension must be 1 or 2"),
        }
    }

    /// Unit vector along `axis`.
    pub fn axis(dim: usize, axis: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.c[axis] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.c[..self.dim]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }

    pub fn dot(&self, o: &Vector) -> f64 {
        debug_assert_eq!(self.dim, o.dim);
        (0..self.dim).map(|i| self.c[i] * o.c[i]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        if self.dim == 1 { self.c[0].abs() } else { self.norm_sq().sqrt() }
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        let mut out = *self;
        for i in 0..self.dim {
            out.c[i] = f(self.c[i]);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        debug_assert!(i < self.dim);
        &self.c[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        debug_assert!(i < self.dim);
        &mut self.c[i]
    }
}

impl Add for Vector {
    type Output = Vector;
    fn add(self, o: Vector) -> Vector {
        debug_assert_eq!(self.dim, o.dim);
        Vector { dim: self.dim, c: [self.c[0] + o.c[0], self.c[1] + o.c[1]] }
    }
}

impl Sub for Vector {
    type Output = Vector;
    fn sub(self, o: Vector) -> Vector {
        debug_assert_eq!(self.dim, o.dim);
        Vector { dim: self.dim, c: [self.c[0] - o.c[0], self.c[1] - o.c[1]] }
    }
}

impl AddAssign for Vector {
    fn add_assign(&mut self, o: Vector) {
        *self = *self + o;
    }
}

impl SubAssign for Vector {
    fn sub_assign(&mut self, o: Vector) {
        *self = *self - o;
    }
}

impl Neg for Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        Vector { dim: self.dim, c: [-self.c[0], -self.c[1]] }
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;
    fn mul(self, s: f64) -> Vector {
        Vector { dim: self.dim, c: [self.c[0] * s, self.c[1] * s] }
    }
}

impl Mul<Vector> for f64 {
    type Output = Vector;
    fn mul(self, v: Vector) -> Vector {
        v * self
    }
}

impl Serialize for Vector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.dim))?;
        for v in self.as_slice() {
            seq.serialize_element(v)?;
        }
        seq.end()
    }
}

/// Symmetric or general `d x d` matrix, `d = 1, 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    dim: usize,
    m: [[f64; 2]; 2],
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat { dim, m: [[0.0; 2]; 2] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut a = Self::zeros(dim);
        for i in 0..dim {
            a.m[i][i] = s;
        }
        a
    }

    pub fn from_rows(dim: usize, m: [[f64; 2]; 2]) -> Self {
        Mat { dim, m }
    }

    /// `v v^T`
    pub fn outer(a: &Vector, b: &Vector) -> Self {
        let mut out = Self::zeros(a.dim());
        for i in 0..a.dim() {
            for j in 0..a.dim() {
                out.m[i][j] = a[i] * b[j];
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[i][j] = v;
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.m[i][j] * v[j]).sum();
        }
        out
    }

    pub fn mul(&self, o: &Mat) -> Mat {
        let mut out = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] = (0..self.dim).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        out
    }

    pub fn add(&self, o: &Mat) -> Mat {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] *= s;
            }
        }
        out
    }

    pub fn det(&self) -> f64 {
        if self.dim == 1 {
            self.m[0][0]
        } else {
            self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
        }
    }

    pub fn inverse(&self) -> Option<Mat> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let mut out = Mat::zeros(self.dim);
        if self.dim == 1 {
            out.m[0][0] = 1.0 / det;
        } else {
            out.m[0][0] = self.m[1][1] / det;
            out.m[1][1] = self.m[0][0] / det;
            out.m[0][1] = -self.m[0][1] / det;
            out.m[1][0] = -self.m[1][0] / det;
        }
        Some(out)
    }

    pub fn solve(&self, b: &Vector) -> Option<Vector> {
        self.inverse().map(|inv| inv.mul_vec(b))
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![self.m[0][0]];
        }
        let a = self.m[0][0];
        let d = self.m[1][1];
        let b = 0.5 * (self.m[0][1] + self.m[1][0]);
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        vec![mean - r, mean + r]
    }
}

/// A point of the unit torus, stored by its representative in `[0,1)^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusPoint(Vector);

/// Reduce a real number into `[0, 1)`.
pub fn wrap01(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 { 0.0 } else { r }
}

impl TorusPoint {
    pub fn new(v: Vector) -> Self {
        TorusPoint(v.map(wrap01))
    }

    pub fn new1(x: f64) -> Self {
        Self::new(Vector::new1(x))
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Self::new(Vector::new2(x, y))
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(Vector::from_slice(s))
    }

    /// The canonical lift in `[0,1)^d`.
    pub fn lift(&self) -> Vector {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn coords(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl Serialize for TorusPoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

fn axis_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

/// Geodesic distance on the flat torus.
pub fn torus_distance(a: &TorusPoint, b: &TorusPoint) -> f64 {
    assert_eq!(a.dim(), b.dim());
    if a.dim() == 1 {
        axis_gap(a.0[0], b.0[0])
    } else {
        let g0 = axis_gap(a.0[0], b.0[0]);
        let g1 = axis_gap(a.0[1], b.0[1]);
        (g0 * g0 + g1 * g1).sqrt()
    }
}

/// Lift of `target` closest to the canonical lift of `base`.
/// An axis at distance exactly one half is resolved towards `base + 1/2`.
pub fn nearest_lift(base: &TorusPoint, target: &TorusPoint) -> Vector {
    nearest_lift_to(&base.lift(), target)
}

/// Same as [`nearest_lift`], with an arbitrary real base.
pub fn nearest_lift_to(base: &Vector, target: &TorusPoint) -> Vector {
    let mut out = target.lift();
    for i in 0..base.dim() {
        let diff = out[i] - base[i];
        let shift = (-diff + 0.5).floor();
        out[i] += shift;
        if out[i] - base[i] <= -0.5 {
            out[i] += 1.0;
        }
    }
    out
}

/// Regular lattice `{i/n}` per axis.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Grid {
    n: Vec<usize>,
}

impl Grid {
    pub fn new(n: &[usize]) -> Self {
        assert!(n.len() == 1 || n.len() == 2, "dimension must be 1 or 2");
        assert!(n.iter().all(|&k| k > 0), "resolution must be positive");
        Grid { n: n.to_vec() }
    }

    pub fn uniform(dim: usize, n: usize) -> Self {
        Self::new(&vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.n
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of node `k` in row-major order (last axis fastest).
    pub fn multi_index(&self, k: usize) -> Vec<usize> {
        if self.dim() == 1 {
            vec![k]
        } else {
            vec![k / self.n[1], k % self.n[1]]
        }
    }

    pub fn flat_index(&self, idx: &[i64]) -> usize {
        let w = |i: i64, n: usize| i.rem_euclid(n as i64) as usize;
        if self.dim() == 1 {
            w(idx[0], self.n[0])
        } else {
            w(idx[0], self.n[0]) * self.n[1] + w(idx[1], self.n[1])
        }
    }

    pub fn node(&self, k: usize) -> TorusPoint {
        let idx = self.multi_index(k);
        let coords: Vec<f64> = idx.iter().zip(&self.n).map(|(&i, &n)| i as f64 / n as f64).collect();
        TorusPoint::from_slice(&coords)
    }

    pub fn nodes(&self) -> impl Iterator<Item = TorusPoint> + '_ {
        (0..self.len()).map(|k| self.node(k))
    }

    /// Node spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        1.0 / self.n[axis] as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        let d = torus_distance(&TorusPoint::new1(0.1), &TorusPoint::new1(0.9));
        assert!((d - 0.2).abs() < 1e-15);
        assert_eq!(torus_distance(&TorusPoint::new1(0.37), &TorusPoint::new1(0.37)), 0.0);
        let d2 = torus_distance(&TorusPoint::new2(0.0, 0.0), &TorusPoint::new2(0.5, 0.5));
        assert!((d2 - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lift_examples() {
        let l = nearest_lift(&TorusPoint::new1(0.05), &TorusPoint::new1(0.95));
        assert!((l[0] + 0.05).abs() < 1e-15);
        let l = nearest_lift(&TorusPoint::new1(0.5), &TorusPoint::new1(0.5));
        assert_eq!(l[0], 0.5);
        let l = nearest_lift(&TorusPoint::new2(0.9, 0.1), &TorusPoint::new2(0.1, 0.9));
        assert!((l[0] - 1.1).abs() < 1e-15 && (l[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn half_ties_go_positive() {
        let l = nearest_lift(&TorusPoint::new1(0.25), &TorusPoint::new1(0.75));
        assert_eq!(l[0], 0.75);
        let l = nearest_lift(&TorusPoint::new1(0.75), &TorusPoint::new1(0.25));
        assert_eq!(l[0], 1.25);
    }

    #[test]
    fn wrap_negative_zero_edge() {
        assert_eq!(wrap01(-1e-18), 0.0);
        assert_eq!(wrap01(1.0), 0.0);
        assert!((wrap01(-0.25) - 0.75).abs() < 1e-16);
    }

    #[test]
    fn grid_row_major() {
        let g = Grid::new(&[2, 3]);
        assert_eq!(g.len(), 6);
        assert_eq!(g.multi_index(4), vec![1, 1]);
        assert_eq!(g.flat_index(&[1, 1]), 4);
        assert_eq!(g.flat_index(&[-1, 3]), 3);
        assert_eq!(g.node(5).coords(), &[0.5, 2.0 / 3.0]);
    }

    #[test]
    fn symmetric_eigenvalues() {
        let m = Mat::from_rows(2, [[2.0, 1.0], [1.0, 2.0]]);
        let e = m.sym_eigenvalues();
        assert!((e[0] - 1.0).abs() < 1e-15 && (e[1] - 3.0).abs() < 1e-15);
    }
}
