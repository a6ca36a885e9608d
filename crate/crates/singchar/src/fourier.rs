//! Trigonometric polynomials `c + sum_j a_j cos(2 pi k_j.x) + b_j sin(2 pi k_j.x)`.
//!
//! Frequencies are real. Integer frequencies give functions on the torus; half-integer
//! ones are used for pieces that are only smooth on the fundamental domain `[0,1)^d`.

use crate::geometry::{Mat, Vector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub k: Vec<f64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPoly {
    pub dim: usize,
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn zero(dim: usize) -> Self {
        TrigPoly { dim, constant: 0.0, terms: vec![] }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        TrigPoly { dim, constant: c, terms: vec![] }
    }

    pub fn with_term(mut self, k: &[f64], cos: f64, sin: f64) -> Self {
        assert_eq!(k.len(), self.dim);
        self.terms.push(TrigTerm { k: k.to_vec(), cos, sin });
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dim != 1 && self.dim != 2 {
            return Err(format!("dimension {} not in {{1,2}}", self.dim));
        }
        for t in &self.terms {
            if t.k.len() != self.dim {
                return Err(format!("frequency {:?} has wrong length", t.k));
            }
            if !(t.cos.is_finite() && t.sin.is_finite() && t.k.iter().all(|v| v.is_finite())) {
                return Err("non-finite coefficient".into());
            }
        }
        if !self.constant.is_finite() {
            return Err("non-finite constant".into());
        }
        Ok(())
    }

    /// True when every frequency is an integer vector, i.e. the function is 1-periodic.
    pub fn is_periodic(&self) -> bool {
        self.terms.iter().all(|t| t.k.iter().all(|v| v.fract() == 0.0))
    }

    fn phase(&self, t: &TrigTerm, x: &Vector) -> f64 {
        TAU * (0..self.dim).map(|i| t.k[i] * x[i]).sum::<f64>()
    }

    pub fn value(&self, x: &Vector) -> f64 {
        let mut s = self.constant;
        for t in &self.terms {
            let (sn, cs) = self.phase(t, x).sin_cos();
            s += t.cos * cs + t.sin * sn;
        }
        s
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim);
        for t in &self.terms {
            let (sn, cs) = self.phase(t, x).sin_cos();
            let d = -t.cos * sn + t.sin * cs;
            for i in 0..self.dim {
                g[i] += d * TAU * t.k[i];
            }
        }
        g
    }

    pub fn hessian(&self, x: &Vector) -> Mat {
        let mut h = Mat::zeros(self.dim);
        for t in &self.terms {
            let (sn, cs) = self.phase(t, x).sin_cos();
            let d2 = -(t.cos * cs + t.sin * sn);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let v = h.get(i, j) + d2 * TAU * TAU * t.k[i] * t.k[j];
                    h.set(i, j, v);
                }
            }
        }
        h
    }

    fn amplitude(t: &TrigTerm) -> f64 {
        t.cos.hypot(t.sin)
    }

    fn freq_norm(t: &TrigTerm) -> f64 {
        t.k.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Upper bound for the largest Hessian eigenvalue.
    pub fn hessian_bound(&self) -> f64 {
        self.terms.iter().map(|t| Self::amplitude(t) * (TAU * Self::freq_norm(t)).powi(2)).sum()
    }

    /// Upper bound for the gradient norm.
    pub fn lipschitz_bound(&self) -> f64 {
        self.terms.iter().map(|t| Self::amplitude(t) * TAU * Self::freq_norm(t)).sum()
    }

    /// Crude bounds on the range: `(min, max)`.
    pub fn range_bound(&self) -> (f64, f64) {
        let a: f64 = self.terms.iter().map(Self::amplitude).sum();
        (self.constant - a, self.constant + a)
    }

    pub fn add(&self, o: &TrigPoly) -> TrigPoly {
        assert_eq!(self.dim, o.dim);
        let mut out = self.clone();
        out.constant += o.constant;
        out.terms.extend(o.terms.iter().cloned());
        out
    }

    pub fn scale(&self, s: f64) -> TrigPoly {
        let mut out = self.clone();
        out.constant *= s;
        for t in &mut out.terms {
            t.cos *= s;
            t.sin *= s;
        }
        out
    }
}
