//! Closed-form proximal operators and projections used by the splitting solver.
//!
//! The composite prox of `mu1 ||.||_1 + mu2 ||.||_2` is soft-thresholding
//! followed by a block shrink; both factors keep their closed form under a
//! scalar step, which is what lets the solver avoid any inner iteration.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which regularizer the discretized objective carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    Lasso,
    En,
    Clot,
}

impl RegKind {
    pub const ALL: [RegKind; 3] = [RegKind::Lasso, RegKind::En, RegKind::Clot];

    pub fn name(&self) -> &'static str {
        match self {
            RegKind::Lasso => "lasso",
            RegKind::En => "en",
            RegKind::Clot => "clot",
        }
    }
}

impl std::str::FromStr for RegKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" => Ok(RegKind::Lasso),
            "en" => Ok(RegKind::En),
            "clot" => Ok(RegKind::Clot),
            other => Err(Error::InvalidProblem(format!("unknown method {other:?}"))),
        }
    }
}

/// Discretized regularizer with its weights.
///
/// For sampling period `h` the continuous-time objectives discretize to
/// weights `(h, 0)` for L1, `(h, h*lambda)` for L1 + squared L2 and
/// `(h, sqrt(h)*lambda)` for L1 + L2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub kind: RegKind,
    pub lambda: f64,
    pub h: f64,
    mu1: f64,
    mu2: f64,
}

impl Regularizer {
    pub fn new(kind: RegKind, lambda: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidProblem("sampling period must be positive".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidProblem("lambda must be nonnegative".into()));
        }
        let mu2 = match kind {
            RegKind::Lasso => 0.0,
            RegKind::En => h * lambda,
            RegKind::Clot => h.sqrt() * lambda,
        };
        Ok(Self {
            kind,
            lambda,
            h,
            mu1: h,
            mu2,
        })
    }

    /// `(mu1, mu2)` weights of the L1 and L2(-squared) terms.
    pub fn weights(&self) -> (f64, f64) {
        (self.mu1, self.mu2)
    }

    /// Same regularizer with both weights multiplied by `c > 0`. The argmin of
    /// the constrained problem is invariant under this scaling.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            mu1: self.mu1 * c,
            mu2: self.mu2 * c,
            ..self.clone()
        }
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let l1: f64 = u.iter().map(|x| x.abs()).sum();
        match self.kind {
            RegKind::Lasso => self.mu1 * l1,
            RegKind::En => self.mu1 * l1 + self.mu2 * u.norm_squared(),
            RegKind::Clot => self.mu1 * l1 + self.mu2 * u.norm(),
        }
    }

    /// In-place `prox_{t f}` where `f` is this regularizer.
    pub fn prox_in_place(&self, v: &mut DVector<f64>, t: f64) {
        match self.kind {
            RegKind::Lasso => prox_l1_in_place(v, t * self.mu1),
            RegKind::En => prox_en_in_place(v, t * self.mu1, t * self.mu2),
            RegKind::Clot => prox_clot_in_place(v, t * self.mu1, t * self.mu2),
        }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub fn prox_l1_in_place(v: &mut DVector<f64>, t: f64) {
    debug_assert!(t >= 0.0);
    for x in v.as_mut_slice() {
        *x = soft_threshold(*x, t);
    }
}

/// Componentwise soft threshold: `sign(v_k) * max(|v_k| - t, 0)`.
pub fn prox_l1(v: &DVector<f64>, t: f64) -> DVector<f64> {
    let mut out = v.clone();
    prox_l1_in_place(&mut out, t);
    out
}

pub fn prox_clot_in_place(v: &mut DVector<f64>, mu1: f64, mu2: f64) {
    prox_l1_in_place(v, mu1);
    let norm = v.norm();
    if norm <= mu2 {
        v.fill(0.0);
    } else {
        *v *= 1.0 - mu2 / norm;
    }
}

/// Exact prox of `mu1 ||.||_1 + mu2 ||.||_2`: soft threshold, then shrink the
/// whole vector toward zero by `mu2` in Euclidean norm.
pub fn prox_clot(v: &DVector<f64>, mu1: f64, mu2: f64) -> DVector<f64> {
    let mut out = v.clone();
    prox_clot_in_place(&mut out, mu1, mu2);
    out
}

pub fn prox_en_in_place(v: &mut DVector<f64>, mu1: f64, mu2: f64) {
    prox_l1_in_place(v, mu1);
    *v /= 1.0 + 2.0 * mu2;
}

/// Exact prox of `mu1 ||.||_1 + mu2 ||.||_2^2`.
pub fn prox_en(v: &DVector<f64>, mu1: f64, mu2: f64) -> DVector<f64> {
    let mut out = v.clone();
    prox_en_in_place(&mut out, mu1, mu2);
    out
}

pub fn project_box_in_place(v: &mut DVector<f64>, bound: f64) {
    for x in v.iter_mut() {
        *x = x.clamp(-bound, bound);
    }
}

/// Componentwise clamp to `[-bound, bound]`.
pub fn project_box(v: &DVector<f64>, bound: f64) -> DVector<f64> {
    let mut out = v.clone();
    project_box_in_place(&mut out, bound);
    out
}

/// Euclidean projection onto the ball `{x : ||x - center|| <= radius}`.
pub fn project_ball(p: &DVector<f64>, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let d = p - center;
    let norm = d.norm();
    if norm <= radius {
        p.clone()
    } else {
        center + d * (radius / norm)
    }
}

/// Projection onto a singleton; the dual-side set of the terminal equality.
pub fn project_point(_p: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
    target.clone()
}
