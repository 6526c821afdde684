//! Primal-dual solver for the discretized sparse-control programs.
//!
//! All six programs share one shape: minimize a prox-friendly regularizer
//! `f(u)` subject to `K u` lying in a product of simple sets — a singleton for
//! the terminal equality, a sup-norm box for the control bound, and (when a
//! state threshold is given) one Euclidean ball per intermediate step. The
//! over-relaxed primal-dual hybrid-gradient iteration needs only `K`, its
//! adjoint, the regularizer prox and the set projections, so each iteration is
//! a handful of O(N n) passes and no linear system is ever factorized.
//!
//! Row blocks of `K` are rescaled to comparable spectral size before iterating;
//! dual iterates are mapped back to multipliers of the unscaled constraints on
//! exit, which is what the certificate module consumes.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::DiscreteProblem;
use crate::prox::{RegKind, Regularizer};

/// One discretized program instance: problem data, regularizer, and an
/// optional bound on the Euclidean norm of every intermediate state.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub discrete: DiscreteProblem,
    pub reg: Regularizer,
    /// Applies to steps `1..N-1`; the terminal state is pinned by the equality.
    pub theta: Option<f64>,
}

impl ProblemSpec {
    pub fn new(
        discrete: DiscreteProblem,
        kind: RegKind,
        lambda: f64,
        theta: Option<f64>,
    ) -> Result<Self> {
        let reg = Regularizer::new(kind, lambda, discrete.h)?;
        Self::with_regularizer(discrete, reg, theta)
    }

    pub fn with_regularizer(
        discrete: DiscreteProblem,
        reg: Regularizer,
        theta: Option<f64>,
    ) -> Result<Self> {
        if (reg.h - discrete.h).abs() > 1e-12 * discrete.h {
            return Err(Error::InvalidProblem(
                "regularizer sampling period disagrees with the discretization".into(),
            ));
        }
        if let Some(t) = theta {
            if !(t > 0.0) {
                return Err(Error::InvalidProblem("state threshold must be positive".into()));
            }
        }
        Ok(Self {
            discrete,
            reg,
            theta,
        })
    }
}

/// Iteration limits, tolerances and the over-relaxation factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Residuals and feasibility are evaluated every this many iterations.
    pub check_every: usize,
    /// Iteration span over which primal stagnation plus dual divergence is
    /// read as infeasibility.
    pub infeasibility_window: usize,
    /// In `[1, 2)`.
    pub over_relaxation: f64,
    /// Primal/dual step ratio: `tau = ratio * delta / ||K||`,
    /// `sigma = delta / (ratio * ||K||)`, preserving `tau sigma ||K||^2 < 1`.
    pub step_ratio: f64,
    /// Seed for the power-iteration start vector.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            eps_abs: 1e-7,
            eps_rel: 1e-6,
            check_every: 50,
            infeasibility_window: 2_000,
            over_relaxation: 1.8,
            step_ratio: 2.0,
            seed: 0,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.check_every == 0 || self.infeasibility_window == 0 {
            return Err(Error::InvalidProblem("iteration counts must be positive".into()));
        }
        if !(self.eps_abs > 0.0 && self.eps_abs < 1.0 && self.eps_rel > 0.0 && self.eps_rel < 1.0)
        {
            return Err(Error::InvalidProblem("tolerances must lie in (0, 1)".into()));
        }
        if !(1.0..2.0).contains(&self.over_relaxation) {
            return Err(Error::InvalidProblem("over-relaxation must lie in [1, 2)".into()));
        }
        if !(self.step_ratio > 0.0) {
            return Err(Error::InvalidProblem("step ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

impl SolveStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIters => "max-iters",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// Multiplier estimates for the unscaled constraints.
///
/// `eq` pairs with the terminal equality (the paper-style scalar multiplier is
/// its norm), `bound` with the control box, and `state` — flattened per-step
/// blocks of length `n` — with the ball constraints when a threshold is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVars {
    pub eq: DVector<f64>,
    pub bound: DVector<f64>,
    pub state: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub u: DVector<f64>,
    /// States `x_1 .. x_{N-1}` simulated from the returned control.
    pub states: Vec<DVector<f64>>,
    pub duals: DualVars,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Forward recursion `x_{k+1} = Ad x_k + Bd u_k` from the stored initial
/// state; returns `x_0 .. x_N`.
pub fn simulate(discrete: &DiscreteProblem, u: &DVector<f64>) -> Vec<DVector<f64>> {
    assert_eq!(u.len(), discrete.n_steps, "control length must equal N");
    let mut traj = Vec::with_capacity(discrete.n_steps + 1);
    let mut x = discrete.xi.clone();
    traj.push(x.clone());
    for k in 0..discrete.n_steps {
        x = &discrete.ad * &x + &discrete.bd * u[k];
        traj.push(x.clone());
    }
    traj
}

/// Scaled problem data plus every buffer the iteration touches.
struct Workspace<'a> {
    d: &'a DiscreteProblem,
    reg: &'a Regularizer,
    theta: Option<f64>,
    n: usize,
    n_steps: usize,
    /// Row multipliers folded with the block normalizer: row r of the scaled
    /// equality is `row_scale[r] *` the original row.
    row_scale: DVector<f64>,
    phi_s: DMatrix<f64>,
    b_s: DVector<f64>,
    /// Scalar applied to the state block, zero when no threshold is set.
    rho_state: f64,
    m_state: usize,

    tau: f64,
    sigma: f64,

    u: DVector<f64>,
    ut: DVector<f64>,
    v: DVector<f64>,
    kty: DVector<f64>,
    ktyt: DVector<f64>,
    y_eq: DVector<f64>,
    yt_eq: DVector<f64>,
    w_eq: DVector<f64>,
    ku_eq: DVector<f64>,
    y_box: DVector<f64>,
    yt_box: DVector<f64>,
    y_st: DVector<f64>,
    yt_st: DVector<f64>,
    w_st: DVector<f64>,
    ku_st: DVector<f64>,
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(spec: &'a ProblemSpec, cfg: &SolverConfig) -> Workspace<'a> {
        let d = &spec.discrete;
        let n = d.state_dim();
        let n_steps = d.n_steps;
        let theta = spec.theta.filter(|_| n_steps >= 2);
        let m_state = if theta.is_some() { (n_steps - 1) * n } else { 0 };

        // Equilibrate equality rows, then normalize the block's spectral norm
        // (exact via the n x n Gram matrix).
        let mut row_scale = DVector::zeros(n);
        for r in 0..n {
            let norm = d.phi.row(r).norm();
            row_scale[r] = if norm > 1e-300 { 1.0 / norm } else { 1.0 };
        }
        let mut phi_s = d.phi.clone();
        for r in 0..n {
            let s = row_scale[r];
            phi_s.row_mut(r).scale_mut(s);
        }
        let gram = &phi_s * phi_s.transpose();
        let spec_norm = gram
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(0.0f64, f64::max)
            .max(1e-300)
            .sqrt();
        phi_s /= spec_norm;
        row_scale /= spec_norm;
        let b_s = DVector::from_fn(n, |r, _| d.b_terminal[r] * row_scale[r]);

        let mut ws = Workspace {
            d,
            reg: &spec.reg,
            theta,
            n,
            n_steps,
            row_scale,
            phi_s,
            b_s,
            rho_state: 0.0,
            m_state,
            tau: 0.0,
            sigma: 0.0,
            u: DVector::zeros(n_steps),
            ut: DVector::zeros(n_steps),
            v: DVector::zeros(n_steps),
            kty: DVector::zeros(n_steps),
            ktyt: DVector::zeros(n_steps),
            y_eq: DVector::zeros(n),
            yt_eq: DVector::zeros(n),
            w_eq: DVector::zeros(n),
            ku_eq: DVector::zeros(n),
            y_box: DVector::zeros(n_steps),
            yt_box: DVector::zeros(n_steps),
            y_st: DVector::zeros(m_state),
            yt_st: DVector::zeros(m_state),
            w_st: DVector::zeros(m_state),
            ku_st: DVector::zeros(m_state),
            scratch_a: vec![0.0; n],
            scratch_b: vec![0.0; n],
        };

        if ws.theta.is_some() {
            let psi_norm = ws.psi_norm_estimate(cfg.seed ^ 0x9e3779b97f4a7c15);
            ws.rho_state = 1.0 / psi_norm.max(1e-300);
        }

        let k_norm = ws.k_norm_estimate(cfg.seed);
        let step = 0.99 / k_norm.max(1e-300);
        ws.tau = step * cfg.step_ratio;
        ws.sigma = step / cfg.step_ratio;
        ws
    }

    /// `out[(i-1)n..] = (Psi v)_i`, zero-initial-state forward pass.
    fn psi_apply(&mut self, v: &DVector<f64>, into_w: bool) {
        let n = self.n;
        let nm1 = self.n_steps - 1;
        let ad = self.d.ad.as_slice(); // column-major
        let bd = self.d.bd.as_slice();
        let out = if into_w { &mut self.w_st } else { &mut self.ku_st };
        let out = out.as_mut_slice();
        let v = v.as_slice();
        let s = &mut self.scratch_a;
        let t = &mut self.scratch_b;
        s.iter_mut().for_each(|x| *x = 0.0);
        for i in 1..=nm1 {
            let uk = v[i - 1];
            for (r, (ti, bi)) in t.iter_mut().zip(bd).enumerate() {
                let mut acc = bi * uk;
                for c in 0..n {
                    acc += ad[c * n + r] * s[c];
                }
                *ti = acc;
            }
            std::mem::swap(s, t);
            out[(i - 1) * n..i * n].copy_from_slice(s);
        }
    }

    /// Adjoint backward pass; writes all N entries of `out` (last one zero)
    /// scaled by `alpha`, or accumulates into it.
    fn psi_apply_transpose(y: &DVector<f64>, n: usize, n_steps: usize, d: &DiscreteProblem,
                           scratch: &mut [f64], scratch2: &mut [f64],
                           out: &mut DVector<f64>, alpha: f64, accumulate: bool) {
        let nm1 = n_steps - 1;
        let ad = d.ad.as_slice();
        let bd = d.bd.as_slice();
        let y = y.as_slice();
        if !accumulate {
            out[n_steps - 1] = 0.0;
        }
        let out = out.as_mut_slice();
        let q = scratch;
        let t = scratch2;
        q.iter_mut().for_each(|x| *x = 0.0);
        for j in (1..=nm1).rev() {
            // q = y_j + Ad^T q
            for (c, tc) in t.iter_mut().enumerate() {
                let mut acc = y[(j - 1) * n + c];
                let col = &ad[c * n..(c + 1) * n];
                for (a, qr) in col.iter().zip(q.iter()) {
                    acc += a * qr;
                }
                *tc = acc;
            }
            q.copy_from_slice(t);
            let mut dot = 0.0;
            for (b, qr) in bd.iter().zip(q.iter()) {
                dot += b * qr;
            }
            if accumulate {
                out[j - 1] += alpha * dot;
            } else {
                out[j - 1] = alpha * dot;
            }
        }
    }

    fn psi_norm_estimate(&mut self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = DVector::from_fn(self.n_steps, |_, _| rng.gen_range(-1.0..1.0));
        let nv = v.norm();
        if nv > 0.0 {
            v /= nv;
        }
        let mut lambda = 0.0;
        let mut g = DVector::zeros(self.n_steps);
        for _ in 0..100 {
            self.psi_apply(&v, true);
            let w = self.w_st.clone();
            Self::psi_apply_transpose(
                &w,
                self.n,
                self.n_steps,
                self.d,
                &mut self.scratch_a,
                &mut self.scratch_b,
                &mut g,
                1.0,
                false,
            );
            lambda = g.norm();
            if lambda <= 1e-300 {
                return 1.0;
            }
            v.copy_from(&g);
            v /= lambda;
        }
        lambda.sqrt() * 1.02
    }

    /// Largest singular value of the stacked scaled operator.
    fn k_norm_estimate(&mut self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = DVector::from_fn(self.n_steps, |_, _| rng.gen_range(-1.0..1.0));
        let nv = v.norm();
        if nv > 0.0 {
            v /= nv;
        }
        let mut lambda: f64 = 1.0;
        let mut g = DVector::zeros(self.n_steps);
        let mut weq = DVector::zeros(self.n);
        for _ in 0..100 {
            weq.gemv(1.0, &self.phi_s, &v, 0.0);
            g.gemv_tr(1.0, &self.phi_s, &weq, 0.0);
            g += &v; // identity block
            if self.theta.is_some() {
                self.psi_apply(&v, true);
                let w = self.w_st.clone();
                Self::psi_apply_transpose(
                    &w,
                    self.n,
                    self.n_steps,
                    self.d,
                    &mut self.scratch_a,
                    &mut self.scratch_b,
                    &mut g,
                    self.rho_state * self.rho_state,
                    true,
                );
            }
            lambda = g.norm();
            if lambda <= 1e-300 {
                return 1.0;
            }
            v.copy_from(&g);
            v /= lambda;
        }
        lambda.sqrt() * 1.02
    }

    fn recompute_kty(&mut self) {
        if self.theta.is_some() {
            let y = std::mem::replace(&mut self.y_st, DVector::zeros(0));
            Self::psi_apply_transpose(
                &y,
                self.n,
                self.n_steps,
                self.d,
                &mut self.scratch_a,
                &mut self.scratch_b,
                &mut self.kty,
                self.rho_state,
                false,
            );
            self.y_st = y;
            self.kty.gemv_tr(1.0, &self.phi_s, &self.y_eq, 1.0);
        } else {
            self.kty.gemv_tr(1.0, &self.phi_s, &self.y_eq, 0.0);
        }
        self.kty += &self.y_box;
    }

    /// Unscaled multipliers for the current tilde iterates.
    fn duals_out(&self) -> DualVars {
        let eq = DVector::from_fn(self.n, |r, _| self.yt_eq[r] * self.row_scale[r]);
        let state = if self.theta.is_some() {
            Some(&self.yt_st * self.rho_state)
        } else {
            None
        };
        DualVars {
            eq,
            bound: self.yt_box.clone(),
            state,
        }
    }
}

/// Terminal/box/state feasibility of a candidate control, in unscaled units.
struct Feasibility {
    eq: f64,
    boxv: f64,
    state: f64,
}

impl Feasibility {
    fn ok(&self, eps: f64) -> bool {
        self.eq <= eps && self.boxv <= eps && self.state <= eps
    }
    fn worst_normalized(&self, b_norm: f64, u_max: f64, theta: Option<f64>) -> f64 {
        let mut w = self.eq / (1.0 + b_norm);
        w = w.max(self.boxv / (1.0 + u_max));
        if let Some(t) = theta {
            w = w.max(self.state / (1.0 + t));
        }
        w
    }
}

/// Solves one program by over-relaxed primal-dual splitting.
///
/// The returned iterate is the primal prox point of the final iteration; with
/// status [`SolveStatus::Optimal`] it satisfies the terminal equality, the
/// control bound and any state threshold to `1e-5 * (1 + ||Ad^N xi||)`.
/// Infeasibility is reported heuristically when the feasibility gap stalls
/// while the dual iterates diverge.
pub fn solve(spec: &ProblemSpec, cfg: &SolverConfig, warm: Option<&Solution>) -> Result<Solution> {
    cfg.validate()?;
    let d = &spec.discrete;
    let n = d.state_dim();
    let n_steps = d.n_steps;
    let mut ws = Workspace::new(spec, cfg);

    if let Some(w) = warm {
        if w.u.len() != n_steps {
            return Err(Error::InvalidProblem(format!(
                "warm start has length {}, expected {}",
                w.u.len(),
                n_steps
            )));
        }
        ws.u.copy_from(&w.u);
        if w.duals.eq.len() == n {
            for r in 0..n {
                ws.y_eq[r] = if ws.row_scale[r] > 0.0 {
                    w.duals.eq[r] / ws.row_scale[r]
                } else {
                    0.0
                };
            }
        }
        if w.duals.bound.len() == n_steps {
            ws.y_box.copy_from(&w.duals.bound);
        }
        if let (Some(st), true) = (&w.duals.state, ws.theta.is_some()) {
            if st.len() == ws.m_state && ws.rho_state > 0.0 {
                ws.y_st.copy_from(st);
                ws.y_st /= ws.rho_state;
            }
        }
    }

    // caches K u and K^T y for the starting point
    ws.w_eq.gemv(1.0, &ws.phi_s, &ws.u, 0.0);
    ws.ku_eq.copy_from(&ws.w_eq);
    if ws.theta.is_some() {
        let u = ws.u.clone();
        ws.psi_apply(&u, false);
        ws.ku_st *= ws.rho_state;
    }
    ws.recompute_kty();

    let tau = ws.tau;
    let sigma = ws.sigma;
    let rho = cfg.over_relaxation;
    let u_max = d.u_max;
    let b_norm = d.b_terminal.norm();
    let eps_feas = 1e-5 * (1.0 + b_norm);
    let window_checks = (cfg.infeasibility_window / cfg.check_every).max(1);
    let mut history: Vec<(f64, f64)> = Vec::new();

    for iter in 1..=cfg.max_iters {
        let checking = iter % cfg.check_every == 0 || iter == cfg.max_iters;

        // primal prox point
        {
            let ut = ws.ut.as_mut_slice();
            let u = ws.u.as_slice();
            let kty = ws.kty.as_slice();
            for k in 0..n_steps {
                ut[k] = u[k] - tau * kty[k];
            }
        }
        ws.reg.prox_in_place(&mut ws.ut, tau);

        // extrapolation and K applied to it
        {
            let v = ws.v.as_mut_slice();
            let ut = ws.ut.as_slice();
            let u = ws.u.as_slice();
            for k in 0..n_steps {
                v[k] = 2.0 * ut[k] - u[k];
            }
        }
        ws.w_eq.gemv(1.0, &ws.phi_s, &ws.v, 0.0);
        if ws.theta.is_some() {
            let v = std::mem::replace(&mut ws.v, DVector::zeros(0));
            ws.psi_apply(&v, true);
            ws.v = v;
            ws.w_st *= ws.rho_state;
        }

        // dual prox points via Moreau: y~ = z - sigma * proj(z / sigma)
        for r in 0..n {
            ws.yt_eq[r] = ws.y_eq[r] + sigma * (ws.w_eq[r] - ws.b_s[r]);
        }
        {
            let yt = ws.yt_box.as_mut_slice();
            let y = ws.y_box.as_slice();
            let v = ws.v.as_slice();
            for k in 0..n_steps {
                let p = y[k] / sigma + v[k];
                // distance past the box face, scaled back by sigma
                yt[k] = sigma * (p - p.clamp(-u_max, u_max));
            }
        }
        if let Some(theta) = ws.theta {
            let radius = theta * ws.rho_state;
            let nm1 = n_steps - 1;
            let y_st = ws.y_st.as_slice();
            let w_st = ws.w_st.as_slice();
            let yt_st = ws.yt_st.as_mut_slice();
            for i in 0..nm1 {
                let base = i * n;
                let center = ws.d.c_state[i].as_slice();
                let mut dist2 = 0.0;
                for r in 0..n {
                    // offset of the projected point from the scaled ball center
                    let off = y_st[base + r] / sigma + w_st[base + r]
                        + ws.rho_state * center[r];
                    yt_st[base + r] = off;
                    dist2 += off * off;
                }
                let dist = dist2.sqrt();
                let shrink = if dist <= radius {
                    0.0
                } else {
                    sigma * (1.0 - radius / dist)
                };
                for item in &mut yt_st[base..base + n] {
                    *item *= shrink;
                }
            }
        }

        // K at the prox point: K ut = (w + K u) / 2
        for (w, &k) in ws.w_eq.iter_mut().zip(ws.ku_eq.iter()) {
            *w = 0.5 * (*w + k);
        }
        if ws.theta.is_some() {
            for (w, &k) in ws.w_st.iter_mut().zip(ws.ku_st.iter()) {
                *w = 0.5 * (*w + k);
            }
        }

        if checking {
            let feas = feasibility(&ws);
            // K^T y~ for the dual residual
            if ws.theta.is_some() {
                let y = std::mem::replace(&mut ws.yt_st, DVector::zeros(0));
                Workspace::psi_apply_transpose(
                    &y,
                    ws.n,
                    ws.n_steps,
                    ws.d,
                    &mut ws.scratch_a,
                    &mut ws.scratch_b,
                    &mut ws.ktyt,
                    ws.rho_state,
                    false,
                );
                ws.yt_st = y;
                ws.ktyt.gemv_tr(1.0, &ws.phi_s, &ws.yt_eq, 1.0);
            } else {
                ws.ktyt.gemv_tr(1.0, &ws.phi_s, &ws.yt_eq, 0.0);
            }
            ws.ktyt += &ws.yt_box;

            let mut dr2 = 0.0;
            {
                let (u, ut) = (ws.u.as_slice(), ws.ut.as_slice());
                let (kty, ktyt) = (ws.kty.as_slice(), ws.ktyt.as_slice());
                for k in 0..n_steps {
                    let val = (u[k] - ut[k]) / tau - (kty[k] - ktyt[k]);
                    dr2 += val * val;
                }
            }
            let dual_res = dr2.sqrt();

            let mut pr2 = 0.0;
            for r in 0..n {
                let val = (ws.y_eq[r] - ws.yt_eq[r]) / sigma - (ws.ku_eq[r] - ws.w_eq[r]);
                pr2 += val * val;
            }
            {
                let (y, yt) = (ws.y_box.as_slice(), ws.yt_box.as_slice());
                let (u, ut) = (ws.u.as_slice(), ws.ut.as_slice());
                for k in 0..n_steps {
                    let val = (y[k] - yt[k]) / sigma - (u[k] - ut[k]);
                    pr2 += val * val;
                }
            }
            if ws.theta.is_some() {
                let (y, yt) = (ws.y_st.as_slice(), ws.yt_st.as_slice());
                let (ku, w) = (ws.ku_st.as_slice(), ws.w_st.as_slice());
                for j in 0..ws.m_state {
                    let val = (y[j] - yt[j]) / sigma - (ku[j] - w[j]);
                    pr2 += val * val;
                }
            }
            let primal_res = pr2.sqrt();

            let ku_norm = {
                let mut s = ws.w_eq.norm_squared() + ws.ut.norm_squared();
                if ws.theta.is_some() {
                    s += ws.w_st.norm_squared();
                }
                s.sqrt()
            };
            let dual_norm = {
                let mut s = ws.yt_eq.norm_squared() + ws.yt_box.norm_squared();
                if ws.theta.is_some() {
                    s += ws.yt_st.norm_squared();
                }
                s.sqrt()
            };
            // absolute parts scale with the residual dimension
            let m_dual = (n + n_steps + ws.m_state) as f64;
            let tol_p = cfg.eps_abs * m_dual.sqrt()
                + cfg.eps_rel * ku_norm.max(ws.b_s.norm()).max(dual_norm);
            let tol_d =
                cfg.eps_abs * (n_steps as f64).sqrt() + cfg.eps_rel * ws.ktyt.norm();

            if primal_res <= tol_p && dual_res <= tol_d && feas.ok(eps_feas) {
                return Ok(finish(&ws, spec, SolveStatus::Optimal, iter, primal_res, dual_res));
            }

            history.push((
                feas.worst_normalized(b_norm, u_max, ws.theta),
                dual_norm,
            ));
            let len = history.len();
            if len >= 2 * window_checks {
                let recent = history[len - window_checks..]
                    .iter()
                    .map(|(v, _)| *v)
                    .fold(f64::INFINITY, f64::min);
                let older = history[len - 2 * window_checks..len - window_checks]
                    .iter()
                    .map(|(v, _)| *v)
                    .fold(f64::INFINITY, f64::min);
                let dual_then = history[len - 2 * window_checks].1;
                let dual_now = history[len - 1].1;
                if recent > 0.999 * older
                    && recent > 1e-4
                    && dual_now > 1.05 * dual_then
                    && dual_now > 20.0 * (1.0 + ws.b_s.norm())
                {
                    return Ok(finish(
                        &ws,
                        spec,
                        SolveStatus::Infeasible,
                        iter,
                        primal_res,
                        dual_res,
                    ));
                }
            }

            if iter == cfg.max_iters {
                return Ok(finish(&ws, spec, SolveStatus::MaxIters, iter, primal_res, dual_res));
            }
        }

        // over-relaxed updates; caches stay consistent because K is linear
        relax(&mut ws.u, &ws.ut, rho);
        relax(&mut ws.y_eq, &ws.yt_eq, rho);
        relax(&mut ws.y_box, &ws.yt_box, rho);
        relax(&mut ws.ku_eq, &ws.w_eq, rho);
        if ws.theta.is_some() {
            relax(&mut ws.y_st, &ws.yt_st, rho);
            relax(&mut ws.ku_st, &ws.w_st, rho);
        }
        ws.recompute_kty();
    }

    unreachable!("loop returns at iter == max_iters");
}

fn relax(x: &mut DVector<f64>, target: &DVector<f64>, rho: f64) {
    x.axpy(rho, target, 1.0 - rho);
}

fn feasibility(ws: &Workspace) -> Feasibility {
    let n = ws.n;
    let mut eq2 = 0.0;
    for r in 0..n {
        // w_eq holds K ut on the equality block at this point
        let viol = (ws.w_eq[r] - ws.b_s[r]) / ws.row_scale[r];
        eq2 += viol * viol;
    }
    let boxv = (ws.ut.amax() - ws.d.u_max).max(0.0);
    let mut state: f64 = 0.0;
    if let Some(theta) = ws.theta {
        let nm1 = ws.n_steps - 1;
        for i in 0..nm1 {
            let mut norm2 = 0.0;
            for r in 0..n {
                let x = ws.d.c_state[i][r] + ws.w_st[i * n + r] / ws.rho_state;
                norm2 += x * x;
            }
            state = state.max(norm2.sqrt() - theta);
        }
        state = state.max(0.0);
    }
    Feasibility {
        eq: eq2.sqrt(),
        boxv,
        state,
    }
}

fn finish(
    ws: &Workspace,
    spec: &ProblemSpec,
    status: SolveStatus,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
) -> Solution {
    let u = ws.ut.clone();
    let traj = simulate(&spec.discrete, &u);
    let states = traj[1..traj.len() - 1].to_vec();
    let objective = spec.reg.objective(&u);
    Solution {
        u,
        states,
        duals: ws.duals_out(),
        objective,
        primal_residual,
        dual_residual,
        iterations,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{discretize, Plant};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_integrator(horizon: f64) -> Plant {
        Plant::new(
            dmatrix![0.0],
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![1.0]),
            horizon,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn simulate_holds_still_without_input() {
        let plant = Plant::new(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            1.0,
            1.0,
        )
        .unwrap();
        let d = discretize(&plant, 10).unwrap();
        let traj = simulate(&d, &DVector::zeros(10));
        for x in traj {
            assert_relative_eq!(x, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-14);
        }
    }

    #[test]
    fn simulate_reaches_origin_with_constant_drive() {
        let d = discretize(&scalar_integrator(2.0), 200).unwrap();
        let u = DVector::from_element(200, -0.5);
        let traj = simulate(&d, &u);
        assert!(traj[200][0].abs() < 1e-12);
    }

    #[test]
    fn simulate_agrees_with_stacked_operator() {
        let plant = Plant::new(
            dmatrix![0.1, 1.0; -0.6, -0.2],
            DVector::from_vec(vec![0.3, 1.0]),
            DVector::from_vec(vec![1.0, -0.5]),
            3.0,
            1.0,
        )
        .unwrap();
        let d = discretize(&plant, 60).unwrap();
        let u = DVector::from_fn(60, |i, _| ((i * 7) as f64 * 0.11).sin());
        let traj = simulate(&d, &u);
        let expect = &d.phi * &u - &d.b_terminal;
        assert!((&traj[60] - expect).norm() <= 1e-10 * (1.0 + d.b_terminal.norm()));
    }

    fn clot_spec(n_steps: usize, horizon: f64, lambda: f64) -> ProblemSpec {
        let d = discretize(&scalar_integrator(horizon), n_steps).unwrap();
        ProblemSpec::new(d, RegKind::Clot, lambda, None).unwrap()
    }

    #[test]
    fn scalar_integrator_clot_is_constant_half() {
        let spec = clot_spec(200, 2.0, 0.1);
        let sol = solve(&spec, &SolverConfig::default(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        for k in 0..200 {
            assert!((sol.u[k] + 0.5).abs() < 2e-3, "u[{k}] = {}", sol.u[k]);
        }
        let h = spec.discrete.h;
        let expected_obj = 1.0 + 0.1 * h.sqrt() * (200.0f64 * 0.25).sqrt();
        assert!((sol.objective - expected_obj).abs() < 1e-4);
    }

    #[test]
    fn too_short_horizon_is_infeasible() {
        let spec = clot_spec(50, 0.5, 0.1);
        let sol = solve(&spec, &SolverConfig::default(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn warm_start_terminates_immediately() {
        let spec = clot_spec(100, 2.0, 0.1);
        let cfg = SolverConfig::default();
        let cold = solve(&spec, &cfg, None).unwrap();
        let warm = solve(&spec, &cfg, Some(&cold)).unwrap();
        assert!(warm.iterations <= cfg.check_every);
        assert!((&warm.u - &cold.u).amax() <= 1e-6);
    }

    #[test]
    fn solve_is_deterministic() {
        let spec = clot_spec(80, 2.0, 0.1);
        let cfg = SolverConfig::default();
        let a = solve(&spec, &cfg, None).unwrap();
        let b = solve(&spec, &cfg, None).unwrap();
        assert!(a.u.iter().zip(b.u.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn scaling_both_weights_keeps_argmin() {
        let d = discretize(&scalar_integrator(2.0), 50).unwrap();
        let base = ProblemSpec::new(d.clone(), RegKind::Clot, 0.1, None).unwrap();
        let scaled = ProblemSpec::with_regularizer(d, base.reg.scaled(7.5), None).unwrap();
        let cfg = SolverConfig::default();
        let a = solve(&base, &cfg, None).unwrap();
        let b = solve(&scaled, &cfg, None).unwrap();
        assert!((&a.u - &b.u).amax() <= 1e-5);
    }

    #[test]
    fn optimal_solutions_are_feasible() {
        for kind in RegKind::ALL {
            let d = discretize(&scalar_integrator(2.0), 120).unwrap();
            let spec = ProblemSpec::new(d, kind, 0.1, None).unwrap();
            let sol = solve(&spec, &SolverConfig::default(), None).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            let eps = 1e-5 * (1.0 + spec.discrete.b_terminal.norm());
            let eq = (&spec.discrete.phi * &sol.u - &spec.discrete.b_terminal).norm();
            assert!(eq <= eps);
            assert!(sol.u.amax() <= spec.discrete.u_max + eps);
        }
    }
}
