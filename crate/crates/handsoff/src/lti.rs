//! Continuous-time LTI plants and their zero-order-hold discretization.
//!
//! A plant is either given directly as `(A, B)` or realized from a pole/zero
//! description in controller companion form (monic denominator in the top row,
//! `B = e1`). Discretization computes `Ad = exp(A h)` and `Bd = ∫ exp(A t) B dt`
//! jointly from the exponential of the augmented block matrix `[[A, B], [0, 0]] h`,
//! then assembles the stacked reachability operators used by the solver.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Pole/zero/gain description of a strictly proper SISO transfer function.
///
/// Complex roots must appear in conjugate pairs so the realization is real.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunctionSpec {
    pub zeros: Vec<Complex<f64>>,
    pub poles: Vec<Complex<f64>>,
    pub gain: f64,
}

impl TransferFunctionSpec {
    pub fn new(zeros: Vec<Complex<f64>>, poles: Vec<Complex<f64>>, gain: f64) -> Result<Self> {
        let spec = Self { zeros, poles, gain };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.zeros.len() >= self.poles.len() {
            return Err(Error::ImproperTransferFunction {
                nz: self.zeros.len(),
                np: self.poles.len(),
            });
        }
        check_conjugate_pairs(&self.zeros)?;
        check_conjugate_pairs(&self.poles)?;
        Ok(())
    }

    /// Controller companion realization of the denominator polynomial.
    ///
    /// Returns `(A, B)` with `A` the top-companion matrix of the monic
    /// denominator and `B = e1`. The numerator only shapes the (unused)
    /// output map, so `A` and `B` depend on the poles alone.
    pub fn realize(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.validate()?;
        let den = poly_from_roots(&self.poles)?;
        let n = self.poles.len();
        let mut a = DMatrix::zeros(n, n);
        for (j, &c) in den[1..].iter().enumerate() {
            a[(0, j)] = -c;
        }
        for i in 1..n {
            a[(i, i - 1)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        b[0] = 1.0;
        Ok((a, b))
    }
}

fn check_conjugate_pairs(roots: &[Complex<f64>]) -> Result<()> {
    let mut used = vec![false; roots.len()];
    for (i, r) in roots.iter().enumerate() {
        if used[i] || is_real(r) {
            continue;
        }
        let partner = roots.iter().enumerate().position(|(j, s)| {
            !used[j] && j != i && (s - r.conj()).norm() <= 1e-9 * (1.0 + r.norm())
        });
        match partner {
            Some(j) => {
                used[i] = true;
                used[j] = true;
            }
            None => return Err(Error::NonConjugateRoots { re: r.re, im: r.im }),
        }
    }
    Ok(())
}

fn is_real(r: &Complex<f64>) -> bool {
    r.im.abs() <= 1e-12 * (1.0 + r.norm())
}

/// Expands `prod (s - r_i)` into real monic coefficients, descending powers.
///
/// Conjugate pairs are multiplied as real quadratics so the output carries no
/// imaginary rounding residue.
fn poly_from_roots(roots: &[Complex<f64>]) -> Result<Vec<f64>> {
    check_conjugate_pairs(roots)?;
    let mut coeffs = vec![1.0];
    let mut used = vec![false; roots.len()];
    for (i, r) in roots.iter().enumerate() {
        if used[i] {
            continue;
        }
        used[i] = true;
        if is_real(r) {
            coeffs = poly_mul(&coeffs, &[1.0, -r.re]);
        } else {
            let j = roots
                .iter()
                .enumerate()
                .position(|(j, s)| {
                    !used[j] && (s - r.conj()).norm() <= 1e-9 * (1.0 + r.norm())
                })
                .expect("pairs checked above");
            used[j] = true;
            coeffs = poly_mul(&coeffs, &[1.0, -2.0 * r.re, r.norm_sqr()]);
        }
    }
    Ok(coeffs)
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &pi) in p.iter().enumerate() {
        for (j, &qj) in q.iter().enumerate() {
            out[i + j] += pi * qj;
        }
    }
    out
}

/// Continuous-time plant `dx/dt = A x + B u` with initial state, horizon and
/// control bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub xi: DVector<f64>,
    pub horizon: f64,
    pub u_max: f64,
    controllable: bool,
}

impl Plant {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        xi: DVector<f64>,
        horizon: f64,
        u_max: f64,
    ) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidPlant(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        if b.len() != n {
            return Err(Error::InvalidPlant(format!(
                "B must have {} rows, got {}",
                n,
                b.len()
            )));
        }
        if xi.len() != n {
            return Err(Error::InvalidPlant(format!(
                "initial state must have length {}, got {}",
                n,
                xi.len()
            )));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidPlant("horizon T must be positive".into()));
        }
        if !(u_max > 0.0) {
            return Err(Error::InvalidPlant("control bound must be positive".into()));
        }
        let controllable = controllability_rank(&a, &b) == n;
        Ok(Self {
            a,
            b,
            xi,
            horizon,
            u_max,
            controllable,
        })
    }

    pub fn from_transfer_function(
        spec: &TransferFunctionSpec,
        xi: DVector<f64>,
        horizon: f64,
        u_max: f64,
    ) -> Result<Self> {
        let (a, b) = spec.realize()?;
        Self::new(a, b, xi, horizon, u_max)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Rank of `[B, AB, ..., A^{n-1}B]` equals the state dimension.
    /// A deficient plant may still be steered from particular initial states,
    /// so this is a warning signal, not an error.
    pub fn is_controllable(&self) -> bool {
        self.controllable
    }
}

fn controllability_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> usize {
    let n = a.nrows();
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    let scale = ctrb.amax().max(1.0);
    ctrb.rank(1e-10 * scale)
}

/// Finite-dimensional data of the discretized steering problem.
///
/// `phi` maps the control sequence to the terminal state; the intermediate
/// reachability operator is kept in factored form (`ad`, `bd`) and applied by
/// recursion — see [`DiscreteProblem::apply_psi`]. `psi_dense` materializes it
/// for small instances.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProblem {
    pub ad: DMatrix<f64>,
    pub bd: DVector<f64>,
    /// Sample count N; `h * N` equals the plant horizon to rounding.
    pub n_steps: usize,
    pub h: f64,
    /// `n x N` matrix with column k equal to `Ad^{N-1-k} Bd`.
    pub phi: DMatrix<f64>,
    /// Terminal-equality target `-Ad^N xi`.
    pub b_terminal: DVector<f64>,
    /// Free-response states `Ad^i xi` for `i = 1..N-1`.
    pub c_state: Vec<DVector<f64>>,
    /// Initial state and control bound, carried over from the plant.
    pub xi: DVector<f64>,
    pub u_max: f64,
}

impl DiscreteProblem {
    pub fn state_dim(&self) -> usize {
        self.ad.nrows()
    }

    /// `y = Psi u`: zero-initial-state forward recursion. `y` is the stacked
    /// vector of states 1..N-1, length `(N-1) * n`; only `u[0..N-1]` enters.
    pub fn apply_psi(&self, u: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.state_dim();
        let nm1 = self.n_steps - 1;
        debug_assert_eq!(u.len(), self.n_steps);
        debug_assert_eq!(out.len(), nm1 * n);
        let mut state = DVector::zeros(n);
        for i in 1..=nm1 {
            state = &self.ad * &state + &self.bd * u[i - 1];
            out.rows_mut((i - 1) * n, n).copy_from(&state);
        }
    }

    /// `g = Psi^T y`: backward adjoint recursion, `g` has length N with the
    /// last entry zero (the final control does not enter intermediate states).
    pub fn apply_psi_transpose(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.state_dim();
        let nm1 = self.n_steps - 1;
        debug_assert_eq!(y.len(), nm1 * n);
        debug_assert_eq!(out.len(), self.n_steps);
        out[self.n_steps - 1] = 0.0;
        let mut q = DVector::zeros(n);
        for j in (1..=nm1).rev() {
            let mut next = self.ad.tr_mul(&q);
            next += y.rows((j - 1) * n, n);
            q = next;
            out[j - 1] = self.bd.dot(&q);
        }
    }

    /// Dense `(N-1)n x (N-1)` intermediate reachability matrix. Intended for
    /// small instances and tests; the solver never forms it.
    pub fn psi_dense(&self) -> DMatrix<f64> {
        build_psi(&self.ad, &self.bd, self.n_steps)
    }
}

/// Discretizes a plant over N uniform zero-order-hold intervals.
pub fn discretize(plant: &Plant, n_steps: usize) -> Result<DiscreteProblem> {
    let n = plant.dim();
    if n_steps < n {
        return Err(Error::InvalidProblem(format!(
            "need at least as many samples as states ({} < {})",
            n_steps, n
        )));
    }
    let h = plant.horizon / n_steps as f64;

    // exp([[A, B], [0, 0]] h) = [[Ad, Bd], [0, I]]
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&plant.a * h));
    aug.view_mut((0, n), (n, 1)).copy_from(&(&plant.b * h));
    let exp_aug = aug.exp();
    if exp_aug.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDiscretization);
    }
    let ad = exp_aug.view((0, 0), (n, n)).into_owned();
    let bd = DVector::from_fn(n, |r, _| exp_aug[(r, n)]);

    let phi = build_phi(&ad, &bd, n_steps);

    let mut c_state = Vec::with_capacity(n_steps - 1);
    let mut free = plant.xi.clone();
    for _ in 1..n_steps {
        free = &ad * &free;
        c_state.push(free.clone());
    }
    free = &ad * &free;
    let b_terminal = -free;

    Ok(DiscreteProblem {
        ad,
        bd,
        n_steps,
        h,
        phi,
        b_terminal,
        c_state,
        xi: plant.xi.clone(),
        u_max: plant.u_max,
    })
}

/// `[Ad^{N-1} Bd, Ad^{N-2} Bd, ..., Bd]`, built by one running product.
pub fn build_phi(ad: &DMatrix<f64>, bd: &DVector<f64>, n_steps: usize) -> DMatrix<f64> {
    let n = ad.nrows();
    let mut phi = DMatrix::zeros(n, n_steps);
    let mut col = bd.clone();
    for k in (0..n_steps).rev() {
        phi.set_column(k, &col);
        col = ad * col;
    }
    phi
}

/// Dense block-lower-triangular matrix with block `(i, k) = Ad^{i-1-k} Bd`
/// for `k <= i-1` (block rows `i = 1..N-1`).
pub fn build_psi(ad: &DMatrix<f64>, bd: &DVector<f64>, n_steps: usize) -> DMatrix<f64> {
    let n = ad.nrows();
    let nm1 = n_steps - 1;
    let mut powers = Vec::with_capacity(nm1);
    let mut col = bd.clone();
    for _ in 0..nm1 {
        powers.push(col.clone());
        col = ad * col;
    }
    let mut psi = DMatrix::zeros(nm1 * n, nm1);
    for i in 1..=nm1 {
        for k in 0..i {
            psi.view_mut(((i - 1) * n, k), (n, 1))
                .copy_from(&powers[i - 1 - k]);
        }
    }
    psi
}
