//! Post-solution analytics: sparsity density, state-threshold discovery, and
//! the refinement study of successive-difference decay.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{discretize, DiscreteProblem, Plant};
use crate::prox::RegKind;
use crate::solver::{solve, ProblemSpec, Solution, SolveStatus, SolverConfig};

/// Magnitude below which a control sample counts as zero.
pub const SPARSITY_THRESHOLD: f64 = 1e-4;

/// Fraction of control samples above the zero threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub density: f64,
    pub threshold: f64,
    pub nonzero_count: usize,
    pub n: usize,
}

pub fn sparsity_density(u: &DVector<f64>, threshold: f64) -> Result<SparsityReport> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidProblem("sparsity threshold must be positive".into()));
    }
    let nonzero_count = u.iter().filter(|x| x.abs() > threshold).count();
    Ok(SparsityReport {
        density: nonzero_count as f64 / u.len() as f64,
        threshold,
        nonzero_count,
        n: u.len(),
    })
}

/// Largest Euclidean state norm over the intermediate steps `1..N-1`.
pub fn l_max(sol: &Solution) -> f64 {
    sol.states.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// One threshold value of a sweep, with densities for all three methods.
/// Densities are NaN at points where that solve did not finish feasibly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub theta: f64,
    pub density_lasso: f64,
    pub density_en: f64,
    pub density_clot: f64,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaRange {
    /// Starting threshold of the sweep (the unconstrained state peak).
    pub theta_max: f64,
    /// Smallest threshold that still solved feasibly.
    pub theta_min: f64,
    pub step: f64,
    pub points: Vec<ThetaPoint>,
}

/// Decreases the threshold from `theta_max` in steps of `step`, solving all
/// three programs at each value with warm starts from the previous one, until
/// a solve reports infeasibility (recorded, then the sweep stops).
pub fn theta_sweep(
    discrete: &DiscreteProblem,
    lambda: f64,
    cfg: &SolverConfig,
    theta_max: f64,
    step: f64,
) -> Result<ThetaRange> {
    if !(step > 0.0) {
        return Err(Error::InvalidProblem("sweep step must be positive".into()));
    }
    if !(theta_max > 0.0) {
        return Err(Error::InvalidProblem("theta_max must be positive".into()));
    }
    let mut points = Vec::new();
    let mut warm: [Option<Solution>; 3] = [None, None, None];
    let mut theta_min = f64::NAN;
    let mut theta = theta_max;
    loop {
        let mut densities = [f64::NAN; 3];
        let mut worst = SolveStatus::Optimal;
        for (slot, kind) in RegKind::ALL.iter().enumerate() {
            let spec = ProblemSpec::new(discrete.clone(), *kind, lambda, Some(theta))?;
            let sol = solve(&spec, cfg, warm[slot].as_ref())?;
            match sol.status {
                SolveStatus::Infeasible => {
                    worst = SolveStatus::Infeasible;
                    warm[slot] = None;
                }
                status => {
                    if status == SolveStatus::MaxIters && worst == SolveStatus::Optimal {
                        worst = SolveStatus::MaxIters;
                    }
                    densities[slot] = sparsity_density(&sol.u, SPARSITY_THRESHOLD)?.density;
                    warm[slot] = Some(sol);
                }
            }
            if worst == SolveStatus::Infeasible {
                break;
            }
        }
        points.push(ThetaPoint {
            theta,
            density_lasso: densities[0],
            density_en: densities[1],
            density_clot: densities[2],
            status: worst,
        });
        if worst == SolveStatus::Infeasible {
            break;
        }
        theta_min = theta;
        theta -= step;
        if theta <= step * 1e-9 {
            break;
        }
    }
    Ok(ThetaRange {
        theta_max,
        theta_min,
        step,
        points,
    })
}

/// Maximum adjacent control difference per sampling period, with a log-log
/// least-squares exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityStudy {
    pub h_values: Vec<f64>,
    pub max_diffs: Vec<f64>,
    pub fitted_exponent: f64,
}

/// Solves the chosen program at each sampling period and records the largest
/// adjacent difference of the control (the wraparound pair is excluded).
pub fn continuity_study(
    plant: &Plant,
    kind: RegKind,
    lambda: f64,
    h_values: &[f64],
    cfg: &SolverConfig,
) -> Result<ContinuityStudy> {
    if h_values.len() < 3 {
        return Err(Error::InvalidProblem("need at least three sampling periods".into()));
    }
    if h_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidProblem("sampling periods must strictly decrease".into()));
    }
    let mut max_diffs = Vec::with_capacity(h_values.len());
    for &h in h_values {
        let steps = (plant.horizon / h).round();
        if !(steps >= 1.0) || (steps * h - plant.horizon).abs() > 1e-6 * plant.horizon {
            return Err(Error::InvalidProblem(format!(
                "sampling period {h} does not divide the horizon {}",
                plant.horizon
            )));
        }
        let d = discretize(plant, steps as usize)?;
        let spec = ProblemSpec::new(d, kind, lambda, None)?;
        let sol = solve(&spec, cfg, None)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::InvalidProblem(format!(
                "plant is infeasible over its horizon at h = {h}"
            )));
        }
        let diff = sol
            .u
            .as_slice()
            .windows(2)
            .map(|w| (w[0] - w[1]).abs())
            .fold(0.0, f64::max);
        max_diffs.push(diff);
    }
    Ok(ContinuityStudy {
        h_values: h_values.to_vec(),
        max_diffs: max_diffs.clone(),
        fitted_exponent: fit_log_slope(h_values, &max_diffs),
    })
}

/// Least-squares slope of `log(d)` against `log(h)`; zero when a difference
/// vanishes (a constant control has no scale to fit).
fn fit_log_slope(h: &[f64], d: &[f64]) -> f64 {
    if d.iter().any(|&x| x <= 1e-300) {
        return 0.0;
    }
    let xs: Vec<f64> = h.iter().map(|&v| v.ln()).collect();
    let ys: Vec<f64> = d.iter().map(|&v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn density_counts_above_threshold() {
        let r = sparsity_density(&dv(&[0.0, 1e-5, 0.5, -0.2]), 1e-4).unwrap();
        assert_eq!(r.nonzero_count, 2);
        assert_eq!(r.density, 0.5);
        let z = sparsity_density(&dv(&[0.0, 0.0]), 1e-4).unwrap();
        assert_eq!(z.density, 0.0);
        assert!(sparsity_density(&dv(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn density_monotone_in_threshold() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let u = DVector::from_fn(40, |_, _| {
                if rng.gen_bool(0.4) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            });
            let mut last = f64::INFINITY;
            for t in [1e-6, 1e-4, 1e-2, 0.5] {
                let d = sparsity_density(&u, t).unwrap().density;
                assert!(d <= last);
                last = d;
            }
        }
    }

    fn scalar_integrator(horizon: f64) -> Plant {
        Plant::new(dmatrix![0.0], dv(&[1.0]), dv(&[1.0]), horizon, 1.0).unwrap()
    }

    #[test]
    fn l_max_of_linear_decay() {
        let d = discretize(&scalar_integrator(2.0), 200).unwrap();
        let spec = ProblemSpec::new(d, RegKind::Clot, 0.1, None).unwrap();
        let sol = solve(&spec, &SolverConfig::default(), None).unwrap();
        // state decays linearly from 1; the peak is the first interior sample
        let peak = l_max(&sol);
        assert!((peak - (1.0 - 0.005)).abs() < 1e-2, "peak = {peak}");
    }

    #[test]
    fn l_max_zero_trajectory() {
        let plant = Plant::new(dmatrix![0.0], dv(&[1.0]), dv(&[0.0]), 1.0, 1.0).unwrap();
        let d = discretize(&plant, 10).unwrap();
        let spec = ProblemSpec::new(d, RegKind::Lasso, 0.0, None).unwrap();
        let sol = solve(&spec, &SolverConfig::default(), None).unwrap();
        assert_eq!(l_max(&sol), 0.0);
    }

    #[test]
    fn constant_control_has_zero_diffs() {
        let study = continuity_study(
            &scalar_integrator(2.0),
            RegKind::Clot,
            0.1,
            &[2.0 / 25.0, 2.0 / 50.0, 2.0 / 100.0],
            &SolverConfig::default(),
        )
        .unwrap();
        for d in &study.max_diffs {
            assert!(*d < 2e-3, "diff = {d}");
        }
    }

    #[test]
    fn continuity_rejects_bad_grids() {
        let plant = scalar_integrator(2.0);
        let cfg = SolverConfig::default();
        assert!(continuity_study(&plant, RegKind::Clot, 0.1, &[0.1, 0.05], &cfg).is_err());
        assert!(
            continuity_study(&plant, RegKind::Clot, 0.1, &[0.05, 0.1, 0.2], &cfg).is_err()
        );
        assert!(
            continuity_study(&plant, RegKind::Clot, 0.1, &[0.3, 0.11, 0.07], &cfg).is_err()
        );
    }

    #[test]
    fn log_slope_recovers_exact_power() {
        let h = [0.1f64, 0.05, 0.025, 0.0125];
        let d: Vec<f64> = h.iter().map(|x| 3.0 * x.sqrt()).collect();
        let slope = fit_log_slope(&h, &d);
        assert!((slope - 0.5).abs() < 1e-12);
    }
}
