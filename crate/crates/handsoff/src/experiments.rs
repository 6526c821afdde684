//! The benchmark plant catalog and the table-reproduction runs.
//!
//! The catalog ships as a JSON asset embedded in the crate. Plant labels drift
//! between sources (the sixth-order plant family appears as P5/P6/P7 with
//! varying zero sets); ids are unambiguous rows, labels carry aliases. Zeros
//! only enter the (unused) output map of the realization, so plants differing
//! in zeros alone steer identically.

use std::sync::LazyLock;

use nalgebra::{Complex, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{sparsity_density, theta_sweep, ThetaRange, SPARSITY_THRESHOLD};
use crate::error::{Error, Result};
use crate::lti::{discretize, DiscreteProblem, Plant, TransferFunctionSpec};
use crate::prox::RegKind;
use crate::solver::{solve, ProblemSpec, Solution, SolveStatus, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaRangeSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

/// One benchmark configuration: plant, horizon, initial state and weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub plant: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    /// `[re, im]` pairs.
    pub poles: Vec<[f64; 2]>,
    #[serde(default)]
    pub zeros: Vec<[f64; 2]>,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub theta_range: Option<ThetaRangeSpec>,
}

impl CatalogEntry {
    pub fn transfer_function(&self) -> Result<TransferFunctionSpec> {
        let conv = |v: &[[f64; 2]]| v.iter().map(|[re, im]| Complex::new(*re, *im)).collect();
        TransferFunctionSpec::new(conv(&self.zeros), conv(&self.poles), 1.0)
    }

    pub fn to_plant(&self) -> Result<Plant> {
        Plant::from_transfer_function(
            &self.transfer_function()?,
            DVector::from_column_slice(&self.x0),
            self.horizon,
            1.0,
        )
    }
}

static CATALOG: LazyLock<Vec<CatalogEntry>> = LazyLock::new(|| {
    serde_json::from_str(include_str!("../assets/catalog.json"))
        .expect("embedded catalog must parse")
});

pub fn catalog() -> &'static [CatalogEntry] {
    &CATALOG
}

/// Resolves an id or alias, case-insensitively.
pub fn find(id: &str) -> Result<&'static CatalogEntry> {
    let query = id.trim();
    CATALOG
        .iter()
        .find(|e| {
            e.id.eq_ignore_ascii_case(query)
                || e.aliases.iter().any(|a| a.eq_ignore_ascii_case(query))
        })
        .ok_or_else(|| Error::UnknownCatalogId(id.to_string()))
}

/// Densities of the three methods on one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityRow {
    pub id: String,
    pub plant: String,
    pub lambda: f64,
    pub n_steps: usize,
    pub density: [f64; 3],
    pub status: [SolveStatus; 3],
    pub iterations: [usize; 3],
}

fn solve_cell(
    discrete: &DiscreteProblem,
    kind: RegKind,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<(Solution, f64)> {
    let spec = ProblemSpec::new(discrete.clone(), kind, lambda, None)?;
    let sol = solve(&spec, cfg, None)?;
    let density = sparsity_density(&sol.u, SPARSITY_THRESHOLD)?.density;
    Ok((sol, density))
}

/// Solves all three methods for one catalog entry and reports densities.
pub fn run_entry(entry: &CatalogEntry, n_steps: usize, cfg: &SolverConfig) -> Result<DensityRow> {
    let plant = entry.to_plant()?;
    let discrete = discretize(&plant, n_steps)?;
    let cells: Vec<(Solution, f64)> = RegKind::ALL
        .par_iter()
        .map(|kind| solve_cell(&discrete, *kind, entry.lambda, cfg))
        .collect::<Result<_>>()?;
    Ok(DensityRow {
        id: entry.id.clone(),
        plant: entry.plant.clone(),
        lambda: entry.lambda,
        n_steps,
        density: [cells[0].1, cells[1].1, cells[2].1],
        status: [cells[0].0.status, cells[1].0.status, cells[2].0.status],
        iterations: [
            cells[0].0.iterations,
            cells[1].0.iterations,
            cells[2].0.iterations,
        ],
    })
}

/// Fourth-order integrator at both weights: the lambda-sensitivity table.
pub fn run_table2(n_steps: usize, cfg: &SolverConfig) -> Result<Vec<DensityRow>> {
    ["row1", "row2"]
        .par_iter()
        .map(|id| run_entry(find(id)?, n_steps, cfg))
        .collect()
}

/// All eight catalog rows at the given refinement.
pub fn run_table3(n_steps: usize, cfg: &SolverConfig) -> Result<Vec<DensityRow>> {
    let ids = ["row1", "row2", "row3", "row4", "row5", "row6", "row7", "row8"];
    ids.par_iter()
        .map(|id| run_entry(find(id)?, n_steps, cfg))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub id: String,
    pub plant: String,
    pub lambda: f64,
    pub n_steps: usize,
    /// Unconstrained state peak used as the sweep start.
    pub l_max: f64,
    pub range: ThetaRange,
}

/// Runs the threshold sweep for one state-constrained catalog entry: solve
/// unconstrained, start at the observed state peak, decrease by the entry's
/// step until infeasible.
pub fn run_sweep(entry: &CatalogEntry, n_steps: usize, cfg: &SolverConfig) -> Result<SweepResult> {
    let spec = entry.theta_range.ok_or_else(|| {
        Error::InvalidProblem(format!("catalog entry {} has no theta range", entry.id))
    })?;
    let plant = entry.to_plant()?;
    let discrete = discretize(&plant, n_steps)?;
    let l_max = RegKind::ALL
        .par_iter()
        .map(|kind| {
            let (sol, _) = solve_cell(&discrete, *kind, entry.lambda, cfg)?;
            Ok(crate::analysis::l_max(&sol))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let range = theta_sweep(&discrete, entry.lambda, cfg, l_max, spec.step)?;
    Ok(SweepResult {
        id: entry.id.clone(),
        plant: entry.plant.clone(),
        lambda: entry.lambda,
        n_steps,
        l_max,
        range,
    })
}

/// Both state-constrained studies.
pub fn run_table4_sweeps(n_steps: usize, cfg: &SolverConfig) -> Result<Vec<SweepResult>> {
    ["P1-theta", "P7-theta"]
        .iter()
        .map(|id| run_sweep(find(id)?, n_steps, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_matches_published_rows() {
        let rows = catalog();
        assert_eq!(rows.len(), 10);
        let r1 = find("row1").unwrap();
        assert_eq!(r1.poles.len(), 4);
        assert!(r1.poles.iter().all(|p| *p == [0.0, 0.0]));
        assert_eq!(r1.horizon, 20.0);
        assert_eq!(r1.lambda, 1.0);

        let r3 = find("row3").unwrap();
        assert_eq!(r3.poles, vec![[-0.025, 1.0], [-0.025, -1.0]]);
        assert_eq!(r3.x0, vec![1.0, 1.0]);

        let r5 = find("P3").unwrap();
        assert_eq!(r5.zeros, vec![[-2.0, 0.0]]);

        for id in ["row7", "row8"] {
            assert_eq!(find(id).unwrap().horizon, 40.0);
        }
        let p7 = find("P7").unwrap();
        assert_eq!(p7.zeros, vec![[1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(p7.theta_range.unwrap().step, 1.0);
    }

    #[test]
    fn catalog_round_trips_through_json() {
        let rows = catalog();
        let text = serde_json::to_string(rows).unwrap();
        let back: Vec<CatalogEntry> = serde_json::from_str(&text).unwrap();
        assert_eq!(rows, back.as_slice());
    }

    #[test]
    fn aliases_resolve() {
        assert_eq!(find("p1").unwrap().id, "row1");
        assert_eq!(find("P5").unwrap().id, "row7");
        assert!(find("P99").is_err());
    }

    #[test]
    fn identical_dynamics_for_zero_variants() {
        // zeros shape only the output map, so these steer identically
        let a = find("row7").unwrap().to_plant().unwrap();
        let b = find("row8").unwrap().to_plant().unwrap();
        assert_eq!(a.a, b.a);
        assert_eq!(a.b, b.b);
    }
}
