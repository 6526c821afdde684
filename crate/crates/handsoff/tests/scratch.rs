use handsoff::analysis::continuity_study;
use handsoff::experiments::{find, run_sweep};
use handsoff::{RegKind, SolverConfig};
use std::time::Instant;

#[test]
#[ignore]
fn probe_sweep_p1() {
    let t0 = Instant::now();
    let res = run_sweep(find("P1-theta").unwrap(), 2000, &SolverConfig::default()).unwrap();
    println!("sweep wall {:?} l_max {:.4}", t0.elapsed(), res.l_max);
    for p in &res.range.points {
        println!(
            "theta {:7.3} dens ({:.4} {:.4} {:.4}) status {}",
            p.theta, p.density_lasso, p.density_en, p.density_clot, p.status.name()
        );
    }
    println!("theta_min {:.4}", res.range.theta_min);
}

#[test]
#[ignore]
fn probe_continuity() {
    let entry = find("row2").unwrap(); // P1, lambda 0.1
    let plant = entry.to_plant().unwrap();
    let t = plant.horizon;
    let hs: Vec<f64> = [250.0, 500.0, 1000.0, 2000.0, 4000.0]
        .iter()
        .map(|n| t / n)
        .collect();
    for kind in [RegKind::Clot, RegKind::Lasso] {
        let t0 = Instant::now();
        let study = continuity_study(&plant, kind, 0.1, &hs, &SolverConfig::default()).unwrap();
        println!(
            "{}: exponent {:.4} diffs {:?} wall {:?}",
            kind.name(),
            study.fitted_exponent,
            study
                .max_diffs
                .iter()
                .map(|d| format!("{d:.5}"))
                .collect::<Vec<_>>(),
            t0.elapsed()
        );
    }
}
