//! Free-energy table construction and its correctness gates.

use kawasaki_core::macroscale::build_free_energy;
use kawasaki_core::quad::GaussHermite;

use super::{ExperimentOutput, Stopwatch};
use crate::config::{ExperimentConfig, PotentialSpec};
use crate::report::{CriterionResult, RateReport};
use crate::Result;

pub fn run_free_energy(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut watch = Stopwatch::new();
    let quad = GaussHermite::new(200);
    let pot = config.potential.build(&quad)?;
    let table = build_free_energy(&pot, &quad, 3.0, 241)?;

    let mut report = RateReport::new(
        "free-energy",
        &config.canonical_toml(),
        config.potential.label(),
        config.seed,
    );

    report.push_criterion(CriterionResult::le(
        "phi_prime_vanishes_at_zero",
        table.phi_prime(0.0).abs(),
        1e-8,
    ));
    let (lam, big_lam) = table.lambda_bounds();
    report.push_criterion(CriterionResult::ge("phi_second_positive", lam, 1e-6));
    report.push_criterion(CriterionResult::le("phi_second_bounded", big_lam, 100.0));

    match config.potential {
        PotentialSpec::Gaussian => {
            let mut worst: f64 = 0.0;
            for i in 0..=120 {
                let m = -3.0 + i as f64 * 0.05;
                worst = worst.max((table.phi_prime(m) - m).abs());
                worst = worst.max((table.phi_second(m) - 1.0).abs());
            }
            report.push_criterion(CriterionResult::le(
                "gaussian_phi_prime_is_identity",
                worst,
                1e-10,
            ));
        }
        PotentialSpec::Cosine { .. } => {
            // brute-force Legendre grid search oracle at a few magnetizations
            let log_partition_dense = |sigma: f64| -> f64 {
                let pts = 50_001;
                let lo = -12.0 + sigma.min(0.0);
                let hi = 12.0 + sigma.max(0.0);
                let h = (hi - lo) / (pts - 1) as f64;
                let mut s = 0.0;
                for i in 0..pts {
                    let x = lo + i as f64 * h;
                    let trap = if i == 0 || i == pts - 1 { 0.5 } else { 1.0 };
                    s += trap * (sigma * x - pot.psi(x)).exp();
                }
                (s * h).ln()
            };
            let mut worst: f64 = 0.0;
            for &m in &[-1.4_f64, 0.0, 0.9, 2.1] {
                let sig0 = table.phi_prime(m);
                let mut best = f64::MIN;
                for i in 0..=1600 {
                    let sig = sig0 - 0.4 + 0.8 * i as f64 / 1600.0;
                    best = best.max(sig * m - log_partition_dense(sig));
                }
                worst = worst.max((table.phi(m) - best).abs());
            }
            report.push_criterion(CriterionResult::le(
                "phi_matches_grid_search_oracle",
                worst,
                1e-6,
            ));
        }
    }
    watch.lap("table");
    report.finalize();
    Ok(ExperimentOutput {
        report,
        errors_rows: Vec::new(),
        constants_rows: Vec::new(),
        free_energy_rows: Some(table.rows().collect()),
        timings: watch.into_rows(),
    })
}
