//! Meso-to-macro convergence: the deterministic spline flow against the
//! finite-difference solution of the limiting equation, compared in H⁻¹ on
//! the common mesh, with the size ladder tied to `K = N/M`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use kawasaki_core::macroscale::{build_free_energy, MacroField};
use kawasaki_core::meso::{integrate, DriftMode, MesoDrift};
use kawasaki_core::norms;
use kawasaki_core::operators::OperatorCache;
use kawasaki_core::piecewise::PiecewisePoly;
use kawasaki_core::quad::GaussHermite;
use kawasaki_core::MultiscaleGrid;

use super::{
    grid_multiple, run_macro_trajectory, snapshot_times, sup_with_se, trapezoid, ExperimentOutput,
    Stopwatch,
};
use crate::config::{DriftModeSpec, ExperimentConfig};
use crate::ratefit::{fit_rate, RatePoint};
use crate::report::{CriterionResult, NamedFit, RateReport, SizeResult};
use crate::{stream_seed, Result};

pub fn run_meso_macro(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut watch = Stopwatch::new();
    let quad = GaussHermite::new(200);
    let pot = config.potential.build(&quad)?;
    let table = build_free_energy(&pot, &quad, 3.0, 241)?;
    let times = snapshot_times(config.horizon, config.snapshots);

    let mut report = RateReport::new(
        "meso-macro",
        &config.canonical_toml(),
        config.potential.label(),
        config.seed,
    );
    let mut errors_rows = Vec::new();
    let mut points = Vec::new();
    let mut swap_worst: f64 = 0.0;

    for entry in &config.ladder {
        let grid = MultiscaleGrid::new(entry.n, entry.m)?;
        let cache = OperatorCache::assemble(grid)?;
        let g = grid_multiple(config.macro_grid_min, entry.m);
        let zeta0 = MacroField::from_profile(g, |th| {
            config.init_profile.eval(config.init_amplitude, th)
        });
        let zeta_traj = run_macro_trajectory(&table, zeta0.clone(), config.horizon, config.snapshots)?;

        let eta0 = cache.project_piecewise(&zeta0.as_piecewise())?;
        let run_eta = |mode: DriftMode| -> Result<Vec<(f64, kawasaki_core::SplineField)>> {
            let drift = MesoDrift::new(&cache, &pot, mode)?;
            let dt = drift.stable_dt();
            let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(config.seed, 0x3E50));
            Ok(integrate(&drift, &eta0, dt, &times, &mut rng)?)
        };
        let eta_traj = match config.drift_mode {
            DriftModeSpec::GaussianExact => run_eta(DriftMode::GaussianExact)?,
            DriftModeSpec::SurrogatePhi => run_eta(DriftMode::SurrogatePhi(&table))?,
            DriftModeSpec::Mcmc => run_eta(DriftMode::Mcmc(Default::default()))?,
        };

        let mut hneg_sq = Vec::with_capacity(times.len());
        let mut l2_sq = Vec::with_capacity(times.len());
        for (i, &t) in times.iter().enumerate() {
            let diff = zeta_traj[i]
                .1
                .as_piecewise()
                .sub(&PiecewisePoly::from_spline(&eta_traj[i].1))?;
            let hn = norms::hneg1_norm(&diff)?.powi(2);
            hneg_sq.push((hn, 0.0));
            l2_sq.push(diff.l2_norm_sq());
            errors_rows.push((entry.n, t, hn, 0.0));
        }
        let (sup_hneg, _) = sup_with_se(&hneg_sq);
        let int_l2 = trapezoid(&times, &l2_sq);

        // drift-mode swap: the exact and surrogate flows should agree within
        // the measured error envelope
        if config.potential.is_gaussian()
            && matches!(config.drift_mode, DriftModeSpec::GaussianExact)
        {
            let eta_surr = run_eta(DriftMode::SurrogatePhi(&table))?;
            let mut sup_surr: f64 = 0.0;
            for (i, _) in times.iter().enumerate() {
                let diff = zeta_traj[i]
                    .1
                    .as_piecewise()
                    .sub(&PiecewisePoly::from_spline(&eta_surr[i].1))?;
                sup_surr = sup_surr.max(norms::hneg1_norm(&diff)?.powi(2));
            }
            swap_worst = swap_worst.max(sup_surr / sup_hneg.max(1e-300));
        }

        let mut metrics = BTreeMap::new();
        metrics.insert("time_integral_l2_sq".into(), int_l2);
        metrics.insert("macro_grid".into(), g as f64);
        report.sizes.push(SizeResult {
            n: entry.n,
            m: entry.m,
            k: grid.k(),
            sup_error: sup_hneg,
            stderr: 0.0,
            metrics,
        });
        points.push(RatePoint {
            size: entry.m as f64,
            error: sup_hneg,
            stderr: 0.0,
        });
        watch.lap(format!("size_n{}_m{}", entry.n, entry.m));
    }

    let fit = fit_rate(&points)?;
    report.fits.push(NamedFit {
        name: "sup_hneg1_sq_vs_m".into(),
        fit,
    });
    report.push_criterion(CriterionResult::le("hneg1_sup_sq_slope_vs_m", fit.slope, -1.4));
    if swap_worst > 0.0 {
        report.push_criterion(CriterionResult::le(
            "drift_mode_swap_within_envelope",
            swap_worst,
            2.0,
        ));
    }
    report.finalize();
    Ok(ExperimentOutput {
        report,
        errors_rows,
        constants_rows: Vec::new(),
        free_energy_rows: None,
        timings: watch.into_rows(),
    })
}
