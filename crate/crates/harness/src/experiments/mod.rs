//! The experiment runners, one per convergence statement plus the operator
//! battery and the free-energy table dump.

mod free_energy;
mod full_limit;
mod meso_macro;
mod micro_meso;
mod operator_suite;

pub use free_energy::run_free_energy;
pub use full_limit::run_full_limit;
pub use meso_macro::run_meso_macro;
pub use micro_meso::run_micro_meso;
pub use operator_suite::run_operator_suite;

use std::path::Path;
use std::time::Instant;

use kawasaki_core::macroscale::{macro_stability_dt, macro_step, FreeEnergyTable, MacroField, MacroScheme};
use kawasaki_core::micro::KawasakiState;
use kawasaki_core::{MultiscaleGrid, SingleSitePotential, SpinConfiguration};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::report::{self, RateReport};
use crate::{mean_stderr, stream_seed, Result};

/// Everything a run produces; `write_to` lays the files out in one directory.
pub struct ExperimentOutput {
    pub report: RateReport,
    pub errors_rows: Vec<(usize, f64, f64, f64)>,
    pub constants_rows: Vec<(String, usize, usize, f64)>,
    pub free_energy_rows: Option<Vec<(f64, f64, f64, f64)>>,
    pub timings: Vec<(String, f64)>,
}

impl ExperimentOutput {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        report::write_report(dir, &self.report)?;
        report::write_errors_csv(dir, &self.errors_rows)?;
        report::write_constants_csv(dir, &self.constants_rows)?;
        if let Some(rows) = &self.free_energy_rows {
            report::write_free_energy_csv(dir, rows.iter().cloned())?;
        }
        report::write_timings_csv(dir, &self.timings)?;
        Ok(())
    }
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    match config.kind {
        ExperimentKind::OperatorSuite => run_operator_suite(config),
        ExperimentKind::MicroMeso => run_micro_meso(config),
        ExperimentKind::MesoMacro => run_meso_macro(config),
        ExperimentKind::FullLimit => run_full_limit(config),
        ExperimentKind::FreeEnergy => run_free_energy(config),
    }
}

/// Uniform snapshot grid `0 = t_0 < ... < t_{S-1} = T`.
pub(crate) fn snapshot_times(horizon: f64, snapshots: usize) -> Vec<f64> {
    (0..snapshots)
        .map(|i| horizon * i as f64 / (snapshots - 1) as f64)
        .collect()
}

/// Split the horizon into whole micro steps per snapshot interval, capped by
/// the stability step.
pub(crate) fn aligned_steps(horizon: f64, snapshots: usize, dt_cap: f64) -> (usize, f64) {
    let interval = horizon / (snapshots - 1) as f64;
    let steps = (interval / dt_cap).ceil().max(1.0) as usize;
    (steps, interval / steps as f64)
}

/// Smallest multiple of `base` that is at least `min`.
pub(crate) fn grid_multiple(min: usize, base: usize) -> usize {
    base * min.div_ceil(base)
}

/// Deterministic parallel ensemble sweep: realization `r` owns the stream
/// `stream_seed(seed, r)`, snapshots are recorded at the aligned step grid,
/// and the caller's metric closure maps each snapshot state to a metric
/// vector. The result is `[snapshot][metric][realization]`, reduced in index
/// order by the caller.
pub(crate) fn run_micro_ensemble<FI, FM>(
    grid: &MultiscaleGrid,
    pot: &SingleSitePotential,
    dt: f64,
    steps_per_snap: usize,
    snapshots: usize,
    realizations: usize,
    seed: u64,
    init: FI,
    metric: FM,
    n_metrics: usize,
) -> Result<Vec<Vec<Vec<f64>>>>
where
    FI: Fn(&mut ChaCha12Rng) -> Result<SpinConfiguration> + Sync,
    FM: Fn(usize, &SpinConfiguration) -> Result<Vec<f64>> + Sync,
{
    let per_real: Vec<Result<Vec<Vec<f64>>>> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(seed, r as u64));
            let x0 = init(&mut rng)?;
            let mut state = KawasakiState::new(x0, rng);
            let mut rows = Vec::with_capacity(snapshots);
            rows.push(metric(0, &state.config())?);
            for s in 1..snapshots {
                for _ in 0..steps_per_snap {
                    state.step(pot, grid, dt, true)?;
                }
                rows.push(metric(s, &state.config())?);
            }
            Ok(rows)
        })
        .collect();

    let mut collected = Vec::with_capacity(realizations);
    for r in per_real {
        collected.push(r?);
    }
    let mut out = vec![vec![vec![0.0; realizations]; n_metrics]; snapshots];
    for (r, rows) in collected.iter().enumerate() {
        for (s, row) in rows.iter().enumerate() {
            for (m, &v) in row.iter().enumerate() {
                out[s][m][r] = v;
            }
        }
    }
    Ok(out)
}

use rand::SeedableRng;

/// Ensemble mean and standard error per snapshot for one metric.
pub(crate) fn reduce_metric(ensemble: &[Vec<Vec<f64>>], metric: usize) -> Vec<(f64, f64)> {
    ensemble.iter().map(|snap| mean_stderr(&snap[metric])).collect()
}

/// Explicit macro trajectory recorded at the snapshot grid.
pub(crate) fn run_macro_trajectory(
    table: &FreeEnergyTable,
    zeta0: MacroField,
    horizon: f64,
    snapshots: usize,
) -> Result<Vec<(f64, MacroField)>> {
    let g = zeta0.grid_size();
    let cap = 0.8 * macro_stability_dt(table, g);
    let (steps, dt) = aligned_steps(horizon, snapshots, cap);
    let times = snapshot_times(horizon, snapshots);
    let mut out = Vec::with_capacity(snapshots);
    let mut z = zeta0;
    out.push((times[0], z.clone()));
    for t in times.iter().skip(1) {
        for _ in 0..steps {
            z = macro_step(table, &z, dt, MacroScheme::Explicit)?;
        }
        out.push((*t, z.clone()));
    }
    Ok(out)
}

/// Sup over snapshots of the ensemble mean, with the standard error of the
/// attaining snapshot.
pub(crate) fn sup_with_se(series: &[(f64, f64)]) -> (f64, f64) {
    let mut best = (f64::MIN, 0.0);
    for &(v, se) in series {
        if v > best.0 {
            best = (v, se);
        }
    }
    best
}

/// Time integral of a per-snapshot quantity by the trapezoid rule.
pub(crate) fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 1..times.len() {
        s += 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
    }
    s
}

/// Stopwatch helper for the timings sidecar.
pub(crate) struct Stopwatch {
    start: Instant,
    rows: Vec<(String, f64)>,
}

impl Stopwatch {
    pub(crate) fn new() -> Self {
        Stopwatch {
            start: Instant::now(),
            rows: Vec::new(),
        }
    }

    pub(crate) fn lap(&mut self, label: impl Into<String>) {
        self.rows.push((label.into(), self.start.elapsed().as_secs_f64()));
        self.start = Instant::now();
    }

    pub(crate) fn into_rows(self) -> Vec<(String, f64)> {
        self.rows
    }
}
