//! Experiment orchestration for the multiscale Kawasaki toolkit.
//!
//! Four experiments are exposed, one per convergence statement plus an
//! operator battery, all driven by a single TOML config and emitting
//! `report.json` / `errors.csv` / `constants.csv` next to each other.
//! Identical config and seed reproduce `report.json` bit for bit; wall-clock
//! timings go to a separate `timings.csv` so they cannot break that.

pub mod config;
pub mod experiments;
pub mod ratefit;
pub mod report;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] kawasaki_core::CoreError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Deterministic per-realization seed derivation (splitmix64 chain).
pub fn stream_seed(base: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(base ^ splitmix(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Fixed-order pairwise summation; the reduction order never depends on the
/// thread schedule, so ensemble averages are reproducible.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Mean and standard error of the mean by pairwise reduction.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(v) / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-9);
    }

    #[test]
    fn stream_seeds_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000 {
            assert!(seen.insert(stream_seed(7, i)));
        }
    }
}
