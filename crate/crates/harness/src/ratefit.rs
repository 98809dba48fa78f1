//! Weighted log-log regression for convergence-rate estimation.

use serde::Serialize;

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy)]
pub struct RatePoint {
    pub size: f64,
    pub error: f64,
    /// Standard error of `error`; zero for deterministic measurements.
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    pub slope: f64,
    /// Delta-method standard error of the slope.
    pub slope_stderr: f64,
    pub intercept: f64,
}

/// Weighted least squares of `log error` on `log size`. Weights are the
/// inverse delta-method variances `(stderr/error)²`, floored so exact
/// measurements keep finite weight.
pub fn fit_rate(points: &[RatePoint]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(HarnessError::DegenerateFit(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    let mut ws = Vec::with_capacity(points.len());
    for p in points {
        if !(p.size > 0.0) {
            return Err(HarnessError::DegenerateFit(format!(
                "non-positive size {}",
                p.size
            )));
        }
        if !(p.error > 0.0) {
            return Err(HarnessError::DegenerateFit(format!(
                "non-positive error {} with stderr {}",
                p.error, p.stderr
            )));
        }
        let rel_var = (p.stderr / p.error).powi(2).max(1e-12);
        xs.push(p.size.ln());
        ys.push(p.error.ln());
        ws.push(1.0 / rel_var);
    }
    let sw: f64 = ws.iter().sum();
    let sx: f64 = xs.iter().zip(&ws).map(|(x, w)| x * w).sum();
    let sy: f64 = ys.iter().zip(&ws).map(|(y, w)| y * w).sum();
    let xbar = sx / sw;
    let ybar = sy / sw;
    let sxx: f64 = xs
        .iter()
        .zip(&ws)
        .map(|(x, w)| w * (x - xbar) * (x - xbar))
        .sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ws)
        .zip(&ys)
        .map(|((x, w), y)| w * (x - xbar) * (y - ybar))
        .sum();
    if sxx <= 0.0 {
        return Err(HarnessError::DegenerateFit("sizes coincide".into()));
    }
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        slope_stderr: (1.0 / sxx).sqrt(),
        intercept: ybar - slope * xbar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_power_law_recovered() {
        let pts: Vec<RatePoint> = [4.0, 8.0, 16.0, 32.0]
            .iter()
            .map(|&s: &f64| RatePoint {
                size: s,
                error: 3.5 * s.powf(-1.75),
                stderr: 0.0,
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert_relative_eq!(fit.slope, -1.75, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 3.5f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn huge_stderr_point_is_ignored() {
        let mut pts: Vec<RatePoint> = [4.0, 8.0, 16.0]
            .iter()
            .map(|&s: &f64| RatePoint {
                size: s,
                error: s.powf(-2.0),
                stderr: 1e-9 * s.powf(-2.0),
            })
            .collect();
        pts.push(RatePoint {
            size: 12.0,
            error: 100.0,
            stderr: 1e6,
        });
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-3, "slope {}", fit.slope);
    }

    #[test]
    fn noisy_inverse_square_recovered() {
        // synthetic e = s⁻²·(1 + 1% noise), noise frozen here
        let noise = [0.004, -0.009, 0.007, -0.002, 0.01];
        let pts: Vec<RatePoint> = [4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .zip(&noise)
            .map(|(&s, &eps): (&f64, &f64)| RatePoint {
                size: s,
                error: s.powf(-2.0) * (1.0 + eps),
                stderr: 0.01 * s.powf(-2.0),
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 0.1, "slope {}", fit.slope);
    }

    #[test]
    fn rejects_degenerate_input() {
        let bad = [RatePoint {
            size: 4.0,
            error: 0.0,
            stderr: 0.0,
        }; 3];
        assert!(fit_rate(&bad).is_err());
        assert!(fit_rate(&[]).is_err());
    }
}
