/// A mean-zero spin configuration on the periodic lattice `{1/N, ..., 1}`,
/// identified with the step function taking the value `values[i]` on
/// `[i/N, (i+1)/N)`.
///
/// Constructors re-center to mean zero instead of rejecting: the dynamics
/// preserves the mean-zero hyperplane exactly, but floating-point drift has
/// to be corrected somewhere and this is the single place that does it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfiguration {
    values: Vec<f64>,
}

impl SpinConfiguration {
    pub fn new(mut values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "empty configuration");
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for v in &mut values {
            *v -= mean;
        }
        SpinConfiguration { values }
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n > 0);
        SpinConfiguration { values: vec![0.0; n] }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Step-function view: the value on the cell containing `theta ∈ [0,1)`.
    /// A cell boundary belongs to the cell on its right.
    pub fn step_value(&self, theta: f64) -> f64 {
        let n = self.values.len();
        let t = theta.rem_euclid(1.0);
        let mut idx = (t * n as f64).floor() as usize;
        if idx >= n {
            idx = n - 1;
        }
        self.values[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_view_cases() {
        let x = SpinConfiguration::new(vec![1.0, -1.0]);
        assert_eq!(x.step_value(0.25), 1.0);
        // the boundary belongs to the right cell
        assert_eq!(x.step_value(0.5), -1.0);

        let x = SpinConfiguration::new(vec![2.0, 0.0, -2.0, 0.0]);
        assert_eq!(x.mean(), 0.0);
        assert_eq!(x.step_value(0.6), -2.0);
    }

    proptest! {
        #[test]
        fn recentering_is_idempotent(raw in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let once = SpinConfiguration::new(raw);
            let twice = SpinConfiguration::new(once.values().to_vec());
            let scale = 1.0 + once.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
            prop_assert!(once.mean().abs() <= 1e-12 * scale);
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
    }
}
