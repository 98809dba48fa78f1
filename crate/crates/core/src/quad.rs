//! Gaussian quadrature rules via the Golub-Welsch eigenvalue method.

use nalgebra::{DMatrix, SymmetricEigen};

fn golub_welsch(off_diag: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = off_diag.len() + 1;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in off_diag.iter().enumerate() {
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let first = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nodes and weights for integration against the weight `exp(-x²/2)` on the
/// real line: `∫ g(x) e^{-x²/2} dx ≈ Σ w_i g(x_i)`.
///
/// The bare Hermite rule (weight `e^{-t²}`) is rescaled by `x = √2 t` so call
/// sites never carry the substitution themselves.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
        let (t, w) = golub_welsch(&off, std::f64::consts::PI.sqrt());
        let s = std::f64::consts::SQRT_2;
        GaussHermite {
            nodes: t.iter().map(|&ti| s * ti).collect(),
            weights: w.iter().map(|&wi| s * wi).collect(),
        }
    }

    /// `∫ g(x) e^{-x²/2} dx`
    pub fn integrate(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .sum()
    }
}

/// Gauss-Legendre rule on a reference interval `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let off: Vec<f64> = (1..n)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        let (nodes, weights) = golub_welsch(&off, 2.0);
        GaussLegendre { nodes, weights }
    }

    /// `∫_a^b f(x) dx`
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum::<f64>()
    }
}
