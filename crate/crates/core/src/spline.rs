//! Mean-zero C¹ quadratic splines on the torus and their periodic B-spline
//! basis.
//!
//! The basis function `B_j` is supported on three consecutive mesh cells. In
//! the local coordinate `u = θ - p/M` of cell `p ∈ {0, .., M-1}` the spline
//! with coefficients `c` reads
//!
//! ```text
//! y|_p(u) = c[p+1]·(M²u²/2) + c[p]·(1/2 + Mu - M²u²) + c[p-1]·(M²u²/2 - Mu + 1/2)
//! ```
//!
//! with indices mod `M`. Accumulating the three offsets keeps the formula
//! valid even when the support wraps onto itself (`M = 2`), and evaluating in
//! local coordinates avoids the cancellation that global-coordinate
//! coefficients (size `O(M²)`) would cost.

use rand::Rng;
use rand_distr::StandardNormal;

/// Quadratic piece in the local coordinate of one mesh cell:
/// `y(u) = a·u² + b·u + c` for `u ∈ [0, 1/M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPiece {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// The same piece in global coordinates: `y(θ) = alpha·θ² + beta·θ + gamma`
/// on `[p/M, (p+1)/M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalPiece {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Evaluate the periodic quadratic B-spline `B_j` (0-based `j`) at `theta`.
///
/// Knot values are 1/2, the midpoint of the central cell reaches 3/4, and
/// `Σ_j B_j ≡ 1`.
pub fn bspline_eval(m: usize, j: usize, theta: f64) -> f64 {
    assert!(m >= 2 && j < m);
    let t = theta.rem_euclid(1.0);
    let mf = m as f64;
    let mut p = (t * mf).floor() as usize;
    if p >= m {
        p = m - 1;
    }
    let u = t - p as f64 / mf;
    let d = (j + m - p) % m;
    let mut val = 0.0;
    if d == 1 {
        // rising tail of B_{p+1}
        val += 0.5 * mf * mf * u * u;
    }
    if d == 0 {
        // central cell of B_p
        val += 0.5 + mf * u - mf * mf * u * u;
    }
    if d == m - 1 {
        // falling tail of B_{p-1}
        val += 0.5 * mf * mf * u * u - mf * u + 0.5;
    }
    val
}

/// Local piece coefficients of the spline `Σ_j coeffs[j]·B_j` on each cell.
pub fn local_pieces(m: usize, coeffs: &[f64]) -> Vec<LocalPiece> {
    assert!(m >= 2 && coeffs.len() == m);
    let mf = m as f64;
    (0..m)
        .map(|p| {
            let cp1 = coeffs[(p + 1) % m];
            let cp = coeffs[p];
            let cm1 = coeffs[(p + m - 1) % m];
            LocalPiece {
                a: 0.5 * mf * mf * (cp1 - 2.0 * cp + cm1),
                b: mf * (cp - cm1),
                c: 0.5 * (cp + cm1),
            }
        })
        .collect()
}

/// `∫_a^b Σ_j coeffs[j]·B_j dθ` for arbitrary real `a ≤ b`, exact.
pub fn spline_integral(m: usize, coeffs: &[f64], a: f64, b: f64) -> f64 {
    assert!(b >= a);
    let pieces = local_pieces(m, coeffs);
    let mf = m as f64;
    let h = 1.0 / mf;
    // antiderivative within one cell
    let prim = |p: &LocalPiece, u: f64| -> f64 { p.a * u * u * u / 3.0 + 0.5 * p.b * u * u + p.c * u };
    let full: f64 = pieces.iter().map(|p| prim(p, h)).sum();
    let partial = |t: f64| -> f64 {
        // ∫_0^t with t ∈ [0, 1)
        let mut idx = (t * mf).floor() as usize;
        if idx >= m {
            idx = m - 1;
        }
        let mut s = 0.0;
        for p in pieces.iter().take(idx) {
            s += prim(p, h);
        }
        s + prim(&pieces[idx], t - idx as f64 * h)
    };
    let wraps = (b.div_euclid(1.0) - a.div_euclid(1.0)) * full;
    partial(b.rem_euclid(1.0)) - partial(a.rem_euclid(1.0)) + wraps
}

/// A mean-zero C¹ quadratic spline with `M` pieces, stored through its
/// B-spline coefficients (which sum to zero; each `∫B_j = 1/M`).
#[derive(Debug, Clone, PartialEq)]
pub struct SplineField {
    m: usize,
    coeffs: Vec<f64>,
}

impl SplineField {
    /// Build from B-spline coefficients, re-centering the sum to zero.
    pub fn from_bspline_coeffs(mut coeffs: Vec<f64>) -> Self {
        let m = coeffs.len();
        assert!(m >= 2, "need at least two spline pieces");
        let mean = coeffs.iter().sum::<f64>() / m as f64;
        for c in &mut coeffs {
            *c -= mean;
        }
        SplineField { m, coeffs }
    }

    pub fn zero(m: usize) -> Self {
        assert!(m >= 2);
        SplineField {
            m,
            coeffs: vec![0.0; m],
        }
    }

    /// Standard-normal coefficients, re-centered. Handy for randomized
    /// operator checks.
    pub fn random(m: usize, rng: &mut impl Rng) -> Self {
        let coeffs: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self::from_bspline_coeffs(coeffs)
    }

    #[inline]
    pub fn pieces(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn local_pieces(&self) -> Vec<LocalPiece> {
        local_pieces(self.m, &self.coeffs)
    }

    /// Per-piece polynomial in global coordinates. The curvature `alpha` is
    /// what the closed-form second-difference formulas consume.
    pub fn global_pieces(&self) -> Vec<GlobalPiece> {
        let mf = self.m as f64;
        self.local_pieces()
            .iter()
            .enumerate()
            .map(|(p, lp)| {
                let t = p as f64 / mf;
                GlobalPiece {
                    alpha: lp.a,
                    beta: lp.b - 2.0 * lp.a * t,
                    gamma: lp.a * t * t - lp.b * t + lp.c,
                }
            })
            .collect()
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let t = theta.rem_euclid(1.0);
        let mf = self.m as f64;
        let mut p = (t * mf).floor() as usize;
        if p >= self.m {
            p = self.m - 1;
        }
        let lp = self.piece(p);
        let u = t - p as f64 / mf;
        (lp.a * u + lp.b) * u + lp.c
    }

    pub fn deriv(&self, theta: f64) -> f64 {
        let t = theta.rem_euclid(1.0);
        let mf = self.m as f64;
        let mut p = (t * mf).floor() as usize;
        if p >= self.m {
            p = self.m - 1;
        }
        let lp = self.piece(p);
        let u = t - p as f64 / mf;
        2.0 * lp.a * u + lp.b
    }

    fn piece(&self, p: usize) -> LocalPiece {
        let m = self.m;
        let mf = m as f64;
        let cp1 = self.coeffs[(p + 1) % m];
        let cp = self.coeffs[p];
        let cm1 = self.coeffs[(p + m - 1) % m];
        LocalPiece {
            a: 0.5 * mf * mf * (cp1 - 2.0 * cp + cm1),
            b: mf * (cp - cm1),
            c: 0.5 * (cp + cm1),
        }
    }

    pub fn scaled(&self, s: f64) -> SplineField {
        SplineField {
            m: self.m,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &SplineField, s: f64) {
        assert_eq!(self.m, other.m);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &SplineField) -> SplineField {
        assert_eq!(self.m, other.m);
        SplineField {
            m: self.m,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}
