//! Piecewise polynomials on uniform torus meshes with exact integration.
//!
//! Step functions (lattice configurations, macro fields) and quadratic
//! splines all embed here, so norms and inner products of any mixture reduce
//! to polynomial algebra on a common refinement. No quadrature is involved
//! anywhere, which keeps tolerance budgets pure floating point.

use crate::error::{CoreError, Result};
use crate::lattice::SpinConfiguration;
use crate::spline::SplineField;

/// Hard cap on common-refinement size; `lcm` of the meshes we ever mix stays
/// far below this.
const MAX_COMMON_MESH: usize = 1 << 21;

/// Degree ≤ 3 polynomial per cell in the local coordinate `u ∈ [0, 1/L)`:
/// `c[0] + c[1]u + c[2]u² + c[3]u³`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    cells: usize,
    coeffs: Vec<[f64; 4]>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl PiecewisePoly {
    pub(crate) fn from_cells(coeffs: Vec<[f64; 4]>) -> Self {
        assert!(!coeffs.is_empty());
        PiecewisePoly {
            cells: coeffs.len(),
            coeffs,
        }
    }

    pub fn from_step_values(values: &[f64]) -> Self {
        PiecewisePoly {
            cells: values.len(),
            coeffs: values.iter().map(|&v| [v, 0.0, 0.0, 0.0]).collect(),
        }
    }

    pub fn from_config(x: &SpinConfiguration) -> Self {
        Self::from_step_values(x.values())
    }

    pub fn from_spline(y: &SplineField) -> Self {
        PiecewisePoly {
            cells: y.pieces(),
            coeffs: y
                .local_pieces()
                .iter()
                .map(|p| [p.c, p.b, p.a, 0.0])
                .collect(),
        }
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let t = theta.rem_euclid(1.0);
        let lf = self.cells as f64;
        let mut p = (t * lf).floor() as usize;
        if p >= self.cells {
            p = self.cells - 1;
        }
        let u = t - p as f64 / lf;
        let c = &self.coeffs[p];
        ((c[3] * u + c[2]) * u + c[1]) * u + c[0]
    }

    /// Re-express on a mesh with `cells * factor` cells.
    pub fn refined(&self, factor: usize) -> Self {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let l2 = self.cells * factor;
        let h2 = 1.0 / l2 as f64;
        let mut coeffs = Vec::with_capacity(l2);
        for q in 0..l2 {
            let p = q / factor;
            let ofs = (q % factor) as f64 * h2;
            let c = &self.coeffs[p];
            // shift: evaluate c(u + ofs) as a polynomial in u
            let c0 = ((c[3] * ofs + c[2]) * ofs + c[1]) * ofs + c[0];
            let c1 = (3.0 * c[3] * ofs + 2.0 * c[2]) * ofs + c[1];
            let c2 = 3.0 * c[3] * ofs + c[2];
            let c3 = c[3];
            coeffs.push([c0, c1, c2, c3]);
        }
        PiecewisePoly { cells: l2, coeffs }
    }

    /// Bring two fields onto the least common refinement.
    pub fn common_mesh(a: &Self, b: &Self) -> Result<(Self, Self)> {
        let l = a.cells / gcd(a.cells, b.cells) * b.cells;
        if l > MAX_COMMON_MESH {
            return Err(CoreError::UnsupportedSize(format!(
                "common refinement of {} and {} cells needs {} cells",
                a.cells, b.cells, l
            )));
        }
        Ok((a.refined(l / a.cells), b.refined(l / b.cells)))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let (mut a, b) = Self::common_mesh(self, other)?;
        for (ca, cb) in a.coeffs.iter_mut().zip(&b.coeffs) {
            for i in 0..4 {
                ca[i] -= cb[i];
            }
        }
        Ok(a)
    }

    pub fn integral(&self) -> f64 {
        let h = 1.0 / self.cells as f64;
        self.coeffs
            .iter()
            .map(|c| h * (c[0] + h * (c[1] / 2.0 + h * (c[2] / 3.0 + h * c[3] / 4.0))))
            .sum()
    }

    /// Exact `∫ f·g dθ` over the torus.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        let (a, b) = Self::common_mesh(self, other)?;
        let h = 1.0 / a.cells as f64;
        let mut hp = [0.0; 8];
        hp[0] = h;
        for i in 1..8 {
            hp[i] = hp[i - 1] * h;
        }
        let mut total = 0.0;
        for (ca, cb) in a.coeffs.iter().zip(&b.coeffs) {
            let mut s = 0.0;
            for i in 0..4 {
                if ca[i] == 0.0 {
                    continue;
                }
                for j in 0..4 {
                    s += ca[i] * cb[j] * hp[i + j] / (i + j + 1) as f64;
                }
            }
            total += s;
        }
        Ok(total)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.inner(self).expect("same mesh")
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// The periodic antiderivative `w` with `w' = f` and `∫ w = 0`.
    ///
    /// Requires `∫ f = 0` (otherwise `w` is not periodic) and degree ≤ 2.
    pub fn antiderivative_mean_zero(&self) -> Result<Self> {
        let scale = self.l2_norm() + 1.0;
        if self.integral().abs() > 1e-8 * scale {
            return Err(CoreError::Precondition(format!(
                "antiderivative needs a mean-zero field, got integral {:.3e}",
                self.integral()
            )));
        }
        if self.coeffs.iter().any(|c| c[3] != 0.0) {
            return Err(CoreError::UnsupportedSize(
                "antiderivative of a cubic field exceeds the stored degree".into(),
            ));
        }
        let h = 1.0 / self.cells as f64;
        let mut coeffs = Vec::with_capacity(self.cells);
        let mut w0 = 0.0;
        for c in &self.coeffs {
            coeffs.push([w0, c[0], c[1] / 2.0, c[2] / 3.0]);
            w0 += h * (c[0] + h * (c[1] / 2.0 + h * c[2] / 3.0));
        }
        let mut w = PiecewisePoly {
            cells: self.cells,
            coeffs,
        };
        let mean = w.integral();
        for c in &mut w.coeffs {
            c[0] -= mean;
        }
        Ok(w)
    }
}
