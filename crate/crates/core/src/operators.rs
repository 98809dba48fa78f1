//! Assembly and application of the multiscale operator algebra.
//!
//! The lattice carries the periodic second-difference operator
//! `(Ax)_i = N²(-x_{i-1} + 2x_i - x_{i+1})`. The spline space carries three
//! symmetric bilinear forms on B-spline coefficients:
//!
//! * `G` — the L² Gram matrix, `G_{jk} = ⟨B_j, B_k⟩`;
//! * `T` — the form of `P NPᵗ`, `T_{jk} = ⟨NPᵗB_j, NPᵗB_k⟩_{L²}`;
//! * `S` — the form of `Ā = P A NPᵗ`, `S_{jk} = (1/N)(NPᵗB_j)·A(NPᵗB_k)`.
//!
//! Operator matrices are `G⁻¹T` and `G⁻¹S`; solves against `Ā` (singular on
//! constants) use a rank-one deflation that pins the coefficient sum to zero,
//! so every matrix stays full-size and circulant-structured.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{CoreError, Result};
use crate::grid::MultiscaleGrid;
use crate::lattice::SpinConfiguration;
use crate::piecewise::PiecewisePoly;
use crate::spline::{local_pieces, SplineField};

/// `(Ax)_i = N²(-x_{i-1} + 2x_i - x_{i+1})`, periodic with `0 = N`.
pub fn apply_a(grid: &MultiscaleGrid, x: &SpinConfiguration) -> SpinConfiguration {
    assert_eq!(grid.n(), x.len());
    SpinConfiguration::new(apply_a_raw(x.values()))
}

pub(crate) fn apply_a_raw(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let n2 = (n as f64) * (n as f64);
    (0..n)
        .map(|i| {
            let left = x[(i + n - 1) % n];
            let right = x[(i + 1) % n];
            n2 * (2.0 * x[i] - left - right)
        })
        .collect()
}

/// `x·Ax` computed through the telescoped form `N² Σ (x_i - x_{i-1})²`.
pub fn dirichlet_form(x: &SpinConfiguration) -> f64 {
    let v = x.values();
    let n = v.len();
    let n2 = (n as f64) * (n as f64);
    let mut s = 0.0;
    for i in 0..n {
        let d = v[i] - v[(i + n - 1) % n];
        s += d * d;
    }
    n2 * s
}

/// Closed-form circulant Gram matrix: `(1/M)·{11/20, 13/60, 1/120, 0}` by
/// circular band distance. The five-band pattern needs `M ≥ 5` to be free of
/// wrap-around collisions.
pub fn gram_closed_form(m: usize) -> Result<DMatrix<f64>> {
    if m < 5 {
        return Err(CoreError::UnsupportedSize(format!(
            "closed-form Gram needs M >= 5, got {m}"
        )));
    }
    let mf = m as f64;
    Ok(DMatrix::from_fn(m, m, |j, k| {
        let d = (j + m - k) % m;
        let d = d.min(m - d);
        match d {
            0 => 11.0 / (20.0 * mf),
            1 => 13.0 / (60.0 * mf),
            2 => 1.0 / (120.0 * mf),
            _ => 0.0,
        }
    }))
}

/// Gram matrix by per-cell polynomial integration; valid for any `M ≥ 2`,
/// including the wrapped supports at `M < 5`.
pub fn gram_exact(m: usize) -> DMatrix<f64> {
    let mut basis = Vec::with_capacity(m);
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        basis.push(local_pieces(m, &e));
    }
    let h = 1.0 / m as f64;
    DMatrix::from_fn(m, m, |j, k| {
        let mut s = 0.0;
        for p in 0..m {
            let a = basis[j][p];
            let b = basis[k][p];
            let pa = [a.c, a.b, a.a];
            let pb = [b.c, b.b, b.a];
            for (i, &ca) in pa.iter().enumerate() {
                if ca == 0.0 {
                    continue;
                }
                for (l, &cb) in pb.iter().enumerate() {
                    s += ca * cb * h.powi((i + l + 1) as i32) / (i + l + 1) as f64;
                }
            }
        }
        s
    })
}

/// Orthogonal split of a configuration into its spline-fiber components.
#[derive(Debug, Clone)]
pub struct FiberSplit {
    /// Component in `ker P` (the fast fluctuation directions).
    pub parallel: SpinConfiguration,
    /// Component in `range NPᵗ`, i.e. `NPᵗ(PNPᵗ)⁻¹Px`.
    pub perpendicular: SpinConfiguration,
}

/// Assembled operators and factorizations for one grid size. Immutable after
/// assembly; all apply/solve methods are `&self`.
pub struct OperatorCache {
    grid: MultiscaleGrid,
    gram: DMatrix<f64>,
    pnpt_form: DMatrix<f64>,
    abar_form: DMatrix<f64>,
    gram_chol: Cholesky<f64, Dyn>,
    pnpt_chol: Cholesky<f64, Dyn>,
    abar_defl_chol: Cholesky<f64, Dyn>,
    /// `NPᵗ B_j` for each basis function, as lattice rows.
    lifted_basis: Vec<Vec<f64>>,
    defect: f64,
}

impl OperatorCache {
    pub fn assemble(grid: MultiscaleGrid) -> Result<Self> {
        let (n, m) = (grid.n(), grid.m());
        let gram = if m >= 5 {
            let closed = gram_closed_form(m)?;
            let exact = gram_exact(m);
            let err = (&closed - &exact).abs().max();
            if err > 1e-12 {
                return Err(CoreError::Assembly(format!(
                    "closed-form Gram disagrees with exact integration by {err:.3e}"
                )));
            }
            closed
        } else {
            gram_exact(m)
        };

        let mut lifted_basis = Vec::with_capacity(m);
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            lifted_basis.push(lift_coeffs(&grid, &e));
        }

        let nf = n as f64;
        let mut pnpt_form = DMatrix::<f64>::zeros(m, m);
        let mut abar_form = DMatrix::<f64>::zeros(m, m);
        // diff rows give (1/N)·x·Ay = N Σ dx_i dy_i
        let diffs: Vec<Vec<f64>> = lifted_basis
            .iter()
            .map(|row| {
                (0..n)
                    .map(|i| row[i] - row[(i + n - 1) % n])
                    .collect::<Vec<f64>>()
            })
            .collect();
        for j in 0..m {
            for k in j..m {
                let mut t = 0.0;
                let mut s = 0.0;
                for i in 0..n {
                    t += lifted_basis[j][i] * lifted_basis[k][i];
                    s += diffs[j][i] * diffs[k][i];
                }
                pnpt_form[(j, k)] = t / nf;
                pnpt_form[(k, j)] = t / nf;
                abar_form[(j, k)] = nf * s;
                abar_form[(k, j)] = nf * s;
            }
        }

        let gram_chol = Cholesky::new(gram.clone())
            .ok_or_else(|| CoreError::Assembly("Gram matrix not positive definite".into()))?;
        let pnpt_chol = Cholesky::new(pnpt_form.clone()).ok_or_else(|| {
            CoreError::Conditioning("PNPᵗ form not positive definite; K too small".into())
        })?;

        // conditioning of PNPᵗ: reject if numerically singular
        let eig_t = SymmetricEigen::new(pnpt_form.clone());
        let tmax = eig_t.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let tmin = eig_t.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if !(tmin > 1e-10 * tmax) {
            return Err(CoreError::Conditioning(format!(
                "PNPᵗ condition number {:.3e} signals K too small",
                tmax / tmin
            )));
        }

        // Ā must be positive definite on the mean-zero subspace: its only
        // near-null eigenvalue is the constant direction.
        let eig_s = SymmetricEigen::new(abar_form.clone());
        let mut evs: Vec<f64> = eig_s.eigenvalues.iter().cloned().collect();
        evs.sort_by(f64::total_cmp);
        let smax = evs[m - 1];
        if evs[0] < -1e-10 * smax || (m > 1 && evs[1] <= 1e-12 * smax) {
            return Err(CoreError::Assembly(format!(
                "Ā form not positive definite on mean-zero splines (eigs {:.3e}, {:.3e})",
                evs[0], evs[1]
            )));
        }

        // rank-one deflation pinning Σc = 0
        let tau = abar_form.diagonal().mean();
        let mut abar_defl = abar_form.clone();
        for j in 0..m {
            for k in 0..m {
                abar_defl[(j, k)] += tau / m as f64;
            }
        }
        let abar_defl_chol = Cholesky::new(abar_defl)
            .ok_or_else(|| CoreError::Assembly("deflated Ā not positive definite".into()))?;

        let mut cache = OperatorCache {
            grid,
            gram,
            pnpt_form,
            abar_form,
            gram_chol,
            pnpt_chol,
            abar_defl_chol,
            lifted_basis,
            defect: 0.0,
        };
        cache.defect = cache.measure_defect();
        Ok(cache)
    }

    #[inline]
    pub fn grid(&self) -> &MultiscaleGrid {
        &self.grid
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn pnpt_form(&self) -> &DMatrix<f64> {
        &self.pnpt_form
    }

    pub fn abar_form(&self) -> &DMatrix<f64> {
        &self.abar_form
    }

    /// Spectral norm of `PNPᵗ - id` on mean-zero splines, recorded at
    /// assembly.
    pub fn defect(&self) -> f64 {
        self.defect
    }

    /// `⟨y, z⟩_{L²}` through the Gram form.
    pub fn l2_inner(&self, y: &SplineField, z: &SplineField) -> f64 {
        let cy = DVector::from_column_slice(y.coeffs());
        let cz = DVector::from_column_slice(z.coeffs());
        (cy.transpose() * &self.gram * cz)[(0, 0)]
    }

    /// `⟨y, Āz⟩_{L²}`.
    pub fn abar_inner(&self, y: &SplineField, z: &SplineField) -> f64 {
        let cy = DVector::from_column_slice(y.coeffs());
        let cz = DVector::from_column_slice(z.coeffs());
        (cy.transpose() * &self.abar_form * cz)[(0, 0)]
    }

    /// `(NPᵗy)_i = N ∫_{i/N}^{(i+1)/N} y dθ`, the block-average lift.
    pub fn lift_npt(&self, y: &SplineField) -> SpinConfiguration {
        assert_eq!(y.pieces(), self.grid.m());
        SpinConfiguration::new(lift_coeffs(&self.grid, y.coeffs()))
    }

    /// L²-orthogonal projection of a lattice configuration onto the spline
    /// space, re-centered to mean zero.
    pub fn project_config(&self, x: &SpinConfiguration) -> SplineField {
        assert_eq!(x.len(), self.grid.n());
        let b = self.rhs_from_lattice(x.values());
        let c = self.gram_chol.solve(&b);
        SplineField::from_bspline_coeffs(c.data.into())
    }

    /// Projection of an arbitrary piecewise-polynomial field (exact inner
    /// products against the basis on a common refinement).
    pub fn project_piecewise(&self, f: &PiecewisePoly) -> Result<SplineField> {
        let m = self.grid.m();
        let mut b = DVector::zeros(m);
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let bj = PiecewisePoly::from_spline_coeffs(m, &e);
            b[j] = f.inner(&bj)?;
        }
        let c = self.gram_chol.solve(&b);
        Ok(SplineField::from_bspline_coeffs(c.data.into()))
    }

    /// `P NPᵗ y` (operator matrix `G⁻¹T`).
    pub fn apply_pnpt(&self, y: &SplineField) -> SplineField {
        let c = DVector::from_column_slice(y.coeffs());
        let out = self.gram_chol.solve(&(&self.pnpt_form * c));
        SplineField::from_bspline_coeffs(out.data.into())
    }

    /// Solve `P NPᵗ w = y`.
    pub fn solve_pnpt(&self, y: &SplineField) -> SplineField {
        let c = DVector::from_column_slice(y.coeffs());
        let out = self.pnpt_chol.solve(&(&self.gram * c));
        SplineField::from_bspline_coeffs(out.data.into())
    }

    /// `Ā y = P A NPᵗ y` (operator matrix `G⁻¹S`).
    pub fn apply_abar(&self, y: &SplineField) -> SplineField {
        let c = DVector::from_column_slice(y.coeffs());
        let out = self.gram_chol.solve(&(&self.abar_form * c));
        SplineField::from_bspline_coeffs(out.data.into())
    }

    /// Solve `Ā w = y` on mean-zero splines through the deflated form.
    pub fn solve_abar(&self, y: &SplineField) -> Result<SplineField> {
        let c = DVector::from_column_slice(y.coeffs());
        let rhs = &self.gram * c;
        let out = self.abar_defl_chol.solve(&rhs);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Conditioning("Ā solve produced non-finite values".into()));
        }
        Ok(SplineField::from_bspline_coeffs(out.data.into()))
    }

    /// `A NPᵗ y` by the closed per-block rule: interior sites of block `p`
    /// carry `-2·alpha_p`, the two boundary sites pick up a third of the
    /// curvature jump to the neighbouring block.
    pub fn apply_anpt(&self, y: &SplineField) -> SpinConfiguration {
        assert_eq!(y.pieces(), self.grid.m());
        let (n, m, k) = (self.grid.n(), self.grid.m(), self.grid.k());
        let alphas: Vec<f64> = y.global_pieces().iter().map(|p| p.alpha).collect();
        let mut z = vec![0.0; n];
        for p in 0..m {
            let a = alphas[p];
            let left = alphas[(p + m - 1) % m];
            let right = alphas[(p + 1) % m];
            let base = p * k;
            for i in base..base + k {
                z[i] = -2.0 * a;
            }
            z[base] += (a - left) / 3.0;
            z[base + k - 1] += (a - right) / 3.0;
        }
        SpinConfiguration::new(z)
    }

    /// `A NPᵗ Ā⁻¹ y`, the bounded composition used to trade mesoscopic for
    /// microscopic second differences.
    pub fn apply_anpt_abar_inv(&self, y: &SplineField) -> Result<SpinConfiguration> {
        Ok(self.apply_anpt(&self.solve_abar(y)?))
    }

    /// Split `x = x_par + x_perp` with `P x_par = 0` and
    /// `x_perp = NPᵗ(PNPᵗ)⁻¹Px`.
    pub fn fiber_decompose(&self, x: &SpinConfiguration) -> Result<FiberSplit> {
        let px = self.project_config(x);
        let w = self.solve_pnpt(&px);
        let perp = self.lift_npt(&w);
        let par: Vec<f64> = x
            .values()
            .iter()
            .zip(perp.values())
            .map(|(a, b)| a - b)
            .collect();
        Ok(FiberSplit {
            parallel: SpinConfiguration::new(par),
            perpendicular: perp,
        })
    }

    /// Project an arbitrary lattice vector onto the fiber tangent space
    /// `ker P` (mean removed first). Used by the constrained sampler.
    pub fn fiber_project_parallel(&self, v: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        assert_eq!(v.len(), n);
        let mean = v.iter().sum::<f64>() / n as f64;
        let v0: Vec<f64> = v.iter().map(|a| a - mean).collect();
        let b = self.rhs_from_lattice(&v0);
        let c = self.gram_chol.solve(&b);
        let w = self.pnpt_chol.solve(&(&self.gram * c));
        let mut out = v0;
        for (j, row) in self.lifted_basis.iter().enumerate() {
            let wj = w[j];
            if wj != 0.0 {
                for (o, r) in out.iter_mut().zip(row) {
                    *o -= wj * r;
                }
            }
        }
        out
    }

    /// `NPᵗ B_j` as a lattice row (no mean-zero adjustment).
    pub fn lifted_basis_row(&self, j: usize) -> &[f64] {
        &self.lifted_basis[j]
    }

    /// Solve `G c = b` against the Gram factorization.
    pub(crate) fn gram_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.gram_chol.solve(b)
    }

    /// `⟨x, B_j⟩_{L²}` for a step function, through the lifted basis rows.
    fn rhs_from_lattice(&self, v: &[f64]) -> DVector<f64> {
        let n = self.grid.n() as f64;
        DVector::from_iterator(
            self.grid.m(),
            self.lifted_basis
                .iter()
                .map(|row| row.iter().zip(v).map(|(r, x)| r * x).sum::<f64>() / n),
        )
    }

    /// Dominant eigenvalue magnitude of `PNPᵗ - id` on mean-zero splines,
    /// by power iteration in the L² geometry (50 iterations, tol 1e-8).
    fn measure_defect(&self) -> f64 {
        let m = self.grid.m();
        let ones = DVector::from_element(m, 1.0);
        let g_ones = &self.gram * &ones;
        let ones_g_ones = ones.dot(&g_ones);
        let deflate = |v: &mut DVector<f64>| {
            let t = v.dot(&g_ones) / ones_g_ones;
            *v -= t * &ones;
        };
        let mut v = DVector::from_fn(m, |i, _| ((i * 2654435761 + 1) % 97) as f64 / 97.0 - 0.5);
        deflate(&mut v);
        let mut lambda_prev = f64::MAX;
        let mut lambda = 0.0;
        for _ in 0..50 {
            let tv = &self.pnpt_form * &v - &self.gram * &v;
            let mut w = self.gram_chol.solve(&tv);
            deflate(&mut w);
            let num = w.dot(&(&self.gram * &w));
            let den = v.dot(&(&self.gram * &v));
            if den == 0.0 {
                break;
            }
            // Rayleigh quotient of the self-adjoint iterate
            lambda = (v.dot(&tv) / den).abs();
            let nw = (num).sqrt();
            if nw == 0.0 {
                break;
            }
            v = w / nw;
            if (lambda - lambda_prev).abs() <= 1e-8 * lambda.max(1e-300) {
                break;
            }
            lambda_prev = lambda;
        }
        lambda
    }
}

/// `NPᵗ` applied to raw coefficients (no mean-zero requirement), exact via
/// the local antiderivative of each piece.
fn lift_coeffs(grid: &MultiscaleGrid, coeffs: &[f64]) -> Vec<f64> {
    let (n, m, k) = (grid.n(), grid.m(), grid.k());
    let pieces = local_pieces(m, coeffs);
    let nf = n as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let p = i / k;
        let lp = &pieces[p];
        let u0 = (i - p * k) as f64 / nf;
        let u1 = u0 + 1.0 / nf;
        out.push(lp.a * (u1 * u1 + u1 * u0 + u0 * u0) / 3.0 + lp.b * (u0 + u1) / 2.0 + lp.c);
    }
    out
}

impl PiecewisePoly {
    /// View raw B-spline coefficients (not necessarily mean-zero) as a
    /// piecewise polynomial; used for exact products against single basis
    /// functions.
    pub fn from_spline_coeffs(m: usize, coeffs: &[f64]) -> Self {
        let pieces = local_pieces(m, coeffs);
        let mut out = Vec::with_capacity(m);
        for p in pieces {
            out.push([p.c, p.b, p.a, 0.0]);
        }
        PiecewisePoly::from_cells(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_config(n: usize, rng: &mut ChaCha12Rng) -> SpinConfiguration {
        SpinConfiguration::new((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
    }

    #[test]
    fn apply_a_eigenvectors() {
        let grid = MultiscaleGrid::with_k_min(4, 2, 2).unwrap();
        let x = SpinConfiguration::new(vec![1.0, -1.0, 1.0, -1.0]);
        let ax = apply_a(&grid, &x);
        assert_eq!(ax.values(), &[64.0, -64.0, 64.0, -64.0]);
        let x = SpinConfiguration::new(vec![1.0, 0.0, -1.0, 0.0]);
        let ax = apply_a(&grid, &x);
        assert_eq!(ax.values(), &[32.0, 0.0, -32.0, 0.0]);
        // constants (recentred to zero) are in the kernel
        let x = SpinConfiguration::new(vec![5.0; 4]);
        assert!(apply_a(&grid, &x).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_entries_match_closed_form() {
        let g = gram_closed_form(8).unwrap();
        assert_relative_eq!(g[(0, 0)], 11.0 / 160.0, epsilon = 1e-15);
        assert_relative_eq!(g[(0, 2)], 1.0 / 960.0, epsilon = 1e-15);
        assert_eq!(g[(0, 4)], 0.0);
        let ge = gram_exact(8);
        assert!((&g - &ge).abs().max() < 1e-12);
        // rows sum to 1/M
        for j in 0..8 {
            assert_relative_eq!(g.row(j).sum(), 1.0 / 8.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn closed_form_needs_five_pieces() {
        assert!(gram_closed_form(4).is_err());
        // exact path still symmetric positive definite at M = 4
        let g = gram_exact(4);
        assert!(Cholesky::new(g).is_some());
    }

    #[test]
    fn lift_matches_global_formula() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let grid = MultiscaleGrid::new(64, 8).unwrap();
        let cache = OperatorCache::assemble(grid).unwrap();
        let y = SplineField::random(8, &mut rng);
        let lifted = cache.lift_npt(&y);
        let n = 64.0;
        let g = y.global_pieces();
        for i in 0..64 {
            let p = i / 8;
            // 1-based site index in the block-polynomial formula
            let site = (i + 1) as f64;
            let expect = g[p].alpha / (n * n) * (site * site - site + 1.0 / 3.0)
                + g[p].beta / n * (site - 0.5)
                + g[p].gamma;
            assert_relative_eq!(lifted.values()[i], expect, epsilon = 1e-11, max_relative = 1e-9);
        }
    }

    #[test]
    fn adjoint_pair_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for (n, m) in [(64usize, 8usize), (40, 5), (48, 4)] {
            let cache = OperatorCache::assemble(MultiscaleGrid::new(n, m).unwrap()).unwrap();
            for _ in 0..20 {
                let x = random_config(n, &mut rng);
                let y = SplineField::random(m, &mut rng);
                let px = cache.project_config(&x);
                let lhs = cache.l2_inner(&px, &y);
                let lift = cache.lift_npt(&y);
                let rhs = x
                    .values()
                    .iter()
                    .zip(lift.values())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / n as f64;
                assert_relative_eq!(lhs, rhs, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let cache = OperatorCache::assemble(MultiscaleGrid::new(64, 8).unwrap()).unwrap();
        let y = SplineField::random(8, &mut rng);
        let py = cache.project_piecewise(&PiecewisePoly::from_spline(&y)).unwrap();
        for (a, b) in py.coeffs().iter().zip(y.coeffs()) {
            assert!((a - b).abs() < 1e-10);
        }
        // residual of a projected step function is orthogonal to the basis
        let x = random_config(64, &mut rng);
        let px = cache.project_config(&x);
        let diff = PiecewisePoly::from_config(&x)
            .sub(&PiecewisePoly::from_spline(&px))
            .unwrap();
        for j in 0..8 {
            let mut e = vec![0.0; 8];
            e[j] = 1.0;
            let bj = PiecewisePoly::from_spline_coeffs(8, &e);
            assert!(diff.inner(&bj).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn projection_matches_dense_least_squares_oracle() {
        // step sampling of cos(2πθ) at N = 64, M = 8
        let n = 64;
        let cache = OperatorCache::assemble(MultiscaleGrid::new(n, 8).unwrap()).unwrap();
        let x = SpinConfiguration::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
                .collect(),
        );
        let px = cache.project_config(&x);

        // dense least squares on a fine grid
        let grid_pts = 40_000;
        let mut ata = DMatrix::<f64>::zeros(8, 8);
        let mut atb = DVector::<f64>::zeros(8);
        for q in 0..grid_pts {
            let th = (q as f64 + 0.5) / grid_pts as f64;
            let row: Vec<f64> = (0..8).map(|j| crate::spline::bspline_eval(8, j, th)).collect();
            let f = x.step_value(th);
            for j in 0..8 {
                atb[j] += row[j] * f;
                for k in 0..8 {
                    ata[(j, k)] += row[j] * row[k];
                }
            }
        }
        let sol = ata.lu().solve(&atb).unwrap();
        let mean = sol.mean();
        for j in 0..8 {
            assert!(
                (px.coeffs()[j] - (sol[j] - mean)).abs() < 1e-5,
                "coefficient {j} deviates from dense LS oracle"
            );
        }
        // implementation norm of the residual agrees with the oracle residual
        let diff = PiecewisePoly::from_config(&x)
            .sub(&PiecewisePoly::from_spline(&px))
            .unwrap();
        assert!(diff.l2_norm() < 0.05, "projection residual unexpectedly large");
    }

    #[test]
    fn anpt_closed_form_matches_composition() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for (n, m) in [(64usize, 8usize), (64, 4), (8, 2)] {
            let grid = MultiscaleGrid::with_k_min(n, m, 4).unwrap();
            let cache = OperatorCache::assemble(grid).unwrap();
            for _ in 0..10 {
                let y = SplineField::random(m, &mut rng);
                let closed = cache.apply_anpt(&y);
                let composed = apply_a(&cache.grid, &cache.lift_npt(&y));
                let scale = composed
                    .values()
                    .iter()
                    .map(|v| v.abs())
                    .fold(0.0, f64::max)
                    .max(1e-30);
                for (a, b) in closed.values().iter().zip(composed.values()) {
                    assert!((a - b).abs() <= 1e-9 * scale, "n={n} m={m}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn anpt_boundary_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let cache = OperatorCache::assemble(MultiscaleGrid::new(64, 8).unwrap()).unwrap();
        let y = SplineField::random(8, &mut rng);
        let alphas: Vec<f64> = y.global_pieces().iter().map(|p| p.alpha).collect();
        let z = cache.apply_anpt(&y);
        let k = 8;
        for p in 0..8usize {
            for i in p * k + 1..(p + 1) * k - 1 {
                assert_relative_eq!(z.values()[i], -2.0 * alphas[p], max_relative = 1e-12);
            }
            let right = alphas[(p + 1) % 8];
            let left = alphas[(p + 7) % 8];
            assert_relative_eq!(
                z.values()[(p + 1) * k - 1],
                -2.0 * alphas[p] + (alphas[p] - right) / 3.0,
                max_relative = 1e-11
            );
            assert_relative_eq!(
                z.values()[p * k],
                -2.0 * alphas[p] + (alphas[p] - left) / 3.0,
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn defect_scales_like_k_squared() {
        let mut prev = f64::MAX;
        let mut defects = Vec::new();
        for k in [8usize, 16, 32, 64] {
            let cache = OperatorCache::assemble(MultiscaleGrid::new(8 * k, 8).unwrap()).unwrap();
            let d = cache.defect();
            assert!(d < prev);
            prev = d;
            defects.push((k as f64, d));
        }
        // log-log slope within -2 ± 0.3
        let slope = (defects[3].1 / defects[0].1).ln() / (defects[3].0 / defects[0].0).ln();
        assert!((slope + 2.0).abs() < 0.3, "defect slope {slope}");
        // K = 32 -> 64 ratio close to 4
        let ratio = defects[2].1 / defects[3].1;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn abar_positive_definite_and_close_to_h1() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let cache = OperatorCache::assemble(MultiscaleGrid::new(256, 8).unwrap()).unwrap();
        for _ in 0..50 {
            let y = SplineField::random(8, &mut rng);
            let q = cache.abar_inner(&y, &y);
            assert!(q > 0.0);
            let z = SplineField::random(8, &mut rng);
            let gap = (cache.abar_inner(&z, &y) - crate::norms::h1_inner(&z, &y)).abs();
            let bound = 20.0 * (8.0 / 256.0)
                * crate::norms::h1_seminorm(&z)
                * crate::norms::h1_seminorm(&y);
            assert!(gap <= bound, "gap {gap} bound {bound}");
        }
    }

    #[test]
    fn fiber_split_properties() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let cache = OperatorCache::assemble(MultiscaleGrid::new(64, 4).unwrap()).unwrap();
        // x already in the perp space has no parallel part
        let y = SplineField::random(4, &mut rng);
        let x = cache.lift_npt(&y);
        let split = cache.fiber_decompose(&x).unwrap();
        let par_norm = crate::norms::l2_norm_config(&split.parallel);
        assert!(par_norm < 1e-10 * (1.0 + crate::norms::l2_norm_config(&x)));
        // generic x: P applied to the parallel part vanishes
        let x = random_config(64, &mut rng);
        let split = cache.fiber_decompose(&x).unwrap();
        let p_par = cache.project_config(&split.parallel);
        let norm = cache.l2_inner(&p_par, &p_par).sqrt();
        assert!(norm < 1e-10);
        // recomposition
        for i in 0..64 {
            assert_relative_eq!(
                split.parallel.values()[i] + split.perpendicular.values()[i],
                x.values()[i],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn anpt_abar_inv_round_trip_and_sigma() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let cache = OperatorCache::assemble(MultiscaleGrid::new(128, 8).unwrap()).unwrap();
        // forward then inverse: y = Ā z recovers A NPᵗ z
        let z = SplineField::random(8, &mut rng);
        let y = cache.apply_abar(&z);
        let got = cache.apply_anpt_abar_inv(&y).unwrap();
        let want = cache.apply_anpt(&z);
        for (a, b) in got.values().iter().zip(want.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-8, max_relative = 1e-7);
        }
        // measured sigma floor
        let mut sigma: f64 = f64::MAX;
        for _ in 0..100 {
            let y = SplineField::random(8, &mut rng);
            let img = cache.apply_anpt_abar_inv(&y).unwrap();
            let ratio = cache.l2_inner(&y, &y).sqrt() / crate::norms::l2_norm_config(&img);
            sigma = sigma.min(ratio);
        }
        assert!(sigma >= 0.1, "sigma floor violated: {sigma}");
    }

    #[test]
    fn second_derivative_approximation_bound() {
        // ‖(-∂²θ y) - ANPᵗ y‖ ≤ (1/(2√K))‖-∂²θ y‖ with y = Ā⁻¹ input
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for k in [16usize, 64] {
            let cache = OperatorCache::assemble(MultiscaleGrid::new(8 * k, 8).unwrap()).unwrap();
            for _ in 0..20 {
                let w = SplineField::random(8, &mut rng);
                let yinv = cache.solve_abar(&w).unwrap();
                let alphas: Vec<f64> = yinv.global_pieces().iter().map(|p| p.alpha).collect();
                // -∂²y is the step function -2α_p on M cells
                let neg_second = PiecewisePoly::from_step_values(
                    &alphas.iter().map(|a| -2.0 * a).collect::<Vec<_>>(),
                );
                let anpt = PiecewisePoly::from_config(&cache.apply_anpt(&yinv));
                let diff = neg_second.sub(&anpt).unwrap().l2_norm();
                let bound = neg_second.l2_norm() / (2.0 * (k as f64).sqrt());
                assert!(diff <= bound * 1.000001, "k={k}: {diff} > {bound}");
            }
        }
    }
}
