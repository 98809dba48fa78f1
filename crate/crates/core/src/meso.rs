//! The mesoscopic layer: three interchangeable evaluators of the
//! coarse-grained drift and a deterministic Runge-Kutta flow on the spline
//! space.
//!
//! The coarse-grained Hamiltonian is defined through a fiber integral that is
//! intractable directly, so the drift comes in three modes:
//!
//! * `GaussianExact` — for the pure Gaussian site the gradient is
//!   `(PNPᵗ)⁻¹y` in closed form; the exact reference for everything else;
//! * `Mcmc` — the honest general-potential path: the conditional expectation
//!   `E[∇H | Px = y]` estimated by fiber-restricted Langevin chains;
//! * `SurrogatePhi` — the fast path `P(φ'∘y)` through the macroscopic free
//!   energy, valid up to the scale separation of the grids.
//!
//! Only the gradient is ever computed; the scalar `H̄` has an unidentifiable
//! additive constant and nothing consumes it.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;

use crate::error::{CoreError, Result};
use crate::lattice::SpinConfiguration;
use crate::macroscale::FreeEnergyTable;
use crate::micro::{fiber_base_point, fiber_chain};
use crate::operators::{apply_a_raw, OperatorCache};
use crate::potential::SingleSitePotential;
use crate::quad::{GaussHermite, GaussLegendre};
use crate::spline::{bspline_eval, SplineField};

/// Budget for the Monte Carlo drift estimator. The sample budget is fixed
/// (deterministic runtime); precision is surfaced through the standard error
/// instead of adaptive stopping.
#[derive(Debug, Clone)]
pub struct McmcParams {
    pub chains: usize,
    pub samples_per_chain: usize,
    pub burn_in_steps: usize,
    pub steps_between_samples: usize,
    pub dt_f: f64,
    /// Relative standard error above which evaluation reports failure.
    pub rel_stderr_cap: f64,
}

impl Default for McmcParams {
    fn default() -> Self {
        McmcParams {
            chains: 8,
            samples_per_chain: 64,
            burn_in_steps: 400,
            steps_between_samples: 10,
            dt_f: 0.05,
            rel_stderr_cap: 0.5,
        }
    }
}

pub enum DriftMode<'a> {
    GaussianExact,
    Mcmc(McmcParams),
    SurrogatePhi(&'a FreeEnergyTable),
}

pub struct MesoDrift<'a> {
    cache: &'a OperatorCache,
    pot: &'a SingleSitePotential,
    mode: DriftMode<'a>,
    surrogate_quad: GaussLegendre,
}

impl<'a> MesoDrift<'a> {
    pub fn new(
        cache: &'a OperatorCache,
        pot: &'a SingleSitePotential,
        mode: DriftMode<'a>,
    ) -> Result<Self> {
        if matches!(mode, DriftMode::GaussianExact) && !pot.is_gaussian() {
            return Err(CoreError::Mode(
                "exact drift is only available for the pure Gaussian site".into(),
            ));
        }
        Ok(MesoDrift {
            cache,
            pot,
            mode,
            surrogate_quad: GaussLegendre::new(10),
        })
    }

    pub fn cache(&self) -> &OperatorCache {
        self.cache
    }

    /// The coarse-grained gradient at `y`.
    pub fn grad_hbar(&self, y: &SplineField, rng: &mut ChaCha12Rng) -> Result<SplineField> {
        match &self.mode {
            DriftMode::GaussianExact => Ok(self.cache.solve_pnpt(y)),
            DriftMode::SurrogatePhi(table) => Ok(self.project_pointwise(y, |v| table.phi_prime(v))),
            DriftMode::Mcmc(params) => {
                let pa = self.mcmc_projected_force(y, params, rng)?;
                self.cache.solve_abar(&pa)
            }
        }
    }

    /// Right-hand side of the mesoscopic flow, `-Ā ∇H̄(y)`. In Monte Carlo
    /// mode the drift is consumed as `-P A E[∇H | Px = y]` directly, without
    /// the `Ā⁻¹Ā` round trip.
    pub fn rhs(&self, y: &SplineField, rng: &mut ChaCha12Rng) -> Result<SplineField> {
        match &self.mode {
            DriftMode::Mcmc(params) => Ok(self.mcmc_projected_force(y, params, rng)?.scaled(-1.0)),
            _ => Ok(self.cache.apply_abar(&self.grad_hbar(y, rng)?).scaled(-1.0)),
        }
    }

    /// `P(f∘y)` by per-cell Gauss-Legendre quadrature (exact whenever `f∘y`
    /// is polynomial of modest degree, e.g. the Gaussian `φ' = id`).
    fn project_pointwise(&self, y: &SplineField, f: impl Fn(f64) -> f64) -> SplineField {
        let m = self.cache.grid().m();
        let mut b = DVector::<f64>::zeros(m);
        let h = 1.0 / m as f64;
        for p in 0..m {
            let a = p as f64 * h;
            for (&t, &w) in self
                .surrogate_quad
                .nodes
                .iter()
                .zip(&self.surrogate_quad.weights)
            {
                let th = a + 0.5 * h * (t + 1.0);
                let val = f(y.eval(th));
                let ww = 0.5 * h * w;
                for off in [m - 1, 0, 1] {
                    let j = (p + off) % m;
                    b[j] += ww * val * bspline_eval(m, j, th);
                }
            }
        }
        let c = self.cache.gram_solve(&b);
        SplineField::from_bspline_coeffs(c.data.into())
    }

    /// `P A E[∇H | Px = y]` with the conditional expectation from
    /// fiber-restricted chains. Standard error is measured across chains.
    fn mcmc_projected_force(
        &self,
        y: &SplineField,
        params: &McmcParams,
        rng: &mut ChaCha12Rng,
    ) -> Result<SplineField> {
        let n = self.cache.grid().n();
        let m = self.cache.grid().m();
        let mut chain_means: Vec<SplineField> = Vec::with_capacity(params.chains);
        for _ in 0..params.chains {
            let mut x = fiber_base_point(self.cache, y).into_values();
            // decorrelate chains through distinct noise, not distinct seeds
            fiber_chain(self.pot, self.cache, y, &mut x, params.burn_in_steps, params.dt_f, rng)?;
            let mut avg = vec![0.0; n];
            for _ in 0..params.samples_per_chain {
                fiber_chain(
                    self.pot,
                    self.cache,
                    y,
                    &mut x,
                    params.steps_between_samples,
                    params.dt_f,
                    rng,
                )?;
                for (a, &v) in avg.iter_mut().zip(&x) {
                    *a += self.pot.psi_prime(v) / params.samples_per_chain as f64;
                }
            }
            let forced = apply_a_raw(&avg);
            chain_means.push(self.cache.project_config(&SpinConfiguration::new(forced)));
        }
        let c = params.chains as f64;
        let mut mean = SplineField::zero(m);
        for cm in &chain_means {
            mean.add_scaled(cm, 1.0 / c);
        }
        if params.chains > 1 {
            let mut var = 0.0;
            for cm in &chain_means {
                let d = cm.sub(&mean);
                var += self.cache.l2_inner(&d, &d) / (c - 1.0);
            }
            let stderr = (var / c).sqrt();
            let scale = self.cache.l2_inner(&mean, &mean).sqrt();
            if scale > 1e-12 && stderr > params.rel_stderr_cap * scale {
                return Err(CoreError::Statistics(format!(
                    "drift standard error {:.2e} above cap {:.2e} (budget exhausted)",
                    stderr,
                    params.rel_stderr_cap * scale
                )));
            }
        }
        Ok(mean)
    }

    /// A step size comfortably inside the integrator's stability and
    /// accuracy region for this flow.
    pub fn stable_dt(&self) -> f64 {
        0.5 / self.flow_rate_estimate().max(1e-9)
    }

    /// Spectral-radius estimate of the linearized flow at `η0`, used for the
    /// step-size precondition.
    fn flow_rate_estimate(&self) -> f64 {
        // power iteration on v ↦ Ā(PNPᵗ)⁻¹v in the L² geometry
        let m = self.cache.grid().m();
        let mut v = SplineField::from_bspline_coeffs(
            (0..m).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        );
        let mut lambda = 0.0;
        for _ in 0..50 {
            let w = self.cache.apply_abar(&self.cache.solve_pnpt(&v));
            let num = self.cache.l2_inner(&v, &w);
            let den = self.cache.l2_inner(&v, &v);
            if den == 0.0 {
                break;
            }
            let next = (num / den).abs();
            let nw = self.cache.l2_inner(&w, &w).sqrt();
            if nw == 0.0 {
                break;
            }
            v = w.scaled(1.0 / nw);
            if (next - lambda).abs() < 1e-8 * next.max(1e-300) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        let stiffening = match &self.mode {
            DriftMode::SurrogatePhi(t) => t.lambda_bounds().1.max(1.0),
            _ => 1.0,
        };
        lambda * stiffening
    }
}

/// Classical fourth-order integration of `dη/dt = rhs(η)` with snapshots at
/// the requested times (which must be sorted, starting at 0).
pub fn integrate(
    drift: &MesoDrift,
    eta0: &SplineField,
    dt: f64,
    snapshot_times: &[f64],
    rng: &mut ChaCha12Rng,
) -> Result<Vec<(f64, SplineField)>> {
    let lam = drift.flow_rate_estimate();
    if dt * lam > 2.7 {
        return Err(CoreError::Stiff(format!(
            "dt·λ = {:.2} above the RK4 stability span 2.7; reduce dt below {:.3e}",
            dt * lam,
            2.7 / lam
        )));
    }
    let guard = 10.0 * (drift.cache.l2_inner(eta0, eta0).sqrt() + 1.0);
    let mut out = Vec::with_capacity(snapshot_times.len());
    let mut eta = eta0.clone();
    let mut t = 0.0;
    for &target in snapshot_times {
        if target < t - 1e-12 {
            return Err(CoreError::Precondition("snapshot times must be sorted".into()));
        }
        while t < target - 1e-12 {
            let h = dt.min(target - t);
            let k1 = drift.rhs(&eta, rng)?;
            let mut e2 = eta.clone();
            e2.add_scaled(&k1, 0.5 * h);
            let k2 = drift.rhs(&e2, rng)?;
            let mut e3 = eta.clone();
            e3.add_scaled(&k2, 0.5 * h);
            let k3 = drift.rhs(&e3, rng)?;
            let mut e4 = eta.clone();
            e4.add_scaled(&k3, h);
            let k4 = drift.rhs(&e4, rng)?;
            eta.add_scaled(&k1, h / 6.0);
            eta.add_scaled(&k2, h / 3.0);
            eta.add_scaled(&k3, h / 3.0);
            eta.add_scaled(&k4, h / 6.0);
            t += h;
            if drift.cache.l2_inner(&eta, &eta).sqrt() > guard {
                return Err(CoreError::Stiff(
                    "flow norm grew tenfold; step rejected, reduce dt".into(),
                ));
            }
        }
        out.push((target, eta.clone()));
    }
    Ok(out)
}

/// Test functions for the fiber gradient identity.
pub enum TestFunction {
    Constant,
    /// `f(x) = v·x` with a fixed direction `v`.
    Linear(Vec<f64>),
    /// `f(x) = x_i²`.
    SquaredCoordinate(usize),
}

impl TestFunction {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant => 1.0,
            TestFunction::Linear(v) => v.iter().zip(x).map(|(a, b)| a * b).sum(),
            TestFunction::SquaredCoordinate(i) => x[*i] * x[*i],
        }
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        match self {
            TestFunction::Constant => out.fill(0.0),
            TestFunction::Linear(v) => out.copy_from_slice(v),
            TestFunction::SquaredCoordinate(i) => {
                out.fill(0.0);
                out[*i] = 2.0 * x[*i];
            }
        }
    }
}

/// Verify `∫∇f dμ(·|y) = Pᵗ∇f̄(y) + cov(f, ∇H)` on a tiny instance by dense
/// tensor quadrature over the fiber; returns the max-abs residual.
///
/// Gradients are tangential to the mean-zero hyperplane. The fiber dimension
/// is `N - M`, so this is only computable for very small grids.
pub fn check_gradient_identity(
    cache: &OperatorCache,
    pot: &SingleSitePotential,
    f: &TestFunction,
    y: &SplineField,
    nodes_per_dim: usize,
) -> Result<f64> {
    let n = cache.grid().n();
    let m = cache.grid().m();
    let dim = n - m;
    if (nodes_per_dim as f64).powi(dim as i32) > 5e8 {
        return Err(CoreError::UnsupportedSize(format!(
            "tensor quadrature {nodes_per_dim}^{dim} too large"
        )));
    }

    // conditioning guard before trusting the tiny-size solves
    let defect = cache.defect();
    if !(defect < 0.5) {
        return Err(CoreError::Conditioning(format!(
            "PNPᵗ defect {defect:.3} too large at this size"
        )));
    }

    // orthonormal basis of the fiber tangent ker P: eigenvectors of the
    // orthogonal projector Cᵗ(CCᵗ)⁻¹C at eigenvalue zero, C = constraint rows
    let mut rows = DMatrix::<f64>::zeros(m, n);
    for j in 0..m {
        let lift = cache.lifted_basis_row(j);
        for i in 0..n {
            rows[(j, i)] = lift[i] / n as f64;
        }
    }
    let cct = &rows * rows.transpose();
    let cct_inv = cct
        .try_inverse()
        .ok_or_else(|| CoreError::Conditioning("constraint rows degenerate".into()))?;
    let proj = rows.transpose() * cct_inv * &rows;
    let eig = nalgebra::SymmetricEigen::new(proj);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in 0..n {
        if eig.eigenvalues[c].abs() < 1e-8 {
            basis.push(eig.eigenvectors.column(c).iter().cloned().collect());
        }
    }
    if basis.len() != dim {
        return Err(CoreError::Conditioning(format!(
            "fiber dimension {} instead of {dim}",
            basis.len()
        )));
    }

    // L²-orthonormal basis of the mean-zero coefficient space for ∇f̄
    let gram = cache.gram();
    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(m - 1);
    for j in 0..m - 1 {
        let mut w = DVector::<f64>::zeros(m);
        w[j] = 1.0;
        w[j + 1] = -1.0;
        for prev in &dirs {
            let c = (prev.transpose() * gram * &w)[(0, 0)];
            w -= c * prev;
        }
        let norm = (w.transpose() * gram * &w)[(0, 0)].sqrt();
        dirs.push(w / norm);
    }

    let quad = GaussHermite::new(nodes_per_dim);

    struct SweepOut {
        e_f: f64,
        e_grad_f: Vec<f64>,
        e_grad_h: Vec<f64>,
        e_f_grad_h: Vec<f64>,
    }

    let sweep = |ycoef: &SplineField, want_moments: bool| -> SweepOut {
        let base = fiber_base_point(cache, ycoef);
        let xb = base.values();
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; n];
        let mut gf = vec![0.0; n];
        let mut z = 0.0;
        let mut e_f = 0.0;
        let mut e_grad_f = vec![0.0; n];
        let mut e_grad_h = vec![0.0; n];
        let mut e_f_grad_h = vec![0.0; n];
        loop {
            let mut w = 1.0;
            x.copy_from_slice(xb);
            for (d, &i) in idx.iter().enumerate() {
                w *= quad.weights[i];
                let s = quad.nodes[i];
                for (xi, bi) in x.iter_mut().zip(&basis[d]) {
                    *xi += s * bi;
                }
            }
            let mut pert_sum = 0.0;
            for &xi in &x {
                pert_sum += pot.perturbation().eval(xi);
            }
            let rho = w * (-pert_sum).exp();
            z += rho;
            let fv = f.eval(&x);
            e_f += rho * fv;
            if want_moments {
                let mut mean_gh = 0.0;
                let mut mean_gf = 0.0;
                f.grad(&x, &mut gf);
                for &v in gf.iter() {
                    mean_gf += v / n as f64;
                }
                let mut gh = vec![0.0; n];
                for (g, &xi) in gh.iter_mut().zip(&x) {
                    *g = pot.psi_prime(xi);
                    mean_gh += *g / n as f64;
                }
                for i in 0..n {
                    let tgh = gh[i] - mean_gh;
                    let tgf = gf[i] - mean_gf;
                    e_grad_f[i] += rho * tgf;
                    e_grad_h[i] += rho * tgh;
                    e_f_grad_h[i] += rho * fv * tgh;
                }
            }
            // odometer
            let mut d = 0;
            loop {
                if d == dim {
                    return SweepOut {
                        e_f: e_f / z,
                        e_grad_f: e_grad_f.iter().map(|v| v / z).collect(),
                        e_grad_h: e_grad_h.iter().map(|v| v / z).collect(),
                        e_f_grad_h: e_f_grad_h.iter().map(|v| v / z).collect(),
                    };
                }
                idx[d] += 1;
                if idx[d] < nodes_per_dim {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    };

    let base = sweep(y, true);

    // ∇f̄ by central differences along the mean-zero directions
    let h = 1e-4 * (1.0 + cache.l2_inner(y, y).sqrt());
    let mut grad_bar = DVector::<f64>::zeros(m);
    for w in &dirs {
        let mut yp = y.coeffs().to_vec();
        let mut ym = y.coeffs().to_vec();
        for j in 0..m {
            yp[j] += h * w[j];
            ym[j] -= h * w[j];
        }
        let fp = sweep(&SplineField::from_bspline_coeffs(yp), false).e_f;
        let fm = sweep(&SplineField::from_bspline_coeffs(ym), false).e_f;
        grad_bar += (fp - fm) / (2.0 * h) * w;
    }
    // Pᵗ = (1/N)·NPᵗ
    let lift = cache.lift_npt(&SplineField::from_bspline_coeffs(
        grad_bar.iter().cloned().collect(),
    ));

    let mut residual: f64 = 0.0;
    for i in 0..n {
        let cov = base.e_f_grad_h[i] - base.e_f * base.e_grad_h[i];
        let rhs = lift.values()[i] / n as f64 + cov;
        residual = residual.max((base.e_grad_f[i] - rhs).abs());
    }
    Ok(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MultiscaleGrid;
    use crate::macroscale::build_free_energy;
    use crate::norms;
    use crate::potential::Perturbation;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn cache(n: usize, m: usize) -> OperatorCache {
        OperatorCache::assemble(MultiscaleGrid::new(n, m).unwrap()).unwrap()
    }

    #[test]
    fn gaussian_drift_tends_to_identity_with_k() {
        let pot = SingleSitePotential::gaussian();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let c = cache(2048, 8);
        let drift = MesoDrift::new(&c, &pot, DriftMode::GaussianExact).unwrap();
        let y = SplineField::random(8, &mut rng);
        let g = drift.grad_hbar(&y, &mut rng).unwrap();
        let diff = g.sub(&y);
        let rel = norms::l2_norm_spline(&diff) / norms::l2_norm_spline(&y);
        assert!(rel <= 2.0 * c.defect() + 1e-12, "rel {rel} defect {}", c.defect());
    }

    #[test]
    fn surrogate_equals_identity_for_gaussian() {
        let pot = SingleSitePotential::gaussian();
        let quad = GaussHermite::new(200);
        let table = build_free_energy(&pot, &quad, 3.0, 121).unwrap();
        let c = cache(256, 8);
        let drift = MesoDrift::new(&c, &pot, DriftMode::SurrogatePhi(&table)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let y = SplineField::random(8, &mut rng).scaled(0.4);
        let g = drift.grad_hbar(&y, &mut rng).unwrap();
        for (a, b) in g.coeffs().iter().zip(y.coeffs()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn surrogate_close_to_exact_gradient() {
        // ‖∇H̄_exact - ∇H̄_surrogate‖ ≤ (1/K + 1/M)|y|_{H¹} + 1/K
        let pot = SingleSitePotential::gaussian();
        let quad = GaussHermite::new(200);
        let table = build_free_energy(&pot, &quad, 3.0, 121).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for (n, m) in [(256usize, 8usize), (512, 16)] {
            let c = cache(n, m);
            let exact = MesoDrift::new(&c, &pot, DriftMode::GaussianExact).unwrap();
            let surr = MesoDrift::new(&c, &pot, DriftMode::SurrogatePhi(&table)).unwrap();
            let k = (n / m) as f64;
            for _ in 0..20 {
                let y = SplineField::random(m, &mut rng).scaled(0.5);
                let ge = exact.grad_hbar(&y, &mut rng).unwrap();
                let gs = surr.grad_hbar(&y, &mut rng).unwrap();
                let gap = norms::l2_norm_spline(&ge.sub(&gs));
                let bound = (1.0 / k + 1.0 / m as f64) * norms::h1_seminorm(&y) + 1.0 / k;
                assert!(gap <= bound, "gap {gap} bound {bound}");
            }
        }
    }

    #[test]
    fn exact_mode_requires_gaussian() {
        let quad = GaussHermite::new(100);
        let pot = SingleSitePotential::normalize_tilt(
            Perturbation::Cosine {
                amplitude: 0.2,
                frequency: 1.0,
                phase: 0.0,
            },
            &quad,
        )
        .unwrap();
        let c = cache(64, 4);
        assert!(MesoDrift::new(&c, &pot, DriftMode::GaussianExact).is_err());
    }

    #[test]
    fn rhs_vanishes_at_equilibrium_and_flow_decays() {
        let pot = SingleSitePotential::gaussian();
        let c = cache(256, 8);
        let drift = MesoDrift::new(&c, &pot, DriftMode::GaussianExact).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let zero = SplineField::zero(8);
        let r = drift.rhs(&zero, &mut rng).unwrap();
        assert!(norms::l2_norm_spline(&r) < 1e-14);

        // flow from a projected cosine profile: L² and Ā⁻¹ norms decay
        let profile = SpinConfiguration::new(
            (0..256)
                .map(|i| (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / 256.0).cos())
                .collect(),
        );
        let eta0 = c.project_config(&profile);
        let times: Vec<f64> = (0..21).map(|i| i as f64 * 0.05 / 20.0).collect();
        let traj = integrate(&drift, &eta0, 5e-4, &times, &mut rng).unwrap();
        let mut prev_l2 = f64::MAX;
        let mut prev_lyap = f64::MAX;
        for (_, eta) in &traj {
            let l2 = norms::l2_norm_spline(eta);
            let lyap = norms::abar_norm(&c, eta, norms::AbarSign::Minus).unwrap();
            assert!(l2 <= prev_l2 * (1.0 + 1e-9));
            assert!(lyap <= prev_lyap * (1.0 + 1e-9));
            prev_l2 = l2;
            prev_lyap = lyap;
        }
        // mean-zero preserved along the flow
        for (_, eta) in &traj {
            assert!(eta.coeffs().iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn integrator_fourth_order_self_convergence() {
        // with dt well below the fastest rate, a halved step moves the
        // endpoint by less than 1e-8 relative
        let pot = SingleSitePotential::gaussian();
        let c = cache(128, 4);
        let drift = MesoDrift::new(&c, &pot, DriftMode::GaussianExact).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let eta0 = SplineField::random(4, &mut rng).scaled(0.3);
        let times = [0.0, 0.02];
        let a = integrate(&drift, &eta0, 1e-4, &times, &mut rng).unwrap();
        let b = integrate(&drift, &eta0, 5e-5, &times, &mut rng).unwrap();
        let diff = a[1].1.sub(&b[1].1);
        let rel = norms::l2_norm_spline(&diff) / norms::l2_norm_spline(&b[1].1);
        assert!(rel < 1e-8, "halving dt changed endpoint by {rel}");
    }

    #[test]
    fn eigen_decay_matches_heat_rates() {
        // flow matrix eigenvalues (pencil (S, T)) against 4π²k² for low modes
        let c = cache(512, 8);
        let t = c.pnpt_form().clone();
        let s = c.abar_form().clone();
        let lt = nalgebra::Cholesky::new(t).unwrap();
        let inv_l = lt.l().clone().try_inverse().unwrap();
        let sym = &inv_l * s * inv_l.transpose();
        let eig = nalgebra::SymmetricEigen::new(sym);
        let mut evs: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        evs.sort_by(f64::total_cmp);
        // evs[0] ~ 0 (constants), then pairs near 4π²k²
        let four_pi2 = 4.0 * std::f64::consts::PI.powi(2);
        assert!(evs[0].abs() < 1e-8 * evs[7]);
        for k in [1usize, 2] {
            let want = four_pi2 * (k * k) as f64;
            let tol = if k == 1 { 0.005 } else { 0.03 };
            for &got in &evs[2 * k - 1..=2 * k] {
                assert!(
                    (got / want - 1.0).abs() < tol,
                    "mode {k}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn mcmc_drift_consistent_with_exact() {
        let pot = SingleSitePotential::gaussian();
        let c = cache(64, 4);
        let exact = MesoDrift::new(&c, &pot, DriftMode::GaussianExact).unwrap();
        let params = McmcParams {
            chains: 6,
            samples_per_chain: 48,
            burn_in_steps: 600,
            steps_between_samples: 20,
            dt_f: 0.02,
            rel_stderr_cap: 0.8,
        };
        let mcmc = MesoDrift::new(&c, &pot, DriftMode::Mcmc(params.clone())).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let y = SplineField::random(4, &mut rng).scaled(0.6);
        let re = exact.rhs(&y, &mut rng).unwrap();
        let mut rng2 = ChaCha12Rng::seed_from_u64(7);
        let rm = mcmc.rhs(&y, &mut rng2).unwrap();
        let gap = norms::l2_norm_spline(&rm.sub(&re));
        let scale = norms::l2_norm_spline(&re);
        // 3 MC standard errors of the estimator, measured from a second run
        let mut rng3 = ChaCha12Rng::seed_from_u64(8);
        let rm2 = mcmc.rhs(&y, &mut rng3).unwrap();
        let run_spread = norms::l2_norm_spline(&rm2.sub(&rm)).max(0.02 * scale);
        assert!(gap <= 3.0 * run_spread, "gap {gap} spread {run_spread}");
    }

    #[test]
    fn convexity_probe_along_segments() {
        // directional derivative of the drift is monotone along segments
        let pot = SingleSitePotential::gaussian();
        let quad = GaussHermite::new(200);
        let table = build_free_energy(&pot, &quad, 3.0, 121).unwrap();
        let c = cache(256, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for mode in [DriftMode::GaussianExact, DriftMode::SurrogatePhi(&table)] {
            let drift = MesoDrift::new(&c, &pot, mode).unwrap();
            let y = SplineField::random(8, &mut rng).scaled(0.3);
            let delta = SplineField::random(8, &mut rng);
            let mut prev = f64::MIN;
            for step in 0..5 {
                let s = -0.4 + 0.2 * step as f64;
                let mut ys = y.clone();
                ys.add_scaled(&delta, s);
                let g = drift.grad_hbar(&ys, &mut rng).unwrap();
                let dir = c.l2_inner(&g, &delta);
                assert!(dir >= prev - 1e-10, "not monotone: {dir} after {prev}");
                prev = dir;
            }
        }
    }

    #[test]
    fn gradient_identity_tiny_instance() {
        let grid = MultiscaleGrid::new(8, 2).unwrap();
        let c = OperatorCache::assemble(grid).unwrap();
        let y = SplineField::from_bspline_coeffs(vec![0.3, -0.3]);
        let vlin: Vec<f64> = {
            let raw: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| v / norm).collect()
        };

        // constant f: both sides vanish identically
        let pot = SingleSitePotential::gaussian();
        let r = check_gradient_identity(&c, &pot, &TestFunction::Constant, &y, 6).unwrap();
        assert!(r < 1e-12, "constant residual {r}");

        // Gaussian moments are polynomial: low node counts are already exact
        let r = check_gradient_identity(&c, &pot, &TestFunction::Linear(vlin.clone()), &y, 8).unwrap();
        assert!(r < 1e-8, "gaussian linear residual {r}");
        let r =
            check_gradient_identity(&c, &pot, &TestFunction::SquaredCoordinate(0), &y, 8).unwrap();
        assert!(r < 1e-6, "gaussian squared residual {r}");
    }
}
