//! The microscopic layer: conservative Euler-Maruyama stepping of
//! `dX = -A ∇H(X) dt + √(2A) dB`, equilibrium and fiber samplers, and the
//! entropy bookkeeping for tilted initial laws.
//!
//! The noise increment is realized as `√(2dt)·Dᵗξ` with
//! `(Dᵗξ)_i = N(ξ_i - ξ_{i+1})`; its covariance is exactly `2dt·A` and it
//! sums to zero identically, so the mean spin is conserved by construction
//! rather than by correction.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::grid::MultiscaleGrid;
use crate::lattice::SpinConfiguration;
use crate::operators::{apply_a_raw, OperatorCache};
use crate::potential::SingleSitePotential;
use crate::quad::GaussHermite;
use crate::spline::SplineField;

/// `H(x) = Σ ψ(x_i)`.
pub fn hamiltonian(pot: &SingleSitePotential, x: &SpinConfiguration) -> f64 {
    x.values().iter().map(|&v| pot.psi(v)).sum()
}

/// `(∇H)_i = ψ'(x_i)` as a raw vector (not mean-zero in general).
pub fn grad_hamiltonian(pot: &SingleSitePotential, x: &SpinConfiguration) -> Vec<f64> {
    x.values().iter().map(|&v| pot.psi_prime(v)).collect()
}

/// Largest stable explicit step: `factor / (4N²·(1 + ‖δψ''‖_∞))`. The
/// `4N²` is the top eigenvalue of `A`.
pub fn stability_dt(grid: &MultiscaleGrid, pot: &SingleSitePotential, factor: f64) -> f64 {
    let n = grid.n() as f64;
    factor / (4.0 * n * n * pot.grad_lipschitz())
}

/// One Kawasaki trajectory with its own counter-based stream.
pub struct KawasakiState {
    x: Vec<f64>,
    t: f64,
    steps: usize,
    rng: ChaCha12Rng,
}

impl KawasakiState {
    pub fn new(x0: SpinConfiguration, rng: ChaCha12Rng) -> Self {
        KawasakiState {
            x: x0.into_values(),
            t: 0.0,
            steps: 0,
            rng,
        }
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn config(&self) -> SpinConfiguration {
        SpinConfiguration::new(self.x.clone())
    }

    /// Euler-Maruyama update. `with_noise = false` gives the deterministic
    /// drift flow (diagnostics only).
    pub fn step(
        &mut self,
        pot: &SingleSitePotential,
        grid: &MultiscaleGrid,
        dt: f64,
        with_noise: bool,
    ) -> Result<()> {
        let n = self.x.len();
        debug_assert_eq!(n, grid.n());
        let grad: Vec<f64> = self.x.iter().map(|&v| pot.psi_prime(v)).collect();
        let drift = apply_a_raw(&grad);
        for (xi, di) in self.x.iter_mut().zip(&drift) {
            *xi -= dt * di;
        }
        if with_noise {
            let nf = n as f64;
            let amp = (2.0 * dt).sqrt() * nf;
            let xi: Vec<f64> = (0..n)
                .map(|_| self.rng.sample::<f64, _>(StandardNormal))
                .collect();
            for i in 0..n {
                self.x[i] += amp * (xi[i] - xi[(i + 1) % n]);
            }
        }
        // float hygiene: the update conserves the mean identically in exact
        // arithmetic, remove the accumulated roundoff
        let mean = self.x.iter().sum::<f64>() / n as f64;
        for v in &mut self.x {
            *v -= mean;
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Divergence {
                step: self.steps,
                context: format!("dt = {dt:.3e}"),
            });
        }
        self.t += dt;
        self.steps += 1;
        Ok(())
    }
}

/// Ensemble parameters for a batch of independent realizations.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub realizations: usize,
    pub dt: f64,
    pub seed: u64,
}

impl EnsembleSpec {
    /// The explicit scheme needs `dt ≤ 1/(4N²Λ_ψ)`; reject anything larger.
    pub fn validate(&self, grid: &MultiscaleGrid, pot: &SingleSitePotential) -> Result<()> {
        let cap = stability_dt(grid, pot, 1.0);
        if self.dt > cap {
            return Err(CoreError::Precondition(format!(
                "dt = {:.3e} above the stability cap {:.3e}",
                self.dt, cap
            )));
        }
        if self.realizations == 0 {
            return Err(CoreError::Precondition("need at least one realization".into()));
        }
        Ok(())
    }
}

/// Draw from the equilibrium measure `∝ e^{-H}` on the mean-zero hyperplane.
///
/// Exact in the Gaussian case (projected i.i.d. standard normals). With a
/// perturbation, sites are drawn i.i.d. from `e^{-ψ}` by rejection and then
/// projected; the projection makes the law approximate at order `1/N`.
pub fn sample_gibbs(
    pot: &SingleSitePotential,
    grid: &MultiscaleGrid,
    rng: &mut ChaCha12Rng,
) -> Result<SpinConfiguration> {
    let n = grid.n();
    if pot.is_gaussian() {
        let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        return Ok(SpinConfiguration::new(v));
    }
    let sup = pot.perturbation().sup();
    let mut out = Vec::with_capacity(n);
    let mut proposals = 0usize;
    let mut accepted = 0usize;
    while out.len() < n {
        // proposal x = u - a with u standard normal matches the Gaussian
        // factor of e^{-ψ}; accept against the bounded perturbation
        let u: f64 = rng.sample(StandardNormal);
        let x = u - pot.tilt();
        proposals += 1;
        let accept: f64 = rng.random();
        if accept < (-pot.perturbation().eval(x) - sup).exp() {
            out.push(x);
            accepted += 1;
        }
        if proposals >= 1000 && (accepted as f64) < 1e-3 * proposals as f64 {
            return Err(CoreError::Sampler(format!(
                "rejection acceptance {:.2e} below 1e-3",
                accepted as f64 / proposals as f64
            )));
        }
    }
    Ok(SpinConfiguration::new(out))
}

/// Unadjusted Langevin restricted to the fiber `{x : Px = y}`: both drift
/// and noise are projected onto `ker P`, so `Px` is conserved along the
/// chain. Small `dt_f` keeps the discretization bias below the Monte Carlo
/// noise of the consumers.
pub fn sample_fiber(
    pot: &SingleSitePotential,
    cache: &OperatorCache,
    y: &SplineField,
    n_steps: usize,
    dt_f: f64,
    rng: &mut ChaCha12Rng,
) -> Result<SpinConfiguration> {
    let mut x = fiber_base_point(cache, y).into_values();
    fiber_chain(pot, cache, y, &mut x, n_steps, dt_f, rng)?;
    Ok(SpinConfiguration::new(x))
}

/// Starting point with `Px = y` exactly: the lift of the `PNPᵗ` preimage.
pub fn fiber_base_point(cache: &OperatorCache, y: &SplineField) -> SpinConfiguration {
    cache.lift_npt(&cache.solve_pnpt(y))
}

/// Advance an existing fiber chain in place; exposed so estimators can keep
/// one long chain instead of restarting.
pub fn fiber_chain(
    pot: &SingleSitePotential,
    cache: &OperatorCache,
    y: &SplineField,
    x: &mut [f64],
    n_steps: usize,
    dt_f: f64,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let n = x.len();
    let amp = (2.0 * dt_f).sqrt();
    for step in 0..n_steps {
        let grad: Vec<f64> = x.iter().map(|&v| pot.psi_prime(v)).collect();
        let gpar = cache.fiber_project_parallel(&grad);
        let noise: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let npar = cache.fiber_project_parallel(&noise);
        for i in 0..n {
            x[i] += -dt_f * gpar[i] + amp * npar[i];
        }
        if step % 64 == 63 || step + 1 == n_steps {
            let px = cache.project_config(&SpinConfiguration::new(x.to_vec()));
            let drift = px
                .coeffs()
                .iter()
                .zip(y.coeffs())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if drift > 1e-6 {
                return Err(CoreError::Precondition(format!(
                    "fiber drift {drift:.3e} exceeds 1e-6; projector defect"
                )));
            }
        }
    }
    Ok(())
}

/// Total relative entropy of the tilted product initializer `X₀ = Z + s`
/// with `Z ~ μ` and `s = NPᵗ(shift)`.
///
/// Gaussian case in closed form (`|s|²/2`); otherwise the per-site
/// Kullback-Leibler integral is evaluated by recentered Gauss-Hermite
/// quadrature. Divide by `N` for the entropy-per-site constant.
pub fn entropy_bound_product_init(
    pot: &SingleSitePotential,
    cache: &OperatorCache,
    shift: &SplineField,
    quad: &GaussHermite,
) -> f64 {
    let s = cache.lift_npt(shift);
    if pot.is_gaussian() {
        return 0.5 * s.values().iter().map(|v| v * v).sum::<f64>();
    }
    // KL per site: s²/2 + a·s + E[δψ(u+s) - δψ(u)] under the single-site law
    let a = pot.tilt();
    let pert = pot.perturbation();
    let mut i0 = 0.0;
    let mut total = 0.0;
    // normalization is shared by every site
    for (&u, &w) in quad.nodes.iter().zip(&quad.weights) {
        i0 += w * (-pert.eval(u - a)).exp();
    }
    for &si in s.values() {
        let mut e_delta = 0.0;
        for (&u, &w) in quad.nodes.iter().zip(&quad.weights) {
            let site = u - a;
            let f = w * (-pert.eval(site)).exp();
            e_delta += f * (pert.eval(site + si) - pert.eval(site));
        }
        total += 0.5 * si * si + a * si + e_delta / i0;
    }
    total
}
