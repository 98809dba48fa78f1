//! The macroscopic layer: the numerically Legendre-transformed free energy
//! `φ` and a finite-difference solver for `∂_t ζ = ∂²_θ φ'(ζ)` on the torus.
//!
//! `φ'` is tabulated once and interpolated with a monotone cubic; the PDE and
//! the surrogate mesoscopic drift evaluate it millions of times, and the
//! monotonicity of the interpolant is what keeps the scheme parabolic.

use crate::error::{CoreError, Result};
use crate::piecewise::PiecewisePoly;
use crate::potential::SingleSitePotential;
use crate::quad::GaussHermite;

/// Tabulated Legendre transform of the single-site log partition function:
/// `φ(m) = sup_σ {σm - Λ(σ)}`, with `φ' = σ*(m)` and `φ'' = 1/Λ''(σ*)`.
#[derive(Debug, Clone)]
pub struct FreeEnergyTable {
    m_grid: Vec<f64>,
    phi: Vec<f64>,
    phi_prime: Vec<f64>,
    phi_second: Vec<f64>,
    /// monotone cubic slopes for the `phi_prime` nodes
    d_prime: Vec<f64>,
    d_second: Vec<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

/// `Λ`, `Λ'`, `Λ''` at `σ`, by quadrature recentered at the tilted mean so
/// the Gaussian factor always sits on the rule's weight.
fn log_partition(
    pot: &SingleSitePotential,
    quad: &GaussHermite,
    sigma: f64,
) -> (f64, f64, f64) {
    let s = sigma - pot.tilt();
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    let mut i2 = 0.0;
    for (&u, &w) in quad.nodes.iter().zip(&quad.weights) {
        let f = w * (-pot.perturbation().eval(u + s)).exp();
        i0 += f;
        i1 += f * u;
        i2 += f * u * u;
    }
    let mean_u = i1 / i0;
    let var = i2 / i0 - mean_u * mean_u;
    (0.5 * s * s + i0.ln(), s + mean_u, var)
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    // shape-preserving one-sided ends
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| -> f64 {
        let t = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if t * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && t.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            t
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn hermite_eval(x: &[f64], y: &[f64], d: &[f64], q: f64) -> f64 {
    let n = x.len();
    let h = x[1] - x[0];
    let pos = ((q - x[0]) / h).floor();
    let i = (pos.max(0.0) as usize).min(n - 2);
    let t = (q - x[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * y[i] + h10 * h * d[i] + h01 * y[i + 1] + h11 * h * d[i + 1]
}

/// Build the table on `[-m_max, m_max]` by safeguarded Newton on
/// `Λ'(σ) = m` at each node (`Λ'` is strictly increasing, so the bisection
/// fallback cannot fail).
pub fn build_free_energy(
    pot: &SingleSitePotential,
    quad: &GaussHermite,
    m_max: f64,
    grid_size: usize,
) -> Result<FreeEnergyTable> {
    if !(m_max > 0.0) || grid_size < 9 {
        return Err(CoreError::Precondition(
            "need m_max > 0 and at least 9 grid nodes".into(),
        ));
    }
    let n = if grid_size % 2 == 0 { grid_size + 1 } else { grid_size };
    let m_grid: Vec<f64> = (0..n)
        .map(|i| -m_max + 2.0 * m_max * i as f64 / (n - 1) as f64)
        .collect();

    let mut phi = Vec::with_capacity(n);
    let mut phi_prime = Vec::with_capacity(n);
    let mut phi_second = Vec::with_capacity(n);
    for &m in &m_grid {
        // bracket the root of Λ'(σ) = m
        let pert_span = 2.0 * pot.perturbation().sup();
        let mut lo = pot.tilt() + m - 2.0 - pert_span;
        let mut hi = pot.tilt() + m + 2.0 + pert_span;
        let mut expand = 0;
        while log_partition(pot, quad, lo).1 > m {
            lo -= 2.0;
            expand += 1;
            if expand > 30 {
                return Err(CoreError::RootFind("Λ' bracket expansion failed".into()));
            }
        }
        while log_partition(pot, quad, hi).1 < m {
            hi += 2.0;
            expand += 1;
            if expand > 60 {
                return Err(CoreError::RootFind("Λ' bracket expansion failed".into()));
            }
        }
        let mut sigma = pot.tilt() + m;
        let mut converged = false;
        for _ in 0..100 {
            let (_, lp, lpp) = log_partition(pot, quad, sigma);
            let f = lp - m;
            if f.abs() < 1e-12 * (1.0 + m.abs()) {
                converged = true;
                break;
            }
            if f > 0.0 {
                hi = sigma;
            } else {
                lo = sigma;
            }
            let newton = sigma - f / lpp;
            sigma = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        if !converged {
            return Err(CoreError::RootFind(format!(
                "Legendre solve stalled at m = {m}; raise the quadrature resolution"
            )));
        }
        let (lambda, _, lpp) = log_partition(pot, quad, sigma);
        phi.push(sigma * m - lambda);
        phi_prime.push(sigma);
        phi_second.push(1.0 / lpp);
    }

    let lambda_min = phi_second.iter().cloned().fold(f64::MAX, f64::min);
    let lambda_max = phi_second.iter().cloned().fold(f64::MIN, f64::max);
    if !(lambda_min > 0.0) {
        return Err(CoreError::Assembly(format!(
            "φ'' lost positivity: min = {lambda_min}"
        )));
    }
    for w in phi_prime.windows(2) {
        if !(w[1] > w[0]) {
            return Err(CoreError::Assembly("φ' not strictly increasing".into()));
        }
    }
    let d_prime = pchip_slopes(&m_grid, &phi_prime);
    let d_second = pchip_slopes(&m_grid, &phi_second);
    Ok(FreeEnergyTable {
        m_grid,
        phi,
        phi_prime,
        phi_second,
        d_prime,
        d_second,
        lambda_min,
        lambda_max,
    })
}

impl FreeEnergyTable {
    pub fn m_max(&self) -> f64 {
        *self.m_grid.last().unwrap()
    }

    /// `(λ, Λ)` bounds of `φ''` measured on the grid.
    pub fn lambda_bounds(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    pub fn phi(&self, m: f64) -> f64 {
        let mm = self.m_max();
        if m > mm {
            let dm = m - mm;
            let i = self.m_grid.len() - 1;
            return self.phi[i] + self.phi_prime[i] * dm + 0.5 * self.phi_second[i] * dm * dm;
        }
        if m < -mm {
            let dm = m + mm;
            return self.phi[0] + self.phi_prime[0] * dm + 0.5 * self.phi_second[0] * dm * dm;
        }
        // cubic Hermite with slopes equal to the tabulated φ' keeps
        // phi/phi_prime mutually consistent
        hermite_eval(&self.m_grid, &self.phi, &self.phi_prime, m)
    }

    pub fn phi_prime(&self, m: f64) -> f64 {
        let mm = self.m_max();
        if m > mm {
            let i = self.m_grid.len() - 1;
            return self.phi_prime[i] + self.phi_second[i] * (m - mm);
        }
        if m < -mm {
            return self.phi_prime[0] + self.phi_second[0] * (m + mm);
        }
        hermite_eval(&self.m_grid, &self.phi_prime, &self.d_prime, m)
    }

    pub fn phi_second(&self, m: f64) -> f64 {
        let mm = self.m_max();
        if m > mm {
            return self.phi_second[self.m_grid.len() - 1];
        }
        if m < -mm {
            return self.phi_second[0];
        }
        hermite_eval(&self.m_grid, &self.phi_second, &self.d_second, m)
    }

    /// Table rows `(m, φ, φ', φ'')`, e.g. for CSV export.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        (0..self.m_grid.len())
            .map(|i| (self.m_grid[i], self.phi[i], self.phi_prime[i], self.phi_second[i]))
    }
}

/// Mean-zero field on a uniform macro grid; values sit at cell midpoints
/// `(i + 1/2)/G` and embed as the step function on `[i/G, (i+1)/G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroField {
    values: Vec<f64>,
}

impl MacroField {
    pub fn new(mut values: Vec<f64>) -> Self {
        assert!(values.len() >= 4, "macro grid too coarse");
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for v in &mut values {
            *v -= mean;
        }
        MacroField { values }
    }

    pub fn from_profile(g: usize, profile: impl Fn(f64) -> f64) -> Self {
        Self::new((0..g).map(|i| profile((i as f64 + 0.5) / g as f64)).collect())
    }

    #[inline]
    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn as_piecewise(&self) -> PiecewisePoly {
        PiecewisePoly::from_step_values(&self.values)
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    /// Discrete H¹ seminorm squared of grid values: `(1/h)Σ(v_{i+1}-v_i)²`.
    pub fn h1_seminorm_sq(&self) -> f64 {
        let g = self.values.len();
        let mut s = 0.0;
        for i in 0..g {
            let d = self.values[(i + 1) % g] - self.values[i];
            s += d * d;
        }
        s * g as f64
    }
}

/// Time-stepping scheme for the macro solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroScheme {
    /// `ζ += dt·Δ_h φ'(ζ)`, stable for `dt ≤ h²/(2Λ)`.
    Explicit,
    /// Linearly implicit splitting: `(I - dt·Λ̄·Δ_h)ζ⁺ = ζ + dt·Δ_h(φ'(ζ) - Λ̄ζ)`,
    /// no step cap.
    SemiImplicit,
}

/// Largest stable explicit step for grid size `g`.
pub fn macro_stability_dt(table: &FreeEnergyTable, g: usize) -> f64 {
    let h = 1.0 / g as f64;
    h * h / (2.0 * table.lambda_bounds().1)
}

pub fn macro_step(
    table: &FreeEnergyTable,
    zeta: &MacroField,
    dt: f64,
    scheme: MacroScheme,
) -> Result<MacroField> {
    let g = zeta.grid_size();
    let g2 = (g as f64) * (g as f64);
    let v = zeta.values();
    match scheme {
        MacroScheme::Explicit => {
            if dt > macro_stability_dt(table, g) * (1.0 + 1e-12) {
                return Err(CoreError::Precondition(format!(
                    "explicit step {dt:.3e} above the h²/(2Λ) cap {:.3e}",
                    macro_stability_dt(table, g)
                )));
            }
            let w: Vec<f64> = v.iter().map(|&z| table.phi_prime(z)).collect();
            let mut out = Vec::with_capacity(g);
            for i in 0..g {
                let lap = g2 * (w[(i + 1) % g] - 2.0 * w[i] + w[(i + g - 1) % g]);
                out.push(v[i] + dt * lap);
            }
            Ok(MacroField::new(out))
        }
        MacroScheme::SemiImplicit => {
            let lam = table.lambda_bounds().1;
            let w: Vec<f64> = v.iter().map(|&z| table.phi_prime(z) - lam * z).collect();
            let mut rhs = Vec::with_capacity(g);
            for i in 0..g {
                let lap = g2 * (w[(i + 1) % g] - 2.0 * w[i] + w[(i + g - 1) % g]);
                rhs.push(v[i] + dt * lap);
            }
            let alpha = dt * lam * g2;
            let out = solve_periodic_tridiag(1.0 + 2.0 * alpha, -alpha, &rhs)?;
            Ok(MacroField::new(out))
        }
    }
}

/// Constant-coefficient periodic tridiagonal solve by the Sherman-Morrison
/// correction of the open-chain Thomas algorithm.
fn solve_periodic_tridiag(diag: f64, off: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let gamma = -diag;
    let thomas = |b_first: f64, b_last: f64, r: &[f64]| -> Result<Vec<f64>> {
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut bv = vec![diag; n];
        bv[0] = b_first;
        bv[n - 1] = b_last;
        let mut b = bv[0];
        if b == 0.0 {
            return Err(CoreError::Conditioning("tridiagonal pivot vanished".into()));
        }
        c[0] = off / b;
        d[0] = r[0] / b;
        for i in 1..n {
            b = bv[i] - off * c[i - 1];
            if b == 0.0 {
                return Err(CoreError::Conditioning("tridiagonal pivot vanished".into()));
            }
            c[i] = off / b;
            d[i] = (r[i] - off * d[i - 1]) / b;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        Ok(x)
    };
    // A_periodic = A_open + u vᵗ with u = (γ, 0, .., off), v = (1, .., off/γ)
    let b_first = diag - gamma;
    let b_last = diag - off * off / gamma;
    let y = thomas(b_first, b_last, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = off;
    let z = thomas(b_first, b_last, &u)?;
    let vy = y[0] + off / gamma * y[n - 1];
    let vz = z[0] + off / gamma * z[n - 1];
    let factor = vy / (1.0 + vz);
    Ok((0..n).map(|i| y[i] - factor * z[i]).collect())
}

/// `𝓗(ζ) = ∫ φ(ζ) dθ` by the (periodic-exact) rectangle rule.
pub fn macro_energy(table: &FreeEnergyTable, zeta: &MacroField) -> f64 {
    zeta.values().iter().map(|&z| table.phi(z)).sum::<f64>() / zeta.grid_size() as f64
}

/// Energy audit of an explicit run: per-step monotonicity of `𝓗` and the
/// match between the discrete decrement and `dt·|φ'(ζ)|²_{H¹,h}`.
#[derive(Debug, Clone)]
pub struct EnergyAudit {
    pub monotone: bool,
    pub max_gain: f64,
    pub decrement_rel_err: f64,
}

pub fn run_energy_audit(
    table: &FreeEnergyTable,
    zeta0: &MacroField,
    dt: f64,
    steps: usize,
    scheme: MacroScheme,
) -> Result<(MacroField, EnergyAudit)> {
    let mut zeta = zeta0.clone();
    let mut monotone = true;
    let mut max_gain: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut energy = macro_energy(table, &zeta);
    for _ in 0..steps {
        let w = MacroField::new(
            zeta.values()
                .iter()
                .map(|&z| table.phi_prime(z))
                .collect::<Vec<_>>(),
        );
        let next = macro_step(table, &zeta, dt, scheme)?;
        let e_next = macro_energy(table, &next);
        let gain = e_next - energy;
        if gain > 1e-8 * (1.0 + energy.abs()) {
            monotone = false;
        }
        max_gain = max_gain.max(gain);
        let predicted = dt * w.h1_seminorm_sq();
        if predicted > 1e-14 {
            let rel = ((energy - e_next) - predicted).abs() / predicted;
            worst_rel = worst_rel.max(rel);
        }
        energy = e_next;
        zeta = next;
    }
    Ok((
        zeta,
        EnergyAudit {
            monotone,
            max_gain,
            decrement_rel_err: worst_rel,
        },
    ))
}

/// A-priori bounds along a trajectory: `sup_t ‖ζ‖²` against
/// `(Λ/λ)‖ζ(0)‖²`, and the dissipation time-integrals.
#[derive(Debug, Clone)]
pub struct MacroBoundsReport {
    pub sup_ratio: f64,
    pub ratio_bound: f64,
    pub time_int_phi_h1: f64,
    pub time_int_h1: f64,
    pub dissipation_consistent: bool,
    pub pass: bool,
}

pub fn macro_bounds_check(
    table: &FreeEnergyTable,
    trajectory: &[(f64, MacroField)],
) -> MacroBoundsReport {
    let (lam, big_lam) = table.lambda_bounds();
    let z0 = trajectory[0].1.l2_norm().powi(2);
    let mut sup = 0.0f64;
    let mut int_phi = 0.0;
    let mut int_h1 = 0.0;
    for (idx, (t, z)) in trajectory.iter().enumerate() {
        sup = sup.max(z.l2_norm().powi(2));
        let w = MacroField::new(z.values().iter().map(|&v| table.phi_prime(v)).collect());
        let dt = if idx + 1 < trajectory.len() {
            trajectory[idx + 1].0 - t
        } else {
            0.0
        };
        int_phi += dt * w.h1_seminorm_sq();
        int_h1 += dt * z.h1_seminorm_sq();
    }
    let ratio_bound = big_lam / lam;
    let sup_ratio = sup / z0.max(1e-300);
    // |φ'(ζ)|_{H¹} ≥ λ|ζ|_{H¹} pointwise in time
    let dissipation_consistent = int_h1 <= int_phi / (lam * lam) * (1.0 + 1e-9);
    MacroBoundsReport {
        sup_ratio,
        ratio_bound,
        time_int_phi_h1: int_phi,
        time_int_h1: int_h1,
        dissipation_consistent,
        pass: sup_ratio <= ratio_bound * (1.0 + 1e-9) && dissipation_consistent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Perturbation;
    use approx::assert_relative_eq;

    fn gaussian_table() -> FreeEnergyTable {
        let quad = GaussHermite::new(200);
        build_free_energy(&SingleSitePotential::gaussian(), &quad, 3.0, 121).unwrap()
    }

    fn cosine_pot() -> SingleSitePotential {
        let quad = GaussHermite::new(200);
        SingleSitePotential::normalize_tilt(
            Perturbation::Cosine {
                amplitude: 0.5,
                frequency: 1.0,
                phase: 1.0,
            },
            &quad,
        )
        .unwrap()
    }

    #[test]
    fn gaussian_free_energy_is_quadratic() {
        let t = gaussian_table();
        for &m in &[-2.7, -1.0, 0.0, 0.33, 2.9] {
            assert_relative_eq!(t.phi_prime(m), m, epsilon = 1e-10);
            assert_relative_eq!(t.phi_second(m), 1.0, epsilon = 1e-10);
        }
        assert!(t.phi_prime(0.0).abs() < 1e-12);
        // φ(m) - φ(0) = m²/2
        assert_relative_eq!(t.phi(1.5) - t.phi(0.0), 1.125, epsilon = 1e-9);
    }

    #[test]
    fn cosine_free_energy_against_grid_search_oracle() {
        let pot = cosine_pot();
        let quad = GaussHermite::new(200);
        let table = build_free_energy(&pot, &quad, 3.0, 241).unwrap();
        assert!(table.phi_prime(0.0).abs() < 1e-8);
        let (lam, big) = table.lambda_bounds();
        assert!(lam > 0.0 && big < 10.0);

        // brute-force Legendre sup over a fine σ grid, with Λ by dense
        // trapezoid quadrature (independent of the Gauss-Hermite path)
        let log_partition_dense = |sigma: f64| -> f64 {
            let pts = 50_001;
            let lo = -12.0 + sigma.min(0.0);
            let hi = 12.0 + sigma.max(0.0);
            let h = (hi - lo) / (pts - 1) as f64;
            let mut s = 0.0;
            for i in 0..pts {
                let x = lo + i as f64 * h;
                let trap = if i == 0 || i == pts - 1 { 0.5 } else { 1.0 };
                s += trap * (sigma * x - pot.psi(x)).exp();
            }
            (s * h).ln()
        };
        for &m in &[-1.4, -0.3, 0.0, 0.9, 2.1] {
            let mut best = f64::MIN;
            let sig0 = table.phi_prime(m);
            let steps = 1600;
            for i in 0..=steps {
                let sig = sig0 - 0.4 + 0.8 * i as f64 / steps as f64;
                best = best.max(sig * m - log_partition_dense(sig));
            }
            assert!(
                (table.phi(m) - best).abs() < 1e-6,
                "m={m}: table {} vs oracle {}",
                table.phi(m),
                best
            );
        }
        // φ'' > 0 across [-3, 3]
        for i in 0..=600 {
            let m = -3.0 + i as f64 / 100.0;
            assert!(table.phi_second(m) > 0.0);
        }
    }

    #[test]
    fn legendre_involution_on_grid() {
        // recompute sup_σ(σm - Λ(σ)) by fine search around σ* and compare
        let pot = cosine_pot();
        let quad = GaussHermite::new(200);
        let table = build_free_energy(&pot, &quad, 2.0, 81).unwrap();
        for (m, phi, sigma, _) in table.rows().step_by(16) {
            let mut best = f64::MIN;
            for i in -2000..=2000 {
                let s = sigma + i as f64 * 2.5e-4;
                let (lam, _, _) = log_partition(&pot, &quad, s);
                best = best.max(s * m - lam);
            }
            assert!((best - phi).abs() < 1e-6, "involution gap at m={m}");
        }
    }

    #[test]
    fn heat_kernel_reproduction() {
        let table = gaussian_table();
        let g = 256usize;
        let zeta0 = MacroField::from_profile(g, |th| (2.0 * std::f64::consts::PI * th).cos());
        let dt = 0.8 * macro_stability_dt(&table, g);
        let t_end = 0.05;
        let steps = (t_end / dt).ceil() as usize;
        let dt = t_end / steps as f64;
        let mut z = zeta0.clone();
        for _ in 0..steps {
            z = macro_step(&table, &z, dt, MacroScheme::Explicit).unwrap();
        }
        let decay = (-4.0 * std::f64::consts::PI.powi(2) * t_end).exp();
        let mut err = 0.0;
        let mut norm = 0.0;
        for (i, &v) in z.values().iter().enumerate() {
            let th = (i as f64 + 0.5) / g as f64;
            let exact = decay * (2.0 * std::f64::consts::PI * th).cos();
            err += (v - exact).powi(2);
            norm += exact * exact;
        }
        assert!(
            (err / norm).sqrt() < 1e-3,
            "heat kernel relative error {}",
            (err / norm).sqrt()
        );
    }

    #[test]
    fn semi_implicit_matches_explicit() {
        let table = gaussian_table();
        let g = 128usize;
        let z0 = MacroField::from_profile(g, |th| (2.0 * std::f64::consts::PI * th).cos());
        let dt = 0.5 * macro_stability_dt(&table, g);
        let steps = 2000;
        let mut a = z0.clone();
        let mut b = z0.clone();
        for _ in 0..steps {
            a = macro_step(&table, &a, dt, MacroScheme::Explicit).unwrap();
            b = macro_step(&table, &b, dt, MacroScheme::SemiImplicit).unwrap();
        }
        let diff: f64 = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff < 2e-3 * (1.0 + a.l2_norm()), "schemes diverged: {diff}");
        // semi-implicit tolerates a step far above the explicit cap
        let big = macro_step(&table, &z0, 50.0 * dt, MacroScheme::SemiImplicit);
        assert!(big.is_ok());
        assert!(macro_step(&table, &z0, 50.0 * dt, MacroScheme::Explicit).is_err());
    }

    #[test]
    fn self_convergence_second_order_in_space() {
        // halving h (and dt ∝ h²) cuts the nodal error against the analytic
        // heat solution by ~4
        let table = gaussian_table();
        let t_end = 0.01;
        let pi = std::f64::consts::PI;
        let exact = |th: f64| {
            (-4.0 * pi * pi * t_end).exp() * (2.0 * pi * th).cos()
                + 0.3 * (-16.0 * pi * pi * t_end).exp() * (4.0 * pi * th).sin()
        };
        let err_of = |g: usize| -> f64 {
            let z0 = MacroField::from_profile(g, |th| {
                (2.0 * pi * th).cos() + 0.3 * (4.0 * pi * th).sin()
            });
            let dt = 0.1 * macro_stability_dt(&table, g);
            let steps = (t_end / dt).ceil() as usize;
            let dt = t_end / steps as f64;
            let mut z = z0;
            for _ in 0..steps {
                z = macro_step(&table, &z, dt, MacroScheme::Explicit).unwrap();
            }
            let mut e = 0.0;
            for (i, &v) in z.values().iter().enumerate() {
                let th = (i as f64 + 0.5) / g as f64;
                e += (v - exact(th)).powi(2);
            }
            (e / g as f64).sqrt()
        };
        let ratio = err_of(64) / err_of(128);
        assert!((2.5..6.5).contains(&ratio), "convergence ratio {ratio}");
    }

    #[test]
    fn zero_field_is_fixed_point() {
        let table = gaussian_table();
        let z = MacroField::new(vec![0.0; 64]);
        let z1 = macro_step(&table, &z, macro_stability_dt(&table, 64), MacroScheme::Explicit)
            .unwrap();
        assert!(z1.values().iter().all(|&v| v == 0.0));
        assert_relative_eq!(macro_energy(&table, &z), table.phi(0.0), epsilon = 1e-14);
    }

    #[test]
    fn gaussian_energy_is_half_l2() {
        let table = gaussian_table();
        let z = MacroField::from_profile(512, |th| 0.8 * (2.0 * std::f64::consts::PI * th).cos());
        let gap = macro_energy(&table, &z) - table.phi(0.0);
        assert_relative_eq!(gap, 0.5 * z.l2_norm().powi(2), max_relative = 1e-8);
    }

    #[test]
    fn energy_decays_and_decrement_matches_dissipation() {
        let quad = GaussHermite::new(200);
        let table = build_free_energy(&cosine_pot(), &quad, 3.0, 241).unwrap();
        let g = 128usize;
        let z0 = MacroField::from_profile(g, |th| (2.0 * std::f64::consts::PI * th).cos());
        let dt = 0.05 * macro_stability_dt(&table, g);
        let (_, audit) = run_energy_audit(&table, &z0, dt, 400, MacroScheme::Explicit).unwrap();
        assert!(audit.monotone, "energy gained {:.3e}", audit.max_gain);
        assert!(
            audit.decrement_rel_err < 0.10,
            "decrement mismatch {:.3}",
            audit.decrement_rel_err
        );
    }

    #[test]
    fn bounds_hold_along_trajectories() {
        let quad = GaussHermite::new(200);
        for (pot, name) in [
            (SingleSitePotential::gaussian(), "gaussian"),
            (cosine_pot(), "cosine"),
        ] {
            let table = build_free_energy(&pot, &quad, 3.0, 241).unwrap();
            let g = 128usize;
            let mut z = MacroField::from_profile(g, |th| (2.0 * std::f64::consts::PI * th).cos());
            let dt = 0.8 * macro_stability_dt(&table, g);
            let mut traj = vec![(0.0, z.clone())];
            let mut t = 0.0;
            for _ in 0..40 {
                for _ in 0..50 {
                    z = macro_step(&table, &z, dt, MacroScheme::Explicit).unwrap();
                    t += dt;
                }
                traj.push((t, z.clone()));
            }
            let report = macro_bounds_check(&table, &traj);
            assert!(report.pass, "{name}: {report:?}");
            let z0_sq = traj[0].1.l2_norm().powi(2);
            let (lam, big) = table.lambda_bounds();
            assert!(report.time_int_phi_h1 <= big * z0_sq * 1.5);
            let _ = lam;
        }
    }

    #[test]
    fn mass_conserved_each_step() {
        let quad = GaussHermite::new(200);
        let table = build_free_energy(&cosine_pot(), &quad, 3.0, 121).unwrap();
        let g = 64usize;
        let mut z = MacroField::from_profile(g, |th| (2.0 * std::f64::consts::PI * th).cos());
        let dt = 0.9 * macro_stability_dt(&table, g);
        for _ in 0..500 {
            z = macro_step(&table, &z, dt, MacroScheme::Explicit).unwrap();
            let mean: f64 = z.values().iter().sum::<f64>() / g as f64;
            assert!(mean.abs() < 1e-12);
        }
    }
}
