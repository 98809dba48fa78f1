//! Exact L², H¹ and H⁻¹ norms for lattice step functions and spline fields,
//! plus the `Ā`-weighted norms of the mesoscopic space.
//!
//! Everything here is closed-form piecewise-polynomial integration. The H⁻¹
//! norm is the L² norm of the mean-zero periodic antiderivative; mixed
//! step/spline differences are handled on the common mesh refinement.

use crate::error::Result;
use crate::lattice::SpinConfiguration;
use crate::operators::OperatorCache;
use crate::piecewise::PiecewisePoly;
use crate::spline::SplineField;

/// `‖x‖_{L²(𝕋)}` of the step function, equal to `sqrt((1/N)Σx_i²)`.
pub fn l2_norm_config(x: &SpinConfiguration) -> f64 {
    let n = x.len() as f64;
    (x.values().iter().map(|v| v * v).sum::<f64>() / n).sqrt()
}

pub fn l2_norm_spline(y: &SplineField) -> f64 {
    PiecewisePoly::from_spline(y).l2_norm()
}

/// `‖∂_θ y‖_{L²}` from the piece coefficients (the derivative is piecewise
/// linear).
pub fn h1_seminorm(y: &SplineField) -> f64 {
    h1_inner(y, y).sqrt()
}

pub fn h1_inner(y: &SplineField, z: &SplineField) -> f64 {
    assert_eq!(y.pieces(), z.pieces());
    let h = 1.0 / y.pieces() as f64;
    let yp = y.local_pieces();
    let zp = z.local_pieces();
    let mut s = 0.0;
    for (a, b) in yp.iter().zip(&zp) {
        // ∫ (2a₁u + b₁)(2a₂u + b₂) du over one cell
        s += 4.0 * a.a * b.a * h * h * h / 3.0 + (a.a * b.b + b.a * a.b) * h * h + a.b * b.b * h;
    }
    s
}

/// H⁻¹ norm of any mean-zero piecewise-polynomial field.
pub fn hneg1_norm(f: &PiecewisePoly) -> Result<f64> {
    Ok(f.antiderivative_mean_zero()?.l2_norm())
}

pub fn hneg1_norm_config(x: &SpinConfiguration) -> Result<f64> {
    hneg1_norm(&PiecewisePoly::from_config(x))
}

pub fn hneg1_norm_spline(y: &SplineField) -> Result<f64> {
    hneg1_norm(&PiecewisePoly::from_spline(y))
}

/// `‖x - y‖_{H⁻¹}` for a step function against a spline, on the common mesh.
pub fn hneg1_distance_config_spline(x: &SpinConfiguration, y: &SplineField) -> Result<f64> {
    let d = PiecewisePoly::from_config(x).sub(&PiecewisePoly::from_spline(y))?;
    hneg1_norm(&d)
}

pub fn l2_distance_config_spline(x: &SpinConfiguration, y: &SplineField) -> Result<f64> {
    let d = PiecewisePoly::from_config(x).sub(&PiecewisePoly::from_spline(y))?;
    Ok(d.l2_norm())
}

/// Which of the `Ā`-weighted norms to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbarSign {
    Plus,
    Minus,
}

/// `sqrt(⟨y, Ā^{±1} y⟩_{L²})`.
pub fn abar_norm(cache: &OperatorCache, y: &SplineField, sign: AbarSign) -> Result<f64> {
    match sign {
        AbarSign::Plus => Ok(cache.abar_inner(y, y).max(0.0).sqrt()),
        AbarSign::Minus => {
            let w = cache.solve_abar(y)?;
            Ok(cache.l2_inner(y, &w).max(0.0).sqrt())
        }
    }
}

/// `x·Ax` in the telescoped form; re-export of the operator-level helper so
/// norm call sites read uniformly.
pub use crate::operators::dirichlet_form;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MultiscaleGrid;
    use crate::operators::apply_a;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_config(n: usize, rng: &mut ChaCha12Rng) -> SpinConfiguration {
        SpinConfiguration::new((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
    }

    #[test]
    fn l2_of_alternating_step() {
        let x = SpinConfiguration::new(vec![1.0, -1.0, 1.0, -1.0]);
        assert_relative_eq!(l2_norm_config(&x), 1.0, epsilon = 1e-15);
        assert_eq!(l2_norm_config(&SpinConfiguration::zeros(8)), 0.0);
    }

    #[test]
    fn l2_spline_matches_gram_quadratic_form() {
        let cache = OperatorCache::assemble(MultiscaleGrid::new(40, 5).unwrap()).unwrap();
        let y = SplineField::from_bspline_coeffs(vec![1.0, -1.0, 0.0, 0.0, 0.0]);
        let via_gram = cache.l2_inner(&y, &y).sqrt();
        assert_relative_eq!(l2_norm_spline(&y), via_gram, epsilon = 1e-13);
        // fine-grid quadrature cross-check
        let q = 200_000;
        let mut s = 0.0;
        for i in 0..q {
            let th = (i as f64 + 0.5) / q as f64;
            let v = y.eval(th);
            s += v * v;
        }
        assert_relative_eq!(l2_norm_spline(&y), (s / q as f64).sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn h1_matches_quadrature() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let y = SplineField::random(6, &mut rng);
        let q = 400_000;
        let mut s = 0.0;
        for i in 0..q {
            let th = (i as f64 + 0.5) / q as f64;
            let d = y.deriv(th);
            s += d * d;
        }
        assert_relative_eq!(h1_seminorm(&y), (s / q as f64).sqrt(), max_relative = 1e-6);
        assert_eq!(h1_seminorm(&SplineField::zero(6)), 0.0);
    }

    #[test]
    fn hneg1_of_sine_step_sampling() {
        // step sampling of sin(2πθ): H⁻¹ norm approaches 1/(2√2·π)
        let n = 4096;
        let x = SpinConfiguration::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).sin())
                .collect(),
        );
        let target = 1.0 / (2.0 * std::f64::consts::SQRT_2 * std::f64::consts::PI);
        assert_relative_eq!(hneg1_norm_config(&x).unwrap(), target, max_relative = 1e-5);
        assert_relative_eq!(target, 0.11254, max_relative = 1e-4);
    }

    #[test]
    fn dirichlet_form_agrees_with_operator() {
        let grid = MultiscaleGrid::new(16, 4).unwrap();
        let x = SpinConfiguration::new(vec![1.0, -1.0, 1.0, -1.0]);
        assert_relative_eq!(dirichlet_form(&x), 256.0, epsilon = 1e-12);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_config(16, &mut rng);
            let ax = apply_a(&grid, &x);
            let direct: f64 = x
                .values()
                .iter()
                .zip(ax.values())
                .map(|(a, b)| a * b)
                .sum();
            assert_relative_eq!(dirichlet_form(&x), direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn hneg1_duality_against_h1() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let cache = OperatorCache::assemble(MultiscaleGrid::new(64, 8).unwrap()).unwrap();
        for _ in 0..50 {
            let f = random_config(64, &mut rng);
            let g = SplineField::random(8, &mut rng);
            let ip = PiecewisePoly::from_config(&f)
                .inner(&PiecewisePoly::from_spline(&g))
                .unwrap();
            let bound = hneg1_norm_config(&f).unwrap() * h1_seminorm(&g);
            assert!(ip.abs() <= bound * (1.0 + 1e-12), "{ip} vs {bound}");
        }
        let _ = cache;
    }

    #[test]
    fn spline_approximation_chain() {
        // ζ on the finer mesh 2M, projected to M: the residual gains one
        // factor 1/M in H⁻¹ and the whole chain is collectively ≲ M⁻²|ζ|_{H¹}
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for m in [4usize, 8, 16] {
            let cache = OperatorCache::assemble(MultiscaleGrid::new(32 * m, m).unwrap()).unwrap();
            for _ in 0..20 {
                let zeta = SplineField::random(2 * m, &mut rng);
                let pz = cache
                    .project_piecewise(&PiecewisePoly::from_spline(&zeta))
                    .unwrap();
                let resid = PiecewisePoly::from_spline(&zeta)
                    .sub(&PiecewisePoly::from_spline(&pz))
                    .unwrap();
                let l2 = resid.l2_norm();
                let hneg = hneg1_norm(&resid).unwrap();
                let h1 = h1_seminorm(&zeta);
                let mf = m as f64;
                assert!(hneg <= 1.0 / mf * l2, "H⁻¹ gain fails: {hneg} vs {l2}");
                assert!(l2 <= 1.0 / mf * h1, "L² bound fails: {l2} vs {h1}");
                assert!(hneg <= 1.0 / (mf * mf) * h1, "chain bound fails: {hneg} vs {h1}");
            }
        }
    }

    #[test]
    fn discrete_poincare_constant_bounded() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for n in [64usize, 256, 1024] {
            // sharp constant from the lowest mode of A
            let lam_min = 4.0 * (n as f64) * (n as f64) * (std::f64::consts::PI / n as f64).sin().powi(2);
            let sharp = 1.0 / lam_min;
            assert!(sharp < 0.03, "sharp Poincaré constant {sharp} at N = {n}");
            for _ in 0..100 {
                let x = random_config(n, &mut rng);
                let sum_sq: f64 = x.values().iter().map(|v| v * v).sum();
                let ratio = sum_sq / dirichlet_form(&x);
                assert!(ratio <= sharp * 1.0000001);
            }
        }
    }

    #[test]
    fn abar_norm_equivalences() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for m in [4usize, 8, 16] {
            let ys: Vec<SplineField> = (0..100).map(|_| SplineField::random(m, &mut rng)).collect();
            for k in [16usize, 64] {
                let cache = OperatorCache::assemble(MultiscaleGrid::new(k * m, m).unwrap()).unwrap();
                for y in &ys {
                    let r1 = abar_norm(&cache, y, AbarSign::Minus).unwrap()
                        / hneg1_norm_spline(y).unwrap();
                    let r2 = abar_norm(&cache, y, AbarSign::Plus).unwrap() / h1_seminorm(y);
                    assert!((1.0 / 3.0..=3.0).contains(&r1), "m={m} k={k} r1={r1}");
                    assert!((1.0 / 3.0..=3.0).contains(&r2), "m={m} k={k} r2={r2}");
                }
            }
        }
    }

    #[test]
    fn inverse_sobolev_constant_bounded() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let mut consts = Vec::new();
        for m in [4usize, 8, 16, 32] {
            let mut c_max: f64 = 0.0;
            for _ in 0..100 {
                let y = SplineField::random(m, &mut rng);
                c_max = c_max.max(h1_seminorm(&y) / (m as f64 * l2_norm_spline(&y)));
            }
            consts.push(c_max);
        }
        for c in &consts {
            assert!(*c < 4.0, "inverse Sobolev constant {c}");
        }
    }
}
