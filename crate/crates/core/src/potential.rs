use crate::error::{CoreError, Result};
use crate::quad::GaussHermite;

/// Bounded perturbation of the quadratic single-site potential.
///
/// Only perturbations with explicit sup-norm constants are admitted, so the
/// stability bounds of the integrators can be computed instead of guessed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    None,
    /// `δψ(x) = amplitude · cos(frequency·x + phase)`
    Cosine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
}

impl Perturbation {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Perturbation::None => 0.0,
            Perturbation::Cosine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * x + phase).cos(),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Perturbation::None => 0.0,
            Perturbation::Cosine {
                amplitude,
                frequency,
                phase,
            } => -amplitude * frequency * (frequency * x + phase).sin(),
        }
    }

    pub fn second(&self, x: f64) -> f64 {
        match *self {
            Perturbation::None => 0.0,
            Perturbation::Cosine {
                amplitude,
                frequency,
                phase,
            } => -amplitude * frequency * frequency * (frequency * x + phase).cos(),
        }
    }

    /// `‖δψ‖_∞`
    pub fn sup(&self) -> f64 {
        match *self {
            Perturbation::None => 0.0,
            Perturbation::Cosine { amplitude, .. } => amplitude.abs(),
        }
    }

    /// `‖δψ''‖_∞`
    pub fn sup_second(&self) -> f64 {
        match *self {
            Perturbation::None => 0.0,
            Perturbation::Cosine {
                amplitude,
                frequency,
                ..
            } => amplitude.abs() * frequency * frequency,
        }
    }
}

/// Single-site potential `ψ(x) = x²/2 + a·x + δψ(x)`.
///
/// All layers assume the tilt `a` has been chosen so the single-site measure
/// `∝ e^{-ψ}` has mean zero; use [`SingleSitePotential::normalize_tilt`] to
/// produce one from a perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleSitePotential {
    tilt: f64,
    perturbation: Perturbation,
}

/// Which derivative of `ψ` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivOrder {
    Value,
    First,
    Second,
}

impl SingleSitePotential {
    /// The pure Gaussian site: `ψ(x) = x²/2`.
    pub fn gaussian() -> Self {
        SingleSitePotential {
            tilt: 0.0,
            perturbation: Perturbation::None,
        }
    }

    /// Build with an explicit tilt, bypassing normalization. Mostly useful
    /// in tests; prefer [`SingleSitePotential::normalize_tilt`].
    pub fn with_tilt(tilt: f64, perturbation: Perturbation) -> Self {
        SingleSitePotential { tilt, perturbation }
    }

    /// Choose the tilt `a` so that `∫ z e^{-ψ(z)} dz = 0`.
    ///
    /// The map `a ↦ mean` is strictly decreasing (its derivative is minus a
    /// variance), so bracketed bisection cannot stall. The quadrature is
    /// performed in the recentered variable, which keeps the Gaussian factor
    /// on the rule's weight for any tilt.
    pub fn normalize_tilt(perturbation: Perturbation, quad: &GaussHermite) -> Result<Self> {
        let mean = |a: f64| -> f64 {
            // substitute x = u - a: e^{-ψ(x)} ∝ e^{-u²/2} e^{-δψ(u-a)}
            let mut i0 = 0.0;
            let mut i1 = 0.0;
            for (&u, &w) in quad.nodes.iter().zip(&quad.weights) {
                let f = w * (-perturbation.eval(u - a)).exp();
                i0 += f;
                i1 += f * u;
            }
            i1 / i0 - a
        };

        let mut half_width = 2.0 + 4.0 * perturbation.sup();
        let (mut lo, mut hi) = (-half_width, half_width);
        let mut tries = 0;
        while !(mean(lo) > 0.0 && mean(hi) < 0.0) {
            half_width *= 2.0;
            lo = -half_width;
            hi = half_width;
            tries += 1;
            if tries > 8 {
                return Err(CoreError::RootFind(
                    "tilt bracket expansion exhausted".into(),
                ));
            }
        }
        let mut a = 0.5 * (lo + hi);
        for _ in 0..200 {
            let m = mean(a);
            if m.abs() < 1e-14 {
                break;
            }
            if m > 0.0 {
                lo = a;
            } else {
                hi = a;
            }
            a = 0.5 * (lo + hi);
            if hi - lo < 1e-15 * (1.0 + a.abs()) {
                break;
            }
        }
        if mean(a).abs() > 1e-10 {
            return Err(CoreError::RootFind(format!(
                "tilt bisection left residual mean {:.3e}",
                mean(a)
            )));
        }
        Ok(SingleSitePotential {
            tilt: a,
            perturbation,
        })
    }

    #[inline]
    pub fn tilt(&self) -> f64 {
        self.tilt
    }

    #[inline]
    pub fn perturbation(&self) -> Perturbation {
        self.perturbation
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.perturbation, Perturbation::None) && self.tilt == 0.0
    }

    #[inline]
    pub fn psi(&self, x: f64) -> f64 {
        0.5 * x * x + self.tilt * x + self.perturbation.eval(x)
    }

    #[inline]
    pub fn psi_prime(&self, x: f64) -> f64 {
        x + self.tilt + self.perturbation.deriv(x)
    }

    #[inline]
    pub fn psi_second(&self, x: f64) -> f64 {
        1.0 + self.perturbation.second(x)
    }

    pub fn eval(&self, x: f64, order: DerivOrder) -> f64 {
        match order {
            DerivOrder::Value => self.psi(x),
            DerivOrder::First => self.psi_prime(x),
            DerivOrder::Second => self.psi_second(x),
        }
    }

    /// Lipschitz constant of `ψ'`: `1 + ‖δψ''‖_∞`. Controls the stiffness of
    /// the drift beyond the second-difference operator itself.
    pub fn grad_lipschitz(&self) -> f64 {
        1.0 + self.perturbation.sup_second()
    }
}
