//! Multiscale toolkit for conservative spin-exchange dynamics on the 1-D
//! periodic lattice.
//!
//! Three layers of description are implemented, together with the exact
//! operator algebra connecting them:
//!
//! * **micro** — the conservative lattice SDE `dX = -A ∇H(X) dt + √(2A) dB`
//!   on mean-zero spin configurations, with Gibbs and fiber samplers;
//! * **meso** — the deterministic gradient flow `dη/dt = -Ā ∇H̄(η)` on the
//!   space of mean-zero C¹ quadratic splines with `M` pieces, where
//!   `Ā = P A NPᵗ` is the coarse-grained second-difference operator;
//! * **macro** — the nonlinear heat equation `∂_t ζ = ∂²_θ φ'(ζ)` on the
//!   torus, with `φ` the Legendre transform of the single-site free energy.
//!
//! The `operators` module assembles the projection `P`, the lift `NPᵗ`, and
//! `Ā` in closed form; `norms` computes L², H¹ and H⁻¹ norms of piecewise
//! polynomial fields exactly, so convergence measurements carry no quadrature
//! bias.

pub mod error;
pub mod grid;
pub mod lattice;
pub mod macroscale;
pub mod meso;
pub mod micro;
pub mod norms;
pub mod operators;
pub mod piecewise;
pub mod potential;
pub mod quad;
pub mod spline;

pub use error::CoreError;
pub use grid::MultiscaleGrid;
pub use lattice::SpinConfiguration;
pub use operators::OperatorCache;
pub use potential::{Perturbation, SingleSitePotential};
pub use spline::SplineField;
