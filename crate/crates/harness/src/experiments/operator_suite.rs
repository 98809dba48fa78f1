//! The operator battery: exact spline algebra, defect scaling, the bounded
//! composition floor, norm equivalences, the two Poincaré-type constants,
//! inverse Sobolev constants, and the fiber gradient identity on a tiny
//! instance. Failures become report entries, not panics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use kawasaki_core::meso::{check_gradient_identity, TestFunction};
use kawasaki_core::norms::{self, AbarSign};
use kawasaki_core::operators::{apply_a, gram_closed_form, gram_exact, OperatorCache};
use kawasaki_core::piecewise::PiecewisePoly;
use kawasaki_core::potential::Perturbation;
use kawasaki_core::quad::GaussHermite;
use kawasaki_core::spline::bspline_eval;
use kawasaki_core::{MultiscaleGrid, SingleSitePotential, SpinConfiguration, SplineField};

use super::{ExperimentOutput, Stopwatch};
use crate::config::ExperimentConfig;
use crate::ratefit::{fit_rate, RatePoint};
use crate::report::{CriterionResult, NamedFit, RateReport};
use crate::{stream_seed, Result};

fn random_config(n: usize, rng: &mut ChaCha12Rng) -> SpinConfiguration {
    SpinConfiguration::new((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
}

pub fn run_operator_suite(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut watch = Stopwatch::new();
    let mut report = RateReport::new(
        "operator-suite",
        &config.canonical_toml(),
        config.potential.label(),
        config.seed,
    );
    let mut constants: Vec<(String, usize, usize, f64)> = Vec::new();

    // exact spline algebra
    {
        let g = gram_closed_form(8)?;
        report.push_criterion(CriterionResult::le(
            "gram_diagonal_matches_11_over_20M",
            (g[(0, 0)] - 11.0 / 160.0).abs(),
            1e-12,
        ));
        report.push_criterion(CriterionResult::le(
            "gram_closed_vs_exact_integration",
            (&g - gram_exact(8)).abs().max(),
            1e-12,
        ));
        let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(config.seed, 1));
        let mut worst: f64 = 0.0;
        for m in [5usize, 8, 16] {
            for _ in 0..1000 {
                let th: f64 = rng.random();
                let s: f64 = (0..m).map(|j| bspline_eval(m, j, th)).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        report.push_criterion(CriterionResult::le("partition_of_unity", worst, 1e-12));

        // closed-form A∘NPᵗ against the composition
        let mut worst_rel: f64 = 0.0;
        for (n, m) in [(64usize, 8usize), (64, 4), (256, 8)] {
            let cache = OperatorCache::assemble(MultiscaleGrid::new(n, m)?)?;
            for _ in 0..20 {
                let y = SplineField::random(m, &mut rng);
                let closed = cache.apply_anpt(&y);
                let composed = apply_a(cache.grid(), &cache.lift_npt(&y));
                let scale = composed
                    .values()
                    .iter()
                    .map(|v| v.abs())
                    .fold(0.0, f64::max)
                    .max(1e-30);
                for (a, b) in closed.values().iter().zip(composed.values()) {
                    worst_rel = worst_rel.max((a - b).abs() / scale);
                }
            }
        }
        report.push_criterion(CriterionResult::le(
            "anpt_closed_form_vs_composition_rel",
            worst_rel,
            1e-9,
        ));

        // adjoint pair
        let cache = OperatorCache::assemble(MultiscaleGrid::new(64, 8)?)?;
        let mut worst_adj: f64 = 0.0;
        for _ in 0..50 {
            let x = random_config(64, &mut rng);
            let y = SplineField::random(8, &mut rng);
            let lhs = cache.l2_inner(&cache.project_config(&x), &y);
            let lift = cache.lift_npt(&y);
            let rhs = x
                .values()
                .iter()
                .zip(lift.values())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / 64.0;
            worst_adj = worst_adj.max((lhs - rhs).abs());
        }
        report.push_criterion(CriterionResult::le("adjoint_pair_identity", worst_adj, 1e-10));
        watch.lap("spline_algebra");
    }

    // defect scaling at M = 8
    {
        let mut pts = Vec::new();
        for k in [8usize, 16, 32, 64] {
            let cache = OperatorCache::assemble(MultiscaleGrid::new(8 * k, 8)?)?;
            constants.push(("pnpt_defect".into(), 8 * k, 8, cache.defect()));
            pts.push(RatePoint {
                size: k as f64,
                error: cache.defect(),
                stderr: 0.0,
            });
        }
        let fit = fit_rate(&pts)?;
        report.fits.push(NamedFit {
            name: "defect_vs_k".into(),
            fit,
        });
        report.push_criterion(CriterionResult::le(
            "defect_slope_within_minus2_pm_0.3",
            (fit.slope + 2.0).abs(),
            0.3,
        ));
        let ratio = pts[2].error / pts[3].error;
        report.push_criterion(CriterionResult::le(
            "defect_k32_over_k64_below_5",
            ratio,
            5.0,
        ));
        report.push_criterion(CriterionResult::ge(
            "defect_k32_over_k64_above_3",
            ratio,
            3.0,
        ));
        watch.lap("defect_scaling");
    }

    // bounded composition floor and norm equivalences
    {
        let mut sigma_min_all: f64 = f64::MAX;
        let mut ratio_lo: f64 = f64::MAX;
        let mut ratio_hi: f64 = f64::MIN;
        let mut h1_width_shrinks = true;
        let mut hneg_width_growth: f64 = 0.0;
        for m in [4usize, 8, 16] {
            let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(config.seed, 100 + m as u64));
            let ys: Vec<SplineField> = (0..100).map(|_| SplineField::random(m, &mut rng)).collect();
            let mut widths_h1 = Vec::new();
            let mut widths_hneg = Vec::new();
            for k in [16usize, 32, 64] {
                let n = k * m;
                let cache = OperatorCache::assemble(MultiscaleGrid::new(n, m)?)?;
                let mut sig: f64 = f64::MAX;
                let mut r1_min: f64 = f64::MAX;
                let mut r1_max: f64 = f64::MIN;
                let mut r2_min: f64 = f64::MAX;
                let mut r2_max: f64 = f64::MIN;
                for y in &ys {
                    let img = cache.apply_anpt_abar_inv(y)?;
                    sig = sig.min(norms::l2_norm_spline(y) / norms::l2_norm_config(&img));
                    let r1 = norms::abar_norm(&cache, y, AbarSign::Minus)?
                        / norms::hneg1_norm_spline(y)?;
                    let r2 = norms::abar_norm(&cache, y, AbarSign::Plus)? / norms::h1_seminorm(y);
                    r1_min = r1_min.min(r1);
                    r1_max = r1_max.max(r1);
                    r2_min = r2_min.min(r2);
                    r2_max = r2_max.max(r2);
                }
                sigma_min_all = sigma_min_all.min(sig);
                ratio_lo = ratio_lo.min(r1_min.min(r2_min));
                ratio_hi = ratio_hi.max(r1_max.max(r2_max));
                widths_h1.push(r2_max - r2_min);
                widths_hneg.push(r1_max - r1_min);
                constants.push(("sigma_floor".into(), n, m, sig));
                constants.push(("abar_inv_vs_hneg1_lo".into(), n, m, r1_min));
                constants.push(("abar_inv_vs_hneg1_hi".into(), n, m, r1_max));
                constants.push(("abar_vs_h1_lo".into(), n, m, r2_min));
                constants.push(("abar_vs_h1_hi".into(), n, m, r2_max));
            }
            h1_width_shrinks &= widths_h1[2] < widths_h1[0];
            // the H⁻¹-side interval converges to the Galerkin gap instead of
            // shrinking to zero; require stabilization, not decrease
            hneg_width_growth = hneg_width_growth.max(widths_hneg[2] - widths_hneg[0]);
        }
        report.push_criterion(CriterionResult::ge(
            "sigma_floor_all_sizes",
            sigma_min_all,
            0.1,
        ));
        report.push_criterion(CriterionResult::ge(
            "norm_equivalence_ratio_lower",
            ratio_lo,
            1.0 / 3.0,
        ));
        report.push_criterion(CriterionResult::le(
            "norm_equivalence_ratio_upper",
            ratio_hi,
            3.0,
        ));
        report.push_criterion(CriterionResult::ge(
            "abar_vs_h1_width_shrinks_with_k",
            if h1_width_shrinks { 1.0 } else { 0.0 },
            1.0,
        ));
        report.push_criterion(CriterionResult::le(
            "abar_inv_vs_hneg1_width_stable",
            hneg_width_growth,
            2e-3,
        ));
        watch.lap("sigma_and_equivalences");
    }

    // Poincaré pair
    {
        let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(config.seed, 2));
        let mut sharp_max: f64 = 0.0;
        for n in [64usize, 128, 256, 512, 1024] {
            let nf = n as f64;
            let lam_min = 4.0 * nf * nf * (std::f64::consts::PI / nf).sin().powi(2);
            let sharp = 1.0 / lam_min;
            sharp_max = sharp_max.max(sharp);
            constants.push(("poincare_sharp".into(), n, 0, sharp));
        }
        report.push_criterion(CriterionResult::le(
            "discrete_poincare_bounded",
            sharp_max,
            0.03,
        ));

        let mut gamma_max: f64 = 0.0;
        for (n, m) in [(64usize, 4usize), (128, 8), (256, 8), (512, 16)] {
            let cache = OperatorCache::assemble(MultiscaleGrid::new(n, m)?)?;
            let mut gamma: f64 = 0.0;
            for _ in 0..1000 {
                let x = random_config(n, &mut rng);
                let split = cache.fiber_decompose(&x)?;
                let par_sq: f64 = split.parallel.values().iter().map(|v| v * v).sum();
                gamma = gamma.max((m * m) as f64 * par_sq / norms::dirichlet_form(&x));
            }
            constants.push(("fiber_gamma".into(), n, m, gamma));
            gamma_max = gamma_max.max(gamma);
        }
        report.push_criterion(CriterionResult::le("fiber_gamma_bounded", gamma_max, 10.0));
        watch.lap("poincare");
    }

    // inverse Sobolev constants
    {
        let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(config.seed, 3));
        let mut c_all: f64 = 0.0;
        for m in [4usize, 8, 16, 32] {
            let mut c_max: f64 = 0.0;
            for _ in 0..100 {
                let y = SplineField::random(m, &mut rng);
                c_max = c_max
                    .max(norms::h1_seminorm(&y) / (m as f64 * norms::l2_norm_spline(&y)));
            }
            constants.push(("inverse_sobolev_c".into(), 0, m, c_max));
            c_all = c_all.max(c_max);
        }
        report.push_criterion(CriterionResult::le("inverse_sobolev_bounded", c_all, 4.0));
        watch.lap("inverse_sobolev");
    }

    // projection residual orthogonality on a mixed mesh
    {
        let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(config.seed, 4));
        let cache = OperatorCache::assemble(MultiscaleGrid::new(64, 8)?)?;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x = random_config(64, &mut rng);
            let px = cache.project_config(&x);
            let diff = PiecewisePoly::from_config(&x).sub(&PiecewisePoly::from_spline(&px))?;
            for j in 0..8 {
                let mut e = vec![0.0; 8];
                e[j] = 1.0;
                let bj = PiecewisePoly::from_spline_coeffs(8, &e);
                worst = worst.max(diff.inner(&bj)?.abs());
            }
        }
        report.push_criterion(CriterionResult::le(
            "projection_residual_orthogonal",
            worst,
            1e-10,
        ));
        watch.lap("projection");
    }

    // gradient identity at the tiny instance (N = 8, M = 2)
    {
        let grid = MultiscaleGrid::new(8, 2)?;
        let cache = OperatorCache::assemble(grid)?;
        let quad = GaussHermite::new(200);
        let y = SplineField::from_bspline_coeffs(vec![0.3, -0.3]);
        let vlin: Vec<f64> = {
            let raw: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| v / norm).collect()
        };
        let functions = [
            ("constant", TestFunction::Constant),
            ("linear", TestFunction::Linear(vlin)),
            ("squared_coordinate", TestFunction::SquaredCoordinate(0)),
        ];
        let pots = [
            ("gaussian", SingleSitePotential::gaussian(), 8usize),
            (
                "cosine",
                SingleSitePotential::normalize_tilt(
                    Perturbation::Cosine {
                        amplitude: 0.5,
                        frequency: 1.0,
                        phase: 1.0,
                    },
                    &quad,
                )?,
                14,
            ),
        ];
        for (pname, pot, nodes) in &pots {
            for (fname, f) in &functions {
                let resid = check_gradient_identity(&cache, pot, f, &y, *nodes)?;
                constants.push((format!("gradient_identity_{pname}_{fname}"), 8, 2, resid));
                report.push_criterion(CriterionResult::le(
                    format!("gradient_identity_{pname}_{fname}"),
                    resid,
                    1e-6,
                ));
            }
        }
        watch.lap("gradient_identity");
    }

    report.finalize();
    Ok(ExperimentOutput {
        report,
        errors_rows: Vec::new(),
        constants_rows: constants,
        free_energy_rows: None,
        timings: watch.into_rows(),
    })
}
