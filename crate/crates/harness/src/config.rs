//! Experiment configuration: TOML file schema, per-kind defaults, and
//! validation of the size ladders.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use kawasaki_core::quad::GaussHermite;
use kawasaki_core::{MultiscaleGrid, Perturbation, SingleSitePotential};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OperatorSuite,
    MicroMeso,
    MesoMacro,
    FullLimit,
    FreeEnergy,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::OperatorSuite => "operator-suite",
            ExperimentKind::MicroMeso => "micro-meso",
            ExperimentKind::MesoMacro => "meso-macro",
            ExperimentKind::FullLimit => "full-limit",
            ExperimentKind::FreeEnergy => "free-energy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum PotentialSpec {
    Gaussian,
    Cosine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Gaussian
    }
}

impl PotentialSpec {
    pub fn build(&self, quad: &GaussHermite) -> Result<SingleSitePotential> {
        match *self {
            PotentialSpec::Gaussian => Ok(SingleSitePotential::gaussian()),
            PotentialSpec::Cosine {
                amplitude,
                frequency,
                phase,
            } => Ok(SingleSitePotential::normalize_tilt(
                Perturbation::Cosine {
                    amplitude,
                    frequency,
                    phase,
                },
                quad,
            )?),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PotentialSpec::Gaussian => "gaussian".into(),
            PotentialSpec::Cosine {
                amplitude,
                frequency,
                phase,
            } => format!("cosine(amplitude={amplitude},frequency={frequency},phase={phase})"),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, PotentialSpec::Gaussian)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitProfile {
    Zero,
    #[default]
    Cos1,
    Cos2,
    Mixed,
}

impl InitProfile {
    pub fn eval(&self, amplitude: f64, theta: f64) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        match self {
            InitProfile::Zero => 0.0,
            InitProfile::Cos1 => amplitude * (two_pi * theta).cos(),
            InitProfile::Cos2 => amplitude * (2.0 * two_pi * theta).cos(),
            InitProfile::Mixed => {
                amplitude * ((two_pi * theta).cos() + 0.5 * (2.0 * two_pi * theta).sin())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftModeSpec {
    #[default]
    GaussianExact,
    Mcmc,
    SurrogatePhi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaInit {
    /// `η(0) = Pζ(0)`, the choice the limit theorems are stated for.
    #[default]
    Projected,
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub ladder: Vec<LadderEntry>,
    /// Macroscopic horizon `T`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    /// `dt = stability_factor / (4N²Λ_ψ)` for the lattice SDE.
    #[serde(default = "default_stability")]
    pub stability_factor: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default)]
    pub drift_mode: DriftModeSpec,
    #[serde(default)]
    pub init_profile: InitProfile,
    #[serde(default = "default_amplitude")]
    pub init_amplitude: f64,
    #[serde(default)]
    pub eta_init: EtaInit,
    /// Macro grids are the smallest multiple of the relevant lattice size
    /// at least this large.
    #[serde(default = "default_grid_min")]
    pub macro_grid_min: usize,
    #[serde(default)]
    pub outdir: Option<PathBuf>,
}

fn default_seed() -> u64 {
    7
}
fn default_horizon() -> f64 {
    0.02
}
fn default_realizations() -> usize {
    256
}
fn default_stability() -> f64 {
    0.5
}
fn default_snapshots() -> usize {
    20
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_grid_min() -> usize {
    256
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        let ladder = match kind {
            ExperimentKind::MicroMeso => vec![
                LadderEntry { n: 64, m: 4 },
                LadderEntry { n: 128, m: 4 },
                LadderEntry { n: 256, m: 4 },
            ],
            ExperimentKind::MesoMacro => vec![
                LadderEntry { n: 64, m: 4 },
                LadderEntry { n: 216, m: 6 },
                LadderEntry { n: 512, m: 8 },
            ],
            ExperimentKind::FullLimit => vec![
                LadderEntry { n: 64, m: 4 },
                LadderEntry { n: 125, m: 5 },
                LadderEntry { n: 216, m: 6 },
            ],
            _ => Vec::new(),
        };
        ExperimentConfig {
            kind,
            seed: default_seed(),
            potential: PotentialSpec::Gaussian,
            ladder,
            horizon: match kind {
                ExperimentKind::MesoMacro => 0.05,
                _ => default_horizon(),
            },
            realizations: match kind {
                ExperimentKind::FullLimit => 160,
                _ => default_realizations(),
            },
            stability_factor: default_stability(),
            snapshots: default_snapshots(),
            drift_mode: DriftModeSpec::GaussianExact,
            init_profile: match kind {
                ExperimentKind::MicroMeso => InitProfile::Zero,
                _ => InitProfile::Cos1,
            },
            init_amplitude: default_amplitude(),
            eta_init: EtaInit::Projected,
            macro_grid_min: default_grid_min(),
            outdir: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("cannot parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(HarnessError::Config("horizon must be positive".into()));
        }
        if self.snapshots < 2 {
            return Err(HarnessError::Config("need at least two snapshots".into()));
        }
        if !(self.stability_factor > 0.0 && self.stability_factor <= 1.0) {
            return Err(HarnessError::Config(
                "stability_factor must lie in (0, 1]".into(),
            ));
        }
        for e in &self.ladder {
            let grid = MultiscaleGrid::new(e.n, e.m)
                .map_err(|err| HarnessError::Config(format!("ladder entry {e:?}: {err}")))?;
            if self.kind == ExperimentKind::FullLimit && grid.k() != e.m * e.m {
                return Err(HarnessError::Config(format!(
                    "full-limit ladder needs K = M² (N = M³); entry {e:?} has K = {}",
                    grid.k()
                )));
            }
        }
        match self.kind {
            ExperimentKind::MicroMeso | ExperimentKind::MesoMacro | ExperimentKind::FullLimit => {
                if self.ladder.len() < 3 {
                    return Err(HarnessError::Config(
                        "rate experiments need a ladder of at least 3 sizes".into(),
                    ));
                }
            }
            _ => {}
        }
        if matches!(self.drift_mode, DriftModeSpec::GaussianExact) && !self.potential.is_gaussian()
        {
            return Err(HarnessError::Config(
                "gaussian-exact drift requires the gaussian potential; choose mcmc or surrogate-phi"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Canonical serialization hashed into every report.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
