use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kawasaki_harness::config::{ExperimentConfig, ExperimentKind};
use kawasaki_harness::{experiments, HarnessError};

/// Multiscale Kawasaki toolkit: operator checks and convergence experiments.
#[derive(Parser)]
#[command(name = "kawasaki", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; defaults are built in per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default `out/<experiment>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Rayon worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact spline algebra, defect scaling, norm equivalences, Poincaré
    /// constants and the fiber gradient identity.
    Operators,
    /// Ensemble lattice dynamics against the spline flow.
    MicroMeso,
    /// Spline flow against the nonlinear heat equation.
    MesoMacro,
    /// Ensemble lattice dynamics against the nonlinear heat equation,
    /// ladder constrained to K = M².
    FullLimit,
    /// Build and export the Legendre-transformed free energy table.
    FreeEnergy,
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Operators => ExperimentKind::OperatorSuite,
            Command::MicroMeso => ExperimentKind::MicroMeso,
            Command::MesoMacro => ExperimentKind::MesoMacro,
            Command::FullLimit => ExperimentKind::FullLimit,
            Command::FreeEnergy => ExperimentKind::FreeEnergy,
        }
    }
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    let kind = cli.command.kind();
    let mut config = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_file(path)?;
            if cfg.kind != kind {
                return Err(HarnessError::Config(format!(
                    "config kind {} does not match subcommand {}",
                    cfg.kind.as_str(),
                    kind.as_str()
                )));
            }
            cfg
        }
        None => ExperimentConfig::default_for(kind),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.outdir = Some(out);
    }
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    }
    config.validate()?;

    let output = experiments::run(&config)?;
    let dir = config
        .outdir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(kind.as_str()));
    output.write_to(&dir)?;

    for c in &output.report.criteria {
        println!(
            "[{}] {}: measured {:.6e} {} {:.6e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.comparison,
            c.threshold
        );
    }
    for f in &output.report.fits {
        println!(
            "fit {}: slope {:.4} ± {:.4}, intercept {:.4}",
            f.name, f.fit.slope, f.fit.slope_stderr, f.fit.intercept
        );
    }
    println!(
        "{}: {} -> {}",
        kind.as_str(),
        if output.report.pass { "PASS" } else { "FAIL" },
        dir.display()
    );
    Ok(output.report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(HarnessError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
