//! Machine-readable outputs: `report.json`, `errors.csv`, `constants.csv`,
//! `free_energy.csv` and `timings.csv`.
//!
//! Timings live outside `report.json` on purpose: the report must be
//! bit-identical across reruns with the same config and seed.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::ratefit::RateFit;
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
    /// `"<="`, `">="` or `"in"`; how `measured` relates to `threshold`.
    pub comparison: String,
}

impl CriterionResult {
    pub fn le(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        CriterionResult {
            name: name.into(),
            pass: measured <= threshold,
            measured,
            threshold,
            comparison: "<=".into(),
        }
    }

    pub fn ge(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        CriterionResult {
            name: name.into(),
            pass: measured >= threshold,
            measured,
            threshold,
            comparison: ">=".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeResult {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Primary error for the rate fit (sup over snapshot times).
    pub sup_error: f64,
    pub stderr: f64,
    /// Secondary per-size scalars (time integrals, alternate metrics, ...).
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedFit {
    pub name: String,
    pub fit: RateFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub potential: String,
    pub seed: u64,
    pub sizes: Vec<SizeResult>,
    pub fits: Vec<NamedFit>,
    pub criteria: Vec<CriterionResult>,
    pub pass: bool,
}

impl RateReport {
    pub fn new(experiment: &str, config_toml: &str, potential: String, seed: u64) -> Self {
        RateReport {
            experiment: experiment.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash(config_toml),
            potential,
            seed,
            sizes: Vec::new(),
            fits: Vec::new(),
            criteria: Vec::new(),
            pass: true,
        }
    }

    pub fn push_criterion(&mut self, c: CriterionResult) {
        self.pass &= c.pass;
        self.criteria.push(c);
    }

    pub fn finalize(&mut self) {
        self.pass = self.criteria.iter().all(|c| c.pass);
    }
}

pub fn config_hash(config_toml: &str) -> String {
    let mut h = Sha256::new();
    h.update(config_toml.as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_report(dir: &Path, report: &RateReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut file = std::fs::File::create(dir.join("report.json"))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

/// `errors.csv`: one row per (size, snapshot time).
pub fn write_errors_csv(dir: &Path, rows: &[(usize, f64, f64, f64)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::from("size,t,error,stderr\n");
    for (size, t, err, se) in rows {
        out.push_str(&format!("{size},{t},{err},{se}\n"));
    }
    std::fs::write(dir.join("errors.csv"), out)?;
    Ok(())
}

/// `constants.csv`: measured operator constants per size.
pub fn write_constants_csv(dir: &Path, rows: &[(String, usize, usize, f64)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::from("name,n,m,value\n");
    for (name, n, m, v) in rows {
        out.push_str(&format!("{name},{n},{m},{v}\n"));
    }
    std::fs::write(dir.join("constants.csv"), out)?;
    Ok(())
}

pub fn write_free_energy_csv(
    dir: &Path,
    rows: impl Iterator<Item = (f64, f64, f64, f64)>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::from("m,phi,phi_prime,phi_double_prime\n");
    for (m, p, pp, ppp) in rows {
        out.push_str(&format!("{m},{p},{pp},{ppp}\n"));
    }
    std::fs::write(dir.join("free_energy.csv"), out)?;
    Ok(())
}

/// Wall-clock per stage; intentionally not part of `report.json`.
pub fn write_timings_csv(dir: &Path, rows: &[(String, f64)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::from("stage,seconds\n");
    for (name, secs) in rows {
        out.push_str(&format!("{name},{secs:.3}\n"));
    }
    std::fs::write(dir.join("timings.csv"), out)?;
    Ok(())
}
