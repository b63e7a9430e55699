//! Scenario runs: each produces a report plus named CSV/SVG artifacts, and
//! [`write_outputs`] stores them next to a manifest.

mod dual_loop;
mod identify;
mod oracle_check;
pub mod scenario;
mod tools;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use dual_loop::{run_dual_loop, DualLoopSim, TaxelLayout};
pub use identify::{record_tracks, run_identify, IdentificationSim};
pub use oracle_check::run_oracle_check;
pub use scenario::Scenario;
pub use tools::{run_kernel, run_passivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Below,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            threshold,
            comparison: Comparison::Below,
            passed: value < threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            threshold,
            comparison: Comparison::AtLeast,
            passed: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub kind: String,
    pub values: BTreeMap<String, f64>,
    pub flags: Vec<String>,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn new(scenario: &str, kind: &str) -> Self {
        RunReport {
            scenario: scenario.to_string(),
            kind: kind.to_string(),
            values: BTreeMap::new(),
            flags: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn set(&mut self, key: &str, v: f64) {
        self.values.insert(key.to_string(), v);
    }

    pub fn flag(&mut self, text: &str) {
        self.flags.push(text.to_string());
    }

    pub fn has_flag(&self, text: &str) -> bool {
        self.flags.iter().any(|f| f == text)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub file_name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.file_name == name)
    }
}

pub(crate) fn csv_artifact(name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Artifact> {
    let mut bytes = Vec::new();
    write(&mut bytes)?;
    Ok(Artifact { file_name: name.to_string(), bytes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub kind: String,
    pub config_sha256: String,
    pub version: String,
    pub seed: u64,
    pub thresholds: BTreeMap<String, f64>,
    pub verdicts: BTreeMap<String, bool>,
    pub passed: bool,
    pub artifacts: Vec<String>,
}

pub fn config_hash(config_text: &str) -> String {
    hex::encode(Sha256::digest(config_text.as_bytes()))
}

impl Manifest {
    pub fn new(output: &RunOutput, config_text: &str, seed: u64) -> Self {
        let r = &output.report;
        Manifest {
            scenario: r.scenario.clone(),
            kind: r.kind.clone(),
            config_sha256: config_hash(config_text),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            thresholds: r.checks.iter().map(|c| (c.name.clone(), c.threshold)).collect(),
            verdicts: r.checks.iter().map(|c| (c.name.clone(), c.passed)).collect(),
            passed: r.passed(),
            artifacts: output.artifacts.iter().map(|a| a.file_name.clone()).collect(),
        }
    }
}

/// Writes every artifact, `report.json` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, output: &RunOutput, config_text: &str, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for a in &output.artifacts {
        put(&a.file_name, &a.bytes)?;
    }
    put("report.json", serde_json::to_string_pretty(&output.report)?.as_bytes())?;
    put("manifest.json", serde_json::to_string_pretty(&Manifest::new(output, config_text, seed))?.as_bytes())?;
    Ok(written)
}

/// Least-squares slope of `ln y` against `t` over samples with `t ≥ t_min`.
pub fn log_slope(samples: &[(f64, f64)], t_min: f64) -> f64 {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(t, y)| *t >= t_min && *y > 0.0 && y.is_finite())
        .map(|(t, y)| (*t, y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slope_of_exponential() {
        let s: Vec<_> = (0..50).map(|k| (k as f64 * 0.1, 3.0 * (-2.5 * k as f64 * 0.1).exp())).collect();
        assert_relative_eq!(log_slope(&s, 0.0), -2.5, epsilon = 1e-12);
        assert!(log_slope(&s[..1], 0.0).is_nan());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn checks_and_outputs() {
        let mut r = RunReport::new("s", "k");
        r.checks.push(Check::below("err", 0.5, 1.0));
        r.checks.push(Check::at_least("pe", 0.5, 1.0));
        assert!(!r.passed());
        let out = RunOutput {
            report: r,
            artifacts: vec![Artifact { file_name: "a.csv".into(), bytes: b"t\n1\n".to_vec() }],
        };
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(dir.path(), &out, "name = \"s\"", 3).unwrap();
        assert_eq!(files.len(), 3);
        let m: Manifest = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert!(!m.passed);
        assert!(m.verdicts["err"]);
        assert_eq!(m.thresholds["pe"], 1.0);
    }
}
