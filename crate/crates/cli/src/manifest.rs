use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Deterministic inequality or identity; `value` is the worst slack.
    Exact,
    /// Monte Carlo or finite-size estimate compared with a band.
    Estimate,
    /// Fitted exponent compared with a band.
    Fit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    /// None when the quantity is undefined (e.g. a fit with no points).
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    pub instances: usize,
    /// Hard checks decide the exit status.
    pub hard: bool,
    pub pass: bool,
    pub detail: String,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl CheckResult {
    /// Passes when the worst slack is ≥ −tol.
    pub fn slack(name: &str, worst: f64, tol: f64, instances: usize, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            kind: CheckKind::Exact,
            value: finite(worst),
            tolerance: Some(tol),
            band: None,
            instances,
            hard: true,
            pass: worst >= -tol,
            detail: detail.into(),
        }
    }

    /// Passes when the worst ratio lhs/rhs is ≤ 1 + tol.
    pub fn ratio(name: &str, worst: f64, tol: f64, instances: usize, detail: impl Into<String>) -> Self {
        CheckResult { pass: worst <= 1.0 + tol, ..Self::slack(name, worst, tol, instances, detail) }
    }

    /// Hard pass/fail with a worst error against a tolerance: |err| ≤ tol.
    pub fn error(name: &str, worst: f64, tol: f64, instances: usize, detail: impl Into<String>) -> Self {
        CheckResult { pass: worst.abs() <= tol, ..Self::slack(name, worst, tol, instances, detail) }
    }

    /// Soft check of a value against a closed band.
    pub fn banded(name: &str, kind: CheckKind, value: f64, band: [f64; 2], instances: usize, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            kind,
            value: finite(value),
            tolerance: None,
            band: Some(band),
            instances,
            hard: false,
            pass: in_band(value, band),
            detail: detail.into(),
        }
    }

    pub fn hard(mut self) -> Self {
        self.hard = true;
        self
    }

    pub fn flagged(&self) -> bool {
        !self.pass
    }
}

pub fn in_band(value: f64, band: [f64; 2]) -> bool {
    value >= band[0] && value <= band[1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub tolerance_overrides: BTreeMap<String, f64>,
    pub results: Vec<CheckResult>,
    /// True iff every hard check passed.
    pub pass: bool,
}

impl Manifest {
    pub fn new(subcommand: &str, config_hash: String, seed: u64, overrides: Vec<(String, f64)>, results: Vec<CheckResult>) -> Self {
        let pass = results.iter().filter(|r| r.hard).all(|r| r.pass);
        Manifest {
            subcommand: subcommand.into(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            tolerance_overrides: overrides.into_iter().collect(),
            results,
            pass,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a manifest", path.display()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub subcommand: String,
    pub wall_seconds: f64,
    pub threads: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_ignores_soft_checks() {
        let results = vec![
            CheckResult::slack("a", 0.0, 1e-12, 1, ""),
            CheckResult::banded("b", CheckKind::Fit, -2.4, [-3.3, -2.7], 1, ""),
        ];
        assert!(results[0].pass && !results[1].pass);
        let m = Manifest::new("x", "h".into(), 1, vec![], results.clone());
        assert!(m.pass);
        let m = Manifest::new("x", "h".into(), 1, vec![], vec![results[1].clone().hard()]);
        assert!(!m.pass);
    }

    #[test]
    fn json_round_trip() {
        let m = Manifest::new(
            "verify",
            "abc".into(),
            3,
            vec![("solver".into(), 1e-9)],
            vec![CheckResult::ratio("r", 0.5, 1e-9, 4, "ok"), CheckResult::slack("nan", f64::NAN, 0.0, 0, "")],
        );
        let back: Manifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back.results[0], m.results[0]);
        assert_eq!(back.results[1].value, None);
        assert!(!back.pass);
    }
}
