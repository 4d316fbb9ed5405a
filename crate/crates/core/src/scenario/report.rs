//! JSON run reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::calabi::VariationReport;
use crate::error::{Error, Result};
use crate::operators::SolveReport;

/// One named quantity compared against its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// The identity or property being measured.
    pub identity: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= tolerance`; NaN never passes.
    pub fn at_most(name: &str, identity: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), identity: identity.into(), value, tolerance, passed: value <= tolerance }
    }

    /// Passes when `value >= tolerance`.
    pub fn at_least(name: &str, identity: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), identity: identity.into(), value, tolerance, passed: value >= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub points: usize,
    /// Distance to the reference modulo constants, in the sup norm.
    pub error: f64,
    pub poisson_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub scenario: Scenario,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub values: BTreeMap<String, f64>,
    pub solves: BTreeMap<String, SolveReport>,
    pub variations: Vec<VariationReport>,
    pub sweep: Vec<SweepPoint>,
}

impl RunReport {
    pub fn new(command: &str, scenario: &Scenario) -> Self {
        Self {
            command: command.into(),
            scenario: scenario.clone(),
            passed: true,
            checks: Vec::new(),
            values: BTreeMap::new(),
            solves: BTreeMap::new(),
            variations: Vec::new(),
            sweep: Vec::new(),
        }
    }

    pub fn check(&mut self, check: Check) {
        self.passed &= check.passed;
        self.checks.push(check);
    }

    pub fn value(&mut self, name: &str, v: f64) {
        self.values.insert(name.into(), v);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let s = &self.scenario;
        let _ = writeln!(out, "{} on {} (n = {}, N = {})", self.command, s.name, s.dim, s.points);
        for c in &self.checks {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            let _ = writeln!(
                out,
                "  [{mark}] {:<34} {:>12.3e}  (tol {:.1e})  {}",
                c.name, c.value, c.tolerance, c.identity
            );
        }
        if !self.values.is_empty() {
            let _ = writeln!(out, "  values:");
            for (k, v) in &self.values {
                let _ = writeln!(out, "    {k:<32} {v:>14.6e}");
            }
        }
        for (k, r) in &self.solves {
            let _ = writeln!(
                out,
                "  solve {k}: {} iterations, relative residual {:.3e}",
                r.iterations, r.relative_residual
            );
        }
        if !self.variations.is_empty() {
            let _ = writeln!(out, "  variations (p, t, formula, finite difference, relative error):");
            for v in &self.variations {
                let _ = writeln!(
                    out,
                    "    {:>4} {:>5} {:>16.9e} {:>16.9e} {:>10.2e}",
                    v.p, v.t, v.formula_value, v.fd_value, v.rel_error
                );
            }
        }
        if !self.sweep.is_empty() {
            let _ = writeln!(out, "  sweep (N, error):");
            for p in &self.sweep {
                let _ = writeln!(out, "    {:>4} {:>12.3e}", p.points, p.error);
            }
        }
        let _ = writeln!(out, "  {}", if self.passed { "all checks passed" } else { "some checks failed" });
        out
    }
}
