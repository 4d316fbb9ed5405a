//! Declarative scenarios: a grid, a metric family given by trigonometric
//! polynomials, a task, and tolerance overrides. Scenario files are TOML.

mod io;
mod report;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::HermitianMetricField;
use crate::grid::{random_band_limited, ComplexField, GridSpec, ScalarField};

pub use io::{decode_field, encode_field, read_field, read_metric, write_csv, write_field, write_metric, HEADER_LEN};
pub use report::{Check, RunReport, SweepPoint};

/// Smallest eigenvalue a realized scenario metric may have anywhere.
pub const POSITIVITY_MARGIN: f64 = 0.1;

/// `amplitude * cos(2 pi k . x + phase)` with `k = modes` over the real axes
/// `(x1, y1, ..., xn, yn)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub modes: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// A perturbation of one metric entry. `row` and `col` are 1-based; the
/// conjugate entry is filled in automatically and diagonal entries use only
/// the real part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryPerturbation {
    pub row: usize,
    pub col: usize,
    #[serde(default)]
    pub real: Vec<TrigTerm>,
    #[serde(default)]
    pub imag: Vec<TrigTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Flat,
    /// `e^phi` times the identity.
    ConformalFlat {
        phi: Vec<TrigTerm>,
    },
    /// Identity plus Hermitian trigonometric perturbations.
    PerturbedHermitian {
        entries: Vec<EntryPerturbation>,
    },
    /// A metric bundle written by [`write_metric`].
    ExplicitFile {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Solve,
    Verify,
    Calabi {
        p: Vec<f64>,
        #[serde(default = "default_times")]
        t: Vec<f64>,
    },
    Sweep {
        points: Vec<usize>,
    },
}

fn default_times() -> Vec<f64> {
    vec![0.0, 0.1]
}

/// The tolerance ladder: exact-by-construction identities, spectrally
/// accurate identities, and end-to-end solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub exact: f64,
    pub identity: f64,
    pub gauduchon: f64,
    /// Integral identities and the Gauduchon energy identity.
    pub integral: f64,
    pub solve: f64,
    pub variation: f64,
    pub krylov: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            exact: 1e-12,
            identity: 1e-8,
            gauduchon: 1e-8,
            integral: 1e-7,
            solve: 1e-6,
            variation: 1e-6,
            krylov: 1e-10,
        }
    }
}

impl Tolerances {
    /// Every check tolerance set to `tol`; the Krylov target is kept.
    pub fn uniform(&self, tol: f64) -> Self {
        Self {
            exact: tol,
            identity: tol,
            gauduchon: tol,
            integral: tol,
            solve: tol,
            variation: tol,
            krylov: self.krylov,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub points: usize,
    pub metric: MetricSpec,
    pub task: Task,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
}

const BUILTINS: &[(&str, &str)] = &[
    ("flat", include_str!("../../scenarios/flat.toml")),
    ("conformal_flat", include_str!("../../scenarios/conformal_flat.toml")),
    ("non_kahler", include_str!("../../scenarios/non_kahler.toml")),
    ("kahler", include_str!("../../scenarios/kahler.toml")),
    ("hermitian3", include_str!("../../scenarios/hermitian3.toml")),
];

impl Scenario {
    /// Parses TOML text. Relative metric file paths are resolved against
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut scenario: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let MetricSpec::ExplicitFile { path } = &mut scenario.metric {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml(text, Path::new(".")).expect("builtin scenario parses"))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTINS.iter().map(|(n, _)| *n)
    }

    pub fn builtins() -> Vec<Self> {
        Self::builtin_names().filter_map(Self::builtin).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    fn validate(&self) -> Result<()> {
        GridSpec::new(self.dim, self.points)?;
        match &self.task {
            Task::Sweep { points } => {
                if points.is_empty() || points.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("sweep points must be strictly ascending".into()));
                }
                for &p in points {
                    GridSpec::new(self.dim, p)?;
                }
            }
            Task::Calabi { p, .. } => {
                if let Some(bad) = p.iter().find(|&&v| v <= 1.0 || !v.is_finite()) {
                    return Err(Error::InvalidExponent(*bad));
                }
            }
            Task::Solve | Task::Verify => {}
        }
        let axes = 2 * self.dim;
        let check_terms = |terms: &[TrigTerm], what: &str| -> Result<()> {
            match terms.iter().find(|t| t.modes.len() != axes) {
                Some(t) => Err(Error::Config(format!("{what}: term has {} modes, expected {axes}", t.modes.len()))),
                None => Ok(()),
            }
        };
        match &self.metric {
            MetricSpec::ConformalFlat { phi } => check_terms(phi, "metric.phi")?,
            MetricSpec::PerturbedHermitian { entries } => {
                for e in entries {
                    let what = format!("metric.entries[{},{}]", e.row, e.col);
                    if e.row == 0 || e.col == 0 || e.row > self.dim || e.col > self.dim {
                        return Err(Error::Config(format!("{what}: index out of range 1..={}", self.dim)));
                    }
                    check_terms(&e.real, &what)?;
                    check_terms(&e.imag, &what)?;
                }
            }
            MetricSpec::Flat | MetricSpec::ExplicitFile { .. } => {}
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.dim, self.points).expect("validated at load")
    }

    /// The metric on the scenario's own grid.
    pub fn realize(&self) -> Result<HermitianMetricField> {
        self.metric.realize(self.grid())
    }

    /// Grid sizes for a refinement study: the task's list, or `8, 16, 32`.
    pub fn sweep_points(&self) -> Vec<usize> {
        match &self.task {
            Task::Sweep { points } => points.clone(),
            _ => vec![8, 16, 32],
        }
    }

    /// Exponents and parameters for a Calabi study: the task's lists, or
    /// `p = 2, n, 3.5` and `t = 0, 0.1`.
    pub fn calabi_parameters(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.task {
            Task::Calabi { p, t } => (p.clone(), t.clone()),
            _ => {
                let mut p = vec![2.0];
                if self.dim != 2 {
                    p.push(self.dim as f64);
                }
                p.push(3.5);
                (p, default_times())
            }
        }
    }
}

fn max_mode(terms: &[TrigTerm]) -> i64 {
    terms.iter().flat_map(|t| t.modes.iter().map(|m| m.abs())).max().unwrap_or(0)
}

fn check_aliasing(terms: &[TrigTerm], spec: GridSpec) -> Result<()> {
    let mode = max_mode(terms);
    if 2 * mode >= spec.points() as i64 {
        return Err(Error::AliasedMode { mode, points: spec.points() });
    }
    Ok(())
}

/// Samples a trigonometric polynomial on the grid.
pub fn trig_field(terms: &[TrigTerm], spec: GridSpec) -> Result<ScalarField> {
    check_aliasing(terms, spec)?;
    if let Some(t) = terms.iter().find(|t| t.modes.len() != spec.axes()) {
        return Err(Error::Config(format!("term has {} modes, expected {}", t.modes.len(), spec.axes())));
    }
    Ok(ScalarField::from_fn(spec, |x| {
        terms
            .iter()
            .map(|t| {
                let phase: f64 = t.modes.iter().zip(x).map(|(&k, &xa)| k as f64 * xa).sum();
                t.amplitude * (2.0 * PI * phase + t.phase).cos()
            })
            .sum()
    }))
}

fn with_margin(result: Result<HermitianMetricField>) -> Result<HermitianMetricField> {
    let g = result.map_err(|e| match e {
        Error::NotPositiveDefinite { index, coords } => {
            Error::LostPositivity { index, coords, margin: POSITIVITY_MARGIN }
        }
        other => other,
    })?;
    g.check_margin(POSITIVITY_MARGIN)?;
    Ok(g)
}

impl MetricSpec {
    pub fn realize(&self, spec: GridSpec) -> Result<HermitianMetricField> {
        let n = spec.dim();
        match self {
            MetricSpec::Flat => Ok(HermitianMetricField::flat(spec)),
            MetricSpec::ConformalFlat { phi } => {
                with_margin(HermitianMetricField::conformally_flat(&trig_field(phi, spec)?))
            }
            MetricSpec::PerturbedHermitian { entries } => {
                let mut re: Vec<ScalarField> =
                    (0..n * n).map(|k| ScalarField::constant(spec, if k / n == k % n { 1.0 } else { 0.0 })).collect();
                let mut im: Vec<ScalarField> = (0..n * n).map(|_| ScalarField::zeros(spec)).collect();
                for e in entries {
                    let (i, j) = (e.row - 1, e.col - 1);
                    if i >= n || j >= n {
                        return Err(Error::Config(format!("entry ({}, {}) outside dimension {n}", e.row, e.col)));
                    }
                    let pr = trig_field(&e.real, spec)?;
                    re[i * n + j] = &re[i * n + j] + &pr;
                    if i != j {
                        let pi = trig_field(&e.imag, spec)?;
                        re[j * n + i] = &re[j * n + i] + &pr;
                        im[i * n + j] = &im[i * n + j] + &pi;
                        im[j * n + i] = &im[j * n + i] - &pi;
                    } else {
                        check_aliasing(&e.imag, spec)?;
                    }
                }
                let fields = re.iter().zip(&im).map(|(r, i)| ComplexField::from_parts(r, i)).collect();
                with_margin(HermitianMetricField::new(spec, fields))
            }
            MetricSpec::ExplicitFile { path } => {
                let g = read_metric(path)?;
                if g.spec() != spec {
                    return Err(Error::Format(format!(
                        "{} holds an n = {}, N = {} metric, scenario expects n = {}, N = {}",
                        path.display(),
                        g.dim(),
                        g.spec().points(),
                        spec.dim(),
                        spec.points()
                    )));
                }
                with_margin(Ok(g))
            }
        }
    }
}

/// Identity plus a random band-limited Hermitian perturbation whose entries
/// have sup-norm `amplitude`. Used as a random test metric.
pub fn random_hermitian(spec: GridSpec, seed: u64, max_mode: usize, amplitude: f64) -> Result<HermitianMetricField> {
    let n = spec.dim();
    let mut entries: Vec<Option<ComplexField>> = vec![None; n * n];
    let mut next = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut draw = || {
        next = next.wrapping_add(1);
        random_band_limited(spec, next, max_mode, amplitude)
    };
    for i in 0..n {
        let d = draw()?.map(|v| v + 1.0);
        entries[i * n + i] = Some(d.to_complex());
        for j in i + 1..n {
            let off = ComplexField::from_parts(&draw()?, &draw()?);
            entries[j * n + i] = Some(off.conj());
            entries[i * n + j] = Some(off);
        }
    }
    let entries = entries.into_iter().map(|e| e.expect("every entry is drawn")).collect();
    HermitianMetricField::new(spec, entries)
}
