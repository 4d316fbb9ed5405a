//! Conformal extremal Hermitian metrics on discretized complex tori.
//!
//! Fields live on a periodic grid over `C^n / (Z^n + i Z^n)` and are
//! differentiated spectrally. The main entry points are
//! [`extremal::extremal_factor`], which produces the n-conformal extremal
//! metric of a conformal class, and the [`calabi`] module, which evaluates the
//! p-Calabi functional and its variations.

pub mod calabi;
pub mod error;
pub mod extremal;
pub mod gauduchon;
pub mod geometry;
pub mod grid;
pub mod operators;
pub mod scenario;
pub mod study;

pub use error::{Error, Result};
pub use extremal::{extremal_factor, CurvatureSign, ExtremalResult};
pub use gauduchon::{gauduchon_factor, GauduchonResult};
pub use geometry::{ConformalMetric, HermitianMetricField};
pub use grid::{ComplexField, GridSpec, ScalarField};
pub use operators::{KrylovConfig, SolveReport};
pub use scenario::{MetricSpec, RunReport, Scenario, Task, Tolerances};
