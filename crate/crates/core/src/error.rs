use thiserror::Error;

use crate::operators::SolveReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    ShapeMismatch,

    #[error("non-finite value at grid index {index}")]
    NonFinite { index: usize },

    #[error("metric is not Hermitian at grid index {index} (asymmetry {asymmetry:e})")]
    NotHermitian { index: usize, asymmetry: f64 },

    #[error("metric is not positive-definite at grid point {coords:?} (index {index})")]
    NotPositiveDefinite { index: usize, coords: Vec<f64> },

    #[error("complex Laplacian produced imaginary residue {residue:e}")]
    ImaginaryResidue { residue: f64 },

    #[error("Krylov solver did not converge: relative residual {:e} after {} iterations", .0.relative_residual, .0.iterations)]
    NonConvergence(SolveReport),

    #[error("right-hand side is incompatible with the operator cokernel (weighted mean {mean:e}, norm {norm:e})")]
    IncompatibleRhs { mean: f64, norm: f64 },

    #[error("null vector changes sign (min {min:e}, max {max:e})")]
    NonPositiveKernel { min: f64, max: f64 },

    #[error("metric is not Gauduchon (defect {defect:e} exceeds {tolerance:e})")]
    NotGauduchon { defect: f64, tolerance: f64 },

    #[error("Euler-Lagrange residual {residual:e} exceeds {tolerance:e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("exponent p = {0} is not supported here (requires p >= 2)")]
    UnsupportedExponent(f64),

    #[error("exponent p = {0} must exceed 1")]
    InvalidExponent(f64),

    #[error("trigonometric mode {mode} aliases on a grid with N = {points}")]
    AliasedMode { mode: i64, points: usize },

    #[error("metric loses positivity margin {margin} at grid point {coords:?} (index {index})")]
    LostPositivity { index: usize, coords: Vec<f64>, margin: f64 },

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("scenario config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
