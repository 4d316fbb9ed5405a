//! Restarted GMRES with right preconditioning, and a deflated inverse
//! iteration for one-dimensional kernels.

use serde::{Deserialize, Serialize};

use super::LinearMap;
use crate::error::{Error, Result};
use crate::grid::{inner, integrate, random_band_limited, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialGuess {
    Zero,
    /// A random full-band field drawn from the given seed.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    /// Target relative residual.
    pub tol: f64,
    /// Iteration cap; `None` means `10 N^2`.
    pub max_iter: Option<usize>,
    /// GMRES restart length.
    pub restart: usize,
    pub initial: InitialGuess,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: None, restart: 40, initial: InitialGuess::Zero }
    }
}

impl KrylovConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    fn iteration_cap(&self, points: usize) -> usize {
        self.max_iter.unwrap_or(10 * points * points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub iterations: usize,
    pub restarts: usize,
    pub initial_residual: f64,
    pub relative_residual: f64,
    pub tolerance: f64,
    pub converged: bool,
}

/// Weighted mean above which a right-hand side is rejected against an
/// operator whose cokernel contains the constants.
const COMPATIBILITY_TOL: f64 = 1e-8;

/// A restart cycle must shrink the true residual at least this much.
const STAGNATION_RATIO: f64 = 0.9;

/// Solves `A x = b` with restarted, right-preconditioned GMRES in the
/// operator's weighted inner product.
///
/// With `kernel_projection` the returned solution has zero weighted mean
/// (meaningful when `A` annihilates constants).
pub fn krylov_solve(
    a: &dyn LinearMap,
    b: &ScalarField,
    cfg: &KrylovConfig,
    kernel_projection: bool,
) -> Result<(ScalarField, SolveReport)> {
    assert!(cfg.tol > 0.0, "Krylov tolerance must be positive");
    let spec = a.spec();
    let w = a.weight();
    let norm = |u: &ScalarField| inner(u, u, w).sqrt();
    let b_norm = norm(b);

    if a.constants_in_cokernel() {
        let volume = integrate(&ScalarField::constant(spec, 1.0), w);
        let mean = integrate(b, w) / volume;
        let rms = b_norm / volume.sqrt();
        if mean.abs() > COMPATIBILITY_TOL * rms {
            return Err(Error::IncompatibleRhs { mean, norm: rms });
        }
    }

    let mut report = SolveReport {
        method: format!("gmres({})", cfg.restart),
        iterations: 0,
        restarts: 0,
        initial_residual: 0.0,
        relative_residual: 0.0,
        tolerance: cfg.tol,
        converged: true,
    };
    if b_norm == 0.0 {
        return Ok((ScalarField::zeros(spec), report));
    }

    let mut x = match cfg.initial {
        InitialGuess::Zero => ScalarField::zeros(spec),
        InitialGuess::Random(seed) => random_band_limited(spec, seed, spec.points() / 2 - 1, 1.0)?,
    };
    let target = cfg.tol * b_norm;
    let cap = cfg.iteration_cap(spec.points());
    let m = cfg.restart.max(1);

    let mut r = b - &a.apply(&x)?;
    let mut beta = norm(&r);
    report.initial_residual = beta / b_norm;

    while beta > target {
        if report.iterations >= cap {
            report.converged = false;
            report.relative_residual = beta / b_norm;
            return Err(Error::NonConvergence(report));
        }
        let mut basis: Vec<ScalarField> = Vec::with_capacity(m + 1);
        basis.push(&r * (1.0 / beta));
        let mut hess: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut rhs = vec![0.0; m + 1];
        rhs[0] = beta;
        let mut steps = 0;

        for j in 0..m {
            if report.iterations >= cap {
                break;
            }
            report.iterations += 1;
            let z = a.precondition(&basis[j]);
            let mut v = a.apply(&z)?;
            let mut col = vec![0.0; j + 2];
            for (i, q) in basis.iter().enumerate() {
                let h = inner(&v, q, w);
                col[i] = h;
                v = v.zip_map(q, |x, y| x - h * y);
            }
            let h_next = norm(&v);
            col[j + 1] = h_next;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = col[j].hypot(col[j + 1]);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (col[j] / denom, col[j + 1] / denom) };
            col[j] = denom;
            col[j + 1] = 0.0;
            rhs[j + 1] = -s * rhs[j];
            rhs[j] *= c;
            cs.push(c);
            sn.push(s);
            hess.push(col);
            steps = j + 1;
            if rhs[j + 1].abs() <= target || h_next <= f64::EPSILON * beta {
                break;
            }
            basis.push(&v * (1.0 / h_next));
        }

        // back substitution on the rotated Hessenberg matrix
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut acc = rhs[i];
            for k in i + 1..steps {
                acc -= hess[k][i] * y[k];
            }
            y[i] = acc / hess[i][i];
        }
        let mut update = ScalarField::zeros(spec);
        for (yi, q) in y.iter().zip(&basis) {
            update = update.zip_map(q, |u, v| u + yi * v);
        }
        x = &x + &a.precondition(&update);
        r = b - &a.apply(&x)?;
        let new_beta = norm(&r);
        report.restarts += 1;
        if new_beta > STAGNATION_RATIO * beta && new_beta > target {
            report.converged = false;
            report.relative_residual = new_beta / b_norm;
            return Err(Error::NonConvergence(report));
        }
        beta = new_beta;
    }

    if kernel_projection {
        let volume = integrate(&ScalarField::constant(spec, 1.0), w);
        let mean = integrate(&x, w) / volume;
        x = x.map(|v| v - mean);
    }
    report.relative_residual = beta / b_norm;
    Ok((x, report))
}

/// Outer refinement steps allowed in [`null_vector`].
const MAX_REFINEMENTS: usize = 6;

/// Positive unit null vector of an operator with a one-dimensional kernel.
///
/// Starting from the constant field, each step solves `A d = -A v` with
/// [`krylov_solve`] and updates `v += d`. This is inverse iteration with zero
/// shift, deflated onto the operator range: the correction equation is
/// consistent because `A v` lies in the range. Iteration stops once
/// `|A v| <= tol |v|`. The result has unit weighted norm and positive mean.
pub fn null_vector(a: &dyn LinearMap, cfg: &KrylovConfig) -> Result<(ScalarField, SolveReport)> {
    let spec = a.spec();
    let w = a.weight();
    let norm = |u: &ScalarField| inner(u, u, w).sqrt();
    let mut v = ScalarField::constant(spec, 1.0);
    let mut report = SolveReport {
        method: format!("deflated inverse iteration / gmres({})", cfg.restart),
        iterations: 0,
        restarts: 0,
        initial_residual: 0.0,
        relative_residual: 0.0,
        tolerance: cfg.tol,
        converged: false,
    };
    let mut residual = a.apply(&v)?;
    report.initial_residual = norm(&residual) / norm(&v);
    for step in 0..=MAX_REFINEMENTS {
        let rel = norm(&residual) / norm(&v);
        report.relative_residual = rel;
        if rel <= cfg.tol {
            report.converged = true;
            break;
        }
        if step == MAX_REFINEMENTS {
            return Err(Error::NonConvergence(report));
        }
        let (delta, inner_report) = krylov_solve(a, &-&residual, cfg, false)?;
        report.iterations += inner_report.iterations;
        report.restarts += 1;
        v = &v + &delta;
        residual = a.apply(&v)?;
    }
    let mean = v.mean();
    let scale = norm(&v) * mean.signum();
    let v = v.map(|x| x / scale);
    let (min, max) = (v.min(), v.max());
    if min <= 0.0 {
        return Err(Error::NonPositiveKernel { min, max });
    }
    Ok((v, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HermitianMetricField;
    use crate::grid::GridSpec;
    use crate::operators::{ComplexLaplacian, ComplexLaplacianAdjoint};
    use std::f64::consts::PI;

    #[test]
    fn flat_poisson_recovers_cosine() {
        let g = HermitianMetricField::flat(GridSpec::new(2, 16).unwrap());
        let op = ComplexLaplacian::new(&g);
        let b = ScalarField::from_fn(g.spec(), |x| -PI * PI * (2.0 * PI * x[0]).cos());
        let (x, report) = krylov_solve(&op, &b, &KrylovConfig::default(), true).unwrap();
        let expected = ScalarField::from_fn(g.spec(), |x| (2.0 * PI * x[0]).cos());
        assert!((&x - &expected).sup_norm() < 1e-10, "report {report:?}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = HermitianMetricField::flat(GridSpec::new(2, 8).unwrap());
        let op = ComplexLaplacian::new(&g);
        let (x, _) = krylov_solve(&op, &ScalarField::zeros(g.spec()), &KrylovConfig::default(), true).unwrap();
        assert_eq!(x.sup_norm(), 0.0);
    }

    #[test]
    fn incompatible_rhs_is_rejected() {
        let g = HermitianMetricField::flat(GridSpec::new(2, 8).unwrap());
        let op = ComplexLaplacian::new(&g);
        let b = ScalarField::constant(g.spec(), 1.0);
        assert!(matches!(krylov_solve(&op, &b, &KrylovConfig::default(), true), Err(Error::IncompatibleRhs { .. })));
    }

    #[test]
    fn random_initial_guess_reaches_same_gauge() {
        // g_11 depending on x1 alone is Kaehler, hence Gauduchon
        let spec = GridSpec::new(2, 8).unwrap();
        let bump = ScalarField::from_fn(spec, |x| 1.0 + 0.2 * (2.0 * PI * x[0]).sin());
        let g = HermitianMetricField::diagonal(&[bump, ScalarField::constant(spec, 1.0)]).unwrap();
        let op = ComplexLaplacian::new(&g);
        assert!(op.constants_in_cokernel());
        let b = random_band_limited(spec, 3, 2, 1.0).unwrap();
        let w = op.weight();
        let m = integrate(&b, w) / integrate(&ScalarField::constant(spec, 1.0), w);
        let b = b.map(|v| v - m);
        let cfg_r = KrylovConfig { initial: InitialGuess::Random(7), ..KrylovConfig::default() };
        let (x0, _) = krylov_solve(&op, &b, &KrylovConfig::default(), true).unwrap();
        let (x1, _) = krylov_solve(&op, &b, &cfg_r, true).unwrap();
        assert!((&x0 - &x1).sup_norm() < 1e-8);
    }

    #[test]
    fn flat_null_vector_is_constant() {
        let g = HermitianMetricField::flat(GridSpec::new(2, 8).unwrap());
        let op = ComplexLaplacianAdjoint::new(&g);
        let (v, _) = null_vector(&op, &KrylovConfig::default()).unwrap();
        assert!(v.max() - v.min() < 1e-12);
    }
}
