//! The n-conformal extremal metric of a conformal class, built in two
//! elliptic stages: the Gauduchon representative `omega_G`, then the Poisson
//! problem `box_G f = (s_G - C) / n`. The result `omega_E = e^f omega_G` has
//! Chern scalar curvature `C e^{-f}`.

use serde::{Deserialize, Serialize};

use crate::calabi::signed_power;
use crate::error::{Error, Result};
use crate::gauduchon::{gauduchon_factor, verify_gauduchon, volume_shift, GauduchonResult};
use crate::geometry::{chern_scalar, volume_density, HermitianMetricField};
use crate::grid::{inner, integrate, ScalarField};
use crate::operators::{
    complex_laplacian_adjoint, krylov_solve, ComplexLaplacian, KrylovConfig, LinearMap, SolveReport,
};

/// Gauduchon defect above which [`mean_scalar`] refuses its input.
pub const MEAN_SCALAR_DEFECT_TOL: f64 = 1e-7;

/// End-to-end Euler-Lagrange residual above which a converged pipeline is
/// still reported as a failure.
pub const EL_RESIDUAL_LIMIT: f64 = 1e-5;

/// Default relative tolerance for [`classify_sign`].
pub const SIGN_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ExtremalResult {
    /// `f_E` with `omega_E = e^{f_E} omega_g`; equals
    /// `gauduchon.factor + poisson + volume_shift`.
    pub factor: ScalarField,
    /// Solution of the Poisson stage with zero `omega_G`-weighted mean.
    pub poisson: ScalarField,
    /// Constant restoring the input volume.
    pub volume_shift: f64,
    /// `omega_G`-average of `s_G`.
    pub mean_curvature: f64,
    pub gauduchon: GauduchonResult,
    /// Weighted L2 norm of `box_E*(s_E |s_E|^{n-2})`.
    pub el_residual: f64,
    pub report: SolveReport,
}

impl ExtremalResult {
    pub fn realize(&self, g: &HermitianMetricField) -> Result<HermitianMetricField> {
        g.conformal(&self.factor)
    }
}

fn weighted_mean(u: &ScalarField, w: &ScalarField) -> f64 {
    integrate(u, w) / integrate(&ScalarField::constant(u.spec(), 1.0), w)
}

/// Volume average of the Chern scalar curvature of a Gauduchon metric.
pub fn mean_scalar(g_gauduchon: &HermitianMetricField) -> Result<f64> {
    let defect = verify_gauduchon(g_gauduchon);
    if defect > MEAN_SCALAR_DEFECT_TOL {
        return Err(Error::NotGauduchon { defect, tolerance: MEAN_SCALAR_DEFECT_TOL });
    }
    let s = chern_scalar(g_gauduchon)?;
    Ok(weighted_mean(&s, &volume_density(g_gauduchon)))
}

pub fn extremal_factor(g: &HermitianMetricField, cfg: &KrylovConfig) -> Result<ExtremalResult> {
    let n = g.dim();
    let gauduchon = gauduchon_factor(g, cfg)?;
    let g_g = gauduchon.realize(g)?;
    let mean_curvature = mean_scalar(&g_g)?;
    let s_g = chern_scalar(&g_g)?;
    let psi = s_g.map(|s| (s - mean_curvature) / n as f64);

    // the solver re-checks that psi is orthogonal to the constants
    let op = ComplexLaplacian::new(&g_g);
    let (poisson, report) = krylov_solve(&op, &psi, cfg, true)?;

    let shift = volume_shift(&poisson, op.weight(), n);
    let factor = gauduchon.factor.zip_map(&poisson, |a, b| a + b + shift);

    let g_e = g.conformal(&factor)?;
    let s_e = chern_scalar(&g_e)?;
    let residual_field = complex_laplacian_adjoint(&g_e, &signed_power(&s_e, n as f64 - 1.0));
    let el_residual = inner(&residual_field, &residual_field, &volume_density(&g_e)).sqrt();
    if el_residual > EL_RESIDUAL_LIMIT {
        return Err(Error::ResidualTooLarge { residual: el_residual, tolerance: EL_RESIDUAL_LIMIT });
    }

    Ok(ExtremalResult { factor, poisson, volume_shift: shift, mean_curvature, gauduchon, el_residual, report })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Total scalar curvature `integral of s omega^n`, i.e. `n!` times the
/// integral against the `omega^n / n!` density.
pub fn total_scalar(g: &HermitianMetricField) -> Result<f64> {
    let s = chern_scalar(g)?;
    Ok(factorial(g.dim()) * integrate(&s, &volume_density(g)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurvatureSign {
    Positive,
    Negative,
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignReport {
    pub sign: CurvatureSign,
    /// Total scalar curvature of the Gauduchon representative.
    pub total_scalar: f64,
    /// `n!` times the volume; the threshold is `tol * scale`.
    pub scale: f64,
}

/// Classifies the sign of the total scalar curvature of the Gauduchon
/// representative, which is a conformal invariant. `Zero` when its magnitude
/// is at most `tol * n! * volume`.
pub fn classify_sign(g: &HermitianMetricField, tol: f64, cfg: &KrylovConfig) -> Result<SignReport> {
    let g_g = gauduchon_factor(g, cfg)?.realize(g)?;
    let total = total_scalar(&g_g)?;
    let scale = factorial(g.dim()) * integrate(&ScalarField::constant(g.spec(), 1.0), &volume_density(&g_g));
    let sign = if total.abs() <= tol * scale {
        CurvatureSign::Zero
    } else if total > 0.0 {
        CurvatureSign::Positive
    } else {
        CurvatureSign::Negative
    };
    Ok(SignReport { sign, total_scalar: total, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use std::f64::consts::PI;

    fn oscillation(f: &ScalarField) -> f64 {
        f.max() - f.min()
    }

    #[test]
    fn flat_is_extremal() {
        let g = HermitianMetricField::flat(GridSpec::new(2, 8).unwrap());
        let res = extremal_factor(&g, &KrylovConfig::default()).unwrap();
        assert!(res.factor.sup_norm() < 1e-12);
        assert!(res.mean_curvature.abs() < 1e-14);
        assert_eq!(total_scalar(&g).unwrap(), 0.0);
        let sign = classify_sign(&g, SIGN_TOL, &KrylovConfig::default()).unwrap();
        assert_eq!(sign.sign, CurvatureSign::Zero);
    }

    #[test]
    fn conformally_flat_recovers_flat() {
        let spec = GridSpec::new(2, 16).unwrap();
        let phi = ScalarField::from_fn(spec, |x| 0.1 * (2.0 * PI * x[0]).cos());
        let g = HermitianMetricField::conformally_flat(&phi).unwrap();
        let res = extremal_factor(&g, &KrylovConfig::default()).unwrap();
        assert!(oscillation(&(&res.factor + &phi)) < 1e-6);
        assert!(res.el_residual < 1e-6);
    }

    #[test]
    fn non_kahler_pipeline_is_consistent() {
        let spec = GridSpec::new(2, 16).unwrap();
        let bump = ScalarField::from_fn(spec, |x| 1.0 + 0.1 * (2.0 * PI * x[2]).cos());
        let g = HermitianMetricField::diagonal(&[bump, ScalarField::constant(spec, 1.0)]).unwrap();
        let res = extremal_factor(&g, &KrylovConfig::default()).unwrap();
        assert!(res.report.relative_residual < 1e-10);
        assert!(res.el_residual < 1e-6);
        assert!(res.mean_curvature.abs() < 1e-7);

        let g_g = res.gauduchon.realize(&g).unwrap();
        let w_g = volume_density(&g_g);
        assert!(weighted_mean(&res.poisson, &w_g).abs() < 1e-12);
        let vol = |m: &HermitianMetricField| volume_density(m).mean();
        assert!((vol(&res.realize(&g).unwrap()) / vol(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_scalar_scales_inversely() {
        let spec = GridSpec::new(2, 8).unwrap();
        let bump = ScalarField::from_fn(spec, |x| 1.0 + 0.1 * (2.0 * PI * x[2]).cos());
        let g = HermitianMetricField::diagonal(&[bump, ScalarField::constant(spec, 1.0)]).unwrap();
        assert!(matches!(mean_scalar(&g), Err(Error::NotGauduchon { .. })));
        let g_g = gauduchon_factor(&g, &KrylovConfig::default()).unwrap().realize(&g).unwrap();
        let c = mean_scalar(&g_g).unwrap();
        let c2 = mean_scalar(&g_g.scaled(2.0).unwrap()).unwrap();
        assert!((c2 - c / 2.0).abs() < 1e-15);
    }
}
