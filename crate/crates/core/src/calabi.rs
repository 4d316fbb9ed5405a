//! The scale-invariant p-Calabi functional
//!
//! ```text
//! C_p(omega) = (integral |s|^p dV) (integral dV)^{-(n-p)/n}
//! ```
//!
//! with its variations along conformal rays `t -> e^{tf} omega`, the
//! Euler-Lagrange residual, and the integral identities behind the
//! constant-curvature argument. Averages written `avg` are `dV`-weighted.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauduchon::verify_gauduchon;
use crate::geometry::{chern_scalar, volume_density, HermitianMetricField};
use crate::grid::{inner, integrate, partial_z, partial_zbar, ScalarField};
use crate::operators::{complex_laplacian, complex_laplacian_adjoint};

/// Floor on the denominator of [`VariationReport::rel_error`].
pub const REL_ERROR_FLOOR: f64 = 1e-12;

/// Step of the finite-difference oracle in `t`.
pub const FD_STEP: f64 = 1e-3;

/// Relative error above which the finite-difference oracle is refined by
/// Richardson extrapolation.
pub const VARIATION_TOL: f64 = 1e-6;

/// Gauduchon defect required by [`integral_identities`].
pub const IDENTITY_DEFECT_TOL: f64 = 1e-7;

/// `s |s|^{e - 1}`, extended by 0 at `s = 0`.
pub fn signed_power(s: &ScalarField, e: f64) -> ScalarField {
    s.map(|v| if v == 0.0 { 0.0 } else { v.signum() * v.abs().powf(e) })
}

fn abs_power(s: &ScalarField, e: f64) -> ScalarField {
    s.map(|v| v.abs().powf(e))
}

fn check_exponent(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

fn volume(w: &ScalarField) -> f64 {
    integrate(&ScalarField::constant(w.spec(), 1.0), w)
}

pub fn calabi_functional(g: &HermitianMetricField, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let n = g.dim() as f64;
    let s = chern_scalar(g)?;
    let w = volume_density(g);
    Ok(integrate(&abs_power(&s, p), &w) * volume(&w).powf(-(n - p) / n))
}

/// `C_p(e^{tf} g)`, realizing the metric from scratch.
pub fn calabi_along(g: &HermitianMetricField, f: &ScalarField, p: f64, t: f64) -> Result<f64> {
    calabi_functional(&g.conformal(&(f * t))?, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub p: f64,
    pub t: f64,
    /// Closed-form `d/dt C_p(e^{tf} omega)`.
    pub formula_value: f64,
    /// Finite-difference value (Richardson-refined when that was needed).
    pub fd_value: f64,
    pub rel_error: f64,
    /// Whether the fourth-order stencil alone missed the tolerance.
    pub richardson: bool,
}

/// Base-metric quantities shared by every point of a conformal ray.
struct Ray {
    dim: f64,
    s: ScalarField,
    box_f: ScalarField,
    f: ScalarField,
    w: ScalarField,
}

impl Ray {
    fn new(g: &HermitianMetricField, f: &ScalarField) -> Result<Self> {
        Ok(Self {
            dim: g.dim() as f64,
            s: chern_scalar(g)?,
            box_f: complex_laplacian(g, f)?,
            f: f.clone(),
            w: volume_density(g),
        })
    }

    /// Closed-form derivative at `t`: the sum of the three terms from
    /// differentiating the energy integral, its integrand, and the volume
    /// normalization.
    fn derivative(&self, p: f64, t: f64) -> f64 {
        let n = self.dim;
        let q = (n - p) / n;
        let shifted = self.s.zip_map(&self.box_f, |s, b| s - n * t * b);
        let decay = self.f.map(|f| ((n - p) * t * f).exp());
        let growth = self.f.map(|f| (n * t * f).exp());
        let vol = integrate(&growth, &self.w);
        let energy = integrate(&(&decay * &abs_power(&shifted, p)), &self.w);

        let first = (n - p) * integrate(&(&(&self.f * &decay) * &abs_power(&shifted, p)), &self.w);
        let second = -n * p * integrate(&(&(&decay * &self.box_f) * &signed_power(&shifted, p - 1.0)), &self.w);
        let third = -(n - p) * energy * integrate(&(&self.f * &growth), &self.w) / vol;
        (first + second + third) * vol.powf(-q)
    }

    /// `d^2/dt^2 C_n(e^{tf} omega)`.
    fn second_derivative(&self, t: f64) -> f64 {
        let n = self.dim;
        let integrand = self.s.zip_map(&self.box_f, |s, b| b * b * (s - n * t * b).abs().powf(n - 2.0));
        n.powi(3) * (n - 1.0) * integrate(&integrand, &self.w)
    }
}

fn central_fourth(g: &HermitianMetricField, f: &ScalarField, p: f64, t: f64, h: f64) -> Result<f64> {
    let c = |k: f64| calabi_along(g, f, p, t + k * h);
    Ok((c(-2.0)? - 8.0 * c(-1.0)? + 8.0 * c(1.0)? - c(2.0)?) / (12.0 * h))
}

fn rel_error(formula: f64, fd: f64) -> f64 {
    (formula - fd).abs() / fd.abs().max(REL_ERROR_FLOOR)
}

/// Compares the closed-form first variation with a fourth-order central
/// difference of [`calabi_along`].
pub fn variation_at(g: &HermitianMetricField, f: &ScalarField, p: f64, t: f64) -> Result<VariationReport> {
    check_exponent(p)?;
    let formula_value = Ray::new(g, f)?.derivative(p, t);
    let coarse = central_fourth(g, f, p, t, FD_STEP)?;
    let mut report = VariationReport {
        p,
        t,
        formula_value,
        fd_value: coarse,
        rel_error: rel_error(formula_value, coarse),
        richardson: false,
    };
    if report.rel_error > VARIATION_TOL {
        let fine = central_fourth(g, f, p, t, FD_STEP / 2.0)?;
        let refined = fine + (fine - coarse) / 15.0;
        report.fd_value = refined;
        report.rel_error = rel_error(formula_value, refined);
        report.richardson = true;
    }
    Ok(report)
}

/// Closed-form first variation alone.
pub fn first_variation(g: &HermitianMetricField, f: &ScalarField, p: f64, t: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(Ray::new(g, f)?.derivative(p, t))
}

/// `d^2/dt^2 C_n(e^{tf} omega) = n^3 (n-1) integral (box f)^2 |s - n t box f|^{n-2} dV`.
pub fn second_variation(g: &HermitianMetricField, f: &ScalarField, t: f64) -> Result<f64> {
    Ok(Ray::new(g, f)?.second_derivative(t))
}

/// Euler-Lagrange residual of `C_p` within the conformal class:
/// `box*(s |s|^{p-2}) - ((n-p)/(n p)) (|s|^p - avg |s|^p)`, with its weighted
/// L2 norm. Needs `p >= 2` so that `s |s|^{p-2}` is smooth enough to
/// differentiate spectrally.
pub fn el_residual(g: &HermitianMetricField, p: f64) -> Result<(ScalarField, f64)> {
    if p < 2.0 || !p.is_finite() {
        return Err(Error::UnsupportedExponent(p));
    }
    let n = g.dim() as f64;
    let s = chern_scalar(g)?;
    let w = volume_density(g);
    let lhs = complex_laplacian_adjoint(g, &signed_power(&s, p - 1.0));
    let sp = abs_power(&s, p);
    let avg = integrate(&sp, &w) / volume(&w);
    let coeff = (n - p) / (n * p);
    let residual = lhs.zip_map(&sp, |a, b| a - coeff * (b - avg));
    let norm = inner(&residual, &residual, &w).sqrt();
    Ok((residual, norm))
}

/// `g^{i jbar} d_i u dbar_j u`.
pub fn gradient_norm_sq(g: &HermitianMetricField, u: &ScalarField) -> ScalarField {
    let n = g.dim();
    let dz: Vec<_> = (0..n).map(|i| partial_z(u, i)).collect();
    let dzb: Vec<_> = (0..n).map(|j| partial_zbar(u, j)).collect();
    let values = (0..u.spec().len())
        .into_par_iter()
        .map(|idx| {
            let mut acc = Complex64::default();
            for (i, di) in dz.iter().enumerate() {
                for (j, dj) in dzb.iter().enumerate() {
                    acc += g.inverse_entry(i, j).values()[idx] * di.values()[idx] * dj.values()[idx];
                }
            }
            acc.re
        })
        .collect();
    ScalarField::from_values(u.spec(), values).expect("finite gradient")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub p: f64,
    /// `integral box(s |s|^{2p-2}) dV`, zero on a Gauduchon metric.
    pub box_integral: f64,
    /// The same integral after the product rule:
    /// `(2p-1) integral (|s|^{2p-2} box s + 2(p-1) s |s|^{2p-4} |ds|^2) dV`.
    pub expanded_box_integral: f64,
    /// `integral |s|^p box*(s |s|^{p-2}) dV`.
    pub adjoint_pairing: f64,
    /// `p integral (|s|^{2p-2} box s + (p-1) s |s|^{2p-4} |ds|^2) dV`.
    pub expanded_pairing: f64,
    /// Size of the integrands, used to scale agreement tolerances.
    pub scale: f64,
}

impl IdentityReport {
    /// Largest of the three discrepancies, relative to `scale`.
    pub fn worst(&self) -> f64 {
        let a = self.box_integral.abs();
        let b = (self.box_integral - self.expanded_box_integral).abs();
        let c = (self.adjoint_pairing - self.expanded_pairing).abs();
        a.max(b).max(c) / self.scale
    }
}

/// Integral identities for `s` on a Gauduchon metric, for `p >= 2`.
pub fn integral_identities(g_gauduchon: &HermitianMetricField, p: f64) -> Result<IdentityReport> {
    if p < 2.0 || !p.is_finite() {
        return Err(Error::UnsupportedExponent(p));
    }
    let defect = verify_gauduchon(g_gauduchon);
    if defect > IDENTITY_DEFECT_TOL {
        return Err(Error::NotGauduchon { defect, tolerance: IDENTITY_DEFECT_TOL });
    }
    let g = g_gauduchon;
    let w = volume_density(g);
    let s = chern_scalar(g)?;
    let box_s = complex_laplacian(g, &s)?;
    let grad = gradient_norm_sq(g, &s);
    let high = abs_power(&s, 2.0 * p - 2.0);
    // s |s|^{2p-4}
    let mid = signed_power(&s, 2.0 * p - 3.0);

    let int = |u: &ScalarField| integrate(u, &w);
    let term_box = int(&(&high * &box_s));
    let term_grad = int(&(&mid * &grad));

    let box_integral = int(&complex_laplacian(g, &signed_power(&s, 2.0 * p - 1.0))?);
    let expanded_box_integral = (2.0 * p - 1.0) * (term_box + 2.0 * (p - 1.0) * term_grad);
    let adjoint_pairing = int(&(&abs_power(&s, p) * &complex_laplacian_adjoint(g, &signed_power(&s, p - 1.0))));
    let expanded_pairing = p * (term_box + (p - 1.0) * term_grad);

    let mag = |u: &ScalarField| int(&u.map(f64::abs));
    let scale = (2.0 * p - 1.0) * (mag(&(&high * &box_s)) + 2.0 * (p - 1.0) * mag(&(&mid * &grad)));
    Ok(IdentityReport {
        p,
        box_integral,
        expanded_box_integral,
        adjoint_pairing,
        expanded_pairing,
        scale: scale.max(1.0),
    })
}
