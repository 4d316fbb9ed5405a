//! The Gauduchon representative of a conformal class.
//!
//! `e^f g` is Gauduchon exactly when `box_g*(e^{(n-1) f}) = 0`, so the
//! representative comes from the positive null vector of `box_g*`.

use crate::error::{Error, Result};
use crate::geometry::{volume_density, HermitianMetricField};
use crate::grid::{inner, integrate, ScalarField};
use crate::operators::{
    complex_laplacian_adjoint, null_vector, torsion_scalar, ComplexLaplacianAdjoint, KrylovConfig, SolveReport,
};

#[derive(Debug, Clone)]
pub struct GauduchonResult {
    /// `f_G` with `omega_G = e^{f_G} omega_g`, normalized so both metrics
    /// have the same total volume.
    pub factor: ScalarField,
    /// `|box_g*(v)| / |v|` for `v = e^{(n-1) f_G}`, weighted by `g`.
    pub residual: f64,
    pub report: SolveReport,
}

impl GauduchonResult {
    pub fn realize(&self, g: &HermitianMetricField) -> Result<HermitianMetricField> {
        g.conformal(&self.factor)
    }
}

/// Shift that makes `e^{f + c} g` have the same volume as `g`.
pub(crate) fn volume_shift(f: &ScalarField, w: &ScalarField, n: usize) -> f64 {
    let scaled = f.map(|v| (n as f64 * v).exp());
    let ratio = integrate(&scaled, w) / integrate(&ScalarField::constant(f.spec(), 1.0), w);
    -ratio.ln() / n as f64
}

pub fn gauduchon_factor(g: &HermitianMetricField, cfg: &KrylovConfig) -> Result<GauduchonResult> {
    let n = g.dim();
    let op = ComplexLaplacianAdjoint::new(g);
    let (v, report) = null_vector(&op, cfg)?;
    // null_vector already rejects sign changes; keep the check local too
    let (min, max) = (v.min(), v.max());
    if min <= 0.0 {
        return Err(Error::NonPositiveKernel { min, max });
    }

    let w = volume_density(g);
    let raw = v.map(|x| x.ln() / (n - 1) as f64);
    let shift = volume_shift(&raw, &w, n);
    let factor = raw.map(|x| x + shift);

    let power = factor.map(|x| ((n - 1) as f64 * x).exp());
    let image = complex_laplacian_adjoint(g, &power);
    let residual = (inner(&image, &image, &w) / inner(&power, &power, &w)).sqrt();
    Ok(GauduchonResult { factor, residual, report })
}

/// Gauduchon defect `sup |box_g*(1)|`.
pub fn verify_gauduchon(g: &HermitianMetricField) -> f64 {
    torsion_scalar(g).sup_norm()
}
