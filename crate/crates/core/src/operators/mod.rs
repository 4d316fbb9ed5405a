//! The complex Laplacian, its weighted adjoint, the Hodge Laplacian on
//! functions, and the Krylov machinery used to invert them.
//!
//! Every operator here is a composition of pointwise multiplications and
//! Fourier multipliers with even symbols. Each multiplier is its own
//! transpose, so the adjoint of
//!
//! ```text
//! box u = Re sum_ij g^{i jbar} d_i dbar_j u
//! ```
//!
//! with respect to `<u, v> = integrate(u v, dV)` is, exactly on the grid,
//!
//! ```text
//! box* u = Re sum_ij d_i dbar_j (g^{i jbar} dV u) / dV.
//! ```

mod krylov;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{volume_density, HermitianMetricField};
use crate::grid::{Derivative, GridSpec, ScalarField, Spectrum};

pub use krylov::{krylov_solve, null_vector, InitialGuess, KrylovConfig, SolveReport};

/// Imaginary residue (relative to the real part) above which the complex
/// Laplacian reports a convention error.
const IMAGINARY_RESIDUE_TOL: f64 = 1e-10;

/// `box_g u = g^{i jbar} d_i dbar_j u`.
pub fn complex_laplacian(g: &HermitianMetricField, u: &ScalarField) -> Result<ScalarField> {
    assert_eq!(g.spec(), u.spec(), "metric and field live on different grids");
    let n = g.dim();
    let spectrum = Spectrum::of_real(u);
    let mut acc = vec![Complex64::default(); u.spec().len()];
    let mut d = Vec::new();
    // u is real, so the diagonal derivatives are real and go two per
    // transform, and d_j dbar_i u = conj(d_i dbar_j u). The result is real
    // only when the inverse metric is Hermitian, which the residue check below
    // still tests.
    for i in (0..n).step_by(2) {
        let a = g.inverse_entry(i, i).values();
        if i + 1 < n {
            spectrum.real_pair_into(Derivative::ZZbar(i, i), Derivative::ZZbar(i + 1, i + 1), &mut d);
            let b = g.inverse_entry(i + 1, i + 1).values();
            acc.par_iter_mut()
                .zip(d.par_iter())
                .zip(a.par_iter().zip(b.par_iter()))
                .for_each(|((s, dv), (av, bv))| *s += av * dv.re + bv * dv.im);
        } else {
            spectrum.derivative_into(Derivative::ZZbar(i, i), &mut d);
            acc.par_iter_mut().zip(d.par_iter()).zip(a.par_iter()).for_each(|((s, dv), av)| *s += av * dv.re);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            spectrum.derivative_into(Derivative::ZZbar(i, j), &mut d);
            let (a, b) = (g.inverse_entry(i, j).values(), g.inverse_entry(j, i).values());
            acc.par_iter_mut()
                .zip(d.par_iter())
                .zip(a.par_iter().zip(b.par_iter()))
                .for_each(|((s, dv), (av, bv))| *s += av * dv + bv * dv.conj());
        }
    }
    let re_scale = acc.iter().fold(1.0f64, |m, v| m.max(v.re.abs()));
    let residue = acc.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    if residue > IMAGINARY_RESIDUE_TOL * re_scale {
        return Err(Error::ImaginaryResidue { residue });
    }
    Ok(ScalarField::from_values_unchecked(u.spec(), acc.into_iter().map(|v| v.re).collect()))
}

/// Formal adjoint of [`complex_laplacian`] in the `dV`-weighted inner product.
pub fn complex_laplacian_adjoint(g: &HermitianMetricField, u: &ScalarField) -> ScalarField {
    adjoint_with_weight(g, &volume_density(g), u)
}

fn adjoint_with_weight(g: &HermitianMetricField, w: &ScalarField, u: &ScalarField) -> ScalarField {
    assert_eq!(g.spec(), u.spec(), "metric and field live on different grids");
    let n = g.dim();
    let spec = u.spec();
    let wu = w * u;
    let mut acc = Spectrum::zeros(spec);
    for i in 0..n {
        for j in 0..n {
            let a = g.inverse_entry(i, j);
            let prod: Vec<Complex64> =
                a.values().par_iter().zip(wu.values().par_iter()).map(|(av, x)| av * x).collect();
            let s = Spectrum::of_complex(&crate::grid::ComplexField::from_values_unchecked(spec, prod));
            acc.accumulate(Derivative::ZZbar(i, j), &s);
        }
    }
    let out = acc.into_field();
    let values = out.values().par_iter().zip(w.values().par_iter()).map(|(v, wv)| v.re / wv).collect();
    ScalarField::from_values_unchecked(spec, values)
}

/// The torsion scalar `box*(1)`; it vanishes exactly when the metric is
/// Gauduchon.
pub fn torsion_scalar(g: &HermitianMetricField) -> ScalarField {
    complex_laplacian_adjoint(g, &ScalarField::constant(g.spec(), 1.0))
}

/// Hodge Laplacian `d* d` on functions, assembled in divergence form from the
/// energy `integrate(2 g^{i jbar} d_i u dbar_j v, dV)` so that
/// `<hodge u, v> = <hodge v, u>` holds exactly on the grid.
pub fn hodge_laplacian(g: &HermitianMetricField, u: &ScalarField) -> ScalarField {
    hodge_with_weight(g, &volume_density(g), u)
}

fn hodge_with_weight(g: &HermitianMetricField, w: &ScalarField, u: &ScalarField) -> ScalarField {
    assert_eq!(g.spec(), u.spec(), "metric and field live on different grids");
    let n = g.dim();
    let spec = u.spec();
    let spectrum = Spectrum::of_real(u);
    let grads: Vec<_> = (0..n).map(|i| spectrum.derivative(Derivative::Z(i))).collect();
    let mut acc = Spectrum::zeros(spec);
    for j in 0..n {
        // X_j = sum_i g^{i jbar} dV d_i u
        let mut flux = vec![Complex64::default(); spec.len()];
        for (i, grad) in grads.iter().enumerate() {
            let a = g.inverse_entry(i, j).values();
            flux.par_iter_mut()
                .zip(grad.values().par_iter())
                .zip(a.par_iter().zip(w.values().par_iter()))
                .for_each(|((x, d), (av, wv))| *x += av * d * *wv);
        }
        let s = Spectrum::of_complex(&crate::grid::ComplexField::from_values_unchecked(spec, flux));
        acc.accumulate(Derivative::Zbar(j), &s);
    }
    // The d_i (g^{i jbar} dV dbar_j u) half is the complex conjugate of the
    // accumulated half for real u.
    let out = acc.into_field();
    let values = out.values().par_iter().zip(w.values().par_iter()).map(|(v, wv)| -2.0 * v.re / wv).collect();
    ScalarField::from_values_unchecked(spec, values)
}

/// An apply-only linear operator together with the volume density that
/// defines its inner product.
pub trait LinearMap: Sync {
    fn spec(&self) -> GridSpec;

    fn weight(&self) -> &ScalarField;

    fn apply(&self, u: &ScalarField) -> Result<ScalarField>;

    /// Approximate inverse used as a right preconditioner.
    fn precondition(&self, r: &ScalarField) -> ScalarField {
        r.clone()
    }

    /// True when `<A x, 1> = 0` for every `x`.
    fn constants_in_cokernel(&self) -> bool {
        false
    }

    /// True when `A 1 = 0`.
    fn constants_in_kernel(&self) -> bool {
        false
    }
}

/// Inverse of the constant-coefficient operator `sum_ij a_ij d_i dbar_j`,
/// where `a` is the grid mean of the metric's inverse coefficients. The zero
/// mode is mapped to zero, so outputs have zero grid mean.
#[derive(Debug, Clone)]
pub struct MeanCoefficientInverse {
    dim: usize,
    coefficients: Vec<Complex64>,
}

impl MeanCoefficientInverse {
    pub fn new(g: &HermitianMetricField) -> Self {
        let n = g.dim();
        let mut coefficients = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let vals = g.inverse_entry(i, j).values();
                let sum: Complex64 = vals.iter().sum();
                coefficients.push(sum / vals.len() as f64);
            }
        }
        Self { dim: n, coefficients }
    }

    pub fn apply(&self, r: &ScalarField) -> ScalarField {
        let n = self.dim;
        let mut spectrum = Spectrum::of_real(r);
        spectrum.map_modes(|symbol, v| {
            let mut sigma = Complex64::default();
            for i in 0..n {
                for j in 0..n {
                    sigma += self.coefficients[i * n + j] * symbol(Derivative::ZZbar(i, j));
                }
            }
            if sigma.re == 0.0 {
                Complex64::default()
            } else {
                v / sigma.re
            }
        });
        spectrum.into_field().re()
    }
}

/// `box_g` as a [`LinearMap`].
pub struct ComplexLaplacian<'a> {
    metric: &'a HermitianMetricField,
    weight: ScalarField,
    preconditioner: MeanCoefficientInverse,
    gauduchon: bool,
}

impl<'a> ComplexLaplacian<'a> {
    /// Torsion defect below which the constants are treated as the cokernel.
    pub const GAUDUCHON_TOL: f64 = 1e-8;

    pub fn new(metric: &'a HermitianMetricField) -> Self {
        let weight = volume_density(metric);
        let defect = adjoint_with_weight(metric, &weight, &ScalarField::constant(metric.spec(), 1.0)).sup_norm();
        Self {
            metric,
            weight,
            preconditioner: MeanCoefficientInverse::new(metric),
            gauduchon: defect <= Self::GAUDUCHON_TOL,
        }
    }
}

impl LinearMap for ComplexLaplacian<'_> {
    fn spec(&self) -> GridSpec {
        self.metric.spec()
    }

    fn weight(&self) -> &ScalarField {
        &self.weight
    }

    fn apply(&self, u: &ScalarField) -> Result<ScalarField> {
        complex_laplacian(self.metric, u)
    }

    fn precondition(&self, r: &ScalarField) -> ScalarField {
        self.preconditioner.apply(r)
    }

    fn constants_in_cokernel(&self) -> bool {
        self.gauduchon
    }

    fn constants_in_kernel(&self) -> bool {
        true
    }
}

/// `box_g*` as a [`LinearMap`].
pub struct ComplexLaplacianAdjoint<'a> {
    metric: &'a HermitianMetricField,
    weight: ScalarField,
    preconditioner: MeanCoefficientInverse,
}

impl<'a> ComplexLaplacianAdjoint<'a> {
    pub fn new(metric: &'a HermitianMetricField) -> Self {
        Self { metric, weight: volume_density(metric), preconditioner: MeanCoefficientInverse::new(metric) }
    }
}

impl LinearMap for ComplexLaplacianAdjoint<'_> {
    fn spec(&self) -> GridSpec {
        self.metric.spec()
    }

    fn weight(&self) -> &ScalarField {
        &self.weight
    }

    fn apply(&self, u: &ScalarField) -> Result<ScalarField> {
        Ok(adjoint_with_weight(self.metric, &self.weight, u))
    }

    fn precondition(&self, r: &ScalarField) -> ScalarField {
        self.preconditioner.apply(r)
    }

    fn constants_in_cokernel(&self) -> bool {
        true
    }
}

/// `hodge + box`, whose kernel on a Gauduchon metric is the constants.
pub struct HodgePlusBox<'a> {
    metric: &'a HermitianMetricField,
    weight: ScalarField,
}

impl<'a> HodgePlusBox<'a> {
    pub fn new(metric: &'a HermitianMetricField) -> Self {
        Self { metric, weight: volume_density(metric) }
    }
}

impl LinearMap for HodgePlusBox<'_> {
    fn spec(&self) -> GridSpec {
        self.metric.spec()
    }

    fn weight(&self) -> &ScalarField {
        &self.weight
    }

    fn apply(&self, u: &ScalarField) -> Result<ScalarField> {
        let b = complex_laplacian(self.metric, u)?;
        Ok(&hodge_with_weight(self.metric, &self.weight, u) + &b)
    }

    fn constants_in_kernel(&self) -> bool {
        true
    }
}
