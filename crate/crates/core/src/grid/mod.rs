//! Periodic sampling of the torus `C^n / (Z^n + i Z^n)`.
//!
//! A field stores `N^(2n)` samples in row-major order over the real axes
//! `(x1, y1, ..., xn, yn)`, the last axis varying fastest. Sample `m` along an
//! axis sits at coordinate `m / N`.

mod spectral;

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use spectral::inverse as fft_inverse;
pub use spectral::{Derivative, Spectrum};

/// Hard cap on samples per field, so a typo in a scenario cannot exhaust memory.
const MAX_SAMPLES: usize = 1 << 26;

/// Complex dimension `n` and samples per real axis `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    points: usize,
}

impl GridSpec {
    pub fn new(dim: usize, points: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidGrid(format!("complex dimension {dim} < 2")));
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("samples per axis must be a power of two >= 4, got {points}")));
        }
        let total = (0..2 * dim).try_fold(1usize, |acc, _| acc.checked_mul(points));
        match total {
            Some(t) if t <= MAX_SAMPLES => Ok(Self { dim, points }),
            _ => Err(Error::InvalidGrid(format!("{points}^{} samples exceed the limit", 2 * dim))),
        }
    }

    /// Complex dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Samples per real axis `N`.
    pub fn points(&self) -> usize {
        self.points
    }

    /// Number of real axes, `2n`.
    pub fn axes(&self) -> usize {
        2 * self.dim
    }

    /// Total number of samples, `N^(2n)`.
    pub fn len(&self) -> usize {
        self.points.pow(self.axes() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.axes() - 1 - axis) as u32)
    }

    /// Quadrature weight of one sample (the cell volume `N^(-2n)`).
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn digit(&self, index: usize, axis: usize) -> usize {
        (index / self.stride(axis)) % self.points
    }

    pub fn coordinates(&self, index: usize) -> Vec<f64> {
        (0..self.axes()).map(|a| self.digit(index, a) as f64 / self.points as f64).collect()
    }

    /// Signed wavenumber of Fourier index `m`; the Nyquist index maps to `-N/2`.
    pub fn wavenumber(&self, m: usize) -> i64 {
        let n = self.points as i64;
        let m = m as i64;
        if 2 * m < n {
            m
        } else {
            m - n
        }
    }
}

/// Real samples on the grid. Values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self { spec, values: vec![c; spec.len()] }
    }

    /// Samples `f` at every grid point; `f` receives `(x1, y1, ..., xn, yn)`.
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values = (0..spec.len()).into_par_iter().map(|i| f(&spec.coordinates(i))).collect();
        Self { spec, values }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::ShapeMismatch);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { spec, values })
    }

    pub(crate) fn from_values_unchecked(spec: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Self { spec, values }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Sync,
    {
        Self { spec: self.spec, values: self.values.par_iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F>(&self, other: &Self, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        assert_eq!(self.spec, other.spec, "fields live on different grids");
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(&a, &b)| f(a, b)).collect();
        Self { spec: self.spec, values }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Unweighted grid mean.
    pub fn mean(&self) -> f64 {
        deterministic_sum(&self.values) / self.values.len() as f64
    }

    /// Samples at the points of a coarser grid, which must divide this one.
    pub fn restrict(&self, coarse: GridSpec) -> Result<Self> {
        let (fine, stride) = (self.spec, self.spec.points / coarse.points.max(1));
        if coarse.dim != fine.dim || coarse.points > fine.points || fine.points % coarse.points != 0 {
            return Err(Error::ShapeMismatch);
        }
        let values = (0..coarse.len())
            .map(|index| {
                let at = (0..coarse.axes()).fold(0, |acc, a| acc * fine.points + coarse.digit(index, a) * stride);
                self.values[at]
            })
            .collect();
        Ok(Self { spec: coarse, values })
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField { spec: self.spec, values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

/// Pointwise product.
impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: f64) -> ScalarField {
        self.map(|a| a * rhs)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|a| -a)
    }
}

/// Complex samples on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    spec: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, values: vec![Complex64::default(); spec.len()] }
    }

    pub fn from_values(spec: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::ShapeMismatch);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { spec, values })
    }

    pub(crate) fn from_values_unchecked(spec: GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Self { spec, values }
    }

    pub fn from_parts(re: &ScalarField, im: &ScalarField) -> Self {
        assert_eq!(re.spec, im.spec, "fields live on different grids");
        let values = re.values.iter().zip(&im.values).map(|(&a, &b)| Complex64::new(a, b)).collect();
        Self { spec: re.spec, values }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn re(&self) -> ScalarField {
        ScalarField::from_values_unchecked(self.spec, self.values.iter().map(|v| v.re).collect())
    }

    pub fn im(&self) -> ScalarField {
        ScalarField::from_values_unchecked(self.spec, self.values.iter().map(|v| v.im).collect())
    }

    pub fn conj(&self) -> Self {
        Self { spec: self.spec, values: self.values.iter().map(|v| v.conj()).collect() }
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(Complex64) -> Complex64 + Sync,
    {
        Self { spec: self.spec, values: self.values.par_iter().map(|&v| f(v)).collect() }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// Inputs accepted by the Wirtinger derivatives.
pub trait SpectralInput {
    fn spectrum(&self) -> Spectrum;
}

impl SpectralInput for ScalarField {
    fn spectrum(&self) -> Spectrum {
        Spectrum::of_real(self)
    }
}

impl SpectralInput for ComplexField {
    fn spectrum(&self) -> Spectrum {
        Spectrum::of_complex(self)
    }
}

/// `d u / dz^j` for zero-based `j < n`.
pub fn partial_z<U: SpectralInput>(u: &U, j: usize) -> ComplexField {
    u.spectrum().derivative(Derivative::Z(j))
}

/// `d u / dzbar^j` for zero-based `j < n`.
pub fn partial_zbar<U: SpectralInput>(u: &U, j: usize) -> ComplexField {
    u.spectrum().derivative(Derivative::Zbar(j))
}

const SUM_CHUNK: usize = 4096;

/// Sum with a fixed chunking, so parallel evaluation is bit-stable.
pub(crate) fn deterministic_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values.par_chunks(SUM_CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    partials.iter().sum()
}

/// `sum(u * w) / N^(2n)`: the trapezoid rule, spectrally exact on the torus.
pub fn integrate(u: &ScalarField, w: &ScalarField) -> f64 {
    assert_eq!(u.spec, w.spec, "fields live on different grids");
    let partials: Vec<f64> = u
        .values
        .par_chunks(SUM_CHUNK)
        .zip(w.values.par_chunks(SUM_CHUNK))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partials.iter().sum::<f64>() * u.spec.cell_volume()
}

/// Weighted inner product `integrate(u * v, w)`.
pub fn inner(u: &ScalarField, v: &ScalarField, w: &ScalarField) -> f64 {
    assert!(u.spec == v.spec && u.spec == w.spec, "fields live on different grids");
    let partials: Vec<f64> = u
        .values
        .par_chunks(SUM_CHUNK)
        .zip(v.values.par_chunks(SUM_CHUNK))
        .zip(w.values.par_chunks(SUM_CHUNK))
        .map(|((a, b), c)| a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z).sum::<f64>())
        .collect();
    partials.iter().sum::<f64>() * u.spec.cell_volume()
}

/// A deterministic real field whose Fourier modes satisfy `|k_a| <= max_mode`
/// on every axis, with zero mean and sup-norm equal to `amplitude`.
pub fn random_band_limited(spec: GridSpec, seed: u64, max_mode: usize, amplitude: f64) -> Result<ScalarField> {
    if 2 * max_mode >= spec.points() {
        return Err(Error::AliasedMode { mode: max_mode as i64, points: spec.points() });
    }
    if amplitude == 0.0 {
        return Ok(ScalarField::zeros(spec));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![Complex64::default(); spec.len()];
    // in-band grid indices, visited in increasing order
    let n = spec.points();
    let digits: Vec<usize> = (0..=max_mode).chain(n - max_mode..n).collect();
    let mut band = vec![0usize];
    for axis in 0..spec.axes() {
        let stride = spec.stride(axis);
        band = band.iter().flat_map(|&b| digits.iter().map(move |&m| b + m * stride)).collect();
    }
    band.sort_unstable();
    for &index in band.iter().filter(|&&i| i != 0) {
        coeffs[index] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    fft_inverse(spec, &mut coeffs);
    let raw = ScalarField::from_values_unchecked(spec, coeffs.iter().map(|v| v.re).collect());
    let mean = raw.mean();
    let centered = raw.map(|v| v - mean);
    let sup = centered.sup_norm();
    if sup == 0.0 {
        return Ok(ScalarField::zeros(spec));
    }
    Ok(centered.map(|v| v * amplitude / sup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec(n: usize, pts: usize) -> GridSpec {
        GridSpec::new(n, pts).unwrap()
    }

    #[test]
    fn grid_spec_rejects_bad_shapes() {
        assert!(GridSpec::new(1, 8).is_err());
        assert!(GridSpec::new(2, 6).is_err());
        assert!(GridSpec::new(2, 2).is_err());
        assert!(GridSpec::new(2, 8).is_ok());
    }

    #[test]
    fn row_major_axis_order() {
        let s = spec(2, 4);
        // last axis (y2) varies fastest
        assert_eq!(s.coordinates(1), vec![0.0, 0.0, 0.0, 0.25]);
        assert_eq!(s.coordinates(4), vec![0.0, 0.0, 0.25, 0.0]);
        assert_eq!(s.coordinates(64), vec![0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let s = spec(2, 8);
        let u = ScalarField::constant(s, 1.0);
        for j in 0..2 {
            assert!(partial_z(&u, j).sup_norm() < 1e-14);
            assert!(partial_zbar(&u, j).sup_norm() < 1e-14);
        }
    }

    #[test]
    fn wirtinger_of_cosine_in_x1() {
        let s = spec(2, 16);
        let u = ScalarField::from_fn(s, |x| (2.0 * PI * x[0]).cos());
        let expected = ScalarField::from_fn(s, |x| -PI * (2.0 * PI * x[0]).sin());
        for d in [partial_z(&u, 0), partial_zbar(&u, 0)] {
            assert!((&d.re() - &expected).sup_norm() < 1e-12);
            assert!(d.im().sup_norm() < 1e-12);
        }
    }

    #[test]
    fn independent_axis_gives_zero() {
        let s = spec(2, 16);
        let u = ScalarField::from_fn(s, |x| (2.0 * PI * x[3]).sin());
        assert!(partial_z(&u, 0).sup_norm() < 1e-12);
        // d/dz^2 of sin(2 pi y2) = -i/2 * 2 pi cos(2 pi y2)
        let d = partial_z(&u, 1);
        let expected = ScalarField::from_fn(s, |x| -PI * (2.0 * PI * x[3]).cos());
        assert!(d.re().sup_norm() < 1e-12);
        assert!((&d.im() - &expected).sup_norm() < 1e-12);
    }

    #[test]
    fn zbar_is_conjugate_of_z_for_real_fields() {
        let s = spec(2, 8);
        let u = random_band_limited(s, 3, 2, 1.0).unwrap();
        for j in 0..2 {
            let a = partial_zbar(&u, j);
            let b = partial_z(&u, j).conj();
            let diff = a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
            assert!(diff < 1e-13, "diff {diff}");
        }
    }

    #[test]
    fn mixed_derivatives_commute() {
        let s = spec(2, 16);
        let u = random_band_limited(s, 11, 3, 1.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let a = partial_z(&partial_zbar(&u, j), i);
                let b = partial_zbar(&partial_z(&u, i), j);
                let diff = a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
                assert!(diff < 1e-12, "({i},{j}) diff {diff}");
            }
        }
    }

    #[test]
    fn quadrature_examples() {
        let s = spec(2, 8);
        let one = ScalarField::constant(s, 1.0);
        assert!((integrate(&one, &one) - 1.0).abs() < 1e-15);
        let c = ScalarField::from_fn(s, |x| (2.0 * PI * x[0]).cos());
        assert!(integrate(&c, &one).abs() < 1e-15);
        let c2 = &c * &c;
        assert!((integrate(&c2, &one) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn band_limited_generator_contract() {
        let s = spec(2, 8);
        assert_eq!(random_band_limited(s, 1, 2, 0.0).unwrap().sup_norm(), 0.0);
        let a = random_band_limited(s, 42, 2, 0.3).unwrap();
        let b = random_band_limited(s, 42, 2, 0.3).unwrap();
        assert_eq!(a, b);
        assert!(a.mean().abs() < 1e-14);
        assert!(a.sup_norm() <= 0.3 + 1e-15);
        assert!(random_band_limited(s, 1, 4, 1.0).is_err());
    }

    #[test]
    fn fft_round_trip() {
        let s = spec(2, 8);
        let u = random_band_limited(s, 5, 3, 1.0).unwrap();
        let back = Spectrum::of_real(&u).into_field().re();
        assert!((&back - &u).sup_norm() < 1e-14);
    }
}
