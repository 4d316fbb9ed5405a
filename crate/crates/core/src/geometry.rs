//! Hermitian metric fields and their Chern scalar curvature.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Derivative, GridSpec, ScalarField, Spectrum};
use crate::operators::complex_laplacian;

/// Tolerance on `|g_{i jbar} - conj(g_{j ibar})|`, relative to the entry size.
const HERMITIAN_TOL: f64 = 1e-14;

/// Grid points factored per parallel task.
const FACTOR_CHUNK: usize = 4096;

/// One factorization task: first grid index, its `log det` slice, and its
/// slices of the inverse entries.
type FactorTask<'a> = (usize, &'a mut [f64], Vec<&'a mut [Complex64]>);

/// A field of positive-definite Hermitian matrices `g_{i jbar}`.
///
/// The inverse coefficients `g^{i jbar}` (normalized so that
/// `sum_j g^{i jbar} g_{k jbar} = delta_ik`) and `log det g` are computed once
/// at construction by a pointwise Cholesky factorization.
#[derive(Debug, Clone)]
pub struct HermitianMetricField {
    spec: GridSpec,
    entries: Vec<ComplexField>,
    inverse: Vec<ComplexField>,
    log_det: ScalarField,
}

/// Outcome of factoring one `n x n` Hermitian matrix.
enum PointFactor {
    Ok { log_det: f64 },
    NotPositive,
}

/// Cholesky `g - shift I = L L^H`, then `(g - shift I)^{-1} = L^{-H} L^{-1}`.
/// Writes the inverse coefficients `g^{i jbar} = (g^{-1})_{j i}` into `inv`
/// when it is provided. `work` holds `2 n^2` entries of scratch.
#[inline(always)]
fn factor_point(
    g: &[Complex64],
    n: usize,
    shift: f64,
    work: &mut [Complex64],
    inv: Option<&mut [Complex64]>,
) -> PointFactor {
    let (l, linv) = work.split_at_mut(n * n);
    l.iter_mut().for_each(|v| *v = Complex64::default());
    let mut det = 1.0;
    for j in 0..n {
        let mut d = g[j * n + j].re - shift;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if d <= 0.0 || !d.is_finite() {
            return PointFactor::NotPositive;
        }
        let djj = d.sqrt();
        l[j * n + j] = Complex64::new(djj, 0.0);
        det *= d;
        for i in j + 1..n {
            let mut s = g[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / djj;
        }
    }
    if let Some(inv) = inv {
        // L^{-1}, lower triangular
        linv.iter_mut().for_each(|v| *v = Complex64::default());
        for i in 0..n {
            linv[i * n + i] = Complex64::new(1.0 / l[i * n + i].re, 0.0);
            for j in (0..i).rev() {
                let mut s = Complex64::default();
                for k in j..i {
                    s += l[i * n + k] * linv[k * n + j];
                }
                linv[i * n + j] = -s / l[i * n + i].re;
            }
        }
        for r in 0..n {
            for c in 0..n {
                let mut s = Complex64::default();
                for k in r.max(c)..n {
                    s += linv[k * n + r].conj() * linv[k * n + c];
                }
                // (g^{-1})_{rc} is the coefficient g^{c rbar}
                inv[c * n + r] = s;
            }
        }
    }
    PointFactor::Ok { log_det: det.ln() }
}

/// [`factor_point`] with literal small dimensions so the compiler can unroll
/// it.
fn factor_small(
    g: &[Complex64],
    n: usize,
    shift: f64,
    work: &mut [Complex64],
    inv: Option<&mut [Complex64]>,
) -> PointFactor {
    match n {
        2 => factor_point(g, 2, shift, work, inv),
        3 => factor_point(g, 3, shift, work, inv),
        _ => factor_point(g, n, shift, work, inv),
    }
}

impl HermitianMetricField {
    /// Builds a metric from its `n^2` component fields, stored row-major
    /// (`entries[i * n + j] = g_{i jbar}`).
    pub fn new(spec: GridSpec, entries: Vec<ComplexField>) -> Result<Self> {
        let n = spec.dim();
        if entries.len() != n * n || entries.iter().any(|e| e.spec() != spec) {
            return Err(Error::ShapeMismatch);
        }
        for i in 0..n {
            for j in i..n {
                let a = entries[i * n + j].values();
                let b = entries[j * n + i].values();
                // squared norms keep the scan free of square roots
                let bound = |x: &Complex64| HERMITIAN_TOL * HERMITIAN_TOL * x.norm_sqr().max(1.0);
                if let Some(index) = a.iter().zip(b).position(|(x, y)| {
                    let gap = (x - y.conj()).norm_sqr();
                    gap.is_nan() || gap > bound(x)
                }) {
                    let asymmetry = (a[index] - b[index].conj()).norm();
                    return Err(Error::NotHermitian { index, asymmetry });
                }
            }
        }

        // factor in chunks, writing each chunk straight into disjoint slices
        // of the output fields
        let len = spec.len();
        let mut inverse_values = vec![vec![Complex64::default(); len]; n * n];
        let mut log_det_values = vec![0.0; len];
        let mut tasks: Vec<FactorTask> = log_det_values
            .chunks_mut(FACTOR_CHUNK)
            .enumerate()
            .map(|(b, ld)| (b * FACTOR_CHUNK, ld, Vec::with_capacity(n * n)))
            .collect();
        for field in inverse_values.iter_mut() {
            for (task, part) in tasks.iter_mut().zip(field.chunks_mut(FACTOR_CHUNK)) {
                task.2.push(part);
            }
        }
        let failure = tasks
            .into_par_iter()
            .filter_map(|(lo, log_det, mut inv)| {
                let mut gbuf = vec![Complex64::default(); n * n];
                let mut work = vec![Complex64::default(); 2 * n * n];
                let mut out = vec![Complex64::default(); n * n];
                for (offset, ld) in log_det.iter_mut().enumerate() {
                    let idx = lo + offset;
                    for (k, e) in entries.iter().enumerate() {
                        gbuf[k] = e.values()[idx];
                    }
                    match factor_small(&gbuf, n, 0.0, &mut work, Some(&mut out)) {
                        PointFactor::Ok { log_det } => *ld = log_det,
                        PointFactor::NotPositive => return Some(idx),
                    }
                    for (field, v) in inv.iter_mut().zip(&out) {
                        field[offset] = *v;
                    }
                }
                None
            })
            .min();
        if let Some(index) = failure {
            return Err(Error::NotPositiveDefinite { index, coords: spec.coordinates(index) });
        }
        let log_det = ScalarField::from_values_unchecked(spec, log_det_values);
        let inverse = inverse_values.into_iter().map(|v| ComplexField::from_values_unchecked(spec, v)).collect();
        Ok(Self { spec, entries, inverse, log_det })
    }

    pub fn flat(spec: GridSpec) -> Self {
        let n = spec.dim();
        let one = ScalarField::constant(spec, 1.0);
        let diag: Vec<_> = (0..n).map(|_| one.clone()).collect();
        Self::diagonal(&diag).expect("identity metric is valid")
    }

    /// A metric that is diagonal in the coordinate frame.
    pub fn diagonal(diag: &[ScalarField]) -> Result<Self> {
        let spec = diag.first().ok_or(Error::ShapeMismatch)?.spec();
        let n = spec.dim();
        if diag.len() != n {
            return Err(Error::ShapeMismatch);
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, d) in diag.iter().enumerate() {
            for j in 0..n {
                entries.push(if i == j { d.to_complex() } else { ComplexField::zeros(spec) });
            }
        }
        Self::new(spec, entries)
    }

    /// `e^phi` times the identity.
    pub fn conformally_flat(phi: &ScalarField) -> Result<Self> {
        Self::flat(phi.spec()).conformal(phi)
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// `g_{i jbar}`.
    pub fn entry(&self, i: usize, j: usize) -> &ComplexField {
        &self.entries[i * self.dim() + j]
    }

    /// `g^{i jbar}`, the coefficient contracted against `d_i dbar_j`.
    pub fn inverse_entry(&self, i: usize, j: usize) -> &ComplexField {
        &self.inverse[i * self.dim() + j]
    }

    pub fn log_det(&self) -> &ScalarField {
        &self.log_det
    }

    /// Realizes `e^f g`. A positive pointwise factor preserves positivity, so
    /// the stored factorization is rescaled instead of recomputed: the inverse
    /// picks up `e^{-f}` and `log det` gains `n f`.
    pub fn conformal(&self, f: &ScalarField) -> Result<Self> {
        assert_eq!(self.spec, f.spec(), "metric and factor live on different grids");
        let factor = f.map(f64::exp);
        let bad = factor.values().iter().position(|&v| !(v.is_finite() && v > 0.0 && (1.0 / v).is_finite()));
        if let Some(index) = bad {
            return Err(Error::NotPositiveDefinite { index, coords: self.spec.coordinates(index) });
        }
        let scale = |fields: &[ComplexField], inverse: bool| -> Vec<ComplexField> {
            fields
                .iter()
                .map(|e| {
                    let values = e
                        .values()
                        .par_iter()
                        .zip(factor.values().par_iter())
                        .map(|(v, s)| if inverse { v / *s } else { v * *s })
                        .collect();
                    ComplexField::from_values_unchecked(self.spec, values)
                })
                .collect()
        };
        let n = self.dim() as f64;
        let log_det = self.log_det.values().par_iter().zip(f.values().par_iter()).map(|(l, fv)| l + n * fv).collect();
        Ok(Self {
            spec: self.spec,
            entries: scale(&self.entries, false),
            inverse: scale(&self.inverse, true),
            log_det: ScalarField::from_values_unchecked(self.spec, log_det),
        })
    }

    /// `lambda g` for constant `lambda > 0`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        self.conformal(&ScalarField::constant(self.spec, lambda.ln()))
    }

    /// Checks that the smallest eigenvalue stays at or above `margin` at every
    /// grid point (by factoring `g - margin I`).
    pub fn check_margin(&self, margin: f64) -> Result<()> {
        let n = self.dim();
        // tolerate roundoff when the minimum sits exactly on the margin
        let shift = margin - 1e-12 * margin.abs().max(1.0);
        let bad = (0..self.spec.len())
            .into_par_iter()
            .map_init(
                || (vec![Complex64::default(); n * n], vec![Complex64::default(); 2 * n * n]),
                |(g, work), idx| {
                    for (k, e) in self.entries.iter().enumerate() {
                        g[k] = e.values()[idx];
                    }
                    matches!(factor_small(g, n, shift, work, None), PointFactor::NotPositive).then_some(idx)
                },
            )
            .flatten()
            .min();
        match bad {
            Some(index) => Err(Error::LostPositivity { index, coords: self.spec.coordinates(index), margin }),
            None => Ok(()),
        }
    }
}

/// A base metric together with a conformal factor `f`, standing for `e^f g`.
#[derive(Debug, Clone)]
pub struct ConformalMetric {
    pub base: HermitianMetricField,
    pub factor: ScalarField,
}

impl ConformalMetric {
    pub fn new(base: HermitianMetricField, factor: ScalarField) -> Self {
        Self { base, factor }
    }

    pub fn realize(&self) -> Result<HermitianMetricField> {
        self.base.conformal(&self.factor)
    }
}

/// Density of `omega^n / n!` against `dx1 dy1 ... dxn dyn`, namely
/// `2^n det g`.
pub fn volume_density(g: &HermitianMetricField) -> ScalarField {
    let scale = 2f64.powi(g.dim() as i32);
    g.log_det().map(|l| scale * l.exp())
}

/// Chern scalar curvature `s = -g^{i jbar} d_i dbar_j log det g`.
pub fn chern_scalar(g: &HermitianMetricField) -> Result<ScalarField> {
    Ok(-&complex_laplacian(g, g.log_det())?)
}

/// Chern scalar curvature from the full curvature tensor
///
/// ```text
/// Theta_{i jbar k lbar} = -d_i dbar_j g_{k lbar} + g^{p qbar} (d_i g_{k qbar}) (dbar_j g_{p lbar})
/// s = g^{i jbar} g^{k lbar} Theta_{i jbar k lbar}
/// ```
///
/// Slower than [`chern_scalar`] and computed along a separate path (metric
/// entry derivatives instead of `log det`); used as a cross-check.
pub fn chern_curvature_oracle(g: &HermitianMetricField) -> ScalarField {
    let n = g.dim();
    let spec = g.spec();
    // diagonal entries of a Hermitian metric are real
    let spectra: Vec<Spectrum> = (0..n * n)
        .map(|m| {
            let (k, l) = (m / n, m % n);
            if k == l {
                Spectrum::of_real(&g.entry(k, k).re())
            } else {
                Spectrum::of_complex(g.entry(k, l))
            }
        })
        .collect();
    let inv = |i: usize, j: usize| g.inverse_entry(i, j).values();

    let mut total = vec![0.0; spec.len()];
    let mut d = Vec::new();

    // -g^{i jbar} g^{k lbar} d_i dbar_j g_{k lbar}. The (j, i, l, k) term is
    // the conjugate of the (i, j, k, l) term, so each pair is evaluated once
    // and contributes twice its real part. The self-paired terms (i, i, k, k)
    // are real and go two per transform.
    for k in 0..n {
        for i in (0..n).step_by(2) {
            let akk = inv(k, k);
            let aii = inv(i, i);
            if i + 1 < n {
                spectra[k * n + k].real_pair_into(Derivative::ZZbar(i, i), Derivative::ZZbar(i + 1, i + 1), &mut d);
                let bii = inv(i + 1, i + 1);
                total
                    .par_iter_mut()
                    .zip(d.par_iter())
                    .zip(aii.par_iter().zip(bii.par_iter()).zip(akk.par_iter()))
                    .for_each(|((t, dv), ((a1, b1), a2))| *t -= (a1 * a2).re * dv.re + (b1 * a2).re * dv.im);
            } else {
                spectra[k * n + k].derivative_into(Derivative::ZZbar(i, i), &mut d);
                total
                    .par_iter_mut()
                    .zip(d.par_iter())
                    .zip(aii.par_iter().zip(akk.par_iter()))
                    .for_each(|((t, dv), (a1, a2))| *t -= (a1 * a2).re * dv.re);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mirror = (j, i, l, k);
                    if mirror <= (i, j, k, l) {
                        continue;
                    }
                    spectra[k * n + l].derivative_into(Derivative::ZZbar(i, j), &mut d);
                    let (aij, akl) = (inv(i, j), inv(k, l));
                    total
                        .par_iter_mut()
                        .zip(d.par_iter())
                        .zip(aij.par_iter().zip(akl.par_iter()))
                        .for_each(|((t, dv), (a1, a2))| *t -= 2.0 * (a1 * a2 * dv).re);
                }
            }
        }
    }

    // dz[(i * n + k) * n + q] = d_i g_{k qbar}; the barred derivatives follow
    // from dbar_j g_{p lbar} = conj(d_j g_{l pbar})
    let dz: Vec<ComplexField> =
        (0..n * n * n).map(|m| spectra[m % (n * n)].derivative(Derivative::Z(m / (n * n)))).collect();

    // + g^{i jbar} g^{k lbar} g^{p qbar} (d_i g_{k qbar}) (dbar_j g_{p lbar}),
    // contracted one index at a time on values gathered per point
    let inv_values: Vec<&[Complex64]> = (0..n * n).map(|m| inv(m / n, m % n)).collect();
    let dz_values: Vec<&[Complex64]> = dz.iter().map(ComplexField::values).collect();
    let n3 = n * n * n;
    total.par_iter_mut().enumerate().for_each_init(
        || vec![Complex64::default(); n * n + 3 * n3],
        |buf, (idx, t)| {
            let (a, d) = buf.split_at_mut(n * n);
            for (slot, field) in a.iter_mut().zip(&inv_values) {
                *slot = field[idx];
            }
            for (slot, field) in d.iter_mut().zip(&dz_values) {
                *slot = field[idx];
            }
            // literal dimensions let the compiler unroll the contraction
            *t += match n {
                2 => quadratic_term(2, a, d),
                3 => quadratic_term(3, a, d),
                _ => quadratic_term(n, a, d),
            };
        },
    );

    ScalarField::from_values_unchecked(spec, total)
}

/// `g^{i jbar} g^{k lbar} g^{p qbar} (d_i g_{k qbar}) (dbar_j g_{p lbar})` at
/// one point, from `a[i * n + j] = g^{i jbar}` and
/// `dz[(i * n + k) * n + q] = d_i g_{k qbar}`, using
/// `dbar_j g_{p lbar} = conj(d_j g_{l pbar})`. `dz` is followed by `2 n^3`
/// entries of scratch.
#[inline(always)]
fn quadratic_term(n: usize, a: &[Complex64], dz: &mut [Complex64]) -> f64 {
    let n3 = n * n * n;
    let (d, rest) = dz.split_at_mut(n3);
    let (left, right) = rest.split_at_mut(n3);
    let (a, d, left, right) = (&a[..n * n], &d[..n3], &mut left[..n3], &mut right[..n3]);
    for j in 0..n {
        for k in 0..n {
            for q in 0..n {
                // left[j, k, q] = sum_i g^{i jbar} d_i g_{k qbar}
                // right[j, k, q] = sum_l g^{k lbar} dbar_j g_{q lbar}
                let mut lsum = Complex64::default();
                let mut rsum = Complex64::default();
                for m in 0..n {
                    lsum += a[m * n + j] * d[(m * n + k) * n + q];
                    rsum += a[k * n + m] * d[(j * n + m) * n + q].conj();
                }
                left[(j * n + k) * n + q] = lsum;
                right[(j * n + k) * n + q] = rsum;
            }
        }
    }
    let mut acc = 0.0;
    for jk in 0..n * n {
        for p in 0..n {
            let mut inner = Complex64::default();
            for q in 0..n {
                inner += left[jk * n + q] * a[p * n + q];
            }
            acc += (inner * right[jk * n + p]).re;
        }
    }
    acc
}

/// Chern scalar curvature of `e^f g` from that of `g`:
/// `s_f = e^{-f} (s_g - n box_g f)`.
pub fn conformal_scalar(s_g: &ScalarField, f: &ScalarField, g: &HermitianMetricField) -> Result<ScalarField> {
    let n = g.dim() as f64;
    let box_f = complex_laplacian(g, f)?;
    let values = s_g
        .values()
        .par_iter()
        .zip(box_f.values().par_iter())
        .zip(f.values().par_iter())
        .map(|((s, b), fv)| (-fv).exp() * (s - n * b))
        .collect();
    Ok(ScalarField::from_values_unchecked(g.spec(), values))
}
