//! FFT plumbing and Wirtinger derivative symbols.
//!
//! Coordinates are `z^j = x^j + i y^j` with unit periods, and the Wirtinger
//! operators are
//!
//! ```text
//! d/dz^j    = (d/dx^j - i d/dy^j) / 2
//! d/dzbar^j = (d/dx^j + i d/dy^j) / 2
//! ```
//!
//! This is the only place the convention is written down; every other module
//! goes through [`Derivative`].
//!
//! First derivatives use the symbol `2 pi i k` with the Nyquist coefficient
//! set to zero, so a real field has a real derivative. The diagonal mixed
//! derivative `d^2/dz^j dzbar^j = (d_xx + d_yy) / 4` keeps the full second
//! derivative symbol `-(2 pi k)^2`, Nyquist included. Every symbol is even in
//! `k`, which makes each multiplier equal to its own transpose; the discrete
//! adjoints in `operators` rely on that.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::{ComplexField, GridSpec, ScalarField};

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

static PLANS: Lazy<Mutex<HashMap<usize, Arc<Plans>>>> = Lazy::new(|| Mutex::new(HashMap::new()));

fn plans(len: usize) -> Arc<Plans> {
    let mut cache = PLANS.lock().expect("fft plan cache poisoned");
    cache
        .entry(len)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans { forward: planner.plan_fft_forward(len), inverse: planner.plan_fft_inverse(len) })
        })
        .clone()
}

/// Complex values per parallel chunk when transforming the trailing axes.
const TILE_ELEMS: usize = 32 * 1024;

/// Scratch for [`transform_local`].
struct LocalScratch {
    fft: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl LocalScratch {
    fn new(fft: &Arc<dyn Fft<f64>>, n: usize) -> Self {
        Self { fft: vec![Complex64::default(); fft.get_inplace_scratch_len()], buf: Vec::with_capacity(n * TILE) }
    }
}

/// Columns gathered per tile inside [`transform_local`].
const TILE: usize = 64;

fn is_zero(values: &[Complex64]) -> bool {
    values.iter().all(|v| v.re == 0.0 && v.im == 0.0)
}

/// Copies columns `col0..col0 + buf.len() / rows` of a row-major block with
/// `rows` rows of length `stride` into `buf`, one contiguous column after
/// another.
fn gather_columns(block: &[Complex64], stride: usize, col0: usize, rows: usize, buf: &mut [Complex64]) {
    let cols = buf.len() / rows;
    assert!(buf.len() == rows * cols && col0 + cols <= stride && block.len() >= rows * stride);
    for k in 0..rows {
        for c in 0..cols {
            // SAFETY: c * rows + k < rows * cols = buf.len() and
            // k * stride + col0 + c < rows * stride <= block.len()
            unsafe { *buf.get_unchecked_mut(c * rows + k) = *block.get_unchecked(k * stride + col0 + c) };
        }
    }
}

/// Inverse of [`gather_columns`].
fn scatter_columns(buf: &[Complex64], stride: usize, col0: usize, rows: usize, block: &mut [Complex64]) {
    let cols = buf.len() / rows;
    assert!(buf.len() == rows * cols && col0 + cols <= stride && block.len() >= rows * stride);
    for k in 0..rows {
        for c in 0..cols {
            // SAFETY: as in gather_columns
            unsafe { *block.get_unchecked_mut(k * stride + col0 + c) = *buf.get_unchecked(c * rows + k) };
        }
    }
}

/// Transforms every axis of a contiguous row-major block of `axes` axes with
/// `n` samples each. Meant for blocks that fit in cache.
fn transform_local(data: &mut [Complex64], n: usize, axes: usize, fft: &Arc<dyn Fft<f64>>, scratch: &mut LocalScratch) {
    let mut stride = 1;
    for _ in 0..axes {
        if stride == 1 {
            // band-limited spectra are mostly zero; dense rows fail the check
            // at their first entry
            for row in data.chunks_mut(n) {
                if !is_zero(row) {
                    fft.process_with_scratch(row, &mut scratch.fft);
                }
            }
        } else {
            for block in data.chunks_mut(n * stride) {
                let mut col0 = 0;
                while col0 < stride {
                    let cols = TILE.min(stride - col0);
                    // every slot is overwritten, so only the length matters
                    scratch.buf.resize(n * cols, Complex64::default());
                    gather_columns(block, stride, col0, n, &mut scratch.buf);
                    fft.process_with_scratch(&mut scratch.buf, &mut scratch.fft);
                    scatter_columns(&scratch.buf, stride, col0, n, block);
                    col0 += cols;
                }
            }
        }
        stride *= n;
    }
}

/// Raw pointer to the field being transformed, shared by tiles that touch
/// disjoint sets of indices.
#[derive(Clone, Copy)]
struct SharedField(*mut Complex64);
unsafe impl Send for SharedField {}
unsafe impl Sync for SharedField {}

/// Columns gathered per tile when transforming a leading axis. Rows of a
/// tile sit a multiple of 16 KB apart and compete for the same cache sets,
/// so tiles stay small.
const OUTER_TILE: usize = 32;

/// Multidimensional transform. The trailing half of the axes is transformed
/// block by block in place; each leading axis then gets its own pass over
/// tiles of `OUTER_TILE` columns, gathered, transformed and scattered back.
fn transform_axes(spec: GridSpec, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
    let n = spec.points();
    let inner_axes = spec.axes().div_ceil(2);
    let inner = n.pow(inner_axes as u32);

    let blocks_per_chunk = (TILE_ELEMS / inner).max(1);
    data.par_chunks_mut(inner * blocks_per_chunk).for_each_init(
        || LocalScratch::new(fft, n),
        |scratch, chunk| {
            for block in chunk.chunks_mut(inner).filter(|b| !is_zero(b)) {
                transform_local(block, n, inner_axes, fft, scratch);
            }
        },
    );

    let len = data.len();
    let mut stride = inner;
    while stride < len {
        let shared = SharedField(data.as_mut_ptr());
        let tiles = stride.div_ceil(OUTER_TILE);
        let jobs = len / (n * stride) * tiles;
        (0..jobs).into_par_iter().for_each_init(
            || (LocalScratch::new(fft, n), Vec::with_capacity(n * OUTER_TILE)),
            |(scratch, tile), job| {
                // rebinding captures the whole Send wrapper rather than its
                // raw pointer field
                #[allow(clippy::redundant_locals)]
                let shared = shared;
                let c0 = job % tiles * OUTER_TILE;
                let width = OUTER_TILE.min(stride - c0);
                let base = job / tiles * n * stride + c0;
                // SAFETY: job `job` touches only `base + k * stride + c` for
                // `k < n`, `c < width`; distinct jobs differ in their block or
                // in their column range, and every index stays below `len`.
                let row = |k: usize| unsafe {
                    debug_assert!(base + k * stride + width <= len);
                    std::slice::from_raw_parts_mut(shared.0.add(base + k * stride), width)
                };
                // every slot is overwritten, so only the length matters
                tile.resize(n * width, Complex64::default());
                for k in 0..n {
                    for (c, v) in row(k).iter().enumerate() {
                        // SAFETY: c * n + k < width * n = tile.len()
                        unsafe { *tile.get_unchecked_mut(c * n + k) = *v };
                    }
                }
                if is_zero(tile) {
                    return;
                }
                fft.process_with_scratch(tile, &mut scratch.fft);
                for k in 0..n {
                    for (c, v) in row(k).iter_mut().enumerate() {
                        // SAFETY: as above
                        *v = unsafe { *tile.get_unchecked(c * n + k) };
                    }
                }
            },
        );
        stride *= n;
    }
}

pub(crate) fn forward(spec: GridSpec, data: &mut [Complex64]) {
    debug_assert_eq!(data.len(), spec.len());
    transform_axes(spec, data, &plans(spec.points()).forward);
}

/// Inverse transform, normalized so that `inverse(forward(u)) == u`.
pub(crate) fn inverse(spec: GridSpec, data: &mut [Complex64]) {
    inverse_unnormalized(spec, data);
    let scale = 1.0 / spec.len() as f64;
    data.par_iter_mut().for_each(|v| *v *= scale);
}

/// Inverse transform without the `1 / len` factor; callers fold it into a
/// multiplier they apply anyway.
fn inverse_unnormalized(spec: GridSpec, data: &mut [Complex64]) {
    debug_assert_eq!(data.len(), spec.len());
    transform_axes(spec, data, &plans(spec.points()).inverse);
}

/// Spectral derivative operators in complex coordinates. Indices are
/// zero-based complex coordinate indices (`0..n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    /// `d/dz^j`
    Z(usize),
    /// `d/dzbar^j`
    Zbar(usize),
    /// `d^2/dz^i dzbar^j`
    ZZbar(usize, usize),
}

/// Symbol lookup by linear index. Grid sizes are powers of two and the axes
/// run `x^1, y^1, x^2, ...` with the last fastest, so the `(x^j, y^j)` digit
/// pair of a linear index is one contiguous bit field. Each table is indexed
/// by that field.
struct SymbolTables {
    shift: Vec<u32>,
    mask: usize,
    z: Vec<Complex64>,
    zbar: Vec<Complex64>,
    /// `(d_xx + d_yy) / 4`, Nyquist kept.
    diag: Vec<Complex64>,
    ones: Vec<Complex64>,
}

/// The symbol of one operator as a product of two table lookups.
struct Multiplier<'a> {
    left: &'a [Complex64],
    left_shift: u32,
    right: &'a [Complex64],
    right_shift: u32,
    mask: usize,
}

impl Multiplier<'_> {
    #[inline]
    fn at(&self, idx: usize) -> Complex64 {
        self.left[(idx >> self.left_shift) & self.mask] * self.right[(idx >> self.right_shift) & self.mask]
    }

    /// Length of the blocks used by [`Multiplier::inner_table`]: one sweep of
    /// the last coordinate pair.
    fn block(&self) -> usize {
        self.mask + 1
    }

    /// `scale` times the factors that vary inside a block (those on the last
    /// coordinate pair), by offset in the block.
    fn inner_table(&self, scale: f64) -> Vec<Complex64> {
        let pick = |table: &[Complex64], shift: u32, off: usize| {
            if shift == 0 {
                table[off]
            } else {
                Complex64::new(1.0, 0.0)
            }
        };
        (0..self.block())
            .map(|off| pick(self.left, self.left_shift, off) * pick(self.right, self.right_shift, off) * scale)
            .collect()
    }

    /// The factors that are constant on the block starting at `base`.
    #[inline]
    fn outer(&self, base: usize) -> Complex64 {
        let pick = |table: &[Complex64], shift: u32| {
            if shift == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                table[(base >> shift) & self.mask]
            }
        };
        pick(self.left, self.left_shift) * pick(self.right, self.right_shift)
    }
}

impl SymbolTables {
    fn new(spec: GridSpec) -> Self {
        let n = spec.points();
        let bits = n.trailing_zeros();
        // 2 pi k with the Nyquist entry zeroed
        let first: Vec<f64> =
            (0..n).map(|m| if 2 * m == n { 0.0 } else { 2.0 * PI * spec.wavenumber(m) as f64 }).collect();
        let second: Vec<f64> = (0..n)
            .map(|m| {
                let k = 2.0 * PI * spec.wavenumber(m) as f64;
                -k * k
            })
            .collect();
        let mut z = Vec::with_capacity(n * n);
        let mut zbar = Vec::with_capacity(n * n);
        let mut diag = Vec::with_capacity(n * n);
        for dx in 0..n {
            for dy in 0..n {
                z.push(Complex64::new(0.5 * first[dy], 0.5 * first[dx]));
                zbar.push(Complex64::new(-0.5 * first[dy], 0.5 * first[dx]));
                diag.push(Complex64::new(0.25 * (second[dx] + second[dy]), 0.0));
            }
        }
        let axes = spec.axes();
        let shift = (0..spec.dim()).map(|j| (axes - 2 * j - 2) as u32 * bits).collect();
        Self { shift, mask: n * n - 1, z, zbar, diag, ones: vec![Complex64::new(1.0, 0.0); n * n] }
    }

    fn multiplier(&self, op: Derivative) -> Multiplier<'_> {
        let (left, i, right, j) = match op {
            Derivative::Z(j) => (&self.z, j, &self.ones, j),
            Derivative::Zbar(j) => (&self.zbar, j, &self.ones, j),
            Derivative::ZZbar(i, j) if i == j => (&self.diag, i, &self.ones, i),
            Derivative::ZZbar(i, j) => (&self.z, i, &self.zbar, j),
        };
        Multiplier { left, left_shift: self.shift[i], right, right_shift: self.shift[j], mask: self.mask }
    }

    fn symbol(&self, op: Derivative, idx: usize) -> Complex64 {
        self.multiplier(op).at(idx)
    }
}

/// Forward transform of a field, reusable for several derivatives.
#[derive(Debug, Clone)]
pub struct Spectrum {
    spec: GridSpec,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn of_real(u: &ScalarField) -> Self {
        let mut coeffs: Vec<Complex64> = u.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        forward(u.spec(), &mut coeffs);
        Self { spec: u.spec(), coeffs }
    }

    pub fn of_complex(u: &ComplexField) -> Self {
        let mut coeffs = u.values().to_vec();
        forward(u.spec(), &mut coeffs);
        Self { spec: u.spec(), coeffs }
    }

    /// An all-zero spectrum, used as an accumulator.
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, coeffs: vec![Complex64::default(); spec.len()] }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    /// Returns `op` applied to the underlying field.
    pub fn derivative(&self, op: Derivative) -> ComplexField {
        let mut out = Vec::new();
        self.derivative_into(op, &mut out);
        ComplexField::from_values_unchecked(self.spec, out)
    }

    /// Writes the grid values of `op` applied to the underlying field into
    /// `out`, reusing its allocation.
    pub fn derivative_into(&self, op: Derivative, out: &mut Vec<Complex64>) {
        check_op(self.spec, op);
        let tables = SymbolTables::new(self.spec);
        let multiplier = tables.multiplier(op);
        let inner = multiplier.inner_table(1.0 / self.spec.len() as f64);
        let block = multiplier.block();
        // every entry is overwritten below
        out.resize(self.coeffs.len(), Complex64::default());
        out.par_chunks_mut(block).zip(self.coeffs.par_chunks(block)).enumerate().for_each(|(b, (dst, src))| {
            let k = multiplier.outer(b * block);
            for ((o, c), t) in dst.iter_mut().zip(src).zip(&inner) {
                *o = c * (k * t);
            }
        });
        inverse_unnormalized(self.spec, out);
    }

    /// For the spectrum of a real field and two operators with real symbols
    /// (`ZZbar(i, i)`), writes `first(u) + i second(u)` into `out`: both real
    /// results from one inverse transform.
    pub fn real_pair_into(&self, first: Derivative, second: Derivative, out: &mut Vec<Complex64>) {
        for op in [first, second] {
            check_op(self.spec, op);
            assert!(matches!(op, Derivative::ZZbar(i, j) if i == j), "{op:?} does not have a real symbol");
        }
        let tables = SymbolTables::new(self.spec);
        let (ma, mb) = (tables.multiplier(first), tables.multiplier(second));
        let scale = 1.0 / self.spec.len() as f64;
        let (ta, tb) = (ma.inner_table(scale), mb.inner_table(scale));
        let block = ma.block();
        out.resize(self.coeffs.len(), Complex64::default());
        out.par_chunks_mut(block).zip(self.coeffs.par_chunks(block)).enumerate().for_each(|(b, (dst, src))| {
            let (ka, kb) = (ma.outer(b * block), mb.outer(b * block));
            for (((o, c), a), bb) in dst.iter_mut().zip(src).zip(&ta).zip(&tb) {
                *o = c * (ka * a + Complex64::i() * (kb * bb));
            }
        });
        inverse_unnormalized(self.spec, out);
    }

    /// `self += op(other)`, staying in Fourier space.
    pub fn accumulate(&mut self, op: Derivative, other: &Spectrum) {
        assert_eq!(self.spec, other.spec, "spectra live on different grids");
        check_op(self.spec, op);
        let tables = SymbolTables::new(self.spec);
        let multiplier = tables.multiplier(op);
        let inner = multiplier.inner_table(1.0);
        let block = multiplier.block();
        self.coeffs.par_chunks_mut(block).zip(other.coeffs.par_chunks(block)).enumerate().for_each(
            |(b, (dst, src))| {
                let k = multiplier.outer(b * block);
                for ((v, c), t) in dst.iter_mut().zip(src).zip(&inner) {
                    *v += c * (k * t);
                }
            },
        );
    }

    /// Rewrites every coefficient through `f`, which receives a lookup for
    /// the mode's derivative symbols.
    pub(crate) fn map_modes<F>(&mut self, f: F)
    where
        F: Fn(&dyn Fn(Derivative) -> Complex64, Complex64) -> Complex64 + Sync,
    {
        let tables = SymbolTables::new(self.spec);
        self.coeffs.par_iter_mut().enumerate().for_each(|(idx, v)| {
            let sym = |op: Derivative| tables.symbol(op, idx);
            *v = f(&sym, *v);
        });
    }

    pub fn into_field(mut self) -> ComplexField {
        inverse(self.spec, &mut self.coeffs);
        ComplexField::from_values_unchecked(self.spec, self.coeffs)
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }
}

fn check_op(spec: GridSpec, op: Derivative) {
    let n = spec.dim();
    let ok = match op {
        Derivative::Z(j) | Derivative::Zbar(j) => j < n,
        Derivative::ZZbar(i, j) => i < n && j < n,
    };
    assert!(ok, "derivative {op:?} out of range for complex dimension {n}");
}
