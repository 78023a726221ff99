//! Periodic lattices on `[-L, L)^N`, sampled fields and the unitary DFT.
//!
//! Transform convention (used by every multiplier in the crate):
//!
//! ```text
//! û_k = n^{-N/2} Σ_j u_j exp(-2πi j·k / n)
//! u_j = n^{-N/2} Σ_k û_k exp(+2πi j·k / n)
//! ```
//!
//! Coefficients are stored in FFT order, index `k` along an axis maps to the
//! physical wavenumber `π k / L` for `k < n/2` and `π (k - n) / L` otherwise.
//! With this convention `h^N Σ |u_j|² = h^N Σ |û_k|²`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Chunk length used by all deterministic reductions.
const SUM_CHUNK: usize = 4096;

/// Sum `f(i)` for `i in 0..len` with a summation order that does not depend
/// on the number of worker threads.
pub(crate) fn det_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if len <= SUM_CHUNK {
        return (0..len).map(&f).sum();
    }
    let chunks = len.div_ceil(SUM_CHUNK);
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * SUM_CHUNK;
            let hi = (lo + SUM_CHUNK).min(len);
            (lo..hi).map(&f).sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    extent: f64,
}

impl Grid {
    /// `dim` in 1..=3, `n` even, `extent` (the half-width `L`) positive.
    pub fn new(dim: usize, n: usize, extent: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per dimension must be even and >= 2, got {n}"
            )));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidGrid(format!("extent must be positive, got {extent}")));
        }
        if n.checked_pow(dim as u32).is_none() {
            return Err(Error::InvalidGrid("grid too large".into()));
        }
        Ok(Self { dim, n, extent })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.n as f64
    }

    /// `h^N`, the quadrature weight of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total number of lattice points `n^N`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.extent + i as f64 * self.spacing()
    }

    /// Signed integer frequency of FFT index `j` along one axis.
    pub fn frequency_index(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    pub fn wavenumber(&self, j: usize) -> f64 {
        std::f64::consts::PI * self.frequency_index(j) as f64 / self.extent
    }

    /// Row-major multi-index of a flat index; unused axes are zero.
    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rest = flat;
        for a in (0..self.dim).rev() {
            idx[a] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn position(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.coordinate(idx[a]);
        }
        x
    }

    pub fn radius(&self, flat: usize) -> f64 {
        let x = self.position(flat);
        x.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Integer `Σ k_a²` of the spectral index `flat` (wavenumber units `π/L`).
    pub fn frequency_norm2(&self, flat: usize) -> u64 {
        let idx = self.multi_index(flat);
        (0..self.dim)
            .map(|a| {
                let k = self.frequency_index(idx[a]);
                (k * k) as u64
            })
            .sum()
    }

    /// `|k|²` of the spectral index `flat`.
    pub fn k_squared(&self, flat: usize) -> f64 {
        let s = std::f64::consts::PI / self.extent;
        self.frequency_norm2(flat) as f64 * s * s
    }

    /// Values of `f(|k|²)` in spectral storage order.
    pub fn multiplier<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.k_squared(i))).collect()
    }

    /// Same spacing, twice the points per axis: `[-2L, 2L)^N`.
    pub fn doubled(&self) -> Grid {
        Grid {
            dim: self.dim,
            n: 2 * self.n,
            extent: 2.0 * self.extent,
        }
    }

    /// Flat index of the point nearest the origin, `(n/2, ..., n/2)`.
    pub fn center_index(&self) -> usize {
        let mut flat = 0;
        for _ in 0..self.dim {
            flat = flat * self.n + self.n / 2;
        }
        flat
    }

    /// True for points on the outermost lattice layer of the box.
    pub fn on_boundary(&self, flat: usize) -> bool {
        let idx = self.multi_index(flat);
        (0..self.dim).any(|a| idx[a] == 0 || idx[a] == self.n - 1)
    }
}

/// Real samples on a [`Grid`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(
                "values",
                format!("expected {} samples, got {}", grid.len(), values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Sample `f(x)` at every lattice point; `x` has `dim` entries.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        let d = grid.dim();
        let values = (0..grid.len())
            .map(|i| f(&grid.position(i)[..d]))
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, t: f64) -> RealField {
        self.map(|v| t * v)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> RealField {
        RealField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn abs(&self) -> RealField {
        self.map(f64::abs)
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &RealField) -> Result<RealField> {
        same_grid(&self.grid, &other.grid)?;
        Ok(RealField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + t * b)
                .collect(),
        })
    }

    /// Largest `|v|` on the outer lattice layer relative to `max |v|`.
    pub fn boundary_ratio(&self) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let edge = (0..self.grid.len())
            .filter(|&i| self.grid.on_boundary(i))
            .fold(0.0_f64, |a, i| a.max(self.values[i].abs()));
        edge / peak
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }
}

/// DFT coefficients of a field in FFT storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(invalid(
                "coeffs",
                format!("expected {} coefficients, got {}", grid.len(), coeffs.len()),
            ));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Multiply every coefficient by `m[i]`.
    pub fn scale_by(&mut self, m: &[f64]) {
        self.coeffs
            .par_iter_mut()
            .zip(m.par_iter())
            .for_each(|(c, &w)| *c *= w);
    }

    /// `h^N Σ w(|k|²) |û_k|²`.
    pub fn weighted_energy<F>(&self, w: F) -> f64
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let g = self.grid;
        g.cell_volume() * det_sum(g.len(), |i| w(g.k_squared(i)) * self.coeffs[i].norm_sqr())
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                PLANNER.with(|p| {
                    let mut p = p.borrow_mut();
                    if inverse {
                        p.plan_fft_inverse(n)
                    } else {
                        p.plan_fft_forward(n)
                    }
                })
            })
            .clone()
    })
}

/// In-place unitary N-D transform of a row-major cube of side `n`.
///
/// Each pass transforms the contiguous axis and then rotates the axes so the
/// next one becomes contiguous; after `dim` passes the layout is restored.
pub(crate) fn fft_nd(buf: &mut Vec<Complex64>, dim: usize, n: usize, inverse: bool) {
    let total = buf.len();
    debug_assert_eq!(total, n.pow(dim as u32));
    let fft = plan(n, inverse);
    let rest = total / n;
    let lines_per_task = (SUM_CHUNK / n).max(1);
    let mut tmp = vec![Complex64::new(0.0, 0.0); if dim > 1 { total } else { 0 }];
    for _ in 0..dim {
        buf.par_chunks_mut(n * lines_per_task).for_each(|block| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(block, &mut scratch);
        });
        if dim > 1 {
            let src = &*buf;
            tmp.par_chunks_mut(rest).enumerate().for_each(|(q, out)| {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = src[r * n + q];
                }
            });
            std::mem::swap(buf, &mut tmp);
        }
    }
    let scale = (n as f64).powf(-(dim as f64) / 2.0);
    buf.par_iter_mut().for_each(|c| *c *= scale);
}

pub fn forward_transform(f: &RealField) -> SpectralField {
    let g = *f.grid();
    let mut buf: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut buf, g.dim(), g.n(), false);
    SpectralField { grid: g, coeffs: buf }
}

/// Inverse transform; the imaginary part (round-off for Hermitian input) is dropped.
pub fn inverse_transform(s: &SpectralField) -> RealField {
    let g = *s.grid();
    let mut buf = s.coeffs().to_vec();
    fft_nd(&mut buf, g.dim(), g.n(), true);
    RealField::from_raw(g, buf.into_iter().map(|c| c.re).collect())
}

/// Apply the Fourier multiplier `m` (spectral storage order) to `u`.
pub fn apply_multiplier(u: &RealField, m: &[f64]) -> RealField {
    let mut s = forward_transform(u);
    s.scale_by(m);
    inverse_transform(&s)
}

/// `∂f/∂x_axis` by the multiplier `i k_axis`; the Nyquist mode is dropped.
pub fn spectral_derivative(f: &RealField, axis: usize) -> Result<RealField> {
    let g = *f.grid();
    if axis >= g.dim() {
        return Err(invalid("axis", format!("axis {axis} out of range for N = {}", g.dim())));
    }
    let mut s = forward_transform(f);
    let half = (g.n() / 2) as i64;
    s.coeffs_mut().par_iter_mut().enumerate().for_each(|(i, c)| {
        let j = g.multi_index(i)[axis];
        let k = g.frequency_index(j);
        *c = if k == -half {
            Complex64::new(0.0, 0.0)
        } else {
            *c * Complex64::new(0.0, g.wavenumber(j))
        };
    });
    Ok(inverse_transform(&s))
}

/// `(h^N Σ |f_i|^q)^{1/q}`, `q >= 1`.
pub fn lp_trace_norm(f: &RealField, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(invalid("q", format!("norm exponent must be >= 1, got {q}")));
    }
    let g = f.grid();
    let v = f.values();
    let s = if q == 2.0 {
        det_sum(v.len(), |i| v[i] * v[i])
    } else {
        det_sum(v.len(), |i| v[i].abs().powf(q))
    };
    Ok((g.cell_volume() * s).powf(1.0 / q))
}

/// `h^N Σ f_i g_i`.
pub fn l2_inner(f: &RealField, g: &RealField) -> Result<f64> {
    same_grid(f.grid(), g.grid())?;
    Ok(l2_inner_raw(f.grid(), f.values(), g.values()))
}

pub(crate) fn l2_inner_raw(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_volume() * det_sum(a.len(), |i| a[i] * b[i])
}
