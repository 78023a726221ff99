//! Interaction kernels `W`, the potential `W ∗ u²` and the quartic term
//! `Q(u) = ∫ (W ∗ u²) u²`.
//!
//! Convolutions are free-space: the density is zero-padded to `[-2L, 2L)^N`
//! (same spacing), so every offset between two box points is a lattice offset
//! of the padded cell and no periodic image interferes.
//!
//! - Newton: `1/r = erf(αr)/r + erfc(αr)/r`. The smooth long-range part is
//!   sampled in real space over the whole padded cell; the short-range part
//!   enters through its exact transform `4π(1 - e^{-k²/4α²})/k²`. With
//!   `α² = π/(2Lh)` both neglected pieces are of size `e^{-πn}`.
//! - Yukawa: closed-form transform of the kernel cut at `R = 2L`; the error
//!   is of order `e^{-2μL}`.
//! - Tabulated: sampled in real space.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fracops::trace_energy_form;
use crate::grid::{det_sum, fft_nd, same_grid, Grid, RealField};

/// Radial samples `(r_i, W(r_i))`, linearly interpolated, zero beyond the last radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialTable {
    radii: Vec<f64>,
    values: Vec<f64>,
}

impl RadialTable {
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.len() != values.len() || radii.len() < 2 {
            return Err(Error::Format("table needs at least two (radius, value) rows".into()));
        }
        if radii[0] < 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("radii must be nonnegative and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Format("kernel values must be finite and >= 0".into()));
        }
        Ok(Self { radii, values })
    }

    /// Two whitespace- or comma-separated columns; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            if cols.len() != 2 {
                return Err(Error::Format(format!("line {}: expected two columns", lineno + 1)));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))
            };
            radii.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
        }
        Self::new(radii, values)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn eval(&self, r: f64) -> f64 {
        let rs = &self.radii;
        if r <= rs[0] {
            return self.values[0];
        }
        if r > *rs.last().unwrap() {
            return 0.0;
        }
        let j = rs.partition_point(|&x| x < r);
        let (r0, r1) = (rs[j - 1], rs[j]);
        let t = (r - r0) / (r1 - r0);
        self.values[j - 1] * (1.0 - t) + self.values[j] * t
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    /// `1/|x|`
    Newton,
    /// `e^{-μ|x|}/|x|`
    Yukawa { mu: f64 },
    Tabulated(Arc<RadialTable>),
}

/// Radial kernel with its declared split `W = W·1_{|x|<a} + W·1_{|x|>=a}`
/// and integrability exponent `r` for the inner part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub variant: KernelVariant,
    pub split_r: f64,
    pub split_radius: f64,
}

impl Kernel {
    pub fn newton() -> Self {
        Self {
            variant: KernelVariant::Newton,
            split_r: 2.0,
            split_radius: 1.0,
        }
    }

    pub fn yukawa(mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(invalid("kernel.mu", "Yukawa mass must be >= 0"));
        }
        Ok(Self {
            variant: KernelVariant::Yukawa { mu },
            split_r: 2.0,
            split_radius: 1.0,
        })
    }

    pub fn tabulated(table: RadialTable) -> Self {
        Self {
            variant: KernelVariant::Tabulated(Arc::new(table)),
            split_r: 2.0,
            split_radius: 1.0,
        }
    }

    pub fn with_split(mut self, r: f64, a: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid("kernel.split_r", "must be positive"));
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(invalid("kernel.split_radius", "must be positive"));
        }
        self.split_r = r;
        self.split_radius = a;
        Ok(self)
    }

    pub fn eval(&self, r: f64) -> f64 {
        match &self.variant {
            KernelVariant::Newton => 1.0 / r,
            KernelVariant::Yukawa { mu } => (-mu * r).exp() / r,
            KernelVariant::Tabulated(t) => t.eval(r),
        }
    }

    pub fn is_newton(&self) -> bool {
        matches!(self.variant, KernelVariant::Newton)
    }

    pub fn label(&self) -> String {
        match &self.variant {
            KernelVariant::Newton => "newton".into(),
            KernelVariant::Yukawa { mu } => format!("yukawa(mu={mu})"),
            KernelVariant::Tabulated(t) => format!("tabulated({} rows)", t.radii().len()),
        }
    }
}

/// Transform of `1_{|x|<R} e^{-μ|x|}/|x|` in three dimensions.
fn truncated_yukawa_hat(k2: f64, mu: f64, r: f64) -> f64 {
    let k = k2.sqrt();
    if mu == 0.0 {
        if k2 == 0.0 {
            return 2.0 * PI * r * r;
        }
        let s = (0.5 * k * r).sin();
        return 8.0 * PI * s * s / k2;
    }
    let x = mu * r;
    let bracket = if k2 == 0.0 {
        -(-x).exp_m1() - x * (-x).exp()
    } else {
        1.0 - (-x).exp() * ((k * r).cos() + mu * (k * r).sin() / k)
    };
    4.0 * PI * bracket / (k2 + mu * mu)
}

/// Splitting parameter `α` of the Newton kernel on `grid`.
fn newton_alpha(grid: &Grid) -> f64 {
    (PI / (2.0 * grid.extent() * grid.spacing())).sqrt()
}

fn newton_transfer(grid: &Grid, padded: &Grid) -> Vec<f64> {
    let alpha = newton_alpha(grid);
    let long = sampled_transfer(padded, |r| {
        if r == 0.0 {
            2.0 * alpha / PI.sqrt()
        } else {
            statrs::function::erf::erf(alpha * r) / r
        }
    });
    let short = padded.multiplier(|k2| {
        if k2 == 0.0 {
            PI / (alpha * alpha)
        } else {
            -4.0 * PI * (-k2 / (4.0 * alpha * alpha)).exp_m1() / k2
        }
    });
    long.iter().zip(&short).map(|(a, b)| a + b).collect()
}

/// Cached convolution with a fixed kernel on a fixed grid.
#[derive(Debug, Clone)]
pub struct HartreeOperator {
    grid: Grid,
    padded: Grid,
    transfer: Vec<f64>,
}

impl HartreeOperator {
    pub fn new(kernel: &Kernel, grid: &Grid) -> Result<Self> {
        let padded = grid.doubled();
        let transfer = match &kernel.variant {
            KernelVariant::Newton | KernelVariant::Yukawa { .. } => {
                if grid.dim() != 3 {
                    return Err(Error::KernelDimension(format!(
                        "{} kernel needs N = 3, grid has N = {}",
                        kernel.label(),
                        grid.dim()
                    )));
                }
                match kernel.variant {
                    KernelVariant::Yukawa { mu } => {
                        let cut = 2.0 * grid.extent();
                        padded.multiplier(|k2| truncated_yukawa_hat(k2, mu, cut))
                    }
                    _ => newton_transfer(grid, &padded),
                }
            }
            KernelVariant::Tabulated(table) => sampled_transfer(&padded, |r| table.eval(r)),
        };
        Ok(Self {
            grid: *grid,
            padded,
            transfer,
        })
    }

    /// Free-space inverse of `-Δ` (times `4π`) by a truncated Green's
    /// function: the cut `R = 3.5L` exceeds the box diameter, and the density
    /// is padded to `[-4L, 4L)^3` so periodic images stay beyond `R`.
    fn poisson(grid: &Grid) -> Result<Self> {
        if grid.dim() != 3 {
            return Err(Error::KernelDimension(format!(
                "Poisson solve needs N = 3, grid has N = {}",
                grid.dim()
            )));
        }
        let padded = Grid::new(3, 4 * grid.n(), 4.0 * grid.extent())?;
        let r = 3.5 * grid.extent();
        let transfer = padded.multiplier(|k2| truncated_yukawa_hat(k2, 0.0, r));
        Ok(Self {
            grid: *grid,
            padded,
            transfer,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `W ∗ ρ` for a density given on the base grid.
    ///
    /// The lattice face `x_a = -L` also stands for `x_a = +L` (the box is
    /// periodic). Its density is split evenly between both positions and the
    /// potential there is the average of both, so the discrete operator stays
    /// symmetric and commutes with `x ↦ -x`.
    pub fn convolve(&self, density: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let p = self.padded;
        let mut buf = vec![Complex64::new(0.0, 0.0); p.len()];
        let mut img = Vec::with_capacity(8);
        for (i, &d) in density.iter().enumerate() {
            self.images(i, &mut img);
            let w = d / img.len() as f64;
            for &j in &img {
                buf[j].re += w;
            }
        }
        fft_nd(&mut buf, p.dim(), p.n(), false);
        buf.par_iter_mut()
            .zip(self.transfer.par_iter())
            .for_each(|(c, &t)| *c *= t);
        fft_nd(&mut buf, p.dim(), p.n(), true);
        (0..g.len())
            .into_par_iter()
            .map_init(Vec::new, |img, i| {
                self.images(i, img);
                img.iter().map(|&j| buf[j].re).sum::<f64>() / img.len() as f64
            })
            .collect()
    }

    /// Padded-grid positions of base point `flat`: one, or `2^k` when it
    /// lies on `k` faces `x_a = -L`.
    fn images(&self, flat: usize, out: &mut Vec<usize>) {
        let idx = self.grid.multi_index(flat);
        let n = self.grid.n();
        let np = self.padded.n();
        out.clear();
        out.push(0);
        for a in 0..self.grid.dim() {
            let len = out.len();
            for t in 0..len {
                out[t] = out[t] * np + idx[a];
            }
            if idx[a] == 0 {
                for t in 0..len {
                    out.push(out[t] + n);
                }
            }
        }
    }

    /// `W ∗ u²`.
    pub fn potential(&self, u: &RealField) -> Result<RealField> {
        same_grid(&self.grid, u.grid())?;
        let rho: Vec<f64> = u.values().iter().map(|v| v * v).collect();
        RealField::new(self.grid, self.convolve(&rho))
    }

    /// `Q(u) = h^N Σ (W ∗ u²) u²`.
    pub fn quartic(&self, u: &RealField) -> Result<f64> {
        let phi = self.potential(u)?;
        Ok(quartic_from(&self.grid, u.values(), phi.values()))
    }

    /// Real-space weights `K` on the padded grid (FFT offset order) such that
    /// `(W ∗ ρ)_i = h^N Σ_j K(i - j) ρ_j`.
    pub fn discrete_kernel(&self) -> Vec<f64> {
        let p = self.padded;
        let mut buf: Vec<Complex64> = self.transfer.iter().map(|&t| Complex64::new(t, 0.0)).collect();
        fft_nd(&mut buf, p.dim(), p.n(), true);
        let scale = 1.0 / ((p.len() as f64).sqrt() * self.grid.cell_volume());
        buf.iter().map(|c| c.re * scale).collect()
    }
}

pub(crate) fn quartic_from(grid: &Grid, u: &[f64], phi: &[f64]) -> f64 {
    grid.cell_volume() * det_sum(u.len(), |i| phi[i] * u[i] * u[i])
}

/// `h^N · DFT(samples)` for a kernel sampled at the signed lattice offsets of `padded`.
///
/// The offset `n_p/2` stands for both `±2L`; radial kernels agree there.
fn sampled_transfer<F: Fn(f64) -> f64 + Sync>(padded: &Grid, w: F) -> Vec<f64> {
    let h = padded.spacing();
    let mut buf: Vec<Complex64> = (0..padded.len())
        .into_par_iter()
        .map(|i| {
            let idx = padded.multi_index(i);
            let r2: f64 = (0..padded.dim())
                .map(|a| (padded.frequency_index(idx[a]) as f64 * h).powi(2))
                .sum();
            Complex64::new(w(r2.sqrt()), 0.0)
        })
        .collect();
    fft_nd(&mut buf, padded.dim(), padded.n(), false);
    let scale = (padded.len() as f64).sqrt() * padded.spacing().powi(padded.dim() as i32);
    buf.iter().map(|c| c.re * scale).collect()
}

pub fn hartree_potential(u: &RealField, w: &Kernel) -> Result<RealField> {
    HartreeOperator::new(w, u.grid())?.potential(u)
}

pub fn hartree_quartic(u: &RealField, w: &Kernel) -> Result<f64> {
    HartreeOperator::new(w, u.grid())?.quartic(u)
}

/// Free-space solution of `-Δφ = 4π u²` in three dimensions.
pub fn poisson_potential(u: &RealField) -> Result<RealField> {
    HartreeOperator::poisson(u.grid())?.potential(u)
}

/// Numerical audit of the integrability split of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub dim: usize,
    pub split_r: f64,
    pub split_radius: f64,
    /// `r > N/2`
    pub r_admissible: bool,
    /// `∫_{ε<|x|<a} |W|^r` with `ε = 1e-12 a`.
    pub inner_integral: f64,
    /// Exponent `N + r·dlnW/dlnρ` near the origin; the inner integral is finite iff it is positive.
    pub inner_exponent: f64,
    pub inner_finite: bool,
    /// `sup_{|x|>=a} |W|` over a log-spaced radial sample.
    pub outer_sup: f64,
    pub outer_bounded: bool,
    pub nonnegative: bool,
}

impl KernelReport {
    pub fn passes(&self) -> bool {
        self.r_admissible && self.inner_finite && self.outer_bounded && self.nonnegative
    }
}

fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

pub fn validate_kernel(w: &Kernel, grid: &Grid) -> KernelReport {
    let n = grid.dim();
    let r = w.split_r;
    let a = w.split_radius;

    // ρ = a e^{-t}, dρ = -ρ dt; composite Simpson on t in [0, T]
    let t_max = (1e12f64).ln();
    let steps = 20_000;
    let dt = t_max / steps as f64;
    let integrand = |t: f64| {
        let rho = a * (-t).exp();
        rho.powi(n as i32) * w.eval(rho).abs().powf(r)
    };
    let mut s = integrand(0.0) + integrand(t_max);
    for i in 1..steps {
        let c = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += c * integrand(i as f64 * dt);
    }
    let inner_integral = sphere_area(n) * s * dt / 3.0;

    let rho0 = 1e-8 * a;
    let d: f64 = 0.01;
    let slope = ((w.eval(rho0 * d.exp())).ln() - (w.eval(rho0 * (-d).exp())).ln()) / (2.0 * d);
    let inner_exponent = if slope.is_finite() { n as f64 + r * slope } else { n as f64 };
    let inner_finite = inner_exponent > 1e-6 && inner_integral.is_finite();

    let mut outer_sup: f64 = 0.0;
    let samples = 4000;
    for i in 0..=samples {
        let rho = a * (1e6f64).powf(i as f64 / samples as f64);
        outer_sup = outer_sup.max(w.eval(rho).abs());
    }
    if let KernelVariant::Tabulated(t) = &w.variant {
        for &rho in t.radii().iter().filter(|&&x| x >= a) {
            outer_sup = outer_sup.max(w.eval(rho).abs());
        }
    }

    let mut nonnegative = true;
    for i in 0..=samples {
        let rho = 1e-12 * (1e18f64).powf(i as f64 / samples as f64);
        if w.eval(rho) < 0.0 {
            nonnegative = false;
        }
    }

    KernelReport {
        dim: n,
        split_r: r,
        split_radius: a,
        r_admissible: r > n as f64 / 2.0,
        inner_integral,
        inner_exponent,
        inner_finite,
        outer_sup,
        outer_bounded: outer_sup.is_finite(),
        nonnegative,
    }
}

/// Running estimate of the best constant in `Q(u) <= C ‖u‖⁴`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvConstantEstimate {
    /// Running maximum after every trial; entry 0 is the seed Gaussian.
    pub history: Vec<f64>,
    pub seed: u64,
}

impl ConvConstantEstimate {
    pub fn value(&self) -> f64 {
        *self.history.last().unwrap()
    }

    /// Raise the estimate with the ratio of one more field.
    pub fn include(&mut self, ratio: f64) {
        let v = self.value().max(ratio);
        self.history.push(v);
    }
}

/// `Q(u)/‖u‖⁴` with `‖u‖² = ⟨Tu, u⟩`; zero for the zero field.
pub fn conv_ratio(op: &HartreeOperator, u: &RealField, m: f64) -> Result<f64> {
    let norm2 = trace_energy_form(u, m)?;
    if norm2 == 0.0 {
        return Ok(0.0);
    }
    Ok(op.quartic(u)? / (norm2 * norm2))
}

/// Random smooth field: a sum of one to three Gaussian bumps.
pub fn random_bumps(grid: &Grid, rng: &mut impl Rng) -> RealField {
    let d = grid.dim();
    let l = grid.extent();
    let wmin = (2.0 * grid.spacing()).max(l / 16.0);
    let wmax = (l / 4.0).max(wmin * 1.5);
    let count = rng.gen_range(1..=3);
    let bumps: Vec<(f64, [f64; 3], f64)> = (0..count)
        .map(|_| {
            let mut c = [0.0; 3];
            for x in c.iter_mut().take(d) {
                *x = rng.gen_range(-l / 3.0..l / 3.0);
            }
            let amp = rng.gen_range(0.2..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (amp, c, rng.gen_range(wmin..wmax))
        })
        .collect();
    RealField::from_fn(*grid, |x| {
        bumps
            .iter()
            .map(|(amp, c, w)| {
                let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                amp * (-r2 / (2.0 * w * w)).exp()
            })
            .sum()
    })
    .expect("finite bumps")
}

/// Empirical lower estimate of the convolution constant: the seed Gaussian
/// followed by `trials` random smooth fields from the stream `seed`.
pub fn estimate_conv_constant(
    w: &Kernel,
    grid: &Grid,
    m: f64,
    trials: usize,
    seed: u64,
) -> Result<ConvConstantEstimate> {
    let op = HartreeOperator::new(w, grid)?;
    let gauss = RealField::from_fn(*grid, |x| (-x.iter().map(|c| c * c).sum::<f64>() / 2.0).exp())?;
    let mut est = ConvConstantEstimate {
        history: vec![conv_ratio(&op, &gauss, m)?],
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let u = random_bumps(grid, &mut rng);
        est.include(conv_ratio(&op, &u, m)?);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(g: Grid, w: f64) -> RealField {
        RealField::from_fn(g, |x| (-x.iter().map(|c| c * c).sum::<f64>() / (2.0 * w * w)).exp()).unwrap()
    }

    #[test]
    fn table_parse_and_eval() {
        let t = RadialTable::parse("# r W\n0 2\n1, 1\n3 0.5\n").unwrap();
        assert_eq!(t.eval(0.0), 2.0);
        assert_eq!(t.eval(0.5), 1.5);
        assert_eq!(t.eval(2.0), 0.75);
        assert_eq!(t.eval(4.0), 0.0);
        assert!(RadialTable::parse("0 1\n0 2\n").is_err());
        assert!(RadialTable::parse("0 1\n1 -2\n").is_err());
        assert!(RadialTable::parse("0 1 3\n").is_err());
        assert!(RadialTable::parse("0 x\n1 1\n").is_err());
    }

    #[test]
    fn newton_transform_limits() {
        let r = 4.0;
        assert!((truncated_yukawa_hat(0.0, 0.0, r) - 2.0 * PI * 16.0).abs() < 1e-12);
        let k2: f64 = 0.37;
        let direct = 4.0 * PI * (1.0 - (k2.sqrt() * r).cos()) / k2;
        assert!((truncated_yukawa_hat(k2, 0.0, r) - direct).abs() < 1e-12);
        // small mu approaches Newton
        let a = truncated_yukawa_hat(k2, 1e-9, r);
        assert!((a - direct).abs() < 1e-5);
        let z = truncated_yukawa_hat(0.0, 1e-4, r);
        assert!((z - 2.0 * PI * 16.0).abs() / z < 1e-3);
    }

    #[test]
    fn dimension_mismatch() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        assert!(matches!(HartreeOperator::new(&Kernel::newton(), &g), Err(Error::KernelDimension(_))));
        assert!(poisson_potential(&RealField::zeros(g)).is_err());
        let t = Kernel::tabulated(RadialTable::new(vec![0.0, 5.0], vec![1.0, 0.0]).unwrap());
        assert!(HartreeOperator::new(&t, &g).is_ok());
    }

    #[test]
    fn zero_field() {
        let g = Grid::new(3, 8, 2.0).unwrap();
        let z = RealField::zeros(g);
        assert_eq!(hartree_potential(&z, &Kernel::newton()).unwrap().max_abs(), 0.0);
        assert_eq!(hartree_quartic(&z, &Kernel::newton()).unwrap(), 0.0);
        assert_eq!(poisson_potential(&z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn quartic_scaling() {
        let g = Grid::new(3, 8, 3.0).unwrap();
        let u = gaussian(g, 1.0);
        let op = HartreeOperator::new(&Kernel::newton(), &g).unwrap();
        let q1 = op.quartic(&u).unwrap();
        let q2 = op.quartic(&u.scaled(2.0)).unwrap();
        assert!((q2 / q1 - 16.0).abs() < 1e-12);
    }

    #[test]
    fn tabulated_matches_direct_sum_1d() {
        let g = Grid::new(1, 16, 2.0).unwrap();
        let table = RadialTable::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.6, 0.2, 0.1]).unwrap();
        let k = Kernel::tabulated(table.clone());
        let u = gaussian(g, 0.7);
        let phi = hartree_potential(&u, &k).unwrap();
        let h = g.spacing();
        // the face point -L also sits at +L, with half its weight at each
        let pos = |j: usize| -> Vec<f64> {
            let x = j as f64 * h;
            if j == 0 { vec![x, x + 16.0 * h] } else { vec![x] }
        };
        for i in 0..16 {
            let pi = pos(i);
            let mut s = 0.0;
            for &xi in &pi {
                for j in 0..16 {
                    let pj = pos(j);
                    for &xj in &pj {
                        s += table.eval((xi - xj).abs()) * u.values()[j].powi(2) / pj.len() as f64;
                    }
                }
            }
            s *= h / pi.len() as f64;
            assert!((phi.values()[i] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_report_newton() {
        let g = Grid::new(3, 8, 1.0).unwrap();
        let rep = validate_kernel(&Kernel::newton(), &g);
        assert!(rep.passes());
        assert!((rep.outer_sup - 1.0).abs() < 1e-12);
        assert!((rep.inner_integral - 4.0 * PI).abs() / (4.0 * PI) < 1e-3);
        let bad = validate_kernel(&Kernel::newton().with_split(3.0, 1.0).unwrap(), &g);
        assert!(!bad.inner_finite);
        let y = validate_kernel(&Kernel::yukawa(1.0).unwrap(), &g);
        assert!(y.outer_sup <= (-1.0f64).exp() + 1e-12);
    }

    #[test]
    fn conv_constant_running_max() {
        let g = Grid::new(3, 8, 4.0).unwrap();
        let e = estimate_conv_constant(&Kernel::newton(), &g, 1.0, 5, 3).unwrap();
        assert_eq!(e.history.len(), 6);
        assert!(e.history.windows(2).all(|w| w[1] >= w[0]));
        assert!(e.history[0] > 0.0 && e.history[0].is_finite());
    }
}
