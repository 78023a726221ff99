//! Numerical checks of the integral identities and inequalities satisfied by
//! solutions, and the parameter-regime classifier.
//!
//! Half-space quantities are evaluated on the minimal extension
//! `v(x,y) = Σ û(k) e^{-yσ(k)} e_k(x)`, mode by mode:
//!
//! ```text
//! ∫ v²          = h^N Σ |û|² / (2σ)
//! ∫ |∂_y v|²    = h^N Σ σ |û|² / 2
//! ∫ |D_x v|²    = h^N Σ |k|² |û|² / (2σ)
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fracops::symbol;
use crate::grid::{det_sum, forward_transform, l2_inner_raw, lp_trace_norm, spectral_derivative, Grid, RealField};
use crate::hartree::{estimate_conv_constant, quartic_from, HartreeOperator, Kernel};
use crate::model::{check_assumptions, Model, ModelParams, Nonlinearity, NonlinearityKind};
use crate::mountainpass::{solve_fixed_lambda, SolverOptions};

/// Per-mode sums `(∫|Dv|², ∫v², ∫|∂_y v|²)` over the half-space.
fn mode_sums(v: &RealField, m: f64) -> Result<(f64, f64, f64)> {
    if !(m.is_finite() && m >= 0.0) {
        return Err(invalid("m", format!("mass must be nonnegative, got {m}")));
    }
    let g = *v.grid();
    let s = forward_transform(v);
    let c = s.coeffs();
    if m == 0.0 && c[0].norm_sqr() > 1e-24 * (1.0 + v.max_abs().powi(2)) {
        return Err(invalid("m", "m = 0 needs a zero-mean field"));
    }
    let terms = |i: usize| -> [f64; 3] {
        let k2 = g.k_squared(i);
        let sg = symbol(k2, m);
        if sg == 0.0 {
            return [0.0; 3];
        }
        let a = c[i].norm_sqr();
        [(2.0 * k2 + m * m) / (2.0 * sg) * a, a / (2.0 * sg), 0.5 * sg * a]
    };
    let hv = g.cell_volume();
    let len = c.len();
    Ok((
        hv * det_sum(len, |i| terms(i)[0]),
        hv * det_sum(len, |i| terms(i)[1]),
        hv * det_sum(len, |i| terms(i)[2]),
    ))
}

/// `(∫|Dv_ext|², ∫v_ext²)` over `ℝ^N × (0,∞)` for the minimal extension.
pub fn halfspace_integrals(v: &RealField, m: f64) -> Result<(f64, f64)> {
    let (a, b, _) = mode_sums(v, m)?;
    Ok((a, b))
}

/// `∫|∂_y v_ext|²` over the half-space for the minimal extension.
pub fn halfspace_dy_integral(v: &RealField, m: f64) -> Result<f64> {
    Ok(mode_sums(v, m)?.2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PohozaevReport {
    /// `∫|Dv|²` over the half-space
    pub term_grad_e: f64,
    /// `2m²∫v²` over the half-space
    pub term_mass: f64,
    /// `(3/2)ω|v|₂²`
    pub term_omega: f64,
    /// `(5/4)λ∫v²φ`
    pub term_hartree: f64,
    /// `3∫F(v)`
    pub term_f: f64,
    pub residual: f64,
    pub relative_residual: f64,
}

impl PohozaevReport {
    /// Terms with their formulas, in the order they enter the residual.
    pub fn labelled_terms(&self) -> [(&'static str, f64); 5] {
        [
            ("pohozaev.term_gradE  -∫|Dv|² dX", self.term_grad_e),
            ("pohozaev.term_mass  -2m²∫v² dX", self.term_mass),
            ("pohozaev.term_omega  +(3/2)ω∫v² dx", self.term_omega),
            ("pohozaev.term_hartree  +(5/4)λ∫v²φ dx", self.term_hartree),
            ("pohozaev.term_F  -3∫F(v) dx", self.term_f),
        ]
    }
}

fn require_newton_3d(v: &RealField, w: &Kernel) -> Result<()> {
    if v.grid().dim() != 3 {
        return Err(Error::KernelDimension(format!(
            "the identity holds for N = 3, got N = {}",
            v.grid().dim()
        )));
    }
    if !w.is_newton() {
        return Err(Error::KernelDimension(format!(
            "the identity holds for the Newton kernel, got {}",
            w.label()
        )));
    }
    Ok(())
}

struct Pieces {
    grad_e: f64,
    mass_half: f64,
    s: f64,
    q: f64,
    f_int: f64,
    fs_v: f64,
}

fn pieces(v: &RealField, p: &ModelParams, w: &Kernel, f: &Nonlinearity) -> Result<Pieces> {
    require_newton_3d(v, w)?;
    let (grad_e, mass_half) = halfspace_integrals(v, p.m)?;
    let model = Model::new(*v.grid(), *p, w, f)?;
    let vals = v.values();
    let op = model.hartree();
    let phi = op.convolve(&vals.iter().map(|x| x * x).collect::<Vec<_>>());
    Ok(Pieces {
        grad_e,
        mass_half,
        s: l2_inner_raw(v.grid(), vals, vals),
        q: quartic_from(v.grid(), vals, &phi),
        f_int: model.potential_integral(vals),
        fs_v: model.derivative_integral(vals, 1.0, vals),
    })
}

fn relative(residual: f64, terms: &[f64]) -> f64 {
    let scale = terms.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    if scale == 0.0 {
        0.0
    } else {
        residual / scale
    }
}

/// `-∫|Dv|² - 2m²∫v² + (3/2)ω|v|₂² + (5/4)λQ(v) - 3∫F(v)`, zero at solutions.
pub fn pohozaev_residual(v: &RealField, p: &ModelParams, w: &Kernel, f: &Nonlinearity) -> Result<PohozaevReport> {
    let pc = pieces(v, p, w, f)?;
    let term_grad_e = -pc.grad_e;
    let term_mass = -2.0 * p.m * p.m * pc.mass_half;
    let term_omega = 1.5 * p.omega * pc.s;
    let term_hartree = 1.25 * p.lambda * pc.q;
    let term_f = -3.0 * pc.f_int;
    let residual = term_grad_e + term_mass + term_omega + term_hartree + term_f;
    Ok(PohozaevReport {
        term_grad_e,
        term_mass,
        term_omega,
        term_hartree,
        term_f,
        residual,
        relative_residual: relative(residual, &[term_grad_e, term_mass, term_omega, term_hartree, term_f]),
    })
}

/// The Pohozaev residual shifted by `ρ J'(v)v`, assembled term by term.
pub fn rho_family_residual(v: &RealField, p: &ModelParams, w: &Kernel, f: &Nonlinearity, rho: f64) -> Result<f64> {
    if !rho.is_finite() {
        return Err(invalid("rho", "must be finite"));
    }
    let pc = pieces(v, p, w, f)?;
    Ok((rho - 1.0) * pc.grad_e
        + (rho - 2.0) * p.m * p.m * pc.mass_half
        + (1.5 - rho) * p.omega * pc.s
        + (1.25 - rho) * p.lambda * pc.q
        + (rho * pc.fs_v - 3.0 * pc.f_int))
}

/// Smooth field on `ℝ^N × [0,∞)` with closed-form derivatives, used to test
/// the finite-radius virial identities.
pub trait ManufacturedField: Sync {
    /// Number of tangential variables `N`.
    fn base_dim(&self) -> usize;
    /// Largest admissible truncation radius.
    fn extent(&self) -> f64;
    /// `x` has `N + 1` entries, the last one is `y`.
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn laplacian(&self, x: &[f64]) -> f64;
}

/// `a exp(-|X - c|² / (2w²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
    pub extent: f64,
}

impl GaussianBump {
    pub fn new(amplitude: f64, center: Vec<f64>, width: f64, extent: f64) -> Result<Self> {
        if !(1..=3).contains(&(center.len().saturating_sub(1))) {
            return Err(invalid("center", "need N + 1 coordinates with N in 1..=3"));
        }
        if !(width > 0.0 && extent > 0.0) || !amplitude.is_finite() || center.iter().any(|c| !c.is_finite()) {
            return Err(invalid("gaussian", "width and extent must be positive, entries finite"));
        }
        Ok(Self {
            amplitude,
            center,
            width,
            extent,
        })
    }

    fn r2(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl ManufacturedField for GaussianBump {
    fn base_dim(&self) -> usize {
        self.center.len() - 1
    }

    fn extent(&self) -> f64 {
        self.extent
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.amplitude * (-self.r2(x) / (2.0 * self.width * self.width)).exp()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let v = self.value(x);
        let w2 = self.width * self.width;
        for ((o, a), c) in out.iter_mut().zip(x).zip(&self.center) {
            *o = -(a - c) / w2 * v;
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let w2 = self.width * self.width;
        let d = self.center.len() as f64;
        (self.r2(x) / (w2 * w2) - d / w2) * self.value(x)
    }
}

/// Midpoint nodes `(θ, weight)` on the unit sphere `S^{d-1} ⊂ ℝ^d`.
fn sphere_nodes(d: usize, n: usize) -> Vec<([f64; 3], f64)> {
    use std::f64::consts::PI;
    match d {
        1 => vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)],
        2 => {
            let m = 2 * n;
            let dg = 2.0 * PI / m as f64;
            (0..m)
                .map(|j| {
                    let g = (j as f64 + 0.5) * dg;
                    ([g.cos(), g.sin(), 0.0], dg)
                })
                .collect()
        }
        _ => {
            let db = PI / n as f64;
            let dg = PI / n as f64;
            let mut out = Vec::with_capacity(2 * n * n);
            for i in 0..n {
                let b = (i as f64 + 0.5) * db;
                for j in 0..2 * n {
                    let g = (j as f64 + 0.5) * dg;
                    out.push(([b.sin() * g.cos(), b.sin() * g.sin(), b.cos()], b.sin() * db * dg));
                }
            }
            out
        }
    }
}

/// `∫_{Δ_R} f`, with `Δ_R = {X ∈ ℝ^N × [0,∞) : |X| <= R}`, by the midpoint
/// rule in hyperspherical coordinates with `n` nodes per radial/polar axis.
fn half_ball<F: Fn(&[f64]) -> f64 + Sync>(dim: usize, r: f64, n: usize, f: F) -> f64 {
    let nodes = sphere_nodes(dim, n);
    let dr = r / n as f64;
    let da = 0.5 * std::f64::consts::PI / n as f64;
    let parts: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rho = (i as f64 + 0.5) * dr;
            let mut acc = 0.0;
            let mut x = [0.0; 4];
            for j in 0..n {
                let a = (j as f64 + 0.5) * da;
                let (sa, ca) = a.sin_cos();
                let wa = sa.powi(dim as i32 - 1);
                for (th, wt) in &nodes {
                    for c in 0..dim {
                        x[c] = rho * sa * th[c];
                    }
                    x[dim] = rho * ca;
                    acc += wa * wt * f(&x[..=dim]);
                }
            }
            acc * rho.powi(dim as i32) * dr * da
        })
        .collect();
    parts.iter().sum()
}

/// `∫_{S_R⁺} f dσ` over the upper hemisphere of radius `R`.
fn hemisphere<F: Fn(&[f64]) -> f64>(dim: usize, r: f64, n: usize, f: F) -> f64 {
    let nodes = sphere_nodes(dim, n);
    let da = 0.5 * std::f64::consts::PI / n as f64;
    let mut acc = 0.0;
    let mut x = [0.0; 4];
    for j in 0..n {
        let a = (j as f64 + 0.5) * da;
        let (sa, ca) = a.sin_cos();
        for (th, wt) in &nodes {
            for c in 0..dim {
                x[c] = r * sa * th[c];
            }
            x[dim] = r * ca;
            acc += sa.powi(dim as i32 - 1) * wt * f(&x[..=dim]);
        }
    }
    acc * r.powi(dim as i32) * da
}

/// `∫_{b_R} f dx` over the flat disc `{|x| <= R, y = 0}`.
fn flat_disc<F: Fn(&[f64]) -> f64>(dim: usize, r: f64, n: usize, f: F) -> f64 {
    let nodes = sphere_nodes(dim, n);
    let dr = r / n as f64;
    let mut acc = 0.0;
    let mut x = [0.0; 4];
    for i in 0..n {
        let rho = (i as f64 + 0.5) * dr;
        let mut ring = 0.0;
        for (th, wt) in &nodes {
            for c in 0..dim {
                x[c] = rho * th[c];
            }
            x[dim] = 0.0;
            ring += wt * f(&x[..=dim]);
        }
        acc += ring * rho.powi(dim as i32 - 1);
    }
    acc * dr
}

/// Both sides of a finite-radius virial identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirialReport {
    pub radius: f64,
    pub resolution: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Volume part of the right-hand side.
    pub bulk: f64,
    /// Contribution of the flat boundary `b_R`.
    pub flat_boundary: f64,
    /// Contribution of the curved boundary `S_R⁺`.
    pub surface: f64,
    /// `|lhs - rhs| / max(|lhs|, |rhs|)`, zero when both vanish.
    pub gap: f64,
}

fn gap(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn check_radius(field: &dyn ManufacturedField, r: f64, n: usize) -> Result<usize> {
    if !(r > 0.0) {
        return Err(invalid("radius_R", "must be positive"));
    }
    if r > field.extent() {
        return Err(invalid(
            "radius_R",
            format!("R = {r} exceeds the domain half-width {}", field.extent()),
        ));
    }
    if n < 2 {
        return Err(invalid("resolution", "need at least 2 nodes"));
    }
    Ok(field.base_dim())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `∫_{Δ_R} -Δv X·Dv` against
/// `(1-N)/2 ∫_{Δ_R}|Dv|² + ∫_{b_R} v_y Dv·x + ∫_{S_R⁺}[R/2 |Dv|² - |Dv·X|²/R]`.
pub fn virial_bulk_check(field: &dyn ManufacturedField, r: f64, n: usize) -> Result<VirialReport> {
    let d = check_radius(field, r, n)?;
    let lhs = half_ball(d, r, n, |x| {
        let mut g = [0.0; 4];
        field.gradient(x, &mut g[..=d]);
        -field.laplacian(x) * dot(x, &g[..=d])
    });
    let bulk = 0.5 * (1.0 - d as f64)
        * half_ball(d, r, n, |x| {
            let mut g = [0.0; 4];
            field.gradient(x, &mut g[..=d]);
            dot(&g[..=d], &g[..=d])
        });
    let flat_boundary = flat_disc(d, r, n, |x| {
        let mut g = [0.0; 4];
        field.gradient(x, &mut g[..=d]);
        g[d] * dot(&g[..d], &x[..d])
    });
    let surface = hemisphere(d, r, n, |x| {
        let mut g = [0.0; 4];
        field.gradient(x, &mut g[..=d]);
        let xd = dot(x, &g[..=d]);
        0.5 * r * dot(&g[..=d], &g[..=d]) - xd * xd / r
    });
    let rhs = bulk + flat_boundary + surface;
    Ok(VirialReport {
        radius: r,
        resolution: n,
        lhs,
        rhs,
        bulk,
        flat_boundary,
        surface,
        gap: gap(lhs, rhs),
    })
}

/// `∫_{Δ_R} g(v) X·Dv` against `-(N+1)∫_{Δ_R} G(v) + R∫_{S_R⁺} G(v)`.
///
/// `big_g` is shifted so that `G(0) = 0`.
pub fn virial_nonlinear_check(
    field: &dyn ManufacturedField,
    g: &(dyn Fn(f64) -> f64 + Sync),
    big_g: &(dyn Fn(f64) -> f64 + Sync),
    r: f64,
    n: usize,
) -> Result<VirialReport> {
    let d = check_radius(field, r, n)?;
    let g0 = big_g(0.0);
    let gg = |s: f64| big_g(s) - g0;
    let lhs = half_ball(d, r, n, |x| {
        let mut gr = [0.0; 4];
        field.gradient(x, &mut gr[..=d]);
        g(field.value(x)) * dot(x, &gr[..=d])
    });
    let bulk = -(d as f64 + 1.0) * half_ball(d, r, n, |x| gg(field.value(x)));
    let surface = r * hemisphere(d, r, n, |x| gg(field.value(x)));
    let rhs = bulk + surface;
    Ok(VirialReport {
        radius: r,
        resolution: n,
        lhs,
        rhs,
        bulk,
        flat_boundary: 0.0,
        surface,
        gap: gap(lhs, rhs),
    })
}

/// Boundary terms of both virial identities at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSample {
    pub radius: f64,
    /// `|∫_{S_R⁺}[R/2 |Dv|² - |Dv·X|²/R]|`
    pub gradient_surface: f64,
    /// `|R ∫_{S_R⁺} G(v)|`
    pub nonlinear_surface: f64,
}

/// Surface terms at `R ∈ {L/4, L/2, 3L/4}` with `L` the field's extent.
pub fn surface_profile(
    field: &dyn ManufacturedField,
    big_g: &(dyn Fn(f64) -> f64 + Sync),
    n: usize,
) -> Result<Vec<SurfaceSample>> {
    let l = field.extent();
    [0.25, 0.5, 0.75]
        .iter()
        .map(|frac| {
            let r = frac * l;
            let d = check_radius(field, r, n)?;
            let g0 = big_g(0.0);
            let gradient_surface = hemisphere(d, r, n, |x| {
                let mut g = [0.0; 4];
                field.gradient(x, &mut g[..=d]);
                let xd = dot(x, &g[..=d]);
                0.5 * r * dot(&g[..=d], &g[..=d]) - xd * xd / r
            })
            .abs();
            let nonlinear_surface = (r * hemisphere(d, r, n, |x| big_g(field.value(x)) - g0)).abs();
            Ok(SurfaceSample {
                radius: r,
                gradient_surface,
                nonlinear_surface,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HartreeVirialReport {
    /// `∫ v φ (x·Dv)`
    pub virial_lhs: f64,
    /// `-(5/4)∫v²φ`
    pub virial_rhs: f64,
    pub virial_gap: f64,
    /// `∫|Dφ|²`: box quadrature plus the monopole tail outside the box.
    pub grad_phi_sq: f64,
    pub exterior_tail: f64,
    /// `4π∫v²φ`
    pub four_pi_q: f64,
    pub identitaphi_gap: f64,
    pub boundary_ratio: f64,
    /// `boundary_ratio <= 1e-8`
    pub decay_ok: bool,
}

/// `∫_{ℝ³ \ [-L,L]³} |x|^{-4} dx = 6I/L` with `I = ∫_{[-1,1]²} (1+s²+t²)^{-2}`.
fn cube_exterior_r4(l: f64) -> f64 {
    // inner integral in closed form, outer by composite Simpson
    let inner = |s: f64| {
        let a2 = 1.0 + s * s;
        let a = a2.sqrt();
        1.0 / (a2 * (a2 + 1.0)) + (1.0 / a).atan() / (a2 * a)
    };
    let m = 2000;
    let h = 2.0 / m as f64;
    let mut acc = inner(-1.0) + inner(1.0);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * inner(-1.0 + i as f64 * h);
    }
    6.0 * acc * h / 3.0 / l
}

/// Fourth-order finite differences along `axis`, one-sided at the box faces.
fn fd4_derivative(g: &Grid, f: &[f64], axis: usize) -> Vec<f64> {
    let n = g.n();
    let h = g.spacing();
    let stride = n.pow((g.dim() - 1 - axis) as u32);
    (0..f.len())
        .into_par_iter()
        .map(|i| {
            let j = g.multi_index(i)[axis];
            let at = |t: usize| f[i + t * stride - j * stride];
            let d = if j >= 2 && j + 2 < n {
                at(j - 2) - 8.0 * at(j - 1) + 8.0 * at(j + 1) - at(j + 2)
            } else if j == 0 {
                -25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)
            } else if j == 1 {
                -3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4)
            } else if j == n - 1 {
                25.0 * at(n - 1) - 48.0 * at(n - 2) + 36.0 * at(n - 3) - 16.0 * at(n - 4) + 3.0 * at(n - 5)
            } else {
                3.0 * at(n - 1) + 10.0 * at(n - 2) - 18.0 * at(n - 3) + 6.0 * at(n - 4) - at(n - 5)
            };
            d / (12.0 * h)
        })
        .collect()
}

/// Virial identity for the Newton potential and `∫|Dφ|² = 4π∫v²φ` on `ℝ³`.
pub fn hartree_virial_check(v: &RealField) -> Result<HartreeVirialReport> {
    let g = *v.grid();
    if g.dim() != 3 {
        return Err(Error::KernelDimension(format!("needs N = 3, got N = {}", g.dim())));
    }
    if g.n() < 6 {
        return Err(Error::InvalidGrid("need n >= 6 for the difference stencils".into()));
    }
    let op = HartreeOperator::new(&Kernel::newton(), &g)?;
    let vals = v.values();
    let phi = op.convolve(&vals.iter().map(|x| x * x).collect::<Vec<_>>());
    let q = quartic_from(&g, vals, &phi);
    let dv: Vec<RealField> = (0..3).map(|a| spectral_derivative(v, a)).collect::<Result<_>>()?;
    let hv = g.cell_volume();
    let virial_lhs = hv
        * det_sum(vals.len(), |i| {
            let x = g.position(i);
            let xd: f64 = (0..3).map(|a| x[a] * dv[a].values()[i]).sum();
            vals[i] * phi[i] * xd
        });
    let virial_rhs = -1.25 * q;

    let dphi: Vec<Vec<f64>> = (0..3).map(|a| fd4_derivative(&g, &phi, a)).collect();
    let interior = hv * det_sum(phi.len(), |i| dphi.iter().map(|d| d[i] * d[i]).sum());
    let mass = l2_inner_raw(&g, vals, vals);
    let exterior_tail = mass * mass * cube_exterior_r4(g.extent());
    let grad_phi_sq = interior + exterior_tail;
    let four_pi_q = 4.0 * std::f64::consts::PI * q;
    let boundary_ratio = v.boundary_ratio();
    Ok(HartreeVirialReport {
        virial_lhs,
        virial_rhs,
        virial_gap: gap(virial_lhs, virial_rhs),
        grad_phi_sq,
        exterior_tail,
        four_pi_q,
        identitaphi_gap: gap(grad_phi_sq, four_pi_q),
        boundary_ratio,
        decay_ok: boundary_ratio <= 1e-8,
    })
}

/// Parameters of the inequality and virial checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub eps: f64,
    /// Trace exponent, `2 <= q <= 2N/(N-1)`.
    pub q: f64,
    pub radius_r: f64,
    pub rho: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            eps: 1.0,
            q: 2.0,
            radius_r: 4.0,
            rho: 1.5,
        }
    }
}

impl CheckSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(invalid("check.eps", "must be positive"));
        }
        let qmax = if dim == 1 {
            f64::INFINITY
        } else {
            2.0 * dim as f64 / (dim as f64 - 1.0)
        };
        if !(self.q >= 2.0 && self.q <= qmax) {
            return Err(invalid("check.q", format!("need 2 <= q <= {qmax}")));
        }
        if !(self.radius_r.is_finite() && self.radius_r > 0.0) {
            return Err(invalid("check.radius_R", "must be positive"));
        }
        if !self.rho.is_finite() {
            return Err(invalid("check.rho", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub eps: f64,
    pub q: f64,
    /// `|v|₂²`
    pub lhs: f64,
    /// `ε∫v_ext² + ε^{-1}∫|∂_y v_ext|²`
    pub rhs: f64,
    /// `h^N Σ (σ-ε)²/(2εσ) |û|²`
    pub closed_form_gap: f64,
    pub holds: bool,
    pub lq_norm: f64,
    /// `‖v‖ = ⟨Tv,v⟩^{1/2}`
    pub energy_norm: f64,
    /// `|v|_q / ‖v‖`, zero for the zero field.
    pub ratio: f64,
}

pub fn trace_inequality_check(v: &RealField, m: f64, spec: &CheckSpec) -> Result<TraceReport> {
    spec.validate(v.grid().dim())?;
    if !(m.is_finite() && m > 0.0) {
        return Err(invalid("m", "must be positive"));
    }
    let g = *v.grid();
    let (_, b, dy) = mode_sums(v, m)?;
    let vals = v.values();
    let lhs = l2_inner_raw(&g, vals, vals);
    let eps = spec.eps;
    let rhs = eps * b + dy / eps;
    let s = forward_transform(v);
    let c = s.coeffs();
    let closed_form_gap = g.cell_volume()
        * det_sum(c.len(), |i| {
            let sg = symbol(g.k_squared(i), m);
            (sg - eps).powi(2) / (2.0 * eps * sg) * c[i].norm_sqr()
        });
    let energy_norm = (b * m * m + mode_sums(v, m)?.0).sqrt();
    let lq_norm = lp_trace_norm(v, spec.q)?;
    Ok(TraceReport {
        eps,
        q: spec.q,
        lhs,
        rhs,
        closed_form_gap,
        holds: lhs <= rhs * (1.0 + 1e-12) + 1e-300,
        lq_norm,
        energy_norm,
        ratio: if energy_norm > 0.0 { lq_norm / energy_norm } else { 0.0 },
    })
}

/// Running `ĉ_q = max |v|_q/‖v‖` and violation counts over a stream of trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceTracker {
    pub trials: usize,
    pub c2_violations: usize,
    pub c_hat: f64,
}

impl TraceTracker {
    pub fn observe(&mut self, r: &TraceReport) {
        self.trials += 1;
        if !r.holds {
            self.c2_violations += 1;
        }
        self.c_hat = self.c_hat.max(r.ratio);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBoundReport {
    /// The field is numerically zero and the bounds do not apply.
    pub skipped: bool,
    /// `‖v‖²`
    pub norm2: f64,
    /// `m/(m-ω) λ Q(v)`
    pub upper: f64,
    /// `(m-ω)/(m λ Ĉ_W)`
    pub lower: f64,
    pub upper_ok: bool,
    pub lower_ok: bool,
    pub c_hat_input: f64,
    /// `max(Ĉ_W, Q(v)/‖v‖⁴)`
    pub c_hat_used: f64,
}

impl NormBoundReport {
    pub fn passes(&self) -> bool {
        self.skipped || (self.upper_ok && self.lower_ok)
    }
}

/// Upper and lower bounds on `‖v‖²` for a nontrivial solution.
///
/// The lower constant is an estimate: `Ĉ_W` is an empirical lower bound of the
/// convolution constant, raised to cover `v` itself.
pub fn norm_bound_check(
    v: &RealField,
    p: &ModelParams,
    w: &Kernel,
    f: &Nonlinearity,
    c_hat: f64,
) -> Result<NormBoundReport> {
    if !(p.lambda > 0.0) {
        return Err(Error::Precondition("norm bounds need lambda > 0".into()));
    }
    if !(p.omega > 0.0 && p.omega < p.m) {
        return Err(Error::Precondition("norm bounds need 0 < omega < m".into()));
    }
    if !check_assumptions(f, v.grid().dim(), 512).fs_s_nonnegative {
        return Err(Error::Precondition("norm bounds need F_s(x,s)s >= 0".into()));
    }
    if !(c_hat.is_finite() && c_hat > 0.0) {
        return Err(invalid("c_hat", "must be positive"));
    }
    let g = *v.grid();
    let vals = v.values();
    let l2 = l2_inner_raw(&g, vals, vals).sqrt();
    if l2 <= 1e-6 {
        return Ok(NormBoundReport {
            skipped: true,
            norm2: 0.0,
            upper: 0.0,
            lower: 0.0,
            upper_ok: true,
            lower_ok: true,
            c_hat_input: c_hat,
            c_hat_used: c_hat,
        });
    }
    let norm2 = crate::fracops::trace_energy_form(v, p.m)?;
    let q = crate::hartree::hartree_quartic(v, w)?;
    let c_used = c_hat.max(q / (norm2 * norm2));
    let upper = p.m / (p.m - p.omega) * p.lambda * q;
    let lower = (p.m - p.omega) / (p.m * p.lambda * c_used);
    Ok(NormBoundReport {
        skipped: false,
        norm2,
        upper,
        lower,
        upper_ok: norm2 <= upper * (1.0 + 1e-6),
        lower_ok: norm2 >= lower * (1.0 - 1e-6),
        c_hat_input: c_hat,
        c_hat_used: c_used,
    })
}

/// Outcome of [`regime_classify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "NonexistenceProp_lambda0")]
    NonexistencePropLambda0,
    #[serde(rename = "Nonexistence_ipo1W")]
    NonexistenceIpo1W,
    #[serde(rename = "Nonexistence_ipo2W")]
    NonexistenceIpo2W,
    #[serde(rename = "Nonexistence_ipo3W")]
    NonexistenceIpo3W,
    #[serde(rename = "Nonexistence_ipo4W")]
    NonexistenceIpo4W,
    #[serde(rename = "Nonexistence_ipo1Wrho")]
    NonexistenceIpo1Wrho,
    #[serde(rename = "Nonexistence_ipo2Wrho")]
    NonexistenceIpo2Wrho,
    #[serde(rename = "Nonexistence_ipo3Wrho")]
    NonexistenceIpo3Wrho,
    #[serde(rename = "ExistenceCandidate_Theorem_main")]
    ExistenceCandidateTheoremMain,
    Unclassified,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Self::NonexistencePropLambda0 => "NonexistenceProp_lambda0",
            Self::NonexistenceIpo1W => "Nonexistence_ipo1W",
            Self::NonexistenceIpo2W => "Nonexistence_ipo2W",
            Self::NonexistenceIpo3W => "Nonexistence_ipo3W",
            Self::NonexistenceIpo4W => "Nonexistence_ipo4W",
            Self::NonexistenceIpo1Wrho => "Nonexistence_ipo1Wrho",
            Self::NonexistenceIpo2Wrho => "Nonexistence_ipo2Wrho",
            Self::NonexistenceIpo3Wrho => "Nonexistence_ipo3Wrho",
            Self::ExistenceCandidateTheoremMain => "ExistenceCandidate_Theorem_main",
            Self::Unclassified => "Unclassified",
        }
    }

    pub fn is_nonexistence(&self) -> bool {
        !matches!(self, Self::ExistenceCandidateTheoremMain | Self::Unclassified)
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub regime: Regime,
    /// The condition that matched.
    pub witness: String,
    /// Witnessing `ρ` for the ρ-families.
    pub rho: Option<f64>,
}

const PROBE_RADII: [f64; 7] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

/// Decides `a F(s) + b F_s(s)s >= 0` for all `s`.
struct Probe<'a> {
    f: &'a Nonlinearity,
    s: Vec<f64>,
}

impl<'a> Probe<'a> {
    fn new(f: &'a Nonlinearity) -> Self {
        Self {
            f,
            s: crate::model::signed_log_grid(512),
        }
    }

    fn holds_at(&self, a: f64, b: f64, radii: &[f64]) -> bool {
        match self.f.kind() {
            NonlinearityKind::Zero => true,
            // F_s s = p F exactly
            NonlinearityKind::Power { sign, exponent, .. } => sign * (a + b * exponent) >= -1e-12,
            _ => radii.iter().all(|&r| {
                self.s.iter().all(|&s| {
                    let x = a * self.f.value(r, s);
                    let y = b * s * self.f.derivative(r, s);
                    x + y >= -1e-12 * (x.abs() + y.abs())
                })
            }),
        }
    }

    fn holds(&self, a: f64, b: f64) -> bool {
        self.holds_at(a, b, &PROBE_RADII[..1])
    }

    fn autonomous(&self) -> bool {
        if self.f.is_autonomous() {
            return true;
        }
        PROBE_RADII[1..].iter().all(|&r| {
            self.s.iter().all(|&s| {
                let a = self.f.value(0.0, s);
                let b = self.f.value(r, s);
                let da = self.f.derivative(0.0, s);
                let db = self.f.derivative(r, s);
                (a - b).abs() <= 1e-12 * (a.abs() + b.abs()) && (da - db).abs() <= 1e-12 * (da.abs() + db.abs())
            })
        })
    }
}

/// `ρ ∈ {-10, -9.95, ..., 10}`.
fn rho_grid() -> impl Iterator<Item = f64> {
    (0..=400).map(|i| i as f64 / 20.0 - 10.0)
}

/// Map `(P, F)` to the first matching regime.
///
/// The nonexistence conditions other than the `λ <= 0` one are stated for
/// the three-dimensional Newton model with `F` independent of `x`; they are
/// skipped when `F` is found to depend on `x`.
pub fn regime_classify(p: &ModelParams, f: &Nonlinearity) -> Classification {
    let (m, om, la) = (p.m, p.omega, p.lambda);
    let probe = Probe::new(f);
    let hit = |regime, witness: &str, rho| Classification {
        regime,
        witness: witness.to_string(),
        rho,
    };

    if la <= 0.0 && om < m && probe.holds_at(0.0, 1.0, &PROBE_RADII) {
        return hit(Regime::NonexistencePropLambda0, "λ ≤ 0, ω < m, F_s(x,s)s ≥ 0", None);
    }
    if probe.autonomous() {
        if om <= 0.0 && la <= 0.0 && probe.holds(3.0, -1.0) {
            return hit(Regime::NonexistenceIpo1W, "ω ≤ 0, λ ≤ 0, F'(s)s ≤ 3F(s)", None);
        }
        if om <= 0.0 && la <= 0.0 && probe.holds(-3.0, 2.0) {
            return hit(Regime::NonexistenceIpo2W, "ω ≤ 0, λ ≤ 0, 3F(s) ≤ 2F'(s)s", None);
        }
        if la <= 0.0 && (0.0..=m * (8.0f64 / 9.0).sqrt()).contains(&om) && probe.holds(1.0, 0.0) {
            return hit(Regime::NonexistenceIpo3W, "λ ≤ 0, ω ∈ [0, m√(8/9)], F ≥ 0", None);
        }
        if la > 0.0 && om > 0.0 && om < m && probe.holds(0.0, 1.0) && probe.holds(2.0, -1.0) {
            return hit(Regime::NonexistenceIpo4W, "λ > 0, ω ∈ (0,m), 0 ≤ F'(s)s ≤ 2F(s)", None);
        }
        if om <= 0.0 && la <= 0.0 {
            if let Some(r) = rho_grid().filter(|&r| r <= 1.0).find(|&r| probe.holds(3.0, -r)) {
                return hit(Regime::NonexistenceIpo1Wrho, "ω ≤ 0, λ ≤ 0, ρF'(s)s ≤ 3F(s) with ρ ≤ 1", Some(r));
            }
            if let Some(r) = rho_grid().filter(|&r| r >= 2.0).find(|&r| probe.holds(-3.0, r)) {
                return hit(Regime::NonexistenceIpo2Wrho, "ω ≤ 0, λ ≤ 0, 3F(s) ≤ ρF'(s)s with ρ ≥ 2", Some(r));
            }
        }
        if la <= 0.0 && om > 0.0 {
            let found = rho_grid().filter(|&r| r > 2.0).find(|&r| {
                let top = 2.0 * m * ((r - 1.0) * (r - 2.0)).sqrt() / (2.0 * r - 3.0);
                om <= top && probe.holds(-3.0, r)
            });
            if let Some(r) = found {
                return hit(
                    Regime::NonexistenceIpo3Wrho,
                    "λ ≤ 0, ω ∈ (0, 2m√((ρ-1)(ρ-2))/(2ρ-3)], 3F(s) ≤ ρF'(s)s with ρ > 2",
                    Some(r),
                );
            }
        }
    }
    if la > 0.0 && om < m && check_assumptions(f, 3, 512).existence_regime() {
        return hit(
            Regime::ExistenceCandidateTheoremMain,
            "λ > 0, ω < m, F vanishing at 0, subcritical growth, 0 ≤ F_s s ≤ kF with k ≤ 4",
            None,
        );
    }
    hit(Regime::Unclassified, "no condition matched", None)
}

/// One parameter point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub params: ModelParams,
    pub nonlinearity: Nonlinearity,
}

#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub grid: Grid,
    pub kernel: Kernel,
    pub starts: usize,
    pub seed: u64,
    pub options: SolverOptions,
    /// Random trials behind the empirical `Ĉ_W`.
    pub conv_trials: usize,
}

/// One CSV row per parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: f64,
    pub omega: f64,
    pub lambda: f64,
    pub nonlinearity: String,
    pub classification: Regime,
    pub witness: String,
    pub rho: Option<f64>,
    pub starts: usize,
    pub collapsed: usize,
    pub nontrivial: usize,
    pub unconverged: usize,
    pub max_l2_norm: f64,
    /// Largest `|relative Pohozaev residual|` over nontrivial outcomes.
    pub max_pohozaev_relative: Option<f64>,
    pub norm_bound_checked: usize,
    pub norm_bound_violations: usize,
    /// Classified nonexistent but not every start collapsed.
    pub contradiction: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn contradictions(&self) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.contradiction).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seeded sweep start: a Gaussian centred at the origin with random sign,
/// amplitude and per-axis widths.
///
/// Centred starts keep the reflection symmetry of the box; off-centre
/// bumps only drift slowly toward the centre because the free-space
/// Hartree term breaks translation invariance.
pub fn sweep_start(grid: &Grid, rng: &mut impl Rng) -> RealField {
    let l = grid.extent();
    let wmin = (2.0 * grid.spacing()).max(l / 16.0);
    let wmax = (l / 4.0).max(wmin * 1.5);
    let amp = rng.gen_range(0.2..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut w = [1.0; 3];
    for x in w.iter_mut().take(grid.dim()) {
        *x = rng.gen_range(wmin..wmax);
    }
    RealField::from_fn(*grid, |x| {
        let q: f64 = x.iter().zip(&w).map(|(a, b)| a * a / (2.0 * b * b)).sum();
        amp * (-q).exp()
    })
    .expect("finite start")
}

fn sweep_point(pt: &SweepPoint, set: &SweepSettings) -> Result<SweepRow> {
    let p = &pt.params;
    let f = &pt.nonlinearity;
    let class = regime_classify(p, f);
    let pohozaev_ok = set.grid.dim() == 3 && set.kernel.is_newton();
    let bounds_apply = p.lambda > 0.0
        && p.omega > 0.0
        && p.omega < p.m
        && check_assumptions(f, set.grid.dim(), 512).fs_s_nonnegative;
    let c_hat = if bounds_apply {
        Some(estimate_conv_constant(&set.kernel, &set.grid, p.m, set.conv_trials, set.seed)?.value())
    } else {
        None
    };

    let (mut collapsed, mut nontrivial, mut unconverged) = (0, 0, 0);
    let mut max_l2 = 0.0f64;
    let mut max_poh: Option<f64> = None;
    let (mut checked, mut violations) = (0, 0);
    for j in 0..set.starts {
        // start j is the same field at every point
        let mut rng = ChaCha8Rng::seed_from_u64(set.seed.wrapping_add(j as u64));
        let v0 = sweep_start(&set.grid, &mut rng);
        match solve_fixed_lambda(&v0, p, &set.kernel, f, &set.options) {
            Ok(sol) => {
                let l2 = l2_inner_raw(&set.grid, sol.field.values(), sol.field.values()).sqrt();
                max_l2 = max_l2.max(l2);
                if !sol.report.nontrivial {
                    collapsed += 1;
                    continue;
                }
                nontrivial += 1;
                if pohozaev_ok {
                    let r = pohozaev_residual(&sol.field, p, &set.kernel, f)?.relative_residual.abs();
                    max_poh = Some(max_poh.map_or(r, |m: f64| m.max(r)));
                }
                if let Some(c) = c_hat {
                    let nb = norm_bound_check(&sol.field, p, &set.kernel, f, c)?;
                    if !nb.skipped {
                        checked += 1;
                        if !nb.passes() {
                            violations += 1;
                        }
                    }
                }
            }
            Err(Error::NonConvergence(u)) => {
                let l2 = l2_inner_raw(&set.grid, u.field.values(), u.field.values()).sqrt();
                max_l2 = max_l2.max(l2);
                unconverged += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SweepRow {
        m: p.m,
        omega: p.omega,
        lambda: p.lambda,
        nonlinearity: f.label(),
        contradiction: class.regime.is_nonexistence() && collapsed != set.starts,
        classification: class.regime,
        witness: class.witness,
        rho: class.rho,
        starts: set.starts,
        collapsed,
        nontrivial,
        unconverged,
        max_l2_norm: max_l2,
        max_pohozaev_relative: max_poh,
        norm_bound_checked: checked,
        norm_bound_violations: violations,
    })
}

/// Run the solver from `starts` seeded fields at every point, in parallel;
/// rows are sorted by `(m, ω, λ, F)`.
pub fn nonexistence_sweep(points: &[SweepPoint], settings: &SweepSettings) -> Result<SweepTable> {
    if settings.starts == 0 {
        return Err(invalid("starts", "need at least one start per point"));
    }
    settings.options.validate()?;
    let mut rows: Vec<SweepRow> = points
        .par_iter()
        .map(|pt| sweep_point(pt, settings))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| {
        a.m.total_cmp(&b.m)
            .then(a.omega.total_cmp(&b.omega))
            .then(a.lambda.total_cmp(&b.lambda))
            .then_with(|| a.nonlinearity.cmp(&b.nonlinearity))
    });
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracops::{minimal_extension, SlabSpec};
    use crate::hartree::random_bumps;
    use crate::model::derivative_pairing;
    use std::f64::consts::PI;

    fn mode(g: Grid, k: f64) -> RealField {
        RealField::from_fn(g, |x| (k * PI * x[0] / g.extent()).cos()).unwrap()
    }

    /// Composite Simpson on a nonuniform mesh with an even number of cells.
    fn simpson(y: &[f64], f: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in (0..y.len() - 2).step_by(2) {
            let (h0, h1) = (y[j + 1] - y[j], y[j + 2] - y[j + 1]);
            let hs = h0 + h1;
            acc += hs / 6.0
                * ((2.0 - h1 / h0) * f[j] + hs * hs / (h0 * h1) * f[j + 1] + (2.0 - h0 / h1) * f[j + 2]);
        }
        acc
    }

    #[test]
    fn halfspace_zero_and_constant() {
        let g = Grid::new(2, 8, 3.0).unwrap();
        assert_eq!(halfspace_integrals(&RealField::zeros(g), 1.0).unwrap(), (0.0, 0.0));
        let c = 1.7;
        let m = 2.0;
        let (a, b) = halfspace_integrals(&RealField::constant(g, c), m).unwrap();
        let area = (2.0 * g.extent()).powi(2);
        assert!((b - c * c * area / (2.0 * m)).abs() < 1e-12 * b);
        assert!((a - c * c * area * m / 2.0).abs() < 1e-12 * a);
        assert!(halfspace_integrals(&RealField::constant(g, 1.0), 0.0).is_err());
        assert!(halfspace_integrals(&mode(g, 1.0), 0.0).is_ok());
    }

    #[test]
    fn halfspace_matches_slab_quadrature() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let m = 1.0;
        let u = mode(g, 2.0);
        let ext = minimal_extension(&u, m, SlabSpec::reference(m)).unwrap();
        let y = ext.heights().to_vec();
        let k2 = (2.0 * PI / g.extent()).powi(2);
        let sg = symbol(k2, m);
        let hv = g.cell_volume();
        let sq: Vec<f64> = (0..y.len())
            .map(|j| hv * ext.layer(j).iter().map(|v| v * v).sum::<f64>())
            .collect();
        let b_num = simpson(&y, &sq);
        // |Dv|² = (|k|² + σ²) v² for one mode
        let a_num = (k2 + sg * sg) * b_num;
        let (a, b) = halfspace_integrals(&u, m).unwrap();
        assert!((b - b_num).abs() < 1e-6 * b, "{b} {b_num}");
        assert!((a - a_num).abs() < 1e-6 * a);
        let dy = halfspace_dy_integral(&u, m).unwrap();
        assert!((dy - sg * sg * b).abs() < 1e-12 * dy);
    }

    #[test]
    fn closed_forms_sum_to_trace_energy() {
        let g = Grid::new(3, 8, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_bumps(&g, &mut rng);
        let (a, b) = halfspace_integrals(&u, 1.3).unwrap();
        let k = crate::fracops::trace_energy_form(&u, 1.3).unwrap();
        assert!((a + 1.69 * b - k).abs() < 1e-12 * k);
    }

    fn gaussian3(n: usize, l: f64) -> RealField {
        let g = Grid::new(3, n, l).unwrap();
        RealField::from_fn(g, |x| (-x.iter().map(|c| c * c).sum::<f64>()).exp()).unwrap()
    }

    #[test]
    fn pohozaev_requires_newton_3d() {
        let p = ModelParams::new(1.0, 0.5, 1.0).unwrap();
        let f = Nonlinearity::zero();
        let g2 = Grid::new(2, 8, 4.0).unwrap();
        assert!(matches!(
            pohozaev_residual(&RealField::zeros(g2), &p, &Kernel::newton(), &f),
            Err(Error::KernelDimension(_))
        ));
        let v = gaussian3(8, 4.0);
        assert!(pohozaev_residual(&v, &p, &Kernel::yukawa(1.0).unwrap(), &f).is_err());
        let z = pohozaev_residual(&RealField::zeros(*v.grid()), &p, &Kernel::newton(), &f).unwrap();
        assert_eq!(z.residual, 0.0);
        assert_eq!(z.relative_residual, 0.0);
    }

    #[test]
    fn pohozaev_terms_sum_and_rho_family_recombines() {
        let v = gaussian3(16, 4.0);
        let p = ModelParams::new(1.0, 0.3, 0.7).unwrap();
        let w = Kernel::newton();
        let f = Nonlinearity::power(1.0, 1.0, 2.5).unwrap();
        let r = pohozaev_residual(&v, &p, &w, &f).unwrap();
        let sum = r.term_grad_e + r.term_mass + r.term_omega + r.term_hartree + r.term_f;
        assert!((sum - r.residual).abs() < 1e-12);
        assert!(r.relative_residual.abs() > 1e-3);
        let pair = derivative_pairing(&v, &p, &w, &f).unwrap();
        for rho in [0.0, 1.5, -2.0, 7.0] {
            let lhs = rho_family_residual(&v, &p, &w, &f, rho).unwrap();
            let rhs = r.residual + rho * pair;
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{rho}: {lhs} {rhs}");
        }
        assert_eq!(rho_family_residual(&v, &p, &w, &f, 0.0).unwrap(), r.residual);
    }

    fn bump(d: usize) -> GaussianBump {
        let mut c = vec![0.3, -0.2, 0.1, 0.0];
        c.truncate(d);
        c.push(-0.4);
        GaussianBump::new(1.0, c, 1.0, 8.0).unwrap()
    }

    #[test]
    fn manufactured_derivatives() {
        let b = bump(2);
        let x = [0.4, -0.7, 0.9];
        let h = 1e-5;
        let mut g = [0.0; 3];
        b.gradient(&x, &mut g);
        let mut lap = 0.0;
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            let fd = (b.value(&xp) - b.value(&xm)) / (2.0 * h);
            assert!((fd - g[a]).abs() < 1e-8);
            let mut xp2 = x;
            let mut xm2 = x;
            xp2[a] += 1e-3;
            xm2[a] -= 1e-3;
            lap += (b.value(&xp2) - 2.0 * b.value(&x) + b.value(&xm2)) / 1e-6;
        }
        assert!((lap - b.laplacian(&x)).abs() < 1e-5);
    }

    #[test]
    fn quadrature_volumes() {
        // half-ball volumes in R^{N+1} and hemisphere areas
        let r: f64 = 1.3;
        let vol = [PI * r * r / 2.0, 2.0 * PI * r.powi(3) / 3.0, PI * PI * r.powi(4) / 4.0];
        let area = [PI * r, 2.0 * PI * r * r, PI * PI * r.powi(3)];
        let disc = [2.0 * r, PI * r * r, 4.0 * PI * r.powi(3) / 3.0];
        for d in 1..=3 {
            assert!((half_ball(d, r, 64, |_| 1.0) - vol[d - 1]).abs() < 1e-3 * vol[d - 1]);
            assert!((hemisphere(d, r, 64, |_| 1.0) - area[d - 1]).abs() < 1e-3 * area[d - 1]);
            assert!((flat_disc(d, r, 64, |_| 1.0) - disc[d - 1]).abs() < 1e-3 * disc[d - 1]);
        }
    }

    #[test]
    fn virial_identities_close() {
        for d in 1..=3 {
            let b = bump(d);
            let rep = virial_bulk_check(&b, 4.0, 24).unwrap();
            assert!(rep.gap < 5e-3, "N={d} {rep:?}");
            let g = |s: f64| s;
            let gg = |s: f64| 0.5 * s * s;
            let rep = virial_nonlinear_check(&b, &g, &gg, 4.0, 24).unwrap();
            assert!(rep.gap < 5e-3, "N={d} {rep:?}");
        }
    }

    #[test]
    fn virial_trivial_and_errors() {
        let z = GaussianBump::new(0.0, vec![0.0, 0.0], 1.0, 8.0).unwrap();
        let r = virial_bulk_check(&z, 2.0, 8).unwrap();
        assert_eq!((r.lhs, r.rhs, r.gap), (0.0, 0.0, 0.0));
        let zero = |_: f64| 0.0;
        let r = virial_nonlinear_check(&bump(1), &zero, &zero, 2.0, 8).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(virial_bulk_check(&bump(1), 9.0, 8).is_err());
        let g = |s: f64| s;
        let a = virial_nonlinear_check(&bump(1), &g, &|s| 0.5 * s * s, 3.0, 16).unwrap();
        let b = virial_nonlinear_check(&bump(1), &g, &|s| 0.5 * s * s + 2.0, 3.0, 16).unwrap();
        assert!((a.rhs - b.rhs).abs() < 1e-12 && a.lhs == b.lhs);
    }

    #[test]
    fn surface_terms_decay() {
        let prof = surface_profile(&bump(2), &|s| 0.5 * s * s, 24).unwrap();
        assert!(prof[1].gradient_surface < prof[0].gradient_surface);
        assert!(prof[2].gradient_surface < prof[1].gradient_surface);
        assert!(prof[2].nonlinear_surface < prof[1].nonlinear_surface);
    }

    #[test]
    fn cube_exterior_constant() {
        // Monte-Carlo-free check: ball exterior minus the cube-ball shell
        let l = 2.0;
        let ext = cube_exterior_r4(l);
        assert!(ext < 4.0 * PI / l && ext > 4.0 * PI / (3f64.sqrt() * l));
    }

    #[test]
    fn hartree_virial_gaussian() {
        let v = gaussian3(64, 8.0);
        let r = hartree_virial_check(&v).unwrap();
        assert!(r.virial_gap < 1e-2, "{r:?}");
        assert!(r.identitaphi_gap < 1e-2, "{r:?}");
        assert!(r.decay_ok);
        let z = hartree_virial_check(&RealField::zeros(*v.grid())).unwrap();
        assert_eq!((z.virial_gap, z.identitaphi_gap), (0.0, 0.0));
    }

    #[test]
    fn trace_single_mode_gap() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let m = 1.0;
        let u = mode(g, 3.0);
        let spec = CheckSpec {
            eps: m,
            ..CheckSpec::default()
        };
        let r = trace_inequality_check(&u, m, &spec).unwrap();
        let sg = symbol((3.0 * PI / 3.0).powi(2), m);
        // |û|² h^N summed over ±k equals |u|₂²
        let expect = (sg - m).powi(2) / (2.0 * sg * m) * r.lhs;
        assert!((r.rhs - r.lhs - expect).abs() < 1e-10 * r.rhs);
        assert!((r.closed_form_gap - expect).abs() < 1e-10 * r.rhs);
        assert!(r.holds);
        let z = trace_inequality_check(&RealField::zeros(g), m, &spec).unwrap();
        assert!(z.holds && z.lhs == 0.0 && z.rhs == 0.0);
        let bad = CheckSpec { q: 5.0, ..spec };
        assert!(trace_inequality_check(&u, m, &bad).is_err());
        let bad = CheckSpec { eps: 0.0, ..spec };
        assert!(trace_inequality_check(&u, m, &bad).is_err());
    }

    #[test]
    fn norm_bounds_preconditions_and_scaling() {
        let v = gaussian3(16, 6.0);
        let w = Kernel::newton();
        let f = Nonlinearity::power(1.0, 1.0, 2.5).unwrap();
        let bad = ModelParams::new(1.0, 0.5, -1.0).unwrap();
        assert!(norm_bound_check(&v, &bad, &w, &f, 1.0).is_err());
        let p = ModelParams::new(1.0, 0.5, 1.0).unwrap();
        let neg = Nonlinearity::power(-1.0, 1.0, 2.5).unwrap();
        assert!(norm_bound_check(&v, &p, &w, &neg, 1.0).is_err());
        let z = norm_bound_check(&RealField::zeros(*v.grid()), &p, &w, &f, 1.0).unwrap();
        assert!(z.skipped && z.passes());
        let a = norm_bound_check(&v, &p, &w, &f, 10.0).unwrap();
        let p2 = ModelParams::new(1.0, 0.5, 2.0).unwrap();
        let b = norm_bound_check(&v, &p2, &w, &f, 10.0).unwrap();
        assert!((b.lower - 0.5 * a.lower).abs() < 1e-14 * a.lower);
    }

    fn pw(sign: f64, p: f64) -> Nonlinearity {
        Nonlinearity::power(sign, 1.0, p).unwrap()
    }

    #[test]
    fn classifier_table() {
        let pr = |m, o, l| ModelParams::new(m, o, l).unwrap();
        assert_eq!(regime_classify(&pr(1.0, 0.5, 1.0), &pw(1.0, 2.0)).regime, Regime::NonexistenceIpo4W);
        assert_eq!(regime_classify(&pr(1.0, 0.5, 1.0), &pw(1.0, 1.5)).regime, Regime::NonexistenceIpo4W);
        assert!(regime_classify(&pr(1.0, -0.5, -1.0), &pw(-1.0, 3.0)).regime.is_nonexistence());
        assert!(regime_classify(&pr(1.0, 0.0, -0.2), &pw(-1.0, 1.5)).regime.is_nonexistence());
        assert_eq!(
            regime_classify(&pr(1.0, 0.5, 1.0), &pw(1.0, 2.5)).regime,
            Regime::ExistenceCandidateTheoremMain
        );
        assert_eq!(
            regime_classify(&pr(1.0, 0.5, -1.0), &pw(1.0, 2.5)).regime,
            Regime::NonexistencePropLambda0
        );
        // F = -|s|^2/2 with ω ≤ 0, λ ≤ 0 sits in the gap of the power table
        assert_eq!(regime_classify(&pr(1.0, -0.5, -1.0), &pw(-1.0, 2.0)).regime, Regime::Unclassified);
        assert_eq!(regime_classify(&pr(1.0, 0.9, 1.0), &pw(1.0, 2.5)).regime, Regime::ExistenceCandidateTheoremMain);
    }

    #[test]
    fn classifier_sampled_matches_exact() {
        // the same power law through the sampled path
        use std::sync::Arc;
        let pr = ModelParams::new(1.0, -0.3, -1.0).unwrap();
        for (sign, p) in [(-1.0, 1.4), (-1.0, 3.5), (-1.0, 2.0), (1.0, 2.0)] {
            let c = Nonlinearity::custom(
                Arc::new(move |_, s: f64| sign * s.abs().powf(p) / p),
                Arc::new(move |_, s: f64| sign * s.abs().powf(p - 1.0) * s.signum()),
                "power",
                p.max(2.0),
                None,
            )
            .unwrap();
            let a = regime_classify(&pr, &pw(sign, p));
            let b = regime_classify(&pr, &c);
            assert_eq!(a.regime, b.regime, "{sign} {p}");
        }
    }
}
