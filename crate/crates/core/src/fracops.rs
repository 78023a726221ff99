//! The operator `T = sqrt(-Δ + m²)`: Fourier multiplier, harmonic extension to
//! the slab `[-L, L)^N × [0, H]`, and its Dirichlet-to-Neumann map.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{apply_multiplier, forward_transform, inverse_transform, Grid, RealField, SpectralField};

/// Symbol `σ(k) = sqrt(|k|² + m²)`.
pub fn symbol(k2: f64, m: f64) -> f64 {
    (k2 + m * m).sqrt()
}

fn check_mass(m: f64) -> Result<()> {
    if !(m.is_finite() && m >= 0.0) {
        return Err(invalid("m", format!("mass must be finite and >= 0, got {m}")));
    }
    Ok(())
}

pub(crate) fn symbol_table(grid: &Grid, m: f64) -> Vec<f64> {
    grid.multiplier(|k2| symbol(k2, m))
}

/// `T u`, the inverse transform of `σ(k) û(k)`.
pub fn apply_symbol_op(u: &RealField, m: f64) -> Result<RealField> {
    check_mass(m)?;
    Ok(apply_multiplier(u, &symbol_table(u.grid(), m)))
}

/// `⟨Tu, u⟩ = h^N Σ σ(k)|û(k)|²`, the extension energy `∫(|Dv|² + m²v²)`.
pub fn trace_energy_form(u: &RealField, m: f64) -> Result<f64> {
    check_mass(m)?;
    let s = forward_transform(u);
    if m == 0.0 && s.coeffs()[0].norm() > 1e-12 * u.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Precondition(
            "m = 0 requires a zero-mean field".into(),
        ));
    }
    Ok(s.weighted_energy(|k2| symbol(k2, m)))
}

/// Geometry of the extension slab `0 = y_0 < y_1 < ... < y_{n_y} = H`.
///
/// Spacing grows geometrically; `stretch` is the ratio of the last spacing to
/// the first (1 means uniform).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub height: f64,
    pub layers: usize,
    pub stretch: f64,
}

impl SlabSpec {
    pub fn new(height: f64, layers: usize, stretch: f64) -> Result<Self> {
        let s = Self {
            height,
            layers,
            stretch,
        };
        s.validate()?;
        Ok(s)
    }

    /// Default slab for mass `m`: `H = 20/m`, 1000 layers, stretch 10.
    pub fn reference(m: f64) -> Self {
        Self {
            height: 20.0 / m,
            layers: 1000,
            stretch: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.height.is_finite() && self.height > 0.0) {
            return Err(invalid("slab.height", "must be positive"));
        }
        if self.layers < 4 {
            return Err(invalid("slab.layers", format!("need at least 4 layers, got {}", self.layers)));
        }
        if !(self.stretch.is_finite() && self.stretch >= 1.0) {
            return Err(invalid("slab.stretch", "must be >= 1"));
        }
        Ok(())
    }

    /// Layer heights `y_0..=y_{n_y}`.
    pub fn heights(&self) -> Vec<f64> {
        let n = self.layers;
        let r = self.stretch.powf(1.0 / (n as f64 - 1.0));
        let first = if r == 1.0 {
            self.height / n as f64
        } else {
            self.height * (r - 1.0) / (r.powi(n as i32) - 1.0)
        };
        let mut y = Vec::with_capacity(n + 1);
        y.push(0.0);
        let mut step = first;
        for _ in 0..n {
            let last = *y.last().unwrap();
            y.push(last + step);
            step *= r;
        }
        y[n] = self.height;
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionKind {
    /// Sampled analytic profile `û(k) e^{-yσ(k)}`.
    Minimal,
    /// Per-mode finite-difference solve on the slab.
    FiniteDifference,
}

/// Extension of a trace field into the slab, stored layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionField {
    base: Grid,
    slab: SlabSpec,
    kind: ExtensionKind,
    heights: Vec<f64>,
    values: Vec<f64>,
}

impl ExtensionField {
    pub fn new(base: Grid, slab: SlabSpec, kind: ExtensionKind, values: Vec<f64>) -> Result<Self> {
        slab.validate()?;
        if values.len() != base.len() * (slab.layers + 1) {
            return Err(invalid("values", "length must be n^N (n_y + 1)"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            base,
            slab,
            kind,
            heights: slab.heights(),
            values,
        })
    }

    pub fn base_grid(&self) -> &Grid {
        &self.base
    }

    pub fn slab(&self) -> &SlabSpec {
        &self.slab
    }

    pub fn kind(&self) -> ExtensionKind {
        self.kind
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer(&self, j: usize) -> &[f64] {
        let len = self.base.len();
        &self.values[j * len..(j + 1) * len]
    }

    pub fn layer_field(&self, j: usize) -> RealField {
        RealField::from_raw(self.base, self.layer(j).to_vec())
    }
}

fn build_layers<F>(u: &RealField, s: &SpectralField, profile: F, layers: usize) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let g = *u.grid();
    let len = g.len();
    let mut values = vec![0.0; len * (layers + 1)];
    values[..len].copy_from_slice(u.values());
    values[len..]
        .par_chunks_mut(len)
        .enumerate()
        .for_each(|(jm1, out)| {
            let j = jm1 + 1;
            let coeffs: Vec<Complex64> = s
                .coeffs()
                .iter()
                .enumerate()
                .map(|(i, c)| c * profile(i, j))
                .collect();
            let layer = inverse_transform(&SpectralField::new(g, coeffs).expect("same grid"));
            out.copy_from_slice(layer.values());
        });
    values
}

/// Sample the decaying extension `û(k) e^{-yσ(k)}` on the slab layers.
pub fn minimal_extension(u: &RealField, m: f64, spec: SlabSpec) -> Result<ExtensionField> {
    check_mass(m)?;
    spec.validate()?;
    let g = *u.grid();
    let sigma = symbol_table(&g, m);
    let y = spec.heights();
    let s = forward_transform(u);
    let values = build_layers(u, &s, |i, j| (-y[j] * sigma[i]).exp(), spec.layers);
    ExtensionField::new(g, spec, ExtensionKind::Minimal, values)
}

/// Solve `-ψ'' + σ²ψ = 0`, `ψ(0) = 1`, `ψ(H) = 0` on the nonuniform mesh `y`.
fn mode_profile(y: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let n = y.len() - 1;
    let s2 = sigma * sigma;
    // interior unknowns 1..n-1, Thomas sweep
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    for j in 1..n {
        let hl = y[j] - y[j - 1];
        let hr = y[j + 1] - y[j];
        let a = -2.0 / (hl * (hl + hr));
        let c = -2.0 / (hr * (hl + hr));
        let b = 2.0 / (hl * hr) + s2;
        let rhs = if j == 1 { -a } else { 0.0 };
        let (prev_c, prev_d, lower) = if j == 1 { (0.0, 0.0, 0.0) } else { (cp[j - 1], dp[j - 1], a) };
        let denom = b - lower * prev_c;
        if !(denom.abs() > 1e-300) {
            return Err(Error::Singular { row: j });
        }
        cp[j] = c / denom;
        dp[j] = (rhs - lower * prev_d) / denom;
    }
    let mut psi = vec![0.0; n + 1];
    psi[0] = 1.0;
    for j in (1..n).rev() {
        psi[j] = dp[j] - cp[j] * psi[j + 1];
    }
    Ok(psi)
}

/// Finite-difference extension: one tridiagonal solve in `y` per distinct `|k|`.
pub fn fd_extension_solve(u: &RealField, m: f64, spec: SlabSpec) -> Result<ExtensionField> {
    check_mass(m)?;
    spec.validate()?;
    let g = *u.grid();
    let y = spec.heights();
    let mut keys: Vec<u64> = (0..g.len()).map(|i| g.frequency_norm2(i)).collect();
    let key_of = keys.clone();
    keys.sort_unstable();
    keys.dedup();
    let unit = std::f64::consts::PI / g.extent();
    let profiles: Vec<Vec<f64>> = keys
        .par_iter()
        .map(|&k| mode_profile(&y, symbol(k as f64 * unit * unit, m)))
        .collect::<Result<_>>()?;
    let table: HashMap<u64, usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let slot: Vec<usize> = key_of.iter().map(|k| table[k]).collect();
    let s = forward_transform(u);
    let values = build_layers(u, &s, |i, j| profiles[slot[i]][j], spec.layers);
    ExtensionField::new(g, spec, ExtensionKind::FiniteDifference, values)
}

/// Weights of the one-sided second-order derivative at `y_0` from `y_0, y_1, y_2`.
pub(crate) fn one_sided_weights(y: &[f64]) -> [f64; 3] {
    let h1 = y[1] - y[0];
    let h2 = y[2] - y[1];
    [
        -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
        (h1 + h2) / (h1 * h2),
        -h1 / (h2 * (h1 + h2)),
    ]
}

/// `-∂_y v` at `y = 0`. Exact per mode for minimal extensions, one-sided
/// second-order differences otherwise.
pub fn dtn_map(ext: &ExtensionField, m: f64) -> Result<RealField> {
    check_mass(m)?;
    if ext.slab().layers < 4 {
        return Err(invalid("slab.layers", "slab too coarse for a boundary derivative"));
    }
    match ext.kind() {
        ExtensionKind::Minimal => apply_symbol_op(&ext.layer_field(0), m),
        ExtensionKind::FiniteDifference => {
            let w = one_sided_weights(ext.heights());
            let (l0, l1, l2) = (ext.layer(0), ext.layer(1), ext.layer(2));
            let v = (0..l0.len())
                .map(|i| -(w[0] * l0[i] + w[1] * l1[i] + w[2] * l2[i]))
                .collect();
            RealField::new(*ext.base_grid(), v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::l2_inner;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: Grid, seed: u64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealField::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rel_l2(a: &RealField, b: &RealField) -> f64 {
        let d = a.axpy(-1.0, b).unwrap();
        let n = l2_inner(b, b).unwrap().sqrt();
        l2_inner(&d, &d).unwrap().sqrt() / n
    }

    #[test]
    fn symbol_op_basic_cases() {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let z = apply_symbol_op(&RealField::zeros(g), 1.0).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let c = apply_symbol_op(&RealField::constant(g, 3.0), 2.0).unwrap();
        assert!(c.values().iter().all(|v| (v - 6.0).abs() < 1e-12));
        let k0 = std::f64::consts::PI / 4.0;
        let u = RealField::from_fn(g, |x| (k0 * x[0]).cos()).unwrap();
        let tu = apply_symbol_op(&u, 1.0).unwrap();
        let f = (k0 * k0 + 1.0).sqrt();
        for (a, b) in tu.values().iter().zip(u.values()) {
            assert!((a - f * b).abs() < 1e-12);
        }
        assert!(apply_symbol_op(&u, -1.0).is_err());
    }

    #[test]
    fn symbol_op_self_adjoint() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let (u, w) = (random_field(g, 1), random_field(g, 2));
        let a = l2_inner(&apply_symbol_op(&u, 0.7).unwrap(), &w).unwrap();
        let b = l2_inner(&u, &apply_symbol_op(&w, 0.7).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn trace_form_cases() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let c = RealField::constant(g, 1.5);
        assert!((trace_energy_form(&c, 1.0).unwrap() - 2.0 * 1.5 * 1.5).abs() < 1e-12);
        assert_eq!(trace_energy_form(&RealField::zeros(g), 1.0).unwrap(), 0.0);
        assert!(trace_energy_form(&c, 0.0).is_err());
        let k0 = std::f64::consts::PI;
        let zero_mean = RealField::from_fn(g, |x| (k0 * x[0]).sin()).unwrap();
        let e = trace_energy_form(&zero_mean, 0.0).unwrap();
        assert!((e - k0).abs() < 1e-12);
    }

    #[test]
    fn trace_form_bounded_below_by_mass() {
        let g = Grid::new(3, 8, 2.0).unwrap();
        let u = random_field(g, 5);
        let e = trace_energy_form(&u, 0.8).unwrap();
        assert!(e >= 0.8 * l2_inner(&u, &u).unwrap());
    }

    #[test]
    fn slab_heights() {
        let s = SlabSpec::new(2.0, 4, 1.0).unwrap();
        assert_eq!(s.heights(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let s = SlabSpec::new(10.0, 50, 8.0).unwrap();
        let y = s.heights();
        assert_eq!(y.len(), 51);
        assert_eq!(*y.last().unwrap(), 10.0);
        let ratio = (y[50] - y[49]) / (y[1] - y[0]);
        assert!((ratio - 8.0).abs() < 1e-9);
        assert!(SlabSpec::new(1.0, 3, 1.0).is_err());
        assert!(SlabSpec::new(1.0, 8, 0.5).is_err());
    }

    #[test]
    fn minimal_extension_constant_mode() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let spec = SlabSpec::new(5.0, 10, 2.0).unwrap();
        let ext = minimal_extension(&RealField::constant(g, 2.0), 1.0, spec).unwrap();
        for (j, &y) in ext.heights().iter().enumerate() {
            for v in ext.layer(j) {
                assert!((v - 2.0 * (-y).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn minimal_extension_layer_zero_exact() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let u = random_field(g, 9);
        let ext = minimal_extension(&u, 1.0, SlabSpec::new(3.0, 6, 1.0).unwrap()).unwrap();
        assert_eq!(ext.layer(0), u.values());
    }

    #[test]
    fn mode_profile_matches_sinh() {
        let spec = SlabSpec::new(4.0, 400, 1.0).unwrap();
        let y = spec.heights();
        let sigma = 1.3;
        let psi = mode_profile(&y, sigma).unwrap();
        let exact = |t: f64| (sigma * (4.0 - t)).sinh() / (sigma * 4.0).sinh();
        for (p, &t) in psi.iter().zip(&y) {
            assert!((p - exact(t)).abs() < 1e-4);
        }
    }

    #[test]
    fn fd_constant_dtn() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let spec = SlabSpec::new(20.0, 4000, 1.0).unwrap();
        let ext = fd_extension_solve(&RealField::constant(g, 1.5), 1.0, spec).unwrap();
        let d = dtn_map(&ext, 1.0).unwrap();
        for v in d.values() {
            assert!((v - 1.5).abs() / 1.5 < 1e-3);
        }
    }

    #[test]
    fn one_sided_weights_exact_on_quadratics() {
        let y = [0.0, 0.1, 0.35];
        let w = one_sided_weights(&y);
        let f = |t: f64| 2.0 - 3.0 * t + 5.0 * t * t;
        let d = w[0] * f(y[0]) + w[1] * f(y[1]) + w[2] * f(y[2]);
        assert!((d + 3.0).abs() < 1e-12);
    }

    #[test]
    fn dtn_of_minimal_is_symbol() {
        let g = Grid::new(2, 8, 2.0).unwrap();
        let u = random_field(g, 4);
        let ext = minimal_extension(&u, 1.0, SlabSpec::new(4.0, 8, 1.0).unwrap()).unwrap();
        let d = dtn_map(&ext, 1.0).unwrap();
        let t = apply_symbol_op(&u, 1.0).unwrap();
        assert!(rel_l2(&d, &t) < 1e-14);
    }
}
