//! Nonlinearity `F`, physical parameters and the functional
//!
//! ```text
//! J(v) = ½⟨Tv, v⟩ - (ω/2)|v|₂² - (λ/4) Q(v) + ∫ F(|x|, v)
//! ```
//!
//! whose `L²` gradient is `Tv - ωv - λ(W ∗ v²)v + F_s(|x|, v)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fracops::symbol_table;
use crate::grid::{
    apply_multiplier, det_sum, forward_transform, inverse_transform, l2_inner_raw, same_grid, Grid, RealField,
};
use crate::hartree::{quartic_from, HartreeOperator, Kernel};

/// `(|x|, s) -> value`; must be a pure, thread-safe function.
pub type RadialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Declared constants of `|F_s(x,s)| <= c1 |s|^{ell-1} + c2 |s|^{p-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub c1: f64,
    pub ell: f64,
    pub c2: f64,
    pub p: f64,
}

#[derive(Clone)]
pub enum NonlinearityKind {
    Zero,
    /// `F = sign·coeff·|s|^p / p`
    Power { sign: f64, coeff: f64, exponent: f64 },
    /// `F = c1|s|^ell/ell + c2|s|^p/p`
    TwoPower { c1: f64, ell: f64, c2: f64, p: f64 },
    Custom {
        f: RadialFn,
        fs: RadialFn,
        label: String,
        growth: Option<Growth>,
    },
}

impl fmt::Debug for NonlinearityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Power { sign, coeff, exponent } => {
                write!(f, "Power {{ sign: {sign}, coeff: {coeff}, exponent: {exponent} }}")
            }
            Self::TwoPower { c1, ell, c2, p } => {
                write!(f, "TwoPower {{ c1: {c1}, ell: {ell}, c2: {c2}, p: {p} }}")
            }
            Self::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    ar_constant: f64,
}

impl Nonlinearity {
    pub fn zero() -> Self {
        Self {
            kind: NonlinearityKind::Zero,
            ar_constant: 2.0,
        }
    }

    /// `sign·coeff·|s|^p/p` with `p > 1`; the constant `k` defaults to `max(p, 2)`.
    pub fn power(sign: f64, coeff: f64, exponent: f64) -> Result<Self> {
        if sign != 1.0 && sign != -1.0 {
            return Err(invalid("nonlinearity.sign", "must be +1 or -1"));
        }
        if !(coeff.is_finite() && coeff > 0.0) {
            return Err(invalid("nonlinearity.coeff", "must be positive"));
        }
        if !(exponent.is_finite() && exponent > 1.0) {
            return Err(invalid("nonlinearity.p", "exponent must exceed 1"));
        }
        Ok(Self {
            kind: NonlinearityKind::Power { sign, coeff, exponent },
            ar_constant: exponent.max(2.0),
        })
    }

    /// `c1|s|^ell/ell + c2|s|^p/p` with `c1, c2 > 0` and `2 < ell < p`; `k = p`.
    pub fn two_power(c1: f64, ell: f64, c2: f64, p: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(invalid("nonlinearity.c1/c2", "constants must be positive"));
        }
        if !(2.0 < ell && ell < p && p.is_finite()) {
            return Err(invalid("nonlinearity.ell/p", "need 2 < ell < p"));
        }
        Ok(Self {
            kind: NonlinearityKind::TwoPower { c1, ell, c2, p },
            ar_constant: p,
        })
    }

    pub fn custom(f: RadialFn, fs: RadialFn, label: impl Into<String>, ar_constant: f64, growth: Option<Growth>) -> Result<Self> {
        Self {
            kind: NonlinearityKind::Custom {
                f,
                fs,
                label: label.into(),
                growth,
            },
            ar_constant: 2.0,
        }
        .with_ar_constant(ar_constant)
    }

    pub fn with_ar_constant(mut self, k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 2.0) {
            return Err(invalid("nonlinearity.k", format!("need k >= 2, got {k}")));
        }
        self.ar_constant = k;
        Ok(self)
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn ar_constant(&self) -> f64 {
        self.ar_constant
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NonlinearityKind::Zero)
    }

    /// True when `F` does not depend on `x`.
    pub fn is_autonomous(&self) -> bool {
        !matches!(self.kind, NonlinearityKind::Custom { .. })
    }

    /// `(sign, p)` for a pure power.
    pub fn power_law(&self) -> Option<(f64, f64)> {
        match self.kind {
            NonlinearityKind::Power { sign, exponent, .. } => Some((sign, exponent)),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            NonlinearityKind::Zero => "zero".into(),
            NonlinearityKind::Power { sign, coeff, exponent } => {
                let s = if *sign > 0.0 { "+" } else { "-" };
                format!("{s}{coeff}|s|^{exponent}/{exponent}")
            }
            NonlinearityKind::TwoPower { c1, ell, c2, p } => {
                format!("{c1}|s|^{ell}/{ell}+{c2}|s|^{p}/{p}")
            }
            NonlinearityKind::Custom { label, .. } => label.clone(),
        }
    }

    /// `F(|x|, s)`.
    pub fn value(&self, r: f64, s: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Zero => 0.0,
            NonlinearityKind::Power { sign, coeff, exponent } => {
                sign * coeff * s.abs().powf(*exponent) / exponent
            }
            NonlinearityKind::TwoPower { c1, ell, c2, p } => {
                let a = s.abs();
                c1 * a.powf(*ell) / ell + c2 * a.powf(*p) / p
            }
            NonlinearityKind::Custom { f, .. } => f(r, s),
        }
    }

    /// `F_s(|x|, s)`.
    pub fn derivative(&self, r: f64, s: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Zero => 0.0,
            NonlinearityKind::Power { sign, coeff, exponent } => {
                sign * coeff * s.abs().powf(exponent - 1.0) * s.signum()
            }
            NonlinearityKind::TwoPower { c1, ell, c2, p } => {
                let a = s.abs();
                (c1 * a.powf(ell - 1.0) + c2 * a.powf(p - 1.0)) * s.signum()
            }
            NonlinearityKind::Custom { fs, .. } => fs(r, s),
        }
    }

    /// Growth constants used by the `F_s` bound, if known.
    pub fn growth(&self, dim: usize) -> Option<Growth> {
        match &self.kind {
            NonlinearityKind::Zero => None,
            NonlinearityKind::Power { coeff, exponent, .. } => {
                let p = *exponent;
                if p <= 2.0 {
                    return Some(Growth { c1: *coeff, ell: p, c2: *coeff, p });
                }
                // |s|^{p-1} <= |s|^{ell-1} + |s|^{q-1} for any ell < p < q
                let crit = critical_exponent(dim);
                let q = if p < crit { 0.5 * (p + crit.min(p + 2.0)) } else { p };
                Some(Growth {
                    c1: *coeff,
                    ell: 0.5 * (2.0 + p),
                    c2: *coeff,
                    p: q,
                })
            }
            NonlinearityKind::TwoPower { c1, ell, c2, p } => Some(Growth {
                c1: *c1,
                ell: *ell,
                c2: *c2,
                p: *p,
            }),
            NonlinearityKind::Custom { growth, .. } => *growth,
        }
    }
}

pub fn f_eval(f: &Nonlinearity, s: f64, x: &[f64]) -> f64 {
    f.value(radius(x), s)
}

pub fn fs_eval(f: &Nonlinearity, s: f64, x: &[f64]) -> f64 {
    f.derivative(radius(x), s)
}

fn radius(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `2N/(N-1)`, infinite for `N = 1`.
pub fn critical_exponent(dim: usize) -> f64 {
    if dim <= 1 {
        f64::INFINITY
    } else {
        2.0 * dim as f64 / (dim as f64 - 1.0)
    }
}

/// Physical parameters `(m, ω, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m: f64,
    pub omega: f64,
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(m: f64, omega: f64, lambda: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(invalid("model.m", format!("mass must be positive, got {m}")));
        }
        if !omega.is_finite() {
            return Err(invalid("model.omega", "must be finite"));
        }
        if !lambda.is_finite() {
            return Err(invalid("model.lambda", "must be finite"));
        }
        Ok(Self { m, omega, lambda })
    }

    /// Solvers need `ω < m` so that `⟨Tv,v⟩ - ω|v|²` is a norm.
    pub fn require_bound_state(&self) -> Result<()> {
        if self.omega < self.m {
            Ok(())
        } else {
            Err(invalid(
                "model.omega",
                format!("need omega < m for a bound state (omega = {}, m = {})", self.omega, self.m),
            ))
        }
    }
}

/// Sampled audit of the structural assumptions on `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub dim: usize,
    pub samples: usize,
    pub k: f64,
    pub critical_exponent: f64,
    pub growth: Option<Growth>,
    /// `F(x,0) = F_s(x,0) = 0`
    pub vanishes_at_zero: bool,
    /// `|F_s| <= c1|s|^{ell-1} + c2|s|^{p-1}` on the sample; `None` without declared constants.
    pub growth_bound: Option<bool>,
    /// `2 < ell < p`
    pub exponent_order: bool,
    /// `p < 2N/(N-1)`
    pub subcritical: bool,
    /// `0 <= s F_s <= k F`
    pub ar_condition: bool,
    pub nonnegative: bool,
    pub k_at_most_4: bool,
    pub even: bool,
    /// `F(x,s) >= F(x,|s|)`
    pub abs_dominates: bool,
    /// `F_s(x,s) s >= 0`
    pub fs_s_nonnegative: bool,
    /// `2F <= F_s s`
    pub superquadratic: bool,
}

impl AssumptionReport {
    pub fn f1(&self) -> bool {
        self.vanishes_at_zero
    }

    pub fn f2(&self) -> bool {
        self.growth_bound.unwrap_or(false) && self.exponent_order && self.subcritical
    }

    pub fn f3(&self) -> bool {
        self.ar_condition
    }

    /// All hypotheses of the existence result, including `k <= 4`.
    pub fn existence_regime(&self) -> bool {
        self.f1() && self.f2() && self.f3() && self.k_at_most_4
    }
}

fn le(a: f64, b: f64) -> bool {
    a <= b + 1e-12 * (a.abs() + b.abs()) + 1e-300
}

/// Signed log grid `±[1e-6, 1e3]` with `samples` points per sign.
pub fn signed_log_grid(samples: usize) -> Vec<f64> {
    let n = samples.max(1);
    let mut s = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let a = 1e-6 * (1e9f64).powf(t);
        s.push(a);
        s.push(-a);
    }
    s
}

const SAMPLE_RADII: [f64; 7] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

pub fn check_assumptions(f: &Nonlinearity, dim: usize, samples: usize) -> AssumptionReport {
    let s_grid = signed_log_grid(samples);
    let radii: &[f64] = if f.is_autonomous() { &SAMPLE_RADII[..1] } else { &SAMPLE_RADII };
    let k = f.ar_constant();
    let growth = f.growth(dim);
    let crit = critical_exponent(dim);

    let mut vanishes = true;
    let mut growth_ok = true;
    let mut ar = true;
    let mut nonneg = true;
    let mut even = true;
    let mut abs_dom = true;
    let mut fss = true;
    let mut superq = true;
    for &r in radii {
        if f.value(r, 0.0) != 0.0 || f.derivative(r, 0.0) != 0.0 {
            vanishes = false;
        }
        for &s in &s_grid {
            let fv = f.value(r, s);
            let d = f.derivative(r, s);
            let sd = s * d;
            if let Some(g) = growth {
                let a = s.abs();
                if !le(d.abs(), g.c1 * a.powf(g.ell - 1.0) + g.c2 * a.powf(g.p - 1.0)) {
                    growth_ok = false;
                }
            }
            if !(le(0.0, sd) && le(sd, k * fv)) {
                ar = false;
            }
            if !le(0.0, fv) {
                nonneg = false;
            }
            let fm = f.value(r, -s);
            if (fv - fm).abs() > 1e-12 * (fv.abs() + fm.abs()) {
                even = false;
            }
            if !le(f.value(r, s.abs()), fv) {
                abs_dom = false;
            }
            if !le(0.0, sd) {
                fss = false;
            }
            if !le(2.0 * fv, sd) {
                superq = false;
            }
        }
    }

    let (growth_bound, exponent_order, subcritical) = match (&f.kind, growth) {
        (NonlinearityKind::Zero, _) => (Some(true), true, true),
        (_, Some(g)) => (Some(growth_ok), 2.0 < g.ell && g.ell < g.p, g.p < crit),
        (_, None) => (None, false, false),
    };

    AssumptionReport {
        dim,
        samples,
        k,
        critical_exponent: crit,
        growth,
        vanishes_at_zero: vanishes,
        growth_bound,
        exponent_order,
        subcritical,
        ar_condition: ar,
        nonnegative: nonneg,
        k_at_most_4: k <= 4.0,
        even,
        abs_dominates: abs_dom,
        fs_s_nonnegative: fss,
        superquadratic: superq,
    }
}

/// Term-by-term value of `J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `½⟨Tv, v⟩`
    pub kinetic_mass: f64,
    /// `-(ω/2)|v|₂²`
    pub omega_term: f64,
    /// `-(λ/4)Q(v)`
    pub hartree_term: f64,
    /// `∫F(x, v)`
    pub potential_term: f64,
    pub total: f64,
}

/// Everything needed to evaluate `J`, `J'` at one field, with the cheap
/// quantities cached so that rescaling `v -> tv` costs no transforms.
#[derive(Debug, Clone)]
pub struct State {
    pub v: RealField,
    /// `Tv`
    pub tv: Vec<f64>,
    /// `W ∗ v²`
    pub phi: Vec<f64>,
    /// `⟨Tv, v⟩`
    pub kinetic: f64,
    /// `|v|₂²`
    pub mass: f64,
    /// `Q(v)`
    pub quartic: f64,
}

impl State {
    /// The state of `t·v`.
    pub fn scaled(&self, t: f64) -> State {
        State {
            v: self.v.scaled(t),
            tv: self.tv.iter().map(|x| t * x).collect(),
            phi: self.phi.iter().map(|x| t * t * x).collect(),
            kinetic: t * t * self.kinetic,
            mass: t * t * self.mass,
            quartic: t.powi(4) * self.quartic,
        }
    }
}

/// A fixed problem instance: grid, parameters, kernel and nonlinearity, with
/// the symbol and convolution tables precomputed.
#[derive(Debug, Clone)]
pub struct Model {
    grid: Grid,
    params: ModelParams,
    nonlinearity: Nonlinearity,
    kernel: Kernel,
    hartree: HartreeOperator,
    sigma: Vec<f64>,
    radii: Vec<f64>,
}

impl Model {
    pub fn new(grid: Grid, params: ModelParams, kernel: &Kernel, nonlinearity: &Nonlinearity) -> Result<Self> {
        let hartree = HartreeOperator::new(kernel, &grid)?;
        let radii = if nonlinearity.is_autonomous() {
            Vec::new()
        } else {
            (0..grid.len()).map(|i| grid.radius(i)).collect()
        };
        Ok(Self {
            grid,
            params,
            nonlinearity: nonlinearity.clone(),
            kernel: kernel.clone(),
            hartree,
            sigma: symbol_table(&grid, params.m),
            radii,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn hartree(&self) -> &HartreeOperator {
        &self.hartree
    }

    /// Same instance with different `(m, ω, λ)`.
    pub fn with_params(&self, params: ModelParams) -> Self {
        let mut out = self.clone();
        if params.m != self.params.m {
            out.sigma = symbol_table(&self.grid, params.m);
        }
        out.params = params;
        out
    }

    fn r(&self, i: usize) -> f64 {
        if self.radii.is_empty() {
            0.0
        } else {
            self.radii[i]
        }
    }

    pub fn state(&self, v: RealField) -> Result<State> {
        same_grid(&self.grid, v.grid())?;
        let tv = apply_multiplier(&v, &self.sigma).into_values();
        let phi = self.hartree.potential(&v)?.into_values();
        let vals = v.values();
        let kinetic = l2_inner_raw(&self.grid, &tv, vals);
        let mass = l2_inner_raw(&self.grid, vals, vals);
        let quartic = quartic_from(&self.grid, vals, &phi);
        Ok(State {
            v,
            tv,
            phi,
            kinetic,
            mass,
            quartic,
        })
    }

    /// `h^N Σ F(|x_i|, v_i)`.
    pub fn potential_integral(&self, v: &[f64]) -> f64 {
        let f = &self.nonlinearity;
        if f.is_zero() {
            return 0.0;
        }
        self.grid.cell_volume() * det_sum(v.len(), |i| f.value(self.r(i), v[i]))
    }

    /// `h^N Σ F_s(|x_i|, t v_i) w_i`.
    pub fn derivative_integral(&self, v: &[f64], t: f64, w: &[f64]) -> f64 {
        let f = &self.nonlinearity;
        if f.is_zero() {
            return 0.0;
        }
        self.grid.cell_volume() * det_sum(v.len(), |i| f.derivative(self.r(i), t * v[i]) * w[i])
    }

    pub fn energy_of(&self, st: &State) -> EnergyBreakdown {
        let p = &self.params;
        let kinetic_mass = 0.5 * st.kinetic;
        let omega_term = -0.5 * p.omega * st.mass;
        let hartree_term = -0.25 * p.lambda * st.quartic;
        let potential_term = self.potential_integral(st.v.values());
        EnergyBreakdown {
            kinetic_mass,
            omega_term,
            hartree_term,
            potential_term,
            total: kinetic_mass + omega_term + hartree_term + potential_term,
        }
    }

    pub fn gradient_of(&self, st: &State) -> RealField {
        let p = &self.params;
        let f = &self.nonlinearity;
        let v = st.v.values();
        let g = (0..v.len())
            .map(|i| {
                st.tv[i] - p.omega * v[i] - p.lambda * st.phi[i] * v[i] + f.derivative(self.r(i), v[i])
            })
            .collect();
        RealField::from_raw(self.grid, g)
    }

    /// `J'(v)v = ⟨Tv,v⟩ - ω|v|² - λQ(v) + ∫F_s(v)v`.
    pub fn pairing_of(&self, st: &State) -> f64 {
        let p = &self.params;
        let v = st.v.values();
        st.kinetic - p.omega * st.mass - p.lambda * st.quartic + self.derivative_integral(v, 1.0, v)
    }

    /// `d/dt J(t v)`.
    pub fn ray_slope(&self, st: &State, t: f64) -> f64 {
        let p = &self.params;
        let v = st.v.values();
        t * (st.kinetic - p.omega * st.mass) - p.lambda * t.powi(3) * st.quartic
            + self.derivative_integral(v, t, v)
    }

    /// `J(t v)` without recomputing transforms.
    pub fn ray_value(&self, st: &State, t: f64) -> f64 {
        let p = &self.params;
        let scaled: Vec<f64> = st.v.values().iter().map(|x| t * x).collect();
        0.5 * t * t * (st.kinetic - p.omega * st.mass) - 0.25 * p.lambda * t.powi(4) * st.quartic
            + self.potential_integral(&scaled)
    }

    /// `P^{-1} g` with `P = σ(k) - ω`, the quadratic part of `J''(0)`.
    pub fn precondition(&self, g: &RealField) -> RealField {
        self.precondition_with_dual(g).0
    }

    /// `P^{-1} g` together with `⟨T^{-1} g, g⟩`.
    pub fn precondition_with_dual(&self, g: &RealField) -> (RealField, f64) {
        let om = self.params.omega;
        let mut s = forward_transform(g);
        let dual = self.grid.cell_volume()
            * det_sum(s.coeffs().len(), |i| s.coeffs()[i].norm_sqr() / self.sigma[i]);
        let inv: Vec<f64> = self.sigma.iter().map(|s| 1.0 / (s - om)).collect();
        s.scale_by(&inv);
        (inverse_transform(&s), dual)
    }
}

pub fn energy(v: &RealField, p: &ModelParams, w: &Kernel, f: &Nonlinearity) -> Result<EnergyBreakdown> {
    let model = Model::new(*v.grid(), *p, w, f)?;
    Ok(model.energy_of(&model.state(v.clone())?))
}

pub fn gradient(v: &RealField, p: &ModelParams, w: &Kernel, f: &Nonlinearity) -> Result<RealField> {
    let model = Model::new(*v.grid(), *p, w, f)?;
    Ok(model.gradient_of(&model.state(v.clone())?))
}

pub fn derivative_pairing(v: &RealField, p: &ModelParams, w: &Kernel, f: &Nonlinearity) -> Result<f64> {
    let model = Model::new(*v.grid(), *p, w, f)?;
    Ok(model.pairing_of(&model.state(v.clone())?))
}
