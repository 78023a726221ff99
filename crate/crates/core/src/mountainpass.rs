//! Fixed-`λ` critical points of `J` at the mountain-pass level.
//!
//! For `λ > 0` the iteration runs on the ray-maximized functional
//! `Φ(v) = max_t J(tv)`: every iterate sits at the maximum of `J` along its
//! own ray, the step is a preconditioned gradient step followed by a new ray
//! maximization, and Armijo backtracking is applied to `Φ`. Since `t ↦ J(tv)`
//! is stationary at the maximizer, `Φ'(v) = J'(v)` on the iterates, so a
//! stationary point of `Φ` is a critical point of `J`. When no ray has an
//! interior maximum (for instance `λ <= 0` with `F_s s >= 0`) the iteration is
//! plain preconditioned descent on `J`, and collapse to zero is the expected
//! outcome.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{l2_inner_raw, Grid, RealField};
use crate::hartree::Kernel;
use crate::model::{check_assumptions, EnergyBreakdown, Model, ModelParams, Nonlinearity, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Stop when `|J'(v)|₂ <= tol (1 + |J(v)|)`.
    pub tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub armijo_slope: f64,
    /// Backtracking factor.
    pub armijo_factor: f64,
    pub initial_step: f64,
    /// Step growth after an accepted step.
    pub step_growth: f64,
    pub max_step: f64,
    /// `|v|₂` above this counts as a nontrivial solution.
    pub nontrivial_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 50_000,
            armijo_slope: 1e-4,
            armijo_factor: 0.5,
            initial_step: 1.0,
            step_growth: 1.5,
            max_step: 64.0,
            nontrivial_threshold: 1e-6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        if !(self.armijo_slope > 0.0 && self.armijo_slope < 1.0) {
            return Err(invalid("solver.armijo_slope", "must lie in (0, 1)"));
        }
        if !(self.armijo_factor > 0.0 && self.armijo_factor < 1.0) {
            return Err(invalid("solver.armijo_factor", "must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0 && self.max_step >= self.initial_step) {
            return Err(invalid("solver.initial_step", "need 0 < initial_step <= max_step"));
        }
        if !(self.step_growth >= 1.0) {
            return Err(invalid("solver.step_growth", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMode {
    RayMaximized,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub mode: DescentMode,
    /// Candidate mountain-pass level `J(v)`.
    pub final_energy: f64,
    pub energy: EnergyBreakdown,
    /// `|J'(v)|₂`
    pub grad_norm: f64,
    pub tolerance: f64,
    /// `J'(v)v`
    pub pairing: f64,
    pub l2_norm: f64,
    pub nontrivial: bool,
    pub min_value: f64,
    pub max_value: f64,
    pub radial_deviation: f64,
    /// `max |v|` on the outer lattice layer over `max |v|`.
    pub boundary_ratio: f64,
    /// `max_t J(t v)`, an upper bound for the level.
    pub ray_max_energy: Option<f64>,
    /// Whether the hypotheses of the existence result hold for this run.
    pub existence_regime: bool,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub energy: f64,
    pub grad_norm: f64,
    /// `sqrt⟨T^{-1} J'(v), J'(v)⟩`
    pub grad_dual_norm: f64,
    /// `sqrt⟨Tv, v⟩`
    pub norm: f64,
    pub pairing: f64,
}

/// Iteration history plus the last few iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub tail: Vec<RealField>,
    pub tol: f64,
    pub m: f64,
    pub omega: f64,
}

pub const TRACE_TAIL: usize = 10;

impl SolveTrace {
    /// `iteration,J,grad_norm` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "J", "grad_norm"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                format!("{:e}", r.energy),
                format!("{:e}", r.grad_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: RealField,
    pub report: SolveReport,
    pub trace: SolveTrace,
}

/// Partial result of a run that hit the iteration cap or stalled.
#[derive(Debug, Clone)]
pub struct Unconverged {
    pub field: RealField,
    pub report: SolveReport,
    pub trace: SolveTrace,
}

/// Samples of `J(t v₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProfile {
    pub ts: Vec<f64>,
    pub js: Vec<f64>,
    /// Largest sample strictly inside the range exceeds both zero and the endpoint.
    pub interior_max: bool,
    pub goes_negative: bool,
    pub t_peak: f64,
    pub j_peak: f64,
}

impl PathProfile {
    pub fn mountain_pass_geometry(&self) -> bool {
        self.interior_max && self.goes_negative
    }
}

pub fn path_profile(
    v0: &RealField,
    p: &ModelParams,
    w: &Kernel,
    f: &Nonlinearity,
    t_max: f64,
    samples: usize,
) -> Result<PathProfile> {
    if !(t_max > 0.0) || samples < 2 {
        return Err(invalid("path", "need t_max > 0 and at least two samples"));
    }
    let model = Model::new(*v0.grid(), *p, w, f)?;
    let st = model.state(v0.clone())?;
    let ts: Vec<f64> = (0..samples).map(|i| t_max * i as f64 / (samples - 1) as f64).collect();
    let js: Vec<f64> = ts.iter().map(|&t| model.ray_value(&st, t)).collect();
    let (ipk, &j_peak) = js
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("samples >= 2");
    Ok(PathProfile {
        interior_max: ipk > 0 && ipk < samples - 1 && j_peak > 0.0,
        goes_negative: js.iter().any(|&j| j < 0.0),
        t_peak: ts[ipk],
        j_peak,
        ts,
        js,
    })
}

/// Root of `f` in `[a, b]` (Brent's method); `f(a)` and `f(b)` must differ in sign.
pub(crate) fn brent_root<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, rtol: f64) -> f64 {
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut bisected = true;
    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() <= rtol * b.abs() {
            return b;
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc)) + b * fa * fc / ((fb - fa) * (fb - fc)) + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let out = !((s > lo.min(b)) && (s < lo.max(b)));
        let tiny = rtol * b.abs();
        if out
            || (bisected && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!bisected && (s - b).abs() >= (c - d).abs() / 2.0)
            || (bisected && (b - c).abs() < tiny)
            || (!bisected && (c - d).abs() < tiny)
        {
            s = 0.5 * (a + b);
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    b
}

/// First `t > 0` where `t ↦ J(t v)` turns from increasing to decreasing,
/// searched outward from `t = 1`.
pub fn ray_maximizer(model: &Model, st: &State) -> Option<f64> {
    if st.mass == 0.0 {
        return None;
    }
    let slope = |t: f64| model.ray_slope(st, t);
    let s1 = slope(1.0);
    let (lo, hi, flo, fhi) = if s1 > 0.0 {
        let (mut lo, mut flo) = (1.0, s1);
        let mut found = None;
        for _ in 0..200 {
            let hi = 2.0 * lo;
            let fhi = slope(hi);
            if !fhi.is_finite() {
                return None;
            }
            if fhi <= 0.0 {
                found = Some((lo, hi, flo, fhi));
                break;
            }
            lo = hi;
            flo = fhi;
        }
        found?
    } else {
        let (mut hi, mut fhi) = (1.0, s1);
        let mut found = None;
        for _ in 0..200 {
            let lo = 0.5 * hi;
            let flo = slope(lo);
            if flo > 0.0 {
                found = Some((lo, hi, flo, fhi));
                break;
            }
            hi = lo;
            fhi = flo;
        }
        found?
    };
    if fhi == 0.0 {
        return Some(hi);
    }
    Some(brent_root(slope, lo, hi, flo, fhi, 1e-14))
}

/// Largest spread of `v` among lattice points at equal distance from the
/// center, within `|x| <= L/2`, relative to `max |v|`.
pub fn radial_deviation(v: &RealField) -> f64 {
    let g = v.grid();
    let peak = v.max_abs();
    if peak == 0.0 {
        return 0.0;
    }
    let c = g.n() / 2;
    let limit = (g.n() / 4) as i64;
    let mut groups: std::collections::BTreeMap<u64, (f64, f64)> = std::collections::BTreeMap::new();
    for i in 0..g.len() {
        let idx = g.multi_index(i);
        let r2: i64 = (0..g.dim()).map(|a| (idx[a] as i64 - c as i64).pow(2)).sum();
        if r2 > limit * limit {
            continue;
        }
        let x = v.values()[i];
        let e = groups.entry(r2 as u64).or_insert((x, x));
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
    }
    groups.values().fold(0.0_f64, |a, (lo, hi)| a.max(hi - lo)) / peak
}

fn l2(grid: &Grid, a: &[f64]) -> f64 {
    l2_inner_raw(grid, a, a).sqrt()
}

/// Run the descent with a prebuilt model (sweeps reuse one model per grid).
pub fn solve_with_model(model: &Model, v0: &RealField, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    model.params().require_bound_state()?;
    if v0.max_abs() == 0.0 {
        return Err(invalid("v0", "initial field is identically zero"));
    }
    let start = Instant::now();
    let grid = *model.grid();
    let params = *model.params();

    let st0 = model.state(v0.clone())?;
    let first_ray = if params.lambda > 0.0 { ray_maximizer(model, &st0) } else { None };
    let mode = if first_ray.is_some() {
        DescentMode::RayMaximized
    } else {
        DescentMode::Plain
    };
    let mut st = match first_ray {
        Some(t) => st0.scaled(t),
        None => st0,
    };
    let mut energy = model.energy_of(&st).total;
    let mut tau = opts.initial_step;
    let mut records = Vec::new();
    let mut tail: VecDeque<RealField> = VecDeque::with_capacity(TRACE_TAIL);
    let mut converged = false;
    let mut grad_norm;
    let mut iterations = 0;

    loop {
        let g = model.gradient_of(&st);
        grad_norm = l2(&grid, g.values());
        let (pg, dual2) = model.precondition_with_dual(&g);
        let pairing = model.pairing_of(&st);
        records.push(TraceRecord {
            iteration: iterations,
            energy,
            grad_norm,
            grad_dual_norm: dual2.max(0.0).sqrt(),
            norm: st.kinetic.max(0.0).sqrt(),
            pairing,
        });
        if tail.len() == TRACE_TAIL {
            tail.pop_front();
        }
        tail.push_back(st.v.clone());

        if grad_norm <= opts.tol * (1.0 + energy.abs()) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        let slope = -l2_inner_raw(&grid, g.values(), pg.values());
        if !(slope < 0.0) {
            break;
        }
        let mut accepted = None;
        while tau >= 1e-14 {
            let w = st.v.axpy(-tau, &pg)?;
            let mut cand = model.state(w)?;
            if mode == DescentMode::RayMaximized {
                match ray_maximizer(model, &cand) {
                    Some(t) => cand = cand.scaled(t),
                    None => {
                        tau *= opts.armijo_factor;
                        continue;
                    }
                }
            }
            let e = model.energy_of(&cand).total;
            if e <= energy + opts.armijo_slope * tau * slope {
                accepted = Some((cand, e));
                break;
            }
            // below roundoff in J, fall back to decrease of the gradient
            if (e - energy).abs() <= 1e-13 * (1.0 + energy.abs())
                && l2(&grid, model.gradient_of(&cand).values()) < grad_norm
            {
                accepted = Some((cand, e));
                break;
            }
            tau *= opts.armijo_factor;
        }
        match accepted {
            Some((cand, e)) => {
                st = cand;
                energy = e;
                tau = (tau * opts.step_growth).min(opts.max_step);
                iterations += 1;
            }
            None => break,
        }
    }

    let eb = model.energy_of(&st);
    let l2_norm = st.mass.sqrt();
    let assumptions = check_assumptions(model.nonlinearity(), grid.dim(), 512);
    let ray_max_energy = if st.mass > 0.0 {
        ray_maximizer(model, &st).map(|t| model.ray_value(&st, t))
    } else {
        None
    };
    let report = SolveReport {
        converged,
        iterations,
        mode,
        final_energy: eb.total,
        energy: eb,
        grad_norm,
        tolerance: opts.tol,
        pairing: model.pairing_of(&st),
        l2_norm,
        nontrivial: l2_norm > opts.nontrivial_threshold,
        min_value: st.v.min(),
        max_value: st.v.max(),
        radial_deviation: radial_deviation(&st.v),
        boundary_ratio: st.v.boundary_ratio(),
        ray_max_energy,
        existence_regime: params.lambda > 0.0 && params.omega < params.m && assumptions.existence_regime(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    let trace = SolveTrace {
        records,
        tail: tail.into_iter().collect(),
        tol: opts.tol,
        m: params.m,
        omega: params.omega,
    };
    if converged {
        Ok(Solution {
            field: st.v,
            report,
            trace,
        })
    } else {
        Err(Error::NonConvergence(Box::new(Unconverged {
            field: st.v,
            report,
            trace,
        })))
    }
}

pub fn solve_fixed_lambda(
    v0: &RealField,
    p: &ModelParams,
    w: &Kernel,
    f: &Nonlinearity,
    opts: &SolverOptions,
) -> Result<Solution> {
    let model = Model::new(*v0.grid(), *p, w, f)?;
    solve_with_model(&model, v0, opts)
}

/// Post-hoc Palais–Smale style audit of a descent trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsReport {
    /// `sup |J_n| <= 10 (1 + |J_0|)`
    pub energies_bounded: bool,
    /// `c‖v_n‖² <= A + B‖v_n‖` with `A = 4 sup J_n`, `B = sup ‖J'(v_n)‖_*`, `c = min(1, 1 - ω/m)`.
    pub norms_bounded: bool,
    /// Last iterates within `100 tol (1 + |v|₂)` of each other in `L²`.
    pub cauchy_tail: bool,
    pub max_abs_energy: f64,
    pub bound_a: f64,
    pub bound_b: f64,
    pub coercivity: f64,
    pub max_norm: f64,
    pub tail_spread: f64,
}

impl PsReport {
    pub fn passes(&self) -> bool {
        self.energies_bounded && self.norms_bounded && self.cauchy_tail
    }
}

pub fn ps_diagnostic(trace: &SolveTrace) -> PsReport {
    let recs = &trace.records;
    let j0 = recs.first().map_or(0.0, |r| r.energy);
    let max_abs_energy = recs.iter().fold(0.0_f64, |a, r| a.max(r.energy.abs()));
    let energies_bounded = recs.iter().all(|r| r.energy.is_finite()) && max_abs_energy <= 10.0 * (1.0 + j0.abs());
    let bound_a = 4.0 * recs.iter().fold(f64::NEG_INFINITY, |a, r| a.max(r.energy));
    let bound_b = recs.iter().fold(0.0_f64, |a, r| a.max(r.grad_dual_norm));
    let coercivity = if trace.omega > 0.0 { (1.0 - trace.omega / trace.m).min(1.0) } else { 1.0 };
    let max_norm = recs.iter().fold(0.0_f64, |a, r| a.max(r.norm));
    let norms_bounded = recs.iter().all(|r| {
        let lhs = coercivity * r.norm * r.norm;
        let rhs = bound_a + bound_b * r.norm;
        r.norm.is_finite() && lhs <= rhs + 1e-9 * (lhs.abs() + rhs.abs())
    });
    let mut tail_spread: f64 = 0.0;
    for (i, a) in trace.tail.iter().enumerate() {
        for b in &trace.tail[i + 1..] {
            let d: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
            tail_spread = tail_spread.max(l2(a.grid(), &d));
        }
    }
    let last_norm = trace
        .tail
        .last()
        .map_or(0.0, |v| l2(v.grid(), v.values()));
    PsReport {
        energies_bounded,
        norms_bounded,
        cauchy_tail: tail_spread <= 100.0 * trace.tol * (1.0 + last_norm),
        max_abs_energy,
        bound_a,
        bound_b,
        coercivity,
        max_norm,
        tail_spread,
    }
}

/// Restart the descent from `|v|`; needs `F(x,s) >= F(x,|s|)`.
pub fn absolute_value_polish(
    v: &RealField,
    p: &ModelParams,
    w: &Kernel,
    f: &Nonlinearity,
    opts: &SolverOptions,
) -> Result<Solution> {
    let flags = check_assumptions(f, v.grid().dim(), 512);
    if !flags.abs_dominates {
        return Err(Error::Precondition("F(x,s) >= F(x,|s|) does not hold".into()));
    }
    solve_fixed_lambda(&v.abs(), p, w, f, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn brent_finds_roots() {
        let f = |x: f64| x * x * x - 2.0;
        let r = brent_root(f, 0.0, 2.0, f(0.0), f(2.0), 1e-15);
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
        let g = |x: f64| (x - 0.3).tanh();
        let r = brent_root(g, -5.0, 1.0, g(-5.0), g(1.0), 1e-15);
        assert!((r - 0.3).abs() < 1e-13);
    }

    fn small_model(lambda: f64, f: Nonlinearity) -> (Model, RealField) {
        let g = Grid::new(3, 8, 4.0).unwrap();
        let p = ModelParams::new(1.0, 0.5, lambda).unwrap();
        let model = Model::new(g, p, &Kernel::newton(), &f).unwrap();
        let v = RealField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp()).unwrap();
        (model, v)
    }

    #[test]
    fn ray_max_closed_form_for_zero_f() {
        let (model, v) = small_model(1.0, Nonlinearity::zero());
        let st = model.state(v).unwrap();
        let a = st.kinetic - 0.5 * st.mass;
        let t = ray_maximizer(&model, &st).unwrap();
        let exact = (a / st.quartic).sqrt();
        assert!((t - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn no_ray_max_for_negative_lambda() {
        let (model, v) = small_model(-1.0, Nonlinearity::power(1.0, 1.0, 2.5).unwrap());
        let st = model.state(v).unwrap();
        assert!(ray_maximizer(&model, &st).is_none());
    }

    #[test]
    fn profile_starts_at_zero() {
        let (model, v) = small_model(1.0, Nonlinearity::zero());
        let prof = path_profile(&v, model.params(), model.kernel(), model.nonlinearity(), 50.0, 201).unwrap();
        assert_eq!(prof.ts[0], 0.0);
        assert_eq!(prof.js[0], 0.0);
        assert!(prof.mountain_pass_geometry());
    }

    #[test]
    fn radial_deviation_of_radial_field_is_small() {
        let g = Grid::new(3, 16, 4.0).unwrap();
        let v = RealField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()).unwrap();
        assert!(radial_deviation(&v) < 1e-14);
        let w = RealField::from_fn(g, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2])).exp()).unwrap();
        assert!(radial_deviation(&w) > 1e-2);
    }

    #[test]
    fn synthetic_traces() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let rec = |i: usize, e: f64| TraceRecord {
            iteration: i,
            energy: e,
            grad_norm: 0.0,
            grad_dual_norm: 0.0,
            norm: 1.0,
            pairing: 0.0,
        };
        let v = RealField::constant(g, 0.5);
        let constant = SolveTrace {
            records: (0..5).map(|i| rec(i, 1.0)).collect(),
            tail: vec![v.clone(); 5],
            tol: 1e-8,
            m: 1.0,
            omega: 0.5,
        };
        let rep = ps_diagnostic(&constant);
        assert!(rep.cauchy_tail && rep.energies_bounded && rep.norms_bounded);
        let diverging = SolveTrace {
            records: (0..50).map(|i| rec(i, (i * i) as f64)).collect(),
            ..constant
        };
        assert!(!ps_diagnostic(&diverging).energies_bounded);
    }
}
