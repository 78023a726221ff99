//! Minimization of `I(v) = ½(⟨Tv,v⟩ - ω|v|₂²) + ∫F(x,v)` on `M = {Q(v) = 1}`.
//!
//! Iterates stay on `M` by exact rescaling (`Q(tv) = t⁴Q(v)`). The search
//! direction is the preconditioned gradient made tangent to `M`, and the
//! multiplier is read off as `λ = I'(v)v`, which is exact on `M` because
//! `Q'(v)v = 4Q(v)` and the Euler–Lagrange equation is `I'(v) = λ (W ∗ v²) v`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracops::trace_energy_form;
use crate::grid::{l2_inner_raw, RealField};
use crate::hartree::Kernel;
use crate::model::{check_assumptions, Model, ModelParams, Nonlinearity, State};
use crate::mountainpass::{radial_deviation, SolverOptions};

#[derive(Debug, Clone)]
pub struct ManifoldState {
    pub v: RealField,
    pub q_value: f64,
    pub i_value: f64,
    pub multiplier_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_i: f64,
    /// `λ = I'(v)v`
    pub multiplier: f64,
    /// `|I'(v) - λ(W ∗ v²)v|₂`
    pub residual: f64,
    /// `|I'(v)|₂`
    pub grad_norm: f64,
    pub tolerance: f64,
    /// Largest `|Q(v) - 1|` over accepted iterates.
    pub max_constraint_error: f64,
    /// `I` never increased along accepted steps.
    pub monotone: bool,
    pub min_value: f64,
    pub max_value: f64,
    pub radial_deviation: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

/// `½[⟨Tv,v⟩ - ω|v|₂²] + h^N Σ F(|x_i|, v_i)`.
pub fn i_functional(v: &RealField, p: &ModelParams, f: &Nonlinearity) -> Result<f64> {
    p.require_bound_state()?;
    let g = v.grid();
    let vals = v.values();
    let k = trace_energy_form(v, p.m)?;
    let s = l2_inner_raw(g, vals, vals);
    let pot = g.cell_volume() * crate::grid::det_sum(vals.len(), |i| f.value(g.radius(i), vals[i]));
    Ok(0.5 * (k - p.omega * s) + pot)
}

/// `Q(v)^{-1/4} v`.
pub fn project_to_m(v: &RealField, w: &Kernel) -> Result<RealField> {
    let q = crate::hartree::hartree_quartic(v, w)?;
    if !(q > 0.0) {
        return Err(Error::ProjectionFailed);
    }
    Ok(v.scaled(q.powf(-0.25)))
}

fn i_of(model: &Model, st: &State) -> f64 {
    0.5 * (st.kinetic - model.params().omega * st.mass) + model.potential_integral(st.v.values())
}

fn project_state(st: State) -> Result<State> {
    if !(st.quartic > 0.0) {
        return Err(Error::ProjectionFailed);
    }
    let t = st.quartic.powf(-0.25);
    Ok(st.scaled(t))
}

fn to_state(model: &Model, st: &State) -> ManifoldState {
    let ig = i_gradient(model, st);
    ManifoldState {
        v: st.v.clone(),
        q_value: st.quartic,
        i_value: i_of(model, st),
        multiplier_estimate: l2_inner_raw(model.grid(), &ig, st.v.values()),
    }
}

/// `I'(v) = Tv - ωv + F_s(x, v)`.
fn i_gradient(model: &Model, st: &State) -> Vec<f64> {
    let om = model.params().omega;
    let f = model.nonlinearity();
    let g = model.grid();
    let v = st.v.values();
    (0..v.len())
        .map(|i| {
            let r = if f.is_autonomous() { 0.0 } else { g.radius(i) };
            st.tv[i] - om * v[i] + f.derivative(r, v[i])
        })
        .collect()
}

/// Size of roundoff in a computed value of `I`.
fn noise(i: f64) -> f64 {
    1e-13 * (1.0 + i.abs())
}

/// `|I'(v) - λ(W ∗ v²)v|₂` with `λ = I'(v)v`.
fn lagrange_residual(model: &Model, st: &State) -> f64 {
    let grid = model.grid();
    let ig = i_gradient(model, st);
    let lam = l2_inner_raw(grid, &ig, st.v.values());
    let r: Vec<f64> = (0..ig.len()).map(|i| ig[i] - lam * st.phi[i] * st.v.values()[i]).collect();
    l2_inner_raw(grid, &r, &r).sqrt()
}

pub fn minimize_on_m(
    v0: &RealField,
    p: &ModelParams,
    w: &Kernel,
    f: &Nonlinearity,
    opts: &SolverOptions,
) -> Result<(ManifoldState, ManifoldReport)> {
    opts.validate()?;
    p.require_bound_state()?;
    let flags = check_assumptions(f, v0.grid().dim(), 512);
    if !(flags.f1() && flags.f2()) {
        return Err(Error::Precondition(format!(
            "constrained minimization needs the vanishing and growth conditions on F ({})",
            f.label()
        )));
    }
    let start = Instant::now();
    let model = Model::new(*v0.grid(), *p, w, f)?;
    let grid = *model.grid();
    let mut st = project_state(model.state(v0.clone())?)?;
    let mut ival = i_of(&model, &st);
    let mut max_constraint_error = (st.quartic - 1.0).abs();
    let mut monotone = true;
    let mut tau = opts.initial_step;
    let mut iterations = 0;
    let mut converged = false;
    let (mut residual, mut grad_norm, mut multiplier);

    loop {
        let ig = i_gradient(&model, &st);
        let nv: Vec<f64> = st.phi.iter().zip(st.v.values()).map(|(a, b)| a * b).collect();
        multiplier = l2_inner_raw(&grid, &ig, st.v.values());
        let r: Vec<f64> = ig.iter().zip(&nv).map(|(a, b)| a - multiplier * b).collect();
        residual = l2_inner_raw(&grid, &r, &r).sqrt();
        grad_norm = l2_inner_raw(&grid, &ig, &ig).sqrt();
        if residual <= opts.tol * (1.0 + ival.abs()) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        // built from the residual rather than I'(v) to avoid cancellation near M's critical points
        let pig = model.precondition(&RealField::from_raw(grid, r.clone()));
        let pn = model.precondition(&RealField::from_raw(grid, nv.clone()));
        let mu = l2_inner_raw(&grid, &nv, pig.values()) / l2_inner_raw(&grid, &nv, pn.values());
        let d: Vec<f64> = pig
            .values()
            .iter()
            .zip(pn.values())
            .map(|(a, b)| -(a - mu * b))
            .collect();
        let slope = l2_inner_raw(&grid, &r, &d);
        if !(slope < 0.0) {
            break;
        }
        let dir = RealField::from_raw(grid, d);
        let mut accepted = None;
        while tau >= 1e-14 {
            let cand = project_state(model.state(st.v.axpy(tau, &dir)?)?)?;
            let ic = i_of(&model, &cand);
            if ic <= ival + opts.armijo_slope * tau * slope {
                accepted = Some((cand, ic));
                break;
            }
            // below roundoff in I, fall back to decrease of the residual
            if (ic - ival).abs() <= noise(ival) && lagrange_residual(&model, &cand) < residual {
                accepted = Some((cand, ic));
                break;
            }
            tau *= opts.armijo_factor;
        }
        match accepted {
            Some((cand, ic)) => {
                if ic > ival + noise(ival) {
                    monotone = false;
                }
                max_constraint_error = max_constraint_error.max((cand.quartic - 1.0).abs());
                st = cand;
                ival = ic;
                tau = (tau * opts.step_growth).min(opts.max_step);
                iterations += 1;
            }
            None => break,
        }
    }

    let state = to_state(&model, &st);
    let report = ManifoldReport {
        converged,
        iterations,
        final_i: ival,
        multiplier,
        residual,
        grad_norm,
        tolerance: opts.tol,
        max_constraint_error,
        monotone,
        min_value: st.v.min(),
        max_value: st.v.max(),
        radial_deviation: radial_deviation(&st.v),
        wall_time: start.elapsed().as_secs_f64(),
    };
    if !converged {
        return Err(Error::ManifoldNonConvergence { iterations, residual });
    }
    Ok((state, report))
}

/// Restart from `|v|`; needs `F(x,s) >= F(x,|s|)` or a nonpositive multiplier.
pub fn positivity_polish(
    state: &ManifoldState,
    p: &ModelParams,
    w: &Kernel,
    f: &Nonlinearity,
    opts: &SolverOptions,
) -> Result<(ManifoldState, ManifoldReport)> {
    let flags = check_assumptions(f, state.v.grid().dim(), 512);
    if !(flags.abs_dominates || state.multiplier_estimate <= 0.0) {
        return Err(Error::Precondition(
            "positivity polish needs F(x,s) >= F(x,|s|) or a nonpositive multiplier".into(),
        ));
    }
    minimize_on_m(&state.v.abs(), p, w, f, opts)
}
