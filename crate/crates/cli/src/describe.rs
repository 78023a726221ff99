//! Human-readable summary of a resolved run, printed before every mode.

use std::fmt::Write;

use relhartree::hartree::validate_kernel;
use relhartree::identities::regime_classify;
use relhartree::model::check_assumptions;

use crate::config::{Resolved, RunConfig};

pub const ZERO_F_NOTE: &str = "F ≡ 0 (case already considered in the literature, solver proceeds)";

fn mark(ok: bool) -> &'static str {
    if ok {
        "✓"
    } else {
        "✗"
    }
}

/// `F1✓ F2✓ F3✓(k=2.5≤4) subcritical✓`
pub fn flags_line(res: &Resolved) -> String {
    let a = check_assumptions(&res.nonlinearity, res.grid.dim(), 512);
    let rel = if a.k_at_most_4 { "≤" } else { ">" };
    format!(
        "F1{} F2{} F3{}(k={}{rel}4) subcritical{}",
        mark(a.f1()),
        mark(a.f2()),
        mark(a.f3()),
        a.k,
        mark(a.subcritical)
    )
}

pub fn describe(cfg: &RunConfig, res: &Resolved, mode: &str) -> String {
    let mut s = String::new();
    let g = &res.grid;
    let p = &res.params;
    let _ = writeln!(s, "mode: {mode}");
    let _ = writeln!(
        s,
        "grid: N={} n={} L={} h={} ({} points)",
        g.dim(),
        g.n(),
        g.extent(),
        g.spacing(),
        g.len()
    );
    let _ = writeln!(s, "model: m={} omega={} lambda={}", p.m, p.omega, p.lambda);
    let kr = validate_kernel(&res.kernel, g);
    let _ = writeln!(
        s,
        "kernel: {} split r={} a={}: r>N/2{} inner-finite{} outer-bounded{} nonnegative{}",
        res.kernel.label(),
        kr.split_r,
        kr.split_radius,
        mark(kr.r_admissible),
        mark(kr.inner_finite),
        mark(kr.outer_bounded),
        mark(kr.nonnegative)
    );
    let _ = writeln!(s, "nonlinearity: {}", res.nonlinearity.label());
    if res.nonlinearity.is_zero() {
        let _ = writeln!(s, "{ZERO_F_NOTE}");
    }
    let _ = writeln!(s, "flags: {}", flags_line(res));
    let c = regime_classify(p, &res.nonlinearity);
    let _ = writeln!(s, "classifier: {}", c.regime.label());
    match c.rho {
        Some(r) => {
            let _ = writeln!(s, "  witness: {} (rho = {r})", c.witness);
        }
        None => {
            let _ = writeln!(s, "  witness: {}", c.witness);
        }
    }
    if p.omega >= p.m {
        let _ = writeln!(s, "note: omega >= m, solve and minimize-on-M need omega < m");
    }
    let o = &cfg.solver;
    let _ = writeln!(
        s,
        "solver: tol={:e} max_iters={} armijo_slope={:e} armijo_factor={} initial_step={} step_growth={} max_step={} nontrivial_threshold={:e}",
        o.tol, o.max_iters, o.armijo_slope, o.armijo_factor, o.initial_step, o.step_growth, o.max_step, o.nontrivial_threshold
    );
    let ch = &cfg.check;
    let _ = writeln!(
        s,
        "check: eps={} q={} radius_R={} rho={} conv_trials={}",
        ch.eps, ch.q, ch.radius_r, ch.rho, ch.conv_trials
    );
    let _ = writeln!(s, "seed: {}", cfg.seed);
    s
}
