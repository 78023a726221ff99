//! The subcommands. Each one writes into a [`Staging`] directory and
//! reports check failures through [`Outcome`] so that artifacts are still
//! published.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relhartree::fracops::{apply_symbol_op, dtn_map, fd_extension_solve, SlabSpec};
use relhartree::grid::{apply_multiplier, l2_inner};
use relhartree::hartree::{estimate_conv_constant, hartree_potential, poisson_potential, random_bumps};
use relhartree::identities::{
    hartree_virial_check, nonexistence_sweep, norm_bound_check, pohozaev_residual, regime_classify, sweep_start,
    trace_inequality_check, virial_bulk_check, GaussianBump, SweepPoint, SweepSettings,
};
use relhartree::io::{read_snapshot, write_report_json, write_snapshot};
use relhartree::manifold::{minimize_on_m, positivity_polish};
use relhartree::model::{check_assumptions, derivative_pairing, energy, gradient};
use relhartree::mountainpass::{absolute_value_polish, ps_diagnostic, solve_fixed_lambda};
use relhartree::{Error, Grid, ModelParams, RealField, SolveReport};
use serde::Serialize;
use serde_json::json;
use statrs::function::erf::erf;

use crate::config::{InitialSpec, Resolved, RunConfig};
use crate::output::Staging;

/// Why a run stopped before publishing anything.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or unmet precondition.
    Config(String),
    /// The solver did not converge.
    NonConvergence(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::NonConvergence(_) => 3,
            Self::Io(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Config(s) | Self::NonConvergence(s) | Self::Io(s) => s,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence(_) | Error::ManifoldNonConvergence { .. } | Error::Singular { .. } => {
                Self::NonConvergence(e.to_string())
            }
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => Self::Io(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// A finished run; `check_failure` set means exit status 4.
#[derive(Debug, Default)]
pub struct Outcome {
    pub check_failure: Option<String>,
    pub summary: Vec<String>,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub res: Resolved,
    /// Directory relative config paths resolve against.
    pub base: PathBuf,
}

impl Ctx {
    /// The configuration as echoed into reports: no output path or thread
    /// count, so reports are identical across machines and destinations.
    fn echo(&self) -> RunConfig {
        let mut c = self.cfg.clone();
        c.out = None;
        c.threads = None;
        c
    }

    fn with_grid(&self, grid: Grid) -> Resolved {
        Resolved { grid, ..self.res.clone() }
    }
}

fn stem_of(p: &Path) -> PathBuf {
    match p.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => p.with_extension(""),
        _ => p.to_path_buf(),
    }
}

fn initial_field(ctx: &Ctx) -> Result<RealField, Failure> {
    let g = ctx.res.grid;
    match &ctx.cfg.initial {
        InitialSpec::Gaussian { amplitude, width } => {
            let two_w2 = 2.0 * width * width;
            Ok(RealField::from_fn(g, |x| amplitude * (-x.iter().map(|c| c * c).sum::<f64>() / two_w2).exp())?)
        }
        InitialSpec::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
            Ok(sweep_start(&g, &mut rng))
        }
        InitialSpec::Snapshot { path } => {
            let path = if path.is_absolute() { path.clone() } else { ctx.base.join(path) };
            let (v, _) = read_snapshot(&stem_of(&path))
                .map_err(|e| Failure::Config(format!("initial.path: {}: {e}", path.display())))?;
            if v.grid() != &g {
                return Err(Failure::Config(format!(
                    "initial.path: snapshot grid (N={}, n={}, L={}) differs from [grid]",
                    v.grid().dim(),
                    v.grid().n(),
                    v.grid().extent()
                )));
            }
            Ok(v)
        }
    }
}

/// ω < m, checked before any output directory is created.
pub fn require_bound_state(p: &ModelParams) -> Result<(), Failure> {
    p.require_bound_state().map_err(|e| Failure::Config(e.to_string()))
}

fn pohozaev_json(v: &RealField, res: &Resolved) -> serde_json::Value {
    match pohozaev_residual(v, &res.params, &res.kernel, &res.nonlinearity) {
        Ok(r) => {
            let terms: BTreeMap<&str, f64> = r.labelled_terms().into_iter().collect();
            json!({
                "terms": terms,
                "residual": r.residual,
                "relative_residual": r.relative_residual,
            })
        }
        Err(e) => json!({ "skipped": e.to_string() }),
    }
}

fn l2norm(v: &RealField) -> f64 {
    l2_inner(v, v).map(f64::sqrt).unwrap_or(f64::NAN)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    config: RunConfig,
    assumptions: relhartree::model::AssumptionReport,
    classification: relhartree::identities::Classification,
    solve: &'a SolveReport,
    /// Restart from `|v|`, when it ran.
    polish: Option<&'a SolveReport>,
    pohozaev: serde_json::Value,
    ps_diagnostic: relhartree::mountainpass::PsReport,
}

pub fn solve(ctx: &Ctx, out: &Staging) -> Result<Outcome, Failure> {
    let res = &ctx.res;
    require_bound_state(&res.params)?;
    let v0 = initial_field(ctx)?;
    let t0 = Instant::now();
    let sol = solve_fixed_lambda(&v0, &res.params, &res.kernel, &res.nonlinearity, &ctx.cfg.solver)?;
    let solve_seconds = t0.elapsed().as_secs_f64();
    let assumptions = check_assumptions(&res.nonlinearity, res.grid.dim(), 512);

    let mut polish = None;
    let t1 = Instant::now();
    if ctx.cfg.run.polish && assumptions.abs_dominates && sol.report.nontrivial {
        match absolute_value_polish(&sol.field, &res.params, &res.kernel, &res.nonlinearity, &ctx.cfg.solver) {
            Ok(p) if p.report.nontrivial => polish = Some(p),
            Ok(_) => {}
            // keep the unpolished critical point
            Err(Error::NonConvergence(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let polish_seconds = t1.elapsed().as_secs_f64();
    let final_field = polish.as_ref().map_or(&sol.field, |p| &p.field);

    let description = format!(
        "solve m={} omega={} lambda={} F={} W={}",
        res.params.m,
        res.params.omega,
        res.params.lambda,
        res.nonlinearity.label(),
        res.kernel.label()
    );
    write_snapshot(&out.path("u"), final_field, &description)?;
    sol.trace.write_csv(&out.path("trace.csv"))?;
    if let Some(p) = &polish {
        p.trace.write_csv(&out.path("trace_polish.csv"))?;
    }
    let pohozaev = pohozaev_json(final_field, res);
    let report = SolveOutput {
        config: ctx.echo(),
        assumptions,
        classification: regime_classify(&res.params, &res.nonlinearity),
        solve: &sol.report,
        polish: polish.as_ref().map(|p| &p.report),
        pohozaev: pohozaev.clone(),
        ps_diagnostic: ps_diagnostic(&sol.trace),
    };
    write_report_json(&out.path("report.json"), &report)?;
    write_report_json(
        &out.path("timings.json"),
        &json!({ "solve_seconds": solve_seconds, "polish_seconds": polish_seconds }),
    )?;

    let last = polish.as_ref().map_or(&sol.report, |p| &p.report);
    let mut summary = vec![
        format!(
            "converged after {} iterations: J = {:.10e}, |J'|_2 = {:.3e}, |u|_2 = {:.6e}, nontrivial = {}",
            sol.report.iterations, last.final_energy, last.grad_norm, last.l2_norm, last.nontrivial
        ),
        format!("existence regime: {}", sol.report.existence_regime),
    ];
    if let Some(r) = pohozaev.get("relative_residual") {
        summary.push(format!("pohozaev relative residual: {r}"));
    }
    Ok(Outcome {
        check_failure: None,
        summary,
    })
}

pub fn minimize(ctx: &Ctx, out: &Staging) -> Result<Outcome, Failure> {
    let res = &ctx.res;
    require_bound_state(&res.params)?;
    let v0 = initial_field(ctx)?;
    let t0 = Instant::now();
    let (st, rep) = minimize_on_m(&v0, &res.params, &res.kernel, &res.nonlinearity, &ctx.cfg.solver)?;
    let assumptions = check_assumptions(&res.nonlinearity, res.grid.dim(), 512);
    let mut polished = None;
    if ctx.cfg.run.polish && (assumptions.abs_dominates || st.multiplier_estimate <= 0.0) {
        match positivity_polish(&st, &res.params, &res.kernel, &res.nonlinearity, &ctx.cfg.solver) {
            Ok(p) => polished = Some(p),
            Err(Error::ManifoldNonConvergence { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let seconds = t0.elapsed().as_secs_f64();
    let (fst, frep) = polished.as_ref().map_or((&st, &rep), |(s, r)| (s, r));
    let description = format!(
        "minimize-on-M m={} omega={} F={} W={}",
        res.params.m,
        res.params.omega,
        res.nonlinearity.label(),
        res.kernel.label()
    );
    write_snapshot(&out.path("v"), &fst.v, &description)?;
    write_report_json(
        &out.path("report.json"),
        &json!({
            "config": ctx.echo(),
            "assumptions": assumptions,
            "manifold": rep,
            "polish": polished.as_ref().map(|(_, r)| r),
            "q_value": fst.q_value,
            "i_value": fst.i_value,
        }),
    )?;
    write_report_json(&out.path("timings.json"), &json!({ "minimize_seconds": seconds }))?;
    Ok(Outcome {
        check_failure: None,
        summary: vec![format!(
            "converged after {} iterations: I = {:.10e}, multiplier lambda = {:.10e}, residual = {:.3e}, max |Q-1| = {:.1e}",
            rep.iterations, frep.final_i, frep.multiplier, frep.residual, frep.max_constraint_error
        )],
    })
}

pub fn verify(ctx: &Ctx, snapshot: &Path, out: &Staging) -> Result<Outcome, Failure> {
    let (v, header) = read_snapshot(&stem_of(snapshot))
        .map_err(|e| Failure::Config(format!("snapshot {}: {e}", snapshot.display())))?;
    let res = ctx.with_grid(*v.grid());
    let (p, w, f) = (&res.params, &res.kernel, &res.nonlinearity);
    let t0 = Instant::now();
    let e = energy(&v, p, w, f)?;
    let grad_norm = l2norm(&gradient(&v, p, w, f)?);
    let pairing = derivative_pairing(&v, p, w, f)?;
    let pohozaev = pohozaev_json(&v, &res);
    let trace = trace_inequality_check(&v, p.m, &ctx.cfg.check.spec())?;
    let l2 = l2norm(&v);
    let critical = grad_norm <= 10.0 * ctx.cfg.solver.tol * (1.0 + e.total.abs());
    let nontrivial = l2 > ctx.cfg.solver.nontrivial_threshold;

    let assumptions = check_assumptions(f, v.grid().dim(), 512);
    let bounds_apply = p.lambda > 0.0 && p.omega > 0.0 && p.omega < p.m && assumptions.fs_s_nonnegative;
    let norm_bounds = if critical && nontrivial && bounds_apply {
        let c = estimate_conv_constant(w, v.grid(), p.m, ctx.cfg.check.conv_trials, ctx.cfg.seed)?;
        Some(norm_bound_check(&v, p, w, f, c.value())?)
    } else {
        None
    };
    let virial = if w.is_newton() && v.grid().dim() == 3 && v.grid().n() >= 6 {
        Some(hartree_virial_check(&v)?)
    } else {
        None
    };
    let seconds = t0.elapsed().as_secs_f64();

    let mut failures = Vec::new();
    if !trace.holds {
        failures.push(format!("trace inequality violated: {} > {}", trace.lhs, trace.rhs));
    }
    if let Some(nb) = &norm_bounds {
        if !nb.passes() {
            failures.push(format!(
                "norm bounds violated: {} <= |v|^2 = {} <= {} fails",
                nb.lower, nb.norm2, nb.upper
            ));
        }
    }
    write_report_json(
        &out.path("verify.json"),
        &json!({
            "config": ctx.echo(),
            "snapshot": header.description,
            "energy": e,
            "grad_norm": grad_norm,
            "pairing": pairing,
            "l2_norm": l2,
            "critical": critical,
            "pohozaev": pohozaev,
            "trace_inequality": trace,
            "norm_bounds": norm_bounds,
            "hartree_virial": virial,
            "failures": failures,
        }),
    )?;
    write_report_json(&out.path("timings.json"), &json!({ "verify_seconds": seconds }))?;
    let mut summary = vec![
        format!("J = {:.10e}, |J'|_2 = {grad_norm:.3e}, J'(v)v = {pairing:.3e}, critical = {critical}", e.total),
        format!("trace inequality holds = {} (closed-form gap {:.3e})", trace.holds, trace.closed_form_gap),
    ];
    if let Some(r) = pohozaev.get("relative_residual") {
        summary.push(format!("pohozaev relative residual: {r}"));
    }
    Ok(Outcome {
        check_failure: (!failures.is_empty()).then(|| failures.join("; ")),
        summary,
    })
}

pub fn sweep(ctx: &Ctx, out: &Staging) -> Result<Outcome, Failure> {
    let cfg = &ctx.cfg;
    let axis = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let ms = axis(&cfg.sweep.m, cfg.model.m);
    let omegas = axis(&cfg.sweep.omega, cfg.model.omega);
    let lambdas = axis(&cfg.sweep.lambda, cfg.model.lambda);
    let fs = if cfg.sweep.nonlinearities.is_empty() {
        vec![ctx.res.nonlinearity.clone()]
    } else {
        cfg.sweep
            .nonlinearities
            .iter()
            .enumerate()
            .map(|(i, s)| s.build(&format!("sweep.nonlinearities[{i}]")))
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Config(e.0))?
    };
    let mut points = Vec::new();
    for &m in &ms {
        for &omega in &omegas {
            for &lambda in &lambdas {
                let params = ModelParams::new(m, omega, lambda).map_err(|e| Failure::Config(format!("sweep: {e}")))?;
                require_bound_state(&params)?;
                for f in &fs {
                    points.push(SweepPoint {
                        params,
                        nonlinearity: f.clone(),
                    });
                }
            }
        }
    }
    let settings = SweepSettings {
        grid: ctx.res.grid,
        kernel: ctx.res.kernel.clone(),
        starts: cfg.sweep.starts,
        seed: cfg.seed,
        options: cfg.solver,
        conv_trials: cfg.check.conv_trials,
    };
    let t0 = Instant::now();
    let table = nonexistence_sweep(&points, &settings)?;
    let seconds = t0.elapsed().as_secs_f64();
    table.write_csv(&out.path("sweep.csv"))?;
    write_report_json(&out.path("sweep.json"), &json!({ "config": ctx.echo(), "rows": table.rows }))?;
    write_report_json(&out.path("timings.json"), &json!({ "sweep_seconds": seconds }))?;

    let summary = table
        .rows
        .iter()
        .map(|r| {
            format!(
                "m={} omega={} lambda={} F={}: {} | collapsed {}/{} nontrivial {} unconverged {}{}",
                r.m,
                r.omega,
                r.lambda,
                r.nonlinearity,
                r.classification,
                r.collapsed,
                r.starts,
                r.nontrivial,
                r.unconverged,
                if r.contradiction { "  CONTRADICTION" } else { "" }
            )
        })
        .collect();
    let bad = table.contradictions();
    Ok(Outcome {
        check_failure: (!bad.is_empty()).then(|| {
            format!("{} point(s) classified nonexistent where not every start collapsed", bad.len())
        }),
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OracleName {
    /// `T(Tu) = (-Δ+m²)u` on seeded random fields over [grid].
    TSquared,
    /// Finite-difference extension DtN map against `T`, fixed 2-D reference grid.
    Dtn,
    /// Newton potential of `e^{-|x|²/2}` against `π^{3/2} erf(r)/r`, needs N = 3.
    HartreeGaussian,
    /// Trace inequality and its closed-form gap on seeded random fields.
    TraceGap,
    /// Virial identity on a Gaussian in the half-space over [grid].
    Virial,
    /// Hartree virial identity and `∫|Dφ|² = 4π∫u²φ` on a Gaussian, needs N = 3.
    HartreeVirial,
}

fn rel_diff(a: &RealField, b: &RealField) -> Result<f64, Failure> {
    let d = a.axpy(-1.0, b)?;
    Ok((l2_inner(&d, &d)? / l2_inner(b, b)?).sqrt())
}

fn need_3d(g: &Grid, name: &str) -> Result<(), Failure> {
    if g.dim() != 3 {
        return Err(Failure::Config(format!("grid.dim: oracle {name} needs dim = 3, got {}", g.dim())));
    }
    Ok(())
}

pub fn oracle(ctx: &Ctx, name: OracleName, out: &Staging) -> Result<Outcome, Failure> {
    let g = ctx.res.grid;
    let m = ctx.res.params.m;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let t0 = Instant::now();
    let (pass, detail, body) = match name {
        OracleName::TSquared => {
            let mut worst: f64 = 0.0;
            for _ in 0..5 {
                let u = random_bumps(&g, &mut rng);
                let tt = apply_symbol_op(&apply_symbol_op(&u, m)?, m)?;
                let lap = apply_multiplier(&u, &g.multiplier(|k2| k2 + m * m));
                worst = worst.max(rel_diff(&tt, &lap)?);
            }
            (worst <= 1e-10, format!("max relative residual {worst:.3e}"), json!({ "fields": 5, "max_relative": worst }))
        }
        OracleName::Dtn => {
            let rg = Grid::new(2, 32, 4.0)?;
            let u = random_bumps(&rg, &mut rng);
            let exact = apply_symbol_op(&u, m)?;
            let base = SlabSpec::reference(m);
            let layers = [250, 500, 1000];
            let errs = layers
                .iter()
                .map(|&l| rel_diff(&dtn_map(&fd_extension_solve(&u, m, SlabSpec { layers: l, ..base })?, m)?, &exact))
                .collect::<Result<Vec<f64>, Failure>>()?;
            let order = errs.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
            (
                errs[2] <= 5e-3 && order >= 1.9,
                format!("error {:.3e} at {} layers, observed order {order:.2}", errs[2], layers[2]),
                json!({ "layers": layers, "errors": errs, "order": order }),
            )
        }
        OracleName::HartreeGaussian => {
            need_3d(&g, "hartree-gaussian")?;
            let u = RealField::from_fn(g, |x| (-x.iter().map(|c| c * c).sum::<f64>() / 2.0).exp())?;
            let phi = hartree_potential(&u, &relhartree::Kernel::newton())?;
            let pi32 = std::f64::consts::PI.powf(1.5);
            let peak = 2.0 * std::f64::consts::PI;
            let mut worst: f64 = 0.0;
            for (i, val) in phi.values().iter().enumerate() {
                let r = g.radius(i);
                let exact = if r < 1e-12 { peak } else { pi32 * erf(r) / r };
                worst = worst.max((val - exact).abs() / peak);
            }
            let poisson = poisson_potential(&u)?;
            let path = rel_diff(&poisson, &phi)?;
            (
                worst <= 1e-6 && path <= 1e-6,
                format!("max error {worst:.3e} relative to the peak; Poisson path {path:.3e}"),
                json!({ "max_relative": worst, "poisson_path": path }),
            )
        }
        OracleName::TraceGap => {
            let spec = ctx.cfg.check.spec();
            let (mut holds, mut worst) = (true, 0.0f64);
            for _ in 0..20 {
                let u = random_bumps(&g, &mut rng);
                let r = trace_inequality_check(&u, m, &spec)?;
                holds &= r.holds;
                worst = worst.max(((r.rhs - r.lhs) - r.closed_form_gap).abs() / r.rhs);
            }
            (
                holds && worst <= 1e-10,
                format!("inequality held on all fields = {holds}, closed-form gap mismatch {worst:.3e}"),
                json!({ "fields": 20, "eps": spec.eps, "all_hold": holds, "max_gap_mismatch": worst }),
            )
        }
        OracleName::Virial => {
            let mut center = vec![0.0; g.dim()];
            center.push(-0.4);
            let bump = GaussianBump::new(1.0, center, 1.0, g.extent())?;
            let rep = virial_bulk_check(&bump, ctx.cfg.check.radius_r, 32)?;
            (rep.gap <= 5e-3, format!("relative gap {:.3e} at R = {}", rep.gap, rep.radius), json!(rep))
        }
        OracleName::HartreeVirial => {
            need_3d(&g, "hartree-virial")?;
            let u = RealField::from_fn(g, |x| (-x.iter().map(|c| c * c).sum::<f64>() / 2.0).exp())?;
            let rep = hartree_virial_check(&u)?;
            (
                rep.virial_gap <= 1e-2 && rep.identitaphi_gap <= 1e-2,
                format!("virial gap {:.3e}, field-energy gap {:.3e}", rep.virial_gap, rep.identitaphi_gap),
                json!(rep),
            )
        }
    };
    let seconds = t0.elapsed().as_secs_f64();
    let label = clap::ValueEnum::to_possible_value(&name).map(|v| v.get_name().to_string()).unwrap_or_default();
    write_report_json(
        &out.path("oracle.json"),
        &json!({ "oracle": label, "pass": pass, "detail": detail, "result": body, "config": ctx.echo() }),
    )?;
    write_report_json(&out.path("timings.json"), &json!({ "oracle_seconds": seconds }))?;
    Ok(Outcome {
        check_failure: (!pass).then(|| format!("oracle {label} failed: {detail}")),
        summary: vec![format!("oracle {label}: {} ({detail})", if pass { "PASS" } else { "FAIL" })],
    })
}
