//! Acceptance criteria. Each test writes a `PASS`/`FAIL` line straight to
//! stdout (bypassing the test harness capture) before asserting.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relhartree::fracops::{apply_symbol_op, dtn_map, fd_extension_solve, trace_energy_form, SlabSpec};
use relhartree::grid::{apply_multiplier, l2_inner};
use relhartree::hartree::{hartree_potential, hartree_quartic, poisson_potential, random_bumps};
use relhartree::identities::{
    halfspace_integrals, nonexistence_sweep, pohozaev_residual, regime_classify, rho_family_residual,
    trace_inequality_check, CheckSpec, SweepPoint, SweepSettings, SweepTable,
};
use relhartree::manifold::minimize_on_m;
use relhartree::model::{derivative_pairing, energy, gradient};
use relhartree::mountainpass::{absolute_value_polish, solve_fixed_lambda};
use relhartree::*;
use statrs::function::erf::erf;

fn report(id: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {id:<4} {} {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

fn rel_diff(a: &RealField, b: &RealField) -> f64 {
    let d = a.axpy(-1.0, b).unwrap();
    (l2_inner(&d, &d).unwrap() / l2_inner(b, b).unwrap()).sqrt()
}

fn white_noise(g: Grid, rng: &mut impl Rng) -> RealField {
    RealField::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn gaussian(g: Grid, two_w2: f64) -> RealField {
    RealField::from_fn(g, |x| (-x.iter().map(|c| c * c).sum::<f64>() / two_w2).exp()).unwrap()
}

#[test]
fn c01_operator_square() {
    let m = 1.3;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for (dim, n) in [(1, 64), (2, 32), (3, 16)] {
        let g = Grid::new(dim, n, 3.0).unwrap();
        for _ in 0..5 {
            let u = white_noise(g, &mut rng);
            let tt = apply_symbol_op(&apply_symbol_op(&u, m).unwrap(), m).unwrap();
            let lap = apply_multiplier(&u, &g.multiplier(|k2| k2 + m * m));
            worst = worst.max(rel_diff(&tt, &lap));
        }
    }

    let g = Grid::new(2, 32, 4.0).unwrap();
    let u = random_bumps(&g, &mut rng);
    let exact = apply_symbol_op(&u, 1.0).unwrap();
    let base = SlabSpec::reference(1.0);
    let errs: Vec<f64> = [250, 500, 1000, 2000]
        .iter()
        .map(|&layers| {
            let spec = SlabSpec { layers, ..base };
            rel_diff(&dtn_map(&fd_extension_solve(&u, 1.0, spec).unwrap(), 1.0).unwrap(), &exact)
        })
        .collect();
    let ref_err = errs[2];
    let order = errs.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
    let pass = worst <= 1e-10 && ref_err <= 5e-3 && order >= 1.9;
    report(
        "1",
        pass,
        &format!("T²=-Δ+m² residual {worst:.2e}; FD DtN error {ref_err:.2e} at reference slab, order {order:.2}"),
    );
    assert!(pass);
}

#[test]
fn c02_extension_energy_equals_trace_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Grid::new(3, 8, 3.0).unwrap();
    let m = 0.8;
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let u = if i % 2 == 0 { white_noise(g, &mut rng) } else { random_bumps(&g, &mut rng) };
        let (a, b) = halfspace_integrals(&u, m).unwrap();
        let k = trace_energy_form(&u, m).unwrap();
        worst = worst.max((a + m * m * b - k).abs() / k);
    }
    let pass = worst <= 1e-10;
    report("2", pass, &format!("max relative gap over 100 fields {worst:.2e}"));
    assert!(pass);
}

fn nonlinearities() -> Vec<Nonlinearity> {
    let cf = std::sync::Arc::new(|r: f64, s: f64| s.abs().powi(3) / (3.0 * (1.0 + r * r)));
    let cfs = std::sync::Arc::new(|r: f64, s: f64| s.abs() * s / (1.0 + r * r));
    vec![
        Nonlinearity::zero(),
        Nonlinearity::power(1.0, 1.0, 2.5).unwrap(),
        Nonlinearity::power(-1.0, 0.5, 3.0).unwrap(),
        Nonlinearity::two_power(1.0, 2.5, 0.5, 3.5).unwrap(),
        Nonlinearity::custom(cf, cfs, "|s|^3/(3(1+|x|^2))", 3.0, None).unwrap(),
    ]
}

fn kernels() -> Vec<Kernel> {
    let radii: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
    let values: Vec<f64> = radii.iter().map(|r| 1.0 / (1.0 + r * r)).collect();
    vec![
        Kernel::newton(),
        Kernel::yukawa(1.0).unwrap(),
        Kernel::tabulated(RadialTable::new(radii, values).unwrap()),
    ]
}

#[test]
fn c03_gradient_matches_finite_differences() {
    let g = Grid::new(3, 8, 4.0).unwrap();
    let p = ModelParams::new(1.0, 0.4, 0.7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fields: Vec<RealField> = (0..10).map(|_| random_bumps(&g, &mut rng)).collect();
    let dirs: Vec<RealField> = (0..20).map(|_| random_bumps(&g, &mut rng)).collect();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for f in nonlinearities() {
        for w in kernels() {
            for v in &fields {
                let grad = gradient(v, &p, &w, &f).unwrap();
                let j = |t: f64, d: &RealField| energy(&v.axpy(t, d).unwrap(), &p, &w, &f).unwrap().total;
                for d in &dirs {
                    let exact = l2_inner(&grad, d).unwrap();
                    let t = 1e-3;
                    let fd = (8.0 * (j(t, d) - j(-t, d)) - (j(2.0 * t, d) - j(-2.0 * t, d))) / (12.0 * t);
                    worst = worst.max((exact - fd).abs() / (1.0 + exact.abs()));
                    checks += 1;
                }
            }
        }
    }
    let pass = worst <= 1e-5;
    report("3", pass, &format!("{checks} directional checks, max relative error {worst:.2e}"));
    assert!(pass);
}

#[test]
fn c04_hartree_oracle() {
    let g = Grid::new(3, 64, 8.0).unwrap();
    // u² = e^{-|x|²}
    let u = gaussian(g, 2.0);
    let phi = hartree_potential(&u, &Kernel::newton()).unwrap();
    let pi32 = std::f64::consts::PI.powf(1.5);
    let mut worst: f64 = 0.0;
    for (i, &v) in phi.values().iter().enumerate() {
        let r = g.radius(i);
        let exact = if r < 1e-12 { 2.0 * pi32 / std::f64::consts::PI.sqrt() } else { pi32 * erf(r) / r };
        worst = worst.max((v - exact).abs() / exact);
    }
    let pois = poisson_potential(&u).unwrap();
    let path = rel_diff(&pois, &phi);
    let pass = worst <= 1e-3 && path <= 1e-6;
    report(
        "4",
        pass,
        &format!("Newton potential vs π^(3/2)erf(r)/r max relative {worst:.2e}; Poisson vs convolution {path:.2e}"),
    );
    assert!(pass);
}

struct ExistenceRun {
    n: usize,
    field: RealField,
    report: SolveReport,
    seconds: f64,
}

fn existence_params() -> (ModelParams, Nonlinearity) {
    (ModelParams::new(1.0, 0.5, 1.0).unwrap(), Nonlinearity::power(1.0, 1.0, 2.5).unwrap())
}

fn existence_runs() -> &'static Vec<ExistenceRun> {
    static RUNS: OnceLock<Vec<ExistenceRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let (p, f) = existence_params();
        [32, 64]
            .iter()
            .map(|&n| {
                let g = Grid::new(3, n, 16.0).unwrap();
                let t = Instant::now();
                let sol = solve_fixed_lambda(&gaussian(g, 4.0), &p, &Kernel::newton(), &f, &SolverOptions::default())
                    .expect("existence run converges");
                ExistenceRun {
                    n,
                    field: sol.field,
                    report: sol.report,
                    seconds: t.elapsed().as_secs_f64(),
                }
            })
            .collect()
    })
}

#[test]
fn c05_existence_run() {
    let (p, f) = existence_params();
    let mut pass = true;
    let mut detail = Vec::new();
    for run in existence_runs() {
        let r = &run.report;
        let polished = absolute_value_polish(&run.field, &p, &Kernel::newton(), &f, &SolverOptions::default()).unwrap();
        let pr = &polished.report;
        let ok = r.converged
            && r.nontrivial
            && r.grad_norm <= 1e-6 * (1.0 + r.final_energy.abs())
            && pr.nontrivial
            && pr.grad_norm <= 1e-6 * (1.0 + pr.final_energy.abs())
            && pr.min_value >= 0.0
            && pr.radial_deviation <= 1e-3
            && run.seconds <= 600.0;
        pass &= ok;
        detail.push(format!(
            "n={} J={:.6} |J'|={:.1e} min={:.1e} radial={:.1e} {:.0}s",
            run.n, pr.final_energy, pr.grad_norm, pr.min_value, pr.radial_deviation, run.seconds
        ));
    }
    report("5", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c06_pohozaev() {
    let (p, f) = existence_params();
    let w = Kernel::newton();
    let rel: Vec<f64> = existence_runs()
        .iter()
        .map(|run| pohozaev_residual(&run.field, &p, &w, &f).unwrap().relative_residual.abs())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = Grid::new(3, 16, 6.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let v = random_bumps(&g, &mut rng);
        let base = pohozaev_residual(&v, &p, &w, &f).unwrap().residual;
        let pair = derivative_pairing(&v, &p, &w, &f).unwrap();
        for _ in 0..5 {
            let rho = rng.gen_range(-5.0..5.0);
            let lhs = rho_family_residual(&v, &p, &w, &f, rho).unwrap();
            let rhs = base + rho * pair;
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
        }
    }
    let pass = rel.iter().all(|&r| r <= 2e-2) && rel[1] < rel[0] && worst <= 1e-10;
    report(
        "6",
        pass,
        &format!(
            "relative residual {:.2e} (n=32) -> {:.2e} (n=64) at L=16; ρ-recombination {worst:.2e}",
            rel[0], rel[1]
        ),
    );
    assert!(pass);
}

fn sweep_settings() -> SweepSettings {
    SweepSettings {
        grid: Grid::new(3, 16, 8.0).unwrap(),
        kernel: Kernel::newton(),
        starts: 5,
        seed: 2024,
        options: SolverOptions {
            max_iters: 2000,
            ..SolverOptions::default()
        },
        conv_trials: 20,
    }
}

/// Runs every point on its own so per-point wall time can be checked.
fn timed_sweep(points: Vec<SweepPoint>) -> (SweepTable, f64) {
    let set = sweep_settings();
    let mut table = SweepTable::default();
    let mut slowest: f64 = 0.0;
    for pt in points {
        let t = Instant::now();
        table.rows.extend(nonexistence_sweep(&[pt], &set).unwrap().rows);
        slowest = slowest.max(t.elapsed().as_secs_f64());
    }
    (table, slowest)
}

fn all_collapse(id: &str, table: &SweepTable, slowest: f64) -> bool {
    let mut pass = slowest <= 120.0;
    for r in &table.rows {
        let ok = r.classification.is_nonexistence() && r.collapsed == r.starts && r.nontrivial == 0;
        pass &= ok;
        if !ok {
            report(
                id,
                false,
                &format!(
                    "point m={} ω={} λ={} F={} [{}]: {} collapsed, {} nontrivial, {} unconverged of {}",
                    r.m, r.omega, r.lambda, r.nonlinearity, r.classification, r.collapsed, r.nontrivial, r.unconverged, r.starts
                ),
            );
        }
    }
    pass
}

fn point(omega: f64, lambda: f64, f: &Nonlinearity) -> SweepPoint {
    SweepPoint {
        params: ModelParams::new(1.0, omega, lambda).unwrap(),
        nonlinearity: f.clone(),
    }
}

#[test]
fn c07a_sweep_lambda_nonpositive() {
    let fs = [Nonlinearity::power(1.0, 1.0, 2.5).unwrap(), Nonlinearity::zero()];
    let mut pts = Vec::new();
    for la in [-1.0, -0.1] {
        for om in [-0.5, 0.0, 0.5] {
            for f in &fs {
                pts.push(point(om, la, f));
            }
        }
    }
    let (table, slowest) = timed_sweep(pts);
    let pass = all_collapse("7a", &table, slowest);
    report("7a", pass, &format!("{} points, all collapse; slowest point {slowest:.1}s", table.rows.len()));
    assert!(pass);
}

#[test]
fn c07b_sweep_subquadratic_power() {
    let pts = [1.5, 2.0]
        .iter()
        .map(|&p| point(0.5, 1.0, &Nonlinearity::power(1.0, 1.0, p).unwrap()))
        .collect();
    let (table, slowest) = timed_sweep(pts);
    let pass = all_collapse("7b", &table, slowest);
    report("7b", pass, &format!("{} points; slowest point {slowest:.1}s", table.rows.len()));
    assert!(pass);
}

#[test]
fn c07c_sweep_negative_lambda_positive_f() {
    let fs = [
        Nonlinearity::power(1.0, 1.0, 2.5).unwrap(),
        Nonlinearity::two_power(1.0, 2.5, 0.5, 3.5).unwrap(),
    ];
    let mut pts = Vec::new();
    for om in [0.0, 0.9 * (8.0f64 / 9.0).sqrt()] {
        for f in &fs {
            pts.push(point(om, -1.0, f));
        }
    }
    let (table, slowest) = timed_sweep(pts);
    let pass = all_collapse("7c", &table, slowest);
    report("7c", pass, &format!("{} points, all collapse; slowest point {slowest:.1}s", table.rows.len()));
    assert!(pass);
}

#[test]
fn c08_norm_bounds_on_existence_sweep() {
    let fs = [
        Nonlinearity::power(1.0, 1.0, 2.5).unwrap(),
        Nonlinearity::two_power(1.0, 2.5, 0.5, 2.8).unwrap(),
    ];
    let mut pts = Vec::new();
    for la in [0.5, 1.0] {
        for om in [0.25, 0.5, 0.75] {
            for f in &fs {
                pts.push(point(om, la, f));
            }
        }
    }
    let table = nonexistence_sweep(&pts, &sweep_settings()).unwrap();
    let checked: usize = table.rows.iter().map(|r| r.norm_bound_checked).sum();
    let violations: usize = table.rows.iter().map(|r| r.norm_bound_violations).sum();
    let nontrivial: usize = table.rows.iter().map(|r| r.nontrivial).sum();
    let classified = pts.iter().all(|pt| regime_classify(&pt.params, &pt.nonlinearity).regime == Regime::ExistenceCandidateTheoremMain)
        && table.rows.iter().all(|r| r.classification == Regime::ExistenceCandidateTheoremMain);
    let pass = classified && checked > 0 && checked == nontrivial && violations == 0;
    report(
        "8",
        pass,
        &format!("{nontrivial} nontrivial solutions over {} points, {checked} checked, {violations} violations", table.rows.len()),
    );
    assert!(pass);
}

#[test]
fn c09_trace_inequality() {
    let m = 1.5;
    let g = Grid::new(3, 8, 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    let mut trials = 0;
    let mut gap_err: f64 = 0.0;
    for i in 0..1000 {
        let v = if i % 2 == 0 { white_noise(g, &mut rng) } else { random_bumps(&g, &mut rng) };
        for eps in [0.1, 1.0, m] {
            let r = trace_inequality_check(&v, m, &CheckSpec { eps, ..CheckSpec::default() }).unwrap();
            trials += 1;
            if !r.holds {
                violations += 1;
            }
            gap_err = gap_err.max(((r.rhs - r.lhs) - r.closed_form_gap).abs() / r.rhs);
        }
    }
    // single mode cos(πk·x/L): ∫v² = (2L)^N / 2
    let mut mode_err: f64 = 0.0;
    for k in [1.0, 2.0, 3.0] {
        let w = k * std::f64::consts::PI / g.extent();
        let v = RealField::from_fn(g, |x| (w * x[1]).cos()).unwrap();
        let sigma = (w * w + m * m).sqrt();
        let mass = (2.0 * g.extent()).powi(3) / 2.0;
        for eps in [0.1, 1.0, m] {
            let r = trace_inequality_check(&v, m, &CheckSpec { eps, ..CheckSpec::default() }).unwrap();
            let exact = (sigma - eps).powi(2) / (2.0 * eps * sigma) * mass;
            mode_err = mode_err.max((r.closed_form_gap - exact).abs() / exact.max(mass));
        }
    }
    let pass = violations == 0 && gap_err <= 1e-10 && mode_err <= 1e-10;
    report(
        "9",
        pass,
        &format!("{violations} violations in {trials} trials; gap formula error {gap_err:.1e}, single mode {mode_err:.1e}"),
    );
    assert!(pass);
}

#[test]
fn c10_manifold_route() {
    let g = Grid::new(3, 16, 8.0).unwrap();
    let p = ModelParams::new(1.0, 0.5, 1.0).unwrap();
    let w = Kernel::newton();
    let opts = SolverOptions::default();
    let fs = [
        Nonlinearity::zero(),
        Nonlinearity::power(1.0, 1.0, 2.5).unwrap(),
        Nonlinearity::two_power(1.0, 2.5, 0.5, 2.8).unwrap(),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for f in &fs {
        // 2F <= F_s s on the sample grid
        let s_grid = model::signed_log_grid(512);
        let ar = s_grid.iter().all(|&s| 2.0 * f.value(0.0, s) <= s * f.derivative(0.0, s) + 1e-12 * s * s);
        let (st, r) = minimize_on_m(&gaussian(g, 4.0), &p, &w, f, &opts).unwrap();
        let q = hartree_quartic(&st.v, &w).unwrap();
        let ok = ar
            && r.converged
            && r.max_constraint_error <= 1e-10
            && (q - 1.0).abs() <= 1e-10
            && r.residual <= 10.0 * opts.tol * (1.0 + r.final_i.abs())
            && r.multiplier > 0.0;
        pass &= ok;
        detail.push(format!("{}: λ={:.4} |Q-1|≤{:.0e}", f.label(), r.multiplier, r.max_constraint_error));
    }
    report("10", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (p, f) = existence_params();
    let g = Grid::new(3, 16, 8.0).unwrap();
    let run = |tag: &str| -> Vec<Vec<u8>> {
        let sol = solve_fixed_lambda(&gaussian(g, 4.0), &p, &Kernel::newton(), &f, &SolverOptions::default()).unwrap();
        let poh = pohozaev_residual(&sol.field, &p, &Kernel::newton(), &f).unwrap();
        let stem = dir.path().join(format!("u_{tag}"));
        io::write_snapshot(&stem, &sol.field, "existence run").unwrap();
        let rep = dir.path().join(format!("report_{tag}.json"));
        io::write_report_json(&rep, &(sol.report, poh)).unwrap();
        let pts = vec![point(0.5, -1.0, &f), point(0.5, 1.0, &f)];
        let table = nonexistence_sweep(&pts, &SweepSettings { starts: 2, ..sweep_settings() }).unwrap();
        let csv = dir.path().join(format!("sweep_{tag}.csv"));
        table.write_csv(&csv).unwrap();
        [stem.with_extension("bin"), stem.with_extension("json"), rep, csv]
            .iter()
            .map(|p| std::fs::read(p).unwrap())
            .collect()
    };
    let a = run("a");
    let b = run("b");
    let pass = a == b;
    report("11", pass, "snapshot, report and sweep table bytes identical across two runs");
    assert!(pass);
}
