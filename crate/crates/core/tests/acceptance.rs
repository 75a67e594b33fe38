//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every line is printed even when a check fails.
//! Pass criterion numbers to run a subset, e.g.
//! `cargo test -p sdc-core --test acceptance -- 2 7`. A failing criterion
//! does not fail the process unless `SDC_ACCEPTANCE_STRICT=1` is set.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use sdc_core::collocation::{generate_nodes, QuadratureTable};
use sdc_core::controller::Reason;
use sdc_core::harness::{
    convergence, execute, fitted_orders, local_errors, loglog_slope, work_precision, wp_slope, Preset,
    ProblemParams, RunConfig, WpSweep,
};
use sdc_core::pint::{gssdc_iterate, integrate_gssdc, node_parallel_sweep, Block, BlockConfig, NodePool};
use sdc_core::problems::{AllenCahn, Dahlquist, NlsParams, NonlinearSchroedinger, Quench, QuenchParams, VdpParams};
use sdc_core::{integrate, integrate_observed, ControllerConfig, NodeFamily, PrecondKind, Problem, RunRecord, Strategy, Sweeper};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Check = fn() -> Outcome;

const CRITERIA: [(usize, &str, f64, Check); 10] = [
    (1, "quadrature correctness", 1.0, quadrature),
    (2, "collocation superconvergence", 1.0, superconvergence),
    (3, "order ladder", 10.0, order_ladder),
    (4, "controller contract", 300.0, controller_contract),
    (5, "tolerance scaling", 300.0, tolerance_scaling),
    (6, "stiff efficiency", 300.0, stiff_efficiency),
    (7, "block equivalence and order", 60.0, block_sdc),
    (8, "diagonal sweep determinism and speedup", 120.0, diagonal_sweeps),
    (9, "interpolation restart", 180.0, interpolation_restart),
    (10, "physics sanity", 300.0, physics),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("SDC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failures = 0;
    for (n, name, limit, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Outcome::new(false, format!("panicked: {}", panic_message(&e))));
        let secs = started.elapsed().as_secs_f64();
        let pass = outcome.pass && secs < limit;
        let timing = if secs < limit { format!("{secs:.1} s") } else { format!("{secs:.1} s, over the {limit} s budget") };
        println!("criterion {n:>2} {}: {name}: {} ({timing})", if pass { "PASS" } else { "FAIL" }, outcome.detail);
        if !pass {
            failures += 1;
        }
    }
    println!("acceptance: {failures} failing");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

/// Radau IIA, three stages, in closed form.
fn radau_iia_3() -> (Vector3<f64>, Matrix3<f64>) {
    let s6 = 6f64.sqrt();
    let c = Vector3::new((4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0);
    let a = Matrix3::new(
        (88.0 - 7.0 * s6) / 360.0,
        (296.0 - 169.0 * s6) / 1800.0,
        (-2.0 + 3.0 * s6) / 225.0,
        (296.0 + 169.0 * s6) / 1800.0,
        (88.0 + 7.0 * s6) / 360.0,
        (-2.0 - 3.0 * s6) / 225.0,
        (16.0 - s6) / 36.0,
        (16.0 + s6) / 36.0,
        1.0 / 9.0,
    );
    (c, a)
}

fn quadrature() -> Outcome {
    let mut worst: f64 = 0.0;
    for family in [NodeFamily::RadauRight, NodeFamily::Lobatto, NodeFamily::Legendre] {
        let m_min = if family == NodeFamily::Lobatto { 2 } else { 1 };
        for m in m_min..=7 {
            let quad = QuadratureTable::new(family, m).unwrap();
            let tau = quad.tau();
            let q = quad.q();
            for i in 0..m {
                let row_sum: f64 = (0..m).map(|j| q[(i, j)]).sum();
                worst = worst.max((row_sum - tau[i]).abs());
                for p in 0..m as i32 {
                    let integral: f64 = (0..m).map(|j| q[(i, j)] * tau[j].powi(p)).sum();
                    worst = worst.max((integral - tau[i].powi(p + 1) / (p + 1) as f64).abs());
                }
            }
        }
    }
    let lob = QuadratureTable::new(NodeFamily::Lobatto, 3).unwrap();
    let simpson = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];
    let simpson_err = (0..3).map(|j| (lob.q()[(2, j)] - simpson[j]).abs()).fold(0.0, f64::max);
    let (c, a) = radau_iia_3();
    let radau = QuadratureTable::new(NodeFamily::RadauRight, 3).unwrap();
    let radau_err = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (radau.q()[(i, j)] - a[(i, j)]).abs())
        .chain((0..3).map(|i| (radau.tau()[i] - c[i]).abs()))
        .fold(0.0, f64::max);
    let nodes_ok = generate_nodes(NodeFamily::Lobatto, 1).is_err();
    Outcome::new(
        worst <= 1e-12 && simpson_err <= 1e-12 && radau_err <= 1e-12 && nodes_ok,
        format!("row sums / monomials {worst:.1e}, Lobatto-3 vs Simpson {simpson_err:.1e}, Radau-3 vs closed form {radau_err:.1e}"),
    )
}

fn superconvergence() -> Outcome {
    let sweeper = Sweeper::new(NodeFamily::RadauRight, 3, PrecondKind::Lu).unwrap();
    let problem = Dahlquist::new(-1.0);
    let (_, a) = radau_iia_3();
    let exact = (-1.0f64).exp();
    let mut dts = Vec::new();
    let mut errs = Vec::new();
    let mut oracle_gap: f64 = 0.0;
    for i in 0..6 {
        let dt = 0.5 / 2f64.powi(i);
        let steps = (1.0 / dt).round() as usize;
        let mut u = 1.0;
        let mut v = 1.0;
        for n in 0..steps {
            let mut state = sweeper.initial_state(&problem, n as f64 * dt, dt, &[u]).unwrap();
            let out = sweeper.solve_collocation(&problem, &mut state, 1e-14, 50, 1e9).unwrap();
            assert!(out.converged);
            u = state.end_value(sweeper.quad())[0];
            // stage values of the dense stability function
            let stages = (Matrix3::identity() + a * dt).lu().solve(&Vector3::repeat(v)).unwrap();
            v = stages[2];
        }
        oracle_gap = oracle_gap.max((u - v).abs());
        dts.push(dt);
        errs.push((u - exact).abs());
    }
    let order = loglog_slope(&dts, &errs);
    Outcome::new(
        within(order, 5.0, 0.3) && oracle_gap <= 1e-12,
        format!("observed order {order:.3} (target 5 +- 0.3), dense-oracle gap {oracle_gap:.1e}"),
    )
}

fn order_ladder() -> Outcome {
    let dahlquist = RunConfig::from_preset(Preset::Dahlquist);
    let dts: Vec<f64> = (0..4).map(|i| 0.1 / 2f64.powi(i)).collect();
    let rows = convergence(&dahlquist, &[1, 2, 3, 4, 5, 6], &dts).unwrap();
    let d_orders = fitted_orders(&rows);

    let mut vdp = RunConfig::from_preset(Preset::Vdp);
    vdp.problem = ProblemParams::Vdp(VdpParams { mu: 5.0, u0: 0.0, v0: 1.0 });
    vdp.t_end = 1.0;
    vdp.method.inner_ratio = None;
    let dts: Vec<f64> = (3..7).map(|i| 0.1 / 2f64.powi(i)).collect();
    let rows = convergence(&vdp, &[1, 2, 3, 4, 5], &dts).unwrap();
    let v_orders = fitted_orders(&rows);

    let ok = |orders: &[(usize, f64)]| orders.iter().all(|&(k, o)| within(o, k.min(5) as f64, 0.3));
    let fmt = |orders: &[(usize, f64)]| orders.iter().map(|(k, o)| format!("k={k}:{o:.2}")).collect::<Vec<_>>().join(" ");
    Outcome::new(
        ok(&d_orders) && ok(&v_orders),
        format!("Dahlquist [{}]; van der Pol [{}]", fmt(&d_orders), fmt(&v_orders)),
    )
}

/// Contract violations of one recorded run.
fn contract_violations(record: &RunRecord, c: &ControllerConfig) -> Vec<String> {
    let mut bad = Vec::new();
    let steps = &record.steps;
    for s in steps {
        if c.strategy.is_step_adaptive() && s.accepted && !(s.eps <= c.eps_tol) {
            bad.push(format!("step {} accepted with eps {:e}", s.step_index, s.eps));
        }
    }
    for pair in steps.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.restart_reason == Some(Reason::NoConvergence) {
            let truncated = (b.t + b.dt - record.t_end).abs() <= 1e-12 * record.t_end.abs().max(1.0);
            if b.dt != a.dt / c.gamma && !(truncated && b.dt < a.dt / c.gamma) {
                bad.push(format!("step {}: no-convergence restart to {:e} from {:e}", b.step_index, b.dt, a.dt));
            }
        }
    }
    let accepted: Vec<_> = record.accepted().collect();
    for pair in accepted.windows(2) {
        if pair[1].dt > c.gamma * pair[0].dt * (1.0 + 1e-12) {
            bad.push(format!("step {}: growth {:.3}", pair[1].step_index, pair[1].dt / pair[0].dt));
        }
    }
    bad
}

fn controller_contract() -> Outcome {
    let mut checked = 0;
    let mut restarts = 0;
    let mut no_conv = 0;
    let mut problems = Vec::new();
    for preset in Preset::ALL {
        for strategy in Strategy::ALL {
            let mut cfg = RunConfig::from_preset(preset);
            cfg.controller.strategy = strategy;
            cfg.output.global_error = false;
            if !strategy.is_step_adaptive() {
                cfg.t_end = cfg.t0 + (cfg.t_end - cfg.t0).min(40.0 * cfg.controller.dt_init);
                cfg.controller.k_max = 5;
            }
            if strategy == Strategy::DtAdaptive {
                cfg.controller.k_max = 5;
            }
            let out = execute(&cfg).unwrap();
            let bad = contract_violations(&out.record, &cfg.controller);
            checked += out.record.steps.len();
            restarts += out.record.restarts;
            no_conv += out.record.steps.iter().filter(|s| s.restart_reason == Some(Reason::NoConvergence)).count();
            if !bad.is_empty() {
                problems.push(format!("{preset}/{strategy}: {}", bad[0]));
            }
        }
    }
    let detail = format!("{checked} recorded steps, {restarts} restarts ({no_conv} no-convergence) over all presets and strategies");
    if problems.is_empty() {
        Outcome::new(true, detail)
    } else {
        Outcome::new(false, format!("{detail}; {}", problems.join("; ")))
    }
}

fn tolerance_scaling() -> Outcome {
    let tols = vec![1e-5, 1e-6, 1e-7, 1e-8, 1e-9];
    let mut all = true;
    let mut parts = Vec::new();
    for preset in [Preset::Dahlquist, Preset::Nls] {
        for (strategy, m, k_max, target, tol) in
            [(Strategy::DtAdaptive, 3, 5, 1.0, 0.2), (Strategy::DtkAdaptive, 4, 16, 1.25, 0.25)]
        {
            let mut cfg = RunConfig::from_preset(preset);
            cfg.method.m = m;
            cfg.controller.k_max = k_max;
            let sweep = WpSweep { strategies: vec![strategy], tolerances: tols.clone(), step_sizes: vec![] };
            let rows = work_precision(&cfg, &sweep).unwrap();
            let slope = wp_slope(&rows, strategy);
            let ok = within(slope, target, tol);
            all &= ok;
            parts.push(format!("{preset} {strategy} {slope:.3} ({}{target} +- {tol})", if ok { "" } else { "outside " }));
        }
    }
    Outcome::new(all, parts.join(", "))
}

fn stiff_efficiency() -> Outcome {
    let adaptive = RunConfig::from_preset(Preset::VdpTransition);
    let (a_rec, a_err) = local_errors(&adaptive).unwrap();
    let target = a_err.iter().map(|e| e.error).fold(0.0, f64::max);

    let fixed_at = |dt: f64| {
        let mut cfg = adaptive.clone();
        cfg.controller.strategy = Strategy::Fixed;
        cfg.controller.k_max = 5;
        cfg.controller.dt_init = dt;
        let (rec, errs) = local_errors(&cfg).unwrap();
        (rec, errs.iter().map(|e| e.error).fold(0.0, f64::max))
    };
    let dt0 = 1e-4;
    let (_, e0) = fixed_at(dt0);
    let mut dt = (dt0 * (target / e0).powf(1.0 / 6.0) * 0.9).min(1e-2);
    let (mut f_rec, mut f_err) = fixed_at(dt);
    while f_err > target {
        dt *= 0.8;
        (f_rec, f_err) = fixed_at(dt);
    }
    let ratio = f_rec.newton_iters as f64 / a_rec.newton_iters as f64;
    Outcome::new(
        ratio >= 10.0,
        format!(
            "dtk {} Newton iterations at max local error {target:.2e}; fixed dt {dt:.3e} needs {} at {f_err:.2e}; ratio {ratio:.1}",
            a_rec.newton_iters, f_rec.newton_iters
        ),
    )
}

fn block_sdc() -> Outcome {
    let sweeper = Sweeper::new(NodeFamily::RadauRight, 3, PrecondKind::ImplicitEuler).unwrap();
    let problem = Dahlquist::new(-1.0);
    let dt = 0.1;
    let mut block = Block::new(&problem, &sweeper, 0.0, dt, 4, &[1.0]).unwrap();
    while block.residual() > 1e-14 && block.k < 100 {
        gssdc_iterate(&problem, &sweeper, &mut block).unwrap();
    }
    let mut gap: f64 = 0.0;
    let mut u = vec![1.0];
    for j in 0..4 {
        let mut state = sweeper.initial_state(&problem, j as f64 * dt, dt, &u).unwrap();
        sweeper.solve_collocation(&problem, &mut state, 1e-14, 50, 1e9).unwrap();
        u = state.end_value(sweeper.quad());
        gap = gap.max((block.steps[j].end_value(sweeper.quad())[0] - u[0]).abs());
    }

    // error against the mean accepted step of block Δt-adaptive runs
    let lu = Sweeper::new(NodeFamily::RadauRight, 3, PrecondKind::Lu).unwrap();
    let t_end: f64 = 4.0;
    let exact = (-t_end).exp();
    let bc = BlockConfig { steps: 4, pipelined: false };
    let mut mean_dt = Vec::new();
    let mut errs = Vec::new();
    for e in 12..=20 {
        let c = ControllerConfig {
            strategy: Strategy::DtAdaptive,
            eps_tol: 10f64.powf(-0.5 * e as f64),
            k_max: 5,
            dt_init: 0.01,
            ..Default::default()
        };
        let run = integrate_gssdc(&problem, &lu, &c, &bc, 0.0, t_end, &[1.0]).unwrap();
        mean_dt.push(t_end / run.record.total_steps as f64);
        errs.push(((run.state[0] - exact) / exact).abs());
    }
    let order = loglog_slope(&mean_dt, &errs);
    Outcome::new(
        gap <= 1e-10 && within(order, 5.0, 0.3),
        format!("converged block vs serial {gap:.1e}; block dt-adaptive order {order:.3} (target 5 +- 0.3)"),
    )
}

fn diagonal_sweeps() -> Outcome {
    let problem = Quench::new(QuenchParams::default()).unwrap();
    let sweeper = Sweeper::new(NodeFamily::RadauRight, 3, PrecondKind::MinSrS).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = ControllerConfig {
        strategy: Strategy::DtAdaptive,
        eps_tol: 1e-8,
        k_max: 5,
        dt_init: 1.0,
        ..Default::default()
    };
    let u0 = problem.initial_state();
    let serial = integrate(&problem, &sweeper, &c, 0.0, 500.0, &u0).unwrap();

    // single sweeps on states along the run, then whole runs
    let mut bitwise = true;
    let mut state = sweeper.initial_state(&problem, 100.0, 2.0, &serial.state).unwrap();
    for _ in 0..5 {
        let mut other = state.clone();
        sweeper.sweep(&problem, &mut state).unwrap();
        node_parallel_sweep(&problem, &sweeper, &mut other, &pool).unwrap();
        bitwise &= state.u == other.u && state.residual.to_bits() == other.residual.to_bits();
    }
    let node_pool = Arc::new(NodePool::new(3).unwrap());
    let pooled_sweeper = sweeper.clone().with_pool(node_pool.clone());
    let pooled = integrate(&problem, &pooled_sweeper, &c, 0.0, 500.0, &u0).unwrap();
    bitwise &= pooled.state == serial.state && pooled.record.steps == serial.record.steps;

    let time = |sw: &Sweeper| {
        let started = Instant::now();
        for _ in 0..20 {
            integrate(&problem, sw, &c, 0.0, 500.0, &u0).unwrap();
        }
        started.elapsed().as_secs_f64()
    };
    let t1 = time(&sweeper);
    let t3 = time(&pooled_sweeper);
    let ratio = t3 / t1;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut detail = format!(
        "bitwise {}, 3 workers at {ratio:.2}x sequential wall time (target < 0.7), solves per worker {:?}",
        if bitwise { "equal" } else { "DIFFERENT" },
        node_pool.solves_per_worker()
    );
    if cores < 3 {
        detail.push_str(&format!("; only {cores} core(s) available"));
    }
    Outcome::new(bitwise && ratio < 0.7, detail)
}

fn interpolation_restart() -> Outcome {
    let run = |interp: bool| {
        let mut cfg = RunConfig::from_preset(Preset::Quench);
        cfg.controller.interpolation_restart = interp;
        cfg.output.global_error = false;
        let out = execute(&cfg).unwrap();
        assert!(out.completed(), "{:?}", out.message);
        out.record
    };
    // sweeps of the attempts that redo a converged but rejected step
    let redo_sweeps = |r: &RunRecord| -> (usize, usize) {
        let redo: Vec<_> = r
            .steps
            .windows(2)
            .filter(|w| w[0].restart_reason == Some(Reason::ErrorExceedsTolerance))
            .map(|w| w[1].k)
            .collect();
        (redo.len(), redo.iter().sum())
    };
    let cold = run(false);
    let warm = run(true);
    let (nc, sc) = redo_sweeps(&cold);
    let (nw, sw) = redo_sweeps(&warm);
    Outcome::new(
        nw > 0 && sw < sc,
        format!(
            "redone steps: cold {nc} using {sc} sweeps, interpolated {nw} using {sw} sweeps; run totals {} vs {} sweeps",
            cold.sweeps, warm.sweeps
        ),
    )
}

fn physics() -> Outcome {
    let mut parts = Vec::new();

    // Quench: monotone peak temperature, threshold crossing, runaway
    let q_cfg = RunConfig::from_preset(Preset::Quench);
    let ProblemParams::Quench(qp) = q_cfg.problem else { unreachable!() };
    let quench = Quench::new(qp).unwrap();
    let sweeper = sdc_core::harness::build_sweeper(&q_cfg.method, None).unwrap();
    let mut peaks = vec![(q_cfg.t0, Quench::max_temperature(&quench.initial_state()))];
    integrate_observed(&quench, &sweeper, &q_cfg.controller, q_cfg.t0, q_cfg.t_end, &quench.initial_state(), |r, _, end| {
        if let Some(u) = end {
            peaks.push((r.t + r.dt, Quench::max_temperature(u)));
        }
    })
    .unwrap();
    let monotone = peaks.windows(2).all(|w| w[1].1 >= w[0].1);
    let crossing = peaks.iter().find(|p| p.1 > qp.t_thresh).map(|p| p.0);
    let final_peak = peaks.last().unwrap().1;
    let runaway = final_peak > 10.0 * qp.t_max;
    let quench_ok = monotone && crossing.is_some() && runaway;
    parts.push(format!(
        "quench monotone {monotone}, crossing at t={:.1}, final peak {final_peak:.3e}",
        crossing.unwrap_or(f64::NAN)
    ));

    // NLS: mass at tight tolerance
    let nls = NonlinearSchroedinger::new(NlsParams { n: 64 }).unwrap();
    let sw = Sweeper::new(NodeFamily::RadauRight, 4, PrecondKind::ImplicitEuler).unwrap();
    let c = ControllerConfig { eps_tol: 1e-9, r_tol: 1e-13, dt_init: 1e-2, ..Default::default() };
    let u0 = nls.initial_state();
    let run = integrate(&nls, &sw, &c, 0.0, 1.0, &u0).unwrap();
    let drift = ((nls.mass(&run.state) - nls.mass(&u0)) / nls.mass(&u0)).abs();
    let mass_ok = drift <= 1e-6;
    parts.push(format!("NLS relative mass drift {drift:.1e}"));

    // Allen-Cahn: radius follows the forcing, run completes through restarts
    let ac_cfg = RunConfig::from_preset(Preset::AllenCahn);
    let ProblemParams::AllenCahn(ap) = ac_cfg.problem else { unreachable!() };
    let ac = AllenCahn::new(ap).unwrap();
    let sweeper = sdc_core::harness::build_sweeper(&ac_cfg.method, None).unwrap();
    let mut radii = vec![ac.radius_by_mass(&ac.initial_state())];
    let result = integrate_observed(&ac, &sweeper, &ac_cfg.controller, ac_cfg.t0, ac_cfg.t_end, &ac.initial_state(), |_, _, end| {
        if let Some(u) = end {
            radii.push(ac.radius_by_mass(u));
        }
    });
    let (completed, restarts) = match &result {
        Ok(r) => (true, r.record.restarts),
        Err(f) => (false, f.record.restarts),
    };
    let turns = radii
        .windows(3)
        .filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0)
        .count();
    let ac_ok = completed && turns >= 2;
    parts.push(format!(
        "Allen-Cahn completed {completed} with {restarts} restarts, radius {:.4}..{:.4} with {turns} turning points",
        radii.iter().cloned().fold(f64::INFINITY, f64::min),
        radii.iter().cloned().fold(0.0, f64::max)
    ));

    Outcome::new(quench_ok && mass_ok && ac_ok, parts.join("; "))
}
