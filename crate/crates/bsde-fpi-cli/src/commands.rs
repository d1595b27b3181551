//! The five subcommands. Each returns Ok on success or a Failure whose exit
//! code separates numerical/guard failures (1) from config/IO misuse (2).

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use bsde_fpi::{
    cond_expect_terminal, cross_validate, discrete_linear_oracle, global_solve, local_solve,
    solve_nonlocal_pde, step_bound, verify_solution, CrossRow, MartingaleProcess, PdeGrid,
    Solution, SolveOptions, SolveReport, TimeGrid,
};

use crate::config::{
    F0Config, FunctionalConfig, ModeConfig, Problem, ProblemConfig, ReferenceConfig, RunConfig,
};
use crate::io::{self, fmt_f64};
use crate::Failure;

pub fn bound(cfg: &RunConfig, quiet: bool) -> Result<(), Failure> {
    let p = &cfg.problem;
    let grid = TimeGrid::new(p.tau, p.t_end, p.steps)?;
    let (functional, driver) = p.functional_and_driver(&grid)?;
    let c1 = functional.lipschitz(p.d);
    let c2 = driver.c2();
    let by_problem = step_bound(c1, c2, p.d, driver.m())?;
    let by_output = step_bound(c1, c2, p.dprime, p.dprime)?;
    let conservative = by_problem.min(by_output);
    if !quiet {
        println!(
            "functional '{}': C1 = {}, driver C2 = {}",
            functional.name(),
            fmt_f64(c1),
            fmt_f64(c2)
        );
        println!("step bound, (d, m') reading (d = {}, m' = {}): {by_problem:.6e}", p.d, driver.m());
        println!("step bound, (d', d') reading (d' = {}): {by_output:.6e}", p.dprime);
    }
    println!("conservative step bound: {conservative:.6e}");
    let dt = grid.dt();
    let verdict = if dt <= conservative {
        "within the bound"
    } else {
        "above the bound: global windows or the horizon override required"
    };
    println!("grid step dt = {dt:.6e}: {verdict}");
    Ok(())
}

pub(crate) fn run_solver(
    pr: &Problem,
    opts: &SolveOptions,
    mode: ModeConfig,
) -> Result<(Solution, &'static str), Failure> {
    let l = pr.functional.as_ref();
    let splices = l.local_in_time() && l.differential();
    match mode {
        ModeConfig::Global => {
            Ok((global_solve(&pr.space, &pr.xi, &pr.driver, l, opts)?, "global"))
        }
        ModeConfig::Local => local_with_context(pr, opts),
        ModeConfig::Auto if splices => {
            Ok((global_solve(&pr.space, &pr.xi, &pr.driver, l, opts)?, "global"))
        }
        ModeConfig::Auto => local_with_context(pr, opts),
    }
}

fn local_with_context(pr: &Problem, opts: &SolveOptions) -> Result<(Solution, &'static str), Failure> {
    match local_solve(&pr.space, &pr.xi, &pr.driver, pr.functional.as_ref(), opts) {
        Ok(sol) => Ok((sol, "local")),
        Err(e @ bsde_fpi::Error::HorizonExceedsBound { .. })
            if !pr.functional.local_in_time() =>
        {
            Err(Failure::Numerical(format!(
                "functional '{}' admits only single-window (local) solves, and {e}",
                pr.functional.name()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

/// The drift rate of a recursion-checkable driver: f0 = a·y with zero
/// diffusion coefficients.
fn linear_rate(p: &ProblemConfig) -> Result<f64, Failure> {
    if !p.driver.fi_all_zero() {
        return Err(Failure::Config(
            "the recursion oracle requires all-zero diffusion coefficients".into(),
        ));
    }
    match p.driver.f0 {
        F0Config::Zero => Ok(0.0),
        F0Config::LinearY { a } => Ok(a),
        _ => Err(Failure::Config(
            "the recursion oracle requires a zero or linear-in-y drift".into(),
        )),
    }
}

fn render_report(r: &SolveReport, method: &str, oracle: Option<&str>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method: {method}");
    let _ = writeln!(s, "partition (levels, terminal first): {:?}", r.partition);
    let _ = writeln!(s, "step bound: {:.6e}", r.step_bound);
    let _ = writeln!(s, "tolerance: {:e} (per window {:e})", r.tol, r.window_tol);
    for w in &r.windows {
        let ratio = w.last_ratio.map(fmt_f64).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "window {}: levels {}..{}, {} iterations, final increment {:.3e} (sup {:.3e}), last ratio {ratio}",
            w.window, w.start_level, w.end_level, w.iterations, w.final_increment,
            w.final_sup_increment
        );
    }
    let _ = writeln!(s, "picard iterations total: {}", r.history.len());
    let _ = writeln!(s, "wall: {:?}", r.wall);
    if let Some(line) = oracle {
        let _ = writeln!(s, "{line}");
    }
    s
}

pub fn solve(cfg: &RunConfig, out: &Path, override_flag: bool, quiet: bool) -> Result<(), Failure> {
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
    let pr = cfg.problem.build(None)?;
    let opts = cfg.solver.options(override_flag);
    let (sol, method) = run_solver(&pr, &opts, cfg.solver.mode)?;

    let outputs = &cfg.outputs;
    if outputs.solution {
        let path = out.join("solution.csv");
        let rows = if outputs.aggregates_only {
            io::write_solution_aggregates(&path, &sol)?
        } else {
            io::write_solution(&path, &sol)?
        };
        if !quiet {
            println!("wrote {} ({rows} rows)", path.display());
        }
    }
    if outputs.convergence {
        let path = out.join("convergence.csv");
        io::write_convergence(&path, &sol.report.history)?;
        if !quiet {
            println!("wrote {} ({} rows)", path.display(), sol.report.history.len());
        }
    }
    if outputs.lattice {
        let path = out.join("lattice.csv");
        let rows = io::write_lattice(&path, pr.space.as_ref())?;
        if !quiet {
            println!("wrote {} ({rows} rows)", path.display());
        }
    }

    let mut oracle_line = None;
    let mut oracle_pass = true;
    if cfg.solver.oracle_check {
        let a = linear_rate(&cfg.problem)?;
        let reference = discrete_linear_oracle(&pr.xi, a)?;
        let deviation = sol.y.max_abs_diff(&reference);
        let budget = 2.0 * opts.tol;
        oracle_pass = deviation <= budget;
        oracle_line = Some(format!(
            "oracle deviation: max |Y - recursion| = {deviation:.3e} (budget {budget:.3e}) {}",
            if oracle_pass { "PASS" } else { "FAIL" }
        ));
    }
    if outputs.report {
        let path = out.join("report.txt");
        std::fs::write(&path, render_report(&sol.report, method, oracle_line.as_deref()))
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?;
        if !quiet {
            println!("wrote {}", path.display());
        }
    }
    if !quiet {
        println!(
            "{method} solve: {} windows, {} picard iterations, wall {:?}",
            sol.report.windows.len(),
            sol.report.history.len(),
            sol.report.wall
        );
        if let Some(line) = &oracle_line {
            println!("{line}");
        }
    }
    if !oracle_pass {
        return Err(Failure::Numerical(
            "solution deviates from the linear recursion beyond 2x tolerance".into(),
        ));
    }
    Ok(())
}

pub fn verify(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<(), Failure> {
    let pr = cfg.problem.build(None)?;
    let path = out.join("solution.csv");
    let (y, m, v) = io::read_solution(&path, &pr.space, pr.driver.dprime())?;
    let sol = Solution {
        y,
        m: MartingaleProcess::from_process_unchecked(m),
        v,
        report: ingested_report(cfg.solver.tol),
    };
    let report = verify_solution(&sol, &pr.xi, &pr.driver, pr.functional.as_ref())?;
    println!(
        "max residual:      {:.3e} (threshold {:.3e})",
        report.max_residual, report.residual_threshold
    );
    println!(
        "martingale defect: {:.3e} (threshold {:.3e})",
        report.martingale_defect, report.defect_threshold
    );
    if !quiet {
        if let Some((level, node, size)) = report.worst_defect {
            println!("  worst defect at level {level}, node {node}: {size:.3e}");
        }
    }
    println!(
        "terminal defect:   {:.3e} (threshold {:.3e})",
        report.terminal_defect, report.defect_threshold
    );
    println!("verification: {}", if report.pass { "PASS" } else { "FAIL" });
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Numerical("solution failed verification".into()))
    }
}

/// Report shell for a re-ingested solution: only the tolerance is meaningful
/// (verification derives its residual threshold from it).
fn ingested_report(tol: f64) -> SolveReport {
    SolveReport {
        partition: Vec::new(),
        step_bound: 0.0,
        window_tol: tol,
        tol,
        windows: Vec::new(),
        history: Vec::new(),
        wall: std::time::Duration::ZERO,
    }
}

/// Shared preconditions for one-dimensional PDE comparisons.
fn check_pde_problem(p: &ProblemConfig) -> Result<(), Failure> {
    if p.d != 1 || p.dprime != 1 {
        return Err(Failure::Config("PDE comparison requires d = d' = 1".into()));
    }
    if p.terminal.len() != 1 {
        return Err(Failure::Config(
            "PDE comparison requires a single terminal component".into(),
        ));
    }
    if !matches!(p.functional, FunctionalConfig::Quadratic { .. }) {
        return Err(Failure::Config(
            "PDE comparison requires the quadratic-tail functional".into(),
        ));
    }
    if !p.driver.fi_all_zero() {
        return Err(Failure::Config(
            "PDE comparison requires all-zero diffusion coefficients".into(),
        ));
    }
    Ok(())
}

/// Smallest even step count with dt ≤ 0.8·dx² (even keeps the midpoint time
/// on the grid).
fn pde_default_steps(span: f64, dx: f64) -> usize {
    2 * ((span / (2.0 * 0.8 * dx * dx)).ceil() as usize).max(1)
}

fn build_pde(
    p: &ProblemConfig,
    x_half: f64,
    dx: f64,
    steps: Option<usize>,
) -> Result<PdeGrid, Failure> {
    check_pde_problem(p)?;
    let steps = steps.unwrap_or_else(|| pde_default_steps(p.t_end - p.tau, dx));
    let grid = TimeGrid::new(p.tau, p.t_end, steps)?;
    let m = p.m.unwrap_or(1);
    let driver =
        bsde_fpi::catalog::build_driver(&p.driver.f0.kind(), &[bsde_fpi::catalog::FiKind::Zero], 1, m, 1)?;
    let terminal = &p.terminal[0];
    let pde = solve_nonlocal_pde(
        |x| terminal.phi_at(x),
        |t, u, k| {
            let mut out = [0.0];
            driver.eval_f0(t, &[u], &[k], &mut out);
            out[0]
        },
        x_half,
        dx,
        &grid,
    )?;
    Ok(pde)
}

pub fn pde_check(
    cfg: &RunConfig,
    out: &Path,
    override_flag: bool,
    quiet: bool,
) -> Result<(), Failure> {
    let pc = cfg
        .pde
        .as_ref()
        .ok_or_else(|| Failure::Config("pde-check needs a \"pde\" config block".into()))?;
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
    let pde = build_pde(&cfg.problem, pc.x_half, pc.dx, pc.steps)?;
    if pde.clip_count() > 0 && !quiet {
        println!("note: {} radicand clips at rounding scale", pde.clip_count());
    }
    let opts = cfg.solver.options(override_flag);
    let levels = if pc.levels.is_empty() { vec![0] } else { pc.levels.clone() };
    let mut rows: Vec<CrossRow> = Vec::new();
    let (mut sum_rel, mut max_rel) = (0.0f64, 0.0f64);
    for &x0 in &pc.x0 {
        let pr = cfg.problem.build_anchored(x0, None)?;
        let (sol, _) = run_solver(&pr, &opts, cfg.solver.mode)?;
        let report = cross_validate(&sol, &pde, x0, &levels, pc.central_bins)?;
        for row in &report.rows {
            let rel = row.abs_err / row.u_pde.abs().max(1e-8);
            sum_rel += rel;
            max_rel = max_rel.max(rel);
        }
        rows.extend(report.rows);
    }
    if rows.is_empty() {
        return Err(Failure::Config("no comparison rows: all probes were skipped".into()));
    }
    let path = out.join("pde_check.csv");
    io::write_cross_rows(&path, &rows)?;
    let mean_rel = sum_rel / rows.len() as f64;
    if !quiet {
        println!(
            "{} probes: mean relative discrepancy {:.4}%, max {:.4}%",
            rows.len(),
            100.0 * mean_rel,
            100.0 * max_rel
        );
        println!("wrote {}", path.display());
    }
    if mean_rel > pc.threshold {
        return Err(Failure::Numerical(format!(
            "mean relative discrepancy {:.4}% exceeds the threshold {:.4}%",
            100.0 * mean_rel,
            100.0 * pc.threshold
        )));
    }
    Ok(())
}

pub struct StudyRow {
    pub steps: usize,
    pub dt: f64,
    pub y0: f64,
    pub error: Option<f64>,
    pub runtime_ms: f64,
    pub method: &'static str,
}

enum Target {
    None,
    Exponential { a: f64 },
    Pde { value: f64, x0: f64 },
}

pub fn study(cfg: &RunConfig, out: &Path, override_flag: bool, quiet: bool) -> Result<(), Failure> {
    let sc = cfg
        .study
        .as_ref()
        .ok_or_else(|| Failure::Config("study needs a \"study\" config block".into()))?;
    if sc.k_values.is_empty() {
        return Err(Failure::Config("study.k_values must be nonempty".into()));
    }
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
    let opts = cfg.solver.options(override_flag);
    let target = match &sc.reference {
        ReferenceConfig::None => Target::None,
        ReferenceConfig::Exponential => Target::Exponential { a: linear_rate(&cfg.problem)? },
        ReferenceConfig::Pde { x0, x_half, dx, steps } => {
            let pde = build_pde(&cfg.problem, *x_half, *dx, *steps)?;
            Target::Pde { value: pde.interp_u(0, *x0)?, x0: *x0 }
        }
    };
    let span = cfg.problem.t_end - cfg.problem.tau;
    let mut rows = Vec::with_capacity(sc.k_values.len());
    for &steps in &sc.k_values {
        let clock = Instant::now();
        let pr = match &target {
            Target::Pde { x0, .. } => cfg.problem.build_anchored(*x0, Some(steps))?,
            _ => cfg.problem.build(Some(steps))?,
        };
        let (sol, method) = run_solver(&pr, &opts, cfg.solver.mode)?;
        let runtime_ms = clock.elapsed().as_secs_f64() * 1e3;
        let y0 = sol.y.value(0, 0, 0);
        let error = match &target {
            Target::None => None,
            Target::Exponential { a } => {
                let mean_xi = cond_expect_terminal(&pr.xi, 0)?.value(0, 0, 0);
                Some((y0 - (a * span).exp() * mean_xi).abs())
            }
            Target::Pde { value, .. } => Some((y0 - value).abs()),
        };
        if !quiet {
            let err = error.map(|e| format!(", error {e:.3e}")).unwrap_or_default();
            println!("K = {steps}: Y_0 = {}{err}, {runtime_ms:.1} ms, {method}", fmt_f64(y0));
        }
        rows.push(StudyRow { steps, dt: pr.space.grid().dt(), y0, error, runtime_ms, method });
    }
    let path = out.join("study.csv");
    io::write_study(&path, &rows)?;
    if !quiet {
        println!("wrote {}", path.display());
    }
    Ok(())
}
