use std::path::Path;
use std::time::Instant;

use h2mm_core::lti::{build_error_system, h2_norm_with, H2Convention, LtiSystem};
use h2mm_core::matrix_equations::{observability_rank, spectrum};
use h2mm_core::moments::{check_interpolation, InterpolationData, ReducedModel};
use h2mm_core::optimizer::{
    default_targets, exact_gramians, gradient_f, init_pole_placement, init_random_unstable_s, kkt_residual, run_kkt,
    run_multistart, run_pm, CvMode, DecisionVars, FixedStructure, KktConfig, KktResidual, MultiStartConfig, PmConfig,
    Problem, StepRule, Termination,
};
use h2mm_core::sdp::{
    add_positivity, build_relaxation_p1, build_relaxation_p2, export_sdpa, recover, solve_small, SdpProblem,
    SolverConfig,
};
use nalgebra::{Complex, DMatrix, DVector};

use crate::files::{
    read_json, read_system, write_json, ConstraintChecks, KktFile, ModelFile, ReportFile, ResidualFile,
};
use crate::points::{parse_point_file, parse_points, parse_tangents};
use crate::{
    CliError, Convention, ExportSdpArgs, H2normArgs, Method, Mode, ReduceArgs, SweepArgs, ValidateArgs, EXIT_DOMAIN,
    EXIT_NOT_CONVERGED, EXIT_OK,
};

/// Interpolation tolerance used for the residuals recorded in reports.
const REPORT_TOL: f64 = 1e-6;

/// Formats `x` with 12 significant digits.
pub fn significant12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..12).contains(&exp) {
        return format!("{x:.11e}");
    }
    let prec = (11 - exp).max(0) as usize;
    format!("{x:.prec$}")
}

pub fn h2norm(args: &H2normArgs) -> Result<u8, CliError> {
    let sys = read_system(&args.system)?;
    let convention = match args.convention {
        Convention::Normalized => H2Convention::Normalized,
        Convention::Unnormalized => H2Convention::Unnormalized,
    };
    let norm = h2_norm_with(&sys, convention)?;
    println!("{}", significant12(norm));
    Ok(EXIT_OK)
}

fn check_order(order: usize, sys: &LtiSystem<f64>, command: &str) -> Result<(), CliError> {
    if order == 0 || order > sys.n() {
        return Err(CliError::Domain(format!(
            "--order must lie in 1..={} for a system with n = {}\n\nUsage: h2mm {command} --system PATH --order NU --problem {{1|2}} [OPTIONS]",
            sys.n(),
            sys.n()
        )));
    }
    Ok(())
}

/// `(S, L)` from a point list and optional tangents (all-ones by default).
fn data_from_points(
    points: &[Complex<f64>],
    tangents: Option<&str>,
    m: usize,
) -> Result<InterpolationData<f64>, CliError> {
    let groups = h2mm_core::moments::group_points(points)?;
    let directions = match tangents {
        Some(t) => parse_tangents(t)?,
        None => vec![DVector::from_element(m, 1.0); groups.len()],
    };
    if directions.len() != groups.len() || directions.iter().any(|d| d.len() != m) {
        return Err(CliError::Domain(format!(
            "expected {} tangent vectors of length {m}",
            groups.len()
        )));
    }
    Ok(InterpolationData::from_groups(&groups, &directions)?)
}

fn parse_step(step: &str) -> Result<StepRule<f64>, CliError> {
    if step == "armijo" {
        return Ok(StepRule::default());
    }
    step.strip_prefix("fixed:")
        .and_then(|a| a.parse::<f64>().ok())
        .filter(|a| *a > 0.0 && a.is_finite())
        .map(StepRule::Fixed)
        .ok_or_else(|| CliError::Domain(format!("--step must be armijo or fixed:ALPHA, got {step:?}")))
}

fn parse_g0(text: &str, nu: usize, m: usize) -> Result<DMatrix<f64>, CliError> {
    let xs: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Domain(format!("cannot read --g0 {text:?}")))?;
    if xs.len() != nu * m {
        return Err(CliError::Domain(format!("--g0 needs {} entries", nu * m)));
    }
    Ok(DMatrix::from_row_slice(nu, m, &xs))
}

/// `--g0` when given, pole placement at `{−1, …, −ν}` otherwise.
fn initial_vars(
    args: &ReduceArgs,
    sys: &LtiSystem<f64>,
    data: &InterpolationData<f64>,
    problem: Problem,
) -> Result<DecisionVars<f64>, CliError> {
    let nu = data.order();
    Ok(match &args.g0 {
        Some(text) => {
            let g = parse_g0(text, nu, sys.m())?;
            match problem {
                Problem::P1 => DecisionVars::p1(data.s(), &g),
                Problem::P2 => DecisionVars::p2(data.s(), &g),
            }
        }
        None => init_pole_placement(data, &default_targets(nu), problem)?,
    })
}

/// Everything a report needs from one optimization run.
struct RunResult {
    vars: DecisionVars<f64>,
    fs: FixedStructure<f64>,
    iterations: usize,
    converged: bool,
    termination: String,
    kkt: KktResidual<f64>,
    mode: &'static str,
    exactness_gap: Option<f64>,
    restart_finals: Option<Vec<Option<f64>>>,
}

fn termination_name(t: Termination) -> String {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIterations => "max_iterations",
        Termination::LineSearchStalled => "line_search_stalled",
    }
    .into()
}

fn exact_kkt(vars: &DecisionVars<f64>, fs: &FixedStructure<f64>) -> Result<KktResidual<f64>, CliError> {
    let (w, m) = exact_gramians(vars, fs)?;
    Ok(kkt_residual(&w, &m, vars, fs)?)
}

fn run_grad(
    args: &ReduceArgs,
    sys: &LtiSystem<f64>,
    data: &InterpolationData<f64>,
    from_points: bool,
) -> Result<RunResult, CliError> {
    let problem = if args.problem == 1 { Problem::P1 } else { Problem::P2 };
    let pm = PmConfig {
        step: parse_step(&args.step)?,
        tol_grad: args.tol.unwrap_or(1e-8),
        max_iters: args.max_iters,
        mode: match args.mode {
            Mode::Frozen => CvMode::Frozen,
            Mode::Refresh => CvMode::Refresh,
        },
        positivity: args.positive,
    };
    let mode = match (problem, args.mode) {
        (Problem::P1, Mode::Refresh) => "refresh",
        _ => "frozen",
    };
    let nu = data.order();
    let single = args.restarts <= 1 || args.g0.is_some();
    if problem == Problem::P1 && !single {
        let cfg = MultiStartConfig {
            restarts: args.restarts,
            seed: args.seed,
            pm,
            targets: default_targets(nu),
            s0: from_points.then(|| data.s().clone()),
        };
        let out = run_multistart(sys, data.l(), &cfg)?;
        let best = out.best;
        return Ok(RunResult {
            converged: best.converged(),
            termination: termination_name(best.termination),
            iterations: best.iterations,
            kkt: best.kkt,
            vars: best.vars,
            fs: best.fs,
            mode,
            exactness_gap: None,
            restart_finals: Some(out.finals),
        });
    }
    let fs = FixedStructure::from_data(sys, data)?;
    let vars0 = initial_vars(args, sys, data, problem)?;
    let out = run_pm(&vars0, &fs, &pm)?;
    Ok(RunResult {
        converged: out.converged(),
        termination: termination_name(out.termination),
        iterations: out.iterations,
        kkt: out.kkt,
        vars: out.vars,
        fs: out.fs,
        mode,
        exactness_gap: None,
        restart_finals: None,
    })
}

fn run_kkt_method(
    args: &ReduceArgs,
    sys: &LtiSystem<f64>,
    data: &InterpolationData<f64>,
) -> Result<RunResult, CliError> {
    let problem = if args.problem == 1 { Problem::P1 } else { Problem::P2 };
    let fs = FixedStructure::from_data(sys, data)?;
    let vars0 = initial_vars(args, sys, data, problem)?;
    let (w0, m0) = exact_gramians(&vars0, &fs)?;
    let cfg = KktConfig {
        tol_kkt: args.tol.unwrap_or(1e-6),
        max_iters: args.max_iters,
        ..KktConfig::default()
    };
    let out = run_kkt(&vars0, &w0, &m0, &fs, &cfg)?;
    if !out.stable {
        return Err(CliError::Domain("the KKT iteration left the stability domain".into()));
    }
    Ok(RunResult {
        converged: out.converged,
        termination: if out.converged { "converged" } else { "max_iterations" }.into(),
        iterations: out.iterations,
        kkt: out.residual,
        vars: out.vars,
        fs,
        mode: "frozen",
        exactness_gap: None,
        restart_finals: None,
    })
}

fn relaxation(
    problem: u8,
    sys: &LtiSystem<f64>,
    data: &InterpolationData<f64>,
    positive: bool,
) -> Result<(SdpProblem<f64>, FixedStructure<f64>), CliError> {
    let fs = FixedStructure::from_data(sys, data)?;
    let p = if problem == 1 {
        build_relaxation_p1(sys, data.l(), fs.c_v())?
    } else {
        build_relaxation_p2(sys, data.s(), data.l(), fs.c_v())?
    };
    Ok((if positive { add_positivity(p) } else { p }, fs))
}

fn run_sdp(args: &ReduceArgs, sys: &LtiSystem<f64>, data: &InterpolationData<f64>) -> Result<RunResult, CliError> {
    let (p, fs) = relaxation(args.problem, sys, data, args.positive)?;
    let sol = solve_small(&p, &SolverConfig::default())?;
    let rec = recover(&sol, &p)?;
    if !rec.stable {
        return Err(CliError::Domain("the recovered model is not stable".into()));
    }
    let vars = rec.vars(p.problem);
    Ok(RunResult {
        kkt: exact_kkt(&vars, &fs)?,
        vars,
        fs,
        iterations: sol.newton_steps,
        converged: true,
        termination: "solved".into(),
        mode: "frozen",
        exactness_gap: Some(rec.gap),
        restart_finals: None,
    })
}

fn spectra_disjoint(a: &[Complex<f64>], b: &[Complex<f64>], scale: f64) -> bool {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| (x - y).norm()))
        .fold(f64::INFINITY, f64::min)
        > 1e-8 * scale.max(1.0)
}

type Summary = (Vec<[f64; 2]>, Vec<ResidualFile>, ConstraintChecks);

/// Interpolation points, residuals and constraint checks of a final model.
fn interpolation_summary(
    sys: &LtiSystem<f64>,
    model: &ReducedModel<f64>,
    s: &DMatrix<f64>,
    l: &DMatrix<f64>,
    structured: Option<&InterpolationData<f64>>,
) -> Result<Summary, CliError> {
    let es = spectrum(s)?.eigenvalues;
    let ea = spectrum(sys.a())?.eigenvalues;
    let ef = spectrum(&model.f)?.eigenvalues;
    let observable = observability_rank(l, s)? == s.nrows();
    let checks = ConstraintChecks {
        sigma_S_disjoint_A: spectra_disjoint(&es, &ea, s.norm().max(sys.a().norm())),
        sigma_S_disjoint_F: spectra_disjoint(&es, &ef, s.norm().max(model.f.norm())),
        observable,
    };
    let mut residuals = Vec::new();
    if checks.all() {
        let data = match structured {
            Some(d) => d.clone(),
            None => InterpolationData::new(s.clone(), l.clone())?,
        };
        let rep = check_interpolation(sys, model, &data, REPORT_TOL)?;
        residuals = rep
            .residuals
            .iter()
            .map(|r| ResidualFile {
                point: [r.point.re, r.point.im],
                order: r.order,
                residual: r.residual,
            })
            .collect();
    }
    let points = es.iter().map(|z| [z.re, z.im]).collect();
    Ok((points, residuals, checks))
}

pub fn reduce(args: &ReduceArgs) -> Result<u8, CliError> {
    let start = Instant::now();
    let sys = read_system(&args.system)?;
    check_order(args.order, &sys, "reduce")?;
    let points = args.points.as_deref().map(parse_points).transpose()?;
    if args.problem == 2 && points.is_none() {
        return Err(CliError::Domain("--points is required for problem 2".into()));
    }
    if args.method == Method::Sdp && points.is_none() {
        return Err(CliError::Domain("--points is required with --method sdp".into()));
    }
    let data = match &points {
        Some(p) => {
            if p.len() != args.order {
                return Err(CliError::Domain(format!(
                    "{} points given for order {}",
                    p.len(),
                    args.order
                )));
            }
            data_from_points(p, args.tangents.as_deref(), sys.m())?
        }
        None => InterpolationData::new(
            init_random_unstable_s(args.order, args.seed),
            DMatrix::from_element(sys.m(), args.order, 1.0),
        )?,
    };
    let run = match args.method {
        Method::Grad => run_grad(args, &sys, &data, points.is_some())?,
        Method::Kkt => run_kkt_method(args, &sys, &data)?,
        Method::Sdp => run_sdp(args, &sys, &data)?,
    };

    let model = run.vars.to_model(&run.fs)?;
    let f = model.f.clone();
    let sf = spectrum(&f)?;
    if !sf.is_stable {
        return Err(CliError::Domain("the final model is not stable".into()));
    }
    let err = build_error_system(&sys, &model)?;
    let h2 = err.h2_norm()?;
    let s = run.vars.s();
    // the point list describes S only while S is held fixed
    let structured = (args.problem == 2).then_some(&data);
    let (interp_points, residuals, checks) = interpolation_summary(&sys, &model, &s, run.fs.l(), structured)?;
    let grad = gradient_f(&run.vars, &run.fs)?.norm();

    let final_points: Vec<Complex<f64>> = match &points {
        Some(p) if args.problem == 2 => p.clone(),
        _ => interp_points.iter().map(|z| Complex::new(z[0], z[1])).collect(),
    };
    if let Some(out) = &args.out {
        write_json(out, &ModelFile::from_model(&model, &final_points, Some(run.mode)))?;
    }
    let report = ReportFile {
        problem: args.problem,
        method: match args.method {
            Method::Kkt => "kkt",
            Method::Grad => "grad",
            Method::Sdp => "sdp",
        }
        .into(),
        mode: run.mode.into(),
        h2_error: h2,
        h2_error_squared: h2 * h2,
        h2_error_unnormalized: H2Convention::Unnormalized.scale(h2),
        iterations: run.iterations,
        converged: run.converged,
        termination: run.termination,
        final_gradient_norm: grad,
        kkt_residuals: KktFile {
            r_m: run.kkt.r_m,
            r_w: run.kkt.r_w,
            r_x: run.kkt.r_x,
        },
        interpolation_points: interp_points,
        interpolation_residuals: residuals,
        stable: sf.is_stable,
        spectral_abscissa: sf.spectral_abscissa,
        constraint_checks: checks,
        exactness_gap: run.exactness_gap,
        restart_finals: run.restart_finals,
        seed: args.seed,
        timing_ms: start.elapsed().as_millis() as u64,
    };
    match &args.report {
        Some(path) => {
            write_json(path, &report)?;
            println!("h2_error {}", significant12(h2));
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?
        ),
    }
    if !report.constraint_checks.all() {
        eprintln!("error: constraint checks failed: {:?}", report.constraint_checks);
        return Ok(EXIT_DOMAIN);
    }
    if !report.converged {
        eprintln!("warning: iteration limit reached without convergence");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

/// Interpolation data carried by a model file's provenance.
fn provenance_data(file: &ModelFile, m: usize) -> Result<InterpolationData<f64>, CliError> {
    let prov = file
        .provenance
        .as_ref()
        .ok_or_else(|| CliError::Domain("the model carries no provenance (S, L) or points".into()))?;
    if let Some(points) = &prov.points {
        let pts: Vec<Complex<f64>> = points.iter().map(|p| Complex::new(p[0], p[1])).collect();
        if !pts.is_empty() {
            let structured = data_from_points(&pts, None, m)?;
            // explicit (S, L) override the default tangents when both exist
            if let (Some(s), Some(l)) = (&prov.s, &prov.l) {
                let s = crate::files::from_rows(s, "S")?;
                let l = crate::files::from_rows(l, "L")?;
                if s != *structured.s() || l != *structured.l() {
                    return Ok(InterpolationData::new(s, l)?);
                }
            }
            return Ok(structured);
        }
    }
    match (&prov.s, &prov.l) {
        (Some(s), Some(l)) => Ok(InterpolationData::new(
            crate::files::from_rows(s, "S")?,
            crate::files::from_rows(l, "L")?,
        )?),
        _ => Err(CliError::Domain("the model provenance lacks S and L".into())),
    }
}

pub fn validate(args: &ValidateArgs) -> Result<u8, CliError> {
    let sys = read_system(&args.system)?;
    let file: ModelFile = read_json(&args.model)?;
    let model = file.to_model()?;
    let data = provenance_data(&file, sys.m())?;
    let sf = spectrum(&model.f)?;
    let es = spectrum(data.s())?.eigenvalues;
    let disjoint = spectra_disjoint(&es, &sf.eigenvalues, data.s().norm().max(model.f.norm()));
    let report = check_interpolation(&sys, &model, &data, args.tol)?;
    for r in &report.residuals {
        let status = if r.residual <= args.tol { "ok" } else { "FAIL" };
        println!(
            "point {}{:+}j order {} residual {:.3e} {status}",
            r.point.re, r.point.im, r.order, r.residual
        );
    }
    println!(
        "stable {} (spectral abscissa {:.6e})",
        sf.is_stable, sf.spectral_abscissa
    );
    println!("sigma(S) disjoint from sigma(F) {disjoint}");
    let pass = report.pass && sf.is_stable && disjoint;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { EXIT_OK } else { EXIT_DOMAIN })
}

fn parse_orders(text: &str, n: usize) -> Result<Vec<usize>, CliError> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| CliError::Domain(format!("--orders must look like A..B, got {text:?}")))?;
    let read = |t: &str| {
        t.trim_start_matches('=')
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Domain(format!("cannot read order {t:?}")))
    };
    let (a, b) = (read(a)?, read(b)?);
    if a > b {
        return Err(CliError::Domain(format!("the order range {text} is empty")));
    }
    if a == 0 || b >= n {
        return Err(CliError::Domain(format!(
            "orders must lie in 1..={}",
            n.saturating_sub(1)
        )));
    }
    Ok((a..=b).collect())
}

/// Points `0, h, 2h, …` for `dense:h`, ten times sparser for `rare:h`, or
/// the contents of a file for `list:FILE`.
fn strategy_points(strategy: &str, nu: usize) -> Result<Vec<Complex<f64>>, CliError> {
    let (kind, value) = strategy
        .split_once(':')
        .ok_or_else(|| CliError::Domain(format!("unknown point strategy {strategy:?}")))?;
    let spaced = |h: f64| (0..nu).map(|k| Complex::new(k as f64 * h, 0.0)).collect();
    let step = || {
        value
            .parse::<f64>()
            .ok()
            .filter(|h| *h > 0.0 && h.is_finite())
            .ok_or_else(|| CliError::Domain(format!("bad spacing in {strategy:?}")))
    };
    match kind {
        "dense" => Ok(spaced(step()?)),
        "rare" => Ok(spaced(10.0 * step()?)),
        "list" => {
            let text = std::fs::read_to_string(Path::new(value)).map_err(|e| CliError::Io(format!("{value}: {e}")))?;
            let pts = parse_point_file(&text)?;
            if pts.len() < nu {
                return Err(CliError::Domain(format!("{value} lists fewer than {nu} points")));
            }
            Ok(pts[..nu].to_vec())
        }
        _ => Err(CliError::Domain(format!("unknown point strategy {strategy:?}"))),
    }
}

/// One sweep row: Problem 2 at the strategy's first `nu` points.
pub struct SweepRow {
    pub nu: usize,
    pub strategy: String,
    pub h2_error: f64,
    pub initial_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stable: bool,
}

pub fn sweep_rows(
    sys: &LtiSystem<f64>,
    orders: &[usize],
    strategies: &[String],
    method: Method,
    max_iters: usize,
) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::new();
    for &nu in orders {
        for strategy in strategies {
            let pts = strategy_points(strategy, nu)?;
            let data = data_from_points(&pts, None, sys.m())?;
            let fs = FixedStructure::from_data(sys, &data)?;
            let vars0 = init_pole_placement(&data, &default_targets(nu), Problem::P2)?;
            let error_of = |v: &DecisionVars<f64>| -> Result<f64, CliError> {
                Ok(build_error_system(sys, &v.to_model(&fs)?)?.h2_norm()?)
            };
            let initial_error = error_of(&vars0)?;
            let (vars, iterations, converged) = match method {
                Method::Grad => {
                    let cfg = PmConfig {
                        max_iters,
                        ..PmConfig::default()
                    };
                    let out = run_pm(&vars0, &fs, &cfg)?;
                    let converged = out.converged();
                    (out.vars, out.iterations, converged)
                }
                Method::Kkt => {
                    let (w0, m0) = exact_gramians(&vars0, &fs)?;
                    let cfg = KktConfig {
                        max_iters,
                        ..KktConfig::default()
                    };
                    let out = run_kkt(&vars0, &w0, &m0, &fs, &cfg)?;
                    (out.vars, out.iterations, out.converged)
                }
                Method::Sdp => {
                    return Err(CliError::Domain("sweep supports --method grad or kkt".into()));
                }
            };
            let stable = vars.is_feasible(&fs)?;
            let h2_error = if stable { error_of(&vars)? } else { f64::INFINITY };
            rows.push(SweepRow {
                nu,
                strategy: strategy.clone(),
                h2_error,
                initial_error,
                iterations,
                converged,
                stable,
            });
        }
    }
    Ok(rows)
}

pub fn sweep(args: &SweepArgs) -> Result<u8, CliError> {
    let sys = read_system(&args.system)?;
    let orders = parse_orders(&args.orders, sys.n())?;
    let rows = sweep_rows(&sys, &orders, &args.strategies, args.method, args.max_iters)?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", args.out.display()));
    let mut w = csv::Writer::from_path(&args.out).map_err(io)?;
    w.write_record(["nu", "strategy", "h2_error", "iterations", "converged", "stable"])
        .map_err(io)?;
    for r in &rows {
        w.write_record([
            r.nu.to_string(),
            r.strategy.clone(),
            r.h2_error.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.stable.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(if rows.iter().all(|r| r.converged) {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

pub fn export_sdp(args: &ExportSdpArgs) -> Result<u8, CliError> {
    let sys = read_system(&args.system)?;
    check_order(args.order, &sys, "export-sdp")?;
    let pts = parse_points(&args.points)?;
    if pts.len() != args.order {
        return Err(CliError::Domain(format!(
            "{} points given for order {}",
            pts.len(),
            args.order
        )));
    }
    let data = data_from_points(&pts, args.tangents.as_deref(), sys.m())?;
    let (p, _) = relaxation(args.problem, &sys, &data, args.positive)?;
    export_sdpa(&p, &args.out)?;
    Ok(EXIT_OK)
}
