//! One function per subcommand. Every command writes deterministic artifacts
//! plus a manifest into the output directory.

use std::path::Path;

use serde::Serialize;

use pide_core::error::CoreError;
use pide_core::exprlang::Expr;
use pide_core::grid::GridField;
use pide_core::measure::check_integrability;
use pide_core::nonlocal::{
    epsilon_refinement_study, levy_smooth, RefinementTarget, SmoothFn,
};
use pide_core::solver::{
    perron_bounds, solve_evolution, solve_stationary, SolverConfig, SolverReport,
};
use pide_core::verify::{
    classify, comparison_check, definition_equivalence_study, gaussian_case, Verdict,
};
use pide_core::{mc, VecN};

use crate::config::{RunConfig, StudyConfig};
use crate::manifest::RunDir;
use crate::{CliError, Invocation};

#[derive(Debug, Serialize)]
struct ConditionEntry {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    term: Option<usize>,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    worst: Option<f64>,
    detail: String,
}

#[derive(Debug, Serialize)]
struct ConditionsReport {
    pass: bool,
    conditions: Vec<ConditionEntry>,
}

const VALIDATOR_BUDGET: usize = 10_000;

fn run_condition_checks(config: &RunConfig) -> Result<ConditionsReport, CliError> {
    let domain = config.build_domain()?;
    let n_cells = config.n_cells()?;
    let template = GridField::new(domain.clone(), n_cells)
        .map_err(|e| CliError::config(format!("grid: {e}")))?;
    let dim = domain.dim_n();
    let mut entries = Vec::new();

    // local operator conditions
    let f_expr = Expr::parse(&config.f_op.f).map_err(|e| CliError::config(format!("F.f: {e}")))?;
    let local = pide_core::local_op::LocalOperator::linear_proper(
        dim,
        config.f_op.gamma,
        f_expr.clone(),
        config.f_op.c,
    )
    .map_err(|e| CliError::config(format!("F: {e}")))?;

    let proper = local
        .check_proper(VALIDATOR_BUDGET)
        .map_err(CliError::from_core)?;
    entries.push(ConditionEntry {
        name: "proper".into(),
        term: None,
        pass: proper.pass,
        worst: Some(proper.worst_slack),
        detail: proper.note,
    });
    let elliptic = local
        .check_ellipticity(VALIDATOR_BUDGET)
        .map_err(CliError::from_core)?;
    entries.push(ConditionEntry {
        name: "F".into(),
        term: None,
        pass: elliptic.pass,
        worst: Some(elliptic.worst_slack),
        detail: elliptic.note,
    });

    // structure condition with the modulus w(s) = L s estimated from the
    // source's gradient over the grid
    let mut lip = 0.0_f64;
    let fd = 0.5 * template.h_min();
    for idx in template.indices() {
        let x = template.node_point(idx);
        let mut grad_sq = 0.0;
        for k in 0..dim {
            let mut up = x;
            up[k] += fd;
            let mut dn = x;
            dn[k] -= fd;
            let (fu, fdn) = (
                f_expr.eval(&up, dim).map_err(|e| CliError::config(e.to_string()))?,
                f_expr.eval(&dn, dim).map_err(|e| CliError::config(e.to_string()))?,
            );
            let slope = (fu - fdn) / (2.0 * fd);
            grad_sq += slope * slope;
        }
        lip = lip.max(grad_sq.sqrt());
    }
    let l = 1.2 * lip + 1e-9;
    let modulus: pide_core::local_op::ModulusFn = std::sync::Arc::new(move |s| l * s);
    let structure = local
        .check_structure_in(
            &modulus,
            VALIDATOR_BUDGET,
            domain.box_lo(),
            domain.box_hi(),
        )
        .map_err(CliError::from_core)?;
    entries.push(ConditionEntry {
        name: "structure".into(),
        term: None,
        pass: structure.pass,
        worst: Some(structure.worst_slack),
        detail: format!("{} (w(s) = {l:.3e} s from the source gradient)", structure.note),
    });

    // per-term conditions
    for (t, tc) in config.term_configs()?.iter().enumerate() {
        let family = RunConfig::measure_family(&tc.measure)?;
        let integ = check_integrability(&family, tc.measure.dim_m).map_err(CliError::from_core)?;
        entries.push(ConditionEntry {
            name: "integ".into(),
            term: Some(t),
            pass: integ.integrable,
            worst: None,
            detail: integ.detail.clone(),
        });

        let measure_ok = integ.integrable;
        match (tc.measure.mu, config.domain.bounded) {
            (Some(mu), _) if measure_ok => {
                let measure = RunConfig::build_measure(&tc.measure)?;
                let moment = measure.tail_moment(1.0, mu);
                entries.push(ConditionEntry {
                    name: "unbounded".into(),
                    term: Some(t),
                    pass: moment.is_ok(),
                    worst: moment.as_ref().ok().copied(),
                    detail: match &moment {
                        Ok(v) => format!("tail moment of order {mu} = {v:.6e}"),
                        Err(e) => e.to_string(),
                    },
                });
            }
            (None, false) => entries.push(ConditionEntry {
                name: "unbounded".into(),
                term: Some(t),
                pass: false,
                worst: None,
                detail: "unbounded domain needs a tail moment order mu".into(),
            }),
            _ => entries.push(ConditionEntry {
                name: "unbounded".into(),
                term: Some(t),
                pass: true,
                worst: None,
                detail: "not required (bounded domain, no mu declared)".into(),
            }),
        }

        let kernel = RunConfig::build_kernel(&tc.kernel)?;
        let growth = kernel.verify_growth(VALIDATOR_BUDGET);
        entries.push(ConditionEntry {
            name: "beta".into(),
            term: Some(t),
            pass: growth.pass,
            worst: Some(growth.worst_ratio),
            detail: growth.note,
        });
        let lipschitz = kernel.verify_lipschitz(VALIDATOR_BUDGET);
        entries.push(ConditionEntry {
            name: "betacont".into(),
            term: Some(t),
            pass: lipschitz.pass,
            worst: Some(lipschitz.worst_ratio),
            detail: lipschitz.note,
        });

        let nondeg_required = !config.domain.bounded;
        if !kernel.gradient_independent() {
            entries.push(ConditionEntry {
                name: "unbounded2".into(),
                term: Some(t),
                pass: !nondeg_required,
                worst: None,
                detail: "stated for gradient-independent jumps".into(),
            });
        } else if kernel.constants().b3.is_none() {
            entries.push(ConditionEntry {
                name: "unbounded2".into(),
                term: Some(t),
                pass: !nondeg_required,
                worst: None,
                detail: "no B3 declared".into(),
            });
        } else {
            let nondeg = kernel
                .verify_nondegeneracy(VALIDATOR_BUDGET)
                .map_err(CliError::from_core)?;
            entries.push(ConditionEntry {
                name: "unbounded2".into(),
                term: Some(t),
                pass: nondeg.pass,
                worst: Some(nondeg.worst_ratio),
                detail: nondeg.note,
            });
        }

        let g_map = RunConfig::build_g_map(&tc.g_map)?;
        let mono = g_map.check_monotone_map(VALIDATOR_BUDGET);
        entries.push(ConditionEntry {
            name: "G".into(),
            term: Some(t),
            pass: mono.pass,
            worst: Some(mono.worst_slack),
            detail: mono.note,
        });
    }

    // informational: the landing-margin recommendation for the box
    let mut sup_b1 = 0.0_f64;
    for tc in config.term_configs()? {
        let kernel = RunConfig::build_kernel(&tc.kernel)?;
        for idx in template.indices() {
            sup_b1 = sup_b1.max(kernel.envelope(&template.node_point(idx)));
        }
    }
    let z_max_ref = config.solver.z_max.unwrap_or(100.0);
    let recommended = 1.0_f64.max(sup_b1 * z_max_ref);
    entries.push(ConditionEntry {
        name: "margin".into(),
        term: None,
        pass: true,
        worst: Some(domain.margin()),
        detail: if domain.margin() >= recommended {
            format!(
                "box margin {:.3} covers all landings up to z_max",
                domain.margin()
            )
        } else {
            format!(
                "box margin {:.3} < recommended {recommended:.3}; far landings read g analytically and the tail remainder bound applies",
                domain.margin()
            )
        },
    });

    let pass = entries.iter().all(|e| e.pass);
    Ok(ConditionsReport { pass, conditions: entries })
}

pub fn check_conditions(inv: &Invocation, out_dir: &Path) -> Result<u8, CliError> {
    let report = run_condition_checks(&inv.config)?;
    let mut run = RunDir::create(out_dir, "check-conditions", &inv.config, inv.seed, inv.threads)?;
    run.write_json("conditions.json", &report)?;
    run.finish()?;
    for c in &report.conditions {
        println!(
            "{} {}{}: {}",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.term.map(|t| format!("[term {t}]")).unwrap_or_default(),
            c.detail
        );
    }
    Ok(if report.pass { 0 } else { 1 })
}

fn precheck(inv: &Invocation) -> Result<(), CliError> {
    if inv.force {
        return Ok(());
    }
    let report = run_condition_checks(&inv.config)?;
    if !report.pass {
        let failures: Vec<String> = report
            .conditions
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        return Err(CliError::config(format!(
            "condition checks failed (rerun with --force to override): {}",
            failures.join("; ")
        )));
    }
    Ok(())
}

/// SolverReport copy without the volatile wall clock, for hashed artifacts.
#[derive(Debug, Serialize)]
struct StableReport<'a> {
    residual_sup: f64,
    iterations: usize,
    dt: f64,
    bounds: &'a pide_core::solver::PerronBounds,
    violations: usize,
}

impl<'a> StableReport<'a> {
    fn of(report: &'a SolverReport) -> StableReport<'a> {
        StableReport {
            residual_sup: report.residual_sup,
            iterations: report.iterations,
            dt: report.dt,
            bounds: &report.bounds,
            violations: report.violations,
        }
    }
}

fn field_csv(field: &GridField) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    field
        .write_csv(&mut out)
        .map_err(|e| CliError::numeric(format!("csv: {e}")))?;
    Ok(out)
}

pub fn solve_stationary_cmd(inv: &Invocation, out_dir: &Path) -> Result<u8, CliError> {
    precheck(inv)?;
    let spec = inv.config.build_problem()?;
    let solver_cfg = SolverConfig {
        tol: inv.config.solver.tol,
        max_iter: inv.config.solver.max_iter,
    };
    let (field, report) = solve_stationary(&spec, &solver_cfg).map_err(CliError::from_core)?;
    let mut run = RunDir::create(out_dir, "solve-stationary", &inv.config, inv.seed, inv.threads)?;
    run.write("u.csv", &field_csv(&field)?)?;
    run.write_json("report_stable.json", &StableReport::of(&report))?;
    run.write_json_volatile("report.json", &report)?;
    run.finish()?;
    println!(
        "converged in {} iterations, residual {:.3e}, bounds [{}, {}]",
        report.iterations, report.residual_sup, report.bounds.lower, report.bounds.upper
    );
    Ok(0)
}

pub fn solve_evolution_cmd(inv: &Invocation, out_dir: &Path) -> Result<u8, CliError> {
    precheck(inv)?;
    let spec = inv.config.build_problem()?;
    let evolution = inv
        .config
        .evolution
        .as_ref()
        .ok_or_else(|| CliError::config("an [evolution] block is required"))?;
    let (trajectory, report) =
        solve_evolution(&spec, &evolution.checkpoints, None).map_err(CliError::from_core)?;
    let mut run = RunDir::create(out_dir, "solve-evolution", &inv.config, inv.seed, inv.threads)?;
    for (t, field) in trajectory.times.iter().zip(&trajectory.fields) {
        let name = format!("u_t{t:.6}.csv");
        run.write(&name, &field_csv(field)?)?;
    }
    run.write("u_final.csv", &field_csv(trajectory.final_field())?)?;
    run.write_json("report_stable.json", &StableReport::of(&report))?;
    run.write_json_volatile("report.json", &report)?;
    run.finish()?;
    println!(
        "marched {} steps to T = {}, {} checkpoints",
        report.iterations,
        spec.horizon.unwrap_or_default(),
        trajectory.times.len()
    );
    Ok(0)
}

#[derive(Debug, Serialize)]
struct ComparisonPair {
    name: String,
    pass: bool,
    max_violation: f64,
    witness: Option<[f64; 2]>,
}

#[derive(Debug, Serialize)]
struct ComparisonOutput {
    all_pass: bool,
    pairs: Vec<ComparisonPair>,
}

pub fn verify_comparison_cmd(inv: &Invocation, out_dir: &Path, swap: bool) -> Result<u8, CliError> {
    precheck(inv)?;
    let spec = inv.config.build_problem()?;
    let tol = 10.0 * inv.config.solver.tol;
    let bounds = perron_bounds(&spec).map_err(CliError::from_core)?;
    let constant = |value: f64| -> Result<GridField, CliError> {
        let mut f = spec.zero_field().map_err(CliError::from_core)?;
        for v in f.values_mut() {
            *v = value;
        }
        Ok(f)
    };
    let lower = constant(bounds.lower)?;
    let upper = constant(bounds.upper)?;

    if swap {
        // deliberately reversed roles: the hypothesis check must reject
        let err = comparison_check(&spec, &upper, &lower, tol)
            .err()
            .ok_or_else(|| CliError::numeric("swapped pair unexpectedly accepted"))?;
        return Err(CliError::from_core(err));
    }

    let solver_cfg = SolverConfig {
        tol: inv.config.solver.tol,
        max_iter: inv.config.solver.max_iter,
    };
    let (solution, _) = solve_stationary(&spec, &solver_cfg).map_err(CliError::from_core)?;

    let mut pairs = Vec::new();
    for (name, u, v) in [
        ("lower-vs-upper", &lower, &upper),
        ("lower-vs-solution", &lower, &solution),
        ("solution-vs-upper", &solution, &upper),
    ] {
        let report = comparison_check(&spec, u, v, tol).map_err(CliError::from_core)?;
        pairs.push(ComparisonPair {
            name: name.into(),
            pass: report.pass,
            max_violation: report.max_violation,
            witness: report.witness,
        });
    }
    let classification = classify(&spec, &solution, tol, 0.0).map_err(CliError::from_core)?;
    if classification.verdict != Verdict::Solution {
        return Err(CliError::numeric(format!(
            "solver output classified as {:?}",
            classification.verdict
        )));
    }
    let output = ComparisonOutput {
        all_pass: pairs.iter().all(|p| p.pass),
        pairs,
    };
    let mut run = RunDir::create(out_dir, "verify-comparison", &inv.config, inv.seed, inv.threads)?;
    run.write_json("comparison.json", &output)?;
    run.write_json("classification.json", &classification)?;
    run.finish()?;
    println!(
        "comparison pairs: {}",
        if output.all_pass { "all pass" } else { "violations found" }
    );
    Ok(if output.all_pass { 0 } else { 3 })
}

pub fn study_equivalence_cmd(inv: &Invocation, out_dir: &Path) -> Result<u8, CliError> {
    precheck(inv)?;
    let spec = inv.config.build_problem()?;
    if spec.terms.len() != 1 {
        return Err(CliError::config(
            "the equivalence study runs on single-term instances",
        ));
    }
    let study: StudyConfig = inv.config.study.clone().unwrap_or_default();
    let term = &spec.terms[0];
    let dim = spec.domain.dim_n();

    let z_max = term.quad.z_max;
    let growth = inv.config.term_configs()?[0]
        .measure
        .growth_ratio
        .unwrap_or(2.0);
    let base_quad =
        pide_core::measure::build_quadrature(&term.measure, study.eps_min, z_max, 8, growth)
            .map_err(CliError::from_core)?;
    if base_quad.shell_count() < study.eps_levels + 1 {
        return Err(CliError::config(
            "eps_min / eps_levels leave no room in the base quadrature",
        ));
    }
    let eps_grid: Vec<f64> = (1..=study.eps_levels)
        .map(|k| base_quad.shells[k].0)
        .collect();

    let mut cases = Vec::new();
    for (k, point) in study.points.iter().enumerate() {
        let x = crate::config::to_vecn(point, "study.points", dim)?;
        cases.push(gaussian_case(dim, [0.0, 0.0], &format!("gauss{k}"), x));
    }
    let rows = definition_equivalence_study(
        &cases,
        &spec.local,
        &term.scalar_map,
        &term.kernel,
        &term.measure,
        &base_quad,
        &eps_grid,
        &study.deltas,
    )
    .map_err(CliError::from_core)?;

    let mut csv = String::from("case,eps,delta,residual_A,residual_C,gap\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            row.case, row.eps, row.delta, row.residual_a, row.residual_c, row.gap
        ));
    }
    let mut run = RunDir::create(out_dir, "study-equivalence", &inv.config, inv.seed, inv.threads)?;
    run.write("equivalence.csv", csv.as_bytes())?;
    run.finish()?;
    println!("{} study rows written", rows.len());
    Ok(0)
}

#[derive(Debug, Serialize)]
struct McProbeOutput {
    x: [f64; 2],
    mean: f64,
    std_error: f64,
    n_paths: usize,
    capped_fraction: f64,
    bias_bound: f64,
    pde_value: f64,
    band: f64,
    agree: bool,
}

#[derive(Debug, Serialize)]
struct McOutput {
    all_agree: bool,
    probes: Vec<McProbeOutput>,
}

pub fn mc_validate_cmd(inv: &Invocation, out_dir: &Path) -> Result<u8, CliError> {
    precheck(inv)?;
    let spec = inv.config.build_problem()?;
    let mc_cfg = inv.config.mc.clone().unwrap_or_default();
    let dim = spec.domain.dim_n();
    let probes: Vec<VecN> = mc_cfg
        .probes
        .iter()
        .map(|p| crate::config::to_vecn(p, "mc.probes", dim))
        .collect::<Result<_, _>>()?;

    let solver_cfg = SolverConfig {
        tol: inv.config.solver.tol,
        max_iter: inv.config.solver.max_iter,
    };
    let (field, _) = solve_stationary(&spec, &solver_cfg).map_err(CliError::from_core)?;

    let path_cfg = mc::PathConfig {
        eps_cut: mc_cfg.eps_cut,
        dt_drift: mc_cfg.dt_drift,
        n_paths: mc_cfg.n_paths,
        seed: inv.seed,
        t_max: mc_cfg.t_max,
        probes,
    };
    let estimates = mc::simulate_value(&spec, &path_cfg).map_err(CliError::from_core)?;

    let h = field.h_min();
    let mut out_probes = Vec::new();
    for est in &estimates {
        let pde_value = field
            .sample_extended(&[est.x[0], est.x[1]])
            .map_err(CliError::from_core)?;
        let band = 3.0 * est.std_error + 2.0 * h;
        out_probes.push(McProbeOutput {
            x: est.x,
            mean: est.mean,
            std_error: est.std_error,
            n_paths: est.n_paths,
            capped_fraction: est.capped_fraction,
            bias_bound: est.bias_bound,
            pde_value,
            band,
            agree: (est.mean - pde_value).abs() <= band,
        });
    }
    let output = McOutput {
        all_agree: out_probes.iter().all(|p| p.agree),
        probes: out_probes,
    };
    let mut run = RunDir::create(out_dir, "mc-validate", &inv.config, inv.seed, inv.threads)?;
    run.write_json("mc.json", &output)?;
    run.finish()?;
    for p in &output.probes {
        println!(
            "x = {:?}: mc {:.6} vs pde {:.6} (band {:.2e}) {}",
            &p.x[..dim],
            p.mean,
            p.pde_value,
            p.band,
            if p.agree { "agree" } else { "DISAGREE" }
        );
    }
    Ok(if output.all_agree { 0 } else { 3 })
}

pub fn operator_table_cmd(inv: &Invocation, out_dir: &Path) -> Result<u8, CliError> {
    precheck(inv)?;
    let spec = inv.config.build_problem()?;
    if spec.terms.len() != 1 {
        return Err(CliError::config(
            "the operator table runs on single-term instances",
        ));
    }
    let table_cfg = inv
        .config
        .operator_table
        .as_ref()
        .ok_or_else(|| CliError::config("an [operator_table] block is required"))?;
    let dim = spec.domain.dim_n();
    let expr = Expr::parse(&table_cfg.u).map_err(|e| CliError::config(format!("u: {e}")))?;
    let expr_for_fn = expr.clone();
    let u = SmoothFn::new(
        dim,
        std::sync::Arc::new(move |x: &VecN| {
            expr_for_fn.eval(x, dim).unwrap_or(f64::NAN)
        }),
    );
    let term = &spec.terms[0];

    let header = if dim == 1 {
        "x0,value,near,far,tail_bound,l1\n"
    } else {
        "x0,x1,value,near,far,tail_bound,l1\n"
    };
    let mut csv = String::from(header);
    for point in &table_cfg.points {
        let x = crate::config::to_vecn(point, "operator_table.points", dim)?;
        let value = levy_smooth(&u, &x, None, &term.kernel, &term.measure, &term.quad)
            .map_err(CliError::from_core)?;
        if dim == 1 {
            csv.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                x[0], value.value, value.near_field, value.far_field,
                value.tail_remainder_bound, value.l1_estimate
            ));
        } else {
            csv.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                x[0], x[1], value.value, value.near_field, value.far_field,
                value.tail_remainder_bound, value.l1_estimate
            ));
        }
    }

    let mut run = RunDir::create(out_dir, "operator-table", &inv.config, inv.seed, inv.threads)?;
    run.write("table.csv", csv.as_bytes())?;

    if table_cfg.eps_levels > 0 {
        if term.quad.shell_count() < table_cfg.eps_levels {
            return Err(CliError::config(
                "eps_levels exceeds the quadrature's shell count",
            ));
        }
        let eps_grid: Vec<f64> = (0..table_cfg.eps_levels)
            .map(|k| term.quad.shells[k].0)
            .collect();
        let x = crate::config::to_vecn(&table_cfg.points[0], "operator_table.points", dim)?;
        let rows = epsilon_refinement_study(
            &RefinementTarget::Smooth { u: &u, x },
            &term.kernel,
            &term.measure,
            &term.quad,
            &eps_grid,
        )
        .map_err(CliError::from_core)?;
        let mut csv = String::from("epsilon,value,near,far,delta_prev\n");
        for row in &rows {
            csv.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                row.epsilon,
                row.value,
                row.near,
                row.far,
                row.delta_prev
                    .map(|d| format!("{d:.16e}"))
                    .unwrap_or_default()
            ));
        }
        run.write("refinement.csv", csv.as_bytes())?;
    }
    run.finish()?;
    println!("operator table written for {} points", table_cfg.points.len());
    Ok(0)
}

pub fn map_core_exit(err: &CoreError) -> u8 {
    match err {
        CoreError::HypothesisNotMet(_) => 4,
        _ => 3,
    }
}
