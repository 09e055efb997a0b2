//! Monotone explicit solvers for the stationary Dirichlet problem, the
//! evolutionary problem, and the finite sup-of-operators variant, with
//! Perron-style a-priori bounds.
//!
//! The stationary problem is marched in pseudo-time: the explicit update
//! under the CFL step is order-preserving, so iterates stay inside the
//! constant sub/supersolution sandwich [m, M] and contract at rate γ dt.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::exprlang::Expr;
use crate::grid::{Differentials, Domain, GridField};
use crate::kernel::JumpKernel;
use crate::local_op::{LocalForm, LocalOperator, NonlocalScalarMap};
use crate::measure::{AnnularQuadrature, LevyMeasure};
use crate::nonlocal::{split_far_field, split_near_field, TruncationParams, TruncationSign};
use crate::{dot, VecN};

/// One nonlocal term `G(-I[u])` of the equation.
#[derive(Debug, Clone)]
pub struct TermSpec {
    pub scalar_map: NonlocalScalarMap,
    pub kernel: JumpKernel,
    pub measure: LevyMeasure,
    pub quad: AnnularQuadrature,
}

/// A full problem instance: domain, local operator, nonlocal terms (a
/// singleton for the plain problem, a finite list for the sup-of-operators
/// variant), and the evolutionary data when present.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub domain: Arc<Domain>,
    pub n_cells: [usize; 2],
    pub local: LocalOperator,
    pub terms: Vec<TermSpec>,
    pub u0: Option<Expr>,
    pub horizon: Option<f64>,
}

impl ProblemSpec {
    /// Validates dimensional consistency, the growth condition of every
    /// kernel, and the grid margin.
    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(CoreError::InvalidParameter(
                "at least one nonlocal term is required".into(),
            ));
        }
        let dim = self.domain.dim_n();
        if self.local.dim_n() != dim {
            return Err(CoreError::DimensionMismatch(format!(
                "local operator dimension {} vs domain {}",
                self.local.dim_n(),
                dim
            )));
        }
        for (k, term) in self.terms.iter().enumerate() {
            if term.kernel.dim_n() != dim {
                return Err(CoreError::DimensionMismatch(format!(
                    "term {k}: kernel N = {} vs domain {}",
                    term.kernel.dim_n(),
                    dim
                )));
            }
            if term.kernel.dim_m() != term.measure.dim_m()
                || term.quad.dim_m != term.measure.dim_m()
            {
                return Err(CoreError::DimensionMismatch(format!(
                    "term {k}: inconsistent jump-parameter dimensions"
                )));
            }
            let growth = term.kernel.verify_growth(2000);
            if !growth.pass {
                return Err(CoreError::InvalidParameter(format!(
                    "term {k}: kernel fails its growth condition (worst ratio {:.3})",
                    growth.worst_ratio
                )));
            }
        }
        if self.horizon.is_some() && self.u0.is_none() {
            return Err(CoreError::InvalidParameter(
                "evolutionary problems need initial data".into(),
            ));
        }
        if let Some(t) = self.horizon {
            if !(t > 0.0) {
                return Err(CoreError::InvalidParameter(format!(
                    "horizon must be positive, got {t}"
                )));
            }
        }
        let template = GridField::new(self.domain.clone(), self.n_cells)?;
        if self.domain.margin() < template.h_min() {
            return Err(CoreError::InvalidParameter(
                "omega needs at least one grid layer of margin inside the box".into(),
            ));
        }
        Ok(())
    }

    pub fn zero_field(&self) -> Result<GridField> {
        GridField::new(self.domain.clone(), self.n_cells)
    }
}

/// Constant sub/supersolution bounds bracketing every solution.
/// Serialized as `{"m": lower, "M": upper}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerronBounds {
    #[serde(rename = "m")]
    pub lower: f64,
    #[serde(rename = "M")]
    pub upper: f64,
}

/// Iteration report of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub residual_sup: f64,
    pub iterations: usize,
    pub dt: f64,
    pub wall_ms: u128,
    pub bounds: PerronBounds,
    pub violations: usize,
}

/// Best-so-far state carried by a non-convergence error.
#[derive(Debug)]
pub struct BestSoFar {
    pub field: GridField,
    pub report: SolverReport,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iter: 200_000,
        }
    }
}

/// Smallest constants (up to a 1e-9 margin) with
/// `F(x, M, 0, O) + max_i G_i(0) >= 0`, `M >= sup g` (and `>= sup u0`), and
/// the mirror inequalities for `m`. Closed form for the linear-proper local
/// operator; bisection search otherwise.
pub fn perron_bounds(spec: &ProblemSpec) -> Result<PerronBounds> {
    let template = spec.zero_field()?;
    let dim = spec.domain.dim_n();
    let g_max0 = spec
        .terms
        .iter()
        .map(|t| t.scalar_map.g0())
        .fold(f64::NEG_INFINITY, f64::max);

    let mut sup_data = f64::NEG_INFINITY;
    let mut inf_data = f64::INFINITY;
    for idx in template.indices() {
        let x = template.node_point(idx);
        if !spec.domain.in_omega(&x) {
            let g = spec.domain.g_at(&x)?;
            sup_data = sup_data.max(g);
            inf_data = inf_data.min(g);
        } else if let Some(u0) = &spec.u0 {
            let v = u0.eval(&x, dim)?;
            sup_data = sup_data.max(v);
            inf_data = inf_data.min(v);
        }
    }

    match spec.local.form() {
        LocalForm::LinearProper { gamma, source, .. } => {
            let mut sup_f = f64::NEG_INFINITY;
            let mut inf_f = f64::INFINITY;
            for idx in template.indices() {
                let x = template.node_point(idx);
                if spec.domain.in_omega(&x) {
                    let f = source.eval(&x, dim)?;
                    sup_f = sup_f.max(f);
                    inf_f = inf_f.min(f);
                }
            }
            let upper = sup_data.max((sup_f - g_max0) / gamma);
            let lower = inf_data.min((inf_f - g_max0) / gamma);
            Ok(PerronBounds { lower, upper })
        }
        LocalForm::Custom { .. } => {
            let condition_upper = |m: f64| -> Result<bool> {
                for idx in template.indices() {
                    let x = template.node_point(idx);
                    if spec.domain.in_omega(&x) {
                        let f = spec.local.eval_local(
                            &x,
                            m,
                            &crate::zero_vec(),
                            &crate::zero_mat(),
                        )?;
                        if f + g_max0 < 0.0 {
                            return Ok(false);
                        }
                    }
                }
                Ok(true)
            };
            let condition_lower = |m: f64| -> Result<bool> {
                for idx in template.indices() {
                    let x = template.node_point(idx);
                    if spec.domain.in_omega(&x) {
                        let f = spec.local.eval_local(
                            &x,
                            m,
                            &crate::zero_vec(),
                            &crate::zero_mat(),
                        )?;
                        if f + g_max0 > 0.0 {
                            return Ok(false);
                        }
                    }
                }
                Ok(true)
            };
            let upper = bound_search(sup_data, condition_upper, 1.0)?;
            let lower = -bound_search(-inf_data, |m| condition_lower(-m), 1.0)?;
            Ok(PerronBounds { lower, upper })
        }
    }
}

/// Coarse multiplicative scan upward from `start`, then bisection to the
/// smallest admissible value with a 1e-9 margin.
fn bound_search<F: FnMut(f64) -> Result<bool>>(start: f64, mut ok: F, scale: f64) -> Result<f64> {
    const CAP: f64 = 1e12;
    let mut hi = start.max(0.0) + scale;
    let mut lo = start;
    while !ok(hi)? {
        lo = hi;
        hi = 2.0 * hi + scale;
        if hi > CAP {
            return Err(CoreError::UnboundedSearch { cap: CAP });
        }
    }
    if ok(lo)? {
        return Ok(lo.max(start) + 1e-9);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * (1.0 + hi.abs()) {
            break;
        }
    }
    Ok(hi.max(start) + 1e-9)
}

/// Precomputed residual assembly. For gradient-independent instances every
/// nonlocal term is an affine functional of the nodal values; the rows are
/// built once per solve and reused each sweep.
pub(crate) struct Assembler {
    template: GridField,
    interior: Vec<[usize; 2]>,
    interior_flat: Vec<usize>,
    f_values: Option<Vec<f64>>,
    /// Per term: per interior node, aggregated (flat index, coefficient)
    /// entries plus the constant carrying exterior g contributions.
    term_rows: Option<Vec<Vec<NodeRow>>>,
    /// Per term, per interior node: the δ-slack (inner2/M)·tr(AᵀA).
    q_slack: Vec<Vec<f64>>,
}

pub(crate) struct NodeRow {
    entries: Vec<(u32, f64)>,
    g_const: f64,
}

const MAX_ROW_ENTRIES: usize = 25_000_000;

impl Assembler {
    pub fn build(spec: &ProblemSpec) -> Result<Assembler> {
        let template = spec.zero_field()?;
        let interior: Vec<[usize; 2]> = template
            .indices()
            .filter(|&idx| template.node_in_omega(idx))
            .collect();
        let interior_flat: Vec<usize> = interior.iter().map(|&i| template.flat_index(i)).collect();

        let f_values = match spec.local.form() {
            LocalForm::LinearProper { source, .. } => {
                let dim = spec.domain.dim_n();
                let mut vals = Vec::with_capacity(interior.len());
                for &idx in &interior {
                    vals.push(source.eval(&template.node_point(idx), dim)?);
                }
                Some(vals)
            }
            LocalForm::Custom { .. } => None,
        };

        let gradient_free = spec.terms.iter().all(|t| t.kernel.gradient_independent());

        let mut q_slack = Vec::with_capacity(spec.terms.len());
        for term in &spec.terms {
            let mut per_node = Vec::with_capacity(interior.len());
            let p0 = crate::zero_vec();
            for &idx in &interior {
                let x = template.node_point(idx);
                // For gradient kernels the slack uses a unit reference
                // direction; tr(AᵀA) <= 1 there anyway since |β| <= |z|.
                let cols = term.kernel.linear_map_at(&x, &p0);
                let mut tr = 0.0;
                for col in cols.iter().take(term.kernel.dim_m()) {
                    tr += dot(col, col, crate::MAX_DIM);
                }
                per_node
                    .push(term.quad.exact_second_moment_inner / term.kernel.dim_m() as f64 * tr);
            }
            q_slack.push(per_node);
        }

        let mut assembler = Assembler {
            template,
            interior,
            interior_flat,
            f_values,
            term_rows: None,
            q_slack,
        };
        if gradient_free {
            assembler.try_build_rows(spec)?;
        }
        Ok(assembler)
    }

    fn try_build_rows(&mut self, spec: &ProblemSpec) -> Result<()> {
        // estimated entry count gate
        let nodes_per_term: usize = spec
            .terms
            .iter()
            .map(|t| t.quad.nodes.len() + 2 * t.kernel.dim_m())
            .sum();
        let est = nodes_per_term
            .saturating_mul(self.interior.len())
            .saturating_mul(1 << self.template.dim_n());
        if est > MAX_ROW_ENTRIES {
            return Ok(());
        }

        let template = &self.template;
        let p0 = crate::zero_vec();
        let h_probe = template.h_min();
        let mut term_rows = Vec::with_capacity(spec.terms.len());
        for term in &spec.terms {
            let rows: Result<Vec<NodeRow>> = self
                .interior
                .par_iter()
                .map(|&idx| {
                    let x = template.node_point(idx);
                    let center_flat = template.flat_index(idx) as u32;
                    let mut entries: Vec<(u32, f64)> = Vec::with_capacity(256);
                    let mut g_const = 0.0;

                    let add_point = |entries: &mut Vec<(u32, f64)>,
                                     g_const: &mut f64,
                                     y: &VecN,
                                     w: f64|
                     -> Result<()> {
                        if let Some((corners, count)) = template.interp_entries(y) {
                            for &(flat, cw) in corners.iter().take(count) {
                                entries.push((flat as u32, w * cw));
                            }
                        } else {
                            *g_const += w * spec.domain.g_at(y)?;
                        }
                        Ok(())
                    };

                    // far field: u(x + beta) with weight w, center with -w
                    let mut far_mass = 0.0;
                    let mut comp_vec = crate::zero_vec();
                    for node in &term.quad.nodes {
                        let beta = term.kernel.evaluate(&x, &p0, &node.z);
                        let mut landing = x;
                        for k in 0..term.kernel.dim_n() {
                            landing[k] += beta[k];
                        }
                        add_point(&mut entries, &mut g_const, &landing, node.weight)?;
                        far_mass += node.weight;
                        if node.radius <= 1.0 {
                            for k in 0..term.kernel.dim_n() {
                                comp_vec[k] += node.weight * beta[k];
                            }
                        }
                    }
                    entries.push((center_flat, -far_mass));

                    // compensator ⟨c, p⟩ with central-difference p
                    for k in 0..template.dim_n() {
                        if comp_vec[k] != 0.0 {
                            let coeff = comp_vec[k] / (2.0 * template.spacing()[k]);
                            let mut up = idx;
                            up[k] += 1;
                            let mut dn = idx;
                            dn[k] -= 1;
                            entries.push((template.flat_index(up) as u32, -coeff));
                            entries.push((template.flat_index(dn) as u32, coeff));
                        }
                    }

                    // near field: directional second differences scaled by the
                    // exact inner second moment
                    let cols = term.kernel.linear_map_at(&x, &p0);
                    let scale = 0.5 * term.quad.exact_second_moment_inner
                        / term.kernel.dim_m() as f64
                        / (h_probe * h_probe);
                    for col in cols.iter().take(term.kernel.dim_m()) {
                        let mut up = x;
                        let mut dn = x;
                        for k in 0..crate::MAX_DIM {
                            up[k] += h_probe * col[k];
                            dn[k] -= h_probe * col[k];
                        }
                        add_point(&mut entries, &mut g_const, &up, scale)?;
                        add_point(&mut entries, &mut g_const, &dn, scale)?;
                        entries.push((center_flat, -2.0 * scale));
                    }

                    entries.sort_unstable_by_key(|e| e.0);
                    let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
                    for (flat, w) in entries {
                        match merged.last_mut() {
                            Some(last) if last.0 == flat => last.1 += w,
                            _ => merged.push((flat, w)),
                        }
                    }
                    Ok(NodeRow {
                        entries: merged,
                        g_const,
                    })
                })
                .collect();
            term_rows.push(rows?);
        }
        self.term_rows = Some(term_rows);
        Ok(())
    }

    /// Evaluates the nonlocal value I_t[u] at interior position `pos` via the
    /// precomputed row.
    fn row_value(&self, rows: &[NodeRow], pos: usize, values: &[f64]) -> f64 {
        let row = &rows[pos];
        let mut acc = row.g_const;
        for &(flat, w) in &row.entries {
            acc += w * values[flat as usize];
        }
        acc
    }

    /// Residual field R_i = F(x_i, u_i, p_i, X_i) + max_t G_t(-I_t ∓ δ q_t)
    /// on Ω nodes; zero on Ω^c by convention. Returned flat over the grid.
    pub fn residual_values(
        &self,
        spec: &ProblemSpec,
        field: &GridField,
        delta: f64,
        sign: TruncationSign,
    ) -> Result<Vec<f64>> {
        let values = field.values();
        let mut out = vec![0.0; field.node_count_total()];
        let results: Result<Vec<f64>> = (0..self.interior.len())
            .into_par_iter()
            .map(|pos| self.residual_at(spec, field, values, pos, delta, sign))
            .collect();
        let results = results?;
        for (pos, &flat) in self.interior_flat.iter().enumerate() {
            out[flat] = results[pos];
        }
        Ok(out)
    }

    fn residual_at(
        &self,
        spec: &ProblemSpec,
        field: &GridField,
        values: &[f64],
        pos: usize,
        delta: f64,
        sign: TruncationSign,
    ) -> Result<f64> {
        let idx = self.interior[pos];
        let x = field.node_point(idx);
        let u_x = values[field.flat_index(idx)];
        let diffs = field.gradient_hessian(idx)?;

        let local = match (spec.local.form(), &self.f_values) {
            (LocalForm::LinearProper { gamma, diffusion, .. }, Some(fv)) => {
                let mut trace = 0.0;
                for k in 0..field.dim_n() {
                    trace += diffs.x_mat[k][k];
                }
                gamma * u_x - fv[pos] - diffusion * trace
            }
            _ => spec.local.eval_local(&x, u_x, &diffs.p, &diffs.x_mat)?,
        };

        let mut nonlocal_sup = f64::NEG_INFINITY;
        for (t, term) in spec.terms.iter().enumerate() {
            let base = if let Some(rows) = &self.term_rows {
                self.row_value(&rows[t], pos, values)
            } else {
                self.generic_term_value(field, term, idx, &x, u_x, &diffs)?
            };
            let slack = delta * self.q_slack[t][pos];
            let i_val = match sign {
                TruncationSign::Sub => base + slack,
                TruncationSign::Super => base - slack,
                TruncationSign::Neutral => base,
            };
            nonlocal_sup = nonlocal_sup.max(term.scalar_map.apply(-i_val));
        }
        Ok(local + nonlocal_sup)
    }

    fn generic_term_value(
        &self,
        field: &GridField,
        term: &TermSpec,
        _idx: [usize; 2],
        x: &VecN,
        u_x: f64,
        diffs: &Differentials,
    ) -> Result<f64> {
        let sample = |y: &VecN| field.sample_extended(y);
        let cols = term.kernel.linear_map_at(x, &diffs.p);
        let trunc = TruncationParams::neutral(term.quad.epsilon);
        let (near, _) = split_near_field(
            &sample,
            x,
            u_x,
            &cols,
            term.kernel.dim_m(),
            term.quad.exact_second_moment_inner,
            field.h_min(),
            &trunc,
        )?;
        let (far, _) = split_far_field(&sample, x, u_x, &diffs.p, &term.kernel, &term.quad)?;
        Ok(near + far)
    }
}

/// The residual field of a candidate: zero on Ω^c, the discrete equation
/// residual on Ω.
pub fn residual(spec: &ProblemSpec, field: &GridField) -> Result<GridField> {
    let assembler = Assembler::build(spec)?;
    residual_with(&assembler, spec, field, 0.0, TruncationSign::Neutral)
}

pub(crate) fn residual_with(
    assembler: &Assembler,
    spec: &ProblemSpec,
    field: &GridField,
    delta: f64,
    sign: TruncationSign,
) -> Result<GridField> {
    let values = assembler.residual_values(spec, field, delta, sign)?;
    let mut out = GridField::new(spec.domain.clone(), spec.n_cells)?;
    out.values_mut().copy_from_slice(&values);
    Ok(out)
}

/// The explicit step bound: dt = 0.9 / (γ + Σ_k 2c/h_k² + max_t Ĝ'_t λ_t)
/// where λ_t bounds the center coefficient of term t (far mass plus the
/// inner-moment second-difference weight).
pub fn cfl_bound(spec: &ProblemSpec, field_range: (f64, f64)) -> Result<f64> {
    let template = spec.zero_field()?;
    let h = template.h_min();
    let gamma = spec.local.gamma();
    let c = spec.local.diffusion();
    let mut local_part = gamma;
    for k in 0..spec.domain.dim_n() {
        local_part += 2.0 * c / (template.spacing()[k] * template.spacing()[k]);
    }
    let sup_u = field_range.0.abs().max(field_range.1.abs());
    let mut nonlocal_part = 0.0_f64;
    for term in &spec.terms {
        let lambda = term.quad.total_weight() + term.quad.exact_second_moment_inner / (h * h);
        let arg_bound = 2.2 * sup_u * lambda + 1e-12;
        let g_lip = term
            .scalar_map
            .lipschitz_exact_or_estimate((-arg_bound, arg_bound));
        nonlocal_part = nonlocal_part.max(g_lip * lambda);
    }
    Ok(0.9 / (local_part + nonlocal_part))
}

/// One explicit Euler step in pseudo-time: u ← u - dt R(u) on Ω, Dirichlet
/// refresh on Ω^c. Fails when dt exceeds the CFL bound for the field's own
/// range.
pub fn step_explicit(spec: &ProblemSpec, field: &GridField, dt: f64) -> Result<GridField> {
    let (lo, hi) = field.min_max();
    let bound = cfl_bound(spec, (lo, hi))?;
    if dt > bound * (1.0 + 1e-9) {
        return Err(CoreError::CflViolation { dt, bound });
    }
    let assembler = Assembler::build(spec)?;
    step_with(&assembler, spec, field, dt)
}

pub(crate) fn step_with(
    assembler: &Assembler,
    spec: &ProblemSpec,
    field: &GridField,
    dt: f64,
) -> Result<GridField> {
    let residuals = assembler.residual_values(spec, field, 0.0, TruncationSign::Neutral)?;
    let mut next = field.clone();
    let interior_flat = &assembler.interior_flat;
    let vals = next.values_mut();
    for (pos, &flat) in interior_flat.iter().enumerate() {
        let _ = pos;
        vals[flat] -= dt * residuals[flat];
    }
    next.refresh_exterior()?;
    Ok(next)
}

/// Pseudo-time marching of the stationary problem to the discrete fixed
/// point, with the Perron sandwich monitored along the way.
pub fn solve_stationary(
    spec: &ProblemSpec,
    config: &SolverConfig,
) -> Result<(GridField, SolverReport)> {
    spec.validate()?;
    let start = Instant::now();
    let bounds = perron_bounds(spec)?;
    let dt = cfl_bound(spec, (bounds.lower, bounds.upper))?;
    let assembler = Assembler::build(spec)?;

    // g-extension clamped into [m, M] on Ω, exact g on Ω^c
    let mut field = GridField::from_expr(spec.domain.clone(), spec.n_cells, spec.domain.g_expr())?;
    for idx in field.indices().collect::<Vec<_>>() {
        if field.node_in_omega(idx) {
            let v = field.value(idx).clamp(bounds.lower, bounds.upper);
            field.set_value(idx, v);
        }
    }

    let mut violations = 0usize;
    let mut residual_sup = f64::INFINITY;
    for iter in 0..=config.max_iter {
        let residuals = assembler.residual_values(spec, &field, 0.0, TruncationSign::Neutral)?;
        residual_sup = residuals.iter().fold(0.0_f64, |acc, r| acc.max(r.abs()));
        if residual_sup <= config.tol {
            let report = SolverReport {
                residual_sup,
                iterations: iter,
                dt,
                wall_ms: start.elapsed().as_millis(),
                bounds,
                violations,
            };
            return Ok((field, report));
        }
        if iter == config.max_iter {
            break;
        }
        let vals = field.values_mut();
        for &flat in &assembler.interior_flat {
            vals[flat] -= dt * residuals[flat];
        }
        for &flat in &assembler.interior_flat {
            let v = vals[flat];
            if v < bounds.lower - 1e-9 || v > bounds.upper + 1e-9 {
                violations += 1;
            }
        }
    }
    Err(CoreError::MaxIterExceeded(Box::new(BestSoFar {
        report: SolverReport {
            residual_sup,
            iterations: config.max_iter,
            dt,
            wall_ms: start.elapsed().as_millis(),
            bounds,
            violations,
        },
        field,
    })))
}

/// A time-stamped sequence of checkpointed fields.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<GridField>,
}

impl Trajectory {
    pub fn final_field(&self) -> &GridField {
        self.fields.last().expect("trajectories are never empty")
    }
}

/// Explicit marching of the evolutionary problem to the horizon, recording
/// the initial state, the requested checkpoint times (snapped to step
/// boundaries), every `record_stride`-th step if asked, and the final state.
pub fn solve_evolution(
    spec: &ProblemSpec,
    checkpoints: &[f64],
    record_stride: Option<usize>,
) -> Result<(Trajectory, SolverReport)> {
    spec.validate()?;
    let horizon = spec.horizon.ok_or_else(|| {
        CoreError::InvalidParameter("spec carries no horizon for an evolutionary solve".into())
    })?;
    let u0 = spec
        .u0
        .as_ref()
        .ok_or_else(|| CoreError::InvalidParameter("missing initial data".into()))?;
    let start = Instant::now();
    let bounds = perron_bounds(spec)?;
    let dt = cfl_bound(spec, (bounds.lower, bounds.upper))?;
    let assembler = Assembler::build(spec)?;

    let mut field = GridField::from_expr(spec.domain.clone(), spec.n_cells, u0)?;
    let mut wanted: Vec<f64> = checkpoints
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t < horizon)
        .collect();
    wanted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut trajectory = Trajectory {
        times: vec![0.0],
        fields: vec![field.clone()],
    };
    let mut t = 0.0;
    let mut step_count = 0usize;
    let mut next_wanted = 0usize;
    let mut residual_sup = 0.0_f64;
    while t < horizon - 1e-12 * horizon {
        let dt_step = dt.min(horizon - t);
        let residuals = assembler.residual_values(spec, &field, 0.0, TruncationSign::Neutral)?;
        residual_sup = residuals.iter().fold(0.0_f64, |acc, r| acc.max(r.abs()));
        let vals = field.values_mut();
        for &flat in &assembler.interior_flat {
            vals[flat] -= dt_step * residuals[flat];
        }
        t += dt_step;
        step_count += 1;

        let mut record = t >= horizon - 1e-12 * horizon;
        if let Some(stride) = record_stride {
            if stride > 0 && step_count % stride == 0 {
                record = true;
            }
        }
        while next_wanted < wanted.len() && t >= wanted[next_wanted] - 1e-12 {
            record = true;
            next_wanted += 1;
        }
        if record {
            trajectory.times.push(t);
            trajectory.fields.push(field.clone());
        }
    }
    let report = SolverReport {
        residual_sup,
        iterations: step_count,
        dt,
        wall_ms: start.elapsed().as_millis(),
        bounds,
        violations: 0,
    };
    Ok((trajectory, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::OmegaShape;
    use crate::measure::build_quadrature;

    /// The canonical 1-D instance: Ω = (-1,1), γ = 1, f ≡ 1, g ≡ 0,
    /// G = Identity, β = z, power law α₀.
    pub(crate) fn canonical_1d(n_cells: usize, alpha0: f64, z_max: f64) -> ProblemSpec {
        let domain = Arc::new(
            Domain::new(
                1,
                [-3.0, 0.0],
                [3.0, 0.0],
                OmegaShape::Box {
                    lo: [-1.0, 0.0],
                    hi: [1.0, 0.0],
                },
                Expr::parse("0").unwrap(),
                true,
            )
            .unwrap(),
        );
        let h = 6.0 / n_cells as f64;
        let measure = LevyMeasure::power_law(alpha0, 1).unwrap();
        let quad = build_quadrature(&measure, h, z_max, 8, 2.0).unwrap();
        ProblemSpec {
            domain,
            n_cells: [n_cells, 0],
            local: LocalOperator::linear_proper(1, 1.0, Expr::parse("1").unwrap(), 0.0).unwrap(),
            terms: vec![TermSpec {
                scalar_map: NonlocalScalarMap::IdentityMap,
                kernel: JumpKernel::identity(1).unwrap(),
                measure,
                quad,
            }],
            u0: None,
            horizon: None,
        }
    }

    #[test]
    fn perron_bounds_closed_forms() {
        // gamma = 1, f = 1, g = 0: M = 1, m = 0.
        let spec = canonical_1d(60, 1.0, 100.0);
        let b = perron_bounds(&spec).unwrap();
        assert!((b.upper - 1.0).abs() < 1e-12);
        assert!(b.lower.abs() < 1e-12);

        // f = 0, g = 0: M = m = 0.
        let mut zero = canonical_1d(60, 1.0, 100.0);
        zero.local = LocalOperator::linear_proper(1, 1.0, Expr::parse("0").unwrap(), 0.0).unwrap();
        let b = perron_bounds(&zero).unwrap();
        assert_eq!(b.upper, 0.0);
        assert_eq!(b.lower, 0.0);

        // gamma = 2, f = 1, sup g = 3: M = max(3, 1/2) = 3.
        let domain = Arc::new(
            Domain::new(
                1,
                [-3.0, 0.0],
                [3.0, 0.0],
                OmegaShape::Box {
                    lo: [-1.0, 0.0],
                    hi: [1.0, 0.0],
                },
                Expr::parse("3 * exp(-(x0^2))").unwrap(),
                true,
            )
            .unwrap(),
        );
        let measure = LevyMeasure::power_law(1.0, 1).unwrap();
        let quad = build_quadrature(&measure, 0.1, 100.0, 8, 2.0).unwrap();
        let spec = ProblemSpec {
            domain,
            n_cells: [60, 0],
            local: LocalOperator::linear_proper(1, 2.0, Expr::parse("1").unwrap(), 0.0).unwrap(),
            terms: vec![TermSpec {
                scalar_map: NonlocalScalarMap::IdentityMap,
                kernel: JumpKernel::identity(1).unwrap(),
                measure,
                quad,
            }],
            u0: None,
            horizon: None,
        };
        let b = perron_bounds(&spec).unwrap();
        // sup of g over the exterior grid nodes is 3 e^{-1} at |x| = 1,
        // which dominates sup f / gamma = 1/2
        assert!((b.upper - 3.0 * (-1.0_f64).exp()).abs() < 1e-9);
        assert!(b.upper >= 0.5);
    }

    #[test]
    fn perron_search_matches_closed_form() {
        // custom echo of the linear operator must find the same bounds
        let spec = canonical_1d(60, 1.0, 100.0);
        let mut custom = canonical_1d(60, 1.0, 100.0);
        custom.local = LocalOperator::custom(
            1,
            std::sync::Arc::new(|_x: &VecN, r: f64, _p: &VecN, _m| r - 1.0),
            1.0,
            std::sync::Arc::new(|s| s),
        );
        let a = perron_bounds(&spec).unwrap();
        let b = perron_bounds(&custom).unwrap();
        assert!((a.upper - b.upper).abs() < 1e-6);
        assert!((a.lower - b.lower).abs() < 1e-6);
    }

    #[test]
    fn constants_are_one_sided_residuals() {
        let spec = canonical_1d(100, 1.0, 1000.0);
        let bounds = perron_bounds(&spec).unwrap();
        let mut upper = spec.zero_field().unwrap();
        for v in upper.values_mut() {
            *v = bounds.upper;
        }
        let r = residual(&spec, &upper).unwrap();
        for idx in r.indices().collect::<Vec<_>>() {
            assert!(r.value(idx) >= -1e-9, "supersolution residual sign");
        }
        let mut lower = spec.zero_field().unwrap();
        for v in lower.values_mut() {
            *v = bounds.lower;
        }
        let r = residual(&spec, &lower).unwrap();
        for idx in r.indices().collect::<Vec<_>>() {
            assert!(r.value(idx) <= 1e-9, "subsolution residual sign");
        }
    }

    #[test]
    fn cfl_hand_value() {
        // gamma = 1, c = 0, G identity: dt = 0.9 / (1 + lambda) with the
        // instance's own lambda
        let spec = canonical_1d(100, 1.0, 100.0);
        let term = &spec.terms[0];
        let h = 6.0 / 100.0;
        let lambda = term.quad.total_weight() + term.quad.exact_second_moment_inner / (h * h);
        let dt = cfl_bound(&spec, (0.0, 1.0)).unwrap();
        assert!((dt - 0.9 / (1.0 + lambda)).abs() < 1e-12);
    }

    #[test]
    fn zero_problem_converges_immediately() {
        let mut spec = canonical_1d(60, 1.0, 100.0);
        spec.local = LocalOperator::linear_proper(1, 1.0, Expr::parse("0").unwrap(), 0.0).unwrap();
        let (field, report) = solve_stationary(&spec, &SolverConfig::default()).unwrap();
        assert!(report.iterations <= 2);
        for &v in field.values() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn canonical_solve_respects_sandwich_and_symmetry() {
        let spec = canonical_1d(120, 1.0, 1000.0);
        let config = SolverConfig {
            tol: 1e-6,
            max_iter: 200_000,
        };
        let (field, report) = solve_stationary(&spec, &config).unwrap();
        assert!(report.residual_sup <= 1e-6);
        assert_eq!(report.violations, 0);
        let n = spec.n_cells[0];
        for idx in field.indices().collect::<Vec<_>>() {
            let v = field.value(idx);
            assert!((-1e-9..=1.0 + 1e-9).contains(&v), "sandwich violated: {v}");
            let mirror = field.value([n - idx[0], 0]);
            assert!((v - mirror).abs() < 1e-6, "symmetry violated");
        }
        // interior values are strictly positive
        assert!(field.value([n / 2, 0]) > 0.1);
    }

    #[test]
    fn self_convergence_under_grid_refinement() {
        let coarse = canonical_1d(60, 1.0, 1000.0);
        let fine = canonical_1d(120, 1.0, 1000.0);
        let config = SolverConfig {
            tol: 1e-7,
            max_iter: 400_000,
        };
        let (uc, _) = solve_stationary(&coarse, &config).unwrap();
        let (uf, _) = solve_stationary(&fine, &config).unwrap();
        // compare on common nodes (every second fine node)
        let mut sup = 0.0_f64;
        for i in 0..=60usize {
            let a = uc.value([i, 0]);
            let b = uf.value([2 * i, 0]);
            sup = sup.max((a - b).abs());
        }
        assert!(sup < 0.05, "coarse-fine gap {sup}");
    }

    #[test]
    fn explicit_step_preserves_order() {
        let spec = canonical_1d(80, 1.2, 100.0);
        let bounds = perron_bounds(&spec).unwrap();
        let dt = cfl_bound(&spec, (bounds.lower, bounds.upper)).unwrap();
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut unit = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let mut u = spec.zero_field().unwrap();
            for v in u.values_mut() {
                *v = unit();
            }
            let mut v = u.clone();
            for val in v.values_mut() {
                *val += 0.5 * unit();
            }
            let su = step_explicit(&spec, &u, dt).unwrap();
            let sv = step_explicit(&spec, &v, dt).unwrap();
            for (a, b) in su.values().iter().zip(sv.values()) {
                assert!(a <= &(b + 1e-12), "order violated: {a} > {b}");
            }
        }
    }

    #[test]
    fn supersolution_start_is_nonincreasing() {
        let spec = canonical_1d(80, 1.0, 100.0);
        let bounds = perron_bounds(&spec).unwrap();
        let dt = cfl_bound(&spec, (bounds.lower, bounds.upper)).unwrap();
        let mut field = spec.zero_field().unwrap();
        for v in field.values_mut() {
            *v = bounds.upper;
        }
        field.refresh_exterior().unwrap();
        let mut prev = field;
        for _ in 0..25 {
            let next = step_explicit(&spec, &prev, dt).unwrap();
            for (idx, (a, b)) in next.values().iter().zip(prev.values()).enumerate() {
                let _ = idx;
                assert!(a <= &(b + 1e-12), "supersolution iterates must decrease");
            }
            prev = next;
        }
    }

    #[test]
    fn cfl_violation_rejected() {
        let spec = canonical_1d(60, 1.0, 100.0);
        let field = spec.zero_field().unwrap();
        let bound = cfl_bound(&spec, (0.0, 1.0)).unwrap();
        assert!(matches!(
            step_explicit(&spec, &field, 10.0 * bound),
            Err(CoreError::CflViolation { .. })
        ));
    }

    #[test]
    fn stationary_solution_is_fixed_point_of_step() {
        let spec = canonical_1d(80, 1.0, 100.0);
        let config = SolverConfig {
            tol: 1e-8,
            max_iter: 400_000,
        };
        let (u, report) = solve_stationary(&spec, &config).unwrap();
        let dt = report.dt;
        let mut current = u.clone();
        for _ in 0..50 {
            current = step_explicit(&spec, &current, dt).unwrap();
        }
        let mut drift = 0.0_f64;
        for (a, b) in current.values().iter().zip(u.values()) {
            drift = drift.max((a - b).abs());
        }
        assert!(drift <= 1e-8 * 50.0 * dt.max(1.0) + 1e-8, "drift {drift}");
    }

    #[test]
    fn evolution_reaches_stationary_state() {
        let mut spec = canonical_1d(60, 1.0, 1000.0);
        spec.u0 = Some(Expr::parse("0").unwrap());
        spec.horizon = Some(50.0);
        let (trajectory, report) = solve_evolution(&spec, &[10.0], None).unwrap();
        assert!(report.iterations > 0);
        assert_eq!(trajectory.times.len(), 3); // 0, 10, 50
        let stationary = solve_stationary(
            &canonical_1d(60, 1.0, 1000.0),
            &SolverConfig {
                tol: 1e-8,
                max_iter: 400_000,
            },
        )
        .unwrap()
        .0;
        let mut sup = 0.0_f64;
        for (a, b) in trajectory.final_field().values().iter().zip(stationary.values()) {
            sup = sup.max((a - b).abs());
        }
        assert!(sup < 1e-4, "evolution endpoint vs stationary: {sup}");
    }

    #[test]
    fn hjb_identical_terms_match_singleton_bitwise() {
        let single = canonical_1d(60, 1.0, 100.0);
        let mut multi = canonical_1d(60, 1.0, 100.0);
        let t = multi.terms[0].clone();
        multi.terms.push(t.clone());
        multi.terms.push(t);
        let config = SolverConfig::default();
        let (u1, r1) = solve_stationary(&single, &config).unwrap();
        let (u3, r3) = solve_stationary(&multi, &config).unwrap();
        assert_eq!(r1.iterations, r3.iterations);
        for (a, b) in u1.values().iter().zip(u3.values()) {
            assert_eq!(a, b, "identical-term sup must be bitwise identical");
        }
    }

    #[test]
    fn max_iter_carries_best_field() {
        let spec = canonical_1d(60, 1.0, 100.0);
        let err = solve_stationary(
            &spec,
            &SolverConfig {
                tol: 1e-14,
                max_iter: 5,
            },
        )
        .unwrap_err();
        match err {
            CoreError::MaxIterExceeded(best) => {
                assert_eq!(best.report.iterations, 5);
                assert!(best.field.sup_norm() > 0.0);
            }
            other => panic!("expected MaxIterExceeded, got {other:?}"),
        }
    }
}
