//! The config file schema and the assembly of a problem instance from it.
//!
//! Configs are TOML key trees; the manifest echoes the effective (parsed,
//! defaults applied) config as canonical JSON.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use pide_core::exprlang::Expr;
use pide_core::grid::{Domain, OmegaShape};
use pide_core::kernel::{JumpKernel, KernelConstants};
use pide_core::local_op::{LocalOperator, NonlocalScalarMap};
use pide_core::measure::{build_quadrature, AnnularQuadrature, LevyMeasure, MeasureFamily};
use pide_core::solver::{ProblemSpec, TermSpec};
use pide_core::{VecN, MAX_DIM};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub grid: GridConfig,
    #[serde(rename = "F")]
    pub f_op: FConfig,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g_map: Option<GMapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TermConfig>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution: Option<EvolutionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_table: Option<OperatorTableConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub dim: usize,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub omega: OmegaConfig,
    pub g: String,
    #[serde(default = "default_true")]
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "shape", rename_all = "snake_case")]
pub enum OmegaConfig {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FConfig {
    pub gamma: f64,
    #[serde(default)]
    pub c: f64,
    pub f: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GMapConfig {
    pub form: String,
    #[serde(default)]
    pub kappa: f64,
}

impl Default for GMapConfig {
    fn default() -> Self {
        GMapConfig {
            form: "identity".into(),
            kappa: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    pub dim_m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes_per_shell: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub variant: String,
    pub dim_n: usize,
    pub dim_m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(rename = "B0")]
    pub b0: f64,
    #[serde(rename = "B1")]
    pub b1: f64,
    #[serde(rename = "B2")]
    pub b2: f64,
    #[serde(rename = "B3", default, skip_serializing_if = "Option::is_none")]
    pub b3: Option<f64>,
    #[serde(rename = "R")]
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub measure: MeasureConfig,
    pub kernel: KernelConfig,
    #[serde(rename = "G", default)]
    pub g_map: GMapConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            tol: 1e-6,
            max_iter: 200_000,
            epsilon: None,
            z_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub u0: String,
    #[serde(default)]
    pub checkpoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub eps_cut: f64,
    pub dt_drift: f64,
    pub n_paths: usize,
    pub t_max: f64,
    pub probes: Vec<Vec<f64>>,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            eps_cut: 0.01,
            dt_drift: 0.01,
            n_paths: 100_000,
            t_max: 50.0,
            probes: vec![vec![0.0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorTableConfig {
    pub u: String,
    pub points: Vec<Vec<f64>>,
    /// When positive, also writes a refinement table with this many
    /// geometric ε levels at the first point.
    #[serde(default)]
    pub eps_levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Reference resolution: the base quadrature's ε. The study's ε grid is
    /// taken from the base quadrature's shell boundaries above it.
    pub eps_min: f64,
    pub eps_levels: usize,
    pub deltas: Vec<f64>,
    /// Probe points (one Gaussian case per point).
    pub points: Vec<Vec<f64>>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            eps_min: 2.0_f64.powi(-10),
            eps_levels: 5,
            deltas: vec![0.0, 0.1, 0.2],
            points: vec![vec![0.3]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

fn default_true() -> bool {
    true
}

pub fn to_vecn(v: &[f64], what: &str, dim: usize) -> Result<VecN, CliError> {
    if v.len() != dim {
        return Err(CliError::config(format!(
            "{what} must have {dim} coordinate(s), got {}",
            v.len()
        )));
    }
    let mut out = [0.0; MAX_DIM];
    out[..dim].copy_from_slice(v);
    Ok(out)
}

fn parse_expr(text: &str, what: &str) -> Result<Expr, CliError> {
    Expr::parse(text).map_err(|e| CliError::config(format!("{what}: {e}")))
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("config parse error: {e}")))
    }

    pub fn build_domain(&self) -> Result<Arc<Domain>, CliError> {
        let dim = self.domain.dim;
        let lo = to_vecn(&self.domain.box_lo, "domain.box_lo", dim)?;
        let hi = to_vecn(&self.domain.box_hi, "domain.box_hi", dim)?;
        let omega = match &self.domain.omega {
            OmegaConfig::Box { lo, hi } => OmegaShape::Box {
                lo: to_vecn(lo, "omega.lo", dim)?,
                hi: to_vecn(hi, "omega.hi", dim)?,
            },
            OmegaConfig::Ball { center, radius } => OmegaShape::Ball {
                center: to_vecn(center, "omega.center", dim)?,
                radius: *radius,
            },
        };
        let g = parse_expr(&self.domain.g, "domain.g")?;
        Domain::new(dim, lo, hi, omega, g, self.domain.bounded)
            .map(Arc::new)
            .map_err(|e| CliError::config(format!("domain: {e}")))
    }

    pub fn n_cells(&self) -> Result<[usize; 2], CliError> {
        let dim = self.domain.dim;
        if self.grid.n_cells.len() != dim {
            return Err(CliError::config(format!(
                "grid.n_cells must have {dim} entries"
            )));
        }
        let mut out = [0usize; 2];
        out[..dim].copy_from_slice(&self.grid.n_cells);
        Ok(out)
    }

    pub fn measure_family(mc: &MeasureConfig) -> Result<MeasureFamily, CliError> {
        match mc.family.as_str() {
            "power_law" => {
                let alpha0 = mc.alpha0.ok_or_else(|| {
                    CliError::config("measure.alpha0 is required for the power-law family")
                })?;
                Ok(MeasureFamily::PowerLaw { alpha0 })
            }
            other => Err(CliError::config(format!(
                "unknown measure family `{other}` (the config surface supports `power_law`)"
            ))),
        }
    }

    pub fn build_measure(mc: &MeasureConfig) -> Result<LevyMeasure, CliError> {
        let family = Self::measure_family(mc)?;
        LevyMeasure::new(family, mc.dim_m, mc.mu)
            .map_err(|e| CliError::config(format!("measure: {e}")))
    }

    pub fn build_kernel(kc: &KernelConfig) -> Result<JumpKernel, CliError> {
        let kernel = match kc.variant.as_str() {
            "identity" => JumpKernel::identity(kc.dim_n),
            "radial_scale" => JumpKernel::radial_scale(kc.dim_n),
            "rotational" => {
                if kc.dim_n != 2 || kc.dim_m != 1 {
                    return Err(CliError::config(
                        "the rotational kernel has N = 2, M = 1",
                    ));
                }
                Ok(JumpKernel::rotational())
            }
            "gradient_direction" => {
                let eps0 = kc.eps0.ok_or_else(|| {
                    CliError::config("kernel.eps0 is required for gradient_direction")
                })?;
                JumpKernel::gradient_direction(kc.dim_n, eps0)
            }
            "axis" => {
                let axis = kc
                    .axis
                    .ok_or_else(|| CliError::config("kernel.axis is required for axis kernels"))?;
                JumpKernel::axis(kc.dim_n, axis)
            }
            other => {
                return Err(CliError::config(format!(
                    "unknown kernel variant `{other}`"
                )))
            }
        }
        .map_err(|e| CliError::config(format!("kernel: {e}")))?;
        if kernel.dim_m() != kc.dim_m {
            return Err(CliError::config(format!(
                "kernel variant `{}` has M = {}, config says {}",
                kc.variant,
                kernel.dim_m(),
                kc.dim_m
            )));
        }
        Ok(match &kc.constants {
            Some(c) => kernel.with_constants(KernelConstants {
                b0: c.b0,
                b1: c.b1,
                b2: c.b2,
                b3: c.b3,
                r: c.r,
            }),
            None => kernel,
        })
    }

    pub fn build_g_map(gc: &GMapConfig) -> Result<NonlocalScalarMap, CliError> {
        match gc.form.as_str() {
            "identity" => Ok(NonlocalScalarMap::IdentityMap),
            "cubic_monotone" => NonlocalScalarMap::cubic(gc.kappa)
                .map_err(|e| CliError::config(format!("G: {e}"))),
            other => Err(CliError::config(format!("unknown G form `{other}`"))),
        }
    }

    /// The shared truncation for a term, with the precedence
    /// measure block > solver block > grid default (ε = h, z_max = 100).
    fn quad_params(&self, mc: &MeasureConfig, h: f64) -> (f64, f64, usize, f64) {
        let epsilon = mc
            .epsilon
            .or(self.solver.epsilon)
            .unwrap_or(h)
            .min(0.5)
            .max(1e-12);
        let z_max = mc.z_max.or(self.solver.z_max).unwrap_or(100.0);
        let nodes = mc.nodes_per_shell.unwrap_or(8);
        let growth = mc.growth_ratio.unwrap_or(2.0);
        (epsilon, z_max, nodes, growth)
    }

    pub fn build_quad(
        &self,
        mc: &MeasureConfig,
        measure: &LevyMeasure,
        h: f64,
    ) -> Result<AnnularQuadrature, CliError> {
        let (epsilon, z_max, nodes, growth) = self.quad_params(mc, h);
        build_quadrature(measure, epsilon, z_max, nodes, growth)
            .map_err(|e| CliError::config(format!("quadrature: {e}")))
    }

    pub fn term_configs(&self) -> Result<Vec<TermConfig>, CliError> {
        if !self.terms.is_empty() {
            if self.measure.is_some() || self.kernel.is_some() {
                return Err(CliError::config(
                    "give either [[terms]] or the single measure/kernel blocks, not both",
                ));
            }
            return Ok(self.terms.clone());
        }
        match (&self.measure, &self.kernel) {
            (Some(m), Some(k)) => Ok(vec![TermConfig {
                measure: m.clone(),
                kernel: k.clone(),
                g_map: self.g_map.clone().unwrap_or_default(),
            }]),
            _ => Err(CliError::config(
                "measure and kernel blocks (or [[terms]]) are required",
            )),
        }
    }

    /// Assembles the full problem instance.
    pub fn build_problem(&self) -> Result<ProblemSpec, CliError> {
        let domain = self.build_domain()?;
        let n_cells = self.n_cells()?;
        let template = pide_core::grid::GridField::new(domain.clone(), n_cells)
            .map_err(|e| CliError::config(format!("grid: {e}")))?;
        let h = template.h_min();

        let f_expr = parse_expr(&self.f_op.f, "F.f")?;
        let local = LocalOperator::linear_proper(self.domain.dim, self.f_op.gamma, f_expr, self.f_op.c)
            .map_err(|e| CliError::config(format!("F: {e}")))?;

        let mut terms = Vec::new();
        for tc in self.term_configs()? {
            let measure = Self::build_measure(&tc.measure)?;
            let kernel = Self::build_kernel(&tc.kernel)?;
            let quad = self.build_quad(&tc.measure, &measure, h)?;
            terms.push(TermSpec {
                scalar_map: Self::build_g_map(&tc.g_map)?,
                kernel,
                measure,
                quad,
            });
        }

        let (u0, horizon) = match &self.evolution {
            Some(e) => (Some(parse_expr(&e.u0, "evolution.u0")?), Some(e.horizon)),
            None => (None, None),
        };

        let spec = ProblemSpec {
            domain,
            n_cells,
            local,
            terms,
            u0,
            horizon,
        };
        spec.validate()
            .map_err(|e| CliError::config(format!("instance validation: {e}")))?;
        Ok(spec)
    }
}
