//! Jump maps `β(x, p, z) ∈ R^N` together with sampled validators for the
//! growth envelope, Lipschitz continuity in `x`, and the nondegeneracy of the
//! shifted state `x + β(x, z)`.
//!
//! Built-in variants carry their exact constants; custom kernels declare
//! theirs and the validators can only falsify them.

use std::fmt;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::sampling::{to_symmetric, Halton};
use crate::{dot, norm, zero_vec, VecN, MAX_DIM};

pub type KernelFn = Arc<dyn Fn(&VecN, &VecN, &VecN) -> VecN + Send + Sync>;
pub type EnvelopeFn = Arc<dyn Fn(&VecN) -> f64 + Send + Sync>;
/// Linear small-jump map `z ↦ A(x,p) z`, returned as the columns of A.
pub type LinearMapFn = Arc<dyn Fn(&VecN, &VecN) -> [VecN; MAX_DIM] + Send + Sync>;

#[derive(Clone)]
pub enum KernelVariant {
    /// `β = z`, requires M = N.
    Identity,
    /// `β = (|x|/2) z`, M = N; degenerates at x = 0.
    RadialScale,
    /// `β = (x₂, -x₁) z`, M = 1, N = 2; jumps orthogonal to x.
    Rotational,
    /// `β = p z / (|p| + ε₀)`, M = 1; jumps along the gradient direction.
    GradientDirection { eps0: f64 },
    /// `β = e_i z`, M = 1; jumps along one coordinate axis.
    Axis { axis: usize },
    Custom {
        beta: KernelFn,
        b1: EnvelopeFn,
        /// Columns of A(x,p) when β is linear in z; probed by finite
        /// differences at z = 0 otherwise.
        linear_map: Option<LinearMapFn>,
        gradient_independent: bool,
    },
}

impl fmt::Debug for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelVariant::Identity => write!(f, "Identity"),
            KernelVariant::RadialScale => write!(f, "RadialScale"),
            KernelVariant::Rotational => write!(f, "Rotational"),
            KernelVariant::GradientDirection { eps0 } => {
                write!(f, "GradientDirection(eps0={eps0})")
            }
            KernelVariant::Axis { axis } => write!(f, "Axis({axis})"),
            KernelVariant::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Declared constants of the growth/Lipschitz/nondegeneracy conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    /// Bound on b₁(x) for |x| < 1.
    pub b0: f64,
    /// Bound b₁(x) <= B₁|x| for |x| >= R.
    pub b1: f64,
    /// Lipschitz constant in x.
    pub b2: f64,
    /// Nondegeneracy constant, when declared.
    pub b3: Option<f64>,
    /// Radius splitting the two growth branches, >= 1.
    pub r: f64,
}

#[derive(Debug, Clone)]
pub struct JumpKernel {
    dim_n: usize,
    dim_m: usize,
    variant: KernelVariant,
    constants: KernelConstants,
}

/// Result of a sampled condition check. `worst_ratio` is the largest
/// constraint ratio observed (at most 1 for a passing kernel); the witness
/// holds the sample achieving it.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub pass: bool,
    pub worst_ratio: f64,
    pub witness: Option<SampleWitness>,
    pub samples: usize,
    pub note: String,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleWitness {
    pub x: VecN,
    pub x_alt: Option<VecN>,
    pub p: VecN,
    pub z: VecN,
}

/// Sampling boxes for the validators.
#[derive(Debug, Clone, Copy)]
pub struct SampleBoxes {
    pub x_radius: f64,
    pub p_radius: f64,
    pub z_radius: f64,
}

impl SampleBoxes {
    pub fn default_for(kernel: &JumpKernel) -> SampleBoxes {
        SampleBoxes {
            x_radius: 10.0 * kernel.constants.r,
            p_radius: 10.0,
            z_radius: 10.0,
        }
    }
}

const RATIO_SLACK: f64 = 1.0 + 1e-12;

impl JumpKernel {
    /// The identity jump β = z. Note |x + z| >= B₃|x| with |z| <= 1 forces
    /// B₃ <= 1 - 1/R; the declared pair here is (R, B₃) = (2, 1/2).
    pub fn identity(dim_n: usize) -> Result<JumpKernel> {
        validate_dims(dim_n, dim_n)?;
        Ok(JumpKernel {
            dim_n,
            dim_m: dim_n,
            variant: KernelVariant::Identity,
            constants: KernelConstants {
                b0: 1.0,
                b1: 1.0,
                b2: 0.0,
                b3: Some(0.5),
                r: 2.0,
            },
        })
    }

    pub fn radial_scale(dim_n: usize) -> Result<JumpKernel> {
        validate_dims(dim_n, dim_n)?;
        Ok(JumpKernel {
            dim_n,
            dim_m: dim_n,
            variant: KernelVariant::RadialScale,
            constants: KernelConstants {
                b0: 0.5,
                b1: 0.5,
                b2: 0.5,
                b3: Some(0.5),
                r: 1.0,
            },
        })
    }

    pub fn rotational() -> JumpKernel {
        JumpKernel {
            dim_n: 2,
            dim_m: 1,
            variant: KernelVariant::Rotational,
            constants: KernelConstants {
                b0: 1.0,
                b1: 1.0,
                b2: 1.0,
                b3: Some(1.0),
                r: 1.0,
            },
        }
    }

    pub fn gradient_direction(dim_n: usize, eps0: f64) -> Result<JumpKernel> {
        validate_dims(dim_n, 1)?;
        if !(eps0 > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "gradient-direction kernel needs eps0 > 0, got {eps0}"
            )));
        }
        Ok(JumpKernel {
            dim_n,
            dim_m: 1,
            variant: KernelVariant::GradientDirection { eps0 },
            constants: KernelConstants {
                b0: 1.0,
                b1: 1.0,
                b2: 0.0,
                b3: None,
                r: 1.0,
            },
        })
    }

    pub fn axis(dim_n: usize, axis: usize) -> Result<JumpKernel> {
        validate_dims(dim_n, 1)?;
        if axis >= dim_n {
            return Err(CoreError::DimensionMismatch(format!(
                "axis {axis} out of range for dimension {dim_n}"
            )));
        }
        Ok(JumpKernel {
            dim_n,
            dim_m: 1,
            variant: KernelVariant::Axis { axis },
            constants: KernelConstants {
                b0: 1.0,
                b1: 1.0,
                b2: 0.0,
                b3: None,
                r: 1.0,
            },
        })
    }

    pub fn custom(
        dim_n: usize,
        dim_m: usize,
        variant: KernelVariant,
        constants: KernelConstants,
    ) -> Result<JumpKernel> {
        validate_dims(dim_n, dim_m)?;
        if !(constants.r >= 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "branch radius R must be >= 1, got {}",
                constants.r
            )));
        }
        Ok(JumpKernel {
            dim_n,
            dim_m,
            variant,
            constants,
        })
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn variant(&self) -> &KernelVariant {
        &self.variant
    }

    pub fn constants(&self) -> &KernelConstants {
        &self.constants
    }

    /// Overrides the declared constants (for falsification tests).
    pub fn with_constants(mut self, constants: KernelConstants) -> JumpKernel {
        self.constants = constants;
        self
    }

    pub fn gradient_independent(&self) -> bool {
        match &self.variant {
            KernelVariant::GradientDirection { .. } => false,
            KernelVariant::Custom {
                gradient_independent,
                ..
            } => *gradient_independent,
            _ => true,
        }
    }

    /// True when β(x, p, ·) is exactly linear in z.
    pub fn linear_in_z(&self) -> bool {
        !matches!(
            &self.variant,
            KernelVariant::Custom {
                linear_map: None,
                ..
            }
        )
    }

    /// The jump displacement β(x, p, z). Dimensions are fixed at construction;
    /// unused trailing coordinates stay zero.
    pub fn evaluate(&self, x: &VecN, p: &VecN, z: &VecN) -> VecN {
        match &self.variant {
            KernelVariant::Identity => *z,
            KernelVariant::RadialScale => {
                let s = 0.5 * norm(x, self.dim_n);
                [s * z[0], s * z[1]]
            }
            KernelVariant::Rotational => [x[1] * z[0], -x[0] * z[0]],
            KernelVariant::GradientDirection { eps0 } => {
                let s = z[0] / (norm(p, self.dim_n) + eps0);
                [p[0] * s, p[1] * s]
            }
            KernelVariant::Axis { axis } => {
                let mut out = zero_vec();
                out[*axis] = z[0];
                out
            }
            KernelVariant::Custom { beta, .. } => beta(x, p, z),
        }
    }

    /// The growth envelope b₁(x) with |β(x,p,z)| <= b₁(x)|z|.
    pub fn envelope(&self, x: &VecN) -> f64 {
        match &self.variant {
            KernelVariant::Identity | KernelVariant::Axis { .. } => 1.0,
            KernelVariant::GradientDirection { .. } => 1.0,
            KernelVariant::RadialScale => 0.5 * norm(x, self.dim_n),
            KernelVariant::Rotational => norm(x, 2),
            KernelVariant::Custom { b1, .. } => b1(x),
        }
    }

    /// Columns of the small-jump linear map A(x, p) with β ≈ A z near z = 0;
    /// exact for every built-in, finite-difference probe for custom kernels
    /// without a declared map.
    pub fn linear_map_at(&self, x: &VecN, p: &VecN) -> [VecN; MAX_DIM] {
        let mut cols = [zero_vec(); MAX_DIM];
        match &self.variant {
            KernelVariant::Identity => {
                for k in 0..self.dim_n {
                    cols[k][k] = 1.0;
                }
            }
            KernelVariant::RadialScale => {
                let s = 0.5 * norm(x, self.dim_n);
                for k in 0..self.dim_n {
                    cols[k][k] = s;
                }
            }
            KernelVariant::Rotational => {
                cols[0] = [x[1], -x[0]];
            }
            KernelVariant::GradientDirection { eps0 } => {
                let s = 1.0 / (norm(p, self.dim_n) + eps0);
                cols[0] = [p[0] * s, p[1] * s];
            }
            KernelVariant::Axis { axis } => {
                cols[0][*axis] = 1.0;
            }
            KernelVariant::Custom {
                linear_map, beta, ..
            } => {
                if let Some(map) = linear_map {
                    return map(x, p);
                }
                let h = 1e-6;
                for (j, col) in cols.iter_mut().enumerate().take(self.dim_m) {
                    let mut zp = zero_vec();
                    zp[j] = h;
                    let bp = beta(x, p, &zp);
                    zp[j] = -h;
                    let bm = beta(x, p, &zp);
                    for k in 0..self.dim_n {
                        col[k] = (bp[k] - bm[k]) / (2.0 * h);
                    }
                }
            }
        }
        cols
    }

    /// Samples the growth condition: |β(x,p,z)| <= b₁(x)|z| with
    /// b₁ <= B₀ for |x| < 1 and b₁ <= B₁|x| for |x| >= R.
    pub fn verify_growth(&self, sample_budget: usize) -> ConditionReport {
        self.verify_growth_in(sample_budget, SampleBoxes::default_for(self))
    }

    pub fn verify_growth_in(&self, sample_budget: usize, boxes: SampleBoxes) -> ConditionReport {
        let mut halton = Halton::new(6);
        let mut u = [0.0; 6];
        let mut worst = 0.0_f64;
        let mut witness = None;
        let c = self.constants;
        for _ in 0..sample_budget {
            halton.next_point(&mut u);
            let (x, p, z) = self.sample_xpz(&u, boxes);
            let zn = norm(&z, self.dim_m);
            if zn < 1e-12 {
                continue;
            }
            let beta = self.evaluate(&x, &p, &z);
            let env = self.envelope(&x);
            let mut push = |ratio: f64| {
                if ratio > worst {
                    worst = ratio;
                    witness = Some(SampleWitness {
                        x,
                        x_alt: None,
                        p,
                        z,
                    });
                }
            };
            // envelope correctness
            push(norm(&beta, self.dim_n) / (env * zn).max(1e-300));
            // branch bounds on the envelope itself
            let xn = norm(&x, self.dim_n);
            if xn < 1.0 {
                push(env / c.b0.max(1e-300));
            }
            if xn >= c.r {
                push(env / (c.b1 * xn).max(1e-300));
            }
        }
        ConditionReport {
            pass: worst <= RATIO_SLACK,
            worst_ratio: worst,
            witness,
            samples: sample_budget,
            note: format!(
                "growth |beta| <= b1(x)|z|, b1 <= B0 = {} on |x| < 1, b1 <= B1|x| = {}|x| on |x| >= {}",
                c.b0, c.b1, c.r
            ),
        }
    }

    /// Samples the Lipschitz condition |β(x,p,z) - β(x',p,z)| <= B₂|x-x'||z|.
    pub fn verify_lipschitz(&self, sample_budget: usize) -> ConditionReport {
        self.verify_lipschitz_in(sample_budget, SampleBoxes::default_for(self))
    }

    pub fn verify_lipschitz_in(&self, sample_budget: usize, boxes: SampleBoxes) -> ConditionReport {
        let mut halton = Halton::new(8);
        let mut u = [0.0; 8];
        let mut worst = 0.0_f64;
        let mut witness = None;
        let b2 = self.constants.b2;
        for _ in 0..sample_budget {
            halton.next_point(&mut u);
            let (x, p, z) = self.sample_xpz(&u, boxes);
            let mut x_alt = zero_vec();
            for k in 0..self.dim_n {
                x_alt[k] = to_symmetric(u[4 + k], boxes.x_radius);
            }
            let zn = norm(&z, self.dim_m);
            let mut dx = zero_vec();
            for k in 0..self.dim_n {
                dx[k] = x[k] - x_alt[k];
            }
            let dxn = norm(&dx, self.dim_n);
            if zn < 1e-12 || dxn < 1e-12 {
                continue;
            }
            let ba = self.evaluate(&x, &p, &z);
            let bb = self.evaluate(&x_alt, &p, &z);
            let mut diff = zero_vec();
            for k in 0..self.dim_n {
                diff[k] = ba[k] - bb[k];
            }
            let lhs = norm(&diff, self.dim_n);
            // absolute slack absorbs roundoff when B2 = 0
            let ratio = lhs / (b2 * dxn * zn + 1e-13 * dxn * zn);
            if ratio > worst {
                worst = ratio;
                witness = Some(SampleWitness {
                    x,
                    x_alt: Some(x_alt),
                    p,
                    z,
                });
            }
        }
        ConditionReport {
            pass: worst <= RATIO_SLACK,
            worst_ratio: worst,
            witness,
            samples: sample_budget,
            note: format!("Lipschitz in x with B2 = {b2}"),
        }
    }

    /// Samples the nondegeneracy condition |x + β(x,z)| >= B₃|x| for
    /// |x| >= R, |z| <= 1. Stated for gradient-independent jumps only.
    pub fn verify_nondegeneracy(&self, sample_budget: usize) -> Result<ConditionReport> {
        self.verify_nondegeneracy_in(sample_budget, SampleBoxes::default_for(self))
    }

    pub fn verify_nondegeneracy_in(
        &self,
        sample_budget: usize,
        boxes: SampleBoxes,
    ) -> Result<ConditionReport> {
        if !self.gradient_independent() {
            return Err(CoreError::GradientDependentKernel);
        }
        let b3 = self
            .constants
            .b3
            .ok_or_else(|| CoreError::InvalidParameter("no B3 declared on this kernel".into()))?;
        let r = self.constants.r;
        let mut halton = Halton::new(4);
        let mut u = [0.0; 4];
        let p = zero_vec();
        let mut worst = 0.0_f64;
        let mut witness = None;
        let mut accepted = 0usize;
        let mut draws = 0usize;
        while accepted < sample_budget && draws < 100 * sample_budget {
            draws += 1;
            halton.next_point(&mut u);
            let mut x = zero_vec();
            for k in 0..self.dim_n {
                x[k] = to_symmetric(u[k], boxes.x_radius);
            }
            let xn = norm(&x, self.dim_n);
            if xn < r {
                continue;
            }
            accepted += 1;
            let mut z = zero_vec();
            for k in 0..self.dim_m {
                z[k] = to_symmetric(u[2 + k], 1.0);
            }
            if self.dim_m == 2 {
                let zn = norm(&z, 2);
                if zn > 1.0 {
                    let s = 1.0 / zn;
                    z = [z[0] * s, z[1] * s];
                }
            }
            let beta = self.evaluate(&x, &p, &z);
            let shifted = [x[0] + beta[0], x[1] + beta[1]];
            let ratio = b3 * xn / norm(&shifted, self.dim_n).max(1e-300);
            if ratio > worst {
                worst = ratio;
                witness = Some(SampleWitness {
                    x,
                    x_alt: None,
                    p,
                    z,
                });
            }
        }
        Ok(ConditionReport {
            pass: worst <= RATIO_SLACK,
            worst_ratio: worst,
            witness,
            samples: accepted,
            note: format!("|x + beta(x,z)| >= B3|x| = {b3}|x| on |x| >= {r}, |z| <= 1"),
        })
    }

    fn sample_xpz(&self, u: &[f64], boxes: SampleBoxes) -> (VecN, VecN, VecN) {
        let mut x = zero_vec();
        let mut p = zero_vec();
        let mut z = zero_vec();
        for k in 0..self.dim_n {
            x[k] = to_symmetric(u[k], boxes.x_radius);
            p[k] = to_symmetric(u[2 + k], boxes.p_radius);
        }
        for k in 0..self.dim_m {
            z[k] = to_symmetric(u[4 + k], boxes.z_radius);
        }
        (x, p, z)
    }
}

fn validate_dims(dim_n: usize, dim_m: usize) -> Result<()> {
    if dim_n == 0 || dim_n > MAX_DIM {
        return Err(CoreError::DimensionMismatch(format!(
            "state dimension must be 1 or 2, got {dim_n}"
        )));
    }
    if dim_m == 0 || dim_m > dim_n {
        return Err(CoreError::DimensionMismatch(format!(
            "jump dimension must satisfy 1 <= M <= N, got M = {dim_m}, N = {dim_n}"
        )));
    }
    Ok(())
}

/// ⟨β(x,p,z), x⟩ — identically zero for the rotational kernel.
pub fn radial_component(kernel: &JumpKernel, x: &VecN, p: &VecN, z: &VecN) -> f64 {
    let beta = kernel.evaluate(x, p, z);
    dot(&beta, x, kernel.dim_n())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUDGET: usize = 10_000;

    #[test]
    fn evaluate_builtins() {
        // RadialScale degenerates at x = 0.
        let k = JumpKernel::radial_scale(2).unwrap();
        let b = k.evaluate(&[0.0, 0.0], &[3.0, -1.0], &[0.7, 0.2]);
        assert_eq!(b, [0.0, 0.0]);

        // Rotational at x = (1,0), z = 0.5 -> (0, -0.5).
        let k = JumpKernel::rotational();
        let b = k.evaluate(&[1.0, 0.0], &[0.0, 0.0], &[0.5, 0.0]);
        assert_eq!(b, [0.0, -0.5]);

        // Identity returns z.
        let k = JumpKernel::identity(2).unwrap();
        let z = [0.3, -0.9];
        assert_eq!(k.evaluate(&[5.0, 2.0], &[1.0, 1.0], &z), z);
    }

    #[test]
    fn growth_reports() {
        assert!(JumpKernel::radial_scale(2).unwrap().verify_growth(BUDGET).pass);
        assert!(JumpKernel::identity(1).unwrap().verify_growth(BUDGET).pass);
        assert!(JumpKernel::rotational().verify_growth(BUDGET).pass);
        assert!(JumpKernel::gradient_direction(2, 0.1)
            .unwrap()
            .verify_growth(BUDGET)
            .pass);

        // Misdeclared B0 = 0.1 fails with a witness with |x| near 1.
        let bad = JumpKernel::radial_scale(2)
            .unwrap()
            .with_constants(KernelConstants {
                b0: 0.1,
                b1: 0.5,
                b2: 0.5,
                b3: Some(0.5),
                r: 1.0,
            });
        let report = bad.verify_growth(BUDGET);
        assert!(!report.pass);
        let w = report.witness.unwrap();
        let xn = norm(&w.x, 2);
        assert!(xn < 1.0 && xn > 0.8, "witness |x| = {xn} should approach 1");
        assert!(report.worst_ratio > 4.0);
    }

    #[test]
    fn lipschitz_reports() {
        assert!(JumpKernel::radial_scale(2).unwrap().verify_lipschitz(BUDGET).pass);
        assert!(JumpKernel::identity(2).unwrap().verify_lipschitz(BUDGET).pass);
        assert!(JumpKernel::rotational().verify_lipschitz(BUDGET).pass);

        // Rotational with B2 = 0.5 understates |b(x)-b(x')| = |x-x'|.
        let bad = JumpKernel::rotational().with_constants(KernelConstants {
            b2: 0.5,
            ..*JumpKernel::rotational().constants()
        });
        assert!(!bad.verify_lipschitz(BUDGET).pass);
    }

    #[test]
    fn nondegeneracy_reports() {
        assert!(JumpKernel::identity(2)
            .unwrap()
            .verify_nondegeneracy(BUDGET)
            .unwrap()
            .pass);
        assert!(JumpKernel::radial_scale(2)
            .unwrap()
            .verify_nondegeneracy(BUDGET)
            .unwrap()
            .pass);
        // jumps orthogonal to x: <beta, x> = 0 admits B3 = 1
        assert!(JumpKernel::rotational()
            .verify_nondegeneracy(BUDGET)
            .unwrap()
            .pass);

        let gd = JumpKernel::gradient_direction(2, 0.5).unwrap();
        assert!(matches!(
            gd.verify_nondegeneracy(100),
            Err(CoreError::GradientDependentKernel)
        ));
    }

    #[test]
    fn identity_with_b3_one_is_falsified() {
        // |x + z| can drop to |x| - 1, so B3 = 1 cannot hold for beta = z at
        // any branch radius; the validator must find a witness.
        let bad = JumpKernel::identity(2).unwrap().with_constants(KernelConstants {
            b0: 1.0,
            b1: 1.0,
            b2: 0.0,
            b3: Some(1.0),
            r: 1.0,
        });
        let report = bad.verify_nondegeneracy(BUDGET).unwrap();
        assert!(!report.pass);
        let w = report.witness.unwrap();
        let shifted = [w.x[0] + w.z[0], w.x[1] + w.z[1]];
        assert!(norm(&shifted, 2) < norm(&w.x, 2));
    }

    #[test]
    fn scaled_identity_family_b3_is_one_minus_b1() {
        // beta = c z with c < 1: B1 = c and B3 = 1 - B1 passes.
        for c in [0.2, 0.5, 0.9] {
            let scaled = JumpKernel::custom(
                2,
                2,
                KernelVariant::Custom {
                    beta: Arc::new(move |_x, _p, z: &VecN| [c * z[0], c * z[1]]),
                    b1: Arc::new(move |_x| c),
                    linear_map: Some(Arc::new(move |_x, _p| [[c, 0.0], [0.0, c]])),
                    gradient_independent: true,
                },
                KernelConstants {
                    b0: c,
                    b1: c,
                    b2: 0.0,
                    b3: Some(1.0 - c),
                    r: 1.0,
                },
            )
            .unwrap();
            assert!(scaled.verify_growth(BUDGET).pass);
            assert!(scaled.verify_nondegeneracy(BUDGET).unwrap().pass, "c = {c}");
        }
    }

    #[test]
    fn rotational_jumps_are_orthogonal_to_x() {
        let k = JumpKernel::rotational();
        let mut halton = Halton::new(4);
        let mut u = [0.0; 4];
        for _ in 0..1000 {
            halton.next_point(&mut u);
            let x = [to_symmetric(u[0], 5.0), to_symmetric(u[1], 5.0)];
            let p = [to_symmetric(u[2], 5.0), 0.0];
            let z = [to_symmetric(u[3], 3.0), 0.0];
            assert!(radial_component(&k, &x, &p, &z).abs() <= 1e-14);
        }
    }

    #[test]
    fn gradient_direction_approaches_gradient_ray() {
        // beta / z = p / (|p| + eps0) -> p / |p| as eps0 -> 0
        let p = [3.0, 4.0]; // |p| = 5
        let z = [1.0, 0.0];
        let unit_p = [0.6, 0.8];
        let mut last_dist = f64::INFINITY;
        for eps0 in [1.0, 0.1, 0.01, 1e-4] {
            let k = JumpKernel::gradient_direction(2, eps0).unwrap();
            let b = k.evaluate(&[0.3, 0.4], &p, &z);
            assert!(norm(&b, 2) <= norm(&z, 1), "|beta| <= |z|");
            // always parallel to p
            assert!((b[0] * p[1] - b[1] * p[0]).abs() <= 1e-14);
            let gap = [b[0] / z[0] - unit_p[0], b[1] / z[0] - unit_p[1]];
            let dist = norm(&gap, 2);
            assert!(dist < last_dist);
            last_dist = dist;
        }
        assert!(last_dist < 1e-4);
    }

    #[test]
    fn builtins_positively_homogeneous_in_z() {
        let kernels = vec![
            JumpKernel::identity(2).unwrap(),
            JumpKernel::radial_scale(2).unwrap(),
            JumpKernel::rotational(),
            JumpKernel::gradient_direction(2, 0.3).unwrap(),
            JumpKernel::axis(2, 1).unwrap(),
        ];
        let x = [0.7, -1.2];
        let p = [0.4, 2.0];
        let z = [0.35, -0.8];
        for k in &kernels {
            let zin = if k.dim_m() == 1 { [z[0], 0.0] } else { z };
            for lambda in [0.5, 2.0, 7.0] {
                let scaled = [lambda * zin[0], lambda * zin[1]];
                let b1 = k.evaluate(&x, &p, &scaled);
                let b0 = k.evaluate(&x, &p, &zin);
                for c in 0..k.dim_n() {
                    let expect = lambda * b0[c];
                    assert!(
                        (b1[c] - expect).abs() <= 1e-14 * expect.abs().max(1.0),
                        "{:?} not homogeneous",
                        k.variant()
                    );
                }
            }
        }
    }

    #[test]
    fn linear_map_matches_evaluate() {
        let kernels = vec![
            JumpKernel::identity(2).unwrap(),
            JumpKernel::radial_scale(2).unwrap(),
            JumpKernel::rotational(),
            JumpKernel::gradient_direction(2, 0.3).unwrap(),
            JumpKernel::axis(2, 0).unwrap(),
        ];
        let x = [1.5, -0.6];
        let p = [0.2, -1.0];
        for k in &kernels {
            let cols = k.linear_map_at(&x, &p);
            let mut z = zero_vec();
            for j in 0..k.dim_m() {
                z[j] = 0.3 + 0.2 * j as f64;
            }
            let direct = k.evaluate(&x, &p, &z);
            let mut via_map = zero_vec();
            for j in 0..k.dim_m() {
                for c in 0..k.dim_n() {
                    via_map[c] += cols[j][c] * z[j];
                }
            }
            for c in 0..k.dim_n() {
                assert!(
                    (direct[c] - via_map[c]).abs() <= 1e-12,
                    "{:?} linear map mismatch",
                    k.variant()
                );
            }
        }
    }
}
