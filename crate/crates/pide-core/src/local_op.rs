//! Local operators `F(x, r, p, X)` and monotone scalar maps `G(s)`, with
//! sampled validators for properness, degenerate ellipticity, the structure
//! condition, and monotonicity of `G`.

use std::fmt;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::exprlang::Expr;
use crate::sampling::{to_symmetric, Halton};
use crate::{zero_mat, zero_vec, MatN, VecN};

pub type LocalFn = Arc<dyn Fn(&VecN, f64, &VecN, &MatN) -> f64 + Send + Sync>;
pub type ModulusFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum LocalForm {
    /// `F(x, r, p, X) = γ r - f(x) - c · trace(X)`; proper with constant γ,
    /// degenerate elliptic for c >= 0.
    LinearProper {
        gamma: f64,
        source: Expr,
        diffusion: f64,
    },
    Custom {
        handle: LocalFn,
        gamma: f64,
        modulus: ModulusFn,
    },
}

impl fmt::Debug for LocalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalForm::LinearProper {
                gamma,
                source,
                diffusion,
            } => write!(
                f,
                "LinearProper(gamma={gamma}, f=\"{}\", c={diffusion})",
                source.source()
            ),
            LocalForm::Custom { gamma, .. } => write!(f, "Custom(gamma={gamma})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalOperator {
    dim_n: usize,
    form: LocalForm,
}

impl LocalOperator {
    pub fn linear_proper(
        dim_n: usize,
        gamma: f64,
        source: Expr,
        diffusion: f64,
    ) -> Result<LocalOperator> {
        if !(gamma > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "properness constant gamma must be positive, got {gamma}"
            )));
        }
        if diffusion < 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "diffusion coefficient must be nonnegative, got {diffusion}"
            )));
        }
        if let Some(i) = source.max_coord() {
            if i >= dim_n {
                return Err(CoreError::DimensionMismatch(format!(
                    "source mentions x{i} but the dimension is {dim_n}"
                )));
            }
        }
        Ok(LocalOperator {
            dim_n,
            form: LocalForm::LinearProper {
                gamma,
                source,
                diffusion,
            },
        })
    }

    pub fn custom(dim_n: usize, handle: LocalFn, gamma: f64, modulus: ModulusFn) -> LocalOperator {
        LocalOperator {
            dim_n,
            form: LocalForm::Custom {
                handle,
                gamma,
                modulus,
            },
        }
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    pub fn form(&self) -> &LocalForm {
        &self.form
    }

    pub fn gamma(&self) -> f64 {
        match &self.form {
            LocalForm::LinearProper { gamma, .. } => *gamma,
            LocalForm::Custom { gamma, .. } => *gamma,
        }
    }

    pub fn diffusion(&self) -> f64 {
        match &self.form {
            LocalForm::LinearProper { diffusion, .. } => *diffusion,
            LocalForm::Custom { .. } => 0.0,
        }
    }

    /// Evaluates F at one jet. The Hessian argument must be symmetric.
    pub fn eval_local(&self, x: &VecN, r: f64, p: &VecN, x_mat: &MatN) -> Result<f64> {
        let skew = (x_mat[0][1] - x_mat[1][0]).abs();
        let scale = x_mat
            .iter()
            .flatten()
            .fold(1.0_f64, |acc, v| acc.max(v.abs()));
        if skew > 1e-12 * scale {
            return Err(CoreError::AsymmetricHessian(skew));
        }
        Ok(match &self.form {
            LocalForm::LinearProper {
                gamma,
                source,
                diffusion,
            } => {
                let mut trace = 0.0;
                for k in 0..self.dim_n {
                    trace += x_mat[k][k];
                }
                gamma * r - source.eval(x, self.dim_n)? - diffusion * trace
            }
            LocalForm::Custom { handle, .. } => handle(x, r, p, x_mat),
        })
    }

    /// Sampled properness check: γ(r-s) <= F(x,r,p,X) - F(x,s,p,X) for r >= s,
    /// with γ the operator's declared constant.
    pub fn check_proper(&self, sample_budget: usize) -> Result<SlackReport> {
        let gamma = self.gamma();
        let mut halton = Halton::new(8);
        let mut u = [0.0; 8];
        let mut worst = f64::INFINITY;
        let mut witness = None;
        for _ in 0..sample_budget {
            halton.next_point(&mut u);
            let (x, p, x_mat) = self.sample_jet(&u);
            let r = to_symmetric(u[6], 5.0);
            let s = r - 5.0 * u[7];
            let fr = self.eval_local(&x, r, &p, &x_mat)?;
            let fs = self.eval_local(&x, s, &p, &x_mat)?;
            let slack = (fr - fs) - gamma * (r - s);
            if slack < worst {
                worst = slack;
                witness = Some(format!("x={x:?}, r={r}, s={s}"));
            }
        }
        Ok(SlackReport {
            pass: worst >= -1e-10,
            worst_slack: worst,
            witness,
            samples: sample_budget,
            note: format!("properness with gamma = {gamma}"),
        })
    }

    /// Sampled degenerate ellipticity: F decreases when a PSD matrix is added
    /// to X, and increases in r.
    pub fn check_ellipticity(&self, sample_budget: usize) -> Result<SlackReport> {
        let mut halton = Halton::new(12);
        let mut u = [0.0; 12];
        let mut worst = f64::INFINITY;
        let mut witness = None;
        for _ in 0..sample_budget {
            halton.next_point(&mut u);
            let (x, p, x_mat) = self.sample_jet(&u);
            let r = to_symmetric(u[6], 5.0);

            // D = A^T A from random A is PSD.
            let a = [
                [to_symmetric(u[7], 2.0), to_symmetric(u[8], 2.0)],
                [to_symmetric(u[9], 2.0), to_symmetric(u[10], 2.0)],
            ];
            let mut d = zero_mat();
            for i in 0..self.dim_n {
                for j in 0..self.dim_n {
                    for (k, row) in a.iter().enumerate().take(self.dim_n) {
                        let _ = k;
                        d[i][j] += row[i] * row[j];
                    }
                }
            }
            let mut shifted = x_mat;
            for i in 0..self.dim_n {
                for j in 0..self.dim_n {
                    shifted[i][j] += d[i][j];
                }
            }
            let base = self.eval_local(&x, r, &p, &x_mat)?;
            let bumped = self.eval_local(&x, r, &p, &shifted)?;
            // matrix monotonicity: F(X + D) <= F(X)
            let slack_mat = base - bumped;
            // zeroth-order monotonicity: F at larger r is larger
            let s = r + 5.0 * u[11];
            let larger = self.eval_local(&x, s, &p, &x_mat)?;
            let slack_r = larger - base;
            let slack = slack_mat.min(slack_r);
            if slack < worst {
                worst = slack;
                witness = Some(format!("x={x:?}, r={r}, D={d:?}"));
            }
        }
        Ok(SlackReport {
            pass: worst >= -1e-10,
            worst_slack: worst,
            witness,
            samples: sample_budget,
            note: "degenerate ellipticity (PSD bump + r-monotonicity)".into(),
        })
    }

    /// Sampled structure condition on the admissible slice X = Y = O:
    /// F(y, r, α(x-y), O) - F(x, r, α(x-y), O) <= w(α|x-y|² + |x-y|),
    /// with x, y drawn from a default ±5 box.
    pub fn check_structure(&self, modulus: &ModulusFn, sample_budget: usize) -> Result<SlackReport> {
        self.check_structure_in(modulus, sample_budget, &[-5.0, -5.0], &[5.0, 5.0])
    }

    /// The structure check restricted to a sampling box (the condition is
    /// stated for points of Ω, so the modulus need only cover that box).
    pub fn check_structure_in(
        &self,
        modulus: &ModulusFn,
        sample_budget: usize,
        lo: &VecN,
        hi: &VecN,
    ) -> Result<SlackReport> {
        let mut halton = Halton::new(8);
        let mut u = [0.0; 8];
        let mut worst = f64::INFINITY;
        let mut witness = None;
        let o = zero_mat();
        for _ in 0..sample_budget {
            halton.next_point(&mut u);
            let mut x = zero_vec();
            let mut y = zero_vec();
            for k in 0..self.dim_n {
                x[k] = lo[k] + u[k] * (hi[k] - lo[k]);
                y[k] = lo[k] + u[2 + k] * (hi[k] - lo[k]);
            }
            // spread alpha over several decades, and pull y toward x for
            // small-separation coverage
            let alpha = 10.0_f64.powf(-2.0 + 5.0 * u[4]);
            let pull = u[5];
            for k in 0..self.dim_n {
                y[k] = x[k] + pull * (y[k] - x[k]);
            }
            let r = to_symmetric(u[6], 5.0);
            let mut p = zero_vec();
            let mut dist2 = 0.0;
            for k in 0..self.dim_n {
                p[k] = alpha * (x[k] - y[k]);
                dist2 += (x[k] - y[k]) * (x[k] - y[k]);
            }
            let dist = dist2.sqrt();
            let lhs = self.eval_local(&y, r, &p, &o)? - self.eval_local(&x, r, &p, &o)?;
            let bound = modulus(alpha * dist2 + dist);
            let slack = bound - lhs;
            if slack < worst {
                worst = slack;
                witness = Some(format!("x={x:?}, y={y:?}, alpha={alpha:.3e}"));
            }
        }
        Ok(SlackReport {
            pass: worst >= -1e-10,
            worst_slack: worst,
            witness,
            samples: sample_budget,
            note: "structure condition tested on the X = Y = O admissible slice only".into(),
        })
    }

    fn sample_jet(&self, u: &[f64]) -> (VecN, VecN, MatN) {
        let mut x = zero_vec();
        let mut p = zero_vec();
        for k in 0..self.dim_n {
            x[k] = to_symmetric(u[k], 5.0);
            p[k] = to_symmetric(u[2 + k], 5.0);
        }
        let mut x_mat = zero_mat();
        x_mat[0][0] = to_symmetric(u[4], 3.0);
        if self.dim_n == 2 {
            x_mat[1][1] = to_symmetric(u[5], 3.0);
            let off = to_symmetric(0.5 * (u[4] + u[5]), 2.0);
            x_mat[0][1] = off;
            x_mat[1][0] = off;
        }
        (x, p, x_mat)
    }
}

/// Sampled-check result; `worst_slack` must stay nonnegative (up to roundoff)
/// for a pass.
#[derive(Debug, Clone)]
pub struct SlackReport {
    pub pass: bool,
    pub worst_slack: f64,
    pub witness: Option<String>,
    pub samples: usize,
    pub note: String,
}

/// Monotone scalar maps applied to the negated nonlocal term.
#[derive(Clone)]
pub enum NonlocalScalarMap {
    /// G(s) = s.
    IdentityMap,
    /// G(s) = s + κ s³, strictly increasing for κ >= 0.
    CubicMonotone { kappa: f64 },
    Custom { handle: ScalarFn },
}

impl fmt::Debug for NonlocalScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlocalScalarMap::IdentityMap => write!(f, "IdentityMap"),
            NonlocalScalarMap::CubicMonotone { kappa } => write!(f, "CubicMonotone(kappa={kappa})"),
            NonlocalScalarMap::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl NonlocalScalarMap {
    pub fn cubic(kappa: f64) -> Result<NonlocalScalarMap> {
        if kappa < 0.0 {
            return Err(CoreError::InvalidParameter(format!(
                "cubic coefficient must be nonnegative, got {kappa}"
            )));
        }
        Ok(NonlocalScalarMap::CubicMonotone { kappa })
    }

    pub fn apply(&self, s: f64) -> f64 {
        match self {
            NonlocalScalarMap::IdentityMap => s,
            NonlocalScalarMap::CubicMonotone { kappa } => s + kappa * s * s * s,
            NonlocalScalarMap::Custom { handle } => handle(s),
        }
    }

    /// Sampled monotonicity check: s < t implies G(s) < G(t) + tol.
    pub fn check_monotone_map(&self, sample_budget: usize) -> SlackReport {
        let mut halton = Halton::new(2);
        let mut u = [0.0; 2];
        let mut worst = f64::INFINITY;
        let mut witness = None;
        for _ in 0..sample_budget {
            halton.next_point(&mut u);
            let s = to_symmetric(u[0], 20.0);
            let t = s + 40.0 * u[1].max(1e-9);
            let slack = self.apply(t) - self.apply(s);
            if slack < worst {
                worst = slack;
                witness = Some(format!("s={s}, t={t}"));
            }
        }
        SlackReport {
            pass: worst >= -1e-10,
            worst_slack: worst,
            witness,
            samples: sample_budget,
            note: format!("monotonicity of {self:?}"),
        }
    }

    /// Upper estimate of sup |G'| on the interval by divided differences on a
    /// fine grid, inflated by a safety factor 1.1. A degenerate interval
    /// yields 0.
    pub fn lipschitz_estimate(&self, interval: (f64, f64)) -> f64 {
        let (a, b) = interval;
        if a >= b {
            return 0.0;
        }
        let n = 4096;
        let h = (b - a) / n as f64;
        let mut worst = 0.0_f64;
        let mut prev = self.apply(a);
        for k in 1..=n {
            let next = self.apply(a + k as f64 * h);
            worst = worst.max((next - prev).abs() / h);
            prev = next;
        }
        1.1 * worst
    }

    /// Sharp Lipschitz bound where the derivative is known in closed form;
    /// the divided-difference estimate otherwise.
    pub fn lipschitz_exact_or_estimate(&self, interval: (f64, f64)) -> f64 {
        match self {
            NonlocalScalarMap::IdentityMap => 1.0,
            NonlocalScalarMap::CubicMonotone { kappa } => {
                let m = interval.0.abs().max(interval.1.abs());
                1.0 + 3.0 * kappa * m * m
            }
            NonlocalScalarMap::Custom { .. } => self.lipschitz_estimate(interval),
        }
    }

    pub fn g0(&self) -> f64 {
        self.apply(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(gamma: f64, f_text: &str, c: f64) -> LocalOperator {
        LocalOperator::linear_proper(2, gamma, Expr::parse(f_text).unwrap(), c).unwrap()
    }

    #[test]
    fn eval_local_closed_forms() {
        // gamma r - f with gamma = 1, f = 1, r = 1 -> 0
        let op = linear(1.0, "1", 0.0);
        let v = op
            .eval_local(&[0.3, 0.3], 1.0, &zero_vec(), &zero_mat())
            .unwrap();
        assert_eq!(v, 0.0);

        // gamma = 2, f = 0, c = 1, X = I: 2r - 2
        let op = linear(2.0, "0", 1.0);
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        for r in [-1.0, 0.0, 2.5] {
            let v = op.eval_local(&[0.0, 0.0], r, &zero_vec(), &eye).unwrap();
            assert!((v - (2.0 * r - 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn custom_echo_matches_linear() {
        let op = linear(1.5, "x0 - x1", 0.7);
        let echo = LocalOperator::custom(
            2,
            Arc::new(|x: &VecN, r: f64, _p: &VecN, m: &MatN| {
                1.5 * r - (x[0] - x[1]) - 0.7 * (m[0][0] + m[1][1])
            }),
            1.5,
            Arc::new(|s| s),
        );
        let mut halton = Halton::new(8);
        let mut u = [0.0; 8];
        for _ in 0..1000 {
            halton.next_point(&mut u);
            let (x, p, m) = op.sample_jet(&u);
            let r = to_symmetric(u[6], 5.0);
            let a = op.eval_local(&x, r, &p, &m).unwrap();
            let b = echo.eval_local(&x, r, &p, &m).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let op = linear(1.0, "0", 1.0);
        let bad = [[1.0, 0.5], [0.2, 1.0]];
        assert!(matches!(
            op.eval_local(&[0.0, 0.0], 0.0, &zero_vec(), &bad),
            Err(CoreError::AsymmetricHessian(_))
        ));
    }

    #[test]
    fn proper_check_passes_with_own_gamma_and_fails_inflated() {
        let op = linear(1.0, "x0", 0.5);
        let report = op.check_proper(5000).unwrap();
        assert!(report.pass);
        assert!(report.worst_slack.abs() <= 1e-12, "{}", report.worst_slack);

        // declaring gamma = 1.5 on a gamma = 1 operator must fail
        let overdeclared = LocalOperator::custom(
            2,
            Arc::new(|x: &VecN, r: f64, _p, m: &MatN| r - x[0] - 0.5 * (m[0][0] + m[1][1])),
            1.5,
            Arc::new(|s| s),
        );
        let report = overdeclared.check_proper(5000).unwrap();
        assert!(!report.pass);
        assert!(report.worst_slack < -1e-3);
    }

    #[test]
    fn ellipticity_check() {
        assert!(linear(1.0, "0", 1.0).check_ellipticity(5000).unwrap().pass);
        assert!(linear(1.0, "0", 0.0).check_ellipticity(5000).unwrap().pass);

        // trace reversal (c = -1) violates degenerate ellipticity
        let bad = LocalOperator::custom(
            2,
            Arc::new(|_x: &VecN, r: f64, _p, m: &MatN| r + m[0][0] + m[1][1]),
            1.0,
            Arc::new(|s| s),
        );
        let report = bad.check_ellipticity(5000).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn structure_check() {
        // Lipschitz source with matching modulus passes.
        let op = linear(1.0, "x0 + x1", 0.0);
        let w: ModulusFn = Arc::new(|s| 2.0 * s);
        assert!(op.check_structure(&w, 5000).unwrap().pass);

        // constant source with zero modulus: equality case passes
        let op = linear(1.0, "3", 0.0);
        let w: ModulusFn = Arc::new(|_| 0.0);
        assert!(op.check_structure(&w, 5000).unwrap().pass);

        // sign-like discontinuity beats any continuous modulus near 0
        let op = linear(1.0, "tanh(1e8 * x0)", 0.0);
        let w: ModulusFn = Arc::new(|s| s);
        let report = op.check_structure(&w, 5000).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn monotone_map_checks() {
        assert!(NonlocalScalarMap::IdentityMap.check_monotone_map(5000).pass);
        assert!(NonlocalScalarMap::cubic(0.1)
            .unwrap()
            .check_monotone_map(5000)
            .pass);
        let decreasing = NonlocalScalarMap::Custom {
            handle: Arc::new(|s| -s),
        };
        assert!(!decreasing.check_monotone_map(5000).pass);
    }

    #[test]
    fn lipschitz_estimates() {
        let id = NonlocalScalarMap::IdentityMap;
        assert!((id.lipschitz_estimate((-3.0, 7.0)) - 1.1).abs() < 1e-12);
        assert_eq!(id.lipschitz_estimate((2.0, 2.0)), 0.0);
        assert_eq!(id.lipschitz_exact_or_estimate((-3.0, 7.0)), 1.0);

        // 1.1 * sup(1 + 3 s^2) on [-2, 2] = 1.1 * 13, via divided differences
        let cubic = NonlocalScalarMap::cubic(1.0).unwrap();
        let est = cubic.lipschitz_estimate((-2.0, 2.0));
        assert!((est - 1.1 * 13.0).abs() < 0.05, "{est}");
        assert_eq!(cubic.lipschitz_exact_or_estimate((-2.0, 2.0)), 13.0);
    }

    #[test]
    fn g_is_antitone_in_its_negated_argument() {
        let maps = [
            NonlocalScalarMap::IdentityMap,
            NonlocalScalarMap::cubic(0.3).unwrap(),
        ];
        for g in &maps {
            let mut halton = Halton::new(2);
            let mut u = [0.0; 2];
            for _ in 0..2000 {
                halton.next_point(&mut u);
                let i1 = to_symmetric(u[0], 10.0);
                let i2 = i1 + 20.0 * u[1];
                assert!(g.apply(-i1) >= g.apply(-i2));
            }
        }
    }

    #[test]
    fn linear_proper_is_affine_in_r() {
        let op = linear(1.7, "x0", 0.3);
        let x = [0.4, -0.2];
        let m = [[0.5, 0.1], [0.1, -0.3]];
        let base = op.eval_local(&x, 1.0, &zero_vec(), &m).unwrap();
        for delta in [0.25, 1.0, 4.0] {
            let v = op.eval_local(&x, 1.0 + delta, &zero_vec(), &m).unwrap();
            assert!((v - base - 1.7 * delta).abs() < 1e-12);
        }
    }
}
