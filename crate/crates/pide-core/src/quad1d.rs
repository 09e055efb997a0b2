//! Small adaptive quadrature helpers for radial integrals of Lévy densities.
//!
//! Integrands here are smooth away from the origin but may be non-integrably
//! singular at zero or heavy at infinity; the routines integrate over dyadic
//! blocks and decide convergence from the decay of block contributions.

use crate::error::{CoreError, Result};

/// Adaptive Simpson on a finite interval with smooth integrand.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }

    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        if depth > 60 {
            return Err(CoreError::NonConvergentQuadrature(format!(
                "recursion budget exhausted on [{a}, {b}]"
            )));
        }
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            Ok(left + right + delta / 15.0)
        } else {
            let l = recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth + 1)?;
            let r = recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth + 1)?;
            Ok(l + r)
        }
    }

    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 0)
}

/// ∫_lo^hi f ds where f may blow up at lo = 0+. Integrates dyadic blocks
/// [hi/2^{k+1}, hi/2^k] toward the origin and sums until the block
/// contributions decay geometrically; reports divergence when they do not.
pub fn integrate_toward_origin<F: Fn(f64) -> f64>(f: &F, hi: f64, tol: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut right = hi;
    let mut prev_block: Option<f64> = None;
    for _ in 0..2048 {
        let left = 0.5 * right;
        let block = adaptive_simpson(f, left, right, tol * 1e-3)?;
        total += block;
        if let Some(p) = prev_block {
            // Converged once blocks are negligible and shrinking.
            if block.abs() <= tol * total.abs().max(1.0) && block.abs() <= p.abs() {
                return Ok(total);
            }
            // Non-decaying blocks near the origin mean a non-integrable
            // singularity.
            if block.abs() > 0.999 * p.abs() && block.abs() > tol {
                return Err(CoreError::NonConvergentQuadrature(format!(
                    "block contributions do not decay toward 0 (last two: {p:.3e}, {block:.3e})"
                )));
            }
        }
        prev_block = Some(block);
        right = left;
    }
    Err(CoreError::NonConvergentQuadrature(
        "block budget exhausted near the origin".into(),
    ))
}

/// ∫_lo^∞ f ds over dyadic blocks [lo·2^k, lo·2^{k+1}]; divergence is reported
/// when block contributions fail to decay.
pub fn integrate_tail<F: Fn(f64) -> f64>(f: &F, lo: f64, tol: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut left = lo;
    let mut prev_block: Option<f64> = None;
    for _ in 0..2048 {
        let right = 2.0 * left;
        let block = adaptive_simpson(f, left, right, tol * 1e-3)?;
        total += block;
        if let Some(p) = prev_block {
            if block.abs() <= tol * total.abs().max(1.0) && block.abs() <= p.abs() {
                return Ok(total);
            }
            if block.abs() > 0.999 * p.abs() && block.abs() > tol {
                return Err(CoreError::DivergentTail(format!(
                    "block contributions do not decay at infinity (last two: {p:.3e}, {block:.3e})"
                )));
            }
        }
        prev_block = Some(block);
        left = right;
    }
    Err(CoreError::DivergentTail("block budget exhausted".into()))
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Tricomi's initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
