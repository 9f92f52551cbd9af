//! Local maximum-entropy (max-ent) shape functions.
//!
//! For a material point at `x` with support nodes `x_I`, the shape values
//! are the exponential family N_I = Z_I/Z with Z_I = exp(−β‖x−x_I‖² + λ·(x−x_I)),
//! where the Lagrange multiplier λ enforces first-order completeness
//! Σ N_I (x − x_I) = 0. λ is found by a damped Newton iteration with the
//! exact Jacobian J(λ) = Σ N_I r_I r_Iᵀ − R Rᵀ (r_I = x − x_I, R = Σ N_I r_I).
//!
//! Spatial gradients use the closed form B_I = −N_I · J⁻¹ (r_I − R),
//! obtained by differentiating the converged stationarity condition; the
//! shifted moment arm (r_I − R) makes Σ B_I = 0 and Σ x_I ⊗ B_I = I hold to
//! machine precision even at finite solver tolerance (R → 0 at convergence,
//! so this coincides with the classical −N·J⁻¹r form).
//!
//! `dim` restricts the constraint to the first `dim` coordinates (3 for
//! solid decks, 2 for plane problems, 1 for line tests); trailing
//! components of all gradients are exactly zero.

use crate::error::{Error, Result};
use crate::math::{solve3, Mat3, Vec3};

/// Default Newton tolerance on the constraint residual, relative to the
/// nodal spacing h.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Default Newton iteration cap.
pub const DEFAULT_MAX_ITERATIONS: usize = 50;

/// Computes the locality parameter β = γ/h².
pub fn locality(gamma: f64, spacing: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(spacing > 0.0) {
        return Err(Error::Config(format!(
            "locality requires positive gamma and spacing, got gamma = {gamma}, h = {spacing}"
        )));
    }
    Ok(gamma / (spacing * spacing))
}

/// Parameters of one shape evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    /// Locality parameter γ (dimensionless); useful range ≈ [0.8, 4].
    pub gamma: f64,
    /// Characteristic nodal spacing h, m (distance to the nearest support
    /// node at the last search).
    pub spacing: f64,
    /// β = γ/h², 1/m².
    pub beta: f64,
    /// Active coordinate count (1, 2, or 3).
    pub dim: usize,
    /// Newton tolerance on ‖Σ N_I r_I‖, relative to `spacing`.
    pub tolerance: f64,
    /// Newton iteration cap.
    pub max_iterations: usize,
}

impl ShapeParams {
    pub fn new(gamma: f64, spacing: f64, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("shape dim must be 1..=3, got {dim}")));
        }
        Ok(ShapeParams {
            gamma,
            spacing,
            beta: locality(gamma, spacing)?,
            dim,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        })
    }
}

/// Result of a shape evaluation, aligned with the input node order.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEval {
    /// Shape values N_I; Σ N = 1.
    pub values: Vec<f64>,
    /// Shape gradients B_I, 1/m; Σ B = 0.
    pub gradients: Vec<Vec3>,
    /// Converged Lagrange multiplier λ.
    pub lambda: Vec3,
    /// Newton iterations used.
    pub iterations: usize,
}

/// Zeroes the coordinates at and beyond `dim`.
fn mask(v: Vec3, dim: usize) -> Vec3 {
    let mut out = v;
    for a in dim..3 {
        out[a] = 0.0;
    }
    out
}

/// Shape values and the dual objective log Σ exp(−β d² + λ·r) at `lambda`,
/// via a log-sum-exp shift for overflow safety (the shift cancels in the
/// normalization). The dual is smooth and convex in λ with gradient
/// Σ N_I r_I and Hessian Σ N r rᵀ − R Rᵀ, so it serves as the line-search
/// merit function for the Newton iteration.
fn shape_values(r: &[Vec3], d2: &[f64], beta: f64, lambda: &Vec3) -> (Vec<f64>, f64) {
    let mut f = Vec::with_capacity(r.len());
    let mut fmax = f64::NEG_INFINITY;
    for i in 0..r.len() {
        let fi = -beta * d2[i] + lambda.dot(&r[i]);
        fmax = fmax.max(fi);
        f.push(fi);
    }
    let mut sum = 0.0;
    for fi in f.iter_mut() {
        *fi = (*fi - fmax).exp();
        sum += *fi;
    }
    let dual = fmax + sum.ln();
    for fi in f.iter_mut() {
        *fi /= sum;
    }
    (f, dual)
}

fn constraint_residual(values: &[f64], r: &[Vec3]) -> Vec3 {
    let mut res = Vec3::zeros();
    for (n, ri) in values.iter().zip(r) {
        res += *n * ri;
    }
    res
}

/// Constraint Jacobian J(λ) = Σ N r rᵀ − R Rᵀ, padded with identity on the
/// inactive coordinates so 3x3 solves stay well-posed in 1-D/2-D.
fn constraint_jacobian(values: &[f64], r: &[Vec3], res: &Vec3, dim: usize) -> Mat3 {
    let mut j = Mat3::zeros();
    for (n, ri) in values.iter().zip(r) {
        j += *n * ri * ri.transpose();
    }
    j -= res * res.transpose();
    for a in dim..3 {
        j[(a, a)] = 1.0;
    }
    j
}

/// Newton solution of the max-ent multiplier. Returns (λ, N values,
/// iterations). `tolerance_abs` bounds the constraint residual norm in
/// meters (callers pass tolerance·h).
pub fn solve_lambda(
    x: &Vec3,
    nodes: &[Vec3],
    beta: f64,
    dim: usize,
    tolerance_abs: f64,
    max_iterations: usize,
) -> Result<(Vec3, Vec<f64>, usize)> {
    if nodes.is_empty() {
        return Err(Error::EmptySupport);
    }
    let r: Vec<Vec3> = nodes.iter().map(|n| mask(x - n, dim)).collect();
    let d2: Vec<f64> = r.iter().map(|ri| ri.norm_squared()).collect();

    let mut lambda = Vec3::zeros();
    let (mut values, mut dual) = shape_values(&r, &d2, beta, &lambda);
    let mut res = constraint_residual(&values, &r);
    let mut res_norm = res.norm();

    for iteration in 0..max_iterations {
        if res_norm <= tolerance_abs {
            return Ok((lambda, values, iteration));
        }
        let j = constraint_jacobian(&values, &r, &res, dim);
        // Newton direction where the Hessian solve is usable; otherwise a
        // trace-scaled gradient direction (the Hessian degenerates when a
        // single shape value saturates far from the solution).
        let step = match solve3(&j, &res) {
            Some(s) if res.dot(&s).is_finite() && res.dot(&s) > 0.0 => s,
            _ => res / j.trace(),
        };
        let slope = res.dot(&step);

        // Backtrack on the dual objective (Armijo), which damped Newton
        // decreases from any starting point. Near the solution the dual
        // change sinks below float resolution while the full Newton step
        // still contracts the residual quadratically, so strong residual
        // contraction is accepted as well.
        let mut scale = 1.0f64;
        let mut improved = false;
        for _ in 0..32 {
            let candidate = lambda - scale * step;
            let (cand_values, cand_dual) = shape_values(&r, &d2, beta, &candidate);
            let cand_res = constraint_residual(&cand_values, &r);
            let cand_norm = cand_res.norm();
            let descended = cand_dual <= dual - 1e-4 * scale * slope;
            let contracted = (scale == 1.0 && cand_norm <= 0.25 * res_norm)
                || (res_norm <= 1e3 * tolerance_abs && cand_norm < res_norm);
            if descended || contracted {
                lambda = candidate;
                values = cand_values;
                dual = cand_dual;
                res = cand_res;
                res_norm = cand_norm;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            // Stagnated at the floating-point floor of the merit functions.
            if res_norm <= tolerance_abs {
                return Ok((lambda, values, iteration));
            }
            return Err(Error::ShapeNonConvergence {
                residual: res_norm,
                iterations: iteration,
                tolerance: tolerance_abs,
            });
        }
    }
    if res_norm <= tolerance_abs {
        return Ok((lambda, values, max_iterations));
    }
    Err(Error::ShapeNonConvergence {
        residual: res_norm,
        iterations: max_iterations,
        tolerance: tolerance_abs,
    })
}

/// Evaluates shape values and spatial gradients at `x` over `nodes`.
pub fn evaluate(x: &Vec3, nodes: &[Vec3], params: &ShapeParams) -> Result<ShapeEval> {
    let tolerance_abs = params.tolerance * params.spacing;
    let (lambda, values, iterations) = solve_lambda(
        x,
        nodes,
        params.beta,
        params.dim,
        tolerance_abs,
        params.max_iterations,
    )?;

    let r: Vec<Vec3> = nodes.iter().map(|n| mask(x - n, params.dim)).collect();
    let res = constraint_residual(&values, &r);
    let j = constraint_jacobian(&values, &r, &res, params.dim);
    let j_inv = j.try_inverse().ok_or(Error::DegenerateSupport)?;

    let gradients: Vec<Vec3> = values
        .iter()
        .zip(&r)
        .map(|(n, ri)| mask(-(*n) * (j_inv * (ri - res)), params.dim))
        .collect();

    Ok(ShapeEval {
        values,
        gradients,
        lambda,
        iterations,
    })
}
