//! Small numeric helpers shared across modules: fixed-size vector/matrix
//! aliases, a deterministic symmetric 3x3 eigensolver, and tensor utilities.
//!
//! Everything here is branch-deterministic: identical input bits produce
//! identical output bits on every worker, which is what makes multi-worker
//! runs bitwise-reproducible.

use nalgebra::{Matrix3, Vector3};

/// Scalar type used throughout the solver.
pub type Real = f64;
/// 3-component column vector (positions m, forces N, ...).
pub type Vec3 = Vector3<Real>;
/// 3x3 matrix (deformation gradients, stress tensors, ...).
pub type Mat3 = Matrix3<Real>;

/// Deviatoric part: `m - tr(m)/3 * I`.
pub fn deviator(m: &Mat3) -> Mat3 {
    let p = m.trace() / 3.0;
    let mut d = *m;
    d[(0, 0)] -= p;
    d[(1, 1)] -= p;
    d[(2, 2)] -= p;
    d
}

/// Frobenius norm of the deviatoric part.
pub fn deviator_norm(m: &Mat3) -> Real {
    deviator(m).norm()
}

/// Von Mises equivalent stress `sqrt(3/2)*||dev(sigma)||` of a Cauchy stress.
pub fn von_mises(sigma: &Mat3) -> Real {
    (1.5f64).sqrt() * deviator_norm(sigma)
}

/// Solves the 3x3 system `a * x = b`; `None` when `a` is singular.
pub fn solve3(a: &Mat3, b: &Vec3) -> Option<Vec3> {
    a.lu().solve(b)
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvector columns, so `q * diag(vals) * q^T` reconstructs the input.
/// The sweep order, rotation formulas, and the ascending sort (ties kept in
/// sweep order) are fixed, making the result a pure function of the input
/// bits. Repeated eigenvalues need no special casing: the rotations keep the
/// accumulated basis orthonormal, so reconstruction stays accurate for
/// clustered spectra; off-diagonal entries below ~1e-14 of the matrix scale
/// count as converged.
pub fn sym_eigen(m: &Mat3) -> ([Real; 3], Mat3) {
    // Work on the symmetrized input to shed asymmetric rounding dust.
    let mut a = 0.5 * (m + m.transpose());
    let mut q = Mat3::identity();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;

    for _sweep in 0..64 {
        let off = (a[(0, 1)] * a[(0, 1)] + a[(0, 2)] * a[(0, 2)] + a[(1, 2)] * a[(1, 2)]).sqrt();
        if off <= tol {
            break;
        }
        for &(p, r) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apr = a[(p, r)];
            if apr.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[(r, r)] - a[(p, p)]) / (2.0 * apr);
            // Smaller-angle root of t^2 + 2t*theta - 1 = 0 (Rutishauser).
            let t = if theta.abs() > 1e150 {
                0.5 / theta
            } else {
                let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                sgn / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;

            // A <- J^T A J applied to the symmetric storage.
            let app = a[(p, p)];
            let arr = a[(r, r)];
            a[(p, p)] = app - t * apr;
            a[(r, r)] = arr + t * apr;
            a[(p, r)] = 0.0;
            a[(r, p)] = 0.0;
            let other = 3 - p - r;
            let aop = a[(other, p)];
            let aor = a[(other, r)];
            a[(other, p)] = c * aop - s * aor;
            a[(p, other)] = a[(other, p)];
            a[(other, r)] = s * aop + c * aor;
            a[(r, other)] = a[(other, r)];

            // Accumulate Q <- Q J.
            for row in 0..3 {
                let qip = q[(row, p)];
                let qir = q[(row, r)];
                q[(row, p)] = c * qip - s * qir;
                q[(row, r)] = s * qip + c * qir;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    // Insertion sort by eigenvalue with total float order: deterministic,
    // stable for ties.
    for i in 1..3 {
        let mut j = i;
        while j > 0 && a[(order[j], order[j])].total_cmp(&a[(order[j - 1], order[j - 1])]).is_lt()
        {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let vals = [
        a[(order[0], order[0])],
        a[(order[1], order[1])],
        a[(order[2], order[2])],
    ];
    let mut vecs = Mat3::zeros();
    for (col, &src) in order.iter().enumerate() {
        for row in 0..3 {
            vecs[(row, col)] = q[(row, src)];
        }
    }
    (vals, vecs)
}

/// Reassembles `q * diag(vals) * q^T` (inverse of [`sym_eigen`]).
pub fn from_principal(vals: &[Real; 3], q: &Mat3) -> Mat3 {
    let mut out = Mat3::zeros();
    for k in 0..3 {
        let col = q.column(k);
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] += vals[k] * col[i] * col[j];
            }
        }
    }
    out
}
