//! Dense linear-algebra helpers shared by the solvers and the factorization code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value cutoff for the pseudoinverse.
pub const PINV_RCOND: f64 = 1e-12;
/// Relative tolerance on the estimated error of the power-iteration eigenvalue.
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy)]
pub struct PowerIteration {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Deterministic start vector. Uniform vectors are avoided because they lie in the
/// null space of circulant Gram matrices built from nonzero frequencies.
fn start_vector(m: usize) -> DVector<f64> {
    let v = DVector::from_fn(m, |i, _| 1.0 + ((i as f64 + 1.0) * 0.754_877_666_246_692_7).fract());
    let norm = v.norm();
    v / norm
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
///
/// Stops when the extrapolated error of the Rayleigh quotient (last increment divided
/// by one minus the observed contraction ratio) drops below `tol` relative.
pub fn power_iteration(b: &DMatrix<f64>, tol: f64, max_iter: usize) -> PowerIteration {
    let m = b.nrows();
    if m == 0 {
        return PowerIteration {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut v = start_vector(m);
    let mut w = b * &v;
    let mut rho = v.dot(&w);
    let mut prev_step = f64::INFINITY;
    for it in 1..=max_iter {
        let norm = w.norm();
        if norm == 0.0 {
            return PowerIteration {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        v = w / norm;
        w = b * &v;
        let next = v.dot(&w);
        let step = (next - rho).abs();
        rho = next;
        let ratio = if prev_step.is_finite() && prev_step > 0.0 {
            (step / prev_step).min(0.999_999)
        } else {
            0.0
        };
        prev_step = step;
        let est_err = step / (1.0 - ratio);
        if it > 1 && est_err <= tol * rho.abs() {
            return PowerIteration {
                value: rho,
                iterations: it,
                converged: true,
            };
        }
    }
    PowerIteration {
        value: rho,
        iterations: max_iter,
        converged: false,
    }
}

/// Moore-Penrose pseudoinverse through the SVD, discarding singular values below
/// `rcond * sigma_max`.
pub fn pinv(d: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (n, m) = d.shape();
    if n == 0 || m == 0 {
        return DMatrix::zeros(m, n);
    }
    let svd = d.clone().svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let smax = svd.singular_values.max();
    let cutoff = rcond * smax;
    let k = svd.singular_values.len();
    let mut out = DMatrix::zeros(m, n);
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > cutoff && s > 0.0 {
            let vi = vt.row(i).transpose();
            let ui = u.column(i);
            out += (vi * ui.transpose()) / s;
        }
    }
    out
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest and largest eigenvalues of a symmetric matrix, with the eigenvector of
/// the smallest one.
#[derive(Debug, Clone)]
pub struct Extremes {
    pub min: f64,
    pub max: f64,
    pub min_vector: DVector<f64>,
}

pub fn sym_extremes(m: &DMatrix<f64>) -> Extremes {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut imin = 0;
    let mut imax = 0;
    for i in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    Extremes {
        min: eig.eigenvalues[imin],
        max: eig.eigenvalues[imax],
        min_vector: eig.eigenvectors.column(imin).into_owned(),
    }
}

/// Operator 2-norm of an arbitrary matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Closest orthogonal matrix in Frobenius norm, `U Vᵀ` from `A = U Σ Vᵀ`.
/// The flag reports a numerically rank-deficient input, for which the result is
/// one of several minimizers.
pub fn polar_orthogonal(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let deficient = smax == 0.0 || smin <= 1e-12 * smax;
    (u * vt, deficient)
}

pub fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Number of entries with magnitude above `tol`.
pub fn count_nonzero(v: &DVector<f64>, tol: f64) -> usize {
    v.iter().filter(|x| x.abs() > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_matches_eigensolver() {
        let a = DMatrix::from_fn(7, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin());
        let b = a.transpose() * &a;
        let p = power_iteration(&b, POWER_TOL, POWER_MAX_ITER);
        let e = sym_extremes(&b);
        assert!(p.converged);
        assert!((p.value - e.max).abs() <= 1e-9 * e.max);
    }

    #[test]
    fn power_iteration_handles_circulant_null_direction() {
        // Circulant matrix whose all-ones vector is in the null space.
        let m = 8;
        let b = DMatrix::from_fn(m, m, |i, j| {
            let d = i as f64 - j as f64;
            (2.0 * std::f64::consts::PI * d * 3.0 / m as f64).cos()
        });
        let p = power_iteration(&b, POWER_TOL, POWER_MAX_ITER);
        let e = sym_extremes(&b);
        assert!((p.value - e.max).abs() <= 1e-9 * e.max);
    }

    #[test]
    fn pinv_of_wide_matrix_is_right_inverse() {
        let d = DMatrix::from_fn(3, 6, |i, j| ((i + 1) as f64 * (j as f64 + 0.5).powi(2)).sin());
        let p = pinv(&d, PINV_RCOND);
        let id = &d * &p;
        assert!((id - DMatrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn pinv_handles_rank_deficiency() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let p = pinv(&d, PINV_RCOND);
        // Penrose conditions.
        assert!((&d * &p * &d - &d).norm() < 1e-12);
        assert!((&p * &d * &p - &p).norm() < 1e-12);
    }

    #[test]
    fn polar_of_scaled_identity() {
        let (q, flag) = polar_orthogonal(&(DMatrix::<f64>::identity(4, 4) * 2.0));
        assert!(!flag);
        assert!((q - DMatrix::<f64>::identity(4, 4)).norm() < 1e-12);
    }
}
