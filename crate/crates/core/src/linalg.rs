//! Small dense linear-algebra helpers shared by the objective builders and
//! the assumption checkers.

use nalgebra::{DMatrix, DVector};

/// Largest eigenvalue of the symmetric PSD matrix `AᵀA` by power iteration.
///
/// Iterates until the Rayleigh quotient changes by less than `tol` relative.
pub fn lambda_max_gram(a: &DMatrix<f64>, tol: f64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // Deterministic, generically non-orthogonal start.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
    v /= v.norm();
    let mut lambda = 0.0_f64;
    for _ in 0..200_000 {
        let w = a.transpose() * (a * &v);
        let rq = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (rq - lambda).abs() <= tol * rq.abs().max(f64::MIN_POSITIVE) {
            return rq.max(norm);
        }
        lambda = rq;
    }
    lambda
}

/// Spectral norm `‖A‖₂`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    lambda_max_gram(a, 1e-13).sqrt()
}

/// Minimum-norm least-squares solution of `Ax ≈ b` via SVD.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    svd.solve(b, eps)
        .expect("SVD computed with both U and Vᵀ")
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_abs_max_eig(m: DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &e| acc.max(e.abs()))
}

/// Estimate of the operator norm `sup_{‖u‖=1} |Σᵢ cᵢ (rowᵢ·u)^k|` of the
/// symmetric rank-n tensor `Σᵢ cᵢ rowᵢ^{⊗k}`, by the symmetric higher-order
/// power method restarted from every normalized row.
///
/// The returned value is attained at a unit vector, so it never exceeds the
/// true norm.
pub fn sym_tensor_norm(rows: &DMatrix<f64>, coeffs: &[f64], order: u32) -> f64 {
    let d = rows.ncols();
    let eval = |u: &DVector<f64>| -> (f64, DVector<f64>) {
        let z = rows * u;
        let mut val = 0.0;
        let mut g = DVector::zeros(d);
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            val += c * z[i].powi(order as i32);
            g.axpy(c * z[i].powi(order as i32 - 1), &rows.row(i).transpose(), 1.0);
        }
        (val, g)
    };
    let mut best = 0.0_f64;
    for i in 0..rows.nrows() {
        let r = rows.row(i).transpose();
        let n = r.norm();
        if n == 0.0 {
            continue;
        }
        let mut u = r / n;
        for _ in 0..200 {
            let (val, g) = eval(&u);
            best = best.max(val.abs());
            let gn = g.norm();
            if gn == 0.0 {
                break;
            }
            let next = g / gn;
            // Odd orders may flip sign; either sign gives the same |T(u^k)|.
            let step = (&next - &u).norm().min((&next + &u).norm());
            u = next;
            if step < 1e-13 {
                break;
            }
        }
        best = best.max(eval(&u).0.abs());
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_matches_eigendecomposition() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.5, 3.0, 1.0, 0.0, -1.0, 1.5]);
        let exact = sym_abs_max_eig(a.transpose() * &a);
        let pi = lambda_max_gram(&a, 1e-10);
        assert!((pi - exact).abs() <= 1e-8 * exact, "{pi} vs {exact}");
    }

    #[test]
    fn lstsq_min_norm_for_rank_deficient() {
        // Rank one: x1 + x2 = 2 has minimum-norm solution (1, 1).
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let x = min_norm_lstsq(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_norm_of_single_row_is_exact() {
        let rows = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let n = sym_tensor_norm(&rows, &[2.0], 4);
        assert!((n - 2.0 * 625.0).abs() < 1e-9);
    }
}
