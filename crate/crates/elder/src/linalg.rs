//! Small dense and iterative solvers backing the proximal operators and
//! their oracles. Kept dependency-free on purpose: the dense route and the
//! CG route must stay independent so they can check each other.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Solve `A x = b` for a symmetric positive definite `A` (row-major `n x n`)
/// by Cholesky factorization.
pub fn spd_solve(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n, "spd_solve: matrix size");
    assert_eq!(b.len(), n, "spd_solve: rhs size");
    // lower-triangular factor, in place in a copy
    let mut l = a.to_vec();
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::numeric(format!(
                "spd_solve: non-positive pivot {d} at column {j}"
            )));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut v = l[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / d;
        }
    }
    // forward substitution L y = b
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    // back substitution L^T x = y
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Ok(y)
}

/// Conjugate gradients for `op(x) = b` with `op` symmetric positive
/// definite. Starts from zero; stops when the residual drops below
/// `tol_rel * ||b||`. Errors with the reached residual if the budget runs
/// out, and on indefiniteness.
pub fn conjugate_gradient<F>(
    op: F,
    b: &Tensor,
    tol_rel: f64,
    max_iters: usize,
) -> Result<(Tensor, f64, usize)>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let bnorm = b.norm2();
    if bnorm == 0.0 {
        return Ok((Tensor::zeros(b.shape()), 0.0, 0));
    }
    let mut x = Tensor::zeros(b.shape());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm2_sq();
    for it in 0..max_iters {
        if rs.sqrt() <= tol_rel * bnorm {
            return Ok((x, rs.sqrt() / bnorm, it));
        }
        let ap = op(&p)?;
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::numeric(format!(
                "conjugate gradients: operator not positive definite (p^T A p = {pap})"
            )));
        }
        let alpha = rs / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_new = r.norm2_sq();
        let beta = rs_new / rs;
        p = r.add(&p.scale(beta));
        rs = rs_new;
    }
    if rs.sqrt() <= tol_rel * bnorm {
        return Ok((x, rs.sqrt() / bnorm, max_iters));
    }
    Err(Error::numeric(format!(
        "conjugate gradients: no convergence in {max_iters} iterations \
         (relative residual {:.3e}, tolerance {tol_rel:.3e})",
        rs.sqrt() / bnorm
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cholesky_solves_a_known_system() {
        // A = [[4,2],[2,3]], b = [10, 9] -> x = [1.5, 2]
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = spd_solve(&a, 2, &[10.0, 9.0]).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        assert!(spd_solve(&a, 2, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn cg_matches_dense_solve_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 12;
        let m = Tensor::randn(&[n, n], &mut rng);
        // A = M^T M + I is SPD
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    s += m.data()[k * n + i] * m.data()[k * n + j];
                }
                a[i * n + j] = s;
            }
        }
        let b = Tensor::randn(&[n], &mut rng);
        let dense = spd_solve(&a, n, b.data()).unwrap();
        let (x, res, iters) = conjugate_gradient(
            |v| {
                let mut out = vec![0.0; n];
                for i in 0..n {
                    out[i] = (0..n).map(|j| a[i * n + j] * v.data()[j]).sum();
                }
                Tensor::from_vec(&[n], out)
            },
            &b,
            1e-12,
            200,
        )
        .unwrap();
        assert!(res <= 1e-12 && iters <= 200);
        for i in 0..n {
            assert!((x.data()[i] - dense[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let b = Tensor::zeros(&[5]);
        let (x, res, iters) = conjugate_gradient(|v| Ok(v.clone()), &b, 1e-10, 10).unwrap();
        assert_eq!(x, Tensor::zeros(&[5]));
        assert_eq!((res, iters), (0.0, 0));
    }

    #[test]
    fn cg_reports_nonconvergence() {
        // One iteration budget on a general SPD system cannot converge.
        let a = [4.0, 2.0, 2.0, 3.0];
        let b = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        let err = conjugate_gradient(
            |v| {
                Tensor::from_vec(
                    &[2],
                    vec![
                        a[0] * v.data()[0] + a[1] * v.data()[1],
                        a[2] * v.data()[0] + a[3] * v.data()[1],
                    ],
                )
            },
            &b,
            1e-14,
            1,
        );
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
