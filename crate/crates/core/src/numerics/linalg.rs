use nalgebra::{Cholesky, SVD};

use super::{check_finite_mat, max_abs, Mat, NumericsError, Tolerances};

/// Solves the discrete Lyapunov equation `P - A_clᵀ P A_cl = Q`.
///
/// The equation is vectorized as `(I - A_clᵀ ⊗ A_clᵀ) vec(P) = vec(Q)` and
/// solved with a dense LU factorization, which is exact enough for the state
/// dimensions this crate handles (n ≤ 20). The result is symmetrized.
pub fn solve_dlyap(a_cl: &Mat, q: &Mat) -> Result<Mat, NumericsError> {
    let n = a_cl.nrows();
    if a_cl.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(NumericsError::Dimension(format!(
            "solve_dlyap expects square A ({}x{}) and Q ({}x{}) of equal size",
            a_cl.nrows(),
            a_cl.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    check_finite_mat(a_cl, "A_cl")?;
    check_finite_mat(q, "Q")?;
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }

    let at = a_cl.transpose();
    let kron = at.kronecker(&at);
    let system = Mat::identity(n * n, n * n) - kron;
    let lu = system.clone().lu();
    let u = lu.u();
    let diag_max = u.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diag_min = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if diag_max == 0.0 || diag_min <= 1e-13 * diag_max.max(1.0) {
        return Err(NumericsError::SingularSystem);
    }

    // column-major storage makes `as_slice` exactly vec(Q)
    let rhs = nalgebra::DVector::from_column_slice(q.as_slice());
    let mut sol = lu.solve(&rhs).ok_or(NumericsError::SingularSystem)?;
    // one round of iterative refinement
    let resid = &rhs - &system * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    let p = Mat::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;

    let residual = max_abs(&(&p - a_cl.transpose() * &p * a_cl - q));
    let bound = Tolerances::DEFAULT.lyapunov_residual * max_abs(q).max(1.0);
    if !residual.is_finite() || residual > bound {
        return Err(NumericsError::SingularSystem);
    }
    Ok(p)
}

/// True iff `m` is symmetric positive definite (Cholesky succeeds).
pub fn spd_check(m: &Mat) -> bool {
    if m.nrows() != m.ncols() || !m.iter().all(|v| v.is_finite()) {
        return false;
    }
    let sym = (m + m.transpose()) * 0.5;
    Cholesky::new(sym).is_some()
}

/// Schur stability test without an eigensolver.
///
/// `A_cl` is Schur iff `P - A_clᵀ P A_cl = I` has a positive definite
/// solution. Because `trace(P) = Σ_k ‖A_clᵏ‖²_F ≥ 1/(1 - ρ²)`, solutions whose
/// trace exceeds `1/(1 - (1 - margin)²)` are rejected as marginal.
pub fn is_schur(a_cl: &Mat) -> bool {
    let n = a_cl.nrows();
    if a_cl.ncols() != n {
        return false;
    }
    if n == 0 {
        return true;
    }
    let p = match solve_dlyap(a_cl, &Mat::identity(n, n)) {
        Ok(p) => p,
        Err(_) => return false,
    };
    if !spd_check(&p) {
        return false;
    }
    let r = 1.0 - Tolerances::DEFAULT.schur_margin;
    p.trace() < 1.0 / (1.0 - r * r)
}

/// Infinite-horizon discrete LQR by fixed-point Riccati iteration.
///
/// Returns `(K, P)` with the convention `u = K x`, so the closed loop is
/// `A + B K`.
pub fn dlqr(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<(Mat, Mat), NumericsError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(NumericsError::Dimension(format!(
            "dlqr: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    for (mat, name) in [(a, "A"), (b, "B"), (q, "Q"), (r, "R")] {
        check_finite_mat(mat, name)?;
    }
    let tol = Tolerances::DEFAULT;
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for _ in 0..tol.riccati_max_iter {
        let s = r + &bt * &p * b;
        let s_chol = Cholesky::new((&s + s.transpose()) * 0.5)
            .ok_or(NumericsError::NoConvergence(0))?;
        let bpa = &bt * &p * a;
        let gain = s_chol.solve(&bpa);
        let next = q + &at * &p * a - &at * &p * b * &gain;
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let step = max_abs(&(&next - &p));
        p = next;
        if step < tol.riccati_step * max_abs(&p).max(1.0) {
            let s = r + &bt * &p * b;
            let s_chol = Cholesky::new((&s + s.transpose()) * 0.5)
                .ok_or(NumericsError::NoConvergence(0))?;
            let k = -s_chol.solve(&(&bt * &p * a));
            if !is_schur(&(a + b * &k)) {
                return Err(NumericsError::NoConvergence(tol.riccati_max_iter));
            }
            return Ok((k, p));
        }
    }
    Err(NumericsError::NoConvergence(tol.riccati_max_iter))
}

/// Induced ∞-norm (maximum absolute row sum).
pub fn induced_inf_norm(m: &Mat) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Orthonormal basis of the null space of `s`, one basis vector per column.
///
/// Each column is sign-normalized so that its largest-magnitude entry is
/// positive, which makes the basis reproducible for rank-one null spaces.
pub fn null_space(s: &Mat, rel_tol: f64) -> Mat {
    let cols = s.ncols();
    if cols == 0 {
        return Mat::zeros(0, 0);
    }
    // pad to square so the SVD yields a full right basis
    let rows = s.nrows().max(cols);
    let mut padded = Mat::zeros(rows, cols);
    padded.view_mut((0, 0), (s.nrows(), cols)).copy_from(s);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sigma_max = svd.singular_values.iter().fold(0.0_f64, |a, v| a.max(*v));
    let thresh = rel_tol * sigma_max.max(1.0);

    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    for (i, sv) in svd.singular_values.iter().enumerate() {
        if *sv <= thresh {
            let mut v: nalgebra::DVector<f64> = v_t.row(i).transpose();
            let (imax, _) = v
                .iter()
                .enumerate()
                .fold((0, 0.0_f64), |(bi, bv), (j, x)| {
                    if x.abs() > bv + 1e-12 {
                        (j, x.abs())
                    } else {
                        (bi, bv)
                    }
                });
            if v[imax] < 0.0 {
                v = -v;
            }
            basis.push(v);
        }
    }
    if basis.is_empty() {
        return Mat::zeros(cols, 0);
    }
    Mat::from_columns(&basis)
}

/// Numerical rank of the controllability matrix `[B, AB, …, Aⁿ⁻¹B]`.
pub fn controllability_rank(a: &Mat, b: &Mat) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = Mat::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    let sv = ctrb.singular_values();
    let smax = sv.iter().fold(0.0_f64, |a, v| a.max(*v));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-10 * smax.max(1.0)).count()
}
