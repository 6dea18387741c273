//! Dual active-set quadratic programming (Goldfarb–Idnani).
//!
//! ```text
//! minimize ½ zᵀHz + qᵀz  subject to  G z ≤ h,  E z = f
//! ```
//!
//! With `H = LLᵀ` and `y = Lᵀz` the objective becomes `½|y + L⁻¹q|²`, so the
//! primal step and the dual step of every iteration reduce to a projection
//! onto the span of the (transformed) active normals. Those projections are
//! recomputed from a fresh QR factorization at each iteration, which is cheap
//! at the sizes used here and avoids drift from rank-one updates.

// Tableau and active-set updates read most clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

use nalgebra::Cholesky;

use super::{check_finite_mat, check_finite_vec, max_abs, Mat, NumericsError, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: Mat,
    pub linear: Vector,
    pub g: Mat,
    pub h: Vector,
    pub e: Mat,
    pub f: Vector,
}

impl QpProblem {
    /// Builds a QP, symmetrizing the Hessian.
    pub fn new(
        hessian: Mat,
        linear: Vector,
        g: Mat,
        h: Vector,
        e: Mat,
        f: Vector,
    ) -> Result<Self, NumericsError> {
        let d = linear.len();
        if hessian.shape() != (d, d)
            || g.ncols() != d
            || g.nrows() != h.len()
            || e.ncols() != d
            || e.nrows() != f.len()
        {
            return Err(NumericsError::Dimension(format!(
                "QP with {} variables: H {:?}, G {:?}, h {}, E {:?}, f {}",
                d,
                hessian.shape(),
                g.shape(),
                h.len(),
                e.shape(),
                f.len()
            )));
        }
        check_finite_mat(&hessian, "H")?;
        check_finite_vec(&linear, "q")?;
        check_finite_mat(&g, "G")?;
        check_finite_vec(&h, "h")?;
        check_finite_mat(&e, "E")?;
        check_finite_vec(&f, "f")?;
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        Ok(QpProblem {
            hessian,
            linear,
            g,
            h,
            e,
            f,
        })
    }

    /// Inequality-constrained QP without equalities.
    pub fn inequality(hessian: Mat, linear: Vector, g: Mat, h: Vector) -> Result<Self, NumericsError> {
        let d = linear.len();
        Self::new(hessian, linear, g, h, Mat::zeros(0, d), Vector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// ∞-norm KKT residuals `(stationarity, primal feasibility, complementarity)`
    /// of a candidate primal/dual pair.
    pub fn kkt_residuals(&self, z: &Vector, lambda: &Vector, nu: &Vector) -> (f64, f64, f64) {
        let stat = &self.hessian * z + &self.linear + self.g.transpose() * lambda + self.e.transpose() * nu;
        let slack = &self.h - &self.g * z;
        let ineq = slack.iter().fold(0.0_f64, |m, s| m.max(-s));
        let eq = (&self.e * z - &self.f).amax();
        let dual = lambda.iter().fold(0.0_f64, |m, l| m.max(-l));
        let comp = lambda
            .iter()
            .zip(slack.iter())
            .fold(0.0_f64, |m, (l, s)| m.max((l * s).abs()));
        (stat.amax(), ineq.max(eq).max(dual), comp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: Vector,
    pub value: f64,
    /// Multipliers of `G z ≤ h` (nonnegative).
    pub lambda: Vector,
    /// Multipliers of `E z = f`.
    pub nu: Vector,
    pub iterations: usize,
}

#[derive(Clone, Copy)]
struct Active {
    /// index into the stacked constraint list (inequalities first)
    id: usize,
    /// orientation applied to an equality row
    sign: f64,
}

struct Transformed {
    /// normals mapped through L⁻¹, one column per constraint (`n_j = -G_j` or `E_j`)
    normals: Mat,
    rhs: Vector,
    n_ineq: usize,
}

impl Transformed {
    fn normal(&self, a: Active) -> Vector {
        self.normals.column(a.id) * a.sign
    }

    fn bound(&self, a: Active) -> f64 {
        self.rhs[a.id] * a.sign
    }

    fn is_equality(&self, id: usize) -> bool {
        id >= self.n_ineq
    }
}

fn factor(h: &Mat) -> Cholesky<f64, nalgebra::Dyn> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return c;
    }
    let n = h.nrows();
    let mut delta = 1e-12 * max_abs(h).max(1.0);
    loop {
        if let Some(c) = Cholesky::new(h + Mat::identity(n, n) * delta) {
            log::debug!("QP Hessian regularized by {delta:e}");
            return c;
        }
        delta *= 10.0;
    }
}

/// Orthonormal basis `Q₁` and triangular `R` of the active normal matrix.
fn active_qr(tr: &Transformed, active: &[Active], dim: usize) -> (Mat, Mat) {
    if active.is_empty() {
        return (Mat::zeros(dim, 0), Mat::zeros(0, 0));
    }
    let cols: Vec<Vector> = active.iter().map(|a| tr.normal(*a)).collect();
    let n = Mat::from_columns(&cols);
    let qr = n.qr();
    (qr.q(), qr.r())
}

fn solve_upper(r: &Mat, b: &Vector) -> Vector {
    if r.nrows() == 0 {
        return Vector::zeros(0);
    }
    r.solve_upper_triangular(b)
        .unwrap_or_else(|| Vector::zeros(b.len()))
}

/// Solves a [`QpProblem`].
///
/// A positive semidefinite Hessian that fails Cholesky is regularized by the
/// smallest `δ·I` (δ from 1e-12 upward) that makes it factorizable.
pub fn qp_solve(p: &QpProblem) -> Result<QpSolution, NumericsError> {
    let d = p.dim();
    let n_ineq = p.g.nrows();
    let n_eq = p.e.nrows();
    let n_cons = n_ineq + n_eq;
    let budget = 10 * (n_cons + d) + 100;

    let chol = factor(&p.hessian);
    let l = chol.l();

    // stacked normals in ≥ form: -G z ≥ -h, E z = f
    let mut raw = Mat::zeros(d, n_cons);
    let mut rhs = Vector::zeros(n_cons);
    for i in 0..n_ineq {
        raw.set_column(i, &(-p.g.row(i).transpose()));
        rhs[i] = -p.h[i];
    }
    for i in 0..n_eq {
        raw.set_column(n_ineq + i, &p.e.row(i).transpose());
        rhs[n_ineq + i] = p.f[i];
    }
    let normals = if n_cons > 0 {
        l.solve_lower_triangular(&raw).ok_or(NumericsError::SingularSystem)?
    } else {
        Mat::zeros(d, 0)
    };
    let tr = Transformed {
        normals,
        rhs,
        n_ineq,
    };
    let shift = l
        .solve_lower_triangular(&p.linear)
        .ok_or(NumericsError::SingularSystem)?;

    let mut y = -&shift;
    let mut active: Vec<Active> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_active = vec![false; n_cons];
    let mut iterations = 0usize;

    let infeasible = |iterations| {
        Ok(QpSolution {
            status: QpStatus::Infeasible,
            z: Vector::zeros(0),
            value: f64::INFINITY,
            lambda: Vector::zeros(0),
            nu: Vector::zeros(0),
            iterations,
        })
    };

    loop {
        // pick the next constraint to enforce: equalities first, then the
        // most violated inequality
        let mut pick: Option<(Active, f64)> = None;
        for id in n_ineq..n_cons {
            if !in_active[id] {
                let s = tr.normals.column(id).dot(&y) - tr.rhs[id];
                let sign = if s > 0.0 { -1.0 } else { 1.0 };
                pick = Some((Active { id, sign }, s * sign));
                break;
            }
        }
        if pick.is_none() {
            let mut worst = 0.0;
            for id in 0..n_ineq {
                if in_active[id] {
                    continue;
                }
                let s = tr.normals.column(id).dot(&y) - tr.rhs[id];
                let tol = 1e-11 * tr.rhs[id].abs().max(1.0);
                if s < -tol && s < worst {
                    worst = s;
                    pick = Some((Active { id, sign: 1.0 }, s));
                }
            }
        }
        let Some((cand, _)) = pick else {
            break;
        };

        let w = tr.normal(cand);
        let ww = w.dot(&w);
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > budget {
                return Ok(finish(p, &l, &tr, &active, &u, &y, QpStatus::MaxIter, iterations));
            }
            let (q1, r) = active_qr(&tr, &active, d);
            let proj = q1.transpose() * &w;
            let r_dir = solve_upper(&r, &proj);
            let step = &w - &q1 * &proj;
            let zz = step.dot(&step);

            let s_p = w.dot(&y) - tr.bound(cand);
            let t2 = if zz > 1e-13 * ww.max(1e-300) {
                (-s_p / zz).max(0.0)
            } else {
                f64::INFINITY
            };
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (j, a) in active.iter().enumerate() {
                if tr.is_equality(a.id) {
                    continue;
                }
                if r_dir[j] > 1e-14 {
                    let ratio = u[j] / r_dir[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(j);
                    }
                }
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                return infeasible(iterations);
            }
            for (j, uj) in u.iter_mut().enumerate() {
                *uj -= t * r_dir[j];
            }
            u_p += t;
            if t2.is_finite() {
                y += &step * t;
            }
            if t2 <= t1 {
                active.push(cand);
                u.push(u_p);
                in_active[cand.id] = true;
                break;
            }
            let j = drop_at.expect("partial step has a blocking constraint");
            in_active[active[j].id] = false;
            active.remove(j);
            u.remove(j);
        }
    }

    Ok(finish(p, &l, &tr, &active, &u, &y, QpStatus::Optimal, iterations))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &QpProblem,
    l: &Mat,
    tr: &Transformed,
    active: &[Active],
    u: &[f64],
    y: &Vector,
    status: QpStatus,
    iterations: usize,
) -> QpSolution {
    let d = p.dim();
    let n_ineq = p.g.nrows();
    let shift = l
        .solve_lower_triangular(&p.linear)
        .unwrap_or_else(|| Vector::zeros(d));

    let assemble = |y: &Vector, u: &[f64]| {
        let z = l
            .transpose()
            .solve_upper_triangular(y)
            .unwrap_or_else(|| Vector::zeros(d));
        let mut lambda = Vector::zeros(n_ineq);
        let mut nu = Vector::zeros(p.e.nrows());
        for (a, &ua) in active.iter().zip(u) {
            if a.id < n_ineq {
                lambda[a.id] = ua.max(0.0);
            } else {
                nu[a.id - n_ineq] = -a.sign * ua;
            }
        }
        (z, lambda, nu)
    };

    let (mut z, mut lambda, mut nu) = assemble(y, u);
    if status == QpStatus::Optimal && !active.is_empty() {
        // polish: exact minimizer on the final active set
        let (_, r) = active_qr(tr, active, d);
        let b_a = Vector::from_iterator(active.len(), active.iter().map(|a| tr.bound(*a)));
        let cols: Vec<Vector> = active.iter().map(|a| tr.normal(*a)).collect();
        let n_a = Mat::from_columns(&cols);
        let rhs = b_a + n_a.transpose() * &shift;
        let tmp = r
            .transpose()
            .solve_lower_triangular(&rhs)
            .unwrap_or_else(|| Vector::zeros(active.len()));
        let u_new = solve_upper(&r, &tmp);
        let y_new = -&shift + &n_a * &u_new;
        let u_vec: Vec<f64> = u_new.iter().copied().collect();
        let (z2, l2, n2) = assemble(&y_new, &u_vec);
        let before = p.kkt_residuals(&z, &lambda, &nu);
        let after = p.kkt_residuals(&z2, &l2, &n2);
        let worst_before = before.0.max(before.1).max(before.2);
        let worst_after = after.0.max(after.1).max(after.2);
        if worst_after.is_finite() && worst_after <= worst_before {
            z = z2;
            lambda = l2;
            nu = n2;
        }
    }
    let value = p.objective(&z);
    QpSolution {
        status,
        z,
        value,
        lambda,
        nu,
        iterations,
    }
}
