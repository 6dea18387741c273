//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Problems are stated over free variables,
//!
//! ```text
//! minimize cᵀz  subject to  G z ≤ h,  E z = f,
//! ```
//!
//! and converted to standard form by splitting `z = z⁺ − z⁻` and adding one
//! slack per inequality. Artificial columns are only introduced for rows whose
//! slack cannot start in the basis.

// Tableau and active-set updates read most clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

use super::{check_finite_mat, check_finite_vec, Mat, NumericsError, Tolerances, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vector,
    pub g: Mat,
    pub h: Vector,
    pub e: Mat,
    pub f: Vector,
}

impl LpProblem {
    /// Inequality-only problem `min cᵀz s.t. Gz ≤ h`.
    pub fn new(c: Vector, g: Mat, h: Vector) -> Result<Self, NumericsError> {
        let d = c.len();
        Self::with_equalities(c, g, h, Mat::zeros(0, d), Vector::zeros(0))
    }

    pub fn with_equalities(
        c: Vector,
        g: Mat,
        h: Vector,
        e: Mat,
        f: Vector,
    ) -> Result<Self, NumericsError> {
        let d = c.len();
        if g.ncols() != d || g.nrows() != h.len() || e.ncols() != d || e.nrows() != f.len() {
            return Err(NumericsError::Dimension(format!(
                "LP with {} variables: G {:?}, h {}, E {:?}, f {}",
                d,
                g.shape(),
                h.len(),
                e.shape(),
                f.len()
            )));
        }
        check_finite_vec(&c, "c")?;
        check_finite_mat(&g, "G")?;
        check_finite_vec(&h, "h")?;
        check_finite_mat(&e, "E")?;
        check_finite_vec(&f, "f")?;
        Ok(LpProblem { c, g, h, e, f })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal point; empty unless `status == Optimal`.
    pub z: Vector,
    /// Optimal value; `+∞` when infeasible, `−∞` when unbounded.
    pub value: f64,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// row-major, `cols + 1` entries per row, last entry is the rhs
    data: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    pivot_limit: usize,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.cols + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.data[i * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, obj: &mut [f64], r: usize, c: usize) -> Result<(), NumericsError> {
        self.pivots += 1;
        if self.pivots > self.pivot_limit {
            return Err(NumericsError::CycleLimit(self.pivot_limit));
        }
        let w = self.cols + 1;
        let piv = self.data[r * w + c];
        for j in 0..w {
            self.data[r * w + j] /= piv;
        }
        self.data[r * w + c] = 1.0;
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let factor = row[c];
            if factor != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= factor * p;
                }
                row[c] = 0.0;
            }
        }
        let factor = obj[c];
        if factor != 0.0 {
            for (x, p) in obj.iter_mut().zip(prow.iter()) {
                *x -= factor * p;
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
        Ok(())
    }

    /// Runs primal simplex on the reduced-cost row `obj` (length `cols + 1`,
    /// last entry is minus the objective value) with Bland's rule.
    fn optimize(&mut self, obj: &mut [f64], allowed: usize) -> Result<Phase, NumericsError> {
        let tol = Tolerances::DEFAULT.lp_pivot;
        loop {
            let entering = (0..allowed).find(|&j| obj[j] < -tol);
            let Some(col) = entering else {
                return Ok(Phase::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, col);
                if a > tol {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * br.abs().max(1.0);
                            if ratio < br && !tie
                                || tie && self.basis[i] < self.basis[bi]
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(Phase::Unbounded),
                Some((r, _)) => self.pivot(obj, r, col)?,
            }
        }
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.cols + 1;
        self.data.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows -= 1;
    }
}

/// Solves an [`LpProblem`].
///
/// Pure and deterministic: identical inputs give bit-identical outputs.
pub fn lp_solve(p: &LpProblem) -> Result<LpSolution, NumericsError> {
    let tol = Tolerances::DEFAULT;
    let d = p.dim();
    let q = p.g.nrows();
    let r = p.e.nrows();
    let rows = q + r;

    // standard-form rows with nonnegative right-hand sides
    let struct_cols = 2 * d + q;
    let mut needs_art = Vec::with_capacity(rows);
    for i in 0..q {
        needs_art.push(p.h[i] < 0.0);
    }
    needs_art.extend(std::iter::repeat_n(true, r));
    let n_art = needs_art.iter().filter(|b| **b).count();
    let cols = struct_cols + n_art;

    let w = cols + 1;
    let mut data = vec![0.0; rows * w];
    let mut basis = vec![0; rows];
    let mut art = struct_cols;
    let mut std_a = Mat::zeros(rows, struct_cols);
    let mut std_b = Vector::zeros(rows);
    for i in 0..rows {
        let (coef, rhs) = if i < q {
            (p.g.row(i).clone_owned(), p.h[i])
        } else {
            (p.e.row(i - q).clone_owned(), p.f[i - q])
        };
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            std_a[(i, j)] = sign * coef[j];
            std_a[(i, d + j)] = -sign * coef[j];
        }
        if i < q {
            std_a[(i, 2 * d + i)] = sign;
        }
        std_b[i] = sign * rhs;
        for j in 0..struct_cols {
            data[i * w + j] = std_a[(i, j)];
        }
        data[i * w + cols] = std_b[i];
        if needs_art[i] {
            data[i * w + art] = 1.0;
            basis[i] = art;
            art += 1;
        } else {
            basis[i] = 2 * d + i;
        }
    }

    let mut t = Tableau {
        rows,
        cols,
        data,
        basis,
        pivots: 0,
        pivot_limit: 50 * (rows + cols) + 1000,
    };
    let scale = p.h.amax().max(p.f.amax()).max(1.0);

    // phase one: minimize the sum of artificials
    if n_art > 0 {
        let mut obj = vec![0.0; w];
        for j in struct_cols..cols {
            obj[j] = 1.0;
        }
        for i in 0..t.rows {
            if t.basis[i] >= struct_cols {
                for j in 0..w {
                    obj[j] -= t.data[i * w + j];
                }
            }
        }
        t.optimize(&mut obj, cols)?;
        let infeas = -obj[cols];
        if infeas > tol.lp_feasibility * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                z: Vector::zeros(0),
                value: f64::INFINITY,
            });
        }
        // drive remaining artificials out of the basis
        let mut i = 0;
        while i < t.rows {
            if t.basis[i] >= struct_cols {
                let col = (0..struct_cols).find(|&j| t.at(i, j).abs() > 1e-9);
                match col {
                    Some(j) => {
                        let mut dummy = vec![0.0; w];
                        t.pivot(&mut dummy, i, j)?;
                        i += 1;
                    }
                    None => t.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
    }

    // phase two
    let mut cost = vec![0.0; w];
    for j in 0..d {
        cost[j] = p.c[j];
        cost[d + j] = -p.c[j];
    }
    let mut obj = cost.clone();
    for i in 0..t.rows {
        let cb = cost[t.basis[i]];
        if cb != 0.0 {
            for j in 0..w {
                obj[j] -= cb * t.data[i * w + j];
            }
        }
    }
    // artificial columns may not re-enter
    for v in obj.iter_mut().take(cols).skip(struct_cols) {
        *v = 0.0;
    }
    match t.optimize(&mut obj, struct_cols)? {
        Phase::Unbounded => {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                z: Vector::zeros(0),
                value: f64::NEG_INFINITY,
            })
        }
        Phase::Optimal => {}
    }

    let mut x = Vector::zeros(struct_cols);
    for i in 0..t.rows {
        if t.basis[i] < struct_cols {
            x[t.basis[i]] = t.rhs(i).max(0.0);
        }
    }
    let z = refine(&t, &std_a, &std_b, q, r, &x).unwrap_or_else(|| split_back(&x, d));
    let value = p.c.dot(&z);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        z,
        value,
    })
}

fn split_back(x: &Vector, d: usize) -> Vector {
    Vector::from_iterator(d, (0..d).map(|j| x[j] - x[d + j]))
}

/// Re-solves the final basic system against the original data to remove
/// round-off accumulated in the tableau.
fn refine(
    t: &Tableau,
    std_a: &Mat,
    std_b: &Vector,
    q: usize,
    r: usize,
    x: &Vector,
) -> Option<Vector> {
    let struct_cols = std_a.ncols();
    let d = (struct_cols - q) / 2;
    if t.rows != q + r || t.basis.iter().any(|&b| b >= struct_cols) {
        return None;
    }
    let mut bmat = Mat::zeros(t.rows, t.rows);
    for (k, &col) in t.basis.iter().enumerate() {
        bmat.set_column(k, &std_a.column(col));
    }
    let sol = bmat.lu().solve(std_b)?;
    let mut refined = Vector::zeros(struct_cols);
    for (k, &col) in t.basis.iter().enumerate() {
        if sol[k] < -1e-7 || !sol[k].is_finite() {
            return None;
        }
        refined[col] = sol[k].max(0.0);
    }
    let before = (std_a * x - std_b).amax();
    let after = (std_a * &refined - std_b).amax();
    if after <= before {
        Some(split_back(&refined, d))
    } else {
        None
    }
}
