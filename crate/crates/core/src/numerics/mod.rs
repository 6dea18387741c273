//! Dense linear algebra kernels and the two convex solvers (LP and QP) that
//! the set machinery and the MPC are built on.
//!
//! Matrices are plain [`nalgebra::DMatrix<f64>`]. Every problem size in this
//! crate is small (tens of variables, a few hundred constraints), so all
//! routines are dense and deterministic.

mod linalg;
mod lp;
mod qp;

pub use linalg::{
    controllability_rank, dlqr, induced_inf_norm, is_schur, null_space, solve_dlyap, spd_check,
};
pub use lp::{lp_solve, LpProblem, LpSolution, LpStatus};
pub use qp::{qp_solve, QpProblem, QpSolution, QpStatus};

use thiserror::Error;

/// Dense real matrix, row/column counts checked at every public boundary.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type Vector = nalgebra::DVector<f64>;

/// Numerical tolerances used across the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative residual bound for discrete Lyapunov solutions.
    pub lyapunov_residual: f64,
    /// Stability margin: spectral radius at or above `1 - schur_margin` is
    /// reported as not Schur.
    pub schur_margin: f64,
    /// Successive-iterate bound for the Riccati fixed point.
    pub riccati_step: f64,
    pub riccati_max_iter: usize,
    /// Primal feasibility residual accepted on an optimal LP.
    pub lp_feasibility: f64,
    /// Reduced-cost and ratio-test threshold inside the simplex tableau.
    pub lp_pivot: f64,
    /// KKT residual bound for the QP solver.
    pub qp_kkt: f64,
    /// Slack accepted by membership tests (`Dz <= c + eps`).
    pub membership: f64,
    /// Facet redundancy tolerance for set computations.
    pub redundancy: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        lyapunov_residual: 1e-8,
        schur_margin: 1e-9,
        riccati_step: 1e-10,
        riccati_max_iter: 10_000,
        lp_feasibility: 1e-9,
        lp_pivot: 1e-11,
        qp_kkt: 1e-8,
        membership: 1e-9,
        redundancy: 1e-9,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("linear system is numerically singular (spectral radius close to one?)")]
    SingularSystem,
    #[error("Riccati iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("simplex exceeded the pivot limit of {0}")]
    CycleLimit(usize),
}

pub(crate) fn check_finite_mat(m: &Mat, what: &'static str) -> Result<(), NumericsError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite(what))
    }
}

pub(crate) fn check_finite_vec(v: &Vector, what: &'static str) -> Result<(), NumericsError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite(what))
    }
}

/// Max-abs entry.
pub(crate) fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
