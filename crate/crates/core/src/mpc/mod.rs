//! Robust tube MPC for tracking, synthesized from the current uncertainty
//! estimate.
//!
//! The nominal model is `x̄⁺ = (A + Δ̂A) x̄ + (B + Δ̂B) ū`. The true state is
//! kept inside `x̄ ⊕ Φ_K` by the tube law `u = ū + K (x − x̄)`, where `Φ_K` is
//! robust positively invariant for the mismatch disturbance
//! `w = (ΔA − Δ̂A) x + (ΔB − Δ̂B) u`. Tracking uses an artificial steady state
//! `(x̄_s, ū_s) = M_θ θ̄` whose output is pulled towards the target by a
//! penalty, and the terminal constraint is an invariant set for tracking in
//! the augmented `(x̄, θ̄)` space.

mod solve;
mod synthesis;

pub use solve::{control_law, solve_pn, target_projection, MpcSolution, TargetState};
pub use synthesis::{disturbance_box, steady_state_basis, synthesize, SynthesisOptions};

use thiserror::Error;

use crate::numerics::{spd_check, Mat, NumericsError, Vector};
use crate::polytope::{Polytope, PolytopeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} must be symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("pair (A + dA, B + dB) is not controllable (rank {rank} < {n})")]
    Uncontrollable { rank: usize, n: usize },
    #[error("{0} closed loop is not Schur stable")]
    NotSchur(&'static str),
    #[error("tightened {0} constraint set is empty (Pontryagin difference): uncertainty too large")]
    EmptyDifference(&'static str),
    #[error("steady-state space has dimension {found}, expected {expected}")]
    DegenerateSteadySpace { found: usize, expected: usize },
    #[error("invariant set for tracking not finitely determined within {0} steps")]
    NotFinitelyDetermined(usize),
    #[error("MPC problem infeasible: state outside the feasible region")]
    Infeasible,
    #[error("QP solver hit its iteration limit")]
    QpMaxIter,
}

/// Nominal plant `x⁺ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl PlantModel {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self, MpcError> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.shape() != (p, m) {
            return Err(MpcError::Dimension(format!(
                "A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        if n == 0 || m == 0 || p == 0 {
            return Err(MpcError::Dimension("empty state, input or output".into()));
        }
        for (mat, name) in [(&a, "A"), (&b, "B"), (&c, "C"), (&d, "D")] {
            if !mat.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFinite(name).into());
            }
        }
        Ok(PlantModel { a, b, c, d })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `(A + ΔA, B + ΔB)`.
    pub fn perturbed(&self, delta: &Uncertainty) -> (Mat, Mat) {
        (&self.a + &delta.da, &self.b + &delta.db)
    }

    pub fn output(&self, x: &Vector, u: &Vector) -> Vector {
        &self.c * x + &self.d * u
    }
}

/// Model perturbation `(ΔA, ΔB)`, flattened row-major as `[vec(ΔA); vec(ΔB)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Uncertainty {
    pub da: Mat,
    pub db: Mat,
}

impl Uncertainty {
    pub fn zeros(n: usize, m: usize) -> Self {
        Uncertainty {
            da: Mat::zeros(n, n),
            db: Mat::zeros(n, m),
        }
    }

    pub fn new(da: Mat, db: Mat) -> Result<Self, MpcError> {
        let n = da.nrows();
        if da.ncols() != n || db.nrows() != n {
            return Err(MpcError::Dimension(format!(
                "dA {:?}, dB {:?}",
                da.shape(),
                db.shape()
            )));
        }
        Ok(Uncertainty { da, db })
    }

    /// Length `n(n + m)` vector, `ΔA` rows first, then `ΔB` rows.
    pub fn flatten(&self) -> Vector {
        let n = self.da.nrows();
        let m = self.db.ncols();
        let mut v = Vec::with_capacity(n * (n + m));
        for i in 0..n {
            v.extend(self.da.row(i).iter());
        }
        for i in 0..n {
            v.extend(self.db.row(i).iter());
        }
        Vector::from_vec(v)
    }

    pub fn unflatten(v: &Vector, n: usize, m: usize) -> Result<Self, MpcError> {
        if v.len() != n * (n + m) {
            return Err(MpcError::Dimension(format!(
                "uncertainty vector of length {} for n = {n}, m = {m}",
                v.len()
            )));
        }
        let da = Mat::from_row_slice(n, n, &v.as_slice()[..n * n]);
        let db = Mat::from_row_slice(n, m, &v.as_slice()[n * n..]);
        Ok(Uncertainty { da, db })
    }

    pub fn dim(n: usize, m: usize) -> usize {
        n * (n + m)
    }
}

/// MPC weights and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    /// state weight
    pub q: Mat,
    /// input weight
    pub r: Mat,
    /// output offset weight on `|ȳ_s − y_t|²`
    pub t_w: Mat,
    pub horizon: usize,
    /// contraction of the steady-state set inside the terminal constraint
    pub lambda: f64,
}

impl Tuning {
    pub fn new(q: Mat, r: Mat, t_w: Mat, horizon: usize, lambda: f64) -> Result<Self, MpcError> {
        let t = Tuning {
            q,
            r,
            t_w,
            horizon,
            lambda,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if !spd_check(&self.q) {
            return Err(MpcError::NotPositiveDefinite("Q"));
        }
        if !spd_check(&self.r) {
            return Err(MpcError::NotPositiveDefinite("R"));
        }
        if !spd_check(&self.t_w) {
            return Err(MpcError::NotPositiveDefinite("T"));
        }
        if self.horizon == 0 {
            return Err(MpcError::Dimension("horizon must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(MpcError::Dimension(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Condensed QP data. Decision vector `ζ = (x̄(0), θ̄, ū(0), …, ū(N−1))`;
/// cost `½ζᵀHζ + (Q_y y_t)ᵀζ + y_tᵀ T y_t`; constraints
/// `G ζ ≤ h₀ + H_x x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQp {
    pub hessian: Mat,
    pub linear_of_target: Mat,
    pub g: Mat,
    pub h_const: Vector,
    pub h_of_state: Mat,
    /// `x̄(k) = X_k ζ` for `k = 0..=N`
    pub state_maps: Vec<Mat>,
}

/// Everything synthesized for one uncertainty estimate. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcController {
    pub(crate) model: PlantModel,
    pub(crate) estimate: Uncertainty,
    pub(crate) tuning: Tuning,
    pub(crate) a_nom: Mat,
    pub(crate) b_nom: Mat,
    pub(crate) k_tube: Mat,
    pub(crate) k_term: Mat,
    pub(crate) p_term: Mat,
    pub(crate) m_theta: Mat,
    pub(crate) n_theta: Mat,
    pub(crate) l_gain: Mat,
    pub(crate) w_set: Polytope,
    pub(crate) phi: Polytope,
    pub(crate) rpi_steps: usize,
    pub(crate) rpi_alpha: f64,
    pub(crate) rpi_scale: f64,
    pub(crate) x_set: Polytope,
    pub(crate) u_set: Polytope,
    pub(crate) x_tight: Polytope,
    pub(crate) u_tight: Polytope,
    pub(crate) omega: Polytope,
    pub(crate) k_star: usize,
    pub(crate) qp: CondensedQp,
}

impl MpcController {
    pub fn model(&self) -> &PlantModel {
        &self.model
    }
    pub fn estimate(&self) -> &Uncertainty {
        &self.estimate
    }
    pub fn tuning(&self) -> &Tuning {
        &self.tuning
    }
    /// `(A + Δ̂A, B + Δ̂B)`.
    pub fn nominal(&self) -> (&Mat, &Mat) {
        (&self.a_nom, &self.b_nom)
    }
    /// Tube gain `K`.
    pub fn tube_gain(&self) -> &Mat {
        &self.k_tube
    }
    /// Terminal gain `K̄`.
    pub fn terminal_gain(&self) -> &Mat {
        &self.k_term
    }
    /// Terminal weight `P`.
    pub fn terminal_weight(&self) -> &Mat {
        &self.p_term
    }
    pub fn m_theta(&self) -> &Mat {
        &self.m_theta
    }
    pub fn n_theta(&self) -> &Mat {
        &self.n_theta
    }
    /// `L = [−K̄ I] M_θ`.
    pub fn l_gain(&self) -> &Mat {
        &self.l_gain
    }
    pub fn disturbance_set(&self) -> &Polytope {
        &self.w_set
    }
    pub fn tube_set(&self) -> &Polytope {
        &self.phi
    }
    /// `true` when `Φ_K = {0}`, as for an exactly known model.
    pub fn tube_is_origin(&self) -> bool {
        // a bounded polytope with all offsets zero is the origin
        !self.phi.is_empty() && self.phi.offsets().amax() == 0.0
    }
    /// `(s, α, inflation)` of the tube set construction.
    pub fn rpi_parameters(&self) -> (usize, f64, f64) {
        (self.rpi_steps, self.rpi_alpha, self.rpi_scale)
    }
    pub fn state_set(&self) -> &Polytope {
        &self.x_set
    }
    pub fn input_set(&self) -> &Polytope {
        &self.u_set
    }
    pub fn tightened_state_set(&self) -> &Polytope {
        &self.x_tight
    }
    pub fn tightened_input_set(&self) -> &Polytope {
        &self.u_tight
    }
    /// Invariant set for tracking in `(x̄, θ̄)` coordinates.
    pub fn terminal_set(&self) -> &Polytope {
        &self.omega
    }
    pub fn determination_index(&self) -> usize {
        self.k_star
    }
    pub fn condensed(&self) -> &CondensedQp {
        &self.qp
    }
    /// Tube closed loop `A + Δ̂A + (B + Δ̂B) K`.
    pub fn tube_dynamics(&self) -> Mat {
        &self.a_nom + &self.b_nom * &self.k_tube
    }
    /// Terminal closed loop `A + Δ̂A + (B + Δ̂B) K̄`.
    pub fn terminal_dynamics(&self) -> Mat {
        &self.a_nom + &self.b_nom * &self.k_term
    }
    /// Augmented terminal dynamics on `(x̄, θ̄)`.
    pub fn augmented_dynamics(&self) -> Mat {
        let n = self.a_nom.nrows();
        let mt = self.m_theta.ncols();
        let mut a = Mat::zeros(n + mt, n + mt);
        a.view_mut((0, 0), (n, n)).copy_from(&self.terminal_dynamics());
        a.view_mut((0, n), (n, mt)).copy_from(&(&self.b_nom * &self.l_gain));
        a.view_mut((n, n), (mt, mt)).fill_with_identity();
        a
    }
    /// `‖P − A_K̄ᵀ P A_K̄ − (Q + K̄ᵀ R K̄)‖∞` entrywise.
    pub fn terminal_residual(&self) -> f64 {
        let ak = self.terminal_dynamics();
        let rhs = &self.tuning.q + self.k_term.transpose() * &self.tuning.r * &self.k_term;
        let res = &self.p_term - ak.transpose() * &self.p_term * &ak - rhs;
        res.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
