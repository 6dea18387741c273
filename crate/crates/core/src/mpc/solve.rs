use crate::numerics::{qp_solve, Mat, QpProblem, QpStatus, Vector};

use super::{MpcController, MpcError};

/// Admissible steady state closest to a target output.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub y_t: Vector,
    pub theta: Vector,
    pub x_s: Vector,
    pub u_s: Vector,
    pub y_s: Vector,
}

/// Optimizer of the finite-horizon problem for one state and target.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// nominal initial state `x̄*(0)`
    pub x_bar0: Vector,
    pub theta: Vector,
    /// `ū*(0), …, ū*(N−1)`
    pub inputs: Vec<Vector>,
    /// `x̄*(1), …, x̄*(N)`
    pub states: Vec<Vector>,
    /// optimal cost `V_N*`
    pub value: f64,
    /// KKT residuals `(stationarity, feasibility, complementarity)`
    pub kkt: (f64, f64, f64),
    pub iterations: usize,
}

impl MpcSolution {
    /// Artificial steady state `(x̄_s, ū_s, ȳ_s)` chosen by the optimizer.
    pub fn steady_state(&self, ctrl: &MpcController) -> (Vector, Vector, Vector) {
        let n = ctrl.model.states();
        let m = ctrl.model.inputs();
        let s = &ctrl.m_theta * &self.theta;
        (
            s.rows(0, n).clone_owned(),
            s.rows(n, m).clone_owned(),
            &ctrl.n_theta * &self.theta,
        )
    }
}

/// Closest admissible steady output to `y_t`.
///
/// Minimizes `|N_θ θ − y_t|² + 1e-9 |θ|²` subject to
/// `M_θ θ ∈ λ (X₁ × U₁)`. The regularization picks the minimum-norm `θ`
/// among ties.
pub fn target_projection(ctrl: &MpcController, y_t: &Vector) -> Result<TargetState, MpcError> {
    let p = ctrl.model.outputs();
    if y_t.len() != p {
        return Err(MpcError::Dimension(format!(
            "target has length {}, plant has {p} outputs",
            y_t.len()
        )));
    }
    let n = ctrl.model.states();
    let m = ctrl.model.inputs();
    let mt = ctrl.m_theta.ncols();
    let m_x = ctrl.m_theta.rows(0, n);
    let m_u = ctrl.m_theta.rows(n, m);
    let lambda = ctrl.tuning.lambda;

    let nt = &ctrl.n_theta;
    let hessian = (nt.transpose() * nt + Mat::identity(mt, mt) * 1e-9) * 2.0;
    let linear = nt.transpose() * y_t * -2.0;
    let dx = ctrl.x_tight.normals() * m_x;
    let du = ctrl.u_tight.normals() * m_u;
    let rows = dx.nrows() + du.nrows();
    let mut g = Mat::zeros(rows, mt);
    g.view_mut((0, 0), (dx.nrows(), mt)).copy_from(&dx);
    g.view_mut((dx.nrows(), 0), (du.nrows(), mt)).copy_from(&du);
    let mut h = Vector::zeros(rows);
    h.rows_mut(0, dx.nrows())
        .copy_from(&(ctrl.x_tight.offsets() * lambda));
    h.rows_mut(dx.nrows(), du.nrows())
        .copy_from(&(ctrl.u_tight.offsets() * lambda));

    let sol = qp_solve(&QpProblem::inequality(hessian, linear, g, h)?)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(MpcError::Infeasible),
        QpStatus::MaxIter => return Err(MpcError::QpMaxIter),
    }
    let theta = sol.z;
    let s = &ctrl.m_theta * &theta;
    Ok(TargetState {
        y_t: y_t.clone(),
        x_s: s.rows(0, n).clone_owned(),
        u_s: s.rows(n, m).clone_owned(),
        y_s: nt * &theta,
        theta,
    })
}

/// Solves the finite-horizon tracking problem from state `x` for target `y_t`.
pub fn solve_pn(ctrl: &MpcController, x: &Vector, y_t: &Vector) -> Result<MpcSolution, MpcError> {
    let n = ctrl.model.states();
    let m = ctrl.model.inputs();
    let p = ctrl.model.outputs();
    if x.len() != n || y_t.len() != p {
        return Err(MpcError::Dimension(format!(
            "state of length {} and target of length {} for n = {n}, p = {p}",
            x.len(),
            y_t.len()
        )));
    }
    if !x.iter().chain(y_t.iter()).all(|v| v.is_finite()) {
        return Err(crate::numerics::NumericsError::NonFinite("state or target").into());
    }
    let qp = &ctrl.qp;
    let linear = &qp.linear_of_target * y_t;
    let h = &qp.h_const + &qp.h_of_state * x;
    let problem = QpProblem::inequality(qp.hessian.clone(), linear, qp.g.clone(), h)?;
    let sol = qp_solve(&problem)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(MpcError::Infeasible),
        QpStatus::MaxIter => return Err(MpcError::QpMaxIter),
    }
    let kkt = problem.kkt_residuals(&sol.z, &sol.lambda, &sol.nu);
    let z = &sol.z;
    let mt = ctrl.m_theta.ncols();
    let horizon = ctrl.tuning.horizon;
    let inputs = (0..horizon)
        .map(|k| z.rows(n + mt + k * m, m).clone_owned())
        .collect();
    let states = qp.state_maps[1..].iter().map(|map| map * z).collect();
    let value = sol.value + y_t.dot(&(&ctrl.tuning.t_w * y_t));
    // with Φ_K = {0} the only feasible x̄(0) is x itself; drop the rounding
    let x_bar0 = if ctrl.tube_is_origin() {
        x.clone()
    } else {
        z.rows(0, n).clone_owned()
    };
    Ok(MpcSolution {
        x_bar0,
        theta: z.rows(n, mt).clone_owned(),
        inputs,
        states,
        value,
        kkt,
        iterations: sol.iterations,
    })
}

/// Tube control law `u = K (x − x̄*(0)) + ū*(0)`.
pub fn control_law(
    ctrl: &MpcController,
    x: &Vector,
    y_t: &Vector,
) -> Result<(Vector, MpcSolution), MpcError> {
    let sol = solve_pn(ctrl, x, y_t)?;
    let u = &ctrl.k_tube * (x - &sol.x_bar0) + &sol.inputs[0];
    Ok((u, sol))
}
