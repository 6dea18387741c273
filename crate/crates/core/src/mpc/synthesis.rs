use crate::numerics::{
    controllability_rank, dlqr, induced_inf_norm, is_schur, null_space, solve_dlyap, Mat,
    Tolerances, Vector,
};
use crate::polytope::{
    axis_template, construct_rpi, max_invariant_set, pontryagin_diff, Polytope, PolytopeError,
    Support, SupportOracle,
};

use super::{CondensedQp, MpcController, MpcError, PlantModel, Tuning, Uncertainty};

/// Knobs of the synthesis pipeline that are not MPC weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    /// Contraction target for the RPI outer approximation.
    pub alpha_max: f64,
    /// Iteration cap of the invariant-set recursion.
    pub invariant_cap: usize,
    /// Tube gain to use instead of the LQR gain.
    pub tube_gain: Option<Mat>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            alpha_max: 0.1,
            invariant_cap: 500,
            tube_gain: None,
        }
    }
}

/// Orthonormal steady-state basis `M_θ` of `[A + Δ̂A − I, B + Δ̂B]` and the
/// output map `N_θ = [C D] M_θ`.
pub fn steady_state_basis(model: &PlantModel, est: &Uncertainty) -> Result<(Mat, Mat), MpcError> {
    let n = model.states();
    let m = model.inputs();
    let (a, b) = model.perturbed(est);
    let mut s = Mat::zeros(n, n + m);
    s.view_mut((0, 0), (n, n))
        .copy_from(&(a - Mat::identity(n, n)));
    s.view_mut((0, n), (n, m)).copy_from(&b);
    let m_theta = null_space(&s, 1e-10);
    if m_theta.ncols() != m {
        return Err(MpcError::DegenerateSteadySpace {
            found: m_theta.ncols(),
            expected: m,
        });
    }
    let mut cd = Mat::zeros(model.outputs(), n + m);
    cd.view_mut((0, 0), (model.outputs(), n)).copy_from(&model.c);
    cd.view_mut((0, n), (model.outputs(), m)).copy_from(&model.d);
    let n_theta = cd * &m_theta;
    Ok((m_theta, n_theta))
}

/// Worst-case mismatch disturbance box `{w : |w|∞ ≤ ρ}` with
/// `ρ = (ℓ_A + ‖Δ̂A‖∞) X* + (ℓ_B + ‖Δ̂B‖∞) U*`.
pub fn disturbance_box(
    ell_a: f64,
    ell_b: f64,
    est: &Uncertainty,
    x_set: &Polytope,
    u_set: &Polytope,
) -> Result<Polytope, MpcError> {
    if !(ell_a >= 0.0 && ell_b >= 0.0 && ell_a.is_finite() && ell_b.is_finite()) {
        return Err(MpcError::Dimension(format!(
            "uncertainty bounds must be finite and nonnegative, got {ell_a}, {ell_b}"
        )));
    }
    let x_star = inf_radius(x_set)?;
    let u_star = inf_radius(u_set)?;
    let rho = (ell_a + induced_inf_norm(&est.da)) * x_star + (ell_b + induced_inf_norm(&est.db)) * u_star;
    Ok(Polytope::symmetric_box(x_set.dim(), rho)?)
}

/// `max_{z ∈ S} |z|∞` from the `2d` axis supports.
fn inf_radius(set: &Polytope) -> Result<f64, MpcError> {
    let mut r: f64 = 0.0;
    for d in axis_template(set.dim()) {
        r = r.max(set.support(&d)?);
    }
    Ok(r)
}

/// Builds the robust tracking MPC for the estimate `est`.
///
/// The pipeline computes the gains, the terminal weight, the disturbance
/// box, the tube, the tightened sets, the steady-state maps, the terminal
/// invariant set for tracking and finally the condensed QP. Every controller
/// returned has Schur tube and terminal loops, a terminal weight that
/// solves its Lyapunov equation and tightened sets inside the originals.
#[allow(clippy::too_many_arguments)]
pub fn synthesize(
    model: &PlantModel,
    est: &Uncertainty,
    x_set: &Polytope,
    u_set: &Polytope,
    tuning: &Tuning,
    ell_a: f64,
    ell_b: f64,
    opts: &SynthesisOptions,
) -> Result<MpcController, MpcError> {
    let n = model.states();
    let m = model.inputs();
    if est.da.shape() != (n, n) || est.db.shape() != (n, m) {
        return Err(MpcError::Dimension(format!(
            "estimate dA {:?}, dB {:?} for n = {n}, m = {m}",
            est.da.shape(),
            est.db.shape()
        )));
    }
    if x_set.dim() != n || u_set.dim() != m {
        return Err(MpcError::Dimension(format!(
            "X has dimension {}, U has dimension {}; expected {n}, {m}",
            x_set.dim(),
            u_set.dim()
        )));
    }
    if tuning.q.shape() != (n, n)
        || tuning.r.shape() != (m, m)
        || tuning.t_w.shape() != (model.outputs(), model.outputs())
    {
        return Err(MpcError::Dimension("tuning weights do not match the plant".into()));
    }
    tuning.validate()?;

    let (a_nom, b_nom) = model.perturbed(est);
    let rank = controllability_rank(&a_nom, &b_nom);
    if rank < n {
        return Err(MpcError::Uncontrollable { rank, n });
    }

    // gains and terminal weight
    let (k_lqr, _) = dlqr(&a_nom, &b_nom, &tuning.q, &tuning.r)?;
    let k_term = k_lqr.clone();
    let k_tube = match &opts.tube_gain {
        Some(k) if k.shape() != (m, n) => {
            return Err(MpcError::Dimension(format!("tube gain is {:?}", k.shape())))
        }
        Some(k) => k.clone(),
        None => k_lqr,
    };
    let a_tube = &a_nom + &b_nom * &k_tube;
    if !is_schur(&a_tube) {
        return Err(MpcError::NotSchur("tube"));
    }
    let a_term = &a_nom + &b_nom * &k_term;
    if !is_schur(&a_term) {
        return Err(MpcError::NotSchur("terminal"));
    }
    let stage = &tuning.q + k_term.transpose() * &tuning.r * &k_term;
    let p_term = solve_dlyap(&a_term, &stage)?;

    // tube and tightened constraints
    let w_set = disturbance_box(ell_a, ell_b, est, x_set, u_set)?;
    let mut template = axis_template(n);
    for i in 0..x_set.n_facets() {
        template.push(x_set.normals().row(i).transpose());
    }
    for i in 0..u_set.n_facets() {
        template.push(k_tube.transpose() * u_set.normals().row(i).transpose());
    }
    let rpi = construct_rpi(&a_tube, &w_set, &template, opts.alpha_max)?;
    let phi = rpi.set;

    let x_tight = pontryagin_diff(x_set, &phi).map_err(|e| empty_as("state", e))?;
    let k_phi = SupportOracle::new(m).add_term(k_tube.clone(), phi.clone())?;
    let u_tight = pontryagin_diff(u_set, &k_phi).map_err(|e| empty_as("input", e))?;

    // steady states and the terminal set for tracking
    let (m_theta, n_theta) = steady_state_basis(model, est)?;
    let m_x = m_theta.rows(0, n).clone_owned();
    let m_u = m_theta.rows(n, m).clone_owned();
    let l_gain = &m_u - &k_term * &m_x;
    let mt = m_theta.ncols();

    let aug_dim = n + mt;
    let mut a_aug = Mat::zeros(aug_dim, aug_dim);
    a_aug.view_mut((0, 0), (n, n)).copy_from(&a_term);
    a_aug.view_mut((0, n), (n, mt)).copy_from(&(&b_nom * &l_gain));
    a_aug.view_mut((n, n), (mt, mt)).fill_with_identity();

    let dx = x_tight.normals();
    let cx = x_tight.offsets();
    let du = u_tight.normals();
    let cu = u_tight.offsets();
    let rows = 2 * (dx.nrows() + du.nrows());
    let mut c_aug = Mat::zeros(rows, aug_dim);
    let mut c_off = Vector::zeros(rows);
    let mut r = 0;
    for i in 0..dx.nrows() {
        c_aug.view_mut((r, 0), (1, n)).copy_from(&dx.row(i));
        c_off[r] = cx[i];
        r += 1;
    }
    let du_k = du * &k_term;
    let du_l = du * &l_gain;
    for i in 0..du.nrows() {
        c_aug.view_mut((r, 0), (1, n)).copy_from(&du_k.row(i));
        c_aug.view_mut((r, n), (1, mt)).copy_from(&du_l.row(i));
        c_off[r] = cu[i];
        r += 1;
    }
    let dx_m = dx * &m_x;
    for i in 0..dx.nrows() {
        c_aug.view_mut((r, n), (1, mt)).copy_from(&dx_m.row(i));
        c_off[r] = tuning.lambda * cx[i];
        r += 1;
    }
    let du_m = du * &m_u;
    for i in 0..du.nrows() {
        c_aug.view_mut((r, n), (1, mt)).copy_from(&du_m.row(i));
        c_off[r] = tuning.lambda * cu[i];
        r += 1;
    }
    let aug_constraint = Polytope::from_rows_unchecked(c_aug, c_off)?;
    let inv = max_invariant_set(&a_aug, &aug_constraint, mt, opts.invariant_cap).map_err(|e| {
        match e {
            PolytopeError::NotFinitelyDetermined(c) => MpcError::NotFinitelyDetermined(c),
            other => other.into(),
        }
    })?;

    let qp = condense(
        &a_nom, &b_nom, tuning, &p_term, &m_x, &m_u, &n_theta, &phi, &x_tight, &u_tight,
        &inv.set,
    );

    let ctrl = MpcController {
        model: model.clone(),
        estimate: est.clone(),
        tuning: tuning.clone(),
        a_nom,
        b_nom,
        k_tube,
        k_term,
        p_term,
        m_theta,
        n_theta,
        l_gain,
        w_set,
        phi,
        rpi_steps: rpi.steps,
        rpi_alpha: rpi.alpha,
        rpi_scale: rpi.scale,
        x_set: x_set.clone(),
        u_set: u_set.clone(),
        x_tight,
        u_tight,
        omega: inv.set,
        k_star: inv.k_star,
        qp,
    };
    check_invariants(&ctrl, &stage)?;
    log::debug!(
        "synthesized MPC: tube {} facets, X1 {} facets, U1 {} facets, terminal {} facets (k* = {})",
        ctrl.phi.n_facets(),
        ctrl.x_tight.n_facets(),
        ctrl.u_tight.n_facets(),
        ctrl.omega.n_facets(),
        ctrl.k_star
    );
    Ok(ctrl)
}

fn empty_as(which: &'static str, e: PolytopeError) -> MpcError {
    match e {
        PolytopeError::EmptyDifference => MpcError::EmptyDifference(which),
        other => other.into(),
    }
}

fn check_invariants(ctrl: &MpcController, stage: &Mat) -> Result<(), MpcError> {
    let bound = Tolerances::DEFAULT.lyapunov_residual * stage.amax().max(1.0);
    if ctrl.terminal_residual() > bound {
        return Err(crate::numerics::NumericsError::SingularSystem.into());
    }
    if !ctrl.x_tight.is_subset_of(&ctrl.x_set)? || !ctrl.u_tight.is_subset_of(&ctrl.u_set)? {
        return Err(PolytopeError::VerificationFailed(0).into());
    }
    Ok(())
}

/// Condensed QP over `ζ = (x̄(0), θ̄, ū(0), …, ū(N−1))`.
#[allow(clippy::too_many_arguments)]
fn condense(
    a: &Mat,
    b: &Mat,
    tuning: &Tuning,
    p_term: &Mat,
    m_x: &Mat,
    m_u: &Mat,
    n_theta: &Mat,
    phi: &Polytope,
    x_tight: &Polytope,
    u_tight: &Polytope,
    omega: &Polytope,
) -> CondensedQp {
    let n = a.nrows();
    let m = b.ncols();
    let mt = m_x.ncols();
    let horizon = tuning.horizon;
    let nz = n + mt + horizon * m;
    let u_col = |k: usize| n + mt + k * m;

    let mut x0 = Mat::zeros(n, nz);
    x0.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut state_maps = vec![x0];
    let mut input_maps = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let mut uk = Mat::zeros(m, nz);
        uk.view_mut((0, u_col(k)), (m, m)).fill_with_identity();
        let next = a * &state_maps[k] + b * &uk;
        input_maps.push(uk);
        state_maps.push(next);
    }
    let mut s_x = Mat::zeros(n, nz);
    s_x.view_mut((0, n), (n, mt)).copy_from(m_x);
    let mut s_u = Mat::zeros(m, nz);
    s_u.view_mut((0, n), (m, mt)).copy_from(m_u);
    let p = n_theta.nrows();
    let mut s_y = Mat::zeros(p, nz);
    s_y.view_mut((0, n), (p, mt)).copy_from(n_theta);

    let mut h0 = s_y.transpose() * &tuning.t_w * &s_y;
    for k in 0..horizon {
        let ex = &state_maps[k] - &s_x;
        let eu = &input_maps[k] - &s_u;
        h0 += ex.transpose() * &tuning.q * &ex + eu.transpose() * &tuning.r * &eu;
    }
    let ex = &state_maps[horizon] - &s_x;
    h0 += ex.transpose() * p_term * &ex;
    let hessian = h0 * 2.0;
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let linear_of_target = s_y.transpose() * &tuning.t_w * -2.0;

    let mut theta_sel = Mat::zeros(mt, nz);
    theta_sel.view_mut((0, n), (mt, mt)).fill_with_identity();
    let mut terminal_map = Mat::zeros(n + mt, nz);
    terminal_map.view_mut((0, 0), (n, nz)).copy_from(&state_maps[horizon]);
    terminal_map.view_mut((n, 0), (mt, nz)).copy_from(&theta_sel);

    let mut blocks: Vec<(Mat, Vector, Mat)> = Vec::new();
    // x − x̄(0) ∈ Φ
    blocks.push((
        -(phi.normals() * &state_maps[0]),
        phi.offsets().clone(),
        -phi.normals().clone(),
    ));
    for k in 0..horizon {
        blocks.push((
            x_tight.normals() * &state_maps[k],
            x_tight.offsets().clone(),
            Mat::zeros(x_tight.n_facets(), n),
        ));
        blocks.push((
            u_tight.normals() * &input_maps[k],
            u_tight.offsets().clone(),
            Mat::zeros(u_tight.n_facets(), n),
        ));
    }
    blocks.push((
        omega.normals() * &terminal_map,
        omega.offsets().clone(),
        Mat::zeros(omega.n_facets(), n),
    ));

    let rows: usize = blocks.iter().map(|b| b.1.len()).sum();
    let mut g = Mat::zeros(rows, nz);
    let mut h_const = Vector::zeros(rows);
    let mut h_of_state = Mat::zeros(rows, n);
    let mut r = 0;
    for (gb, hb, hx) in blocks {
        let q = hb.len();
        g.view_mut((r, 0), (q, nz)).copy_from(&gb);
        h_const.rows_mut(r, q).copy_from(&hb);
        h_of_state.view_mut((r, 0), (q, n)).copy_from(&hx);
        r += q;
    }
    CondensedQp {
        hessian,
        linear_of_target,
        g,
        h_const,
        h_of_state,
        state_maps,
    }
}
