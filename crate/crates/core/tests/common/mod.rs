//! Independent oracles and scenario builders shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code, clippy::needless_range_loop)]

use esilc::ilc::{CostKind, LearningConfig, Scenario};
use esilc::mpc::{MpcController, PlantModel, SynthesisOptions, Tuning, Uncertainty};
use esilc::numerics::{Mat, Vector};
use esilc::polytope::Polytope;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

// ---------------------------------------------------------------------------
// exact rational simplex

#[derive(Debug, Clone, PartialEq)]
pub enum RationalLp {
    Optimal(BigRational),
    Infeasible,
    Unbounded,
}

pub fn to_rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// `min cᵀz` s.t. `G z ≤ h` with `z` free, in exact arithmetic.
///
/// Standard form with `z = z⁺ − z⁻` and slacks, rows with negative right-hand
/// side flipped, one artificial per row for phase I, Bland's rule throughout.
pub fn rational_lp(c: &[f64], g: &[Vec<f64>], h: &[f64]) -> RationalLp {
    let d = c.len();
    let rows = g.len();
    let nx = 2 * d + rows; // z⁺, z⁻, slacks
    let width = nx + rows; // plus artificials
    let zero = BigRational::zero();
    let mut t: Vec<Vec<BigRational>> = Vec::with_capacity(rows);
    let mut rhs: Vec<BigRational> = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut row = vec![zero.clone(); width];
        for j in 0..d {
            let v = to_rational(g[i][j]);
            row[j] = v.clone();
            row[d + j] = -v;
        }
        row[2 * d + i] = BigRational::one();
        let mut b = to_rational(h[i]);
        if b.is_negative() {
            for v in row.iter_mut() {
                *v = -v.clone();
            }
            b = -b;
        }
        row[nx + i] = BigRational::one();
        t.push(row);
        rhs.push(b);
    }
    let mut basis: Vec<usize> = (nx..nx + rows).collect();

    // phase I: minimize the sum of artificials
    let mut cost1 = vec![zero.clone(); width];
    for j in nx..width {
        cost1[j] = BigRational::one();
    }
    let allowed1: Vec<bool> = vec![true; width];
    if simplex(&mut t, &mut rhs, &mut basis, &cost1, &allowed1) {
        unreachable!("phase I is bounded");
    }
    let phase1: BigRational = basis
        .iter()
        .zip(&rhs)
        .filter(|(b, _)| **b >= nx)
        .map(|(_, r)| r.clone())
        .fold(zero.clone(), |a, b| a + b);
    if phase1.is_positive() {
        return RationalLp::Infeasible;
    }
    // drive zero-level artificials out of the basis where possible
    for r in 0..rows {
        if basis[r] >= nx {
            if let Some(col) = (0..nx).find(|&j| !t[r][j].is_zero()) {
                pivot(&mut t, &mut rhs, &mut basis, r, col);
            }
        }
    }

    let mut cost2 = vec![zero.clone(); width];
    for j in 0..d {
        cost2[j] = to_rational(c[j]);
        cost2[d + j] = -to_rational(c[j]);
    }
    let allowed2: Vec<bool> = (0..width).map(|j| j < nx).collect();
    if simplex(&mut t, &mut rhs, &mut basis, &cost2, &allowed2) {
        return RationalLp::Unbounded;
    }
    let value = basis
        .iter()
        .zip(&rhs)
        .map(|(&b, r)| cost2[b].clone() * r)
        .fold(zero, |a, b| a + b);
    RationalLp::Optimal(value)
}

fn pivot(
    t: &mut [Vec<BigRational>],
    rhs: &mut [BigRational],
    basis: &mut [usize],
    r: usize,
    col: usize,
) {
    let p = t[r][col].clone();
    for v in t[r].iter_mut() {
        *v = v.clone() / &p;
    }
    rhs[r] = rhs[r].clone() / &p;
    for i in 0..t.len() {
        if i != r && !t[i][col].is_zero() {
            let f = t[i][col].clone();
            for j in 0..t[i].len() {
                let delta = f.clone() * &t[r][j];
                t[i][j] = t[i][j].clone() - delta;
            }
            rhs[i] = rhs[i].clone() - f * &rhs[r];
        }
    }
    basis[r] = col;
}

/// Bland's-rule primal simplex from a feasible basis. Returns `true` when
/// unbounded.
fn simplex(
    t: &mut [Vec<BigRational>],
    rhs: &mut [BigRational],
    basis: &mut [usize],
    cost: &[BigRational],
    allowed: &[bool],
) -> bool {
    loop {
        let mut entering = None;
        for j in 0..cost.len() {
            if !allowed[j] || basis.contains(&j) {
                continue;
            }
            let mut reduced = cost[j].clone();
            for (i, &b) in basis.iter().enumerate() {
                reduced -= cost[b].clone() * &t[i][j];
            }
            if reduced.is_negative() {
                entering = Some(j);
                break;
            }
        }
        let Some(col) = entering else {
            return false;
        };
        let mut leave: Option<(usize, BigRational)> = None;
        for i in 0..t.len() {
            if t[i][col].is_positive() {
                let ratio = rhs[i].clone() / &t[i][col];
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => ratio < *lr || (ratio == *lr && basis[i] < basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            return true;
        };
        pivot(t, rhs, basis, r, col);
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    let num: f64 = bigint_to_f64(r.numer());
    let den: f64 = bigint_to_f64(r.denom());
    num / den
}

fn bigint_to_f64(b: &BigInt) -> f64 {
    b.to_string().parse().expect("integer text parses as f64")
}

// ---------------------------------------------------------------------------
// brute-force QP by active-set enumeration

/// Minimizes `½zᵀHz + qᵀz` s.t. `G z ≤ h` by solving the equality-constrained
/// problem for every subset of at most `d` constraints and keeping the best
/// primal-feasible stationary point.
pub fn brute_force_qp(h_mat: &Mat, q: &Vector, g: &Mat, h: &Vector) -> Option<(Vector, f64)> {
    let d = q.len();
    let rows = g.nrows();
    let mut best: Option<(Vector, f64)> = None;
    for mask in 0u32..(1u32 << rows) {
        let active: Vec<usize> = (0..rows).filter(|i| mask >> i & 1 == 1).collect();
        if active.len() > d {
            continue;
        }
        let k = active.len();
        let mut kkt = Mat::zeros(d + k, d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(h_mat);
        let mut rhs = Vector::zeros(d + k);
        rhs.rows_mut(0, d).copy_from(&(-q));
        for (j, &i) in active.iter().enumerate() {
            for c in 0..d {
                kkt[(d + j, c)] = g[(i, c)];
                kkt[(c, d + j)] = g[(i, c)];
            }
            rhs[d + j] = h[i];
        }
        let lu = kkt.lu();
        let Some(sol) = lu.solve(&rhs) else { continue };
        let z = sol.rows(0, d).clone_owned();
        if !z.iter().all(|v| v.is_finite()) {
            continue;
        }
        let slack = h - g * &z;
        if slack.iter().any(|s| *s < -1e-9) {
            continue;
        }
        let value = 0.5 * z.dot(&(h_mat * &z)) + q.dot(&z);
        if best.as_ref().is_none_or(|(_, v)| value < *v) {
            best = Some((z, value));
        }
    }
    best
}

// ---------------------------------------------------------------------------
// sparse multiple-shooting MPC oracle

/// Solves the MPC problem in the sparse variables
/// `(x̄(0..=N), ū(0..N), θ)` with only the initial-state and dynamics
/// equalities, by one KKT solve. When the returned optimum satisfies every
/// inequality of the condensed problem it is also that problem's optimum.
///
/// Returns `(x̄(0), θ, ū, x̄(1..=N), cost)`.
pub fn sparse_mpc_oracle(
    ctrl: &MpcController,
    x: &Vector,
    y_t: &Vector,
) -> (Vector, Vector, Vec<Vector>, Vec<Vector>, f64) {
    let (a, b) = ctrl.nominal();
    let n = a.nrows();
    let m = b.ncols();
    let tuning = ctrl.tuning();
    let horizon = tuning.horizon;
    let mt = ctrl.m_theta().ncols();
    let mx = ctrl.m_theta().rows(0, n).clone_owned();
    let mu = ctrl.m_theta().rows(n, m).clone_owned();
    let nth = ctrl.n_theta();
    let p_term = ctrl.terminal_weight();

    let xs = |k: usize| k * n;
    let us = |k: usize| (horizon + 1) * n + k * m;
    let ts = (horizon + 1) * n + horizon * m;
    let nv = ts + mt;
    let neq = (horizon + 1) * n;

    // cost ½ vᵀ H v + gᵀ v + const, with residual blocks r = S v − s
    let mut hess = Mat::zeros(nv, nv);
    let mut grad = Vector::zeros(nv);
    let mut add_block = |sel: &Mat, w: &Mat, offset: &Vector| {
        hess += sel.transpose() * w * sel * 2.0;
        grad -= sel.transpose() * w * offset * 2.0;
    };
    for k in 0..=horizon {
        let mut sel = Mat::zeros(n, nv);
        sel.view_mut((0, xs(k)), (n, n)).fill_with_identity();
        sel.view_mut((0, ts), (n, mt)).copy_from(&(-&mx));
        let w = if k < horizon { &tuning.q } else { p_term };
        add_block(&sel, w, &Vector::zeros(n));
    }
    for k in 0..horizon {
        let mut sel = Mat::zeros(m, nv);
        sel.view_mut((0, us(k)), (m, m)).fill_with_identity();
        sel.view_mut((0, ts), (m, mt)).copy_from(&(-&mu));
        add_block(&sel, &tuning.r, &Vector::zeros(m));
    }
    let mut sel = Mat::zeros(nth.nrows(), nv);
    sel.view_mut((0, ts), (nth.nrows(), mt)).copy_from(nth);
    add_block(&sel, &tuning.t_w, y_t);

    let mut e = Mat::zeros(neq, nv);
    let mut f = Vector::zeros(neq);
    e.view_mut((0, xs(0)), (n, n)).fill_with_identity();
    f.rows_mut(0, n).copy_from(x);
    for k in 0..horizon {
        let r = (k + 1) * n;
        e.view_mut((r, xs(k + 1)), (n, n)).fill_with_identity();
        e.view_mut((r, xs(k)), (n, n)).copy_from(&(-a));
        e.view_mut((r, us(k)), (n, m)).copy_from(&(-b));
    }

    let mut kkt = Mat::zeros(nv + neq, nv + neq);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&hess);
    kkt.view_mut((0, nv), (nv, neq)).copy_from(&e.transpose());
    kkt.view_mut((nv, 0), (neq, nv)).copy_from(&e);
    let mut rhs = Vector::zeros(nv + neq);
    rhs.rows_mut(0, nv).copy_from(&(-&grad));
    rhs.rows_mut(nv, neq).copy_from(&f);
    let sol = kkt.lu().solve(&rhs).expect("nonsingular KKT system");
    let v = sol.rows(0, nv).clone_owned();
    let cost = 0.5 * v.dot(&(&hess * &v)) + grad.dot(&v) + y_t.dot(&(&tuning.t_w * y_t));
    let inputs = (0..horizon).map(|k| v.rows(us(k), m).clone_owned()).collect();
    let states = (1..=horizon).map(|k| v.rows(xs(k), n).clone_owned()).collect();
    (
        v.rows(0, n).clone_owned(),
        v.rows(ts, mt).clone_owned(),
        inputs,
        states,
        cost,
    )
}

// ---------------------------------------------------------------------------
// scenarios

pub fn scalar(v: f64) -> Vector {
    Vector::from_element(1, v)
}

/// Double integrator `x⁺ = [[1,1],[0,1]] x + [0.5; 1] u`, `y = x₁`,
/// `|x|∞ ≤ 5`, `|u| ≤ 1`.
pub fn double_integrator_scenario(y_t: f64, ell: f64) -> Scenario {
    Scenario {
        model: PlantModel::new(
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            Mat::from_row_slice(2, 1, &[0.5, 1.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
        )
        .unwrap(),
        truth: Uncertainty::zeros(2, 1),
        ell_a: ell,
        ell_b: ell,
        x_set: Polytope::symmetric_box(2, 5.0).unwrap(),
        u_set: Polytope::symmetric_box(1, 1.0).unwrap(),
        tuning: Tuning::new(
            Mat::identity(2, 2),
            Mat::identity(1, 1),
            Mat::identity(1, 1) * 1000.0,
            10,
            0.99,
        )
        .unwrap(),
        reference: vec![(0, scalar(y_t))],
        x0: Vector::zeros(2),
        learning: LearningConfig {
            trial_length: 100,
            budget: 1,
            ..LearningConfig::default()
        },
        synthesis: SynthesisOptions::default(),
    }
}

/// Scalar plant `x⁺ = 0.5 x + u`, both entries uncertain.
pub fn scalar_tube_scenario(truth: (f64, f64)) -> Scenario {
    Scenario {
        model: PlantModel::new(
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::zeros(1, 1),
        )
        .unwrap(),
        truth: Uncertainty::new(Mat::from_element(1, 1, truth.0), Mat::from_element(1, 1, truth.1))
            .unwrap(),
        ell_a: 0.1,
        ell_b: 0.1,
        x_set: Polytope::symmetric_box(1, 2.0).unwrap(),
        u_set: Polytope::symmetric_box(1, 1.0).unwrap(),
        tuning: Tuning::new(
            Mat::identity(1, 1),
            Mat::identity(1, 1),
            Mat::identity(1, 1) * 100.0,
            5,
            0.99,
        )
        .unwrap(),
        reference: vec![(0, scalar(0.8)), (50, scalar(-0.6))],
        x0: scalar(-1.0),
        learning: LearningConfig {
            trial_length: 100,
            ..LearningConfig::default()
        },
        synthesis: SynthesisOptions::default(),
    }
}

/// Mask over `[vec(ΔA); vec(ΔB)]` of the two-state learning plant:
/// `ΔA₂₁` and `ΔB₂` are uncertain.
pub const TWO_STATE_MASK: [bool; 6] = [false, false, true, false, false, true];

/// Two-state plant with two uncertain entries.
pub fn two_state_scenario(truth: (f64, f64)) -> Scenario {
    let mut da = Mat::zeros(2, 2);
    da[(1, 0)] = truth.0;
    let mut db = Mat::zeros(2, 1);
    db[(1, 0)] = truth.1;
    Scenario {
        model: PlantModel::new(
            Mat::from_row_slice(2, 2, &[0.9, 0.3, -0.1, 0.8]),
            Mat::from_row_slice(2, 1, &[0.0, 0.5]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::zeros(1, 1),
        )
        .unwrap(),
        truth: Uncertainty::new(da, db).unwrap(),
        ell_a: 0.04,
        ell_b: 0.04,
        x_set: Polytope::symmetric_box(2, 2.0).unwrap(),
        u_set: Polytope::symmetric_box(1, 1.0).unwrap(),
        tuning: Tuning::new(
            Mat::identity(2, 2),
            Mat::identity(1, 1),
            Mat::identity(1, 1) * 100.0,
            8,
            0.99,
        )
        .unwrap(),
        reference: vec![(0, scalar(0.8)), (50, scalar(-0.6))],
        x0: Vector::zeros(2),
        learning: LearningConfig {
            kind: CostKind::Identification,
            budget: 200,
            trial_length: 100,
            mask: Some(TWO_STATE_MASK.to_vec()),
            ..LearningConfig::default()
        },
        synthesis: SynthesisOptions::default(),
    }
}

// ---------------------------------------------------------------------------
// grid search

/// Arg-min of `f` over a uniform `per_axis × per_axis` grid of `[0,1]²`.
pub fn grid_argmin_2d(per_axis: usize, f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let mut best = (0.0, 0.0, f64::INFINITY);
    for i in 0..per_axis {
        for j in 0..per_axis {
            let (x, y) = (
                i as f64 / (per_axis - 1) as f64,
                j as f64 / (per_axis - 1) as f64,
            );
            let v = f(x, y);
            if v < best.2 {
                best = (x, y, v);
            }
        }
    }
    (best.0, best.1)
}

/// Arg-min of `f` over a uniform grid of `[lo, hi]`.
pub fn grid_argmin_1d(points: usize, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (lo, f64::INFINITY);
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best.0
}
