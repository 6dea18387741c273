use crate::numerics::{is_schur, lp_solve, LpProblem, LpStatus, Mat, Tolerances, Vector};

use super::{invariance_excess, Polytope, PolytopeError, Result};

/// Maximal admissible invariant set and the determination index.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSet {
    pub set: Polytope,
    /// first `k` at which all rows `C Aᵏ w ≤ c` were redundant
    pub k_star: usize,
}

/// Maximal admissible set `{w : C Aᵏ w ≤ c, k ≥ 0}` of `w⁺ = A w` inside
/// `constraint = {C w ≤ c}`, by the finite-determination recursion.
///
/// The last `free_dims` coordinates must be constant under `A` (identity
/// block, no coupling back into them); the leading block must be Schur.
/// At step `k` each row of `C Aᵏ` is tested for redundancy against the
/// rows kept so far and only non-redundant rows are appended, so the
/// description stays small. The result is pruned and then certified by
/// facet LPs (`A·O ⊆ O` and `O ⊆ constraint`).
pub fn max_invariant_set(
    a: &Mat,
    constraint: &Polytope,
    free_dims: usize,
    cap: usize,
) -> Result<InvariantSet> {
    let dim = constraint.dim();
    if a.shape() != (dim, dim) || free_dims > dim {
        return Err(PolytopeError::Dimension(format!(
            "dynamics {:?} for a constraint of dimension {} with {} free coordinates",
            a.shape(),
            dim,
            free_dims
        )));
    }
    let stable = dim - free_dims;
    let free_block = a.view((stable, 0), (free_dims, dim));
    let mut expected = Mat::zeros(free_dims, dim);
    expected
        .view_mut((0, stable), (free_dims, free_dims))
        .fill_with_identity();
    if (free_block - &expected).amax() > 0.0 {
        return Err(PolytopeError::Dimension(
            "free coordinates must evolve by the identity".into(),
        ));
    }
    if !is_schur(&a.view((0, 0), (stable, stable)).clone_owned()) {
        return Err(PolytopeError::NotSchur);
    }
    if constraint.is_empty() {
        return Err(PolytopeError::Empty);
    }

    let tol = Tolerances::DEFAULT.redundancy;
    let base = constraint.remove_redundant()?;
    let c_rows = base.normals().clone();
    let c_offs = base.offsets().clone();

    let mut normals = c_rows.clone();
    let mut offsets = c_offs.clone();
    let mut power = a.clone();
    for k in 1..=cap {
        let rows = &c_rows * &power;
        let mut new_rows: Vec<usize> = Vec::new();
        for i in 0..rows.nrows() {
            let row = rows.row(i).transpose();
            if row.amax() <= 1e-14 {
                if c_offs[i] < -tol {
                    return Err(PolytopeError::Empty);
                }
                continue;
            }
            let lp = LpProblem::new(-&row, normals.clone(), offsets.clone())?;
            let sol = lp_solve(&lp)?;
            match sol.status {
                LpStatus::Optimal => {
                    if -sol.value > c_offs[i] + tol {
                        new_rows.push(i);
                    }
                }
                LpStatus::Unbounded => return Err(PolytopeError::Unbounded),
                LpStatus::Infeasible => return Err(PolytopeError::Empty),
            }
        }
        if new_rows.is_empty() {
            let set = Polytope::from_rows_unchecked(normals, offsets)?.remove_redundant()?;
            certify(a, &set, constraint)?;
            log::debug!(
                "maximal invariant set: k* = {k}, {} facets",
                set.n_facets()
            );
            return Ok(InvariantSet { set, k_star: k });
        }
        let old = normals.nrows();
        normals = normals.insert_rows(old, new_rows.len(), 0.0);
        offsets = offsets.insert_rows(old, new_rows.len(), 0.0);
        for (j, &i) in new_rows.iter().enumerate() {
            normals.set_row(old + j, &rows.row(i));
            offsets[old + j] = c_offs[i];
        }
        power = a * power;
    }
    Err(PolytopeError::NotFinitelyDetermined(cap))
}

fn certify(a: &Mat, set: &Polytope, constraint: &Polytope) -> Result<()> {
    let tol = Tolerances::DEFAULT.redundancy;
    let excess = invariance_excess(set, a, None)?;
    if excess > tol || !set.is_subset_of(constraint)? {
        return Err(PolytopeError::VerificationFailed(0));
    }
    if !set.contains(&Vector::zeros(set.dim())) && constraint.contains(&Vector::zeros(set.dim())) {
        return Err(PolytopeError::VerificationFailed(0));
    }
    Ok(())
}
