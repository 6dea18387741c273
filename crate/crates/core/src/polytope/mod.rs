//! H-representation polytopes and the set operations used by the tube MPC:
//! support functions, Minkowski sums (through support oracles), Pontryagin
//! differences, robust positively invariant sets and maximal admissible
//! invariant sets.
//!
//! Nothing here enumerates vertices. Every geometric question is answered by
//! one or more small LPs through [`lp_solve`].

mod invariant;
mod rpi;

pub use invariant::{max_invariant_set, InvariantSet};
pub use rpi::{axis_template, construct_rpi, RpiSet};

use thiserror::Error;

use crate::numerics::{lp_solve, LpProblem, LpStatus, Mat, NumericsError, Tolerances, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolytopeError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("set is unbounded along some direction")]
    Unbounded,
    #[error("set is empty")]
    Empty,
    #[error("Pontryagin difference is empty")]
    EmptyDifference,
    #[error("dynamics matrix is not Schur stable")]
    NotSchur,
    #[error("disturbance set must contain the origin")]
    OriginNotContained,
    #[error("no contraction step found within {0} powers")]
    NotContractive(usize),
    #[error("invariance verification failed after {0} template enrichment rounds")]
    VerificationFailed(usize),
    #[error("maximal admissible set not finitely determined within {0} steps")]
    NotFinitelyDetermined(usize),
}

pub type Result<T> = std::result::Result<T, PolytopeError>;

/// Anything with a computable support function `h(a) = max{aᵀz : z ∈ S}`.
pub trait Support {
    fn dim(&self) -> usize;
    fn support(&self, direction: &Vector) -> Result<f64>;
}

/// Bounded convex polytope `{z : Dz ≤ c}`.
///
/// Rows are scaled to unit ∞-norm on construction. An empty set is kept as
/// an explicit flag rather than as an infeasible row system.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    normals: Mat,
    offsets: Vector,
    empty: bool,
    /// `Some((lower, upper))` when the rows are exactly the axis box facets
    bounds: Option<(Vector, Vector)>,
}

impl Polytope {
    /// Validated constructor: normalizes rows, then checks nonemptiness and
    /// boundedness with LPs.
    pub fn new(normals: Mat, offsets: Vector) -> Result<Self> {
        let p = Self::from_rows_unchecked(normals, offsets)?;
        if p.empty {
            return Ok(p);
        }
        if !p.check_nonempty()? {
            return Ok(Polytope::empty(p.dim()));
        }
        for i in 0..p.dim() {
            for s in [1.0, -1.0] {
                let mut e = Vector::zeros(p.dim());
                e[i] = s;
                p.support(&e)?;
            }
        }
        Ok(p)
    }

    /// Normalizes rows without running boundedness or emptiness LPs.
    pub(crate) fn from_rows_unchecked(normals: Mat, offsets: Vector) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(PolytopeError::Dimension(format!(
                "{} normals but {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        if !normals.iter().chain(offsets.iter()).all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite("polytope data").into());
        }
        let d = normals.ncols();
        let mut rows: Vec<Vector> = Vec::with_capacity(normals.nrows());
        let mut offs: Vec<f64> = Vec::with_capacity(normals.nrows());
        for i in 0..normals.nrows() {
            let row = normals.row(i).transpose();
            let scale = row.amax();
            if scale == 0.0 {
                if offsets[i] < -Tolerances::DEFAULT.membership {
                    return Ok(Polytope::empty(d));
                }
                continue;
            }
            rows.push(row / scale);
            offs.push(offsets[i] / scale);
        }
        let normals = if rows.is_empty() {
            Mat::zeros(0, d)
        } else {
            Mat::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>())
        };
        let offsets = Vector::from_vec(offs);
        let bounds = detect_box(&normals, &offsets);
        Ok(Polytope {
            normals,
            offsets,
            empty: false,
            bounds,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Polytope {
            normals: Mat::zeros(0, dim),
            offsets: Vector::zeros(0),
            empty: true,
            bounds: None,
        }
    }

    /// Axis-aligned box `[lower, upper]`.
    pub fn from_box(lower: &Vector, upper: &Vector) -> Result<Self> {
        let d = lower.len();
        if upper.len() != d {
            return Err(PolytopeError::Dimension("box bounds differ in length".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Ok(Polytope::empty(d));
        }
        let mut normals = Mat::zeros(2 * d, d);
        let mut offsets = Vector::zeros(2 * d);
        for i in 0..d {
            normals[(2 * i, i)] = 1.0;
            offsets[2 * i] = upper[i];
            normals[(2 * i + 1, i)] = -1.0;
            offsets[2 * i + 1] = -lower[i];
        }
        Self::from_rows_unchecked(normals, offsets)
    }

    /// `{z : |z|∞ ≤ radius}`.
    pub fn symmetric_box(dim: usize, radius: f64) -> Result<Self> {
        let r = Vector::from_element(dim, radius);
        Self::from_box(&(-&r), &r)
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn n_facets(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &Mat {
        &self.normals
    }

    pub fn offsets(&self) -> &Vector {
        &self.offsets
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// Box bounds when the set is an axis-aligned box.
    pub fn box_bounds(&self) -> Option<&(Vector, Vector)> {
        self.bounds.as_ref()
    }

    /// `Dz ≤ c + 1e-9` componentwise.
    pub fn contains(&self, z: &Vector) -> bool {
        if self.empty || z.len() != self.dim() {
            return false;
        }
        let tol = Tolerances::DEFAULT.membership;
        (&self.normals * z - &self.offsets).iter().all(|v| *v <= tol)
    }

    /// Largest facet violation `max_i (D_i z - c_i)` (negative inside).
    pub fn violation(&self, z: &Vector) -> f64 {
        (&self.normals * z - &self.offsets)
            .iter()
            .fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    /// `{s·z : z ∈ self}` for `s ≥ 0`.
    pub fn scaled(&self, s: f64) -> Polytope {
        assert!(s >= 0.0, "scaling factor must be nonnegative");
        let mut p = self.clone();
        p.offsets *= s;
        p.bounds = detect_box(&p.normals, &p.offsets);
        p
    }

    /// `self ∩ other`.
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        if self.dim() != other.dim() {
            return Err(PolytopeError::Dimension("intersection of different dimensions".into()));
        }
        if self.empty || other.empty {
            return Ok(Polytope::empty(self.dim()));
        }
        let normals = stack_rows(&self.normals, &other.normals);
        let mut offsets = Vector::zeros(self.n_facets() + other.n_facets());
        offsets.rows_mut(0, self.n_facets()).copy_from(&self.offsets);
        offsets
            .rows_mut(self.n_facets(), other.n_facets())
            .copy_from(&other.offsets);
        let p = Self::from_rows_unchecked(normals, offsets)?;
        if !p.check_nonempty()? {
            return Ok(Polytope::empty(self.dim()));
        }
        Ok(p)
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &Polytope) -> Result<Polytope> {
        let (d1, d2) = (self.dim(), other.dim());
        if self.empty || other.empty {
            return Ok(Polytope::empty(d1 + d2));
        }
        let mut normals = Mat::zeros(self.n_facets() + other.n_facets(), d1 + d2);
        normals
            .view_mut((0, 0), (self.n_facets(), d1))
            .copy_from(&self.normals);
        normals
            .view_mut((self.n_facets(), d1), (other.n_facets(), d2))
            .copy_from(&other.normals);
        let offsets = Vector::from_iterator(
            self.n_facets() + other.n_facets(),
            self.offsets.iter().chain(other.offsets.iter()).copied(),
        );
        Self::from_rows_unchecked(normals, offsets)
    }

    /// Preimage `{z : M z ∈ self}` under a linear map. The result is
    /// only guaranteed bounded when `M` has full column rank.
    pub fn preimage(&self, m: &Mat) -> Result<Polytope> {
        if m.nrows() != self.dim() {
            return Err(PolytopeError::Dimension(format!(
                "preimage map has {} rows, set has dimension {}",
                m.nrows(),
                self.dim()
            )));
        }
        if self.empty {
            return Ok(Polytope::empty(m.ncols()));
        }
        Self::from_rows_unchecked(&self.normals * m, self.offsets.clone())
    }

    fn check_nonempty(&self) -> Result<bool> {
        if self.empty {
            return Ok(false);
        }
        if self.n_facets() == 0 {
            return Ok(true);
        }
        let lp = LpProblem::new(Vector::zeros(self.dim()), self.normals.clone(), self.offsets.clone())?;
        Ok(lp_solve(&lp)?.status == LpStatus::Optimal)
    }

    /// Maximizer of `aᵀz` over the set.
    pub fn support_point(&self, a: &Vector) -> Result<Vector> {
        if self.empty {
            return Err(PolytopeError::Empty);
        }
        let lp = LpProblem::new(-a, self.normals.clone(), self.offsets.clone())?;
        let sol = lp_solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(sol.z),
            LpStatus::Unbounded => Err(PolytopeError::Unbounded),
            LpStatus::Infeasible => Err(PolytopeError::Empty),
        }
    }

    /// Drops duplicate normals (keeping the smaller offset) and facets that
    /// are implied by the remaining ones.
    pub fn remove_redundant(&self) -> Result<Polytope> {
        if self.empty || self.n_facets() == 0 {
            return Ok(self.clone());
        }
        let tol = Tolerances::DEFAULT.redundancy;
        // duplicates first
        let mut keep: Vec<usize> = Vec::new();
        'rows: for i in 0..self.n_facets() {
            for k in keep.iter_mut() {
                if (self.normals.row(i) - self.normals.row(*k)).amax() <= 1e-12 {
                    if self.offsets[i] < self.offsets[*k] {
                        *k = i;
                    }
                    continue 'rows;
                }
            }
            keep.push(i);
        }
        let mut idx: Vec<usize> = keep;
        // then LP redundancy, one row at a time against the survivors
        let mut i = 0;
        while i < idx.len() {
            let others: Vec<usize> = idx.iter().copied().filter(|&k| k != idx[i]).collect();
            let sub = self.select(&others);
            let row = self.normals.row(idx[i]).transpose();
            let lp = LpProblem::new(-&row, sub.normals.clone(), sub.offsets.clone())?;
            let sol = lp_solve(&lp)?;
            let redundant = match sol.status {
                LpStatus::Optimal => -sol.value <= self.offsets[idx[i]] + tol,
                LpStatus::Unbounded => false,
                LpStatus::Infeasible => false,
            };
            if redundant {
                idx.remove(i);
            } else {
                i += 1;
            }
        }
        Ok(self.select(&idx))
    }

    fn select(&self, rows: &[usize]) -> Polytope {
        let normals = Mat::from_rows(
            &rows
                .iter()
                .map(|&i| self.normals.row(i).clone_owned())
                .collect::<Vec<_>>(),
        );
        let normals = if rows.is_empty() {
            Mat::zeros(0, self.dim())
        } else {
            normals
        };
        let offsets = Vector::from_iterator(rows.len(), rows.iter().map(|&i| self.offsets[i]));
        let bounds = detect_box(&normals, &offsets);
        Polytope {
            normals,
            offsets,
            empty: false,
            bounds,
        }
    }

    /// `self ⊆ other`, certified by one support LP per facet of `other`.
    pub fn is_subset_of(&self, other: &Polytope) -> Result<bool> {
        if self.empty {
            return Ok(true);
        }
        let tol = Tolerances::DEFAULT.redundancy;
        for i in 0..other.n_facets() {
            let d = other.normals.row(i).transpose();
            if self.support(&d)? > other.offsets[i] + tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

}

impl Support for Polytope {
    fn dim(&self) -> usize {
        self.normals.ncols()
    }

    fn support(&self, a: &Vector) -> Result<f64> {
        if a.len() != self.dim() {
            return Err(PolytopeError::Dimension(format!(
                "direction of length {} for a set of dimension {}",
                a.len(),
                self.dim()
            )));
        }
        if self.empty {
            return Ok(f64::NEG_INFINITY);
        }
        if let Some((lo, hi)) = &self.bounds {
            return Ok(a
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .map(|(ai, (l, u))| if *ai >= 0.0 { ai * u } else { ai * l })
                .sum());
        }
        if a.iter().all(|v| *v == 0.0) {
            return Ok(0.0);
        }
        let lp = LpProblem::new(-a, self.normals.clone(), self.offsets.clone())?;
        let sol = lp_solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(-sol.value),
            LpStatus::Unbounded => Err(PolytopeError::Unbounded),
            LpStatus::Infeasible => Ok(f64::NEG_INFINITY),
        }
    }
}

/// Minkowski sum `⊕ᵢ Mᵢ Sᵢ`, represented only through its support function.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportOracle {
    dim: usize,
    terms: Vec<(Mat, Polytope)>,
}

impl SupportOracle {
    pub fn new(dim: usize) -> Self {
        SupportOracle {
            dim,
            terms: Vec::new(),
        }
    }

    /// Adds the term `M·S`; `M` must map the dimension of `S` into `dim`.
    pub fn add_term(mut self, map: Mat, set: Polytope) -> Result<Self> {
        if map.nrows() != self.dim || map.ncols() != set.dim() {
            return Err(PolytopeError::Dimension(format!(
                "term map {:?} incompatible with set dimension {} and oracle dimension {}",
                map.shape(),
                set.dim(),
                self.dim
            )));
        }
        self.terms.push((map, set));
        Ok(self)
    }

    pub fn terms(&self) -> &[(Mat, Polytope)] {
        &self.terms
    }
}

impl Support for SupportOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn support(&self, a: &Vector) -> Result<f64> {
        if a.len() != self.dim {
            return Err(PolytopeError::Dimension(format!(
                "direction of length {} for an oracle of dimension {}",
                a.len(),
                self.dim
            )));
        }
        let mut total = 0.0;
        for (map, set) in &self.terms {
            total += set.support(&(map.transpose() * a))?;
        }
        Ok(total)
    }
}

/// Pontryagin difference `A ⊖ S = {z : z ⊕ S ⊆ A}`.
///
/// Each offset of `A` is reduced by the support of `S` in the facet normal.
/// Returns [`PolytopeError::EmptyDifference`] when nothing remains.
pub fn pontryagin_diff<S: Support + ?Sized>(a: &Polytope, s: &S) -> Result<Polytope> {
    if a.dim() != s.dim() {
        return Err(PolytopeError::Dimension(format!(
            "Pontryagin difference of dimensions {} and {}",
            a.dim(),
            s.dim()
        )));
    }
    if a.is_empty() {
        return Err(PolytopeError::EmptyDifference);
    }
    let mut offsets = a.offsets.clone();
    for i in 0..a.n_facets() {
        let d = a.normals.row(i).transpose();
        offsets[i] -= s.support(&d)?;
    }
    let p = Polytope::from_rows_unchecked(a.normals.clone(), offsets)?;
    if p.empty || !p.check_nonempty()? {
        return Err(PolytopeError::EmptyDifference);
    }
    Ok(p)
}

/// `{A z : z ∈ S}` support evaluated in direction `d`, plus `h_W(d)` when a
/// disturbance set is given. Used by every invariance certificate.
pub(crate) fn image_support(
    set: &Polytope,
    a: &Mat,
    w: Option<&dyn Support>,
    d: &Vector,
) -> Result<f64> {
    let mut v = set.support(&(a.transpose() * d))?;
    if let Some(w) = w {
        v += w.support(d)?;
    }
    Ok(v)
}

/// Certifies `A·S ⊕ W ⊆ S` facet by facet. Returns the largest excess
/// `h_S(Aᵀd) + h_W(d) − c` over all facets (≤ tolerance means invariant).
pub fn invariance_excess(set: &Polytope, a: &Mat, w: Option<&dyn Support>) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..set.n_facets() {
        let d = set.normals.row(i).transpose();
        let excess = image_support(set, a, w, &d)? - set.offsets[i];
        worst = worst.max(excess);
    }
    Ok(worst)
}

fn stack_rows(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

fn detect_box(normals: &Mat, offsets: &Vector) -> Option<(Vector, Vector)> {
    let d = normals.ncols();
    if normals.nrows() != 2 * d || d == 0 {
        return None;
    }
    let mut lo = vec![None; d];
    let mut hi = vec![None; d];
    for i in 0..normals.nrows() {
        let row = normals.row(i);
        let nz: Vec<usize> = (0..d).filter(|&j| row[j] != 0.0).collect();
        if nz.len() != 1 {
            return None;
        }
        let j = nz[0];
        if row[j] == 1.0 && hi[j].is_none() {
            hi[j] = Some(offsets[i]);
        } else if row[j] == -1.0 && lo[j].is_none() {
            lo[j] = Some(-offsets[i]);
        } else {
            return None;
        }
    }
    let lo: Option<Vec<f64>> = lo.into_iter().collect();
    let hi: Option<Vec<f64>> = hi.into_iter().collect();
    match (lo, hi) {
        (Some(l), Some(h)) if l.iter().zip(&h).all(|(a, b)| a <= b) => {
            Some((Vector::from_vec(l), Vector::from_vec(h)))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn support_of_unit_box() {
        let b = Polytope::symmetric_box(2, 1.0).unwrap();
        assert_eq!(b.support(&v(&[1.0, 1.0])).unwrap(), 2.0);
        assert!((b.scaled(0.2).support(&v(&[1.0, 0.0])).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn support_through_lp_matches_box_shortcut() {
        // a box written with redundant, non-axis-ordered rows goes through the LP
        let normals = Mat::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
        let p = Polytope::new(normals, v(&[1.0, 1.0, 1.0, 1.0, 5.0])).unwrap();
        assert!(p.box_bounds().is_none());
        assert!((p.support(&v(&[1.0, 1.0])).unwrap() - 2.0).abs() < 1e-12);
        assert!((p.support(&v(&[-3.0, 0.5])).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_support_is_additive() {
        let w = Polytope::symmetric_box(2, 0.1).unwrap();
        let oracle = SupportOracle::new(2)
            .add_term(Mat::identity(2, 2) * 0.5, w.clone())
            .unwrap()
            .add_term(Mat::identity(2, 2), w)
            .unwrap();
        assert!((oracle.support(&v(&[1.0, 0.0])).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn pontryagin_of_boxes() {
        let a = Polytope::symmetric_box(2, 1.0).unwrap();
        let s = Polytope::symmetric_box(2, 0.2).unwrap();
        let d = pontryagin_diff(&a, &s).unwrap();
        let expect = Polytope::symmetric_box(2, 0.8).unwrap();
        assert!((d.offsets() - expect.offsets()).amax() < 1e-15);
    }

    #[test]
    fn pontryagin_identity_with_origin() {
        let a = Polytope::new(
            Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]),
            v(&[1.0, 1.0, 1.0]),
        )
        .unwrap();
        let zero = Polytope::symmetric_box(2, 0.0).unwrap();
        let d = pontryagin_diff(&a, &zero).unwrap();
        assert_eq!(d.offsets(), a.offsets());
    }

    #[test]
    fn pontryagin_too_large_is_empty() {
        let a = Polytope::symmetric_box(1, 1.0).unwrap();
        let s = Polytope::symmetric_box(1, 1.5).unwrap();
        assert_eq!(pontryagin_diff(&a, &s), Err(PolytopeError::EmptyDifference));
    }

    #[test]
    fn erosion_then_dilation_stays_inside() {
        let a = Polytope::symmetric_box(2, 1.0).unwrap();
        let s = Polytope::symmetric_box(2, 0.3).unwrap();
        let d = pontryagin_diff(&a, &s).unwrap();
        for i in 0..a.n_facets() {
            let n = a.normals().row(i).transpose();
            let lhs = d.support(&n).unwrap() + s.support(&n).unwrap();
            assert!(lhs <= a.offsets()[i] + 1e-12);
        }
    }

    #[test]
    fn membership() {
        let b = Polytope::symmetric_box(2, 1.0).unwrap();
        assert!(b.contains(&v(&[0.0, 0.0])));
        assert!(!b.contains(&v(&[1.0 + 1e-6, 0.0])));
        assert!(b.contains(&v(&[1.0 + 1e-10, 0.0])));
    }

    #[test]
    fn unbounded_rows_are_rejected() {
        let half = Polytope::new(Mat::from_row_slice(1, 2, &[1.0, 0.0]), v(&[1.0]));
        assert_eq!(half, Err(PolytopeError::Unbounded));
    }

    #[test]
    fn infeasible_rows_give_empty_set() {
        let p = Polytope::new(Mat::from_row_slice(2, 1, &[1.0, -1.0]), v(&[-1.0, 0.0])).unwrap();
        assert!(p.is_empty());
        assert!(!p.contains(&v(&[0.0])));
    }

    #[test]
    fn redundant_rows_are_pruned() {
        let normals = Mat::from_row_slice(
            6,
            2,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, 1.0, 2.0, 0.0],
        );
        let p = Polytope::new(normals, v(&[1.0, 1.0, 1.0, 1.0, 3.0, 1.0])).unwrap();
        let q = p.remove_redundant().unwrap();
        // x <= 0.5 (from 2x <= 1) replaces x <= 1; x + y <= 3 is implied
        assert_eq!(q.n_facets(), 4);
        assert!((q.support(&v(&[1.0, 0.0])).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rows_are_normalized() {
        let p = Polytope::new(Mat::from_row_slice(2, 1, &[4.0, -2.0]), v(&[2.0, 2.0])).unwrap();
        assert_eq!(p.normals()[(0, 0)], 1.0);
        assert_eq!(p.offsets()[0], 0.5);
        assert_eq!(p.box_bounds().unwrap().0[0], -1.0);
    }
}
