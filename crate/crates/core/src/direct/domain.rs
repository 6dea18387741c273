use crate::numerics::Vector;

use super::DirectError;

/// Box `[lower, upper]` searched by DIRECT, with the affine map to the
/// normalized cube. Axes with `lower == upper` are frozen and excluded from
/// the normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchDomain {
    lower: Vector,
    upper: Vector,
    free: Vec<usize>,
}

impl SearchDomain {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self, DirectError> {
        if lower.len() != upper.len() {
            return Err(DirectError::InvalidDomain(format!(
                "bounds of lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite()) || lower[i] > upper[i] {
                return Err(DirectError::InvalidDomain(format!(
                    "axis {i}: [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        let free = (0..lower.len()).filter(|&i| upper[i] > lower[i]).collect();
        Ok(SearchDomain { lower, upper, free })
    }

    /// Box for a flattened uncertainty `[vec(ΔA); vec(ΔB)]` that keeps every
    /// point within `‖ΔA‖∞ ≤ ℓ_A` and `‖ΔB‖∞ ≤ ℓ_B`.
    ///
    /// Without a mask each entry gets `ℓ_A / n` or `ℓ_B / m`. With a mask
    /// (`true` = uncertain) the masked-out entries are frozen at zero and each
    /// row's budget is shared only among its uncertain entries.
    pub fn for_uncertainty(
        n: usize,
        m: usize,
        ell_a: f64,
        ell_b: f64,
        mask: Option<&[bool]>,
    ) -> Result<Self, DirectError> {
        let dim = n * (n + m);
        if !(ell_a >= 0.0 && ell_b >= 0.0 && ell_a.is_finite() && ell_b.is_finite()) {
            return Err(DirectError::InvalidDomain(format!(
                "uncertainty bounds must be finite and nonnegative, got {ell_a}, {ell_b}"
            )));
        }
        if let Some(mask) = mask {
            if mask.len() != dim {
                return Err(DirectError::InvalidDomain(format!(
                    "mask of length {} for {dim} uncertain entries",
                    mask.len()
                )));
            }
        }
        let active = |i: usize| mask.is_none_or(|mk| mk[i]);
        let mut half = Vector::zeros(dim);
        // rows of ΔA, then rows of ΔB
        let rows = (0..n)
            .map(|r| (r * n, n, ell_a))
            .chain((0..n).map(|r| (n * n + r * m, m, ell_b)));
        for (start, len, ell) in rows {
            let count = if mask.is_some() {
                (start..start + len).filter(|&i| active(i)).count()
            } else {
                len
            };
            for i in start..start + len {
                if active(i) && count > 0 {
                    half[i] = ell / count as f64;
                }
            }
        }
        // 0 - h rather than -h so frozen axes get +0, not -0
        Self::new(half.map(|h| 0.0 - h), half)
    }

    /// Full dimension, frozen axes included.
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Number of axes DIRECT searches over.
    pub fn free_dims(&self) -> usize {
        self.free.len()
    }

    pub fn free_axes(&self) -> &[usize] {
        &self.free
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    pub fn width(&self) -> Vector {
        &self.upper - &self.lower
    }

    /// Domain point for normalized coordinates over the free axes.
    pub fn to_point(&self, unit: &Vector) -> Vector {
        let mut p = self.lower.clone();
        for (k, &i) in self.free.iter().enumerate() {
            p[i] = self.lower[i] + unit[k] * (self.upper[i] - self.lower[i]);
        }
        p
    }

    /// Normalized coordinates of a domain point.
    pub fn to_unit(&self, point: &Vector) -> Vector {
        Vector::from_iterator(
            self.free.len(),
            self.free
                .iter()
                .map(|&i| (point[i] - self.lower[i]) / (self.upper[i] - self.lower[i])),
        )
    }

    pub fn contains(&self, point: &Vector) -> bool {
        point.len() == self.dim()
            && (0..self.dim()).all(|i| point[i] >= self.lower[i] && point[i] <= self.upper[i])
    }

    /// The corner points (`2^k` for `k` free axes), lower corner first.
    pub fn corners(&self) -> Vec<Vector> {
        let k = self.free.len();
        (0..1usize << k)
            .map(|bits| {
                let mut p = self.lower.clone();
                for (j, &i) in self.free.iter().enumerate() {
                    if bits >> j & 1 == 1 {
                        p[i] = self.upper[i];
                    }
                }
                p
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::Uncertainty;
    use crate::numerics::induced_inf_norm;

    #[test]
    fn uniform_budget_respects_the_norm_bound() {
        let dom = SearchDomain::for_uncertainty(2, 1, 0.2, 0.1, None).unwrap();
        assert_eq!(dom.free_dims(), 6);
        for c in dom.corners() {
            let u = Uncertainty::unflatten(&c, 2, 1).unwrap();
            assert!(induced_inf_norm(&u.da) <= 0.2 + 1e-15);
            assert!(induced_inf_norm(&u.db) <= 0.1 + 1e-15);
        }
        assert!((dom.upper()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mask_shares_the_row_budget() {
        let mask = [false, true, true, false, false, false];
        let dom = SearchDomain::for_uncertainty(2, 1, 0.2, 0.1, Some(&mask)).unwrap();
        assert_eq!(dom.free_axes(), &[1, 2]);
        assert!((dom.upper()[1] - 0.2).abs() < 1e-15);
        assert!((dom.upper()[2] - 0.2).abs() < 1e-15);
        assert_eq!(dom.upper()[4], 0.0);
    }

    #[test]
    fn unit_map_round_trip() {
        let dom = SearchDomain::new(
            Vector::from_vec(vec![-1.0, 3.0, 0.0]),
            Vector::from_vec(vec![1.0, 3.0, 4.0]),
        )
        .unwrap();
        let u = Vector::from_vec(vec![0.25, 0.5]);
        let p = dom.to_point(&u);
        assert_eq!(p.as_slice(), &[-0.5, 3.0, 2.0]);
        assert_eq!(dom.to_unit(&p), u);
        assert!(dom.contains(&p));
    }

    #[test]
    fn inverted_bounds_rejected() {
        assert!(SearchDomain::new(Vector::from_element(1, 1.0), Vector::from_element(1, 0.0)).is_err());
    }
}
