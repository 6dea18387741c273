use esilc::numerics::{Mat, Vector};
use esilc::polytope::{
    axis_template, construct_rpi, invariance_excess, max_invariant_set, pontryagin_diff, Polytope, Support,
    SupportOracle,
};
use proptest::prelude::*;

/// Box `[-r, r]` per axis from `radii`.
fn centered_box(radii: &[f64]) -> Polytope {
    let r = Vector::from_row_slice(radii);
    Polytope::from_box(&-&r, &r).unwrap()
}

/// Support of a box by enumerating its vertices.
fn vertex_support(lower: &[f64], upper: &[f64], d: &Vector) -> f64 {
    let n = lower.len();
    (0..1usize << n)
        .map(|mask| {
            (0..n)
                .map(|i| d[i] * if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn stable_2x2() -> impl Strategy<Value = Mat> {
    // spectral radius bounded by the ∞-norm, kept below 0.9
    prop::collection::vec(-0.45..0.45f64, 4).prop_map(|v| Mat::from_row_slice(2, 2, &v))
}

fn direction(dim: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-1.0..1.0f64, dim).prop_map(Vector::from_vec)
}

fn bounds(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((-2.0..0.0f64, 0.1..2.0f64), dim).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn box_support_matches_vertex_enumeration((lo, hi) in bounds(3), d in direction(3)) {
        let p = Polytope::from_box(&Vector::from_vec(lo.clone()), &Vector::from_vec(hi.clone())).unwrap();
        let h = p.support(&d).unwrap();
        prop_assert!((h - vertex_support(&lo, &hi, &d)).abs() <= 1e-9);
    }

    #[test]
    fn minkowski_support_is_additive(
        a in prop::collection::vec(0.1..2.0f64, 2),
        b in prop::collection::vec(0.1..2.0f64, 2),
        m in prop::collection::vec(-1.0..1.0f64, 4),
        d in direction(2),
    ) {
        let pa = centered_box(&a);
        let pb = centered_box(&b);
        let map = Mat::from_row_slice(2, 2, &m);
        let sum = SupportOracle::new(2)
            .add_term(Mat::identity(2, 2), pa.clone()).unwrap()
            .add_term(map.clone(), pb.clone()).unwrap();
        let expected = pa.support(&d).unwrap() + pb.support(&(map.transpose() * &d)).unwrap();
        prop_assert!((sum.support(&d).unwrap() - expected).abs() <= 1e-9);
    }

    #[test]
    fn difference_plus_subtrahend_stays_inside(
        a in prop::collection::vec(1.0..3.0f64, 2),
        s in prop::collection::vec(0.0..0.8f64, 2),
        tilt in -0.5..0.5f64,
    ) {
        // A: box cut by a tilted facet, S: small box
        let pa = Polytope::new(
            Mat::from_row_slice(5, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, tilt]),
            Vector::from_row_slice(&[a[0], a[0], a[1], a[1], a[0] * 0.9]),
        )
        .unwrap();
        let ps = centered_box(&s);
        let diff = pontryagin_diff(&pa, &ps).unwrap();
        prop_assert!(!diff.is_empty());
        for i in 0..pa.n_facets() {
            let d = pa.normals().row(i).transpose();
            let lhs = diff.support(&d).unwrap() + ps.support(&d).unwrap();
            prop_assert!(lhs <= pa.offsets()[i] + 1e-9);
        }
    }

    #[test]
    fn difference_with_the_origin_is_the_identity(a in prop::collection::vec(0.2..3.0f64, 3), d in direction(3)) {
        let pa = centered_box(&a);
        let zero = centered_box(&[0.0, 0.0, 0.0]);
        let diff = pontryagin_diff(&pa, &zero).unwrap();
        prop_assert!((diff.support(&d).unwrap() - pa.support(&d).unwrap()).abs() <= 1e-12);
        prop_assert!(diff.is_subset_of(&pa).unwrap() && pa.is_subset_of(&diff).unwrap());
    }

    #[test]
    fn scaling_scales_the_support(a in prop::collection::vec(0.2..3.0f64, 2), s in 0.0..4.0f64, d in direction(2)) {
        let pa = centered_box(&a);
        let lhs = pa.scaled(s).support(&d).unwrap();
        prop_assert!((lhs - s * pa.support(&d).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn rpi_sets_are_invariant_and_contain_the_disturbance(a_k in stable_2x2(), w in prop::collection::vec(0.01..0.5f64, 2)) {
        let pw = centered_box(&w);
        let rpi = construct_rpi(&a_k, &pw, &axis_template(2), 0.1).unwrap();
        let excess = invariance_excess(&rpi.set, &a_k, Some(&pw as &dyn Support)).unwrap();
        prop_assert!(excess <= 1e-9, "excess {}", excess);
        prop_assert!(pw.is_subset_of(&rpi.set).unwrap());
    }

    #[test]
    fn maximal_admissible_sets_are_invariant_and_admissible(a in stable_2x2(), r in prop::collection::vec(0.5..2.0f64, 2)) {
        // scale A up so the constraint actually cuts
        let a = a * 2.0;
        prop_assume!(a.complex_eigenvalues().iter().all(|l| l.norm() < 0.99));
        let constraint = centered_box(&r);
        let inv = max_invariant_set(&a, &constraint, 0, 200).unwrap();
        let excess = invariance_excess(&inv.set, &a, None).unwrap();
        prop_assert!(excess <= 1e-9, "excess {}", excess);
        prop_assert!(inv.set.is_subset_of(&constraint).unwrap());
    }
}

#[test]
fn scalar_rpi_is_the_geometric_series() {
    let w = centered_box(&[0.1]);
    let rpi = construct_rpi(&Mat::from_element(1, 1, 0.5), &w, &axis_template(1), 0.1).unwrap();
    let one = Vector::from_element(1, 1.0);
    assert!((rpi.set.support(&one).unwrap() - 0.2).abs() <= 1e-12);
    assert!((rpi.set.support(&-one).unwrap() - 0.2).abs() <= 1e-12);
}

#[test]
fn rotating_dynamics_still_certify() {
    // complex eigenvalues of modulus 0.9: the template never closes under A_Kᵀ
    let (c, s) = (0.9 * 0.7f64.cos(), 0.9 * 0.7f64.sin());
    let a_k = Mat::from_row_slice(2, 2, &[c, -s, s, c]);
    let w = centered_box(&[0.05, 0.05]);
    let rpi = construct_rpi(&a_k, &w, &axis_template(2), 0.1).unwrap();
    let excess = invariance_excess(&rpi.set, &a_k, Some(&w as &dyn Support)).unwrap();
    assert!(excess <= 1e-9, "excess {excess}");
    assert!(rpi.scale > 1.0, "scale {}", rpi.scale);
}
