mod common;

use nalgebra::{DMatrix, DVector, Matrix2};
use proptest::prelude::*;

use common::{reference_case, reference_result};
use rescon::plot::{ellipse_boundary, ellipse_support, project_ellipse};
use rescon::reachability::{check_separation, hyperplane_distance, Ellipsoid, HalfSpace};

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let l = DMatrix::from_vec(n, n, v);
        &l * l.transpose() + DMatrix::identity(n, n) * 0.05
    })
}

/// `min {xᵀW⁻¹x : x_i = p₀, x_j = p₁}` from the Schur complement of `W⁻¹`.
fn min_level_on_fibre(w: &DMatrix<f64>, i: usize, j: usize, p: [f64; 2]) -> f64 {
    let n = w.nrows();
    let inv = w.clone().try_inverse().unwrap();
    let rest: Vec<usize> = (0..n).filter(|k| *k != i && *k != j).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| inv[(rows[r], cols[c])])
    };
    let ij = [i, j];
    let mut s = pick(&ij, &ij);
    if !rest.is_empty() {
        let qq = pick(&rest, &rest).try_inverse().unwrap();
        s -= pick(&ij, &rest) * qq * pick(&rest, &ij);
    }
    let v = DVector::from_vec(p.to_vec());
    (v.transpose() * s * v)[(0, 0)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projected_boundary_is_the_shadow(
        (w, i, j) in (2usize..=6).prop_flat_map(|n| (spd(n), 0..n, 0..n)).prop_filter("distinct", |(_, i, j)| i != j),
    ) {
        let s = project_ellipse(&w, i, j).unwrap();
        for p in ellipse_boundary(&s, 24) {
            let level = min_level_on_fibre(&w, i, j, p);
            prop_assert!((level - 1.0).abs() < 1e-7, "level {level}");
        }
    }

    #[test]
    fn projected_support_matches_the_lifted_maximiser(
        (w, i, j) in (2usize..=6).prop_flat_map(|n| (spd(n), 0..n, 0..n)).prop_filter("distinct", |(_, i, j)| i != j),
        theta in 0.0f64..std::f64::consts::TAU,
    ) {
        let n = w.nrows();
        let c2 = [theta.cos(), theta.sin()];
        let mut c = DVector::zeros(n);
        c[i] = c2[0];
        c[j] = c2[1];
        // x* = W c / sqrt(cᵀ W c) maximises cᵀx on the boundary
        let wc = &w * &c;
        let x = &wc / c.dot(&wc).sqrt();
        let e = Ellipsoid::new(w.clone()).unwrap();
        prop_assert!((e.level(&x).unwrap() - 1.0).abs() < 1e-8);
        let s = project_ellipse(&w, i, j).unwrap();
        prop_assert!((ellipse_support(&s, c2) - c.dot(&x)).abs() < 1e-10);
        prop_assert!((e.support(&c) - c.dot(&x)).abs() < 1e-10);
    }
}

#[test]
fn tangent_ellipse_touches_the_limit() {
    // W₁₁ = g² puts the frequency extreme exactly on the limit
    let g = 0.2;
    let w = DMatrix::from_row_slice(3, 3, &[g * g, 0.01, 0.0, 0.01, 0.5, 0.1, 0.0, 0.1, 0.3]);
    let s = project_ellipse(&w, 0, 1).unwrap();
    assert!((ellipse_support(&s, [1.0, 0.0]) - g).abs() < 1e-15);
    let top = ellipse_boundary(&s, 20_000)
        .into_iter()
        .map(|p| p[0])
        .fold(f64::MIN, f64::max);
    assert!((top - g).abs() < 1e-6, "{top}");
    let h = HalfSpace::new(DVector::from_vec(vec![1.0, 0.0, 0.0]), g).unwrap();
    assert!(hyperplane_distance(&Ellipsoid::new(w).unwrap(), &h).abs() < 1e-15);
}

#[test]
fn reference_certificate_separates_with_margin() {
    let c = reference_case();
    let r = reference_result();
    let e = r.ellipsoid().unwrap();
    let rep = check_separation(&e, &c.unsafe_set);
    assert!(rep.safe && rep.margins.iter().all(|m| *m <= 0.0));
    let s: Matrix2<f64> = project_ellipse(&r.w, 0, 1).unwrap();
    assert!(ellipse_support(&s, [1.0, 0.0]) <= 0.2 + 1e-9);
    assert!(ellipse_support(&s, [-1.0, 0.0]) <= 0.2 + 1e-9);
}
