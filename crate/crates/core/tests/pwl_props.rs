use proptest::prelude::*;
use qflp::pwl::{eval_curve, generate_basepoints, BasepointSet, JFamily, Orientation, SetSpec, SurfaceMesh, UTIL_CAP};
use qflp::queueing::n_system;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chord_over_estimates(j in 1usize..=30, m in 4usize..=12) {
        let fit = generate_basepoints::<f64>(j, m).unwrap();
        let hi = UTIL_CAP * j as f64;
        for s in 0..=500 {
            let a = hi * s as f64 / 500.0;
            let pwl = eval_curve(&fit.curve, a).unwrap();
            let n = if a > 0.0 { n_system(a, j).unwrap() } else { 0.0 };
            prop_assert!(pwl >= n - 1e-12 * n.max(1.0), "j={j} m={m} a={a}: {pwl} < {n}");
        }
    }

    #[test]
    fn mesh_tiles_the_domain(y in 1usize..=16, r in 0.0f64..=1.0) {
        let base = BasepointSet::<f64>::from_spec(SetSpec::new(6, JFamily::Pow(2)), 16).unwrap();
        let mesh = SurfaceMesh::new(base, Orientation::TrianglePlus).unwrap();
        let a = r * UTIL_CAP * y as f64;
        let loc = mesh.locate(a, y as f64).unwrap();
        let js = &mesh.base.js;
        prop_assert!(js[loc.row] as f64 <= y as f64 && y as f64 <= js[loc.row + 1] as f64);
        let edge = |i: usize| {
            let p = mesh.base.curves[loc.row].points[i].alpha;
            let q = mesh.base.curves[loc.row + 1].points[i].alpha;
            p + loc.t * (q - p)
        };
        prop_assert!(edge(loc.col) <= a + 1e-9 && a <= edge(loc.col + 1) + 1e-9);
        // Lower cell wins on a shared boundary.
        if loc.col > 0 {
            prop_assert!(a > edge(loc.col));
        }
    }
}

#[test]
fn surface_error_shrinks_with_m() {
    for spec in SetSpec::selected() {
        let coarse = BasepointSet::<f64>::from_spec(spec, 12).unwrap();
        let fine = BasepointSet::<f64>::from_spec(SetSpec::new(2 * spec.m, spec.family), 12).unwrap();
        let e0 = SurfaceMesh::new(coarse, Orientation::TrianglePlus).unwrap().surface_error(30).unwrap();
        let e1 = SurfaceMesh::new(fine, Orientation::TrianglePlus).unwrap().surface_error(30).unwrap();
        assert!(e0.is_finite() && e1 < e0, "{spec}: {e0} -> {e1}");
    }
}

#[test]
fn coplanar_quad_matches_triangles() {
    let mut base = BasepointSet::<f64>::from_spec(SetSpec::new(5, JFamily::Pow(2)), 8).unwrap();
    for c in &mut base.curves {
        for p in &mut c.points {
            p.theta = 2.0 * p.alpha + 0.5 * p.beta + 1.0;
        }
    }
    let quad = SurfaceMesh::new(base.clone(), Orientation::Quadrilateral).unwrap();
    let tri = SurfaceMesh::new(base, Orientation::TrianglePlus).unwrap();
    for y in 1..=8 {
        for s in 0..=40 {
            let a = UTIL_CAP * y as f64 * s as f64 / 40.0;
            let (q, t) = (quad.eval(a, y as f64).unwrap(), tri.eval(a, y as f64).unwrap());
            assert!((q - t).abs() < 1e-9, "y={y} a={a}: {q} vs {t}");
            assert!((q - (2.0 * a + 0.5 * y as f64 + 1.0)).abs() < 1e-9);
        }
    }
}
