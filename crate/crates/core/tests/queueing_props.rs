mod common;

use proptest::prelude::*;
use qflp::queueing::{erlang_c, erlang_c_direct, n_system, t_system};

proptest! {
    #[test]
    fn recursion_matches_direct(k in 1usize..=120, r in 0.001f64..0.999) {
        let a = r * k as f64;
        let v: f64 = erlang_c(a, k).unwrap();
        let d: f64 = erlang_c_direct(a, k).unwrap();
        prop_assert!((v - d).abs() <= 1e-9);
    }

    #[test]
    fn increasing_in_load(k in 1usize..=60, r in 0.01f64..0.95, dr in 0.001f64..0.04) {
        let (a0, a1) = (r * k as f64, (r + dr) * k as f64);
        prop_assert!(erlang_c(a1, k).unwrap() > erlang_c(a0, k).unwrap());
        prop_assert!(n_system(a1, k).unwrap() > n_system(a0, k).unwrap());
    }

    #[test]
    fn more_servers_shorter_stay(k in 1usize..=60, r in 0.01f64..0.97, mu in 0.1f64..100.0) {
        let lambda = r * k as f64 * mu;
        prop_assert!(t_system(lambda, mu, k + 1).unwrap() <= t_system(lambda, mu, k).unwrap());
    }

    #[test]
    fn littles_law(k in 1usize..=80, r in 0.01f64..0.97, mu in 0.1f64..100.0) {
        let lambda = r * k as f64 * mu;
        let n: f64 = n_system(lambda / mu, k).unwrap();
        let t: f64 = t_system(lambda, mu, k).unwrap();
        prop_assert!((t * lambda - n).abs() <= 1e-9 * n);
    }

    #[test]
    fn independent_sum_form(k in 1usize..=40, r in 0.01f64..0.97) {
        let a = r * k as f64;
        let n: f64 = n_system(a, k).unwrap();
        prop_assert!((n - common::n_direct(a, k)).abs() <= 1e-9 * n.max(1.0));
    }
}

#[test]
fn convex_in_load() {
    for k in [1usize, 2, 5, 10, 40, 100] {
        let h = 0.98 * k as f64 / 400.0;
        let n = |a: f64| n_system(a, k).unwrap();
        for i in 1..399 {
            let a = i as f64 * h;
            let second = n(a + h) - 2.0 * n(a) + n(a - h);
            assert!(second >= -1e-9, "k={k} a={a}: {second}");
        }
    }
}
