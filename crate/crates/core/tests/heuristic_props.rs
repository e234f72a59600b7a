mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use qflp::harness::fixtures::worked_example;
use qflp::heuristic::{descent, genetic, greedy_assign, neigh, solve_subset, GeneticConfig, Subset};
use qflp::model::validate;

fn subset_of(mask: u8, nf: usize) -> Subset {
    (0..nf).filter(|f| mask & (1 << f) != 0).collect()
}

proptest! {
    #[test]
    fn greedy_assign_conserves_demand(seed in 0u64..400, mask in 1u8..16) {
        let inst = common::small_instance(seed);
        let fs = subset_of(mask, inst.n_facilities());
        prop_assume!(!fs.is_empty());
        if let Ok(x) = greedy_assign(&inst, &fs) {
            for (c, row) in x.iter().enumerate() {
                prop_assert!((row.iter().sum::<f64>() - inst.lambda[c]).abs() <= 1e-9 * inst.lambda[c].max(1.0));
                for f in 0..inst.n_facilities() {
                    prop_assert!(fs.contains(&f) || row[f] == 0.0);
                }
            }
        }
    }

    #[test]
    fn neighbourhood_size_bound(fd in 0u16..256, fs_bits in 0u16..256, fi_bits in 0u16..256) {
        let fd: Subset = (0..8).filter(|f| fd & (1 << f) != 0).collect();
        let fs: Subset = fd.iter().copied().filter(|f| fs_bits & (1 << f) != 0).collect();
        let fi: Subset = fs.iter().copied().filter(|f| fi_bits & (1 << f) != 0).collect();
        let n = neigh(&fs, &fd, &fi);
        let adds = fd.difference(&fs).count();
        let removes = fs.difference(&fi).count();
        prop_assert!(n.len() <= adds + removes + adds * removes);
        let unique: BTreeSet<&Subset> = n.iter().collect();
        prop_assert_eq!(unique.len(), n.len());
        for s in &n {
            prop_assert!(fi.is_subset(s) && s.is_subset(&fd) && s != &fs);
        }
    }

    #[test]
    fn descent_never_worsens(seed in 0u64..200, mask in 1u8..16) {
        let inst = common::small_instance(seed);
        let nf = inst.n_facilities();
        let all: Subset = (0..nf).collect();
        let fs = subset_of(mask, nf);
        prop_assume!(!fs.is_empty());
        let Ok(start) = solve_subset(&inst, &fs, inst.p) else { return Ok(()) };
        let out = descent(&inst, &fs, inst.p, &all, &Subset::new()).unwrap();
        prop_assert!(out.t <= start.t);
        // Local optimum: no neighbour is strictly better.
        for n in neigh(&out.subset, &all, &Subset::new()) {
            if let Ok(e) = solve_subset(&inst, &n, inst.p) {
                prop_assert!(e.t >= out.t);
            }
        }
    }
}

#[test]
fn genetic_valid_distinct_deterministic() {
    for seed in 0..4 {
        let inst = common::small_instance(50 + seed);
        let cfg = GeneticConfig { seed, merge_steps: Some(20), ..GeneticConfig::default() };
        let (Ok(a), Ok(b)) = (genetic(&inst, inst.p, cfg), genetic(&inst, inst.p, cfg)) else {
            continue;
        };
        assert_eq!(a, b);
        assert!(validate(&inst, &a.solution).is_ok());
        assert_eq!(a.solution.y.iter().sum::<usize>(), inst.p);
        let subsets: BTreeSet<&Subset> = a.population.iter().map(|e| &e.subset).collect();
        assert_eq!(subsets.len(), a.population.len());
    }
}

#[test]
fn never_beats_the_worked_optimum() {
    let inst = worked_example(20.0, 10.0);
    let all: Subset = (0..3).collect();
    let e = solve_subset(&inst, &all, 5).unwrap();
    assert!(e.t >= 56.7 - 0.05);
}
