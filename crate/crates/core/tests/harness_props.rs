mod common;

use proptest::prelude::*;
use qflp::formulations::{solve_model, HighsAdapter, Limits, MilpModel, Sense};
use qflp::harness::oracle::{allocations, assign_fixed};
use qflp::harness::{
    quality_ratios, read_records, run_approach, run_experiment, write_records, Approach, GridConfig, RunContext,
    RunRecord, RunStatus,
};
use qflp::model::{evaluate, DemandDist, ResourceScheme};
use qflp::formulations::Backend;
use qflp::Instance;

/// Fixed-allocation assignment as an LP over a dense uniform sampling of each
/// facility's queue-length curve.
fn dense_lp(inst: &Instance, y: &[usize], samples: usize) -> Option<f64> {
    let (nc, nf) = (inst.n_clients(), inst.n_facilities());
    let total = inst.total_demand();
    let mut m = MilpModel::new("dense");
    let x: Vec<Vec<usize>> = (0..nc)
        .map(|c| {
            (0..nf)
                .map(|f| {
                    let v = m.continuous(format!("x{c}_{f}"), 0.0, f64::INFINITY);
                    m.set_cost(v, inst.latency[c][f] / total);
                    v
                })
                .collect()
        })
        .collect();
    for c in 0..nc {
        m.add_constraint(format!("d{c}"), x[c].iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, inst.lambda[c]);
    }
    for f in 0..nf {
        let mut load: Vec<(usize, f64)> = (0..nc).map(|c| (x[c][f], 1.0)).collect();
        if y[f] == 0 {
            m.add_constraint(format!("closed{f}"), load, Sense::Eq, 0.0);
            continue;
        }
        let hi = 0.98 * y[f] as f64;
        let mut norm = vec![];
        for i in 0..=samples {
            let a = hi * i as f64 / samples as f64;
            let w = m.continuous(format!("w{f}_{i}"), 0.0, 1.0);
            m.set_cost(w, 1000.0 * common::n_direct(a, y[f]) / total);
            load.push((w, -a * inst.mu[f]));
            norm.push((w, 1.0));
        }
        m.add_constraint(format!("load{f}"), load, Sense::Eq, 0.0);
        m.add_constraint(format!("norm{f}"), norm, Sense::Eq, 1.0);
    }
    let sol = solve_model(&HighsAdapter::new(Limits::default()), &m).unwrap();
    sol.objective
}

#[test]
fn oracle_assignment_matches_dense_lp() {
    let mut checked = 0;
    for seed in 0..12 {
        let inst = common::small_instance(900 + seed);
        for y in allocations(&inst.k, inst.p).into_iter().step_by(7).take(4) {
            let fa = assign_fixed(&inst, &y, 1.0);
            let lp = dense_lp(&inst, &y, 3000);
            match (fa, lp) {
                (Some(fa), Some(lp)) => {
                    assert!((fa.value - lp).abs() <= 1e-4 * lp, "seed {seed} y={y:?}: {} vs {lp}", fa.value);
                    checked += 1;
                }
                (None, None) => {}
                (fa, lp) => panic!("seed {seed} y={y:?}: feasibility differs {fa:?} vs {lp:?}"),
            }
        }
    }
    assert!(checked >= 10, "only {checked} comparisons");
}

#[test]
fn recorded_objective_is_exact() {
    let ctx = RunContext::new(Limits::default(), Backend::Highs);
    let inst = common::small_instance(4242);
    let approaches = ["oracle", "curves-full", "curves-thinned:6,4^i", "tri-plus:8,k100", "quad:8,k100", "genetic"];
    for a in approaches {
        let ap: Approach = a.parse().unwrap();
        let run = run_approach(&inst, "i", ap, &ctx);
        if let Some(sol) = run.solution {
            assert_eq!(run.record.objective_ms, Some(evaluate(&inst, &sol).unwrap()), "{a}");
        } else {
            assert!(!run.record.status.succeeded());
        }
    }
}

fn status() -> impl Strategy<Value = RunStatus> {
    prop_oneof![
        Just(RunStatus::Optimal),
        Just(RunStatus::FeasibleWithGap),
        Just(RunStatus::Infeasible),
        Just(RunStatus::Timeout),
        Just(RunStatus::Failed),
    ]
}

fn record() -> impl Strategy<Value = RunRecord> {
    (
        "[a-z0-9|,\" ]{1,12}",
        "[a-z:,^0-9-]{1,16}",
        prop::option::of(prop::num::f64::NORMAL | prop::num::f64::ZERO),
        0.0f64..1e4,
        status(),
        prop::option::of(0.0f64..1.0),
    )
        .prop_map(|(instance_id, approach, objective_ms, wall_s, status, gap)| RunRecord {
            instance_id,
            approach,
            objective_ms,
            wall_s,
            status,
            gap,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(records in prop::collection::vec(record(), 0..8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_records(&path, &records).unwrap();
        prop_assert_eq!(read_records(&path).unwrap(), records);
    }
}

#[test]
fn experiment_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("square.txt");
    std::fs::write(&topo, "a b 4\nb c 6\nc d 5\nd a 7\na c 9\n").unwrap();
    let out = dir.path().join("results.csv");
    let grid = GridConfig {
        topologies: vec![topo],
        demand: vec![DemandDist::N1],
        schemes: vec![ResourceScheme::D],
        budget_factors: vec![0.8],
        seeds: vec![1, 2],
        approaches: vec![Approach::Oracle, Approach::Genetic],
        time_limit_s: 30.0,
        mip_gap: 1e-6,
        mu: 100.0,
        workers: Some(1),
    };
    let first = run_experiment(&grid, &out).unwrap();
    assert_eq!(first.len(), 4);
    assert!(first.iter().all(|r| r.status.succeeded()), "{first:?}");
    let again = run_experiment(&grid, &out).unwrap();
    assert_eq!(again, first);
    assert_eq!(read_records(&out).unwrap().len(), 4);
    let q = quality_ratios(&again, "oracle");
    assert_eq!(q.ratios.len(), 2);
    assert!(q.ratios.iter().all(|r| r.ratio >= 1.0 - 1e-9));
}
