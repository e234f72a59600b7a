use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qflp::{Instance, Solution};

fn qflp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qflp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = qflp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_oracle_solve_round() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("ring.txt");
    fs::write(&topo, "1 2 3\n2 3 4\n3 4 5\n4 1 6\n").unwrap();
    let inst_path = dir.path().join("inst.json");
    ok(&["gen", "--topology", path(&topo), "--scheme", "d", "--demand", "n1", "--seed", "7", "--budget", "0.8", "--out", path(&inst_path)]);
    let inst = Instance::from_json(&fs::read_to_string(&inst_path).unwrap()).unwrap();
    assert_eq!(inst.n_clients(), 4);
    assert_eq!(inst.total_k(), 20);
    assert_eq!(inst.p, 16);

    let best = dir.path().join("best.json");
    ok(&["oracle", "--instance", path(&inst_path), "--out", path(&best)]);
    let opt = Solution::from_json(&fs::read_to_string(&best).unwrap()).unwrap();

    let sol_path = dir.path().join("sol.json");
    ok(&["solve", "--instance", path(&inst_path), "--approach", "quad:6,4^i", "--out", path(&sol_path)]);
    let sol = Solution::from_json(&fs::read_to_string(&sol_path).unwrap()).unwrap();
    assert_eq!(sol.y.iter().sum::<usize>(), 16);
    assert!(sol.objective.unwrap() >= opt.objective.unwrap() - 1e-9);

    ok(&["solve", "--instance", path(&inst_path), "--approach", "genetic", "--p", "12", "--out", path(&sol_path)]);
    let sol = Solution::from_json(&fs::read_to_string(&sol_path).unwrap()).unwrap();
    assert_eq!(sol.y.iter().sum::<usize>(), 12);
}

#[test]
fn solver_flag_selects_backend() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = dir.path().join("one.json");
    let inst = Instance {
        clients: vec!["c".into()],
        facilities: vec!["f".into(), "g".into()],
        latency: vec![vec![1.0, 5.0]],
        lambda: vec![0.5],
        mu: vec![1.0, 1.0],
        k: vec![2, 2],
        p: 2,
    };
    fs::write(&inst_path, inst.to_json()).unwrap();
    let out = ok(&["--solver", "bnb", "solve", "--instance", path(&inst_path), "--approach", "curves-thinned:4,k100"]);
    let sol = Solution::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(sol.y.iter().sum::<usize>(), 2);
    assert!(!qflp(&["--solver", "cplex", "oracle", "--instance", path(&inst_path)]).status.success());
}

#[test]
fn basepoints_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bps.json");
    ok(&["basepoints", "--kmax", "10", "--set", "6,4^i", "--out", path(&out)]);
    let base = qflp::BasepointSet::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(base.js, vec![1, 4, 10]);
    assert_eq!(base.m, 6);
}

#[test]
fn compare_resumes_and_writes_ecdf() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("sq.txt");
    fs::write(&topo, "a b 4\nb c 6\nc d 5\nd a 7\n").unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(
        &grid,
        format!(
            r#"{{"topologies": ["{}"], "demand": ["n1"], "schemes": ["d"], "budget_factors": [0.8],
               "seeds": [3], "approaches": ["oracle", "tri-plus:6,4^i", "genetic"], "workers": 1}}"#,
            path(&topo)
        ),
    )
    .unwrap();
    let results = dir.path().join("r.csv");
    let ecdf = dir.path().join("e.csv");
    let args = ["compare", "--grid", path(&grid), "--out", path(&results), "--baseline", "oracle", "--ecdf", path(&ecdf)];
    ok(&args);
    let first = fs::read_to_string(&results).unwrap();
    assert_eq!(first.lines().next().unwrap(), "instance_id,approach,objective_ms,wall_s,status,gap");
    assert_eq!(first.lines().count(), 4);
    ok(&args);
    assert_eq!(fs::read_to_string(&results).unwrap(), first);
    let e = fs::read_to_string(&ecdf).unwrap();
    assert!(e.starts_with("approach,ratio,fraction\n"));
    assert!(e.contains("genetic,") && e.contains("tri-plus:6,4^i,"));
}

#[test]
fn bad_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert!(!qflp(&["oracle", "--instance", path(&missing)]).status.success());
    let inst = dir.path().join("i.json");
    fs::write(&inst, "{}").unwrap();
    assert!(!qflp(&["solve", "--instance", path(&inst), "--approach", "simplex"]).status.success());
}
