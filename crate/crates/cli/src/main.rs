use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qflp::formulations::{Backend, Limits, SOLVER_ENV};
use qflp::harness::{self, oracle_solve, quality_ratios, Approach, GridConfig, RunContext};
use qflp::ingestion::{instance_from_topology, load_topology, GenOptions};
use qflp::model::{DemandDist, ResourceScheme, ScenarioConfig};
use qflp::pwl::{BasepointSet, SetSpec};
use qflp::Instance;

#[derive(Parser)]
#[command(name = "qflp", version, about = "Queue-aware facility location")]
struct Cli {
    /// MILP backend (highs or bnb); overrides QFLP_SOLVER.
    #[arg(long, global = true)]
    solver: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one instance with one approach.
    Solve(SolveArgs),
    /// Exact optimum by enumeration (small instances only).
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid into a resumable results CSV.
    Compare {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Approach used as the quality-ratio denominator.
        #[arg(long, default_value = "curves-full")]
        baseline: String,
        /// Where to write ratio ECDF steps.
        #[arg(long)]
        ecdf: Option<PathBuf>,
    },
    /// Generate an instance from a topology file.
    Gen(GenArgs),
    /// Optimise a basepoint set and write it as JSON.
    Basepoints {
        #[arg(long)]
        kmax: usize,
        #[arg(long)]
        set: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    approach: String,
    /// Budget override.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 120.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 1e-6)]
    mip_gap: f64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long, default_value = "d")]
    scheme: String,
    #[arg(long, default_value = "n1")]
    demand: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of all resources that may be allocated.
    #[arg(long, default_value_t = 0.5)]
    budget: f64,
    /// Aggregate mean demand; half the capped capacity when omitted.
    #[arg(long)]
    demand_mean: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    mu: f64,
    #[arg(long, default_value_t = 5)]
    k_per_node: usize,
    #[arg(long)]
    out: PathBuf,
}

fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Instance::from_json(&text)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn solve(args: SolveArgs) -> Result<()> {
    let mut inst = read_instance(&args.instance)?;
    if let Some(p) = args.p {
        inst = inst.with_p(p);
        inst.validate()?;
    }
    let approach: Approach = args.approach.parse()?;
    let ctx = RunContext::from_env(Limits { time_limit_s: args.time_limit, mip_gap: args.mip_gap })?;
    let id = args.instance.file_stem().and_then(|s| s.to_str()).unwrap_or("instance");
    let run = harness::run_approach(&inst, id, approach, &ctx);
    let r = &run.record;
    eprintln!(
        "{} {}: status {:?}, objective {}, {:.3}s",
        r.instance_id,
        r.approach,
        r.status,
        r.objective_ms.map_or("-".into(), |o| format!("{o:.4} ms")),
        r.wall_s
    );
    match run.solution {
        Some(sol) => emit(args.out.as_deref(), &sol.to_json()),
        None => bail!("no solution ({:?})", r.status),
    }
}

fn compare(grid: &Path, out: &Path, baseline: &str, ecdf: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(grid).with_context(|| format!("reading {}", grid.display()))?;
    let cfg = GridConfig::from_json(&text)?;
    let records = harness::run_experiment(&cfg, out)?;
    let report = quality_ratios(&records, baseline);
    for s in &report.summary {
        println!(
            "{:<24} n={:<4} min={:.4} median={:.4} max={:.4} baseline-not-worse={:.3}",
            s.approach, s.count, s.min, s.median, s.max, s.baseline_not_worse
        );
    }
    if report.skipped > 0 {
        println!("skipped {} runs without a successful baseline", report.skipped);
    }
    if let Some(path) = ecdf {
        let mut w = String::from("approach,ratio,fraction\n");
        for (ap, steps) in &report.ecdf {
            for (r, f) in steps {
                w.push_str(&format!("{ap},{r},{f}\n"));
            }
        }
        fs::write(path, w).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    let topo = load_topology(&args.topology)?;
    for w in &topo.warnings {
        log::warn!("{w}");
    }
    let scenario = ScenarioConfig {
        demand_dist: args.demand.parse::<DemandDist>()?,
        demand_mean: args.demand_mean,
        resource_scheme: args.scheme.parse::<ResourceScheme>()?,
        budget_factor: args.budget,
        seed: args.seed,
    };
    let opts = GenOptions { mu: args.mu, k_per_node: args.k_per_node, ..GenOptions::default() };
    let inst = instance_from_topology(&topo, &scenario, opts)?;
    emit(Some(&args.out), &inst.to_json())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(s) = &cli.solver {
        s.parse::<Backend>()?;
        std::env::set_var(SOLVER_ENV, s);
    }
    match cli.cmd {
        Cmd::Solve(a) => solve(a),
        Cmd::Oracle { instance, out } => {
            let inst = read_instance(&instance)?;
            let sol = oracle_solve(&inst)?;
            eprintln!("optimum {:.4} ms at y = {:?}", sol.objective.unwrap_or(f64::NAN), sol.y);
            emit(out.as_deref(), &sol.to_json())
        }
        Cmd::Compare { grid, out, baseline, ecdf } => compare(&grid, &out, &baseline, ecdf.as_deref()),
        Cmd::Gen(a) => gen(a),
        Cmd::Basepoints { kmax, set, out } => {
            let spec: SetSpec = set.parse()?;
            let base = BasepointSet::<f64>::from_spec(spec, kmax)?;
            eprintln!("{spec}: |J| = {}, max curve error {:.4e}", base.n(), base.max_curve_error());
            emit(Some(&out), &base.to_json())
        }
    }
}
