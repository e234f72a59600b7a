//! Oracle, experiment runner and result metrics.

pub mod fixtures;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulations::{self, Backend, FormulationError, Limits, SolveStatus};
use crate::greedy::GreedyError;
use crate::heuristic::{genetic, GeneticConfig, HeuristicError};
use crate::ingestion::{instance_from_topology, load_topology, GenOptions, IngestionError};
use crate::model::{DemandDist, Instance, ModelError, ResourceScheme, ScenarioConfig, Solution};
use crate::pwl::{BasepointSet, JFamily, Orientation, PwlError, SetSpec};

pub use oracle::{oracle_solve, oracle_solve_with, OracleConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("oracle limited to 5 facilities and 30 servers (got {facilities}, {total_k})")]
    OracleGuard { facilities: usize, total_k: usize },
    #[error("no allocation can carry the demand")]
    NoFeasibleAllocation,
    #[error("unknown approach {0:?}")]
    Approach(String),
    #[error("grid: {0}")]
    Grid(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Greedy(#[from] GreedyError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Ingestion(#[from] IngestionError),
    #[error(transparent)]
    Pwl(#[from] PwlError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Baseline basepoint set of the full-curve approach.
pub const CURVES_FULL: SetSpec = SetSpec { m: 30, family: JFamily::K100 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Approach {
    Oracle,
    CurvesFull,
    CurvesThinned(SetSpec),
    Surface(Orientation, SetSpec),
    Genetic,
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Approach::Oracle => write!(f, "oracle"),
            Approach::CurvesFull => write!(f, "curves-full"),
            Approach::CurvesThinned(s) => write!(f, "curves-thinned:{s}"),
            Approach::Surface(Orientation::TrianglePlus, s) => write!(f, "tri-plus:{s}"),
            Approach::Surface(Orientation::TriangleMinus, s) => write!(f, "tri-minus:{s}"),
            Approach::Surface(Orientation::Quadrilateral, s) => write!(f, "quad:{s}"),
            Approach::Genetic => write!(f, "genetic"),
        }
    }
}

impl FromStr for Approach {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || HarnessError::Approach(s.to_string());
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h.trim(), Some(t.trim())),
            None => (s.trim(), None),
        };
        let spec = || -> Result<SetSpec> { tail.ok_or_else(bad)?.parse().map_err(|_| bad()) };
        Ok(match head {
            "oracle" if tail.is_none() => Approach::Oracle,
            "curves-full" if tail.is_none() => Approach::CurvesFull,
            "genetic" if tail.is_none() => Approach::Genetic,
            "curves-thinned" => Approach::CurvesThinned(spec()?),
            "tri-plus" => Approach::Surface(Orientation::TrianglePlus, spec()?),
            "tri-minus" => Approach::Surface(Orientation::TriangleMinus, spec()?),
            "quad" => Approach::Surface(Orientation::Quadrilateral, spec()?),
            _ => return Err(bad()),
        })
    }
}

impl Serialize for Approach {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Approach {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Optimal,
    FeasibleWithGap,
    Infeasible,
    Timeout,
    Failed,
}

impl RunStatus {
    pub fn succeeded(self) -> bool {
        matches!(self, RunStatus::Optimal | RunStatus::FeasibleWithGap)
    }
}

impl From<SolveStatus> for RunStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Optimal => RunStatus::Optimal,
            SolveStatus::FeasibleWithGap => RunStatus::FeasibleWithGap,
            SolveStatus::Infeasible => RunStatus::Infeasible,
            SolveStatus::Timeout => RunStatus::Timeout,
        }
    }
}

/// One results-file row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub approach: String,
    pub objective_ms: Option<f64>,
    pub wall_s: f64,
    pub status: RunStatus,
    pub gap: Option<f64>,
}

/// Shared state for approach runs: solver settings and a basepoint cache.
pub struct RunContext {
    pub limits: Limits,
    pub backend: Backend,
    pub genetic: GeneticConfig,
    cache: Mutex<HashMap<(SetSpec, usize), Arc<BasepointSet<f64>>>>,
}

impl RunContext {
    pub fn new(limits: Limits, backend: Backend) -> Self {
        Self { limits, backend, genetic: GeneticConfig::default(), cache: Mutex::new(HashMap::new()) }
    }

    /// Backend from `QFLP_SOLVER`.
    pub fn from_env(limits: Limits) -> Result<Self> {
        Ok(Self::new(limits, Backend::from_env()?))
    }

    pub fn basepoints(&self, spec: SetSpec, k_max: usize) -> Result<Arc<BasepointSet<f64>>> {
        if let Some(b) = self.cache.lock().expect("cache lock").get(&(spec, k_max)) {
            return Ok(b.clone());
        }
        let b = Arc::new(BasepointSet::from_spec(spec, k_max)?);
        self.cache.lock().expect("cache lock").insert((spec, k_max), b.clone());
        Ok(b)
    }
}

/// Solution plus the record describing the run.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproachRun {
    pub record: RunRecord,
    pub solution: Option<Solution>,
}

fn failed(instance_id: &str, approach: Approach, wall_s: f64, status: RunStatus) -> ApproachRun {
    ApproachRun {
        record: RunRecord {
            instance_id: instance_id.to_string(),
            approach: approach.to_string(),
            objective_ms: None,
            wall_s,
            status,
            gap: None,
        },
        solution: None,
    }
}

fn status_of(err: &HarnessError) -> RunStatus {
    let text = err.to_string();
    match err {
        HarnessError::NoFeasibleAllocation => RunStatus::Infeasible,
        HarnessError::Formulation(FormulationError::NoSolution(s)) => (*s).into(),
        HarnessError::Formulation(FormulationError::Greedy(GreedyError::SearchExhausted { .. })) => {
            RunStatus::Infeasible
        }
        HarnessError::Formulation(FormulationError::Greedy(GreedyError::Solver(_))) if text.contains("time limit") => {
            RunStatus::Timeout
        }
        _ => RunStatus::Failed,
    }
}

/// Runs one approach. Basepoint generation is not timed. The recorded
/// objective is always the exact evaluation of the returned solution.
pub fn run_approach(inst: &Instance, instance_id: &str, approach: Approach, ctx: &RunContext) -> ApproachRun {
    let k_max = inst.k_max();
    let prep = match approach {
        Approach::CurvesFull => Some(ctx.basepoints(CURVES_FULL, k_max)),
        Approach::CurvesThinned(s) | Approach::Surface(_, s) => Some(ctx.basepoints(s, k_max)),
        _ => None,
    };
    let base = match prep.transpose() {
        Ok(b) => b,
        Err(e) => {
            log::warn!("{instance_id} {approach}: {e}");
            return failed(instance_id, approach, 0.0, RunStatus::Failed);
        }
    };
    let adapter = ctx.backend.adapter(ctx.limits);
    let start = Instant::now();
    let out: Result<(Solution, RunStatus, Option<f64>)> = (|| match approach {
        Approach::Oracle => Ok((oracle_solve(inst)?, RunStatus::Optimal, Some(0.0))),
        Approach::CurvesFull | Approach::CurvesThinned(_) => {
            let base = base.as_ref().expect("prepared");
            let out = formulations::solve_curves(inst, base, &base.js, adapter.as_ref())?;
            Ok((out.solution, out.result.status.into(), Some(out.result.gap)))
        }
        Approach::Surface(o, _) => {
            let base = base.as_ref().expect("prepared");
            let out = formulations::solve_surface(inst, base, o, adapter.as_ref())?;
            Ok((out.search.solution, out.result.status.into(), Some(out.result.gap)))
        }
        Approach::Genetic => {
            let g = genetic(inst, inst.p, ctx.genetic)?;
            Ok((g.solution, RunStatus::FeasibleWithGap, None))
        }
    })();
    let wall_s = start.elapsed().as_secs_f64();
    match out {
        Ok((sol, status, gap)) => ApproachRun {
            record: RunRecord {
                instance_id: instance_id.to_string(),
                approach: approach.to_string(),
                objective_ms: sol.objective,
                wall_s,
                status,
                gap,
            },
            solution: Some(sol),
        },
        Err(e) => {
            log::warn!("{instance_id} {approach}: {e}");
            failed(instance_id, approach, wall_s, status_of(&e))
        }
    }
}

/// Factor grid for [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub topologies: Vec<PathBuf>,
    pub demand: Vec<DemandDist>,
    pub schemes: Vec<ResourceScheme>,
    pub budget_factors: Vec<f64>,
    pub seeds: Vec<u64>,
    pub approaches: Vec<Approach>,
    #[serde(default = "default_time_limit")]
    pub time_limit_s: f64,
    #[serde(default = "default_gap")]
    pub mip_gap: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_time_limit() -> f64 {
    120.0
}
fn default_gap() -> f64 {
    1e-6
}
fn default_mu() -> f64 {
    GenOptions::default().mu
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Grid(e.to_string()))
    }
}

fn demand_tag(d: DemandDist) -> &'static str {
    match d {
        DemandDist::N1 => "n1",
        DemandDist::N2 => "n2",
        DemandDist::Exp => "exp",
    }
}

fn scheme_tag(s: ResourceScheme) -> &'static str {
    match s {
        ResourceScheme::D5 => "d5",
        ResourceScheme::D => "d",
        ResourceScheme::D2 => "d2",
        ResourceScheme::C => "c",
        ResourceScheme::X => "x",
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rd = csv::Reader::from_path(path).map_err(|e| HarnessError::Csv(e.to_string()))?;
    rd.deserialize().map(|r| r.map_err(|e| HarnessError::Csv(e.to_string()))).collect()
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Csv(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

/// Cartesian product of the grid factors. Records already present in `out`
/// are kept and their runs skipped; new ones are appended as they finish.
pub fn run_experiment(grid: &GridConfig, out: &Path) -> Result<Vec<RunRecord>> {
    let mut records = read_records(out)?;
    let done: BTreeSet<(String, String)> =
        records.iter().map(|r| (r.instance_id.clone(), r.approach.clone())).collect();
    let fresh = !out.exists() || records.is_empty();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", out.display())))?;
    let writer = Mutex::new(csv::WriterBuilder::new().has_headers(fresh).from_writer(file));

    let opts = GenOptions { mu: grid.mu, ..GenOptions::default() };
    let mut tasks: Vec<(String, Arc<Instance>, Approach)> = Vec::new();
    for path in &grid.topologies {
        let topo = load_topology(path)?;
        for &dist in &grid.demand {
            for &scheme in &grid.schemes {
                for &a in &grid.budget_factors {
                    for &seed in &grid.seeds {
                        let id = format!("{}|{}|{}|{}|{}", topo.name, demand_tag(dist), scheme_tag(scheme), a, seed);
                        let scenario = ScenarioConfig {
                            demand_dist: dist,
                            demand_mean: None,
                            resource_scheme: scheme,
                            budget_factor: a,
                            seed,
                        };
                        let inst = match instance_from_topology(&topo, &scenario, opts) {
                            Ok(i) => Arc::new(i),
                            Err(e) => {
                                log::warn!("skipping {id}: {e}");
                                continue;
                            }
                        };
                        for &ap in &grid.approaches {
                            if !done.contains(&(id.clone(), ap.to_string())) {
                                tasks.push((id.clone(), inst.clone(), ap));
                            }
                        }
                    }
                }
            }
        }
    }
    let ctx = RunContext::new(Limits { time_limit_s: grid.time_limit_s, mip_gap: grid.mip_gap }, Backend::from_env()?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.workers.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Grid(e.to_string()))?;
    let fresh_records: Vec<Result<RunRecord>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(id, inst, ap)| {
                let rec = run_approach(inst, id, *ap, &ctx).record;
                let mut w = writer.lock().expect("writer lock");
                w.serialize(&rec).map_err(|e| HarnessError::Csv(e.to_string()))?;
                w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
                Ok(rec)
            })
            .collect()
    });
    for r in fresh_records {
        records.push(r?);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRatio {
    pub instance_id: String,
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualitySummary {
    pub approach: String,
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Fraction of instances where the baseline is at least as good.
    pub baseline_not_worse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub ratios: Vec<QualityRatio>,
    /// Sorted `(ratio, fraction <= ratio)` per approach.
    pub ecdf: BTreeMap<String, Vec<(f64, f64)>>,
    pub summary: Vec<QualitySummary>,
    /// Alternative runs without a successful baseline partner.
    pub skipped: usize,
}

/// Empirical CDF as sorted `(value, fraction)` steps.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-instance `alternative / baseline` objective ratios.
pub fn quality_ratios(records: &[RunRecord], baseline: &str) -> QualityReport {
    let base: BTreeMap<&str, f64> = records
        .iter()
        .filter(|r| r.approach == baseline && r.status.succeeded())
        .filter_map(|r| r.objective_ms.map(|o| (r.instance_id.as_str(), o)))
        .collect();
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for r in records.iter().filter(|r| r.approach != baseline) {
        match (base.get(r.instance_id.as_str()), r.objective_ms.filter(|_| r.status.succeeded())) {
            (Some(&b), Some(o)) if b > 0.0 => ratios.push(QualityRatio {
                instance_id: r.instance_id.clone(),
                numerator: r.approach.clone(),
                denominator: baseline.to_string(),
                ratio: o / b,
            }),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::info!("quality ratios: skipped {skipped} runs without a baseline partner");
    }
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for q in &ratios {
        by.entry(q.numerator.clone()).or_default().push(q.ratio);
    }
    let mut ecdfs = BTreeMap::new();
    let mut summary = Vec::new();
    for (ap, mut v) in by {
        v.sort_by(f64::total_cmp);
        summary.push(QualitySummary {
            approach: ap.clone(),
            count: v.len(),
            min: v[0],
            median: quantile(&v, 0.5),
            max: v[v.len() - 1],
            baseline_not_worse: v.iter().filter(|&&r| r >= 1.0).count() as f64 / v.len() as f64,
        });
        ecdfs.insert(ap, ecdf(&v));
    }
    QualityReport { ratios, ecdf: ecdfs, summary, skipped }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn approach_ids_round_trip() {
        for s in ["oracle", "curves-full", "curves-thinned:6,4^i", "tri-plus:8,3^i", "tri-minus:15,2^i", "quad:8,k100", "genetic"] {
            assert_eq!(s.parse::<Approach>().unwrap().to_string(), s);
        }
        assert!("quad".parse::<Approach>().is_err());
        assert!("simplex".parse::<Approach>().is_err());
    }

    fn rec(id: &str, ap: &str, o: f64) -> RunRecord {
        RunRecord {
            instance_id: id.into(),
            approach: ap.into(),
            objective_ms: Some(o),
            wall_s: 0.1,
            status: RunStatus::Optimal,
            gap: Some(0.0),
        }
    }

    #[test]
    fn ratios_and_ecdf() {
        let rs = vec![
            rec("a", "base", 10.0),
            rec("a", "alt", 11.0),
            rec("b", "base", 20.0),
            rec("b", "alt", 22.0),
            rec("c", "alt", 5.0),
        ];
        let q = quality_ratios(&rs, "base");
        assert_eq!(q.ratios.len(), 2);
        assert_eq!(q.skipped, 1);
        let e = &q.ecdf["alt"];
        assert_eq!(e.len(), 1);
        assert!((e[0].0 - 1.1).abs() < 1e-12 && e[0].1 == 1.0);
        let same = quality_ratios(&[rec("a", "base", 3.0), rec("a", "copy", 3.0)], "base");
        assert_eq!(same.ratios[0].ratio, 1.0);
    }
}
