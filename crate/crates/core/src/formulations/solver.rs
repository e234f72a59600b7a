//! Solver adapters: HiGHS and a small SOS-aware branch and bound.

use std::num::NonZeroU32;
use std::time::{Duration, Instant};

use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense as HSense};
use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};

use super::milp::{emulate_sos_where, MilpModel, Sense, SosGroup, SosKind, VarKind};
use super::{FormulationError, Result};

/// Environment variable that picks the backend.
pub const SOLVER_ENV: &str = "QFLP_SOLVER";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub supports_sos1: bool,
    pub supports_sos2: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub time_limit_s: f64,
    pub mip_gap: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { time_limit_s: 120.0, mip_gap: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    FeasibleWithGap,
    Infeasible,
    Timeout,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::FeasibleWithGap)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleWithGap => "feasible-with-gap",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Timeout => "timeout",
        }
    }
}

impl std::str::FromStr for SolveStatus {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "optimal" => SolveStatus::Optimal,
            "feasible-with-gap" => SolveStatus::FeasibleWithGap,
            "infeasible" => SolveStatus::Infeasible,
            "timeout" => SolveStatus::Timeout,
            _ => return Err(format!("unknown status {s:?}")),
        })
    }
}

/// Raw solver output over the model's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub values: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub gap: f64,
}

impl MilpSolution {
    fn none(status: SolveStatus) -> Self {
        Self { status, values: None, objective: None, gap: f64::INFINITY }
    }
}

/// One solve session per call; adapters hold configuration only.
pub trait SolverAdapter: Send + Sync {
    fn name(&self) -> &'static str;
    fn capabilities(&self) -> Capabilities;
    fn limits(&self) -> Limits;
    /// Solves a model whose SOS groups are all supported.
    fn solve_raw(&self, model: &MilpModel) -> Result<MilpSolution>;
}

/// Emulates the groups the adapter cannot handle, then solves.
pub fn solve_model(adapter: &dyn SolverAdapter, model: &MilpModel) -> Result<MilpSolution> {
    model.validate()?;
    let caps = adapter.capabilities();
    let unsupported = |g: &SosGroup| match g.kind {
        SosKind::Sos1 => !caps.supports_sos1,
        SosKind::Sos2 => !caps.supports_sos2,
    };
    let n = model.n_vars();
    let prepared = emulate_sos_where(model, unsupported);
    let mut sol = adapter.solve_raw(&prepared)?;
    if let Some(v) = sol.values.as_mut() {
        v.truncate(n);
    }
    Ok(sol)
}

/// Default solve path: drops groups tagged redundant before solving.
pub fn solve_default(adapter: &dyn SolverAdapter, model: &MilpModel) -> Result<MilpSolution> {
    solve_model(adapter, &model.without_redundant_sos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Highs,
    Bnb,
}

impl std::str::FromStr for Backend {
    type Err = FormulationError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "highs" | "" => Ok(Backend::Highs),
            "bnb" => Ok(Backend::Bnb),
            other => Err(FormulationError::Solver(format!("unknown backend {other:?}"))),
        }
    }
}

impl Backend {
    /// Reads `QFLP_SOLVER`; HiGHS when unset.
    pub fn from_env() -> Result<Self> {
        std::env::var(SOLVER_ENV).unwrap_or_default().parse()
    }

    pub fn adapter(self, limits: Limits) -> Box<dyn SolverAdapter> {
        match self {
            Backend::Highs => Box::new(HighsAdapter::new(limits)),
            Backend::Bnb => Box::new(BnbAdapter::new(limits)),
        }
    }
}

pub fn adapter_from_env(limits: Limits) -> Result<Box<dyn SolverAdapter>> {
    Ok(Backend::from_env()?.adapter(limits))
}

#[derive(Debug, Clone)]
pub struct HighsAdapter {
    pub limits: Limits,
    pub threads: u32,
}

impl HighsAdapter {
    pub fn new(limits: Limits) -> Self {
        Self { limits, threads: 1 }
    }
}

impl SolverAdapter for HighsAdapter {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_sos1: false, supports_sos2: false }
    }

    fn limits(&self) -> Limits {
        self.limits
    }

    fn solve_raw(&self, model: &MilpModel) -> Result<MilpSolution> {
        if !model.sos.is_empty() {
            return Err(FormulationError::Solver("highs adapter received SOS groups".into()));
        }
        let mut pb = RowProblem::default();
        let mut cost = vec![0.0; model.n_vars()];
        for &(v, c) in &model.objective {
            cost[v] += c;
        }
        let cols: Vec<_> = model
            .vars
            .iter()
            .zip(&cost)
            .map(|(v, &c)| {
                let integral = v.kind != VarKind::Continuous;
                pb.add_column_with_integrality(c, v.lb..=v.ub, integral)
            })
            .collect();
        for c in &model.constraints {
            let row: Vec<_> = c.terms.iter().map(|&(v, a)| (cols[v], a)).collect();
            match c.sense {
                Sense::Le => pb.add_row(..=c.rhs, row),
                Sense::Ge => pb.add_row(c.rhs.., row),
                Sense::Eq => pb.add_row(c.rhs..=c.rhs, row),
            }
        }
        let mut m = pb.try_optimise(HSense::Minimise).map_err(highs_err)?;
        m.make_quiet();
        m.set_option("time_limit", self.limits.time_limit_s);
        m.set_option("mip_rel_gap", self.limits.mip_gap);
        m.set_option("random_seed", 0);
        if let Some(t) = NonZeroU32::new(self.threads) {
            m.set_threads(t);
        }
        let solved = m.try_solve().map_err(highs_err)?;
        let status = solved.status();
        let has_primal = solved.primal_solution_status() == HighsSolutionStatus::Feasible;
        let result_status = match status {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::Infeasible | HighsModelStatus::UnboundedOrInfeasible => {
                return Ok(MilpSolution::none(SolveStatus::Infeasible));
            }
            HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
            HighsModelStatus::ReachedTimeLimit
            | HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ReachedSolutionLimit
            | HighsModelStatus::ReachedInterrupt
            | HighsModelStatus::ReachedMemoryLimit => {
                if has_primal {
                    SolveStatus::FeasibleWithGap
                } else {
                    return Ok(MilpSolution::none(SolveStatus::Timeout));
                }
            }
            other => return Err(FormulationError::Solver(format!("highs status {other:?}"))),
        };
        let values = solved.get_solution().columns().to_vec();
        let objective = model.objective_value(&values);
        let gap = if model.n_integral() == 0 {
            0.0
        } else {
            let g = solved.mip_gap();
            if g.is_finite() { g.max(0.0) } else { 0.0 }
        };
        let gap = if result_status == SolveStatus::Optimal { gap.min(self.limits.mip_gap) } else { gap };
        Ok(MilpSolution { status: result_status, values: Some(values), objective: Some(objective), gap })
    }
}

fn highs_err(s: highs::HighsStatus) -> FormulationError {
    FormulationError::Solver(format!("highs call failed: {s:?}"))
}

/// Depth-first branch and bound with native SOS branching. LP relaxations run
/// on microlp.
#[derive(Debug, Clone)]
pub struct BnbAdapter {
    pub limits: Limits,
    pub max_nodes: usize,
}

impl BnbAdapter {
    pub fn new(limits: Limits) -> Self {
        Self { limits, max_nodes: 200_000 }
    }
}

const INT_TOL: f64 = 1e-6;
const SOS_TOL: f64 = 1e-9;

struct Node {
    lb: Vec<f64>,
    ub: Vec<f64>,
    bound: f64,
}

enum Branch {
    Bound { var: usize, value: f64 },
    Zero { left: Vec<usize>, right: Vec<usize> },
}

impl BnbAdapter {
    fn relax(&self, model: &MilpModel, lb: &[f64], ub: &[f64], deadline: Instant) -> Result<Option<(f64, Vec<f64>)>> {
        let mut pb = Problem::new(OptimizationDirection::Minimize);
        let mut cost = vec![0.0; model.n_vars()];
        for &(v, c) in &model.objective {
            cost[v] += c;
        }
        let vars: Vec<_> = (0..model.n_vars()).map(|i| pb.add_var(cost[i], (lb[i], ub[i]))).collect();
        for c in &model.constraints {
            let expr: Vec<_> = c.terms.iter().map(|&(v, a)| (vars[v], a)).collect();
            let op = match c.sense {
                Sense::Le => ComparisonOp::Le,
                Sense::Eq => ComparisonOp::Eq,
                Sense::Ge => ComparisonOp::Ge,
            };
            pb.add_constraint(expr, op, c.rhs);
        }
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Ok(None);
        }
        pb.set_time_limit(left.max(Duration::from_millis(1)));
        match pb.solve() {
            Ok(SolveOutcome::Solution(sol)) => {
                let values: Vec<f64> = vars.iter().map(|&v| sol.var_value_raw(v)).collect();
                Ok(Some((model.objective_value(&values), values)))
            }
            Ok(SolveOutcome::Interrupted(_)) => Ok(None),
            Err(microlp::Error::Infeasible) => Ok(Some((f64::INFINITY, Vec::new()))),
            Err(e) => Err(FormulationError::Solver(format!("microlp: {e}"))),
        }
    }

    fn pick_branch(model: &MilpModel, x: &[f64]) -> Option<Branch> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in model.vars.iter().enumerate() {
            if v.kind == VarKind::Continuous {
                continue;
            }
            let frac = (x[i] - x[i].round()).abs();
            if frac > INT_TOL && best.map_or(true, |(_, f)| frac > f) {
                best = Some((i, frac));
            }
        }
        if let Some((var, _)) = best {
            return Some(Branch::Bound { var, value: x[var] });
        }
        for g in &model.sos {
            let nz: Vec<usize> = (0..g.vars.len()).filter(|&w| x[g.vars[w]].abs() > SOS_TOL).collect();
            match g.kind {
                SosKind::Sos1 if nz.len() > 1 => {
                    let r = nz[nz.len() / 2];
                    return Some(Branch::Zero {
                        left: g.vars[..r].to_vec(),
                        right: g.vars[r..].to_vec(),
                    });
                }
                SosKind::Sos2 if nz.len() > 1 && nz[nz.len() - 1] - nz[0] >= 2 => {
                    let r = (nz[0] + nz[nz.len() - 1]) / 2;
                    return Some(Branch::Zero {
                        left: g.vars[r + 1..].to_vec(),
                        right: g.vars[..r].to_vec(),
                    });
                }
                _ => {}
            }
        }
        None
    }
}

impl SolverAdapter for BnbAdapter {
    fn name(&self) -> &'static str {
        "bnb"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_sos1: true, supports_sos2: true }
    }

    fn limits(&self) -> Limits {
        self.limits
    }

    fn solve_raw(&self, model: &MilpModel) -> Result<MilpSolution> {
        let deadline = Instant::now() + Duration::from_secs_f64(self.limits.time_limit_s.max(0.0));
        let root_lb: Vec<f64> = model.vars.iter().map(|v| v.lb).collect();
        let root_ub: Vec<f64> = model.vars.iter().map(|v| v.ub).collect();
        let mut stack = vec![Node { lb: root_lb, ub: root_ub, bound: f64::NEG_INFINITY }];
        let mut incumbent: Option<(f64, Vec<f64>)> = None;
        let mut nodes = 0;
        let mut interrupted = false;
        let prune = |bound: f64, inc: &Option<(f64, Vec<f64>)>| match inc {
            Some((best, _)) => bound >= best - self.limits.mip_gap * best.abs().max(1e-9),
            None => false,
        };
        while let Some(node) = stack.pop() {
            if prune(node.bound, &incumbent) {
                continue;
            }
            nodes += 1;
            if nodes > self.max_nodes || Instant::now() >= deadline {
                stack.push(node);
                interrupted = true;
                break;
            }
            let Some((obj, x)) = self.relax(model, &node.lb, &node.ub, deadline)? else {
                stack.push(node);
                interrupted = true;
                break;
            };
            if !obj.is_finite() || prune(obj, &incumbent) {
                continue;
            }
            match Self::pick_branch(model, &x) {
                None => {
                    let mut x = x;
                    for (i, v) in model.vars.iter().enumerate() {
                        if v.kind != VarKind::Continuous {
                            x[i] = x[i].round();
                        }
                    }
                    incumbent = Some((obj, x));
                }
                Some(Branch::Bound { var, value }) => {
                    let mut down = Node { lb: node.lb.clone(), ub: node.ub.clone(), bound: obj };
                    down.ub[var] = value.floor();
                    let mut up = Node { lb: node.lb, ub: node.ub, bound: obj };
                    up.lb[var] = value.ceil();
                    if value - value.floor() < 0.5 {
                        stack.push(up);
                        stack.push(down);
                    } else {
                        stack.push(down);
                        stack.push(up);
                    }
                }
                Some(Branch::Zero { left, right }) => {
                    let mut a = Node { lb: node.lb.clone(), ub: node.ub.clone(), bound: obj };
                    let mut b = Node { lb: node.lb, ub: node.ub, bound: obj };
                    let ok = |n: &mut Node, vars: &[usize]| {
                        for &v in vars {
                            n.ub[v] = n.ub[v].min(0.0);
                            if n.lb[v] > 0.0 {
                                return false;
                            }
                        }
                        true
                    };
                    let fa = ok(&mut a, &left);
                    let fb = ok(&mut b, &right);
                    if fb {
                        stack.push(b);
                    }
                    if fa {
                        stack.push(a);
                    }
                }
            }
        }
        match incumbent {
            None if interrupted => Ok(MilpSolution::none(SolveStatus::Timeout)),
            None => Ok(MilpSolution::none(SolveStatus::Infeasible)),
            Some((obj, x)) => {
                let (status, gap) = if interrupted {
                    let lb = stack.iter().map(|n| n.bound).fold(obj, f64::min);
                    (SolveStatus::FeasibleWithGap, (obj - lb).abs() / obj.abs().max(1e-9))
                } else {
                    (SolveStatus::Optimal, 0.0)
                };
                Ok(MilpSolution { status, values: Some(x), objective: Some(obj), gap })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulations::milp::emulate_sos;

    fn knapsack() -> MilpModel {
        // max 5a + 4b + 3c s.t. 2a + 3b + c <= 5, binaries; as a minimisation.
        let mut m = MilpModel::new("knap");
        let v: Vec<usize> = (0..3).map(|i| m.binary(format!("b{i}"))).collect();
        for (&x, c) in v.iter().zip([-5.0, -4.0, -3.0]) {
            m.set_cost(x, c);
        }
        m.add_constraint("w", vec![(v[0], 2.0), (v[1], 3.0), (v[2], 1.0)], Sense::Le, 5.0);
        m
    }

    fn sos2_line() -> MilpModel {
        // Interpolate a non-convex curve at x = 1.5; SOS2 forbids skipping the dip.
        let mut m = MilpModel::new("line");
        let xs = [0.0, 1.0, 2.0, 3.0];
        let fs = [0.0, 3.0, 0.5, 4.0];
        let w: Vec<usize> = (0..4).map(|i| m.continuous(format!("w{i}"), 0.0, 1.0)).collect();
        for i in 0..4 {
            m.set_cost(w[i], fs[i]);
        }
        m.add_constraint("norm", w.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0);
        m.add_constraint("pos", w.iter().zip(xs).map(|(&v, x)| (v, x)).collect(), Sense::Eq, 1.5);
        m.add_sos("g", SosKind::Sos2, w, false);
        m
    }

    #[test]
    fn highs_knapsack() {
        let s = solve_model(&HighsAdapter::new(Limits::default()), &knapsack()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective.unwrap() + 9.0).abs() < 1e-9);
    }

    #[test]
    fn bnb_knapsack() {
        let s = solve_model(&BnbAdapter::new(Limits::default()), &knapsack()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.objective.unwrap() + 9.0).abs() < 1e-9);
    }

    #[test]
    fn sos2_native_matches_emulated() {
        let m = sos2_line();
        let native = solve_model(&BnbAdapter::new(Limits::default()), &m).unwrap();
        let emulated = solve_model(&HighsAdapter::new(Limits::default()), &emulate_sos(&m)).unwrap();
        let relaxed = solve_model(&HighsAdapter::new(Limits::default()), &m.without_redundant_sos());
        assert!((native.objective.unwrap() - 1.75).abs() < 1e-9);
        assert!((emulated.objective.unwrap() - 1.75).abs() < 1e-9);
        // Not tagged redundant, so it still has to be emulated on HiGHS.
        assert!((relaxed.unwrap().objective.unwrap() - 1.75).abs() < 1e-9);
    }

    #[test]
    fn infeasible_reported() {
        let mut m = MilpModel::new("inf");
        let a = m.binary("a");
        m.add_constraint("c", vec![(a, 1.0)], Sense::Ge, 2.0);
        for ad in [Backend::Highs, Backend::Bnb] {
            let s = solve_model(ad.adapter(Limits::default()).as_ref(), &m).unwrap();
            assert_eq!(s.status, SolveStatus::Infeasible);
            assert!(s.values.is_none());
        }
    }

    #[test]
    fn backend_names() {
        assert_eq!("highs".parse::<Backend>().unwrap(), Backend::Highs);
        assert_eq!("BNB".parse::<Backend>().unwrap(), Backend::Bnb);
        assert!("gurobi".parse::<Backend>().is_err());
    }
}
