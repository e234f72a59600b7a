//! Exact reference solver for small instances.
//!
//! Every allocation with `sum y = p` is enumerated. For each one the
//! assignment subproblem is a separable convex min-cost flow, solved by
//! cancelling negative cycles in the residual graph with an exact line search
//! along each cycle.

use crate::model::{evaluate, Instance, Solution, MS};
use crate::pwl::UTIL_CAP;
use crate::queueing::{dn_da, n_system};

use super::{HarnessError, Result};

pub const ORACLE_MAX_FACILITIES: usize = 5;
pub const ORACLE_MAX_TOTAL_K: usize = 30;

const MAX_CANCELS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Weight of the queueing term in the assignment objective. `0` gives the
    /// latency-only optimum, which is then evaluated with exact queueing.
    pub queue_weight: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { queue_weight: 1.0 }
    }
}

/// Assignment for a fixed allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedAssignment {
    pub x: Vec<Vec<f64>>,
    /// Weighted objective in milliseconds (averaged over requests).
    pub value: f64,
    pub cancels: usize,
}

/// All `y` with `sum y = p` and `y <= k`, in lexicographic order.
pub fn allocations(k: &[usize], p: usize) -> Vec<Vec<usize>> {
    fn rec(k: &[usize], f: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if f == k.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let rest: usize = k[f + 1..].iter().sum();
        let lo = left.saturating_sub(rest);
        for v in lo..=k[f].min(left) {
            cur.push(v);
            rec(k, f + 1, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, 0, p, &mut Vec::with_capacity(k.len()), &mut out);
    out
}

fn facility_cost(load: f64, mu: f64, y: usize) -> f64 {
    if load <= 0.0 {
        0.0
    } else {
        MS * n_system(load / mu, y).unwrap_or(f64::INFINITY)
    }
}

fn marginal(load: f64, mu: f64, y: usize) -> f64 {
    MS * dn_da((load / mu).max(0.0), y).unwrap_or(f64::INFINITY) / mu
}

struct Arc {
    from: usize,
    to: usize,
    cost: f64,
    kind: ArcKind,
}

#[derive(Clone, Copy)]
enum ArcKind {
    /// Move demand of a client from `from` to `to`.
    Client(usize),
    /// Raise the load of a facility.
    Raise(usize),
    /// Lower the load of a facility.
    Lower(usize),
}

/// Optimal assignment for fixed `y`, or `None` when the capped capacity of
/// `y` cannot carry the demand.
pub fn assign_fixed(inst: &Instance, y: &[usize], queue_weight: f64) -> Option<FixedAssignment> {
    let (nc, nf) = (inst.n_clients(), inst.n_facilities());
    let cap: Vec<f64> = (0..nf).map(|f| UTIL_CAP * inst.mu[f] * y[f] as f64).collect();
    let total = inst.total_demand();
    if total > cap.iter().sum::<f64>() * (1.0 + 1e-12) {
        return None;
    }
    let open: Vec<usize> = (0..nf).filter(|&f| y[f] > 0).collect();
    let mut x = vec![vec![0.0; nf]; nc];
    let mut load = vec![0.0; nf];
    for c in 0..nc {
        let mut order = open.clone();
        order.sort_by(|&a, &b| inst.latency[c][a].total_cmp(&inst.latency[c][b]).then(a.cmp(&b)));
        let mut left = inst.lambda[c];
        for &f in &order {
            let take = left.min(cap[f] - load[f]).max(0.0);
            x[c][f] += take;
            load[f] += take;
            left -= take;
        }
        if left > 1e-9 * total.max(1.0) {
            let f = *order.last()?;
            x[c][f] += left;
            load[f] += left;
        }
    }

    let eps_x = 1e-13 * total.max(1.0);
    let sink = nf;
    let mut cancels = 0;
    while cancels < MAX_CANCELS {
        let g: Vec<f64> =
            (0..nf).map(|f| if y[f] > 0 { queue_weight * marginal(load[f], inst.mu[f], y[f]) } else { 0.0 }).collect();
        let mut arcs = Vec::new();
        for &f in &open {
            for &t in &open {
                if f == t {
                    continue;
                }
                let best = (0..nc)
                    .filter(|&c| x[c][f] > eps_x)
                    .map(|c| (c, inst.latency[c][t] - inst.latency[c][f]))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((c, cost)) = best {
                    arcs.push(Arc { from: f, to: t, cost, kind: ArcKind::Client(c) });
                }
            }
            if cap[f] - load[f] > eps_x {
                arcs.push(Arc { from: f, to: sink, cost: g[f], kind: ArcKind::Raise(f) });
            }
            if load[f] > eps_x {
                arcs.push(Arc { from: sink, to: f, cost: -g[f], kind: ArcKind::Lower(f) });
            }
        }
        let scale = 1.0 + arcs.iter().map(|a| a.cost.abs()).fold(0.0, f64::max);
        let Some(cycle) = negative_cycle(nf + 1, &arcs, 1e-11 * scale) else {
            break;
        };
        cancels += 1;

        let mut lin = 0.0;
        let mut dmax = f64::INFINITY;
        let (mut up, mut down) = (None, None);
        for &a in &cycle {
            let arc = &arcs[a];
            match arc.kind {
                ArcKind::Client(c) => {
                    lin += arc.cost;
                    dmax = dmax.min(x[c][arc.from]);
                }
                ArcKind::Raise(f) => {
                    up = Some(f);
                    dmax = dmax.min(cap[f] - load[f]);
                }
                ArcKind::Lower(f) => {
                    down = Some(f);
                    dmax = dmax.min(load[f]);
                }
            }
        }
        let slope = |d: f64| {
            let mut s = lin;
            if let Some(f) = up {
                s += queue_weight * marginal((load[f] + d).min(cap[f]), inst.mu[f], y[f]);
            }
            if let Some(f) = down {
                s -= queue_weight * marginal((load[f] - d).max(0.0), inst.mu[f], y[f]);
            }
            s
        };
        let step = if slope(dmax) <= 0.0 {
            dmax
        } else {
            let (mut lo, mut hi) = (0.0, dmax);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if slope(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        if step <= 0.0 {
            break;
        }
        for &a in &cycle {
            let arc = &arcs[a];
            if let ArcKind::Client(c) = arc.kind {
                x[c][arc.from] -= step;
                x[c][arc.to] += step;
                load[arc.from] -= step;
                load[arc.to] += step;
                if x[c][arc.from] < eps_x {
                    let r = x[c][arc.from];
                    x[c][arc.from] = 0.0;
                    x[c][arc.to] += r;
                }
            }
        }
        for f in 0..nf {
            load[f] = (0..nc).map(|c| x[c][f]).sum();
            if load[f] > cap[f] {
                load[f] = cap[f];
            }
        }
    }
    for row in x.iter_mut() {
        for v in row.iter_mut() {
            *v = v.max(0.0);
        }
    }
    for f in 0..nf {
        load[f] = (0..nc).map(|c| x[c][f]).sum();
    }
    let rtt: f64 = (0..nc).map(|c| (0..nf).map(|f| x[c][f] * inst.latency[c][f]).sum::<f64>()).sum();
    let queue: f64 = (0..nf).map(|f| facility_cost(load[f], inst.mu[f], y[f])).sum();
    let denom = if total > 0.0 { total } else { 1.0 };
    Some(FixedAssignment { x, value: (rtt + queue_weight * queue) / denom, cancels })
}

/// Bellman-Ford from a virtual source; returns arc indices of a cycle whose
/// cost is below `-tol * len`.
fn negative_cycle(n: usize, arcs: &[Arc], tol: f64) -> Option<Vec<usize>> {
    let mut dist = vec![0.0; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for _ in 0..n {
        last = None;
        for (i, a) in arcs.iter().enumerate() {
            if dist[a.from] + a.cost + tol < dist[a.to] {
                dist[a.to] = dist[a.from] + a.cost + tol;
                pred[a.to] = Some(i);
                last = Some(a.to);
            }
        }
        last?;
    }
    let mut v = last?;
    for _ in 0..n {
        v = arcs[pred[v]?].from;
    }
    let start = v;
    let mut cycle = Vec::new();
    loop {
        let a = pred[v]?;
        cycle.push(a);
        v = arcs[a].from;
        if v == start {
            break;
        }
        if cycle.len() > n {
            return None;
        }
    }
    cycle.reverse();
    Some(cycle)
}

/// Outcome of the enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    /// Best solution; `objective` holds the exact response time.
    pub solution: Solution,
    /// Weighted objective that was minimised.
    pub weighted: f64,
    pub evaluated: usize,
}

fn guard(inst: &Instance) -> Result<()> {
    inst.validate()?;
    if inst.n_facilities() > ORACLE_MAX_FACILITIES || inst.total_k() > ORACLE_MAX_TOTAL_K {
        return Err(HarnessError::OracleGuard {
            facilities: inst.n_facilities(),
            total_k: inst.total_k(),
        });
    }
    Ok(())
}

/// Exact optimum of the queue-aware problem.
pub fn oracle_solve(inst: &Instance) -> Result<Solution> {
    Ok(oracle_solve_with(inst, OracleConfig::default())?.solution)
}

/// Enumeration with a configurable queue weight. Ties in the weighted
/// objective (within 1e-9 relative) go to the lower exact response time.
pub fn oracle_solve_with(inst: &Instance, cfg: OracleConfig) -> Result<OracleOutcome> {
    guard(inst)?;
    let mut best: Option<(f64, f64, Solution)> = None;
    let mut evaluated = 0;
    for y in allocations(&inst.k, inst.p) {
        let Some(fa) = assign_fixed(inst, &y, cfg.queue_weight) else {
            continue;
        };
        evaluated += 1;
        let mut sol = Solution::new(fa.x, y);
        let exact = evaluate(inst, &sol)?;
        sol.objective = Some(exact);
        let better = match &best {
            None => true,
            Some((w, e, _)) => {
                let tie = (fa.value - w).abs() <= 1e-9 * w.abs().max(1.0);
                if tie {
                    exact < *e
                } else {
                    fa.value < *w
                }
            }
        };
        if better {
            best = Some((fa.value, exact, sol));
        }
    }
    let (weighted, _, solution) = best.ok_or(HarnessError::NoFeasibleAllocation)?;
    Ok(OracleOutcome { solution, weighted, evaluated })
}
