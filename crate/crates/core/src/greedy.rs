//! Greedy allocation: MaxCostDrop, Alloc, DeAlloc and the Search loop.

use crate::model::{evaluate, Instance, ModelError, Solution, CAP_TOL};
use crate::pwl::UTIL_CAP;
use crate::queueing::n_system;
use std::collections::BTreeSet;
use thiserror::Error;

/// Upper bound on formulation solves inside [`search`].
pub const MAX_SEARCH_SOLVES: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GreedyError {
    #[error("capacity {caps} cannot hold {n} tokens")]
    InsufficientCapacity { n: usize, caps: usize },
    #[error("facility {facility}: load {load} needs more than its {k} servers")]
    Overloaded { facility: usize, load: f64, k: usize },
    #[error("minimal allocation {needed} exceeds budget {p}")]
    Budget { needed: usize, p: usize },
    #[error("facility {facility} is excluded but carries load {load}")]
    Excluded { facility: usize, load: f64 },
    #[error("vector lengths differ")]
    Shape,
    #[error("no integer allocation found after {solves} solves")]
    SearchExhausted { solves: usize },
    #[error("formulation solver failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, GreedyError>;

/// Places `n` tokens greedily by largest marginal gain `gain(f, j)` of the
/// `j`-th token in bucket `f` (1-based); ties go to the lower bucket.
///
/// Optimal when each bucket's gains are non-negative and non-increasing.
pub fn max_cost_drop<G>(n: usize, gain: G, caps: &[usize]) -> Result<Vec<usize>>
where
    G: Fn(usize, usize) -> f64,
{
    let total: usize = caps.iter().sum();
    if total < n {
        return Err(GreedyError::InsufficientCapacity { n, caps: total });
    }
    let mut y = vec![0; caps.len()];
    let mut next: Vec<Option<f64>> = (0..caps.len()).map(|f| (caps[f] > 0).then(|| gain(f, 1))).collect();
    for _ in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for (f, g) in next.iter().enumerate() {
            if let Some(g) = *g {
                if best.map_or(true, |(_, bg)| g > bg) {
                    best = Some((f, g));
                }
            }
        }
        let (f, _) = best.expect("capacity checked above");
        y[f] += 1;
        next[f] = (y[f] < caps[f]).then(|| gain(f, y[f] + 1));
    }
    Ok(y)
}

/// Result of [`alloc`] / [`dealloc`].
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    pub assigned_load: Vec<f64>,
    pub y: Vec<usize>,
    pub y_min: Vec<usize>,
    pub y_max: Vec<usize>,
    /// `sum_f N(load_f / mu_f, y_f)`.
    pub total_n: f64,
}

/// Queue length at facility load `load` with `y` servers; zero when idle.
pub fn facility_n(load: f64, mu: f64, y: usize) -> f64 {
    if load <= 0.0 {
        return 0.0;
    }
    if y == 0 {
        return f64::INFINITY;
    }
    n_system(load / mu, y).unwrap_or(f64::INFINITY)
}

/// Fewest servers keeping `load` under the 0.98 cap.
pub fn min_servers(load: f64, mu: f64) -> usize {
    if load <= 0.0 {
        return 0;
    }
    (load / (UTIL_CAP * mu) - CAP_TOL).ceil().max(1.0) as usize
}

fn alloc_bounded(p: usize, loads: &[f64], mu: &[f64], lower: &[usize], upper: &[usize]) -> Result<AllocationState> {
    let nf = loads.len();
    if mu.len() != nf || lower.len() != nf || upper.len() != nf {
        return Err(GreedyError::Shape);
    }
    let mut y_min = vec![0; nf];
    for f in 0..nf {
        y_min[f] = lower[f].max(min_servers(loads[f], mu[f]));
        if y_min[f] > upper[f] {
            if upper[f] == 0 {
                return Err(GreedyError::Excluded { facility: f, load: loads[f] });
            }
            return Err(GreedyError::Overloaded { facility: f, load: loads[f], k: upper[f] });
        }
    }
    let needed: usize = y_min.iter().sum();
    if needed > p {
        return Err(GreedyError::Budget { needed, p });
    }
    let caps: Vec<usize> = (0..nf).map(|f| upper[f] - y_min[f]).collect();
    let gain = |f: usize, j: usize| {
        let base = y_min[f] + j;
        facility_n(loads[f], mu[f], base - 1) - facility_n(loads[f], mu[f], base)
    };
    let add = max_cost_drop(p - needed, gain, &caps)?;
    let y: Vec<usize> = (0..nf).map(|f| y_min[f] + add[f]).collect();
    let total_n = (0..nf).map(|f| facility_n(loads[f], mu[f], y[f])).sum();
    Ok(AllocationState { assigned_load: loads.to_vec(), y, y_min, y_max: caps, total_n })
}

/// Optimal allocation of exactly `p` servers for fixed facility loads.
///
/// `y0` is a lower bound; facilities outside `subset` (when given) get none.
pub fn alloc(
    p: usize,
    loads: &[f64],
    mu: &[f64],
    k: &[usize],
    y0: &[usize],
    subset: Option<&[bool]>,
) -> Result<AllocationState> {
    if k.len() != loads.len() {
        return Err(GreedyError::Shape);
    }
    let upper: Vec<usize> = match subset {
        Some(s) if s.len() != k.len() => return Err(GreedyError::Shape),
        Some(s) => k.iter().zip(s).map(|(&k, &on)| if on { k } else { 0 }).collect(),
        None => k.to_vec(),
    };
    alloc_bounded(p, loads, mu, y0, &upper)
}

/// Best allocation of `p` servers with `y <= y_start`.
pub fn dealloc(p: usize, loads: &[f64], mu: &[f64], y_start: &[usize]) -> Result<AllocationState> {
    alloc_bounded(p, loads, mu, &vec![0; loads.len()], y_start)
}

/// Possibly fractional formulation output handed to [`search`].
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalSolution {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub solution: Solution,
    /// Budget passed to the formulation on the successful iteration.
    pub p_used: usize,
    pub solves: usize,
}

/// Rounds up with a small tolerance for solver noise.
pub fn round_up(y: f64) -> usize {
    (y - 1e-6).ceil().max(0.0) as usize
}

fn clean_x(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter().map(|r| r.iter().map(|&v| v.max(0.0)).collect()).collect()
}

fn finish(inst: &Instance, x: Vec<Vec<f64>>, y: Vec<usize>, p_used: usize, solves: usize) -> Result<SearchOutcome> {
    let mut solution = Solution::new(x, y);
    solution.objective = Some(evaluate(inst, &solution)?);
    Ok(SearchOutcome { solution, p_used, solves })
}

/// Converts fractional formulation allocations into an integer allocation
/// with exactly `p` servers, re-solving at smaller budgets when needed.
///
/// `solve(p')` returns `Ok(None)` when the formulation is infeasible at `p'`.
pub fn search<F>(inst: &Instance, mut solve: F, p: usize) -> Result<SearchOutcome>
where
    F: FnMut(usize) -> std::result::Result<Option<FractionalSolution>, String>,
{
    let mut tried = BTreeSet::new();
    let mut solves = 0;
    let mut pp = p as i64;
    while pp <= p as i64 {
        if pp < 1 || !tried.insert(pp) {
            pp += 1;
            continue;
        }
        if solves == MAX_SEARCH_SOLVES {
            return Err(GreedyError::SearchExhausted { solves });
        }
        solves += 1;
        let Some(fs) = solve(pp as usize).map_err(GreedyError::Solver)? else {
            pp += 1;
            continue;
        };
        let x = clean_x(&fs.x);
        let y: Vec<usize> = fs.y.iter().map(|&v| round_up(v)).collect();
        let loads: Vec<f64> = (0..inst.n_facilities()).map(|f| x.iter().map(|r| r[f]).sum()).collect();
        let total: usize = y.iter().sum();
        let delta = total as i64 - p as i64;
        if delta == 0 {
            return finish(inst, x, y, pp as usize, solves);
        }
        if delta < 0 {
            let st = alloc(p, &loads, &inst.mu, &inst.k, &y, None)?;
            return finish(inst, x, st.y, pp as usize, solves);
        }
        match dealloc(p, &loads, &inst.mu, &y) {
            Ok(st) => return finish(inst, x, st.y, pp as usize, solves),
            Err(GreedyError::Budget { .. }) => pp -= delta,
            Err(e) => return Err(e),
        }
    }
    Err(GreedyError::SearchExhausted { solves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_cost_drop_examples() {
        assert_eq!(max_cost_drop(0, |_, _| 1.0, &[3, 3]).unwrap(), vec![0, 0]);
        let g1 = [10.0, 1.0, 0.5];
        let g2 = [5.0, 4.0, 0.1];
        let y = max_cost_drop(3, |f, j| if f == 0 { g1[j - 1] } else { g2[j - 1] }, &[3, 3]).unwrap();
        assert_eq!(y, vec![1, 2]);
        assert_eq!(max_cost_drop(3, |_, _| 1.0, &[2, 2, 2]).unwrap(), vec![2, 1, 0]);
        assert!(max_cost_drop(5, |_, _| 1.0, &[2, 2]).is_err());
    }

    #[test]
    fn alloc_examples() {
        let st = alloc(4, &[0.5, 0.5], &[1.0, 1.0], &[3, 3], &[0, 0], None).unwrap();
        assert_eq!(st.y, vec![2, 2]);
        assert!((st.total_n - 2.0 * n_system(0.5, 2).unwrap()).abs() < 1e-12);
        let st = alloc(2, &[0.5, 0.5], &[1.0, 1.0], &[3, 3], &[0, 0], None).unwrap();
        assert_eq!(st.y, st.y_min);
        let st = alloc(4, &[0.7], &[1.0], &[6], &[0], None).unwrap();
        assert_eq!(st.y, vec![4]);
        assert!(matches!(
            alloc(1, &[0.5, 0.5], &[1.0, 1.0], &[3, 3], &[0, 0], None),
            Err(GreedyError::Budget { needed: 2, p: 1 })
        ));
        assert!(matches!(
            alloc(3, &[0.5, 0.5], &[1.0, 1.0], &[3, 3], &[0, 0], Some(&[true, false])),
            Err(GreedyError::Excluded { facility: 1, .. })
        ));
    }

    #[test]
    fn dealloc_examples() {
        let st = dealloc(4, &[0.5, 0.5], &[1.0, 1.0], &[3, 3]).unwrap();
        assert_eq!(st.y, vec![2, 2]);
        let st = dealloc(6, &[0.5, 0.5], &[1.0, 1.0], &[3, 3]).unwrap();
        assert_eq!(st.y, vec![3, 3]);
        let heavy = 0.98 * 2.5;
        assert!(matches!(
            dealloc(5, &[heavy, heavy], &[1.0, 1.0], &[3, 3]),
            Err(GreedyError::Budget { needed: 6, p: 5 })
        ));
    }

    fn two_site() -> Instance {
        Instance {
            clients: vec!["c".into()],
            facilities: vec!["f".into(), "g".into()],
            latency: vec![vec![10.0, 12.0]],
            lambda: vec![1.0],
            mu: vec![1.0, 1.0],
            k: vec![4, 4],
            p: 4,
        }
    }

    #[test]
    fn search_direct_hit_and_top_up() {
        let inst = two_site();
        let out = search(&inst, |_| Ok(Some(FractionalSolution { x: vec![vec![0.5, 0.5]], y: vec![2.0, 2.0] })), 4).unwrap();
        assert_eq!(out.solution.y, vec![2, 2]);
        assert_eq!(out.solves, 1);
        let out = search(&inst, |_| Ok(Some(FractionalSolution { x: vec![vec![0.5, 0.5]], y: vec![1.5, 1.2] })), 4).unwrap();
        assert_eq!(out.solution.y.iter().sum::<usize>(), 4);
        let out = search(&inst, |_| Ok(Some(FractionalSolution { x: vec![vec![1.0, 0.0]], y: vec![1.0, 0.0] })), 4).unwrap();
        assert_eq!(out.solution.y, vec![4, 0]);
    }

    #[test]
    fn search_steps_down_then_up() {
        let mut inst = two_site();
        inst.lambda = vec![2.0];
        inst.p = 3;
        let mut calls = vec![];
        let out = search(
            &inst,
            |pp| {
                calls.push(pp);
                Ok(match pp {
                    3 => Some(FractionalSolution { x: vec![vec![1.0, 1.0]], y: vec![2.5, 2.5] }),
                    2 => Some(FractionalSolution { x: vec![vec![2.0, 0.0]], y: vec![2.2, 0.0] }),
                    _ => None,
                })
            },
            3,
        )
        .unwrap();
        assert_eq!(calls, vec![3, 1, 2]);
        assert_eq!(out.solution.y, vec![3, 0]);
        assert_eq!(out.p_used, 2);
        let err = search(&inst, |_| Ok(None), 3).unwrap_err();
        assert!(matches!(err, GreedyError::SearchExhausted { solves: 1 }));
    }
}
