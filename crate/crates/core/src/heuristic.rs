//! Genetic metaheuristic: nearest-capacity assignment, subset descent and
//! recombination.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::greedy::{alloc, GreedyError};
use crate::model::{evaluate, Instance, ModelError, Solution};
use crate::pwl::UTIL_CAP;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeuristicError {
    #[error("facility subset is empty")]
    EmptySubset,
    #[error("subset cannot carry the demand ({remaining} req/s left)")]
    Infeasible { remaining: f64 },
    #[error("facility {0} does not exist")]
    UnknownFacility(usize),
    #[error("no feasible subset reachable from the seed")]
    NoFeasibleNeighbour,
    #[error("no initial population member after {attempts} attempts")]
    NoPopulation { attempts: usize },
    #[error(transparent)]
    Greedy(#[from] GreedyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, HeuristicError>;

pub type Subset = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEntry {
    pub subset: Subset,
    pub y: Vec<usize>,
    /// Average response time in milliseconds.
    pub t: f64,
}

/// `F_I ⊆ F_s ⊆ F_D` side condition of the neighbourhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodBounds {
    pub intersection: Subset,
    pub domain: Subset,
}

impl NeighborhoodBounds {
    pub fn admits(&self, s: &Subset) -> bool {
        self.intersection.is_subset(s) && s.is_subset(&self.domain)
    }
}

/// Assigns demand to the nearest facility of `subset` with spare capped
/// capacity, over `(client, facility)` pairs by increasing latency.
pub fn greedy_assign(inst: &Instance, subset: &Subset) -> Result<Vec<Vec<f64>>> {
    if subset.is_empty() {
        return Err(HeuristicError::EmptySubset);
    }
    let nf = inst.n_facilities();
    if let Some(&f) = subset.iter().find(|&&f| f >= nf) {
        return Err(HeuristicError::UnknownFacility(f));
    }
    let mut pairs: Vec<(usize, usize)> =
        (0..inst.n_clients()).flat_map(|c| subset.iter().map(move |&f| (c, f))).collect();
    pairs.sort_by(|a, b| {
        inst.latency[a.0][a.1].total_cmp(&inst.latency[b.0][b.1]).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
    });
    let mut left = inst.lambda.clone();
    let mut room: Vec<f64> = (0..nf).map(|f| UTIL_CAP * inst.k[f] as f64 * inst.mu[f]).collect();
    let mut x = vec![vec![0.0; nf]; inst.n_clients()];
    for (c, f) in pairs {
        let take = left[c].min(room[f]);
        if take > 0.0 {
            x[c][f] += take;
            left[c] -= take;
            room[f] -= take;
        }
    }
    let remaining: f64 = left.iter().sum();
    if remaining > 1e-12 * inst.total_demand().max(1.0) {
        return Err(HeuristicError::Infeasible { remaining });
    }
    Ok(x)
}

fn loads(x: &[Vec<f64>], nf: usize) -> Vec<f64> {
    (0..nf).map(|f| x.iter().map(|r| r[f]).sum()).collect()
}

fn solve_inner(inst: &Instance, subset: &Subset, p: usize) -> Result<(Solution, f64)> {
    let x = greedy_assign(inst, subset)?;
    let mask: Vec<bool> = (0..inst.n_facilities()).map(|f| subset.contains(&f)).collect();
    let st = alloc(p, &loads(&x, inst.n_facilities()), &inst.mu, &inst.k, &vec![0; mask.len()], Some(&mask))?;
    let sol = Solution::new(x, st.y);
    let t = evaluate(&inst.with_p(p), &sol)?;
    Ok((sol, t))
}

/// Greedy assignment followed by optimal allocation of `p` servers.
pub fn solve_subset(inst: &Instance, subset: &Subset, p: usize) -> Result<PopulationEntry> {
    let (sol, t) = solve_inner(inst, subset, p)?;
    Ok(PopulationEntry { subset: subset.clone(), y: sol.y, t })
}

/// Subsets one add, one removal, or one swap away from `fs`.
pub fn neigh(fs: &Subset, fd: &Subset, fi: &Subset) -> Vec<Subset> {
    let adds: Vec<usize> = fd.difference(fs).copied().collect();
    let removes: Vec<usize> = fs.difference(fi).copied().collect();
    let mut out: Vec<Subset> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |s: Subset| {
        if seen.insert(s.clone()) {
            out.push(s);
        }
    };
    for &a in &adds {
        let mut s = fs.clone();
        s.insert(a);
        push(s);
    }
    for &r in &removes {
        let mut s = fs.clone();
        s.remove(&r);
        push(s);
    }
    for &r in &removes {
        for &a in &adds {
            let mut s = fs.clone();
            s.remove(&r);
            s.insert(a);
            push(s);
        }
    }
    out
}

/// Steepest descent over [`neigh`] until no neighbour improves.
pub fn descent(inst: &Instance, fs: &Subset, p: usize, fd: &Subset, fi: &Subset) -> Result<PopulationEntry> {
    let mut current = solve_subset(inst, fs, p).ok();
    let mut at = fs.clone();
    loop {
        let cands = neigh(&at, fd, fi);
        let scored: Vec<Option<PopulationEntry>> =
            cands.par_iter().map(|s| solve_subset(inst, s, p).ok()).collect();
        let best = scored.into_iter().flatten().fold(None::<PopulationEntry>, |b, e| match b {
            Some(b) if b.t <= e.t => Some(b),
            _ => Some(e),
        });
        match (best, &current) {
            (Some(b), Some(c)) if b.t < c.t => {
                at = b.subset.clone();
                current = Some(b);
            }
            (Some(b), None) => {
                at = b.subset.clone();
                current = Some(b);
            }
            _ => break,
        }
    }
    current.ok_or(HeuristicError::NoFeasibleNeighbour)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneticConfig {
    pub population_size: usize,
    /// Defaults to `50 * |F|`, capped at 5000.
    pub merge_steps: Option<usize>,
    pub seed: u64,
    /// Initialisation attempts per population slot before growing the seed size.
    pub attempts_per_slot: usize,
}

impl Default for GeneticConfig {
    fn default() -> Self {
        Self { population_size: 10, merge_steps: None, seed: 0, attempts_per_slot: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneticOutcome {
    pub solution: Solution,
    pub best: PopulationEntry,
    pub population: Vec<PopulationEntry>,
}

fn random_subset(rng: &mut ChaCha8Rng, pool: &[usize], l: usize) -> Subset {
    sample(rng, pool.len(), l.min(pool.len())).into_iter().map(|i| pool[i]).collect()
}

/// Population of descent-refined subsets recombined by merge steps.
pub fn genetic(inst: &Instance, p: usize, cfg: GeneticConfig) -> Result<GeneticOutcome> {
    let nf = inst.n_facilities();
    let all: Subset = (0..nf).collect();
    let every: Vec<usize> = (0..nf).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = cfg.population_size.max(1);
    let mut l = ((nf as f64).sqrt().floor() as usize).max(1);
    let mut pop: Vec<PopulationEntry> = Vec::new();
    let mut attempts = 0;
    let mut total_attempts = 0;
    while pop.len() < size {
        let seed = random_subset(&mut rng, &every, l);
        attempts += 1;
        total_attempts += 1;
        if let Ok(e) = descent(inst, &seed, p, &all, &Subset::new()) {
            if !pop.iter().any(|q| q.subset == e.subset) {
                pop.push(e);
            }
        }
        if attempts >= cfg.attempts_per_slot * size && pop.len() < size {
            if l >= nf {
                break;
            }
            l += 1;
            attempts = 0;
        }
    }
    if pop.is_empty() {
        return Err(HeuristicError::NoPopulation { attempts: total_attempts });
    }

    let steps = cfg.merge_steps.unwrap_or((50 * nf).min(5000));
    for _ in 0..steps {
        if pop.len() < 2 {
            break;
        }
        let pick = sample(&mut rng, pop.len(), 2);
        let (a, b) = (&pop[pick.index(0)].subset, &pop[pick.index(1)].subset);
        let fi: Subset = a.intersection(b).copied().collect();
        let union: Subset = a.union(b).copied().collect();
        let mut fd: Subset = a.symmetric_difference(b).copied().collect();
        let outside: Vec<usize> = all.difference(&union).copied().collect();
        fd.extend(random_subset(&mut rng, &outside, 3));
        if fd.is_empty() {
            continue;
        }
        let pool: Vec<usize> = fd.iter().copied().collect();
        let mut child = fi.clone();
        child.insert(pool[rng.gen_range(0..pool.len())]);
        let domain: Subset = fd.union(&fi).copied().collect();
        let Ok(e) = descent(inst, &child, p, &domain, &fi) else {
            continue;
        };
        if pop.iter().any(|q| q.subset == e.subset) {
            continue;
        }
        let worst = (0..pop.len()).max_by(|&i, &j| pop[i].t.total_cmp(&pop[j].t).then(j.cmp(&i))).expect("non-empty");
        if e.t < pop[worst].t {
            pop[worst] = e;
        }
    }

    let best = pop
        .iter()
        .min_by(|a, b| a.t.total_cmp(&b.t))
        .cloned()
        .expect("non-empty population");
    let (mut solution, t) = solve_inner(inst, &best.subset, p)?;
    solution.objective = Some(t);
    Ok(GeneticOutcome { solution, best, population: pop })
}
