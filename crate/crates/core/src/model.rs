//! Instances, solutions, exact objective evaluation and scenario generation.

use crate::pwl::UTIL_CAP;
use crate::queueing::{n_system, QueueError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Deserializer, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Milliseconds per second.
pub const MS: f64 = 1000.0;

/// Relative slack accepted on the capacity constraint.
pub const CAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error("infeasible solution: {}", join(.0))]
    Infeasible(Vec<Violation>),
    #[error("resource scheme d5 needs at least 5 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error(transparent)]
    Queue(#[from] QueueError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn ids<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(serde_json::Number),
    }
    let raw = Vec::<Id>::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|i| match i {
            Id::S(s) => s,
            Id::N(n) => n.to_string(),
        })
        .collect())
}

/// Bipartite client/facility problem with resource budget `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(deserialize_with = "ids")]
    pub clients: Vec<String>,
    #[serde(deserialize_with = "ids")]
    pub facilities: Vec<String>,
    /// `latency[c][f]` round-trip time in milliseconds.
    #[serde(rename = "latency_ms")]
    pub latency: Vec<Vec<f64>>,
    /// Arrival rate per client, requests per second.
    pub lambda: Vec<f64>,
    /// Per-server service rate per facility, requests per second.
    pub mu: Vec<f64>,
    /// Available servers per facility.
    pub k: Vec<usize>,
    pub p: usize,
}

impl Instance {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn n_facilities(&self) -> usize {
        self.facilities.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn total_k(&self) -> usize {
        self.k.iter().sum()
    }

    pub fn k_max(&self) -> usize {
        self.k.iter().copied().max().unwrap_or(0)
    }

    /// Largest servable rate with at most `p` servers under the 0.98 cap.
    pub fn max_capacity(&self) -> f64 {
        let mut order: Vec<usize> = (0..self.n_facilities()).collect();
        order.sort_by(|&a, &b| self.mu[b].total_cmp(&self.mu[a]).then(a.cmp(&b)));
        let mut left = self.p;
        let mut cap = 0.0;
        for f in order {
            let take = left.min(self.k[f]);
            cap += UTIL_CAP * self.mu[f] * take as f64;
            left -= take;
        }
        cap
    }

    /// Shape, sign and feasibility-precondition checks.
    pub fn validate(&self) -> Result<()> {
        let (nc, nf) = (self.n_clients(), self.n_facilities());
        let bad = |m: String| Err(ModelError::Instance(m));
        if nc == 0 || nf == 0 {
            return bad("need at least one client and one facility".into());
        }
        if self.lambda.len() != nc || self.latency.len() != nc {
            return bad("client vectors differ in length".into());
        }
        if self.mu.len() != nf || self.k.len() != nf {
            return bad("facility vectors differ in length".into());
        }
        if self.latency.iter().any(|r| r.len() != nf) {
            return bad("latency matrix is not |C| x |F|".into());
        }
        if self.latency.iter().flatten().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return bad("latencies must be finite and non-negative".into());
        }
        if self.lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return bad("demands must be finite and non-negative".into());
        }
        if self.mu.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return bad("service rates must be positive".into());
        }
        if self.k.iter().any(|&k| k < 1) {
            return bad("every facility needs k >= 1".into());
        }
        if self.p < 1 || self.p > self.total_k() {
            return bad(format!("budget p={} outside [1, {}]", self.p, self.total_k()));
        }
        if self.total_demand() > self.max_capacity() * (1.0 + 1e-12) {
            return bad(format!(
                "total demand {} exceeds the capped capacity {} reachable with p={}",
                self.total_demand(),
                self.max_capacity(),
                self.p
            ));
        }
        Ok(())
    }

    /// Same instance with a different budget.
    pub fn with_p(&self, p: usize) -> Self {
        Self { p, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Instance = serde_json::from_str(text).map_err(|e| ModelError::Instance(e.to_string()))?;
        inst.validate()?;
        Ok(inst)
    }
}

/// Assignment `x[c][f]` and allocation `y[f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub objective: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SolutionJson {
    clients: usize,
    facilities: usize,
    x: Vec<f64>,
    y: Vec<usize>,
    objective_ms: Option<f64>,
}

impl Solution {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<usize>) -> Self {
        Self { x, y, objective: None }
    }

    /// Assigned rate per facility.
    pub fn loads(&self) -> Vec<f64> {
        let nf = self.y.len();
        let mut l = vec![0.0; nf];
        for row in &self.x {
            for (f, v) in row.iter().enumerate().take(nf) {
                l[f] += v;
            }
        }
        l
    }

    pub fn to_json(&self) -> String {
        let doc = SolutionJson {
            clients: self.x.len(),
            facilities: self.y.len(),
            x: self.x.iter().flatten().copied().collect(),
            y: self.y.clone(),
            objective_ms: self.objective,
        };
        serde_json::to_string_pretty(&doc).expect("serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SolutionJson = serde_json::from_str(text).map_err(|e| ModelError::Instance(e.to_string()))?;
        if doc.x.len() != doc.clients * doc.facilities || doc.y.len() != doc.facilities {
            return Err(ModelError::Instance("solution shape mismatch".into()));
        }
        let x = if doc.facilities == 0 {
            vec![vec![]; doc.clients]
        } else {
            doc.x.chunks(doc.facilities).map(|r| r.to_vec()).collect()
        };
        Ok(Self { x, y: doc.y, objective: doc.objective_ms })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    Negative { client: usize, facility: usize, value: f64 },
    Demand { client: usize, assigned: f64, demand: f64 },
    Capacity { facility: usize, load: f64, cap: f64 },
    Count { facility: usize, y: usize, k: usize },
    Limit { total: usize, p: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(m) => write!(f, "shape: {m}"),
            Violation::Negative { client, facility, value } => {
                write!(f, "negative assignment x[{client}][{facility}]={value}")
            }
            Violation::Demand { client, assigned, demand } => {
                write!(f, "demand of client {client}: assigned {assigned} of {demand}")
            }
            Violation::Capacity { facility, load, cap } => {
                write!(f, "capacity of facility {facility}: load {load} > {cap}")
            }
            Violation::Count { facility, y, k } => write!(f, "count at facility {facility}: y={y} > k={k}"),
            Violation::Limit { total, p } => write!(f, "limit: sum y = {total} != p = {p}"),
        }
    }
}

/// Result of [`validate`]; empty means feasible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks demand, capacity (with the 0.98 cap), count and limit.
pub fn validate(inst: &Instance, sol: &Solution) -> ValidationReport {
    let mut v = Vec::new();
    let (nc, nf) = (inst.n_clients(), inst.n_facilities());
    if sol.x.len() != nc || sol.x.iter().any(|r| r.len() != nf) || sol.y.len() != nf {
        v.push(Violation::Shape(format!("expected x {nc}x{nf} and y of length {nf}")));
        return ValidationReport { violations: v };
    }
    for (c, row) in sol.x.iter().enumerate() {
        for (f, &val) in row.iter().enumerate() {
            if !(val >= -1e-9) {
                v.push(Violation::Negative { client: c, facility: f, value: val });
            }
        }
        let assigned: f64 = row.iter().sum();
        let demand = inst.lambda[c];
        if (assigned - demand).abs() > 1e-6 * demand.max(1e-3) {
            v.push(Violation::Demand { client: c, assigned, demand });
        }
    }
    for (f, &load) in sol.loads().iter().enumerate() {
        let cap = UTIL_CAP * inst.mu[f] * sol.y[f] as f64;
        if load > cap * (1.0 + CAP_TOL) + 1e-9 {
            v.push(Violation::Capacity { facility: f, load, cap });
        }
        if sol.y[f] > inst.k[f] {
            v.push(Violation::Count { facility: f, y: sol.y[f], k: inst.k[f] });
        }
    }
    let total: usize = sol.y.iter().sum();
    if total != inst.p {
        v.push(Violation::Limit { total, p: inst.p });
    }
    ValidationReport { violations: v }
}

/// Queueing part in milliseconds times requests per second: `1000 * N(L/mu, y)`.
pub fn queue_cost(load: f64, mu: f64, y: usize) -> Result<f64> {
    if load <= 0.0 {
        return Ok(0.0);
    }
    if y == 0 {
        return Err(QueueError::Domain { a: load / mu, k: 0 }.into());
    }
    Ok(MS * n_system(load / mu, y)?)
}

/// Average response time (ms) without feasibility checks.
pub fn objective_unchecked(inst: &Instance, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut loads = vec![0.0; inst.n_facilities()];
    for (c, row) in x.iter().enumerate() {
        for (f, &v) in row.iter().enumerate() {
            total += v * inst.latency[c][f];
            loads[f] += v;
        }
    }
    for (f, &l) in loads.iter().enumerate() {
        total += queue_cost(l, inst.mu[f], y[f])?;
    }
    Ok(total / inst.total_demand())
}

/// Exact average response time in milliseconds.
pub fn evaluate(inst: &Instance, sol: &Solution) -> Result<f64> {
    let report = validate(inst, sol);
    if !report.is_ok() {
        return Err(ModelError::Infeasible(report.violations));
    }
    objective_unchecked(inst, &sol.x, &sol.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandDist {
    /// Normal with standard deviation mean/20.
    N1,
    /// Normal with standard deviation equal to the mean.
    N2,
    Exp,
}

impl FromStr for DemandDist {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n1" => Ok(DemandDist::N1),
            "n2" => Ok(DemandDist::N2),
            "exp" => Ok(DemandDist::Exp),
            _ => Err(ModelError::Unknown { kind: "demand distribution", name: s.into() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceScheme {
    D5,
    D,
    D2,
    C,
    X,
}

impl FromStr for ResourceScheme {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d5" => Ok(ResourceScheme::D5),
            "d" => Ok(ResourceScheme::D),
            "d2" | "d²" => Ok(ResourceScheme::D2),
            "c" => Ok(ResourceScheme::C),
            "x" => Ok(ResourceScheme::X),
            _ => Err(ModelError::Unknown { kind: "resource scheme", name: s.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub demand_dist: DemandDist,
    /// Aggregate mean demand; derived from capacities when absent.
    pub demand_mean: Option<f64>,
    pub resource_scheme: ResourceScheme,
    pub budget_factor: f64,
    pub seed: u64,
}

/// Aggregate mean demand: half of the capped total service capacity.
pub fn default_demand_mean(mu: &[f64], k: &[usize]) -> f64 {
    UTIL_CAP / 2.0 * mu.iter().zip(k).map(|(m, &k)| m * k as f64).sum::<f64>()
}

/// Per-node demand with per-node mean `total_mean / n`, clamped at zero.
pub fn gen_demand(n: usize, total_mean: f64, dist: DemandDist, seed: u64) -> Vec<f64> {
    if n == 0 {
        return vec![];
    }
    let m = total_mean / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw: Box<dyn FnMut(&mut ChaCha8Rng) -> f64> = match dist {
        DemandDist::N1 => {
            let d = Normal::new(m, m / 20.0).expect("finite mean");
            Box::new(move |r| d.sample(r))
        }
        DemandDist::N2 => {
            let d = Normal::new(m, m).expect("finite mean");
            Box::new(move |r| d.sample(r))
        }
        DemandDist::Exp => {
            if m > 0.0 {
                let d = Exp::new(1.0 / m).expect("positive rate");
                Box::new(move |r| d.sample(r))
            } else {
                Box::new(|_| 0.0)
            }
        }
    };
    let mut draw = draw;
    (0..n).map(|_| draw(&mut rng).max(0.0)).collect()
}

/// Splits `total` proportionally to `w` with largest-remainder rounding
/// (ties to the lower index).
pub fn largest_remainder(w: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = w.iter().sum();
    let w: Vec<f64> = if sum > 0.0 { w.to_vec() } else { vec![1.0; w.len()] };
    let sum: f64 = w.iter().sum();
    let quota: Vec<f64> = w.iter().map(|x| total as f64 * x / sum).collect();
    let mut out: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let mut left = total.saturating_sub(out.iter().sum());
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quota[a] - quota[a].floor(), quota[b] - quota[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Per-node resource counts for a scheme. `latency` is needed for scheme `c`.
pub fn distribute_resources(
    degrees: &[usize],
    latency: Option<&[Vec<f64>]>,
    scheme: ResourceScheme,
    k_total: usize,
) -> Result<Vec<usize>> {
    let n = degrees.len();
    match scheme {
        ResourceScheme::X => Ok(vec![100; n]),
        ResourceScheme::D5 => {
            if n < 5 {
                return Err(ModelError::TooFewNodes(n));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| degrees[b].cmp(&degrees[a]).then(a.cmp(&b)));
            let mut out = vec![0; n];
            let share = largest_remainder(&[1.0; 5], k_total);
            for (i, &node) in order.iter().take(5).enumerate() {
                out[node] = share[i];
            }
            Ok(out)
        }
        ResourceScheme::D => Ok(largest_remainder(&degrees.iter().map(|&d| d as f64).collect::<Vec<_>>(), k_total)),
        ResourceScheme::D2 => Ok(largest_remainder(
            &degrees.iter().map(|&d| (d * d) as f64).collect::<Vec<_>>(),
            k_total,
        )),
        ResourceScheme::C => {
            let lat = latency.ok_or_else(|| ModelError::Instance("scheme c needs a latency matrix".into()))?;
            let best = (0..n)
                .min_by(|&a, &b| {
                    let sa: f64 = lat[a].iter().sum();
                    let sb: f64 = lat[b].iter().sum();
                    sa.total_cmp(&sb).then(a.cmp(&b))
                })
                .ok_or_else(|| ModelError::Instance("empty topology".into()))?;
            let mut out = vec![0; n];
            out[best] = k_total;
            Ok(out)
        }
    }
}

/// `ceil(a * sum k)`.
pub fn budget_from_factor(total_k: usize, a: f64) -> usize {
    (a * total_k as f64 - 1e-9).ceil().max(0.0) as usize
}
