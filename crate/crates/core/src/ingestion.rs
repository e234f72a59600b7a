//! Topology parsers and latency matrices.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::model::{
    budget_from_factor, default_demand_mean, distribute_resources, gen_demand, Instance, ModelError,
    ScenarioConfig,
};

/// One-way propagation delay per kilometre.
pub const DEFAULT_MS_PER_KM: f64 = 0.01;
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestionError {
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("graph is empty after preprocessing")]
    Empty,
    #[error("graph is disconnected")]
    Disconnected,
    #[error("edge {0}-{1} has neither a latency nor coordinates")]
    NoLatency(String, String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, IngestionError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub degree: usize,
}

/// Undirected edge between node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub name: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Nodes dropped by preprocessing.
    pub dropped: usize,
    pub warnings: Vec<String>,
}

impl Topology {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.degree).collect()
    }
}

/// Numeric ids compare numerically, everything else lexically.
pub fn id_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

struct RawNode {
    id: String,
    lat: Option<f64>,
    lon: Option<f64>,
}

/// Removes coordinate-less nodes (ascending id), reconnecting their
/// neighbours, then keeps the largest component.
fn assemble(
    name: String,
    mut nodes: Vec<RawNode>,
    edges: Vec<(String, String, Option<f64>)>,
    require_coords: bool,
) -> Result<Topology> {
    nodes.sort_by(|a, b| id_order(&a.id, &b.id));
    let index: BTreeMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    let mut adj: Vec<BTreeMap<usize, Option<f64>>> = vec![BTreeMap::new(); nodes.len()];
    let link = |adj: &mut Vec<BTreeMap<usize, Option<f64>>>, u: usize, v: usize, l: Option<f64>| {
        if u == v {
            return;
        }
        let merged = match adj[u].get(&v) {
            Some(&old) => match (old, l) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
            None => l,
        };
        adj[u].insert(v, merged);
        adj[v].insert(u, merged);
    };
    for (a, b, l) in edges {
        let (Some(&u), Some(&v)) = (index.get(&a), index.get(&b)) else {
            return Err(IngestionError::Malformed(format!("edge {a}-{b} references an unknown node")));
        };
        link(&mut adj, u, v, l);
    }
    let mut alive = vec![true; nodes.len()];
    let mut dropped = 0;
    if require_coords {
        for i in 0..nodes.len() {
            if nodes[i].lat.is_some() && nodes[i].lon.is_some() {
                continue;
            }
            let nbrs: Vec<(usize, Option<f64>)> = adj[i].iter().map(|(&v, &l)| (v, l)).collect();
            for &(v, _) in &nbrs {
                adj[v].remove(&i);
            }
            adj[i].clear();
            for (x, &(u, lu)) in nbrs.iter().enumerate() {
                for &(v, lv) in &nbrs[x + 1..] {
                    let l = match (lu, lv) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    };
                    link(&mut adj, u, v, l);
                }
            }
            alive[i] = false;
            dropped += 1;
        }
    }
    // Largest component; ties go to the one holding the lowest index.
    let mut comp = vec![usize::MAX; nodes.len()];
    let mut best: Option<(usize, usize)> = None;
    for s in 0..nodes.len() {
        if !alive[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = s;
        let mut size = 0;
        while let Some(u) = stack.pop() {
            size += 1;
            for &v in adj[u].keys() {
                if comp[v] == usize::MAX {
                    comp[v] = s;
                    stack.push(v);
                }
            }
        }
        if best.map_or(true, |(_, b)| size > b) {
            best = Some((s, size));
        }
    }
    let (root, _) = best.ok_or(IngestionError::Empty)?;
    let keep: Vec<usize> = (0..nodes.len()).filter(|&i| alive[i] && comp[i] == root).collect();
    dropped += (0..nodes.len()).filter(|&i| alive[i]).count() - keep.len();
    let remap: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(n, &o)| (o, n)).collect();
    let mut out_edges = Vec::new();
    for &u in &keep {
        for (&v, &l) in &adj[u] {
            if u < v {
                out_edges.push(Edge { u: remap[&u], v: remap[&v], latency_ms: l });
            }
        }
    }
    let out_nodes = keep
        .iter()
        .map(|&i| Node { id: nodes[i].id.clone(), lat: nodes[i].lat, lon: nodes[i].lon, degree: adj[i].len() })
        .collect();
    if dropped > 0 {
        log::info!("{name}: dropped {dropped} nodes during preprocessing");
    }
    Ok(Topology { name, nodes: out_nodes, edges: out_edges, dropped, warnings: Vec::new() })
}

fn attr_kind(name: &str) -> Option<&'static str> {
    match name.to_ascii_lowercase().as_str() {
        "latitude" | "lat" => Some("lat"),
        "longitude" | "lon" | "lng" | "long" => Some("lon"),
        "latency" | "latency_ms" | "delay" => Some("latency"),
        "label" | "name" => Some("label"),
        _ => None,
    }
}

/// XML graph markup with optional latitude/longitude node attributes.
pub fn parse_graphml_topology(text: &str) -> Result<Topology> {
    let doc = roxmltree::Document::parse(text).map_err(|e| IngestionError::Malformed(e.to_string()))?;
    let mut keys: BTreeMap<String, &'static str> = BTreeMap::new();
    for k in doc.descendants().filter(|n| n.has_tag_name("key")) {
        let (Some(id), Some(name)) = (k.attribute("id"), k.attribute("attr.name")) else {
            continue;
        };
        if let Some(kind) = attr_kind(name) {
            keys.insert(id.to_string(), kind);
        }
    }
    let graph = doc
        .descendants()
        .find(|n| n.has_tag_name("graph"))
        .ok_or_else(|| IngestionError::Malformed("no graph element".into()))?;
    let mut name = graph.attribute("id").unwrap_or("graph").to_string();
    for d in graph.children().filter(|n| n.has_tag_name("data")) {
        if d.attribute("key").and_then(|k| keys.get(k)) == Some(&"label") {
            name = d.text().unwrap_or_default().trim().to_string();
        }
    }
    let data = |n: roxmltree::Node, kind: &str| -> Option<String> {
        n.children()
            .filter(|d| d.has_tag_name("data"))
            .find(|d| d.attribute("key").and_then(|k| keys.get(k)).copied() == Some(kind))
            .and_then(|d| d.text())
            .map(|t| t.trim().to_string())
    };
    let num = |s: Option<String>| s.and_then(|t| t.parse::<f64>().ok()).filter(|v| v.is_finite());
    let mut nodes = Vec::new();
    let mut seen = BTreeSet::new();
    for n in graph.children().filter(|n| n.has_tag_name("node")) {
        let id = n.attribute("id").ok_or_else(|| IngestionError::Malformed("node without id".into()))?;
        if !seen.insert(id.to_string()) {
            return Err(IngestionError::Malformed(format!("duplicate node {id}")));
        }
        nodes.push(RawNode { id: id.to_string(), lat: num(data(n, "lat")), lon: num(data(n, "lon")) });
    }
    let mut edges = Vec::new();
    for e in graph.children().filter(|n| n.has_tag_name("edge")) {
        let (Some(s), Some(t)) = (e.attribute("source"), e.attribute("target")) else {
            return Err(IngestionError::Malformed("edge without endpoints".into()));
        };
        edges.push((s.to_string(), t.to_string(), num(data(e, "latency"))));
    }
    if nodes.is_empty() {
        return Err(IngestionError::Empty);
    }
    assemble(name, nodes, edges, true)
}

/// SNDlib native text: the `NODES` and `LINKS` sections; coordinates are
/// `( lon lat )`.
pub fn parse_sndlib(text: &str) -> Result<Topology> {
    let mut section = "";
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.ends_with('(') && !line.contains(')') {
            section = if line.starts_with("NODES") {
                "nodes"
            } else if line.starts_with("LINKS") {
                "links"
            } else {
                "other"
            };
            continue;
        }
        if line == ")" {
            section = "";
            continue;
        }
        let toks: Vec<&str> =
            line.split(|c: char| c.is_whitespace() || c == '(' || c == ')').filter(|t| !t.is_empty()).collect();
        match section {
            "nodes" => {
                if toks.len() < 3 {
                    return Err(IngestionError::Malformed(format!("node line {line:?}")));
                }
                let parse = |t: &str| t.parse::<f64>().map_err(|_| IngestionError::Malformed(format!("coordinate {t:?}")));
                nodes.push(RawNode { id: toks[0].to_string(), lon: Some(parse(toks[1])?), lat: Some(parse(toks[2])?) });
            }
            "links" => {
                if toks.len() < 3 {
                    return Err(IngestionError::Malformed(format!("link line {line:?}")));
                }
                edges.push((toks[1].to_string(), toks[2].to_string(), None));
            }
            _ => {}
        }
    }
    if nodes.is_empty() {
        return Err(IngestionError::Empty);
    }
    assemble("sndlib".into(), nodes, edges, true)
}

/// Whitespace-separated `i j latency_ms` triples. Missing directions are
/// copied; conflicting pairs are averaged with a warning.
pub fn parse_latency_matrix(text: &str) -> Result<Topology> {
    let mut pairs: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(IngestionError::Malformed(format!("line {}: expected `i j latency`", no + 1)));
        }
        let l: f64 = toks[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| IngestionError::Malformed(format!("line {}: bad latency {:?}", no + 1, toks[2])))?;
        if toks[0] == toks[1] {
            continue;
        }
        let (a, b) = if id_order(toks[0], toks[1]) == Ordering::Greater { (toks[1], toks[0]) } else { (toks[0], toks[1]) };
        pairs.entry((a.to_string(), b.to_string())).or_default().push(l);
    }
    if pairs.is_empty() {
        return Err(IngestionError::Empty);
    }
    let mut warnings = Vec::new();
    let mut ids = BTreeSet::new();
    let mut edges = Vec::new();
    for ((a, b), ls) in pairs {
        let mean = ls.iter().sum::<f64>() / ls.len() as f64;
        if ls.iter().any(|&l| (l - mean).abs() > 1e-12 * mean.max(1.0)) {
            let w = format!("asymmetric latency {a}-{b} {ls:?}; using {mean}");
            log::warn!("{w}");
            warnings.push(w);
        }
        ids.insert(a.clone());
        ids.insert(b.clone());
        edges.push((a, b, Some(mean)));
    }
    let nodes = ids.into_iter().map(|id| RawNode { id, lat: None, lon: None }).collect();
    let mut topo = assemble("latency-matrix".into(), nodes, edges, false)?;
    topo.warnings = warnings;
    Ok(topo)
}

/// Chooses a parser from the file extension, sniffing the content otherwise.
pub fn load_topology(path: &Path) -> Result<Topology> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestionError::Io(format!("{}: {e}", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let mut topo = if ext == "graphml" || ext == "xml" || text.trim_start().starts_with('<') {
        parse_graphml_topology(&text)?
    } else if text.contains("NODES (") || text.contains("NODES(") {
        parse_sndlib(&text)?
    } else {
        parse_latency_matrix(&text)?
    };
    if topo.name == "graph" || topo.name == "sndlib" || topo.name == "latency-matrix" {
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            topo.name = stem.to_string();
        }
    }
    Ok(topo)
}

/// Great-circle distance in kilometres.
pub fn great_circle_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Shortest-path round-trip times. Edges without an explicit latency use
/// `2 * ms_per_km * distance`.
pub fn all_pairs_rtt(topo: &Topology, ms_per_km: f64) -> Result<Vec<Vec<f64>>> {
    let n = topo.n();
    if n == 0 {
        return Err(IngestionError::Empty);
    }
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in &topo.edges {
        let w = match e.latency_ms {
            Some(l) => l,
            None => {
                let (a, b) = (&topo.nodes[e.u], &topo.nodes[e.v]);
                match (a.lat, a.lon, b.lat, b.lon) {
                    (Some(la), Some(oa), Some(lb), Some(ob)) => 2.0 * ms_per_km * great_circle_km(la, oa, lb, ob),
                    _ => return Err(IngestionError::NoLatency(a.id.clone(), b.id.clone())),
                }
            }
        };
        if w < d[e.u][e.v] {
            d[e.u][e.v] = w;
            d[e.v][e.u] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i][k];
            if !dik.is_finite() {
                continue;
            }
            for j in 0..n {
                let via = dik + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    if d.iter().flatten().any(|v| !v.is_finite()) {
        return Err(IngestionError::Disconnected);
    }
    Ok(d)
}

/// Generation parameters beyond the scenario itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenOptions {
    /// Per-server service rate at every facility.
    pub mu: f64,
    pub ms_per_km: f64,
    /// Resources per node for the degree and central schemes.
    pub k_per_node: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { mu: 100.0, ms_per_km: DEFAULT_MS_PER_KM, k_per_node: 5 }
    }
}

/// Every node is a client; nodes that receive resources are facilities.
pub fn instance_from_topology(topo: &Topology, scenario: &ScenarioConfig, opts: GenOptions) -> Result<Instance> {
    let rtt = all_pairs_rtt(topo, opts.ms_per_km)?;
    let n = topo.n();
    let k_all = distribute_resources(&topo.degrees(), Some(&rtt), scenario.resource_scheme, opts.k_per_node * n)?;
    let fac: Vec<usize> = (0..n).filter(|&i| k_all[i] > 0).collect();
    let k: Vec<usize> = fac.iter().map(|&i| k_all[i]).collect();
    let mu = vec![opts.mu; fac.len()];
    let mean = scenario.demand_mean.unwrap_or_else(|| default_demand_mean(&mu, &k));
    let lambda = gen_demand(n, mean, scenario.demand_dist, scenario.seed);
    let total_k: usize = k.iter().sum();
    let inst = Instance {
        clients: topo.nodes.iter().map(|x| x.id.clone()).collect(),
        facilities: fac.iter().map(|&i| topo.nodes[i].id.clone()).collect(),
        latency: (0..n).map(|c| fac.iter().map(|&f| rtt[c][f]).collect()).collect(),
        lambda,
        mu,
        k,
        p: budget_from_factor(total_k, scenario.budget_factor),
    };
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATH3: &str = r#"<?xml version="1.0"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <key attr.name="Latitude" attr.type="double" for="node" id="d1"/>
  <key attr.name="Longitude" attr.type="double" for="node" id="d2"/>
  <graph edgedefault="undirected">
    <node id="0"><data key="d1">50.0</data><data key="d2">6.0</data></node>
    <node id="1"></node>
    <node id="2"><data key="d1">51.0</data><data key="d2">6.0</data></node>
    <edge source="0" target="1"/>
    <edge source="1" target="2"/>
  </graph>
</graphml>"#;

    #[test]
    fn uncoordinated_middle_node_bridged() {
        let t = parse_graphml_topology(PATH3).unwrap();
        assert_eq!(t.n(), 2);
        assert_eq!(t.edges.len(), 1);
        assert_eq!(t.dropped, 1);
        let d = all_pairs_rtt(&t, DEFAULT_MS_PER_KM).unwrap();
        assert!((d[0][1] - 2.2239).abs() < 1e-3, "{}", d[0][1]);
    }

    #[test]
    fn triangle_shortest_path() {
        let t = parse_latency_matrix("1 2 1\n2 3 1\n1 3 3\n").unwrap();
        let d = all_pairs_rtt(&t, DEFAULT_MS_PER_KM).unwrap();
        assert_eq!(d[0][2], 2.0);
        assert_eq!(d[1][1], 0.0);
    }

    #[test]
    fn latency_symmetrisation() {
        let t = parse_latency_matrix("1 2 10\n").unwrap();
        assert_eq!(all_pairs_rtt(&t, 0.01).unwrap()[1][0], 10.0);
        let t = parse_latency_matrix("1 2 10\n2 1 20\n").unwrap();
        assert_eq!(t.edges[0].latency_ms, Some(15.0));
        assert_eq!(t.warnings.len(), 1);
        assert_eq!(parse_latency_matrix("  \n# nothing\n").unwrap_err(), IngestionError::Empty);
    }

    #[test]
    fn sndlib_nodes_and_links() {
        let text = "?SNDlib native format\nNODES (\n  A ( 6.0 50.0 )\n  B ( 6.0 51.0 )\n)\nLINKS (\n  L1 ( A B ) 0 0 0 0 ( 1 2 )\n)\nDEMANDS (\n  D1 ( A B ) 1 1\n)\n";
        let t = parse_sndlib(text).unwrap();
        assert_eq!(t.n(), 2);
        assert_eq!(t.edges.len(), 1);
        assert_eq!(t.nodes[0].lat, Some(50.0));
    }

    #[test]
    fn numeric_id_order() {
        let t = parse_latency_matrix("10 2 1\n2 1 1\n").unwrap();
        let ids: Vec<&str> = t.nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, vec!["1", "2", "10"]);
    }
}
