//! Piecewise-linear approximations of `N_j(a) = n_system(a, j)`.
//!
//! Curves live on `[0, 0.98 j]`. A [`BasepointSet`] holds one curve per
//! server count in `J`; a [`SurfaceMesh`] joins neighbouring curves into
//! triangle or quadrilateral cells over the `(a, y)` plane.

use crate::queueing::{dn_da, n_system, QueueError};
use crate::scalar::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Utilisation cap shared by every linearisation.
pub const UTIL_CAP: f64 = 0.98;

const MAX_ITERATIONS: usize = 200;
const EQUALIZE_TOL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PwlError {
    #[error("need m >= 4 basepoints and j >= 1, got m={m}, j={j}")]
    Shape { m: usize, j: usize },
    #[error("load {a} outside curve interval [{lo}, {hi}]")]
    OutOfInterval { a: f64, lo: f64, hi: f64 },
    #[error("point (a={a}, y={y}) outside mesh domain")]
    OutOfDomain { a: f64, y: f64 },
    #[error("invalid server-count list: {0}")]
    InvalidJ(String),
    #[error("unknown basepoint set `{0}`")]
    UnknownSet(String),
    #[error("malformed basepoint set: {0}")]
    Malformed(String),
    #[error("surface needs at least two curves")]
    TooFewCurves,
    #[error(transparent)]
    Queue(#[from] QueueError),
}

pub type Result<T> = std::result::Result<T, PwlError>;

/// Vertex `(alpha, beta = j, theta = N(alpha, j))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basepoint<S> {
    pub alpha: S,
    pub beta: S,
    pub theta: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePWL<S> {
    pub j: usize,
    pub points: Vec<Basepoint<S>>,
}

/// Output of [`generate_basepoints`].
#[derive(Debug, Clone)]
pub struct BasepointFit<S> {
    pub curve: CurvePWL<S>,
    pub error: S,
    pub iterations: usize,
    pub converged: bool,
}

fn upper<S: Scalar>(j: usize) -> S {
    S::of(UTIL_CAP) * S::of_usize(j)
}

/// Maximum of chord minus `N_j` over `[x0, x1]`, located by bisection on `dn_da`.
fn segment_error<S: Scalar>(j: usize, x0: S, f0: S, x1: S, f1: S) -> S {
    let slope = (f1 - f0) / (x1 - x0);
    let (mut lo, mut hi) = (x0, x1);
    let tol = (x1 - x0) * S::of(1e-10);
    while hi - lo > tol {
        let mid = (lo + hi) / S::of(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if dn_da(mid, j).unwrap_or(S::infinity()) < slope {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = (lo + hi) / S::of(2.0);
    let chord = f0 + slope * (x - x0);
    (chord - n_system(x, j).unwrap_or(chord)).max(S::zero())
}

/// Places `m` points so that all but the last segment carry error `eps`.
/// Returns the abscissae and the last segment's error, or `None` when the
/// greedy sweep reaches the right end early.
fn sweep<S: Scalar>(j: usize, m: usize, eps: S) -> Option<(Vec<S>, S)> {
    let ub = upper::<S>(j);
    let f = |x: S| n_system(x, j).unwrap_or(S::nan());
    let fu = f(ub);
    let mut xs = vec![S::zero()];
    let mut x0 = S::zero();
    let mut f0 = S::zero();
    for _ in 0..m - 2 {
        if segment_error(j, x0, f0, ub, fu) <= eps {
            return None;
        }
        let (mut lo, mut hi) = (x0, ub);
        let tol = (ub - x0) * S::of(1e-10);
        while hi - lo > tol {
            let mid = (lo + hi) / S::of(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if segment_error(j, x0, f0, mid, f(mid)) <= eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo <= x0 {
            return None;
        }
        x0 = lo;
        f0 = f(lo);
        xs.push(lo);
    }
    let last = segment_error(j, x0, f0, ub, fu);
    xs.push(ub);
    Some((xs, last))
}

impl<S: Scalar> CurvePWL<S> {
    /// Builds a curve through `N_j` at the given abscissae.
    pub fn from_alphas(j: usize, alphas: &[S]) -> Result<Self> {
        if j < 1 || alphas.len() < 2 {
            return Err(PwlError::Shape { m: alphas.len(), j });
        }
        if alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PwlError::Malformed(format!("abscissae of curve j={j} not increasing")));
        }
        let beta = S::of_usize(j);
        let points = alphas
            .iter()
            .map(|&alpha| Ok(Basepoint { alpha, beta, theta: n_system(alpha, j)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { j, points })
    }

    /// Equally spaced abscissae on `[0, 0.98 j]`.
    pub fn uniform(j: usize, m: usize) -> Result<Self> {
        if j < 1 || m < 2 {
            return Err(PwlError::Shape { m, j });
        }
        let ub = upper::<S>(j);
        let xs: Vec<S> = (0..m).map(|i| ub * S::of_usize(i) / S::of_usize(m - 1)).collect();
        Self::from_alphas(j, &xs)
    }

    pub fn m(&self) -> usize {
        self.points.len()
    }

    pub fn alphas(&self) -> Vec<S> {
        self.points.iter().map(|p| p.alpha).collect()
    }

    pub fn lo(&self) -> S {
        self.points[0].alpha
    }

    pub fn hi(&self) -> S {
        self.points[self.points.len() - 1].alpha
    }

    /// Linear interpolation between the bracketing basepoints.
    pub fn eval(&self, a: S) -> Result<S> {
        let (lo, hi) = (self.lo(), self.hi());
        if !(a >= lo && a <= hi) {
            return Err(PwlError::OutOfInterval { a: a.to_f64_lossy(), lo: lo.to_f64_lossy(), hi: hi.to_f64_lossy() });
        }
        let idx = self.points.partition_point(|p| p.alpha <= a);
        let i = idx.clamp(1, self.points.len() - 1) - 1;
        let (p, q) = (self.points[i], self.points[i + 1]);
        let t = (a - p.alpha) / (q.alpha - p.alpha);
        Ok(p.theta + t * (q.theta - p.theta))
    }

    /// Per-segment maximum chord error.
    pub fn segment_errors(&self) -> Vec<S> {
        self.points
            .windows(2)
            .map(|w| segment_error(self.j, w[0].alpha, w[0].theta, w[1].alpha, w[1].theta))
            .collect()
    }

    pub fn max_error(&self) -> S {
        self.segment_errors().into_iter().fold(S::zero(), S::max)
    }
}

/// Optimised basepoints for `N_j` with `m` points on `[0, 0.98 j]`.
///
/// Bisects on a target error `eps`: interior points are placed left to right
/// so each segment's maximum error equals `eps`, then `eps` is adjusted until
/// the remaining last segment matches it within 1%.
pub fn generate_basepoints<S: Scalar>(j: usize, m: usize) -> Result<BasepointFit<S>> {
    if m < 4 || j < 1 {
        return Err(PwlError::Shape { m, j });
    }
    let ub = upper::<S>(j);
    let mut hi = segment_error(j, S::zero(), S::zero(), ub, n_system(ub, j)?);
    let mut lo = hi * S::of(1e-14);
    let mut best: Option<(Vec<S>, S)> = None;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let eps = (lo * hi).sqrt();
        match sweep(j, m, eps) {
            None => hi = eps,
            Some((xs, last)) => {
                let err = last.max(eps);
                if best.as_ref().map_or(true, |(_, e)| err < *e) {
                    best = Some((xs, err));
                }
                if (last - eps).abs() <= S::of(EQUALIZE_TOL) * eps {
                    converged = true;
                    break;
                }
                if last > eps {
                    lo = eps;
                } else {
                    hi = eps;
                }
            }
        }
        if hi - lo <= hi * S::of(1e-12) {
            break;
        }
    }
    let curve = match best {
        Some((xs, _)) => CurvePWL::from_alphas(j, &xs)?,
        None => CurvePWL::uniform(j, m)?,
    };
    if !converged {
        log::warn!("basepoints for j={j}, m={m} did not equalise after {iterations} iterations");
    }
    let error = curve.max_error();
    Ok(BasepointFit { curve, error, iterations, converged })
}

/// Convenience wrapper around [`CurvePWL::eval`].
pub fn eval_curve<S: Scalar>(curve: &CurvePWL<S>, a: S) -> Result<S> {
    curve.eval(a)
}

/// How the server-count list `J` is built from `k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JFamily {
    /// Powers `b^i` below `k_max`, then `k_max`.
    Pow(usize),
    /// Every count `1..=k_max`.
    K100,
    /// Fibonacci numbers below `k_max`, then `k_max`.
    Fib,
    /// `1, k_max / 2, k_max`.
    K3,
}

impl JFamily {
    pub fn counts(&self, k_max: usize) -> Vec<usize> {
        let mut js = match *self {
            JFamily::K100 => (1..=k_max).collect(),
            JFamily::Pow(b) => {
                let mut v = vec![];
                let mut x = 1usize;
                while x < k_max {
                    v.push(x);
                    x = x.saturating_mul(b.max(2));
                }
                v
            }
            JFamily::Fib => {
                let (mut a, mut b) = (1usize, 2usize);
                let mut v = vec![];
                while a < k_max {
                    v.push(a);
                    let c = a + b;
                    a = b;
                    b = c;
                }
                v
            }
            JFamily::K3 => vec![1, k_max / 2],
        };
        js.push(k_max);
        js.retain(|&j| j >= 1 && j <= k_max);
        js.sort_unstable();
        js.dedup();
        js
    }
}

impl fmt::Display for JFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JFamily::Pow(b) => write!(f, "{b}^i"),
            JFamily::K100 => write!(f, "k100"),
            JFamily::Fib => write!(f, "fib"),
            JFamily::K3 => write!(f, "k3"),
        }
    }
}

impl FromStr for JFamily {
    type Err = PwlError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "k100" | "full" => Ok(JFamily::K100),
            "fib" => Ok(JFamily::Fib),
            "k3" => Ok(JFamily::K3),
            _ => s
                .strip_suffix("^i")
                .and_then(|b| b.parse::<usize>().ok())
                .filter(|&b| b >= 2)
                .map(JFamily::Pow)
                .ok_or_else(|| PwlError::UnknownSet(s.to_string())),
        }
    }
}

/// A named `(m, J)` configuration such as `6,4^i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SetSpec {
    pub m: usize,
    pub family: JFamily,
}

impl SetSpec {
    pub fn new(m: usize, family: JFamily) -> Self {
        Self { m, family }
    }

    /// The four selected configurations.
    pub fn selected() -> [SetSpec; 4] {
        [
            SetSpec::new(15, JFamily::Pow(2)),
            SetSpec::new(8, JFamily::Pow(3)),
            SetSpec::new(6, JFamily::Pow(4)),
            SetSpec::new(8, JFamily::K100),
        ]
    }
}

impl fmt::Display for SetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.m, self.family)
    }
}

impl FromStr for SetSpec {
    type Err = PwlError;

    fn from_str(s: &str) -> Result<Self> {
        let (m, fam) = s.split_once(',').ok_or_else(|| PwlError::UnknownSet(s.to_string()))?;
        let m = m.trim().parse::<usize>().map_err(|_| PwlError::UnknownSet(s.to_string()))?;
        Ok(SetSpec::new(m, fam.parse()?))
    }
}

/// One optimised curve per server count in `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasepointSet<S> {
    pub m: usize,
    pub js: Vec<usize>,
    pub curves: Vec<CurvePWL<S>>,
}

impl<S: Scalar> BasepointSet<S> {
    /// Optimises every curve of `js` independently (in parallel).
    pub fn generate(m: usize, js: &[usize]) -> Result<Self> {
        check_js(js)?;
        let curves = js
            .par_iter()
            .map(|&j| generate_basepoints::<S>(j, m).map(|fit| fit.curve))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { m, js: js.to_vec(), curves })
    }

    pub fn from_spec(spec: SetSpec, k_max: usize) -> Result<Self> {
        Self::generate(spec.m, &spec.family.counts(k_max))
    }

    pub fn k_max(&self) -> usize {
        *self.js.last().expect("non-empty J")
    }

    pub fn n(&self) -> usize {
        self.js.len()
    }

    pub fn curve(&self, j: usize) -> Option<&CurvePWL<S>> {
        self.js.binary_search(&j).ok().map(|i| &self.curves[i])
    }

    /// Restricts to the curves with `j <= k`, appending nothing.
    pub fn truncated(&self, k: usize) -> Self {
        let keep: Vec<usize> = (0..self.js.len()).filter(|&i| self.js[i] <= k).collect();
        Self {
            m: self.m,
            js: keep.iter().map(|&i| self.js[i]).collect(),
            curves: keep.iter().map(|&i| self.curves[i].clone()).collect(),
        }
    }

    /// Largest chord error over all curves.
    pub fn max_curve_error(&self) -> S {
        self.curves.iter().map(|c| c.max_error()).fold(S::zero(), S::max)
    }

    pub fn to_json(&self) -> String {
        let doc = SetJson {
            m: self.m,
            js: self.js.clone(),
            curves: self
                .curves
                .iter()
                .map(|c| CurveJson {
                    j: c.j,
                    points: c
                        .points
                        .iter()
                        .map(|p| PointJson { alpha: p.alpha.to_f64_lossy(), theta: p.theta.to_f64_lossy() })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serialisable")
    }

    /// Parses a cached set and checks it against the invariants.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SetJson = serde_json::from_str(text).map_err(|e| PwlError::Malformed(e.to_string()))?;
        check_js(&doc.js)?;
        if doc.curves.len() != doc.js.len() {
            return Err(PwlError::Malformed("curve count differs from |J|".into()));
        }
        let mut curves = Vec::with_capacity(doc.curves.len());
        for (c, &j) in doc.curves.iter().zip(&doc.js) {
            if c.j != j || c.points.len() != doc.m || doc.m < 4 {
                return Err(PwlError::Malformed(format!("curve j={} does not match header", c.j)));
            }
            let alphas: Vec<S> = c.points.iter().map(|p| S::of(p.alpha)).collect();
            let curve = CurvePWL::from_alphas(j, &alphas)?;
            for (p, q) in curve.points.iter().zip(&c.points) {
                let d = (p.theta.to_f64_lossy() - q.theta).abs();
                if d > 1e-9 * (1.0 + q.theta.abs()) {
                    return Err(PwlError::Malformed(format!("theta mismatch on curve j={j}")));
                }
            }
            curves.push(curve);
        }
        Ok(Self { m: doc.m, js: doc.js, curves })
    }
}

fn check_js(js: &[usize]) -> Result<()> {
    if js.is_empty() || js[0] != 1 {
        return Err(PwlError::InvalidJ("J must start at 1".into()));
    }
    if js.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PwlError::InvalidJ("J must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PointJson {
    alpha: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct CurveJson {
    j: usize,
    points: Vec<PointJson>,
}

#[derive(Serialize, Deserialize)]
struct SetJson {
    m: usize,
    #[serde(rename = "J")]
    js: Vec<usize>,
    curves: Vec<CurveJson>,
}

/// The four selected configurations, optimised for `k_max`.
pub fn standard_sets<S: Scalar>(k_max: usize) -> Result<Vec<(SetSpec, BasepointSet<S>)>> {
    SetSpec::selected()
        .into_iter()
        .map(|spec| Ok((spec, BasepointSet::from_spec(spec, k_max)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    TrianglePlus,
    TriangleMinus,
    Quadrilateral,
}

/// Mesh vertex: curve row and basepoint column.
pub type Vertex = (usize, usize);

/// Location of a point inside the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLoc<S> {
    pub row: usize,
    pub col: usize,
    pub t: S,
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh<S> {
    pub base: BasepointSet<S>,
    pub orientation: Orientation,
}

impl<S: Scalar> SurfaceMesh<S> {
    pub fn new(base: BasepointSet<S>, orientation: Orientation) -> Result<Self> {
        if base.n() < 2 {
            return Err(PwlError::TooFewCurves);
        }
        Ok(Self { base, orientation })
    }

    pub fn vertex(&self, v: Vertex) -> Basepoint<S> {
        self.base.curves[v.0].points[v.1]
    }

    /// Cells as `[lo-j lo-i, lo-j hi-i, hi-j lo-i, hi-j hi-i]`.
    pub fn cells(&self) -> Vec<[Vertex; 4]> {
        let m = self.base.m;
        let mut out = Vec::with_capacity((self.base.n() - 1) * (m - 1));
        for r in 0..self.base.n() - 1 {
            for i in 0..m - 1 {
                out.push([(r, i), (r, i + 1), (r + 1, i), (r + 1, i + 1)]);
            }
        }
        out
    }

    /// Two triangles per cell following the diagonal of `orientation`.
    /// Quadrilateral meshes report the plus split.
    pub fn triangles(&self) -> Vec<[Vertex; 3]> {
        self.cells()
            .into_iter()
            .flat_map(|c| split(c, self.orientation == Orientation::TriangleMinus))
            .collect()
    }

    /// Finds the cell containing `(a, y)`; shared boundaries go to the lower index.
    pub fn locate(&self, a: S, y: S) -> Result<CellLoc<S>> {
        let js = &self.base.js;
        let out = || PwlError::OutOfDomain { a: a.to_f64_lossy(), y: y.to_f64_lossy() };
        let (lo_j, hi_j) = (S::of_usize(js[0]), S::of_usize(*js.last().unwrap()));
        if !(y >= lo_j && y <= hi_j) {
            return Err(out());
        }
        let mut row = 0;
        while row + 2 < js.len() && y > S::of_usize(js[row + 1]) {
            row += 1;
        }
        let (j0, j1) = (S::of_usize(js[row]), S::of_usize(js[row + 1]));
        let t = (y - j0) / (j1 - j0);
        let edge = |i: usize| {
            let p = self.base.curves[row].points[i].alpha;
            let q = self.base.curves[row + 1].points[i].alpha;
            p + t * (q - p)
        };
        let m = self.base.m;
        let tol = S::of(1e-12) * (S::one() + hi_j);
        if a < -tol || a > edge(m - 1) + tol {
            return Err(out());
        }
        let mut col = 0;
        while col + 2 < m && a > edge(col + 1) {
            col += 1;
        }
        Ok(CellLoc { row, col, t })
    }

    /// Interpolated value; quadrilateral meshes take the lower of both splits.
    pub fn eval(&self, a: S, y: S) -> Result<S> {
        let loc = self.locate(a, y)?;
        let cell = [
            (loc.row, loc.col),
            (loc.row, loc.col + 1),
            (loc.row + 1, loc.col),
            (loc.row + 1, loc.col + 1),
        ];
        let plus = self.eval_split(cell, false, a, y);
        let minus = self.eval_split(cell, true, a, y);
        Ok(match self.orientation {
            Orientation::TrianglePlus => plus,
            Orientation::TriangleMinus => minus,
            Orientation::Quadrilateral => plus.min(minus),
        })
    }

    fn eval_split(&self, cell: [Vertex; 4], minus: bool, a: S, y: S) -> S {
        let mut best: Option<(S, S)> = None;
        for tri in split(cell, minus) {
            let pts = tri.map(|v| self.vertex(v));
            let w = barycentric(&pts, a, y);
            let worst = w.iter().copied().fold(S::infinity(), S::min);
            let val = w[0] * pts[0].theta + w[1] * pts[1].theta + w[2] * pts[2].theta;
            if best.map_or(true, |(bw, _)| worst > bw) {
                best = Some((worst, val));
            }
        }
        best.expect("two triangles").1
    }

    /// Maximum `|mesh - N|` over integer rows `1..=k_max`, sampling each cell
    /// edge-to-edge span at `grid_density + 1` points.
    pub fn surface_error(&self, grid_density: usize) -> Result<S> {
        let d = grid_density.max(10);
        let m = self.base.m;
        let mut worst = S::zero();
        for y in 1..=self.base.k_max() {
            let yf = S::of_usize(y);
            let loc = self.locate(S::zero(), yf)?;
            let edge = |i: usize| {
                let p = self.base.curves[loc.row].points[i].alpha;
                let q = self.base.curves[loc.row + 1].points[i].alpha;
                p + loc.t * (q - p)
            };
            let cap = upper::<S>(y);
            for i in 0..m - 1 {
                let (e0, e1) = (edge(i), edge(i + 1).min(cap));
                for s in 0..=d {
                    let a = (e0 + (e1 - e0) * S::of_usize(s) / S::of_usize(d)).min(cap);
                    let err = (self.eval(a, yf)? - n_system(a, y)?).abs();
                    worst = worst.max(err);
                }
            }
        }
        Ok(worst)
    }
}

/// Free-function form of [`SurfaceMesh::eval`].
pub fn eval_surface<S: Scalar>(mesh: &SurfaceMesh<S>, a: S, y: S) -> Result<S> {
    mesh.eval(a, y)
}

/// Free-function form of [`SurfaceMesh::surface_error`].
pub fn surface_error<S: Scalar>(mesh: &SurfaceMesh<S>, grid_density: usize) -> Result<S> {
    mesh.surface_error(grid_density)
}

fn split(c: [Vertex; 4], minus: bool) -> [[Vertex; 3]; 2] {
    let [c00, c01, c10, c11] = c;
    if minus {
        [[c00, c10, c01], [c10, c01, c11]]
    } else {
        [[c00, c10, c11], [c00, c01, c11]]
    }
}

fn barycentric<S: Scalar>(p: &[Basepoint<S>; 3], a: S, y: S) -> [S; 3] {
    let (x0, y0) = (p[0].alpha, p[0].beta);
    let (x1, y1) = (p[1].alpha, p[1].beta);
    let (x2, y2) = (p[2].alpha, p[2].beta);
    let det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2);
    let w0 = ((y1 - y2) * (a - x2) + (x2 - x1) * (y - y2)) / det;
    let w1 = ((y2 - y0) * (a - x2) + (x0 - x2) * (y - y2)) / det;
    [w0, w1, S::one() - w0 - w1]
}
