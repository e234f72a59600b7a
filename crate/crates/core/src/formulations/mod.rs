//! MILP builders for the linearised formulations, and solution extraction.

pub mod milp;
pub mod solver;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::greedy::{alloc, search, FractionalSolution, GreedyError, SearchOutcome};
use crate::model::{evaluate, Instance, ModelError, Solution, MS};
use crate::pwl::{BasepointSet, Orientation, PwlError, SurfaceMesh, Vertex};

pub use milp::{emulate_sos, MilpModel, Sense, SosKind, VarKind};
pub use solver::{
    adapter_from_env, solve_default, solve_model, Backend, BnbAdapter, Capabilities, HighsAdapter, Limits,
    MilpSolution, SolveStatus, SolverAdapter, SOLVER_ENV,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulationError {
    #[error("server-count list is empty")]
    EmptyJ,
    #[error("server count {0} is not in the basepoint set")]
    MissingCurve(usize),
    #[error("server-count list must contain 1")]
    NoUnitCurve,
    #[error("malformed model: {0}")]
    Model(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("no solution available (status {0:?})")]
    NoSolution(SolveStatus),
    #[error("facility {facility}: allocation {value} is not integral")]
    Integrality { facility: usize, value: f64 },
    #[error(transparent)]
    Pwl(#[from] PwlError),
    #[error(transparent)]
    Instance(#[from] ModelError),
    #[error(transparent)]
    Greedy(#[from] GreedyError),
}

pub type Result<T> = std::result::Result<T, FormulationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    ThinnedCurves,
    Surface(Orientation),
}

/// Where the allocation lives in the model.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    /// Per facility: `(j, selector)` pairs.
    Curves { selectors: Vec<Vec<(usize, usize)>> },
    /// Per facility: `(beta, weight)` pairs and the open binary.
    Surface { weights: Vec<Vec<(f64, usize)>>, open: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct Formulation {
    pub kind: Kind,
    pub model: MilpModel,
    /// `x[c][f]` variable index.
    pub x: Vec<Vec<usize>>,
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormulationResult {
    pub status: SolveStatus,
    pub gap: f64,
    /// Linearised objective in milliseconds.
    pub objective: Option<f64>,
    pub x: Option<Vec<Vec<f64>>>,
    pub y_raw: Option<Vec<f64>>,
    /// Curve formulations promise integer allocations.
    pub integral: bool,
}

fn add_assignment(model: &mut MilpModel, inst: &Instance) -> Vec<Vec<usize>> {
    let total = inst.total_demand();
    let scale = if total > 0.0 { 1.0 / total } else { 1.0 };
    let mut x = Vec::with_capacity(inst.n_clients());
    for c in 0..inst.n_clients() {
        let row: Vec<usize> = (0..inst.n_facilities())
            .map(|f| {
                let v = model.continuous(format!("x_c{c}_f{f}"), 0.0, f64::INFINITY);
                model.set_cost(v, inst.latency[c][f] * scale);
                v
            })
            .collect();
        model.add_constraint(
            format!("demand_c{c}"),
            row.iter().map(|&v| (v, 1.0)).collect(),
            Sense::Eq,
            inst.lambda[c],
        );
        x.push(row);
    }
    x
}

fn queue_scale(inst: &Instance) -> f64 {
    let total = inst.total_demand();
    MS / if total > 0.0 { total } else { 1.0 }
}

/// Separate-curve model restricted to the server counts in `js`.
///
/// The budget row is `<= p`; topping up to exactly `p` is left to `alloc`.
pub fn build_thinned_curves(inst: &Instance, base: &BasepointSet<f64>, js: &[usize]) -> Result<Formulation> {
    inst.validate()?;
    if js.is_empty() {
        return Err(FormulationError::EmptyJ);
    }
    if !js.contains(&1) {
        return Err(FormulationError::NoUnitCurve);
    }
    for &j in js {
        base.curve(j).ok_or(FormulationError::MissingCurve(j))?;
    }
    let mut js = js.to_vec();
    js.sort_unstable();
    js.dedup();

    let mut model = MilpModel::new("thinned_curves");
    let x = add_assignment(&mut model, inst);
    let qs = queue_scale(inst);
    let mut selectors = Vec::with_capacity(inst.n_facilities());
    let mut budget = Vec::new();
    for f in 0..inst.n_facilities() {
        let mut sel = Vec::new();
        let mut cap = Vec::new();
        for &j in js.iter().filter(|&&j| j <= inst.k[f]) {
            let curve = base.curve(j).expect("checked above");
            let yd = model.binary(format!("yd_f{f}_j{j}"));
            let mut sync = vec![(yd, -1.0)];
            let mut group = Vec::with_capacity(curve.points.len());
            for (i, pt) in curve.points.iter().enumerate() {
                let z = model.continuous(format!("z_f{f}_j{j}_i{i}"), 0.0, 1.0);
                model.set_cost(z, qs * pt.theta);
                cap.push((z, -inst.mu[f] * pt.alpha));
                sync.push((z, 1.0));
                group.push(z);
            }
            model.add_constraint(format!("sync_f{f}_j{j}"), sync, Sense::Eq, 0.0);
            model.add_sos(format!("sos2_f{f}_j{j}"), SosKind::Sos2, group, true);
            sel.push((j, yd));
        }
        let mut load: Vec<(usize, f64)> = (0..inst.n_clients()).map(|c| (x[c][f], 1.0)).collect();
        load.extend(cap);
        model.add_constraint(format!("cap_f{f}"), load, Sense::Le, 0.0);
        if !sel.is_empty() {
            model.add_constraint(
                format!("flip_f{f}"),
                sel.iter().map(|&(_, v)| (v, 1.0)).collect(),
                Sense::Le,
                1.0,
            );
            model.add_sos(format!("sos1_f{f}"), SosKind::Sos1, sel.iter().map(|&(_, v)| v).collect(), true);
        }
        model.add_constraint(
            format!("count_f{f}"),
            sel.iter().map(|&(j, v)| (v, j as f64)).collect(),
            Sense::Le,
            inst.k[f] as f64,
        );
        budget.extend(sel.iter().map(|&(j, v)| (v, j as f64)));
        selectors.push(sel);
    }
    model.add_constraint("limit", budget, Sense::Le, inst.p as f64);
    Ok(Formulation { kind: Kind::ThinnedCurves, model, x, layout: Layout::Curves { selectors } })
}

fn build_surface(inst: &Instance, base: &BasepointSet<f64>, orientation: Orientation) -> Result<Formulation> {
    inst.validate()?;
    let mesh = SurfaceMesh::new(base.clone(), orientation)?;
    let pieces: Vec<Vec<Vertex>> = match orientation {
        Orientation::Quadrilateral => mesh.cells().into_iter().map(|c| c.to_vec()).collect(),
        _ => mesh.triangles().into_iter().map(|t| t.to_vec()).collect(),
    };
    let mut incident: BTreeMap<Vertex, Vec<usize>> = BTreeMap::new();
    for (p, piece) in pieces.iter().enumerate() {
        for &v in piece {
            incident.entry(v).or_default().push(p);
        }
    }
    let tag = match orientation {
        Orientation::TrianglePlus => "tri_plus",
        Orientation::TriangleMinus => "tri_minus",
        Orientation::Quadrilateral => "quad",
    };

    let mut model = MilpModel::new(tag);
    let x = add_assignment(&mut model, inst);
    let qs = queue_scale(inst);
    let mut weights = Vec::with_capacity(inst.n_facilities());
    let mut open = Vec::with_capacity(inst.n_facilities());
    let mut budget = Vec::new();
    for f in 0..inst.n_facilities() {
        let o = model.binary(format!("open_f{f}"));
        let h: Vec<usize> = (0..pieces.len()).map(|p| model.binary(format!("h_f{f}_p{p}"))).collect();
        let mut ws = Vec::with_capacity(incident.len());
        let mut load: Vec<(usize, f64)> = (0..inst.n_clients()).map(|c| (x[c][f], 1.0)).collect();
        let mut count = Vec::new();
        let mut sync = vec![(o, -1.0)];
        for (&(r, i), cells) in &incident {
            let pt = mesh.vertex((r, i));
            let z = model.continuous(format!("z_f{f}_j{}_i{i}", base.js[r]), 0.0, 1.0);
            model.set_cost(z, qs * pt.theta);
            load.push((z, -inst.mu[f] * pt.alpha));
            count.push((z, pt.beta));
            sync.push((z, 1.0));
            let mut link = vec![(z, 1.0)];
            link.extend(cells.iter().map(|&p| (h[p], -1.0)));
            model.add_constraint(format!("link_f{f}_r{r}_i{i}"), link, Sense::Le, 0.0);
            ws.push((pt.beta, z));
        }
        model.add_constraint(format!("cap_f{f}"), load, Sense::Le, 0.0);
        model.add_constraint(format!("count_f{f}"), count.clone(), Sense::Le, inst.k[f] as f64);
        model.add_constraint(format!("open_z_f{f}"), sync, Sense::Eq, 0.0);
        let mut hs: Vec<(usize, f64)> = h.iter().map(|&v| (v, 1.0)).collect();
        hs.push((o, -1.0));
        model.add_constraint(format!("open_h_f{f}"), hs, Sense::Eq, 0.0);
        model.add_sos(format!("one_piece_f{f}"), SosKind::Sos1, h.clone(), true);
        budget.extend(count);
        weights.push(ws);
        open.push(o);
    }
    model.add_constraint("limit", budget, Sense::Eq, inst.p as f64);
    Ok(Formulation { kind: Kind::Surface(orientation), model, x, layout: Layout::Surface { weights, open } })
}

/// Surface model with one binary per triangle.
pub fn build_triangle_surface(
    inst: &Instance,
    base: &BasepointSet<f64>,
    orientation: Orientation,
) -> Result<Formulation> {
    if orientation == Orientation::Quadrilateral {
        return Err(FormulationError::Model("quadrilateral is not a triangle orientation".into()));
    }
    build_surface(inst, base, orientation)
}

/// Surface model with one binary per cell; the minimisation picks the lower
/// of the two triangulations.
pub fn build_quad_surface(inst: &Instance, base: &BasepointSet<f64>) -> Result<Formulation> {
    build_surface(inst, base, Orientation::Quadrilateral)
}

pub fn build_surface_any(inst: &Instance, base: &BasepointSet<f64>, orientation: Orientation) -> Result<Formulation> {
    build_surface(inst, base, orientation)
}

/// Solves on the default path and reads back assignment and allocation.
pub fn solve_formulation(form: &Formulation, adapter: &dyn SolverAdapter) -> Result<FormulationResult> {
    let raw = solve_default(adapter, &form.model)?;
    Ok(read_result(form, raw))
}

/// Reads a raw solve of `form.model`.
pub fn read_result(form: &Formulation, raw: MilpSolution) -> FormulationResult {
    let integral = form.kind == Kind::ThinnedCurves;
    let Some(v) = raw.values.as_ref().filter(|_| raw.status.has_solution()) else {
        return FormulationResult { status: raw.status, gap: raw.gap, objective: None, x: None, y_raw: None, integral };
    };
    let x = form.x.iter().map(|row| row.iter().map(|&i| v[i].max(0.0)).collect()).collect();
    let y = match &form.layout {
        Layout::Curves { selectors } => {
            selectors.iter().map(|sel| sel.iter().map(|&(j, i)| j as f64 * v[i]).sum()).collect()
        }
        Layout::Surface { weights, .. } => {
            weights.iter().map(|ws| ws.iter().map(|&(b, i)| b * v[i]).sum()).collect()
        }
    };
    FormulationResult {
        status: raw.status,
        gap: raw.gap,
        objective: raw.objective,
        x: Some(x),
        y_raw: Some(y),
        integral,
    }
}

/// Assignment and possibly fractional allocation. Curve results are checked
/// for integrality (1e-6) and rounded.
pub fn extract_solution(result: &FormulationResult, inst: &Instance) -> Result<FractionalSolution> {
    let (Some(x), Some(y)) = (result.x.as_ref(), result.y_raw.as_ref()) else {
        return Err(FormulationError::NoSolution(result.status));
    };
    if x.len() != inst.n_clients() || y.len() != inst.n_facilities() {
        return Err(FormulationError::Model("result does not match the instance".into()));
    }
    let y = if result.integral {
        y.iter()
            .enumerate()
            .map(|(f, &v)| {
                let r = v.round();
                if (v - r).abs() > 1e-6 * r.max(1.0) {
                    Err(FormulationError::Integrality { facility: f, value: v })
                } else {
                    Ok(r)
                }
            })
            .collect::<Result<Vec<f64>>>()?
    } else {
        y.clone()
    };
    Ok(FractionalSolution { x: snap_assignment(x, &inst.lambda), y })
}

/// Zeroes solver noise below `1e-9 * lambda_c` and puts the client's demand
/// back on its largest entry.
fn snap_assignment(x: &[Vec<f64>], lambda: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(lambda)
        .map(|(row, &l)| {
            let mut r: Vec<f64> = row.iter().map(|&v| if v < 1e-9 * l.max(1.0) { 0.0 } else { v }).collect();
            if let Some(big) = (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])) {
                let rest: f64 = (0..r.len()).filter(|&f| f != big).map(|f| r[f]).sum();
                r[big] = (l - rest).max(0.0);
            }
            r
        })
        .collect()
}

/// Output of a full curve-formulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveOutcome {
    pub solution: Solution,
    pub result: FormulationResult,
}

/// Curve model, then `alloc` tops the allocation up to exactly `p`; the
/// objective is re-evaluated exactly.
pub fn solve_curves(
    inst: &Instance,
    base: &BasepointSet<f64>,
    js: &[usize],
    adapter: &dyn SolverAdapter,
) -> Result<CurveOutcome> {
    let form = build_thinned_curves(inst, base, js)?;
    let result = solve_formulation(&form, adapter)?;
    let fs = extract_solution(&result, inst)?;
    let y0: Vec<usize> = fs.y.iter().map(|&v| v as usize).collect();
    let loads: Vec<f64> = (0..inst.n_facilities()).map(|f| fs.x.iter().map(|r| r[f]).sum()).collect();
    let st = alloc(inst.p, &loads, &inst.mu, &inst.k, &y0, None)?;
    let mut solution = Solution::new(fs.x, st.y);
    solution.objective = Some(evaluate(inst, &solution)?);
    Ok(CurveOutcome { solution, result })
}

/// Output of a surface run through Search.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceOutcome {
    pub search: SearchOutcome,
    /// Result of the last formulation solve.
    pub result: FormulationResult,
}

/// Surface model wrapped in Search.
pub fn solve_surface(
    inst: &Instance,
    base: &BasepointSet<f64>,
    orientation: Orientation,
    adapter: &dyn SolverAdapter,
) -> Result<SurfaceOutcome> {
    let mut last: Option<FormulationResult> = None;
    let solve = |pp: usize| -> std::result::Result<Option<FractionalSolution>, String> {
        let sub = inst.with_p(pp);
        if sub.validate().is_err() {
            return Ok(None);
        }
        let form = build_surface(&sub, base, orientation).map_err(|e| e.to_string())?;
        let result = solve_formulation(&form, adapter).map_err(|e| e.to_string())?;
        let out = match result.status {
            SolveStatus::Infeasible => None,
            SolveStatus::Timeout => return Err("time limit reached without a solution".into()),
            _ => Some(extract_solution(&result, inst).map_err(|e| e.to_string())?),
        };
        last = Some(result);
        Ok(out)
    };
    let outcome = search(inst, solve, inst.p)?;
    let result = last.expect("search solved at least once");
    Ok(SurfaceOutcome { search: outcome, result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Instance;

    fn tiny(lambda: f64, mu: f64, k: usize, p: usize) -> Instance {
        Instance {
            clients: vec!["c0".into()],
            facilities: vec!["f0".into()],
            latency: vec![vec![5.0]],
            lambda: vec![lambda],
            mu: vec![mu],
            k: vec![k],
            p,
        }
    }

    #[test]
    fn empty_or_bad_j() {
        let inst = tiny(0.5, 1.0, 2, 1);
        let base = BasepointSet::<f64>::generate(4, &[1, 2]).unwrap();
        assert_eq!(build_thinned_curves(&inst, &base, &[]).unwrap_err(), FormulationError::EmptyJ);
        assert_eq!(build_thinned_curves(&inst, &base, &[2]).unwrap_err(), FormulationError::NoUnitCurve);
        assert_eq!(build_thinned_curves(&inst, &base, &[1, 3]).unwrap_err(), FormulationError::MissingCurve(3));
    }

    #[test]
    fn single_facility_curve() {
        let inst = tiny(0.5, 1.0, 1, 1);
        let base = BasepointSet::<f64>::generate(8, &[1]).unwrap();
        let ad = HighsAdapter::new(Limits::default());
        let out = solve_curves(&inst, &base, &[1], &ad).unwrap();
        assert_eq!(out.solution.y, vec![1]);
        assert!((out.solution.x[0][0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn quad_has_half_the_piece_binaries() {
        let inst = tiny(0.5, 1.0, 4, 2);
        let base = BasepointSet::<f64>::generate(5, &[1, 2, 4]).unwrap();
        let tri = build_triangle_surface(&inst, &base, Orientation::TrianglePlus).unwrap();
        let quad = build_quad_surface(&inst, &base).unwrap();
        // One open binary per facility on top of the pieces.
        assert_eq!(tri.model.n_binaries() - 1, 2 * (quad.model.n_binaries() - 1));
        assert!(tri.model.validate().is_ok());
        assert!(quad.model.validate().is_ok());
    }

    #[test]
    fn curve_integrality_enforced() {
        let r = FormulationResult {
            status: SolveStatus::Optimal,
            gap: 0.0,
            objective: Some(1.0),
            x: Some(vec![vec![1.0]]),
            y_raw: Some(vec![1.5]),
            integral: true,
        };
        let inst = tiny(1.0, 2.0, 2, 2);
        assert!(matches!(extract_solution(&r, &inst), Err(FormulationError::Integrality { .. })));
        let r = FormulationResult { integral: false, ..r };
        assert_eq!(extract_solution(&r, &inst).unwrap().y, vec![1.5]);
    }
}
