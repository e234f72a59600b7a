//! Solver-independent MILP container.

use std::fmt::Write as _;

use super::{FormulationError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SosKind {
    Sos1,
    Sos2,
}

/// Ordered variable group.
///
/// `redundant` marks groups that the rest of the model already enforces at
/// every optimum, so a solve path may drop them.
#[derive(Debug, Clone, PartialEq)]
pub struct SosGroup {
    pub name: String,
    pub kind: SosKind,
    pub vars: Vec<usize>,
    pub redundant: bool,
}

/// Minimisation model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MilpModel {
    pub name: String,
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub sos: Vec<SosGroup>,
    pub objective: Vec<(usize, f64)>,
}

impl MilpModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lb: f64, ub: f64) -> usize {
        let (lb, ub) = match kind {
            VarKind::Binary => (lb.max(0.0), ub.min(1.0)),
            _ => (lb, ub),
        };
        self.vars.push(Variable { name: name.into(), kind, lb, ub });
        self.vars.len() - 1
    }

    pub fn continuous(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> usize {
        self.add_var(name, VarKind::Continuous, lb, ub)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> usize {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint { name: name.into(), terms, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn add_sos(&mut self, name: impl Into<String>, kind: SosKind, vars: Vec<usize>, redundant: bool) {
        self.sos.push(SosGroup { name: name.into(), kind, vars, redundant });
    }

    pub fn set_cost(&mut self, var: usize, coef: f64) {
        if coef != 0.0 {
            self.objective.push((var, coef));
        }
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn n_integral(&self) -> usize {
        self.vars.iter().filter(|v| v.kind != VarKind::Continuous).count()
    }

    /// Checks that every reference points at a declared variable.
    pub fn validate(&self) -> Result<()> {
        let n = self.vars.len();
        let bad = |what: String| Err(FormulationError::Model(what));
        for c in &self.constraints {
            if let Some(&(v, _)) = c.terms.iter().find(|(v, _)| *v >= n) {
                return bad(format!("constraint {} references variable {v}", c.name));
            }
        }
        for g in &self.sos {
            if let Some(&v) = g.vars.iter().find(|&&v| v >= n) {
                return bad(format!("sos group {} references variable {v}", g.name));
            }
        }
        if let Some(&(v, _)) = self.objective.iter().find(|(v, _)| *v >= n) {
            return bad(format!("objective references variable {v}"));
        }
        for v in &self.vars {
            if v.lb > v.ub {
                return bad(format!("variable {} has empty bounds", v.name));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * values[v]).sum()
    }

    /// Largest constraint or bound violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, x) in self.vars.iter().zip(values) {
            worst = worst.max(v.lb - x).max(x - v.ub);
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(v, a)| a * values[v]).sum();
            let d = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(d);
        }
        worst
    }

    /// Copy without the groups tagged redundant.
    pub fn without_redundant_sos(&self) -> Self {
        let mut out = self.clone();
        out.sos.retain(|g| !g.redundant);
        out
    }

    /// CPLEX LP text.
    pub fn to_lp(&self) -> String {
        let mut s = String::new();
        let name = |v: usize| lp_name(&self.vars[v].name, v);
        let expr = |terms: &[(usize, f64)]| {
            if terms.is_empty() {
                return "0 dummy_zero".to_string();
            }
            let mut e = String::new();
            for (n, &(v, c)) in terms.iter().enumerate() {
                if n > 0 || c < 0.0 {
                    e.push_str(if c < 0.0 { " - " } else { " + " });
                }
                let _ = write!(e, "{} {}", fmt_num(c.abs()), name(v));
            }
            e
        };
        let _ = writeln!(s, "\\ {}", self.name);
        let _ = writeln!(s, "Minimize\n obj: {}", expr(&self.objective));
        let _ = writeln!(s, "Subject To");
        for (i, c) in self.constraints.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(s, " {}: {} {} {}", lp_name(&c.name, i), expr(&c.terms), op, fmt_num(c.rhs));
        }
        let _ = writeln!(s, "Bounds");
        for (i, v) in self.vars.iter().enumerate() {
            let (lo, hi) = (bound(v.lb), bound(v.ub));
            if v.lb == f64::NEG_INFINITY && v.ub == f64::INFINITY {
                let _ = writeln!(s, " {} free", name(i));
            } else {
                let _ = writeln!(s, " {} <= {} <= {}", lo, name(i), hi);
            }
        }
        for (title, kind) in [("Binaries", VarKind::Binary), ("Generals", VarKind::Integer)] {
            let list: Vec<String> =
                (0..self.vars.len()).filter(|&i| self.vars[i].kind == kind).map(name).collect();
            if !list.is_empty() {
                let _ = writeln!(s, "{title}");
                for chunk in list.chunks(8) {
                    let _ = writeln!(s, " {}", chunk.join(" "));
                }
            }
        }
        if !self.sos.is_empty() {
            let _ = writeln!(s, "SOS");
            for (g_i, g) in self.sos.iter().enumerate() {
                let tag = match g.kind {
                    SosKind::Sos1 => "S1",
                    SosKind::Sos2 => "S2",
                };
                let members: Vec<String> =
                    g.vars.iter().enumerate().map(|(w, &v)| format!("{}:{}", name(v), w + 1)).collect();
                let _ = writeln!(s, " {}: {}:: {}", lp_name(&g.name, g_i), tag, members.join(" "));
            }
        }
        s.push_str("End\n");
        s
    }
}

fn lp_name(raw: &str, idx: usize) -> String {
    let clean: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect();
    match clean.chars().next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => clean,
        _ => format!("v{idx}_{clean}"),
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

fn bound(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        fmt_num(x)
    }
}

fn big_m(v: &Variable) -> f64 {
    if v.ub.is_finite() {
        v.ub
    } else {
        log::warn!("sos member {} has no finite upper bound; using 1e6", v.name);
        1e6
    }
}

/// Replaces the selected SOS groups with binary encodings.
///
/// SOS1: one selector per member, at most one selector on. SOS2: one binary
/// per segment, exactly one segment on, each member bounded by its incident
/// segments. Members are assumed non-negative.
pub fn emulate_sos_where<P: Fn(&SosGroup) -> bool>(model: &MilpModel, pick: P) -> MilpModel {
    let mut out = model.clone();
    out.sos.clear();
    for g in &model.sos {
        if !pick(g) {
            out.sos.push(g.clone());
            continue;
        }
        match g.kind {
            SosKind::Sos1 => {
                let mut sel = Vec::with_capacity(g.vars.len());
                for (w, &v) in g.vars.iter().enumerate() {
                    let s = out.binary(format!("{}_s{w}", g.name));
                    let m = big_m(&model.vars[v]);
                    out.add_constraint(format!("{}_u{w}", g.name), vec![(v, 1.0), (s, -m)], Sense::Le, 0.0);
                    sel.push((s, 1.0));
                }
                out.add_constraint(format!("{}_one", g.name), sel, Sense::Le, 1.0);
            }
            SosKind::Sos2 => {
                let n = g.vars.len();
                if n < 3 {
                    continue;
                }
                let seg: Vec<usize> =
                    (0..n - 1).map(|s| out.binary(format!("{}_d{s}", g.name))).collect();
                for (w, &v) in g.vars.iter().enumerate() {
                    let m = big_m(&model.vars[v]);
                    let mut terms = vec![(v, 1.0)];
                    if w > 0 {
                        terms.push((seg[w - 1], -m));
                    }
                    if w < n - 1 {
                        terms.push((seg[w], -m));
                    }
                    out.add_constraint(format!("{}_u{w}", g.name), terms, Sense::Le, 0.0);
                }
                out.add_constraint(
                    format!("{}_seg", g.name),
                    seg.iter().map(|&d| (d, 1.0)).collect(),
                    Sense::Eq,
                    1.0,
                );
            }
        }
    }
    out
}

/// Emulates every SOS group.
pub fn emulate_sos(model: &MilpModel) -> MilpModel {
    emulate_sos_where(model, |_| true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sos2_model(n: usize) -> MilpModel {
        let mut m = MilpModel::new("t");
        let vars: Vec<usize> = (0..n).map(|i| m.continuous(format!("w{i}"), 0.0, 1.0)).collect();
        m.add_constraint("norm", vars.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0);
        m.add_sos("g", SosKind::Sos2, vars, false);
        m
    }

    #[test]
    fn no_groups_unchanged() {
        let mut m = MilpModel::new("t");
        let a = m.continuous("a", 0.0, 2.0);
        m.add_constraint("c", vec![(a, 1.0)], Sense::Ge, 1.0);
        assert_eq!(emulate_sos(&m), m);
    }

    #[test]
    fn sos2_four_members_three_segments() {
        let e = emulate_sos(&sos2_model(4));
        assert!(e.sos.is_empty());
        assert_eq!(e.n_binaries(), 3);
        let seg = e.constraints.iter().find(|c| c.name == "g_seg").unwrap();
        assert_eq!(seg.terms.len(), 3);
        assert_eq!(seg.sense, Sense::Eq);
        // Enumerate weight vertices with the segment choice: a point is feasible
        // iff its support is two adjacent members.
        let supports = [(0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)];
        for (a, b) in supports {
            let adjacent = b == a + 1;
            let mut found = false;
            for d in 0..3 {
                let mut vals = vec![0.0; e.n_vars()];
                vals[a] = 0.5;
                vals[b] = 0.5;
                vals[4 + d] = 1.0;
                if e.max_violation(&vals) <= 1e-12 {
                    found = true;
                }
            }
            assert_eq!(found, adjacent, "support ({a},{b})");
        }
    }

    #[test]
    fn sos1_selectors() {
        let mut m = MilpModel::new("t");
        let v: Vec<usize> = (0..3).map(|i| m.continuous(format!("y{i}"), 0.0, 1.0)).collect();
        m.add_sos("s", SosKind::Sos1, v, true);
        let e = emulate_sos(&m);
        assert_eq!(e.n_binaries(), 3);
        let mut vals = vec![0.0; e.n_vars()];
        vals[0] = 1.0;
        vals[1] = 1.0;
        vals[3] = 1.0;
        vals[4] = 1.0;
        assert!(e.max_violation(&vals) > 0.5);
    }

    #[test]
    fn validate_catches_dangling() {
        let mut m = MilpModel::new("t");
        m.add_constraint("c", vec![(3, 1.0)], Sense::Le, 1.0);
        assert!(m.validate().is_err());
    }

    #[test]
    fn lp_export_sections() {
        let mut m = sos2_model(3);
        m.set_cost(0, 2.5);
        m.binary("b");
        let lp = m.to_lp();
        for sec in ["Minimize", "Subject To", "Bounds", "Binaries", "SOS", "S2::", "End"] {
            assert!(lp.contains(sec), "{sec}");
        }
    }
}
