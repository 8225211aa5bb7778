//! Mixed-integer linear model of the window scheduling program.
//!
//! The survival factor `(1-p)^{c}` of every interval `[τ,t]` is linearized
//! with an integer attempt counter `c_{t,τ}` and one-hot selectors
//! `s_{t,τ,i}`, `i = 0..=t-τ+1`, so that `(1-p)^{c_{t,τ}} = Σ_i β_i s_{t,τ,i}`.
//! Running counters `c_{t,k}` accumulate `θ`; interval counters are their
//! differences. All indices in variable names are absolute times.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::covariance::{survival_factors, GramianTable, Schedule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarRole {
    Theta { t: usize },
    Counter { t: usize, tau: usize },
    Selector { t: usize, tau: usize, i: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Integer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub role: VarRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConstraintKind {
    /// `c_{t,k} - c_{t-1,k} - θ_t = 0`
    RunningCounter,
    /// `c_{t,τ} - c_{t,k} + c_{τ-1,k} = 0`
    IntervalCount,
    /// `Σ_i s_{t,τ,i} = 1`
    OneHot,
    /// `Σ_i i s_{t,τ,i} - c_{t,τ} = 0`
    Link,
}

/// Linear equality row `Σ coef · var = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub kind: ConstraintKind,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct MilpModel {
    pub start: usize,
    pub horizon_len: usize,
    pub p: f64,
    pub lambda: f64,
    pub variables: Vec<Variable>,
    pub objective: Vec<(usize, f64)>,
    pub constraints: Vec<Constraint>,
    index: HashMap<VarRole, usize>,
}

impl MilpModel {
    pub fn var(&self, role: VarRole) -> Option<usize> {
        self.index.get(&role).copied()
    }

    pub fn count(&self, pred: impl Fn(&VarRole) -> bool) -> usize {
        self.variables.iter().filter(|v| pred(&v.role)).count()
    }

    pub fn theta_count(&self) -> usize {
        self.count(|r| matches!(r, VarRole::Theta { .. }))
    }

    pub fn counter_count(&self) -> usize {
        self.count(|r| matches!(r, VarRole::Counter { .. }))
    }

    pub fn selector_count(&self) -> usize {
        self.count(|r| matches!(r, VarRole::Selector { .. }))
    }
}

/// Expected selector count for a window of length `h`: `Σ_d (h-d)(d+2)`.
pub fn selector_count_for(h: usize) -> usize {
    (0..h).map(|d| (h - d) * (d + 2)).sum()
}

struct Builder {
    variables: Vec<Variable>,
    index: HashMap<VarRole, usize>,
}

impl Builder {
    fn add(&mut self, name: String, kind: VarKind, upper: f64, role: VarRole) -> usize {
        let id = self.variables.len();
        self.variables.push(Variable {
            name,
            kind,
            lower: 0.0,
            upper,
            role,
        });
        self.index.insert(role, id);
        id
    }
}

/// Materialize the MILP for one window. Requires `0 < p < 1`.
pub fn build_milp(table: &GramianTable, p: f64, lambda: f64) -> Result<MilpModel> {
    if p >= 1.0 {
        return Err(Error::Unsupported(
            "one-hot MILP requires p < 1; use the evaluator or enumeration for p = 1".into(),
        ));
    }
    if p <= 0.0 {
        return Err(Error::Validation("p must lie in (0,1)".into()));
    }
    let h = table.len();
    if h == 0 {
        return Err(Error::Validation("window must be non-empty".into()));
    }
    let k = table.start();
    let beta = survival_factors(p, h);
    let mut b = Builder {
        variables: Vec::new(),
        index: HashMap::new(),
    };

    let theta: Vec<usize> = (0..h)
        .map(|t| b.add(format!("th_{}", k + t), VarKind::Binary, 1.0, VarRole::Theta { t: k + t }))
        .collect();
    let mut counter = vec![Vec::new(); h];
    for t in 0..h {
        for tau in 0..=t {
            let role = VarRole::Counter {
                t: k + t,
                tau: k + tau,
            };
            let name = format!("c_{}_{}", k + t, k + tau);
            counter[t].push(b.add(name, VarKind::Integer, (t - tau + 1) as f64, role));
        }
    }
    let mut selector = vec![Vec::new(); h];
    for t in 0..h {
        for tau in 0..=t {
            let ids: Vec<usize> = (0..=t - tau + 1)
                .map(|i| {
                    let role = VarRole::Selector {
                        t: k + t,
                        tau: k + tau,
                        i,
                    };
                    let name = format!("s_{}_{}_{}", k + t, k + tau, i);
                    b.add(name, VarKind::Binary, 1.0, role)
                })
                .collect();
            selector[t].push(ids);
        }
    }

    let mut objective = Vec::new();
    for t in 0..h {
        for tau in 0..=t {
            let g = table.g(t, tau);
            for (i, &id) in selector[t][tau].iter().enumerate() {
                objective.push((id, beta[i] * g));
            }
        }
    }
    objective.extend(theta.iter().map(|&id| (id, lambda)));

    let mut constraints = Vec::new();
    for t in 0..h {
        let mut terms = vec![(counter[t][0], 1.0)];
        if t > 0 {
            terms.push((counter[t - 1][0], -1.0));
        }
        terms.push((theta[t], -1.0));
        constraints.push(Constraint {
            name: format!("run_{}", k + t),
            kind: ConstraintKind::RunningCounter,
            terms,
            rhs: 0.0,
        });
    }
    for t in 0..h {
        for tau in 1..=t {
            constraints.push(Constraint {
                name: format!("int_{}_{}", k + t, k + tau),
                kind: ConstraintKind::IntervalCount,
                terms: vec![
                    (counter[t][tau], 1.0),
                    (counter[t][0], -1.0),
                    (counter[tau - 1][0], 1.0),
                ],
                rhs: 0.0,
            });
        }
    }
    for t in 0..h {
        for tau in 0..=t {
            constraints.push(Constraint {
                name: format!("onehot_{}_{}", k + t, k + tau),
                kind: ConstraintKind::OneHot,
                terms: selector[t][tau].iter().map(|&id| (id, 1.0)).collect(),
                rhs: 1.0,
            });
        }
    }
    for t in 0..h {
        for tau in 0..=t {
            let mut terms: Vec<(usize, f64)> = selector[t][tau]
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &id)| (id, i as f64))
                .collect();
            terms.push((counter[t][tau], -1.0));
            constraints.push(Constraint {
                name: format!("link_{}_{}", k + t, k + tau),
                kind: ConstraintKind::Link,
                terms,
                rhs: 0.0,
            });
        }
    }

    Ok(MilpModel {
        start: k,
        horizon_len: h,
        p,
        lambda,
        variables: b.variables,
        objective,
        constraints,
        index: b.index,
    })
}

/// The unique feasible assignment implied by `theta`.
pub fn implied_assignment(model: &MilpModel, theta: &Schedule) -> Result<Vec<f64>> {
    if theta.len() != model.horizon_len {
        return Err(Error::Validation(format!(
            "schedule length {} does not match window length {}",
            theta.len(),
            model.horizon_len
        )));
    }
    let k = model.start;
    let prefix = theta.prefix_counts();
    let values = model
        .variables
        .iter()
        .map(|v| match v.role {
            VarRole::Theta { t } => f64::from(u8::from(theta.get(t - k))),
            VarRole::Counter { t, tau } => (prefix[t - k + 1] - prefix[tau - k]) as f64,
            VarRole::Selector { t, tau, i } => {
                let c = prefix[t - k + 1] - prefix[tau - k];
                if c == i {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    Ok(values)
}

/// Objective value of the assignment implied by `theta`, after checking every
/// bound and constraint row exactly.
pub fn eval_assignment(model: &MilpModel, theta: &Schedule) -> Result<f64> {
    let values = implied_assignment(model, theta)?;
    for (v, &x) in model.variables.iter().zip(&values) {
        if x < v.lower || x > v.upper || x.fract() != 0.0 {
            return Err(Error::Numerical(format!("{} = {x} violates its bounds", v.name)));
        }
    }
    for c in &model.constraints {
        let lhs: f64 = c.terms.iter().map(|&(id, coef)| coef * values[id]).sum();
        if lhs != c.rhs {
            return Err(Error::Numerical(format!(
                "constraint {} violated: {lhs} != {}",
                c.name, c.rhs
            )));
        }
    }
    Ok(model
        .objective
        .iter()
        .map(|&(id, coef)| coef * values[id])
        .sum())
}

fn fmt_coef(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_term(out: &mut String, coef: f64, name: &str) {
    let sign = if coef < 0.0 { '-' } else { '+' };
    let _ = write!(out, " {sign} {} {name}", fmt_coef(coef.abs()));
}

/// CPLEX-style LP text. Output is a pure function of the model.
pub fn export_lp(model: &MilpModel) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ event-triggered scheduling window k={} H={} p={} lambda={}",
        model.start,
        model.horizon_len,
        fmt_coef(model.p),
        fmt_coef(model.lambda)
    );
    out.push_str("Minimize\n obj:\n");
    for &(id, coef) in &model.objective {
        let mut line = String::new();
        write_term(&mut line, coef, &model.variables[id].name);
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("Subject To\n");
    for c in &model.constraints {
        let _ = write!(out, " {}:", c.name);
        for &(id, coef) in &c.terms {
            write_term(&mut out, coef, &model.variables[id].name);
        }
        let _ = writeln!(out, " = {}", fmt_coef(c.rhs));
    }
    out.push_str("Bounds\n");
    for v in model.variables.iter().filter(|v| v.kind == VarKind::Integer) {
        let _ = writeln!(
            out,
            " {} <= {} <= {}",
            fmt_coef(v.lower),
            v.name,
            fmt_coef(v.upper)
        );
    }
    out.push_str("Binary\n");
    for v in model.variables.iter().filter(|v| v.kind == VarKind::Binary) {
        let _ = writeln!(out, " {}", v.name);
    }
    out.push_str("General\n");
    for v in model.variables.iter().filter(|v| v.kind == VarKind::Integer) {
        let _ = writeln!(out, " {}", v.name);
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::schedule_cost;

    fn table(h: usize) -> GramianTable {
        let rows: Vec<Vec<f64>> = (0..h)
            .map(|t| (0..=t).map(|tau| 1.0 + (t * 7 + tau * 3) as f64 * 0.25).collect())
            .collect();
        GramianTable::from_rows(0, &rows, 0.8)
    }

    #[test]
    fn smallest_model() {
        let t = GramianTable::from_rows(0, &[vec![2.0]], 0.5);
        let m = build_milp(&t, 0.3, 0.5).unwrap();
        assert_eq!((m.theta_count(), m.counter_count(), m.selector_count()), (1, 1, 2));
        let s0 = m.var(VarRole::Selector { t: 0, tau: 0, i: 0 }).unwrap();
        let s1 = m.var(VarRole::Selector { t: 0, tau: 0, i: 1 }).unwrap();
        let th = m.var(VarRole::Theta { t: 0 }).unwrap();
        let obj: HashMap<usize, f64> = m.objective.iter().copied().collect();
        assert_eq!(obj[&s0], 2.0);
        assert!((obj[&s1] - 0.7 * 2.0).abs() < 1e-15);
        assert_eq!(obj[&th], 0.5);
    }

    #[test]
    fn variable_counts() {
        let m = build_milp(&table(2), 0.5, 1.0).unwrap();
        assert_eq!((m.theta_count(), m.counter_count(), m.selector_count()), (2, 3, 7));
        let m = build_milp(&table(50), 0.7, 100.0).unwrap();
        assert_eq!(m.theta_count(), 50);
        assert_eq!(m.counter_count(), 1275);
        assert_eq!(m.selector_count(), selector_count_for(50));
        assert_eq!(selector_count_for(50), 22_100 + 1275);
    }

    #[test]
    fn rejects_lossless_channel() {
        assert!(matches!(build_milp(&table(3), 1.0, 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn all_zero_assignment_sums_table() {
        let t = table(4);
        let m = build_milp(&t, 0.4, 0.8).unwrap();
        let v = eval_assignment(&m, &Schedule::zeros(4)).unwrap();
        assert!((v - t.total()).abs() < 1e-12);
    }

    #[test]
    fn all_ones_survival_factors() {
        let t = GramianTable::from_rows(0, &[vec![1.0], vec![1.0, 1.0]], 0.0);
        let m = build_milp(&t, 0.5, 0.0).unwrap();
        // c = 1, 2, 1 on (0,0), (1,0), (1,1)
        let v = eval_assignment(&m, &Schedule::ones(2)).unwrap();
        assert!((v - (0.5 + 0.25 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn assignments_match_nonlinear_cost() {
        let t = table(5);
        let m = build_milp(&t, 0.35, 0.8).unwrap();
        for bits in 0..32u64 {
            let s = Schedule::from_bits(bits, 5);
            let lin = eval_assignment(&m, &s).unwrap();
            let nl = schedule_cost(&t, &s, 0.35);
            assert!((lin - nl).abs() <= 1e-12 * nl.abs());
        }
    }

    #[test]
    fn lp_export_sections_and_determinism() {
        let t = GramianTable::from_rows(3, &[vec![2.0]], 0.5);
        let m = build_milp(&t, 0.3, 0.5).unwrap();
        let text = export_lp(&m);
        assert_eq!(text, export_lp(&m));
        let section = |name: &str, next: &str| -> Vec<String> {
            let start = text.find(&format!("\n{name}\n")).unwrap() + name.len() + 2;
            let end = text[start..].find(&format!("{next}\n")).unwrap() + start;
            text[start..end].lines().map(|l| l.trim().to_string()).collect()
        };
        let binaries = section("Binary", "General");
        assert_eq!(binaries.iter().filter(|n| n.starts_with("th_")).count(), 1);
        assert_eq!(binaries.iter().filter(|n| n.starts_with("s_")).count(), 2);
        assert_eq!(section("General", "End"), vec!["c_3_3".to_string()]);
        assert!(text.contains(" run_3: + 1.0000000000000000e0 c_3_3 - 1.0000000000000000e0 th_3 = 0.0000000000000000e0"));
        assert!(text.ends_with("End\n"));
    }
}
