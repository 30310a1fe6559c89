//! Best-bound branch and bound over the dual simplex.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::model::{LinearModel, ModelError};
use crate::simplex::{Basis, Lp, LpStatus};

const INT_TOL: f64 = 1e-6;
/// Queued nodes keep a full tableau copy while their total size stays below
/// this many floats; beyond it they keep only the basis and refactorise.
const WARM_BUDGET: usize = 32 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Limits {
    pub wall_time: Option<Duration>,
    /// Stop when no better incumbent was found for this long.
    pub stall_time: Option<Duration>,
    /// Only solutions strictly below this value are of interest.
    pub objective_cutoff: Option<f64>,
    pub max_nodes: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    /// The incumbent is optimal, or the model is infeasible below the cutoff
    /// when there is no incumbent.
    Optimal,
    /// No feasible solution exists; with a cutoff, none below the cutoff.
    Infeasible,
    /// Stopped by the stall limit; `bound` is still a proven lower bound.
    StalledWithBound,
    /// Stopped by the wall-clock or node limit.
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: Status,
    pub incumbent: Option<f64>,
    /// Proven lower bound on the optimum (`+inf` when infeasible, the cutoff
    /// when everything below it was ruled out).
    pub bound: f64,
    pub assignment: Option<Vec<f64>>,
    pub nodes: u64,
    pub lp_iterations: u64,
}

impl SolveResult {
    pub(crate) fn infeasible(bound: f64) -> Self {
        SolveResult {
            status: Status::Infeasible,
            incumbent: None,
            bound,
            assignment: None,
            nodes: 0,
            lp_iterations: 0,
        }
    }
}

/// Hook called on every integer-feasible node solution.
pub trait IncumbentHook {
    /// Returns `Some(v)` when the point is accepted with objective `v`, or
    /// `None` to reject it. Rejected points still fathom their node.
    fn check(&mut self, x: &[f64], objective: f64) -> Option<f64>;
}

/// Accepts every integer-feasible point.
pub struct AcceptAll;

impl IncumbentHook for AcceptAll {
    fn check(&mut self, _x: &[f64], objective: f64) -> Option<f64> {
        Some(objective)
    }
}

enum Warm {
    Tableau(Arc<Lp>),
    Basis(Arc<Basis>),
}

struct Node {
    bound: f64,
    seq: u64,
    bounds: Vec<(usize, f64, f64)>,
    warm: Warm,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest.
    fn cmp(&self, o: &Self) -> Ordering {
        o.bound.total_cmp(&self.bound).then(o.seq.cmp(&self.seq))
    }
}

pub(crate) struct Outcome {
    pub result: SolveResult,
    /// Best integer-feasible point of the model itself, accepted or not.
    pub relaxed_best: Option<(f64, Vec<f64>)>,
    /// Set when the run stopped at the first point the hook refused.
    pub rejected: Option<(f64, Vec<f64>)>,
}

/// Solves a linear or mixed-integer model. Bilinear terms are ignored here.
pub fn branch_and_bound(model: &LinearModel, limits: &Limits) -> Result<SolveResult, ModelError> {
    model.validate()?;
    Ok(run(model, limits, &mut AcceptAll, Instant::now(), false).result)
}

/// With `stop_on_reject`, the search ends at the first integer point the
/// hook refuses; best-first order makes its value a bound for the model.
pub(crate) fn run(
    model: &LinearModel,
    limits: &Limits,
    hook: &mut dyn IncumbentHook,
    start: Instant,
    stop_on_reject: bool,
) -> Outcome {
    let integral = model.integral_objective();
    let int_vars: Vec<usize> = (0..model.vars.len()).filter(|&j| model.vars[j].kind.is_integral()).collect();
    let round_bound = |v: f64| if integral { (v - 1e-6).ceil() } else { v };
    let cutoff = limits.objective_cutoff.unwrap_or(f64::INFINITY);

    let mut root = Lp::new(model);
    for &j in &int_vars {
        let (lo, hi) = (model.vars[j].lower.ceil(), model.vars[j].upper.floor());
        root.set_bounds(j, lo, hi);
    }
    let tableau_size = (model.vars.len() + model.constraints.len()) * model.constraints.len().max(1);
    let max_iter = 50 * (model.vars.len() + model.constraints.len()) as u64 + 1000;

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        bounds: Vec::new(),
        warm: Warm::Tableau(Arc::new(root)),
    });
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut relaxed_best: Option<(f64, Vec<f64>)> = None;
    let mut rejected = None;
    let mut nodes = 0u64;
    let mut iterations = 0u64;
    let mut last_improvement = Instant::now();
    let mut pruned_by_cutoff = false;
    let mut unresolved = f64::INFINITY;
    let mut stop = None;

    while let Some(node) = heap.pop() {
        let threshold = incumbent.as_ref().map_or(cutoff, |i| i.0.min(cutoff));
        if node.bound >= threshold - 1e-9 {
            pruned_by_cutoff |= node.bound >= cutoff - 1e-9;
            continue;
        }
        if let Some(w) = limits.wall_time {
            if start.elapsed() >= w {
                stop = Some(Status::TimeLimit);
                heap.push(node);
                break;
            }
        }
        if let Some(s) = limits.stall_time {
            if last_improvement.elapsed() >= s {
                stop = Some(Status::StalledWithBound);
                heap.push(node);
                break;
            }
        }
        if limits.max_nodes.map_or(false, |k| nodes >= k) {
            stop = Some(Status::TimeLimit);
            heap.push(node);
            break;
        }
        nodes += 1;

        let mut lp = match &node.warm {
            Warm::Tableau(t) => (**t).clone(),
            Warm::Basis(b) => {
                let mut lp = Lp::new(model);
                for &j in &int_vars {
                    lp.set_bounds(j, model.vars[j].lower.ceil(), model.vars[j].upper.floor());
                }
                for &(j, lo, hi) in &node.bounds {
                    lp.set_bounds(j, lo, hi);
                }
                lp.load_basis(b);
                lp
            }
        };
        if let Warm::Tableau(_) = node.warm {
            for &(j, lo, hi) in node.bounds.iter().rev().take(1) {
                lp.set_bounds(j, lo, hi);
            }
        }
        let before = lp.iterations;
        let status = lp.solve(max_iter);
        iterations += lp.iterations - before;
        match status {
            LpStatus::Infeasible => continue,
            LpStatus::IterationLimit => {
                log::warn!("LP iteration limit at node {nodes}; keeping its parent bound");
                unresolved = unresolved.min(node.bound);
                continue;
            }
            LpStatus::Optimal => {}
        }
        let obj = lp.objective();
        debug_assert!(
            round_bound(obj) >= node.bound - 1e-6 * (1.0 + node.bound.abs()),
            "child relaxation {obj} below parent bound {}",
            node.bound
        );
        let bound = round_bound(obj).max(node.bound);
        let threshold = incumbent.as_ref().map_or(cutoff, |i| i.0.min(cutoff));
        if bound >= threshold - 1e-9 {
            pruned_by_cutoff |= bound >= cutoff - 1e-9;
            continue;
        }
        let x = lp.values();
        // Most fractional binary first, then most fractional general
        // integer; lowest index on ties.
        let mut branch = None;
        let mut best = (false, INT_TOL);
        for &j in &int_vars {
            let f = x[j] - x[j].floor();
            let dist = f.min(1.0 - f);
            if dist <= INT_TOL {
                continue;
            }
            let binary = model.vars[j].upper - model.vars[j].lower <= 1.0;
            if (binary && !best.0) || (binary == best.0 && dist > best.1 + 1e-12) {
                best = (binary, dist);
                branch = Some(j);
            }
        }
        match branch {
            None => {
                let mut point: Vec<f64> = x.to_vec();
                for &j in &int_vars {
                    point[j] = point[j].round();
                }
                let value = model.objective.eval(&point);
                if relaxed_best.as_ref().map_or(true, |r| value < r.0) {
                    relaxed_best = Some((value, point.clone()));
                }
                match hook.check(&point, value) {
                    Some(v) => {
                        if incumbent.as_ref().map_or(true, |i| v < i.0) {
                            incumbent = Some((v, point));
                            last_improvement = Instant::now();
                        }
                    }
                    None if stop_on_reject => {
                        rejected = Some((value, point));
                        stop = Some(Status::StalledWithBound);
                        break;
                    }
                    None => {}
                }
            }
            Some(j) => {
                let v = x[j];
                let (lo, hi) = (lp.lower[j], lp.upper[j]);
                let warm = if heap.len() * tableau_size < WARM_BUDGET {
                    Warm::Tableau(Arc::new(lp))
                } else {
                    Warm::Basis(Arc::new(lp.basis()))
                };
                let share = |w: &Warm| match w {
                    Warm::Tableau(t) => Warm::Tableau(t.clone()),
                    Warm::Basis(b) => Warm::Basis(b.clone()),
                };
                let mut down = node.bounds.clone();
                down.push((j, lo, v.floor()));
                let mut up = node.bounds.clone();
                up.push((j, v.ceil(), hi));
                seq += 1;
                heap.push(Node {
                    bound,
                    seq,
                    bounds: down,
                    warm: share(&warm),
                });
                seq += 1;
                heap.push(Node {
                    bound,
                    seq,
                    bounds: up,
                    warm,
                });
            }
        }
    }

    let open = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min).min(unresolved);
    let result = match (stop, incumbent) {
        (None, Some((v, x))) if unresolved == f64::INFINITY => SolveResult {
            status: Status::Optimal,
            incumbent: Some(v),
            bound: v,
            assignment: Some(x),
            nodes,
            lp_iterations: iterations,
        },
        (None, None) if unresolved == f64::INFINITY => SolveResult {
            status: Status::Infeasible,
            incumbent: None,
            bound: if pruned_by_cutoff { cutoff } else { f64::INFINITY },
            assignment: None,
            nodes,
            lp_iterations: iterations,
        },
        (stop, inc) => {
            let cap = inc.as_ref().map_or(cutoff, |i| i.0.min(cutoff));
            SolveResult {
                status: stop.unwrap_or(Status::StalledWithBound),
                bound: open.min(cap),
                incumbent: inc.as_ref().map(|i| i.0),
                assignment: inc.map(|i| i.1),
                nodes,
                lp_iterations: iterations,
            }
        }
    };
    Outcome {
        result,
        relaxed_best,
        rejected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinExpr;

    #[test]
    fn integer_cover() {
        let mut m = LinearModel::new();
        let p1 = m.integer("p1", 0.0, 10.0);
        let p2 = m.integer("p2", 0.0, 10.0);
        m.ge("c", LinExpr::from(p1) + p2, 3.0);
        m.set_objective(LinExpr::from(p1) + p2);
        let r = branch_and_bound(&m, &Limits::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert_eq!(r.incumbent, Some(3.0));
    }

    #[test]
    fn infeasible_bounds() {
        let mut m = LinearModel::new();
        let x = m.continuous("x", 0.0, 5.0);
        m.ge("a", x, 2.0);
        m.le("b", x, 1.0);
        let r = branch_and_bound(&m, &Limits::default()).unwrap();
        assert_eq!(r.status, Status::Infeasible);
        assert_eq!(r.bound, f64::INFINITY);
    }

    #[test]
    fn knapsack_needs_branching() {
        // max 5a + 4b + 3c s.t. 2a + 3b + c <= 5, 4a + b + 2c <= 11, 3a + 4b + 2c <= 8
        let mut m = LinearModel::new();
        let v: Vec<_> = ["a", "b", "c"].iter().map(|n| m.integer(*n, 0.0, 5.0)).collect();
        let row = |k: [f64; 3]| {
            let mut e = LinExpr::new();
            for i in 0..3 {
                e.add_term(v[i], k[i]);
            }
            e
        };
        m.le("r1", row([2.0, 3.0, 1.0]), 5.0);
        m.le("r2", row([4.0, 1.0, 2.0]), 11.0);
        m.le("r3", row([3.0, 4.0, 2.0]), 8.0);
        m.set_objective(row([-5.0, -4.0, -3.0]));
        let r = branch_and_bound(&m, &Limits::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert_eq!(r.incumbent, Some(-13.0));
    }

    #[test]
    fn cutoff_prunes_everything() {
        let mut m = LinearModel::new();
        let p = m.integer("p", 0.0, 10.0);
        m.ge("c", p, 4.0);
        m.set_objective(LinExpr::from(p));
        let limits = Limits {
            objective_cutoff: Some(3.0),
            ..Limits::default()
        };
        let r = branch_and_bound(&m, &limits).unwrap();
        assert_eq!(r.status, Status::Infeasible);
        assert_eq!(r.bound, 3.0);
        assert!(r.incumbent.is_none());
    }

    #[test]
    fn node_limit_reports_bound() {
        let mut m = LinearModel::new();
        let a = m.integer("a", 0.0, 100.0);
        let b = m.integer("b", 0.0, 100.0);
        m.eq("e", LinExpr::term(a, 2.0) + LinExpr::term(b, 2.0), 7.0 + 0.0);
        m.set_objective(LinExpr::from(a) + b);
        let limits = Limits {
            max_nodes: Some(1),
            ..Limits::default()
        };
        let r = branch_and_bound(&m, &limits).unwrap();
        assert_eq!(r.status, Status::TimeLimit);
        assert!(r.bound >= 3.5 - 1e-9);
    }

    #[test]
    fn deterministic() {
        let mut m = LinearModel::new();
        let v: Vec<_> = (0..6).map(|i| m.integer(format!("v{i}"), 0.0, 3.0)).collect();
        let mut e = LinExpr::new();
        for (i, &x) in v.iter().enumerate() {
            e.add_term(x, 1.0 + i as f64 * 0.37);
        }
        m.ge("c", e.clone(), 7.3);
        m.set_objective(e);
        let a = branch_and_bound(&m, &Limits::default()).unwrap();
        let b = branch_and_bound(&m, &Limits::default()).unwrap();
        assert_eq!(a, b);
    }
}
