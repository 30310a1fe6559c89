//! Exact solving of models with bilinear terms by partition refinement.
//!
//! Each round solves a piecewise relaxation whose integer points are handed
//! to a [`Verifier`]. Accepted points become incumbents and prune later
//! rounds; when the relaxed optimum is rejected, its partitioned values are
//! added as new breakpoints and the relaxation is solved again. The relaxed
//! optimum of every round is a valid lower bound.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::bnb::{self, IncumbentHook, Limits, SolveResult, Status};
use crate::envelope::{relax, Relaxation};
use crate::model::{LinExpr, LinearModel, ModelError, VarId};

/// Decides whether an integer point of a relaxation is feasible for the
/// original model.
pub trait Verifier {
    /// Returns the true objective value and a feasible point sharing the
    /// integer values of `x`, or `None` when there is none. `x` may be longer
    /// than the model's variable list; extra entries belong to the
    /// relaxation.
    fn verify(&mut self, model: &LinearModel, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

/// Fixes the integer values of the point and re-solves the remaining LP,
/// where each product with an integer or fixed operand becomes linear.
/// Products of two free continuous variables are only checked at the
/// relaxed point itself.
pub struct FixIntegers {
    pub tol: f64,
}

impl Default for FixIntegers {
    fn default() -> Self {
        FixIntegers { tol: 1e-6 }
    }
}

impl Verifier for FixIntegers {
    fn verify(&mut self, model: &LinearModel, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let mut lp = model.clone();
        lp.bilinear.clear();
        for (j, v) in lp.vars.iter_mut().enumerate() {
            if v.kind.is_integral() {
                v.lower = x[j].round();
                v.upper = x[j].round();
            }
        }
        let fixed = |lp: &LinearModel, v: VarId| {
            let var = &lp.vars[v.0];
            (var.upper - var.lower <= 0.0).then_some(var.lower)
        };
        for (i, b) in model.bilinear.iter().enumerate() {
            if let Some(yv) = fixed(&lp, b.y) {
                lp.eq(format!("fix{i}"), b.z, LinExpr::term(b.x, yv));
            } else if let Some(xv) = fixed(&lp, b.x) {
                lp.eq(format!("fix{i}"), b.z, LinExpr::term(b.y, xv));
            } else if (x[b.z.0] - x[b.x.0] * x[b.y.0]).abs() > self.tol {
                return None;
            }
        }
        let r = bnb::branch_and_bound(&lp, &Limits::default()).ok()?;
        match (r.status, r.incumbent, r.assignment) {
            (Status::Optimal, Some(v), Some(a)) => Some((v, a)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    /// Uniform segments per partitioned variable in the first round.
    pub initial_segments: usize,
    pub max_rounds: usize,
    /// Breakpoints closer than this to an existing one are not added.
    pub min_gap: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            initial_segments: 1,
            max_rounds: 400,
            min_gap: 1e-7,
        }
    }
}

struct Hook<'a> {
    model: &'a LinearModel,
    verifier: &'a mut dyn Verifier,
    best: Option<(f64, Vec<f64>)>,
    improved: Option<Instant>,
}

impl IncumbentHook for Hook<'_> {
    fn check(&mut self, x: &[f64], _objective: f64) -> Option<f64> {
        let (v, point) = self.verifier.verify(self.model, x)?;
        if self.best.as_ref().map_or(true, |b| v < b.0) {
            self.best = Some((v, point));
            self.improved = Some(Instant::now());
        }
        Some(v)
    }
}

/// Solves `model` exactly, treating each bilinear term `z = x·y` as a
/// constraint. `x` operands are the ones refined.
pub fn solve_exact(
    model: &LinearModel,
    limits: &Limits,
    options: &RefineOptions,
    verifier: &mut dyn Verifier,
) -> Result<SolveResult, ModelError> {
    model.validate()?;
    let start = Instant::now();
    let integral = model.integral_objective();
    let cutoff = limits.objective_cutoff.unwrap_or(f64::INFINITY);

    let mut breakpoints: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for b in &model.bilinear {
        let v = &model.vars[b.x.0];
        breakpoints
            .entry(b.x.0)
            .or_insert_with(|| crate::envelope::uniform_breakpoints(v.lower, v.upper, options.initial_segments));
    }

    let mut hook = Hook {
        model,
        verifier,
        best: None,
        improved: None,
    };
    let mut lower = f64::NEG_INFINITY;
    let mut nodes = 0;
    let mut iterations = 0;
    let mut last_progress = start;
    let mut status = Status::StalledWithBound;

    for round in 0..options.max_rounds {
        let list: Vec<(VarId, Vec<f64>)> = breakpoints.iter().map(|(&j, bp)| (VarId(j), bp.clone())).collect();
        let relaxed = relax(model, &Relaxation::Breakpoints(list)).map_err(|_| ModelError::BadBilinear(0))?;
        let incumbent = hook.best.as_ref().map(|b| b.0);
        let round_limits = Limits {
            wall_time: limits.wall_time,
            stall_time: limits.stall_time.map(|s| s.saturating_sub(last_progress.elapsed())),
            objective_cutoff: Some(incumbent.map_or(cutoff, |i| i.min(cutoff))),
            max_nodes: limits.max_nodes,
        };
        let out = bnb::run(&relaxed, &round_limits, &mut hook, start, true);
        nodes += out.result.nodes;
        iterations += out.result.lp_iterations;
        if let Some(t) = hook.improved.take() {
            last_progress = t;
        }

        let mut round_lb = out.result.bound;
        if let Some((v, _)) = &out.relaxed_best {
            round_lb = round_lb.min(*v);
        }
        if integral && round_lb.is_finite() {
            round_lb = (round_lb - 1e-6).ceil();
        }
        lower = lower.max(round_lb);
        log::debug!(
            "refinement round {round}: bound {lower}, incumbent {:?}, {} nodes",
            hook.best.as_ref().map(|b| b.0),
            out.result.nodes
        );

        let best = hook.best.as_ref().map_or(cutoff, |b| b.0.min(cutoff));
        if lower >= best - 1e-9 {
            status = if hook.best.is_some() { Status::Optimal } else { Status::Infeasible };
            lower = best;
            break;
        }
        match out.result.status {
            _ if out.rejected.is_some() => {}
            Status::TimeLimit => {
                status = Status::TimeLimit;
                break;
            }
            Status::StalledWithBound => {
                status = Status::StalledWithBound;
                break;
            }
            _ => {}
        }
        if limits.wall_time.map_or(false, |w| start.elapsed() >= w) {
            status = Status::TimeLimit;
            break;
        }
        if limits.stall_time.map_or(false, |s| last_progress.elapsed() >= s) {
            status = Status::StalledWithBound;
            break;
        }

        // Refine at the rejected relaxed optimum.
        let Some((_, point)) = out.rejected.or(out.relaxed_best) else {
            status = Status::StalledWithBound;
            break;
        };
        let mut added = false;
        for b in &model.bilinear {
            if (point[b.z.0] - point[b.x.0] * point[b.y.0]).abs() <= 1e-9 {
                continue;
            }
            let bp = breakpoints.get_mut(&b.x.0).expect("partition exists");
            let at = point[b.x.0];
            if bp.iter().all(|&p| (p - at).abs() > options.min_gap) {
                let pos = bp.partition_point(|&p| p < at);
                bp.insert(pos, at);
                added = true;
            }
        }
        if !added {
            log::debug!("refinement stalled: relaxed optimum rejected with no new breakpoint");
            status = Status::StalledWithBound;
            break;
        }
    }

    let (incumbent, assignment) = match hook.best {
        Some((v, x)) => (Some(v), Some(x)),
        None => (None, None),
    };
    Ok(SolveResult {
        status,
        incumbent,
        bound: lower,
        assignment,
        nodes,
        lp_iterations: iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min p  s.t.  z = x·y, z >= 2.5, y = p, x in [0, 1], p integer.
    /// Only p >= 3 is feasible; every relaxation admits p = 3 as well, but
    /// the McCormick relaxation alone has optimum ceil(2.5) = 3 too, so add
    /// a coupling that makes the relaxation loose: x <= 0.8 + 0.01 p.
    fn product_model() -> LinearModel {
        let mut m = LinearModel::new();
        let p = m.integer("p", 0.0, 10.0);
        let x = m.continuous("x", 0.0, 1.0);
        let y = m.continuous("y", 0.0, 10.0);
        let z = m.continuous("z", 0.0, 10.0);
        m.add_bilinear(z, x, y);
        m.eq("yp", y, p);
        m.ge("need", z, 2.5);
        m.le("cap", x, LinExpr::term(p, 0.01) + 0.8);
        m.set_objective(LinExpr::from(p));
        m
    }

    #[test]
    fn refines_to_optimum() {
        let m = product_model();
        let r = solve_exact(&m, &Limits::default(), &RefineOptions::default(), &mut FixIntegers::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        // p = 3 gives x <= 0.83, z <= 2.49; p = 4 gives z <= 3.36.
        assert_eq!(r.incumbent, Some(4.0));
        assert_eq!(r.bound, 4.0);
    }

    #[test]
    fn infeasible_product() {
        let mut m = LinearModel::new();
        let p = m.integer("p", 0.0, 3.0);
        let x = m.continuous("x", 0.0, 0.5);
        let z = m.continuous("z", 0.0, 10.0);
        m.add_bilinear(z, x, p);
        m.ge("need", z, 2.0);
        m.set_objective(LinExpr::from(p));
        let r = solve_exact(&m, &Limits::default(), &RefineOptions::default(), &mut FixIntegers::default()).unwrap();
        assert_eq!(r.status, Status::Infeasible);
    }

    #[test]
    fn bound_never_exceeds_optimum() {
        let m = product_model();
        let opts = RefineOptions {
            max_rounds: 1,
            ..RefineOptions::default()
        };
        let r = solve_exact(&m, &Limits::default(), &opts, &mut FixIntegers::default()).unwrap();
        assert!(r.bound <= 4.0);
    }

    struct Reject;
    impl Verifier for Reject {
        fn verify(&mut self, _: &LinearModel, _: &[f64]) -> Option<(f64, Vec<f64>)> {
            None
        }
    }

    #[test]
    fn rejecting_verifier_stalls_with_bound() {
        let m = product_model();
        let r = solve_exact(&m, &Limits::default(), &RefineOptions::default(), &mut Reject).unwrap();
        assert_ne!(r.status, Status::Optimal);
        assert!(r.incumbent.is_none());
        assert!(r.bound <= 4.0);
    }
}
