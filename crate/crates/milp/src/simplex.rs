//! Dense bounded-variable dual simplex.
//!
//! Each constraint row `i` gets an activity variable `r_i = a_i·x` whose
//! bounds encode the row sense, so the system is `[A | -I] (x, r) = 0` with
//! boxed variables. The starting basis is the activity variables. With every
//! structural variable parked at the bound its cost prefers, that basis is
//! dual feasible, so no phase one is needed and bound changes made by
//! branching keep the basis dual feasible too.
//!
//! The tableau `B⁻¹[A | -I]` is stored densely. That is wasteful for large
//! sparse models but simple and fast at the sizes the margin models reach.

use std::sync::Arc;

use crate::model::{LinearModel, Sense};

const PIVOT_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-7;
const DUAL_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Basis description sufficient to rebuild a tableau.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub basic: Vec<usize>,
    pub at_upper: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Lp {
    n: usize,
    m: usize,
    /// Dense constraint matrix, row-major `m × n`, shared between clones.
    a: Arc<Vec<f64>>,
    cost: Arc<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    t: Vec<f64>,
    basic: Vec<usize>,
    /// Row holding each variable when basic.
    row_of: Vec<Option<usize>>,
    at_upper: Vec<bool>,
    x: Vec<f64>,
    d: Vec<f64>,
    pub iterations: u64,
}

impl Lp {
    pub fn new(model: &LinearModel) -> Lp {
        let n = model.vars.len();
        let m = model.constraints.len();
        let mut a = vec![0.0; m * n];
        let mut lower = Vec::with_capacity(n + m);
        let mut upper = Vec::with_capacity(n + m);
        for v in &model.vars {
            lower.push(v.lower);
            upper.push(v.upper);
        }
        for (i, c) in model.constraints.iter().enumerate() {
            for &(v, k) in &c.terms {
                a[i * n + v.0] += k;
            }
            let (lo, hi) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
                Sense::Eq => (c.rhs, c.rhs),
            };
            lower.push(lo);
            upper.push(hi);
        }
        let mut cost = vec![0.0; n + m];
        for &(v, k) in &model.objective.terms {
            cost[v.0] += k;
        }
        let mut lp = Lp {
            n,
            m,
            a: Arc::new(a),
            cost: Arc::new(cost),
            lower,
            upper,
            t: Vec::new(),
            basic: Vec::new(),
            row_of: Vec::new(),
            at_upper: Vec::new(),
            x: Vec::new(),
            d: Vec::new(),
            iterations: 0,
        };
        lp.reset();
        lp
    }

    fn cols(&self) -> usize {
        self.n + self.m
    }

    /// Slack basis with structurals at their cost-preferred bound.
    pub fn reset(&mut self) {
        let (n, m, cols) = (self.n, self.m, self.cols());
        self.t = vec![0.0; m * cols];
        for i in 0..m {
            for j in 0..n {
                // Row of B⁻¹M with B = -I: negate A, identity on activities.
                self.t[i * cols + j] = -self.a[i * n + j];
            }
            self.t[i * cols + n + i] = 1.0;
        }
        self.basic = (n..n + m).collect();
        self.row_of = vec![None; cols];
        for i in 0..m {
            self.row_of[n + i] = Some(i);
        }
        self.at_upper = (0..cols).map(|j| j < n && self.cost[j] < 0.0).collect();
        self.d = self.cost.to_vec();
        self.recompute_x();
    }

    pub fn basis(&self) -> Basis {
        Basis {
            basic: self.basic.clone(),
            at_upper: self.at_upper.clone(),
        }
    }

    /// Restores a basis by refactorising; falls back to the slack basis when
    /// the stored basis is singular under the current bounds.
    pub fn load_basis(&mut self, b: &Basis) {
        self.basic = b.basic.clone();
        self.at_upper = b.at_upper.clone();
        if !self.refactor() {
            self.reset();
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        if self.at_upper[j] && self.upper[j].is_finite() {
            self.upper[j]
        } else if self.lower[j].is_finite() {
            self.lower[j]
        } else if self.upper[j].is_finite() {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn recompute_x(&mut self) {
        let cols = self.cols();
        let mut x = vec![0.0; cols];
        for j in 0..cols {
            if self.row_of[j].is_none() {
                x[j] = self.nonbasic_value(j);
            }
        }
        let nz: Vec<usize> = (0..cols).filter(|&j| self.row_of[j].is_none() && x[j] != 0.0).collect();
        for i in 0..self.m {
            let row = &self.t[i * cols..(i + 1) * cols];
            let s: f64 = nz.iter().map(|&j| row[j] * x[j]).sum();
            x[self.basic[i]] = -s;
        }
        self.x = x;
    }

    /// Rebuilds the tableau and reduced costs from `self.basic`. Returns false
    /// if the basis matrix is singular.
    fn refactor(&mut self) -> bool {
        let (n, m, cols) = (self.n, self.m, self.cols());
        let mut t = vec![0.0; m * cols];
        for i in 0..m {
            t[i * cols..i * cols + n].copy_from_slice(&self.a[i * n..(i + 1) * n]);
            t[i * cols + n + i] = -1.0;
        }
        let mut assigned = vec![false; m];
        let mut new_basic = vec![usize::MAX; m];
        for &q in &self.basic {
            let mut best = None;
            let mut best_abs = 1e-11;
            for i in 0..m {
                if !assigned[i] {
                    let v = t[i * cols + q].abs();
                    if v > best_abs {
                        best_abs = v;
                        best = Some(i);
                    }
                }
            }
            let Some(r) = best else { return false };
            assigned[r] = true;
            new_basic[r] = q;
            pivot_rows(&mut t, cols, m, r, q);
        }
        self.t = t;
        self.basic = new_basic;
        self.row_of = vec![None; cols];
        for (i, &b) in self.basic.iter().enumerate() {
            self.row_of[b] = Some(i);
        }
        self.recompute_d();
        self.recompute_x();
        true
    }

    fn recompute_d(&mut self) {
        let cols = self.cols();
        let mut d = self.cost.to_vec();
        for i in 0..self.m {
            let cb = self.cost[self.basic[i]];
            if cb != 0.0 {
                let row = &self.t[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    d[j] -= cb * row[j];
                }
            }
        }
        for &b in &self.basic {
            d[b] = 0.0;
        }
        // Nonbasic variables whose reduced cost sign disagrees with their
        // bound move to the other bound when it is finite.
        for j in 0..cols {
            if self.row_of[j].is_none() {
                if d[j] < -DUAL_TOL && !self.at_upper[j] && self.upper[j].is_finite() {
                    self.at_upper[j] = true;
                } else if d[j] > DUAL_TOL && self.at_upper[j] && self.lower[j].is_finite() {
                    self.at_upper[j] = false;
                }
            }
        }
        self.d = d;
    }

    fn dual_feasible(&self) -> bool {
        (0..self.cols()).all(|j| {
            if self.row_of[j].is_some() || self.lower[j] == self.upper[j] {
                return true;
            }
            if self.at_upper[j] {
                self.d[j] <= 1e-6
            } else {
                self.d[j] >= -1e-6
            }
        })
    }

    /// Changes the bounds of structural variable `j`.
    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
        if self.row_of[j].is_none() {
            let v = self.nonbasic_value(j);
            let old = self.x[j];
            if v != old {
                let cols = self.cols();
                let delta = v - old;
                for i in 0..self.m {
                    let a = self.t[i * cols + j];
                    if a != 0.0 {
                        self.x[self.basic[i]] -= a * delta;
                    }
                }
                self.x[j] = v;
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lower[j] - PRIMAL_TOL {
            self.lower[j] - v
        } else if v > self.upper[j] + PRIMAL_TOL {
            v - self.upper[j]
        } else {
            0.0
        }
    }

    pub fn solve(&mut self, max_iter: u64) -> LpStatus {
        match self.run(max_iter) {
            LpStatus::IterationLimit => {
                // One retry from a fresh factorisation clears drift.
                if !self.refactor() {
                    self.reset();
                }
                self.run(max_iter)
            }
            LpStatus::Infeasible => {
                // Confirm with a clean tableau before trusting it.
                if !self.refactor() || !self.dual_feasible() {
                    self.reset();
                }
                self.run(max_iter)
            }
            s => s,
        }
    }

    fn run(&mut self, max_iter: u64) -> LpStatus {
        let cols = self.cols();
        let mut degenerate = 0usize;
        let mut last_obj = f64::NEG_INFINITY;
        let mut since_refactor = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate > DEGENERATE_RUN;
            // Leaving row.
            let mut leave = None;
            let mut best = 0.0;
            for i in 0..self.m {
                let inf = self.infeasibility(self.basic[i]);
                if inf > 0.0 {
                    if bland {
                        if leave.map_or(true, |r: usize| self.basic[i] < self.basic[r]) {
                            leave = Some(i);
                        }
                    } else if inf > best {
                        best = inf;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return LpStatus::Optimal;
            };
            let p = self.basic[r];
            let to_lower = self.x[p] < self.lower[p];
            let row = &self.t[r * cols..(r + 1) * cols];
            // x_p = -Σ row_j x_j: raising x_p needs row_j < 0 for variables
            // that can increase and row_j > 0 for those that can decrease.
            let eligible = |j: usize| -> Option<f64> {
                if self.row_of[j].is_some() || self.lower[j] == self.upper[j] {
                    return None;
                }
                let a = row[j];
                if a.abs() <= PIVOT_TOL {
                    return None;
                }
                let up = !self.at_upper[j];
                let ok = if to_lower { (a < 0.0) == up } else { (a > 0.0) == up };
                ok.then_some(a)
            };
            // Harris two-pass ratio test.
            let mut bound = f64::INFINITY;
            for j in 0..cols {
                if let Some(a) = eligible(j) {
                    bound = bound.min((self.d[j].abs() + DUAL_TOL) / a.abs());
                }
            }
            if !bound.is_finite() {
                return LpStatus::Infeasible;
            }
            let mut enter = None;
            let mut best_a = 0.0;
            let mut best_ratio = f64::INFINITY;
            for j in 0..cols {
                if let Some(a) = eligible(j) {
                    let ratio = self.d[j].abs() / a.abs();
                    if ratio <= bound {
                        let better = if bland {
                            ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && enter.is_none())
                        } else {
                            a.abs() > best_a
                        };
                        if better {
                            best_a = a.abs();
                            best_ratio = ratio;
                            enter = Some(j);
                        }
                    }
                }
            }
            let q = enter.expect("bounded ratio has a candidate");
            self.pivot(r, q, !to_lower);
            self.iterations += 1;
            since_refactor += 1;
            if since_refactor >= 200 {
                since_refactor = 0;
                if !self.refactor() {
                    self.reset();
                }
            } else {
                self.recompute_x();
            }
            let obj = self.objective();
            if obj > last_obj + 1e-12 {
                degenerate = 0;
                last_obj = obj;
            } else {
                degenerate += 1;
            }
        }
        LpStatus::IterationLimit
    }

    fn pivot(&mut self, r: usize, q: usize, leave_at_upper: bool) {
        let cols = self.cols();
        let p = self.basic[r];
        pivot_rows(&mut self.t, cols, self.m, r, q);
        let dq = self.d[q];
        if dq != 0.0 {
            let row = &self.t[r * cols..(r + 1) * cols];
            for j in 0..cols {
                self.d[j] -= dq * row[j];
            }
        }
        self.d[q] = 0.0;
        // Clamp tiny sign errors introduced by the Harris tolerance.
        self.d[p] = if leave_at_upper { self.d[p].min(0.0) } else { self.d[p].max(0.0) };
        self.basic[r] = q;
        self.row_of[q] = Some(r);
        self.row_of[p] = None;
        self.at_upper[p] = leave_at_upper;
    }
}

/// Gauss-Jordan pivot on `(r, q)` of a dense row-major matrix.
fn pivot_rows(t: &mut [f64], cols: usize, m: usize, r: usize, q: usize) {
    let piv = t[r * cols + q];
    {
        let row = &mut t[r * cols..(r + 1) * cols];
        for v in row.iter_mut() {
            *v /= piv;
        }
        row[q] = 1.0;
    }
    let (before, rest) = t.split_at_mut(r * cols);
    let (prow, after) = rest.split_at_mut(cols);
    let eliminate = |row: &mut [f64]| {
        let f = row[q];
        if f != 0.0 {
            for (v, &pv) in row.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            row[q] = 0.0;
        }
    };
    for i in 0..r {
        eliminate(&mut before[i * cols..(i + 1) * cols]);
    }
    for i in 0..(m - r - 1) {
        eliminate(&mut after[i * cols..(i + 1) * cols]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinExpr, LinearModel};

    fn solve(m: &LinearModel) -> (LpStatus, f64, Vec<f64>) {
        let mut lp = Lp::new(m);
        let s = lp.solve(10_000);
        (s, lp.objective(), lp.values().to_vec())
    }

    #[test]
    fn small_lp() {
        // min x + 2y s.t. x + y >= 3, x <= 2
        let mut m = LinearModel::new();
        let x = m.continuous("x", 0.0, 2.0);
        let y = m.continuous("y", 0.0, 10.0);
        m.ge("c", LinExpr::from(x) + y, 3.0);
        m.set_objective(LinExpr::from(x) + LinExpr::term(y, 2.0));
        let (s, obj, v) = solve(&m);
        assert_eq!(s, LpStatus::Optimal);
        assert!((obj - 4.0).abs() < 1e-9);
        assert!((v[0] - 2.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_lp() {
        let mut m = LinearModel::new();
        let x = m.continuous("x", 0.0, 10.0);
        m.ge("a", x, 2.0);
        m.le("b", x, 1.0);
        assert_eq!(solve(&m).0, LpStatus::Infeasible);
    }

    #[test]
    fn negative_costs_and_equalities() {
        // max x + y s.t. x + 2y = 4, x - y <= 1
        let mut m = LinearModel::new();
        let x = m.continuous("x", 0.0, 10.0);
        let y = m.continuous("y", 0.0, 10.0);
        m.eq("e", LinExpr::from(x) + LinExpr::term(y, 2.0), 4.0);
        m.le("l", LinExpr::from(x) - y, 1.0);
        m.set_objective(-(LinExpr::from(x) + y));
        let (s, obj, _) = solve(&m);
        assert_eq!(s, LpStatus::Optimal);
        assert!((obj + 3.0).abs() < 1e-9, "{obj}");
    }

    #[test]
    fn warm_bound_change_and_basis_reload() {
        let mut m = LinearModel::new();
        let x = m.continuous("x", 0.0, 4.0);
        let y = m.continuous("y", 0.0, 4.0);
        m.ge("c", LinExpr::from(x) + y, 3.0);
        m.set_objective(LinExpr::from(x) + LinExpr::term(y, 3.0));
        let mut lp = Lp::new(&m);
        assert_eq!(lp.solve(100), LpStatus::Optimal);
        assert!((lp.objective() - 3.0).abs() < 1e-9);
        let b = lp.basis();
        lp.set_bounds(0, 0.0, 1.0);
        assert_eq!(lp.solve(100), LpStatus::Optimal);
        assert!((lp.objective() - 7.0).abs() < 1e-9);
        let mut fresh = Lp::new(&m);
        fresh.set_bounds(0, 0.0, 1.0);
        fresh.load_basis(&b);
        assert_eq!(fresh.solve(100), LpStatus::Optimal);
        assert!((fresh.objective() - 7.0).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Random feasible LPs: the reported optimum satisfies all rows and
            // is no worse than a known feasible point.
            #[test]
            fn optimum_feasible_and_no_worse(
                rows in proptest::collection::vec(proptest::collection::vec(-3i32..4, 4), 1..6),
                cost in proptest::collection::vec(-2i32..4, 4),
                point in proptest::collection::vec(0u8..5, 4),
            ) {
                let mut m = LinearModel::new();
                let v: Vec<_> = (0..4).map(|i| m.continuous(format!("v{i}"), 0.0, 5.0)).collect();
                for (k, r) in rows.iter().enumerate() {
                    let mut e = LinExpr::new();
                    let mut at = 0.0;
                    for i in 0..4 {
                        e.add_term(v[i], r[i] as f64);
                        at += r[i] as f64 * point[i] as f64;
                    }
                    m.le(format!("r{k}"), e, at);
                }
                let mut obj = LinExpr::new();
                for i in 0..4 {
                    obj.add_term(v[i], cost[i] as f64);
                }
                m.set_objective(obj.clone());
                let (s, val, x) = solve(&m);
                prop_assert_eq!(s, LpStatus::Optimal);
                prop_assert!(m.max_violation(&x) < 1e-6);
                let p: Vec<f64> = point.iter().map(|&q| q as f64).collect();
                prop_assert!(val <= obj.eval(&p) + 1e-6);
            }
        }
    }
}
