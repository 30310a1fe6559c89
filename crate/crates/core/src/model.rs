//! The optimisation model for the cheapest manipulation realising an order.
//!
//! Ballots are aggregated into classes of rankings that route identically
//! through the order's rounds. Each class gets an integer number of added
//! and removed ballots; tallies, quota indicators and surplus transfers are
//! then expressed over the class values. Surplus transfers multiply a class
//! value by the round's transfer value, the only nonlinearity. Exact mode
//! keeps those products and solves them by partition refinement checked
//! against a real count; the relaxed modes replace them with envelopes and
//! give lower bounds only.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Duration;

use milp::{LinExpr, LinearModel, Limits, Relaxation, RefineOptions, SolveResult, Status, VarId, Verifier};
use serde::{Deserialize, Serialize};

use crate::count::Contest;
use crate::election::{apply_manipulation, CandidateId, CandidateOrder, Election, Manipulation, Signature};
use crate::routes::{Plan, PlanError, Route, RoundKind};

/// How the transfer-value products are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "segments")]
pub enum Mode {
    Exact,
    McCormick,
    /// Uniform partition of every transfer value into this many segments.
    Piecewise(usize),
}

impl Mode {
    pub fn is_exact(self) -> bool {
        self == Mode::Exact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub mode: Mode,
    /// Model runs of consecutive eliminations as single rounds.
    pub grouped: bool,
    /// Gap below the quota that counts as "short of a quota".
    pub epsilon: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            mode: Mode::Exact,
            grouped: false,
            epsilon: 1e-3,
        }
    }
}

/// Rankings that route the same way through a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EquivalenceClass {
    pub route: Route,
    /// Ranking used for added ballots.
    pub representative: Signature,
    /// Cast rankings in the class with their counts.
    pub members: Vec<(Signature, u64)>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EquivalenceClasses {
    pub classes: Vec<EquivalenceClass>,
}

impl EquivalenceClasses {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Index of the class containing `ranking`, if it was classified.
    pub fn class_of(&self, plan: &Plan, ranking: &[CandidateId]) -> Option<usize> {
        let r = plan.route(ranking);
        self.classes.iter().position(|c| c.route == r)
    }
}

/// Classes over the cast rankings and every holder ranking of the plan.
pub fn equivalence_classes(election: &Election, plan: &Plan) -> EquivalenceClasses {
    let mut by_route: BTreeMap<Route, EquivalenceClass> = BTreeMap::new();
    let mut note = |s: &Signature, n: u64| {
        let route = plan.route(s.ranking());
        let e = by_route.entry(route.clone()).or_insert_with(|| EquivalenceClass {
            route,
            representative: s.clone(),
            members: Vec::new(),
            count: 0,
        });
        if n > 0 {
            e.members.push((s.clone(), n));
            e.count += n;
        }
        if s.len() < e.representative.len() {
            e.representative = s.clone();
        }
    };
    for (s, n) in election.profile.iter() {
        note(s, n);
    }
    for s in plan.holder_rankings() {
        note(&s, 0);
    }
    EquivalenceClasses {
        classes: by_route.into_values().collect(),
    }
}

/// Structural view of an order with runs of eliminations collapsed.
pub fn group_eliminations(order: &CandidateOrder) -> Vec<RoundKind> {
    let mut out: Vec<RoundKind> = Vec::new();
    for s in &order.steps {
        match (s.action, out.last_mut()) {
            (crate::election::Action::Eliminated, Some(RoundKind::Eliminate(block))) => block.push(s.candidate),
            (crate::election::Action::Eliminated, _) => out.push(RoundKind::Eliminate(vec![s.candidate])),
            (crate::election::Action::Elected, _) => out.push(RoundKind::Elect(s.candidate)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("relaxation failed: {0}")]
    Relaxation(String),
}

/// A built model plus what is needed to read manipulations back out of it.
#[derive(Debug, Clone)]
pub struct DistanceModel {
    pub options: ModelOptions,
    pub plan: Plan,
    pub classes: EquivalenceClasses,
    /// The model with its products kept.
    pub exact: LinearModel,
    /// The model handed to the solver in relaxed modes.
    pub relaxed: Option<LinearModel>,
    pub additions: Vec<VarId>,
    pub removals: Vec<Option<VarId>>,
    pub upper_bound: u64,
}

struct Builder {
    lp: LinearModel,
    eps: f64,
    total: f64,
    quota: f64,
    /// Conjunction binaries shared between classes with the same chain.
    conj: HashMap<(usize, Vec<CandidateId>), VarId>,
    q: Vec<BTreeMap<CandidateId, VarId>>,
}

impl Builder {
    /// 0/1 expression that is 1 when the ballot lands on `chain[t]`: every
    /// earlier entry holds a quota and `chain[t]` does not.
    fn lands(&mut self, j: usize, chain: &[CandidateId], t: usize) -> LinExpr {
        let qj = &self.q[j];
        let qv = |c: CandidateId| qj.get(&c).copied();
        let last = qv(chain[t]);
        if t == 0 {
            return match last {
                Some(v) => LinExpr::constant(1.0) - v,
                None => LinExpr::constant(1.0),
            };
        }
        let key = (j, chain[..=t].to_vec());
        if let Some(&b) = self.conj.get(&key) {
            return LinExpr::from(b);
        }
        let name = format!(
            "b_{j}_{}",
            chain[..=t].iter().map(|c| c.to_string()).collect::<Vec<_>>().join("_")
        );
        let b = self.lp.binary(name.clone());
        let mut lower = LinExpr::from(b);
        for &c in &chain[..t] {
            let qc = qv(c).expect("jumped candidates are skippable");
            self.lp.le(format!("{name}_p{c}"), b, qc);
            lower -= LinExpr::from(qc);
        }
        if let Some(ql) = last {
            self.lp.le(format!("{name}_n"), LinExpr::from(b) + ql, 1.0);
            lower += LinExpr::from(ql);
        }
        // b is 1 once every factor is.
        self.lp.ge(format!("{name}_all"), lower, 1.0 - t as f64);
        self.conj.insert(key, b);
        LinExpr::from(b)
    }
}

pub fn build_distance_model(
    election: &Election,
    order: &CandidateOrder,
    upper_bound: u64,
    options: ModelOptions,
) -> Result<DistanceModel, BuildError> {
    let n = election.num_candidates();
    let plan = Plan::new(n, election.seats, order, options.grouped)?;
    let classes = equivalence_classes(election, &plan);
    let ub = upper_bound as f64;
    let mut b = Builder {
        lp: LinearModel::new(),
        eps: options.epsilon,
        total: election.total() as f64,
        quota: election.quota as f64,
        conj: HashMap::new(),
        q: vec![BTreeMap::new(); plan.len()],
    };
    let (total, quota, eps) = (b.total, b.quota, b.eps);

    let mut additions = Vec::new();
    let mut removals = Vec::new();
    let mut holdings: Vec<BTreeMap<CandidateId, LinExpr>> = Vec::new();
    let mut caps = Vec::new();
    let mut balance = LinExpr::new();
    for (i, c) in classes.classes.iter().enumerate() {
        let p = b.lp.integer(format!("p_s{i}"), 0.0, ub);
        let mut y = LinExpr::constant(c.count as f64) + p;
        balance -= LinExpr::from(p);
        let m = (c.count > 0).then(|| {
            let m = b.lp.integer(format!("m_s{i}"), 0.0, (c.count as f64).min(ub));
            y -= LinExpr::from(m);
            balance += LinExpr::from(m);
            m
        });
        additions.push(p);
        removals.push(m);
        caps.push(((c.count as f64) + ub).min(total + ub));
        let mut h = BTreeMap::new();
        if let Some(&first) = c.route.rounds.first().and_then(|r| r.holders.first()) {
            h.insert(first, y);
        }
        holdings.push(h);
    }
    b.lp.eq("balance", balance, 0.0);
    b.lp.set_objective(LinExpr::sum(additions.iter().copied()));

    let mut prev_q: BTreeMap<CandidateId, VarId> = BTreeMap::new();
    let mut tallies: Vec<BTreeMap<CandidateId, VarId>> = Vec::new();
    for (j, round) in plan.rounds.iter().enumerate() {
        let mut v = BTreeMap::new();
        for &k in &round.standing {
            let var = b.lp.continuous(format!("v_{k}_{j}"), 0.0, total);
            let sum = holdings
                .iter()
                .filter_map(|h| h.get(&k))
                .fold(LinExpr::new(), |acc, e| acc + e.clone());
            b.lp.eq(format!("tally_{k}_{j}"), LinExpr::from(var) - sum, 0.0);
            v.insert(k, var);
        }
        tallies.push(v.clone());

        match &round.kind {
            RoundKind::Elect(a) => {
                let a = *a;
                b.lp.ge(format!("quota_{j}"), v[&a], quota);
                for &k in round.standing.iter().filter(|&&k| k != a) {
                    b.lp.ge(format!("most_{j}_{k}"), LinExpr::from(v[&a]) - v[&k], 0.0);
                }
                if round.transfers {
                    for &k in round.standing.iter().filter(|&&k| plan.skippable(j, k)) {
                        let qk = b.lp.binary(format!("q_{k}_{j}"));
                        b.lp.ge(format!("qlo_{k}_{j}"), LinExpr::from(v[&k]) - LinExpr::term(qk, quota), 0.0);
                        b.lp.le(
                            format!("qhi_{k}_{j}"),
                            LinExpr::from(v[&k]) - LinExpr::term(qk, total - quota + eps),
                            quota - eps,
                        );
                        if let Some(&before) = prev_q.get(&k) {
                            b.lp.le(format!("qkeep_{k}_{j}"), before, qk);
                        }
                        b.q[j].insert(k, qk);
                    }
                    prev_q = b.q[j].clone();
                    surplus_transfer(&mut b, j, a, v[&a], &classes, &mut holdings, &caps);
                }
                for h in holdings.iter_mut() {
                    h.remove(&a);
                }
            }
            RoundKind::Eliminate(block) => {
                for &k in &round.standing {
                    b.lp.le(format!("short_{k}_{j}"), v[&k], quota - eps);
                }
                if round.transfers {
                    for (i, c) in classes.classes.iter().enumerate() {
                        for mv in &c.route.rounds[j].moves {
                            if let Some(e) = holdings[i].remove(&mv.from) {
                                if let Some(&to) = mv.chain.first() {
                                    *holdings[i].entry(to).or_default() += e;
                                }
                            }
                        }
                    }
                }
                for h in holdings.iter_mut() {
                    for g in block {
                        h.remove(g);
                    }
                }
                let survivors: Vec<CandidateId> =
                    round.standing.iter().copied().filter(|k| !block.contains(k)).collect();
                if block.len() == 1 {
                    for &t in &survivors {
                        b.lp.le(format!("least_{j}_{t}"), LinExpr::from(v[&block[0]]) - v[&t], 0.0);
                    }
                } else {
                    // Each member is compared against the survivors' tallies
                    // once the whole block has been distributed.
                    for &t in &survivors {
                        let end = holdings
                            .iter()
                            .filter_map(|h| h.get(&t))
                            .fold(LinExpr::new(), |acc, e| acc + e.clone());
                        for &g in block {
                            b.lp.le(format!("least_{j}_{g}_{t}"), LinExpr::from(v[&g]) - end.clone(), 0.0);
                        }
                    }
                }
            }
        }
    }

    let exact = b.lp;
    let relaxed = match options.mode {
        Mode::Exact => None,
        Mode::McCormick => Some(milp::relax(&exact, &Relaxation::McCormick)),
        Mode::Piecewise(k) => Some(milp::relax(&exact, &Relaxation::Piecewise(k.max(1)))),
    }
    .transpose()
    .map_err(|e| BuildError::Relaxation(e.to_string()))?;
    Ok(DistanceModel {
        options,
        plan,
        classes,
        exact,
        relaxed,
        additions,
        removals,
        upper_bound,
    })
}

/// Surplus distribution of round `j`'s electee `a`.
fn surplus_transfer(
    b: &mut Builder,
    j: usize,
    a: CandidateId,
    va: VarId,
    classes: &EquivalenceClasses,
    holdings: &mut [BTreeMap<CandidateId, LinExpr>],
    caps: &[f64],
) {
    let total = b.total;
    let tau = b.lp.continuous(format!("tau_{j}"), 0.0, 1.0);
    let kappa = b.lp.binary(format!("kappa_{j}"));
    let mut rho = LinExpr::new();
    let mut dist = LinExpr::new();
    let mut inflow: Vec<Vec<(CandidateId, VarId)>> = vec![Vec::new(); classes.len()];
    for (i, c) in classes.classes.iter().enumerate() {
        let Some(mv) = c.route.rounds[j].moves.iter().find(|m| m.from == a) else {
            continue;
        };
        let Some(x) = holdings[i].get(&a).cloned() else { continue };
        let cap = caps[i];
        for (t, &dest) in mv.chain.iter().enumerate() {
            let g = b.lp.continuous(format!("g_{j}_{i}_{dest}"), 0.0, cap);
            let lands = b.lands(j, &mv.chain, t);
            if lands.is_constant() {
                b.lp.eq(format!("gall_{j}_{i}_{dest}"), LinExpr::from(g) - x.clone(), 0.0);
            } else {
                b.lp.le(format!("gx_{j}_{i}_{dest}"), LinExpr::from(g) - x.clone(), 0.0);
                b.lp.le(format!("gon_{j}_{i}_{dest}"), LinExpr::from(g) - lands.clone() * cap, 0.0);
                b.lp.ge(
                    format!("goff_{j}_{i}_{dest}"),
                    LinExpr::from(g) - x.clone() - lands * cap,
                    -cap,
                );
            }
            let d = b.lp.continuous(format!("d_{j}_{i}_{dest}"), 0.0, cap);
            b.lp.add_bilinear(d, tau, g);
            rho += LinExpr::from(g);
            dist += LinExpr::from(d);
            inflow[i].push((dest, d));
        }
    }
    let surplus = LinExpr::from(va) - b.quota;
    let m = total;
    b.lp.le(format!("dist_rho_{j}"), dist.clone() - rho.clone(), 0.0);
    b.lp.le(format!("dist_surplus_{j}"), dist.clone() - surplus.clone(), 0.0);
    b.lp.ge(format!("dist_all_{j}"), dist.clone() - rho - LinExpr::term(kappa, m), -m);
    b.lp.ge(format!("dist_cap_{j}"), dist - surplus + LinExpr::term(kappa, m), 0.0);
    b.lp.ge(format!("tau_cap_{j}"), LinExpr::from(tau) - kappa, 0.0);
    for (i, list) in inflow.into_iter().enumerate() {
        for (dest, d) in list {
            *holdings[i].entry(dest).or_default() += LinExpr::from(d);
        }
    }
}

impl DistanceModel {
    /// The model the solver sees in this mode.
    pub fn solver_model(&self) -> &LinearModel {
        self.relaxed.as_ref().unwrap_or(&self.exact)
    }

    /// Reads the class additions and removals of a solution as a
    /// manipulation of concrete rankings.
    pub fn manipulation(&self, x: &[f64]) -> Manipulation {
        let mut m = Manipulation::new();
        for (i, c) in self.classes.classes.iter().enumerate() {
            let p = x[self.additions[i].0].round().max(0.0) as u64;
            if p > 0 {
                m.add(c.representative.clone(), p);
            }
            if let Some(rv) = self.removals[i] {
                let mut left = x[rv.0].round().max(0.0) as u64;
                let mut members = c.members.clone();
                members.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                for (s, cnt) in members {
                    if left == 0 {
                        break;
                    }
                    let t = cnt.min(left);
                    m.remove(s, t);
                    left -= t;
                }
            }
        }
        m.normalized()
    }

    pub fn solve(&self, election: &Election, order: &CandidateOrder, limits: &Limits) -> Evaluation {
        let result = if let Some(r) = &self.relaxed {
            milp::branch_and_bound(r, limits)
        } else {
            let mut verifier = OrderVerifier {
                election,
                order,
                model: self,
            };
            milp::solve_exact(&self.exact, limits, &RefineOptions::default(), &mut verifier)
        };
        match result {
            Ok(r) => Evaluation::from_result(self, r),
            Err(e) => {
                log::warn!("model rejected by the solver: {e}");
                Evaluation {
                    status: Status::StalledWithBound,
                    bound: 0,
                    incumbent: None,
                    manipulation: None,
                    nodes: 0,
                }
            }
        }
    }
}

impl DistanceModel {
    /// Hands the linear model to an external program. Its bound is taken
    /// on trust.
    pub fn solve_external(&self, program: &Path) -> Result<Evaluation, milp::ExternalError> {
        let model = self.relaxed.as_ref().unwrap_or(&self.exact);
        Ok(Evaluation::from_result(self, milp::solve_external(model, program)?))
    }
}

/// Accepts a point when its manipulation makes the count follow the order.
struct OrderVerifier<'a> {
    election: &'a Election,
    order: &'a CandidateOrder,
    model: &'a DistanceModel,
}

impl Verifier for OrderVerifier<'_> {
    fn verify(&mut self, model: &LinearModel, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let m = self.model.manipulation(x);
        let profile = apply_manipulation(&self.election.profile, &m).ok()?;
        let e = self.election;
        let contest = Contest::new(e.num_candidates(), e.seats, e.quota, &profile);
        contest
            .realizes(self.order)
            .then(|| (m.size() as f64, x[..model.num_vars()].to_vec()))
    }
}

/// Result of solving one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evaluation {
    #[serde(serialize_with = "status_name")]
    pub status: Status,
    /// Proven lower bound on the distance, `u64::MAX` when infeasible.
    pub bound: u64,
    pub incumbent: Option<u64>,
    pub manipulation: Option<Manipulation>,
    pub nodes: u64,
}

fn status_name<S: serde::Serializer>(s: &Status, ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_str(status_str(*s))
}

pub fn status_str(s: Status) -> &'static str {
    match s {
        Status::Optimal => "optimal",
        Status::Infeasible => "infeasible",
        Status::StalledWithBound => "stalled",
        Status::TimeLimit => "time-limit",
    }
}

impl Evaluation {
    fn from_result(dm: &DistanceModel, r: SolveResult) -> Evaluation {
        let bound = if r.bound.is_infinite() && r.bound > 0.0 {
            u64::MAX
        } else if r.bound <= 0.0 {
            0
        } else {
            (r.bound - 1e-6).ceil() as u64
        };
        let manipulation = r.assignment.as_ref().map(|x| dm.manipulation(x));
        Evaluation {
            status: r.status,
            bound,
            incumbent: r.incumbent.map(|v| v.round() as u64),
            manipulation,
            nodes: r.nodes,
        }
    }

    pub fn is_proven(&self) -> bool {
        matches!(self.status, Status::Optimal | Status::Infeasible)
    }
}

/// Builds and solves in one go; unrealisable orders come back infeasible.
pub fn evaluate(
    election: &Election,
    order: &CandidateOrder,
    upper_bound: u64,
    options: ModelOptions,
    limits: &Limits,
) -> Evaluation {
    match build_distance_model(election, order, upper_bound, options) {
        Ok(dm) => dm.solve(election, order, limits),
        Err(BuildError::Plan(_)) => Evaluation {
            status: Status::Infeasible,
            bound: u64::MAX,
            incumbent: None,
            manipulation: None,
            nodes: 0,
        },
        Err(e) => {
            log::warn!("{e}");
            Evaluation {
                status: Status::StalledWithBound,
                bound: 0,
                incumbent: None,
                manipulation: None,
                nodes: 0,
            }
        }
    }
}

/// Default limits for a single model solve.
pub fn default_limits(stall: Duration) -> Limits {
    Limits {
        stall_time: Some(stall),
        ..Limits::default()
    }
}
