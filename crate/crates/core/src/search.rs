//! Best-first search over election/elimination orders.
//!
//! Every order that elects a set other than the original winners is a way
//! of changing the outcome; the margin is the cheapest of them. Partial
//! orders are scored with lower bounds (the prefix rule and the model) and
//! expanded cheapest first. The upper bound only moves when a concrete
//! manipulation is counted and shown to change the outcome, so it is always
//! backed by a certificate.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use milp::{Limits, Status};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{changes_outcome, initial_upper_bound, prefix_lower_bound, BoundSource};
use crate::count::{run_count, Contest, CountResult, TiePolicy};
use crate::election::{
    apply_manipulation, Action, CandidateId, CandidateOrder, Election, Manipulation, ManipulationError, Step,
};
use crate::model::{build_distance_model, status_str, BuildError, Evaluation, Mode, ModelOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: Mode,
    /// Model runs of consecutive eliminations as one round.
    pub grouped: bool,
    pub use_rule_lb: bool,
    /// Frontier entries expanded together.
    pub parallel: usize,
    /// Rounds of the original count every explored order must reproduce.
    pub fix_rounds: usize,
    pub wall_limit: Option<Duration>,
    /// Per-model limit on time without a better incumbent.
    pub stall_limit: Option<Duration>,
    pub epsilon: f64,
    /// Replaces the closed-form starting bound; meant for experiments.
    pub initial_upper_bound: Option<u64>,
    /// External program for relaxed models; exact models stay in-process.
    pub external_solver: Option<PathBuf>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            mode: Mode::Exact,
            grouped: false,
            use_rule_lb: true,
            parallel: 1,
            fix_rounds: 0,
            wall_limit: None,
            stall_limit: Some(Duration::from_secs(30)),
            epsilon: 1e-3,
            initial_upper_bound: None,
            external_solver: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    pub models_solved: u64,
    /// Solves stopped by a limit before settling.
    pub unsettled: u64,
    pub pruned_by_rule: u64,
    pub expanded: u64,
    pub invalid: u64,
    pub solver_nodes: u64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundEvent {
    pub elapsed_ms: u128,
    pub lower: u64,
    pub upper: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fate {
    Frontier,
    Pruned,
    /// A complete order whose value was not settled; it keeps its bound.
    Blocked,
    Settled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrderRecord {
    pub order: CandidateOrder,
    pub rule_lb: Option<u64>,
    pub model_status: Option<&'static str>,
    pub model_lb: Option<u64>,
    pub lb: u64,
    pub fate: Fate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MarginResult {
    pub lower: u64,
    pub upper: u64,
    /// The bounds met with every model settled.
    pub exact: bool,
    /// Bounds hold only for counts that reproduce a fixed prefix.
    pub conditional: bool,
    pub certificate: Manipulation,
    pub upper_source: BoundSource,
    pub winners: BTreeSet<CandidateId>,
    pub stats: SearchStats,
    pub history: Vec<BoundEvent>,
    /// Only the first few thousand evaluations are kept.
    pub evaluations: Vec<OrderRecord>,
    pub timed_out: bool,
}

const MAX_RECORDS: usize = 5000;

/// Whether exploring `order` can lead to a different elected set.
pub fn is_valid_order(order: &CandidateOrder, winners: &BTreeSet<CandidateId>, seats: usize, num_candidates: usize) -> bool {
    if order.num_elected() > seats {
        return false;
    }
    let done = complete_order(order, seats, num_candidates);
    !(done.len() == num_candidates && done.elected() == *winners)
}

/// Appends the steps every count starting with `order` must take: once the
/// seats are filled the rest are eliminated, and once the standing
/// candidates exactly fill the open seats they are all elected.
pub fn complete_order(order: &CandidateOrder, seats: usize, num_candidates: usize) -> CandidateOrder {
    let rest = order.unmentioned(num_candidates);
    let elected = order.num_elected();
    let mut out = order.clone();
    if elected >= seats {
        out.steps.extend(rest.into_iter().map(Step::eliminate));
    } else if rest.len() <= seats - elected {
        out.steps.extend(rest.into_iter().map(Step::elect));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PrefixError {
    #[error("cannot fix {requested} rounds of a count with {rounds} rounds")]
    TooManyRounds { requested: usize, rounds: usize },
}

/// Orders allowed when the first rounds of the original count are kept:
/// electees stay in their positions and the window's eliminations may come
/// in any order within it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixedPrefix {
    pub rounds: usize,
    pub steps: Vec<Step>,
    pub eliminated: BTreeSet<CandidateId>,
}

impl FixedPrefix {
    pub fn allows(&self, order: &CandidateOrder) -> bool {
        order.steps.iter().zip(&self.steps).all(|(got, want)| match want.action {
            Action::Elected => got == want,
            Action::Eliminated => got.action == Action::Eliminated && self.eliminated.contains(&got.candidate),
        })
    }
}

pub fn fix_prefix(count: &CountResult, rounds: usize) -> Result<FixedPrefix, PrefixError> {
    if rounds >= count.rounds.len() && rounds > 0 {
        return Err(PrefixError::TooManyRounds {
            requested: rounds,
            rounds: count.rounds.len(),
        });
    }
    let steps: Vec<Step> = count.rounds[..rounds].iter().flat_map(|r| r.steps.iter().copied()).collect();
    let eliminated = steps
        .iter()
        .filter(|s| s.action == Action::Eliminated)
        .map(|s| s.candidate)
        .collect();
    Ok(FixedPrefix {
        rounds,
        steps,
        eliminated,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verification {
    pub realized: CandidateOrder,
    pub elected: BTreeSet<CandidateId>,
    /// The deterministic count elects a different set.
    pub engine_changed: bool,
    /// Some resolution of ties elects a different set.
    pub changed: bool,
    pub certified_ub: Option<u64>,
}

/// Counts the manipulated election and reports whether the outcome moved.
pub fn verify_manipulation(
    election: &Election,
    winners: &BTreeSet<CandidateId>,
    m: &Manipulation,
) -> Result<Verification, ManipulationError> {
    let profile = apply_manipulation(&election.profile, m)?;
    let changed_election = election.with_profile(profile);
    let count = run_count(&changed_election, TiePolicy::LowestIndex);
    let changed = Contest::of(&changed_election).can_change(winners);
    Ok(Verification {
        realized: count.order,
        engine_changed: count.elected != *winners,
        elected: count.elected,
        changed,
        certified_ub: changed.then(|| m.size()),
    })
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Key(u64, usize, CandidateOrder);

struct Scored {
    order: CandidateOrder,
    complete: bool,
    rule_lb: Option<u64>,
    eval: Option<Evaluation>,
    lb: u64,
}

struct Search<'a> {
    election: &'a Election,
    winners: BTreeSet<CandidateId>,
    config: SearchConfig,
    prefix: Option<FixedPrefix>,
    start: Instant,
}

impl Search<'_> {
    fn deadline_passed(&self) -> bool {
        self.config.wall_limit.is_some_and(|w| self.start.elapsed() >= w)
    }

    fn limits(&self, ub: u64) -> Limits {
        Limits {
            wall_time: self.config.wall_limit.map(|w| w.saturating_sub(self.start.elapsed())),
            stall_time: self.config.stall_limit,
            objective_cutoff: Some(ub as f64),
            max_nodes: None,
        }
    }

    /// Bounds one order; `None` when it is not worth keeping.
    fn score(&self, order: CandidateOrder, ub: u64) -> Option<Scored> {
        let n = self.election.num_candidates();
        let seats = self.election.seats;
        let order = complete_order(&order, seats, n);
        let complete = order.len() == n;
        let mut rule_lb = None;
        if self.config.use_rule_lb {
            match prefix_lower_bound(self.election, &order) {
                Ok(b) => rule_lb = Some(b.lb),
                Err(_) => return None,
            }
            if rule_lb >= Some(ub) {
                return Some(Scored {
                    order,
                    complete,
                    rule_lb,
                    eval: None,
                    lb: rule_lb.unwrap(),
                });
            }
        }
        let opts = ModelOptions {
            mode: self.config.mode,
            grouped: self.config.grouped,
            epsilon: self.config.epsilon,
        };
        let eval = match build_distance_model(self.election, &order, ub, opts) {
            Ok(dm) => match &self.config.external_solver {
                Some(program) if !self.config.mode.is_exact() => match dm.solve_external(program) {
                    Ok(ev) => ev,
                    Err(e) => {
                        // Keep the order open; its subtree must still be covered.
                        log::warn!("{e}");
                        Evaluation {
                            status: Status::StalledWithBound,
                            bound: 0,
                            incumbent: None,
                            manipulation: None,
                            nodes: 0,
                        }
                    }
                },
                _ => dm.solve(self.election, &order, &self.limits(ub)),
            },
            Err(BuildError::Plan(_)) => return None,
            Err(e) => {
                log::warn!("{e}");
                return None;
            }
        };
        let lb = eval.bound.max(rule_lb.unwrap_or(0));
        Some(Scored {
            order,
            complete,
            rule_lb,
            eval: Some(eval),
            lb,
        })
    }
}

struct State {
    ub: u64,
    certificate: Manipulation,
    source: BoundSource,
    frontier: BinaryHeap<Reverse<Key>>,
    blocked: Vec<u64>,
    stats: SearchStats,
    history: Vec<BoundEvent>,
    records: Vec<OrderRecord>,
}

impl State {
    fn lower(&self) -> u64 {
        let f = self.frontier.peek().map_or(u64::MAX, |Reverse(k)| k.0);
        let b = self.blocked.iter().copied().min().unwrap_or(u64::MAX);
        self.ub.min(f).min(b)
    }

    fn note(&mut self, start: Instant) {
        let lower = self.lower();
        let upper = self.ub;
        if self.history.last().map_or(true, |h| h.lower != lower || h.upper != upper) {
            self.history.push(BoundEvent {
                elapsed_ms: start.elapsed().as_millis(),
                lower,
                upper,
            });
        }
    }

    fn absorb(&mut self, s: &Search<'_>, sc: Scored) {
        let mut fate;
        if let Some(ev) = &sc.eval {
            self.stats.models_solved += 1;
            self.stats.solver_nodes += ev.nodes;
            if !ev.is_proven() {
                self.stats.unsettled += 1;
            }
            if let Some(m) = &ev.manipulation {
                let size = m.size();
                if size < self.ub && changes_outcome(s.election, &s.winners, m) {
                    self.ub = size;
                    self.certificate = m.clone();
                    self.source = BoundSource::Search;
                    self.blocked.retain(|&b| b < size);
                }
            }
        } else {
            self.stats.pruned_by_rule += 1;
        }
        if sc.lb >= self.ub {
            fate = Fate::Pruned;
        } else if sc.complete {
            // A complete order below the bound whose own optimum did not
            // certify anything stays as an open bound.
            let settled = sc.eval.as_ref().is_some_and(|e| {
                e.status == Status::Optimal && s.config.mode.is_exact() && e.incumbent.is_some_and(|v| v >= self.ub)
            });
            fate = if settled { Fate::Settled } else { Fate::Blocked };
            if fate == Fate::Blocked {
                self.blocked.push(sc.lb);
            }
        } else {
            fate = Fate::Frontier;
            self.frontier.push(Reverse(Key(sc.lb, sc.order.len(), sc.order.clone())));
        }
        if sc.complete && fate == Fate::Pruned {
            fate = Fate::Settled;
        }
        if self.records.len() < MAX_RECORDS {
            self.records.push(OrderRecord {
                order: sc.order,
                rule_lb: sc.rule_lb,
                model_status: sc.eval.as_ref().map(|e| status_str(e.status)),
                model_lb: sc.eval.as_ref().map(|e| e.bound),
                lb: sc.lb,
                fate,
            });
        }
    }
}

/// Margin of victory bounds for `election`.
pub fn margin_stv(election: &Election, config: &SearchConfig) -> Result<MarginResult, PrefixError> {
    let start = Instant::now();
    let count = run_count(election, TiePolicy::LowestIndex);
    let winners = election.winners.clone().unwrap_or_else(|| count.elected.clone());
    let prefix = (config.fix_rounds > 0)
        .then(|| fix_prefix(&count, config.fix_rounds))
        .transpose()?;
    let mut initial = initial_upper_bound(election, &count);
    if let Some(u) = config.initial_upper_bound.filter(|&u| u < initial.value) {
        initial.value = u;
    }
    let search = Search {
        election,
        winners: winners.clone(),
        config: config.clone(),
        prefix,
        start,
    };
    let mut st = State {
        ub: initial.value,
        certificate: initial.certificate,
        source: initial.source,
        frontier: BinaryHeap::new(),
        blocked: Vec::new(),
        stats: SearchStats::default(),
        history: Vec::new(),
        records: Vec::new(),
    };
    st.note(start);

    let n = election.num_candidates();
    let seeds: Vec<CandidateOrder> = (0..n)
        .flat_map(|c| [Step::eliminate(c), Step::elect(c)])
        .map(|s| CandidateOrder::new(vec![s]))
        .collect();
    let mut timed_out = false;
    let mut batch: Vec<CandidateOrder> = seeds;
    loop {
        let children = candidates(&search, &mut st, batch);
        let ub = st.ub;
        let threads = config.parallel.max(1);
        let scored: Vec<Option<Scored>> = if threads > 1 {
            children.into_par_iter().map(|o| search.score(o, ub)).collect()
        } else {
            children.into_iter().map(|o| search.score(o, ub)).collect()
        };
        for sc in scored.into_iter().flatten() {
            st.absorb(&search, sc);
        }
        st.note(start);
        if search.deadline_passed() {
            timed_out = !st.frontier.is_empty();
            break;
        }
        batch = Vec::new();
        while batch.len() < threads {
            match st.frontier.pop() {
                Some(Reverse(Key(lb, _, o))) if lb < st.ub => {
                    st.stats.expanded += 1;
                    batch.push(o);
                }
                Some(_) => st.frontier.clear(),
                None => break,
            }
        }
        if batch.is_empty() {
            break;
        }
        batch = batch
            .into_iter()
            .flat_map(|o| {
                o.unmentioned(n)
                    .into_iter()
                    .flat_map(move |c| [Step::eliminate(c), Step::elect(c)])
                    .map(move |s| o.extended(s))
            })
            .collect();
    }

    let lower = st.lower();
    let exact = st.frontier.is_empty() && st.blocked.is_empty() && !timed_out;
    st.stats.wall_ms = start.elapsed().as_millis();
    st.note(start);
    Ok(MarginResult {
        lower,
        upper: st.ub,
        exact,
        conditional: search.prefix.is_some(),
        certificate: st.certificate,
        upper_source: st.source,
        winners,
        stats: st.stats,
        history: st.history,
        evaluations: st.records,
        timed_out,
    })
}

/// Drops children that cannot change the outcome or leave the fixed prefix.
fn candidates(search: &Search<'_>, st: &mut State, batch: Vec<CandidateOrder>) -> Vec<CandidateOrder> {
    let e = search.election;
    let mut out = Vec::new();
    for o in batch {
        if !is_valid_order(&o, &search.winners, e.seats, e.num_candidates()) {
            st.stats.invalid += 1;
            continue;
        }
        if search.prefix.as_ref().is_some_and(|p| !p.allows(&o)) {
            continue;
        }
        out.push(o);
    }
    out
}
