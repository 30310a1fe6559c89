//! Cheap bounds on the margin.
//!
//! Upper bounds come from two hand-built manipulations: pushing an eventual
//! winner below the candidate eliminated in some round, and topping up a
//! loser's first preferences to a quota. The search only trusts a bound once
//! a simulated count confirms the outcome changes, see [`initial_upper_bound`].
//! The lower-bound rule works from the ballots that can possibly sit in each
//! tally along a prefix.

use std::collections::BTreeSet;

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::count::{CountResult, Contest};
use crate::election::{Action, CandidateId, CandidateOrder, Election, Manipulation, Signature, Step};
use crate::routes::{Plan, PlanError};

/// Variant of the half rule used by [`winner_elimination_ub_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HalfRule {
    /// Moving `ceil((w - v) / 2)` votes from the winner to the eliminated
    /// candidate, admissible when the winner still ends up lowest.
    #[default]
    Corrected,
    /// `ceil(w - v / 2)`, admissible when it does not exceed any other
    /// standing tally. Kept for comparison with published figures.
    Literal,
}

/// One way of dropping a winner out of the count, with its cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinnerDrop {
    /// 1-based round of the original count.
    pub round: usize,
    pub eliminated: CandidateId,
    pub winner: CandidateId,
    pub votes: u64,
}

fn ceil_u64(r: &BigRational) -> u64 {
    if r.is_negative() {
        0
    } else {
        r.ceil().to_integer().to_u64().unwrap_or(u64::MAX)
    }
}

/// Every winner-drop move the bound considers, cheapest first.
pub fn winner_drops(count: &CountResult, rule: HalfRule) -> Vec<WinnerDrop> {
    let two = BigRational::from_integer(2.into());
    let mut out = Vec::new();
    for rec in &count.rounds {
        let [Step {
            candidate: cj,
            action: Action::Eliminated,
        }] = rec.steps[..]
        else {
            continue;
        };
        let Some(vj) = rec.tallies[cj].clone() else { continue };
        for &w in &count.elected {
            let Some(wj) = rec.tallies[w].clone() else { continue };
            let gap = &wj - &vj;
            out.push(WinnerDrop {
                round: rec.round,
                eliminated: cj,
                winner: w,
                votes: ceil_u64(&gap),
            });
            let others: Vec<&BigRational> = rec
                .tallies
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != cj && c != w)
                .filter_map(|(_, t)| t.as_ref())
                .collect();
            match rule {
                HalfRule::Corrected => {
                    let half = ceil_u64(&(&gap / &two));
                    let after = &wj - BigRational::from_integer(half.into());
                    if others.iter().all(|t| after <= **t) {
                        out.push(WinnerDrop {
                            round: rec.round,
                            eliminated: cj,
                            winner: w,
                            votes: half,
                        });
                    }
                }
                HalfRule::Literal => {
                    let val = ceil_u64(&(&wj - &vj / &two));
                    let as_r = BigRational::from_integer(val.into());
                    if others.iter().chain(std::iter::once(&&wj)).all(|t| as_r <= **t) {
                        out.push(WinnerDrop {
                            round: rec.round,
                            eliminated: cj,
                            winner: w,
                            votes: val,
                        });
                    }
                }
            }
        }
    }
    out.sort_by_key(|d| (d.votes, d.round, d.winner));
    out
}

/// Winner elimination upper bound with the corrected half rule.
pub fn winner_elimination_ub(election: &Election, count: &CountResult) -> u64 {
    winner_elimination_ub_with(election, count, HalfRule::Corrected)
}

pub fn winner_elimination_ub_with(election: &Election, count: &CountResult, rule: HalfRule) -> u64 {
    winner_drops(count, rule)
        .first()
        .map_or(election.total(), |d| d.votes.min(election.total()))
}

/// Smallest top-up that gives some loser a quota of first preferences.
pub fn simple_stv_ub(election: &Election, winners: &BTreeSet<CandidateId>) -> u64 {
    let fp = election.primary_votes();
    (0..election.num_candidates())
        .filter(|c| !winners.contains(c))
        .map(|c| election.quota.saturating_sub(fp[c]))
        .min()
        .unwrap_or(election.total())
}

/// Removes `k` ballots, drawing from signatures that satisfy `take` in the
/// given priority order, and adds `k` copies of `ranking`.
fn rewrite(election: &Election, k: u64, ranking: &[CandidateId], take: &[&dyn Fn(&Signature) -> bool]) -> Option<Manipulation> {
    let target = Signature::of(ranking);
    let mut m = Manipulation::new();
    let mut left = k;
    let mut used: BTreeSet<Signature> = BTreeSet::new();
    for pred in take {
        let mut pool: Vec<(&Signature, u64)> = election
            .profile
            .iter()
            .filter(|(s, _)| **s != target && !used.contains(*s) && pred(s))
            .collect();
        pool.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (s, n) in pool {
            if left == 0 {
                break;
            }
            let t = n.min(left);
            m.remove(s.clone(), t);
            used.insert(s.clone());
            left -= t;
        }
    }
    if left > 0 {
        return None;
    }
    if k > 0 {
        m.add(target, k);
    }
    Some(m)
}

/// Whether applying `m` lets some tie resolution change the elected set.
pub fn changes_outcome(election: &Election, winners: &BTreeSet<CandidateId>, m: &Manipulation) -> bool {
    match crate::election::apply_manipulation(&election.profile, m) {
        Ok(p) => Contest::new(election.num_candidates(), election.seats, election.quota, &p).can_change(winners),
        Err(_) => false,
    }
}

/// An upper bound on the margin together with the manipulation proving it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpperBound {
    pub value: u64,
    pub certificate: Manipulation,
    pub source: BoundSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundSource {
    WinnerElimination,
    SimpleStv,
    /// Every ballot rewritten to a single loser.
    Trivial,
    Search,
}

/// Certificate for a winner-drop move: the winner's first preferences go to
/// the eliminated candidate.
pub fn winner_drop_certificate(election: &Election, winners: &BTreeSet<CandidateId>, d: &WinnerDrop) -> Option<Manipulation> {
    let w = d.winner;
    let attempts: [&[&dyn Fn(&Signature) -> bool]; 2] = [
        &[&|s: &Signature| s.first() == w],
        &[&|s: &Signature| s.first() == w, &|s: &Signature| s.position(w).is_some()],
    ];
    attempts
        .iter()
        .filter_map(|take| rewrite(election, d.votes, &[d.eliminated], take))
        .find(|m| changes_outcome(election, winners, m))
}

fn simple_certificates(election: &Election, winners: &BTreeSet<CandidateId>) -> Vec<(u64, Manipulation)> {
    let fp = election.primary_votes();
    let mut out = Vec::new();
    for c in (0..election.num_candidates()).filter(|c| !winners.contains(c)) {
        let k = election.quota.saturating_sub(fp[c]);
        let from_winners = |s: &Signature| winners.contains(&s.first());
        let anyone = |s: &Signature| s.first() != c;
        if let Some(m) = rewrite(election, k, &[c], &[&from_winners, &anyone]) {
            if changes_outcome(election, winners, &m) {
                out.push((k, m));
            }
        }
    }
    out
}

fn trivial_certificate(election: &Election, winners: &BTreeSet<CandidateId>) -> UpperBound {
    let fp = election.primary_votes();
    let loser = (0..election.num_candidates())
        .filter(|c| !winners.contains(c))
        .max_by_key(|&c| (fp[c], std::cmp::Reverse(c)))
        .expect("fewer seats than candidates");
    let target = Signature::of(&[loser]);
    let mut m = Manipulation::new();
    let mut k = 0;
    for (s, n) in election.profile.iter() {
        if *s != target {
            m.remove(s.clone(), n);
            k += n;
        }
    }
    if k > 0 {
        m.add(target, k);
    }
    UpperBound {
        value: k,
        certificate: m,
        source: BoundSource::Trivial,
    }
}

/// Smallest of the closed-form upper bounds whose manipulation survives a
/// simulated count, falling back to rewriting every ballot.
pub fn initial_upper_bound(election: &Election, count: &CountResult) -> UpperBound {
    let winners = &count.elected;
    let mut best = trivial_certificate(election, winners);
    for d in winner_drops(count, HalfRule::Corrected) {
        if d.votes >= best.value {
            break;
        }
        if let Some(m) = winner_drop_certificate(election, winners, &d) {
            best = UpperBound {
                value: d.votes,
                certificate: m,
                source: BoundSource::WinnerElimination,
            };
            break;
        }
    }
    for (k, m) in simple_certificates(election, winners) {
        if k < best.value {
            best = UpperBound {
                value: k,
                certificate: m,
                source: BoundSource::SimpleStv,
            };
        }
    }
    best
}

/// Cast signatures that may sit in each candidate's tally, per round of the
/// order's plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PossibleSignatures {
    /// `rounds[j][c]`, empty when `c` is not standing in round `j`.
    pub rounds: Vec<Vec<Vec<Signature>>>,
}

impl PossibleSignatures {
    pub fn holds(&self, round: usize, c: CandidateId) -> &[Signature] {
        &self.rounds[round][c]
    }
}

pub fn infer_possible_signatures(election: &Election, order: &CandidateOrder) -> Result<PossibleSignatures, PlanError> {
    let plan = Plan::new(election.num_candidates(), election.seats, order, false)?;
    Ok(possible_from_plan(election, &plan))
}

fn possible_from_plan(election: &Election, plan: &Plan) -> PossibleSignatures {
    let n = election.num_candidates();
    let mut rounds = vec![vec![Vec::new(); n]; plan.len()];
    for s in election.profile.signatures() {
        let route = plan.route(s.ranking());
        for (j, r) in route.rounds.iter().enumerate() {
            for &h in &r.holders {
                rounds[j][h].push(s.clone());
            }
        }
    }
    PossibleSignatures { rounds }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepBound {
    pub step: Step,
    /// 0-based round of the plan.
    pub round: usize,
    /// Quota shortfall, for elections that are not forced.
    pub quota: Option<u64>,
    /// Votes needed to bring the candidate down to the lowest tally.
    pub fewest: Option<u64>,
    /// Votes needed to bring every standing candidate below the quota.
    pub below_quota: Option<u64>,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LowerBoundBreakdown {
    /// `max_votes[c][j]`: most cast votes that can be in `c`'s tally in
    /// round `j`, `None` when `c` is no longer standing.
    pub max_votes: Vec<Vec<Option<u64>>>,
    /// Least votes in each tally while standing: the first preferences.
    pub min_votes: Vec<u64>,
    pub steps: Vec<StepBound>,
    pub lb: u64,
}

/// Lower bound on the manipulation needed by any count that starts with
/// `order`.
///
/// Each changed ballot moves at most one vote out of one tally and into
/// another, so closing a gap between two tallies needs half as many changes
/// as the gap.
pub fn prefix_lower_bound(election: &Election, order: &CandidateOrder) -> Result<LowerBoundBreakdown, PlanError> {
    let n = election.num_candidates();
    let plan = Plan::new(n, election.seats, order, false)?;
    let possible = possible_from_plan(election, &plan);
    let count_of = |sigs: &[Signature]| sigs.iter().map(|s| election.profile.count(s)).sum::<u64>();
    let mut max_votes = vec![vec![None; plan.len()]; n];
    for (j, r) in plan.rounds.iter().enumerate() {
        for &c in &r.standing {
            max_votes[c][j] = Some(count_of(possible.holds(j, c)));
        }
    }
    let min_votes = election.primary_votes();
    let q = election.quota;
    let mut steps = Vec::new();
    for (j, r) in plan.rounds.iter().enumerate() {
        let vmax = |c: CandidateId| max_votes[c][j].unwrap_or(0);
        let cj = r.actors()[0];
        let sb = if r.is_election() {
            let lq = q.saturating_sub(vmax(cj));
            StepBound {
                step: Step::elect(cj),
                round: j,
                quota: Some(lq),
                fewest: None,
                below_quota: None,
                value: lq,
            }
        } else {
            let le1 = r
                .standing
                .iter()
                .filter(|&&c| c != cj)
                .map(|&c| min_votes[cj].saturating_sub(vmax(c)).div_ceil(2))
                .max()
                .unwrap_or(0);
            let le2 = r
                .standing
                .iter()
                .map(|&c| min_votes[c].saturating_sub(q))
                .max()
                .unwrap_or(0);
            StepBound {
                step: Step::eliminate(cj),
                round: j,
                quota: None,
                fewest: Some(le1),
                below_quota: Some(le2),
                value: le1.max(le2),
            }
        };
        steps.push(sb);
    }
    let lb = steps.iter().map(|s| s.value).max().unwrap_or(0);
    Ok(LowerBoundBreakdown {
        max_votes,
        min_votes,
        steps,
        lb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::count::{run_count, TiePolicy};
    use crate::election::parse_profile;

    const EXAMPLE1: &str = "seats: 2\ncandidates: c1,c2,c3,c4\n4: c2,c3\n20: c1\n9: c3,c4\n\
                          6: c2,c3,c4\n15: c4,c1,c2\n6: c1,c3\n";
    const EXAMPLE2: &str = "seats: 2\ncandidates: c1,c2,c3,c4\n5: c1,c2,c3\n18: c1\n10: c4,c3\n\
                          5: c3,c2,c4\n17: c2,c4,c3\n8: c1,c4,c2,c3\n";

    fn counted(text: &str) -> (Election, CountResult) {
        let e = parse_profile(text).unwrap();
        let c = run_count(&e, TiePolicy::LowestIndex);
        (e, c)
    }

    #[test]
    fn example1_upper_bounds() {
        let (e, c) = counted(EXAMPLE1);
        assert_eq!(winner_elimination_ub(&e, &c), 2);
        assert_eq!(simple_stv_ub(&e, &c.elected), 6);
        let ub = initial_upper_bound(&e, &c);
        assert_eq!(ub.value, 2);
        assert_eq!(ub.source, BoundSource::WinnerElimination);
        assert!(changes_outcome(&e, &c.elected, &ub.certificate));
    }

    #[test]
    fn example2_upper_bounds() {
        let (e, c) = counted(EXAMPLE2);
        assert_eq!(winner_elimination_ub(&e, &c), 8);
        assert_eq!(winner_elimination_ub_with(&e, &c, HalfRule::Literal), 16);
        assert_eq!(simple_stv_ub(&e, &c.elected), 12);
    }

    #[test]
    fn literal_half_rule_on_example1() {
        let (e, c) = counted(EXAMPLE1);
        // ceil(14 - 10/2) = 9 never beats the plain gap of 4.
        assert_eq!(winner_elimination_ub_with(&e, &c, HalfRule::Literal), 4);
    }

    #[test]
    fn no_elimination_keeps_total() {
        let (e, c) = counted("seats: 2\ncandidates: a,b,c,d\n5: a\n5: b\n1: c\n");
        assert!(c.order.steps.iter().take(2).all(|s| s.action == Action::Elected));
        assert_eq!(winner_elimination_ub(&e, &c), e.total());
    }

    #[test]
    fn simple_bound_saturates() {
        let e = parse_profile("seats: 2\ncandidates: a,b,c\n3: a\n3: b\n1: c\n").unwrap();
        let winners: BTreeSet<_> = [0, 2].into();
        assert_eq!(simple_stv_ub(&e, &winners), 0);
    }

    #[test]
    fn trivial_certificate_always_changes() {
        let (e, c) = counted(EXAMPLE2);
        let t = trivial_certificate(&e, &c.elected);
        assert!(changes_outcome(&e, &c.elected, &t.certificate));
    }

    #[test]
    fn example1_possible_holders() {
        let e = parse_profile(EXAMPLE1).unwrap();
        let o = CandidateOrder::from_pairs(&[(2, 0), (0, 1), (1, 1), (3, 0)]);
        let p = infer_possible_signatures(&e, &o).unwrap();
        assert_eq!(p.rounds.len(), 3);
        let c4r2: BTreeSet<&Signature> = p.holds(1, 3).iter().collect();
        let want = [Signature::of(&[3, 0, 1]), Signature::of(&[2, 3])];
        assert_eq!(c4r2, want.iter().collect());
        for c in 0..4 {
            assert!(p.holds(0, c).iter().all(|s| s.first() == c));
        }
    }

    #[test]
    fn example2_elimination_passes_ballots_on() {
        let e = parse_profile(EXAMPLE2).unwrap();
        let o = CandidateOrder::from_pairs(&[(0, 1), (2, 0), (1, 1)]);
        let p = infer_possible_signatures(&e, &o).unwrap();
        assert!(p.holds(2, 1).contains(&Signature::of(&[2, 1, 3])));
        assert!(!p.holds(1, 1).contains(&Signature::of(&[2, 1, 3])));
    }

    #[test]
    fn example1_prefix_rule() {
        let e = parse_profile(EXAMPLE1).unwrap();
        let o = CandidateOrder::from_pairs(&[(2, 0), (0, 1), (1, 1), (3, 0)]);
        let b = prefix_lower_bound(&e, &o).unwrap();
        let values: Vec<u64> = b.steps.iter().map(|s| s.value).collect();
        assert_eq!(values, vec![5, 0, 11]);
        assert_eq!(b.lb, 11);
        assert_eq!(b.max_votes[0], vec![Some(26), Some(26), None]);
        assert_eq!(b.max_votes[1], vec![Some(10), Some(10), Some(10)]);
        assert_eq!(b.max_votes[2], vec![Some(9), None, None]);
        assert_eq!(b.max_votes[3], vec![Some(15), Some(24), Some(24)]);
        assert_eq!(b.min_votes, vec![26, 10, 9, 15]);
    }

    #[test]
    fn prefix_rule_small_cases() {
        let e = parse_profile(EXAMPLE1).unwrap();
        let lb = |pairs: &[(usize, u8)]| prefix_lower_bound(&e, &CandidateOrder::from_pairs(pairs)).unwrap().lb;
        assert_eq!(lb(&[]), 0);
        assert_eq!(lb(&[(1, 1)]), 11);
        assert_eq!(lb(&[(0, 1)]), 0);
    }
}
