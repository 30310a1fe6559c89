//! Round structure of an order and the routes ballots can take through it.
//!
//! A [`Plan`] lists the rounds of the count that an order pins down: it stops
//! once every seat is filled or the remaining candidates are elected
//! together. A [`Route`] records, for one ranking, which candidates may hold
//! the ballot in each round and where it may move next. Which of several
//! holders actually applies depends on which candidates reach the quota
//! early, since surplus transfers jump over them.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::election::{Action, CandidateId, CandidateOrder, OrderError, Signature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RoundKind {
    Elect(CandidateId),
    /// One candidate, or a block of consecutive eliminations modelled together.
    Eliminate(Vec<CandidateId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Round {
    pub kind: RoundKind,
    /// Candidates standing at the start of the round.
    pub standing: Vec<CandidateId>,
    /// Whether the round's votes move on. They matter when a later round is
    /// part of the plan, or for a block whose end tallies are compared.
    pub transfers: bool,
}

impl Round {
    pub fn actors(&self) -> &[CandidateId] {
        match &self.kind {
            RoundKind::Elect(c) => std::slice::from_ref(c),
            RoundKind::Eliminate(block) => block,
        }
    }

    pub fn is_election(&self) -> bool {
        matches!(self.kind, RoundKind::Elect(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error("step {step} cannot happen: {reason}")]
    Unrealizable { step: usize, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Plan {
    pub num_candidates: usize,
    pub seats: usize,
    pub rounds: Vec<Round>,
    /// Candidates elected together at the end because they exactly fill the
    /// remaining seats. Their round carries no constraint.
    pub forced: Vec<CandidateId>,
    pub grouped: bool,
    /// `after[j][c]`: c is still standing once round j is over.
    after: Vec<Vec<bool>>,
    /// `skippable[j][c]`: c may hold a quota at the start of round j.
    skippable: Vec<Vec<bool>>,
}

impl Plan {
    pub fn new(num_candidates: usize, seats: usize, order: &CandidateOrder, grouped: bool) -> Result<Plan, PlanError> {
        order.validate(num_candidates, seats)?;
        let mut standing: BTreeSet<CandidateId> = (0..num_candidates).collect();
        let mut elected = 0;
        let mut rounds: Vec<Round> = Vec::new();
        let mut forced = Vec::new();
        for (i, step) in order.steps.iter().enumerate() {
            let remaining = seats - elected;
            if remaining == 0 {
                if step.action == Action::Elected {
                    return Err(PlanError::Unrealizable {
                        step: i,
                        reason: "all seats are already filled",
                    });
                }
                continue;
            }
            if standing.len() <= remaining {
                if step.action == Action::Eliminated {
                    return Err(PlanError::Unrealizable {
                        step: i,
                        reason: "the remaining candidates fill the remaining seats",
                    });
                }
                forced.push(step.candidate);
                continue;
            }
            let now: Vec<CandidateId> = standing.iter().copied().collect();
            standing.remove(&step.candidate);
            let kind = match step.action {
                Action::Elected => {
                    elected += 1;
                    RoundKind::Elect(step.candidate)
                }
                Action::Eliminated => match rounds.last_mut() {
                    Some(Round {
                        kind: RoundKind::Eliminate(block),
                        ..
                    }) if grouped => {
                        block.push(step.candidate);
                        continue;
                    }
                    _ => RoundKind::Eliminate(vec![step.candidate]),
                },
            };
            rounds.push(Round {
                kind,
                standing: now,
                transfers: false,
            });
        }
        let l = rounds.len();
        for (j, r) in rounds.iter_mut().enumerate() {
            // A block is compared against the tallies at its end.
            r.transfers = j + 1 < l || r.actors().len() > 1;
        }
        let after: Vec<Vec<bool>> = rounds
            .iter()
            .map(|r| {
                let mut v = vec![false; num_candidates];
                for &c in &r.standing {
                    v[c] = !r.actors().contains(&c);
                }
                v
            })
            .collect();
        // A candidate that holds a quota keeps it while standing, so it can
        // never be eliminated later.
        let mut skippable = vec![vec![false; num_candidates]; l];
        for j in 0..l {
            if !rounds[j].is_election() {
                continue;
            }
            for c in 0..num_candidates {
                skippable[j][c] = after[j][c]
                    && !rounds[j + 1..]
                        .iter()
                        .any(|r| !r.is_election() && r.standing.contains(&c));
            }
        }
        Ok(Plan {
            num_candidates,
            seats,
            rounds,
            forced,
            grouped,
            after,
            skippable,
        })
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn standing_after(&self, round: usize, c: CandidateId) -> bool {
        self.after[round][c]
    }

    /// Whether `c` may be at the quota at the start of election round
    /// `round` and so be jumped over by its surplus transfer.
    pub fn skippable(&self, round: usize, c: CandidateId) -> bool {
        self.skippable[round][c]
    }

    pub fn route(&self, ranking: &[CandidateId]) -> Route {
        let mut holders: BTreeSet<CandidateId> = ranking.first().copied().into_iter().collect();
        let mut rounds = Vec::with_capacity(self.len());
        for (j, r) in self.rounds.iter().enumerate() {
            let mut moves = Vec::new();
            let mut next: BTreeSet<CandidateId> = holders.iter().copied().filter(|c| !r.actors().contains(c)).collect();
            if r.transfers {
                for &h in holders.iter().filter(|c| r.actors().contains(c)) {
                    let pos = ranking.iter().position(|&c| c == h).expect("holder is ranked");
                    let later = ranking[pos + 1..].iter().copied().filter(|&c| self.after[j][c]);
                    let mut chain = Vec::new();
                    let mut may_exhaust = true;
                    for c in later {
                        chain.push(c);
                        if !r.is_election() || !self.skippable[j][c] {
                            may_exhaust = false;
                            break;
                        }
                    }
                    next.extend(chain.iter().copied());
                    moves.push(Move {
                        from: h,
                        chain,
                        may_exhaust,
                    });
                }
            }
            rounds.push(RoundRoute {
                holders: holders.iter().copied().collect(),
                moves,
            });
            holders = next;
        }
        Route { rounds }
    }

    /// Rankings that list the successive holders of some ballot: at most one
    /// actor per round in round order, optionally ending with a candidate
    /// still standing after the last round. Any added ballot behaves like
    /// one of these throughout the plan.
    pub fn holder_rankings(&self) -> Vec<Signature> {
        let idle: Vec<CandidateId> = match self.after.last() {
            Some(a) => (0..self.num_candidates).filter(|&c| a[c]).collect(),
            None => (0..self.num_candidates).collect(),
        };
        let mut seqs: Vec<Vec<CandidateId>> = vec![Vec::new()];
        for r in &self.rounds {
            let mut more = Vec::new();
            for s in &seqs {
                for &a in r.actors() {
                    let mut t = s.clone();
                    t.push(a);
                    more.push(t);
                }
            }
            seqs.extend(more);
        }
        let mut out = BTreeSet::new();
        for s in seqs {
            if !s.is_empty() {
                out.insert(Signature::of(&s));
            }
            for &c in &idle {
                let mut t = s.clone();
                t.push(c);
                out.insert(Signature::of(&t));
            }
        }
        out.into_iter().collect()
    }
}

/// Where a ballot held by `from` may go when `from` leaves the count: the
/// first entry of `chain` that does not hold a quota, or nowhere when every
/// entry does and `may_exhaust` is set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Move {
    pub from: CandidateId,
    pub chain: Vec<CandidateId>,
    pub may_exhaust: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RoundRoute {
    pub holders: Vec<CandidateId>,
    pub moves: Vec<Move>,
}

/// Rankings with equal routes are indistinguishable in every round of a plan.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Route {
    pub rounds: Vec<RoundRoute>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(pairs: &[(usize, u8)], seats: usize, grouped: bool) -> Plan {
        Plan::new(4, seats, &CandidateOrder::from_pairs(pairs), grouped).unwrap()
    }

    #[test]
    fn plan_stops_when_seats_fill() {
        let p = plan(&[(2, 0), (0, 1), (1, 1), (3, 0)], 2, false);
        assert_eq!(p.len(), 3);
        assert!(p.rounds[1].transfers);
        assert!(!p.rounds[2].transfers);
    }

    #[test]
    fn forced_tail_is_split_off() {
        let p = plan(&[(0, 0), (1, 0), (2, 1), (3, 1)], 2, false);
        assert_eq!(p.len(), 2);
        assert_eq!(p.forced, vec![2, 3]);
        let bad = Plan::new(4, 2, &CandidateOrder::from_pairs(&[(0, 0), (1, 0), (2, 0)]), false);
        assert!(matches!(bad, Err(PlanError::Unrealizable { step: 2, .. })));
    }

    #[test]
    fn election_after_last_seat_is_rejected() {
        let bad = Plan::new(4, 1, &CandidateOrder::from_pairs(&[(0, 1), (1, 1)]), false);
        assert!(bad.is_err());
        assert!(Plan::new(4, 1, &CandidateOrder::from_pairs(&[(0, 1), (1, 0)]), false).is_ok());
    }

    #[test]
    fn grouping_merges_runs() {
        let p = plan(&[(0, 1), (2, 0), (1, 0), (3, 1)], 2, true);
        assert_eq!(p.len(), 2);
        assert_eq!(p.rounds[1].kind, RoundKind::Eliminate(vec![2, 1]));
        assert_eq!(p.rounds[1].standing, vec![1, 2, 3]);
    }

    #[test]
    fn skippable_excludes_later_eliminations() {
        let o = CandidateOrder::from_pairs(&[(0, 1), (1, 0), (2, 0), (3, 1)]);
        let p = Plan::new(5, 2, &o, false).unwrap();
        assert!(!p.skippable(0, 1));
        assert!(!p.skippable(0, 3));
        // With four candidates the last election is forced and the final
        // elimination moves no votes, so both rankings route alike.
        let short = plan(&[(0, 1), (1, 0), (2, 0), (3, 1)], 2, false);
        assert_eq!(short.forced, vec![3]);
        assert_eq!(short.route(&[1, 2]), short.route(&[1, 2, 3]));
    }

    #[test]
    fn routes_split_on_later_elimination() {
        let o = CandidateOrder::from_pairs(&[(0, 1), (1, 0), (2, 0), (3, 1)]);
        let p = Plan::new(5, 2, &o, false).unwrap();
        assert_ne!(p.route(&[1, 2]), p.route(&[1, 2, 3]));
        // Exhausting and transferring surpluses differ.
        assert_ne!(p.route(&[0]), p.route(&[0, 2]));
    }

    #[test]
    fn surplus_may_jump_a_quota_holder() {
        let p = plan(&[(0, 1), (3, 1)], 2, false);
        let r = p.route(&[0, 1, 2]);
        assert_eq!(r.rounds[1].holders, vec![1, 2]);
        assert!(r.rounds[0].moves[0].may_exhaust);
    }

    #[test]
    fn holder_rankings_pick_one_actor_per_round() {
        let p = plan(&[(0, 1), (2, 0), (1, 0)], 2, true);
        let hs = p.holder_rankings();
        assert!(hs.contains(&Signature::of(&[0, 2, 3])));
        assert!(!hs.contains(&Signature::of(&[0, 2, 1])));
        assert!(hs.contains(&Signature::of(&[3])));
    }
}
