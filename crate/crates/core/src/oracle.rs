//! Exhaustive reference values for tiny elections.
//!
//! A manipulation of size `k` removes a multiset of `k` cast ballots and adds a
//! multiset of `k` ballots with arbitrary rankings. The oracle enumerates these
//! pairs by increasing `k` and counts every resulting profile. Removal and
//! addition supports are kept disjoint, since rewriting a ballot to its own
//! ranking is a smaller manipulation.
//!
//! Values come in up to three flavours. The adversarial value lets any tie be
//! resolved in the manipulator's favour. The engine value uses the count's
//! deterministic tie policy. The defender value (MOV only) requires every tie
//! resolution to change the outcome.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::count::{Contest, TiePolicy};
use crate::election::{Action, CandidateId, CandidateOrder, Election, Manipulation, Signature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleValue {
    Exact(u64),
    /// No manipulation of size up to the payload works.
    Exceeds(u64),
}

impl OracleValue {
    pub fn exact(self) -> Option<u64> {
        match self {
            OracleValue::Exact(k) => Some(k),
            OracleValue::Exceeds(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleReport {
    pub adversarial: OracleValue,
    pub engine: OracleValue,
    /// Only computed for the margin; `None` for order distances.
    pub defender: Option<OracleValue>,
    /// Smallest manipulation found under adversarial ties.
    pub witness: Option<Manipulation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub max_candidates: usize,
    pub max_ballots: u64,
    pub max_k: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_candidates: 5,
            max_ballots: 60,
            max_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("{what} is {got}, above the oracle limit of {limit}")]
    TooLarge { what: &'static str, got: u64, limit: u64 },
}

impl OracleLimits {
    pub fn check(&self, election: &Election, k_max: u64) -> Result<(), OracleError> {
        let checks = [
            ("candidate count", election.num_candidates() as u64, self.max_candidates as u64),
            ("ballot count", election.total(), self.max_ballots),
            ("k_max", k_max, self.max_k),
        ];
        for (what, got, limit) in checks {
            if got > limit {
                return Err(OracleError::TooLarge { what, got, limit });
            }
        }
        Ok(())
    }
}

/// All multisets of total size `k` over items `0..caps.len()`, item `i` used at
/// most `caps[i]` times, as sorted `(item, multiplicity)` lists.
fn multisets(caps: &[u64], k: u64) -> Vec<Vec<(usize, u64)>> {
    fn rec(caps: &[u64], start: usize, left: u64, cur: &mut Vec<(usize, u64)>, out: &mut Vec<Vec<(usize, u64)>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..caps.len() {
            for m in (1..=caps[i].min(left)).rev() {
                cur.push((i, m));
                rec(caps, i + 1, left - m, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(caps, 0, k, &mut Vec::new(), &mut out);
    out
}

/// Enumerates manipulations in a fixed order and returns the first accepted
/// by `accept` at the smallest size in `k_min..=k_max`.
fn search<F>(election: &Election, additions: &[Signature], k_min: u64, k_max: u64, accept: F) -> Option<(u64, Manipulation)>
where
    F: Fn(&Contest<'_>) -> bool + Sync,
{
    let cast: Vec<(&Signature, u64)> = election.profile.iter().collect();
    let caps: Vec<u64> = cast.iter().map(|c| c.1).collect();
    let n = election.num_candidates();
    for k in k_min..=k_max {
        let removals = multisets(&caps, k);
        let add_caps = vec![k; additions.len()];
        let adds = multisets(&add_caps, k);
        let found = removals.par_iter().find_map_first(|rem| {
            let mut ballots: Vec<(&[CandidateId], u64)> = cast.iter().map(|(s, c)| (s.ranking(), *c)).collect();
            for &(i, m) in rem {
                ballots[i].1 -= m;
            }
            let base = ballots.len();
            adds.iter().find_map(|add| {
                let clash = add.iter().any(|&(a, _)| rem.iter().any(|&(r, _)| *cast[r].0 == additions[a]));
                if clash {
                    return None;
                }
                ballots.truncate(base);
                ballots.extend(add.iter().map(|&(a, m)| (additions[a].ranking(), m)));
                let contest = Contest::from_ballots(n, election.seats, election.quota, ballots.clone());
                accept(&contest).then(|| {
                    let mut m = Manipulation::new();
                    for &(i, c) in rem {
                        m.remove(cast[i].0.clone(), c);
                    }
                    for &(a, c) in add {
                        m.add(additions[a].clone(), c);
                    }
                    m
                })
            })
        });
        if let Some(m) = found {
            return Some((k, m));
        }
    }
    None
}

fn value(found: Option<u64>, k_max: u64) -> OracleValue {
    found.map_or(OracleValue::Exceeds(k_max), OracleValue::Exact)
}

fn winners_of(election: &Election) -> BTreeSet<CandidateId> {
    election
        .winners
        .clone()
        .unwrap_or_else(|| Contest::of(election).elected(TiePolicy::LowestIndex))
}

/// Margin when any resolution of ties may be chosen, with its witness.
pub fn adversarial_mov(election: &Election, k_max: u64) -> (OracleValue, Option<Manipulation>) {
    let winners = winners_of(election);
    let all = Signature::all(election.num_candidates());
    let found = search(election, &all, 0, k_max, |c| c.can_change(&winners));
    (value(found.as_ref().map(|x| x.0), k_max), found.map(|x| x.1))
}

/// Smallest number of ballot rewrites that changes the elected set.
pub fn brute_force_mov(election: &Election, k_max: u64) -> OracleReport {
    let winners = winners_of(election);
    let all = Signature::all(election.num_candidates());
    let adv = search(election, &all, 0, k_max, |c| c.can_change(&winners));
    let k_adv = adv.as_ref().map(|x| x.0);
    // Engine-changing manipulations also change some tie resolution, so the
    // engine value is never below the adversarial one.
    let eng = match k_adv {
        None => None,
        Some(k) => search(election, &all, k, k_max, |c| c.elected(TiePolicy::LowestIndex) != winners),
    };
    let def = match k_adv {
        None => None,
        Some(k) => search(election, &all, k, k_max, |c| {
            !c.any_outcome(|o| o.elected.iter().copied().collect::<BTreeSet<_>>() == winners)
        }),
    };
    OracleReport {
        adversarial: value(k_adv, k_max),
        engine: value(eng.map(|x| x.0), k_max),
        defender: Some(value(def.map(|x| x.0), k_max)),
        witness: adv.map(|x| x.1),
    }
}

/// Rankings that list a ballot's successive holders when `order` is realised:
/// candidates acted on in increasing step order, optionally ending with a
/// candidate the order never acts on. Restricting added ballots to these
/// rankings loses nothing, because any added ballot can be replaced by the
/// ranking of its holders without changing a single tally in the rounds the
/// order covers.
pub fn holder_sequences(order: &CandidateOrder, num_candidates: usize) -> Vec<Signature> {
    let acted: Vec<CandidateId> = order.steps.iter().map(|s| s.candidate).collect();
    let idle: Vec<CandidateId> = order.unmentioned(num_candidates);
    let mut out = BTreeSet::new();
    let m = acted.len();
    for mask in 1u64..(1u64 << m) {
        let seq: Vec<CandidateId> = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| acted[i]).collect();
        out.insert(Signature::of(&seq));
        for &c in &idle {
            let mut s = seq.clone();
            s.push(c);
            out.insert(Signature::of(&s));
        }
    }
    for &c in &idle {
        out.insert(Signature::of(&[c]));
    }
    out.into_iter().collect()
}

/// Whether the deterministic count's order begins with `order`, treating
/// steps beyond the end of the count as eliminations of the leftovers.
pub fn engine_realizes(contest: &Contest<'_>, order: &CandidateOrder) -> bool {
    let mut p = TiePolicy::LowestIndex;
    let out = contest.simulate(&mut p, false).expect("tie policies never abort");
    let m = order.len().min(out.steps.len());
    let forced_from = out.steps.len() - out.forced;
    for i in 0..m {
        let want = order.steps[i];
        let got = out.steps[i];
        if i >= forced_from {
            let block: Vec<CandidateId> = out.steps[forced_from..].iter().map(|s| s.candidate).collect();
            if want.action != Action::Elected || !block.contains(&want.candidate) {
                return false;
            }
        } else if want != got {
            return false;
        }
    }
    order.steps[m..].iter().all(|s| s.action == Action::Eliminated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DistanceOptions {
    /// Restrict added ballots to holder sequences of the target order.
    pub holder_additions: bool,
}

/// Smallest number of ballot rewrites after which the count begins with `order`.
pub fn brute_force_distance_to(election: &Election, order: &CandidateOrder, k_max: u64) -> OracleReport {
    brute_force_distance_with(election, order, k_max, DistanceOptions { holder_additions: true })
}

pub fn brute_force_distance_with(
    election: &Election,
    order: &CandidateOrder,
    k_max: u64,
    opts: DistanceOptions,
) -> OracleReport {
    let n = election.num_candidates();
    let adds = if opts.holder_additions {
        holder_sequences(order, n)
    } else {
        Signature::all(n)
    };
    let adv = search(election, &adds, 0, k_max, |c| c.realizes(order));
    let k_adv = adv.as_ref().map(|x| x.0);
    // Holder sequences reproduce every tally of the rounds the order covers,
    // so the deterministic policy makes the same choices there too.
    let eng = match k_adv {
        None => None,
        Some(k) => search(election, &adds, k, k_max, |c| engine_realizes(c, order)),
    };
    OracleReport {
        adversarial: value(k_adv, k_max),
        engine: value(eng.map(|x| x.0), k_max),
        defender: None,
        witness: adv.map(|x| x.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::election::parse_profile;

    const EXAMPLE1: &str = "seats: 2\ncandidates: c1,c2,c3,c4\n4: c2,c3\n20: c1\n9: c3,c4\n\
                          6: c2,c3,c4\n15: c4,c1,c2\n6: c1,c3\n";

    #[test]
    fn multiset_counts() {
        assert_eq!(multisets(&[2, 2, 2], 2).len(), 6);
        assert_eq!(multisets(&[1, 1, 1], 2).len(), 3);
        assert_eq!(multisets(&[5], 0), vec![Vec::<(usize, u64)>::new()]);
    }

    #[test]
    fn two_candidate_tie_semantics() {
        let e = parse_profile("seats: 1\ncandidates: A,B\n3: A\n1: B\n").unwrap();
        let r = brute_force_mov(&e, 3);
        assert_eq!(r.adversarial, OracleValue::Exact(1));
        // The lowest-index policy eliminates A from the 2-2 tie.
        assert_eq!(r.engine, OracleValue::Exact(1));
        assert_eq!(r.defender, Some(OracleValue::Exact(2)));
        assert_eq!(r.witness.unwrap().size(), 1);
    }

    #[test]
    fn zero_budget_exceeds() {
        let e = parse_profile(EXAMPLE1).unwrap();
        let r = brute_force_mov(&e, 0);
        assert_eq!(r.adversarial, OracleValue::Exceeds(0));
    }

    #[test]
    fn example1_distances() {
        let e = parse_profile(EXAMPLE1).unwrap();
        let d = |pairs: &[(usize, u8)], k| brute_force_distance_to(&e, &CandidateOrder::from_pairs(pairs), k).adversarial;
        assert_eq!(d(&[(0, 1)], 1), OracleValue::Exact(0));
        assert_eq!(d(&[(0, 1), (2, 0)], 3), OracleValue::Exact(2));
        assert_eq!(d(&[(0, 1), (1, 0)], 1), OracleValue::Exact(0));
    }

    #[test]
    fn holder_sequences_shape() {
        let o = CandidateOrder::from_pairs(&[(0, 1), (1, 0)]);
        let hs = holder_sequences(&o, 3);
        // {0},{1},{0,1} each alone or followed by 2, plus [2].
        assert_eq!(hs.len(), 7);
        assert!(hs.contains(&Signature::of(&[0, 1, 2])));
        assert!(!hs.contains(&Signature::of(&[1, 0])));
    }

    #[test]
    fn holder_reduction_matches_full_space() {
        let e = parse_profile("seats: 1\ncandidates: a,b,c\n3: a\n2: b,c\n2: c,b\n").unwrap();
        for pairs in [[(2u8 as usize, 0u8), (1, 1)], [(1, 0), (0, 1)], [(0, 0), (2, 1)]] {
            let o = CandidateOrder::from_pairs(&pairs);
            let fast = brute_force_distance_with(&e, &o, 3, DistanceOptions { holder_additions: true });
            let full = brute_force_distance_with(&e, &o, 3, DistanceOptions { holder_additions: false });
            assert_eq!(fast.adversarial, full.adversarial, "order {o}");
        }
    }

    #[test]
    fn limits_refuse_large_inputs() {
        let e = parse_profile(EXAMPLE1).unwrap();
        assert!(OracleLimits::default().check(&e, 3).is_ok());
        assert!(OracleLimits::default().check(&e, 4).is_err());
    }
}
