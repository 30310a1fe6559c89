//! Inclusive Gregory STV count with exact rational arithmetic.
//!
//! The core loop is generic over the rational type. Small elections run on
//! `Ratio<i128>`, which is an order of magnitude faster than big rationals and
//! matters when the oracle or the verifier counts many profiles. Every
//! decision the count takes goes through a [`Chooser`], which lets the same
//! loop serve deterministic counting, "can this order happen under some tie
//! resolution" checks and enumeration of every tie-dependent outcome.

use std::collections::BTreeSet;
use std::fmt::Debug;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{FromPrimitive, Signed, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::election::{Action, CandidateId, CandidateOrder, Election, Profile, Step};

/// Rational types the count can run on.
pub trait Weight: Clone + Ord + Debug + num_traits::Num + FromPrimitive {
    fn to_big(&self) -> BigRational;
}

impl Weight for Ratio<i128> {
    fn to_big(&self) -> BigRational {
        BigRational::new(BigInt::from(*self.numer()), BigInt::from(*self.denom()))
    }
}

impl Weight for BigRational {
    fn to_big(&self) -> BigRational {
        self.clone()
    }
}

/// How the deterministic count breaks ties between equal tallies or surpluses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    #[default]
    LowestIndex,
    HighestIndex,
}

/// Receives every decision the count makes.
///
/// `choose` is called once per round with the candidates tied for the action
/// (a single candidate when there is no tie). Returning `None` aborts the count.
pub trait Chooser {
    fn choose(&mut self, round: usize, action: Action, tied: &[CandidateId]) -> Option<CandidateId>;

    /// Called when every standing candidate is elected at once because they
    /// exactly fill the remaining seats. Returning false aborts the count.
    fn forced(&mut self, _round: usize, _elected: &[CandidateId]) -> bool {
        true
    }

    /// Checked at the start of every round; true stops the count early.
    fn done(&self, _steps_taken: usize) -> bool {
        false
    }
}

impl Chooser for TiePolicy {
    fn choose(&mut self, _round: usize, _action: Action, tied: &[CandidateId]) -> Option<CandidateId> {
        match self {
            TiePolicy::LowestIndex => tied.iter().copied().min(),
            TiePolicy::HighestIndex => tied.iter().copied().max(),
        }
    }
}

/// Per-round record of a traced count.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Tally at the start of the round; `None` for candidates no longer standing.
    pub tallies: Vec<Option<BigRational>>,
    /// One step, or several when the remaining candidates are elected together.
    pub steps: Vec<Step>,
    pub transfer_value: Option<BigRational>,
    /// Cumulative exhausted value after the round's transfer.
    pub exhausted: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountResult {
    pub order: CandidateOrder,
    pub rounds: Vec<RoundRecord>,
    pub elected: BTreeSet<CandidateId>,
    pub tie_policy: TiePolicy,
}

impl CountResult {
    pub fn round_tallies(&self) -> Vec<Vec<Option<BigRational>>> {
        self.rounds.iter().map(|r| r.tallies.clone()).collect()
    }

    /// Transfer value of each election round that distributed a surplus.
    pub fn transfer_values(&self) -> Vec<(usize, BigRational)> {
        self.rounds
            .iter()
            .filter_map(|r| r.transfer_value.clone().map(|t| (r.round, t)))
            .collect()
    }

    pub fn exhausted_by_round(&self) -> Vec<BigRational> {
        self.rounds.iter().map(|r| r.exhausted.clone()).collect()
    }

    /// Round (1-based) in which `c` was elected or eliminated.
    pub fn round_of(&self, c: CandidateId) -> Option<usize> {
        self.rounds
            .iter()
            .find(|r| r.steps.iter().any(|s| s.candidate == c))
            .map(|r| r.round)
    }
}

/// Raw result of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub steps: Vec<Step>,
    pub elected: Vec<CandidateId>,
    pub rounds: Vec<RoundRecord>,
    /// True when the chooser stopped the count before all seats filled.
    pub stopped_early: bool,
    /// Number of trailing steps that elected the last candidates together.
    pub forced: usize,
}

struct Parcel<T> {
    ballot: usize,
    pos: usize,
    count: u64,
    value: T,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Standing,
    Elected,
    Eliminated,
}

/// Ballot data the engine runs on: rankings with counts, plus the contest shape.
#[derive(Debug, Clone)]
pub struct Contest<'a> {
    pub num_candidates: usize,
    pub seats: usize,
    pub quota: u64,
    pub ballots: Vec<(&'a [CandidateId], u64)>,
    total: u64,
}

impl<'a> Contest<'a> {
    pub fn new(num_candidates: usize, seats: usize, quota: u64, profile: &'a Profile) -> Self {
        Contest {
            num_candidates,
            seats,
            quota,
            ballots: profile.iter().map(|(s, n)| (s.ranking(), n)).collect(),
            total: profile.total(),
        }
    }

    pub fn of(election: &'a Election) -> Self {
        Contest::new(election.num_candidates(), election.seats, election.quota, &election.profile)
    }

    pub fn from_ballots(num_candidates: usize, seats: usize, quota: u64, ballots: Vec<(&'a [CandidateId], u64)>) -> Self {
        let total = ballots.iter().map(|b| b.1).sum();
        Contest {
            num_candidates,
            seats,
            quota,
            ballots,
            total,
        }
    }

    /// Whether `Ratio<i128>` arithmetic is guaranteed not to overflow.
    ///
    /// Each surplus transfer can at most square the running denominator and
    /// multiply it by the total, so denominators stay below total^(2^seats).
    fn small(&self) -> bool {
        let t = (self.total.max(self.quota).max(2)) as f64;
        let exponent = (1u64 << self.seats.min(40)) as f64 + 1.0;
        exponent * t.log10() <= 30.0
    }

    pub fn simulate<C: Chooser>(&self, chooser: &mut C, trace: bool) -> Option<Outcome> {
        if self.small() {
            simulate::<Ratio<i128>, C>(self, chooser, trace)
        } else {
            simulate::<BigRational, C>(self, chooser, trace)
        }
    }

    pub fn elected(&self, policy: TiePolicy) -> BTreeSet<CandidateId> {
        let mut p = policy;
        self.simulate(&mut p, false)
            .expect("tie policies never abort")
            .elected
            .into_iter()
            .collect()
    }

    /// Calls `visit` with the outcome of every tie resolution until it returns
    /// true. Returns whether any call did.
    pub fn any_outcome<F: FnMut(&Outcome) -> bool>(&self, mut visit: F) -> bool {
        let mut script: Vec<usize> = Vec::new();
        loop {
            let mut s = Scripted {
                script: script.clone(),
                pos: 0,
                branching: Vec::new(),
            };
            let out = self.simulate(&mut s, false).expect("scripted runs never abort");
            if visit(&out) {
                return true;
            }
            let b = s.branching;
            let mut next = s.script;
            loop {
                match next.len() {
                    0 => return false,
                    l if next[l - 1] + 1 < b[l - 1] => {
                        next[l - 1] += 1;
                        break;
                    }
                    _ => {
                        next.pop();
                    }
                }
            }
            script = next;
        }
    }

    /// Every elected set reachable by some resolution of ties.
    pub fn possible_outcomes(&self) -> BTreeSet<BTreeSet<CandidateId>> {
        let mut all = BTreeSet::new();
        self.any_outcome(|o| {
            all.insert(o.elected.iter().copied().collect());
            false
        });
        all
    }

    /// True when some tie resolution yields an elected set other than `winners`.
    pub fn can_change(&self, winners: &BTreeSet<CandidateId>) -> bool {
        self.any_outcome(|o| o.elected.iter().copied().collect::<BTreeSet<_>>() != *winners)
    }

    /// True when some resolution of ties makes the count begin with `order`.
    ///
    /// Steps listed after all seats are filled must be eliminations, and steps
    /// covering a block of simultaneous forced elections may list those
    /// candidates in any order.
    pub fn realizes(&self, order: &CandidateOrder) -> bool {
        let mut f = Follow { order, ok: true };
        match self.simulate(&mut f, false) {
            None => false,
            Some(out) => {
                if out.stopped_early {
                    return true;
                }
                let taken = out.steps.len();
                order.steps[taken.min(order.len())..]
                    .iter()
                    .all(|s| s.action == Action::Eliminated)
            }
        }
    }
}

struct Scripted {
    script: Vec<usize>,
    pos: usize,
    branching: Vec<usize>,
}

impl Chooser for Scripted {
    fn choose(&mut self, _round: usize, _action: Action, tied: &[CandidateId]) -> Option<CandidateId> {
        if tied.len() == 1 {
            return Some(tied[0]);
        }
        if self.pos == self.script.len() {
            self.script.push(0);
        }
        self.branching.push(tied.len());
        let pick = tied[self.script[self.pos]];
        self.pos += 1;
        Some(pick)
    }
}

/// Steers ties toward a target order, aborting on the first divergence.
struct Follow<'o> {
    order: &'o CandidateOrder,
    ok: bool,
}

impl Chooser for Follow<'_> {
    fn choose(&mut self, round: usize, action: Action, tied: &[CandidateId]) -> Option<CandidateId> {
        let want = self.order.steps.get(round - 1)?;
        if want.action == action && tied.contains(&want.candidate) {
            Some(want.candidate)
        } else {
            self.ok = false;
            None
        }
    }

    fn forced(&mut self, round: usize, elected: &[CandidateId]) -> bool {
        let rest = &self.order.steps[(round - 1).min(self.order.len())..];
        let k = rest.len().min(elected.len());
        rest[..k]
            .iter()
            .all(|s| s.action == Action::Elected && elected.contains(&s.candidate))
            && rest[k..].is_empty()
    }

    fn done(&self, steps_taken: usize) -> bool {
        steps_taken >= self.order.len()
    }
}

fn weight<T: Weight>(n: u64) -> T {
    T::from_u64(n).expect("count fits the weight type")
}

fn simulate<T: Weight, C: Chooser>(contest: &Contest<'_>, chooser: &mut C, trace: bool) -> Option<Outcome> {
    let n = contest.num_candidates;
    let q: T = weight(contest.quota);
    let total: T = weight(contest.total);
    let mut status = vec![Status::Standing; n];
    let mut piles: Vec<Vec<Parcel<T>>> = (0..n).map(|_| Vec::new()).collect();
    for (i, (r, cnt)) in contest.ballots.iter().enumerate() {
        if *cnt > 0 {
            piles[r[0]].push(Parcel {
                ballot: i,
                pos: 0,
                count: *cnt,
                value: T::one(),
            });
        }
    }
    let tally = |pile: &Vec<Parcel<T>>| -> T {
        pile.iter()
            .fold(T::zero(), |acc, p| acc + weight::<T>(p.count) * p.value.clone())
    };

    let mut steps = Vec::new();
    let mut elected = Vec::new();
    let mut rounds = Vec::new();
    let mut retained = T::zero();
    let mut round = 1;
    let mut stopped_early = false;
    let mut forced_len = 0;

    loop {
        if elected.len() == contest.seats {
            break;
        }
        if chooser.done(steps.len()) {
            stopped_early = true;
            break;
        }
        let standing: Vec<CandidateId> = (0..n).filter(|&c| status[c] == Status::Standing).collect();
        let tallies: Vec<T> = (0..n)
            .map(|c| if status[c] == Status::Standing { tally(&piles[c]) } else { T::zero() })
            .collect();
        let start: Vec<Option<BigRational>> = if trace {
            (0..n)
                .map(|c| (status[c] == Status::Standing).then(|| tallies[c].to_big()))
                .collect()
        } else {
            Vec::new()
        };
        let record = |steps: Vec<Step>, tau: Option<&T>, exhausted: &T| RoundRecord {
            round,
            tallies: start.clone(),
            steps,
            transfer_value: tau.map(|t| t.to_big()),
            exhausted: exhausted.to_big(),
        };

        let remaining = contest.seats - elected.len();
        if standing.len() <= remaining {
            let mut forced = standing.clone();
            forced.sort_by(|a, b| tallies[*b].cmp(&tallies[*a]).then(a.cmp(b)));
            if !chooser.forced(round, &forced) {
                return None;
            }
            let new_steps: Vec<Step> = forced.iter().map(|&c| Step::elect(c)).collect();
            for &c in &forced {
                retained = retained + tallies[c].clone().min(q.clone());
            }
            if trace {
                let standing_left = T::zero();
                let ex = total.clone() - retained.clone() - standing_left;
                rounds.push(record(new_steps.clone(), None, &ex));
            }
            forced_len = new_steps.len();
            steps.extend(new_steps);
            elected.extend(forced);
            break;
        }

        let at_quota: Vec<CandidateId> = standing.iter().copied().filter(|&c| tallies[c] >= q).collect();
        let (step, tau) = if !at_quota.is_empty() {
            let best = at_quota.iter().map(|&c| tallies[c].clone()).max().unwrap();
            let tied: Vec<CandidateId> = at_quota.iter().copied().filter(|&c| tallies[c] == best).collect();
            let c = chooser.choose(round, Action::Elected, &tied)?;
            let surplus = tallies[c].clone() - q.clone();
            status[c] = Status::Elected;
            retained = retained + q.clone();
            elected.push(c);
            if elected.len() == contest.seats {
                // The count is over; no surplus is distributed.
                piles[c].clear();
                if trace {
                    let live = (0..n)
                        .filter(|&x| status[x] == Status::Standing)
                        .fold(T::zero(), |acc, x| acc + tally(&piles[x]));
                    let ex = total.clone() - retained.clone() - live;
                    rounds.push(record(vec![Step::elect(c)], None, &ex));
                }
                steps.push(Step::elect(c));
                break;
            }
            let skip: Vec<bool> = (0..n)
                .map(|x| status[x] != Status::Standing || at_quota.contains(&x))
                .collect();
            let pile = std::mem::take(&mut piles[c]);
            let moves: Vec<(Parcel<T>, Option<(usize, CandidateId)>)> = pile
                .into_iter()
                .map(|p| {
                    let next = next_preference(contest.ballots[p.ballot].0, p.pos, &skip);
                    (p, next)
                })
                .collect();
            let transferable = moves
                .iter()
                .filter(|(_, nx)| nx.is_some())
                .fold(T::zero(), |acc, (p, _)| acc + weight::<T>(p.count) * p.value.clone());
            let tau = if transferable > surplus {
                surplus / transferable
            } else {
                T::one()
            };
            for (p, nx) in moves {
                if let Some((pos, dest)) = nx {
                    piles[dest].push(Parcel {
                        ballot: p.ballot,
                        pos,
                        count: p.count,
                        value: p.value * tau.clone(),
                    });
                }
            }
            (Step::elect(c), Some(tau))
        } else {
            let low = standing.iter().map(|&c| tallies[c].clone()).min().unwrap();
            let tied: Vec<CandidateId> = standing.iter().copied().filter(|&c| tallies[c] == low).collect();
            let c = chooser.choose(round, Action::Eliminated, &tied)?;
            status[c] = Status::Eliminated;
            let skip: Vec<bool> = (0..n).map(|x| status[x] != Status::Standing).collect();
            for p in std::mem::take(&mut piles[c]) {
                if let Some((pos, dest)) = next_preference(contest.ballots[p.ballot].0, p.pos, &skip) {
                    piles[dest].push(Parcel { pos, ..p });
                }
            }
            (Step::eliminate(c), None)
        };
        if trace {
            let live = (0..n)
                .filter(|&c| status[c] == Status::Standing)
                .fold(T::zero(), |acc, c| acc + tally(&piles[c]));
            let ex = total.clone() - retained.clone() - live;
            rounds.push(record(vec![step], tau.as_ref(), &ex));
        }
        steps.push(step);
        round += 1;
    }
    Some(Outcome {
        steps,
        elected,
        rounds,
        stopped_early,
        forced: forced_len,
    })
}

fn next_preference(ranking: &[CandidateId], pos: usize, skip: &[bool]) -> Option<(usize, CandidateId)> {
    ranking
        .iter()
        .enumerate()
        .skip(pos + 1)
        .find(|(_, &c)| !skip[c])
        .map(|(i, &c)| (i, c))
}

/// Runs the count with full tracing and exact big-rational output.
pub fn run_count(election: &Election, tie_break: TiePolicy) -> CountResult {
    let contest = Contest::of(election);
    let mut policy = tie_break;
    let out = contest.simulate(&mut policy, true).expect("tie policies never abort");
    CountResult {
        order: CandidateOrder::new(out.steps),
        elected: out.elected.into_iter().collect(),
        rounds: out.rounds,
        tie_policy: tie_break,
    }
}

/// Renders a rational with `places` decimals, rounding half to even.
pub fn decimal(r: &BigRational, places: u32) -> String {
    let scale = BigInt::from(10u32).pow(places);
    let scaled = r * BigRational::from_integer(scale.clone());
    let (q, rem) = scaled.numer().div_mod_floor(scaled.denom());
    let twice = rem * 2;
    let d = scaled.denom();
    let q = if twice > *d || (twice == *d && q.is_odd()) { q + 1 } else { q };
    let neg = q.is_negative();
    let digits = q.abs().to_string();
    let p = places as usize;
    let padded = format!("{:0>width$}", digits, width = p + 1);
    let (int, frac) = padded.split_at(padded.len() - p);
    let sign = if neg { "-" } else { "" };
    if p == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}

/// Lossy conversion used for display and floating-point models.
pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::election::{parse_profile, Signature};

    pub(crate) const EXAMPLE1: &str = "seats: 2\ncandidates: c1,c2,c3,c4\n4: c2,c3\n20: c1\n9: c3,c4\n\
                                     6: c2,c3,c4\n15: c4,c1,c2\n6: c1,c3\n";
    pub(crate) const EXAMPLE2: &str = "seats: 2\ncandidates: c1,c2,c3,c4\n5: c1,c2,c3\n18: c1\n10: c4,c3\n\
                                     5: c3,c2,c4\n17: c2,c4,c3\n8: c1,c4,c2,c3\n";

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn int(n: i64) -> Option<BigRational> {
        Some(r(n, 1))
    }

    #[test]
    fn example1_trace() {
        let e = parse_profile(EXAMPLE1).unwrap();
        let res = run_count(&e, TiePolicy::LowestIndex);
        assert_eq!(res.order, CandidateOrder::from_pairs(&[(0, 1), (1, 0), (2, 1)]));
        assert_eq!(res.transfer_values(), vec![(1, r(5, 6))]);
        let t = res.round_tallies();
        assert_eq!(t[0], vec![int(26), int(10), int(9), int(15)]);
        assert_eq!(t[1], vec![None, int(10), int(14), int(15)]);
        assert_eq!(t[2], vec![None, None, int(24), int(15)]);
        assert_eq!(res.elected, [0, 2].into_iter().collect());
    }

    #[test]
    fn example2_trace() {
        let e = parse_profile(EXAMPLE2).unwrap();
        assert_eq!(e.quota, 22);
        let res = run_count(&e, TiePolicy::LowestIndex);
        assert_eq!(res.order, CandidateOrder::from_pairs(&[(0, 1), (2, 0), (1, 1)]));
        assert_eq!(res.transfer_values()[0].1, r(9, 13));
        let t = res.round_tallies();
        let shown: Vec<String> = t[1][1..].iter().map(|v| decimal(v.as_ref().unwrap(), 2)).collect();
        assert_eq!(shown, vec!["20.46", "5.00", "15.54"]);
        assert_eq!(decimal(t[2][1].as_ref().unwrap(), 2), "25.46");
    }

    #[test]
    fn two_candidates_single_round() {
        let e = parse_profile("seats: 1\ncandidates: A,B\n2: A\n1: B\n").unwrap();
        let res = run_count(&e, TiePolicy::LowestIndex);
        assert_eq!(res.order, CandidateOrder::from_pairs(&[(0, 1)]));
        assert_eq!(res.rounds.len(), 1);
    }

    #[test]
    fn forced_completion_elects_remaining() {
        // Nobody reaches quota 3; after eliminating A the two left fill both seats.
        let e = parse_profile("seats: 2\ncandidates: A,B,C\n2: A\n2: B\n2: C\n").unwrap();
        let res = run_count(&e, TiePolicy::LowestIndex);
        assert_eq!(res.order, CandidateOrder::from_pairs(&[(0, 0), (1, 1), (2, 1)]));
        assert_eq!(res.rounds.last().unwrap().steps.len(), 2);
    }

    #[test]
    fn tie_policy_is_recorded_and_used() {
        let e = parse_profile("seats: 1\ncandidates: A,B,C\n2: A\n2: B\n1: C,A\n").unwrap();
        let lo = run_count(&e, TiePolicy::LowestIndex);
        let hi = run_count(&e, TiePolicy::HighestIndex);
        assert_eq!(lo.tie_policy, TiePolicy::LowestIndex);
        assert_eq!(lo.elected, [0].into_iter().collect());
        assert_eq!(hi.elected, [0].into_iter().collect());
        let e = parse_profile("seats: 1\ncandidates: A,B,C\n2: A\n2: B\n1: C\n").unwrap();
        let c = Contest::of(&e);
        assert_eq!(c.possible_outcomes().len(), 2);
    }

    #[test]
    fn realizes_follows_ties_and_prefixes() {
        let e = parse_profile(EXAMPLE1).unwrap();
        let c = Contest::of(&e);
        assert!(c.realizes(&CandidateOrder::from_pairs(&[(0, 1)])));
        assert!(c.realizes(&CandidateOrder::from_pairs(&[(0, 1), (1, 0), (2, 1), (3, 0)])));
        assert!(!c.realizes(&CandidateOrder::from_pairs(&[(0, 1), (2, 0)])));
        assert!(!c.realizes(&CandidateOrder::from_pairs(&[(0, 1), (1, 0), (2, 1), (3, 1)])));
        assert!(c.realizes(&CandidateOrder::default()));

        let tie = parse_profile("seats: 1\ncandidates: A,B,C\n2: A\n2: B\n1: C\n").unwrap();
        let t = Contest::of(&tie);
        assert!(t.realizes(&CandidateOrder::from_pairs(&[(2, 0), (1, 0), (0, 1)])));
        assert!(t.realizes(&CandidateOrder::from_pairs(&[(2, 0), (0, 0), (1, 1)])));
    }

    #[test]
    fn big_and_small_arithmetic_agree() {
        let e = parse_profile(EXAMPLE2).unwrap();
        let c = Contest::of(&e);
        let small = simulate::<Ratio<i128>, _>(&c, &mut TiePolicy::LowestIndex, true).unwrap();
        let big = simulate::<BigRational, _>(&c, &mut TiePolicy::LowestIndex, true).unwrap();
        assert_eq!(small, big);
    }

    #[test]
    fn decimal_rounds_half_even() {
        assert_eq!(decimal(&r(5, 6), 2), "0.83");
        assert_eq!(decimal(&r(1, 8), 2), "0.12");
        assert_eq!(decimal(&r(3, 8), 2), "0.38");
        assert_eq!(decimal(&r(-1, 3), 2), "-0.33");
        assert_eq!(decimal(&r(7, 2), 0), "4");
    }

    mod props {
        use super::*;
        use num_traits::{One, Zero};
        use proptest::prelude::*;

        fn election() -> impl Strategy<Value = Election> {
            let sigs = Signature::all(4);
            (proptest::collection::vec((0..sigs.len(), 1u64..12), 1..10), 1usize..4).prop_map(
                move |(v, seats)| {
                    let p = Profile::from_counts(v.into_iter().map(|(i, n)| (sigs[i].clone(), n)));
                    Election::new(["a", "b", "c", "d"], p, seats, None).unwrap()
                },
            )
        }

        proptest! {
            #[test]
            fn conservation_and_caps(e in election()) {
                let res = run_count(&e, TiePolicy::LowestIndex);
                prop_assert_eq!(res.elected.len(), e.seats);
                let q = BigRational::from_integer(e.quota.into());
                let total = BigRational::from_integer(e.total().into());
                let mut retained = BigRational::zero();
                for (k, rec) in res.rounds.iter().enumerate() {
                    if let Some(t) = &rec.transfer_value {
                        prop_assert!(*t <= BigRational::one());
                        prop_assert!(*t >= BigRational::zero());
                    }
                    let standing: BigRational = rec.tallies.iter().flatten().sum();
                    // Start-of-round conservation uses the previous round's exhaustion.
                    let ex = if k == 0 { BigRational::zero() } else { res.rounds[k - 1].exhausted.clone() };
                    prop_assert_eq!(standing + retained.clone() + ex, total.clone());
                    for s in &rec.steps {
                        if s.action == Action::Elected {
                            let t = rec.tallies[s.candidate].clone().unwrap();
                            retained += t.min(q.clone());
                        }
                    }
                }
            }

            #[test]
            fn deterministic(e in election()) {
                prop_assert_eq!(run_count(&e, TiePolicy::LowestIndex), run_count(&e, TiePolicy::LowestIndex));
            }

            #[test]
            fn engine_outcome_is_possible(e in election()) {
                let res = run_count(&e, TiePolicy::LowestIndex);
                let c = Contest::of(&e);
                prop_assert!(c.possible_outcomes().contains(&res.elected));
                prop_assert!(c.realizes(&res.order));
            }

            #[test]
            fn at_quota_candidates_gain_nothing(e in election()) {
                let res = run_count(&e, TiePolicy::LowestIndex);
                let q = BigRational::from_integer(e.quota.into());
                for w in res.rounds.windows(2) {
                    for (c, t) in w[0].tallies.iter().enumerate() {
                        if let (Some(a), Some(b)) = (t, &w[1].tallies[c]) {
                            if *a >= q {
                                prop_assert_eq!(a, b);
                            }
                        }
                    }
                }
            }
        }
    }
}
