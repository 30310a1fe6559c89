//! Ballot profiles, elections, candidate orders and the two input formats.
//!
//! Ballots are never stored individually. A [`Profile`] maps each distinct
//! ranking (a [`Signature`]) to the number of ballots that carry it, and every
//! downstream algorithm works on those counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Dense candidate index, `0..n`.
pub type CandidateId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: CandidateId,
    pub name: String,
}

/// A strict, possibly partial ranking of candidates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(Vec<CandidateId>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SignatureError {
    #[error("ranking is empty")]
    Empty,
    #[error("candidate {0} is ranked twice")]
    Duplicate(CandidateId),
}

impl Signature {
    pub fn new(ranking: Vec<CandidateId>) -> Result<Self, SignatureError> {
        if ranking.is_empty() {
            return Err(SignatureError::Empty);
        }
        let mut seen = BTreeSet::new();
        for &c in &ranking {
            if !seen.insert(c) {
                return Err(SignatureError::Duplicate(c));
            }
        }
        Ok(Signature(ranking))
    }

    /// Builds a signature from a literal ranking, panicking on invalid input.
    /// Intended for tests and fixtures.
    pub fn of(ranking: &[CandidateId]) -> Self {
        Signature::new(ranking.to_vec()).expect("invalid literal ranking")
    }

    pub fn first(&self) -> CandidateId {
        self.0[0]
    }

    pub fn ranking(&self) -> &[CandidateId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, c: CandidateId) -> Option<usize> {
        self.0.iter().position(|&x| x == c)
    }

    /// Enumerates every nonempty strict ranking over `n` candidates, shortest
    /// first and lexicographically within a length.
    pub fn all(n: usize) -> Vec<Signature> {
        let mut out = Vec::new();
        let mut frontier: Vec<Vec<CandidateId>> = vec![vec![]];
        for _ in 0..n {
            let mut next = Vec::new();
            for prefix in &frontier {
                for c in 0..n {
                    if !prefix.contains(&c) {
                        let mut r = prefix.clone();
                        r.push(c);
                        next.push(r);
                    }
                }
            }
            out.extend(next.iter().cloned().map(Signature));
            frontier = next;
        }
        out
    }
}

/// Multiset of ballot signatures.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    counts: BTreeMap<Signature, u64>,
    total: u64,
}

impl Profile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<I: IntoIterator<Item = (Signature, u64)>>(items: I) -> Self {
        let mut p = Profile::new();
        for (s, n) in items {
            p.add(s, n);
        }
        p
    }

    pub fn add(&mut self, s: Signature, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry(s).or_insert(0) += n;
        self.total += n;
    }

    /// Removes `n` ballots of signature `s`, returning false (and leaving the
    /// profile untouched) when fewer than `n` exist.
    pub fn remove(&mut self, s: &Signature, n: u64) -> bool {
        if n == 0 {
            return true;
        }
        match self.counts.get_mut(s) {
            Some(have) if *have >= n => {
                *have -= n;
                if *have == 0 {
                    self.counts.remove(s);
                }
                self.total -= n;
                true
            }
            _ => false,
        }
    }

    pub fn count(&self, s: &Signature) -> u64 {
        self.counts.get(s).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Signature, u64)> + '_ {
        self.counts.iter().map(|(s, &n)| (s, n))
    }

    pub fn signatures(&self) -> impl Iterator<Item = &Signature> + '_ {
        self.counts.keys()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Largest candidate index mentioned, if any.
    fn max_candidate(&self) -> Option<CandidateId> {
        self.counts.keys().flat_map(|s| s.0.iter().copied()).max()
    }
}

/// First-preference tallies: the number of ballots ranking each candidate first.
pub fn primary_votes(profile: &Profile, num_candidates: usize) -> Vec<u64> {
    let mut fp = vec![0u64; num_candidates];
    for (s, n) in profile.iter() {
        fp[s.first()] += n;
    }
    fp
}

/// Droop quota: `floor(total / (seats + 1)) + 1`.
pub fn droop_quota(total_votes: u64, seats: usize) -> u64 {
    total_votes / (seats as u64 + 1) + 1
}

/// A set of ballots to replace: `removals[s]` ballots of signature `s` are
/// rewritten, and the rewritten ballots carry the signatures in `additions`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manipulation {
    #[serde(with = "count_pairs")]
    pub removals: BTreeMap<Signature, u64>,
    #[serde(with = "count_pairs")]
    pub additions: BTreeMap<Signature, u64>,
}

/// Signature maps as `[[ranking, count], ...]`, since JSON keys are strings.
mod count_pairs {
    use super::Signature;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(m: &BTreeMap<Signature, u64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Signature, u64>, D::Error> {
        Ok(Vec::<(Signature, u64)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManipulationError {
    #[error("cannot remove {wanted} ballots of {signature:?}: only {available} cast")]
    NotEnough {
        signature: Signature,
        wanted: u64,
        available: u64,
    },
    #[error("removes {removed} ballots but adds {added}")]
    Unbalanced { removed: u64, added: u64 },
}

impl Manipulation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn remove(&mut self, s: Signature, n: u64) -> &mut Self {
        if n > 0 {
            *self.removals.entry(s).or_insert(0) += n;
        }
        self
    }

    pub fn add(&mut self, s: Signature, n: u64) -> &mut Self {
        if n > 0 {
            *self.additions.entry(s).or_insert(0) += n;
        }
        self
    }

    /// Number of ballots changed.
    pub fn size(&self) -> u64 {
        self.additions.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.removals.is_empty() && self.additions.is_empty()
    }

    /// Drops ballots that are removed and re-added with the same signature.
    pub fn normalized(&self) -> Manipulation {
        let mut out = self.clone();
        for (s, r) in self.removals.iter() {
            if let Some(a) = self.additions.get(s) {
                let k = (*r).min(*a);
                let rr = out.removals.get_mut(s).unwrap();
                *rr -= k;
                if *rr == 0 {
                    out.removals.remove(s);
                }
                let aa = out.additions.get_mut(s).unwrap();
                *aa -= k;
                if *aa == 0 {
                    out.additions.remove(s);
                }
            }
        }
        out
    }
}

/// Applies `m` to `profile`, keeping the total unchanged.
pub fn apply_manipulation(profile: &Profile, m: &Manipulation) -> Result<Profile, ManipulationError> {
    let removed: u64 = m.removals.values().sum();
    let added: u64 = m.additions.values().sum();
    if removed != added {
        return Err(ManipulationError::Unbalanced { removed, added });
    }
    let mut out = profile.clone();
    for (s, &n) in &m.removals {
        if !out.remove(s, n) {
            return Err(ManipulationError::NotEnough {
                signature: s.clone(),
                wanted: n,
                available: profile.count(s),
            });
        }
    }
    for (s, &n) in &m.additions {
        out.add(s.clone(), n);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ElectionError {
    #[error("need 1 <= seats < candidates, got {seats} seats for {candidates} candidates")]
    Seats { seats: usize, candidates: usize },
    #[error("candidate name {0:?} is used twice")]
    DuplicateName(String),
    #[error("ballot ranks candidate index {0}, which does not exist")]
    UnknownIndex(CandidateId),
    #[error("winner set has {got} members but {seats} seats are filled")]
    Winners { got: usize, seats: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Election {
    pub candidates: Vec<Candidate>,
    pub profile: Profile,
    pub seats: usize,
    pub quota: u64,
    /// True when `quota` came from an explicit override rather than Droop.
    pub quota_overridden: bool,
    pub winners: Option<BTreeSet<CandidateId>>,
}

impl Election {
    pub fn new<S: Into<String>>(
        names: impl IntoIterator<Item = S>,
        profile: Profile,
        seats: usize,
        quota: Option<u64>,
    ) -> Result<Self, ElectionError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(ElectionError::DuplicateName(n.clone()));
            }
        }
        if seats == 0 || seats >= names.len() {
            return Err(ElectionError::Seats {
                seats,
                candidates: names.len(),
            });
        }
        if let Some(m) = profile.max_candidate() {
            if m >= names.len() {
                return Err(ElectionError::UnknownIndex(m));
            }
        }
        let candidates = names
            .into_iter()
            .enumerate()
            .map(|(index, name)| Candidate { index, name })
            .collect();
        Ok(Election {
            candidates,
            quota: quota.unwrap_or_else(|| droop_quota(profile.total(), seats)),
            quota_overridden: quota.is_some(),
            profile,
            seats,
            winners: None,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn total(&self) -> u64 {
        self.profile.total()
    }

    pub fn name(&self, c: CandidateId) -> &str {
        &self.candidates[c].name
    }

    pub fn index_of(&self, name: &str) -> Option<CandidateId> {
        self.candidates.iter().position(|c| c.name == name)
    }

    pub fn primary_votes(&self) -> Vec<u64> {
        primary_votes(&self.profile, self.num_candidates())
    }

    pub fn with_winners(mut self, winners: BTreeSet<CandidateId>) -> Result<Self, ElectionError> {
        if winners.len() != self.seats {
            return Err(ElectionError::Winners {
                got: winners.len(),
                seats: self.seats,
            });
        }
        self.winners = Some(winners);
        Ok(self)
    }

    /// Same candidates, seats and quota over a different profile.
    pub fn with_profile(&self, profile: Profile) -> Election {
        Election {
            candidates: self.candidates.clone(),
            profile,
            seats: self.seats,
            quota: self.quota,
            quota_overridden: self.quota_overridden,
            winners: None,
        }
    }

    pub fn format_signature(&self, s: &Signature) -> String {
        let names: Vec<&str> = s.ranking().iter().map(|&c| self.name(c)).collect();
        format!("[{}]", names.join(","))
    }

    /// Renders the election in the native ballot format.
    pub fn to_native(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("seats: {}\n", self.seats));
        let names: Vec<&str> = self.candidates.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&format!("candidates: {}\n", names.join(",")));
        if self.quota_overridden {
            out.push_str(&format!("quota: {}\n", self.quota));
        }
        for (s, n) in self.profile.iter() {
            let r: Vec<&str> = s.ranking().iter().map(|&c| self.name(c)).collect();
            out.push_str(&format!("{}: {}\n", n, r.join(",")));
        }
        out
    }
}

/// Whether a step elects or eliminates its candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Eliminated = 0,
    Elected = 1,
}

impl Action {
    pub fn as_bit(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Step {
    pub candidate: CandidateId,
    pub action: Action,
}

impl Step {
    pub fn elect(candidate: CandidateId) -> Self {
        Step {
            candidate,
            action: Action::Elected,
        }
    }

    pub fn eliminate(candidate: CandidateId) -> Self {
        Step {
            candidate,
            action: Action::Eliminated,
        }
    }
}

/// A sequence of elections and eliminations, possibly partial.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidateOrder {
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrderError {
    #[error("candidate {0} appears twice in the order")]
    Repeated(CandidateId),
    #[error("candidate {0} does not exist")]
    Unknown(CandidateId),
    #[error("order elects {elected} candidates but only {seats} seats exist")]
    TooManyElected { elected: usize, seats: usize },
}

impl CandidateOrder {
    pub fn new(steps: Vec<Step>) -> Self {
        CandidateOrder { steps }
    }

    /// Builds an order from `(candidate, 0|1)` pairs.
    pub fn from_pairs(pairs: &[(CandidateId, u8)]) -> Self {
        CandidateOrder {
            steps: pairs
                .iter()
                .map(|&(c, a)| if a == 0 { Step::eliminate(c) } else { Step::elect(c) })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn elected(&self) -> BTreeSet<CandidateId> {
        self.steps
            .iter()
            .filter(|s| s.action == Action::Elected)
            .map(|s| s.candidate)
            .collect()
    }

    pub fn eliminated(&self) -> BTreeSet<CandidateId> {
        self.steps
            .iter()
            .filter(|s| s.action == Action::Eliminated)
            .map(|s| s.candidate)
            .collect()
    }

    pub fn num_elected(&self) -> usize {
        self.steps.iter().filter(|s| s.action == Action::Elected).count()
    }

    pub fn mentions(&self, c: CandidateId) -> bool {
        self.steps.iter().any(|s| s.candidate == c)
    }

    /// Candidates not yet acted on after the first `round - 1` steps.
    pub fn standing_at(&self, round: usize, num_candidates: usize) -> BTreeSet<CandidateId> {
        let gone: BTreeSet<CandidateId> = self.steps[..(round - 1).min(self.steps.len())]
            .iter()
            .map(|s| s.candidate)
            .collect();
        (0..num_candidates).filter(|c| !gone.contains(c)).collect()
    }

    pub fn unmentioned(&self, num_candidates: usize) -> Vec<CandidateId> {
        (0..num_candidates).filter(|&c| !self.mentions(c)).collect()
    }

    pub fn extended(&self, step: Step) -> CandidateOrder {
        let mut steps = self.steps.clone();
        steps.push(step);
        CandidateOrder { steps }
    }

    pub fn is_prefix_of(&self, other: &CandidateOrder) -> bool {
        other.steps.len() >= self.steps.len() && other.steps[..self.steps.len()] == self.steps[..]
    }

    pub fn validate(&self, num_candidates: usize, seats: usize) -> Result<(), OrderError> {
        let mut seen = BTreeSet::new();
        for s in &self.steps {
            if s.candidate >= num_candidates {
                return Err(OrderError::Unknown(s.candidate));
            }
            if !seen.insert(s.candidate) {
                return Err(OrderError::Repeated(s.candidate));
            }
        }
        let elected = self.num_elected();
        if elected > seats {
            return Err(OrderError::TooManyElected { elected, seats });
        }
        Ok(())
    }

    /// Renders with candidate names, e.g. `[(c1,1),(c2,0)]`.
    pub fn display(&self, election: &Election) -> String {
        let parts: Vec<String> = self
            .steps
            .iter()
            .map(|s| format!("({},{})", election.name(s.candidate), s.action.as_bit()))
            .collect();
        format!("[{}]", parts.join(","))
    }
}

impl fmt::Display for CandidateOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "({},{})", s.candidate, s.action.as_bit())?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
    #[error("candidate {0:?} ranked twice")]
    DuplicateCandidate(String),
    #[error("header {0:?} appears twice")]
    DuplicateHeader(String),
    #[error("ballot line before the `seats:` and `candidates:` headers")]
    MissingHeader,
    #[error("tied ranks are not supported")]
    TiedRanks,
    #[error("{0}")]
    Election(ElectionError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

fn perr(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

fn parse_count(line: usize, s: &str) -> Result<u64, ParseError> {
    match s.trim().parse::<u64>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(perr(line, ParseErrorKind::Malformed(format!("bad ballot count {:?}", s.trim())))),
    }
}

/// Parses the native ballot format:
///
/// ```text
/// # comment
/// seats: 2
/// candidates: c1,c2,c3,c4
/// quota: 21          (optional)
/// 4: c2,c3
/// 20: c1
/// ```
pub fn parse_profile(text: &str) -> Result<Election, ParseError> {
    let mut seats: Option<(usize, usize)> = None;
    let mut names: Option<(Vec<String>, usize)> = None;
    let mut quota: Option<u64> = None;
    let mut index: HashMap<String, CandidateId> = HashMap::new();
    let mut profile = Profile::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let (head, rest) = body
            .split_once(':')
            .ok_or_else(|| perr(line, ParseErrorKind::Malformed(body.to_string())))?;
        let head = head.trim();
        match head.to_ascii_lowercase().as_str() {
            "seats" => {
                if seats.is_some() {
                    return Err(perr(line, ParseErrorKind::DuplicateHeader("seats".into())));
                }
                let n = rest.trim().parse::<usize>().map_err(|_| {
                    perr(line, ParseErrorKind::Malformed(format!("bad seat count {:?}", rest.trim())))
                })?;
                seats = Some((n, line));
            }
            "candidates" => {
                if names.is_some() {
                    return Err(perr(line, ParseErrorKind::DuplicateHeader("candidates".into())));
                }
                let list: Vec<String> = rest.split(',').map(|s| s.trim().to_string()).collect();
                for (k, n) in list.iter().enumerate() {
                    if n.is_empty() {
                        return Err(perr(line, ParseErrorKind::Malformed("empty candidate name".into())));
                    }
                    if index.insert(n.clone(), k).is_some() {
                        return Err(perr(line, ParseErrorKind::Election(ElectionError::DuplicateName(n.clone()))));
                    }
                }
                names = Some((list, line));
            }
            "quota" => {
                if quota.is_some() {
                    return Err(perr(line, ParseErrorKind::DuplicateHeader("quota".into())));
                }
                let q = rest.trim().parse::<u64>().map_err(|_| {
                    perr(line, ParseErrorKind::Malformed(format!("bad quota {:?}", rest.trim())))
                })?;
                quota = Some(q);
            }
            _ => {
                if seats.is_none() || names.is_none() {
                    return Err(perr(line, ParseErrorKind::MissingHeader));
                }
                let n = parse_count(line, head)?;
                let mut ranking = Vec::new();
                for name in rest.split(',') {
                    let name = name.trim();
                    let c = *index
                        .get(name)
                        .ok_or_else(|| perr(line, ParseErrorKind::UnknownCandidate(name.to_string())))?;
                    if ranking.contains(&c) {
                        return Err(perr(line, ParseErrorKind::DuplicateCandidate(name.to_string())));
                    }
                    ranking.push(c);
                }
                profile.add(Signature(ranking), n);
            }
        }
    }
    let (names, names_line) = names.ok_or_else(|| perr(0, ParseErrorKind::MissingHeader))?;
    let (seats, seats_line) = seats.ok_or_else(|| perr(0, ParseErrorKind::MissingHeader))?;
    Election::new(names, profile, seats, quota)
        .map_err(|e| perr(seats_line.max(names_line), ParseErrorKind::Election(e)))
}

/// Parses a PrefLib strict-order file (modern `# ALTERNATIVE NAME` headers or
/// the legacy numeric header). Candidate numbers are 1-based in the file.
pub fn parse_preflib(text: &str, seats: usize, quota: Option<u64>) -> Result<Election, ParseError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let modern = lines.first().map(|(_, l)| l.starts_with('#')).unwrap_or(true);
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    let mut declared: Option<usize> = None;
    let mut profile = Profile::new();
    let mut body_start = 0;

    if modern {
        for (k, (line, l)) in lines.iter().enumerate() {
            if let Some(h) = l.strip_prefix('#') {
                let h = h.trim();
                if let Some(rest) = h.strip_prefix("NUMBER ALTERNATIVES:") {
                    declared = Some(rest.trim().parse().map_err(|_| {
                        perr(*line, ParseErrorKind::Malformed(l.to_string()))
                    })?);
                } else if let Some(rest) = h.strip_prefix("ALTERNATIVE NAME") {
                    let (num, name) = rest
                        .split_once(':')
                        .ok_or_else(|| perr(*line, ParseErrorKind::Malformed(l.to_string())))?;
                    let num: usize = num
                        .trim()
                        .parse()
                        .map_err(|_| perr(*line, ParseErrorKind::Malformed(l.to_string())))?;
                    names.insert(num, name.trim().to_string());
                }
                body_start = k + 1;
            } else {
                break;
            }
        }
    } else {
        let (line, first) = lines[0];
        let n: usize = first
            .parse()
            .map_err(|_| perr(line, ParseErrorKind::Malformed(first.to_string())))?;
        declared = Some(n);
        for k in 1..=n {
            let (line, l) = *lines
                .get(k)
                .ok_or_else(|| perr(line, ParseErrorKind::Malformed("truncated header".into())))?;
            let (num, name) = l
                .split_once(',')
                .ok_or_else(|| perr(line, ParseErrorKind::Malformed(l.to_string())))?;
            let num: usize = num
                .trim()
                .parse()
                .map_err(|_| perr(line, ParseErrorKind::Malformed(l.to_string())))?;
            names.insert(num, name.trim().to_string());
        }
        // Skip the "voters,sum,unique" summary line.
        body_start = n + 2;
    }

    let n = declared.unwrap_or_else(|| names.keys().copied().max().unwrap_or(0));
    let all_names: Vec<String> = (1..=n)
        .map(|k| names.get(&k).cloned().unwrap_or_else(|| format!("{}", k)))
        .collect();

    for &(line, l) in &lines[body_start.min(lines.len())..] {
        if l.starts_with('#') {
            continue;
        }
        if l.contains('{') || l.contains('}') {
            return Err(perr(line, ParseErrorKind::TiedRanks));
        }
        let (count, rest) = if modern {
            l.split_once(':')
                .ok_or_else(|| perr(line, ParseErrorKind::Malformed(l.to_string())))?
        } else {
            l.split_once(',')
                .ok_or_else(|| perr(line, ParseErrorKind::Malformed(l.to_string())))?
        };
        let count = parse_count(line, count)?;
        let mut ranking = Vec::new();
        for tok in rest.split(',') {
            let tok = tok.trim();
            let k: usize = tok
                .parse()
                .map_err(|_| perr(line, ParseErrorKind::UnknownCandidate(tok.to_string())))?;
            if k == 0 || k > n {
                return Err(perr(line, ParseErrorKind::UnknownCandidate(tok.to_string())));
            }
            if ranking.contains(&(k - 1)) {
                return Err(perr(line, ParseErrorKind::DuplicateCandidate(tok.to_string())));
            }
            ranking.push(k - 1);
        }
        profile.add(Signature(ranking), count);
    }
    Election::new(all_names, profile, seats, quota).map_err(|e| perr(0, ParseErrorKind::Election(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE1: &str = "\
# two seats, four candidates
seats: 2
candidates: c1,c2,c3,c4
4: c2,c3
20: c1
9: c3,c4
6: c2,c3,c4
15: c4,c1,c2
6: c1,c3
";

    #[test]
    fn droop_examples() {
        assert_eq!(droop_quota(60, 2), 21);
        assert_eq!(droop_quota(64081, 5), 10681);
        assert_eq!(droop_quota(3, 2), 2);
        assert_eq!(droop_quota(1, 1), 1);
    }

    #[test]
    fn parses_native_table() {
        let e = parse_profile(EXAMPLE1).unwrap();
        assert_eq!(e.total(), 60);
        assert_eq!(e.quota, 21);
        assert_eq!(e.primary_votes(), vec![26, 10, 9, 15]);
        assert_eq!(e.profile.distinct(), 6);
    }

    #[test]
    fn single_ballot_file() {
        let e = parse_profile("seats: 1\ncandidates: c1,c2\n1: c1\n").unwrap();
        assert_eq!(e.total(), 1);
        assert_eq!(e.quota, 1);
    }

    #[test]
    fn quota_override_survives_round_trip() {
        let e = parse_profile("seats: 1\ncandidates: a,b\nquota: 5\n3: a\n2: b,a\n").unwrap();
        assert_eq!(e.quota, 5);
        let again = parse_profile(&e.to_native()).unwrap();
        assert_eq!(again, e);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_profile("seats: 2\ncandidates: a,b,c\n3: a,d\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(matches!(err.kind, ParseErrorKind::UnknownCandidate(_)));

        let err = parse_profile("seats: 2\ncandidates: a,b,c\n\n3: a,b,a\n").unwrap_err();
        assert_eq!(err.line, 4);
        assert!(matches!(err.kind, ParseErrorKind::DuplicateCandidate(_)));

        let err = parse_profile("seats: 2\ncandidates: a,b,c\nx: a\n").unwrap_err();
        assert_eq!(err.line, 3);

        let err = parse_profile("seats: 3\ncandidates: a,b,c\n1: a\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(matches!(err.kind, ParseErrorKind::Election(ElectionError::Seats { .. })));

        let err = parse_profile("1: a\nseats: 1\ncandidates: a,b\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.kind, ParseErrorKind::MissingHeader);

        let err = parse_profile("seats: 1\ncandidates: a,b\n0: a\n").unwrap_err();
        assert_eq!(err.line, 3);
    }

    #[test]
    fn preflib_modern_and_legacy() {
        let modern = "# FILE NAME: x.soi\n# NUMBER ALTERNATIVES: 3\n# ALTERNATIVE NAME 1: A\n\
                      # ALTERNATIVE NAME 2: B\n# ALTERNATIVE NAME 3: C\n2: 1,2\n1: 2\n";
        let e = parse_preflib(modern, 1, None).unwrap();
        assert_eq!(e.total(), 3);
        assert_eq!(e.profile.count(&Signature::of(&[0, 1])), 2);
        assert_eq!(e.profile.count(&Signature::of(&[1])), 1);
        assert_eq!(e.name(2), "C");

        let legacy = "3\n1,A\n2,B\n3,C\n3,3,2\n2,1,2\n1,2\n";
        let l = parse_preflib(legacy, 1, None).unwrap();
        assert_eq!(l.profile, e.profile);
    }

    #[test]
    fn preflib_rejects_ties() {
        let text = "# NUMBER ALTERNATIVES: 3\n2: 1,{2,3}\n";
        let err = parse_preflib(text, 1, None).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::TiedRanks);
        assert_eq!(err.line, 2);
    }

    #[test]
    fn manipulation_applies_and_checks() {
        let e = parse_profile(EXAMPLE1).unwrap();
        let mut m = Manipulation::new();
        m.remove(Signature::of(&[2, 3]), 2).add(Signature::of(&[1, 2]), 2);
        let p = apply_manipulation(&e.profile, &m).unwrap();
        assert_eq!(p.total(), 60);
        assert_eq!(primary_votes(&p, 4), vec![26, 12, 7, 15]);

        assert_eq!(apply_manipulation(&e.profile, &Manipulation::new()).unwrap(), e.profile);

        let mut bad = Manipulation::new();
        bad.remove(Signature::of(&[2, 3]), 10).add(Signature::of(&[0]), 10);
        assert!(matches!(
            apply_manipulation(&e.profile, &bad),
            Err(ManipulationError::NotEnough { available: 9, .. })
        ));
        let mut unbalanced = Manipulation::new();
        unbalanced.remove(Signature::of(&[0]), 1);
        assert!(matches!(
            apply_manipulation(&e.profile, &unbalanced),
            Err(ManipulationError::Unbalanced { .. })
        ));
    }

    #[test]
    fn manipulation_json_uses_pairs() {
        let mut m = Manipulation::new();
        m.remove(Signature::of(&[2, 3]), 2).add(Signature::of(&[1]), 2);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"removals":[[[2,3],2]],"additions":[[[1],2]]}"#);
        assert_eq!(serde_json::from_str::<Manipulation>(&text).unwrap(), m);
    }

    #[test]
    fn all_signatures_count() {
        assert_eq!(Signature::all(3).len(), 15);
        assert_eq!(Signature::all(4).len(), 64);
    }

    #[test]
    fn order_sets() {
        let o = CandidateOrder::from_pairs(&[(0, 1), (1, 0), (2, 1)]);
        assert_eq!(o.elected(), [0, 2].into_iter().collect());
        assert_eq!(o.eliminated(), [1].into_iter().collect());
        assert_eq!(o.standing_at(2, 4), [1, 2, 3].into_iter().collect());
        assert!(o.validate(4, 2).is_ok());
        assert!(o.validate(4, 1).is_err());
        assert!(CandidateOrder::from_pairs(&[(0, 1), (0, 0)]).validate(4, 2).is_err());
        assert_eq!(o.to_string(), "[(0,1),(1,0),(2,1)]");
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn profile_strategy() -> impl Strategy<Value = Profile> {
            let sigs = Signature::all(4);
            proptest::collection::vec((0..sigs.len(), 1u64..30), 0..12).prop_map(move |v| {
                Profile::from_counts(v.into_iter().map(|(i, n)| (sigs[i].clone(), n)))
            })
        }

        proptest! {
            #[test]
            fn primaries_sum_to_total(p in profile_strategy()) {
                prop_assert_eq!(primary_votes(&p, 4).iter().sum::<u64>(), p.total());
            }

            #[test]
            fn native_round_trip(p in profile_strategy(), seats in 1usize..4) {
                let e = Election::new(["a", "b", "c", "d"], p, seats, None).unwrap();
                let back = parse_profile(&e.to_native()).unwrap();
                prop_assert_eq!(back.profile, e.profile);
            }

            #[test]
            fn droop_monotone(t in 0u64..100_000, s in 1usize..20) {
                prop_assert!(droop_quota(t, s) <= droop_quota(t + 1, s));
                prop_assert!(droop_quota(t, s + 1) <= droop_quota(t, s));
            }
        }
    }
}
