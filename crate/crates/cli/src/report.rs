//! Reports: a JSON document plus a plain-text rendering of the same data.

use std::fmt::Write as _;

use num_rational::BigRational;
use serde::Serialize;
use serde_json::{json, Value};

use stv_margin::bounds::{
    initial_upper_bound, simple_stv_ub, winner_drops, winner_elimination_ub, HalfRule, UpperBound,
};
use stv_margin::count::{decimal, run_count, TiePolicy};
use stv_margin::election::{Action, CandidateOrder, Election, Manipulation, Signature};
use stv_margin::model::{status_str, Evaluation};
use stv_margin::oracle::{brute_force_mov, OracleValue};
use stv_margin::search::{margin_stv, SearchConfig};

use crate::{AppError, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct ElectionDigest {
    pub candidates: Vec<String>,
    pub seats: usize,
    pub quota: u64,
    pub ballots: u64,
    pub distinct_rankings: usize,
    /// FNV-1a of the normalised ballot file.
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub kind: &'static str,
    pub config: RunConfig,
    pub election: ElectionDigest,
    pub result: Value,
    #[serde(skip)]
    text: String,
}

impl Report {
    fn new(kind: &'static str, config: RunConfig, e: &Election, result: Value, text: String) -> Report {
        Report {
            schema_version: SCHEMA_VERSION,
            kind,
            config,
            election: digest(e),
            result,
            text,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    pub fn to_text(&self) -> String {
        self.text.clone()
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn digest(e: &Election) -> ElectionDigest {
    ElectionDigest {
        candidates: e.candidates.iter().map(|c| c.name.clone()).collect(),
        seats: e.seats,
        quota: e.quota,
        ballots: e.total(),
        distinct_rankings: e.profile.distinct(),
        fingerprint: format!("{:016x}", fnv1a(&e.to_native())),
    }
}

fn ranking(e: &Election, s: &Signature) -> Vec<String> {
    s.ranking().iter().map(|&c| e.name(c).to_string()).collect()
}

pub fn manipulation_json(e: &Election, m: &Manipulation) -> Value {
    let side = |map: &std::collections::BTreeMap<Signature, u64>| -> Vec<Value> {
        map.iter()
            .map(|(s, n)| json!({ "ranking": ranking(e, s), "count": n }))
            .collect()
    };
    json!({ "size": m.size(), "removals": side(&m.removals), "additions": side(&m.additions) })
}

fn manipulation_text(e: &Election, m: &Manipulation) -> String {
    let mut out = String::new();
    for (label, map) in [("remove", &m.removals), ("add", &m.additions)] {
        for (s, n) in map {
            let _ = writeln!(out, "  {label:<6} {n:>4} x {}", e.format_signature(s));
        }
    }
    out
}

fn order_json(e: &Election, o: &CandidateOrder) -> Value {
    Value::Array(
        o.steps
            .iter()
            .map(|s| {
                let action = match s.action {
                    Action::Elected => "elected",
                    Action::Eliminated => "eliminated",
                };
                json!({ "candidate": e.name(s.candidate), "action": action })
            })
            .collect(),
    )
}

fn rational(r: &BigRational) -> Value {
    json!({ "exact": r.to_string(), "decimal": decimal(r, 2) })
}

fn names<'a>(e: &'a Election, set: impl IntoIterator<Item = &'a usize>) -> Vec<String> {
    set.into_iter().map(|&c| e.name(c).to_string()).collect()
}

pub fn count(config: RunConfig, e: &Election, policy: TiePolicy) -> Report {
    let res = run_count(e, policy);
    let rounds: Vec<Value> = res
        .rounds
        .iter()
        .map(|r| {
            json!({
                "round": r.round,
                "tallies": r.tallies.iter().map(|t| t.as_ref().map_or(Value::Null, rational)).collect::<Vec<_>>(),
                "steps": order_json(e, &CandidateOrder::new(r.steps.clone())),
                "transfer_value": r.transfer_value.as_ref().map_or(Value::Null, rational),
                "exhausted": rational(&r.exhausted),
            })
        })
        .collect();
    let result = json!({
        "tie_policy": policy,
        "order": order_json(e, &res.order),
        "order_text": res.order.display(e),
        "elected": names(e, &res.elected),
        "rounds": rounds,
    });

    let width = e.candidates.iter().map(|c| c.name.len()).max().unwrap_or(1).max(8);
    let mut text = format!("Quota {}  Seats {}  Ballots {}\n\n{:<6}", e.quota, e.seats, e.total(), "Round");
    for c in &e.candidates {
        let _ = write!(text, " {:>width$}", c.name);
    }
    let _ = writeln!(text, "  Action");
    for r in &res.rounds {
        let _ = write!(text, "{:<6}", r.round);
        for t in &r.tallies {
            let cell = t.as_ref().map_or("-".to_string(), |v| decimal(v, 2));
            let _ = write!(text, " {cell:>width$}");
        }
        let acts: Vec<String> = r
            .steps
            .iter()
            .map(|s| match s.action {
                Action::Elected => format!("{} elected", e.name(s.candidate)),
                Action::Eliminated => format!("{} eliminated", e.name(s.candidate)),
            })
            .collect();
        let _ = write!(text, "  {}", acts.join(", "));
        if let Some(t) = &r.transfer_value {
            let _ = write!(text, " (transfer value {t})");
        }
        text.push('\n');
    }
    let _ = writeln!(text, "\nOrder   {}", res.order.display(e));
    let _ = writeln!(text, "Elected {}", names(e, &res.elected).join(", "));
    Report::new("count", config, e, result, text)
}

fn bound_json(e: &Election, b: &UpperBound) -> Value {
    json!({ "value": b.value, "source": b.source, "certificate": manipulation_json(e, &b.certificate) })
}

pub fn bounds(config: RunConfig, e: &Election) -> Report {
    let count = run_count(e, TiePolicy::LowestIndex);
    let winners = e.winners.clone().unwrap_or_else(|| count.elected.clone());
    let weub = winner_elimination_ub(e, &count);
    let simple = simple_stv_ub(e, &winners);
    let best = initial_upper_bound(e, &count);
    let drops: Vec<Value> = winner_drops(&count, HalfRule::Corrected)
        .iter()
        .map(|d| {
            json!({
                "round": d.round,
                "eliminated": e.name(d.eliminated),
                "winner": e.name(d.winner),
                "votes": d.votes,
            })
        })
        .collect();
    let result = json!({
        "weub": weub,
        "simple": simple,
        "best": bound_json(e, &best),
        "winner_drops": drops,
    });
    let mut text = format!(
        "Winner elimination bound {weub}\nSimple bound             {simple}\nBest certified bound     {} ({:?})\n",
        best.value, best.source
    );
    text.push_str(&manipulation_text(e, &best.certificate));
    Report::new("bounds", config, e, result, text)
}

pub fn margin(config: RunConfig, e: &Election, search: &SearchConfig) -> Result<Report, AppError> {
    let r = margin_stv(e, search).map_err(|err| AppError::Analysis(err.to_string()))?;
    let evaluations: Vec<Value> = r
        .evaluations
        .iter()
        .map(|ev| {
            json!({
                "order": ev.order.display(e),
                "rule_lb": ev.rule_lb,
                "model_status": ev.model_status,
                "model_lb": ev.model_lb.filter(|&b| b != u64::MAX),
                "infeasible": ev.model_lb == Some(u64::MAX),
                "lb": (ev.lb != u64::MAX).then_some(ev.lb),
                "fate": ev.fate,
            })
        })
        .collect();
    let result = json!({
        "lower": r.lower,
        "upper": r.upper,
        "exact": r.exact,
        "conditional": r.conditional,
        "timed_out": r.timed_out,
        "winners": names(e, &r.winners),
        "upper_source": r.upper_source,
        "certificate": manipulation_json(e, &r.certificate),
        "stats": r.stats,
        "history": r.history,
        "evaluations": evaluations,
    });
    let label = config
        .inputs
        .first()
        .and_then(|p| p.file_name())
        .map_or("-".into(), |s| s.to_string_lossy().into_owned());
    let mut text = format!(
        "{:<20} {:>5} {:>5} {:>8} {:>7} {:>6} {:>6} {:>6} {:>7} {:>9}\n",
        "Election", "Cands", "Seats", "Ballots", "Quota", "L", "UB", "Exact", "Models", "Time"
    );
    let _ = writeln!(
        text,
        "{:<20} {:>5} {:>5} {:>8} {:>7} {:>6} {:>6} {:>6} {:>7} {:>8.2}s",
        label,
        e.num_candidates(),
        e.seats,
        e.total(),
        e.quota,
        r.lower,
        r.upper,
        if r.exact { "yes" } else { "no" },
        r.stats.models_solved,
        r.stats.wall_ms as f64 / 1000.0
    );
    if r.conditional {
        let _ = writeln!(text, "\nBounds hold for counts that keep the first {} rounds.", search.fix_rounds);
    }
    if r.timed_out {
        let _ = writeln!(text, "\nStopped at the wall-clock limit.");
    }
    let _ = writeln!(text, "\nCertificate ({} ballots, {:?}):", r.certificate.size(), r.upper_source);
    text.push_str(&manipulation_text(e, &r.certificate));
    Ok(Report::new("margin", config, e, result, text))
}

fn oracle_value(v: OracleValue) -> Value {
    match v {
        OracleValue::Exact(k) => json!({ "exact": k }),
        OracleValue::Exceeds(k) => json!({ "exceeds": k }),
    }
}

fn oracle_text(v: OracleValue) -> String {
    match v {
        OracleValue::Exact(k) => k.to_string(),
        OracleValue::Exceeds(k) => format!("> {k}"),
    }
}

pub fn oracle(config: RunConfig, e: &Election, kmax: u64) -> Report {
    let r = brute_force_mov(e, kmax);
    let result = json!({
        "kmax": kmax,
        "adversarial": oracle_value(r.adversarial),
        "engine": oracle_value(r.engine),
        "defender": r.defender.map(oracle_value),
        "witness": r.witness.as_ref().map(|m| manipulation_json(e, m)),
    });
    let mut text = format!(
        "Margin, any tie resolution   {}\nMargin, engine tie policy    {}\n",
        oracle_text(r.adversarial),
        oracle_text(r.engine)
    );
    if let Some(d) = r.defender {
        let _ = writeln!(text, "Margin, every tie resolution {}", oracle_text(d));
    }
    if let Some(m) = &r.witness {
        text.push_str("Witness:\n");
        text.push_str(&manipulation_text(e, m));
    }
    Report::new("oracle", config, e, result, text)
}

pub fn external(config: RunConfig, e: &Election, order: &CandidateOrder, ev: &Evaluation) -> Report {
    let result = json!({
        "order": order.display(e),
        "status": status_str(ev.status),
        "bound": (ev.bound != u64::MAX).then_some(ev.bound),
        "incumbent": ev.incumbent,
        "manipulation": ev.manipulation.as_ref().map(|m| manipulation_json(e, m)),
    });
    let mut text = format!(
        "Order {}\nStatus {}\nBound {}\n",
        order.display(e),
        status_str(ev.status),
        if ev.bound == u64::MAX { "infeasible".into() } else { ev.bound.to_string() }
    );
    if let Some(m) = &ev.manipulation {
        text.push_str(&manipulation_text(e, m));
    }
    Report::new("external-solve", config, e, result, text)
}
