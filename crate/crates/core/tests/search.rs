use std::collections::BTreeSet;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stv_margin::bounds::changes_outcome;
use stv_margin::election::{parse_profile, Profile, Signature};
use stv_margin::model::Mode;
use stv_margin::search::{margin_stv, verify_manipulation, Fate, SearchConfig};
use stv_margin::{run_count, Election, Step, TiePolicy};

const EXAMPLE1: &str = "seats: 2\ncandidates: c1,c2,c3,c4\n4: c2,c3\n20: c1\n9: c3,c4\n\
                      6: c2,c3,c4\n15: c4,c1,c2\n6: c1,c3\n";
const EXAMPLE2: &str = "seats: 2\ncandidates: c1,c2,c3,c4\n5: c1,c2,c3\n18: c1\n10: c4,c3\n\
                      5: c3,c2,c4\n17: c2,c4,c3\n8: c1,c4,c2,c3\n";

fn small_election(rng: &mut ChaCha8Rng) -> Election {
    let n = rng.gen_range(3..=4);
    let all = Signature::all(n);
    let mut profile = Profile::new();
    for _ in 0..rng.gen_range(8..=30) {
        profile.add(all[rng.gen_range(0..all.len())].clone(), 1);
    }
    let names: Vec<String> = (1..=n).map(|i| format!("c{i}")).collect();
    Election::new(names, profile, rng.gen_range(1..=2), None).unwrap()
}

fn config(mode: Mode) -> SearchConfig {
    SearchConfig {
        mode,
        stall_limit: Some(Duration::from_secs(10)),
        ..SearchConfig::default()
    }
}

#[test]
fn batch_width_does_not_change_the_bounds() {
    for text in [EXAMPLE1, EXAMPLE2] {
        let e = parse_profile(text).unwrap();
        for mode in [Mode::Exact, Mode::McCormick] {
            let one = margin_stv(&e, &config(mode)).unwrap();
            let five = margin_stv(&e, &SearchConfig { parallel: 5, ..config(mode) }).unwrap();
            assert_eq!((one.lower, one.upper), (five.lower, five.upper), "{mode:?}");
            assert_eq!(one.exact, five.exact);
        }
    }
}

#[test]
fn second_example_is_settled() {
    let e = parse_profile(EXAMPLE2).unwrap();
    let r = margin_stv(&e, &config(Mode::Exact)).unwrap();
    assert!(r.exact, "{:?}", r.stats);
    assert_eq!(r.lower, r.upper);
    assert!(changes_outcome(&e, &r.winners, &r.certificate));
    assert_eq!(r.certificate.size(), r.upper);
    let v = verify_manipulation(&e, &r.winners, &r.certificate).unwrap();
    assert_eq!(v.certified_ub, Some(r.upper));
}

#[test]
fn relaxed_searches_bracket_the_exact_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut compared = 0;
    for _ in 0..40 {
        let e = small_election(&mut rng);
        let exact = margin_stv(&e, &config(Mode::Exact)).unwrap();
        if !exact.exact {
            continue;
        }
        compared += 1;
        let mov = exact.lower;
        for mode in [Mode::McCormick, Mode::Piecewise(2), Mode::Piecewise(6)] {
            let r = margin_stv(&e, &config(mode)).unwrap();
            assert!(r.lower <= mov && mov <= r.upper, "{mode:?}: [{}, {}] vs {mov}\n{}", r.lower, r.upper, e.to_native());
            assert!(changes_outcome(&e, &r.winners, &r.certificate));
        }
    }
    assert!(compared >= 30, "only {compared} exact runs settled");
}

#[test]
fn fixed_prefix_only_raises_the_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let e = small_election(&mut rng);
        let free = margin_stv(&e, &config(Mode::Exact)).unwrap();
        let fixed = match margin_stv(&e, &SearchConfig { fix_rounds: 1, ..config(Mode::Exact) }) {
            Ok(r) => r,
            // Single-round counts have nothing left to search.
            Err(_) => continue,
        };
        assert!(fixed.conditional);
        if free.exact && fixed.exact {
            assert!(fixed.lower >= free.lower, "{} < {}\n{}", fixed.lower, free.lower, e.to_native());
        }
        let first = run_count(&e, TiePolicy::LowestIndex).rounds[0].steps.clone();
        for rec in fixed.evaluations.iter().filter(|r| r.fate != Fate::Pruned) {
            let keep: Vec<&Step> = first.iter().filter(|s| s.action == stv_margin::Action::Elected).collect();
            for s in keep {
                assert!(rec.order.steps.contains(s), "{:?} lost {s:?}", rec.order);
            }
        }
    }
}

#[test]
fn wall_limit_keeps_bounds_ordered() {
    let e = parse_profile(EXAMPLE2).unwrap();
    let r = margin_stv(
        &e,
        &SearchConfig {
            wall_limit: Some(Duration::from_millis(1)),
            ..config(Mode::Exact)
        },
    )
    .unwrap();
    assert!(r.lower <= r.upper);
    if r.timed_out {
        assert!(!r.exact);
    }
    let winners: BTreeSet<_> = r.winners.clone();
    assert!(changes_outcome(&e, &winners, &r.certificate));
}
