use milp::{
    branch_and_bound, read_lp, relax, solve_exact, write_lp, FixIntegers, LinExpr, LinearModel, Limits, RefineOptions,
    Relaxation, Status,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HI: i64 = 4;

/// A small pure-integer program with every variable in `0..=HI`.
fn random_ip(rng: &mut ChaCha8Rng) -> (LinearModel, Vec<Vec<i64>>, Vec<(i64, char)>, Vec<i64>) {
    let n = rng.gen_range(2..=4);
    let rows = rng.gen_range(1..=4);
    let mut m = LinearModel::new();
    let vars: Vec<_> = (0..n).map(|i| m.integer(format!("x{i}"), 0.0, HI as f64)).collect();
    let mut coef = Vec::new();
    let mut rhs = Vec::new();
    for r in 0..rows {
        let a: Vec<i64> = (0..n).map(|_| rng.gen_range(-3..=3)).collect();
        let b = rng.gen_range(-4..=8);
        let sense = ['<', '>', '='][rng.gen_range(0..3)];
        let lhs = a
            .iter()
            .zip(&vars)
            .fold(LinExpr::new(), |e, (&c, &v)| e + LinExpr::term(v, c as f64));
        match sense {
            '<' => m.le(format!("r{r}"), lhs, b as f64),
            '>' => m.ge(format!("r{r}"), lhs, b as f64),
            _ => m.eq(format!("r{r}"), lhs, b as f64),
        }
        coef.push(a);
        rhs.push((b, sense));
    }
    let obj: Vec<i64> = (0..n).map(|_| rng.gen_range(-3..=3)).collect();
    m.set_objective(
        obj.iter()
            .zip(&vars)
            .fold(LinExpr::new(), |e, (&c, &v)| e + LinExpr::term(v, c as f64)),
    );
    (m, coef, rhs, obj)
}

fn enumerate(coef: &[Vec<i64>], rhs: &[(i64, char)], obj: &[i64]) -> Option<i64> {
    let n = obj.len();
    let mut best = None;
    let mut x = vec![0i64; n];
    loop {
        let ok = coef.iter().zip(rhs).all(|(a, &(b, s))| {
            let v: i64 = a.iter().zip(&x).map(|(c, xi)| c * xi).sum();
            match s {
                '<' => v <= b,
                '>' => v >= b,
                _ => v == b,
            }
        });
        if ok {
            let v: i64 = obj.iter().zip(&x).map(|(c, xi)| c * xi).sum();
            best = Some(best.map_or(v, |b: i64| b.min(v)));
        }
        let mut i = 0;
        while i < n && x[i] == HI {
            x[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
        x[i] += 1;
    }
}

#[test]
fn integer_programs_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let (m, coef, rhs, obj) = random_ip(&mut rng);
        let r = branch_and_bound(&m, &Limits::default()).unwrap();
        match enumerate(&coef, &rhs, &obj) {
            None => assert_eq!(r.status, Status::Infeasible, "case {case}\n{}", write_lp(&m)),
            Some(v) => {
                assert_eq!(r.status, Status::Optimal, "case {case}");
                assert_eq!(r.incumbent.unwrap().round() as i64, v, "case {case}\n{}", write_lp(&m));
                let x = r.assignment.unwrap();
                assert!(m.max_violation(&x) <= 1e-6, "case {case}");
            }
        }
    }
}

#[test]
fn lp_text_preserves_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (m, ..) = random_ip(&mut rng);
        let back = read_lp(&write_lp(&m)).unwrap();
        let a = branch_and_bound(&m, &Limits::default()).unwrap();
        let b = branch_and_bound(&back, &Limits::default()).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.incumbent, b.incumbent);
    }
}

/// min y  s.t.  z = x * y,  z >= need,  x <= cap + slope * y, with x a
/// fraction and y an integer count.
fn product_model(need: f64, cap: f64, slope: f64) -> LinearModel {
    let mut m = LinearModel::new();
    let y = m.integer("y", 0.0, 12.0);
    let x = m.continuous("x", 0.0, 1.0);
    let z = m.continuous("z", 0.0, 12.0);
    m.add_bilinear(z, x, y);
    m.ge("need", z, need);
    m.le("cap", x, LinExpr::term(y, slope) + cap);
    m.set_objective(LinExpr::from(y));
    m
}

fn optimum(m: &LinearModel) -> f64 {
    let r = branch_and_bound(m, &Limits::default()).unwrap();
    match r.status {
        Status::Optimal => r.incumbent.unwrap(),
        Status::Infeasible => f64::INFINITY,
        s => panic!("unexpected {s:?}"),
    }
}

#[test]
fn relaxations_nest_below_the_exact_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..60 {
        let need = rng.gen_range(0.5..6.0);
        let cap = rng.gen_range(0.05..0.9);
        let slope = rng.gen_range(0.0..0.1);
        let m = product_model(need, cap, slope);
        let mc = optimum(&relax(&m, &Relaxation::McCormick).unwrap());
        let p2 = optimum(&relax(&m, &Relaxation::Piecewise(2)).unwrap());
        let p4 = optimum(&relax(&m, &Relaxation::Piecewise(4)).unwrap());
        let exact = solve_exact(&m, &Limits::default(), &RefineOptions::default(), &mut FixIntegers::default()).unwrap();
        // Smallest y whose largest admissible x covers the need.
        let truth = (0..=12)
            .map(f64::from)
            .find(|&y| y * (cap + slope * y).min(1.0) >= need - 1e-9)
            .unwrap_or(f64::INFINITY);
        let e = match exact.status {
            Status::Optimal => exact.incumbent.unwrap(),
            Status::Infeasible => f64::INFINITY,
            s => panic!("case {case}: {s:?}"),
        };
        assert!(mc <= p2 && p2 <= p4 && p4 <= e, "case {case}: {mc} {p2} {p4} {e}");
        assert_eq!(e, truth, "case {case}: need {need} cap {cap} slope {slope}");
    }
}
