//! Reading and writing models in CPLEX LP text format.
//!
//! Bilinear terms are written as quadratic equality rows
//! `name: z - [ x * y ] = 0`, which most solvers accept as non-convex
//! quadratic constraints.

use std::fmt::Write as _;

use crate::model::{Bilinear, LinExpr, LinearModel, Sense, VarId, VarKind, Variable};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct LpParseError {
    pub line: usize,
    pub message: String,
}

fn push_terms(out: &mut String, terms: &[(VarId, f64)], vars: &[Variable]) {
    if terms.is_empty() {
        out.push_str(" 0");
    }
    for (i, &(v, c)) in terms.iter().enumerate() {
        let sign = if c < 0.0 { "-" } else if i == 0 { "" } else { "+" };
        let _ = write!(out, " {sign} {} {}", c.abs(), vars[v.0].name);
    }
}

fn bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Writes the model. Variable names must be unique and free of whitespace
/// and the characters `:[]*+-<>=`.
pub fn write_lp(model: &LinearModel) -> String {
    let mut out = String::new();
    out.push_str("Minimize\n obj:");
    push_terms(&mut out, &model.objective.terms, &model.vars);
    if model.objective.constant != 0.0 {
        let c = model.objective.constant;
        let _ = write!(out, " {} {}", if c < 0.0 { "-" } else { "+" }, c.abs());
    }
    out.push_str("\nSubject To\n");
    for c in &model.constraints {
        let _ = write!(out, " {}:", c.name);
        push_terms(&mut out, &c.terms, &model.vars);
        let _ = writeln!(out, " {} {}", c.sense.symbol(), c.rhs + 0.0);
    }
    for (i, b) in model.bilinear.iter().enumerate() {
        let _ = writeln!(
            out,
            " bl_{i}: {} - [ {} * {} ] = 0",
            model.vars[b.z.0].name, model.vars[b.x.0].name, model.vars[b.y.0].name
        );
    }
    out.push_str("Bounds\n");
    // Every variable is listed so a reader can keep declaration order.
    for v in &model.vars {
        if v.lower == v.upper {
            let _ = writeln!(out, " {} = {}", v.name, v.lower);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", bound(v.lower), v.name, bound(v.upper));
        }
    }
    for (title, kind) in [("General", VarKind::Integer), ("Binary", VarKind::Binary)] {
        let names: Vec<&str> = model.vars.iter().filter(|v| v.kind == kind).map(|v| v.name.as_str()).collect();
        if !names.is_empty() {
            let _ = writeln!(out, "{title}");
            for chunk in names.chunks(8) {
                let _ = writeln!(out, " {}", chunk.join(" "));
            }
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    General,
    Binary,
}

fn section_of(line: &str) -> Option<Section> {
    match line.to_ascii_lowercase().as_str() {
        "minimize" | "minimise" | "min" => Some(Section::Objective),
        "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
        "bounds" | "bound" => Some(Section::Bounds),
        "general" | "generals" | "gen" | "integer" | "integers" => Some(Section::General),
        "binary" | "binaries" | "bin" => Some(Section::Binary),
        _ => None,
    }
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

/// Splits `2x` into `(2, "x")`.
fn split_coefficient(tok: &str) -> Option<(f64, &str)> {
    if !tok.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        return None;
    }
    let at = tok.find(|c: char| c.is_ascii_alphabetic() || c == '_')?;
    Some((tok[..at].parse().ok()?, &tok[at..]))
}

/// Splits `2x+3 y-z` style text into tokens, keeping exponents intact.
fn tokenize(text: &str) -> Vec<String> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &ch) in chars.iter().enumerate() {
        let exponent_sign = (ch == '+' || ch == '-')
            && i > 0
            && matches!(chars[i - 1], 'e' | 'E')
            && cur.len() > 1
            && cur[..cur.len() - 1].parse::<f64>().is_ok();
        if ch.is_whitespace() {
            if !cur.is_empty() {
                toks.push(std::mem::take(&mut cur));
            }
        } else if (ch == '+' || ch == '-' || ch == '[' || ch == ']' || ch == '*') && !exponent_sign {
            if !cur.is_empty() {
                toks.push(std::mem::take(&mut cur));
            }
            toks.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    toks
}

struct Reader {
    model: LinearModel,
}

impl Reader {
    fn var(&mut self, name: &str) -> VarId {
        self.model.var_by_name(name).unwrap_or_else(|| self.model.add_var(name, 0.0, f64::INFINITY, VarKind::Continuous))
    }

    /// Parses a linear expression, with at most one bracketed product.
    fn expr(&mut self, toks: &[String], line: usize) -> Result<(LinExpr, Option<(f64, VarId, VarId)>), LpParseError> {
        let err = |m: &str| LpParseError {
            line,
            message: m.to_string(),
        };
        let mut e = LinExpr::new();
        let mut product = None;
        let mut sign = 1.0;
        let mut coef: Option<f64> = None;
        let mut i = 0;
        while i < toks.len() {
            let t = toks[i].as_str();
            match t {
                "+" | "-" => {
                    if let Some(c) = coef.take() {
                        e.constant += c;
                    }
                    if t == "-" {
                        sign = -sign;
                    }
                }
                "[" => {
                    let close = toks[i..].iter().position(|t| t == "]").ok_or_else(|| err("unclosed '['"))? + i;
                    let inner = &toks[i + 1..close];
                    if inner.len() != 3 || inner[1] != "*" {
                        return Err(err("only products 'x * y' are supported inside brackets"));
                    }
                    let (x, y) = (self.var(&inner[0]), self.var(&inner[2]));
                    if product.is_some() {
                        return Err(err("more than one product in a row"));
                    }
                    product = Some((coef.take().unwrap_or(sign), x, y));
                    sign = 1.0;
                    i = close;
                }
                _ => {
                    if let Some(n) = parse_number(t) {
                        if let Some(c) = coef.take() {
                            e.constant += c;
                        }
                        coef = Some(sign * n);
                        sign = 1.0;
                    } else {
                        let (n, name) = split_coefficient(t).unwrap_or((1.0, t));
                        let v = self.var(name);
                        e.add_term(v, coef.take().unwrap_or(sign) * n);
                        sign = 1.0;
                    }
                }
            }
            i += 1;
        }
        if let Some(c) = coef {
            e.constant += c;
        }
        Ok((e, product))
    }
}

fn split_sense(text: &str) -> Option<(&str, Sense, &str)> {
    for (pat, sense) in [("<=", Sense::Le), (">=", Sense::Ge), ("=<", Sense::Le), ("=>", Sense::Ge), ("=", Sense::Eq), ("<", Sense::Le), (">", Sense::Ge)] {
        if let Some(at) = text.find(pat) {
            return Some((&text[..at], sense, &text[at + pat.len()..]));
        }
    }
    None
}

/// Reads a model written by [`write_lp`] or a compatible subset of the
/// format: one minimised objective, linear rows, at most one bracketed
/// product per row (only in the form `z - [ x * y ] = 0`), bounds, general
/// and binary sections. `\` starts a comment.
pub fn read_lp(text: &str) -> Result<LinearModel, LpParseError> {
    let mut r = Reader { model: LinearModel::new() };
    let mut section = Section::None;
    // Statements may continue over several lines; a new one starts at a
    // line holding a label or in a new section.
    let mut statements: Vec<(Section, usize, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(s) = section_of(line) {
            section = s;
            continue;
        }
        if line.eq_ignore_ascii_case("end") {
            break;
        }
        let continues = match (section, statements.last()) {
            (Section::Objective, Some(last)) => last.0 == Section::Objective,
            (Section::Constraints, Some(last)) => {
                last.0 == Section::Constraints && !line.contains(':') && split_sense(&last.2).is_none()
            }
            _ => false,
        };
        if continues {
            let last = statements.last_mut().unwrap();
            last.2.push(' ');
            last.2.push_str(line);
        } else {
            statements.push((section, idx + 1, line.to_string()));
        }
    }

    // Declare variables in bounds order first; the writer lists them all.
    for (sec, _, text) in &statements {
        if *sec == Section::Bounds {
            if let Some(name) = text.split_whitespace().find(|t| parse_number(t).is_none() && !matches!(*t, "<=" | ">=" | "=" | "<" | ">")) {
                if !name.eq_ignore_ascii_case("free") {
                    r.var(name);
                }
            }
        }
    }

    let mut objective_seen = false;
    let mut products: Vec<(usize, String, f64, VarId, VarId, LinExpr, Sense, f64)> = Vec::new();
    let mut bound_lines = Vec::new();
    for (sec, line, text) in statements {
        let err = |m: String| LpParseError { line, message: m };
        match sec {
            Section::None => return Err(err("text before the objective section".into())),
            Section::Objective => {
                if objective_seen {
                    return Err(err("only one objective is supported".into()));
                }
                objective_seen = true;
                let body = text.split_once(':').map_or(text.as_str(), |(_, b)| b);
                let (e, p) = r.expr(&tokenize(body), line)?;
                if p.is_some() {
                    return Err(err("quadratic objectives are not supported".into()));
                }
                r.model.set_objective(e);
            }
            Section::Constraints => {
                let (name, body) = match text.split_once(':') {
                    Some((n, b)) => (n.trim().to_string(), b),
                    None => (format!("r{}", r.model.constraints.len() + products.len()), text.as_str()),
                };
                let (lhs, sense, rhs) = split_sense(body).ok_or_else(|| err(format!("row {name} has no sense")))?;
                let rhs = parse_number(rhs.trim()).ok_or_else(|| err(format!("row {name} needs a numeric right-hand side")))?;
                let (e, p) = r.expr(&tokenize(lhs), line)?;
                match p {
                    None => r.model.add_constraint(name, e, sense, rhs),
                    Some((c, x, y)) => products.push((line, name, c, x, y, e, sense, rhs)),
                }
            }
            Section::Bounds => bound_lines.push((line, text)),
            Section::General | Section::Binary => {
                for name in text.split_whitespace() {
                    let v = r.var(name);
                    let var = &mut r.model.vars[v.0];
                    if sec == Section::Binary {
                        var.kind = VarKind::Binary;
                        var.lower = 0.0;
                        var.upper = 1.0;
                    } else {
                        var.kind = VarKind::Integer;
                    }
                }
            }
        }
    }
    for (line, text) in bound_lines {
        let err = |m: String| LpParseError { line, message: m };
        let toks: Vec<&str> = text.split_whitespace().collect();
        match toks.as_slice() {
            [name, free] if free.eq_ignore_ascii_case("free") => {
                let v = r.var(name);
                r.model.vars[v.0].lower = f64::NEG_INFINITY;
                r.model.vars[v.0].upper = f64::INFINITY;
            }
            [lo, "<=", name, "<=", hi] => {
                let (lo, hi) = (parse_number(lo), parse_number(hi));
                let (Some(lo), Some(hi)) = (lo, hi) else {
                    return Err(err(format!("bad bounds for {name}")));
                };
                let v = r.var(name);
                r.model.vars[v.0].lower = lo;
                r.model.vars[v.0].upper = hi;
            }
            [a, op, b] => {
                let (name, value, op) = match parse_number(a) {
                    Some(n) => (*b, n, match *op {
                        "<=" => ">=",
                        ">=" => "<=",
                        o => o,
                    }),
                    None => (*a, parse_number(b).ok_or_else(|| err(format!("bad bound '{text}'")))?, *op),
                };
                let v = r.var(name);
                let var = &mut r.model.vars[v.0];
                match op {
                    "<=" => var.upper = value,
                    ">=" => var.lower = value,
                    "=" => {
                        var.lower = value;
                        var.upper = value;
                    }
                    _ => return Err(err(format!("bad bound '{text}'"))),
                }
            }
            _ => return Err(err(format!("bad bound '{text}'"))),
        }
    }
    for (line, name, c, x, y, e, sense, rhs) in products {
        // Only `z - [x * y] = 0` maps onto a bilinear identity.
        let ok = sense == Sense::Eq && rhs == 0.0 && e.constant == 0.0 && e.terms.len() == 1 && e.terms[0].1 == -c && c != 0.0;
        if !ok {
            return Err(LpParseError {
                line,
                message: format!("row {name}: products must have the form 'z - [ x * y ] = 0'"),
            });
        }
        r.model.bilinear.push(Bilinear { z: e.terms[0].0, x, y });
    }
    Ok(r.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LinearModel {
        let mut m = LinearModel::new();
        let p = m.integer("p_1", 0.0, 40.0);
        let b = m.binary("d_0");
        let x = m.continuous("tau", 0.125, 0.875);
        let y = m.continuous("y", 0.0, 63.0);
        let z = m.continuous("z", -1.5, 63.0);
        m.ge("need", LinExpr::from(z) + LinExpr::term(p, 0.1) - b, 2.0 / 3.0);
        m.le("cap", LinExpr::term(p, -3.0) + y, 1e-7);
        m.eq("fix", x, LinExpr::constant(0.5));
        m.add_bilinear(z, x, y);
        m.set_objective(LinExpr::from(p) + LinExpr::term(b, 2.0) + 1.0);
        m
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let text = write_lp(&m);
        let back = read_lp(&text).unwrap();
        assert_eq!(back.vars, m.vars);
        assert_eq!(back.constraints, m.constraints);
        assert_eq!(back.bilinear, m.bilinear);
        assert_eq!(back.objective, m.objective);
    }

    #[test]
    fn reads_hand_written() {
        let text = "\\ a comment\nMinimize\n obj: 2x + 3 y\n  - z\nSubject To\n c1: x + y >= 1.5e-1\n c2: y - 2 z <= 4\nBounds\n x <= 10\n -1 <= z <= 1\n 3 >= y\nGeneral\n x\nEnd\n";
        let m = read_lp(text).unwrap();
        assert_eq!(m.vars.len(), 3);
        assert_eq!(m.constraints[0].rhs, 0.15);
        let var = |n: &str| m.var(m.var_by_name(n).unwrap()).clone();
        assert_eq!(var("x").kind, VarKind::Integer);
        assert_eq!((var("x").lower, var("x").upper), (0.0, 10.0));
        assert_eq!((var("y").lower, var("y").upper), (0.0, 3.0));
        assert_eq!((var("z").lower, var("z").upper), (-1.0, 1.0));
        assert_eq!(m.objective.terms.len(), 3);
    }

    #[test]
    fn rejects_bad_product_rows() {
        let text = "Minimize\n obj: z\nSubject To\n q: z + [ x * y ] >= 1\nEnd\n";
        let e = read_lp(text).unwrap_err();
        assert_eq!(e.line, 4);
    }

    #[test]
    fn missing_sense_is_reported() {
        let e = read_lp("Minimize\n obj: x\nSubject To\n c: x + y\nEnd\n").unwrap_err();
        assert_eq!(e.line, 4);
    }

    #[test]
    fn constants_and_signs() {
        let m = read_lp("Minimize\n obj: 3 - x + 2\nSubject To\n c: - 2 y - -1 >= 0\nEnd\n").unwrap();
        assert_eq!(m.objective.constant, 5.0);
        assert_eq!(m.objective.terms, vec![(VarId(0), -1.0)]);
        assert_eq!(m.constraints[0].terms, vec![(VarId(1), -2.0)]);
        assert_eq!(m.constraints[0].rhs, -1.0);
    }
}
