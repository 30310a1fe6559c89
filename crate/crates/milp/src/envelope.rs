//! Linear relaxations of bilinear products `z = x·y`.
//!
//! Both builders take the bounds of `x` and `y` as given; the caller is
//! responsible for passing valid ones. The piecewise relaxation partitions the
//! domain of `x` into segments selected by binaries and applies the McCormick
//! envelope inside the active segment, with `y` split into per-segment
//! deviation variables so the envelope stays linear.

use crate::model::{LinExpr, LinearModel, VarId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvelopeError {
    #[error("breakpoints must be strictly increasing, got {0:?}")]
    NonMonotone(Vec<f64>),
    #[error("need at least two breakpoints")]
    TooFew,
    #[error("inconsistent bounds for {0}")]
    Bounds(&'static str),
}

/// Adds the four McCormick inequalities for `z = x·y` over the box
/// `[xl, xu] × [yl, yu]`.
#[allow(clippy::too_many_arguments)]
pub fn mccormick_envelope(
    model: &mut LinearModel,
    tag: &str,
    z: VarId,
    x: VarId,
    y: VarId,
    (xl, xu): (f64, f64),
    (yl, yu): (f64, f64),
) -> Result<(), EnvelopeError> {
    if xl > xu {
        return Err(EnvelopeError::Bounds("x"));
    }
    if yl > yu {
        return Err(EnvelopeError::Bounds("y"));
    }
    let lin = |a: f64, b: f64, c: f64| LinExpr::term(y, a) + LinExpr::term(x, b) + LinExpr::constant(c);
    model.ge(format!("{tag}_mc1"), z, lin(xl, yl, -xl * yl));
    model.ge(format!("{tag}_mc2"), z, lin(xu, yu, -xu * yu));
    model.le(format!("{tag}_mc3"), z, lin(xu, yl, -xu * yl));
    model.le(format!("{tag}_mc4"), z, lin(xl, yu, -xl * yu));
    Ok(())
}

/// Segment selection for one partitioned variable. Products sharing the same
/// `x` share one partition.
#[derive(Debug, Clone)]
pub struct Partition {
    pub x: VarId,
    pub breakpoints: Vec<f64>,
    pub lambdas: Vec<VarId>,
    tag: String,
}

/// `K` equal segments over `[lo, hi]`. Uniform grids nest when one `K`
/// divides another.
pub fn uniform_breakpoints(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let k = k.max(1);
    (0..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect()
}

impl Partition {
    /// Adds the segment binaries, `Σλ = 1`, and the bracketing of `x`.
    pub fn new(model: &mut LinearModel, tag: &str, x: VarId, breakpoints: &[f64]) -> Result<Partition, EnvelopeError> {
        if breakpoints.len() < 2 {
            return Err(EnvelopeError::TooFew);
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EnvelopeError::NonMonotone(breakpoints.to_vec()));
        }
        let k = breakpoints.len() - 1;
        let lambdas: Vec<VarId> = if k == 1 {
            // A single segment needs no selector; fix it to one.
            vec![model.add_var(format!("{tag}_lam1"), 1.0, 1.0, crate::VarKind::Binary)]
        } else {
            (1..=k).map(|s| model.binary(format!("{tag}_lam{s}"))).collect()
        };
        model.eq(format!("{tag}_one"), LinExpr::sum(lambdas.iter().copied()), 1.0);
        let mut lo = LinExpr::new();
        let mut hi = LinExpr::new();
        for (s, &l) in lambdas.iter().enumerate() {
            lo.add_term(l, breakpoints[s]);
            hi.add_term(l, breakpoints[s + 1]);
        }
        model.ge(format!("{tag}_xlo"), x, lo);
        model.le(format!("{tag}_xhi"), x, hi);
        Ok(Partition {
            x,
            breakpoints: breakpoints.to_vec(),
            lambdas,
            tag: tag.to_string(),
        })
    }

    /// Adds the piecewise envelope of `z = x·y` for `y ∈ [yl, yu]`.
    pub fn add_product(&self, model: &mut LinearModel, tag: &str, z: VarId, y: VarId, (yl, yu): (f64, f64)) -> Result<(), EnvelopeError> {
        if yl > yu {
            return Err(EnvelopeError::Bounds("y"));
        }
        let x = self.x;
        let bp = &self.breakpoints;
        let w = yu - yl;
        let dys: Vec<VarId> = (0..self.lambdas.len())
            .map(|s| model.continuous(format!("{tag}_{}_dy{}", self.tag, s + 1), 0.0, w))
            .collect();
        let mut ysum = LinExpr::constant(yl);
        for (s, &dy) in dys.iter().enumerate() {
            ysum.add_term(dy, 1.0);
            model.le(format!("{tag}_dy{}", s + 1), dy, LinExpr::term(self.lambdas[s], w));
        }
        model.eq(format!("{tag}_ysplit"), y, ysum);

        let mut lower_a = LinExpr::term(x, yu); // z >= yU x + Σ x_k dy_k - w Σ x_k λ_k
        let mut upper_a = LinExpr::term(x, yu); // z <= yU x + Σ x_{k-1} dy_k - w Σ x_{k-1} λ_k
        let mut upper_b = LinExpr::term(x, yl); // z <= yL x + Σ x_k dy_k
        let mut lower_b = LinExpr::term(x, yl); // z >= yL x + Σ x_{k-1} dy_k
        for (s, (&dy, &lam)) in dys.iter().zip(&self.lambdas).enumerate() {
            let (a, b) = (bp[s], bp[s + 1]);
            lower_a.add_term(dy, b).add_term(lam, -w * b);
            upper_a.add_term(dy, a).add_term(lam, -w * a);
            upper_b.add_term(dy, b);
            lower_b.add_term(dy, a);
        }
        model.ge(format!("{tag}_pw1"), z, lower_a);
        model.le(format!("{tag}_pw2"), z, upper_a);
        model.le(format!("{tag}_pw3"), z, upper_b);
        model.ge(format!("{tag}_pw4"), z, lower_b);
        Ok(())
    }
}

/// How bilinear terms are replaced by linear constraints.
#[derive(Debug, Clone, PartialEq)]
pub enum Relaxation {
    McCormick,
    /// Uniform partition of every `x` into `K` segments.
    Piecewise(usize),
    /// Explicit breakpoints per partitioned variable (by index of `x`);
    /// variables without an entry get a single segment.
    Breakpoints(Vec<(VarId, Vec<f64>)>),
}

/// Copies `model` with every bilinear term replaced by its relaxation.
pub fn relax(model: &LinearModel, how: &Relaxation) -> Result<LinearModel, EnvelopeError> {
    let mut out = model.clone();
    out.bilinear.clear();
    let bounds = |v: VarId| (model.vars[v.0].lower, model.vars[v.0].upper);
    match how {
        Relaxation::McCormick => {
            for (i, b) in model.bilinear.iter().enumerate() {
                mccormick_envelope(&mut out, &format!("bl{i}"), b.z, b.x, b.y, bounds(b.x), bounds(b.y))?;
            }
        }
        _ => {
            let mut parts: Vec<Partition> = Vec::new();
            for (i, b) in model.bilinear.iter().enumerate() {
                let idx = match parts.iter().position(|p| p.x == b.x) {
                    Some(k) => k,
                    None => {
                        let (xl, xu) = bounds(b.x);
                        let bp = match how {
                            Relaxation::Piecewise(k) => uniform_breakpoints(xl, xu, *k),
                            Relaxation::Breakpoints(list) => list
                                .iter()
                                .find(|(v, _)| *v == b.x)
                                .map(|(_, bp)| bp.clone())
                                .unwrap_or_else(|| vec![xl, xu]),
                            Relaxation::McCormick => unreachable!(),
                        };
                        let name = format!("part_{}", model.vars[b.x.0].name);
                        parts.push(Partition::new(&mut out, &name, b.x, &bp)?);
                        parts.len() - 1
                    }
                };
                parts[idx].add_product(&mut out, &format!("bl{i}"), b.z, b.y, bounds(b.y))?;
            }
        }
    }
    Ok(out)
}
