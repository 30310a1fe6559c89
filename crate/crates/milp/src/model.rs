//! Linear model representation.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

impl VarKind {
    pub fn is_integral(self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

/// Sparse affine expression `Σ coef·var + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(v: VarId, c: f64) -> Self {
        LinExpr {
            terms: vec![(v, c)],
            constant: 0.0,
        }
    }

    pub fn sum<I: IntoIterator<Item = VarId>>(vars: I) -> Self {
        LinExpr {
            terms: vars.into_iter().map(|v| (v, 1.0)).collect(),
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: VarId, c: f64) -> &mut Self {
        if c != 0.0 {
            self.terms.push((v, c));
        }
        self
    }

    /// Merges duplicate variables and drops zero coefficients, sorted by id.
    pub fn normalized(&self) -> LinExpr {
        let mut map: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(v, c) in &self.terms {
            *map.entry(v).or_insert(0.0) += c;
        }
        LinExpr {
            terms: map.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            constant: self.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v.0]).sum::<f64>() + self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    /// Interval of values the expression can take within variable bounds.
    pub fn range(&self, vars: &[Variable]) -> (f64, f64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for &(v, c) in &self.terms {
            let var = &vars[v.0];
            if c >= 0.0 {
                lo += c * var.lower;
                hi += c * var.upper;
            } else {
                lo += c * var.upper;
                hi += c * var.lower;
            }
        }
        (lo, hi)
    }
}

impl From<VarId> for LinExpr {
    fn from(v: VarId) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl AddAssign<LinExpr> for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl AddAssign<&LinExpr> for LinExpr {
    fn add_assign(&mut self, rhs: &LinExpr) {
        self.terms.extend(rhs.terms.iter().copied());
        self.constant += rhs.constant;
    }
}

impl SubAssign<LinExpr> for LinExpr {
    fn sub_assign(&mut self, rhs: LinExpr) {
        *self += -rhs;
    }
}

impl SubAssign<&LinExpr> for LinExpr {
    fn sub_assign(&mut self, rhs: &LinExpr) {
        *self += -rhs.clone();
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

impl<T: Into<LinExpr>> Add<T> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: T) -> LinExpr {
        self += rhs.into();
        self
    }
}

impl<T: Into<LinExpr>> Sub<T> for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: T) -> LinExpr {
        self -= rhs.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    /// Left-hand side without constant; constants live in `rhs`.
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `z = x · y`, kept only by models that are solved with spatial refinement.
/// `x` is the variable whose domain gets partitioned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bilinear {
    pub z: VarId,
    pub x: VarId,
    pub y: VarId,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("variable {0} has inconsistent bounds [{1}, {2}]")]
    Bounds(String, f64, f64),
    #[error("constraint {0} has a non-finite coefficient")]
    NonFinite(String),
    #[error("constraint {0} references an undeclared variable")]
    UnknownVariable(String),
    #[error("variable {0} needs finite bounds")]
    Unbounded(String),
    #[error("bilinear term {0} has an undeclared operand")]
    BadBilinear(usize),
}

#[derive(Debug, Clone, Default)]
pub struct LinearModel {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Minimised.
    pub objective: LinExpr,
    pub bilinear: Vec<Bilinear>,
}

impl LinearModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> VarId {
        let (lower, upper) = if kind == VarKind::Binary {
            (lower.max(0.0), upper.min(1.0))
        } else {
            (lower, upper)
        };
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            kind,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn integer(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Integer)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    /// Adds `lhs sense rhs`, moving constants to the right-hand side.
    pub fn add_constraint(&mut self, name: impl Into<String>, lhs: LinExpr, sense: Sense, rhs: impl Into<LinExpr>) {
        let e = (lhs - rhs.into()).normalized();
        self.constraints.push(Constraint {
            name: name.into(),
            terms: e.terms,
            sense,
            rhs: -e.constant,
        });
    }

    pub fn le(&mut self, name: impl Into<String>, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add_constraint(name, lhs.into(), Sense::Le, rhs);
    }

    pub fn ge(&mut self, name: impl Into<String>, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add_constraint(name, lhs.into(), Sense::Ge, rhs);
    }

    pub fn eq(&mut self, name: impl Into<String>, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add_constraint(name, lhs.into(), Sense::Eq, rhs);
    }

    pub fn set_objective(&mut self, obj: LinExpr) {
        self.objective = obj.normalized();
    }

    pub fn add_bilinear(&mut self, z: VarId, x: VarId, y: VarId) {
        self.bilinear.push(Bilinear { z, x, y });
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for v in &self.vars {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(ModelError::Bounds(v.name.clone(), v.lower, v.upper));
            }
            if !v.lower.is_finite() || !v.upper.is_finite() {
                return Err(ModelError::Unbounded(v.name.clone()));
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() || c.terms.iter().any(|t| !t.1.is_finite()) {
                return Err(ModelError::NonFinite(c.name.clone()));
            }
            if c.terms.iter().any(|t| t.0 .0 >= self.vars.len()) {
                return Err(ModelError::UnknownVariable(c.name.clone()));
            }
        }
        if self.objective.terms.iter().any(|t| t.0 .0 >= self.vars.len() || !t.1.is_finite()) {
            return Err(ModelError::NonFinite("objective".into()));
        }
        for (i, b) in self.bilinear.iter().enumerate() {
            if [b.z, b.x, b.y].iter().any(|v| v.0 >= self.vars.len()) {
                return Err(ModelError::BadBilinear(i));
            }
        }
        Ok(())
    }

    /// True when every feasible objective value is an integer, which lets
    /// the search round node bounds up.
    pub fn integral_objective(&self) -> bool {
        self.objective.constant.fract() == 0.0
            && self
                .objective
                .terms
                .iter()
                .all(|&(v, c)| c.fract() == 0.0 && self.vars[v.0].kind.is_integral())
    }

    /// Largest violation of any bound, constraint or bilinear identity at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &val) in self.vars.iter().zip(x) {
            worst = worst.max(v.lower - val).max(val - v.upper);
            if v.kind.is_integral() {
                worst = worst.max((val - val.round()).abs());
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(v, k)| k * x[v.0]).sum();
            let viol = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for b in &self.bilinear {
            worst = worst.max((x[b.z.0] - x[b.x.0] * x[b.y.0]).abs());
        }
        worst
    }
}
