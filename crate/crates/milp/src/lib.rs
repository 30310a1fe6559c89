//! A small mixed-integer linear programming toolkit: model building, a dual
//! simplex with branch and bound, linear relaxations of bilinear products,
//! exact solving of bilinear models by refinement, and LP-format exchange
//! with external solvers.

pub mod bnb;
pub mod envelope;
pub mod exact;
pub mod external;
pub mod lp_format;
pub mod model;
pub mod simplex;

pub use bnb::{branch_and_bound, IncumbentHook, Limits, SolveResult, Status};
pub use envelope::{mccormick_envelope, relax, uniform_breakpoints, EnvelopeError, Partition, Relaxation};
pub use exact::{solve_exact, FixIntegers, RefineOptions, Verifier};
pub use external::{solve_external, ExternalError};
pub use lp_format::{read_lp, write_lp, LpParseError};
pub use model::{Bilinear, Constraint, LinExpr, LinearModel, ModelError, Sense, VarId, VarKind, Variable};

/// Solves a model with the built-in solver. Models with bilinear terms are
/// solved exactly by refinement with [`FixIntegers`] verification.
pub fn solve(model: &LinearModel, limits: &Limits) -> Result<SolveResult, ModelError> {
    if model.bilinear.is_empty() {
        branch_and_bound(model, limits)
    } else {
        solve_exact(model, limits, &RefineOptions::default(), &mut FixIntegers::default())
    }
}
