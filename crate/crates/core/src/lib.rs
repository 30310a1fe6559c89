//! Margin-of-victory computation for Single Transferable Vote elections.
//!
//! The crate is organised as a pipeline:
//!
//! * [`election`] holds profiles, ballot parsing and quotas.
//! * [`count`] runs the Inclusive Gregory count exactly.
//! * [`bounds`] gives cheap upper bounds and a prefix lower-bound rule.
//! * [`model`] builds the optimisation model that finds the cheapest
//!   manipulation realising a given election/elimination order.
//! * [`search`] explores orders best-first and returns certified bounds.
//! * [`oracle`] is an exhaustive reference for tiny elections.

pub mod bounds;
pub mod count;
pub mod election;
pub mod model;
pub mod oracle;
pub mod routes;
pub mod search;

pub use count::{run_count, CountResult, TiePolicy};
pub use election::{
    apply_manipulation, droop_quota, parse_preflib, parse_profile, primary_votes, Action, Candidate,
    CandidateId, CandidateOrder, Election, Manipulation, Profile, Signature, Step,
};
