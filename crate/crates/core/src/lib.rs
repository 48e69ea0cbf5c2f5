//! Fair division of indivisible goods in the variable-group model.
//!
//! A problem instance asks for a partition of `n` agents into `k` groups of
//! prescribed sizes, chosen together with an allocation of `m` goods to those
//! groups. This crate provides:
//!
//! * core domain types and fairness checkers ([`model`]),
//! * a constructive EF1 solver via generalized envy cycle elimination ([`ef1`]),
//! * connected (interval) EF1 allocation on a path of goods ([`connected`]),
//! * random instances, exact and randomized envy-free existence search, and
//!   the probability formulas behind them ([`prob`]),
//! * a reproducible Monte Carlo experiment harness ([`experiments`]).
//!
//! Agents and goods are 1-indexed everywhere; groups are addressed by
//! 1-based ids in anything user-facing (traces, CLI records) and by vector
//! position internally.

pub mod connected;
pub mod ef1;
mod error;
pub mod experiments;
pub mod model;
pub mod prob;

pub(crate) mod mix;

pub use error::{Error, Result};
pub use model::{
    build_envy_graph, is_efc, is_efc_parts, min_c_envy, up_to_one, Allocation, EnvyEdge, EnvyGraph,
    GoodSet, GroupPartition, Instance, Outcome, UtilityModel,
};
