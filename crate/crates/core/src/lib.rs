//! Verification of weighted endorsement policies.
//!
//! A [`Policy`] lists organizations with integer voting weights and refusal
//! probabilities, together with a weight threshold and a probability
//! threshold. From it this crate builds the binary response tree (a DTMC with
//! one level per organization), labels every node with the accepted weight
//! along its path, synthesizes the reachability property
//! `P > θ [ F targets ]`, and checks that property three ways:
//!
//! * exactly, with a dynamic-programming oracle ([`oracle`]),
//! * by fixed-sample Monte-Carlo estimation ([`smc::estimate_probability`]),
//! * by Wald's sequential probability ratio test ([`smc::hypothesis_test`]).
//!
//! The model and property can also be emitted in PRISM syntax ([`prism`]).
//!
//! Monte-Carlo batches run on rayon when the default `rayon` feature is on and
//! sequentially otherwise; both paths produce bit-identical results.

pub mod dtmc;
pub mod oracle;
pub mod policy;
pub mod prism;
pub mod smc;

pub use dtmc::{
    build_dtmc, generate_rejection_spec, generate_spec, label_weights, DtmcError, DtmcModel,
    DtmcNode, NodeIndex, PltlSpec, Reply, SpecKind, DEFAULT_MAX_ORGANIZATIONS,
};
pub use oracle::{
    exact_acceptance_probability, exact_rejection_probability, verdict_exact, weight_distribution,
    OutcomeDistribution,
};
pub use policy::{parse_policy, total_weight, Organization, Policy, PolicyError};
pub use smc::{
    estimate_probability, hypothesis_test, required_samples, simulate_outcome, Decision, Estimate,
    Execution, HypothesisResult, IntervalKind, ResultRecord, SimConfig, SmcError, TestKind,
};
