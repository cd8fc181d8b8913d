//! Learning probabilistic hierarchical task networks (pHTNs) from plan traces.
//!
//! A pHTN in Chomsky normal form is a probabilistic context-free grammar whose
//! words are primitive actions. This crate covers the whole pipeline:
//!
//! * [`grammar`]: the data model, validation, normalization and sampling.
//! * [`parser`]: Viterbi CYK parsing plus an exhaustive enumeration oracle.
//! * [`structure`]: the greedy structure hypothesizer that invents tasks.
//! * [`em`]: hard-assignment expectation maximization over Viterbi parses.
//! * [`rescale`]: clustering and transitive closure of observation records
//!   so that preferences can be learned despite feasibility constraints.
//! * [`eval`]: random oracles, KL estimation, record simulation and the
//!   pairwise preference game.
//! * [`io`]: the plain-text corpus, record and grammar formats.

pub mod em;
pub mod eval;
pub mod grammar;
pub mod io;
pub mod parser;
pub mod rescale;
pub mod rng;
pub mod structure;

pub use em::{em_estep_counts, em_fit, CountTable, EmConfig, EmError, EmReport};
pub use grammar::{Body, Grammar, GrammarError, Plan, SampleError, Schema, Violation, WeightedPlan};
pub use parser::{enumerate_parses, plan_log_likelihood, viterbi_parse, ParseNode, ParseTree, Parser};
pub use rescale::{ObservationRecord, Preference, PreferenceEnsemble};
pub use structure::{hypothesize, ShConfig};

/// Learn a grammar from weighted plans: structure hypothesis followed by EM.
pub fn learn(
    plans: &[WeightedPlan],
    sh: &ShConfig,
    em: &EmConfig,
) -> Result<(Grammar, EmReport), LearnError> {
    let initial = hypothesize(plans, sh)?;
    let (grammar, report) = em_fit(&initial, plans, em)?;
    Ok((grammar, report))
}

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error(transparent)]
    Structure(#[from] structure::StructureError),
    #[error(transparent)]
    Em(#[from] EmError),
}
