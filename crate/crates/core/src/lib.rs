//! Mining reusable Rocq lemmas from LLM proof trajectories, and measuring how
//! much they help CoqHammer.
//!
//! The pipeline: [`corpus`] indexes a project, [`retrieval`] assembles the
//! context of a theorem, [`extraction`] runs the two-stage prompt through the
//! [`gateway`], [`agent`] checks and repairs each candidate lemma,
//! [`store`] keeps the verified ones, and [`evaluation`] cross-validates their
//! effect on the prover.

pub mod agent;
pub mod corpus;
pub mod evaluation;
pub mod extraction;
pub mod gateway;
pub mod retrieval;
pub mod store;
pub mod text;
