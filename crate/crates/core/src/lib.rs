//! Synthesis of deceptive policies and deception-resistant reference policies
//! for Markov decision processes under co-safe temporal-logic tasks.
//!
//! An agent that must satisfy its own task while being supervised picks the
//! policy whose path distribution is closest, in KL divergence, to the
//! supervisor's reference policy ([`deceptive`]). The supervisor in turn
//! picks the reference that makes that closest policy as far as possible
//! ([`reference`]). [`simulation`] samples paths and scores them under the
//! reference to compare detection behaviour of different deceptive policies.

pub mod automata;
pub mod conic;
pub mod deceptive;
mod error;
pub mod mdp;
pub mod models;
pub mod reference;
pub mod simulation;

pub use error::{Error, Result};
