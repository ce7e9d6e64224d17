//! Deterministic test bed for multi-stage model cascades: execution
//! semantics, adversarial suffix attacks against stages and routing,
//! enumeration-exact error analysis, and input-side defenses.

pub mod analysis;
pub mod attack;
pub mod cascade;
pub mod config;
pub mod defense;
pub mod error;
pub mod metrics;
pub mod remote;
pub mod rng;
pub mod runner;
pub mod token;
pub mod zoo;
