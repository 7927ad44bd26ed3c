//! Procedurally generated peg-in-hole assembly: module generation, penalty
//! contact physics, the insertion POMDP, vectorized workers and an SAC learner.

pub mod agents;
pub mod cli;
pub mod env;
pub mod error;
pub mod experiment;
pub mod physics;
pub mod procgen;
pub mod spatial;
pub mod vecenv;

pub use error::{Error, Result};
