//! Two-stage green security game.
//!
//! The allocation stage places drones, rangers and attackers on a park grid;
//! the patrolling stage plays the placement out in discrete time with
//! uncertain detection and signalling. Patrolling is learned with shared
//! double DQNs, the attacker patrols heuristically, and allocation policies
//! over learned embeddings are trained with competitive policy optimisation.

pub mod alloc;
pub mod attacker;
pub mod engine;
pub mod error;
pub mod grid;
pub mod harness;
pub mod nn;
pub mod patrol;
pub mod seed;

pub use error::{Error, Result};
