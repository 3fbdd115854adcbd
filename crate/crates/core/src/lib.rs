//! Finite-memory Q-learning for finite POMDPs.
//!
//! The crate builds the approximate belief-MDP whose states are sliding
//! windows of recent observations and actions, solves it exactly, learns it
//! from a simulated trajectory, and checks filter-stability bounds on the
//! loss of window policies.

pub mod approx_mdp;
pub mod ergodicity;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod filter;
pub mod model;
pub mod qlearning;
pub mod simplex;

pub use error::{Error, Result};
pub use model::{
    load_model, Belief, ExplorationPolicy, ModelFile, PomdpModel, WindowIndexer, WindowPolicy,
    WindowState,
};
