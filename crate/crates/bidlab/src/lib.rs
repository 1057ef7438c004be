//! Desk-scale auto-bidding laboratory.
//!
//! The crate simulates a budget-constrained bidder in a two-stage cascade
//! auction, builds frozen replay datasets from its stage-2 logs, trains a
//! baseline policy with deterministic actor-critic RL, explores the live
//! market safely inside a Lipschitz-derived action zone, retrains offline
//! with a variance-suppressed conservative Q-learning loss, and evaluates
//! everything with paired-seed metrics, a fractional-knapsack replay oracle,
//! and an empirical check of the safety bound.

pub mod ddpg;
pub mod error;
pub mod eval;
pub mod explore;
pub mod market;
pub mod nets;
pub mod policy;
pub mod record;
pub mod rng;
pub mod stats;
pub mod vas;

pub use error::{Error, Result};
