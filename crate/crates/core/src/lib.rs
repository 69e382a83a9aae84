//! Discrete-time neuroidal simulation of JOIN, LINK and predictive JOIN,
//! with the pattern memorization experiments built on top.
//!
//! Layers, bottom up:
//! - [`neuroid`]: the two-phase neuroid engine.
//! - [`graph`]: random directed graphs with tunable reciprocity.
//! - [`item`]: the predictive item state machine, an item-level engine and
//!   the neuroid-level constructions, plus a cross-check between the two.
//! - [`learn`]: unsupervised memorization of binary patterns.
//! - [`oracle`]: closed-form bounds the experiments are compared against.
//! - [`harness`]: config-driven experiment runs producing CSV.

pub mod error;
pub mod graph;
pub mod harness;
pub mod item;
pub mod learn;
pub mod neuroid;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
