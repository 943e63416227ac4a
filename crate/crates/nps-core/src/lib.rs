//! Slot-based entities updated by sparsely selected, learned condition-action
//! rules, together with the autodiff substrate, training tasks, world-model
//! environment, and evaluation metrics built around them.
//!
//! Layout:
//! - [`array`], [`tape`], [`optim`], [`checkpoint`]: dense f64 arrays (rank
//!   at most 2), reverse-mode autodiff, Adam, binary checkpoints.
//! - [`engine`]: rule sets, slot states, straight-through Gumbel selection,
//!   sequential and parallel rule application.
//! - [`tasks`]: coordinate arithmetic (with a routing-MLP baseline) and a
//!   grid-transformation task.
//! - [`physics`]: weighted-blocks environment, episode collection, and
//!   action-conditioned world models (rule-based vs. message-passing).
//! - [`metrics`]: ranking metrics (hits@1, MRR), rule-usage segregation,
//!   and report generation.

pub mod array;
pub mod checkpoint;
pub mod engine;
pub mod error;
pub mod exec;
pub mod fdcheck;
pub mod metrics;
pub mod optim;
pub mod physics;
pub mod rng;
pub mod tape;
pub mod tasks;

pub use array::Array;
pub use error::{CoreError, Result};
pub use tape::{Tape, Var};
