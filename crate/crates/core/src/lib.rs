//! Modular multitask reinforcement learning from policy sketches.
//!
//! Every symbol of a task's sketch owns a small subpolicy network; a task's
//! policy runs the subpolicies of its sketch in order, handing control to the
//! next one whenever the active subpolicy emits STOP. Subpolicies are trained
//! jointly across tasks with an actor–critic update that uses a separate
//! baseline per task, under a curriculum that grows the admitted sketch length.

pub mod baselines;
pub mod checkpoint;
pub mod critic;
pub mod curriculum;
pub mod env;
pub mod error;
pub mod nn;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
