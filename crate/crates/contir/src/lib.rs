//! Continual learning engine for embedding-based neural rankers.
//!
//! Trains a ranking model over a sequence of topical retrieval tasks under
//! a pluggable anti-forgetting strategy, evaluates every test set after
//! each task, and reports final performance, backward transfer, and
//! forward transfer.
//!
//! The numeric kernels index into flat buffers with explicit stride
//! arithmetic; the corresponding range-loop lints are allowed for clarity.
#![allow(clippy::needless_range_loop)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod rankers;
pub mod runner;
pub mod seeding;
pub mod strategies;

pub use error::{Error, Result};
