//! Config-driven experiment runner on top of `relulab`: every run writes its
//! dataset, trajectories, reports and plots into one directory sealed by a
//! manifest of file digests, and `verify` recomputes every predicate from
//! those files alone.

pub mod artifacts;
pub mod config;
pub mod experiments;
pub mod predicate;
pub mod runner;
pub mod svg;
pub mod tools;
