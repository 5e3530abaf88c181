//! Gradient-flow laboratory for bias-free leaky-ReLU and linear networks.
//!
//! `numkit` is the numeric substrate, `datasets` and `model` define the
//! objects being trained, `dynamics` integrates them, `theory` holds analytic
//! oracles and `analysis` turns trajectories into verdicts.

// `!(x < y)` is used on purpose so NaN takes the failing branch; index loops
// mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod datasets;
pub mod dynamics;
pub mod model;
pub mod numkit;
pub mod theory;
