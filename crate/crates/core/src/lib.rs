//! One-stage anchor-lattice local planner for multirotors: network, decoding,
//! trajectory generation, cost model, simulator and training loop.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod cost;
pub mod error;
pub mod fmt;
pub mod geometry;
pub mod harness;
pub mod net;
pub mod nn;
pub mod real;
pub mod training;
pub mod trajectory;
pub mod world;

pub use error::{Result, SagaError};
