//! Tabular policy mirror descent with finite memory: exact soft dynamic
//! programming, stacked-Q policy updates, closed-form theoretical bounds and
//! a sampled variant with replay.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod harness;
pub mod mdp;
pub mod pmd;
pub mod rng;
pub mod soft_dp;
pub mod staq;
pub mod tables;
pub mod theory;

pub use error::{PmdError, Result};
