//! Deterministic closed-loop driving simulator with V2X-augmented
//! local-map fusion, event-driven Hybrid-A* replanning, a quorum gate for
//! V2X hazard reports and a multi-objective tuning protocol.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod gate;
pub mod geometry;
pub mod harness;
pub mod ldm;
pub mod metrics;
pub mod pareto;
pub mod perception;
pub mod planner;
pub mod records;
pub mod rng;
pub mod v2x;
pub mod vehicle;
pub mod world;

pub use error::{Error, Result};
