//! Doubly robust difference-in-differences for panels with network and
//! bipartite interference.
//!
//! The crate is organised bottom-up: [`graph`] provides distances and
//! interference matrices, [`exposure`] maps treatments to exposure
//! histories, [`nuisance`] fits propensities and outcome regressions,
//! [`estimator`] computes the point estimate with its network HAC variance,
//! and [`simulation`] runs replication studies on synthetic designs.

pub mod cli;
pub mod config;
pub mod estimator;
pub mod exposure;
pub mod graph;
pub mod io;
pub mod nuisance;
pub mod seed;
pub mod simulation;
