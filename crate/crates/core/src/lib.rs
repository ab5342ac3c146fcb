//! Deterministic synthesis of multi-year health trajectories plus the query
//! benchmark and scoring machinery built on top of them.
//!
//! The crate is organised around a daily simulation loop: a trajectory planner
//! lays out narrative phases, an event policy spawns discrete life events, and
//! per-indicator stochastic dynamics turn those events into device series and
//! sparse exam panels. Everything downstream (audits, queries, scoring) works
//! off the exported user bundles.

pub mod audit;
pub mod calendar;
pub mod config;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod exam;
pub mod model;
mod net;
pub mod planner;
pub mod policy;
pub mod queries;
pub mod scoring;
pub mod streams;

pub use error::Error;
