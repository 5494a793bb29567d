//! Distributed coordination of passive agents over an undirected graph with
//! event-, time- and self-triggered edge sampling.
//!
//! Agents hold a position `p_i` driven by an internal strictly passive state
//! `v_i`; each graph edge exchanges a coupling force computed from a sampled
//! copy of the relative distance between its endpoints. Edge events refresh
//! that sample. This crate provides:
//!
//! * the graph/incidence algebra tying node and edge variables together,
//! * the built-in coupling laws and agent models with their certificates,
//! * the three edge-event schedulers and their derived quantities
//!   (deadlines, self-triggered intervals, dwell-time lower bounds),
//! * a deterministic hybrid simulation engine (flow integration, event
//!   localization, prioritized jump resolution, hybrid-time bookkeeping),
//! * trajectory analysis: energy monitors, convergence and dwell-time
//!   metrics, Monte Carlo campaign aggregation,
//! * scenario configuration and CSV artifact emission used by the CLI.

// Parameter validation uses the negated form (`!(x > 0.0)`) on purpose: it
// rejects NaN coming out of config files, which `x <= 0.0` would accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod hybrid;
pub mod runner;
pub mod scenario;
pub mod triggering;

pub use error::{Error, Result};
