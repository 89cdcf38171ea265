//! Deterministic discrete-event simulation of DSAT-MAC.
//!
//! One run owns every node, channel and counter and processes events in a
//! single thread in `(time, kind rank, sequence)` order, so a run is a pure
//! function of its scenario and seed.

pub mod audit;
pub mod contention;
mod engine;
pub mod event;
pub mod ledger;
pub mod pu;
pub mod rng;
pub mod trace;
pub mod traffic;

pub use contention::{resolve_nus_contention, NusOutcome};
pub use engine::{run, run_with, SimOptions, SimOutput, TxKind, TxRecord};
pub use ledger::MetricsLedger;
pub use pu::{step_pu, PuActivityModel, PuStateChange};
pub use traffic::TrafficSource;
