//! Simulator and analytic models for DSAT-MAC, a TDMA medium-access protocol
//! for cognitive-radio ad hoc networks that runs without a common control
//! channel.
//!
//! Every superframe on a licensed channel is a quiet (sensing) period, a
//! control sequence with one new-user slot (NUS) and one current-user slot
//! (CUS) per registered node, and a data sequence whose slots are handed out
//! by a packet scheduling algorithm that every node runs on the same inputs.
//!
//! The crate is organised bottom-up:
//!
//! * [`time`], [`types`], [`timing`], [`packet`], [`registry`]: shared domain
//!   types, frame arithmetic and the packet wire format.
//! * [`priority`] and [`scheduler`]: priority index calculation and the slot
//!   allocator.
//! * [`mac`]: per-node protocol state and the pure protocol decisions.
//! * [`sim`]: the deterministic discrete-event kernel (PU processes, NUS
//!   contention, traffic, metrics, invariant audit, trace).
//! * [`energy`]: Friis transmit-power adaptation and the closed-form energy
//!   model.
//! * [`ccc`]: the CSMA/RTS/CTS common-control-channel baseline.
//! * [`scenario`] and [`experiment`]: scenario files, sweeps, analytic
//!   throughput and CSV output.

// lets shared test helpers name the crate the same way from unit tests
#[cfg(test)]
extern crate self as dsat_core;

pub mod ccc;
pub mod energy;
pub mod experiment;
pub mod mac;
pub mod packet;
pub mod priority;
pub mod registry;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod time;
pub mod timing;
pub mod types;

pub use time::Micros;
pub use timing::FrameTiming;
pub use types::{ChannelId, DataType, FlowId, NodeId};
