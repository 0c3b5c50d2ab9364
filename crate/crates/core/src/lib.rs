//! Deterministic scheduling for time-aware egress ports.
//!
//! * [`flow`]: flow, link and route types with integral nanosecond time.
//! * [`combinability`]: when periodic flows can share a port without
//!   collisions, and exactly which packets collide when they cannot.
//! * [`nds`]: offline synthesis of collision-free schedules and gate control lists.
//! * [`dqs`]: utility-driven selection of best-effort queues in residual slots.
//! * [`sim`]: discrete-event simulation of one gated egress port.
//! * [`experiment`]: seeded workload suites comparing best-effort policies.

pub mod combinability;
pub mod dqs;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod nds;
pub mod sim;

pub use error::{Error, Result};
