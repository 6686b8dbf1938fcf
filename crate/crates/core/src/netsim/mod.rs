//! Deterministic discrete-event network simulator.
//!
//! Integer-millisecond clock, FIFO ordering of simultaneous events, reliable
//! delivery inside the one-hop neighborhood unless a link is broken.

mod engine;
mod topology;

pub use engine::{
    transmission_ms, Action, NodeBehavior, NodeCtx, RunOutcome, SimError, Simulator, Stop,
    StopReason, TraceEvent, DEFAULT_MAX_EVENTS,
};
pub use topology::{load_topology, Link, Role, Topology, TopologyError, Violation};
