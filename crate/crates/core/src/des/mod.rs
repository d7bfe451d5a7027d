//! Deterministic discrete-event kernel: clock, future-event list and seeded
//! random streams.

mod kernel;
mod rng;
mod time;

pub use kernel::{CausalityError, Event, EventHandle, Kernel, KernelStats, TraceTag};
pub use rng::{RngError, RngStream, RngStreams, StreamId};
pub use time::{SimDuration, SimTime};
