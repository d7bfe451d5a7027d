//! Discrete-event simulator for VoIP quality over WiFi and WiMAX access
//! networks joined by an IP backbone.
//!
//! The crate is layered bottom-up: [`des`] holds the clock, event list and
//! random streams; [`wifi`] and [`wimax`] model the two MAC layers;
//! [`topology`] places stations and routes packets; [`voip`] runs call
//! setup and voice framing; [`metrics`] turns delivered packets into jitter,
//! delay, loss and MOS series. [`sim`] wires them together for one run, and
//! [`report`] persists and compares results.

pub mod des;
pub mod metrics;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod topology;
pub mod voip;
pub mod wifi;
pub mod wimax;

/// A unit of data a MAC layer can carry.
pub trait MacFrame {
    /// Bytes above the MAC header.
    fn payload_bytes(&self) -> u32;
}
