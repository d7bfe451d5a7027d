//! 802.11 DCF: CSMA/CA with binary exponential backoff over a shared,
//! error-free channel.
//!
//! A cell holds every contender of one BSS, the access point included. Each
//! head-of-line frame waits DIFS of idle medium and then counts down a
//! backoff drawn uniformly from `[0, CW]`, freezing while the medium is busy.
//! Stations whose countdowns expire in the same instant collide: each doubles
//! its window and redraws, and a frame is dropped after `retry_limit` failed
//! attempts.
//!
//! The cell does not own a clock. The caller drives it from kernel events:
//! [`WifiCell::rearm`] says when the next transmission attempt is due,
//! [`WifiCell::on_attempt`] starts it and returns when the medium frees up,
//! and [`WifiCell::on_tx_end`] resolves the outcome.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::des::{Event, Kernel, RngStream, SimDuration, SimTime, StreamId, TraceTag};
use crate::MacFrame;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WifiPhyParams {
    pub phy_rate_bps: u64,
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub preamble_us: u64,
    /// ACK frame body, sent after its own preamble.
    pub ack_bits: u32,
    pub mac_header_bytes: u32,
    /// Per-contender transmit queue limit, in frames.
    pub queue_capacity: usize,
}

pub const RATE_11B: u64 = 11_000_000;
pub const RATE_11G: u64 = 54_000_000;

impl Default for WifiPhyParams {
    /// 802.11b DSSS, long preamble.
    fn default() -> Self {
        WifiPhyParams {
            phy_rate_bps: RATE_11B,
            slot_us: 20,
            sifs_us: 10,
            difs_us: 50,
            cw_min: 31,
            cw_max: 1023,
            retry_limit: 7,
            preamble_us: 192,
            ack_bits: 112,
            mac_header_bytes: 34,
            queue_capacity: 50,
        }
    }
}

impl WifiPhyParams {
    pub fn slot(&self) -> SimDuration {
        SimDuration::from_micros(self.slot_us)
    }

    pub fn sifs(&self) -> SimDuration {
        SimDuration::from_micros(self.sifs_us)
    }

    pub fn difs(&self) -> SimDuration {
        SimDuration::from_micros(self.difs_us)
    }

    pub fn preamble(&self) -> SimDuration {
        SimDuration::from_micros(self.preamble_us)
    }

    /// Returns the name of the first offending field.
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.phy_rate_bps != RATE_11B && self.phy_rate_bps != RATE_11G {
            return Err("phy_rate_bps");
        }
        if self.slot_us == 0 {
            return Err("slot_us");
        }
        if self.sifs_us == 0 {
            return Err("sifs_us");
        }
        if self.difs_us == 0 {
            return Err("difs_us");
        }
        if self.preamble_us == 0 {
            return Err("preamble_us");
        }
        if self.ack_bits == 0 {
            return Err("ack_bits");
        }
        if self.cw_min >= self.cw_max {
            return Err("cw_min");
        }
        if self.retry_limit == 0 {
            return Err("retry_limit");
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity");
        }
        Ok(())
    }

    /// Time to clock `bits` onto the air at the PHY rate, rounded up to 1 us.
    fn bits_time(&self, bits: u64) -> SimDuration {
        SimDuration::from_micros((bits * 1_000_000).div_ceil(self.phy_rate_bps))
    }

    pub fn ack_time(&self) -> SimDuration {
        self.preamble() + self.bits_time(u64::from(self.ack_bits))
    }

    /// Airtime of a data frame carrying `payload_bytes` above the MAC header.
    pub fn frame_airtime(&self, payload_bytes: u32) -> Result<SimDuration, WifiError> {
        if payload_bytes == 0 {
            return Err(WifiError::EmptyPayload);
        }
        let bits = 8 * u64::from(self.mac_header_bytes + payload_bytes);
        Ok(self.preamble() + self.bits_time(bits))
    }

    /// MAC service time of one frame on an idle medium with the given backoff.
    pub fn uncontended_service(
        &self,
        payload_bytes: u32,
        backoff_slots: u32,
    ) -> Result<SimDuration, WifiError> {
        Ok(self.difs()
            + SimDuration::from_micros(self.slot_us * u64::from(backoff_slots))
            + self.frame_airtime(payload_bytes)?
            + self.sifs()
            + self.ack_time())
    }

    /// Contention window after `collisions` consecutive failures.
    pub fn cw_after(&self, collisions: u32) -> u32 {
        let grown = (u64::from(self.cw_min) + 1) << collisions.min(32);
        grown.saturating_sub(1).min(u64::from(self.cw_max)) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum WifiError {
    #[error("frame payload must be non-empty")]
    EmptyPayload,
}

#[derive(Debug, Clone)]
struct Queued<F> {
    frame: F,
    enqueued_at: SimTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StationCounters {
    pub enqueued: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub rejected: u64,
    pub collisions: u64,
}

#[derive(Debug, Clone)]
pub struct WifiStationState<F> {
    queue: VecDeque<Queued<F>>,
    backoff_counter: u32,
    /// Instant from which backoff slots are being counted; `None` while frozen.
    countdown_from: Option<SimTime>,
    cw: u32,
    retry_count: u32,
    attempts: u32,
    backoff_drawn: u32,
    hol_since: SimTime,
    pub counters: StationCounters,
}

impl<F> WifiStationState<F> {
    fn new(cw_min: u32) -> Self {
        WifiStationState {
            queue: VecDeque::new(),
            backoff_counter: 0,
            countdown_from: None,
            cw: cw_min,
            retry_count: 0,
            attempts: 0,
            backoff_drawn: 0,
            hol_since: SimTime::ZERO,
            counters: StationCounters::default(),
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn cw(&self) -> u32 {
        self.cw
    }

    pub fn backoff_counter(&self) -> u32 {
        self.backoff_counter
    }

    pub fn retry_count(&self) -> u32 {
        self.retry_count
    }

    fn tx_at(&self, slot: SimDuration) -> Option<SimTime> {
        if self.queue.is_empty() {
            return None;
        }
        self.countdown_from.map(|c| {
            c + SimDuration::from_micros(slot.as_micros() * u64::from(self.backoff_counter))
        })
    }

    fn draw_backoff(&mut self, rng: &mut RngStream) {
        self.backoff_counter = rng.uniform_inclusive(self.cw);
        self.backoff_drawn += self.backoff_counter;
    }

    /// Starts contention for the new head-of-line frame, if any.
    fn start_head(&mut self, now: SimTime, cw_min: u32, rng: &mut RngStream) {
        self.cw = cw_min;
        self.retry_count = 0;
        self.attempts = 0;
        self.backoff_drawn = 0;
        self.hol_since = now;
        if !self.queue.is_empty() {
            self.draw_backoff(rng);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TxOutcome<F> {
    Delivered {
        frame: F,
        station: usize,
        enqueued_at: SimTime,
        /// When the frame reached the head of its queue.
        head_at: SimTime,
        /// ACK receipt.
        delivered_at: SimTime,
        attempts: u32,
        /// Sum of all backoff draws spent on this frame.
        backoff_slots: u32,
    },
    Dropped {
        frame: F,
        station: usize,
        enqueued_at: SimTime,
        attempts: u32,
    },
}

impl<F> TxOutcome<F> {
    /// Head-of-queue to ACK receipt; `None` for drops.
    pub fn mac_delay(&self) -> Option<SimDuration> {
        match self {
            TxOutcome::Delivered {
                head_at,
                delivered_at,
                ..
            } => Some(*delivered_at - *head_at),
            TxOutcome::Dropped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CellCounters {
    pub successes: u64,
    pub collisions: u64,
    pub delivered_bits: u64,
    pub busy_us: u64,
}

#[derive(Debug, Clone)]
struct InFlight {
    stations: Vec<usize>,
    started: SimTime,
    ends: SimTime,
}

/// One 802.11 basic service set sharing a single channel.
#[derive(Debug, Clone)]
pub struct WifiCell<F> {
    phy: WifiPhyParams,
    stations: Vec<WifiStationState<F>>,
    in_flight: Option<InFlight>,
    armed: Option<SimTime>,
    generation: u64,
    pub counters: CellCounters,
}

impl<F: MacFrame> WifiCell<F> {
    pub fn new(phy: WifiPhyParams, contenders: usize) -> Self {
        let stations = (0..contenders)
            .map(|_| WifiStationState::new(phy.cw_min))
            .collect();
        WifiCell {
            phy,
            stations,
            in_flight: None,
            armed: None,
            generation: 0,
            counters: CellCounters::default(),
        }
    }

    pub fn phy(&self) -> &WifiPhyParams {
        &self.phy
    }

    pub fn station(&self, idx: usize) -> &WifiStationState<F> {
        &self.stations[idx]
    }

    pub fn contenders(&self) -> usize {
        self.stations.len()
    }

    pub fn is_busy(&self) -> bool {
        self.in_flight.is_some()
    }

    /// Queues a frame at a contender. A full queue hands the frame back.
    pub fn enqueue(
        &mut self,
        now: SimTime,
        station: usize,
        frame: F,
        rng: &mut RngStream,
    ) -> Result<(), F> {
        let cap = self.phy.queue_capacity;
        let cw_min = self.phy.cw_min;
        let difs = self.phy.difs();
        let idle = self.in_flight.is_none();
        let st = &mut self.stations[station];
        if st.queue.len() >= cap {
            st.counters.rejected += 1;
            return Err(frame);
        }
        st.counters.enqueued += 1;
        let was_empty = st.queue.is_empty();
        st.queue.push_back(Queued {
            frame,
            enqueued_at: now,
        });
        if was_empty {
            st.start_head(now, cw_min, rng);
            st.countdown_from = idle.then_some(now + difs);
        }
        Ok(())
    }

    /// Earliest instant at which some contender's backoff expires.
    pub fn next_attempt(&self) -> Option<SimTime> {
        if self.in_flight.is_some() {
            return None;
        }
        self.stations
            .iter()
            .filter_map(|s| s.tx_at(self.phy.slot()))
            .min()
    }

    /// Recomputes the next attempt. Returns `(time, generation)` when the
    /// caller must schedule a new attempt event; older generations are stale.
    pub fn rearm(&mut self) -> Option<(SimTime, u64)> {
        let next = self.next_attempt();
        if next == self.armed {
            return None;
        }
        self.generation += 1;
        self.armed = next;
        next.map(|t| (t, self.generation))
    }

    /// Starts every transmission due at `now`. Returns when the medium frees
    /// up, or `None` if `generation` is stale.
    pub fn on_attempt(&mut self, now: SimTime, generation: u64) -> Option<SimTime> {
        if generation != self.generation || self.armed != Some(now) {
            return None;
        }
        self.armed = None;
        let slot = self.phy.slot();
        let mut txs = Vec::new();
        for (i, st) in self.stations.iter_mut().enumerate() {
            match st.tx_at(slot) {
                Some(t) if t == now => {
                    st.countdown_from = None;
                    st.backoff_counter = 0;
                    st.attempts += 1;
                    txs.push(i);
                }
                Some(_) => {
                    let from = st.countdown_from.take().expect("counting station");
                    if now > from {
                        let elapsed = ((now - from).as_micros() / slot.as_micros()) as u32;
                        st.backoff_counter -= elapsed.min(st.backoff_counter);
                    }
                }
                None => st.countdown_from = None,
            }
        }
        debug_assert!(!txs.is_empty(), "armed attempt with no transmitter");
        let longest = txs
            .iter()
            .map(|&i| {
                let f = &self.stations[i].queue.front().expect("head frame").frame;
                self.phy
                    .frame_airtime(f.payload_bytes())
                    .expect("non-empty frame")
            })
            .max()
            .unwrap_or(SimDuration::ZERO);
        // Success ends with the ACK; a collision ends when the ACK timeout expires.
        let ends = now + longest + self.phy.sifs() + self.phy.ack_time();
        self.in_flight = Some(InFlight {
            stations: txs,
            started: now,
            ends,
        });
        Some(ends)
    }

    /// Resolves the transmission that ends at `now`.
    pub fn on_tx_end(&mut self, now: SimTime, rng: &mut RngStream) -> Vec<TxOutcome<F>> {
        let flight = self.in_flight.take().expect("tx end without transmission");
        debug_assert_eq!(flight.ends, now);
        self.counters.busy_us += (now - flight.started).as_micros();
        let cw_min = self.phy.cw_min;
        let mut out = Vec::new();
        if let [only] = flight.stations[..] {
            self.counters.successes += 1;
            let st = &mut self.stations[only];
            let q = st.queue.pop_front().expect("delivered frame");
            self.counters.delivered_bits += 8 * u64::from(q.frame.payload_bytes());
            st.counters.delivered += 1;
            out.push(TxOutcome::Delivered {
                station: only,
                enqueued_at: q.enqueued_at,
                head_at: st.hol_since,
                delivered_at: now,
                attempts: st.attempts,
                backoff_slots: st.backoff_drawn,
                frame: q.frame,
            });
            st.start_head(now, cw_min, rng);
        } else {
            self.counters.collisions += 1;
            for &i in &flight.stations {
                let cw_max = self.phy.cw_max;
                let retry_limit = self.phy.retry_limit;
                let st = &mut self.stations[i];
                st.counters.collisions += 1;
                st.retry_count += 1;
                if st.retry_count >= retry_limit {
                    let q = st.queue.pop_front().expect("dropped frame");
                    st.counters.dropped += 1;
                    out.push(TxOutcome::Dropped {
                        station: i,
                        enqueued_at: q.enqueued_at,
                        attempts: st.attempts,
                        frame: q.frame,
                    });
                    st.start_head(now, cw_min, rng);
                } else {
                    st.cw = (2 * st.cw + 1).min(cw_max);
                    st.draw_backoff(rng);
                }
            }
        }
        let resume = now + self.phy.difs();
        for st in &mut self.stations {
            if !st.queue.is_empty() {
                st.countdown_from = Some(resume);
            }
        }
        out
    }

    /// Removes every queued frame, e.g. at the end of a run.
    pub fn drain(&mut self) -> Vec<F> {
        self.in_flight = None;
        self.armed = None;
        self.stations
            .iter_mut()
            .flat_map(|s| s.queue.drain(..).map(|q| q.frame).collect::<Vec<_>>())
            .collect()
    }
}

/// Result of driving a cell with permanently backlogged contenders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationReport {
    pub contenders: usize,
    pub delivered_frames: u64,
    pub frames_per_sec: f64,
    pub throughput_bps: f64,
    pub mean_mac_delay: f64,
    pub collision_fraction: f64,
}

#[derive(Debug, Clone, Copy)]
struct FixedFrame(u32);

impl MacFrame for FixedFrame {
    fn payload_bytes(&self) -> u32 {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum SatEvent {
    Attempt(u64),
    End,
}

impl TraceTag for SatEvent {}

/// Simulates `contenders` always-backlogged stations sending `payload_bytes`
/// frames for `duration`, measuring delivered rate and mean MAC delay (in
/// microseconds).
pub fn saturation_run(
    phy: &WifiPhyParams,
    contenders: usize,
    payload_bytes: u32,
    duration: SimDuration,
    seed: u64,
) -> SaturationReport {
    let mut phy = phy.clone();
    phy.queue_capacity = 2;
    let mut cell: WifiCell<FixedFrame> = WifiCell::new(phy, contenders);
    let mut rng = RngStream::new(seed, StreamId::Backoff);
    let mut kernel: Kernel<SatEvent> = Kernel::new();
    for i in 0..contenders {
        cell.enqueue(SimTime::ZERO, i, FixedFrame(payload_bytes), &mut rng)
            .expect("empty queue");
        cell.enqueue(SimTime::ZERO, i, FixedFrame(payload_bytes), &mut rng)
            .expect("room for two");
    }
    if let Some((t, g)) = cell.rearm() {
        kernel.schedule(t, SatEvent::Attempt(g)).expect("future");
    }
    let mut delivered = 0u64;
    let mut delay_sum = 0u64;
    let end = SimTime::ZERO + duration;
    kernel.run_until(end, |k, ev: Event<SatEvent>| {
        let now = ev.fire_at;
        match ev.action {
            SatEvent::Attempt(g) => {
                if let Some(done) = cell.on_attempt(now, g) {
                    k.schedule(done, SatEvent::End).expect("future");
                }
            }
            SatEvent::End => {
                for o in cell.on_tx_end(now, &mut rng) {
                    let station = match &o {
                        TxOutcome::Delivered { station, .. }
                        | TxOutcome::Dropped { station, .. } => *station,
                    };
                    if let Some(d) = o.mac_delay() {
                        delivered += 1;
                        delay_sum += d.as_micros();
                    }
                    // Keep the contender backlogged.
                    let _ = cell.enqueue(now, station, FixedFrame(payload_bytes), &mut rng);
                }
                if let Some((t, g)) = cell.rearm() {
                    k.schedule(t, SatEvent::Attempt(g)).expect("future");
                }
            }
        }
    });
    let secs = duration.as_secs_f64();
    let attempts = cell.counters.successes + cell.counters.collisions;
    SaturationReport {
        contenders,
        delivered_frames: delivered,
        frames_per_sec: delivered as f64 / secs,
        throughput_bps: cell.counters.delivered_bits as f64 / secs,
        mean_mac_delay: if delivered == 0 {
            0.0
        } else {
            delay_sum as f64 / delivered as f64
        },
        collision_fraction: if attempts == 0 {
            0.0
        } else {
            cell.counters.collisions as f64 / attempts as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Pkt(u32, u32);

    impl MacFrame for Pkt {
        fn payload_bytes(&self) -> u32 {
            self.1
        }
    }

    fn rng() -> RngStream {
        RngStream::new(11, StreamId::Backoff)
    }

    #[test]
    fn airtime_of_header_only_frame() {
        // 34 B header = 272 bits at 11 Mbit/s -> ceil(24.7) = 25 us after the preamble.
        let phy = WifiPhyParams::default();
        assert_eq!(phy.bits_time(272).as_micros(), 25);
        assert_eq!((phy.preamble() + phy.bits_time(272)).as_micros(), 217);
    }

    #[test]
    fn airtime_of_voip_packet() {
        let phy = WifiPhyParams::default();
        // (34 + 120) * 8 = 1232 bits -> 112 us
        assert_eq!(phy.frame_airtime(120).unwrap().as_micros(), 304);
        // (34 + 200) * 8 = 1872 bits -> ceil(170.18) = 171 us
        assert_eq!(phy.frame_airtime(200).unwrap().as_micros(), 363);
        assert_eq!(phy.frame_airtime(0), Err(WifiError::EmptyPayload));
    }

    #[test]
    fn faster_phy_shrinks_only_payload_term() {
        let b = WifiPhyParams::default();
        let g = WifiPhyParams {
            phy_rate_bps: RATE_11G,
            ..WifiPhyParams::default()
        };
        let tb = b.frame_airtime(200).unwrap();
        let tg = g.frame_airtime(200).unwrap();
        assert!(tg < tb);
        assert!(tg >= g.preamble());
        assert_eq!(g.preamble(), b.preamble());
    }

    #[test]
    fn ack_time_is_preamble_plus_body() {
        // 192 + ceil(112 / 11) = 203
        assert_eq!(WifiPhyParams::default().ack_time().as_micros(), 203);
    }

    #[test]
    fn cw_law() {
        let phy = WifiPhyParams::default();
        let expected = [31, 63, 127, 255, 511, 1023, 1023, 1023];
        for (k, &cw) in expected.iter().enumerate() {
            assert_eq!(phy.cw_after(k as u32), cw);
        }
    }

    #[test]
    fn validation_names_fields() {
        let mut phy = WifiPhyParams::default();
        assert_eq!(phy.validate(), Ok(()));
        phy.phy_rate_bps = 2_000_000;
        assert_eq!(phy.validate(), Err("phy_rate_bps"));
        phy = WifiPhyParams {
            cw_min: 1023,
            ..WifiPhyParams::default()
        };
        assert_eq!(phy.validate(), Err("cw_min"));
    }

    /// Drives the cell until it goes quiet, collecting outcomes.
    fn drive(cell: &mut WifiCell<Pkt>, rng: &mut RngStream) -> Vec<TxOutcome<Pkt>> {
        let mut out = Vec::new();
        while let Some(t) = cell.next_attempt() {
            let (_, g) = cell.rearm().unwrap_or((t, cell.generation));
            let end = cell.on_attempt(t, g).expect("current generation");
            out.extend(cell.on_tx_end(end, rng));
        }
        out
    }

    #[test]
    fn single_station_zero_backoff() {
        let mut rng = rng();
        let mut cell = WifiCell::new(WifiPhyParams::default(), 1);
        let t0 = SimTime::from_millis(3);
        cell.enqueue(t0, 0, Pkt(1, 120), &mut rng).unwrap();
        cell.stations[0].backoff_counter = 0;
        cell.stations[0].backoff_drawn = 0;
        let out = drive(&mut cell, &mut rng);
        // DIFS 50 + airtime 304 + SIFS 10 + ACK 203
        assert_eq!(
            out[0].mac_delay(),
            Some(SimDuration::from_micros(50 + 304 + 10 + 203))
        );
        match &out[0] {
            TxOutcome::Delivered { attempts, .. } => assert_eq!(*attempts, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_station_random_backoff_matches_formula() {
        let mut rng = rng();
        let phy = WifiPhyParams::default();
        let mut cell = WifiCell::new(phy.clone(), 1);
        for i in 0..50 {
            let t0 = SimTime::from_millis(20 * i);
            cell.enqueue(t0, 0, Pkt(i as u32, 200), &mut rng).unwrap();
            let out = drive(&mut cell, &mut rng);
            let TxOutcome::Delivered {
                backoff_slots,
                delivered_at,
                ..
            } = out[0]
            else {
                panic!("drop on idle channel");
            };
            assert!(backoff_slots <= phy.cw_min);
            let expected = phy.uncontended_service(200, backoff_slots).unwrap();
            assert_eq!(delivered_at - t0, expected);
        }
    }

    #[test]
    fn identical_backoff_collides_and_doubles_cw() {
        let mut rng = rng();
        let mut cell = WifiCell::new(WifiPhyParams::default(), 2);
        let t0 = SimTime::ZERO;
        cell.enqueue(t0, 0, Pkt(1, 200), &mut rng).unwrap();
        cell.enqueue(t0, 1, Pkt(2, 200), &mut rng).unwrap();
        cell.stations[0].backoff_counter = 4;
        cell.stations[1].backoff_counter = 4;
        let (t, g) = cell.rearm().unwrap();
        assert_eq!(t, SimTime::from_micros(50 + 80));
        let end = cell.on_attempt(t, g).unwrap();
        let out = cell.on_tx_end(end, &mut rng);
        assert!(out.is_empty());
        assert_eq!(cell.counters.collisions, 1);
        for s in &cell.stations {
            assert_eq!(s.cw(), 63);
            assert_eq!(s.retry_count(), 1);
            assert!(s.backoff_counter() <= 63);
        }
    }

    #[test]
    fn retry_limit_drops_frame() {
        let mut rng = rng();
        let phy = WifiPhyParams::default();
        let mut cell = WifiCell::new(phy.clone(), 2);
        cell.enqueue(SimTime::ZERO, 0, Pkt(1, 200), &mut rng)
            .unwrap();
        cell.enqueue(SimTime::ZERO, 1, Pkt(2, 200), &mut rng)
            .unwrap();
        let mut drops = Vec::new();
        for attempt in 1..=phy.retry_limit {
            // Force the same countdown on both stations every round.
            cell.stations[0].backoff_counter = 0;
            cell.stations[1].backoff_counter = 0;
            let (t, g) = cell.rearm().unwrap();
            let end = cell.on_attempt(t, g).unwrap();
            let out = cell.on_tx_end(end, &mut rng);
            if attempt < phy.retry_limit {
                assert!(out.is_empty());
                assert_eq!(cell.stations[0].cw(), phy.cw_after(attempt));
            } else {
                drops = out;
            }
        }
        assert_eq!(drops.len(), 2);
        for d in &drops {
            match d {
                TxOutcome::Dropped { attempts, .. } => assert_eq!(*attempts, phy.retry_limit),
                other => panic!("expected drop, got {other:?}"),
            }
        }
        assert_eq!(cell.stations[0].counters.dropped, 1);
        assert_eq!(cell.stations[0].cw(), phy.cw_min);
    }

    #[test]
    fn frozen_backoff_resumes_after_busy_medium() {
        let mut rng = rng();
        let phy = WifiPhyParams::default();
        let mut cell = WifiCell::new(phy.clone(), 2);
        cell.enqueue(SimTime::ZERO, 0, Pkt(1, 200), &mut rng)
            .unwrap();
        cell.enqueue(SimTime::ZERO, 1, Pkt(2, 200), &mut rng)
            .unwrap();
        cell.stations[0].backoff_counter = 2;
        cell.stations[1].backoff_counter = 7;
        let (t, g) = cell.rearm().unwrap();
        let end = cell.on_attempt(t, g).unwrap();
        // Station 1 counted 2 of its 7 slots before freezing.
        assert_eq!(cell.stations[1].backoff_counter(), 5);
        let out = cell.on_tx_end(end, &mut rng);
        assert_eq!(out.len(), 1);
        assert_eq!(cell.stations[1].countdown_from, Some(end + phy.difs()));
        let (t2, _) = cell.rearm().unwrap();
        assert_eq!(t2, end + phy.difs() + phy.slot() * 5);
    }

    #[test]
    fn queue_overflow_hands_frame_back() {
        let mut rng = rng();
        let phy = WifiPhyParams {
            queue_capacity: 2,
            ..WifiPhyParams::default()
        };
        let mut cell = WifiCell::new(phy, 1);
        cell.enqueue(SimTime::ZERO, 0, Pkt(1, 200), &mut rng)
            .unwrap();
        cell.enqueue(SimTime::ZERO, 0, Pkt(2, 200), &mut rng)
            .unwrap();
        assert_eq!(
            cell.enqueue(SimTime::ZERO, 0, Pkt(3, 200), &mut rng),
            Err(Pkt(3, 200))
        );
        assert_eq!(cell.station(0).counters.rejected, 1);
    }

    #[test]
    fn fifo_order_and_conservation() {
        let mut rng = rng();
        let mut cell = WifiCell::new(WifiPhyParams::default(), 3);
        for i in 0..30u32 {
            let _ = cell.enqueue(SimTime::ZERO, (i % 3) as usize, Pkt(i, 200), &mut rng);
        }
        let out = drive(&mut cell, &mut rng);
        for s in 0..3 {
            let ids: Vec<u32> = out
                .iter()
                .filter_map(|o| match o {
                    TxOutcome::Delivered { station, frame, .. } if *station == s => Some(frame.0),
                    TxOutcome::Dropped { station, frame, .. } if *station == s => Some(frame.0),
                    _ => None,
                })
                .collect();
            assert!(
                ids.windows(2).all(|w| w[0] < w[1]),
                "station {s} not FIFO: {ids:?}"
            );
            let c = cell.station(s).counters;
            assert_eq!(
                c.enqueued,
                c.delivered + c.dropped + cell.station(s).queue_len() as u64
            );
        }
    }

    fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn contention_raises_mac_delay() {
        let phy = WifiPhyParams::default();
        let d = SimDuration::from_secs(5);
        let one: Vec<f64> = (0..5)
            .map(|s| saturation_run(&phy, 1, 200, d, s).mean_mac_delay)
            .collect();
        let eight: Vec<f64> = (0..5)
            .map(|s| saturation_run(&phy, 8, 200, d, s).mean_mac_delay)
            .collect();
        assert!(mean(&eight) > mean(&one), "{eight:?} vs {one:?}");
    }

    #[test]
    fn saturation_never_exceeds_phy_rate() {
        let phy = WifiPhyParams::default();
        for n in [1, 2, 5, 10, 20] {
            let r = saturation_run(&phy, n, 1500, SimDuration::from_secs(2), n as u64);
            assert!(r.throughput_bps <= phy.phy_rate_bps as f64, "{r:?}");
            assert!(r.delivered_frames > 0);
        }
    }
}
