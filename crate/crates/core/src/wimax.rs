//! 802.16 Unsolicited Grant Service scheduling.
//!
//! The cell is a single shared pipe divided into fixed-length frames. The
//! head of every frame is reserved for control; each admitted connection
//! owns one fixed grant per frame, placed first-fit by offset. A queued
//! packet leaves at its connection's next grant occurrence, so there is no
//! contention and no collision loss.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::des::{SimDuration, SimTime};
use crate::MacFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WimaxPhyParams {
    pub frame_duration_us: u64,
    /// Usable cell capacity shared by all grants.
    pub capacity_bps: u64,
    /// Share of every frame reserved for control traffic.
    pub overhead_fraction: f64,
    /// Generic MAC header plus CRC added to every packet.
    pub mac_overhead_bytes: u32,
    /// Per-connection queue limit, in packets.
    pub queue_capacity: usize,
}

impl Default for WimaxPhyParams {
    fn default() -> Self {
        WimaxPhyParams {
            frame_duration_us: 5_000,
            capacity_bps: 75_000_000,
            overhead_fraction: 0.1,
            mac_overhead_bytes: 10,
            queue_capacity: 8,
        }
    }
}

impl WimaxPhyParams {
    pub fn frame_duration(&self) -> SimDuration {
        SimDuration::from_micros(self.frame_duration_us)
    }

    /// First instant of a frame available to grants.
    pub fn overhead_end(&self) -> SimDuration {
        SimDuration::from_micros(
            (self.frame_duration_us as f64 * self.overhead_fraction).ceil() as u64,
        )
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.frame_duration_us == 0 {
            return Err("frame_duration_us");
        }
        if self.capacity_bps == 0 {
            return Err("capacity_bps");
        }
        if !(0.0..1.0).contains(&self.overhead_fraction) {
            return Err("overhead_fraction");
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity");
        }
        Ok(())
    }

    /// Time to send a packet of `payload_bytes` plus MAC overhead at cell capacity.
    pub fn serialization(&self, payload_bytes: u32) -> SimDuration {
        let bits = 8 * u64::from(payload_bytes + self.mac_overhead_bytes);
        SimDuration::from_micros((bits * 1_000_000).div_ceil(self.capacity_bps))
    }

    /// First occurrence of a grant at `offset` that is not earlier than `t`.
    /// How many grants for `payload_bytes` packets fit in one frame.
    pub fn grants_per_frame(&self, payload_bytes: u32) -> u64 {
        let usable = self.frame_duration().as_micros() - self.overhead_end().as_micros();
        usable / self.serialization(payload_bytes).as_micros().max(1)
    }

    pub fn next_grant_at(&self, t: SimTime, offset: SimDuration) -> SimTime {
        let frame = self.frame_duration_us;
        let start = t.as_micros() - t.as_micros() % frame;
        let occ = SimTime::from_micros(start) + offset;
        if occ < t {
            occ + self.frame_duration()
        } else {
            occ
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UgsGrant<K> {
    pub connection: K,
    pub offset_in_frame: SimDuration,
    pub duration: SimDuration,
    pub grant_bits: u64,
}

impl<K> UgsGrant<K> {
    fn end(&self) -> SimDuration {
        self.offset_in_frame + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WimaxError {
    #[error(
        "admission refused: a {needed} grant does not fit in the frame ({used} of {usable} in use)"
    )]
    AdmissionRefused {
        needed: SimDuration,
        used: SimDuration,
        usable: SimDuration,
    },
    #[error("connection already has a grant")]
    DuplicateConnection,
}

/// Per-frame grant layout, kept sorted by offset.
#[derive(Debug, Clone)]
pub struct GrantTable<K> {
    phy: WimaxPhyParams,
    grants: Vec<UgsGrant<K>>,
}

impl<K: Copy + PartialEq> GrantTable<K> {
    pub fn new(phy: WimaxPhyParams) -> Self {
        GrantTable {
            phy,
            grants: Vec::new(),
        }
    }

    pub fn grants(&self) -> &[UgsGrant<K>] {
        &self.grants
    }

    pub fn used(&self) -> SimDuration {
        self.grants.iter().map(|g| g.duration).sum()
    }

    /// Registers a periodic grant large enough for `payload_bytes`.
    pub fn allocate(
        &mut self,
        connection: K,
        payload_bytes: u32,
    ) -> Result<UgsGrant<K>, WimaxError> {
        if self.grants.iter().any(|g| g.connection == connection) {
            return Err(WimaxError::DuplicateConnection);
        }
        let duration = self.phy.serialization(payload_bytes);
        let grant_bits = 8 * u64::from(payload_bytes + self.phy.mac_overhead_bytes);
        let mut cursor = self.phy.overhead_end();
        let mut slot = None;
        for (i, g) in self.grants.iter().enumerate() {
            if g.offset_in_frame >= cursor
                && (g.offset_in_frame.as_micros() - cursor.as_micros()) >= duration.as_micros()
            {
                slot = Some(i);
                break;
            }
            cursor = cursor.max(g.end());
        }
        let frame = self.phy.frame_duration();
        let at = match slot {
            Some(i) => i,
            None if cursor + duration <= frame => self.grants.len(),
            None => {
                return Err(WimaxError::AdmissionRefused {
                    needed: duration,
                    used: self.used(),
                    usable: SimDuration::from_micros(
                        frame.as_micros() - self.phy.overhead_end().as_micros(),
                    ),
                })
            }
        };
        let grant = UgsGrant {
            connection,
            offset_in_frame: cursor,
            duration,
            grant_bits,
        };
        self.grants.insert(at, grant);
        Ok(grant)
    }

    pub fn release(&mut self, connection: K) -> Option<UgsGrant<K>> {
        let i = self
            .grants
            .iter()
            .position(|g| g.connection == connection)?;
        Some(self.grants.remove(i))
    }
}

#[derive(Debug, Clone)]
struct Queued<F> {
    frame: F,
    enqueued_at: SimTime,
}

#[derive(Debug, Clone)]
struct Connection<F, K> {
    grant: UgsGrant<K>,
    queue: VecDeque<Queued<F>>,
    scheduled: Option<SimTime>,
    last_service: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WimaxCounters {
    pub enqueued: u64,
    pub delivered: u64,
    pub rejected: u64,
}

#[derive(Debug, PartialEq)]
pub enum EnqueueError<F> {
    UnknownConnection(F),
    QueueFull(F),
}

/// A frame leaving on its grant.
#[derive(Debug, Clone, PartialEq)]
pub struct GrantService<F> {
    pub frame: F,
    pub enqueued_at: SimTime,
    pub grant_at: SimTime,
    pub completes_at: SimTime,
    /// Next grant occurrence the caller must schedule, if more is queued.
    pub next: Option<SimTime>,
}

impl<F> GrantService<F> {
    /// Wait for the grant plus serialization.
    pub fn mac_delay(&self) -> SimDuration {
        self.completes_at - self.enqueued_at
    }
}

/// One base station and its UGS connections.
#[derive(Debug, Clone)]
pub struct WimaxCell<F, K> {
    phy: WimaxPhyParams,
    table: GrantTable<K>,
    connections: BTreeMap<K, Connection<F, K>>,
    pub counters: WimaxCounters,
}

impl<F: MacFrame, K: Copy + Ord> WimaxCell<F, K> {
    pub fn new(phy: WimaxPhyParams) -> Self {
        WimaxCell {
            table: GrantTable::new(phy.clone()),
            phy,
            connections: BTreeMap::new(),
            counters: WimaxCounters::default(),
        }
    }

    pub fn phy(&self) -> &WimaxPhyParams {
        &self.phy
    }

    pub fn grants(&self) -> &[UgsGrant<K>] {
        self.table.grants()
    }

    pub fn grant(&self, key: K) -> Option<UgsGrant<K>> {
        self.connections.get(&key).map(|c| c.grant)
    }

    /// Admits a connection whose packets carry at most `payload_bytes`.
    pub fn allocate_ugs_grant(
        &mut self,
        key: K,
        payload_bytes: u32,
    ) -> Result<UgsGrant<K>, WimaxError> {
        let grant = self.table.allocate(key, payload_bytes)?;
        self.connections.insert(
            key,
            Connection {
                grant,
                queue: VecDeque::new(),
                scheduled: None,
                last_service: None,
            },
        );
        Ok(grant)
    }

    /// Tears a connection down, returning anything still queued.
    pub fn release(&mut self, key: K) -> Vec<F> {
        self.table.release(key);
        self.connections
            .remove(&key)
            .map(|c| c.queue.into_iter().map(|q| q.frame).collect())
            .unwrap_or_default()
    }

    pub fn is_idle(&self, key: K) -> bool {
        self.connections
            .get(&key)
            .is_none_or(|c| c.queue.is_empty() && c.scheduled.is_none())
    }

    /// Queues a packet. Returns the grant occurrence to schedule when the
    /// connection was idle.
    pub fn enqueue(
        &mut self,
        now: SimTime,
        key: K,
        frame: F,
    ) -> Result<Option<SimTime>, EnqueueError<F>> {
        let phy = &self.phy;
        let Some(conn) = self.connections.get_mut(&key) else {
            return Err(EnqueueError::UnknownConnection(frame));
        };
        if conn.queue.len() >= phy.queue_capacity {
            self.counters.rejected += 1;
            return Err(EnqueueError::QueueFull(frame));
        }
        self.counters.enqueued += 1;
        conn.queue.push_back(Queued {
            frame,
            enqueued_at: now,
        });
        if conn.scheduled.is_some() {
            return Ok(None);
        }
        let mut at = phy.next_grant_at(now, conn.grant.offset_in_frame);
        if let Some(last) = conn.last_service {
            at = at.max(last + phy.frame_duration());
        }
        conn.scheduled = Some(at);
        Ok(Some(at))
    }

    /// Serves the head packet of `key` on its grant occurrence at `now`.
    pub fn on_grant(&mut self, now: SimTime, key: K) -> Option<GrantService<F>> {
        let frame_duration = self.phy.frame_duration();
        let conn = self.connections.get_mut(&key)?;
        if conn.scheduled != Some(now) {
            return None;
        }
        let q = conn.queue.pop_front()?;
        conn.last_service = Some(now);
        let next = (!conn.queue.is_empty()).then(|| now + frame_duration);
        conn.scheduled = next;
        self.counters.delivered += 1;
        let completes_at = now + self.phy.serialization(q.frame.payload_bytes());
        Some(GrantService {
            frame: q.frame,
            enqueued_at: q.enqueued_at,
            grant_at: now,
            completes_at,
            next,
        })
    }

    /// Removes every queued packet on every connection.
    pub fn drain(&mut self) -> Vec<F> {
        let mut out = Vec::new();
        for c in self.connections.values_mut() {
            out.extend(c.queue.drain(..).map(|q| q.frame));
            c.scheduled = None;
        }
        out
    }
}
