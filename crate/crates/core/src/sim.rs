//! One simulation run: call generation, SIP setup, voice media and packet
//! forwarding across both access networks and the backbone.
//!
//! Routing is static. A station hands every packet to its base station over
//! the subnet MAC; a base station either delivers locally over the same MAC
//! or pushes the packet through the cloud to the other base station.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::des::{
    CausalityError, Event, Kernel, KernelStats, RngStreams, SimDuration, SimTime, StreamId,
    TraceTag,
};
use crate::metrics::{
    classify_delay, classify_jitter, round_sig6, AggregateOptions, Band, DelayBreakdown, LossCause,
    LossRecord, MetricSeries, QosSample, SeriesAccumulator,
};
use crate::scenario::{ConfigError, ScenarioConfig, SubnetPhy};
use crate::topology::{CloudLink, MacKind, NodeId, NodeRole, Topology};
use crate::voip::{
    CallId, CallSession, CallState, Direction, Pairing, ReceiveStages, SessionError, SipMessage,
    VoiceFrame, SETUP_TIMEOUT, SIP_MESSAGE_BYTES,
};
use crate::wifi::{TxOutcome, WifiCell};
use crate::wimax::{EnqueueError, WimaxCell, WimaxError};
use crate::MacFrame;

/// How long after the media horizon in-flight packets may still land.
pub const DRAIN_GRACE: SimDuration = SimDuration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("subnet {subnet}: {source}")]
    Admission {
        subnet: String,
        #[source]
        source: WimaxError,
    },
    #[error(transparent)]
    Causality(#[from] CausalityError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("node {0} is not a station")]
    NotAStation(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Link {
    Up,
    Down,
}

/// A WiMAX UGS connection: one per call, station and link direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConnKey {
    call: CallId,
    station: NodeId,
    link: Link,
}

#[derive(Debug, Clone)]
enum Payload {
    Sip(SipMessage),
    Voice(VoiceFrame),
}

#[derive(Debug, Clone)]
pub struct Packet {
    call: CallId,
    payload: Payload,
    bytes: u32,
    dst: NodeId,
    /// Node reached when the current hop completes.
    next: NodeId,
    link: Link,
    breakdown: DelayBreakdown,
}

impl MacFrame for Packet {
    fn payload_bytes(&self) -> u32 {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub enum SimEvent {
    CallAttempt {
        station: NodeId,
    },
    ScriptedCall {
        caller: NodeId,
        callee: NodeId,
        hold: SimDuration,
    },
    SetupTimeout {
        call: CallId,
    },
    MediaTick {
        call: CallId,
    },
    CallEnd {
        call: CallId,
    },
    WifiAttempt {
        cell: usize,
        generation: u64,
    },
    WifiTxEnd {
        cell: usize,
    },
    WimaxGrant {
        cell: usize,
        key: ConnKey,
    },
    Arrive {
        node: NodeId,
        packet: Box<Packet>,
    },
}

impl TraceTag for SimEvent {
    fn trace_tag(&self) -> u64 {
        let (kind, id) = match self {
            SimEvent::CallAttempt { station } => (1, u64::from(station.0)),
            SimEvent::ScriptedCall { caller, .. } => (2, u64::from(caller.0)),
            SimEvent::SetupTimeout { call } => (3, u64::from(call.0)),
            SimEvent::MediaTick { call } => (4, u64::from(call.0)),
            SimEvent::CallEnd { call } => (5, u64::from(call.0)),
            SimEvent::WifiAttempt { cell, generation } => (6, (*cell as u64) << 32 | generation),
            SimEvent::WifiTxEnd { cell } => (7, *cell as u64),
            SimEvent::WimaxGrant { cell, key } => (8, (*cell as u64) << 32 | u64::from(key.call.0)),
            SimEvent::Arrive { node, packet } => {
                (9, u64::from(node.0) << 32 | u64::from(packet.call.0))
            }
        };
        kind << 56 | id
    }
}

enum Cell {
    Wifi(WifiCell<Packet>),
    Wimax(WimaxCell<Packet, ConnKey>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    /// Attempts generated by the arrival process or scripted.
    pub attempted: u64,
    /// Attempts that found a caller and callee and sent an INVITE.
    pub placed: u64,
    /// Attempts moved to another caller because the drawn one was busy.
    pub retargeted: u64,
    /// Attempts dropped because no eligible pair was free.
    pub blocked: u64,
    /// Calls that completed setup.
    pub connected: u64,
    pub abandoned: u64,
    pub terminated: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketStats {
    pub sent: u64,
    pub received: u64,
    pub retry_limit: u64,
    pub queue_overflow: u64,
    pub late: u64,
    pub unfinished: u64,
    pub node_down: u64,
}

impl PacketStats {
    pub fn lost(&self) -> u64 {
        self.retry_limit + self.queue_overflow + self.late + self.unfinished + self.node_down
    }

    fn count(&mut self, cause: LossCause) {
        match cause {
            LossCause::RetryLimit => self.retry_limit += 1,
            LossCause::QueueOverflow => self.queue_overflow += 1,
            LossCause::Late => self.late += 1,
            LossCause::Unfinished => self.unfinished += 1,
            LossCause::NodeDown => self.node_down += 1,
        }
    }
}

/// Whole-run QoS figures. Delay and jitter are packet-weighted means over
/// every bucket; `mean_mos` averages the per-bucket MOS values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub calls: CallStats,
    pub voice_packets: PacketStats,
    pub mean_delay_ms: f64,
    pub mean_jitter_ms: f64,
    pub loss_frac: f64,
    pub mean_mos: f64,
    pub delay_band: Band,
    pub jitter_band: Band,
}

/// Per-subnet traffic accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub subnet: String,
    pub mac: MacKind,
    /// MAC frames offered to the cell, by bucket index.
    pub offered_frames: BTreeMap<u64, u64>,
    /// Channel occupancy for WiFi cells, in microseconds.
    pub busy_us: Option<u64>,
    pub collisions: Option<u64>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub series: MetricSeries,
    pub summary: RunSummary,
    pub sessions: Vec<CallSession>,
    pub cells: Vec<CellReport>,
    pub kernel: KernelStats,
}

struct CallSlot {
    session: CallSession,
    in_flight: u32,
    released: bool,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    topo: Topology,
    kernel: Kernel<SimEvent>,
    rng: RngStreams,
    cells: Vec<Cell>,
    cloud: CloudLink,
    calls: Vec<CallSlot>,
    busy: Vec<u32>,
    failed: Vec<bool>,
    acc: SeriesAccumulator,
    stats: CallStats,
    packets: PacketStats,
    offered: Vec<BTreeMap<u64, u64>>,
    stages: ReceiveStages,
    end: SimTime,
    grant_bytes: u32,
    generator: bool,
    retain_samples: bool,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let topo = Topology::new(&cfg.subnets);
        let cells = cfg
            .subnets
            .iter()
            .map(|s| match &s.phy {
                SubnetPhy::Wifi(p) => Cell::Wifi(WifiCell::new(p.clone(), s.station_count + 1)),
                SubnetPhy::Wimax(p) => Cell::Wimax(WimaxCell::new(p.clone())),
            })
            .collect::<Vec<_>>();
        let node_count = cfg.subnets.iter().map(|s| s.station_count + 1).sum();
        Ok(Simulation {
            kernel: Kernel::new(),
            rng: RngStreams::new(cfg.seed),
            cloud: CloudLink::new(&cfg.cloud),
            calls: Vec::new(),
            busy: vec![0; node_count],
            failed: vec![false; node_count],
            acc: SeriesAccumulator::new(cfg.bucket_width(), cfg.mos_mode),
            stats: CallStats::default(),
            packets: PacketStats::default(),
            offered: vec![BTreeMap::new(); cells.len()],
            stages: ReceiveStages::from(&cfg.codec),
            end: SimTime::ZERO + cfg.duration(),
            grant_bytes: cfg.codec.packet_bytes().max(SIP_MESSAGE_BYTES),
            generator: true,
            retain_samples: false,
            cells,
            topo,
            cfg,
        })
    }

    /// Disables the random call arrival process; only scripted calls run.
    pub fn without_call_generator(mut self) -> Self {
        self.generator = false;
        self
    }

    /// Keeps every delivered sample in the returned sessions.
    pub fn retaining_samples(mut self) -> Self {
        self.retain_samples = true;
        self
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    /// Places a call at `at` regardless of the arrival process.
    pub fn schedule_call(
        &mut self,
        at: SimTime,
        caller: NodeId,
        callee: NodeId,
        hold: SimDuration,
    ) -> Result<(), SimError> {
        for n in [caller, callee] {
            if self.topo.node(n).map(|n| n.role) != Ok(NodeRole::Station) {
                return Err(SimError::NotAStation(n));
            }
        }
        self.kernel.schedule(
            at,
            SimEvent::ScriptedCall {
                caller,
                callee,
                hold,
            },
        )?;
        Ok(())
    }

    /// Marks a node as failed: every packet reaching it is discarded.
    pub fn fail_node(&mut self, node: NodeId) {
        if let Some(f) = self.failed.get_mut(node.0 as usize) {
            *f = true;
        }
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        if self.generator {
            let stations: Vec<NodeId> = self.topo.stations().map(|n| n.id).collect();
            let mean = self.cfg.call_profile.mean_interarrival();
            for s in stations {
                let gap = self.draw(StreamId::CallArrivals, mean);
                self.kernel
                    .schedule(SimTime::ZERO + gap, SimEvent::CallAttempt { station: s })?;
            }
        }
        let horizon = self.end + DRAIN_GRACE;
        while self.kernel.peek_time().is_some_and(|t| t <= horizon) {
            let ev = self.kernel.pop().expect("peeked event");
            self.handle(ev)?;
        }
        Ok(self.finish())
    }

    fn draw(&mut self, stream: StreamId, mean: SimDuration) -> SimDuration {
        self.rng
            .get(stream)
            .exp_sample(mean)
            .expect("validated configuration has positive means")
    }

    fn handle(&mut self, ev: Event<SimEvent>) -> Result<(), SimError> {
        let now = ev.fire_at;
        match ev.action {
            SimEvent::CallAttempt { station } => self.on_call_attempt(now, station)?,
            SimEvent::ScriptedCall {
                caller,
                callee,
                hold,
            } => {
                self.stats.attempted += 1;
                self.place_call(now, caller, callee, hold)?;
            }
            SimEvent::SetupTimeout { call } => {
                let slot = &mut self.calls[call.0 as usize];
                if slot.session.on_setup_timeout(now) {
                    self.stats.abandoned += 1;
                    self.free_endpoints(call);
                    self.maybe_release(call);
                }
            }
            SimEvent::MediaTick { call } => self.on_media_tick(now, call)?,
            SimEvent::CallEnd { call } => {
                let slot = &mut self.calls[call.0 as usize];
                if slot.session.state() == CallState::Active {
                    slot.session.terminate(now)?;
                    self.stats.terminated += 1;
                    self.free_endpoints(call);
                    self.maybe_release(call);
                }
            }
            SimEvent::WifiAttempt { cell, generation } => {
                let Cell::Wifi(c) = &mut self.cells[cell] else {
                    unreachable!("wifi event on wimax cell")
                };
                if let Some(end) = c.on_attempt(now, generation) {
                    self.kernel.schedule(end, SimEvent::WifiTxEnd { cell })?;
                }
            }
            SimEvent::WifiTxEnd { cell } => {
                let Cell::Wifi(c) = &mut self.cells[cell] else {
                    unreachable!("wifi event on wimax cell")
                };
                let outcomes = c.on_tx_end(now, self.rng.get(StreamId::Backoff));
                for o in outcomes {
                    match o {
                        TxOutcome::Delivered {
                            mut frame,
                            enqueued_at,
                            delivered_at,
                            ..
                        } => {
                            frame.add_hop_delay(delivered_at - enqueued_at);
                            let next = frame.next;
                            self.forward(now, next, frame)?;
                        }
                        TxOutcome::Dropped { frame, .. } => self.lose(frame, LossCause::RetryLimit),
                    }
                }
                self.rearm_wifi(cell)?;
            }
            SimEvent::WimaxGrant { cell, key } => {
                let Cell::Wimax(c) = &mut self.cells[cell] else {
                    unreachable!("wimax event on wifi cell")
                };
                if let Some(svc) = c.on_grant(now, key) {
                    if let Some(next) = svc.next {
                        self.kernel
                            .schedule(next, SimEvent::WimaxGrant { cell, key })?;
                    }
                    let mut packet = svc.frame;
                    packet.add_hop_delay(svc.completes_at - svc.enqueued_at);
                    self.kernel.schedule(
                        svc.completes_at,
                        SimEvent::Arrive {
                            node: packet.next,
                            packet: Box::new(packet),
                        },
                    )?;
                }
            }
            SimEvent::Arrive { node, packet } => self.forward(now, node, *packet)?,
        }
        Ok(())
    }

    fn eligible(&self, n: NodeId) -> bool {
        self.busy[n.0 as usize] < self.cfg.call_profile.max_calls_per_station
            && !self.failed[n.0 as usize]
    }

    fn on_call_attempt(&mut self, now: SimTime, station: NodeId) -> Result<(), SimError> {
        if now >= self.end {
            return Ok(());
        }
        let gap = self.draw(
            StreamId::CallArrivals,
            self.cfg.call_profile.mean_interarrival(),
        );
        self.kernel
            .schedule(now + gap, SimEvent::CallAttempt { station })?;
        self.stats.attempted += 1;

        let mut caller = station;
        if !self.eligible(caller) {
            let idle: Vec<NodeId> = self
                .topo
                .stations()
                .map(|n| n.id)
                .filter(|&n| self.eligible(n))
                .collect();
            if idle.is_empty() {
                self.stats.blocked += 1;
                return Ok(());
            }
            caller = idle[self.rng.get(StreamId::CallPairing).index(idle.len())];
            self.stats.retargeted += 1;
        }
        let caller_mac = self.topo.mac_kind(caller).expect("station exists");
        let cross = self.cfg.call_profile.pairing == Pairing::CrossMac;
        let candidates: Vec<NodeId> = self
            .topo
            .stations()
            .map(|n| n.id)
            .filter(|&n| n != caller && self.eligible(n))
            .filter(|&n| !cross || self.topo.mac_kind(n).expect("station exists") != caller_mac)
            .collect();
        if candidates.is_empty() {
            self.stats.blocked += 1;
            return Ok(());
        }
        let callee = candidates[self.rng.get(StreamId::CallPairing).index(candidates.len())];
        let hold = self.draw(
            StreamId::CallDurations,
            self.cfg.call_profile.mean_duration(),
        );
        self.place_call(now, caller, callee, hold)
    }

    fn connections(&self, call: CallId, caller: NodeId, callee: NodeId) -> [(usize, ConnKey); 4] {
        let key = |station: NodeId, link| {
            let cell = self.topo.node(station).expect("station exists").subnet;
            (
                cell,
                ConnKey {
                    call,
                    station,
                    link,
                },
            )
        };
        // Uplinks first, so first-fit places downlink grants after them and a
        // packet relayed inside one cell leaves in the frame it arrived in.
        [
            key(caller, Link::Up),
            key(callee, Link::Up),
            key(callee, Link::Down),
            key(caller, Link::Down),
        ]
    }

    fn place_call(
        &mut self,
        now: SimTime,
        caller: NodeId,
        callee: NodeId,
        hold: SimDuration,
    ) -> Result<(), SimError> {
        let call = CallId(self.calls.len() as u32);
        for (cell, key) in self.connections(call, caller, callee) {
            if let Cell::Wimax(c) = &mut self.cells[cell] {
                c.allocate_ugs_grant(key, self.grant_bytes)
                    .map_err(|source| SimError::Admission {
                        subnet: self.cfg.subnets[cell].name.clone(),
                        source,
                    })?;
            }
        }
        let mut session = CallSession::new(call, caller, callee, now, hold);
        if !self.retain_samples {
            session = session.without_sample_history();
        }
        self.calls.push(CallSlot {
            session,
            in_flight: 0,
            released: false,
        });
        self.busy[caller.0 as usize] += 1;
        self.busy[callee.0 as usize] += 1;
        self.stats.placed += 1;
        self.send(
            now,
            call,
            caller,
            callee,
            Payload::Sip(SipMessage::Invite),
            SIP_MESSAGE_BYTES,
        )?;
        self.kernel
            .schedule(now + SETUP_TIMEOUT, SimEvent::SetupTimeout { call })?;
        Ok(())
    }

    fn free_endpoints(&mut self, call: CallId) {
        let s = &self.calls[call.0 as usize].session;
        let (a, b) = (s.caller, s.callee);
        self.busy[a.0 as usize] -= 1;
        self.busy[b.0 as usize] -= 1;
    }

    /// Returns a settled call's WiMAX grants once none of its packets remain
    /// in the network.
    fn maybe_release(&mut self, call: CallId) {
        let slot = &self.calls[call.0 as usize];
        let settled = matches!(
            slot.session.state(),
            CallState::Terminated | CallState::Abandoned
        );
        if !settled || slot.in_flight > 0 || slot.released {
            return;
        }
        let (caller, callee) = (slot.session.caller, slot.session.callee);
        for (cell, key) in self.connections(call, caller, callee) {
            if let Cell::Wimax(c) = &mut self.cells[cell] {
                let leftover = c.release(key);
                debug_assert!(
                    leftover.is_empty(),
                    "released a connection with queued packets"
                );
            }
        }
        self.calls[call.0 as usize].released = true;
    }

    fn on_media_tick(&mut self, now: SimTime, call: CallId) -> Result<(), SimError> {
        let encode = self.stages.encode;
        let period = self.cfg.codec.frame_period();
        let slot = &self.calls[call.0 as usize];
        if slot.session.state() != CallState::Active {
            return Ok(());
        }
        let active_at = slot.session.active_at.expect("active session has a start");
        let limit = (active_at + slot.session.hold_time).min(self.end);
        if now >= limit + encode {
            return Ok(());
        }
        let (caller, callee) = (slot.session.caller, slot.session.callee);
        let bytes = self.cfg.codec.packet_bytes();
        for dir in Direction::BOTH {
            let frame = self.calls[call.0 as usize].session.emit_frame(dir, now)?;
            let (from, to) = match dir {
                Direction::CallerToCallee => (caller, callee),
                Direction::CalleeToCaller => (callee, caller),
            };
            self.packets.sent += 1;
            self.send(now, call, from, to, Payload::Voice(frame), bytes)?;
        }
        self.kernel
            .schedule(now + period, SimEvent::MediaTick { call })?;
        Ok(())
    }

    fn send(
        &mut self,
        now: SimTime,
        call: CallId,
        from: NodeId,
        to: NodeId,
        payload: Payload,
        bytes: u32,
    ) -> Result<(), SimError> {
        self.calls[call.0 as usize].in_flight += 1;
        let packet = Packet {
            call,
            payload,
            bytes,
            dst: to,
            next: from,
            link: Link::Up,
            breakdown: DelayBreakdown::default(),
        };
        self.forward(now, from, packet)
    }

    /// Moves a packet that has just reached `at` onto its next hop.
    fn forward(&mut self, now: SimTime, at: NodeId, mut packet: Packet) -> Result<(), SimError> {
        if self.failed[at.0 as usize] {
            self.lose(packet, LossCause::NodeDown);
            return Ok(());
        }
        if at == packet.dst {
            return self.deliver(now, packet);
        }
        let node = self.topo.node(at).expect("routed node exists").clone();
        let bs = self.topo.subnets()[node.subnet].base_station;
        let dst_subnet = self
            .topo
            .node(packet.dst)
            .expect("destination exists")
            .subnet;
        match node.role {
            NodeRole::Station => {
                packet.link = Link::Up;
                packet.next = bs;
                self.mac_send(now, node.subnet, at, packet)
            }
            NodeRole::BaseStation if dst_subnet == node.subnet => {
                packet.link = Link::Down;
                packet.next = packet.dst;
                let station = packet.dst;
                self.mac_send(now, node.subnet, station, packet)
            }
            NodeRole::BaseStation => {
                let arrival =
                    self.cloud
                        .transit(now, node.subnet, self.rng.get(StreamId::CloudLatency));
                packet.breakdown.cloud += arrival - now;
                let far = self.topo.subnets()[dst_subnet].base_station;
                self.kernel.schedule(
                    arrival,
                    SimEvent::Arrive {
                        node: far,
                        packet: Box::new(packet),
                    },
                )?;
                Ok(())
            }
        }
    }

    /// Queues a packet on the MAC of `cell`. `station` is the wireless
    /// endpoint of the hop: the sender on uplink, the receiver on downlink.
    fn mac_send(
        &mut self,
        now: SimTime,
        cell: usize,
        station: NodeId,
        packet: Packet,
    ) -> Result<(), SimError> {
        let bucket = now.as_micros() / self.cfg.bucket_width().as_micros();
        *self.offered[cell].entry(bucket).or_default() += 1;
        match &mut self.cells[cell] {
            Cell::Wifi(c) => {
                let contender = match packet.link {
                    Link::Up => {
                        self.topo
                            .node(station)
                            .expect("station")
                            .station_index
                            .expect("station index")
                            + 1
                    }
                    Link::Down => 0,
                };
                if let Err(p) = c.enqueue(now, contender, packet, self.rng.get(StreamId::Backoff)) {
                    self.lose(p, LossCause::QueueOverflow);
                }
                self.rearm_wifi(cell)
            }
            Cell::Wimax(c) => {
                let key = ConnKey {
                    call: packet.call,
                    station,
                    link: packet.link,
                };
                match c.enqueue(now, key, packet) {
                    Ok(Some(at)) => {
                        self.kernel
                            .schedule(at, SimEvent::WimaxGrant { cell, key })?;
                    }
                    Ok(None) => {}
                    Err(EnqueueError::QueueFull(p)) => self.lose(p, LossCause::QueueOverflow),
                    Err(EnqueueError::UnknownConnection(p)) => self.lose(p, LossCause::NodeDown),
                }
                Ok(())
            }
        }
    }

    fn rearm_wifi(&mut self, cell: usize) -> Result<(), SimError> {
        if let Cell::Wifi(c) = &mut self.cells[cell] {
            if let Some((at, generation)) = c.rearm() {
                self.kernel
                    .schedule(at, SimEvent::WifiAttempt { cell, generation })?;
            }
        }
        Ok(())
    }

    fn deliver(&mut self, now: SimTime, packet: Packet) -> Result<(), SimError> {
        let call = packet.call;
        self.calls[call.0 as usize].in_flight -= 1;
        match packet.payload {
            Payload::Sip(msg) => {
                let slot = &mut self.calls[call.0 as usize];
                let reply = slot.session.on_sip(msg, now)?;
                let (caller, callee) = (slot.session.caller, slot.session.callee);
                if msg == SipMessage::Ack && slot.session.state() == CallState::Active {
                    let hold = slot.session.hold_time;
                    self.stats.connected += 1;
                    let encode = self.stages.encode;
                    self.kernel
                        .schedule(now + encode, SimEvent::MediaTick { call })?;
                    self.kernel
                        .schedule(now + hold + encode, SimEvent::CallEnd { call })?;
                }
                if let Some(reply) = reply {
                    let (from, to) = if packet.dst == callee {
                        (callee, caller)
                    } else {
                        (caller, callee)
                    };
                    self.send(now, call, from, to, Payload::Sip(reply), SIP_MESSAGE_BYTES)?;
                }
            }
            Payload::Voice(frame) => {
                let stages = self.stages;
                let session = &mut self.calls[call.0 as usize].session;
                match session.receive_frame(&frame, now, packet.breakdown, &stages) {
                    Some(sample) => {
                        self.packets.received += 1;
                        self.acc.add_sample(&sample);
                    }
                    None => {
                        let rec = *session
                            .log(frame.direction)
                            .losses
                            .last()
                            .expect("late loss recorded");
                        self.record_loss(&rec);
                    }
                }
            }
        }
        self.maybe_release(call);
        Ok(())
    }

    fn record_loss(&mut self, rec: &LossRecord) {
        self.packets.count(rec.cause);
        self.acc.add_loss(rec);
    }

    fn lose(&mut self, packet: Packet, cause: LossCause) {
        let call = packet.call;
        self.calls[call.0 as usize].in_flight -= 1;
        if let Payload::Voice(frame) = packet.payload {
            self.calls[call.0 as usize]
                .session
                .record_loss(&frame, cause);
            let rec = *self.calls[call.0 as usize]
                .session
                .log(frame.direction)
                .losses
                .last()
                .expect("loss just recorded");
            self.record_loss(&rec);
        }
        self.maybe_release(call);
    }

    fn finish(mut self) -> RunOutput {
        let kernel = self.kernel.stats();
        let mut stranded = Vec::new();
        for ev in self.kernel.drain() {
            if let SimEvent::Arrive { packet, .. } = ev.action {
                stranded.push(*packet);
            }
        }
        for cell in &mut self.cells {
            match cell {
                Cell::Wifi(c) => stranded.extend(c.drain()),
                Cell::Wimax(c) => stranded.extend(c.drain()),
            }
        }
        for p in stranded {
            self.lose(p, LossCause::Unfinished);
        }

        let opts = AggregateOptions {
            mos_mode: self.cfg.mos_mode,
            emodel: self.cfg.emodel(),
        };
        let series = self.acc.finish(&opts);
        let summary = self.summarize(&series);
        let cells = self
            .cells
            .iter()
            .zip(&self.cfg.subnets)
            .zip(std::mem::take(&mut self.offered))
            .map(|((cell, spec), offered_frames)| {
                let (busy_us, collisions) = match cell {
                    Cell::Wifi(c) => (Some(c.counters.busy_us), Some(c.counters.collisions)),
                    Cell::Wimax(_) => (None, None),
                };
                CellReport {
                    subnet: spec.name.clone(),
                    mac: spec.mac_kind(),
                    offered_frames,
                    busy_us,
                    collisions,
                }
            })
            .collect();
        RunOutput {
            sessions: self.calls.into_iter().map(|s| s.session).collect(),
            config: self.cfg,
            series,
            summary,
            cells,
            kernel,
        }
    }

    fn summarize(&self, series: &MetricSeries) -> RunSummary {
        let (mut n, mut delay, mut nj, mut jit, mut lost) = (0u64, 0u64, 0u64, 0u64, 0u64);
        for (_, b) in self.acc.sums() {
            n += b.n_samples;
            delay += b.delay_sum_us;
            nj += b.n_jitter;
            jit += b.abs_jitter_sum_us;
            lost += b.lost;
        }
        let mean_delay_ms = if n == 0 {
            0.0
        } else {
            delay as f64 / n as f64 / 1e3
        };
        let mean_jitter_ms = if nj == 0 {
            0.0
        } else {
            jit as f64 / nj as f64 / 1e3
        };
        let loss_frac = if n + lost == 0 {
            0.0
        } else {
            lost as f64 / (n + lost) as f64
        };
        RunSummary {
            calls: self.stats,
            voice_packets: self.packets,
            mean_delay_ms: round_sig6(mean_delay_ms),
            mean_jitter_ms: round_sig6(mean_jitter_ms),
            loss_frac: round_sig6(loss_frac),
            mean_mos: round_sig6(series.average_mos().unwrap_or(0.0)),
            delay_band: classify_delay(mean_delay_ms).expect("non-negative"),
            jitter_band: classify_jitter(mean_jitter_ms).expect("non-negative"),
        }
    }
}

impl Packet {
    fn add_hop_delay(&mut self, d: SimDuration) {
        match self.link {
            Link::Up => self.breakdown.source_mac += d,
            Link::Down => self.breakdown.destination_mac += d,
        }
    }
}

/// Runs a configuration end to end with its own call generator.
pub fn run(cfg: ScenarioConfig) -> Result<RunOutput, SimError> {
    Simulation::new(cfg)?.run()
}

/// Every voice sample retained by the sessions of a run, in call order.
pub fn retained_samples(out: &RunOutput) -> Vec<QosSample> {
    out.sessions
        .iter()
        .flat_map(|s| {
            Direction::BOTH
                .into_iter()
                .flat_map(move |d| s.log(d).samples.iter().copied())
        })
        .collect()
}
