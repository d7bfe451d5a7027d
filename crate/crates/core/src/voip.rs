//! VoIP application layer: codec framing, call profile, and the per-call
//! session with its SIP setup handshake and per-direction packet logs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::des::{SimDuration, SimTime};
use crate::metrics::{
    jitter_sample, DelayBreakdown, EModelParams, LossCause, LossRecord, QosSample,
};
use crate::topology::NodeId;

/// Size of each SIP signaling message on the wire.
pub const SIP_MESSAGE_BYTES: u32 = 200;

/// The caller abandons setup if no 200 OK arrives within this window.
pub const SETUP_TIMEOUT: SimDuration = SimDuration::from_secs(32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallId(pub u32);

impl fmt::Display for CallId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "call-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    CallerToCallee,
    CalleeToCaller,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::CallerToCallee, Direction::CalleeToCaller];

    pub fn index(self) -> usize {
        match self {
            Direction::CallerToCallee => 0,
            Direction::CalleeToCaller => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Callee drawn uniformly from every other station.
    #[default]
    Uniform,
    /// Callee drawn from stations of the other MAC technology.
    CrossMac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallProfile {
    pub mean_duration_s: f64,
    /// Mean time between call attempts originated by one station.
    pub mean_interarrival_s: f64,
    /// Concurrent calls a station may hold.
    pub max_calls_per_station: u32,
    pub pairing: Pairing,
}

impl Default for CallProfile {
    fn default() -> Self {
        CallProfile {
            mean_duration_s: 180.0,
            mean_interarrival_s: 60.0,
            max_calls_per_station: 1,
            pairing: Pairing::Uniform,
        }
    }
}

impl CallProfile {
    pub fn mean_duration(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.mean_duration_s)
    }

    pub fn mean_interarrival(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.mean_interarrival_s)
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.mean_duration_s.is_finite() && self.mean_duration() > SimDuration::ZERO) {
            return Err("mean_duration_s");
        }
        if !(self.mean_interarrival_s.is_finite() && self.mean_interarrival() > SimDuration::ZERO) {
            return Err("mean_interarrival_s");
        }
        if self.max_calls_per_station == 0 {
            return Err("max_calls_per_station");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Codec {
    #[serde(rename = "G.711")]
    G711,
    #[serde(rename = "G.729A")]
    G729A,
}

impl Codec {
    pub fn emodel(self) -> EModelParams {
        match self {
            Codec::G711 => EModelParams::G711,
            Codec::G729A => EModelParams::G729A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub name: Codec,
    pub bitrate_bps: u64,
    pub frame_period_ms: f64,
    pub payload_bytes: u32,
    /// RTP + UDP + IP.
    pub header_bytes: u32,
    pub encode_delay_ms: f64,
    pub decode_delay_ms: f64,
    pub lookahead_ms: f64,
    /// Fixed de-jitter playout stage; `null` disables it.
    pub playout_delay_ms: Option<f64>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            name: Codec::G711,
            bitrate_bps: 64_000,
            frame_period_ms: 20.0,
            payload_bytes: 160,
            header_bytes: 40,
            encode_delay_ms: 1.0,
            decode_delay_ms: 1.0,
            lookahead_ms: 0.0,
            playout_delay_ms: None,
        }
    }
}

impl CodecConfig {
    pub fn g729a() -> Self {
        CodecConfig {
            name: Codec::G729A,
            bitrate_bps: 8_000,
            frame_period_ms: 10.0,
            payload_bytes: 10,
            header_bytes: 40,
            encode_delay_ms: 5.0,
            decode_delay_ms: 1.0,
            lookahead_ms: 5.0,
            playout_delay_ms: None,
        }
    }

    pub fn packet_bytes(&self) -> u32 {
        self.payload_bytes + self.header_bytes
    }

    pub fn frame_period(&self) -> SimDuration {
        SimDuration::from_millis_f64(self.frame_period_ms)
    }

    /// Encoder delay including lookahead.
    pub fn encode_delay(&self) -> SimDuration {
        SimDuration::from_millis_f64(self.encode_delay_ms + self.lookahead_ms)
    }

    pub fn decode_delay(&self) -> SimDuration {
        SimDuration::from_millis_f64(self.decode_delay_ms)
    }

    pub fn playout_delay(&self) -> Option<SimDuration> {
        self.playout_delay_ms.map(SimDuration::from_millis_f64)
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.frame_period_ms.is_finite() && self.frame_period() > SimDuration::ZERO) {
            return Err("frame_period_ms");
        }
        if self.bitrate_bps == 0 {
            return Err("bitrate_bps");
        }
        let expected = self.bitrate_bps as f64 * self.frame_period_ms / 8_000.0;
        if (expected - f64::from(self.payload_bytes)).abs() > 1e-6 || self.payload_bytes == 0 {
            return Err("payload_bytes");
        }
        for (v, name) in [
            (self.encode_delay_ms, "encode_delay_ms"),
            (self.decode_delay_ms, "decode_delay_ms"),
            (self.lookahead_ms, "lookahead_ms"),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(name);
            }
        }
        if let Some(p) = self.playout_delay_ms {
            if !(p.is_finite() && p >= 0.0) {
                return Err("playout_delay_ms");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SipMessage {
    Invite,
    Ok200,
    Ack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallState {
    Setup,
    Active,
    Terminated,
    /// Setup timed out before the callee answered.
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("{call}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        call: CallId,
        from: CallState,
        to: CallState,
    },
    #[error("{call}: media requested outside the Active state ({state:?})")]
    NotActive { call: CallId, state: CallState },
}

/// One emitted voice frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoiceFrame {
    pub call: CallId,
    pub direction: Direction,
    pub seq: u32,
    /// Encode completion; the instant the packet enters the network.
    pub send_ts: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DirectionLog {
    pub sent: u64,
    pub received: u64,
    /// Every delivered sample, when the session retains them.
    pub samples: Vec<QosSample>,
    pub losses: Vec<LossRecord>,
    last: Option<QosSample>,
}

impl DirectionLog {
    pub fn lost(&self) -> u64 {
        self.losses.len() as u64
    }

    /// Sent packets neither received nor declared lost.
    pub fn outstanding(&self) -> u64 {
        self.sent - self.received - self.lost()
    }
}

/// Codec stages applied at the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiveStages {
    pub encode: SimDuration,
    pub decode: SimDuration,
    pub playout: Option<SimDuration>,
}

impl From<&CodecConfig> for ReceiveStages {
    fn from(c: &CodecConfig) -> Self {
        ReceiveStages {
            encode: c.encode_delay(),
            decode: c.decode_delay(),
            playout: c.playout_delay(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallSession {
    pub id: CallId,
    pub caller: NodeId,
    pub callee: NodeId,
    state: CallState,
    pub invite_sent_at: SimTime,
    pub active_at: Option<SimTime>,
    pub ended_at: Option<SimTime>,
    pub setup_delay: Option<SimDuration>,
    /// Planned media duration, drawn when the call is placed.
    pub hold_time: SimDuration,
    ok_sent: bool,
    ack_sent: bool,
    retain_samples: bool,
    logs: [DirectionLog; 2],
}

impl CallSession {
    /// A session whose INVITE leaves the caller at `now`.
    pub fn new(
        id: CallId,
        caller: NodeId,
        callee: NodeId,
        now: SimTime,
        hold_time: SimDuration,
    ) -> Self {
        CallSession {
            id,
            caller,
            callee,
            state: CallState::Setup,
            invite_sent_at: now,
            active_at: None,
            ended_at: None,
            setup_delay: None,
            hold_time,
            ok_sent: false,
            ack_sent: false,
            retain_samples: true,
            logs: Default::default(),
        }
    }

    /// Keep only the most recent sample per direction instead of the full
    /// history. Jitter and counters are unaffected.
    pub fn without_sample_history(mut self) -> Self {
        self.retain_samples = false;
        self
    }

    pub fn state(&self) -> CallState {
        self.state
    }

    fn transition(&mut self, to: CallState) -> Result<(), SessionError> {
        let ok = matches!(
            (self.state, to),
            (CallState::Setup, CallState::Active)
                | (CallState::Active, CallState::Terminated)
                | (CallState::Setup, CallState::Abandoned)
        );
        if !ok {
            return Err(SessionError::IllegalTransition {
                call: self.id,
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }

    /// Reacts to a SIP message delivered to its endpoint. Returns the reply
    /// to send, if any.
    pub fn on_sip(
        &mut self,
        msg: SipMessage,
        now: SimTime,
    ) -> Result<Option<SipMessage>, SessionError> {
        if self.state != CallState::Setup {
            // Late or duplicate signaling for a settled call.
            return Ok(None);
        }
        match msg {
            SipMessage::Invite if !self.ok_sent => {
                self.ok_sent = true;
                Ok(Some(SipMessage::Ok200))
            }
            SipMessage::Ok200 if !self.ack_sent => {
                self.ack_sent = true;
                Ok(Some(SipMessage::Ack))
            }
            SipMessage::Ack => {
                self.transition(CallState::Active)?;
                self.active_at = Some(now);
                self.setup_delay = Some(now - self.invite_sent_at);
                Ok(None)
            }
            _ => Ok(None),
        }
    }

    /// Fires the setup timer. Returns true when the call was abandoned.
    pub fn on_setup_timeout(&mut self, now: SimTime) -> bool {
        if self.state == CallState::Setup {
            self.state = CallState::Abandoned;
            self.ended_at = Some(now);
            return true;
        }
        false
    }

    pub fn terminate(&mut self, now: SimTime) -> Result<(), SessionError> {
        self.transition(CallState::Terminated)?;
        self.ended_at = Some(now);
        Ok(())
    }

    /// Emits the next voice frame for one direction.
    pub fn emit_frame(
        &mut self,
        direction: Direction,
        send_ts: SimTime,
    ) -> Result<VoiceFrame, SessionError> {
        if self.state != CallState::Active {
            return Err(SessionError::NotActive {
                call: self.id,
                state: self.state,
            });
        }
        let log = &mut self.logs[direction.index()];
        let seq = log.sent as u32;
        log.sent += 1;
        Ok(VoiceFrame {
            call: self.id,
            direction,
            seq,
            send_ts,
        })
    }

    /// Records a delivered voice packet. Returns the sample, or `None` when
    /// the packet missed its playout deadline and was counted as lost.
    pub fn receive_frame(
        &mut self,
        frame: &VoiceFrame,
        arrival: SimTime,
        breakdown: DelayBreakdown,
        stages: &ReceiveStages,
    ) -> Option<QosSample> {
        let log = &mut self.logs[frame.direction.index()];
        let network = arrival - frame.send_ts;
        let mut e2e = stages.encode + network + stages.decode;
        if let Some(playout) = stages.playout {
            if network > playout {
                log.losses.push(LossRecord {
                    call: frame.call,
                    direction: frame.direction,
                    seq: frame.seq,
                    send_ts: frame.send_ts,
                    cause: LossCause::Late,
                });
                return None;
            }
            e2e += playout;
        }
        log.received += 1;
        let mut sample = QosSample {
            call: frame.call,
            direction: frame.direction,
            seq: frame.seq,
            send_ts: frame.send_ts,
            arrival_ts: arrival,
            e2e,
            breakdown,
            jitter_us: None,
        };
        if let Some(prev) = &log.last {
            sample.jitter_us = jitter_sample(prev, &sample);
        }
        log.last = Some(sample);
        if self.retain_samples {
            log.samples.push(sample);
        }
        Some(sample)
    }

    pub fn record_loss(&mut self, frame: &VoiceFrame, cause: LossCause) {
        self.logs[frame.direction.index()].losses.push(LossRecord {
            call: frame.call,
            direction: frame.direction,
            seq: frame.seq,
            send_ts: frame.send_ts,
            cause,
        });
    }

    pub fn log(&self, direction: Direction) -> &DirectionLog {
        &self.logs[direction.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> CallSession {
        CallSession::new(
            CallId(1),
            NodeId(1),
            NodeId(6),
            SimTime::from_secs(1),
            SimDuration::from_secs(180),
        )
    }

    fn activate(s: &mut CallSession, at: SimTime) {
        assert_eq!(
            s.on_sip(SipMessage::Invite, at).unwrap(),
            Some(SipMessage::Ok200)
        );
        assert_eq!(
            s.on_sip(SipMessage::Ok200, at).unwrap(),
            Some(SipMessage::Ack)
        );
        assert_eq!(s.on_sip(SipMessage::Ack, at).unwrap(), None);
    }

    #[test]
    fn g711_framing() {
        let c = CodecConfig::default();
        c.validate().unwrap();
        assert_eq!(c.packet_bytes(), 200);
        // 180 s of 20 ms frames.
        assert_eq!(
            SimDuration::from_secs(180).as_micros() / c.frame_period().as_micros(),
            9_000
        );
        CodecConfig::g729a().validate().unwrap();
    }

    #[test]
    fn codec_payload_must_match_bitrate() {
        let c = CodecConfig {
            payload_bytes: 100,
            ..CodecConfig::default()
        };
        assert_eq!(c.validate(), Err("payload_bytes"));
    }

    #[test]
    fn three_way_handshake() {
        let mut s = session();
        assert_eq!(s.state(), CallState::Setup);
        assert!(s
            .emit_frame(Direction::CallerToCallee, SimTime::from_secs(1))
            .is_err());
        activate(&mut s, SimTime::from_millis(1_030));
        assert_eq!(s.state(), CallState::Active);
        assert_eq!(s.setup_delay, Some(SimDuration::from_millis(30)));
        // The timer is harmless once the call is up.
        assert!(!s.on_setup_timeout(SimTime::from_secs(33)));
        s.terminate(SimTime::from_secs(200)).unwrap();
        assert_eq!(s.state(), CallState::Terminated);
        assert!(s
            .emit_frame(Direction::CallerToCallee, SimTime::from_secs(201))
            .is_err());
    }

    #[test]
    fn setup_timeout_abandons() {
        let mut s = session();
        assert!(s.on_setup_timeout(s.invite_sent_at + SETUP_TIMEOUT));
        assert_eq!(s.state(), CallState::Abandoned);
        // A straggling ACK does not revive it.
        assert_eq!(
            s.on_sip(SipMessage::Ack, SimTime::from_secs(40)).unwrap(),
            None
        );
        assert_eq!(s.state(), CallState::Abandoned);
        assert!(s.terminate(SimTime::from_secs(41)).is_err());
    }

    #[test]
    fn illegal_transitions_rejected() {
        let mut s = session();
        assert!(matches!(
            s.terminate(SimTime::from_secs(2)),
            Err(SessionError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn receive_decomposes_delay() {
        let mut s = session();
        activate(&mut s, SimTime::from_secs(1));
        let stages = ReceiveStages::from(&CodecConfig::default());
        let breakdown = DelayBreakdown {
            source_mac: SimDuration::from_micros(626),
            cloud: SimDuration::from_millis(10),
            destination_mac: SimDuration::from_micros(700),
        };
        let mut e2es = Vec::new();
        for k in 0..3u64 {
            let send = SimTime::from_millis(2_000 + 20 * k);
            let f = s.emit_frame(Direction::CallerToCallee, send).unwrap();
            let arrival = send + breakdown.network_total();
            let q = s.receive_frame(&f, arrival, breakdown, &stages).unwrap();
            e2es.push(q.e2e);
            assert_eq!(q.jitter_us, if k == 0 { None } else { Some(0) });
        }
        let expected =
            SimDuration::from_millis(1) + breakdown.network_total() + SimDuration::from_millis(1);
        assert!(e2es.iter().all(|&d| d == expected));
        let log = s.log(Direction::CallerToCallee);
        assert_eq!((log.sent, log.received, log.lost()), (3, 3, 0));
    }

    #[test]
    fn loss_breaks_jitter_chain_and_is_conserved() {
        let mut s = session();
        activate(&mut s, SimTime::from_secs(1));
        let stages = ReceiveStages::from(&CodecConfig::default());
        let frames: Vec<VoiceFrame> = (0..3)
            .map(|k| {
                s.emit_frame(
                    Direction::CalleeToCaller,
                    SimTime::from_millis(2_000 + 20 * k),
                )
                .unwrap()
            })
            .collect();
        s.receive_frame(
            &frames[0],
            frames[0].send_ts + SimDuration::from_millis(5),
            DelayBreakdown::default(),
            &stages,
        );
        s.record_loss(&frames[1], LossCause::RetryLimit);
        let q = s
            .receive_frame(
                &frames[2],
                frames[2].send_ts + SimDuration::from_millis(9),
                DelayBreakdown::default(),
                &stages,
            )
            .unwrap();
        assert_eq!(q.jitter_us, None);
        let log = s.log(Direction::CalleeToCaller);
        assert_eq!(log.sent, log.received + log.lost());
        assert_eq!(log.outstanding(), 0);
    }

    #[test]
    fn late_packets_count_as_loss_with_playout() {
        let mut s = session();
        activate(&mut s, SimTime::from_secs(1));
        let codec = CodecConfig {
            playout_delay_ms: Some(30.0),
            ..CodecConfig::default()
        };
        let stages = ReceiveStages::from(&codec);
        let f0 = s
            .emit_frame(Direction::CallerToCallee, SimTime::from_secs(2))
            .unwrap();
        let q = s
            .receive_frame(
                &f0,
                f0.send_ts + SimDuration::from_millis(12),
                DelayBreakdown::default(),
                &stages,
            )
            .unwrap();
        // encode 1 + network 12 + playout 30 + decode 1
        assert_eq!(q.e2e, SimDuration::from_millis(44));
        let f1 = s
            .emit_frame(Direction::CallerToCallee, SimTime::from_millis(2_020))
            .unwrap();
        assert!(s
            .receive_frame(
                &f1,
                f1.send_ts + SimDuration::from_millis(31),
                DelayBreakdown::default(),
                &stages
            )
            .is_none());
        assert_eq!(
            s.log(Direction::CallerToCallee).losses[0].cause,
            LossCause::Late
        );
    }
}
