//! Static two-subnet topology: stations attach to their subnet's base
//! station, and the two base stations meet through an IP cloud.
//!
//! Each base station also hosts its subnet's SIP proxy, so signaling and
//! media follow the same static routes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::des::{RngStream, SimDuration, SimTime};
use crate::scenario::SubnetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacKind {
    Wifi,
    Wimax,
}

impl fmt::Display for MacKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MacKind::Wifi => "WiFi",
            MacKind::Wimax => "WiMAX",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Station,
    BaseStation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub role: NodeRole,
    pub subnet: usize,
    /// Position among the subnet's stations; `None` for the base station.
    pub station_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subnet {
    pub name: String,
    pub mac_kind: MacKind,
    pub base_station: NodeId,
    pub sip_proxy: NodeId,
    pub stations: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hop {
    Node(NodeId),
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    subnets: Vec<Subnet>,
}

impl Topology {
    pub fn new(specs: &[SubnetSpec]) -> Self {
        let mut nodes = Vec::new();
        let mut subnets = Vec::new();
        for (si, spec) in specs.iter().enumerate() {
            let bs = NodeId(nodes.len() as u32);
            nodes.push(Node {
                id: bs,
                role: NodeRole::BaseStation,
                subnet: si,
                station_index: None,
            });
            let stations = (0..spec.station_count)
                .map(|k| {
                    let id = NodeId(nodes.len() as u32);
                    nodes.push(Node {
                        id,
                        role: NodeRole::Station,
                        subnet: si,
                        station_index: Some(k),
                    });
                    id
                })
                .collect();
            subnets.push(Subnet {
                name: spec.name.clone(),
                mac_kind: spec.mac_kind(),
                base_station: bs,
                sip_proxy: bs,
                stations,
            });
        }
        Topology { nodes, subnets }
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, TopologyError> {
        self.nodes
            .get(id.0 as usize)
            .ok_or(TopologyError::UnknownNode(id))
    }

    pub fn subnets(&self) -> &[Subnet] {
        &self.subnets
    }

    pub fn subnet_of(&self, id: NodeId) -> Result<&Subnet, TopologyError> {
        Ok(&self.subnets[self.node(id)?.subnet])
    }

    /// Every end-user station, in subnet order.
    pub fn stations(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.role == NodeRole::Station)
    }

    pub fn mac_kind(&self, id: NodeId) -> Result<MacKind, TopologyError> {
        Ok(self.subnet_of(id)?.mac_kind)
    }

    /// Static hop list from `src` to `dst`, both endpoints included.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<Hop>, TopologyError> {
        let s = self.node(src)?;
        let d = self.node(dst)?;
        if src == dst {
            return Ok(Vec::new());
        }
        let bs_s = self.subnets[s.subnet].base_station;
        let bs_d = self.subnets[d.subnet].base_station;
        let mut hops = vec![Hop::Node(src)];
        if src != bs_s {
            hops.push(Hop::Node(bs_s));
        }
        if s.subnet != d.subnet {
            hops.push(Hop::Cloud);
            hops.push(Hop::Node(bs_d));
        }
        if dst != bs_d {
            hops.push(Hop::Node(dst));
        }
        Ok(hops)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudLinkParams {
    pub base_latency_ms: f64,
    /// Half-width of the uniform latency perturbation.
    pub latency_jitter_ms: f64,
}

impl Default for CloudLinkParams {
    fn default() -> Self {
        CloudLinkParams {
            base_latency_ms: 10.0,
            latency_jitter_ms: 0.0,
        }
    }
}

impl CloudLinkParams {
    pub fn base_latency(&self) -> SimDuration {
        SimDuration::from_millis_f64(self.base_latency_ms)
    }

    pub fn latency_jitter(&self) -> SimDuration {
        SimDuration::from_millis_f64(self.latency_jitter_ms)
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.base_latency_ms.is_finite() && self.base_latency_ms >= 0.0) {
            return Err("base_latency_ms");
        }
        if !(self.latency_jitter_ms.is_finite() && self.latency_jitter_ms >= 0.0) {
            return Err("latency_jitter_ms");
        }
        Ok(())
    }
}

/// The backbone between the two subnets, FIFO in each direction.
#[derive(Debug, Clone)]
pub struct CloudLink {
    base: SimDuration,
    jitter: SimDuration,
    last_arrival: [Option<SimTime>; 2],
}

impl CloudLink {
    pub fn new(params: &CloudLinkParams) -> Self {
        CloudLink {
            base: params.base_latency(),
            jitter: params.latency_jitter(),
            last_arrival: [None, None],
        }
    }

    /// Arrival time at the far base station for a packet entering the cloud
    /// at `ingress` from subnet `from_subnet`. Never earlier than the previous
    /// arrival in the same direction.
    pub fn transit(
        &mut self,
        ingress: SimTime,
        from_subnet: usize,
        rng: &mut RngStream,
    ) -> SimTime {
        let nominal = ingress.as_micros() as i64 + self.base.as_micros() as i64;
        let drawn = nominal + rng.symmetric_micros(self.jitter);
        let mut arrival = SimTime::from_micros(drawn.max(ingress.as_micros() as i64) as u64);
        let last = &mut self.last_arrival[from_subnet.min(1)];
        if let Some(prev) = *last {
            arrival = arrival.max(prev);
        }
        *last = Some(arrival);
        arrival
    }
}
