//! Scenario descriptions: the three built-in two-subnet layouts and a strict
//! JSON loader.
//!
//! A scenario file is a JSON object with a mandatory `"schema": 1`. Every
//! other key is optional and overrides the built-in named by `"base"`
//! (`wifi_wifi` when absent). Nested objects override field by field. A
//! `subnets` array replaces the base list; each entry needs `name` and `mac`
//! and takes its remaining fields from the defaults for that MAC. Unknown
//! keys are rejected at every level.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::des::SimDuration;
use crate::metrics::{EModelParams, MosMode};
use crate::topology::{CloudLinkParams, MacKind};
use crate::voip::{CallProfile, CodecConfig};
use crate::wifi::WifiPhyParams;
use crate::wimax::WimaxPhyParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SubnetPhy {
    Wifi(WifiPhyParams),
    Wimax(WimaxPhyParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSubnet", into = "RawSubnet")]
pub struct SubnetSpec {
    pub name: String,
    pub station_count: usize,
    pub phy: SubnetPhy,
}

/// On-disk form of a subnet: the `phy` object is read according to `mac`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubnet {
    name: String,
    mac: MacKind,
    station_count: usize,
    phy: Value,
}

impl TryFrom<RawSubnet> for SubnetSpec {
    type Error = String;
    fn try_from(raw: RawSubnet) -> Result<Self, String> {
        let phy = match raw.mac {
            MacKind::Wifi => {
                SubnetPhy::Wifi(serde_json::from_value(raw.phy).map_err(|e| e.to_string())?)
            }
            MacKind::Wimax => {
                SubnetPhy::Wimax(serde_json::from_value(raw.phy).map_err(|e| e.to_string())?)
            }
        };
        Ok(SubnetSpec {
            name: raw.name,
            station_count: raw.station_count,
            phy,
        })
    }
}

impl From<SubnetSpec> for RawSubnet {
    fn from(s: SubnetSpec) -> Self {
        let mac = s.mac_kind();
        let phy = match &s.phy {
            SubnetPhy::Wifi(p) => serde_json::to_value(p),
            SubnetPhy::Wimax(p) => serde_json::to_value(p),
        }
        .expect("phy params serialize");
        RawSubnet {
            name: s.name,
            mac,
            station_count: s.station_count,
            phy,
        }
    }
}

impl SubnetSpec {
    pub fn wifi(name: &str) -> Self {
        SubnetSpec {
            name: name.to_string(),
            station_count: 4,
            phy: SubnetPhy::Wifi(WifiPhyParams::default()),
        }
    }

    pub fn wimax(name: &str) -> Self {
        SubnetSpec {
            name: name.to_string(),
            station_count: 4,
            phy: SubnetPhy::Wimax(WimaxPhyParams::default()),
        }
    }

    pub fn mac_kind(&self) -> MacKind {
        match self.phy {
            SubnetPhy::Wifi(_) => MacKind::Wifi,
            SubnetPhy::Wimax(_) => MacKind::Wimax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub name: String,
    pub subnets: Vec<SubnetSpec>,
    pub cloud: CloudLinkParams,
    pub call_profile: CallProfile,
    pub codec: CodecConfig,
    pub duration_s: f64,
    pub seed: u64,
    pub bucket_width_s: f64,
    pub mos_mode: MosMode,
}

impl ScenarioConfig {
    pub fn duration(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.duration_s)
    }

    pub fn bucket_width(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.bucket_width_s)
    }

    pub fn emodel(&self) -> EModelParams {
        self.codec.name.emodel()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: String, reason: &str| ConfigError::Validation {
            field,
            reason: reason.to_string(),
        };
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema".into(), "unsupported schema version"));
        }
        if self.subnets.len() != 2 {
            return Err(invalid(
                "subnets".into(),
                "exactly two subnets are required",
            ));
        }
        if self.subnets[0].name == self.subnets[1].name {
            return Err(invalid(
                "subnets[1].name".into(),
                "subnet names must be distinct",
            ));
        }
        for (i, s) in self.subnets.iter().enumerate() {
            if s.station_count == 0 {
                return Err(invalid(
                    format!("subnets[{i}].station_count"),
                    "must be at least 1",
                ));
            }
            let phy_check = match &s.phy {
                SubnetPhy::Wifi(p) => p.validate(),
                SubnetPhy::Wimax(p) => p.validate(),
            };
            if let Err(field) = phy_check {
                return Err(invalid(format!("subnets[{i}].phy.{field}"), "out of range"));
            }
        }
        self.cloud
            .validate()
            .map_err(|f| invalid(format!("cloud.{f}"), "must be finite and non-negative"))?;
        self.call_profile
            .validate()
            .map_err(|f| invalid(format!("call_profile.{f}"), "out of range"))?;
        self.codec
            .validate()
            .map_err(|f| invalid(format!("codec.{f}"), "inconsistent codec parameters"))?;
        if self.call_profile.pairing == crate::voip::Pairing::CrossMac
            && self.subnets[0].mac_kind() == self.subnets[1].mac_kind()
        {
            return Err(invalid(
                "call_profile.pairing".into(),
                "cross_mac pairing needs subnets of different MAC kinds",
            ));
        }
        // Every call holds an uplink and a downlink grant at each WiMAX endpoint.
        let grant_bytes = self
            .codec
            .packet_bytes()
            .max(crate::voip::SIP_MESSAGE_BYTES);
        for (i, s) in self.subnets.iter().enumerate() {
            if let SubnetPhy::Wimax(p) = &s.phy {
                let capacity = p.grants_per_frame(grant_bytes);
                let worst =
                    2 * s.station_count as u64 * u64::from(self.call_profile.max_calls_per_station);
                if worst > capacity {
                    return Err(invalid(
                        "call_profile.max_calls_per_station".into(),
                        &format!(
                            "subnet {} could need {worst} UGS grants but its frame holds {capacity} (subnets[{i}])",
                            s.name
                        ),
                    ));
                }
            }
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(invalid(
                "duration_s".into(),
                "must be finite and non-negative",
            ));
        }
        if !(self.bucket_width_s.is_finite() && self.bucket_width() > SimDuration::ZERO) {
            return Err(invalid("bucket_width_s".into(), "must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parses scenario JSON text, filling omitted fields from the base built-in.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let root: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let Value::Object(mut overrides) = root else {
            return Err(ConfigError::Parse {
                line: 1,
                column: 1,
                message: "top level must be a JSON object".into(),
            });
        };
        match overrides.get("schema") {
            None => {
                return Err(ConfigError::Validation {
                    field: "schema".into(),
                    reason: "missing mandatory schema version".into(),
                })
            }
            Some(v) if v.as_u64() != Some(u64::from(SCHEMA_VERSION)) => {
                return Err(ConfigError::Validation {
                    field: "schema".into(),
                    reason: format!("unsupported schema version {v}"),
                })
            }
            Some(_) => {}
        }
        let base = match overrides.remove("base") {
            None => BuiltinScenario::WifiWifi,
            Some(Value::String(s)) => s.parse()?,
            Some(other) => {
                return Err(ConfigError::Validation {
                    field: "base".into(),
                    reason: format!("expected a scenario name, got {other}"),
                })
            }
        };
        if let Some(subnets) = overrides.get_mut("subnets") {
            expand_subnets(subnets)?;
        }
        let mut merged = serde_json::to_value(builtin(base)).expect("config serializes");
        merge(&mut merged, Value::Object(overrides));
        let cfg: ScenarioConfig =
            serde_json::from_value(merged).map_err(|e| structural_error(text, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}

/// Fills each subnet entry from the defaults of its MAC kind.
fn expand_subnets(subnets: &mut Value) -> Result<(), ConfigError> {
    let Value::Array(items) = subnets else {
        return Ok(());
    };
    for (i, item) in items.iter_mut().enumerate() {
        let mac = item.get("mac").and_then(Value::as_str).map(str::to_owned);
        let name = item
            .get("name")
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_owned();
        let defaults = match mac.as_deref() {
            Some("wifi") => SubnetSpec::wifi(&name),
            Some("wimax") => SubnetSpec::wimax(&name),
            _ => {
                return Err(ConfigError::Validation {
                    field: format!("subnets[{i}].mac"),
                    reason: "must be \"wifi\" or \"wimax\"".into(),
                })
            }
        };
        let mut full = serde_json::to_value(defaults).expect("subnet serializes");
        merge(&mut full, item.take());
        *item = full;
    }
    Ok(())
}

/// Recursively overlays `patch` onto `target`; arrays and scalars replace.
fn merge(target: &mut Value, patch: Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                match t.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        t.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

fn structural_error(text: &str, e: serde_json::Error) -> ConfigError {
    let message = e.to_string();
    if let Some(key) = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
    {
        let needle = format!("\"{key}\"");
        let line = text
            .lines()
            .position(|l| l.contains(&needle))
            .map_or(0, |i| i + 1);
        return ConfigError::UnknownKey {
            key: key.to_string(),
            line,
        };
    }
    ConfigError::Validation {
        field: "(structure)".into(),
        reason: message,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key {key:?} at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("unknown scenario {0:?} (expected wifi_wifi, wimax_wimax or wifi_wimax)")]
    UnknownScenario(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    /// Field named by a validation failure.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            ConfigError::UnknownKey { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinScenario {
    WifiWifi,
    WimaxWimax,
    WifiWimax,
}

impl BuiltinScenario {
    pub const ALL: [BuiltinScenario; 3] = [
        BuiltinScenario::WifiWifi,
        BuiltinScenario::WimaxWimax,
        BuiltinScenario::WifiWimax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinScenario::WifiWifi => "wifi_wifi",
            BuiltinScenario::WimaxWimax => "wimax_wimax",
            BuiltinScenario::WifiWimax => "wifi_wimax",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            BuiltinScenario::WifiWifi => "London + Manchester, 802.11 DCF, 4 mobile stations each",
            BuiltinScenario::WimaxWimax => {
                "Cambridge + Bradford, 802.16 UGS, 4 WiMAX workstations each"
            }
            BuiltinScenario::WifiWimax => {
                "Manchester (WiFi) + Cambridge (WiMAX), every call crosses technologies"
            }
        }
    }
}

impl fmt::Display for BuiltinScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinScenario {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinScenario::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| ConfigError::UnknownScenario(s.to_string()))
    }
}

/// The built-in scenario configuration.
pub fn builtin(which: BuiltinScenario) -> ScenarioConfig {
    let (subnets, pairing) = match which {
        BuiltinScenario::WifiWifi => (
            vec![SubnetSpec::wifi("London"), SubnetSpec::wifi("Manchester")],
            crate::voip::Pairing::Uniform,
        ),
        BuiltinScenario::WimaxWimax => (
            vec![
                SubnetSpec::wimax("Cambridge"),
                SubnetSpec::wimax("Bradford"),
            ],
            crate::voip::Pairing::Uniform,
        ),
        BuiltinScenario::WifiWimax => (
            vec![
                SubnetSpec::wifi("Manchester"),
                SubnetSpec::wimax("Cambridge"),
            ],
            crate::voip::Pairing::CrossMac,
        ),
    };
    ScenarioConfig {
        schema: SCHEMA_VERSION,
        name: which.name().to_string(),
        subnets,
        cloud: CloudLinkParams::default(),
        call_profile: CallProfile {
            pairing,
            ..CallProfile::default()
        },
        codec: CodecConfig::default(),
        duration_s: 3600.0,
        seed: 1,
        bucket_width_s: 60.0,
        mos_mode: MosMode::BucketAggregate,
    }
}

/// Looks a built-in up by name.
pub fn builtin_named(name: &str) -> Result<ScenarioConfig, ConfigError> {
    Ok(builtin(name.parse()?))
}
