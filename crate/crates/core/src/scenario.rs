//! Scenario files.
//!
//! A scenario is line-oriented text: `[section]` headers followed by
//! `key = value` lines. `#` starts a comment. Sections `[node]`, `[channel]`
//! and `[flow]` may repeat; every other section appears at most once and
//! every key is optional.
//!
//! ```text
//! [simulation]   mac = dsat|ccc, sim_time_ms, seed, replications, pu_cycle_ms
//! [timing]       superframe_ms, quiet_ms, control_ms, data_ms, ack_ms,
//!                wait_ms, detect_interval_ms
//! [radio]        bytes_per_slot, bandwidth_bps, p_tx_max_mw, p_rx_mw, gain_tx,
//!                gain_rx, wavelength_m, loss, range_m, friis = four_pi_squared|standard,
//!                placement = ball|center, power_control = true|false
//! [nodes]        count, queue_limit, participate = on_demand|always,
//!                sleep_after, max_attempts, negotiate = true|false,
//!                crowding_threshold
//! [node]         id, join_ms, leave_ms, vacant = 0,1,2
//! [channel]      pu = idle|scripted|markov, busy = 10-20,40-45 (ms),
//!                mean_on_ms, mean_off_ms
//! [flow]         src, dst, packet_bytes, interval_ms,
//!                data_type = text|realtime|control|safety, pi, start_ms, stop_ms
//! [sweep]        param = quiet_ms|superframe_ms|control_ms|data_ms|nodes|flows|pu_duty,
//!                values = 10,15,20
//! [ccc]          rts_bytes, cts_bytes, ack_bytes, sifs_us, difs_us, cw_min, cw_max
//! ```
//!
//! Nodes are numbered `1..=count`. Without any `[channel]` section the
//! scenario has a single channel free of primary users.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::energy::{FriisForm, RadioParams};
use crate::mac::{MacConfig, Participation};
use crate::sim::pu::PuActivityModel;
use crate::sim::traffic::TrafficSource;
use crate::time::Micros;
use crate::timing::FrameTiming;
use crate::types::{ChannelId, DataType, NodeId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MacKind {
    #[default]
    Dsat,
    Ccc,
}

/// How node positions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Uniform in a ball of radius `R/2`, so every pair is in range.
    #[default]
    Ball,
    /// Node 1 at the centre, all others uniform in the ball of radius `R`.
    Center,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioConfig {
    /// Payload bytes per data slot; derived from bandwidth when absent.
    pub bytes_per_slot: Option<u32>,
    pub bandwidth_bps: u64,
    pub params: RadioParams,
    pub placement: Placement,
    pub power_control: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodesConfig {
    pub count: usize,
    pub queue_limit: usize,
    pub participation: Participation,
    pub sleep_after: u32,
    pub max_attempts: u32,
    pub negotiate: bool,
    /// Registered users at or above which a node tries to move its flow
    /// elsewhere; 0 disables the check.
    pub crowding_threshold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub join: Micros,
    pub leave: Option<Micros>,
    pub vacant: Option<Vec<ChannelId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub pu: PuActivityModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    QuietMs,
    SuperframeMs,
    ControlMs,
    DataMs,
    Nodes,
    Flows,
    PuDuty,
}

impl SweepParam {
    pub const ALL: [SweepParam; 7] = [
        SweepParam::QuietMs,
        SweepParam::SuperframeMs,
        SweepParam::ControlMs,
        SweepParam::DataMs,
        SweepParam::Nodes,
        SweepParam::Flows,
        SweepParam::PuDuty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::QuietMs => "quiet_ms",
            SweepParam::SuperframeMs => "superframe_ms",
            SweepParam::ControlMs => "control_ms",
            SweepParam::DataMs => "data_ms",
            SweepParam::Nodes => "nodes",
            SweepParam::Flows => "flows",
            SweepParam::PuDuty => "pu_duty",
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SweepParam::ALL.iter().map(|p| p.as_str()).collect();
                format!("unknown sweep parameter `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<String>,
}

/// Handshake constants of the common-control-channel baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CccParams {
    pub rts_bytes: u32,
    pub cts_bytes: u32,
    pub ack_bytes: u32,
    pub sifs: Micros,
    pub difs: Micros,
    pub cw_min: u32,
    pub cw_max: u32,
}

impl Default for CccParams {
    fn default() -> Self {
        CccParams {
            rts_bytes: 20,
            cts_bytes: 14,
            ack_bytes: 14,
            sifs: Micros(10),
            difs: Micros(50),
            cw_min: 8,
            cw_max: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mac: MacKind,
    pub sim_time: Micros,
    pub seed: u64,
    pub replications: u32,
    /// On+off cycle length used by the `pu_duty` sweep.
    pub pu_cycle: Micros,
    pub timing: FrameTiming,
    pub radio: RadioConfig,
    pub nodes: NodesConfig,
    pub node_specs: Vec<NodeSpec>,
    pub channels: Vec<ChannelSpec>,
    pub flows: Vec<TrafficSource>,
    pub sweep: Option<Sweep>,
    pub ccc: CccParams,
}

impl Default for Scenario {
    fn default() -> Self {
        let superframe = Micros::from_ms(60);
        Scenario {
            mac: MacKind::Dsat,
            sim_time: Micros::from_ms(10_000),
            seed: 1,
            replications: 5,
            pu_cycle: Micros::from_ms(100),
            timing: FrameTiming {
                superframe,
                quiet: Micros::from_ms(20),
                control: Micros::from_ms(1),
                data: Micros::from_ms(1),
                ack: Micros(500),
                wait: superframe * 3,
                detect_interval: superframe,
            },
            radio: RadioConfig {
                bytes_per_slot: None,
                bandwidth_bps: 1_000_000,
                params: RadioParams::default(),
                placement: Placement::Ball,
                power_control: false,
            },
            nodes: NodesConfig {
                count: 2,
                queue_limit: 100,
                participation: Participation::OnDemand,
                sleep_after: 3,
                max_attempts: 8,
                negotiate: false,
                crowding_threshold: 0,
            },
            node_specs: Vec::new(),
            channels: vec![ChannelSpec {
                pu: PuActivityModel::AlwaysIdle,
            }],
            flows: Vec::new(),
            sweep: None,
            ccc: CccParams::default(),
        }
    }
}

impl Scenario {
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.nodes.count as u16).map(NodeId)
    }

    pub fn node_spec(&self, id: NodeId) -> NodeSpec {
        self.node_specs
            .iter()
            .find(|s| s.id == id)
            .cloned()
            .unwrap_or(NodeSpec {
                id,
                join: Micros::ZERO,
                leave: None,
                vacant: None,
            })
    }

    /// Channels a node may use, in preference order.
    pub fn vacant_channels(&self, id: NodeId) -> Vec<ChannelId> {
        self.node_spec(id)
            .vacant
            .unwrap_or_else(|| (0..self.channels.len() as u16).map(ChannelId).collect())
    }

    pub fn bytes_per_slot(&self) -> u32 {
        self.radio.bytes_per_slot.unwrap_or_else(|| {
            let bits = self.radio.bandwidth_bps as u128 * self.timing.data.0 as u128 / 1_000_000;
            ((bits / 8) as u32).max(1)
        })
    }

    pub fn mac_config(&self) -> MacConfig {
        MacConfig {
            bytes_per_slot: self.bytes_per_slot(),
            queue_limit: self.nodes.queue_limit,
            sleep_after: self.nodes.sleep_after,
            participation: self.nodes.participation,
            max_attempts: self.nodes.max_attempts,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.timing.validate().map_err(|e| invalid(e.to_string()))?;
        self.radio.params.validate().map_err(|e| invalid(e.to_string()))?;
        if self.sim_time.0 == 0 {
            return Err(invalid("sim_time_ms must be positive"));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1"));
        }
        if self.pu_cycle.0 == 0 {
            return Err(invalid("pu_cycle_ms must be positive"));
        }
        if self.nodes.count == 0 || self.nodes.count >= 0xFFFF {
            return Err(invalid("node count must be in 1..65535"));
        }
        if self.nodes.queue_limit == 0 {
            return Err(invalid("queue_limit must be positive"));
        }
        if self.nodes.max_attempts == 0 {
            return Err(invalid("max_attempts must be positive"));
        }
        if self.radio.bandwidth_bps == 0 {
            return Err(invalid("bandwidth_bps must be positive"));
        }
        if self.channels.is_empty() {
            return Err(invalid("at least one channel is required"));
        }
        if self.channels.len() >= 0xFFFF {
            return Err(invalid("too many channels"));
        }
        for (i, c) in self.channels.iter().enumerate() {
            c.pu.validate().map_err(|e| invalid(format!("channel {i}: {e}")))?;
        }
        let exists = |n: NodeId| n.0 >= 1 && (n.0 as usize) <= self.nodes.count;
        let mut seen = Vec::new();
        for s in &self.node_specs {
            if !exists(s.id) {
                return Err(invalid(format!("[node] id {} is not in 1..={}", s.id.0, self.nodes.count)));
            }
            if seen.contains(&s.id) {
                return Err(invalid(format!("[node] id {} appears twice", s.id.0)));
            }
            seen.push(s.id);
            if s.leave.is_some_and(|l| l <= s.join) {
                return Err(invalid(format!("node {} leaves before it joins", s.id.0)));
            }
            if let Some(v) = &s.vacant {
                if v.is_empty() {
                    return Err(invalid(format!("node {} has an empty vacant list", s.id.0)));
                }
                if let Some(c) = v.iter().find(|c| c.0 as usize >= self.channels.len()) {
                    return Err(invalid(format!("node {} lists unknown channel {}", s.id.0, c.0)));
                }
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            if !exists(f.src) || !exists(f.dst) {
                return Err(invalid(format!("flow {i} references a node outside 1..={}", self.nodes.count)));
            }
            if f.src == f.dst {
                return Err(invalid(format!("flow {i} sends to itself")));
            }
            if f.packet_bytes == 0 {
                return Err(invalid(format!("flow {i}: packet_bytes must be positive")));
            }
            if f.interval.0 == 0 {
                return Err(invalid(format!("flow {i}: interval_ms must be positive")));
            }
            if f.pi_override.is_some_and(|p| p > crate::priority::MAX_PI) {
                return Err(invalid(format!("flow {i}: pi must be in 0..=21")));
            }
            if f.stop.is_some_and(|s| s <= f.start) {
                return Err(invalid(format!("flow {i}: stop_ms must be after start_ms")));
            }
        }
        if self.mac == MacKind::Ccc {
            if self.channels.len() != 2 {
                return Err(invalid(format!(
                    "the ccc baseline needs exactly 2 channels (control and data), got {}",
                    self.channels.len()
                )));
            }
            let c = &self.ccc;
            if c.rts_bytes == 0 || c.cts_bytes == 0 || c.ack_bytes == 0 || c.cw_min == 0 || c.cw_max < c.cw_min {
                return Err(invalid("ccc handshake parameters out of range"));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep has no values"));
            }
            let mut base = self.clone();
            base.sweep = None;
            for v in &sweep.values {
                base.with_sweep_value(sweep.param, v)?;
            }
        }
        Ok(())
    }

    /// This scenario with one sweep parameter set to `value`, validated.
    pub fn with_sweep_value(&self, param: SweepParam, value: &str) -> Result<Scenario, ScenarioError> {
        let mut s = self.clone();
        s.sweep = None;
        let bad = |e: String| invalid(format!("sweep value `{value}` for {}: {e}", param.as_str()));
        let ms = || Micros::parse_ms(value).map_err(|e| bad(e.to_string()));
        let count = || value.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
        match param {
            SweepParam::QuietMs => s.timing.quiet = ms()?,
            SweepParam::SuperframeMs => s.timing.superframe = ms()?,
            SweepParam::ControlMs => s.timing.control = ms()?,
            SweepParam::DataMs => s.timing.data = ms()?,
            SweepParam::Nodes => s.nodes.count = count()?,
            SweepParam::Flows => {
                let k = count()?;
                if k > s.flows.len() {
                    return Err(bad(format!("only {} flows defined", s.flows.len())));
                }
                s.flows.truncate(k);
            }
            SweepParam::PuDuty => {
                let d: f64 = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
                if !(0.0..=1.0).contains(&d) {
                    return Err(bad("duty must be in [0, 1]".into()));
                }
                let pu = pu_for_duty(d, s.pu_cycle);
                for c in &mut s.channels {
                    c.pu = pu.clone();
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    /// `(sweep value, scenario)` for every sweep point, or the scenario itself.
    pub fn sweep_points(&self) -> Result<Vec<(Option<String>, Scenario)>, ScenarioError> {
        match &self.sweep {
            None => Ok(vec![(None, self.clone())]),
            Some(sw) => sw
                .values
                .iter()
                .map(|v| Ok((Some(v.clone()), self.with_sweep_value(sw.param, v)?)))
                .collect(),
        }
    }
}

/// Markov PU with the given duty cycle over one `cycle`.
pub fn pu_for_duty(duty: f64, cycle: Micros) -> PuActivityModel {
    let on = (duty * cycle.0 as f64).round() as u64;
    if on == 0 {
        PuActivityModel::AlwaysIdle
    } else if on >= cycle.0 {
        PuActivityModel::Scripted(vec![(Micros::ZERO, Micros(u64::MAX / 4))])
    } else {
        PuActivityModel::TwoStateMarkov {
            mean_on: Micros(on),
            mean_off: Micros(cycle.0 - on),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Simulation,
    Timing,
    Radio,
    Nodes,
    Node,
    Channel,
    Flow,
    Sweep,
    Ccc,
}

struct ChannelDraft {
    line: usize,
    kind: Option<String>,
    busy: Option<Vec<(Micros, Micros)>>,
    mean_on: Option<Micros>,
    mean_off: Option<Micros>,
}

struct FlowDraft {
    line: usize,
    src: Option<NodeId>,
    dst: Option<NodeId>,
    flow: TrafficSource,
}

struct NodeDraft {
    line: usize,
    id: Option<NodeId>,
    spec: NodeSpec,
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ScenarioError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| ScenarioError::Parse {
        line,
        msg: format!("bad value `{v}` for `{key}`: {e}"),
    })
}

fn parse_ms(line: usize, key: &str, v: &str) -> Result<Micros, ScenarioError> {
    Micros::parse_ms(v).map_err(|e| ScenarioError::Parse {
        line,
        msg: format!("bad value for `{key}`: {e}"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ScenarioError> {
    match v {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(ScenarioError::Parse {
            line,
            msg: format!("bad value `{v}` for `{key}`: expected true or false"),
        }),
    }
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_busy(line: usize, v: &str) -> Result<Vec<(Micros, Micros)>, ScenarioError> {
    parse_list(v)
        .iter()
        .map(|r| {
            let (a, b) = r.split_once('-').ok_or_else(|| ScenarioError::Parse {
                line,
                msg: format!("busy range `{r}` must look like start-end"),
            })?;
            Ok((parse_ms(line, "busy", a.trim())?, parse_ms(line, "busy", b.trim())?))
        })
        .collect()
}

fn unknown_key(line: usize, section: &str, key: &str) -> ScenarioError {
    ScenarioError::Parse {
        line,
        msg: format!("unknown key `{key}` in [{section}]"),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut s = Scenario::default();
        s.channels.clear();
        let mut section = Section::None;
        let mut seen_sections: Vec<&str> = Vec::new();
        let mut wait: Option<Micros> = None;
        let mut detect: Option<Micros> = None;
        let mut channels: Vec<ChannelDraft> = Vec::new();
        let mut flows: Vec<FlowDraft> = Vec::new();
        let mut nodes: Vec<NodeDraft> = Vec::new();
        let mut sweep_param: Option<(usize, SweepParam)> = None;
        let mut sweep_values: Option<Vec<String>> = None;
        let mut sweep_line = 0;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let name = name.trim();
                section = match name {
                    "simulation" => Section::Simulation,
                    "timing" => Section::Timing,
                    "radio" => Section::Radio,
                    "nodes" => Section::Nodes,
                    "node" => Section::Node,
                    "channel" => Section::Channel,
                    "flow" => Section::Flow,
                    "sweep" => Section::Sweep,
                    "ccc" => Section::Ccc,
                    _ => {
                        return Err(ScenarioError::Parse {
                            line,
                            msg: format!("unknown section [{name}]"),
                        })
                    }
                };
                match section {
                    Section::Node => nodes.push(NodeDraft {
                        line,
                        id: None,
                        spec: NodeSpec {
                            id: NodeId(0),
                            join: Micros::ZERO,
                            leave: None,
                            vacant: None,
                        },
                    }),
                    Section::Channel => channels.push(ChannelDraft {
                        line,
                        kind: None,
                        busy: None,
                        mean_on: None,
                        mean_off: None,
                    }),
                    Section::Flow => flows.push(FlowDraft {
                        line,
                        src: None,
                        dst: None,
                        flow: TrafficSource {
                            src: NodeId(0),
                            dst: NodeId(0),
                            packet_bytes: 1000,
                            interval: Micros::from_ms(1),
                            data_type: DataType::TextFile,
                            pi_override: None,
                            start: Micros::ZERO,
                            stop: None,
                        },
                    }),
                    _ => {
                        if seen_sections.contains(&name) {
                            return Err(ScenarioError::Parse {
                                line,
                                msg: format!("section [{name}] appears twice"),
                            });
                        }
                        seen_sections.push(match section {
                            Section::Simulation => "simulation",
                            Section::Timing => "timing",
                            Section::Radio => "radio",
                            Section::Nodes => "nodes",
                            Section::Sweep => "sweep",
                            _ => "ccc",
                        });
                        if section == Section::Sweep {
                            sweep_line = line;
                        }
                    }
                }
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ScenarioError::Parse {
                    line,
                    msg: format!("expected `key = value`, got `{content}`"),
                });
            };
            let key = key.trim();
            let v = value.trim();
            match section {
                Section::None => {
                    return Err(ScenarioError::Parse {
                        line,
                        msg: "key outside of any section".into(),
                    })
                }
                Section::Simulation => match key {
                    "mac" => {
                        s.mac = match v {
                            "dsat" => MacKind::Dsat,
                            "ccc" => MacKind::Ccc,
                            _ => {
                                return Err(ScenarioError::Parse {
                                    line,
                                    msg: format!("bad mac `{v}`: expected dsat or ccc"),
                                })
                            }
                        }
                    }
                    "sim_time_ms" => s.sim_time = parse_ms(line, key, v)?,
                    "seed" => s.seed = parse_value(line, key, v)?,
                    "replications" => s.replications = parse_value(line, key, v)?,
                    "pu_cycle_ms" => s.pu_cycle = parse_ms(line, key, v)?,
                    _ => return Err(unknown_key(line, "simulation", key)),
                },
                Section::Timing => {
                    let t = parse_ms(line, key, v)?;
                    match key {
                        "superframe_ms" => s.timing.superframe = t,
                        "quiet_ms" => s.timing.quiet = t,
                        "control_ms" => s.timing.control = t,
                        "data_ms" => s.timing.data = t,
                        "ack_ms" => s.timing.ack = t,
                        "wait_ms" => wait = Some(t),
                        "detect_interval_ms" => detect = Some(t),
                        _ => return Err(unknown_key(line, "timing", key)),
                    }
                }
                Section::Radio => match key {
                    "bytes_per_slot" => s.radio.bytes_per_slot = Some(parse_value(line, key, v)?),
                    "bandwidth_bps" => s.radio.bandwidth_bps = parse_value(line, key, v)?,
                    "p_tx_max_mw" => s.radio.params.p_tx_max_mw = parse_value(line, key, v)?,
                    "p_rx_mw" => s.radio.params.p_rx_mw = parse_value(line, key, v)?,
                    "gain_tx" => s.radio.params.gain_tx = parse_value(line, key, v)?,
                    "gain_rx" => s.radio.params.gain_rx = parse_value(line, key, v)?,
                    "wavelength_m" => s.radio.params.wavelength_m = parse_value(line, key, v)?,
                    "loss" => s.radio.params.loss = parse_value(line, key, v)?,
                    "range_m" => s.radio.params.range_m = parse_value(line, key, v)?,
                    "friis" => {
                        s.radio.params.friis = match v {
                            "four_pi_squared" => FriisForm::FourPiSquared,
                            "standard" => FriisForm::Standard,
                            _ => {
                                return Err(ScenarioError::Parse {
                                    line,
                                    msg: format!("bad friis `{v}`: expected four_pi_squared or standard"),
                                })
                            }
                        }
                    }
                    "placement" => {
                        s.radio.placement = match v {
                            "ball" => Placement::Ball,
                            "center" => Placement::Center,
                            _ => {
                                return Err(ScenarioError::Parse {
                                    line,
                                    msg: format!("bad placement `{v}`: expected ball or center"),
                                })
                            }
                        }
                    }
                    "power_control" => s.radio.power_control = parse_bool(line, key, v)?,
                    _ => return Err(unknown_key(line, "radio", key)),
                },
                Section::Nodes => match key {
                    "count" => s.nodes.count = parse_value(line, key, v)?,
                    "queue_limit" => s.nodes.queue_limit = parse_value(line, key, v)?,
                    "participate" => {
                        s.nodes.participation = match v {
                            "on_demand" => Participation::OnDemand,
                            "always" => Participation::Always,
                            _ => {
                                return Err(ScenarioError::Parse {
                                    line,
                                    msg: format!("bad participate `{v}`: expected on_demand or always"),
                                })
                            }
                        }
                    }
                    "sleep_after" => s.nodes.sleep_after = parse_value(line, key, v)?,
                    "max_attempts" => s.nodes.max_attempts = parse_value(line, key, v)?,
                    "negotiate" => s.nodes.negotiate = parse_bool(line, key, v)?,
                    "crowding_threshold" => s.nodes.crowding_threshold = parse_value(line, key, v)?,
                    _ => return Err(unknown_key(line, "nodes", key)),
                },
                Section::Node => {
                    let d = nodes.last_mut().expect("inside [node]");
                    match key {
                        "id" => d.id = Some(NodeId(parse_value(line, key, v)?)),
                        "join_ms" => d.spec.join = parse_ms(line, key, v)?,
                        "leave_ms" => d.spec.leave = Some(parse_ms(line, key, v)?),
                        "vacant" => {
                            let list = parse_list(v)
                                .iter()
                                .map(|c| parse_value(line, key, c).map(ChannelId))
                                .collect::<Result<Vec<_>, _>>()?;
                            d.spec.vacant = Some(list);
                        }
                        _ => return Err(unknown_key(line, "node", key)),
                    }
                }
                Section::Channel => {
                    let d = channels.last_mut().expect("inside [channel]");
                    match key {
                        "pu" => d.kind = Some(v.to_string()),
                        "busy" => d.busy = Some(parse_busy(line, v)?),
                        "mean_on_ms" => d.mean_on = Some(parse_ms(line, key, v)?),
                        "mean_off_ms" => d.mean_off = Some(parse_ms(line, key, v)?),
                        _ => return Err(unknown_key(line, "channel", key)),
                    }
                }
                Section::Flow => {
                    let d = flows.last_mut().expect("inside [flow]");
                    match key {
                        "src" => d.src = Some(NodeId(parse_value(line, key, v)?)),
                        "dst" => d.dst = Some(NodeId(parse_value(line, key, v)?)),
                        "packet_bytes" => d.flow.packet_bytes = parse_value(line, key, v)?,
                        "interval_ms" => d.flow.interval = parse_ms(line, key, v)?,
                        "data_type" => d.flow.data_type = parse_value(line, key, v)?,
                        "pi" => d.flow.pi_override = Some(parse_value(line, key, v)?),
                        "start_ms" => d.flow.start = parse_ms(line, key, v)?,
                        "stop_ms" => d.flow.stop = Some(parse_ms(line, key, v)?),
                        _ => return Err(unknown_key(line, "flow", key)),
                    }
                }
                Section::Sweep => match key {
                    "param" => sweep_param = Some((line, parse_value(line, key, v)?)),
                    "values" => sweep_values = Some(parse_list(v)),
                    _ => return Err(unknown_key(line, "sweep", key)),
                },
                Section::Ccc => match key {
                    "rts_bytes" => s.ccc.rts_bytes = parse_value(line, key, v)?,
                    "cts_bytes" => s.ccc.cts_bytes = parse_value(line, key, v)?,
                    "ack_bytes" => s.ccc.ack_bytes = parse_value(line, key, v)?,
                    "sifs_us" => s.ccc.sifs = Micros(parse_value(line, key, v)?),
                    "difs_us" => s.ccc.difs = Micros(parse_value(line, key, v)?),
                    "cw_min" => s.ccc.cw_min = parse_value(line, key, v)?,
                    "cw_max" => s.ccc.cw_max = parse_value(line, key, v)?,
                    _ => return Err(unknown_key(line, "ccc", key)),
                },
            }
        }

        s.timing.wait = wait.unwrap_or(s.timing.superframe * 3);
        s.timing.detect_interval = detect.unwrap_or(s.timing.superframe);

        for d in nodes {
            let id = d.id.ok_or(ScenarioError::Parse {
                line: d.line,
                msg: "[node] needs an id".into(),
            })?;
            s.node_specs.push(NodeSpec { id, ..d.spec });
        }
        for d in channels {
            let need = |v: Option<Micros>, key: &str| {
                v.ok_or_else(|| ScenarioError::Parse {
                    line: d.line,
                    msg: format!("markov channel needs {key}"),
                })
            };
            let pu = match d.kind.as_deref().unwrap_or("idle") {
                "idle" => PuActivityModel::AlwaysIdle,
                "scripted" => PuActivityModel::Scripted(d.busy.clone().unwrap_or_default()),
                "markov" => PuActivityModel::TwoStateMarkov {
                    mean_on: need(d.mean_on, "mean_on_ms")?,
                    mean_off: need(d.mean_off, "mean_off_ms")?,
                },
                other => {
                    return Err(ScenarioError::Parse {
                        line: d.line,
                        msg: format!("bad pu `{other}`: expected idle, scripted or markov"),
                    })
                }
            };
            s.channels.push(ChannelSpec { pu });
        }
        if s.channels.is_empty() {
            s.channels.push(ChannelSpec {
                pu: PuActivityModel::AlwaysIdle,
            });
        }
        for d in flows {
            let (Some(src), Some(dst)) = (d.src, d.dst) else {
                return Err(ScenarioError::Parse {
                    line: d.line,
                    msg: "[flow] needs src and dst".into(),
                });
            };
            s.flows.push(TrafficSource { src, dst, ..d.flow });
        }
        match (sweep_param, sweep_values) {
            (None, None) => {}
            (Some((_, param)), Some(values)) => s.sweep = Some(Sweep { param, values }),
            _ => {
                return Err(ScenarioError::Parse {
                    line: sweep_line,
                    msg: "[sweep] needs both param and values".into(),
                })
            }
        }
        s.validate()?;
        Ok(s)
    }

    /// Writes the scenario back in the file format, with every field explicit.
    pub fn serialize(&self) -> String {
        let mut o = String::new();
        let t = &self.timing;
        let r = &self.radio;
        let p = &r.params;
        let n = &self.nodes;
        let _ = writeln!(o, "[simulation]");
        let _ = writeln!(
            o,
            "mac = {}",
            match self.mac {
                MacKind::Dsat => "dsat",
                MacKind::Ccc => "ccc",
            }
        );
        let _ = writeln!(o, "sim_time_ms = {}", self.sim_time);
        let _ = writeln!(o, "seed = {}", self.seed);
        let _ = writeln!(o, "replications = {}", self.replications);
        let _ = writeln!(o, "pu_cycle_ms = {}", self.pu_cycle);
        let _ = writeln!(o, "\n[timing]");
        let _ = writeln!(o, "superframe_ms = {}", t.superframe);
        let _ = writeln!(o, "quiet_ms = {}", t.quiet);
        let _ = writeln!(o, "control_ms = {}", t.control);
        let _ = writeln!(o, "data_ms = {}", t.data);
        let _ = writeln!(o, "ack_ms = {}", t.ack);
        let _ = writeln!(o, "wait_ms = {}", t.wait);
        let _ = writeln!(o, "detect_interval_ms = {}", t.detect_interval);
        let _ = writeln!(o, "\n[radio]");
        if let Some(b) = r.bytes_per_slot {
            let _ = writeln!(o, "bytes_per_slot = {b}");
        }
        let _ = writeln!(o, "bandwidth_bps = {}", r.bandwidth_bps);
        let _ = writeln!(o, "p_tx_max_mw = {}", p.p_tx_max_mw);
        let _ = writeln!(o, "p_rx_mw = {}", p.p_rx_mw);
        let _ = writeln!(o, "gain_tx = {}", p.gain_tx);
        let _ = writeln!(o, "gain_rx = {}", p.gain_rx);
        let _ = writeln!(o, "wavelength_m = {}", p.wavelength_m);
        let _ = writeln!(o, "loss = {}", p.loss);
        let _ = writeln!(o, "range_m = {}", p.range_m);
        let _ = writeln!(
            o,
            "friis = {}",
            match p.friis {
                FriisForm::FourPiSquared => "four_pi_squared",
                FriisForm::Standard => "standard",
            }
        );
        let _ = writeln!(
            o,
            "placement = {}",
            match r.placement {
                Placement::Ball => "ball",
                Placement::Center => "center",
            }
        );
        let _ = writeln!(o, "power_control = {}", r.power_control);
        let _ = writeln!(o, "\n[nodes]");
        let _ = writeln!(o, "count = {}", n.count);
        let _ = writeln!(o, "queue_limit = {}", n.queue_limit);
        let _ = writeln!(
            o,
            "participate = {}",
            match n.participation {
                Participation::OnDemand => "on_demand",
                Participation::Always => "always",
            }
        );
        let _ = writeln!(o, "sleep_after = {}", n.sleep_after);
        let _ = writeln!(o, "max_attempts = {}", n.max_attempts);
        let _ = writeln!(o, "negotiate = {}", n.negotiate);
        let _ = writeln!(o, "crowding_threshold = {}", n.crowding_threshold);
        for s in &self.node_specs {
            let _ = writeln!(o, "\n[node]");
            let _ = writeln!(o, "id = {}", s.id.0);
            let _ = writeln!(o, "join_ms = {}", s.join);
            if let Some(l) = s.leave {
                let _ = writeln!(o, "leave_ms = {l}");
            }
            if let Some(v) = &s.vacant {
                let list: Vec<_> = v.iter().map(|c| c.0.to_string()).collect();
                let _ = writeln!(o, "vacant = {}", list.join(", "));
            }
        }
        for c in &self.channels {
            let _ = writeln!(o, "\n[channel]");
            match &c.pu {
                PuActivityModel::AlwaysIdle => {
                    let _ = writeln!(o, "pu = idle");
                }
                PuActivityModel::Scripted(iv) => {
                    let list: Vec<_> = iv.iter().map(|(a, b)| format!("{a}-{b}")).collect();
                    let _ = writeln!(o, "pu = scripted");
                    let _ = writeln!(o, "busy = {}", list.join(", "));
                }
                PuActivityModel::TwoStateMarkov { mean_on, mean_off } => {
                    let _ = writeln!(o, "pu = markov");
                    let _ = writeln!(o, "mean_on_ms = {mean_on}");
                    let _ = writeln!(o, "mean_off_ms = {mean_off}");
                }
            }
        }
        for f in &self.flows {
            let _ = writeln!(o, "\n[flow]");
            let _ = writeln!(o, "src = {}", f.src.0);
            let _ = writeln!(o, "dst = {}", f.dst.0);
            let _ = writeln!(o, "packet_bytes = {}", f.packet_bytes);
            let _ = writeln!(o, "interval_ms = {}", f.interval);
            let _ = writeln!(o, "data_type = {}", f.data_type);
            if let Some(pi) = f.pi_override {
                let _ = writeln!(o, "pi = {pi}");
            }
            let _ = writeln!(o, "start_ms = {}", f.start);
            if let Some(stop) = f.stop {
                let _ = writeln!(o, "stop_ms = {stop}");
            }
        }
        if let Some(sw) = &self.sweep {
            let _ = writeln!(o, "\n[sweep]");
            let _ = writeln!(o, "param = {}", sw.param.as_str());
            let _ = writeln!(o, "values = {}", sw.values.join(", "));
        }
        let c = &self.ccc;
        let _ = writeln!(o, "\n[ccc]");
        let _ = writeln!(o, "rts_bytes = {}", c.rts_bytes);
        let _ = writeln!(o, "cts_bytes = {}", c.cts_bytes);
        let _ = writeln!(o, "ack_bytes = {}", c.ack_bytes);
        let _ = writeln!(o, "sifs_us = {}", c.sifs.0);
        let _ = writeln!(o, "difs_us = {}", c.difs.0);
        let _ = writeln!(o, "cw_min = {}", c.cw_min);
        let _ = writeln!(o, "cw_max = {}", c.cw_max);
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# two nodes, one flow
[simulation]
sim_time_ms = 2000
seed = 4

[timing]
superframe_ms = 65
quiet_ms = 20
control_ms = 1.5
data_ms = 2
ack_ms = 0.5

[nodes]
count = 4
participate = always

[node]
id = 3
join_ms = 500
leave_ms = 900
vacant = 1, 0

[channel]
pu = scripted
busy = 100-200, 300-310.5

[channel]
pu = markov
mean_on_ms = 5
mean_off_ms = 45

[flow]
src = 1
dst = 2
packet_bytes = 2000
interval_ms = 1
data_type = realtime
pi = 18

[sweep]
param = quiet_ms
values = 10, 15, 20
";

    #[test]
    fn parses_sample() {
        let s = Scenario::parse(SAMPLE).unwrap();
        assert_eq!(s.sim_time, Micros::from_ms(2000));
        assert_eq!(s.timing.control, Micros(1500));
        assert_eq!(s.timing.detect_interval, Micros::from_ms(65));
        assert_eq!(s.nodes.participation, Participation::Always);
        assert_eq!(s.channels.len(), 2);
        assert_eq!(s.flows[0].pi_override, Some(18));
        assert_eq!(s.flows[0].data_type, DataType::RealTimeAV);
        assert_eq!(s.vacant_channels(NodeId(3)), vec![ChannelId(1), ChannelId(0)]);
        assert_eq!(s.vacant_channels(NodeId(1)), vec![ChannelId(0), ChannelId(1)]);
        assert_eq!(s.sweep.as_ref().unwrap().values.len(), 3);
        // 1 Mbps over a 2 ms data slot
        assert_eq!(s.bytes_per_slot(), 250);
    }

    #[test]
    fn round_trip_is_identity() {
        let s = Scenario::parse(SAMPLE).unwrap();
        let again = Scenario::parse(&s.serialize()).unwrap();
        assert_eq!(again, s);
        let d = Scenario::parse("").unwrap();
        assert_eq!(Scenario::parse(&d.serialize()).unwrap(), d);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse("[timing]\nquiet_ms = abc\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 2, .. }), "{e}");
        let e = Scenario::parse("[timing]\n\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 4, .. }), "{e}");
        let e = Scenario::parse("[wat]\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 1, .. }));
        let e = Scenario::parse("[flow]\nsrc = 1\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 1, .. }));
    }

    #[test]
    fn validation_errors() {
        let e = Scenario::parse("[flow]\nsrc = 1\ndst = 9\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Invalid(_)));
        let e = Scenario::parse("[simulation]\nmac = ccc\n").unwrap_err();
        assert!(e.to_string().contains("exactly 2 channels"));
        let e = Scenario::parse("[sweep]\nparam = colour\nvalues = 1\n").unwrap_err();
        assert!(e.to_string().contains("unknown sweep parameter"));
        let e = Scenario::parse("[timing]\nquiet_ms = 70\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Invalid(_)));
    }

    #[test]
    fn sweep_application() {
        let s = Scenario::parse(SAMPLE).unwrap();
        let pts = s.sweep_points().unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1].1.timing.quiet, Micros::from_ms(15));
        assert!(pts[1].1.sweep.is_none());
        let d = s.with_sweep_value(SweepParam::PuDuty, "0.25").unwrap();
        assert_eq!(
            d.channels[0].pu,
            PuActivityModel::TwoStateMarkov {
                mean_on: Micros::from_ms(25),
                mean_off: Micros::from_ms(75)
            }
        );
        assert_eq!(s.with_sweep_value(SweepParam::PuDuty, "0").unwrap().channels[1].pu, PuActivityModel::AlwaysIdle);
        assert!(s.with_sweep_value(SweepParam::Flows, "2").is_err());
        assert_eq!(s.with_sweep_value(SweepParam::Flows, "0").unwrap().flows.len(), 0);
    }
}
