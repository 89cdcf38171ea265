use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::audit::{self, AuditInput};
use super::contention::{resolve_picks, NusOutcome};
use super::event::{EventKind, EventQueue, SlotKind, TimerKind, TxIntent};
use super::ledger::{FrameEnergy, MetricsLedger};
use super::pu::PuProcess;
use super::rng::{substream, Stream};
use super::trace::Trace;
use crate::energy::{required_tx_power, sample_point, SpatialModel};
use crate::mac::{heal_on_departure, negotiate_channel_switch, BoundaryAction, ChannelView, JoinDecision, MacConfig, NodeState, Phase, QueueEntry};
use crate::packet::{AckKind, Body, Destination, Packet};
use crate::registry::CusRegistry;
use crate::scenario::{Placement, Scenario, ScenarioError};
use crate::scheduler::{compute_ppsa, run_psa_rotated, Grant, SlotAllocation, SlotRequest};
use crate::time::Micros;
use crate::timing::{capacity_max_data_slots, capacity_max_users, FrameTiming};
use crate::types::{ChannelId, FlowId, NodeId};

/// Superframes a node waits between two channel-control attempts.
const NEGOTIATION_COOLDOWN: u64 = 20;

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub trace: bool,
    /// Keep every transmission in [`SimOutput::tx_log`].
    pub keep_tx_log: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxKind {
    NusControl,
    Control { position: usize },
    Data { slot: usize },
    Ack { slot: usize },
    ChannelControl { slot: usize },
    ChannelReply { slot: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxRecord {
    pub channel: ChannelId,
    pub frame: u64,
    pub node: NodeId,
    pub start: Micros,
    pub end: Micros,
    pub kind: TxKind,
    pub packet: Packet,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub ledger: MetricsLedger,
    pub trace: String,
    pub tx_log: Vec<TxRecord>,
}

/// Runs the scenario once with `seed` and returns its counters.
pub fn run(scenario: &Scenario, seed: u64) -> Result<MetricsLedger, ScenarioError> {
    Ok(run_with(scenario, seed, SimOptions::default())?.ledger)
}

pub fn run_with(scenario: &Scenario, seed: u64, opts: SimOptions) -> Result<SimOutput, ScenarioError> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario, seed, opts);
    engine.run();
    Ok(engine.finish())
}

/// A data segment in flight, remembered by the sender until acked.
#[derive(Debug, Clone, Copy)]
struct Segment {
    flow: FlowId,
    bytes: u32,
    last: bool,
    enqueue_time: Micros,
}

struct NodeRt {
    st: NodeState,
    pos: [f64; 3],
    rng: ChaCha8Rng,
    joined: bool,
    frame_joules: f64,
    inflight: Option<Segment>,
    last_negotiation: Option<u64>,
    /// Channel the node listened to from the start of the current frame.
    listening_since_boundary: Option<ChannelId>,
}

/// What happened during one idle superframe on a channel.
struct FrameRt {
    index: u64,
    start: Micros,
    users: usize,
    data_slots: usize,
    rotation: u64,
    cus_heard: Vec<Vec<(NodeId, SlotRequest)>>,
    nus_outcome: NusOutcome,
    nus_request: Option<SlotRequest>,
    allocs: Option<BTreeMap<NodeId, SlotAllocation>>,
    /// Sender of each data slot that carried a transmission.
    data_senders: Vec<Vec<NodeId>>,
    /// Data slots whose segment reached its destination.
    /// Receiver of each data slot that reached its destination.
    data_received: Vec<Option<NodeId>>,
    acked: Vec<bool>,
}

struct ChannelRt {
    pu: PuProcess,
    pu_horizon: Micros,
    boundaries: u64,
    idle_frames: u64,
    busy_frames: u64,
    cur: Option<FrameRt>,
    suppressed: Vec<(Micros, Micros)>,
}

struct Engine<'a> {
    sc: &'a Scenario,
    timing: FrameTiming,
    cfg: MacConfig,
    max_users: usize,
    end: Micros,
    now: Micros,
    queue: EventQueue,
    nodes: BTreeMap<NodeId, NodeRt>,
    channels: Vec<ChannelRt>,
    ledger: MetricsLedger,
    trace: Trace,
    tx_log: Vec<TxRecord>,
    segments: BTreeMap<usize, Segment>,
    keep_tx_log: bool,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, seed: u64, opts: SimOptions) -> Self {
        let timing = sc.timing;
        let max_users = capacity_max_users(&timing);
        let mut placement = substream(seed, Stream::Placement);
        let range = sc.radio.params.range_m;
        let mut nodes = BTreeMap::new();
        for id in sc.node_ids() {
            let pos = match sc.radio.placement {
                Placement::Center if id.0 == 1 => [0.0; 3],
                Placement::Center => sample_point(&mut placement, SpatialModel::Ball, range),
                Placement::Ball => sample_point(&mut placement, SpatialModel::Ball, range / 2.0),
            };
            let mut st = NodeState::new(id, sc.vacant_channels(id), max_users);
            st.phase = Phase::Departed;
            nodes.insert(
                id,
                NodeRt {
                    st,
                    pos,
                    rng: substream(seed, Stream::Contention(id)),
                    joined: false,
                    frame_joules: 0.0,
                    inflight: None,
                    last_negotiation: None,
                    listening_since_boundary: None,
                },
            );
        }
        let channels = sc
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let id = ChannelId(i as u16);
                ChannelRt {
                    pu: PuProcess::new(&c.pu, substream(seed, Stream::Pu(id))),
                    pu_horizon: Micros::ZERO,
                    boundaries: 0,
                    idle_frames: 0,
                    busy_frames: 0,
                    cur: None,
                    suppressed: Vec::new(),
                }
            })
            .collect();
        let mut e = Engine {
            sc,
            timing,
            cfg: sc.mac_config(),
            max_users,
            end: sc.sim_time,
            now: Micros::ZERO,
            queue: EventQueue::new(),
            nodes,
            channels,
            ledger: MetricsLedger::new(sc.flows.len(), sc.node_ids()),
            trace: if opts.trace { Trace::enabled() } else { Trace::disabled() },
            tx_log: Vec::new(),
            segments: BTreeMap::new(),
            keep_tx_log: opts.keep_tx_log,
        };
        e.ledger.sim_time = sc.sim_time;
        for id in sc.node_ids() {
            let spec = sc.node_spec(id);
            e.queue.push(spec.join, EventKind::TimerExpiry { node: id, timer: TimerKind::Join });
            if let Some(leave) = spec.leave {
                e.queue.push(leave, EventKind::TimerExpiry { node: id, timer: TimerKind::Leave });
            }
        }
        for i in 0..e.channels.len() {
            e.queue.push(Micros::ZERO, EventKind::SuperframeBoundary { channel: ChannelId(i as u16) });
        }
        for (i, f) in sc.flows.iter().enumerate() {
            if let Some(t) = f.arrival(0) {
                e.queue.push(t, EventKind::TrafficArrival { flow: FlowId(i as u16), k: 0 });
            }
            e.ledger.flows[i].bytes_offered = f.offered_bytes(sc.sim_time);
        }
        e
    }

    fn run(&mut self) {
        while let Some(t) = self.queue.peek_time() {
            if t >= self.end {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            match ev.kind {
                EventKind::PuStateChange { channel, busy } => {
                    self.trace.record(self.now, Some(channel), None, "pu", format_args!("{}", if busy { "busy" } else { "idle" }));
                }
                EventKind::PacketRxComplete { channel, tx } => self.on_rx_complete(channel, tx),
                EventKind::SuperframeBoundary { channel } => self.on_boundary(channel),
                EventKind::SlotBoundary { channel, frame, slot } => match slot {
                    SlotKind::Nus => self.on_nus(channel, frame),
                    SlotKind::Data(k) => self.on_data_slot(channel, frame, k),
                },
                EventKind::TrafficArrival { flow, k } => self.on_arrival(flow, k),
                EventKind::TimerExpiry { node, timer } => self.on_timer(node, timer),
                EventKind::PacketTx { channel, frame, node, intent } => self.on_tx(channel, frame, node, intent),
            }
        }
    }

    fn finish(mut self) -> SimOutput {
        let end = self.end;
        let mut pu_busy = Vec::new();
        let mut suppressed = Vec::new();
        for c in &mut self.channels {
            pu_busy.push(c.pu.busy_intervals(end));
            suppressed.push(c.suppressed.clone());
        }
        let input = AuditInput {
            tx_log: &self.tx_log,
            pu_busy: &pu_busy,
            suppressed: &suppressed,
            detection_latency: self.timing.superframe.max(self.timing.detect_interval),
        };
        self.ledger.violations.extend(audit::check_transmissions(&input));
        SimOutput {
            ledger: self.ledger,
            trace: self.trace.into_text(),
            tx_log: if self.keep_tx_log { self.tx_log } else { Vec::new() },
        }
    }

    fn violation(&mut self, msg: String) {
        self.trace.record(self.now, None, None, "violation", format_args!("{msg}"));
        self.ledger.violations.push(format!("t={}us: {msg}", self.now.0));
    }

    fn node_on(&self, id: NodeId, channel: ChannelId) -> bool {
        self.nodes
            .get(&id)
            .is_some_and(|n| n.joined && n.st.is_listening() && n.st.current_channel == channel)
    }

    /// Joined, listening nodes tuned to `channel`, ascending by id.
    fn listeners(&self, channel: ChannelId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.joined && n.st.is_listening() && n.st.current_channel == channel)
            .map(|(&id, _)| id)
            .collect()
    }

    fn on_arrival(&mut self, flow: FlowId, k: u64) {
        let f = &self.sc.flows[flow.0 as usize];
        if let Some(t) = f.arrival(k + 1) {
            if t < self.end {
                self.queue.push(t, EventKind::TrafficArrival { flow, k: k + 1 });
            }
        }
        let entry = QueueEntry {
            flow,
            dest: f.dst,
            data_type: f.data_type,
            size: f.packet_bytes,
            enqueue_time: self.now,
            enqueue_superframe: self.now.0 / self.timing.superframe.0,
            pi_override: f.pi_override,
        };
        let src = f.src;
        let cfg = self.cfg.clone();
        let node = self.nodes.get_mut(&src).expect("flow source exists");
        let kept = node.joined && node.st.is_listening() && node.st.enqueue(entry, &cfg);
        if !kept {
            self.ledger.flows[flow.0 as usize].packets_dropped += 1;
        }
    }

    fn on_timer(&mut self, id: NodeId, timer: TimerKind) {
        match timer {
            TimerKind::Join => {
                let n = self.nodes.get_mut(&id).expect("node exists");
                n.joined = true;
                n.st.phase = Phase::Scanning;
                let ch = n.st.current_channel;
                self.trace.record(self.now, Some(ch), Some(id), "join", format_args!("scanning"));
            }
            TimerKind::Leave => {
                let n = self.nodes.get_mut(&id).expect("node exists");
                let ch = n.st.current_channel;
                n.st.phase = Phase::Departed;
                n.inflight = None;
                let dropped: Vec<FlowId> = n.st.tx_queue.drain(..).map(|e| e.flow).collect();
                for f in dropped {
                    self.ledger.flows[f.0 as usize].packets_dropped += 1;
                }
                self.trace.record(self.now, Some(ch), Some(id), "leave", format_args!("departed"));
            }
            TimerKind::Wait => {
                let n = &self.nodes[&id];
                if n.st.is_listening() && n.st.wait_expired(self.now) {
                    let from = n.st.current_channel;
                    if let Some(next) = n.st.next_vacant_channel() {
                        self.switch_channel(id, next, "pu wait expired");
                    } else {
                        self.trace.record(self.now, Some(from), Some(id), "wait", format_args!("expired, no other channel"));
                        self.nodes.get_mut(&id).expect("node exists").st.wait_timer = None;
                    }
                }
            }
        }
    }

    fn switch_channel(&mut self, id: NodeId, to: ChannelId, why: &str) {
        let n = self.nodes.get_mut(&id).expect("node exists");
        let from = n.st.current_channel;
        n.st.move_to(to);
        n.inflight = None;
        n.listening_since_boundary = None;
        self.ledger.channel_switches += 1;
        self.trace.record(self.now, Some(from), Some(id), "switch", format_args!("to {to} ({why})"));
    }

    fn on_boundary(&mut self, ch: ChannelId) {
        let ci = ch.0 as usize;
        if let Some(frame) = self.channels[ci].cur.take() {
            self.finalize(ch, frame);
        }
        let s = self.now;
        let t = self.timing;
        let horizon = s + t.superframe.max(t.detect_interval);
        let c = &mut self.channels[ci];
        let index = c.boundaries;
        c.boundaries += 1;
        if horizon > c.pu_horizon {
            for change in c.pu.generate_until(horizon) {
                if change.time >= s {
                    self.queue.push(change.time, EventKind::PuStateChange { channel: ch, busy: change.busy });
                }
            }
            c.pu_horizon = horizon;
        }
        let busy = c.pu.busy_during(s, s + t.quiet);
        self.ledger.superframes += 1;

        let listeners = self.listeners(ch);
        let mut timers = Vec::new();
        let mut controls = Vec::new();
        for &id in &listeners {
            let n = self.nodes.get_mut(&id).expect("listener exists");
            n.listening_since_boundary = Some(ch);
            if !busy && n.st.phase == Phase::Scanning {
                n.st.phase = Phase::ObservingSuperframe;
            }
            let armed = n.st.wait_timer.is_some();
            match n.st.on_superframe_boundary(busy, s, &t) {
                BoundaryAction::Suppressed { .. } => {
                    if let (false, Some(deadline)) = (armed, n.st.wait_timer) {
                        timers.push((id, deadline));
                    }
                }
                BoundaryAction::Proceed { control_at } => {
                    if let (Phase::Registered(pos), Some(at)) = (n.st.phase, control_at) {
                        controls.push((id, pos, at));
                    }
                }
            }
        }
        for (id, deadline) in timers {
            self.queue.push(deadline, EventKind::TimerExpiry { node: id, timer: TimerKind::Wait });
        }

        let c = &mut self.channels[ci];
        if busy {
            c.busy_frames += 1;
            self.ledger.busy_superframes += 1;
            c.suppressed.push((s, s + t.detect_interval));
            self.trace.record(s, Some(ch), None, "superframe", format_args!("#{index} suppressed by pu"));
            self.queue.push(s + t.detect_interval, EventKind::SuperframeBoundary { channel: ch });
            return;
        }
        let rotation = c.idle_frames;
        c.idle_frames += 1;
        let users = listeners
            .iter()
            .filter(|id| self.nodes[id].st.phase != Phase::ObservingSuperframe)
            .map(|id| self.nodes[id].st.registry.len())
            .max()
            .unwrap_or(0);
        let data_slots = capacity_max_data_slots(&t, users);
        self.trace.record(
            s,
            Some(ch),
            None,
            "superframe",
            format_args!("#{index} users={users} data_slots={data_slots}"),
        );
        self.channels[ci].cur = Some(FrameRt {
            index,
            start: s,
            users,
            data_slots,
            rotation,
            cus_heard: vec![Vec::new(); users],
            nus_outcome: NusOutcome::NoContender,
            nus_request: None,
            allocs: None,
            data_senders: vec![Vec::new(); data_slots],
            data_received: vec![None; data_slots],
            acked: vec![false; data_slots],
        });
        for (id, pos, at) in controls {
            if pos < users {
                self.queue.push(at, EventKind::PacketTx { channel: ch, frame: index, node: id, intent: TxIntent::Control { position: pos } });
            } else {
                self.violation(format!("{id} holds control slot {pos} beyond the {users} in use on {ch}"));
            }
        }
        self.queue.push(s + t.nus_offset(), EventKind::SlotBoundary { channel: ch, frame: index, slot: SlotKind::Nus });
        for k in 0..data_slots {
            self.queue.push(
                s + t.data_slot_offset(users, k),
                EventKind::SlotBoundary { channel: ch, frame: index, slot: SlotKind::Data(k) },
            );
        }
        self.queue.push(s + t.superframe, EventKind::SuperframeBoundary { channel: ch });
    }

    fn current_frame(&self, ch: ChannelId, frame: u64) -> bool {
        self.channels[ch.0 as usize].cur.as_ref().is_some_and(|f| f.index == frame)
    }

    fn on_nus(&mut self, ch: ChannelId, frame: u64) {
        if !self.current_frame(ch, frame) {
            return;
        }
        let users = self.channels[ch.0 as usize].cur.as_ref().map_or(0, |f| f.users);
        if users >= self.max_users {
            return;
        }
        let mut picks = Vec::new();
        for id in self.listeners(ch) {
            let n = self.nodes.get_mut(&id).expect("listener exists");
            if n.st.phase == Phase::ContendingNUS && n.listening_since_boundary == Some(ch) {
                if let Some(sub) = n.st.nus_attempt(&mut n.rng) {
                    picks.push((id, sub));
                }
            }
        }
        let outcome = resolve_picks(&picks);
        let s = self.now;
        let tc = self.timing.control;
        let senders: Vec<(NodeId, u8)> = match &outcome {
            NusOutcome::NoContender => Vec::new(),
            NusOutcome::Winner { node, sub_slot } => vec![(*node, *sub_slot)],
            NusOutcome::Collision { nodes, sub_slot } => {
                self.ledger.nus_collisions += 1;
                nodes.iter().map(|&n| (n, *sub_slot)).collect()
            }
        };
        for (id, sub) in senders {
            self.queue.push(
                s + Micros(tc.0 * sub as u64),
                EventKind::PacketTx { channel: ch, frame, node: id, intent: TxIntent::NusControl },
            );
        }
        if let Some(f) = self.channels[ch.0 as usize].cur.as_mut() {
            f.nus_outcome = outcome;
        }
    }

    fn airtime(&self, kind: TxKind) -> Micros {
        match kind {
            TxKind::NusControl | TxKind::Control { .. } => self.timing.control,
            TxKind::Data { .. } | TxKind::ChannelControl { .. } => self.timing.data,
            TxKind::Ack { .. } | TxKind::ChannelReply { .. } => self.timing.ack,
        }
    }

    fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        let (pa, pb) = (self.nodes[&a].pos, self.nodes[&b].pos);
        pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    fn tx_power_mw(&self, from: NodeId, dest: Destination) -> f64 {
        let p = &self.sc.radio.params;
        match dest {
            Destination::Node(to) if self.sc.radio.power_control => required_tx_power(self.distance(from, to), p)
                .map_or(p.p_tx_max_mw, |w| w.clamp(1.0, p.p_tx_max_mw)),
            _ => p.p_tx_max_mw,
        }
    }

    /// Starts a transmission: logs it, charges energy and schedules its end.
    fn transmit(&mut self, ch: ChannelId, frame: u64, node: NodeId, kind: TxKind, mut packet: Packet, seg: Option<Segment>) {
        let dur = self.airtime(kind);
        let p_tx = self.tx_power_mw(node, packet.dest);
        packet.tx_power_mw = p_tx.round().clamp(1.0, u16::MAX as f64) as u16;
        let secs = dur.as_secs_f64();
        let p_rx = self.sc.radio.params.p_rx_mw;
        let power_control = self.sc.radio.power_control;
        let is_control = matches!(kind, TxKind::NusControl | TxKind::Control { .. });
        for id in self.listeners(ch) {
            let n = self.nodes.get_mut(&id).expect("listener exists");
            if id == node {
                let j = p_tx * 1e-3 * secs;
                n.frame_joules += j;
                self.ledger.node_mut(id).energy.tx_j += j;
            } else if n.st.phase != Phase::Scanning
                && (!power_control || is_control || packet.dest == Destination::Node(id))
            {
                let j = p_rx * 1e-3 * secs;
                n.frame_joules += j;
                self.ledger.node_mut(id).energy.rx_j += j;
            }
        }
        self.trace.record(self.now, Some(ch), Some(node), "tx", format_args!("{kind:?} {:?} {:.0}mW", packet.body, p_tx));
        let idx = self.tx_log.len();
        self.tx_log.push(TxRecord { channel: ch, frame, node, start: self.now, end: self.now + dur, kind, packet });
        if let Some(seg) = seg {
            self.segments.insert(idx, seg);
        }
        self.queue.push(self.now + dur, EventKind::PacketRxComplete { channel: ch, tx: idx });
    }

    fn on_tx(&mut self, ch: ChannelId, frame: u64, id: NodeId, intent: TxIntent) {
        if !self.current_frame(ch, frame) || !self.node_on(id, ch) {
            return;
        }
        let data_slots = self.channels[ch.0 as usize].cur.as_ref().map_or(0, |f| f.data_slots);
        let p_max = self.sc.radio.params.p_tx_max_mw as u16;
        let n = &self.nodes[&id];
        match intent {
            TxIntent::NusControl => {
                if n.st.phase != Phase::ContendingNUS {
                    return;
                }
                let pkt = n.st.build_control_packet(&self.cfg, &self.timing, self.now, data_slots, p_max);
                self.transmit(ch, frame, id, TxKind::NusControl, pkt, None);
            }
            TxIntent::Control { position } => {
                if n.st.phase != Phase::Registered(position) {
                    return;
                }
                let pkt = n.st.build_control_packet(&self.cfg, &self.timing, self.now, data_slots, p_max);
                self.transmit(ch, frame, id, TxKind::Control { position }, pkt, None);
            }
            TxIntent::Data { slot } => self.send_data(ch, frame, id, slot),
            TxIntent::Ack { slot, to } => {
                let pkt = Packet { source: id, dest: Destination::Node(to), tx_power_mw: p_max, body: Body::Ack(AckKind::Data) };
                self.transmit(ch, frame, id, TxKind::Ack { slot }, pkt, None);
            }
            TxIntent::ChannelReply { slot, to, selected } => {
                let pkt = Packet {
                    source: id,
                    dest: Destination::Node(to),
                    tx_power_mw: p_max,
                    body: Body::Ack(AckKind::ChannelControl { selected }),
                };
                self.transmit(ch, frame, id, TxKind::ChannelReply { slot }, pkt, None);
            }
        }
    }

    /// Counts an unacknowledged segment against the head packet.
    fn settle_failure(&mut self, id: NodeId) {
        let max_attempts = self.cfg.max_attempts;
        let n = self.nodes.get_mut(&id).expect("node exists");
        if n.inflight.take().is_none() {
            return;
        }
        n.st.head_failures += 1;
        if n.st.head_failures >= max_attempts {
            if let Some(e) = n.st.pop_head() {
                self.ledger.flows[e.flow.0 as usize].packets_dropped += 1;
                self.trace.record(self.now, Some(n.st.current_channel), Some(id), "drop", format_args!("{} after {max_attempts} attempts", e.flow));
            }
        }
    }

    fn wants_negotiation(&self, ch: ChannelId, frame: u64, id: NodeId) -> bool {
        let nodes = &self.sc.nodes;
        let users = self.channels[ch.0 as usize].cur.as_ref().map_or(0, |f| f.users);
        let n = &self.nodes[&id];
        nodes.negotiate
            && nodes.crowding_threshold > 0
            && users >= nodes.crowding_threshold
            && n.last_negotiation.is_none_or(|l| frame >= l + NEGOTIATION_COOLDOWN)
            && n.st.head_acked == 0
            && n.st.vacant.iter().any(|&c| c != ch)
    }

    fn send_data(&mut self, ch: ChannelId, frame: u64, id: NodeId, slot: usize) {
        self.settle_failure(id);
        let Some(head) = self.nodes[&id].st.tx_queue.front().cloned() else {
            return;
        };
        let p_max = self.sc.radio.params.p_tx_max_mw as u16;
        if self.wants_negotiation(ch, frame, id) {
            let n = self.nodes.get_mut(&id).expect("node exists");
            n.last_negotiation = Some(frame);
            let channels = n.st.vacant.iter().copied().filter(|&c| c != ch).collect();
            let pkt = Packet { source: id, dest: Destination::Node(head.dest), tx_power_mw: p_max, body: Body::ChannelControl { channels } };
            self.transmit(ch, frame, id, TxKind::ChannelControl { slot }, pkt, None);
            return;
        }
        let n = self.nodes.get_mut(&id).expect("node exists");
        let remaining = head.size - n.st.head_acked;
        let bytes = remaining.min(self.cfg.bytes_per_slot).min(u16::MAX as u32);
        let seg = Segment { flow: head.flow, bytes, last: bytes == remaining, enqueue_time: head.enqueue_time };
        n.inflight = Some(seg);
        let pkt = Packet { source: id, dest: Destination::Node(head.dest), tx_power_mw: p_max, body: Body::Data { payload_len: bytes as u16 } };
        self.transmit(ch, frame, id, TxKind::Data { slot }, pkt, Some(seg));
    }

    fn on_data_slot(&mut self, ch: ChannelId, frame: u64, slot: usize) {
        if !self.current_frame(ch, frame) {
            return;
        }
        self.ensure_allocs(ch);
        let f = self.channels[ch.0 as usize].cur.as_ref().expect("current frame");
        let owners: Vec<NodeId> = f
            .allocs
            .iter()
            .flatten()
            .filter(|(&id, a)| a.owner_of(slot) == Some(id))
            .map(|(&id, _)| id)
            .collect();
        for id in owners {
            if self.node_on(id, ch) {
                self.queue.push(self.now, EventKind::PacketTx { channel: ch, frame, node: id, intent: TxIntent::Data { slot } });
            }
        }
    }

    /// Requests heard this frame: one per uncontested control slot, plus
    /// the NUS winner's.
    fn heard_requests(f: &FrameRt) -> Vec<SlotRequest> {
        f.cus_heard
            .iter()
            .filter(|h| h.len() == 1)
            .map(|h| h[0].1)
            .chain(f.nus_request)
            .collect()
    }

    /// Every node that listened since the boundary runs the PSA on what it
    /// heard, using its own view of the previous allocation.
    fn ensure_allocs(&mut self, ch: ChannelId) {
        let ci = ch.0 as usize;
        let Some(f) = self.channels[ci].cur.as_ref() else {
            return;
        };
        if f.allocs.is_some() {
            return;
        }
        let heard = Self::heard_requests(f);
        let requesters: Vec<NodeId> = heard.iter().map(|r| r.node).collect();
        let mut allocs = BTreeMap::new();
        for id in self.listeners(ch) {
            let n = &self.nodes[&id];
            if n.listening_since_boundary != Some(ch) || n.st.phase == Phase::Scanning {
                continue;
            }
            let ppsa = compute_ppsa(n.st.prev_alloc.as_ref(), &requesters);
            let reqs: Vec<SlotRequest> = heard.iter().map(|r| SlotRequest { ppsa: ppsa[&r.node], ..*r }).collect();
            allocs.insert(id, run_psa_rotated(&reqs, f.data_slots, f.rotation));
        }
        let mut reference: Option<(NodeId, &SlotAllocation)> = None;
        let mut mismatches = Vec::new();
        for (&id, a) in allocs.iter().filter(|(id, _)| requesters.contains(id)) {
            match reference {
                None => reference = Some((id, a)),
                Some((r, ra)) if ra != a => mismatches.push(format!("allocation of {id} differs from {r} on {ch}")),
                Some(_) => {}
            }
        }
        for m in mismatches {
            self.violation(m);
        }
        if let Some(f) = self.channels[ci].cur.as_mut() {
            f.allocs = Some(allocs);
        }
    }

    fn on_rx_complete(&mut self, ch: ChannelId, tx: usize) {
        let seg = self.segments.remove(&tx);
        let rec = &self.tx_log[tx];
        let (frame, sender, kind) = (rec.frame, rec.node, rec.kind);
        let body = rec.packet.body.clone();
        let dest = rec.packet.dest;
        if !self.current_frame(ch, frame) {
            return;
        }
        let now = self.now;
        let f = self.channels[ch.0 as usize].cur.as_mut().expect("current frame");
        let request = |body: &Body| match *body {
            Body::Control { priority_index, slots_requested } => Some(SlotRequest {
                node: sender,
                pi: priority_index,
                slots_requested: slots_requested as usize,
                ppsa: 0,
            }),
            _ => None,
        };
        match kind {
            TxKind::NusControl => {
                if matches!(f.nus_outcome, NusOutcome::Winner { node, .. } if node == sender) {
                    f.nus_request = request(&body);
                }
            }
            TxKind::Control { position } => {
                if let Some(r) = request(&body) {
                    f.cus_heard[position].push((sender, r));
                }
            }
            TxKind::Data { slot } => {
                f.data_senders[slot].push(sender);
                let (Some(seg), Destination::Node(to)) = (seg, dest) else {
                    return;
                };
                if !self.node_on(to, ch) {
                    return;
                }
                let f = self.channels[ch.0 as usize].cur.as_mut().expect("current frame");
                f.data_received[slot] = Some(to);
                if seg.last {
                    let size = self.nodes[&sender].st.tx_queue.front().map_or(seg.bytes, |e| e.size);
                    let stats = &mut self.ledger.flows[seg.flow.0 as usize];
                    stats.bytes_delivered += size as u64;
                    stats.packets_delivered += 1;
                    stats.delay_sum += now - seg.enqueue_time;
                }
                self.queue.push(now, EventKind::PacketTx { channel: ch, frame, node: to, intent: TxIntent::Ack { slot, to: sender } });
            }
            TxKind::Ack { slot } => {
                f.acked[slot] = true;
                let Destination::Node(to) = dest else { return };
                let n = self.nodes.get_mut(&to).expect("node exists");
                if let Some(seg) = n.inflight.take() {
                    n.st.head_acked += seg.bytes;
                    n.st.head_failures = 0;
                    if n.st.tx_queue.front().is_some_and(|e| n.st.head_acked >= e.size) {
                        n.st.pop_head();
                    }
                }
            }
            TxKind::ChannelControl { slot } => {
                f.data_senders[slot].push(sender);
                let (Destination::Node(to), Body::ChannelControl { channels }) = (dest, body) else {
                    return;
                };
                if !self.node_on(to, ch) {
                    return;
                }
                let f = self.channels[ch.0 as usize].cur.as_mut().expect("current frame");
                f.data_received[slot] = Some(to);
                let b = &self.nodes[&to].st;
                let selected = negotiate_channel_switch(&channels, &b.vacant, &b.views);
                self.queue.push(
                    now,
                    EventKind::PacketTx { channel: ch, frame, node: to, intent: TxIntent::ChannelReply { slot, to: sender, selected } },
                );
            }
            TxKind::ChannelReply { slot } => {
                f.acked[slot] = true;
                let (Destination::Node(initiator), Body::Ack(AckKind::ChannelControl { selected: Some(target) })) = (dest, body)
                else {
                    return;
                };
                if self.node_on(initiator, ch) {
                    self.switch_channel(initiator, target, "negotiated");
                }
                self.switch_channel(sender, target, "negotiated");
                let deadline = now + self.timing.wait;
                self.nodes.get_mut(&sender).expect("node exists").st.phase =
                    Phase::SwitchingChannel { target, peer: initiator, deadline };
            }
        }
    }

    /// Allocation as seen on the air: contiguous runs of data slots that
    /// carried exactly one sender.
    fn observed_allocation(f: &FrameRt, requesters: &[NodeId]) -> SlotAllocation {
        let mut grants: Vec<Grant> = Vec::new();
        for (k, senders) in f.data_senders.iter().enumerate() {
            let [node] = senders[..] else { continue };
            match grants.last_mut() {
                Some(g) if g.node == node && g.first_slot + g.n_slots == k => g.n_slots += 1,
                _ => grants.push(Grant { node, first_slot: k, n_slots: 1 }),
            }
        }
        let mut denied: Vec<NodeId> = requesters.iter().copied().filter(|r| !grants.iter().any(|g| g.node == *r)).collect();
        denied.sort();
        SlotAllocation { grants, denied }
    }

    fn finalize(&mut self, ch: ChannelId, f: FrameRt) {
        let ci = ch.0 as usize;
        self.channels[ci].cur = Some(f);
        self.ensure_allocs(ch);
        let f = self.channels[ci].cur.take().expect("just stored");
        let listeners = self.listeners(ch);
        for &id in &listeners {
            self.settle_failure(id);
        }

        let mut heard = Vec::new();
        for (pos, h) in f.cus_heard.iter().enumerate() {
            match h.len() {
                0 => {}
                1 => heard.push(h[0].0),
                _ => self.violation(format!("control slot {pos} on {ch} carried {} senders", h.len())),
            }
        }
        let winner = match f.nus_outcome {
            NusOutcome::Winner { node, .. } if f.nus_request.is_some() => Some(node),
            _ => None,
        };
        let colliders: Vec<NodeId> = match &f.nus_outcome {
            NusOutcome::Collision { nodes, .. } => nodes.clone(),
            _ => Vec::new(),
        };
        let requests = Self::heard_requests(&f);
        let requesters: Vec<NodeId> = requests.iter().map(|r| r.node).collect();
        let observed_alloc = Self::observed_allocation(&f, &requesters);
        let mut observed_members = heard.clone();
        observed_members.extend(winner);
        let observed = match CusRegistry::from_members(observed_members, self.max_users) {
            Ok(r) => r,
            Err(e) => {
                self.violation(format!("registry observed on {ch} is inconsistent: {e}"));
                CusRegistry::new(self.max_users)
            }
        };
        let c = &self.channels[ci];
        let pu_duty = c.busy_frames as f64 / c.boundaries.max(1) as f64;

        let mut full = Vec::new();
        let mut silent_before: Vec<NodeId> = Vec::new();
        for &id in &listeners {
            let cfg = &self.cfg;
            let n = self.nodes.get_mut(&id).expect("listener exists");
            if n.listening_since_boundary != Some(ch) {
                continue;
            }
            let silent: Vec<NodeId> = n.st.registry.members().iter().copied().filter(|m| !heard.contains(m)).collect();
            match n.st.phase {
                Phase::Registered(_) => {
                    let mut reg = heal_on_departure(&n.st.registry, &silent);
                    if let Some(w) = winner.filter(|w| !reg.contains(*w)) {
                        let _ = reg.append(w);
                    }
                    n.st.registry = reg;
                    silent_before.extend(silent);
                }
                Phase::ContendingNUS => {
                    n.st.registry = observed.clone();
                    if winner == Some(id) {
                        n.st.nus_collisions = 0;
                        self.ledger.nus_joins += 1;
                    } else if colliders.contains(&id) {
                        n.st.on_nus_collision(&mut n.rng);
                    }
                }
                Phase::ObservingSuperframe | Phase::SwitchingChannel { .. } => {
                    n.st.registry = observed.clone();
                    match n.st.after_observation(observed.len(), self.max_users, cfg) {
                        JoinDecision::Contend => n.st.phase = Phase::ContendingNUS,
                        JoinDecision::Listen => n.st.phase = Phase::Sleeping,
                        JoinDecision::ChannelFull => full.push(id),
                    }
                }
                Phase::Sleeping => {
                    n.st.registry = observed.clone();
                    n.st.wake();
                }
                Phase::Scanning | Phase::Departed => continue,
            }
            if matches!(n.st.phase, Phase::Registered(_) | Phase::ContendingNUS) {
                n.st.phase = match n.st.registry.position(id) {
                    Some(pos) => Phase::Registered(pos),
                    None if n.st.is_registered() => Phase::ObservingSuperframe,
                    None => Phase::ContendingNUS,
                };
            }
            if n.st.is_registered() && n.st.should_sleep(cfg) {
                n.st.sleep();
            }
            n.st.prev_alloc = Some(observed_alloc.clone());
            n.st.views.insert(ch, ChannelView { users: n.st.registry.len(), pu_duty });
        }

        self.ledger.user_frames += f.users as u64;
        if let Some(alloc) = f.allocs.as_ref().and_then(|a| requesters.iter().find_map(|r| a.get(r))) {
            for g in &alloc.grants {
                self.ledger.node_mut(g.node).slots_granted += g.n_slots as u64;
            }
            for &d in &alloc.denied {
                self.ledger.node_mut(d).frames_denied += 1;
            }
        }
        for &id in &listeners {
            let n = self.nodes.get_mut(&id).expect("listener exists");
            if n.frame_joules > 0.0 {
                self.ledger.frame_energy.push(FrameEnergy {
                    channel: ch,
                    frame: f.index,
                    start: f.start,
                    node: id,
                    joules: n.frame_joules,
                    users: f.users,
                });
                n.frame_joules = 0.0;
            }
        }
        self.audit_frame(ch, &f, &silent_before);
        for id in full {
            match self.nodes[&id].st.next_vacant_channel() {
                Some(next) => self.switch_channel(id, next, "channel full"),
                None => self.nodes.get_mut(&id).expect("node exists").st.phase = Phase::Sleeping,
            }
        }
    }

    fn audit_frame(&mut self, ch: ChannelId, f: &FrameRt, silent: &[NodeId]) {
        let mut found = Vec::new();
        for (k, senders) in f.data_senders.iter().enumerate() {
            if senders.len() > 1 {
                found.push(format!("data slot {k} of frame {} on {ch} used by {senders:?}", f.index));
            }
            // a receiver that departed before its ack slot cannot answer
            let receiver_left = |r: NodeId| self.nodes[&r].st.phase == Phase::Departed;
            if f.data_received[k].is_some_and(|r| !receiver_left(r)) && !f.acked[k] {
                found.push(format!("data slot {k} of frame {} on {ch} received without an ack", f.index));
            }
        }
        let registered: Vec<(NodeId, usize)> = self
            .listeners(ch)
            .into_iter()
            .filter_map(|id| match self.nodes[&id].st.phase {
                Phase::Registered(pos) => Some((id, pos)),
                _ => None,
            })
            .collect();
        if let Some(&(first, _)) = registered.first() {
            let reference = self.nodes[&first].st.registry.members().to_vec();
            for &(id, pos) in &registered {
                let reg = &self.nodes[&id].st.registry;
                if reg.members() != reference.as_slice() {
                    found.push(format!("registry of {id} on {ch} is {:?}, {first} has {reference:?}", reg.members()));
                }
                if reg.position(id) != Some(pos) {
                    found.push(format!("{id} holds control slot {pos} but its registry says {:?}", reg.position(id)));
                }
            }
            for s in silent {
                if reference.contains(s) {
                    found.push(format!("silent {s} still registered on {ch} after frame {}", f.index));
                }
            }
        }
        for v in found {
            self.violation(v);
        }
    }
}
