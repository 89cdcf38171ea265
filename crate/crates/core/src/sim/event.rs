//! Events and the deterministic event queue.
//!
//! Events are processed in `(time, kind rank, sequence number)` order, where
//! the sequence number is assigned on insertion. Two runs that insert the
//! same events in the same order therefore pop them in the same order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::time::Micros;
use crate::types::{ChannelId, FlowId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Nus,
    Data(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    Join,
    Leave,
    /// PU wait timer on the node's current channel.
    Wait,
}

/// What a scheduled transmission carries; the packet itself is built when
/// the transmission starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxIntent {
    NusControl,
    Control { position: usize },
    /// Data segment, or a channel-control packet when negotiating.
    Data { slot: usize },
    Ack { slot: usize, to: NodeId },
    ChannelReply { slot: usize, to: NodeId, selected: Option<ChannelId> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    PuStateChange { channel: ChannelId, busy: bool },
    PacketRxComplete { channel: ChannelId, tx: usize },
    SuperframeBoundary { channel: ChannelId },
    SlotBoundary { channel: ChannelId, frame: u64, slot: SlotKind },
    TrafficArrival { flow: FlowId, k: u64 },
    TimerExpiry { node: NodeId, timer: TimerKind },
    PacketTx { channel: ChannelId, frame: u64, node: NodeId, intent: TxIntent },
}

impl EventKind {
    /// Tie-break among events at the same instant.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::PuStateChange { .. } => 0,
            EventKind::PacketRxComplete { .. } => 1,
            EventKind::SuperframeBoundary { .. } => 2,
            EventKind::SlotBoundary { .. } => 3,
            EventKind::TrafficArrival { .. } => 4,
            EventKind::TimerExpiry { .. } => 5,
            EventKind::PacketTx { .. } => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: Micros,
    pub seq: u64,
    pub kind: EventKind,
}

impl Event {
    fn key(&self) -> (Micros, u8, u64) {
        (self.time, self.kind.rank(), self.seq)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed so the max-heap pops the earliest event
        other.key().cmp(&self.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: Micros, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<Micros> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
