//! Per-node protocol state and the decisions a node takes on its own.
//!
//! The simulation kernel owns every [`NodeState`] and calls into these
//! functions when the relevant event fires; nothing here touches other
//! nodes directly.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use crate::packet::{Body, Destination, Packet};
use crate::priority::{priority_index, PriorityInputs};
use crate::registry::CusRegistry;
use crate::scheduler::SlotAllocation;
use crate::time::Micros;
use crate::timing::FrameTiming;
use crate::types::{ChannelId, DataType, FlowId, NodeId};

/// Whether a node holds a control slot when it has nothing to send.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Participation {
    /// Register only while data is queued; otherwise listen passively.
    #[default]
    OnDemand,
    /// Register as soon as possible and never sleep.
    Always,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacConfig {
    /// Payload bytes carried by one data slot.
    pub bytes_per_slot: u32,
    /// Drop-tail limit of the transmit queue, in packets.
    pub queue_limit: usize,
    /// Consecutive empty-queue superframes before sleeping; 0 disables sleep.
    pub sleep_after: u32,
    pub participation: Participation,
    /// Unacknowledged segment transmissions tolerated before dropping a packet.
    pub max_attempts: u32,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            bytes_per_slot: 1000,
            queue_limit: 100,
            sleep_after: 3,
            participation: Participation::OnDemand,
            max_attempts: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Tuned to a channel, waiting for its next superframe boundary.
    Scanning,
    /// Listening to one full superframe before contending.
    ObservingSuperframe,
    ContendingNUS,
    Registered(usize),
    /// Holds no control slot but still receives everything.
    Sleeping,
    /// Moved to `target` after a channel-control exchange; joins once the
    /// initiating peer is heard or `deadline` passes.
    SwitchingChannel { target: ChannelId, peer: NodeId, deadline: Micros },
    Departed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub flow: FlowId,
    pub dest: NodeId,
    pub data_type: DataType,
    pub size: u32,
    pub enqueue_time: Micros,
    pub enqueue_superframe: u64,
    pub pi_override: Option<u8>,
}

/// What a node last saw of a channel, used when choosing where to move.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelView {
    pub users: usize,
    pub pu_duty: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundaryAction {
    /// Primary user detected: stay silent and sense again at `next_sense`.
    Suppressed { next_sense: Micros },
    /// Channel idle; `control_at` is this node's CUS start if it holds one.
    Proceed { control_at: Option<Micros> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinDecision {
    Contend,
    Listen,
    /// Channel already holds the maximum number of users.
    ChannelFull,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub phase: Phase,
    pub current_channel: ChannelId,
    pub registry: CusRegistry,
    pub tx_queue: VecDeque<QueueEntry>,
    /// Deadline after which a PU-blocked channel is abandoned.
    pub wait_timer: Option<Micros>,
    pub vacant: Vec<ChannelId>,
    /// Allocation this node computed in the last idle superframe.
    pub prev_alloc: Option<SlotAllocation>,
    pub idle_frames: u32,
    /// Bytes of the head packet already acknowledged.
    pub head_acked: u32,
    pub head_failures: u32,
    /// Superframes to sit out before the next NUS attempt.
    pub nus_skip: u32,
    pub nus_collisions: u32,
    pub views: BTreeMap<ChannelId, ChannelView>,
}

impl NodeState {
    pub fn new(id: NodeId, vacant: Vec<ChannelId>, max_users: usize) -> Self {
        let current_channel = vacant.first().copied().unwrap_or(ChannelId(0));
        NodeState {
            id,
            phase: Phase::Scanning,
            current_channel,
            registry: CusRegistry::new(max_users),
            tx_queue: VecDeque::new(),
            wait_timer: None,
            vacant,
            prev_alloc: None,
            idle_frames: 0,
            head_acked: 0,
            head_failures: 0,
            nus_skip: 0,
            nus_collisions: 0,
            views: BTreeMap::new(),
        }
    }

    /// Receives on its current channel.
    pub fn is_listening(&self) -> bool {
        !matches!(self.phase, Phase::Departed)
    }

    pub fn is_registered(&self) -> bool {
        matches!(self.phase, Phase::Registered(_))
    }

    pub fn has_data(&self) -> bool {
        !self.tx_queue.is_empty()
    }

    /// Appends a packet unless the queue is full; returns whether it was kept.
    pub fn enqueue(&mut self, entry: QueueEntry, cfg: &MacConfig) -> bool {
        if self.tx_queue.len() >= cfg.queue_limit {
            return false;
        }
        self.tx_queue.push_back(entry);
        true
    }

    /// Slots needed to drain the queue, capped at `max_slots`.
    pub fn slots_needed(&self, cfg: &MacConfig, max_slots: usize) -> usize {
        let r = cfg.bytes_per_slot.max(1) as usize;
        let mut total = 0usize;
        for (i, e) in self.tx_queue.iter().enumerate() {
            let remaining = if i == 0 {
                e.size - self.head_acked
            } else {
                e.size
            } as usize;
            total += remaining.div_ceil(r);
            if total >= max_slots {
                return max_slots;
            }
        }
        total
    }

    pub fn current_pi(&self, now: Micros, timing: &FrameTiming) -> u8 {
        let Some(head) = self.tx_queue.front() else {
            return 0;
        };
        if let Some(pi) = head.pi_override {
            return pi;
        }
        let current_superframe = now.0 / timing.superframe.0;
        priority_index(&PriorityInputs {
            data_type: head.data_type,
            queue_length: self.tx_queue.len(),
            head_delay: current_superframe.saturating_sub(head.enqueue_superframe),
        })
    }

    pub fn on_superframe_boundary(
        &mut self,
        sensed_pu_busy: bool,
        frame_start: Micros,
        timing: &FrameTiming,
    ) -> BoundaryAction {
        if sensed_pu_busy {
            if self.wait_timer.is_none() {
                self.wait_timer = Some(frame_start + timing.wait);
            }
            return BoundaryAction::Suppressed {
                next_sense: frame_start + timing.detect_interval,
            };
        }
        self.wait_timer = None;
        let control_at = match self.phase {
            Phase::Registered(i) => Some(frame_start + timing.cus_offset(i)),
            _ => None,
        };
        BoundaryAction::Proceed { control_at }
    }

    /// Whether the PU wait timer has run out at `now`.
    pub fn wait_expired(&self, now: Micros) -> bool {
        self.wait_timer.is_some_and(|d| now >= d)
    }

    /// Next channel after the current one in the vacant list, cyclically.
    pub fn next_vacant_channel(&self) -> Option<ChannelId> {
        if self.vacant.len() < 2 {
            return None;
        }
        let pos = self
            .vacant
            .iter()
            .position(|&c| c == self.current_channel)
            .map_or(0, |p| p + 1);
        Some(self.vacant[pos % self.vacant.len()])
    }

    /// Retunes to `channel` and starts over from scanning.
    pub fn move_to(&mut self, channel: ChannelId) {
        self.current_channel = channel;
        self.phase = Phase::Scanning;
        self.registry.clear();
        self.prev_alloc = None;
        self.wait_timer = None;
        self.idle_frames = 0;
        self.nus_skip = 0;
        self.nus_collisions = 0;
    }

    /// Decision after observing a full superframe with `observed_users` in it.
    pub fn after_observation(&self, observed_users: usize, max_users: usize, cfg: &MacConfig) -> JoinDecision {
        if observed_users >= max_users {
            JoinDecision::ChannelFull
        } else if self.has_data() || cfg.participation == Participation::Always {
            JoinDecision::Contend
        } else {
            JoinDecision::Listen
        }
    }

    /// This frame's NUS sub-slot pick, or `None` while backing off.
    pub fn nus_attempt<R: Rng>(&mut self, rng: &mut R) -> Option<u8> {
        if self.nus_skip > 0 {
            self.nus_skip -= 1;
            return None;
        }
        Some(rng.random_range(0..=1))
    }

    /// Binary exponential backoff over superframes after an NUS collision.
    pub fn on_nus_collision<R: Rng>(&mut self, rng: &mut R) {
        self.nus_collisions += 1;
        let window = 1u32 << self.nus_collisions.min(4);
        self.nus_skip = rng.random_range(0..window);
    }

    pub fn build_control_packet(
        &self,
        cfg: &MacConfig,
        timing: &FrameTiming,
        now: Micros,
        max_slots: usize,
        tx_power_mw: u16,
    ) -> Packet {
        Packet {
            source: self.id,
            dest: Destination::Broadcast,
            tx_power_mw,
            body: Body::Control {
                priority_index: self.current_pi(now, timing),
                slots_requested: self.slots_needed(cfg, max_slots).min(u16::MAX as usize) as u16,
            },
        }
    }

    /// Updates the idle counter at the end of a superframe and reports
    /// whether the node should now go to sleep.
    pub fn should_sleep(&mut self, cfg: &MacConfig) -> bool {
        if self.has_data() {
            self.idle_frames = 0;
            return false;
        }
        self.idle_frames += 1;
        cfg.participation == Participation::OnDemand
            && cfg.sleep_after > 0
            && self.idle_frames >= cfg.sleep_after
            && self.is_registered()
    }

    pub fn sleep(&mut self) {
        self.phase = Phase::Sleeping;
        self.idle_frames = 0;
    }

    /// A sleeping node with queued data goes back to the NUS.
    pub fn wake(&mut self) -> bool {
        if self.phase == Phase::Sleeping && self.has_data() {
            self.phase = Phase::ContendingNUS;
            self.nus_skip = 0;
            self.nus_collisions = 0;
            true
        } else {
            false
        }
    }

    /// Drops the head packet and resets its segment state.
    pub fn pop_head(&mut self) -> Option<QueueEntry> {
        self.head_acked = 0;
        self.head_failures = 0;
        self.tx_queue.pop_front()
    }
}

/// Removes silent members; survivors keep their relative order.
pub fn heal_on_departure(registry: &CusRegistry, silent: &[NodeId]) -> CusRegistry {
    let mut next = registry.clone();
    next.heal(silent);
    next
}

/// Channel the responder picks from the initiator's list: the common
/// channel with the fewest users, then the lowest PU duty, then lowest id.
pub fn negotiate_channel_switch(
    a_vacant: &[ChannelId],
    b_vacant: &[ChannelId],
    b_views: &BTreeMap<ChannelId, ChannelView>,
) -> Option<ChannelId> {
    a_vacant
        .iter()
        .filter(|c| b_vacant.contains(c))
        .map(|&c| (c, b_views.get(&c).copied().unwrap_or_default()))
        .min_by(|(ca, va), (cb, vb)| {
            va.users
                .cmp(&vb.users)
                .then(va.pu_duty.total_cmp(&vb.pu_duty))
                .then(ca.cmp(cb))
        })
        .map(|(c, _)| c)
}
