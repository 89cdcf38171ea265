//! Counters accumulated by a simulation run.

use std::collections::BTreeMap;

use crate::time::Micros;
use crate::types::{ChannelId, NodeId};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowStats {
    pub bytes_offered: u64,
    pub bytes_delivered: u64,
    pub packets_delivered: u64,
    pub packets_dropped: u64,
    /// Sum of end-to-end delays of delivered packets.
    pub delay_sum: Micros,
}

impl FlowStats {
    pub fn mean_delay(&self) -> Option<f64> {
        (self.packets_delivered > 0).then(|| self.delay_sum.as_ms_f64() / self.packets_delivered as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeEnergy {
    pub tx_j: f64,
    pub rx_j: f64,
    pub idle_j: f64,
}

impl NodeEnergy {
    pub fn total(&self) -> f64 {
        self.tx_j + self.rx_j + self.idle_j
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeStats {
    pub energy: NodeEnergy,
    /// Data slots granted to the node.
    pub slots_granted: u64,
    /// Superframes in which the node requested slots and got none.
    pub frames_denied: u64,
}

/// Energy one node spent during one superframe of its channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEnergy {
    pub channel: ChannelId,
    pub frame: u64,
    pub start: Micros,
    pub node: NodeId,
    pub joules: f64,
    /// Users holding a control slot in that superframe.
    pub users: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLedger {
    pub sim_time: Micros,
    pub flows: Vec<FlowStats>,
    pub nodes: BTreeMap<NodeId, NodeStats>,
    /// Superframes started on all channels, busy or idle.
    pub superframes: u64,
    /// Superframes suppressed by primary-user activity.
    pub busy_superframes: u64,
    /// Sum over idle superframes of the number of registered users.
    pub user_frames: u64,
    pub nus_collisions: u64,
    pub nus_joins: u64,
    pub channel_switches: u64,
    /// Completed RTS/CTS handshakes (baseline only).
    pub handshakes: u64,
    /// Colliding control-channel transmissions (baseline only).
    pub control_collisions: u64,
    pub frame_energy: Vec<FrameEnergy>,
    pub violations: Vec<String>,
}

impl MetricsLedger {
    pub fn new(n_flows: usize, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        MetricsLedger {
            flows: vec![FlowStats::default(); n_flows],
            nodes: nodes.into_iter().map(|n| (n, NodeStats::default())).collect(),
            ..Default::default()
        }
    }

    pub fn node_mut(&mut self, n: NodeId) -> &mut NodeStats {
        self.nodes.entry(n).or_default()
    }

    /// Delivered bytes per second of simulated time, for one flow.
    pub fn flow_throughput(&self, flow: usize) -> f64 {
        let secs = self.sim_time.as_secs_f64();
        if secs == 0.0 {
            return 0.0;
        }
        self.flows[flow].bytes_delivered as f64 / secs
    }

    /// Delivered bytes per second over all flows.
    pub fn throughput(&self) -> f64 {
        (0..self.flows.len()).map(|f| self.flow_throughput(f)).sum()
    }

    pub fn bytes_delivered(&self) -> u64 {
        self.flows.iter().map(|f| f.bytes_delivered).sum()
    }

    pub fn packets_delivered(&self) -> u64 {
        self.flows.iter().map(|f| f.packets_delivered).sum()
    }

    pub fn packets_dropped(&self) -> u64 {
        self.flows.iter().map(|f| f.packets_dropped).sum()
    }

    /// Mean end-to-end delay in ms over all delivered packets.
    pub fn mean_delay_ms(&self) -> Option<f64> {
        let n = self.packets_delivered();
        let sum: u64 = self.flows.iter().map(|f| f.delay_sum.0).sum();
        (n > 0).then(|| sum as f64 * 1e-3 / n as f64)
    }

    /// Mean number of registered users per idle superframe.
    pub fn mean_users(&self) -> f64 {
        let idle = self.superframes - self.busy_superframes;
        if idle == 0 {
            0.0
        } else {
            self.user_frames as f64 / idle as f64
        }
    }

    pub fn slots_granted(&self) -> u64 {
        self.nodes.values().map(|n| n.slots_granted).sum()
    }

    pub fn frames_denied(&self) -> u64 {
        self.nodes.values().map(|n| n.frames_denied).sum()
    }
}
