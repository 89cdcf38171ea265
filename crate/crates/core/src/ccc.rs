//! Common-control-channel baseline: CSMA with RTS/CTS on a dedicated control
//! channel (channel 0) reserving a single licensed data channel (channel 1)
//! for one packet and its ack at a time.
//!
//! Nodes with a queued packet count down a backoff drawn from their window
//! in control-packet slots after the control channel has been idle for DIFS.
//! The lowest counter wins; equal lowest counters collide, and the colliders
//! double their window up to the maximum. Because there is one data channel,
//! the next contention round starts when the previous exchange ends. A busy
//! primary user on the data channel defers the round until it leaves.
//!
//! Every packet, including the handshake, is sent at the rate the TDMA MAC
//! uses for data (`bytes_per_slot` per data slot), so the two MACs are
//! compared on the same physical layer.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scenario::{MacKind, Scenario, ScenarioError};
use crate::sim::ledger::MetricsLedger;
use crate::sim::pu::PuProcess;
use crate::sim::rng::{substream, Stream};
use crate::sim::trace::Trace;
use crate::time::Micros;
use crate::types::{ChannelId, FlowId, NodeId};

const CONTROL: ChannelId = ChannelId(0);
const DATA: ChannelId = ChannelId(1);

#[derive(Debug, Clone, Copy)]
struct Pending {
    flow: FlowId,
    size: u32,
    enqueued: Micros,
}

struct CccNode {
    id: NodeId,
    rng: ChaCha8Rng,
    queue: VecDeque<Pending>,
    /// Current contention window.
    window: u32,
    /// Remaining backoff slots, drawn when the head packet starts contending.
    backoff: Option<u32>,
    attempts: u32,
    join: Micros,
    leave: Option<Micros>,
}

impl CccNode {
    fn active(&self, t: Micros) -> bool {
        t >= self.join && self.leave.is_none_or(|l| t < l)
    }
}

/// Ledger and optional trace of one baseline run.
#[derive(Debug, Clone)]
pub struct CccOutput {
    pub ledger: MetricsLedger,
    pub trace: String,
}

pub fn run_ccc(scenario: &Scenario, seed: u64) -> Result<MetricsLedger, ScenarioError> {
    Ok(run_ccc_with(scenario, seed, false)?.ledger)
}

pub fn run_ccc_with(sc: &Scenario, seed: u64, trace: bool) -> Result<CccOutput, ScenarioError> {
    sc.validate()?;
    if sc.mac != MacKind::Ccc {
        return Err(ScenarioError::Invalid("the baseline needs mac = ccc".into()));
    }
    let mut trace = if trace { Trace::enabled() } else { Trace::disabled() };
    let p = &sc.ccc;
    let rate_bytes_per_us = sc.bytes_per_slot() as f64 / sc.timing.data.0 as f64;
    let airtime = |bytes: u32| Micros((bytes as f64 / rate_bytes_per_us).ceil().max(1.0) as u64);
    let rts = airtime(p.rts_bytes);
    let cts = airtime(p.cts_bytes);
    let ack = airtime(p.ack_bytes);
    let slot = rts;
    let end = sc.sim_time;
    let radio = &sc.radio.params;
    let joules = |mw: f64, d: Micros| mw * 1e-3 * d.as_secs_f64();

    let mut ledger = MetricsLedger::new(sc.flows.len(), sc.node_ids());
    ledger.sim_time = end;
    let mut pu = PuProcess::new(&sc.channels[DATA.0 as usize].pu, substream(seed, Stream::Pu(DATA)));
    let busy = pu.busy_intervals(end);

    let mut nodes: Vec<CccNode> = sc
        .node_ids()
        .map(|id| {
            let spec = sc.node_spec(id);
            CccNode {
                id,
                rng: substream(seed, Stream::Ccc(id)),
                queue: VecDeque::new(),
                window: p.cw_min,
                backoff: None,
                attempts: 0,
                join: spec.join,
                leave: spec.leave,
            }
        })
        .collect();
    let index_of = |id: NodeId| id.0 as usize - 1;

    // Every arrival in time order; ties by flow index.
    let mut arrivals: Vec<(Micros, usize)> = Vec::new();
    for (fi, f) in sc.flows.iter().enumerate() {
        ledger.flows[fi].bytes_offered = f.offered_bytes(end);
        let mut k = 0;
        while let Some(t) = f.arrival(k).filter(|&t| t < end) {
            arrivals.push((t, fi));
            k += 1;
        }
    }
    arrivals.sort();
    let mut next_arrival = 0;

    let mut t = Micros::ZERO;
    loop {
        while next_arrival < arrivals.len() && arrivals[next_arrival].0 <= t {
            let (at, fi) = arrivals[next_arrival];
            next_arrival += 1;
            let f = &sc.flows[fi];
            let n = &mut nodes[index_of(f.src)];
            if n.active(at) && n.queue.len() < sc.nodes.queue_limit {
                n.queue.push_back(Pending { flow: FlowId(fi as u16), size: f.packet_bytes, enqueued: at });
            } else {
                ledger.flows[fi].packets_dropped += 1;
            }
        }
        for n in nodes.iter_mut().filter(|n| !n.active(t)) {
            for e in n.queue.drain(..) {
                ledger.flows[e.flow.0 as usize].packets_dropped += 1;
            }
            n.backoff = None;
        }
        if t >= end {
            break;
        }
        if let Some(&(_, off)) = busy.iter().find(|&&(on, off)| on <= t && t < off) {
            trace.record(t, Some(DATA), None, "pu", format_args!("data channel busy until {off}"));
            t = off;
            continue;
        }
        let contenders: Vec<usize> = (0..nodes.len()).filter(|&i| !nodes[i].queue.is_empty()).collect();
        if contenders.is_empty() {
            match arrivals.get(next_arrival) {
                Some(&(at, _)) => {
                    t = at;
                    continue;
                }
                None => break,
            }
        }
        for &i in &contenders {
            let n = &mut nodes[i];
            if n.backoff.is_none() {
                let w = n.window;
                n.backoff = Some(n.rng.random_range(0..w));
            }
        }
        let lowest = contenders.iter().map(|&i| nodes[i].backoff.unwrap_or(0)).min().unwrap_or(0);
        let start = t + p.difs + slot * lowest as u64;
        let winners: Vec<usize> = contenders.iter().copied().filter(|&i| nodes[i].backoff == Some(lowest)).collect();
        for &i in &contenders {
            if let Some(b) = nodes[i].backoff.as_mut() {
                *b -= lowest;
            }
        }
        if start >= end {
            break;
        }

        for &i in &winners {
            ledger.node_mut(nodes[i].id).energy.tx_j += joules(radio.p_tx_max_mw, rts);
        }
        if let [w] = winners[..] {
            let n = &mut nodes[w];
            let head = *n.queue.front().expect("contender has a packet");
            let dest = sc.flows[head.flow.0 as usize].dst;
            let cts_at = start + rts + p.sifs;
            let data_at = cts_at + cts + p.sifs;
            let data = airtime(head.size);
            let ack_at = data_at + data + p.sifs;
            let done = ack_at + ack;
            trace.record(start, Some(CONTROL), Some(n.id), "rts", format_args!("to {dest}"));
            ledger.handshakes += 1;
            n.queue.pop_front();
            n.backoff = None;
            n.window = p.cw_min;
            n.attempts = 0;
            let sender = n.id;
            let e = ledger.node_mut(sender);
            e.energy.tx_j += joules(radio.p_tx_max_mw, data);
            e.energy.rx_j += joules(radio.p_rx_mw, cts + ack);
            let e = ledger.node_mut(dest);
            e.energy.rx_j += joules(radio.p_rx_mw, rts + data);
            e.energy.tx_j += joules(radio.p_tx_max_mw, cts + ack);
            let dest_up = nodes[index_of(dest)].active(data_at);
            let lost_to_pu = busy.iter().any(|&(on, off)| on < data_at + data && data_at < off);
            if dest_up && !lost_to_pu && data_at + data <= end {
                let stats = &mut ledger.flows[head.flow.0 as usize];
                stats.bytes_delivered += head.size as u64;
                stats.packets_delivered += 1;
                stats.delay_sum += data_at + data - head.enqueued;
                ledger.node_mut(sender).slots_granted += 1;
                trace.record(data_at, Some(DATA), Some(sender), "data", format_args!("{} {} B to {dest}", head.flow, head.size));
            } else {
                ledger.flows[head.flow.0 as usize].packets_dropped += 1;
                trace.record(data_at, Some(DATA), Some(sender), "lost", format_args!("{} to {dest}", head.flow));
            }
            t = done;
        } else {
            ledger.control_collisions += winners.len() as u64;
            trace.record(start, Some(CONTROL), None, "collision", format_args!("{} rts", winners.len()));
            for &i in &winners {
                let n = &mut nodes[i];
                n.attempts += 1;
                n.backoff = None;
                n.window = (n.window * 2).min(p.cw_max);
                if n.attempts >= sc.nodes.max_attempts {
                    let e = n.queue.pop_front().expect("contender has a packet");
                    ledger.flows[e.flow.0 as usize].packets_dropped += 1;
                    n.attempts = 0;
                    n.window = p.cw_min;
                    ledger.node_mut(n.id).frames_denied += 1;
                }
            }
            t = start + rts + p.sifs + cts;
        }
    }
    Ok(CccOutput { ledger, trace: trace.into_text() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ChannelSpec;
    use crate::sim::pu::PuActivityModel;
    use crate::sim::traffic::TrafficSource;
    use crate::types::DataType;

    fn scenario(nodes: usize, flows: &[(u16, u16)], interval_ms: u64) -> Scenario {
        let mut sc = Scenario {
            mac: MacKind::Ccc,
            sim_time: Micros::from_ms(2000),
            ..Scenario::default()
        };
        sc.radio.bytes_per_slot = Some(1000);
        sc.nodes.count = nodes;
        sc.channels = vec![ChannelSpec { pu: PuActivityModel::AlwaysIdle }; 2];
        sc.flows = flows
            .iter()
            .map(|&(s, d)| TrafficSource {
                src: NodeId(s),
                dst: NodeId(d),
                packet_bytes: 1000,
                interval: Micros::from_ms(interval_ms),
                data_type: DataType::TextFile,
                pi_override: None,
                start: Micros::ZERO,
                stop: None,
            })
            .collect();
        sc
    }

    #[test]
    fn idle_network_does_nothing() {
        let l = run_ccc(&scenario(4, &[], 1), 1).unwrap();
        assert_eq!(l.handshakes, 0);
        assert_eq!(l.bytes_delivered(), 0);
    }

    #[test]
    fn single_saturated_flow_matches_exchange_time() {
        let sc = scenario(2, &[(1, 2)], 1);
        let l = run_ccc(&sc, 3).unwrap();
        assert_eq!(l.control_collisions, 0);
        // One exchange: DIFS + backoff + RTS + SIFS + CTS + SIFS + data + SIFS + ACK,
        // with a mean backoff of 3.5 RTS slots.
        let us = 50.0 + 3.5 * 20.0 + 20.0 + 10.0 + 14.0 + 10.0 + 1000.0 + 10.0 + 14.0;
        let expected = 1000.0 / (us * 1e-6);
        let got = l.throughput();
        assert!((got - expected).abs() / expected < 0.03, "{got} vs {expected}");
    }

    #[test]
    fn contention_produces_collisions_that_grow_with_nodes() {
        let pairs = |n: u16| (0..n / 2).map(|i| (2 * i + 1, 2 * i + 2)).collect::<Vec<_>>();
        let few = run_ccc(&scenario(4, &pairs(4), 1), 5).unwrap();
        let many = run_ccc(&scenario(12, &pairs(12), 1), 5).unwrap();
        let rate = |l: &MetricsLedger| l.control_collisions as f64 / (l.handshakes + l.control_collisions) as f64;
        assert!(rate(&many) > rate(&few), "{} vs {}", rate(&many), rate(&few));
    }

    #[test]
    fn requires_two_channels_and_ccc_mode() {
        let mut sc = scenario(2, &[(1, 2)], 1);
        sc.channels.pop();
        assert!(run_ccc(&sc, 1).is_err());
        let mut sc = scenario(2, &[(1, 2)], 1);
        sc.mac = MacKind::Dsat;
        assert!(run_ccc(&sc, 1).is_err());
    }

    #[test]
    fn busy_data_channel_blocks_delivery() {
        let mut sc = scenario(2, &[(1, 2)], 10);
        sc.channels[1].pu = PuActivityModel::Scripted(vec![(Micros::ZERO, Micros::from_ms(2000))]);
        assert_eq!(run_ccc(&sc, 1).unwrap().bytes_delivered(), 0);
    }

    #[test]
    fn deterministic() {
        let pairs = [(1, 2), (3, 4), (5, 6)];
        let a = run_ccc_with(&scenario(6, &pairs, 2), 9, true).unwrap();
        let b = run_ccc_with(&scenario(6, &pairs, 2), 9, true).unwrap();
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.trace, b.trace);
    }
}
