//! The packet scheduling algorithm (PSA).
//!
//! Every node runs the same function on the control packets it heard, so
//! the allocation is agreed on without any exchange. Requests are ordered by
//! net priority (`PI + PPSA`) descending, then by PPSA descending, then by a
//! node-id rank; slots are granted greedily as contiguous runs.
//!
//! The final rank is plain ascending node id in [`run_psa`]. The simulator
//! uses [`run_psa_rotated`], which rotates the id rank by the superframe
//! counter so that three or more nodes tied on net priority take turns
//! instead of the highest ids starving.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use crate::types::NodeId;

/// PPSA bonus for a node that got no slot in the previous superframe.
pub const PPSA_BONUS: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRequest {
    pub node: NodeId,
    pub pi: u8,
    pub slots_requested: usize,
    pub ppsa: u8,
}

impl SlotRequest {
    pub fn net_priority(&self) -> u8 {
        self.pi + self.ppsa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grant {
    pub node: NodeId,
    pub first_slot: usize,
    pub n_slots: usize,
}

impl Grant {
    pub fn slots(&self) -> std::ops::Range<usize> {
        self.first_slot..self.first_slot + self.n_slots
    }
}

/// Output of one PSA run: contiguous grants from slot 0 plus denied nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SlotAllocation {
    pub grants: Vec<Grant>,
    /// Denied requesters, ascending by id.
    pub denied: Vec<NodeId>,
}

impl SlotAllocation {
    pub fn grant_for(&self, node: NodeId) -> Option<&Grant> {
        self.grants.iter().find(|g| g.node == node)
    }

    pub fn is_granted(&self, node: NodeId) -> bool {
        self.grant_for(node).is_some()
    }

    pub fn owner_of(&self, slot: usize) -> Option<NodeId> {
        self.grants
            .iter()
            .find(|g| g.slots().contains(&slot))
            .map(|g| g.node)
    }

    pub fn slots_granted(&self) -> usize {
        self.grants.iter().map(|g| g.n_slots).sum()
    }
}

/// PPSA per requester: 0 if it held at least one slot in `prev`, else the bonus.
pub fn compute_ppsa(prev: Option<&SlotAllocation>, requesters: &[NodeId]) -> BTreeMap<NodeId, u8> {
    requesters
        .iter()
        .map(|&n| {
            let served = prev.is_some_and(|p| p.is_granted(n));
            (n, if served { 0 } else { PPSA_BONUS })
        })
        .collect()
}

/// PSA with the final tie broken by ascending node id.
pub fn run_psa(requests: &[SlotRequest], max_slots: usize) -> SlotAllocation {
    run_psa_rotated(requests, max_slots, 0)
}

/// PSA with the final tie broken by node-id rank rotated by `rotation`.
///
/// Requests for zero slots are ignored. With `rotation == 0` this is
/// [`run_psa`].
pub fn run_psa_rotated(requests: &[SlotRequest], max_slots: usize, rotation: u64) -> SlotAllocation {
    let mut live: Vec<SlotRequest> = requests
        .iter()
        .copied()
        .filter(|r| r.slots_requested > 0)
        .collect();
    live.sort_by_key(|r| r.node);
    let n = live.len().max(1) as u64;
    let shift = rotation % n;
    let mut order: Vec<(usize, SlotRequest)> = live.into_iter().enumerate().collect();
    order.sort_by_key(|(rank, r)| {
        let rotated = (*rank as u64 + n - shift) % n;
        (Reverse(r.net_priority()), Reverse(r.ppsa), rotated)
    });

    let mut alloc = SlotAllocation::default();
    let mut next = 0usize;
    for (_, r) in order {
        let remaining = max_slots - next;
        if remaining == 0 {
            alloc.denied.push(r.node);
            continue;
        }
        let n_slots = r.slots_requested.min(remaining);
        alloc.grants.push(Grant {
            node: r.node,
            first_slot: next,
            n_slots,
        });
        next += n_slots;
    }
    alloc.denied.sort();
    alloc
}
