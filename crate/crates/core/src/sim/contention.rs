//! Contention in the new-user slot.
//!
//! The NUS is two control-slot widths long. Each contender picks sub-slot 0
//! or 1; the single earliest picker gets its control packet through, and two
//! or more contenders in the earliest sub-slot collide.

use rand::Rng;

use crate::types::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NusOutcome {
    NoContender,
    Winner { node: NodeId, sub_slot: u8 },
    Collision { nodes: Vec<NodeId>, sub_slot: u8 },
}

/// Resolves explicit sub-slot picks.
pub fn resolve_picks(picks: &[(NodeId, u8)]) -> NusOutcome {
    let Some(earliest) = picks.iter().map(|&(_, s)| s).min() else {
        return NusOutcome::NoContender;
    };
    let mut first: Vec<NodeId> = picks
        .iter()
        .filter(|&&(_, s)| s == earliest)
        .map(|&(n, _)| n)
        .collect();
    first.sort();
    if first.len() == 1 {
        NusOutcome::Winner {
            node: first[0],
            sub_slot: earliest,
        }
    } else {
        NusOutcome::Collision {
            nodes: first,
            sub_slot: earliest,
        }
    }
}

/// Draws a uniform sub-slot for every contender and resolves the picks.
pub fn resolve_nus_contention<R: Rng>(contenders: &[NodeId], rng: &mut R) -> NusOutcome {
    match contenders {
        [] => NusOutcome::NoContender,
        [only] => NusOutcome::Winner {
            node: *only,
            sub_slot: 0,
        },
        _ => {
            let picks: Vec<_> = contenders.iter().map(|&n| (n, rng.random_range(0..=1u8))).collect();
            resolve_picks(&picks)
        }
    }
}
