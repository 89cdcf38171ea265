//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::PathBuf;

use dsat_core::scenario::Scenario;
use dsat_core::scheduler::SlotRequest;
use dsat_core::NodeId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(file)
}

pub fn load(file: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(file)).unwrap();
    let sc = Scenario::parse(&text).unwrap();
    sc.validate().unwrap();
    sc
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// `a` may precede `b`: higher net priority first, then higher PPSA, then
/// lower node id.
fn may_precede(a: &SlotRequest, b: &SlotRequest) -> bool {
    let (na, nb) = (a.pi as u32 + a.ppsa as u32, b.pi as u32 + b.ppsa as u32);
    na > nb || (na == nb && (a.ppsa > b.ppsa || (a.ppsa == b.ppsa && a.node < b.node)))
}

/// Brute-force slot allocation: walks every ordering of the requests, keeps
/// the one in which each request may precede every later one, then hands
/// out contiguous slots, truncating the last request that fits partially.
/// Returns `(node, first_slot, n_slots)` grants and the sorted denied ids.
pub fn psa_oracle(reqs: &[SlotRequest], max_slots: usize) -> (Vec<(NodeId, usize, usize)>, Vec<NodeId>) {
    let live: Vec<SlotRequest> = reqs.iter().copied().filter(|r| r.slots_requested > 0).collect();
    let mut perm: Vec<usize> = (0..live.len()).collect();
    let mut chosen = None;
    loop {
        let valid = (0..perm.len()).all(|i| (i + 1..perm.len()).all(|j| may_precede(&live[perm[i]], &live[perm[j]])));
        if valid {
            chosen = Some(perm.clone());
            break;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let order = chosen.expect("a total order always exists");
    let mut grants = Vec::new();
    let mut denied = Vec::new();
    let mut used = 0;
    for i in order {
        let r = live[i];
        let take = r.slots_requested.min(max_slots - used);
        if take == 0 {
            denied.push(r.node);
        } else {
            grants.push((r.node, used, take));
            used += take;
        }
    }
    denied.sort();
    (grants, denied)
}

/// A small random scenario exercising joins, departures, sleep, PU bursts,
/// several channels, restricted channel sets and negotiation.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: u16 = rng.random_range(3..=8);
    let n_channels: u16 = rng.random_range(1..=3);
    let sim_ms = 3000;
    let mut s = String::new();
    writeln!(s, "[simulation]\nsim_time_ms = {sim_ms}\nseed = {seed}\nreplications = 1").unwrap();
    writeln!(s, "[timing]\nsuperframe_ms = 60\nquiet_ms = 20\ncontrol_ms = 1\ndata_ms = 1\nack_ms = 0.5").unwrap();
    writeln!(
        s,
        "[nodes]\ncount = {nodes}\nparticipate = {}\nsleep_after = {}\nnegotiate = {}\ncrowding_threshold = {}",
        if rng.random_bool(0.5) { "always" } else { "on_demand" },
        rng.random_range(1..=6),
        rng.random_bool(0.5),
        rng.random_range(2..=5),
    )
    .unwrap();
    for id in 1..=nodes {
        let mut spec = String::new();
        if rng.random_bool(0.3) {
            writeln!(spec, "join_ms = {}", rng.random_range(0..1500)).unwrap();
        }
        if rng.random_bool(0.2) {
            writeln!(spec, "leave_ms = {}", rng.random_range(1600..2900)).unwrap();
        }
        if n_channels > 1 && rng.random_bool(0.3) {
            let mut chans: Vec<u16> = (0..n_channels).collect();
            chans.shuffle(&mut rng);
            chans.truncate(rng.random_range(1..=n_channels as usize));
            let list: Vec<String> = chans.iter().map(u16::to_string).collect();
            writeln!(spec, "vacant = {}", list.join(", ")).unwrap();
        }
        if !spec.is_empty() {
            write!(s, "[node]\nid = {id}\n{spec}").unwrap();
        }
    }
    for _ in 0..n_channels {
        match rng.random_range(0..3) {
            0 => writeln!(s, "[channel]\npu = idle").unwrap(),
            1 => writeln!(
                s,
                "[channel]\npu = markov\nmean_on_ms = {}\nmean_off_ms = {}",
                rng.random_range(50..400),
                rng.random_range(300..2000)
            )
            .unwrap(),
            _ => {
                let a = rng.random_range(0..2500);
                let b = a + rng.random_range(10..400);
                writeln!(s, "[channel]\npu = scripted\nbusy = {a}-{b}").unwrap();
            }
        }
    }
    for _ in 0..rng.random_range(1..=4) {
        let src = rng.random_range(1..=nodes);
        let dst = (src + rng.random_range(1..nodes) - 1) % nodes + 1;
        writeln!(
            s,
            "[flow]\nsrc = {src}\ndst = {dst}\npacket_bytes = {}\ninterval_ms = {}\nstart_ms = {}",
            rng.random_range(100..3000),
            rng.random_range(2..80),
            rng.random_range(0..1000)
        )
        .unwrap();
    }
    let sc = Scenario::parse(&s).unwrap_or_else(|e| panic!("{e}\n{s}"));
    sc.validate().unwrap_or_else(|e| panic!("{e}\n{s}"));
    sc
}
