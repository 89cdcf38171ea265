//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured values, then asserts. Tolerances are pinned as constants here.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use dsat_core::energy::{expected_power_saved, mc_mean_square_distance, mc_power_saved, RadioParams, SpatialModel};
use dsat_core::experiment::{run_experiment, seeds, theoretical_throughput, write_csv, ThroughputMode};
use dsat_core::scheduler::{run_psa, SlotRequest};
use dsat_core::sim::{run_with, SimOptions, TxKind};
use dsat_core::{FrameTiming, Micros, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{load, mean, psa_oracle, random_scenario};

/// Writes straight to stderr so the line shows even when libtest captures
/// the output of passing tests.
fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {name}: {verdict} ({detail})");
    assert!(pass, "criterion {n} {name}: {detail}");
}

const C1_REL_TOL: f64 = 0.05;
const C1_RUNTIME: Duration = Duration::from_secs(5);

#[test]
fn criterion_01_throughput_ceiling() {
    let sc = load("throughput.scn");
    let started = Instant::now();
    let rows = run_experiment(&sc, &seeds(&sc), 1).unwrap();
    let elapsed = started.elapsed();
    let mut pass = elapsed < C1_RUNTIME;
    let mut detail = Vec::new();
    for row in &rows {
        let got = row.ledger.throughput();
        let users = row.analytic_users;
        let with_ack = theoretical_throughput(&sc.timing, users, sc.bytes_per_slot(), ThroughputMode::WithAck);
        let data_only = theoretical_throughput(&sc.timing, users, sc.bytes_per_slot(), ThroughputMode::DataOnly);
        let rel = (got - with_ack).abs() / with_ack;
        pass &= rel <= C1_REL_TOL && got <= data_only;
        detail.push(format!("seed {}: {got:.0} B/s vs {with_ack:.0} (off {:.2}%), data-only {data_only:.0}", row.seed, rel * 100.0));
    }
    detail.push(format!("{:.2}s", elapsed.as_secs_f64()));
    report(1, "analytic throughput ceiling", pass, &detail.join("; "));
}

const C2_MIN_CASES: usize = 10_000;
const C2_RUNTIME: Duration = Duration::from_secs(30);

#[test]
fn criterion_02_psa_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5053_4121);
    let pis = [0u8, 1, 3, 5, 7, 9, 10, 12, 15, 18, 20, 21];
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for n in 1..=6u16 {
        for max_slots in 1..=10usize {
            for _ in 0..200 {
                let reqs: Vec<SlotRequest> = (1..=n)
                    .map(|id| SlotRequest {
                        node: NodeId(id * 3 % 7 + 10 * id),
                        pi: pis[rng.random_range(0..pis.len())],
                        slots_requested: rng.random_range(1..=4),
                        ppsa: if rng.random_bool(0.5) { 5 } else { 0 },
                    })
                    .collect();
                let got = run_psa(&reqs, max_slots);
                let expected = psa_oracle(&reqs, max_slots);
                let got_view: Vec<(NodeId, usize, usize)> = got.grants.iter().map(|g| (g.node, g.first_slot, g.n_slots)).collect();
                if got_view != expected.0 || got.denied != expected.1 {
                    mismatches.push(format!("{reqs:?} M={max_slots}"));
                }
                cases += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    let pass = cases >= C2_MIN_CASES && mismatches.is_empty() && elapsed < C2_RUNTIME;
    let first = mismatches.first().cloned().unwrap_or_default();
    report(
        2,
        "PSA oracle equivalence",
        pass,
        &format!("{cases} cases, {} mismatches {first}, {:.2}s", mismatches.len(), elapsed.as_secs_f64()),
    );
}

const C3_RATIO: (f64, f64) = (0.30, 0.60);

#[test]
fn criterion_03_malicious_alternation() {
    let sc = load("malicious.scn");
    let (a, b) = (NodeId(1), NodeId(2));
    let mut pass = true;
    let mut detail = Vec::new();
    for seed in seeds(&sc) {
        let out = run_with(&sc, seed, SimOptions { trace: false, keep_tx_log: true }).unwrap();
        let mut per_frame: BTreeMap<u64, Vec<NodeId>> = BTreeMap::new();
        for t in out.tx_log.iter().filter(|t| matches!(t.kind, TxKind::Data { .. })) {
            let v = per_frame.entry(t.frame).or_default();
            if !v.contains(&t.node) {
                v.push(t.node);
            }
        }
        // the contest starts once each of them has been granted a first time
        let first_grant = |n: NodeId| per_frame.iter().find(|(_, v)| v.contains(&n)).map(|(f, _)| *f);
        let both_from = match (first_grant(a), first_grant(b)) {
            (Some(x), Some(y)) => x.max(y),
            _ => u64::MAX,
        };
        let winners: Vec<&Vec<NodeId>> = per_frame.range(both_from..).map(|(_, v)| v).collect();
        // from the second contested superframe on, exactly one of them per frame, alternating
        let alternates = winners.len() > 2
            && winners
            .iter()
            .skip(1)
            .all(|w| w.len() == 1 && (w[0] == a || w[0] == b))
            && winners.windows(2).skip(1).all(|p| p[0] != p[1]);
        let ratio = out.ledger.flow_throughput(1) / out.ledger.flow_throughput(0);
        pass &= alternates && (C3_RATIO.0..=C3_RATIO.1).contains(&ratio) && out.ledger.violations.is_empty();
        detail.push(format!(
            "seed {seed}: alternate={alternates} A={:.1} kbps B={:.1} kbps ratio={ratio:.3}",
            out.ledger.flow_throughput(0) * 8e-3,
            out.ledger.flow_throughput(1) * 8e-3
        ));
    }
    report(3, "malicious-user alternation", pass, &detail.join("; "));
}

const C4_RATIO: (f64, f64) = (0.90, 1.10);

#[test]
fn criterion_04_fairness() {
    let sc = load("fairness.scn");
    let rows = run_experiment(&sc, &seeds(&sc), 0).unwrap();
    let mut pass = rows.len() == 5;
    let mut detail = Vec::new();
    for row in &rows {
        let ratios = dsat_core::experiment::fairness_ratios(&row.ledger).unwrap();
        pass &= ratios.iter().all(|r| (C4_RATIO.0..=C4_RATIO.1).contains(r));
        let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
        detail.push(format!("seed {}: [{}]", row.seed, shown.join(", ")));
    }
    report(4, "fairness among equal flows", pass, &detail.join("; "));
}

#[test]
fn criterion_05_qos_ordering() {
    let sc = load("qos.scn");
    let rows = run_experiment(&sc, &seeds(&sc), 0).unwrap();
    let mut pass = rows.len() == 5;
    let mut detail = Vec::new();
    for row in &rows {
        let flows: Vec<f64> = (0..4).map(|f| row.ledger.flow_throughput(f)).collect();
        let ordered = flows.windows(2).all(|w| w[0] > w[1]);
        let no_starvation = row.ledger.flows.iter().all(|f| f.bytes_delivered > 0);
        pass &= ordered && no_starvation;
        let shown: Vec<String> = flows.iter().map(|t| format!("{:.1}", t * 8e-3)).collect();
        detail.push(format!("seed {}: [{}] kbps", row.seed, shown.join(", ")));
    }
    report(5, "QoS ordering without starvation", pass, &detail.join("; "));
}

/// Relative dip tolerated between neighbouring points once a curve has
/// reached its plateau (seed noise on a saturated link).
const C6_PLATEAU_TOL: f64 = 0.01;
const C6_CEILING_TOL: f64 = 0.05;

fn sweep_means(file: &str) -> Vec<(String, f64)> {
    let sc = load(file);
    let rows = run_experiment(&sc, &seeds(&sc), 0).unwrap();
    let mut by_point: Vec<(String, Vec<f64>)> = Vec::new();
    for row in rows {
        let v = row.sweep_value.clone().unwrap();
        match by_point.last_mut() {
            Some((last, xs)) if *last == v => xs.push(row.ledger.throughput()),
            _ => by_point.push((v, vec![row.ledger.throughput()])),
        }
    }
    by_point.into_iter().map(|(v, xs)| (v, mean(&xs))).collect()
}

fn shown(points: &[(String, f64)]) -> String {
    points.iter().map(|(v, t)| format!("{v}:{:.1}", t * 8e-3)).collect::<Vec<_>>().join(" ")
}

#[test]
fn criterion_06_sensitivity_trends() {
    let quiet = sweep_means("quiet_sweep.scn");
    let quiet_ok = quiet.windows(2).all(|w| w[1].1 <= w[0].1);
    let superframe = sweep_means("superframe_sweep.scn");
    let superframe_ok = superframe.windows(2).all(|w| w[1].1 >= w[0].1);
    let pu = sweep_means("pu_sweep.scn");
    let pu_ok = pu.windows(2).all(|w| w[1].1 <= w[0].1);

    let flows = sweep_means("flows_sweep.scn");
    let sc = load("flows_sweep.scn");
    let ceiling = theoretical_throughput(&sc.timing, sc.nodes.count, sc.bytes_per_slot(), ThroughputMode::WithAck);
    let flows_ok = flows.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - C6_PLATEAU_TOL));
    let last = flows.last().unwrap().1;
    let saturates = (last - ceiling).abs() / ceiling <= C6_CEILING_TOL;

    let pass = quiet_ok && superframe_ok && pu_ok && flows_ok && saturates;
    let detail = format!(
        "quiet[{}] {quiet_ok}; superframe[{}] {superframe_ok}; pu duty[{}] {pu_ok}; flows[{}] {flows_ok}, plateau {:.1} vs ceiling {:.1} kbps",
        shown(&quiet),
        shown(&superframe),
        shown(&pu),
        shown(&flows),
        last * 8e-3,
        ceiling * 8e-3
    );
    report(6, "sensitivity trends", pass, &detail);
}

const C7_MC_SAMPLES: usize = 1_000_000;
const C7_MSD_TOL: f64 = 0.01;
const C7_EVENT_TOL: f64 = 0.02;
const C7_PEAK_WATTS: (f64, f64) = (0.40, 0.52);

#[test]
fn criterion_07_energy_closed_form() {
    let range = 250.0;
    let msd = mc_mean_square_distance(C7_MC_SAMPLES, 77, SpatialModel::Ball, range);
    let closed = 3.0 * range * range / 5.0;
    let msd_ok = (msd - closed).abs() / closed <= C7_MSD_TOL;

    let timing = FrameTiming {
        superframe: Micros::from_ms(80),
        quiet: Micros::from_ms(20),
        control: Micros::from_ms(1),
        data: Micros::from_ms(2),
        ack: Micros(500),
        wait: Micros::from_ms(240),
        detect_interval: Micros::from_ms(80),
    };
    let params = RadioParams::default();
    let curve: Vec<(usize, f64)> = (4..=20).map(|n| (n, expected_power_saved(&timing, n, &params))).collect();
    let peak = curve.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    // lambda is a floor, so the curve is a staircase; the maximum may span
    // neighbouring N but must be one run that touches neither end
    let at_peak: Vec<usize> = curve.iter().filter(|p| p.1 >= peak - 1e-12).map(|p| p.0).collect();
    let (peak_lo, peak_hi) = (at_peak[0], at_peak[at_peak.len() - 1]);
    let single = peak_hi - peak_lo + 1 == at_peak.len();
    let interior = peak_lo > 4 && peak_hi < 20;
    let mut worst_event = 0.0f64;
    for &(n, p) in &curve {
        let sim = mc_power_saved(&timing, n, &params, 200_000, 1000 + n as u64);
        worst_event = worst_event.max((sim - p).abs() / p);
    }
    let event_ok = worst_event <= C7_EVENT_TOL;
    let peak_ok = (C7_PEAK_WATTS.0..=C7_PEAK_WATTS.1).contains(&peak);
    let curve_text: Vec<String> = curve.iter().map(|(n, p)| format!("{n}:{p:.3}")).collect();
    report(
        7,
        "energy closed form",
        msd_ok && interior && single && event_ok && peak_ok,
        &format!(
            "E[x^2] {msd:.1} vs {closed:.1}; curve [{}]; peak {peak:.3} W at N={peak_lo}..={peak_hi}; worst per-event gap {:.2}%",
            curve_text.join(" "),
            worst_event * 100.0
        ),
    );
}

const C8_SCENARIOS: u64 = 100;

#[test]
fn criterion_08_invariants_under_fuzzing() {
    let mut failures = Vec::new();
    let mut delivered = 0;
    for i in 0..C8_SCENARIOS {
        let sc = random_scenario(0xF022 + i);
        let out = run_with(&sc, i, SimOptions::default()).unwrap();
        delivered += out.ledger.packets_delivered();
        if let Some(v) = out.ledger.violations.first() {
            failures.push(format!("scenario {i}: {} violations, first: {v}", out.ledger.violations.len()));
        }
    }
    let first = failures.first().cloned().unwrap_or_default();
    report(
        8,
        "protocol invariants under fuzzing",
        failures.is_empty() && delivered > 0,
        &format!("{C8_SCENARIOS} scenarios, {} with violations {first}; {delivered} packets delivered", failures.len()),
    );
}

#[test]
fn criterion_09_baseline_comparison() {
    let dsat = load("nodes_dsat.scn");
    let ccc = load("nodes_ccc.scn");
    let d_rows = run_experiment(&dsat, &seeds(&dsat), 0).unwrap();
    let c_rows = run_experiment(&ccc, &seeds(&ccc), 0).unwrap();
    let mut pass = d_rows.len() == c_rows.len() && !d_rows.is_empty();
    let mut detail = Vec::new();
    for (d, c) in d_rows.iter().zip(&c_rows) {
        assert_eq!((&d.sweep_value, d.seed), (&c.sweep_value, c.seed));
        let (dt, ct) = (d.ledger.throughput(), c.ledger.throughput());
        let (dd, cd) = (d.ledger.mean_delay_ms().unwrap_or(f64::INFINITY), c.ledger.mean_delay_ms().unwrap_or(f64::INFINITY));
        pass &= ct >= dt && cd <= dd;
        if d.seed == dsat.seed {
            detail.push(format!(
                "n={}: dsat {:.1} kbps/{dd:.0} ms, ccc {:.1} kbps/{cd:.0} ms",
                d.sweep_value.as_deref().unwrap_or("-"),
                dt * 8e-3,
                ct * 8e-3
            ));
        }
    }
    report(9, "baseline comparison", pass, &detail.join("; "));
}

#[test]
fn criterion_10_determinism() {
    let mut pass = true;
    let mut detail = Vec::new();
    for file in ["mobility.scn", "pu_sweep.scn", "nodes_ccc.scn"] {
        let mut sc = load(file);
        sc.sim_time = Micros::from_ms(4000);
        let seeds = seeds(&sc);
        let csv = |threads: usize| {
            let rows = run_experiment(&sc, &seeds, threads).unwrap();
            let mut buf = Vec::new();
            write_csv(&mut buf, &rows).unwrap();
            buf
        };
        let reference = csv(1);
        let same = reference == csv(1) && reference == csv(4) && reference == csv(0);
        pass &= same;
        detail.push(format!("{file}: csv identical across runs and 1/4/auto threads = {same}"));
    }
    let sc = load("mobility.scn");
    let opts = SimOptions { trace: true, keep_tx_log: false };
    let a = run_with(&sc, 3, opts).unwrap();
    let b = run_with(&sc, 3, opts).unwrap();
    let same_trace = a.trace == b.trace && !a.trace.is_empty();
    pass &= same_trace;
    detail.push(format!("trace identical = {same_trace} ({} lines)", a.trace.lines().count()));
    report(10, "determinism", pass, &detail.join("; "));
}
