//! Analytic throughput, fairness ratios and the CSV batch driver.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::ccc::run_ccc;
use crate::scenario::{MacKind, Scenario, ScenarioError};
use crate::sim::{self, MetricsLedger};
use crate::timing::FrameTiming;

/// First line of every CSV file; bump the version when columns change.
pub const CSV_SCHEMA: &str = "# dsat-sim csv v1";

pub const CSV_COLUMNS: [&str; 20] = [
    "sweep_param",
    "sweep_value",
    "seed",
    "mac",
    "nodes",
    "flows",
    "superframes",
    "throughput_kbps",
    "analytic_users",
    "analytic_data_only_kbps",
    "analytic_with_ack_kbps",
    "mean_delay_ms",
    "flow_kbps",
    "fairness",
    "energy_per_node_j",
    "packets_delivered",
    "packets_dropped",
    "slots_granted",
    "slots_denied",
    "violations",
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("no flow delivered any data, fairness is undefined")]
    NoDelivery,
    #[error("no flows to compare")]
    NoFlows,
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("output failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// How a data slot is charged in the throughput ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThroughputMode {
    /// Charges each slot its data time only.
    #[default]
    DataOnly,
    /// Data plus ack time, matching how the frame is actually budgeted.
    WithAck,
}

/// Network throughput ceiling in bytes per second for `n_users` registered
/// users moving `bytes_per_slot` per data slot.
pub fn theoretical_throughput(timing: &FrameTiming, n_users: usize, bytes_per_slot: u32, mode: ThroughputMode) -> f64 {
    let ts = timing.superframe.as_secs_f64();
    let data_time = timing.superframe.as_secs_f64()
        - timing.quiet.as_secs_f64()
        - n_users as f64 * timing.control.as_secs_f64();
    let slot = match mode {
        ThroughputMode::DataOnly => timing.data.as_secs_f64(),
        ThroughputMode::WithAck => timing.data_pair().as_secs_f64(),
    };
    (bytes_per_slot as f64 * data_time / (ts * slot)).max(0.0)
}

/// Each flow's throughput divided by the mean flow throughput.
pub fn fairness_ratios(ledger: &MetricsLedger) -> Result<Vec<f64>, ExperimentError> {
    let n = ledger.flows.len();
    if n == 0 {
        return Err(ExperimentError::NoFlows);
    }
    let per_flow: Vec<f64> = (0..n).map(|f| ledger.flow_throughput(f)).collect();
    let mean = per_flow.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return Err(ExperimentError::NoDelivery);
    }
    Ok(per_flow.iter().map(|t| t / mean).collect())
}

/// One CSV row: one sweep point run with one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub sweep_param: Option<String>,
    pub sweep_value: Option<String>,
    pub seed: u64,
    pub mac: MacKind,
    pub nodes: usize,
    pub flows: usize,
    pub ledger: MetricsLedger,
    pub analytic_users: usize,
    pub analytic_data_only: f64,
    pub analytic_with_ack: f64,
}

fn kbps(bytes_per_sec: f64) -> f64 {
    bytes_per_sec * 8.0 / 1000.0
}

impl RunRow {
    pub fn throughput_kbps(&self) -> f64 {
        kbps(self.ledger.throughput())
    }

    pub fn flow_kbps(&self) -> Vec<f64> {
        (0..self.flows).map(|f| kbps(self.ledger.flow_throughput(f))).collect()
    }

    /// Mean energy spent per node, in joules.
    pub fn energy_per_node(&self) -> f64 {
        let n = self.ledger.nodes.len().max(1);
        self.ledger.nodes.values().map(|s| s.energy.total()).sum::<f64>() / n as f64
    }

    fn record(&self) -> Vec<String> {
        let join = |v: Vec<f64>| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(";");
        let l = &self.ledger;
        vec![
            self.sweep_param.clone().unwrap_or_default(),
            self.sweep_value.clone().unwrap_or_default(),
            self.seed.to_string(),
            match self.mac {
                MacKind::Dsat => "dsat".into(),
                MacKind::Ccc => "ccc".into(),
            },
            self.nodes.to_string(),
            self.flows.to_string(),
            l.superframes.to_string(),
            format!("{:.4}", self.throughput_kbps()),
            self.analytic_users.to_string(),
            format!("{:.4}", kbps(self.analytic_data_only)),
            format!("{:.4}", kbps(self.analytic_with_ack)),
            l.mean_delay_ms().map_or(String::new(), |d| format!("{d:.4}")),
            join(self.flow_kbps()),
            fairness_ratios(l).map_or(String::new(), join),
            format!("{:.6}", self.energy_per_node()),
            l.packets_delivered().to_string(),
            l.packets_dropped().to_string(),
            l.slots_granted().to_string(),
            l.frames_denied().to_string(),
            l.violations.len().to_string(),
        ]
    }
}

/// Runs one scenario with one seed on the MAC it names.
pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<MetricsLedger, ScenarioError> {
    match sc.mac {
        MacKind::Dsat => sim::run(sc, seed),
        MacKind::Ccc => run_ccc(sc, seed),
    }
}

/// Sweep parameter name and value, both empty without a sweep.
type SweepLabel = (Option<String>, Option<String>);

fn run_point(sweep: SweepLabel, sc: &Scenario, seed: u64) -> Result<RunRow, ScenarioError> {
    let ledger = run_scenario(sc, seed)?;
    let analytic_users = match sc.mac {
        MacKind::Dsat => ledger.mean_users().round() as usize,
        MacKind::Ccc => sc.flows.iter().map(|f| f.src).collect::<BTreeSet<_>>().len(),
    };
    let r = sc.bytes_per_slot();
    Ok(RunRow {
        sweep_param: sweep.0,
        sweep_value: sweep.1,
        seed,
        mac: sc.mac,
        nodes: sc.nodes.count,
        flows: sc.flows.len(),
        analytic_data_only: theoretical_throughput(&sc.timing, analytic_users, r, ThroughputMode::DataOnly),
        analytic_with_ack: theoretical_throughput(&sc.timing, analytic_users, r, ThroughputMode::WithAck),
        analytic_users,
        ledger,
    })
}

/// Seeds used for a scenario: `replications` consecutive values from its seed.
pub fn seeds(sc: &Scenario) -> Vec<u64> {
    (0..sc.replications as u64).map(|r| sc.seed.wrapping_add(r)).collect()
}

/// Runs every sweep point with every seed on `threads` worker threads
/// (`0` lets rayon decide). Rows come back ordered by sweep point, then seed,
/// whatever the thread count. Points without any flow produce no rows.
pub fn run_experiment(sc: &Scenario, seeds: &[u64], threads: usize) -> Result<Vec<RunRow>, ExperimentError> {
    let param = sc.sweep.as_ref().map(|s| s.param.as_str().to_string());
    let jobs: Vec<(SweepLabel, Scenario, u64)> = sc
        .sweep_points()?
        .into_iter()
        .filter(|(_, point)| !point.flows.is_empty())
        .flat_map(|(value, point)| {
            let param = param.clone();
            seeds.iter().map(move |&s| ((param.clone(), value.clone()), point.clone(), s))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let rows: Result<Vec<RunRow>, ScenarioError> =
        pool.install(|| jobs.into_par_iter().map(|(sweep, point, seed)| run_point(sweep, &point, seed)).collect());
    Ok(rows?)
}

/// Writes the schema line, the header and one line per row.
pub fn write_csv<W: Write>(mut out: W, rows: &[RunRow]) -> Result<(), ExperimentError> {
    writeln!(out, "{CSV_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}
