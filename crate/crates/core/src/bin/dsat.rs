use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dsat_core::ccc::run_ccc_with;
use dsat_core::energy::energy_breakdown;
use dsat_core::experiment::{run_experiment, seeds, theoretical_throughput, write_csv, ExperimentError, ThroughputMode};
use dsat_core::scenario::{MacKind, Scenario, ScenarioError};
use dsat_core::sim::{run_with, SimOptions};
use dsat_core::timing::capacity_max_users;

/// Directory for CSV output when `--out` is not given.
const OUT_DIR_VAR: &str = "DSAT_OUT_DIR";

#[derive(Parser)]
#[command(name = "dsat", version, about = "TDMA cognitive-radio MAC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (every sweep point and seed) and write CSV rows.
    Simulate {
        scenario: PathBuf,
        /// Run this seed only instead of the scenario's replications.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace of the first run to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// CSV destination; defaults to $DSAT_OUT_DIR/<scenario>.csv, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the batch driver (0 = one per core).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print closed-form results for the scenario's parameters.
    Analytic {
        #[arg(value_enum)]
        what: Analytic,
        scenario: PathBuf,
    },
    /// Parse and validate a scenario file.
    Validate { scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Analytic {
    Throughput,
    Energy,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Scenario(e) => e.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let sc = Scenario::parse(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    sc.validate().map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    Ok(sc)
}

struct SimulateArgs<'a> {
    scenario: &'a Path,
    seed: Option<u64>,
    trace: Option<&'a Path>,
    out: Option<&'a Path>,
    out_dir: Option<PathBuf>,
    threads: usize,
}

fn simulate(args: SimulateArgs<'_>) -> Result<(), Failure> {
    let SimulateArgs { scenario: path, seed, trace, out, out_dir, threads } = args;
    let sc = load(path)?;
    let seeds = seed.map_or_else(|| seeds(&sc), |s| vec![s]);
    if let Some(trace_path) = trace {
        let (_, first) = sc.sweep_points()?.into_iter().next().expect("at least one point");
        let text = match first.mac {
            MacKind::Dsat => run_with(&first, seeds[0], SimOptions { trace: true, keep_tx_log: false })?.trace,
            MacKind::Ccc => run_ccc_with(&first, seeds[0], true)?.trace,
        };
        fs::write(trace_path, text)?;
    }
    let rows = run_experiment(&sc, &seeds, threads)?;
    let target = out.map(Path::to_path_buf).or_else(|| {
        out_dir.map(|dir| {
            let stem = path.file_stem().unwrap_or_default();
            dir.join(stem).with_extension("csv")
        })
    });
    match target {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_csv(fs::File::create(&p)?, &rows)?;
        }
        None => write_csv(io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn analytic(what: Analytic, path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let sc = load(path)?;
    let t = &sc.timing;
    match what {
        Analytic::Throughput => {
            let r = sc.bytes_per_slot();
            writeln!(out, "users,data_only_bytes_per_s,with_ack_bytes_per_s")?;
            for n in 1..=capacity_max_users(t) {
                let data_only = theoretical_throughput(t, n, r, ThroughputMode::DataOnly);
                let with_ack = theoretical_throughput(t, n, r, ThroughputMode::WithAck);
                writeln!(out, "{n},{data_only:.3},{with_ack:.3}")?;
            }
        }
        Analytic::Energy => {
            writeln!(out, "nodes,data_slots,packets_per_node,e_without_pc_j,e_with_pc_j,power_saved_w")?;
            for n in 1..=sc.nodes.count.min(capacity_max_users(t)) {
                let b = energy_breakdown(t, n, &sc.radio.params);
                writeln!(
                    out,
                    "{n},{},{},{:.6},{:.6},{:.6}",
                    b.data_slots, b.lambda_pkts, b.e_wpc, b.e_pc, b.p_saved
                )?;
            }
        }
    }
    Ok(())
}

fn execute(cli: Cli, out_dir: Option<PathBuf>) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { scenario, seed, trace, out, threads } => simulate(SimulateArgs {
            scenario: &scenario,
            seed,
            trace: trace.as_deref(),
            out: out.as_deref(),
            out_dir,
            threads,
        }),
        Command::Analytic { what, scenario } => analytic(what, &scenario, &mut io::stdout().lock()),
        Command::Validate { scenario } => load(&scenario).map(|sc| {
            println!("ok: {} nodes, {} channels, {} flows", sc.nodes.count, sc.channels.len(), sc.flows.len());
        }),
    }
}

fn exit_code(result: &Result<(), Failure>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(Failure::Invalid(_)) => 1,
        Err(Failure::Runtime(_)) => 2,
    }
}

fn main() -> ExitCode {
    let result = execute(Cli::parse(), std::env::var_os(OUT_DIR_VAR).map(PathBuf::from));
    if let Err(Failure::Invalid(msg) | Failure::Runtime(msg)) = &result {
        eprintln!("error: {msg}");
    }
    ExitCode::from(exit_code(&result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsat_core::experiment::{CSV_COLUMNS, CSV_SCHEMA};

    fn scenario(file: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(file)
    }

    fn run(args: &[&str], out_dir: Option<&Path>) -> u8 {
        let cli = Cli::try_parse_from(std::iter::once("dsat").chain(args.iter().copied())).unwrap();
        exit_code(&execute(cli, out_dir.map(Path::to_path_buf)))
    }

    fn text(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn validate_accepts_shipped_scenarios() {
        for entry in fs::read_dir(scenario("")).unwrap() {
            let path = entry.unwrap().path();
            assert_eq!(run(&["validate", text(&path)], None), 0, "{}", path.display());
        }
    }

    #[test]
    fn bad_scenarios_exit_with_one() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.scn");
        fs::write(&bad, "[timing]\nsuperframe_ms = ten\n").unwrap();
        assert_eq!(run(&["validate", text(&bad)], None), 1);
        fs::write(&bad, "[flow]\nsrc = 1\ndst = 9\n").unwrap();
        assert_eq!(run(&["simulate", text(&bad)], None), 1);
    }

    #[test]
    fn io_failures_exit_with_two() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(&["validate", text(&dir.path().join("missing.scn"))], None), 2);
        let blocker = dir.path().join("file");
        fs::write(&blocker, "").unwrap();
        let target = blocker.join("out.csv");
        let sc = scenario("throughput.scn");
        assert_eq!(run(&["simulate", text(&sc), "--seed", "1", "--out", text(&target)], None), 2);
    }

    #[test]
    fn simulate_writes_csv_into_out_dir_and_trace() {
        let dir = tempfile::tempdir().unwrap();
        let trace = dir.path().join("run.trace");
        let sc = scenario("throughput.scn");
        let args = ["simulate", text(&sc), "--seed", "7", "--trace", text(&trace), "--threads", "2"];
        assert_eq!(run(&args, Some(dir.path())), 0);
        let csv = fs::read_to_string(dir.path().join("throughput.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_SCHEMA);
        assert_eq!(lines[1], CSV_COLUMNS.join(","));
        assert_eq!(lines.len(), 3);
        let fields: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(fields.len(), CSV_COLUMNS.len());
        assert_eq!((fields[2], fields[3]), ("7", "dsat"));
        assert!(fs::read_to_string(&trace).unwrap().contains("superframe #0"));
    }

    #[test]
    fn explicit_out_wins_over_out_dir() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested").join("x.csv");
        let sc = scenario("nodes_ccc.scn");
        let args = ["simulate", text(&sc), "--seed", "2", "--out", text(&out)];
        assert_eq!(run(&args, Some(dir.path())), 0);
        assert!(fs::read_to_string(&out).unwrap().lines().all(|l| !l.contains(",dsat,")));
        assert!(!dir.path().join("nodes_ccc.csv").exists());
    }

    fn analytic_table(what: Analytic, file: &str) -> String {
        let mut buf = Vec::new();
        analytic(what, &scenario(file), &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn analytic_tables() {
        let energy = analytic_table(Analytic::Energy, "energy.scn");
        // 80 ms frame, 20 ms quiet, 1 ms control, 2.5 ms per data pair:
        // ten nodes leave 20 data slots, two each
        let row = energy.lines().find(|l| l.starts_with("10,")).unwrap();
        assert!(row.starts_with("10,20,2,"), "{row}");

        let throughput = analytic_table(Analytic::Throughput, "throughput.scn");
        assert_eq!(throughput.lines().next(), Some("users,data_only_bytes_per_s,with_ack_bytes_per_s"));
        // 125 B per slot over 39 ms of data time per 60 ms frame
        assert!(throughput.lines().nth(1).unwrap().starts_with("1,81250.000,54166.667"));
    }
}
