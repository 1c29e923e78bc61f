//! Command-line front end: scenario generation, single solves, density
//! sweeps, and handover trace validation, with reproducible JSON/CSV/SVG
//! outputs. Exit codes: 0 success, 1 domain error (error name on stderr),
//! 2 usage error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use slice_alloc::allocator::dual::DualParams;
use slice_alloc::channel::{build_gain_tensor, GainTensor};
use slice_alloc::handover::{run_trace, HandoverContext, HandoverEvent, Phase};
use slice_alloc::metrics::{
    interference_fixed_point, run_sweep, write_charts, write_report, FixedPointParams, SweepPlan,
};
use slice_alloc::scenario::{generate_topology, ScenarioConfig, Topology};

#[derive(Parser)]
#[command(
    name = "slice-alloc",
    version,
    about = "Sliced two-tier uplink simulator: topology generation, dual-decomposition solves, density sweeps, handover traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a topology and write it as JSON.
    Generate(RunArgs),
    /// Solve one scenario end to end and write the allocation and its
    /// feasibility report.
    Solve(RunArgs),
    /// Run the density sweep and write the CSV report and SVG charts.
    Sweep(RunArgs),
    /// Validate a handover event trace (exit 0 iff it reaches Complete).
    HandoverTrace(TraceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; omitted fields fall back to their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for outputs (created if absent).
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
    /// Override the scenario seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the channel gain tensor as gains.csv.
    #[arg(long)]
    dump_gains: bool,
}

#[derive(Args)]
struct TraceArgs {
    /// JSON file holding an array of handover events.
    trace: PathBuf,
    /// Directory for the run manifest (created if absent).
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

/// One config document for everything: scenario, solver, fixed point, and
/// sweep grid. Every field and sub-field is optional in the JSON.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct AppConfig {
    scenario: ScenarioConfig<f64>,
    solver: DualParams<f64>,
    fixed_point: FixedPointParams<f64>,
    sweep: SweepPlan,
}

/// Written as run-manifest.json on every run: the fully resolved config
/// (seed override applied) plus what was produced. No timestamps, paths
/// outside the output directory, or thread counts — two identical runs
/// yield identical manifests.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    config: &'a AppConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a [HandoverEvent]>,
    outputs: Vec<String>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("InvalidConfig: {path}: {message}")]
    InvalidConfig { path: String, message: String },
    #[error("InvalidTrace: {path}: {message}")]
    InvalidTrace { path: String, message: String },
    #[error("IoFailure: {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("Incomplete: trace ends in phase {phase}, not Complete")]
    Incomplete { phase: &'static str },
    #[error(transparent)]
    Scenario(#[from] slice_alloc::scenario::ScenarioError),
    #[error(transparent)]
    Alloc(#[from] slice_alloc::allocator::AllocError),
    #[error(transparent)]
    Sweep(#[from] slice_alloc::metrics::SweepError),
    #[error(transparent)]
    Report(#[from] slice_alloc::metrics::ReportError),
    #[error(transparent)]
    Trace(#[from] slice_alloc::handover::TraceError),
}

fn main() {
    let cli = Cli::parse();
    init_thread_pool();
    match dispatch(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("{err}");
            std::process::exit(1);
        }
    }
}

/// Honors SLICE_ALLOC_THREADS (0 or unset = automatic).
fn init_thread_pool() {
    if let Ok(value) = std::env::var("SLICE_ALLOC_THREADS") {
        if let Ok(threads) = value.trim().parse::<usize>() {
            if threads > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Solve(args) => solve(args),
        Command::Sweep(args) => sweep(args),
        Command::HandoverTrace(args) => handover_trace(args),
    }
}

fn load_config(args: &RunArgs) -> Result<AppConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = read_file(path)?;
            serde_json::from_str::<AppConfig>(&text).map_err(|e| CliError::InvalidConfig {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => AppConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.scenario.seed = seed;
    }
    let violations = config.scenario.check();
    if !violations.is_empty() {
        return Err(CliError::InvalidConfig {
            path: args
                .config
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<defaults>".into()),
            message: violations.join("; "),
        });
    }
    Ok(config)
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn write_manifest(
    dir: &Path,
    command: &'static str,
    config: &AppConfig,
    trace: Option<&[HandoverEvent]>,
    outputs: Vec<String>,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        config,
        trace,
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(dir, "run-manifest.json", &(json + "\n"))
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

/// Gain tensor rows as transmitter,receiver,subchannel,gain CSV.
fn gains_csv(topology: &Topology<f64>, gains: &GainTensor<f64>, num_subchannels: usize) -> String {
    let mut out = String::from("transmitter,receiver,subchannel,gain\n");
    let receivers: Vec<String> = std::iter::once("macro".to_string())
        .chain((0..topology.small_cells.len()).map(|k| format!("cell-{k}")))
        .collect();
    for (row, user) in topology.users.iter().enumerate() {
        for (station, receiver) in receivers.iter().enumerate() {
            for n in 0..num_subchannels {
                out.push_str(&format!(
                    "{},{},{},{:.9e}\n",
                    user.id.0,
                    receiver,
                    n,
                    gains.gain(row, station, n)
                ));
            }
        }
    }
    out
}

fn generate(args: RunArgs) -> Result<(), CliError> {
    let config = load_config(&args)?;
    ensure_dir(&args.output_dir)?;
    let topology = generate_topology(&config.scenario)?;
    let mut outputs = vec!["topology.json".to_string()];
    write_file(&args.output_dir, "topology.json", &json_pretty(&topology))?;
    if args.dump_gains {
        let gains = build_gain_tensor(
            &topology,
            config.scenario.seed,
            0,
            config.scenario.num_subchannels,
        );
        write_file(
            &args.output_dir,
            "gains.csv",
            &gains_csv(&topology, &gains, config.scenario.num_subchannels),
        )?;
        outputs.push("gains.csv".to_string());
    }
    write_manifest(&args.output_dir, "generate", &config, None, outputs)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    allocation: &'a slice_alloc::allocator::Allocation<f64>,
    capacities: &'a slice_alloc::metrics::SliceCapacities<f64>,
    round_embb_bps: &'a [f64],
    feasible: bool,
    feasibility_report: &'a slice_alloc::allocator::FeasibilityReport<f64>,
}

fn solve(args: RunArgs) -> Result<(), CliError> {
    let config = load_config(&args)?;
    ensure_dir(&args.output_dir)?;
    let topology = generate_topology(&config.scenario)?;
    let gains = build_gain_tensor(
        &topology,
        config.scenario.seed,
        0,
        config.scenario.num_subchannels,
    );
    let outcome = interference_fixed_point(
        &topology,
        &gains,
        &config.scenario,
        &config.solver,
        &config.fixed_point,
    )?;
    let mut outputs = vec!["allocation.json".to_string()];
    write_file(
        &args.output_dir,
        "allocation.json",
        &json_pretty(&SolveOutput {
            allocation: &outcome.allocation,
            capacities: &outcome.capacities,
            round_embb_bps: &outcome.round_embb_bps,
            feasible: outcome.feasible,
            feasibility_report: &outcome.final_report,
        }),
    )?;
    if args.dump_gains {
        write_file(
            &args.output_dir,
            "gains.csv",
            &gains_csv(&topology, &gains, config.scenario.num_subchannels),
        )?;
        outputs.push("gains.csv".to_string());
    }
    write_manifest(&args.output_dir, "solve", &config, None, outputs)
}

fn sweep(args: RunArgs) -> Result<(), CliError> {
    let config = load_config(&args)?;
    ensure_dir(&args.output_dir)?;
    let output = run_sweep(
        &config.scenario,
        &config.solver,
        &config.fixed_point,
        &config.sweep,
    )?;
    for warning in &output.warnings {
        eprintln!("warning: {warning}");
    }
    write_report(&output.reports, &args.output_dir.join("report.csv"))?;
    let charts = write_charts(&output.reports, &args.output_dir)?;
    let mut outputs = vec!["report.csv".to_string()];
    outputs.extend(
        charts
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned()),
    );
    write_manifest(&args.output_dir, "sweep", &config, None, outputs)
}

fn handover_trace(args: TraceArgs) -> Result<(), CliError> {
    let text = read_file(&args.trace)?;
    let events: Vec<HandoverEvent> =
        serde_json::from_str(&text).map_err(|e| CliError::InvalidTrace {
            path: args.trace.display().to_string(),
            message: e.to_string(),
        })?;
    let context = HandoverContext {
        slice_id: events
            .first()
            .map(|e| e.slice_id.clone())
            .unwrap_or_else(|| "default".into()),
        source_cell: "source".into(),
        target_cell: "target".into(),
    };
    ensure_dir(&args.output_dir)?;
    let config = AppConfig::default();
    write_manifest(
        &args.output_dir,
        "handover-trace",
        &config,
        Some(&events),
        vec![],
    )?;
    let state = run_trace(context, events.clone())?;
    println!("final phase: {}", state.phase);
    if state.phase != Phase::Complete {
        return Err(CliError::Incomplete {
            phase: state.phase.name(),
        });
    }
    Ok(())
}
