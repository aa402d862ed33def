//! `padloc`: simulate scenarios, run the localization pipeline on them,
//! compare ablation modes and export plot data.
//!
//! Every failure prints one JSON object `{"error": kind, "message": text}` on
//! stderr and exits with status 1.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use padloc::config::{AblationMode, Params, RunConfig, DEFAULT_PARAMS_TOML};
use padloc::geometry::CalibrationSet;
use padloc::metrics::{localization_errors, MetricsReport};
use padloc::pipeline::{run_pipeline, PipelineError, RunResult};
use padloc::sim::{read_truth_csv, simulate, ScenarioSpec, SimError};

#[derive(Debug, Parser)]
#[command(name = "padloc", version, about = "Drone landing localization from event camera and mmWave radar")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct PipelineArgs {
    /// Scenario directory written by `simulate`.
    #[arg(long)]
    scenario: PathBuf,
    /// Parameter overrides, TOML. Missing keys keep their defaults.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Calibration file that must match the scenario's own.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Recorded with the results.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run local optimization on a second thread.
    #[arg(long)]
    threaded: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a scenario directory from a preset or a spec file.
    Simulate {
        /// One of: default, clean, spiral60.
        #[arg(long, default_value = "default")]
        preset: String,
        /// Full scenario spec as JSON, e.g. the scenario.json of another run.
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// Overrides the seed of the preset or spec.
        #[arg(long)]
        seed: Option<u64>,
        /// Calibration to simulate with; built-in rig otherwise.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one mode on a scenario and print its metrics as JSON.
    Run {
        #[command(flatten)]
        args: PipelineArgs,
        #[arg(long, default_value = "full")]
        mode: AblationMode,
        /// Where to write trajectory.csv, metrics.json and diagnostics.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every mode on a scenario and print a comparison table.
    Ablate {
        #[command(flatten)]
        args: PipelineArgs,
        /// Per-mode outputs go to subdirectories, the table to ablation.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write error CDF and latency histogram CSVs for the given modes.
    Plotdata {
        #[command(flatten)]
        args: PipelineArgs,
        /// Comma separated; all modes when omitted.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<AblationMode>,
        /// Latency histogram bin width, µs.
        #[arg(long, default_value_t = 250.0)]
        bin_us: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the default parameter file with every key documented.
    Params,
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: impl ToString) -> Self {
        Self::new("Io", format!("{}: {}", path.display(), e.to_string()))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self::new(e.kind(), e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let kind = match e {
            SimError::MissingStream(_) => "MissingStream",
            SimError::Io { .. } => "Io",
            _ => "InvalidSpec",
        };
        Self::new(kind, e)
    }
}

fn load_params(path: Option<&Path>) -> Result<Params, CliError> {
    match path {
        Some(p) => Params::load(p).map_err(|e| CliError::new("InvalidConfig", e)),
        None => Ok(Params::default()),
    }
}

fn run_config(args: &PipelineArgs, mode: AblationMode, output: Option<PathBuf>) -> Result<RunConfig, CliError> {
    Ok(RunConfig {
        scenario_dir: args.scenario.clone(),
        calibration: args.calibration.clone(),
        params: load_params(args.params.as_deref())?,
        mode,
        output_dir: output,
        seed: args.seed,
        threaded: args.threaded,
    })
}

fn cmd_simulate(
    preset: &str,
    spec: Option<&Path>,
    seed: Option<u64>,
    calibration: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let mut spec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str::<ScenarioSpec>(&text).map_err(|e| CliError::new("InvalidSpec", format!("{}: {e}", p.display())))?
        }
        None => ScenarioSpec::preset(preset, 0).ok_or_else(|| {
            CliError::new(
                "InvalidSpec",
                format!("unknown preset {preset:?}, expected one of {}", ScenarioSpec::PRESETS.join(", ")),
            )
        })?,
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let cal = match calibration {
        Some(p) => CalibrationSet::load(p).map_err(|e| CliError::io(p, e))?,
        None => CalibrationSet::default(),
    };
    let sim = simulate(&spec, &cal)?;
    sim.scenario.write_dir(out)?;
    for w in &sim.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}",
        serde_json::json!({
            "scenario": out.display().to_string(),
            "events": sim.scenario.events.len(),
            "radar_detections": sim.scenario.radar.len(),
            "truth_poses": sim.scenario.truth.len(),
        })
    );
    Ok(())
}

fn to_json(report: &MetricsReport) -> Result<String, CliError> {
    serde_json::to_string_pretty(report).map_err(|e| CliError::new("Metrics", e))
}

fn ablation_table(results: &[(AblationMode, RunResult)]) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<14} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7} {:>7} {:>9} {:>10} {:>10}",
        "mode", "rmse_m", "mean_m", "p90_m", "ev_rec", "ev_prec", "rd_rec", "rd_prec", "selection", "lat_mean_ms", "lat_p99_ms"
    );
    for (mode, r) in results {
        let m = &r.report;
        let _ = writeln!(
            t,
            "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>9.3} {:>10.3} {:>10.3}",
            mode.name(),
            m.trajectory_rmse,
            m.error.mean,
            m.error.p90,
            m.event_filter.recall,
            m.event_filter.precision,
            m.radar_filter.recall,
            m.radar_filter.precision,
            m.selection_accuracy,
            m.latency.mean_us / 1e3,
            m.latency.p99_us / 1e3,
        );
    }
    t
}

fn ablation_csv(results: &[(AblationMode, RunResult)]) -> String {
    let mut t = String::from(
        "mode,rmse_m,mean_m,median_m,p90_m,event_recall,event_precision,radar_recall,radar_precision,selection_accuracy,latency_mean_us,latency_p99_us\n",
    );
    for (mode, r) in results {
        let m = &r.report;
        let _ = writeln!(
            t,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            mode.name(),
            m.trajectory_rmse,
            m.error.mean,
            m.error.median,
            m.error.p90,
            m.event_filter.recall,
            m.event_filter.precision,
            m.radar_filter.recall,
            m.radar_filter.precision,
            m.selection_accuracy,
            m.latency.mean_us,
            m.latency.p99_us,
        );
    }
    t
}

fn cmd_ablate(args: &PipelineArgs, output: Option<&Path>) -> Result<(), CliError> {
    let mut results = Vec::new();
    for mode in AblationMode::ALL {
        let cfg = run_config(args, mode, output.map(|o| o.join(mode.name())))?;
        results.push((mode, run_pipeline(&cfg)?));
    }
    print!("{}", ablation_table(&results));
    if let Some(dir) = output {
        let path = dir.join("ablation.csv");
        fs::write(&path, ablation_csv(&results)).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

/// Empirical CDF rows `mode,error_m,cdf`.
fn error_cdf(mode: AblationMode, mut errors: Vec<f64>, out: &mut String) {
    errors.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    for (i, e) in errors.iter().enumerate() {
        let _ = writeln!(out, "{},{e},{}", mode.name(), (i + 1) as f64 / n);
    }
}

/// Histogram rows `mode,bin_start_us,bin_end_us,count` covering every sample.
fn latency_histogram(mode: AblationMode, samples: &[f64], bin_us: f64, out: &mut String) {
    let max = samples.iter().copied().fold(0.0, f64::max);
    let bins = (max / bin_us).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for s in samples {
        counts[((s / bin_us).floor() as usize).min(bins - 1)] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{c}", mode.name(), i as f64 * bin_us, (i + 1) as f64 * bin_us);
    }
}

fn cmd_plotdata(args: &PipelineArgs, modes: &[AblationMode], bin_us: f64, output: &Path) -> Result<(), CliError> {
    if !(bin_us > 0.0) {
        return Err(CliError::new("InvalidConfig", "bin width must be positive"));
    }
    let modes = if modes.is_empty() { &AblationMode::ALL[..] } else { modes };
    let truth_path = args.scenario.join("truth.csv");
    let truth = fs::File::open(&truth_path)
        .map_err(|_| CliError::new("MissingStream", format!("missing stream {}", truth_path.display())))
        .and_then(|f| read_truth_csv(f).map_err(|e| CliError::io(&truth_path, e)))?;
    let mut cdf = String::from("mode,error_m,cdf\n");
    let mut hist = String::from("mode,bin_start_us,bin_end_us,count\n");
    for &mode in modes {
        let r = run_pipeline(&run_config(args, mode, None)?)?;
        let errors = localization_errors(&r.output.rows, &truth).iter().map(|e| e.norm()).collect();
        error_cdf(mode, errors, &mut cdf);
        latency_histogram(mode, &r.output.latency_us, bin_us, &mut hist);
    }
    fs::create_dir_all(output).map_err(|e| CliError::io(output, e))?;
    for (name, text) in [("error_cdf.csv", cdf), ("latency_histogram.csv", hist)] {
        let path = output.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            preset,
            spec,
            seed,
            calibration,
            out,
        } => cmd_simulate(&preset, spec.as_deref(), seed, calibration.as_deref(), &out),
        Command::Run { args, mode, output } => {
            let r = run_pipeline(&run_config(&args, mode, output)?)?;
            println!("{}", to_json(&r.report)?);
            Ok(())
        }
        Command::Ablate { args, output } => cmd_ablate(&args, output.as_deref()),
        Command::Plotdata {
            args,
            modes,
            bin_us,
            output,
        } => cmd_plotdata(&args, &modes, bin_us, &output),
        Command::Params => {
            print!("{DEFAULT_PARAMS_TOML}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => fail(CliError::new("Usage", e.render().to_string().trim())),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail<T>(e: CliError) -> T {
    eprintln!("{}", serde_json::json!({ "error": e.kind, "message": e.message }));
    std::process::exit(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_sample_once() {
        let mut out = String::new();
        latency_histogram(AblationMode::Full, &[0.0, 249.0, 250.0, 1000.0], 250.0, &mut out);
        let counts: Vec<&str> = out.lines().map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(counts, ["2", "1", "0", "0", "1"]);
        assert!(out.starts_with("full,0,250,2\n"));
    }

    #[test]
    fn cdf_is_sorted_and_ends_at_one() {
        let mut out = String::new();
        error_cdf(AblationMode::NoCct, vec![0.3, 0.1, 0.2, 0.4], &mut out);
        assert_eq!(out, "no-cct,0.1,0.25\nno-cct,0.2,0.5\nno-cct,0.3,0.75\nno-cct,0.4,1\n");
    }

    #[test]
    fn simulator_errors_keep_their_kind() {
        assert_eq!(CliError::from(SimError::MissingStream("radar.csv".into())).kind, "MissingStream");
        assert_eq!(CliError::from(SimError::InvalidScene("x".into())).kind, "InvalidSpec");
    }
}
