//! `cablewatch`: simulate, calibrate, assess and monitor cable health.
//!
//! Everything a run produces lands under one output directory:
//!
//! ```text
//! <out>/dataset/            simulate
//! <out>/calibration.json    calibrate
//! <out>/assessment.json     assess
//! <out>/monitor.jsonl       monitor (default record file)
//! <out>/report/*.csv        report
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use anyhow::Context;
use cablewatch_core::dataset::{simulate_dataset, MANIFEST_FILE};
use cablewatch_core::scenario::CableScenario;
use cablewatch_core::workbench::{
    assess, calibrate, monitor_once, write_report, AssessmentReport, CalibrationArtifact, RunConfig,
};
use cablewatch_core::{CableState, Error, MethodId, Profile};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_SOFTWARE: u8 = 70;
const EXIT_IO: u8 = 74;

#[derive(Parser, Debug)]
#[command(name = "cablewatch", version, about = "Cable fault diagnostics workbench")]
struct Cli {
    /// Run configuration (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: cablewatch-out].
    #[arg(long, global = true, env = "CABLEWATCH_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    DetectFirst,
    LowFp,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::DetectFirst => Profile::DetectFirst,
            ProfileArg::LowFp => Profile::LowFp,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a labeled dataset for a scenario.
    Simulate(SimulateArgs),
    /// Fit thresholds, confusion models and trust weights on a dataset.
    Calibrate(CalibrateArgs),
    /// Compute the health index of a dataset (exit 0/1/2 by HI band).
    Assess(AssessArgs),
    /// Periodically simulate and assess a scenario, appending records.
    Monitor(MonitorArgs),
    /// Emit plot-ready CSVs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Instants for every method (overrides the configured counts).
    #[arg(long)]
    instances: Option<usize>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Dataset directory [default: <out>/dataset].
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Args, Debug)]
struct AssessArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Calibration artifact [default: <out>/calibration.json].
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MonitorArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    iterations: u32,
    #[arg(long, default_value_t = 0)]
    interval_ms: u64,
    /// Record file [default: <out>/monitor.jsonl].
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

struct Setup {
    run: RunConfig,
    out: PathBuf,
}

fn load_context(cli: &Cli) -> anyhow::Result<Setup> {
    let mut run = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    if let Some(p) = cli.profile {
        run.profile = p.into();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| run.out.clone())
        .unwrap_or_else(|| PathBuf::from("cablewatch-out"));
    run.out = Some(out.clone());
    Ok(Setup { run, out })
}

fn read_scenario(path: &Path) -> anyhow::Result<CableScenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    CableScenario::from_json(&text).with_context(|| format!("scenario {}", path.display()))
}

fn read_artifact(path: &Path) -> anyhow::Result<CalibrationArtifact> {
    let text = fs::read_to_string(path).with_context(|| format!("reading calibration {}", path.display()))?;
    CalibrationArtifact::from_json(&text).with_context(|| format!("calibration {}", path.display()))
}

fn scenario_path(arg: &Option<PathBuf>, run: &RunConfig) -> anyhow::Result<PathBuf> {
    arg.clone()
        .or_else(|| run.scenario.clone())
        .ok_or_else(|| usage("no scenario given (use --scenario or the config's \"scenario\")"))
}

fn dataset_dir(arg: &Option<PathBuf>, out: &Path) -> anyhow::Result<PathBuf> {
    let dir = arg.clone().unwrap_or_else(|| out.join("dataset"));
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(usage(format!("{} is not a dataset directory (no {MANIFEST_FILE})", dir.display())));
    }
    Ok(dir)
}

fn print_weights(a: &CalibrationArtifact) {
    println!("velocity factor {:.4}{}", a.velocity_factor, if a.velocity_factor_calibrated { "" } else { " (nominal)" });
    for m in MethodId::ALL {
        let c = a.method(m);
        println!(
            "{:<7} th_s {:<10.5} th_l {:<10.5} weight {:.4}",
            m.as_str(),
            c.thresholds.th_s,
            c.thresholds.th_l,
            a.weights.w[m.index()]
        );
    }
}

fn print_assessment(r: &AssessmentReport) {
    println!(
        "{} ({} partition, {} instants, profile {})",
        r.scenario_id, r.partition, r.instants, r.profile
    );
    println!(
        "HI {:.1}  [sparam {:.1}, snr {:.1}, omtdr {:.1}]  ground truth {:.1}  band {:?}",
        r.health.hi, r.health.hi_sparam, r.health.hi_snr, r.health.hi_omtdr, r.ground_truth_hi, r.band
    );
    for m in &r.methods {
        let acc: Vec<String> = CableState::ALL
            .iter()
            .map(|s| match m.accuracy_by_state[s.index()] {
                Some(a) => format!("{s} {a:.2}"),
                None => format!("{s} -"),
            })
            .collect();
        println!("{:<7} verdicts {:?}  accuracy {}", m.method.as_str(), m.verdict_counts, acc.join(", "));
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let Setup { mut run, out } = load_context(&cli)?;
    match cli.command {
        Command::Simulate(a) => {
            let path = scenario_path(&a.scenario, &run)?;
            let scenario = read_scenario(&path)?;
            if let Some(n) = a.instances {
                run.instances = [n; 3];
            }
            run.validate()?;
            let dir = out.join("dataset");
            let m = simulate_dataset(&scenario, run.instances, run.seed, &dir)?;
            let c = m.state_counts();
            println!(
                "wrote {} instants to {} (healthy {}, small fault {}, large fault {})",
                m.instants.len(),
                dir.display(),
                c[0],
                c[1],
                c[2]
            );
        }
        Command::Calibrate(a) => {
            if let Some(s) = a.split {
                run.split_fraction = s;
            }
            run.validate()?;
            let dir = dataset_dir(&a.dataset, &out)?;
            let artifact = calibrate(&dir, &run)?;
            fs::create_dir_all(&out)?;
            let path = out.join("calibration.json");
            fs::write(&path, artifact.to_json()?)?;
            print_weights(&artifact);
            println!("wrote {}", path.display());
        }
        Command::Assess(a) => {
            let dir = dataset_dir(&a.dataset, &out)?;
            let artifact = read_artifact(&a.calibration.unwrap_or_else(|| out.join("calibration.json")))?;
            let report = assess(&dir, &artifact)?;
            fs::create_dir_all(&out)?;
            let path = out.join("assessment.json");
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            fs::write(&path, text)?;
            print_assessment(&report);
            return Ok(report.band.exit_code() as u8);
        }
        Command::Monitor(a) => {
            if a.iterations == 0 {
                return Err(usage("--iterations must be at least 1"));
            }
            let path = scenario_path(&a.scenario, &run)?;
            let artifact = read_artifact(&a.calibration.unwrap_or_else(|| out.join("calibration.json")))?;
            let records = a.records.unwrap_or_else(|| out.join("monitor.jsonl"));
            for i in 0..a.iterations {
                if i > 0 && a.interval_ms > 0 {
                    thread::sleep(Duration::from_millis(a.interval_ms));
                }
                let r = monitor_once(&path, &artifact, &run, &records)?;
                println!(
                    "#{} {} t={} HI {:.1} [sparam {:.1}, snr {:.1}, omtdr {:.1}]",
                    r.iteration, r.scenario_id, r.timestamp_ms, r.hi, r.hi_sparam, r.hi_snr, r.hi_omtdr
                );
            }
        }
        Command::Report(a) => {
            if a.dataset.is_none() && a.calibration.is_none() && a.records.is_none() {
                return Err(usage("report needs --dataset, --calibration or --records"));
            }
            let dataset = a.dataset.map(|d| dataset_dir(&Some(d), &out)).transpose()?;
            let artifact = a.calibration.as_deref().map(read_artifact).transpose()?;
            let files = write_report(
                dataset.as_deref(),
                artifact.as_ref(),
                a.records.as_deref(),
                &run,
                &out.join("report"),
            )?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(0)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Validation(_)) => EXIT_USAGE,
        Some(Error::Parse { .. } | Error::Json(_) | Error::Version(_)) => EXIT_DATA,
        Some(Error::Io(_)) => EXIT_IO,
        Some(_) => EXIT_SOFTWARE,
        None if e.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_SOFTWARE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
