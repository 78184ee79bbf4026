use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rigigrip::harness::{self, ForceSnapshot, RunLog, RunReport, ScenarioConfig};

#[derive(Parser)]
#[command(name = "rigigrip", version, about = "Multi-finger grasp force planning and manipulation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Line-delimited JSON run log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Fail on any constraint-margin warning.
        #[arg(long)]
        strict: bool,
    },
    /// Rank test of a contact framework file.
    CheckRigidity { framework: PathBuf },
    /// Plan contact forces for one snapshot.
    PlanForces { snapshot: PathBuf },
    /// Run a scenario over a parameter grid.
    Sweep {
        scenario: PathBuf,
        /// Dotted parameter name, e.g. plant.mass or friction.mu.
        #[arg(long)]
        param: String,
        /// a:b:n
        #[arg(long)]
        range: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Summarize a run log.
    Report {
        runlog: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Observation noise on the object position (m).
    #[arg(long)]
    noise_std: Option<f64>,
    /// Iteration cap per waypoint.
    #[arg(long)]
    max_iter: Option<usize>,
}

impl Overrides {
    fn apply(&self, sc: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(n) = self.noise_std {
            sc.plant.noise_position_std = n;
        }
        if let Some(m) = self.max_iter {
            sc.mapper.iter = m;
        }
    }
}

fn load_scenario(path: &Path, o: &Overrides) -> Result<ScenarioConfig> {
    let mut sc = ScenarioConfig::load(path)?;
    o.apply(&mut sc);
    sc.validate()?;
    Ok(sc)
}

fn write_csv(log: &RunLog, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    log.write_csv(BufWriter::new(f))?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Run { scenario, overrides, log, csv, strict } => {
            let sc = load_scenario(&scenario, &overrides)?;
            let run = harness::run_scenario(&sc)?;
            if let Some(p) = log {
                let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                run.write_jsonl(BufWriter::new(f))?;
            }
            if let Some(p) = csv {
                write_csv(&run, &p)?;
            }
            let report = RunReport::from_log(&run);
            write!(out, "{}", report.render())?;
            for r in &run.records {
                for w in &r.warnings {
                    eprintln!("warning: iteration {}: {w}", r.iteration);
                }
            }
            Ok(report.success && !(strict && report.warnings > 0))
        }
        Command::CheckRigidity { framework } => {
            let ev = harness::check_framework(&framework)?;
            let m = ev.matrix.ncols() / 3;
            writeln!(out, "vertices {m}, edges {}", ev.matrix.nrows())?;
            writeln!(out, "rank {} (need {})", ev.rank, (3 * m).saturating_sub(6))?;
            writeln!(out, "{}", if ev.is_rigid { "rigid" } else { "not rigid" })?;
            Ok(ev.is_rigid)
        }
        Command::PlanForces { snapshot } => {
            let s = ForceSnapshot::load(&snapshot)?;
            let plan = harness::plan_snapshot(&s)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&plan)?)?;
            Ok(true)
        }
        Command::Sweep { scenario, param, range, overrides, csv } => {
            let sc = load_scenario(&scenario, &overrides)?;
            let values = harness::parse_range(&range)?;
            let points = harness::run_sweep(&sc, &param, &values)?;
            writeln!(out, "{:>12}  {:<8} {:>12}  detail", param, "result", "max err mm")?;
            for p in &points {
                writeln!(
                    out,
                    "{:>12.6}  {:<8} {:>12.4}  {}",
                    p.value,
                    if p.success { "ok" } else { "FAIL" },
                    p.max_final_error * 1e3,
                    p.failure.as_deref().unwrap_or("")
                )?;
            }
            match harness::success_band(&points) {
                Some((a, b)) => writeln!(out, "success band {param} in [{a}, {b}]")?,
                None => writeln!(out, "no successful runs")?,
            }
            if let Some(p) = csv {
                let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                let mut w = csv::Writer::from_writer(BufWriter::new(f));
                w.write_record([
                    "value",
                    "success",
                    "max_final_error_m",
                    "iterations",
                    "slip",
                    "deformation",
                    "drop",
                    "failure",
                ])?;
                for pt in &points {
                    w.write_record([
                        pt.value.to_string(),
                        pt.success.to_string(),
                        pt.max_final_error.to_string(),
                        pt.iterations.to_string(),
                        pt.flags.slip.to_string(),
                        pt.flags.deformation.to_string(),
                        pt.flags.drop.to_string(),
                        pt.failure.clone().unwrap_or_default(),
                    ])?;
                }
                w.flush()?;
            }
            Ok(points.iter().all(|p| p.success))
        }
        Command::Report { runlog, csv } => {
            let f = File::open(&runlog).with_context(|| format!("opening {}", runlog.display()))?;
            let log = RunLog::read_jsonl(BufReader::new(f))?;
            if let Some(p) = csv {
                write_csv(&log, &p)?;
            }
            let report = RunReport::from_log(&log);
            write!(out, "{}", report.render())?;
            Ok(report.success)
        }
    }
}

/// Output cut short by a closed pipe (e.g. `| head`) is not an error.
fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
