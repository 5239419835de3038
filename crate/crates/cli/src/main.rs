use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use softlab_core::ahp::{self, AhpError};
use softlab_core::bench::{self, BenchError};
use softlab_core::dynamics::SimState;
use softlab_core::model::IntegratorKind;
use softlab_core::statepack::{self, Recorder, Recording, Snapshot, StatepackError};
use softlab_core::stats::compute_energy;
use softlab_core::topology::{import_scene, SceneError};
use softlab_service::{Pace, ServiceConfig};

#[derive(Parser)]
#[command(name = "softlab", version, about = "Mass-spring soft-body simulation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scene headless and write the requested artifacts.
    Run(RunArgs),
    /// Compare integrators over a grid of time steps.
    Bench(BenchArgs),
    /// Serve a scene for live steering over websockets.
    Serve(ServeArgs),
    /// Play back a recording, export it, or continue from its last state.
    Replay(ReplayArgs),
    /// Cost-value prioritization from two pairwise-comparison matrices.
    Ahp(AhpArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("length").required(true).args(["steps", "seconds"]))]
struct RunArgs {
    scene: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    /// Simulated time; converted to floor(T / dt) steps.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    integrator: Option<IntegratorKind>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, requires = "interval")]
    record: Option<PathBuf>,
    #[arg(long, requires = "record")]
    interval: Option<u64>,
    /// Exports the recording (or the final state) as CSV tables.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    scene: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "euler_explicit,euler_semi_implicit,midpoint,rk4")]
    integrators: Vec<IntegratorKind>,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    dts: Vec<f64>,
    #[arg(long)]
    horizon: f64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    scene: PathBuf,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value_t = 30.0)]
    frame_rate: f64,
    #[arg(long, default_value = "127.0.0.1")]
    address: IpAddr,
}

#[derive(Args)]
struct ReplayArgs {
    /// A recording, or a single state dump.
    recording: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Resume from the last snapshot and run N more steps.
    #[arg(long = "continue", value_name = "N")]
    continue_steps: Option<u64>,
    /// Where to write the state reached with --continue.
    #[arg(long, requires = "continue_steps")]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct AhpArgs {
    #[arg(long)]
    value: PathBuf,
    #[arg(long)]
    cost: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Runtime(String),
    Usage(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Runtime(m) | Failure::Usage(m) | Failure::Validation(m) => m,
        }
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<StatepackError> for Failure {
    fn from(e: StatepackError) -> Self {
        match e {
            StatepackError::Io { .. } | StatepackError::Csv { .. } => {
                Failure::Runtime(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<AhpError> for Failure {
    fn from(e: AhpError) -> Self {
        match e {
            AhpError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidArgument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Cmd::Run(a) => run(a),
        Cmd::Bench(a) => bench_cmd(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Replay(a) => replay(a),
        Cmd::Ahp(a) => ahp_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let mut scene = import_scene(&a.scene)?;
    if let Some(dt) = a.dt {
        scene.params.dt = dt;
    }
    if let Some(k) = a.integrator {
        scene.params.integrator = k;
    }
    scene.params.check().map_err(Failure::Usage)?;
    let steps = match (a.steps, a.seconds) {
        (Some(n), None) => n,
        (None, Some(t)) if t.is_finite() && t >= 0.0 => bench::step_count(t, scene.params.dt),
        (None, Some(t)) => return Err(Failure::Usage(format!("--seconds must be >= 0, got {t}"))),
        _ => return Err(Failure::Usage("give exactly one of --steps, --seconds".into())),
    };

    let mut state = SimState::new(scene.body.clone(), scene.params.clone());
    let mut recorder = Recorder::default();
    if let Some(interval) = a.interval {
        recorder
            .start(&scene.name, interval, &state)
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let mut diverged_at = None;
    for _ in 0..steps {
        match state.step() {
            Ok(r) if !r.diverged => recorder.observe(&state),
            _ => {
                diverged_at = Some(state.step_index());
                break;
            }
        }
    }

    let final_snapshot = statepack::take_snapshot(&state);
    if let Some(path) = &a.dump {
        report_location(statepack::dump(&final_snapshot, path)?);
    }
    let recording = recorder.abandon();
    if let (Some(path), Some(rec)) = (&a.record, &recording) {
        report_location(statepack::dump_recording(rec, path)?);
    }
    if let Some(path) = &a.csv {
        let rows = match &recording {
            Some(rec) => rec.snapshots.as_slice(),
            None => std::slice::from_ref(&final_snapshot),
        };
        let (p, s) = statepack::export_csv(rows, path)?;
        eprintln!("wrote {} and {}", p.display(), s.display());
    }

    let energy = compute_energy(&state.body, &state.params);
    println!(
        "scene={} integrator={} steps={} time={} energy={:.12e} diverged={}",
        scene.name,
        state.params.integrator,
        state.step_index(),
        state.time,
        energy.total,
        diverged_at.is_some()
    );
    match diverged_at {
        Some(step) => Err(Failure::Runtime(format!(
            "simulation diverged at step {step}; state up to the last finite step was written"
        ))),
        None => Ok(()),
    }
}

fn report_location(loc: statepack::DumpLocation) {
    if loc.fallback {
        eprintln!("wrote {} (requested path was unwritable)", loc.path.display());
    }
}

fn bench_cmd(a: BenchArgs) -> Result<(), Failure> {
    if a.dts.is_empty() {
        return Err(Failure::Usage("--dts needs at least one time step".into()));
    }
    if a.integrators.is_empty() {
        return Err(Failure::Usage("--integrators needs at least one integrator".into()));
    }
    let scene = import_scene(&a.scene)?;
    let rows = bench::run_comparison(&scene, &a.integrators, &a.dts, a.horizon)?;
    match &a.report {
        Some(path) => bench::write_report_file(&rows, path),
        None => bench::write_report(&rows, io::stdout().lock()),
    }
    .map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let scene = import_scene(&a.scene)?;
    if !(a.frame_rate.is_finite() && a.frame_rate > 0.0) {
        return Err(Failure::Usage(format!("--frame-rate must be > 0, got {}", a.frame_rate)));
    }
    tracing_subscriber::fmt().with_writer(io::stderr).init();
    let config = ServiceConfig {
        address: SocketAddr::new(a.address, a.port),
        frame_rate: a.frame_rate,
        pace: Pace::Realtime,
        ..ServiceConfig::default()
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let handle = softlab_service::start(scene, config)
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("listening on ws://{}/ws", handle.local_addr());
        io::stdout().flush()?;
        tokio::signal::ctrl_c().await?;
        handle
            .shutdown()
            .await
            .map_err(|e| Failure::Runtime(e.to_string()))
    })
}

fn read_playback(path: &Path) -> Result<Recording, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Validation(format!("{} is not JSON: {e}", path.display())))?;
    if value.get("snapshots").is_some() {
        Ok(statepack::load_recording(path)?)
    } else {
        let snapshot: Snapshot = statepack::load(path)?;
        Ok(Recording {
            scene_name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            interval_steps: 1,
            snapshots: vec![snapshot],
        })
    }
}

fn replay(a: ReplayArgs) -> Result<(), Failure> {
    let recording = read_playback(&a.recording)?;
    let frames: Vec<&Snapshot> = statepack::replay(&recording)?.collect();
    let first = frames[0];
    let last = frames[frames.len() - 1];
    for s in &frames {
        statepack::restore(s)?;
    }
    if let Some(path) = &a.csv {
        let (p, s) = statepack::export_csv(&recording.snapshots, path)?;
        eprintln!("wrote {} and {}", p.display(), s.display());
    }
    let mut summary = format!(
        "scene={} snapshots={} steps={}..{}",
        recording.scene_name,
        frames.len(),
        first.step_index,
        last.step_index
    );
    if let Some(n) = a.continue_steps {
        let mut state = statepack::restore(last)?;
        let outcome = state.run(n);
        if let Some(path) = &a.dump {
            report_location(statepack::dump(&statepack::take_snapshot(&state), path)?);
        }
        let energy = compute_energy(&state.body, &state.params);
        summary.push_str(&format!(
            " continued_to={} energy={:.12e} diverged={}",
            state.step_index(),
            energy.total,
            outcome.is_err()
        ));
        println!("{summary}");
        return outcome.map_err(|e| Failure::Runtime(e.to_string()));
    }
    println!("{summary}");
    Ok(())
}

fn ahp_cmd(a: AhpArgs) -> Result<(), Failure> {
    let value = ahp::parse_matrix(&a.value)?;
    let cost = ahp::parse_matrix(&a.cost)?;
    let report = ahp::analyze(&value, &cost)?;
    match &a.out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))?;
            ahp::write_report(&report, BufWriter::new(file))?;
        }
        None => ahp::write_report(&report, io::stdout().lock())?,
    }
    Ok(())
}
