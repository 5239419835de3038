//! The stepping context: owns the simulation, applies commands between steps
//! and produces frames. Everything here is synchronous and deterministic given
//! the order of calls; the server module wraps it in a thread.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use softlab_core::dynamics::{Pull, SimState};
use softlab_core::model::{validate, Attachment, SimParams, Vec3};
use softlab_core::statepack::{self, Recorder};
use softlab_core::stats::{compute_energy, EnergyReport, PerformanceMonitor, PerformanceReport};
use softlab_core::topology::{set_lod, Scene};

use crate::protocol::{Command, FrameMessage, Role, ServerMessage, SessionId};

/// Stiffness of the pointer-drag pull, N/m.
pub const DRAG_STIFFNESS: f64 = 50.0;

pub const INSUFFICIENT_PERMISSIONS: &str = "insufficient permissions";
pub const EDITING_DISABLED: &str =
    "editing is disabled while the simulation is diverged; reset or load a snapshot";

const STATS_WINDOW: usize = 256;

/// One applied command. `step` is the step index at the moment it was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub session: SessionId,
    pub seq: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("log entry {index} is scheduled for step {step} but the simulation cannot advance past step {stuck_at}")]
    Stalled { index: usize, step: u64, stuck_at: u64 },
    #[error("log entry {index} scheduled for step {step} lies behind the current step {current}")]
    OutOfOrder { index: usize, step: u64, current: u64 },
    #[error("log entry {index} ({command}) was rejected on replay: {reason}")]
    Rejected {
        index: usize,
        command: &'static str,
        reason: String,
    },
}

/// Immutable post-step view shared with every subscriber.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub step_index: u64,
    pub time: f64,
    pub positions: Vec<Vec3>,
    pub topology_version: u64,
    pub spring_index_pairs: Arc<Vec<[usize; 2]>>,
    pub diverged: bool,
    pub paused: bool,
    pub recording: bool,
    pub params: SimParams,
    pub stats: Option<PerformanceReport>,
    pub energy: EnergyReport,
}

impl Frame {
    pub fn to_message(&self, seq: u64, include_topology: bool) -> FrameMessage {
        FrameMessage {
            seq,
            step_index: self.step_index,
            time: self.time,
            positions: self.positions.clone(),
            topology_version: self.topology_version,
            spring_index_pairs: include_topology.then(|| self.spring_index_pairs.to_vec()),
            diverged: self.diverged,
            paused: self.paused,
            recording: self.recording,
            params: self.params.clone(),
            stats: self.stats.clone(),
            energy: self.energy,
        }
    }
}

#[derive(Debug, Clone)]
struct Session {
    id: SessionId,
    role: Role,
    wants_control: bool,
}

pub struct Engine {
    scene: Scene,
    state: SimState,
    paused: bool,
    topology_version: u64,
    spring_pairs: Arc<Vec<[usize; 2]>>,
    particle_count: usize,
    recorder: Recorder,
    sessions: Vec<Session>,
    log: Vec<LogEntry>,
    log_sink: Option<Box<dyn Write + Send>>,
    monitor: PerformanceMonitor,
    stats: Option<PerformanceReport>,
    output_dir: PathBuf,
}

fn pairs_of(state: &SimState) -> Vec<[usize; 2]> {
    state.body.springs.iter().map(|s| [s.a, s.b]).collect()
}

impl Engine {
    pub fn new(scene: Scene) -> Self {
        let state = SimState::new(scene.body.clone(), scene.params.clone());
        let spring_pairs = Arc::new(pairs_of(&state));
        let particle_count = state.body.particles.len();
        Self {
            scene,
            state,
            paused: false,
            topology_version: 0,
            spring_pairs,
            particle_count,
            recorder: Recorder::default(),
            sessions: Vec::new(),
            log: Vec::new(),
            log_sink: None,
            monitor: PerformanceMonitor::with_capacity(STATS_WINDOW),
            stats: None,
            output_dir: PathBuf::from("."),
        }
    }

    /// Directory for dumps and recordings requested without a path.
    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = dir.into();
        self
    }

    /// Also appends every log entry as a JSON line to `sink`.
    pub fn with_log_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.log_sink = Some(sink);
        self
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn topology_version(&self) -> u64 {
        self.topology_version
    }

    pub fn can_step(&self) -> bool {
        !self.paused && !self.state.counters.diverged
    }

    /// Registers a session. The first live controller request wins; others
    /// join as viewers and get a warning text.
    pub fn register(&mut self, id: SessionId, request: Role) -> (Role, Option<String>) {
        let wants_control = request == Role::Controller;
        let granted = if wants_control && self.controller().is_none() {
            Role::Controller
        } else {
            Role::Viewer
        };
        self.sessions.push(Session {
            id,
            role: granted,
            wants_control,
        });
        let warning = (wants_control && granted == Role::Viewer)
            .then(|| "a controller is already connected; joined as viewer".to_string());
        (granted, warning)
    }

    /// Removes a session. If it was the controller, the earliest viewer that
    /// asked for control is promoted and returned.
    pub fn unregister(&mut self, id: SessionId) -> Option<SessionId> {
        let pos = self.sessions.iter().position(|s| s.id == id)?;
        let gone = self.sessions.remove(pos);
        if gone.role != Role::Controller {
            return None;
        }
        let next = self.sessions.iter_mut().find(|s| s.wants_control)?;
        next.role = Role::Controller;
        Some(next.id)
    }

    pub fn role(&self, id: SessionId) -> Option<Role> {
        self.sessions.iter().find(|s| s.id == id).map(|s| s.role)
    }

    pub fn controller(&self) -> Option<SessionId> {
        self.sessions
            .iter()
            .find(|s| s.role == Role::Controller)
            .map(|s| s.id)
    }

    /// Applies one command from `session` and returns the reply for it.
    pub fn handle(&mut self, session: SessionId, seq: u64, command: Command) -> ServerMessage {
        match self.role(session) {
            None => {
                return ServerMessage::Error {
                    seq,
                    message: format!("unknown session {session}"),
                }
            }
            Some(Role::Viewer) => {
                return ServerMessage::Warning {
                    seq,
                    message: INSUFFICIENT_PERMISSIONS.into(),
                }
            }
            Some(Role::Controller) => {}
        }
        if self.state.counters.diverged && !allowed_while_diverged(&command) {
            return ServerMessage::Warning {
                seq,
                message: EDITING_DISABLED.into(),
            };
        }
        let step = self.state.step_index();
        match self.apply(&command) {
            Ok(detail) => {
                self.append_log(LogEntry {
                    step,
                    session,
                    seq,
                    command,
                });
                ServerMessage::Ack {
                    seq,
                    effective_step: self.state.step_index(),
                    detail,
                }
            }
            Err(message) => ServerMessage::Error { seq, message },
        }
    }

    fn append_log(&mut self, entry: LogEntry) {
        if let Some(sink) = &mut self.log_sink {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                tracing::warn!("command log write failed: {e}");
            }
        }
        self.log.push(entry);
    }

    /// Applies a command without permission checks. Returns an optional
    /// detail for the Ack, or the rejection reason.
    pub fn apply(&mut self, command: &Command) -> Result<Option<String>, String> {
        let n = self.state.body.particles.len();
        let check_id = |id: usize| {
            if id < n {
                Ok(())
            } else {
                Err(format!("particle {id} does not exist (body has {n})"))
            }
        };
        match command {
            Command::SetParam { field, value } => {
                self.state.set_param(field, value).map_err(|e| e.to_string())?;
                Ok(None)
            }
            Command::SetIntegrator { kind } => {
                self.state.set_integrator(*kind);
                Ok(None)
            }
            Command::SetLod { level } => {
                let body = set_lod(&self.state.body, *level).map_err(|e| e.to_string())?;
                self.state.replace_body(body);
                self.refresh_topology();
                Ok(None)
            }
            Command::Pause => {
                self.paused = true;
                Ok(None)
            }
            Command::Resume => {
                self.paused = false;
                Ok(None)
            }
            Command::Reset => {
                self.state = SimState::new(self.scene.body.clone(), self.scene.params.clone());
                self.monitor.clear();
                let dropped = self.recorder.abandon().is_some();
                self.refresh_topology();
                Ok(dropped.then(|| "active recording discarded".into()))
            }
            Command::Dump { path } => {
                let path = self.resolve(path.as_deref(), || {
                    format!("{}_step{}.json", self.scene.name, self.state.step_index())
                });
                let loc = statepack::dump(&statepack::take_snapshot(&self.state), &path)
                    .map_err(|e| e.to_string())?;
                Ok(Some(describe(&loc)))
            }
            Command::RecordStart { interval_steps } => {
                self.recorder
                    .start(&self.scene.name, *interval_steps, &self.state)
                    .map_err(|e| e.to_string())?;
                Ok(None)
            }
            Command::RecordStop { path } => {
                let recording = self.recorder.stop().map_err(|e| e.to_string())?;
                let first = recording.snapshots.first().map_or(0, |s| s.step_index);
                let path = self.resolve(path.as_deref(), || {
                    format!(
                        "{}_recording_{}-{}.json",
                        self.scene.name,
                        first,
                        self.state.step_index()
                    )
                });
                let loc =
                    statepack::dump_recording(&recording, &path).map_err(|e| e.to_string())?;
                Ok(Some(describe(&loc)))
            }
            Command::LoadSnapshot { path } => {
                let snapshot = statepack::load(path).map_err(|e| e.to_string())?;
                self.state = statepack::restore(&snapshot).map_err(|e| e.to_string())?;
                self.monitor.clear();
                let dropped = self.recorder.abandon().is_some();
                self.refresh_topology();
                Ok(dropped.then(|| "active recording discarded".into()))
            }
            Command::Attach {
                particle_id,
                anchor,
                mode,
            } => {
                check_id(*particle_id)?;
                let mut body = self.state.body.clone();
                body.attachments.retain(|a| a.particle_id != *particle_id);
                body.attachments.push(Attachment {
                    particle_id: *particle_id,
                    anchor: *anchor,
                    mode: *mode,
                });
                let report = validate(&body);
                if !report.is_valid() {
                    return Err(report.to_string());
                }
                body.snap_hard_pins();
                self.state.body = body;
                Ok(None)
            }
            Command::Detach { particle_id } => {
                check_id(*particle_id)?;
                let before = self.state.body.attachments.len();
                self.state
                    .body
                    .attachments
                    .retain(|a| a.particle_id != *particle_id);
                if self.state.body.attachments.len() == before {
                    return Err(format!("particle {particle_id} has no attachment"));
                }
                Ok(None)
            }
            Command::DragForce {
                particle_id,
                target,
                active,
            } => {
                check_id(*particle_id)?;
                if !target.is_finite() {
                    return Err("drag target must be finite".into());
                }
                let pull = active.then_some(Pull {
                    particle_id: *particle_id,
                    target: *target,
                    stiffness: DRAG_STIFFNESS,
                });
                self.state.set_pull(pull, *particle_id);
                Ok(None)
            }
        }
    }

    fn resolve(&self, requested: Option<&str>, default: impl FnOnce() -> String) -> PathBuf {
        match requested {
            Some(p) => PathBuf::from(p),
            None => self.output_dir.join(default()),
        }
    }

    fn refresh_topology(&mut self) {
        let pairs = pairs_of(&self.state);
        let count = self.state.body.particles.len();
        if pairs != *self.spring_pairs || count != self.particle_count {
            self.topology_version += 1;
            self.spring_pairs = Arc::new(pairs);
            self.particle_count = count;
        }
    }

    /// Advances one step if running. Returns true if a step was taken.
    pub fn step(&mut self) -> bool {
        if !self.can_step() {
            return false;
        }
        let started = Instant::now();
        let result = self.state.step();
        self.monitor.sample_step(started.elapsed());
        match result {
            Ok(report) if !report.diverged => {
                self.recorder.observe(&self.state);
                true
            }
            Ok(_) => {
                tracing::warn!(step = self.state.step_index(), "simulation diverged");
                true
            }
            Err(_) => false,
        }
    }

    /// Recomputes the timing summary carried by frames.
    pub fn refresh_stats(&mut self) {
        self.stats = self
            .monitor
            .report(
                STATS_WINDOW,
                self.state.counters.force_evaluations,
                &self.state.body,
            )
            .ok();
    }

    pub fn frame(&self) -> Frame {
        Frame {
            step_index: self.state.step_index(),
            time: self.state.time,
            positions: self.state.body.particles.iter().map(|p| p.position).collect(),
            topology_version: self.topology_version,
            spring_index_pairs: Arc::clone(&self.spring_pairs),
            diverged: self.state.counters.diverged,
            paused: self.paused,
            recording: self.recorder.is_active(),
            params: self.state.params.clone(),
            stats: self.stats.clone(),
            energy: compute_energy(&self.state.body, &self.state.params),
        }
    }
}

fn allowed_while_diverged(command: &Command) -> bool {
    matches!(
        command,
        Command::Reset
            | Command::LoadSnapshot { .. }
            | Command::Dump { .. }
            | Command::RecordStop { .. }
            | Command::Pause
            | Command::Resume
    )
}

fn describe(loc: &statepack::DumpLocation) -> String {
    if loc.fallback {
        format!("{} (requested path unwritable)", loc.path.display())
    } else {
        loc.path.display().to_string()
    }
}

/// Re-applies a command log against a fresh copy of `scene`, stepping between
/// entries exactly as the live engine did, then runs on to `until_step`.
/// File-writing commands are skipped.
pub fn replay_log(scene: &Scene, entries: &[LogEntry], until_step: u64) -> Result<Engine, ReplayError> {
    let mut engine = Engine::new(scene.clone());
    for (index, entry) in entries.iter().enumerate() {
        let current = engine.state.step_index();
        if entry.step < current {
            return Err(ReplayError::OutOfOrder {
                index,
                step: entry.step,
                current,
            });
        }
        while engine.state.step_index() < entry.step {
            if !engine.step() {
                return Err(ReplayError::Stalled {
                    index,
                    step: entry.step,
                    stuck_at: engine.state.step_index(),
                });
            }
        }
        if entry.command.is_io_only() {
            continue;
        }
        engine
            .apply(&entry.command)
            .map_err(|reason| ReplayError::Rejected {
                index,
                command: entry.command.name(),
                reason,
            })?;
    }
    while engine.state.step_index() < until_step && engine.step() {}
    Ok(engine)
}

/// Reads a JSON-lines command log.
pub fn read_log(path: impl AsRef<Path>) -> std::io::Result<Vec<LogEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}
