//! State dumps, reload, recording, replay and CSV export.
//!
//! Snapshots are JSON with shortest round-trip float formatting, so
//! `load(dump(s)) == s` bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SimState, StepCounters, DEGENERATE_LENGTH};
use crate::model::{
    validate, Attachment, Dimensionality, Face, ForceBreakdown, Particle, SimParams, SoftBody,
    Spring, SpringKind, ValidationReport, Vec3,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub id: usize,
    pub mass: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub pinned: bool,
    pub force_breakdown: ForceBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpringState {
    pub id: usize,
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
    pub current_length: f64,
    pub extension: f64,
    pub axial_force_magnitude: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub kind: SpringKind,
}

/// Topology metadata needed to rebuild a full body on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyInfo {
    pub dimensionality: Dimensionality,
    pub lod: u32,
    pub faces: Vec<Face>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub schema_version: u32,
    pub time: f64,
    pub step_index: u64,
    pub params: SimParams,
    pub particles: Vec<ParticleState>,
    pub springs: Vec<SpringState>,
    pub attachments: Vec<Attachment>,
    pub counters: StepCounters,
    pub topology: TopologyInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub scene_name: String,
    pub interval_steps: u64,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, thiserror::Error)]
pub enum StatepackError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path} at `{field}`: {message}")]
    Parse {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("schema version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("snapshot does not describe a valid body:\n{0}")]
    InvalidBody(ValidationReport),
    #[error("a recording is already active (started at step {started_at})")]
    AlreadyRecording { started_at: u64 },
    #[error("no recording is active")]
    NotRecording,
    #[error("recording interval must be >= 1 step")]
    ZeroInterval,
    #[error("recording holds no snapshots")]
    EmptyRecording,
    #[error("recording snapshots are not evenly spaced: {0}")]
    BadStride(String),
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StatepackError + '_ {
    move |source| StatepackError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Captures the full state, including the per-source force breakdown.
pub fn take_snapshot(state: &SimState) -> Snapshot {
    let body = &state.body;
    let forces = state.force_breakdown();
    let particles = body
        .particles
        .iter()
        .zip(forces.per_particle)
        .map(|(p, force_breakdown)| ParticleState {
            id: p.id,
            mass: p.mass,
            position: p.position,
            velocity: p.velocity,
            pinned: p.pinned,
            force_breakdown,
        })
        .collect();
    let springs = body
        .springs
        .iter()
        .map(|s| {
            let (pa, pb) = (&body.particles[s.a], &body.particles[s.b]);
            let delta = pb.position - pa.position;
            let current_length = delta.norm();
            let extension = current_length - s.rest_length;
            let axial = if current_length < DEGENERATE_LENGTH {
                0.0
            } else {
                let dir = delta / current_length;
                state.params.stiffness_scale * s.stiffness * extension
                    + state.params.damping_scale * s.damping * (pb.velocity - pa.velocity).dot(dir)
            };
            SpringState {
                id: s.id,
                a: s.a,
                b: s.b,
                rest_length: s.rest_length,
                current_length,
                extension,
                axial_force_magnitude: axial.abs(),
                stiffness: s.stiffness,
                damping: s.damping,
                kind: s.kind,
            }
        })
        .collect();
    Snapshot {
        schema_version: SCHEMA_VERSION,
        time: state.time,
        step_index: state.step_index(),
        params: state.params.clone(),
        particles,
        springs,
        attachments: body.attachments.clone(),
        counters: state.counters.clone(),
        topology: TopologyInfo {
            dimensionality: body.dimensionality,
            lod: body.lod,
            faces: body.faces.clone(),
        },
    }
}

impl Snapshot {
    pub fn body(&self) -> SoftBody {
        SoftBody {
            particles: self
                .particles
                .iter()
                .map(|p| Particle {
                    id: p.id,
                    mass: p.mass,
                    position: p.position,
                    velocity: p.velocity,
                    pinned: p.pinned,
                })
                .collect(),
            springs: self
                .springs
                .iter()
                .map(|s| Spring {
                    id: s.id,
                    a: s.a,
                    b: s.b,
                    rest_length: s.rest_length,
                    stiffness: s.stiffness,
                    damping: s.damping,
                    kind: s.kind,
                })
                .collect(),
            faces: self.topology.faces.clone(),
            dimensionality: self.topology.dimensionality,
            lod: self.topology.lod,
            attachments: self.attachments.clone(),
        }
    }
}

/// Rebuilds a steppable state from a snapshot.
pub fn restore(snapshot: &Snapshot) -> Result<SimState, StatepackError> {
    let body = snapshot.body();
    let report = validate(&body);
    if !report.is_valid() {
        return Err(StatepackError::InvalidBody(report));
    }
    let collision = snapshot
        .particles
        .iter()
        .map(|p| p.force_breakdown.collision)
        .collect();
    Ok(SimState {
        body,
        params: snapshot.params.clone(),
        counters: snapshot.counters.clone(),
        time: snapshot.time,
        collision,
        pulls: Vec::new(),
    })
}

/// Where a dump ended up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpLocation {
    pub path: PathBuf,
    /// True when the requested path was unwritable and the file went to the
    /// platform temporary directory instead.
    pub fallback: bool,
}

fn write_atomic(bytes: &[u8], path: &Path) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn fallback_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "softlab-dump.json".into());
    std::env::temp_dir().join(name)
}

/// Writes `value` as JSON to `path`, atomically via a sibling temp file.
/// Falls back to the temporary directory if `path` is unwritable.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<DumpLocation, StatepackError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| StatepackError::Parse {
        path: path.to_path_buf(),
        field: String::new(),
        message: e.to_string(),
    })?;
    match write_atomic(&bytes, path) {
        Ok(()) => Ok(DumpLocation {
            path: path.to_path_buf(),
            fallback: false,
        }),
        Err(primary) => {
            let alt = fallback_path(path);
            eprintln!(
                "warning: cannot write {}: {primary}; writing {} instead",
                path.display(),
                alt.display()
            );
            write_atomic(&bytes, &alt).map_err(io_err(&alt))?;
            Ok(DumpLocation {
                path: alt,
                fallback: true,
            })
        }
    }
}

pub fn dump(snapshot: &Snapshot, path: impl AsRef<Path>) -> Result<DumpLocation, StatepackError> {
    write_json(snapshot, path.as_ref())
}

fn read_versioned<T: DeserializeOwned>(path: &Path, version_of: impl Fn(&serde_json::Value) -> Option<u64>) -> Result<T, StatepackError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| StatepackError::Parse {
            path: path.to_path_buf(),
            field: String::new(),
            message: e.to_string(),
        })?;
    if let Some(found) = version_of(&value) {
        if found != u64::from(SCHEMA_VERSION) {
            return Err(StatepackError::VersionMismatch {
                found,
                expected: SCHEMA_VERSION,
            });
        }
    }
    serde_path_to_error::deserialize(value).map_err(|e| StatepackError::Parse {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Snapshot, StatepackError> {
    read_versioned(path.as_ref(), |v| v.get("schema_version")?.as_u64())
}

pub fn dump_recording(
    recording: &Recording,
    path: impl AsRef<Path>,
) -> Result<DumpLocation, StatepackError> {
    write_json(recording, path.as_ref())
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording, StatepackError> {
    let recording: Recording = read_versioned(path.as_ref(), |v| {
        v.get("snapshots")?
            .as_array()?
            .iter()
            .filter_map(|s| s.get("schema_version")?.as_u64())
            .find(|&ver| ver != u64::from(SCHEMA_VERSION))
    })?;
    recording.check_stride()?;
    Ok(recording)
}

impl Recording {
    /// Snapshots must be strictly increasing with a constant stride.
    pub fn check_stride(&self) -> Result<(), StatepackError> {
        if self.interval_steps == 0 {
            return Err(StatepackError::ZeroInterval);
        }
        for w in self.snapshots.windows(2) {
            if w[1].step_index != w[0].step_index + self.interval_steps {
                return Err(StatepackError::BadStride(format!(
                    "step {} follows step {} with interval {}",
                    w[1].step_index, w[0].step_index, self.interval_steps
                )));
            }
        }
        Ok(())
    }
}

struct ActiveRecording {
    started_at: u64,
    recording: Recording,
}

/// At most one active recording; snapshots every `interval_steps` steps,
/// starting with the step at which recording began.
#[derive(Default)]
pub struct Recorder {
    active: Option<ActiveRecording>,
}

impl Recorder {
    pub fn is_active(&self) -> bool {
        self.active.is_some()
    }

    pub fn start(
        &mut self,
        scene_name: &str,
        interval_steps: u64,
        state: &SimState,
    ) -> Result<(), StatepackError> {
        if let Some(active) = &self.active {
            return Err(StatepackError::AlreadyRecording {
                started_at: active.started_at,
            });
        }
        if interval_steps == 0 {
            return Err(StatepackError::ZeroInterval);
        }
        self.active = Some(ActiveRecording {
            started_at: state.step_index(),
            recording: Recording {
                scene_name: scene_name.to_string(),
                interval_steps,
                snapshots: vec![take_snapshot(state)],
            },
        });
        Ok(())
    }

    /// Call after every completed step.
    pub fn observe(&mut self, state: &SimState) {
        if let Some(active) = &mut self.active {
            let step = state.step_index();
            if step > active.started_at
                && (step - active.started_at) % active.recording.interval_steps == 0
            {
                active.recording.snapshots.push(take_snapshot(state));
            }
        }
    }

    pub fn stop(&mut self) -> Result<Recording, StatepackError> {
        self.active
            .take()
            .map(|a| a.recording)
            .ok_or(StatepackError::NotRecording)
    }

    /// Drops an active recording whose step sequence was broken (reset, reload).
    pub fn abandon(&mut self) -> Option<Recording> {
        self.active.take().map(|a| a.recording)
    }
}

/// Pure playback of a recording, in step order.
pub fn replay(recording: &Recording) -> Result<std::slice::Iter<'_, Snapshot>, StatepackError> {
    if recording.snapshots.is_empty() {
        return Err(StatepackError::EmptyRecording);
    }
    Ok(recording.snapshots.iter())
}

/// Path of the spring table that accompanies a particle table at `path`.
pub fn spring_table_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "snapshot".into());
    let name = match path.extension() {
        Some(ext) => format!("{stem}_springs.{}", ext.to_string_lossy()),
        None => format!("{stem}_springs"),
    };
    path.with_file_name(name)
}

pub const PARTICLE_COLUMNS: [&str; 28] = [
    "step_index", "time", "particle_id", "mass", "px", "py", "pz", "vx", "vy", "vz",
    "f_spring_x", "f_spring_y", "f_spring_z", "f_gravity_x", "f_gravity_y", "f_gravity_z",
    "f_drag_x", "f_drag_y", "f_drag_z", "f_collision_x", "f_collision_y", "f_collision_z",
    "f_attach_x", "f_attach_y", "f_attach_z", "f_total_x", "f_total_y", "f_total_z",
];

pub const SPRING_COLUMNS: [&str; 9] = [
    "step_index", "time", "spring_id", "a", "b", "rest_length", "current_length", "extension",
    "axial_force",
];

/// 17 significant digits, enough for an exact round trip.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_vec(row: &mut Vec<String>, v: Vec3) {
    row.extend(v.to_array().map(fmt_real));
}

/// Writes the particle table to `path` and the spring table next to it
/// (see [`spring_table_path`]). Rows are ordered by step, then id.
pub fn export_csv(snapshots: &[Snapshot], path: impl AsRef<Path>) -> Result<(PathBuf, PathBuf), StatepackError> {
    let path = path.as_ref();
    let springs_path = spring_table_path(path);
    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| StatepackError::Csv { path: p, source }
    };

    let mut ordered: Vec<&Snapshot> = snapshots.iter().collect();
    ordered.sort_by_key(|s| s.step_index);

    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(PARTICLE_COLUMNS).map_err(csv_err(path))?;
    for s in &ordered {
        let mut particles: Vec<&ParticleState> = s.particles.iter().collect();
        particles.sort_by_key(|p| p.id);
        for p in particles {
            let mut row = vec![
                s.step_index.to_string(),
                fmt_real(s.time),
                p.id.to_string(),
                fmt_real(p.mass),
            ];
            let f = &p.force_breakdown;
            for v in [
                p.position, p.velocity, f.spring, f.gravity, f.drag, f.collision, f.attachment,
                f.total,
            ] {
                push_vec(&mut row, v);
            }
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))?;

    let mut w = csv::Writer::from_path(&springs_path).map_err(csv_err(&springs_path))?;
    w.write_record(SPRING_COLUMNS).map_err(csv_err(&springs_path))?;
    for s in &ordered {
        for sp in &s.springs {
            w.write_record([
                s.step_index.to_string(),
                fmt_real(s.time),
                sp.id.to_string(),
                sp.a.to_string(),
                sp.b.to_string(),
                fmt_real(sp.rest_length),
                fmt_real(sp.current_length),
                fmt_real(sp.extension),
                fmt_real(sp.axial_force_magnitude),
            ])
            .map_err(csv_err(&springs_path))?;
        }
    }
    w.flush().map_err(io_err(&springs_path))?;
    Ok((path.to_path_buf(), springs_path))
}
