//! Wire messages. Every message is a JSON text frame `{type, seq, ...}`;
//! responses echo the `seq` of the message they answer.

use serde::{Deserialize, Serialize};
use softlab_core::dynamics::ParamValue;
use softlab_core::model::{AttachmentMode, IntegratorKind, SimParams, Vec3};
use softlab_core::stats::{EnergyReport, PerformanceReport};

pub type SessionId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Controller,
    Viewer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub role_request: Role,
    #[serde(default)]
    pub scene: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Hello(Hello),
    Control(Command),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("malformed message: {message}")]
pub struct ProtocolError {
    /// The offending message's seq, when it could be read.
    pub seq: Option<u64>,
    pub message: String,
}

/// Parses one client text frame into its seq and message.
pub fn decode_client(text: &str) -> Result<(u64, ClientMessage), ProtocolError> {
    let fail = |seq, message: String| ProtocolError { seq, message };
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| fail(None, e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| fail(None, "expected a JSON object".into()))?;
    let seq = obj
        .remove("seq")
        .ok_or_else(|| fail(None, "missing `seq`".into()))?
        .as_u64()
        .ok_or_else(|| fail(None, "`seq` must be a non-negative integer".into()))?;
    let kind = obj
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| fail(Some(seq), "missing `type`".into()))?;
    if kind == "hello" {
        obj.remove("type");
        let hello = serde_json::from_value(value).map_err(|e| fail(Some(seq), e.to_string()))?;
        Ok((seq, ClientMessage::Hello(hello)))
    } else {
        let cmd = serde_json::from_value(value).map_err(|e| fail(Some(seq), e.to_string()))?;
        Ok((seq, ClientMessage::Control(cmd)))
    }
}

/// Inverse of [`decode_client`].
pub fn encode_client(seq: u64, message: &ClientMessage) -> String {
    let mut value = match message {
        ClientMessage::Hello(h) => {
            let mut v = serde_json::to_value(h).expect("hello serializes");
            v["type"] = "hello".into();
            v
        }
        ClientMessage::Control(c) => serde_json::to_value(c).expect("command serializes"),
    };
    value["seq"] = seq.into();
    value.to_string()
}

/// Mutating control messages. All of them require the controller role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetParam {
        field: String,
        value: ParamValue,
    },
    SetIntegrator {
        kind: IntegratorKind,
    },
    SetLod {
        level: u32,
    },
    Pause,
    Resume,
    Reset,
    Dump {
        #[serde(default)]
        path: Option<String>,
    },
    RecordStart {
        interval_steps: u64,
    },
    RecordStop {
        #[serde(default)]
        path: Option<String>,
    },
    LoadSnapshot {
        path: String,
    },
    Attach {
        particle_id: usize,
        anchor: Vec3,
        mode: AttachmentMode,
    },
    Detach {
        particle_id: usize,
    },
    DragForce {
        particle_id: usize,
        target: Vec3,
        active: bool,
    },
}

impl Command {
    /// Commands whose effect is limited to files on disk.
    pub fn is_io_only(&self) -> bool {
        matches!(
            self,
            Command::Dump { .. } | Command::RecordStart { .. } | Command::RecordStop { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::SetParam { .. } => "set_param",
            Command::SetIntegrator { .. } => "set_integrator",
            Command::SetLod { .. } => "set_lod",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Reset => "reset",
            Command::Dump { .. } => "dump",
            Command::RecordStart { .. } => "record_start",
            Command::RecordStop { .. } => "record_stop",
            Command::LoadSnapshot { .. } => "load_snapshot",
            Command::Attach { .. } => "attach",
            Command::Detach { .. } => "detach",
            Command::DragForce { .. } => "drag_force",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        seq: u64,
        session_id: SessionId,
        role: Role,
        scene: String,
    },
    /// Sent unsolicited (seq 0) when a viewer is promoted.
    Role { seq: u64, role: Role },
    Ack {
        seq: u64,
        /// Step index of the state the change now applies to; every later step uses it.
        effective_step: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Warning {
        seq: u64,
        message: String,
    },
    Error {
        seq: u64,
        message: String,
    },
    Frame(FrameMessage),
}

impl ServerMessage {
    /// The seq this message echoes, or the frame number for frames.
    pub fn seq(&self) -> u64 {
        match self {
            ServerMessage::Welcome { seq, .. }
            | ServerMessage::Role { seq, .. }
            | ServerMessage::Ack { seq, .. }
            | ServerMessage::Warning { seq, .. }
            | ServerMessage::Error { seq, .. } => *seq,
            ServerMessage::Frame(f) => f.seq,
        }
    }
}

/// Post-step view of the simulation. `seq` counts frames per connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub seq: u64,
    pub step_index: u64,
    pub time: f64,
    pub positions: Vec<Vec3>,
    pub topology_version: u64,
    /// Present on the first frame of a session and after every topology change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spring_index_pairs: Option<Vec<[usize; 2]>>,
    pub diverged: bool,
    pub paused: bool,
    pub recording: bool,
    pub params: SimParams,
    #[serde(default)]
    pub stats: Option<PerformanceReport>,
    pub energy: EnergyReport,
}
