//! Live steering and frame streaming for a running simulation over websockets.

pub mod engine;
pub mod protocol;
pub mod server;

pub use engine::{replay_log, Engine, LogEntry, DRAG_STIFFNESS};
pub use server::{start, Pace, ServiceConfig, ServiceError, ServiceHandle};
