//! Websocket front end and the engine thread.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use softlab_core::statepack::{take_snapshot, Snapshot};
use softlab_core::topology::Scene;
use tokio::sync::{mpsc as tmpsc, oneshot, watch};

use crate::engine::{Engine, Frame, LogEntry};
use crate::protocol::{decode_client, ClientMessage, Command, Role, ServerMessage, SessionId};

/// How fast the engine steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pace {
    /// One step per `dt` of wall time.
    Realtime,
    StepsPerSecond(f64),
    Unlimited,
}

impl Pace {
    fn period(self, dt: f64) -> Duration {
        match self {
            Pace::Realtime => Duration::from_secs_f64(dt),
            Pace::StepsPerSecond(r) => Duration::from_secs_f64(1.0 / r),
            Pace::Unlimited => Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub address: SocketAddr,
    pub frame_rate: f64,
    pub pace: Pace,
    /// Where dumps and recordings requested without a path are written.
    pub output_dir: PathBuf,
    /// Optional JSON-lines copy of the command log.
    pub log_path: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            address: SocketAddr::from(([127, 0, 0, 1], 8765)),
            frame_rate: 30.0,
            pace: Pace::Realtime,
            output_dir: PathBuf::from("."),
            log_path: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid service configuration: {0}")]
    Config(String),
    #[error("cannot listen on {address}: {source}")]
    Bind {
        address: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("the engine has stopped")]
    EngineStopped,
}

struct Registration {
    role: Role,
    warning: Option<String>,
}

enum Input {
    Register {
        id: SessionId,
        request: Role,
        outbox: tmpsc::UnboundedSender<ServerMessage>,
        reply: oneshot::Sender<Registration>,
    },
    Command {
        id: SessionId,
        seq: u64,
        command: Command,
    },
    Disconnect {
        id: SessionId,
    },
    Log(oneshot::Sender<Vec<LogEntry>>),
    Snapshot(oneshot::Sender<Snapshot>),
    Shutdown,
}

enum Flow {
    Changed,
    Quiet,
    Stop,
}

/// Minimum spacing between frame publications caused by stepping alone.
const PUBLISH_INTERVAL: Duration = Duration::from_millis(1);
const STATS_INTERVAL: Duration = Duration::from_millis(100);
const IDLE_WAIT: Duration = Duration::from_millis(50);
const MAX_LAG: Duration = Duration::from_millis(100);

struct EngineLoop {
    engine: Engine,
    inputs: mpsc::Receiver<Input>,
    frames: watch::Sender<Arc<Frame>>,
    outboxes: HashMap<SessionId, tmpsc::UnboundedSender<ServerMessage>>,
    pace: Pace,
}

impl EngineLoop {
    fn handle(&mut self, input: Input) -> Flow {
        match input {
            Input::Register {
                id,
                request,
                outbox,
                reply,
            } => {
                let (role, warning) = self.engine.register(id, request);
                tracing::info!(session = id, ?role, "session registered");
                self.outboxes.insert(id, outbox);
                let _ = reply.send(Registration { role, warning });
                Flow::Quiet
            }
            Input::Command { id, seq, command } => {
                let reply = self.engine.handle(id, seq, command);
                let changed = matches!(reply, ServerMessage::Ack { .. });
                if let Some(out) = self.outboxes.get(&id) {
                    let _ = out.send(reply);
                }
                if changed {
                    Flow::Changed
                } else {
                    Flow::Quiet
                }
            }
            Input::Disconnect { id } => {
                self.outboxes.remove(&id);
                if let Some(promoted) = self.engine.unregister(id) {
                    tracing::info!(session = promoted, "viewer promoted to controller");
                    if let Some(out) = self.outboxes.get(&promoted) {
                        let _ = out.send(ServerMessage::Role {
                            seq: 0,
                            role: Role::Controller,
                        });
                    }
                }
                Flow::Quiet
            }
            Input::Log(reply) => {
                let _ = reply.send(self.engine.log().to_vec());
                Flow::Quiet
            }
            Input::Snapshot(reply) => {
                let _ = reply.send(take_snapshot(self.engine.state()));
                Flow::Quiet
            }
            Input::Shutdown => Flow::Stop,
        }
    }

    fn publish(&mut self) {
        self.frames.send_replace(Arc::new(self.engine.frame()));
    }

    fn run(mut self) {
        let mut next_step = Instant::now();
        let mut last_publish = Instant::now();
        let mut last_stats = Instant::now();
        let mut pending = false;
        loop {
            // the queue is drained fully before every step
            loop {
                match self.inputs.try_recv() {
                    Ok(input) => match self.handle(input) {
                        Flow::Changed => {
                            self.publish();
                            last_publish = Instant::now();
                            pending = false;
                        }
                        Flow::Quiet => {}
                        Flow::Stop => return,
                    },
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => return,
                }
            }

            let now = Instant::now();
            if now.duration_since(last_stats) >= STATS_INTERVAL {
                self.engine.refresh_stats();
                last_stats = now;
            }
            if self.engine.can_step() && now >= next_step {
                self.engine.step();
                pending = true;
                next_step += self.pace.period(self.engine.state().params.dt);
                if now.saturating_duration_since(next_step) > MAX_LAG {
                    next_step = now;
                }
                if now.duration_since(last_publish) >= PUBLISH_INTERVAL || !self.engine.can_step()
                {
                    self.publish();
                    last_publish = now;
                    pending = false;
                }
                continue;
            }

            if pending {
                self.publish();
                last_publish = now;
                pending = false;
            }
            let wait = if self.engine.can_step() {
                next_step.saturating_duration_since(now)
            } else {
                next_step = now;
                IDLE_WAIT
            };
            match self.inputs.recv_timeout(wait) {
                Ok(input) => match self.handle(input) {
                    Flow::Changed => {
                        self.publish();
                        last_publish = Instant::now();
                    }
                    Flow::Quiet => {}
                    Flow::Stop => return,
                },
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }
}

struct Shared {
    inputs: mpsc::Sender<Input>,
    frames: watch::Receiver<Arc<Frame>>,
    stop: watch::Receiver<bool>,
    next_id: AtomicU64,
    frame_period: Duration,
    scene_name: String,
}

/// A running service. Dropping it without [`ServiceHandle::shutdown`] leaves
/// the server task running until the runtime stops.
pub struct ServiceHandle {
    address: SocketAddr,
    inputs: mpsc::Sender<Input>,
    stop: watch::Sender<bool>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    engine: std::thread::JoinHandle<()>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.address
    }

    /// Every command applied so far, with the step index it was applied at.
    pub async fn command_log(&self) -> Result<Vec<LogEntry>, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.inputs
            .send(Input::Log(tx))
            .map_err(|_| ServiceError::EngineStopped)?;
        rx.await.map_err(|_| ServiceError::EngineStopped)
    }

    /// Full snapshot of the current state, taken between steps.
    pub async fn snapshot(&self) -> Result<Snapshot, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.inputs
            .send(Input::Snapshot(tx))
            .map_err(|_| ServiceError::EngineStopped)?;
        rx.await.map_err(|_| ServiceError::EngineStopped)
    }

    /// Closes every session, stops the server and joins the engine thread.
    pub async fn shutdown(self) -> Result<(), ServiceError> {
        let _ = self.stop.send(true);
        let _ = self.inputs.send(Input::Shutdown);
        match self.server.await {
            Ok(result) => result?,
            Err(e) => tracing::warn!("server task ended abnormally: {e}"),
        }
        let engine = self.engine;
        tokio::task::spawn_blocking(move || engine.join())
            .await
            .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
            .map_err(|_| ServiceError::EngineStopped)?;
        Ok(())
    }
}

/// Binds the listener, starts the engine thread and serves websocket sessions
/// on `/` and `/ws`. Must be called inside a tokio runtime.
pub async fn start(scene: Scene, config: ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    if !(config.frame_rate.is_finite() && config.frame_rate > 0.0) {
        return Err(ServiceError::Config(format!(
            "frame rate must be > 0, got {}",
            config.frame_rate
        )));
    }
    if let Pace::StepsPerSecond(r) = config.pace {
        if !(r.is_finite() && r > 0.0) {
            return Err(ServiceError::Config(format!(
                "steps per second must be > 0, got {r}"
            )));
        }
    }
    let listener = tokio::net::TcpListener::bind(config.address)
        .await
        .map_err(|source| ServiceError::Bind {
            address: config.address,
            source,
        })?;
    let address = listener.local_addr()?;

    let scene_name = scene.name.clone();
    let mut engine = Engine::new(scene).with_output_dir(config.output_dir.clone());
    if let Some(path) = &config.log_path {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        engine = engine.with_log_sink(Box::new(std::io::BufWriter::new(file)));
    }
    let (frame_tx, frame_rx) = watch::channel(Arc::new(engine.frame()));
    let (input_tx, input_rx) = mpsc::channel();
    let engine_loop = EngineLoop {
        engine,
        inputs: input_rx,
        frames: frame_tx,
        outboxes: HashMap::new(),
        pace: config.pace,
    };
    let engine = std::thread::Builder::new()
        .name("softlab-engine".into())
        .spawn(move || engine_loop.run())?;

    let (stop_tx, stop_rx) = watch::channel(false);
    let shared = Arc::new(Shared {
        inputs: input_tx.clone(),
        frames: frame_rx,
        stop: stop_rx.clone(),
        next_id: AtomicU64::new(1),
        frame_period: Duration::from_secs_f64(1.0 / config.frame_rate),
        scene_name,
    });
    let app = Router::new()
        .route("/", get(upgrade))
        .route("/ws", get(upgrade))
        .with_state(shared);
    let mut stop_signal = stop_rx;
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                stopped(&mut stop_signal).await;
            })
            .await
    });
    tracing::info!(%address, "service listening");
    Ok(ServiceHandle {
        address,
        inputs: input_tx,
        stop: stop_tx,
        server,
        engine,
    })
}

async fn stopped(stop: &mut watch::Receiver<bool>) {
    let _ = stop.wait_for(|s| *s).await.map(|_| ());
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    ws.on_upgrade(move |socket| async move {
        if let Err(e) = session(socket, shared).await {
            tracing::debug!("session ended: {e}");
        }
    })
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> Result<(), axum::Error> {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    socket.send(Message::Text(text.into())).await
}

async fn session(mut socket: WebSocket, shared: Arc<Shared>) -> Result<(), axum::Error> {
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let (outbox_tx, mut outbox) = tmpsc::unbounded_channel();
    let mut stop = shared.stop.clone();

    // handshake
    let registration = loop {
        let text = tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(t))) => t,
                Some(Ok(Message::Close(_))) | None => return Ok(()),
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e),
            },
            _ = stopped(&mut stop) => return Ok(()),
        };
        let reject = |seq: u64, message: String| ServerMessage::Error { seq, message };
        match decode_client(&text) {
            Ok((seq, ClientMessage::Hello(hello))) => {
                if let Some(requested) = hello.scene.as_deref() {
                    if requested != shared.scene_name {
                        let msg = format!(
                            "unknown scene `{requested}`; this service runs `{}`",
                            shared.scene_name
                        );
                        send(&mut socket, &reject(seq, msg)).await?;
                        continue;
                    }
                }
                let (tx, rx) = oneshot::channel();
                let input = Input::Register {
                    id,
                    request: hello.role_request,
                    outbox: outbox_tx.clone(),
                    reply: tx,
                };
                if shared.inputs.send(input).is_err() {
                    return Ok(());
                }
                let Ok(reg) = rx.await else { return Ok(()) };
                break (seq, reg);
            }
            Ok((seq, ClientMessage::Control(_))) => {
                send(&mut socket, &reject(seq, "send hello first".into())).await?;
            }
            Err(e) => {
                send(&mut socket, &reject(e.seq.unwrap_or(0), e.to_string())).await?;
            }
        }
    };
    let (hello_seq, reg) = registration;
    send(
        &mut socket,
        &ServerMessage::Welcome {
            seq: hello_seq,
            session_id: id,
            role: reg.role,
            scene: shared.scene_name.clone(),
        },
    )
    .await?;
    if let Some(message) = reg.warning {
        send(&mut socket, &ServerMessage::Warning { seq: hello_seq, message }).await?;
    }

    let result = stream(&mut socket, &shared, id, &mut outbox, &mut stop).await;
    let _ = shared.inputs.send(Input::Disconnect { id });
    result
}

async fn stream(
    socket: &mut WebSocket,
    shared: &Shared,
    id: SessionId,
    outbox: &mut tmpsc::UnboundedReceiver<ServerMessage>,
    stop: &mut watch::Receiver<bool>,
) -> Result<(), axum::Error> {
    let mut frames = shared.frames.clone();
    frames.mark_changed();
    let mut ticker = tokio::time::interval(shared.frame_period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut frame_seq = 0u64;
    let mut sent_topology: Option<u64> = None;
    loop {
        tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => match decode_client(&text) {
                    Ok((seq, ClientMessage::Control(command))) => {
                        if shared.inputs.send(Input::Command { id, seq, command }).is_err() {
                            return Ok(());
                        }
                    }
                    Ok((seq, ClientMessage::Hello(_))) => {
                        let message = "session is already registered".to_string();
                        send(socket, &ServerMessage::Error { seq, message }).await?;
                    }
                    Err(e) => {
                        let reply = ServerMessage::Error { seq: e.seq.unwrap_or(0), message: e.to_string() };
                        send(socket, &reply).await?;
                    }
                },
                Some(Ok(Message::Close(_))) | None => return Ok(()),
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(e),
            },
            Some(reply) = outbox.recv() => send(socket, &reply).await?,
            _ = ticker.tick() => {
                match frames.has_changed() {
                    Ok(true) => {}
                    Ok(false) => continue,
                    Err(_) => return Ok(()),
                }
                let frame = Arc::clone(&frames.borrow_and_update());
                frame_seq += 1;
                let include = sent_topology != Some(frame.topology_version);
                sent_topology = Some(frame.topology_version);
                send(socket, &ServerMessage::Frame(frame.to_message(frame_seq, include))).await?;
            }
            _ = stopped(stop) => {
                let _ = socket.send(Message::Close(None)).await;
                return Ok(());
            }
        }
    }
}
