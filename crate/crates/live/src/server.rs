use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use admit_core::config::ScenarioConfig;
use admit_core::sim::{Session, SimError, SimTrace, StepRecord, SAFETY_BOUND_M};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use nalgebra::Vector2;
use thiserror::Error;
use tokio::sync::broadcast;

use crate::wire::{ErrorMessage, Hello, ServerMessage, Status, Terminal, WireCommand, WireSnapshot, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum LiveError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid option `{0}`")]
    InvalidOption(&'static str),
}

impl LiveError {
    pub fn class(&self) -> &'static str {
        match self {
            Self::Sim(e) => e.class(),
            Self::Io(_) => "io",
            Self::InvalidOption(_) => "config",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOptions {
    /// Broadcast every n-th step.
    pub decimation: usize,
    /// Simulated seconds per wall-clock second; `None` runs unpaced.
    pub speed: Option<f64>,
    /// Outgoing messages buffered per client before the slowest one skips ahead.
    pub client_buffer: usize,
    /// Most recent full-rate records kept for export.
    pub max_trace_records: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            decimation: 20,
            speed: Some(1.0),
            client_buffer: 1024,
            max_trace_records: 300_000,
        }
    }
}

impl ServeOptions {
    fn validate(&self) -> Result<(), LiveError> {
        if self.decimation == 0 {
            return Err(LiveError::InvalidOption("decimation"));
        }
        if self.speed.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return Err(LiveError::InvalidOption("speed"));
        }
        if self.client_buffer == 0 {
            return Err(LiveError::InvalidOption("client_buffer"));
        }
        Ok(())
    }
}

enum Control {
    Command(WireCommand),
    Shutdown,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<Control>,
    outgoing: broadcast::Sender<Arc<String>>,
    hello: Arc<RwLock<Hello>>,
}

/// A running session host. Dropping it without [`LiveServer::shutdown`]
/// leaves the simulation thread running until the process exits.
pub struct LiveServer {
    addr: SocketAddr,
    commands: mpsc::Sender<Control>,
    sim: thread::JoinHandle<SimTrace>,
    http: tokio::task::JoinHandle<()>,
}

impl LiveServer {
    pub async fn start(config: ScenarioConfig, addr: SocketAddr, options: ServeOptions) -> Result<Self, LiveError> {
        options.validate()?;
        let session = Session::new(config.clone())?;
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;

        let (commands, rx) = mpsc::channel();
        let (outgoing, _) = broadcast::channel(options.client_buffer);
        let hello = Arc::new(RwLock::new(hello_for(&session, &options)));

        let mut sim_loop = SimLoop {
            config,
            session,
            options,
            outgoing: outgoing.clone(),
            hello: hello.clone(),
            epoch: 0,
            seq: 0,
            requested: [0.0; 2],
            paused: false,
            terminal: false,
            trace: VecDeque::new(),
        };
        sim_loop.trace.push_back(sim_loop.session.last_record().clone());
        let sim = thread::Builder::new()
            .name("admit-sim".into())
            .spawn(move || sim_loop.run(rx))?;

        let app = Router::new().route("/ws", get(ws_upgrade)).with_state(AppState {
            commands: commands.clone(),
            outgoing,
            hello,
        });
        let http = tokio::spawn(async move {
            if let Err(err) = axum::serve(listener, app).await {
                log::error!("http server stopped: {err}");
            }
        });
        log::info!("live session listening on ws://{addr}/ws");
        Ok(Self {
            addr,
            commands,
            sim,
            http,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the loop and returns the full-rate trace recorded since the last
    /// reset (bounded by `max_trace_records`).
    pub async fn shutdown(self) -> SimTrace {
        let _ = self.commands.send(Control::Shutdown);
        let sim = self.sim;
        let trace = tokio::task::spawn_blocking(move || sim.join())
            .await
            .expect("join task")
            .expect("simulation thread panicked");
        self.http.abort();
        trace
    }
}

/// Serves until Ctrl-C, then returns the recorded trace.
pub async fn serve(config: ScenarioConfig, addr: SocketAddr, options: ServeOptions) -> Result<SimTrace, LiveError> {
    let server = LiveServer::start(config, addr, options).await?;
    tokio::signal::ctrl_c().await?;
    log::info!("shutting down");
    Ok(server.shutdown().await)
}

fn hello_for(session: &Session, options: &ServeOptions) -> Hello {
    let cfg = session.config();
    let op = session.operating_point();
    Hello {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.name.clone(),
        dt_s: session.dt(),
        decimation: options.decimation,
        f_max_n: cfg.admittance.f_max_n,
        threshold_m: cfg.admittance.threshold_m,
        safety_bound_m: SAFETY_BOUND_M,
        operating_point_m: [op[0], op[1]],
        link_lengths_m: [cfg.manipulator.l1_m, cfg.manipulator.l2_m],
        regions: cfg.admittance.subsystems.len(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(mut socket: WebSocket, state: AppState) {
    let mut outgoing = state.outgoing.subscribe();
    let hello = ServerMessage::Hello(state.hello.read().expect("hello lock").clone()).to_json();
    if socket.send(Message::Text(hello.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<WireCommand>(text.as_str()) {
                    Ok(cmd) => {
                        if state.commands.send(Control::Command(cmd)).is_err() {
                            break;
                        }
                    }
                    Err(err) => {
                        let reply = ServerMessage::Error(ErrorMessage { message: format!("bad command: {err}") });
                        if socket.send(Message::Text(reply.to_json().into())).await.is_err() {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            out = outgoing.recv() => match out {
                Ok(text) => {
                    if socket.send(Message::Text(text.as_str().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("client lagged, skipped {n} messages"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

struct SimLoop {
    config: ScenarioConfig,
    session: Session,
    options: ServeOptions,
    outgoing: broadcast::Sender<Arc<String>>,
    hello: Arc<RwLock<Hello>>,
    epoch: u64,
    seq: u64,
    requested: [f64; 2],
    paused: bool,
    terminal: bool,
    trace: VecDeque<StepRecord>,
}

impl SimLoop {
    fn run(mut self, rx: mpsc::Receiver<Control>) -> SimTrace {
        let dt = self.session.dt();
        let mut origin = Instant::now();
        let mut stepped: u64 = 0;
        loop {
            let running = !self.paused && !self.terminal;
            let wait = match (running, self.options.speed) {
                (false, _) => Duration::from_millis(50),
                (true, None) => Duration::ZERO,
                (true, Some(speed)) => {
                    let due = origin + Duration::from_secs_f64((stepped + 1) as f64 * dt / speed);
                    due.saturating_duration_since(Instant::now())
                }
            };
            let first = if wait.is_zero() {
                rx.try_recv().map_err(|e| match e {
                    mpsc::TryRecvError::Empty => RecvTimeoutError::Timeout,
                    mpsc::TryRecvError::Disconnected => RecvTimeoutError::Disconnected,
                })
            } else {
                rx.recv_timeout(wait)
            };
            let mut pending = match first {
                Ok(c) => vec![c],
                Err(RecvTimeoutError::Timeout) => Vec::new(),
                Err(RecvTimeoutError::Disconnected) => break,
            };
            pending.extend(rx.try_iter());

            let mut restart_clock = false;
            let mut stop = false;
            for control in pending {
                match control {
                    Control::Shutdown => stop = true,
                    Control::Command(cmd) => restart_clock |= self.apply(cmd),
                }
            }
            if stop {
                break;
            }
            if restart_clock {
                origin = Instant::now();
                stepped = 0;
            }

            if self.paused || self.terminal {
                continue;
            }
            let due = match self.options.speed {
                None => stepped + 1,
                Some(speed) => (origin.elapsed().as_secs_f64() * speed / dt) as u64,
            };
            // at most one step between command polls keeps command latency ≤ 1 step
            if stepped < due {
                self.step();
                stepped += 1;
            }
        }
        SimTrace {
            dt,
            records: self.trace.into(),
        }
    }

    /// Returns true when the wall-clock origin must be re-anchored.
    fn apply(&mut self, cmd: WireCommand) -> bool {
        log::debug!("command {cmd:?}");
        match cmd {
            WireCommand::SetForce { force_n } => {
                if force_n.iter().all(|f| f.is_finite()) {
                    self.requested = force_n;
                } else {
                    self.send_error("set_force: force components must be finite".into());
                }
                false
            }
            WireCommand::Release => {
                self.requested = [0.0; 2];
                false
            }
            WireCommand::Pause => {
                self.paused = true;
                self.send_status();
                false
            }
            WireCommand::Resume => {
                let was = self.paused;
                self.paused = false;
                self.send_status();
                was
            }
            WireCommand::Reset => {
                self.session.reset();
                self.restart_epoch();
                true
            }
            WireCommand::SetConfigOverrides { overrides } => {
                let next = self
                    .config
                    .with_overrides(&overrides)
                    .map_err(|e| format!("config: {e}"))
                    .and_then(|cfg| Session::new(cfg.clone()).map(|s| (cfg, s)).map_err(|e| format!("{}: {e}", e.class())));
                match next {
                    Ok((cfg, session)) => {
                        self.config = cfg;
                        self.session = session;
                        let hello = hello_for(&self.session, &self.options);
                        *self.hello.write().expect("hello lock") = hello.clone();
                        self.send(ServerMessage::Hello(hello));
                        self.restart_epoch();
                        true
                    }
                    Err(message) => {
                        self.send_error(message);
                        false
                    }
                }
            }
        }
    }

    fn restart_epoch(&mut self) {
        self.epoch += 1;
        self.requested = [0.0; 2];
        self.terminal = false;
        self.trace.clear();
        self.trace.push_back(self.session.last_record().clone());
        self.send_snapshot(&self.session.last_record().clone());
        self.send_status();
    }

    fn step(&mut self) {
        let force = Vector2::new(self.requested[0], self.requested[1]);
        match self.session.step_realtime(force) {
            Ok(snap) => {
                if snap.record.step % self.options.decimation == 0 {
                    self.send_snapshot(&snap.record);
                }
                if self.trace.len() == self.options.max_trace_records {
                    self.trace.pop_front();
                }
                self.trace.push_back(snap.record);
            }
            Err(err) => {
                log::warn!("session terminated: {err}");
                self.terminal = true;
                let last = self.session.last_record();
                self.send(ServerMessage::Terminal(Terminal {
                    epoch: self.epoch,
                    class: err.class().into(),
                    reason: err.to_string(),
                    step: last.step + 1,
                    t_s: (last.step + 1) as f64 * self.session.dt(),
                }));
            }
        }
    }

    fn send_snapshot(&mut self, record: &StepRecord) {
        self.seq += 1;
        let op = self.session.operating_point();
        let snap = WireSnapshot::from_record(record, [op[0], op[1]], self.requested, self.epoch, self.seq, self.paused);
        self.send(ServerMessage::Snapshot(snap));
    }

    fn send_status(&self) {
        self.send(ServerMessage::Status(Status {
            epoch: self.epoch,
            paused: self.paused,
            step: self.session.step_index(),
            t_s: self.session.time(),
        }));
    }

    fn send_error(&self, message: String) {
        self.send(ServerMessage::Error(ErrorMessage { message }));
    }

    fn send(&self, msg: ServerMessage) {
        // no subscribers is fine: snapshots are dropped
        let _ = self.outgoing.send(Arc::new(msg.to_json()));
    }
}
