//! Headless WebSocket client against a live session.

use std::net::SocketAddr;
use std::time::Duration;

use admit_core::ScenarioConfig;
use admit_live::wire::{Hello, Status, Terminal};
use admit_live::{LiveServer, ServeOptions, ServerMessage, WireCommand, WireSnapshot, SCHEMA_VERSION};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const THRESHOLD: f64 = 0.998;

async fn start(speed: f64) -> LiveServer {
    let options = ServeOptions {
        speed: Some(speed),
        ..Default::default()
    };
    LiveServer::start(ScenarioConfig::paper(), SocketAddr::from(([127, 0, 0, 1], 0)), options)
        .await
        .unwrap()
}

struct Client {
    ws: Ws,
    last_seq: u64,
    last_t: Option<(u64, f64)>,
}

impl Client {
    async fn connect(server: &LiveServer) -> (Self, Hello) {
        let (ws, _) = connect_async(format!("ws://{}/ws", server.local_addr())).await.unwrap();
        let mut c = Self {
            ws,
            last_seq: 0,
            last_t: None,
        };
        match c.next().await {
            ServerMessage::Hello(h) => (c, h),
            other => panic!("expected hello, got {other:?}"),
        }
    }

    async fn send(&mut self, cmd: WireCommand) {
        self.ws.send(Message::text(serde_json::to_string(&cmd).unwrap())).await.unwrap();
    }

    /// Next message; checks snapshot ordering as a side effect.
    async fn next(&mut self) -> ServerMessage {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(10), self.ws.next())
                .await
                .expect("message within 10 s")
                .expect("stream open")
                .unwrap();
            let Message::Text(text) = msg else { continue };
            let parsed: ServerMessage = serde_json::from_str(text.as_str()).unwrap();
            if let ServerMessage::Snapshot(s) = &parsed {
                assert_eq!(s.schema_version, SCHEMA_VERSION);
                assert!(s.seq > self.last_seq, "seq {} after {}", s.seq, self.last_seq);
                self.last_seq = s.seq;
                if let Some((epoch, t)) = self.last_t {
                    if epoch == s.epoch {
                        assert!(s.t_s > t, "t {} after {t} in epoch {epoch}", s.t_s);
                    } else {
                        assert!(s.epoch > epoch);
                    }
                }
                self.last_t = Some((s.epoch, s.t_s));
            }
            return parsed;
        }
    }

    async fn snapshot(&mut self) -> WireSnapshot {
        loop {
            if let ServerMessage::Snapshot(s) = self.next().await {
                return s;
            }
        }
    }

    async fn snapshot_where(&mut self, limit: usize, pred: impl Fn(&WireSnapshot) -> bool) -> WireSnapshot {
        for _ in 0..limit {
            let s = self.snapshot().await;
            if pred(&s) {
                return s;
            }
        }
        panic!("no matching snapshot within {limit}");
    }

    async fn status(&mut self) -> Status {
        loop {
            if let ServerMessage::Status(s) = self.next().await {
                return s;
            }
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn clamp_echo_and_region_flip() {
    let server = start(20.0).await;
    let (mut c, hello) = Client::connect(&server).await;
    assert_eq!(hello.schema_version, SCHEMA_VERSION);
    assert_eq!(hello.f_max_n, 20.0);
    assert_eq!(hello.decimation, 20);

    let idle = c.snapshot().await;
    assert_eq!(idle.force_applied_n, [0.0, 0.0]);
    assert!(!idle.safety);

    c.send(WireCommand::SetForce { force_n: [25.0, 0.0] }).await;
    // snapshots already in flight may predate the command
    let first = c.snapshot_where(50, |s| s.force_requested_n == [25.0, 0.0]).await;
    assert_eq!(first.force_applied_n, [20.0, 0.0]);

    let mut flipped = false;
    for _ in 0..2000 {
        let s = c.snapshot().await;
        assert_eq!(s.force_applied_n, [20.0, 0.0]);
        for axis in 0..2 {
            let outside = s.delta_m[axis][0].abs() > THRESHOLD;
            assert_eq!(s.region[axis], if outside { 2 } else { 1 }, "axis {axis} at t={}", s.t_s);
        }
        assert_eq!(s.safety, s.region.iter().any(|r| *r > 1));
        if s.safety {
            flipped = true;
            assert_eq!(s.region, [2, 1]);
            break;
        }
    }
    assert!(flipped, "region never switched under sustained clamped force");

    let trace = server.shutdown().await;
    assert_eq!(trace.records[0].step, 0);
    for pair in trace.records.windows(2) {
        assert_eq!(pair[1].step, pair[0].step + 1);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reset_restores_initial_state() {
    let server = start(20.0).await;
    let (mut c, _) = Client::connect(&server).await;
    c.send(WireCommand::SetForce { force_n: [0.0, 15.0] }).await;
    c.snapshot_where(500, |s| s.delta[1][0] > 0.2).await;

    c.send(WireCommand::Reset).await;
    let s = c.snapshot_where(500, |s| s.epoch == 1).await;
    assert_eq!(s.step, 0);
    assert_eq!(s.t_s, 0.0);
    assert_eq!(s.delta, [[0.0; 2]; 2]);
    assert_eq!(s.delta_m, [[0.0; 2]; 2]);
    assert_eq!(s.region, [1, 1]);
    assert!(!s.safety);
    assert_eq!(s.force_requested_n, [0.0, 0.0]);
    for axis in &s.gains {
        assert!(axis.iter().all(|k| *k == [-5.0, -9.0]));
    }
    assert!(s.x_dev_m.iter().all(|v| v.abs() < 1e-12));

    // force cleared by reset: later snapshots stay at rest
    let later = c.snapshot_where(50, |s| s.step >= 200).await;
    assert_eq!(later.force_applied_n, [0.0, 0.0]);
    assert_eq!(later.delta_m, [[0.0; 2]; 2]);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_stops_and_resume_continues() {
    let server = start(5.0).await;
    let (mut c, _) = Client::connect(&server).await;
    c.snapshot().await;
    c.send(WireCommand::Pause).await;
    let paused = c.status().await;
    assert!(paused.paused);

    // nothing advances while paused
    let quiet = tokio::time::timeout(Duration::from_millis(300), async {
        loop {
            if let ServerMessage::Snapshot(s) = c.next().await {
                return s;
            }
        }
    })
    .await;
    assert!(quiet.is_err(), "snapshot while paused: {quiet:?}");

    c.send(WireCommand::Resume).await;
    assert!(!c.status().await.paused);
    let s = c.snapshot().await;
    assert!(s.step > paused.step);
    assert!(!s.paused);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_and_nonfinite_commands_are_rejected() {
    let server = start(5.0).await;
    let (mut c, _) = Client::connect(&server).await;
    c.ws.send(Message::text(r#"{"kind":"teleport"}"#)).await.unwrap();
    loop {
        if let ServerMessage::Error(e) = c.next().await {
            assert!(e.message.starts_with("bad command"));
            break;
        }
    }
    // JSON has no NaN literal and overflowing numbers fail to parse
    c.ws.send(Message::text(r#"{"kind":"set_force","force_n":[1e999,0]}"#)).await.unwrap();
    loop {
        if let ServerMessage::Error(e) = c.next().await {
            assert!(e.message.contains("out of range"), "{}", e.message);
            break;
        }
    }
    // the session keeps running with zero force
    let s = c.snapshot().await;
    assert_eq!(s.force_applied_n, [0.0, 0.0]);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn config_overrides_restart_the_session() {
    let server = start(20.0).await;
    let (mut c, _) = Client::connect(&server).await;
    c.send(WireCommand::SetConfigOverrides {
        overrides: vec!["admittance.f_max=10".into()],
    })
    .await;
    let hello = loop {
        if let ServerMessage::Hello(h) = c.next().await {
            break h;
        }
    };
    assert_eq!(hello.f_max_n, 10.0);
    c.send(WireCommand::SetForce { force_n: [-25.0, 3.0] }).await;
    let s = c.snapshot_where(100, |s| s.force_requested_n == [-25.0, 3.0]).await;
    assert_eq!(s.epoch, 1);
    assert_eq!(s.force_applied_n, [-10.0, 3.0]);

    c.send(WireCommand::SetConfigOverrides {
        overrides: vec!["admittance.no_such_key=1".into()],
    })
    .await;
    loop {
        if let ServerMessage::Error(e) = c.next().await {
            assert!(e.message.contains("no_such_key"), "{}", e.message);
            break;
        }
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn runaway_session_broadcasts_terminal_event() {
    let server = LiveServer::start(
        ScenarioConfig::paper(),
        SocketAddr::from(([127, 0, 0, 1], 0)),
        ServeOptions {
            speed: None,
            ..Default::default()
        },
    )
    .await
    .unwrap();
    let (mut c, _) = Client::connect(&server).await;
    c.send(WireCommand::SetConfigOverrides {
        overrides: vec!["admittance.fixed_region=1".into(), "admittance.f_max_n=200".into()],
    })
    .await;
    c.send(WireCommand::SetForce { force_n: [200.0, 0.0] }).await;
    let terminal: Terminal = loop {
        if let ServerMessage::Terminal(t) = c.next().await {
            break t;
        }
    };
    assert_eq!(terminal.class, "singular");
    assert!(terminal.step > 0);

    // a terminated session can be revived
    c.send(WireCommand::Reset).await;
    let s = c.snapshot_where(100, |s| s.epoch > terminal.epoch).await;
    assert_eq!(s.step, 0);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn runs_without_clients() {
    let server = start(50.0).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    let trace = server.shutdown().await;
    assert!(trace.records.len() > 100, "{} records", trace.records.len());
    assert!(trace.records.iter().all(|r| r.f_ext == [0.0, 0.0]));
}

#[tokio::test]
async fn invalid_options_are_refused() {
    let bad = ServeOptions {
        decimation: 0,
        ..Default::default()
    };
    let err = LiveServer::start(ScenarioConfig::paper(), SocketAddr::from(([127, 0, 0, 1], 0)), bad)
        .await
        .err()
        .unwrap();
    assert_eq!(err.class(), "config");
}
