//! HTTP and websocket front end around a single [`Session`].
//!
//! A background task owns the tick clock; it steps the session at the
//! controller rate while at least one socket is connected and broadcasts
//! each state record. Sockets push commands straight into the session,
//! so the latest command before a tick wins.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast;

use super::protocol::{parse_command, ServerMessage};
use super::session::Session;
use crate::control::AssistMode;
use crate::scene::Goal;

/// Environment variable that supplies the port when `--port` is absent.
pub const PORT_ENV: &str = "RT_PORT";

struct Inner {
    session: Mutex<Session>,
    clients: Mutex<usize>,
    states: broadcast::Sender<String>,
    record: Option<Mutex<Recorder>>,
}

struct Recorder {
    out: std::io::BufWriter<std::fs::File>,
    written: usize,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// `record` receives the session's command log as it grows.
    pub fn new(session: Session, record: Option<PathBuf>) -> std::io::Result<Self> {
        let (states, _) = broadcast::channel(64);
        let record = match record {
            Some(p) => Some(Mutex::new(Recorder {
                out: std::io::BufWriter::new(std::fs::File::create(p)?),
                written: 0,
            })),
            None => None,
        };
        let s = Self(Arc::new(Inner {
            session: Mutex::new(session),
            clients: Mutex::new(0),
            states,
            record,
        }));
        s.flush_log();
        Ok(s)
    }

    fn flush_log(&self) {
        let Some(rec) = &self.0.record else { return };
        let session = self.0.session.lock().expect("session lock");
        let mut rec = rec.lock().expect("recorder lock");
        let fresh = session.log_since(rec.written);
        let n = fresh.len();
        for r in fresh {
            let line = serde_json::to_string(r).expect("log record serialises");
            if let Err(e) = writeln!(rec.out, "{line}") {
                tracing::warn!(error = %e, "session log write failed");
            }
        }
        rec.written += n;
        let _ = rec.out.flush();
    }

    /// One tick if the session is live; returns the encoded state.
    pub fn step(&self) -> Option<String> {
        let msg = {
            let mut s = self.0.session.lock().expect("session lock");
            if s.is_paused() {
                return None;
            }
            s.step()
        };
        Some(serde_json::to_string(&ServerMessage::State(msg)).expect("state serialises"))
    }

    fn connect(&self) {
        let mut n = self.0.clients.lock().expect("clients lock");
        *n += 1;
        self.0.session.lock().expect("session lock").resume();
    }

    fn disconnect(&self) {
        let mut n = self.0.clients.lock().expect("clients lock");
        *n = n.saturating_sub(1);
        if *n == 0 {
            self.0.session.lock().expect("session lock").pause();
            drop(n);
            self.flush_log();
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", get(session_info))
        .route("/session/reset", post(reset))
        .route("/session/mode", post(set_mode))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

/// Steps the session every `period` until the process ends.
pub async fn tick_loop(state: AppState, period: Duration) {
    let mut clock = tokio::time::interval(period);
    clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        clock.tick().await;
        let st = state.clone();
        let msg = tokio::task::spawn_blocking(move || st.step()).await.ok().flatten();
        if let Some(m) = msg {
            let _ = state.0.states.send(m);
        }
    }
}

/// Binds `addr` and serves until the future is dropped.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    serve_listener(state, listener).await
}

pub async fn serve_listener(state: AppState, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let period = {
        let s = state.0.session.lock().expect("session lock");
        Duration::from_secs_f64(s.config().dt)
    };
    tokio::spawn(tick_loop(state.clone(), period));
    axum::serve(listener, router(state)).await
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    let tick = st.0.session.lock().expect("session lock").tick();
    Json(json!({ "status": "ok", "tick": tick }))
}

fn describe(s: &Session) -> serde_json::Value {
    json!({
        "id": s.id,
        "mode": s.mode(),
        "tick": s.tick(),
        "paused": s.is_paused(),
        "scene": s.scene(),
        "config": s.config(),
    })
}

async fn session_info(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(describe(&st.0.session.lock().expect("session lock")))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ResetRequest {
    goals: Option<Vec<Goal>>,
    seed: Option<u64>,
}

async fn reset(State(st): State<AppState>, body: Option<Json<ResetRequest>>) -> Response {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let out = {
        let mut s = st.0.session.lock().expect("session lock");
        match s.reset(req.goals, req.seed) {
            Ok(()) => Json(describe(&s)).into_response(),
            Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
        }
    };
    st.flush_log();
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeRequest {
    mode: String,
}

async fn set_mode(State(st): State<AppState>, Json(req): Json<ModeRequest>) -> Response {
    let mode: AssistMode = match req.mode.parse() {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("{e}")),
    };
    let out = {
        let mut s = st.0.session.lock().expect("session lock");
        match s.set_mode(mode) {
            Ok(()) => Json(describe(&s)).into_response(),
            Err(e) => error(StatusCode::CONFLICT, e.to_string()),
        }
    };
    st.flush_log();
    out
}

async fn ws_upgrade(State(st): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| client(st, socket))
}

async fn client(st: AppState, socket: WebSocket) {
    let mut states = st.0.states.subscribe();
    st.connect();
    let (mut tx, mut rx) = socket.split();
    let (err_tx, mut err_rx) = tokio::sync::mpsc::unbounded_channel::<String>();
    let send = async {
        loop {
            let text = tokio::select! {
                m = states.recv() => match m {
                    Ok(m) => m,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(_) => break,
                },
                Some(e) = err_rx.recv() => e,
            };
            if tx.send(Message::Text(text)).await.is_err() {
                break;
            }
        }
    };
    let recv = async {
        while let Some(Ok(msg)) = rx.next().await {
            let text = match msg {
                Message::Text(t) => t,
                Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                Message::Close(_) => break,
                _ => continue,
            };
            match parse_command(&text) {
                Ok(cmd) => {
                    st.0.session.lock().expect("session lock").set_command(cmd);
                    st.flush_log();
                }
                Err(message) => {
                    let e = serde_json::to_string(&ServerMessage::Error { message }).expect("error serialises");
                    let _ = err_tx.send(e);
                }
            }
        }
    };
    tokio::select! {
        _ = send => {}
        _ = recv => {}
    }
    st.disconnect();
}
