//! HTTP and WebSocket front end for a live session.
//!
//! One driver task ticks the session at a fixed period and fans every
//! resulting frame out to all `/ws/state` clients.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flexlane_core::rules::RuleBase;
use flexlane_core::sim::{Scenario, BUILTIN_SCENARIOS};
use flexlane_core::translation::Translator;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::broadcast;

use crate::session::{Session, SessionError};

/// Frames a slow client may fall behind before it starts losing them.
pub const FRAME_BACKLOG: usize = 256;

pub struct Gateway {
    session: Mutex<Session>,
    translator: Arc<Translator>,
    background: bool,
    frames: broadcast::Sender<Arc<str>>,
}

impl Gateway {
    pub fn new(scenario: Scenario, translator: Arc<Translator>, background: bool) -> Result<Arc<Gateway>, SessionError> {
        let session = Self::session_for(scenario, &translator, background)?;
        Ok(Arc::new(Gateway {
            session: Mutex::new(session),
            translator,
            background,
            frames: broadcast::channel(FRAME_BACKLOG).0,
        }))
    }

    fn session_for(scenario: Scenario, translator: &Arc<Translator>, background: bool) -> Result<Session, SessionError> {
        let mut session = Session::new(scenario, translator.clone(), RuleBase::shipped())?;
        if background {
            session.translate_in_background();
        }
        Ok(session)
    }

    fn session(&self) -> MutexGuard<'_, Session> {
        // A panic mid-tick leaves nothing half-written that later ticks rely on.
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Advances the session one tick and broadcasts the frame.
    pub fn tick(&self) {
        let frame = self.session().tick();
        let text: Arc<str> = serde_json::to_string(&frame).expect("frames serialize").into();
        // No subscribers is fine.
        let _ = self.frames.send(text);
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.frames.subscribe()
    }
}

#[derive(Deserialize)]
struct InstructionBody {
    text: String,
}

#[derive(Deserialize)]
struct ScenarioBody {
    name: String,
}

fn bad_request(issues: Vec<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "issues": issues }))).into_response()
}

/// Bodies are parsed by hand so that every rejection has the same shape.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T, String> {
    if body.trim().is_empty() {
        return Err("request body is empty".into());
    }
    serde_json::from_str(body).map_err(|e| format!("malformed body: {e}"))
}

async fn post_instruction(State(gw): State<Arc<Gateway>>, body: String) -> Response {
    let req: InstructionBody = match parse_body(&body) {
        Ok(r) => r,
        Err(issue) => return bad_request(vec![issue]),
    };
    if req.text.trim().is_empty() {
        return bad_request(vec!["text is empty".into()]);
    }
    match gw.session().submit_utterance(&req.text) {
        Ok(id) => Json(json!({ "id": id })).into_response(),
        Err(e) => bad_request(vec![e.to_string()]),
    }
}

async fn get_trace(State(gw): State<Arc<Gateway>>, Path(id): Path<u64>) -> Response {
    match gw.session().trace(id) {
        Some(trace) => Json(trace.clone()).into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({ "issues": [format!("no trace {id}")] }))).into_response(),
    }
}

async fn get_scenarios(State(gw): State<Arc<Gateway>>) -> Json<Value> {
    let current = gw.session().sim().scenario().name.clone();
    let list: Vec<Value> = BUILTIN_SCENARIOS
        .iter()
        .map(|name| {
            let s = Scenario::builtin(name).expect("builtin scenarios load");
            json!({ "name": s.name, "description": s.description })
        })
        .collect();
    Json(json!({ "current": current, "scenarios": list }))
}

async fn post_scenario(State(gw): State<Arc<Gateway>>, body: String) -> Response {
    let req: ScenarioBody = match parse_body(&body) {
        Ok(r) => r,
        Err(issue) => return bad_request(vec![issue]),
    };
    let Ok(scenario) = Scenario::builtin(&req.name) else {
        return bad_request(vec![format!("unknown scenario `{}`", req.name)]);
    };
    match Gateway::session_for(scenario, &gw.translator, gw.background) {
        Ok(fresh) => {
            *gw.session() = fresh;
            Json(json!({ "name": req.name })).into_response()
        }
        Err(e) => bad_request(vec![e.to_string()]),
    }
}

async fn ws_state(State(gw): State<Arc<Gateway>>, ws: WebSocketUpgrade) -> Response {
    let rx = gw.subscribe();
    ws.on_upgrade(move |socket| stream_frames(socket, rx))
}

async fn stream_frames(mut socket: WebSocket, mut rx: broadcast::Receiver<Arc<str>>) {
    loop {
        match rx.recv().await {
            Ok(text) => {
                if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                    return;
                }
            }
            Err(broadcast::error::RecvError::Lagged(_)) => continue,
            Err(broadcast::error::RecvError::Closed) => return,
        }
    }
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/ws/state", get(ws_state))
        .route("/api/instruction", post(post_instruction))
        .route("/api/trace/{id}", get(get_trace))
        .route("/api/scenarios", get(get_scenarios))
        .route("/api/scenario", post(post_scenario))
        .with_state(gw)
}

/// Serves until the listener fails, ticking the session every `tick`.
pub async fn serve(listener: TcpListener, gw: Arc<Gateway>, tick: Duration) -> std::io::Result<()> {
    let driver = gw.clone();
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(tick);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            let gw = driver.clone();
            // Inline translation may block for a while.
            if tokio::task::spawn_blocking(move || gw.tick()).await.is_err() {
                return;
            }
        }
    });
    axum::serve(listener, router(gw)).await
}
