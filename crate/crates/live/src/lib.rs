//! HTTP service hosting live sessions where people play alongside scripted
//! and model agents.
//!
//! | method | path | body / query | reply |
//! |---|---|---|---|
//! | `POST` | `/lobbies` | [`CreateLobby`] | [`LobbyCreated`] |
//! | `POST` | `/lobbies/{id}/join` | `{"code"}` | [`Joined`] |
//! | `GET` | `/lobbies/{id}/view` | token | [`RoundView`] |
//! | `POST` | `/lobbies/{id}/guess` | token, [`SubmitGuess`] | `{"accepted", "phase"}` |
//! | `GET` | `/lobbies/{id}/events` | token, `after` or `Last-Event-ID` | SSE stream of [`Event`] |
//! | `GET` | `/lobbies/{id}/log` | token | session log as JSON lines |
//!
//! The token goes in `Authorization: Bearer <token>` or, for browsers'
//! `EventSource`, a `token` query parameter. Errors are
//! `{"error": "<Code>", "message": "..."}` with a matching status.

pub mod lobby;

use std::collections::{HashMap, HashSet};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{self, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use gbs_core::orchestrator::{DefaultFactory, GameSpec, PolicyFactory};
use gbs_core::{AgentId, AgentSpec, FeedbackMode, SessionConfig};
use serde::{Deserialize, Serialize};

pub use lobby::{Event, EventKind, Lobby, LobbyError, LobbyState, Phase, RoundView};

#[derive(Clone)]
pub struct ServiceConfig {
    /// Idle waiting or finished lobbies are dropped after this long.
    pub lobby_ttl: Duration,
    /// Per-round deadline for human seats when a lobby does not set one.
    pub default_round_timeout: Duration,
    /// Directory for `<session_id>/log.jsonl` files; logs stay in memory when unset.
    pub log_dir: Option<PathBuf>,
    pub factory: Arc<dyn PolicyFactory + Send + Sync>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            lobby_ttl: Duration::from_secs(30 * 60),
            default_round_timeout: Duration::from_secs(60),
            log_dir: None,
            factory: Arc::new(DefaultFactory::new()),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    config: ServiceConfig,
    lobbies: Arc<Mutex<HashMap<String, Arc<Lobby>>>>,
    expired: Arc<Mutex<HashSet<String>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self { config, lobbies: Arc::default(), expired: Arc::default() }
    }

    fn lobby(&self, id: &str) -> Result<Arc<Lobby>, ApiError> {
        let mut lobbies = self.lobbies.lock().unwrap();
        match lobbies.get(id) {
            Some(l) if l.expired(self.config.lobby_ttl) => {
                lobbies.remove(id);
                self.expired.lock().unwrap().insert(id.to_string());
                Err(LobbyError::LobbyExpired.into())
            }
            Some(l) => Ok(l.clone()),
            None if self.expired.lock().unwrap().contains(id) => Err(LobbyError::LobbyExpired.into()),
            None => Err(LobbyError::NotFound.into()),
        }
    }

    /// Drops expired lobbies, remembering their ids.
    pub fn sweep(&self) -> usize {
        let mut lobbies = self.lobbies.lock().unwrap();
        let dead: Vec<String> = lobbies
            .iter()
            .filter(|(_, l)| l.expired(self.config.lobby_ttl))
            .map(|(k, _)| k.clone())
            .collect();
        let mut expired = self.expired.lock().unwrap();
        for id in &dead {
            lobbies.remove(id);
            expired.insert(id.clone());
        }
        dead.len()
    }
}

pub struct ApiError(LobbyError);

impl From<LobbyError> for ApiError {
    fn from(e: LobbyError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            LobbyError::InvalidTemplate(_) | LobbyError::BadJoinCode => StatusCode::BAD_REQUEST,
            LobbyError::NotFound => StatusCode::NOT_FOUND,
            LobbyError::LobbyExpired => StatusCode::GONE,
            LobbyError::AuthFailure => StatusCode::UNAUTHORIZED,
            LobbyError::NotYourSeat => StatusCode::FORBIDDEN,
            LobbyError::OutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            LobbyError::SeatTaken
            | LobbyError::NotRunning
            | LobbyError::WrongRound { .. }
            | LobbyError::AlreadySubmitted => StatusCode::CONFLICT,
        };
        let body = serde_json::json!({ "error": self.0.code(), "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

/// Lobby template. Only `agents` is required; at least one must be human.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateLobby {
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub condition: Option<String>,
    #[serde(default)]
    pub base_seed: Option<u64>,
    #[serde(default)]
    pub game_count: Option<u32>,
    #[serde(default)]
    pub first_feedback_mode: Option<FeedbackMode>,
    /// Fixed targets, one per game.
    #[serde(default)]
    pub targets: Option<Vec<i64>>,
    #[serde(default)]
    pub include_group_sum_in_feedback: Option<bool>,
    /// Seconds per round; 0 waits indefinitely.
    #[serde(default)]
    pub round_timeout_secs: Option<u64>,
    /// Milliseconds per round; takes precedence over `round_timeout_secs`.
    #[serde(default)]
    pub round_timeout_ms: Option<u64>,
}

impl CreateLobby {
    fn session_config(&self, lobby_id: &str) -> SessionConfig {
        let id = self.session_id.clone().unwrap_or_else(|| format!("live-{}", &lobby_id[..12]));
        let seed = self.base_seed.unwrap_or_else(|| u64::from_str_radix(&lobby_id[..8], 16).unwrap_or(0));
        let mut cfg = SessionConfig::new(id, self.agents.clone(), seed);
        if let Some(c) = &self.condition {
            cfg.condition = c.clone();
        }
        if let Some(n) = self.game_count {
            cfg.game_count = n;
        }
        if let Some(m) = self.first_feedback_mode {
            cfg.first_feedback_mode = m;
        }
        if let Some(g) = self.include_group_sum_in_feedback {
            cfg.include_group_sum_in_feedback = g;
        }
        if let Some(targets) = &self.targets {
            let mut mode = cfg.first_feedback_mode;
            let games = targets
                .iter()
                .map(|t| {
                    let g = GameSpec { feedback_mode: mode, target: Some(*t) };
                    mode = mode.other();
                    g
                })
                .collect();
            cfg = cfg.with_fixed_games(games);
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LobbyCreated {
    pub lobby_id: String,
    pub session_id: String,
    pub join_links: Vec<JoinLinkOut>,
    pub agent_seats: Vec<AgentId>,
    pub round_timeout_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinLinkOut {
    pub agent_id: AgentId,
    pub code: String,
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinRequest {
    pub code: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Joined {
    pub token: String,
    pub agent_id: AgentId,
    pub started: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitGuess {
    pub game_index: u32,
    pub round_index: u32,
    pub guess: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub accepted: bool,
    pub phase: Phase,
}

#[derive(Debug, Default, Deserialize)]
pub struct TokenQuery {
    token: Option<String>,
    after: Option<u64>,
}

fn token(headers: &HeaderMap, query: &TokenQuery) -> Result<String, ApiError> {
    let from_header = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::to_string);
    from_header.or_else(|| query.token.clone()).filter(|t| !t.is_empty()).ok_or(LobbyError::AuthFailure.into())
}

async fn create_lobby(State(app): State<AppState>, Json(req): Json<CreateLobby>) -> Result<Response, ApiError> {
    let id = lobby::random_token(16);
    let timeout = req
        .round_timeout_ms
        .map(Duration::from_millis)
        .or(req.round_timeout_secs.map(Duration::from_secs))
        .unwrap_or(app.config.default_round_timeout);
    let lobby = Lobby::new(id.clone(), req.session_config(&id), timeout)?;
    let body = LobbyCreated {
        lobby_id: id.clone(),
        session_id: lobby.config.session_id.clone(),
        join_links: lobby
            .join_links()
            .into_iter()
            .map(|l| JoinLinkOut { url: format!("/lobbies/{id}/join?code={}", l.code), agent_id: l.agent_id, code: l.code })
            .collect(),
        agent_seats: lobby.agent_seats(),
        round_timeout_ms: timeout.as_millis() as u64,
    };
    app.lobbies.lock().unwrap().insert(id, Arc::new(lobby));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn join(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<JoinRequest>,
) -> Result<Json<Joined>, ApiError> {
    let lobby = app.lobby(&id)?;
    let (token, agent_id, full) = lobby.join(&req.code)?;
    if full {
        lobby.start(app.config.factory.clone(), app.config.log_dir.clone());
    }
    Ok(Json(Joined { token, agent_id, started: full }))
}

async fn view(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Json<RoundView>, ApiError> {
    let lobby = app.lobby(&id)?;
    Ok(Json(lobby.view(&token(&headers, &q)?)?))
}

async fn guess(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
    Json(req): Json<SubmitGuess>,
) -> Result<Json<Accepted>, ApiError> {
    let lobby = app.lobby(&id)?;
    let phase = lobby.submit(&token(&headers, &q)?, req.game_index, req.round_index, req.guess)?;
    Ok(Json(Accepted { accepted: true, phase }))
}

async fn session_log(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    let lobby = app.lobby(&id)?;
    lobby.check_token(&token(&headers, &q)?)?;
    match (lobby.state(), lobby.log()) {
        (LobbyState::Finished | LobbyState::Failed, Some(log)) => {
            Ok(([("content-type", "application/x-ndjson")], log.to_jsonl()).into_response())
        }
        _ => Err(LobbyError::NotRunning.into()),
    }
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Sse<impl Stream<Item = Result<sse::Event, Infallible>>>, ApiError> {
    let lobby = app.lobby(&id)?;
    let token = token(&headers, &q)?;
    lobby.check_token(&token)?;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok())
        .or(q.after)
        .unwrap_or(0);
    let rx = lobby.subscribe();
    let stream = futures::stream::unfold(
        (lobby, token, rx, resume, Vec::<Event>::new(), false),
        |(lobby, token, mut rx, mut last, mut pending, mut done)| async move {
            loop {
                if let Some(e) = (!pending.is_empty()).then(|| pending.remove(0)) {
                    last = e.seq;
                    let data = serde_json::to_string(&e).expect("event serializes");
                    let out = sse::Event::default().id(e.seq.to_string()).event(event_name(&e.kind)).data(data);
                    return Some((Ok(out), (lobby, token, rx, last, pending, done)));
                }
                if done {
                    return None;
                }
                rx.borrow_and_update();
                let Ok((fresh, finished)) = lobby.events_after(&token, last) else { return None };
                pending = fresh;
                done = finished;
                if pending.is_empty() && !done && rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn event_name(kind: &EventKind) -> &'static str {
    match kind {
        EventKind::SessionStarted { .. } => "session_started",
        EventKind::RoundStarted { .. } => "round_started",
        EventKind::FeedbackReady { .. } => "feedback_ready",
        EventKind::GameOver { .. } => "game_over",
        EventKind::SessionOver { .. } => "session_over",
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/lobbies", post(create_lobby))
        .route("/lobbies/:id/join", post(join))
        .route("/lobbies/:id/view", get(view))
        .route("/lobbies/:id/guess", post(guess))
        .route("/lobbies/:id/events", get(events))
        .route("/lobbies/:id/log", get(session_log))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends. Expired lobbies are swept
/// in the background.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "live service listening");
    serve_on(listener, config).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let sweeper = state.clone();
    let period = (state.config.lobby_ttl / 2).max(Duration::from_millis(50));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = sweeper.sweep();
            if n > 0 {
                tracing::debug!(expired = n, "swept idle lobbies");
            }
        }
    });
    axum::serve(listener, router(state)).await
}
