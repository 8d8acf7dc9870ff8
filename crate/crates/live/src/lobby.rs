//! Lobby state. Everything here is synchronous; the HTTP layer wraps it.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use gbs_core::datastore::{session_log_path, LogLine, LogSource, SessionLog, StoreError, StreamingWriter};
use gbs_core::orchestrator::{run_session, PolicyFactory, RunOptions, SessionObserver, SystemClock};
use gbs_core::policy::{AgentPolicy, HumanBridge, HumanGuess, PolicyError};
use gbs_core::{AgentId, AgentKind, AgentSpec, FeedbackMode, GameStatus, SessionConfig};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LobbyError {
    #[error("{0}")]
    InvalidTemplate(String),
    #[error("no such lobby")]
    NotFound,
    #[error("lobby expired")]
    LobbyExpired,
    #[error("missing or unknown token")]
    AuthFailure,
    #[error("join code is not valid for this lobby")]
    BadJoinCode,
    #[error("seat already claimed")]
    SeatTaken,
    #[error("token does not hold a seat in this lobby")]
    NotYourSeat,
    #[error("lobby is not running")]
    NotRunning,
    #[error("guess {value} outside [{min}, {max}]")]
    OutOfRange { value: i64, min: i64, max: i64 },
    #[error("current round is game {game} round {round}")]
    WrongRound { game: u32, round: u32 },
    #[error("guess already submitted for this round")]
    AlreadySubmitted,
}

impl LobbyError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidTemplate(_) => "InvalidTemplate",
            Self::NotFound => "NotFound",
            Self::LobbyExpired => "LobbyExpired",
            Self::AuthFailure => "AuthFailure",
            Self::BadJoinCode => "BadJoinCode",
            Self::SeatTaken => "SeatTaken",
            Self::NotYourSeat => "NotYourSeat",
            Self::NotRunning => "NotRunning",
            Self::OutOfRange { .. } => "OutOfRange",
            Self::WrongRound { .. } => "WrongRound",
            Self::AlreadySubmitted => "AlreadySubmitted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LobbyState {
    Waiting,
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingGuess,
    AwaitingOthers,
    FeedbackReady,
    GameOver,
}

/// Events pushed to one seat. Sequence numbers are per seat and start at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    SessionStarted { n_players: usize, game_count: u32 },
    RoundStarted {
        game_index: u32,
        round_index: u32,
        feedback_mode: FeedbackMode,
        #[serde(skip_serializing_if = "Option::is_none")]
        deadline_ms: Option<u64>,
    },
    FeedbackReady { game_index: u32, round_index: u32, own_guess: i64, feedback: String, solved: bool },
    GameOver { game_index: u32, status: GameStatus, rounds: u32 },
    SessionOver { ok: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub game_index: u32,
    pub round_index: u32,
    pub own_guess: i64,
    pub feedback: String,
}

/// What one seat may see. Never carries other seats' guesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub lobby_state: LobbyState,
    pub agent_id: AgentId,
    pub game_index: u32,
    pub round_index: u32,
    pub phase: Option<Phase>,
    pub feedback_mode: Option<FeedbackMode>,
    pub guess_min: i64,
    pub guess_max: i64,
    pub history: Vec<HistoryEntry>,
    pub deadline_ms: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinLink {
    pub agent_id: AgentId,
    pub code: String,
}

struct HumanSeat {
    index: usize,
    agent_id: AgentId,
    code: String,
    token: Option<String>,
    inbox: Option<Sender<HumanGuess>>,
    submitted: bool,
    phase: Option<Phase>,
    history: Vec<HistoryEntry>,
    events: Vec<Event>,
}

impl HumanSeat {
    fn push(&mut self, kind: EventKind) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(Event { seq, kind });
    }
}

struct Inner {
    state: LobbyState,
    humans: Vec<HumanSeat>,
    current: (u32, u32),
    feedback_mode: Option<FeedbackMode>,
    deadline_ms: Option<u64>,
    last_activity: Instant,
    log: Option<SessionLog>,
    failure: Option<String>,
}

pub struct Lobby {
    pub id: String,
    pub config: SessionConfig,
    pub round_timeout: Duration,
    inner: Mutex<Inner>,
    version: watch::Sender<u64>,
}

pub fn random_token(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::rngs::OsRng.fill_bytes(&mut buf);
    buf.iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Lobby {
    pub fn new(id: String, config: SessionConfig, round_timeout: Duration) -> Result<Self, LobbyError> {
        config.validate().map_err(|e| LobbyError::InvalidTemplate(e.to_string()))?;
        let humans: Vec<HumanSeat> = config
            .agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.kind == AgentKind::Human)
            .map(|(index, a)| HumanSeat {
                index,
                agent_id: a.agent_id.clone(),
                code: random_token(8),
                token: None,
                inbox: None,
                submitted: false,
                phase: None,
                history: Vec::new(),
                events: Vec::new(),
            })
            .collect();
        if humans.is_empty() {
            return Err(LobbyError::InvalidTemplate("template has no human seat".into()));
        }
        if config.agents.iter().any(|a| a.kind == AgentKind::Replay) {
            return Err(LobbyError::InvalidTemplate("replay seats cannot join a live lobby".into()));
        }
        Ok(Self {
            id,
            config,
            round_timeout,
            inner: Mutex::new(Inner {
                state: LobbyState::Waiting,
                humans,
                current: (0, 0),
                feedback_mode: None,
                deadline_ms: None,
                last_activity: Instant::now(),
                log: None,
                failure: None,
            }),
            version: watch::channel(0).0,
        })
    }

    pub fn join_links(&self) -> Vec<JoinLink> {
        let inner = self.inner.lock().unwrap();
        inner.humans.iter().map(|h| JoinLink { agent_id: h.agent_id.clone(), code: h.code.clone() }).collect()
    }

    pub fn agent_seats(&self) -> Vec<AgentId> {
        self.config.agents.iter().filter(|a| a.kind != AgentKind::Human).map(|a| a.agent_id.clone()).collect()
    }

    pub fn state(&self) -> LobbyState {
        self.inner.lock().unwrap().state
    }

    /// Waiting or finished lobbies idle for longer than `ttl` are expired.
    pub fn expired(&self, ttl: Duration) -> bool {
        let inner = self.inner.lock().unwrap();
        inner.state != LobbyState::Running && inner.last_activity.elapsed() > ttl
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.version.subscribe()
    }

    fn bump(&self) {
        self.version.send_modify(|v| *v += 1);
    }

    fn seat<'a>(inner: &'a mut Inner, token: &str) -> Result<&'a mut HumanSeat, LobbyError> {
        inner
            .humans
            .iter_mut()
            .find(|h| h.token.as_deref() == Some(token))
            .ok_or(LobbyError::NotYourSeat)
    }

    /// Claims the seat behind `code`. Returns the seat token and whether every
    /// human seat is now taken.
    pub fn join(&self, code: &str) -> Result<(String, AgentId, bool), LobbyError> {
        let mut inner = self.inner.lock().unwrap();
        inner.last_activity = Instant::now();
        let seat = inner.humans.iter_mut().find(|h| h.code == code).ok_or(LobbyError::BadJoinCode)?;
        if seat.token.is_some() {
            return Err(LobbyError::SeatTaken);
        }
        let token = random_token(24);
        seat.token = Some(token.clone());
        let agent = seat.agent_id.clone();
        let full = inner.humans.iter().all(|h| h.token.is_some());
        Ok((token, agent, full))
    }

    pub fn view(&self, token: &str) -> Result<RoundView, LobbyError> {
        let mut inner = self.inner.lock().unwrap();
        let (state, (game, round), mode, deadline) =
            (inner.state, inner.current, inner.feedback_mode, inner.deadline_ms);
        let seat = Self::seat(&mut inner, token)?;
        Ok(RoundView {
            lobby_state: state,
            agent_id: seat.agent_id.clone(),
            game_index: game,
            round_index: round,
            phase: seat.phase,
            feedback_mode: mode,
            guess_min: self.config.guess_min,
            guess_max: self.config.guess_max,
            history: seat.history.clone(),
            deadline_ms: deadline,
        })
    }

    pub fn submit(&self, token: &str, game: u32, round: u32, value: i64) -> Result<Phase, LobbyError> {
        let mut inner = self.inner.lock().unwrap();
        inner.last_activity = Instant::now();
        let (state, current) = (inner.state, inner.current);
        let seat = Self::seat(&mut inner, token)?;
        if state != LobbyState::Running {
            return Err(LobbyError::NotRunning);
        }
        let (min, max) = (self.config.guess_min, self.config.guess_max);
        if !(min..=max).contains(&value) {
            return Err(LobbyError::OutOfRange { value, min, max });
        }
        if (game, round) != current {
            return Err(LobbyError::WrongRound { game: current.0, round: current.1 });
        }
        if seat.submitted || seat.phase != Some(Phase::AwaitingGuess) {
            return Err(LobbyError::AlreadySubmitted);
        }
        seat.submitted = true;
        seat.phase = Some(Phase::AwaitingOthers);
        if let Some(tx) = &seat.inbox {
            // a closed inbox means the session already ended; nothing to do
            let _ = tx.send(HumanGuess { game_index: game, round_index: round, value });
        }
        Ok(Phase::AwaitingOthers)
    }

    /// Events for the seat holding `token` with sequence numbers above `after`.
    pub fn events_after(&self, token: &str, after: u64) -> Result<(Vec<Event>, bool), LobbyError> {
        let mut inner = self.inner.lock().unwrap();
        let done = matches!(inner.state, LobbyState::Finished | LobbyState::Failed);
        let seat = Self::seat(&mut inner, token)?;
        Ok((seat.events.iter().filter(|e| e.seq > after).cloned().collect(), done))
    }

    pub fn check_token(&self, token: &str) -> Result<AgentId, LobbyError> {
        let mut inner = self.inner.lock().unwrap();
        Ok(Self::seat(&mut inner, token)?.agent_id.clone())
    }

    /// JSON-lines log of a finished session.
    pub fn log(&self) -> Option<SessionLog> {
        self.inner.lock().unwrap().log.clone()
    }

    pub fn failure(&self) -> Option<String> {
        self.inner.lock().unwrap().failure.clone()
    }

    /// Starts the session on its own thread. Agent seats are built by
    /// `factory`, human seats are bridged to [`Lobby::submit`].
    pub fn start(self: &Arc<Self>, factory: Arc<dyn PolicyFactory + Send + Sync>, log_dir: Option<PathBuf>) {
        let timeout = (!self.round_timeout.is_zero()).then_some(self.round_timeout);
        let mut bridges = HashMap::new();
        {
            let mut inner = self.inner.lock().unwrap();
            inner.state = LobbyState::Running;
            let (n, games) = (self.config.n_players(), self.config.game_plan().len() as u32);
            for h in &mut inner.humans {
                let (tx, rx) = mpsc::channel();
                h.inbox = Some(tx);
                bridges.insert(h.agent_id.clone(), HumanBridge::new(rx, timeout));
                h.push(EventKind::SessionStarted { n_players: n, game_count: games });
            }
        }
        self.bump();
        let lobby = Arc::clone(self);
        std::thread::Builder::new()
            .name(format!("lobby-{}", self.id))
            .spawn(move || {
                let factory = LiveFactory { inner: factory.as_ref(), humans: Mutex::new(bridges) };
                let opts = RunOptions {
                    clock: Arc::new(SystemClock),
                    source: LogSource::Live,
                    ..RunOptions::default()
                };
                let mut observer = LiveObserver { lobby: &lobby };
                let result = match log_dir {
                    Some(dir) => match StreamingWriter::create(&session_log_path(&dir, &lobby.config.session_id)) {
                        Ok(writer) => {
                            let mut pair = (observer, writer);
                            run_session(&lobby.config, &factory, &opts, &mut pair)
                        }
                        Err(e) => {
                            tracing::error!(error = %e, "cannot open live session log; keeping it in memory only");
                            run_session(&lobby.config, &factory, &opts, &mut observer)
                        }
                    },
                    None => run_session(&lobby.config, &factory, &opts, &mut observer),
                };
                lobby.finish(result);
            })
            .expect("spawn lobby thread");
    }

    fn finish(&self, result: Result<SessionLog, gbs_core::orchestrator::SessionFailure>) {
        let mut inner = self.inner.lock().unwrap();
        let ok = result.is_ok();
        match result {
            Ok(log) => {
                inner.state = LobbyState::Finished;
                inner.log = Some(log);
            }
            Err(f) => {
                tracing::warn!(lobby = %self.id, error = %f.error, "live session failed");
                inner.state = LobbyState::Failed;
                inner.failure = Some(f.error.to_string());
                inner.log = Some(*f.partial);
            }
        }
        inner.last_activity = Instant::now();
        for h in &mut inner.humans {
            h.inbox = None;
            h.push(EventKind::SessionOver { ok });
        }
        drop(inner);
        self.bump();
    }
}

struct LiveFactory<'a> {
    inner: &'a (dyn PolicyFactory + Send + Sync),
    humans: Mutex<HashMap<AgentId, HumanBridge>>,
}

impl PolicyFactory for LiveFactory<'_> {
    fn build(
        &self,
        spec: &AgentSpec,
        index: usize,
        session: &SessionConfig,
        seed: u64,
    ) -> Result<Box<dyn AgentPolicy>, PolicyError> {
        if spec.kind == AgentKind::Human {
            let bridge = self.humans.lock().unwrap().remove(&spec.agent_id).ok_or_else(|| {
                PolicyError::BadSpec(format!("no live connection for seat {}", spec.agent_id))
            })?;
            return Ok(Box::new(bridge));
        }
        self.inner.build(spec, index, session, seed)
    }
}

struct LiveObserver<'a> {
    lobby: &'a Lobby,
}

impl SessionObserver for LiveObserver<'_> {
    fn on_line(&mut self, line: &LogLine) -> Result<(), StoreError> {
        let mut inner = self.lobby.inner.lock().unwrap();
        match line {
            LogLine::Game { feedback_mode, .. } => inner.feedback_mode = Some(*feedback_mode),
            LogLine::Round { game_index, round } => {
                inner.deadline_ms = None;
                for h in &mut inner.humans {
                    let (own, text) = (round.guesses[h.index], round.rendered[h.index].clone());
                    h.phase = Some(Phase::FeedbackReady);
                    h.history.push(HistoryEntry {
                        game_index: *game_index,
                        round_index: round.round_index,
                        own_guess: own,
                        feedback: text.clone(),
                    });
                    h.push(EventKind::FeedbackReady {
                        game_index: *game_index,
                        round_index: round.round_index,
                        own_guess: own,
                        feedback: text,
                        solved: round.feedback.solved,
                    });
                }
            }
            LogLine::GameEnd { game_index, status, rounds } => {
                for h in &mut inner.humans {
                    h.phase = Some(Phase::GameOver);
                    h.push(EventKind::GameOver { game_index: *game_index, status: *status, rounds: *rounds });
                }
            }
            LogLine::Header(_) | LogLine::Footer(_) => return Ok(()),
        }
        drop(inner);
        self.lobby.bump();
        Ok(())
    }

    fn on_round_start(&mut self, game_index: u32, round_index: u32) {
        let mut inner = self.lobby.inner.lock().unwrap();
        let timeout = self.lobby.round_timeout;
        let deadline = (!timeout.is_zero()).then(|| now_ms() + timeout.as_millis() as u64);
        inner.current = (game_index, round_index);
        inner.deadline_ms = deadline;
        let mode = inner.feedback_mode.unwrap_or(FeedbackMode::Directional);
        for h in &mut inner.humans {
            h.submitted = false;
            h.phase = Some(Phase::AwaitingGuess);
            h.push(EventKind::RoundStarted { game_index, round_index, feedback_mode: mode, deadline_ms: deadline });
        }
        drop(inner);
        self.lobby.bump();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(humans: usize, scripted: usize) -> SessionConfig {
        let mut agents: Vec<AgentSpec> = (0..humans).map(|i| AgentSpec::human(format!("H{i}"))).collect();
        agents.extend((0..scripted).map(|i| AgentSpec::scripted(format!("S{i}"), "oracle")));
        SessionConfig::new("live-test", agents, 3)
    }

    #[test]
    fn needs_a_human_seat() {
        assert!(matches!(
            Lobby::new("x".into(), template(0, 2), Duration::ZERO),
            Err(LobbyError::InvalidTemplate(_))
        ));
        let l = Lobby::new("x".into(), template(1, 2), Duration::ZERO).unwrap();
        assert_eq!(l.join_links().len(), 1);
        assert_eq!(l.agent_seats().len(), 2);
    }

    #[test]
    fn seats_are_claimed_once() {
        let l = Lobby::new("x".into(), template(2, 0), Duration::ZERO).unwrap();
        let codes = l.join_links();
        let (t1, _, full) = l.join(&codes[0].code).unwrap();
        assert!(!full);
        assert_eq!(l.join(&codes[0].code), Err(LobbyError::SeatTaken));
        assert_eq!(l.join("nope"), Err(LobbyError::BadJoinCode));
        let (t2, _, full) = l.join(&codes[1].code).unwrap();
        assert!(full);
        assert_ne!(t1, t2);
        assert_eq!(t1.len(), 48);
    }

    #[test]
    fn submit_before_start_is_rejected() {
        let l = Lobby::new("x".into(), template(1, 1), Duration::ZERO).unwrap();
        let (t, _, _) = l.join(&l.join_links()[0].code).unwrap();
        assert_eq!(l.submit(&t, 1, 1, 25), Err(LobbyError::NotRunning));
        assert_eq!(l.submit("bogus", 1, 1, 25), Err(LobbyError::NotYourSeat));
    }
}
