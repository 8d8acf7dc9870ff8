//! Games, sessions and experiments.
//!
//! A session is a fixed group playing `game_count` games in a row with
//! alternating feedback modes; each agent's [`Observation`] carries over from
//! game to game. Within a round every agent decides before any feedback is
//! computed (the round barrier), blocking agents concurrently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datastore::{
    condition_label, session_log_path, write_manifest, DecisionMeta, GameLog, LogLine,
    LogSource, ManifestEntry, RoundLog, SessionFooter, SessionHeader, SessionLog, SizeCategory,
    StoreError, StreamingWriter, DEFAULT_RAW_TEXT_CAP, SCHEMA_VERSION,
};
use crate::game::{
    render_feedback, sample_target, scaled_target_range, AgentId, FeedbackMode, GameConfig,
    GameError, GameState, GameStatus, Guess,
};
use crate::gateway::GatewayRegistry;
use crate::policy::{
    AgentKind, AgentPolicy, AgentSpec, Decision, LlmPolicy, ObservedFeedback, ObservedRound,
    Observation, PolicyError, ReplayPolicy, ReplayTrace, ScriptedPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Uniform in the scaled range `[25n + 1, 50n]`.
    #[default]
    ScaledUniform,
    /// Targets come from the game list.
    FixedList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameSpec {
    pub feedback_mode: FeedbackMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    /// Analysis label; derived from the agents when empty.
    #[serde(default)]
    pub condition: String,
    pub agents: Vec<AgentSpec>,
    /// Explicit game list. When empty, `game_count` games alternate starting
    /// from `first_feedback_mode`.
    #[serde(default)]
    pub games: Vec<GameSpec>,
    pub base_seed: u64,
    pub game_count: u32,
    pub first_feedback_mode: FeedbackMode,
    pub target_policy: TargetPolicy,
    pub guess_min: i64,
    pub guess_max: i64,
    pub max_rounds: u32,
    pub include_group_sum_in_feedback: bool,
    /// Overrides the scaled target range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_range: Option<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionConfigError {
    #[error("session `{0}` has no agents")]
    NoAgents(String),
    #[error("session `{0}`: duplicate agent id {1}")]
    DuplicateAgent(String, AgentId),
    #[error("session `{0}`: game_count must be even when modes alternate")]
    OddGameCount(String),
    #[error("session `{0}`: {1}")]
    Game(String, GameError),
    #[error("session `{0}`: fixed target list needs a target for every game")]
    MissingTarget(String),
    #[error("session `{0}`: {1}")]
    Agent(String, PolicyError),
}

impl SessionConfig {
    pub const DEFAULT_GAME_COUNT: u32 = 10;

    pub fn new(session_id: impl Into<String>, agents: Vec<AgentSpec>, base_seed: u64) -> Self {
        Self {
            session_id: session_id.into(),
            condition: String::new(),
            agents,
            games: Vec::new(),
            base_seed,
            game_count: Self::DEFAULT_GAME_COUNT,
            first_feedback_mode: FeedbackMode::Directional,
            target_policy: TargetPolicy::ScaledUniform,
            guess_min: GameConfig::DEFAULT_GUESS_MIN,
            guess_max: GameConfig::DEFAULT_GUESS_MAX,
            max_rounds: GameConfig::DEFAULT_MAX_ROUNDS,
            include_group_sum_in_feedback: false,
            target_range: None,
        }
    }

    /// Plays the listed games with these fixed targets.
    pub fn with_fixed_games(mut self, games: Vec<GameSpec>) -> Self {
        self.game_count = games.len() as u32;
        self.games = games;
        self.target_policy = TargetPolicy::FixedList;
        self
    }

    pub fn n_players(&self) -> usize {
        self.agents.len()
    }

    pub fn condition(&self) -> String {
        if self.condition.is_empty() {
            condition_label(&self.agents, "scripted")
        } else {
            self.condition.clone()
        }
    }

    pub fn game_plan(&self) -> Vec<GameSpec> {
        if !self.games.is_empty() {
            return self.games.clone();
        }
        let mut mode = self.first_feedback_mode;
        (0..self.game_count)
            .map(|_| {
                let g = GameSpec { feedback_mode: mode, target: None };
                mode = mode.other();
                g
            })
            .collect()
    }

    pub fn game_config(&self, mode: FeedbackMode) -> GameConfig {
        let n = self.n_players();
        let (target_min, target_max) = self
            .target_range
            .unwrap_or_else(|| scaled_target_range(n, self.guess_min, self.guess_max));
        GameConfig {
            n_players: n,
            guess_min: self.guess_min,
            guess_max: self.guess_max,
            target_min,
            target_max,
            max_rounds: self.max_rounds,
            feedback_mode: mode,
            include_group_sum_in_feedback: self.include_group_sum_in_feedback,
        }
    }

    pub fn validate(&self) -> Result<(), SessionConfigError> {
        let id = || self.session_id.clone();
        if self.agents.is_empty() {
            return Err(SessionConfigError::NoAgents(id()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if self.agents[..i].iter().any(|b| b.agent_id == a.agent_id) {
                return Err(SessionConfigError::DuplicateAgent(id(), a.agent_id.clone()));
            }
            a.validate().map_err(|e| SessionConfigError::Agent(id(), e))?;
        }
        if self.games.is_empty() && self.game_count % 2 != 0 {
            return Err(SessionConfigError::OddGameCount(id()));
        }
        let cfg = self.game_config(self.first_feedback_mode);
        cfg.validate().map_err(|e| SessionConfigError::Game(id(), e.into()))?;
        for g in self.game_plan() {
            match (self.target_policy, g.target) {
                (TargetPolicy::FixedList, None) => return Err(SessionConfigError::MissingTarget(id())),
                (_, Some(t)) if !cfg.target_reachable(t) => {
                    let (min, max) = cfg.sum_range();
                    return Err(SessionConfigError::Game(
                        id(),
                        GameError::TargetOutOfRange { target: t, min, max },
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Seed for agent `index`: `base ^ ((index + 1) * 0x9E3779B9)`, kept to 31 bits.
/// The multiplier is odd, so seeds within a session are pairwise distinct.
pub fn agent_seed(base_seed: u64, index: usize) -> u64 {
    (base_seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9)) & 0x7FFF_FFFF
}

/// Base seed of replication `r`; replication 0 keeps the configured seed.
pub fn replication_seed(base_seed: u64, replication: u32) -> u64 {
    base_seed ^ (replication as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Wall-clock milliseconds since the Unix epoch.
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Always reports time zero, so logs are reproducible byte for byte.
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

/// Receives session events as they happen.
pub trait SessionObserver {
    fn on_line(&mut self, _line: &LogLine) -> Result<(), StoreError> {
        Ok(())
    }
    /// Before agents are asked for round `round_index`.
    fn on_round_start(&mut self, _game_index: u32, _round_index: u32) {}
}

pub struct NoopObserver;

impl SessionObserver for NoopObserver {}

impl<W: std::io::Write> SessionObserver for StreamingWriter<W> {
    fn on_line(&mut self, line: &LogLine) -> Result<(), StoreError> {
        self.append(line)
    }
}

impl<A: SessionObserver, B: SessionObserver> SessionObserver for (A, B) {
    fn on_line(&mut self, line: &LogLine) -> Result<(), StoreError> {
        self.0.on_line(line)?;
        self.1.on_line(line)
    }

    fn on_round_start(&mut self, game_index: u32, round_index: u32) {
        self.0.on_round_start(game_index, round_index);
        self.1.on_round_start(game_index, round_index);
    }
}

impl<T: SessionObserver + ?Sized> SessionObserver for &mut T {
    fn on_line(&mut self, line: &LogLine) -> Result<(), StoreError> {
        (**self).on_line(line)
    }

    fn on_round_start(&mut self, game_index: u32, round_index: u32) {
        (**self).on_round_start(game_index, round_index)
    }
}

/// Builds the policy for one seat.
pub trait PolicyFactory: Sync {
    fn build(
        &self,
        spec: &AgentSpec,
        index: usize,
        session: &SessionConfig,
        seed: u64,
    ) -> Result<Box<dyn AgentPolicy>, PolicyError>;
}

/// Scripted, LLM and replay seats. Human seats need a factory that knows the
/// transport, such as the live service's.
#[derive(Default, Clone)]
pub struct DefaultFactory {
    pub gateways: GatewayRegistry,
    /// Replay traces keyed by (session id, agent id).
    pub traces: BTreeMap<(String, AgentId), ReplayTrace>,
}

impl DefaultFactory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_gateways(gateways: GatewayRegistry) -> Self {
        Self { gateways, traces: BTreeMap::new() }
    }
}

impl PolicyFactory for DefaultFactory {
    fn build(
        &self,
        spec: &AgentSpec,
        _index: usize,
        session: &SessionConfig,
        seed: u64,
    ) -> Result<Box<dyn AgentPolicy>, PolicyError> {
        match spec.kind {
            AgentKind::Scripted => Ok(Box::new(ScriptedPolicy::from_spec(
                spec,
                session.n_players(),
                seed,
            )?)),
            AgentKind::Llm => {
                let model = spec.model_id.as_deref().unwrap_or_default();
                let gateway = self.gateways.get(model)?;
                Ok(Box::new(LlmPolicy::new(spec, seed, gateway)?))
            }
            AgentKind::Replay => {
                let key = (session.session_id.clone(), spec.agent_id.clone());
                let trace = self.traces.get(&key).cloned().ok_or_else(|| {
                    PolicyError::BadSpec(format!("no replay trace for agent {}", spec.agent_id))
                })?;
                Ok(Box::new(ReplayPolicy::new(trace)))
            }
            AgentKind::Human => Err(PolicyError::BadSpec(format!(
                "human seat {} needs a live transport",
                spec.agent_id
            ))),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("agent {agent} failed: {cause}")]
    AgentFailure { agent: AgentId, cause: PolicyError },
    #[error("game engine rejected round: {0}")]
    Game(#[from] GameError),
    #[error("invalid session config: {0}")]
    Config(#[from] SessionConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A failed session together with everything logged before the failure.
#[derive(Debug, Error)]
#[error("session {} failed: {error}", partial.header.session_id)]
pub struct SessionFailure {
    pub error: RunError,
    pub partial: Box<SessionLog>,
}

/// One seat in a running session.
pub struct Seat {
    pub spec: AgentSpec,
    pub policy: Box<dyn AgentPolicy>,
    pub obs: Observation,
}

/// Everything produced while playing one game.
pub struct GameOutcome {
    pub state: GameState,
    pub log: GameLog,
    pub decisions: Vec<Vec<Decision>>,
}

fn gather_decisions(
    seats: &mut [Seat],
    config: &GameConfig,
) -> Vec<Result<Decision, PolicyError>> {
    if seats.iter().any(|s| s.policy.is_blocking()) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = seats
                .iter_mut()
                .map(|seat| scope.spawn(move || seat.policy.decide(&seat.obs, config)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("policy thread panicked"))
                .collect()
        })
    } else {
        seats
            .iter_mut()
            .map(|seat| seat.policy.decide(&seat.obs, config))
            .collect()
    }
}

/// Plays one game to completion. Each seat's observation must already have
/// had [`Observation::start_game`] called for this game.
pub fn run_game(
    state: &mut GameState,
    game_index: u32,
    seats: &mut [Seat],
    observer: &mut dyn SessionObserver,
    raw_text_cap: usize,
    log: &mut GameLog,
) -> Result<Vec<Vec<Decision>>, RunError> {
    let mut all = Vec::new();
    while !state.status.is_terminal() {
        let round_index = state.next_round_index();
        observer.on_round_start(game_index, round_index);
        let results = gather_decisions(seats, &state.config);
        let mut decisions = Vec::with_capacity(seats.len());
        for (seat, r) in seats.iter().zip(results) {
            decisions.push(r.map_err(|cause| RunError::AgentFailure {
                agent: seat.spec.agent_id.clone(),
                cause,
            })?);
        }
        let guesses: Vec<Guess> = seats
            .iter()
            .zip(&decisions)
            .map(|(s, d)| Guess { agent: s.spec.agent_id.clone(), value: d.guess })
            .collect();
        let feedback = state.resolve_round(&guesses)?;
        let mut rendered = Vec::with_capacity(seats.len());
        for (seat, d) in seats.iter_mut().zip(&decisions) {
            let text = render_feedback(&feedback, &state.config, d.guess);
            seat.obs.record_round(ObservedRound {
                own_guess: d.guess,
                raw_text: if d.fallback { None } else { d.raw_text.clone() },
                feedback: ObservedFeedback::from_signal(&feedback, &state.config, text.clone()),
            });
            rendered.push(text);
        }
        let round = RoundLog {
            round_index,
            guesses: decisions.iter().map(|d| d.guess).collect(),
            feedback,
            rendered,
            decisions: decisions
                .iter()
                .map(|d| DecisionMeta::from_decision(d, raw_text_cap))
                .collect(),
        };
        observer.on_line(&LogLine::Round { game_index, round: round.clone() })?;
        log.rounds.push(round);
        log.status = state.status;
        all.push(decisions);
    }
    observer.on_line(&LogLine::GameEnd {
        game_index,
        status: state.status,
        rounds: state.rounds.len() as u32,
    })?;
    Ok(all)
}

/// Options shared by every session of a run.
#[derive(Clone)]
pub struct RunOptions {
    pub clock: Arc<dyn Clock>,
    pub raw_text_cap: usize,
    pub replication: u32,
    pub source: LogSource,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            clock: Arc::new(FixedClock(0)),
            raw_text_cap: DEFAULT_RAW_TEXT_CAP,
            replication: 0,
            source: LogSource::Harness,
        }
    }
}

/// Resolved agent specs with seeds filled in.
pub fn resolved_agents(config: &SessionConfig) -> Vec<AgentSpec> {
    config
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentSpec {
            seed: Some(a.seed.unwrap_or_else(|| agent_seed(config.base_seed, i))),
            ..a.clone()
        })
        .collect()
}

pub fn session_header(config: &SessionConfig, opts: &RunOptions) -> SessionHeader {
    let n = config.n_players();
    SessionHeader {
        schema_version: SCHEMA_VERSION,
        session_id: config.session_id.clone(),
        condition: config.condition(),
        source: opts.source,
        n_players: n,
        size_category: SizeCategory::for_players(n),
        replication: opts.replication,
        base_seed: config.base_seed,
        game_count: config.game_plan().len() as u32,
        guess_min: config.guess_min,
        guess_max: config.guess_max,
        max_rounds: config.max_rounds,
        include_group_sum_in_feedback: config.include_group_sum_in_feedback,
        agents: resolved_agents(config),
        started_at_ms: opts.clock.now_ms(),
    }
}

/// Plays every game of the session in order.
pub fn run_session(
    config: &SessionConfig,
    factory: &dyn PolicyFactory,
    opts: &RunOptions,
    observer: &mut dyn SessionObserver,
) -> Result<SessionLog, SessionFailure> {
    let header = session_header(config, opts);
    let mut log = SessionLog { header: header.clone(), games: Vec::new(), footer: None };
    match play_session(config, factory, opts, observer, &mut log) {
        Ok(()) => Ok(log),
        Err(error) => {
            let footer = SessionFooter {
                finished_at_ms: opts.clock.now_ms(),
                failure: Some(error.to_string()),
            };
            let _ = observer.on_line(&LogLine::Footer(footer.clone()));
            log.footer = Some(footer);
            Err(SessionFailure { error, partial: Box::new(log) })
        }
    }
}

fn play_session(
    config: &SessionConfig,
    factory: &dyn PolicyFactory,
    opts: &RunOptions,
    observer: &mut dyn SessionObserver,
    log: &mut SessionLog,
) -> Result<(), RunError> {
    config.validate()?;
    observer.on_line(&LogLine::Header(log.header.clone()))?;
    let plan = config.game_plan();
    let n = config.n_players();
    let mut seats = Vec::with_capacity(n);
    for (i, spec) in log.header.agents.iter().enumerate() {
        let seed = spec.seed.expect("resolved");
        let policy = factory
            .build(spec, i, config, seed)
            .map_err(|cause| RunError::AgentFailure { agent: spec.agent_id.clone(), cause })?;
        seats.push(Seat {
            spec: spec.clone(),
            policy,
            obs: Observation::new(i, n, plan.len() as u32),
        });
    }
    let roster: Vec<AgentId> = seats.iter().map(|s| s.spec.agent_id.clone()).collect();
    let mut target_rng = ChaCha8Rng::seed_from_u64(config.base_seed);
    target_rng.set_stream(1);

    for (gi, spec) in plan.iter().enumerate() {
        let game_index = gi as u32 + 1;
        let game_cfg = config.game_config(spec.feedback_mode);
        let target = match spec.target {
            Some(t) => t,
            None => sample_target(&mut target_rng, &game_cfg),
        };
        let mut state = GameState::with_target_unchecked_range(game_cfg, roster.clone(), target)?;
        let mut glog = GameLog {
            game_index,
            feedback_mode: spec.feedback_mode,
            target,
            target_min: state.config.target_min.min(target),
            target_max: state.config.target_max.max(target),
            status: GameStatus::InProgress,
            rounds: Vec::new(),
        };
        observer.on_line(&LogLine::Game {
            game_index,
            feedback_mode: glog.feedback_mode,
            target,
            target_min: glog.target_min,
            target_max: glog.target_max,
        })?;
        for seat in &mut seats {
            seat.obs.start_game(game_index, spec.feedback_mode);
        }
        log.games.push(glog.clone());
        let result = run_game(&mut state, game_index, &mut seats, observer, opts.raw_text_cap, &mut glog);
        *log.games.last_mut().expect("pushed") = glog;
        result?;
    }
    let footer = SessionFooter { finished_at_ms: opts.clock.now_ms(), failure: None };
    observer.on_line(&LogLine::Footer(footer.clone()))?;
    log.footer = Some(footer);
    Ok(())
}

/// Group-size category mapping; defaults to [`SizeCategory::for_players`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SizeCategories(pub BTreeMap<usize, SizeCategory>);

impl SizeCategories {
    pub fn category(&self, n: usize) -> SizeCategory {
        self.0.get(&n).copied().unwrap_or_else(|| SizeCategory::for_players(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sessions: Vec<SessionConfig>,
    pub replications: u32,
    #[serde(default)]
    pub size_categories: SizeCategories,
}

/// Group sizes of the 18 reference sessions.
pub const REFERENCE_GROUP_SIZES: [usize; 18] =
    [2, 2, 2, 2, 2, 2, 3, 3, 3, 4, 4, 4, 6, 7, 10, 16, 17, 17];

impl ExperimentConfig {
    /// The 18-session layout with every seat built by `make_agent(index, n)`.
    pub fn reference<F>(base_seed: u64, condition: &str, mut make_agent: F) -> Self
    where
        F: FnMut(usize, usize) -> AgentSpec,
    {
        let sessions = REFERENCE_GROUP_SIZES
            .iter()
            .enumerate()
            .map(|(s, &n)| {
                let agents = (0..n).map(|i| make_agent(i, n)).collect();
                let mut cfg = SessionConfig::new(
                    format!("s{:02}-{}p", s + 1, n),
                    agents,
                    base_seed.wrapping_add(s as u64),
                );
                cfg.condition = condition.to_string();
                cfg
            })
            .collect();
        Self { sessions, replications: 1, size_categories: SizeCategories::default() }
    }

    pub fn validate(&self) -> Result<(), SessionConfigError> {
        for (i, s) in self.sessions.iter().enumerate() {
            s.validate()?;
            if self.sessions[..i].iter().any(|o| o.session_id == s.session_id) {
                return Err(SessionConfigError::NoAgents(format!(
                    "{} (duplicate session id)",
                    s.session_id
                )));
            }
        }
        Ok(())
    }

    /// `(session, replication)` pairs in execution order, with per-replication
    /// seeds and ids applied.
    pub fn expanded(&self) -> Vec<(SessionConfig, u32)> {
        let reps = self.replications.max(1);
        let mut out = Vec::new();
        for s in &self.sessions {
            for r in 0..reps {
                let mut cfg = s.clone();
                if reps > 1 {
                    cfg.session_id = format!("{}-r{}", s.session_id, r + 1);
                    cfg.base_seed = replication_seed(s.base_seed, r);
                    for a in &mut cfg.agents {
                        if let Some(seed) = a.seed {
                            a.seed = Some(replication_seed(seed, r) & 0x7FFF_FFFF);
                        }
                    }
                }
                out.push((cfg, r));
            }
        }
        out
    }
}

/// Results of [`run_experiment`], in manifest order.
pub struct ExperimentOutcome {
    pub logs: Vec<SessionLog>,
    pub failures: Vec<SessionFailure>,
    pub manifest: Vec<ManifestEntry>,
}

/// Runs every session (and replication), `parallelism` at a time. With an
/// output directory, each log is streamed to `<out>/<session_id>/log.jsonl`
/// and a `manifest.json` is written at the end.
pub fn run_experiment(
    config: &ExperimentConfig,
    factory: &dyn PolicyFactory,
    opts: &RunOptions,
    out_dir: Option<&Path>,
    parallelism: usize,
) -> ExperimentOutcome {
    let jobs = config.expanded();
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<SessionLog, SessionFailure>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());

    let worker = || loop {
        let idx = {
            let mut n = next.lock().unwrap();
            let i = *n;
            *n += 1;
            i
        };
        let Some((session, replication)) = jobs.get(idx) else { break };
        let opts = RunOptions { replication: *replication, ..opts.clone() };
        let result = run_one(session, factory, &opts, out_dir);
        results.lock().unwrap()[idx] = Some(result);
    };
    std::thread::scope(|scope| {
        for _ in 0..parallelism.clamp(1, jobs.len().max(1)) {
            scope.spawn(worker);
        }
    });

    let mut outcome = ExperimentOutcome { logs: Vec::new(), failures: Vec::new(), manifest: Vec::new() };
    for ((session, replication), result) in jobs.iter().zip(results.into_inner().unwrap()) {
        let result = result.expect("every job ran");
        let path = PathBuf::from(&session.session_id).join("log.jsonl");
        let entry = ManifestEntry {
            session_id: session.session_id.clone(),
            replication: *replication,
            n_players: session.n_players(),
            path: path.to_string_lossy().into_owned(),
            ok: result.is_ok(),
            failure: result.as_ref().err().map(|e| e.error.to_string()),
        };
        outcome.manifest.push(entry);
        match result {
            Ok(log) => outcome.logs.push(log),
            Err(f) => outcome.failures.push(f),
        }
    }
    if let Some(dir) = out_dir {
        if let Err(e) = write_manifest(dir, &outcome.manifest) {
            tracing::error!(error = %e, "could not write experiment manifest");
        }
    }
    outcome
}

fn run_one(
    session: &SessionConfig,
    factory: &dyn PolicyFactory,
    opts: &RunOptions,
    out_dir: Option<&Path>,
) -> Result<SessionLog, SessionFailure> {
    match out_dir {
        None => run_session(session, factory, opts, &mut NoopObserver),
        Some(dir) => {
            let path = session_log_path(dir, &session.session_id);
            let mut writer = StreamingWriter::create(&path).map_err(|e| SessionFailure {
                error: RunError::Store(e),
                partial: Box::new(SessionLog {
                    header: session_header(session, opts),
                    games: Vec::new(),
                    footer: None,
                }),
            })?;
            run_session(session, factory, opts, &mut writer)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(policy: &str) -> Vec<AgentSpec> {
        vec![AgentSpec::scripted("A", policy), AgentSpec::scripted("B", policy)]
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..17).map(|i| agent_seed(42, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 17);
        assert_eq!(seeds[0], agent_seed(42, 0));
        assert!(seeds.iter().all(|s| *s <= 0x7FFF_FFFF));
    }

    #[test]
    fn default_plan_alternates() {
        let cfg = SessionConfig::new("s", pair("oracle"), 1);
        let plan = cfg.game_plan();
        assert_eq!(plan.len(), 10);
        assert_eq!(plan[0].feedback_mode, FeedbackMode::Directional);
        for w in plan.windows(2) {
            assert_ne!(w[0].feedback_mode, w[1].feedback_mode);
        }
        let numerical = plan.iter().filter(|g| g.feedback_mode == FeedbackMode::Numerical).count();
        assert_eq!(numerical, 5);
    }

    #[test]
    fn odd_alternating_game_count_is_rejected() {
        let mut cfg = SessionConfig::new("s", pair("oracle"), 1);
        cfg.game_count = 3;
        assert!(matches!(cfg.validate(), Err(SessionConfigError::OddGameCount(_))));
    }

    #[test]
    fn fixed_targets_pass_through() {
        let targets = [60, 75, 99, 51];
        let games = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| GameSpec {
                feedback_mode: if i % 2 == 0 { FeedbackMode::Numerical } else { FeedbackMode::Directional },
                target: Some(t),
            })
            .collect();
        let cfg = SessionConfig::new("s", pair("oracle"), 1).with_fixed_games(games);
        let log = run_session(&cfg, &DefaultFactory::new(), &RunOptions::default(), &mut NoopObserver).unwrap();
        let logged: Vec<i64> = log.games.iter().map(|g| g.target).collect();
        assert_eq!(logged, targets);
    }

    #[test]
    fn unreachable_fixed_target_is_rejected() {
        let games = vec![GameSpec { feedback_mode: FeedbackMode::Numerical, target: Some(101) }];
        let cfg = SessionConfig::new("s", pair("oracle"), 1).with_fixed_games(games);
        assert!(matches!(cfg.validate(), Err(SessionConfigError::Game(..))));
    }

    #[test]
    fn stay_group_exhausts() {
        let agents = vec![
            AgentSpec::scripted("A", "stay_prone").with_param("p", 1.0),
            AgentSpec::scripted("B", "stay_prone").with_param("p", 1.0),
        ];
        let games = vec![GameSpec { feedback_mode: FeedbackMode::Numerical, target: Some(84) }];
        let cfg = SessionConfig::new("s", agents, 1).with_fixed_games(games);
        let log = run_session(&cfg, &DefaultFactory::new(), &RunOptions::default(), &mut NoopObserver).unwrap();
        assert_eq!(log.games[0].status, GameStatus::Exhausted);
        assert_eq!(log.games[0].rounds.len(), 15);
    }

    #[test]
    fn agent_failure_keeps_partial_log() {
        // proportional cannot play a directional game
        let cfg = SessionConfig::new("s", pair("proportional"), 1);
        let err = run_session(&cfg, &DefaultFactory::new(), &RunOptions::default(), &mut NoopObserver)
            .unwrap_err();
        assert!(matches!(err.error, RunError::AgentFailure { .. }));
        assert_eq!(err.partial.games.len(), 1);
        assert_eq!(err.partial.games[0].rounds.len(), 1);
        assert!(err.partial.footer.as_ref().unwrap().failure.is_some());
    }

    #[test]
    fn replications_get_distinct_seeds() {
        let mut exp = ExperimentConfig::reference(7, "oracle", |i, _| {
            AgentSpec::scripted(crate::game::player_letter(i), "oracle")
        });
        exp.replications = 2;
        let jobs = exp.expanded();
        assert_eq!(jobs.len(), 36);
        assert_ne!(jobs[0].0.base_seed, jobs[1].0.base_seed);
        assert_ne!(jobs[0].0.session_id, jobs[1].0.session_id);
    }
}
