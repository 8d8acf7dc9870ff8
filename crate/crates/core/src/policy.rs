//! Player policies.
//!
//! Every seat in a game is driven by an [`AgentPolicy`]: scripted baselines,
//! LLM players talking to a [`Gateway`], replays of logged guesses, and the
//! [`HumanBridge`] used by the live service. A policy only ever sees its own
//! [`Observation`]: its own guesses and the shared feedback.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{AgentId, Direction, FeedbackMode, FeedbackSignal, GameConfig};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::prompts::{build_messages, format_reminder, parse_choice, ParseFailure, PromptVariant};

/// Feedback as delivered to one agent. Magnitude and group sum are only
/// present when the game's feedback mode reveals them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedFeedback {
    pub direction: Direction,
    pub magnitude: Option<u64>,
    pub group_sum: Option<i64>,
    pub text: String,
}

impl ObservedFeedback {
    pub fn from_signal(signal: &FeedbackSignal, config: &GameConfig, text: String) -> Self {
        Self {
            direction: signal.direction,
            magnitude: (config.feedback_mode == FeedbackMode::Numerical).then_some(signal.magnitude),
            group_sum: config.include_group_sum_in_feedback.then_some(signal.group_sum),
            text,
        }
    }

    /// `group_sum - target` when the magnitude is visible.
    pub fn signed_error(&self) -> Option<i64> {
        self.magnitude.map(|m| self.direction.sign() * m as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedRound {
    pub own_guess: i64,
    /// The agent's own accepted completion, if it produced one.
    pub raw_text: Option<String>,
    pub feedback: ObservedFeedback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameHistory {
    pub game_index: u32,
    pub feedback_mode: FeedbackMode,
    pub rounds: Vec<ObservedRound>,
}

/// Everything one agent knows when asked for its next guess.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub agent_index: usize,
    pub n_players: usize,
    pub game_count: u32,
    pub game_index: u32,
    pub round_index: u32,
    pub feedback_mode: FeedbackMode,
    /// Prior games of the session followed by the current game.
    pub games: Vec<GameHistory>,
}

impl Observation {
    pub fn new(agent_index: usize, n_players: usize, game_count: u32) -> Self {
        Self {
            agent_index,
            n_players,
            game_count,
            game_index: 0,
            round_index: 0,
            feedback_mode: FeedbackMode::Directional,
            games: Vec::new(),
        }
    }

    pub fn start_game(&mut self, game_index: u32, mode: FeedbackMode) {
        self.game_index = game_index;
        self.round_index = 1;
        self.feedback_mode = mode;
        self.games.push(GameHistory { game_index, feedback_mode: mode, rounds: Vec::new() });
    }

    pub fn record_round(&mut self, round: ObservedRound) {
        if let Some(g) = self.games.last_mut() {
            g.rounds.push(round);
        }
        self.round_index += 1;
    }

    /// Rounds already played in the current game.
    pub fn current_rounds(&self) -> &[ObservedRound] {
        match self.games.last() {
            Some(g) if g.game_index == self.game_index => &g.rounds,
            _ => &[],
        }
    }

    pub fn previous_guess(&self) -> Option<i64> {
        self.current_rounds().last().map(|r| r.own_guess)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Llm,
    Scripted,
    Replay,
    Human,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Llm => "llm",
            Self::Scripted => "scripted",
            Self::Replay => "replay",
            Self::Human => "human",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: AgentId,
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Left empty in configs to have the orchestrator derive it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub prompt_variant: PromptVariant,
    /// Scripted policy name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub policy_params: BTreeMap<String, f64>,
}

impl AgentSpec {
    pub fn scripted(agent_id: impl Into<String>, policy: &str) -> Self {
        Self {
            agent_id: AgentId::new(agent_id),
            kind: AgentKind::Scripted,
            model_id: None,
            temperature: None,
            seed: None,
            prompt_variant: PromptVariant::ZeroShot,
            policy: Some(policy.to_string()),
            policy_params: BTreeMap::new(),
        }
    }

    pub fn llm(agent_id: impl Into<String>, model_id: &str, variant: PromptVariant) -> Self {
        Self {
            agent_id: AgentId::new(agent_id),
            kind: AgentKind::Llm,
            model_id: Some(model_id.to_string()),
            temperature: None,
            seed: None,
            prompt_variant: variant,
            policy: None,
            policy_params: BTreeMap::new(),
        }
    }

    pub fn human(agent_id: impl Into<String>) -> Self {
        Self {
            agent_id: AgentId::new(agent_id),
            kind: AgentKind::Human,
            model_id: None,
            temperature: None,
            seed: None,
            prompt_variant: PromptVariant::ZeroShot,
            policy: None,
            policy_params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.policy_params.insert(key.to_string(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.kind {
            AgentKind::Llm if self.model_id.is_none() => {
                Err(PolicyError::BadSpec(format!("LLM agent {} needs a model_id", self.agent_id)))
            }
            AgentKind::Scripted => ScriptedKind::from_spec(self, 2).map(|_| ()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub guess: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default)]
    pub parse_attempts: u32,
    #[serde(default)]
    pub fallback: bool,
    #[serde(default)]
    pub timeout: bool,
    /// Fingerprint of the last completion request, for LLM players.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_fingerprint: Option<String>,
}

impl Decision {
    pub fn plain(guess: i64) -> Self {
        Self {
            guess,
            raw_text: None,
            parse_attempts: 0,
            fallback: false,
            timeout: false,
            request_fingerprint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("policy `{0}` needs numerical feedback")]
    PolicyNeedsNumericalFeedback(String),
    #[error("unknown scripted policy `{0}`")]
    UnknownPolicy(String),
    #[error("invalid agent spec: {0}")]
    BadSpec(String),
    #[error("replay trace has no entry for game {game} round {round}")]
    TraceExhausted { game: u32, round: u32 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("human seat disconnected")]
    HumanDisconnected,
}

pub trait AgentPolicy: Send {
    fn decide(&mut self, obs: &Observation, config: &GameConfig) -> Result<Decision, PolicyError>;

    /// True for policies that wait on I/O; the orchestrator gathers those
    /// concurrently.
    fn is_blocking(&self) -> bool {
        false
    }
}

/// Built-in scripted behaviours.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedKind {
    /// Moves against the signed error by `alpha` (default `1/n`) per agent.
    Proportional { alpha: Option<f64> },
    /// Repeats its previous guess with probability `p`, otherwise steps like
    /// `Proportional { 1/n }` (bisection step under directional feedback).
    StayProne { p: f64 },
    /// Bisects its own guess range assuming everybody else stays put.
    BisectionFollower,
    UniformRandom,
    Fixed { value: i64 },
    /// Proportional under numerical feedback; under directional feedback a
    /// shared-convention bisection over the target range, split evenly across
    /// the group.
    Oracle,
}

impl ScriptedKind {
    pub fn from_spec(spec: &AgentSpec, _n_players: usize) -> Result<Self, PolicyError> {
        let name = spec
            .policy
            .as_deref()
            .ok_or_else(|| PolicyError::BadSpec(format!("scripted agent {} has no policy", spec.agent_id)))?;
        let param = |key: &str| spec.policy_params.get(key).copied();
        let need = |key: &str| {
            param(key).ok_or_else(|| {
                PolicyError::BadSpec(format!("policy `{name}` needs parameter `{key}`"))
            })
        };
        Ok(match name {
            "proportional" => Self::Proportional { alpha: param("alpha") },
            "stay_prone" => {
                let p = need("p")?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(PolicyError::BadSpec(format!("stay_prone p={p} outside [0, 1]")));
                }
                Self::StayProne { p }
            }
            "bisection_follower" => Self::BisectionFollower,
            "uniform_random" => Self::UniformRandom,
            "fixed" => Self::Fixed { value: need("value")? as i64 },
            "oracle" => Self::Oracle,
            other => return Err(PolicyError::UnknownPolicy(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Proportional { .. } => "proportional",
            Self::StayProne { .. } => "stay_prone",
            Self::BisectionFollower => "bisection_follower",
            Self::UniformRandom => "uniform_random",
            Self::Fixed { .. } => "fixed",
            Self::Oracle => "oracle",
        }
    }
}

/// Proportional correction with the collective remainder rule: the group moves
/// `round(alpha * n * |error|)` in total, agent `i` taking one extra unit iff
/// `i < total mod n`.
pub fn proportional_step(
    previous: i64,
    signed_error: i64,
    alpha: f64,
    agent_index: usize,
    n_players: usize,
    config: &GameConfig,
) -> i64 {
    let n = n_players.max(1) as i64;
    let total = (alpha * n as f64 * signed_error.unsigned_abs() as f64).round() as i64;
    let share = total / n + i64::from((agent_index as i64) < total % n);
    config.clamp_guess(previous - signed_error.signum() * share)
}

fn midpoint_of(lo: i64, hi: i64) -> i64 {
    (lo + hi + 1).div_euclid(2)
}

/// Next own guess for a bisection over the own range given the current game.
pub fn bisection_step(rounds: &[ObservedRound], config: &GameConfig) -> i64 {
    let (mut lo, mut hi) = (config.guess_min, config.guess_max);
    for r in rounds {
        match r.feedback.direction {
            Direction::TooLow => lo = lo.max(r.own_guess + 1),
            Direction::TooHigh => hi = hi.min(r.own_guess - 1),
            Direction::JustRight => return r.own_guess,
        }
    }
    if lo > hi {
        // The others moved; nudge in the indicated direction.
        let last = rounds.last().expect("bounds only cross after a round");
        return config.clamp_guess(last.own_guess - last.feedback.direction.sign());
    }
    midpoint_of(lo, hi)
}

/// Group-level bisection over the target range. Every oracle agent replays the
/// same interval updates, so the implied group sum is common knowledge.
pub fn group_bisection_step(
    rounds: &[ObservedRound],
    agent_index: usize,
    config: &GameConfig,
) -> i64 {
    let (mut lo, mut hi) = (config.target_min, config.target_max);
    for r in rounds {
        let planned = midpoint_of(lo, hi);
        match r.feedback.direction {
            Direction::TooLow => lo = planned + 1,
            Direction::TooHigh => hi = planned - 1,
            Direction::JustRight => return r.own_guess,
        }
    }
    let sum = if lo <= hi { midpoint_of(lo, hi) } else { lo };
    split_sum(sum, agent_index, config)
}

fn split_sum(sum: i64, agent_index: usize, config: &GameConfig) -> i64 {
    let n = config.n_players.max(1) as i64;
    let base = sum.div_euclid(n);
    let extra = i64::from((agent_index as i64) < sum.rem_euclid(n));
    config.clamp_guess(base + extra)
}

pub struct ScriptedPolicy {
    kind: ScriptedKind,
    rng: ChaCha8Rng,
}

impl ScriptedPolicy {
    pub fn new(kind: ScriptedKind, seed: u64) -> Self {
        Self { kind, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn from_spec(spec: &AgentSpec, n_players: usize, seed: u64) -> Result<Self, PolicyError> {
        Ok(Self::new(ScriptedKind::from_spec(spec, n_players)?, seed))
    }

    pub fn kind(&self) -> &ScriptedKind {
        &self.kind
    }

    fn proportional(
        &self,
        alpha: Option<f64>,
        obs: &Observation,
        config: &GameConfig,
    ) -> Result<i64, PolicyError> {
        let Some(last) = obs.current_rounds().last() else {
            return Ok(config.midpoint());
        };
        let err = last
            .feedback
            .signed_error()
            .ok_or_else(|| PolicyError::PolicyNeedsNumericalFeedback(self.kind.name().into()))?;
        let alpha = alpha.unwrap_or(1.0 / obs.n_players.max(1) as f64);
        Ok(proportional_step(last.own_guess, err, alpha, obs.agent_index, obs.n_players, config))
    }
}

impl AgentPolicy for ScriptedPolicy {
    fn decide(&mut self, obs: &Observation, config: &GameConfig) -> Result<Decision, PolicyError> {
        let rounds = obs.current_rounds();
        let guess = match self.kind.clone() {
            ScriptedKind::Proportional { alpha } => self.proportional(alpha, obs, config)?,
            ScriptedKind::StayProne { p } => match rounds.last() {
                None => config.midpoint(),
                Some(last) if self.rng.gen_bool(p) => last.own_guess,
                Some(last) if last.feedback.magnitude.is_some() => {
                    self.proportional(None, obs, config)?
                }
                Some(_) => bisection_step(rounds, config),
            },
            ScriptedKind::BisectionFollower => bisection_step(rounds, config),
            ScriptedKind::UniformRandom => self.rng.gen_range(config.guess_min..=config.guess_max),
            ScriptedKind::Fixed { value } => config.clamp_guess(value),
            ScriptedKind::Oracle => match obs.feedback_mode {
                FeedbackMode::Numerical => self.proportional(None, obs, config)?,
                FeedbackMode::Directional => {
                    group_bisection_step(rounds, obs.agent_index, config)
                }
            },
        };
        Ok(Decision::plain(guess))
    }
}

/// Logged guesses of one agent, per game then per round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayTrace {
    pub games: Vec<Vec<i64>>,
}

pub struct ReplayPolicy {
    trace: ReplayTrace,
}

impl ReplayPolicy {
    pub fn new(trace: ReplayTrace) -> Self {
        Self { trace }
    }

    pub fn lookup(&self, game_index: u32, round_index: u32) -> Result<i64, PolicyError> {
        let game = self
            .trace
            .games
            .get(game_index.saturating_sub(1) as usize)
            .ok_or(PolicyError::TraceExhausted { game: game_index, round: round_index })?;
        game.get(round_index.saturating_sub(1) as usize)
            .copied()
            .ok_or(PolicyError::TraceExhausted { game: game_index, round: round_index })
    }
}

impl AgentPolicy for ReplayPolicy {
    fn decide(&mut self, obs: &Observation, _config: &GameConfig) -> Result<Decision, PolicyError> {
        self.lookup(obs.game_index, obs.round_index).map(Decision::plain)
    }
}

/// Prompt-driven player.
pub struct LlmPolicy {
    model_id: String,
    temperature: Option<f64>,
    seed: u64,
    variant: PromptVariant,
    gateway: Arc<Gateway>,
    max_attempts: u32,
    max_output_tokens: Option<u32>,
}

impl LlmPolicy {
    pub const MAX_ATTEMPTS: u32 = 3;

    pub fn new(spec: &AgentSpec, seed: u64, gateway: Arc<Gateway>) -> Result<Self, PolicyError> {
        let model_id = spec
            .model_id
            .clone()
            .ok_or_else(|| PolicyError::BadSpec(format!("LLM agent {} needs a model_id", spec.agent_id)))?;
        Ok(Self {
            model_id,
            temperature: spec.temperature,
            seed,
            variant: spec.prompt_variant,
            gateway,
            max_attempts: Self::MAX_ATTEMPTS,
            max_output_tokens: None,
        })
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = Some(n);
        self
    }

    fn request(&self, messages: Vec<ChatMessage>) -> CompletionRequest {
        CompletionRequest {
            model_id: self.model_id.clone(),
            messages,
            temperature: self.temperature,
            seed: Some(self.seed),
            max_output_tokens: self.max_output_tokens,
        }
    }
}

impl AgentPolicy for LlmPolicy {
    fn decide(&mut self, obs: &Observation, config: &GameConfig) -> Result<Decision, PolicyError> {
        let mut messages = build_messages(self.variant, obs, config);
        let mut out_of_range = None;
        let mut last_text = None;
        let mut fingerprint = None;
        for attempt in 1..=self.max_attempts {
            let request = self.request(messages.clone());
            fingerprint = Some(request.fingerprint());
            let result = self.gateway.complete(&request)?;
            match parse_choice(&result.text, config) {
                Ok(guess) => {
                    return Ok(Decision {
                        guess,
                        raw_text: Some(result.text),
                        parse_attempts: attempt,
                        fallback: false,
                        timeout: false,
                        request_fingerprint: fingerprint,
                    })
                }
                Err(ParseFailure::OutOfRange(v)) => out_of_range = Some(v),
                Err(_) => {}
            }
            tracing::debug!(agent = obs.agent_index, attempt, "unusable completion, re-prompting");
            messages.push(ChatMessage::assistant(result.text.clone()));
            messages.push(ChatMessage::user(format_reminder(config)));
            last_text = Some(result.text);
        }
        let guess = match out_of_range {
            Some(v) => config.clamp_guess(v),
            None => obs.previous_guess().unwrap_or_else(|| config.midpoint()),
        };
        Ok(Decision {
            guess,
            raw_text: last_text,
            parse_attempts: self.max_attempts,
            fallback: true,
            timeout: false,
            request_fingerprint: fingerprint,
        })
    }

    fn is_blocking(&self) -> bool {
        true
    }
}

/// A guess typed by a person, tagged with the round it was meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HumanGuess {
    pub game_index: u32,
    pub round_index: u32,
    pub value: i64,
}

/// Called when the bridge starts waiting: the observation and the deadline.
pub type PromptHook = Arc<dyn Fn(&Observation, Option<Instant>) + Send + Sync>;

/// Seat driven by a person through some transport.
///
/// Guesses arrive on a channel. If the deadline passes, the previous guess
/// (the midpoint in round 1) is submitted and the decision flagged `timeout`.
pub struct HumanBridge {
    inbox: Receiver<HumanGuess>,
    timeout: Option<Duration>,
    on_prompt: Option<PromptHook>,
}

impl HumanBridge {
    pub fn new(inbox: Receiver<HumanGuess>, timeout: Option<Duration>) -> Self {
        Self { inbox, timeout: timeout.filter(|d| !d.is_zero()), on_prompt: None }
    }

    pub fn with_prompt_hook(mut self, hook: PromptHook) -> Self {
        self.on_prompt = Some(hook);
        self
    }
}

impl AgentPolicy for HumanBridge {
    fn decide(&mut self, obs: &Observation, config: &GameConfig) -> Result<Decision, PolicyError> {
        let deadline = self.timeout.map(|t| Instant::now() + t);
        if let Some(hook) = &self.on_prompt {
            hook(obs, deadline);
        }
        loop {
            let received = match deadline {
                Some(d) => self.inbox.recv_timeout(d.saturating_duration_since(Instant::now())),
                None => self.inbox.recv().map_err(|_| RecvTimeoutError::Disconnected),
            };
            match received {
                Ok(g) if g.game_index == obs.game_index && g.round_index == obs.round_index => {
                    if config.guess_in_range(g.value) {
                        return Ok(Decision::plain(g.value));
                    }
                }
                Ok(_) => continue,
                Err(RecvTimeoutError::Timeout) => {
                    let guess = obs.previous_guess().unwrap_or_else(|| config.midpoint());
                    return Ok(Decision { timeout: true, ..Decision::plain(guess) });
                }
                Err(RecvTimeoutError::Disconnected) => return Err(PolicyError::HumanDisconnected),
            }
        }
    }

    fn is_blocking(&self) -> bool {
        true
    }
}
