//! The Group Binary Search state machine.
//!
//! A game is a hidden target, a roster of agents and a sequence of rounds. Each
//! round every agent submits one integer guess; the group sum is compared to the
//! target and the same feedback is delivered to everybody. The game ends when the
//! sum hits the target or when `max_rounds` rounds have been played.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque agent identifier. Player letters (`A`, `B`, ...) by convention.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// What the group is told after each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Only "too low", "too high" or "just right".
    Directional,
    /// Direction plus the size of the miss.
    Numerical,
}

impl FeedbackMode {
    pub fn other(self) -> Self {
        match self {
            Self::Directional => Self::Numerical,
            Self::Numerical => Self::Directional,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Directional => "directional",
            Self::Numerical => "numerical",
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeedbackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "directional" | "d" => Ok(Self::Directional),
            "numerical" | "numeric" | "n" => Ok(Self::Numerical),
            other => Err(format!("unknown feedback mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TooLow,
    TooHigh,
    JustRight,
}

impl Direction {
    pub fn phrase(self) -> &'static str {
        match self {
            Self::TooLow => "too low",
            Self::TooHigh => "too high",
            Self::JustRight => "just right",
        }
    }

    /// Sign of `group_sum - target`.
    pub fn sign(self) -> i64 {
        match self {
            Self::TooLow => -1,
            Self::TooHigh => 1,
            Self::JustRight => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub n_players: usize,
    pub guess_min: i64,
    pub guess_max: i64,
    pub target_min: i64,
    pub target_max: i64,
    pub max_rounds: u32,
    pub feedback_mode: FeedbackMode,
    #[serde(default)]
    pub include_group_sum_in_feedback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("n_players must be at least 1")]
    NoPlayers,
    #[error("guess range [{0}, {1}] is empty")]
    EmptyGuessRange(i64, i64),
    #[error("target range [{0}, {1}] is empty")]
    EmptyTargetRange(i64, i64),
    #[error("max_rounds must be at least 1")]
    NoRounds,
    #[error("target range [{target_min}, {target_max}] is not reachable by sums in [{sum_min}, {sum_max}]")]
    Unreachable {
        target_min: i64,
        target_max: i64,
        sum_min: i64,
        sum_max: i64,
    },
}

impl GameConfig {
    pub const DEFAULT_GUESS_MIN: i64 = 0;
    pub const DEFAULT_GUESS_MAX: i64 = 50;
    pub const DEFAULT_MAX_ROUNDS: u32 = 15;

    /// Default game for `n_players`: guesses in [0, 50], 15 rounds, targets
    /// uniform in [25n + 1, 50n] (that is [51, 100] for two players).
    pub fn standard(n_players: usize, feedback_mode: FeedbackMode) -> Self {
        let (target_min, target_max) = scaled_target_range(
            n_players,
            Self::DEFAULT_GUESS_MIN,
            Self::DEFAULT_GUESS_MAX,
        );
        Self {
            n_players,
            guess_min: Self::DEFAULT_GUESS_MIN,
            guess_max: Self::DEFAULT_GUESS_MAX,
            target_min,
            target_max,
            max_rounds: Self::DEFAULT_MAX_ROUNDS,
            feedback_mode,
            include_group_sum_in_feedback: false,
        }
    }

    pub fn sum_range(&self) -> (i64, i64) {
        let n = self.n_players as i64;
        (n * self.guess_min, n * self.guess_max)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_players == 0 {
            return Err(ConfigError::NoPlayers);
        }
        if self.guess_min > self.guess_max {
            return Err(ConfigError::EmptyGuessRange(self.guess_min, self.guess_max));
        }
        if self.target_min > self.target_max {
            return Err(ConfigError::EmptyTargetRange(self.target_min, self.target_max));
        }
        if self.max_rounds == 0 {
            return Err(ConfigError::NoRounds);
        }
        let (sum_min, sum_max) = self.sum_range();
        if sum_min > self.target_min || self.target_max > sum_max {
            return Err(ConfigError::Unreachable {
                target_min: self.target_min,
                target_max: self.target_max,
                sum_min,
                sum_max,
            });
        }
        Ok(())
    }

    pub fn guess_in_range(&self, guess: i64) -> bool {
        (self.guess_min..=self.guess_max).contains(&guess)
    }

    pub fn target_reachable(&self, target: i64) -> bool {
        let (lo, hi) = self.sum_range();
        (lo..=hi).contains(&target)
    }

    /// Midpoint of the guess range, rounded half up.
    pub fn midpoint(&self) -> i64 {
        (self.guess_min + self.guess_max + 1).div_euclid(2)
    }

    pub fn clamp_guess(&self, guess: i64) -> i64 {
        guess.clamp(self.guess_min, self.guess_max)
    }
}

/// Scaled target range `[n*half + 1, n*max]` where `half` is the midpoint of the
/// per-player guess span. For [0, 50] this is `[25n + 1, 50n]`.
pub fn scaled_target_range(n_players: usize, guess_min: i64, guess_max: i64) -> (i64, i64) {
    let n = n_players as i64;
    let half = (guess_max - guess_min) / 2 + guess_min;
    (n * half + 1, n * guess_max)
}

/// Uniform target in `[target_min, target_max]`.
pub fn sample_target<R: Rng + ?Sized>(rng: &mut R, config: &GameConfig) -> i64 {
    rng.gen_range(config.target_min..=config.target_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackSignal {
    pub direction: Direction,
    /// `|group_sum - target|`, recorded whatever the feedback mode.
    pub magnitude: u64,
    pub group_sum: i64,
    pub solved: bool,
}

impl FeedbackSignal {
    pub fn compute(group_sum: i64, target: i64) -> Self {
        let direction = match group_sum.cmp(&target) {
            std::cmp::Ordering::Less => Direction::TooLow,
            std::cmp::Ordering::Greater => Direction::TooHigh,
            std::cmp::Ordering::Equal => Direction::JustRight,
        };
        Self {
            direction,
            magnitude: group_sum.abs_diff(target),
            group_sum,
            solved: direction == Direction::JustRight,
        }
    }

    /// `group_sum - target`.
    pub fn signed_error(&self) -> i64 {
        self.direction.sign() * self.magnitude as i64
    }
}

/// The sentence every agent reads after a round, specialised with its own guess.
pub fn render_feedback(signal: &FeedbackSignal, config: &GameConfig, own_guess: i64) -> String {
    let outcome = match (signal.direction, config.feedback_mode) {
        (Direction::JustRight, _) | (_, FeedbackMode::Directional) => {
            signal.direction.phrase().to_string()
        }
        (dir, FeedbackMode::Numerical) => format!("{} by {}", dir.phrase(), signal.magnitude),
    };
    if config.include_group_sum_in_feedback {
        format!(
            "In the previous round your choice was {own_guess} and the total sum of guesses by all players was {} which was {outcome}.",
            signal.group_sum
        )
    } else {
        format!(
            "In the previous round your choice was {own_guess} and the total sum of guesses by all players was {outcome}."
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameStatus {
    InProgress,
    Solved,
    Exhausted,
}

impl GameStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, Self::InProgress)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guess {
    pub agent: AgentId,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u32,
    /// One entry per agent, in roster order.
    pub guesses: Vec<Guess>,
    pub feedback: FeedbackSignal,
}

impl RoundRecord {
    pub fn guess_of(&self, agent: &AgentId) -> Option<i64> {
        self.guesses
            .iter()
            .find(|g| &g.agent == agent)
            .map(|g| g.value)
    }

    pub fn values(&self) -> impl Iterator<Item = i64> + '_ {
        self.guesses.iter().map(|g| g.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GameError {
    #[error("guess {value} from agent {agent} is outside [{min}, {max}]")]
    GuessOutOfRange {
        agent: AgentId,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("no guess submitted by agent {0}")]
    MissingGuess(AgentId),
    #[error("agent {0} is not part of this game")]
    UnknownAgent(AgentId),
    #[error("agent {0} submitted more than one guess")]
    DuplicateGuess(AgentId),
    #[error("game is already over")]
    GameAlreadyOver,
    #[error("target {target} is outside [{min}, {max}]")]
    TargetOutOfRange { target: i64, min: i64, max: i64 },
    #[error("roster has {got} agents, config expects {expected}")]
    RosterSize { expected: usize, got: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameState {
    pub config: GameConfig,
    pub roster: Vec<AgentId>,
    pub target: i64,
    pub rounds: Vec<RoundRecord>,
    pub status: GameStatus,
}

impl GameState {
    /// Starts a game with a target inside `[target_min, target_max]`.
    pub fn new(config: GameConfig, roster: Vec<AgentId>, target: i64) -> Result<Self, GameError> {
        if !(config.target_min..=config.target_max).contains(&target) {
            return Err(GameError::TargetOutOfRange {
                target,
                min: config.target_min,
                max: config.target_max,
            });
        }
        Self::with_target_unchecked_range(config, roster, target)
    }

    /// Starts a game whose target only has to be reachable. Used for replayed
    /// and imported sessions, which keep whatever target was logged.
    pub fn with_target_unchecked_range(
        config: GameConfig,
        roster: Vec<AgentId>,
        target: i64,
    ) -> Result<Self, GameError> {
        config.validate()?;
        if roster.len() != config.n_players {
            return Err(GameError::RosterSize {
                expected: config.n_players,
                got: roster.len(),
            });
        }
        if !config.target_reachable(target) {
            let (min, max) = config.sum_range();
            return Err(GameError::TargetOutOfRange { target, min, max });
        }
        Ok(Self {
            config,
            roster,
            target,
            rounds: Vec::new(),
            status: GameStatus::InProgress,
        })
    }

    pub fn next_round_index(&self) -> u32 {
        self.rounds.len() as u32 + 1
    }

    /// Resolves one round. `guesses` may arrive in any order; the stored record
    /// follows roster order.
    pub fn resolve_round(&mut self, guesses: &[Guess]) -> Result<FeedbackSignal, GameError> {
        if self.status.is_terminal() {
            return Err(GameError::GameAlreadyOver);
        }
        for (i, g) in guesses.iter().enumerate() {
            if !self.roster.contains(&g.agent) {
                return Err(GameError::UnknownAgent(g.agent.clone()));
            }
            if guesses[..i].iter().any(|h| h.agent == g.agent) {
                return Err(GameError::DuplicateGuess(g.agent.clone()));
            }
        }
        let mut ordered = Vec::with_capacity(self.roster.len());
        for agent in &self.roster {
            let g = guesses
                .iter()
                .find(|g| &g.agent == agent)
                .ok_or_else(|| GameError::MissingGuess(agent.clone()))?;
            if !self.config.guess_in_range(g.value) {
                return Err(GameError::GuessOutOfRange {
                    agent: agent.clone(),
                    value: g.value,
                    min: self.config.guess_min,
                    max: self.config.guess_max,
                });
            }
            ordered.push(g.clone());
        }
        let sum: i64 = ordered.iter().map(|g| g.value).sum();
        let feedback = FeedbackSignal::compute(sum, self.target);
        self.rounds.push(RoundRecord {
            round_index: self.next_round_index(),
            guesses: ordered,
            feedback,
        });
        self.status = if feedback.solved {
            GameStatus::Solved
        } else if self.rounds.len() as u32 >= self.config.max_rounds {
            GameStatus::Exhausted
        } else {
            GameStatus::InProgress
        };
        Ok(feedback)
    }

    /// Round at which the group solved, or `max_rounds` if it never did.
    /// `None` while the game is still running.
    pub fn rounds_to_solution(&self) -> Option<u32> {
        match self.status {
            GameStatus::InProgress => None,
            GameStatus::Solved => Some(self.rounds.len() as u32),
            GameStatus::Exhausted => Some(self.config.max_rounds),
        }
    }
}

/// Player letters: `A`..`Z`, then `A1`..`Z1`, `A2`, ...
pub fn player_letter(index: usize) -> String {
    let letter = (b'A' + (index % 26) as u8) as char;
    match index / 26 {
        0 => letter.to_string(),
        k => format!("{letter}{k}"),
    }
}

pub fn default_roster(n_players: usize) -> Vec<AgentId> {
    (0..n_players).map(|i| AgentId(player_letter(i))).collect()
}
