//! Group Binary Search: a common-interest coordination game where a group of
//! players must make their independent guesses add up to a hidden target,
//! seeing only shared feedback about the sum.
//!
//! The crate provides the game engine ([`game`]), player policies including
//! prompt-driven LLM players ([`policy`], [`prompts`], [`gateway`]), the
//! session and experiment harness ([`orchestrator`], [`manifest`]), the log
//! format ([`datastore`]) and the behavioural statistics computed from logs
//! ([`analytics`], [`stats`]).

pub mod analytics;
pub mod datastore;
pub mod game;
pub mod gateway;
pub mod manifest;
pub mod orchestrator;
pub mod policy;
pub mod prompts;
pub mod replay;
pub mod stats;

pub use datastore::{SessionLog, SizeCategory};
pub use game::{AgentId, Direction, FeedbackMode, FeedbackSignal, GameConfig, GameState, GameStatus};
pub use orchestrator::{run_experiment, run_session, ExperimentConfig, SessionConfig};
pub use policy::{AgentKind, AgentPolicy, AgentSpec, Decision, Observation};
pub use prompts::PromptVariant;
