//! Re-driving logged sessions through the engine.
//!
//! Every seat of a logged session is replaced by a [`ReplayPolicy`] that
//! submits the logged guesses. The session is then played again and the
//! recomputed feedback is compared, round by round, with the log.
//!
//! [`ReplayPolicy`]: crate::policy::ReplayPolicy

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::datastore::{GameLog, SessionLog};
use crate::game::{scaled_target_range, AgentId, FeedbackMode};
use crate::orchestrator::{
    run_session, DefaultFactory, GameSpec, NoopObserver, RunError, RunOptions, SessionConfig,
};
use crate::policy::{AgentKind, AgentSpec, PolicyError, ReplayTrace};

/// Per-agent guess traces of a log.
pub fn traces(log: &SessionLog) -> BTreeMap<AgentId, ReplayTrace> {
    log.header
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let games = log
                .games
                .iter()
                .map(|g| g.rounds.iter().map(|r| r.guesses.get(i).copied().unwrap_or_default()).collect())
                .collect();
            (a.agent_id.clone(), ReplayTrace { games })
        })
        .collect()
}

/// Session config that replays `log`: same roster, rules and targets, with
/// replay seats.
pub fn replay_config(log: &SessionLog) -> SessionConfig {
    let h = &log.header;
    let agents = h
        .agents
        .iter()
        .map(|a| AgentSpec {
            kind: AgentKind::Replay,
            model_id: None,
            temperature: None,
            policy: None,
            policy_params: BTreeMap::new(),
            ..a.clone()
        })
        .collect();
    let range = log
        .games
        .first()
        .map(|g| (g.target_min, g.target_max))
        .unwrap_or_else(|| scaled_target_range(h.n_players, h.guess_min, h.guess_max));
    // games cut off by truncation still get planned so the replay runs
    // into the missing trace instead of silently stopping early
    let mut games: Vec<GameSpec> = log
        .games
        .iter()
        .map(|g| GameSpec { feedback_mode: g.feedback_mode, target: Some(g.target) })
        .collect();
    let mut mode = games.last().map_or(FeedbackMode::Directional, |g| g.feedback_mode.other());
    while games.len() < h.game_count as usize {
        games.push(GameSpec { feedback_mode: mode, target: Some(range.0) });
        mode = mode.other();
    }
    let mut cfg = SessionConfig::new(h.session_id.clone(), agents, h.base_seed).with_fixed_games(games);
    cfg.condition = h.condition.clone();
    cfg.guess_min = h.guess_min;
    cfg.guess_max = h.guess_max;
    cfg.max_rounds = h.max_rounds;
    cfg.include_group_sum_in_feedback = h.include_group_sum_in_feedback;
    cfg.target_range = Some(range);
    cfg
}

/// First point where the replay disagrees with the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub game: u32,
    /// 0 when the disagreement is about the game as a whole.
    pub round: u32,
    pub field: String,
    pub logged: String,
    pub replayed: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "game {} round {}: {}\n  - logged:   {}\n  + replayed: {}", self.game, self.round, self.field, self.logged, self.replayed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass { games: usize, rounds: usize },
    Diverged(Divergence),
    /// The replay could not continue, e.g. the log ends mid-game.
    Aborted { game: u32, round: u32, reason: String },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Self::Pass { .. })
    }

    /// Round where verification failed, if it did.
    pub fn failed_round(&self) -> Option<(u32, u32)> {
        match self {
            Self::Pass { .. } => None,
            Self::Diverged(d) => Some((d.game, d.round)),
            Self::Aborted { game, round, .. } => Some((*game, *round)),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pass { games, rounds } => write!(f, "PASS: {games} games, {rounds} rounds reproduced"),
            Self::Diverged(d) => write!(f, "FAIL: {d}"),
            Self::Aborted { game, round, reason } => {
                write!(f, "FAIL: game {game} round {round}: {reason}")
            }
        }
    }
}

fn diff_game(logged: &GameLog, replayed: &GameLog) -> Option<Divergence> {
    let g = logged.game_index;
    let div = |round: u32, field: &str, a: String, b: String| {
        Some(Divergence { game: g, round, field: field.into(), logged: a, replayed: b })
    };
    for (l, r) in logged.rounds.iter().zip(&replayed.rounds) {
        let round = l.round_index;
        if l.feedback != r.feedback {
            return div(
                round,
                "feedback",
                serde_json::to_string(&l.feedback).unwrap_or_default(),
                serde_json::to_string(&r.feedback).unwrap_or_default(),
            );
        }
        if let Some(i) = (0..l.rendered.len().max(r.rendered.len()))
            .find(|&i| l.rendered.get(i) != r.rendered.get(i))
        {
            return div(
                round,
                &format!("rendered[{i}]"),
                l.rendered.get(i).cloned().unwrap_or_default(),
                r.rendered.get(i).cloned().unwrap_or_default(),
            );
        }
    }
    if logged.rounds.len() != replayed.rounds.len() && logged.status.is_terminal() {
        let round = logged.rounds.len().min(replayed.rounds.len()) as u32 + 1;
        return div(round, "round count", logged.rounds.len().to_string(), replayed.rounds.len().to_string());
    }
    if logged.status.is_terminal() && logged.status != replayed.status {
        return div(0, "status", format!("{:?}", logged.status), format!("{:?}", replayed.status));
    }
    None
}

/// Replays `log` and compares feedback bit for bit.
pub fn verify(log: &SessionLog) -> Verdict {
    let config = replay_config(log);
    let mut factory = DefaultFactory::new();
    for (agent, trace) in traces(log) {
        factory.traces.insert((log.header.session_id.clone(), agent), trace);
    }
    let (replayed, error) = match run_session(&config, &factory, &RunOptions::default(), &mut NoopObserver) {
        Ok(l) => (l, None),
        Err(f) => (*f.partial, Some(f.error)),
    };
    for (l, r) in log.games.iter().zip(&replayed.games) {
        if let Some(d) = diff_game(l, r) {
            return Verdict::Diverged(d);
        }
    }
    if let Some(error) = error {
        let (game, round) = match &error {
            RunError::AgentFailure { cause: PolicyError::TraceExhausted { game, round }, .. } => (*game, *round),
            _ => {
                let g = replayed.games.last();
                (g.map_or(1, |g| g.game_index), g.map_or(1, |g| g.rounds.len() as u32 + 1))
            }
        };
        return Verdict::Aborted { game, round, reason: error.to_string() };
    }
    Verdict::Pass {
        games: replayed.games.len(),
        rounds: replayed.games.iter().map(|g| g.rounds.len()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::run_session;

    fn oracle_log() -> SessionLog {
        let agents = vec![
            AgentSpec::scripted("A", "oracle"),
            AgentSpec::scripted("B", "stay_prone").with_param("p", 0.3),
            AgentSpec::scripted("C", "uniform_random"),
        ];
        let cfg = SessionConfig::new("t", agents, 11);
        run_session(&cfg, &DefaultFactory::new(), &RunOptions::default(), &mut NoopObserver).unwrap()
    }

    #[test]
    fn harness_log_passes() {
        let log = oracle_log();
        let v = verify(&log);
        assert!(v.passed(), "{v}");
    }

    #[test]
    fn tampered_guess_names_round() {
        let mut log = oracle_log();
        let g = log.games.iter().position(|g| g.rounds.len() >= 3).unwrap();
        log.games[g].rounds[1].guesses[0] ^= 1;
        let v = verify(&log);
        assert_eq!(v.failed_round(), Some((log.games[g].game_index, 2)), "{v}");
    }

    #[test]
    fn truncated_log_aborts() {
        let mut log = oracle_log();
        log.footer = None;
        let g = log.games.iter().position(|g| g.rounds.len() >= 2).unwrap();
        log.games.truncate(g + 1);
        let last = log.games.last_mut().unwrap();
        last.rounds.pop();
        last.status = crate::game::GameStatus::InProgress;
        let v = verify(&log);
        assert!(matches!(v, Verdict::Aborted { .. }), "{v}");
        assert!(v.to_string().contains("no entry"), "{v}");
    }
}
