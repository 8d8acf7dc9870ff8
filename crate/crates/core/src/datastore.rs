//! Session logs on disk.
//!
//! A log is a JSON-lines file: a `header` line, then for each game a `game`
//! line, one `round` line per round and a `game_end` line, and finally a
//! `footer`. Lines are written as the session runs, so a crash loses at most
//! the round in flight. Reading re-validates every round against the engine.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{
    render_feedback, scaled_target_range, AgentId, FeedbackMode, FeedbackSignal, GameConfig,
    GameStatus,
};
use crate::policy::{AgentKind, AgentSpec, Decision};
use crate::prompts::PromptVariant;

pub const SCHEMA_VERSION: u32 = 1;

/// Default cap on stored completion text per decision, in bytes.
pub const DEFAULT_RAW_TEXT_CAP: usize = 32 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeCategory {
    Small,
    Medium,
    Large,
}

impl SizeCategory {
    /// 2–3 players small, 4–7 medium, larger groups large.
    pub fn for_players(n: usize) -> Self {
        match n {
            0..=3 => Self::Small,
            4..=7 => Self::Medium,
            _ => Self::Large,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogSource {
    Harness,
    Live,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub schema_version: u32,
    pub session_id: String,
    /// Analysis label, e.g. `humans` or `gemini-2.0-flash/zero_shot`.
    pub condition: String,
    pub source: LogSource,
    pub n_players: usize,
    pub size_category: SizeCategory,
    pub replication: u32,
    pub base_seed: u64,
    pub game_count: u32,
    pub guess_min: i64,
    pub guess_max: i64,
    pub max_rounds: u32,
    pub include_group_sum_in_feedback: bool,
    /// Resolved agent specs (seeds filled in), in roster order.
    pub agents: Vec<AgentSpec>,
    pub started_at_ms: u64,
}

impl SessionHeader {
    pub fn roster(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.agent_id.clone()).collect()
    }

    pub fn game_config(&self, game: &GameLog) -> GameConfig {
        GameConfig {
            n_players: self.n_players,
            guess_min: self.guess_min,
            guess_max: self.guess_max,
            target_min: game.target_min,
            target_max: game.target_max,
            max_rounds: self.max_rounds,
            feedback_mode: game.feedback_mode,
            include_group_sum_in_feedback: self.include_group_sum_in_feedback,
        }
    }
}

/// Per-agent metadata of one decision. Omitted from the file when empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DecisionMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub parse_attempts: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub timeout: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_fingerprint: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}
fn is_zero(n: &u32) -> bool {
    *n == 0
}
fn all_default(d: &[DecisionMeta]) -> bool {
    d.iter().all(|m| *m == DecisionMeta::default())
}

impl DecisionMeta {
    pub fn from_decision(d: &Decision, raw_cap: usize) -> Self {
        let (raw_text, truncated) = match &d.raw_text {
            Some(t) if t.len() > raw_cap => {
                let mut end = raw_cap;
                while !t.is_char_boundary(end) {
                    end -= 1;
                }
                (Some(t[..end].to_string()), true)
            }
            other => (other.clone(), false),
        };
        Self {
            raw_text,
            truncated,
            parse_attempts: d.parse_attempts,
            fallback: d.fallback,
            timeout: d.timeout,
            request_fingerprint: d.request_fingerprint.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round_index: u32,
    /// Guesses in roster order.
    pub guesses: Vec<i64>,
    pub feedback: FeedbackSignal,
    /// Feedback sentence each agent was shown, in roster order.
    pub rendered: Vec<String>,
    #[serde(default, skip_serializing_if = "all_default")]
    pub decisions: Vec<DecisionMeta>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameLog {
    pub game_index: u32,
    pub feedback_mode: FeedbackMode,
    pub target: i64,
    pub target_min: i64,
    pub target_max: i64,
    pub status: GameStatus,
    pub rounds: Vec<RoundLog>,
}

impl GameLog {
    /// Round at which the game was solved, else the round cap.
    pub fn rounds_to_solution(&self, max_rounds: u32) -> Option<u32> {
        match self.status {
            GameStatus::InProgress => None,
            GameStatus::Solved => Some(self.rounds.len() as u32),
            GameStatus::Exhausted => Some(max_rounds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFooter {
    pub finished_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub games: Vec<GameLog>,
    pub footer: Option<SessionFooter>,
}

impl SessionLog {
    pub fn is_complete(&self) -> bool {
        matches!(&self.footer, Some(f) if f.failure.is_none())
            && self.games.iter().all(|g| g.status.is_terminal())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        write_session(self, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(SessionHeader),
    Game {
        game_index: u32,
        feedback_mode: FeedbackMode,
        target: i64,
        target_min: i64,
        target_max: i64,
    },
    Round {
        game_index: u32,
        #[serde(flatten)]
        round: RoundLog,
    },
    GameEnd {
        game_index: u32,
        status: GameStatus,
        rounds: u32,
    },
    Footer(SessionFooter),
}

impl LogLine {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("log line serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot write log: {0}")]
    SinkUnavailable(String),
    #[error("log validation failed at {path}: {reason}")]
    ValidationFailed { path: String, reason: String },
    #[error("{file}:{line}: {reason}")]
    Malformed { file: String, line: usize, reason: String },
    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u32),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("missing column `{0}`")]
    SchemaMismatch(String),
    #[error("game {game} round {round} does not have exactly one guess per player")]
    RaggedRound { game: String, round: u32 },
    #[error("row {0}: guess is not an integer")]
    NonIntegerGuess(usize),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("game {0}: {1}")]
    BadGame(String, String),
}

fn lines_of(log: &SessionLog) -> impl Iterator<Item = LogLine> + '_ {
    std::iter::once(LogLine::Header(log.header.clone()))
        .chain(log.games.iter().flat_map(|g| {
            let start = LogLine::Game {
                game_index: g.game_index,
                feedback_mode: g.feedback_mode,
                target: g.target,
                target_min: g.target_min,
                target_max: g.target_max,
            };
            let rounds = g.rounds.iter().map(move |r| LogLine::Round {
                game_index: g.game_index,
                round: r.clone(),
            });
            let end = g.status.is_terminal().then_some(LogLine::GameEnd {
                game_index: g.game_index,
                status: g.status,
                rounds: g.rounds.len() as u32,
            });
            std::iter::once(start).chain(rounds).chain(end)
        }))
        .chain(log.footer.clone().map(LogLine::Footer))
}

/// Serializes `log` as JSON lines.
pub fn write_session<W: Write>(log: &SessionLog, mut sink: W) -> Result<(), StoreError> {
    validate(log)?;
    for line in lines_of(log) {
        sink.write_all(line.to_line().as_bytes())
            .map_err(|e| StoreError::SinkUnavailable(e.to_string()))?;
    }
    sink.flush().map_err(|e| StoreError::SinkUnavailable(e.to_string()))
}

pub fn write_session_file(log: &SessionLog, path: &Path) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| StoreError::SinkUnavailable(e.to_string()))?;
    }
    let file = File::create(path).map_err(|e| StoreError::SinkUnavailable(e.to_string()))?;
    write_session(log, BufWriter::new(file))
}

/// Append-only writer used while a session is running.
pub struct StreamingWriter<W: Write> {
    sink: W,
}

impl StreamingWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, StoreError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| StoreError::SinkUnavailable(e.to_string()))?;
        }
        let file = File::create(path).map_err(|e| StoreError::SinkUnavailable(e.to_string()))?;
        Ok(Self { sink: BufWriter::new(file) })
    }
}

impl<W: Write> StreamingWriter<W> {
    pub fn new(sink: W) -> Self {
        Self { sink }
    }

    pub fn append(&mut self, line: &LogLine) -> Result<(), StoreError> {
        self.sink
            .write_all(line.to_line().as_bytes())
            .and_then(|_| self.sink.flush())
            .map_err(|e| StoreError::SinkUnavailable(e.to_string()))
    }

    pub fn into_inner(self) -> W {
        self.sink
    }
}

pub fn read_session<R: Read>(source: R, name: &str) -> Result<SessionLog, StoreError> {
    let log = read_session_unchecked(source, name)?;
    validate(&log)?;
    Ok(log)
}

/// Parses a log without recomputing its feedback. For tools that want to
/// report where a damaged log diverges rather than refuse it.
pub fn read_session_unchecked<R: Read>(source: R, name: &str) -> Result<SessionLog, StoreError> {
    let mut header = None;
    let mut games: Vec<GameLog> = Vec::new();
    let mut footer = None;
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| StoreError::Malformed {
            file: name.to_string(),
            line: i + 1,
            reason,
        };
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match parsed {
            LogLine::Header(h) => {
                if h.schema_version != SCHEMA_VERSION {
                    return Err(StoreError::UnsupportedSchema(h.schema_version));
                }
                if header.replace(h).is_some() {
                    return Err(malformed("second header".into()));
                }
            }
            _ if header.is_none() => return Err(malformed("first line must be the header".into())),
            LogLine::Game { game_index, feedback_mode, target, target_min, target_max } => {
                games.push(GameLog {
                    game_index,
                    feedback_mode,
                    target,
                    target_min,
                    target_max,
                    status: GameStatus::InProgress,
                    rounds: Vec::new(),
                })
            }
            LogLine::Round { game_index, round } => match games.last_mut() {
                Some(g) if g.game_index == game_index => g.rounds.push(round),
                _ => return Err(malformed(format!("round for unopened game {game_index}"))),
            },
            LogLine::GameEnd { game_index, status, rounds } => match games.last_mut() {
                Some(g) if g.game_index == game_index && g.rounds.len() as u32 == rounds => {
                    g.status = status
                }
                _ => return Err(malformed(format!("game_end does not match game {game_index}"))),
            },
            LogLine::Footer(f) => footer = Some(f),
        }
    }
    let header = header.ok_or_else(|| StoreError::Malformed {
        file: name.to_string(),
        line: 0,
        reason: "empty log".into(),
    })?;
    Ok(SessionLog { header, games, footer })
}

pub fn read_session_file(path: &Path) -> Result<SessionLog, StoreError> {
    let file = File::open(path)?;
    read_session(file, &path.display().to_string())
}

/// All `*.jsonl` session logs under `path` (or `path` itself), sorted by path.
pub fn find_logs(path: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    if path.is_file() {
        out.push(path.to_path_buf());
    } else if path.is_dir() {
        let mut stack = vec![path.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.extension().is_some_and(|e| e == "jsonl")
                    && p.file_name().is_some_and(|n| n != "cassette.jsonl")
                {
                    out.push(p);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Checks every stored round against a recomputation from guesses and target.
pub fn validate(log: &SessionLog) -> Result<(), StoreError> {
    let h = &log.header;
    let fail = |path: String, reason: String| Err(StoreError::ValidationFailed { path, reason });
    if h.agents.len() != h.n_players {
        return fail("header".into(), format!("{} agents for {} players", h.agents.len(), h.n_players));
    }
    for (gi, game) in log.games.iter().enumerate() {
        let gpath = format!("game {}", game.game_index);
        if game.game_index != gi as u32 + 1 {
            return fail(gpath, "game indices must be consecutive from 1".into());
        }
        let cfg = h.game_config(game);
        if !cfg.target_reachable(game.target) {
            return fail(gpath, format!("target {} is unreachable", game.target));
        }
        for (ri, round) in game.rounds.iter().enumerate() {
            let rpath = format!("game {} round {}", game.game_index, round.round_index);
            if round.round_index != ri as u32 + 1 {
                return fail(rpath, "round indices must be consecutive from 1".into());
            }
            if ri as u32 >= h.max_rounds {
                return fail(rpath, "more rounds than max_rounds".into());
            }
            if round.guesses.len() != h.n_players {
                return fail(rpath, format!("{} guesses for {} players", round.guesses.len(), h.n_players));
            }
            if let Some(g) = round.guesses.iter().find(|g| !cfg.guess_in_range(**g)) {
                return fail(rpath, format!("guess {g} out of range"));
            }
            let expected = FeedbackSignal::compute(round.guesses.iter().sum(), game.target);
            if expected.group_sum != round.feedback.group_sum {
                return fail(
                    format!("{rpath}: group_sum"),
                    format!("stored {}, recomputed {}", round.feedback.group_sum, expected.group_sum),
                );
            }
            if expected != round.feedback {
                return fail(format!("{rpath}: feedback"), "direction/magnitude/solved mismatch".into());
            }
            if round.rendered.len() != h.n_players {
                return fail(format!("{rpath}: rendered"), "one rendered sentence per agent".into());
            }
            for (own, text) in round.guesses.iter().zip(&round.rendered) {
                if *text != render_feedback(&expected, &cfg, *own) {
                    return fail(format!("{rpath}: rendered"), "text does not match feedback".into());
                }
            }
            if !round.decisions.is_empty() && round.decisions.len() != h.n_players {
                return fail(format!("{rpath}: decisions"), "one entry per agent".into());
            }
            if expected.solved && ri + 1 != game.rounds.len() {
                return fail(rpath, "rounds continue after the game was solved".into());
            }
        }
        let solved = game.rounds.last().is_some_and(|r| r.feedback.solved);
        let expected_status = if solved {
            GameStatus::Solved
        } else if game.rounds.len() as u32 == h.max_rounds {
            GameStatus::Exhausted
        } else {
            GameStatus::InProgress
        };
        if game.status != expected_status {
            return fail(
                format!("{gpath}: status"),
                format!("stored {:?}, recomputed {:?}", game.status, expected_status),
            );
        }
        if game.status == GameStatus::InProgress && gi + 1 != log.games.len() {
            return fail(gpath, "unfinished game followed by another game".into());
        }
    }
    Ok(())
}

/// Entry of the experiment-level `manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub session_id: String,
    pub replication: u32,
    pub n_players: usize,
    pub path: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// `<root>/<session_id>/log.jsonl`
pub fn session_log_path(root: &Path, session_id: &str) -> PathBuf {
    root.join(session_id).join("log.jsonl")
}

pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<(), StoreError> {
    fs::create_dir_all(root).map_err(|e| StoreError::SinkUnavailable(e.to_string()))?;
    let body = serde_json::to_string_pretty(entries).expect("manifest serializes");
    fs::write(root.join("manifest.json"), body + "\n")
        .map_err(|e| StoreError::SinkUnavailable(e.to_string()))
}

/// Column names of the tabular trace format, in order.
pub const TRACE_COLUMNS: [&str; 7] = [
    "session_id",
    "game_index",
    "feedback_mode",
    "target",
    "round_index",
    "player_id",
    "guess",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub session_id: String,
    pub game_index: u32,
    pub feedback_mode: String,
    pub target: i64,
    pub round_index: u32,
    pub player_id: String,
    pub guess: i64,
}

/// Settings applied to imported sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportOptions {
    pub condition: String,
    pub guess_min: i64,
    pub guess_max: i64,
    pub max_rounds: u32,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            condition: "humans".into(),
            guess_min: GameConfig::DEFAULT_GUESS_MIN,
            guess_max: GameConfig::DEFAULT_GUESS_MAX,
            max_rounds: GameConfig::DEFAULT_MAX_ROUNDS,
        }
    }
}

/// Rebuilds session logs from a comma-separated trace with the
/// [`TRACE_COLUMNS`] header. Feedback is recomputed from targets and sums.
pub fn import_external_trace<R: Read>(
    source: R,
    opts: &ImportOptions,
) -> Result<Vec<SessionLog>, StoreError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| StoreError::SchemaMismatch(e.to_string()))?
        .clone();
    let mut col = BTreeMap::new();
    for name in TRACE_COLUMNS {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| StoreError::SchemaMismatch(name.to_string()))?;
        col.insert(name, idx);
    }

    // session -> (player order, game -> (mode, target, round -> player -> guess))
    type Rounds = BTreeMap<u32, Vec<(String, i64)>>;
    struct Game {
        mode: FeedbackMode,
        target: i64,
        rounds: Rounds,
    }
    let mut sessions: Vec<(String, Vec<String>, BTreeMap<u32, Game>)> = Vec::new();

    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| StoreError::BadRow { row, reason: e.to_string() })?;
        let field = |name: &str| record.get(col[name]).unwrap_or("");
        let bad = |reason: String| StoreError::BadRow { row, reason };
        let session_id = field("session_id").to_string();
        let game_index: u32 = field("game_index")
            .parse()
            .map_err(|_| bad("game_index is not a positive integer".into()))?;
        let mode: FeedbackMode = field("feedback_mode").parse().map_err(bad)?;
        let target: i64 = field("target")
            .parse()
            .map_err(|_| bad("target is not an integer".into()))?;
        let round_index: u32 = field("round_index")
            .parse()
            .map_err(|_| bad("round_index is not a positive integer".into()))?;
        let player = field("player_id").to_string();
        let guess: i64 = field("guess").parse().map_err(|_| StoreError::NonIntegerGuess(row))?;
        if game_index == 0 || round_index == 0 {
            return Err(bad("indices are 1-based".into()));
        }

        let pos = match sessions.iter().position(|s| s.0 == session_id) {
            Some(p) => p,
            None => {
                sessions.push((session_id.clone(), Vec::new(), BTreeMap::new()));
                sessions.len() - 1
            }
        };
        let (_, players, games) = &mut sessions[pos];
        if !players.contains(&player) {
            players.push(player.clone());
        }
        let game = games.entry(game_index).or_insert_with(|| Game {
            mode,
            target,
            rounds: BTreeMap::new(),
        });
        if game.mode != mode || game.target != target {
            return Err(bad(format!("game {game_index} changes mode or target between rows")));
        }
        game.rounds.entry(round_index).or_default().push((player, guess));
    }

    let mut logs = Vec::new();
    for (session_id, players, games) in sessions {
        let n = players.len();
        let agents: Vec<AgentSpec> = players
            .iter()
            .map(|p| AgentSpec { kind: AgentKind::Human, ..AgentSpec::human(p.as_str()) })
            .collect();
        let header = SessionHeader {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.clone(),
            condition: opts.condition.clone(),
            source: LogSource::Imported,
            n_players: n,
            size_category: SizeCategory::for_players(n),
            replication: 0,
            base_seed: 0,
            game_count: games.len() as u32,
            guess_min: opts.guess_min,
            guess_max: opts.guess_max,
            max_rounds: opts.max_rounds,
            include_group_sum_in_feedback: false,
            agents,
            started_at_ms: 0,
        };
        let (tmin, tmax) = scaled_target_range(n, opts.guess_min, opts.guess_max);
        let mut game_logs = Vec::new();
        for (expected_index, (game_index, game)) in (1..).zip(games) {
            let gname = format!("{session_id}/{game_index}");
            if game_index != expected_index {
                return Err(StoreError::BadGame(gname, "game indices must be consecutive from 1".into()));
            }
            let mut glog = GameLog {
                game_index,
                feedback_mode: game.mode,
                target: game.target,
                target_min: tmin.min(game.target),
                target_max: tmax.max(game.target),
                status: GameStatus::InProgress,
                rounds: Vec::new(),
            };
            let cfg = header.game_config(&glog);
            for (expected_round, (round_index, entries)) in (1..).zip(game.rounds) {
                if round_index != expected_round {
                    return Err(StoreError::BadGame(gname, format!("round {expected_round} is missing")));
                }
                if glog.status.is_terminal() {
                    return Err(StoreError::BadGame(gname, "rounds continue after the game ended".into()));
                }
                let mut guesses = Vec::with_capacity(n);
                for p in &players {
                    let mut mine = entries.iter().filter(|(q, _)| q == p);
                    match (mine.next(), mine.next()) {
                        (Some((_, g)), None) => guesses.push(*g),
                        _ => {
                            return Err(StoreError::RaggedRound { game: gname, round: round_index })
                        }
                    }
                }
                if let Some(g) = guesses.iter().find(|g| !cfg.guess_in_range(**g)) {
                    return Err(StoreError::BadGame(gname, format!("guess {g} out of range")));
                }
                let feedback = FeedbackSignal::compute(guesses.iter().sum(), game.target);
                let rendered = guesses.iter().map(|g| render_feedback(&feedback, &cfg, *g)).collect();
                glog.rounds.push(RoundLog {
                    round_index,
                    guesses,
                    feedback,
                    rendered,
                    decisions: Vec::new(),
                });
                glog.status = if feedback.solved {
                    GameStatus::Solved
                } else if round_index >= opts.max_rounds {
                    GameStatus::Exhausted
                } else {
                    GameStatus::InProgress
                };
            }
            if !glog.status.is_terminal() {
                return Err(StoreError::BadGame(gname, "game ends unsolved before the round cap".into()));
            }
            game_logs.push(glog);
        }
        let log = SessionLog {
            header,
            games: game_logs,
            footer: Some(SessionFooter { finished_at_ms: 0, failure: None }),
        };
        validate(&log)?;
        logs.push(log);
    }
    Ok(logs)
}

pub fn import_external_trace_file(path: &Path, opts: &ImportOptions) -> Result<Vec<SessionLog>, StoreError> {
    import_external_trace(File::open(path)?, opts)
}

/// Writes logs in the tabular trace format accepted by [`import_external_trace`].
pub fn export_external_trace<W: Write>(logs: &[SessionLog], sink: W) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_writer(sink);
    let io_err = |e: csv::Error| StoreError::SinkUnavailable(e.to_string());
    for log in logs {
        let roster = log.header.roster();
        for game in &log.games {
            for round in &game.rounds {
                for (agent, guess) in roster.iter().zip(&round.guesses) {
                    w.serialize(TraceRow {
                        session_id: log.header.session_id.clone(),
                        game_index: game.game_index,
                        feedback_mode: game.feedback_mode.as_str().to_string(),
                        target: game.target,
                        round_index: round.round_index,
                        player_id: agent.to_string(),
                        guess: *guess,
                    })
                    .map_err(io_err)?;
                }
            }
        }
    }
    w.flush().map_err(StoreError::Io)
}

/// Label helper: `model/variant` for single-model LLM groups, a sorted
/// `+`-joined model list for mixed groups, else the given fallback.
pub fn condition_label(agents: &[AgentSpec], fallback: &str) -> String {
    let models: Vec<&str> = agents.iter().filter_map(|a| a.model_id.as_deref()).collect();
    if models.is_empty() {
        return fallback.to_string();
    }
    let mut distinct: Vec<&str> = models.clone();
    distinct.sort();
    distinct.dedup();
    let variants: Vec<PromptVariant> = agents.iter().map(|a| a.prompt_variant).collect();
    let variant = variants[0];
    let same_variant = variants.iter().all(|v| *v == variant);
    match (distinct.as_slice(), same_variant) {
        ([one], true) => format!("{one}/{}", variant.as_str()),
        (many, true) => format!("{}/{}", many.join("+"), variant.as_str()),
        (many, false) => format!("{}/mixed", many.join("+")),
    }
}
