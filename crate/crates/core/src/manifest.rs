//! Experiment manifests.
//!
//! A manifest is a TOML file describing sessions, their agents and the model
//! providers they talk to. Agents are usually stamped out from named
//! templates:
//!
//! ```toml
//! [experiment]
//! name = "oracle"
//! base_seed = 7
//! group_sizes = [2, 3, 17]
//! template = "oracle"
//!
//! [templates.oracle]
//! kind = "scripted"
//! policy = "oracle"
//!
//! [[sessions]]
//! id = "mixed-3p"
//! agents = [
//!   { template = "oracle", count = 2 },
//!   { kind = "scripted", policy = "proportional", params = { alpha = 0.5 } },
//! ]
//! ```
//!
//! Sessions listed under `group_sizes` come first, numbered `s01-2p`,
//! `s02-3p` and so on; explicit `[[sessions]]` follow. Session `k` (0-based)
//! gets base seed `base_seed + k` unless it sets `seed`.
//!
//! Errors carry the line of the offending table.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::datastore::SizeCategory;
use crate::game::{player_letter, FeedbackMode, GameConfig};
use crate::gateway::{
    Cassette, CassetteMode, Gateway, GatewayError, GatewayRegistry, HttpTransport,
    ProviderConfig, RetryPolicy, Transport, TransportError, TransportResponse,
};
use crate::orchestrator::{
    ExperimentConfig, GameSpec, SessionConfig, SessionConfigError, SizeCategories, TargetPolicy,
};
use crate::policy::{AgentKind, AgentSpec};
use crate::prompts::PromptVariant;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{}{field}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { line: Option<usize>, field: String, message: String },
}

impl ManifestError {
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Io { .. } => None,
            Self::Parse { line, .. } => Some(*line),
            Self::Invalid { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    experiment: ExperimentSection,
    #[serde(default)]
    defaults: Defaults,
    #[serde(default)]
    providers: Vec<ProviderConfig>,
    #[serde(default)]
    templates: BTreeMap<String, Spanned<AgentEntry>>,
    #[serde(default)]
    sessions: Vec<Spanned<SessionEntry>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    name: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    base_seed: u64,
    #[serde(default = "one")]
    replications: Spanned<u32>,
    #[serde(default)]
    condition: Option<String>,
    #[serde(default)]
    group_sizes: Vec<usize>,
    #[serde(default)]
    template: Option<Spanned<String>>,
    /// Player count (as a string key) to category.
    #[serde(default)]
    size_categories: BTreeMap<String, SizeCategory>,
}

fn one() -> Spanned<u32> {
    Spanned::new(0..0, 1)
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Defaults {
    game_count: Option<u32>,
    first_feedback_mode: Option<FeedbackMode>,
    max_rounds: Option<u32>,
    guess_min: Option<i64>,
    guess_max: Option<i64>,
    include_group_sum_in_feedback: Option<bool>,
    prompt_variant: Option<PromptVariant>,
    temperature: Option<f64>,
}

/// An agent, or a template for agents. Every field is optional so entries
/// can override the template they name.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentEntry {
    template: Option<String>,
    count: Option<usize>,
    id: Option<String>,
    kind: Option<AgentKind>,
    model_id: Option<String>,
    temperature: Option<f64>,
    seed: Option<u64>,
    prompt_variant: Option<PromptVariant>,
    policy: Option<String>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

impl AgentEntry {
    /// `self` with unset fields taken from `base`.
    fn over(&self, base: &AgentEntry) -> AgentEntry {
        let mut params = base.params.clone();
        params.extend(self.params.clone());
        AgentEntry {
            template: None,
            count: self.count,
            id: self.id.clone(),
            kind: self.kind.or(base.kind),
            model_id: self.model_id.clone().or_else(|| base.model_id.clone()),
            temperature: self.temperature.or(base.temperature),
            seed: self.seed.or(base.seed),
            prompt_variant: self.prompt_variant.or(base.prompt_variant),
            policy: self.policy.clone().or_else(|| base.policy.clone()),
            params,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionEntry {
    id: Option<String>,
    players: Option<usize>,
    template: Option<String>,
    #[serde(default)]
    agents: Vec<Spanned<AgentEntry>>,
    seed: Option<u64>,
    condition: Option<String>,
    first_feedback_mode: Option<FeedbackMode>,
    game_count: Option<u32>,
    /// Fixed targets, one per game, with modes alternating as usual.
    targets: Option<Vec<i64>>,
    /// Fully explicit game list.
    games: Option<Vec<GameSpec>>,
    include_group_sum_in_feedback: Option<bool>,
    /// Applied to every agent of the session.
    temperature: Option<f64>,
    prompt_variant: Option<PromptVariant>,
}

/// A parsed and validated manifest.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub name: String,
    pub description: Option<String>,
    pub experiment: ExperimentConfig,
    pub providers: Vec<ProviderConfig>,
}

/// Command-line overrides applied while building sessions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub base_seed: Option<u64>,
    pub replications: Option<u32>,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn position(&self, offset: usize) -> (usize, usize) {
        let before = &self.0[..offset.min(self.0.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        (line, column)
    }

    fn line(&self, span: Range<usize>) -> Option<usize> {
        (span != (0..0)).then(|| self.position(span.start).0)
    }
}

fn invalid(line: Option<usize>, field: impl Into<String>, message: impl Into<String>) -> ManifestError {
    ManifestError::Invalid { line, field: field.into(), message: message.into() }
}

pub fn parse_manifest(text: &str, overrides: &Overrides) -> Result<Manifest, ManifestError> {
    let lines = Lines(text);
    let file: ManifestFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| lines.position(s.start));
        ManifestError::Parse { line, column, message: e.message().trim().to_string() }
    })?;
    build(file, &lines, overrides)
}

pub fn load_manifest(path: impl AsRef<Path>, overrides: &Overrides) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    parse_manifest(&text, overrides)
}

/// Loads `spec` as a file path, falling back to the bundled manifest of that
/// name.
pub fn resolve_manifest(spec: &str, overrides: &Overrides) -> Result<Manifest, ManifestError> {
    let path = Path::new(spec);
    if !path.exists() {
        let stem = spec.trim_end_matches(".toml").trim_end_matches(".manifest");
        if let Some(text) = bundled(stem) {
            return parse_manifest(text, overrides);
        }
    }
    load_manifest(path, overrides)
}

fn build(file: ManifestFile, lines: &Lines, overrides: &Overrides) -> Result<Manifest, ManifestError> {
    let exp = &file.experiment;
    let replications = overrides.replications.unwrap_or(*exp.replications.get_ref());
    if replications == 0 {
        return Err(invalid(lines.line(exp.replications.span()), "experiment.replications", "must be at least 1"));
    }
    let base_seed = overrides.base_seed.unwrap_or(exp.base_seed);

    let mut size_categories = BTreeMap::new();
    for (key, cat) in &exp.size_categories {
        let n: usize = key.parse().map_err(|_| {
            invalid(None, format!("experiment.size_categories.{key}"), "key must be a player count")
        })?;
        size_categories.insert(n, *cat);
    }

    let templates: BTreeMap<&str, (&AgentEntry, Option<usize>)> = file
        .templates
        .iter()
        .map(|(k, v)| (k.as_str(), (v.get_ref(), lines.line(v.span()))))
        .collect();
    for (name, (t, line)) in &templates {
        if t.template.is_some() || t.count.is_some() {
            return Err(invalid(*line, format!("templates.{name}"), "templates cannot nest or set count"));
        }
    }
    let template = |name: &str, line: Option<usize>, field: &str| {
        templates
            .get(name)
            .map(|(t, _)| *t)
            .ok_or_else(|| invalid(line, field, format!("unknown template `{name}`")))
    };

    let mut entries: Vec<(SessionEntry, Option<usize>, String)> = Vec::new();
    if !exp.group_sizes.is_empty() {
        let Some(t) = &exp.template else {
            return Err(invalid(None, "experiment.template", "group_sizes needs a template"));
        };
        template(t.get_ref(), lines.line(t.span()), "experiment.template")?;
        for &n in &exp.group_sizes {
            let entry = SessionEntry {
                players: Some(n),
                template: Some(t.get_ref().clone()),
                ..SessionEntry::default()
            };
            entries.push((entry, lines.line(t.span()), "experiment.group_sizes".into()));
        }
    }
    for (i, s) in file.sessions.iter().enumerate() {
        entries.push((s.get_ref().clone(), lines.line(s.span()), format!("sessions[{i}]")));
    }
    if entries.is_empty() {
        return Err(invalid(None, "sessions", "manifest defines no sessions"));
    }

    let d = &file.defaults;
    let mut sessions = Vec::new();
    let mut session_lines = BTreeMap::new();
    for (k, (s, line, field)) in entries.into_iter().enumerate() {
        let mut seats: Vec<AgentEntry> = Vec::new();
        match (&s.template, s.agents.is_empty()) {
            (Some(_), false) => {
                return Err(invalid(line, &field, "use either `template` or `agents`, not both"))
            }
            (Some(t), true) => {
                let n = s.players.ok_or_else(|| invalid(line, format!("{field}.players"), "required with `template`"))?;
                let base = template(t, line, &format!("{field}.template"))?;
                seats.extend(std::iter::repeat_n(base.clone(), n));
            }
            (None, false) => {
                for (j, a) in s.agents.iter().enumerate() {
                    let aline = lines.line(a.span()).or(line);
                    let a = a.get_ref();
                    let resolved = match &a.template {
                        Some(t) => a.over(template(t, aline, &format!("{field}.agents[{j}].template"))?),
                        None => a.clone(),
                    };
                    let count = a.count.unwrap_or(1);
                    if count == 0 || (count > 1 && a.id.is_some()) {
                        return Err(invalid(aline, format!("{field}.agents[{j}]"), "count must be >= 1, and 1 when `id` is set"));
                    }
                    seats.extend(std::iter::repeat_n(resolved, count));
                }
                if let Some(n) = s.players {
                    if n != seats.len() {
                        return Err(invalid(
                            line,
                            format!("{field}.players"),
                            format!("says {n} but agents add up to {}", seats.len()),
                        ));
                    }
                }
            }
            (None, true) => return Err(invalid(line, &field, "needs `template` and `players`, or `agents`")),
        }
        if seats.is_empty() {
            return Err(invalid(line, format!("{field}.players"), "must be at least 1"));
        }

        let n = seats.len();
        let agents = seats
            .iter()
            .enumerate()
            .map(|(i, a)| agent_spec(a, i, s.temperature.or(d.temperature), s.prompt_variant.or(d.prompt_variant)))
            .collect::<Result<Vec<_>, String>>()
            .map_err(|m| invalid(line, format!("{field}.agents"), m))?;

        let id = s.id.clone().unwrap_or_else(|| format!("s{:02}-{n}p", k + 1));
        let mut cfg = SessionConfig::new(id.clone(), agents, s.seed.unwrap_or(base_seed.wrapping_add(k as u64)));
        cfg.condition = s.condition.clone().or_else(|| exp.condition.clone()).unwrap_or_default();
        cfg.game_count = s.game_count.or(d.game_count).unwrap_or(SessionConfig::DEFAULT_GAME_COUNT);
        cfg.first_feedback_mode = s.first_feedback_mode.or(d.first_feedback_mode).unwrap_or(FeedbackMode::Directional);
        cfg.max_rounds = d.max_rounds.unwrap_or(GameConfig::DEFAULT_MAX_ROUNDS);
        cfg.guess_min = d.guess_min.unwrap_or(GameConfig::DEFAULT_GUESS_MIN);
        cfg.guess_max = d.guess_max.unwrap_or(GameConfig::DEFAULT_GUESS_MAX);
        cfg.include_group_sum_in_feedback =
            s.include_group_sum_in_feedback.or(d.include_group_sum_in_feedback).unwrap_or(false);
        match (&s.targets, &s.games) {
            (Some(_), Some(_)) => return Err(invalid(line, &field, "use either `targets` or `games`")),
            (Some(targets), None) => {
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
            (None, Some(games)) => {
                cfg.game_count = games.len() as u32;
                cfg.games = games.clone();
                if games.iter().all(|g| g.target.is_some()) {
                    cfg.target_policy = TargetPolicy::FixedList;
                }
            }
            (None, None) => {}
        }
        if session_lines.insert(id.clone(), (line, field.clone())).is_some() {
            return Err(invalid(line, format!("{field}.id"), format!("duplicate session id `{id}`")));
        }
        sessions.push(cfg);
    }

    let experiment = ExperimentConfig { sessions, replications, size_categories: SizeCategories(size_categories) };
    for s in &experiment.sessions {
        s.validate().map_err(|e| {
            let (line, field) = session_lines.get(&s.session_id).cloned().unwrap_or((None, String::new()));
            let message = match e {
                SessionConfigError::Agent(_, cause) => cause.to_string(),
                other => other.to_string(),
            };
            invalid(line, field, message)
        })?;
    }
    Ok(Manifest {
        name: exp.name.clone(),
        description: exp.description.clone(),
        experiment,
        providers: file.providers,
    })
}

fn agent_spec(
    a: &AgentEntry,
    index: usize,
    temperature: Option<f64>,
    variant: Option<PromptVariant>,
) -> Result<AgentSpec, String> {
    let kind = match (a.kind, &a.model_id, &a.policy) {
        (Some(k), _, _) => k,
        (None, Some(_), _) => AgentKind::Llm,
        (None, None, Some(_)) => AgentKind::Scripted,
        (None, None, None) => return Err(format!("agent {index} has no kind, model_id or policy")),
    };
    let id = a.id.clone().unwrap_or_else(|| player_letter(index));
    let mut spec = match kind {
        AgentKind::Llm => {
            let model = a.model_id.as_deref().ok_or_else(|| format!("LLM agent {id} needs model_id"))?;
            let mut s = AgentSpec::llm(id, model, a.prompt_variant.or(variant).unwrap_or_default());
            s.temperature = a.temperature.or(temperature);
            s
        }
        AgentKind::Scripted => {
            let policy = a.policy.as_deref().ok_or_else(|| format!("scripted agent {id} needs policy"))?;
            AgentSpec::scripted(id, policy)
        }
        AgentKind::Human => AgentSpec::human(id),
        AgentKind::Replay => return Err("replay agents are built from logs, not manifests".into()),
    };
    spec.seed = a.seed;
    spec.policy_params = a.params.clone();
    Ok(spec)
}

pub const BUNDLED: [(&str, &str); 4] = [
    ("scripted-oracle", include_str!("../manifests/scripted-oracle.toml")),
    ("paper-18-sessions-llm", include_str!("../manifests/paper-18-sessions-llm.toml")),
    ("mixed-models", include_str!("../manifests/mixed-models.toml")),
    ("temperature-sweep", include_str!("../manifests/temperature-sweep.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Transport standing in for a provider that could not be configured; every
/// call fails with the configuration error so it surfaces per session.
struct Unavailable(String);

impl Transport for Unavailable {
    fn send(&self, _: &crate::gateway::CompletionRequest) -> Result<TransportResponse, TransportError> {
        Err(TransportError::Status { code: 401, body: self.0.clone() })
    }
}

/// Builds one gateway per provider, keyed by each model it serves. In replay
/// mode a single cassette-backed gateway serves every model and no provider
/// is contacted.
pub fn build_gateways(
    providers: &[ProviderConfig],
    mode: CassetteMode,
    cassette_path: Option<&Path>,
) -> Result<GatewayRegistry, GatewayError> {
    let mut registry = GatewayRegistry::new();
    let cassette = match (mode, cassette_path) {
        (CassetteMode::Off, _) => None,
        (CassetteMode::Replay, Some(p)) => Some(Arc::new(Cassette::open_replay(p)?)),
        (CassetteMode::Record, Some(p)) => Some(Arc::new(Cassette::open_record(p)?)),
        (_, None) => Some(Arc::new(Cassette::in_memory())),
    };
    if mode == CassetteMode::Replay {
        let c = cassette.expect("replay has a cassette");
        registry.set_fallback(Arc::new(Gateway::replay_only(c)));
        return Ok(registry);
    }
    for p in providers {
        let transport: Arc<dyn Transport> = match HttpTransport::new(p.clone()) {
            Ok(t) => Arc::new(t),
            Err(e) => Arc::new(Unavailable(format!("provider {}: {e}", p.name))),
        };
        let retry = RetryPolicy { max_retries: p.max_retries, ..RetryPolicy::default() };
        let mut gw = Gateway::new(transport).with_retry(retry).with_max_in_flight(p.max_in_flight);
        if let Some(c) = &cassette {
            gw = gw.with_cassette(mode, c.clone());
        }
        let gw = Arc::new(gw);
        for m in &p.models {
            registry.insert(m.clone(), gw.clone());
        }
    }
    Ok(registry)
}
