//! Behavioural metrics computed from session logs.
//!
//! Everything here is a pure function of the logs (plus the bootstrap seed):
//! rounds-to-solution grids, learning slopes with bootstrap intervals,
//! reaction-to-feedback slopes, switching profiles, stay statistics,
//! coordination signatures and histograms.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datastore::{GameLog, SessionLog, SizeCategory};
use crate::game::{FeedbackMode, GameStatus};
use crate::stats::{
    bootstrap_mean_ci_with, mean, ols, population_sd, sample_sd, standard_error, BootstrapCi,
    CiMethod, StatsError, DEFAULT_BOOTSTRAP_ITERATIONS,
};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("game is not finished")]
    GameNotTerminal,
    #[error("need at least two games of the feedback mode, got {0}")]
    InsufficientGames(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("no logs to analyze")]
    NoLogs,
    #[error("logs mix schema versions {0:?}")]
    MixedSchemaVersions(Vec<u32>),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Rounds needed to solve a finished game; the round cap if never solved.
pub fn rounds_to_solution(game: &GameLog, max_rounds: u32) -> Result<u32, AnalyticsError> {
    game.rounds_to_solution(max_rounds).ok_or(AnalyticsError::GameNotTerminal)
}

fn finished_games(log: &SessionLog) -> impl Iterator<Item = &GameLog> {
    log.games.iter().filter(|g| g.status != GameStatus::InProgress)
}

/// OLS slope of rounds-to-solution over the within-mode game index (1, 2, ...).
pub fn learning_slope(log: &SessionLog, mode: FeedbackMode) -> Result<f64, AnalyticsError> {
    let ys: Vec<f64> = finished_games(log)
        .filter(|g| g.feedback_mode == mode)
        .map(|g| rounds_to_solution(g, log.header.max_rounds).map(f64::from))
        .collect::<Result<_, _>>()?;
    if ys.len() < 2 {
        return Err(AnalyticsError::InsufficientGames(ys.len()));
    }
    let xs: Vec<f64> = (1..=ys.len()).map(|i| i as f64).collect();
    Ok(ols(&xs, &ys)?.slope)
}

/// One point per consecutive pair of rounds in a game:
/// `(group_sum(t) - target, group_sum(t+1) - group_sum(t))`.
pub fn reaction_points(game: &GameLog) -> Vec<(f64, f64)> {
    game.rounds
        .windows(2)
        .map(|w| {
            let err = w[0].feedback.group_sum - game.target;
            let delta = w[1].feedback.group_sum - w[0].feedback.group_sum;
            (err as f64, delta as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionFit {
    pub slope: f64,
    pub intercept: f64,
    pub n_points: usize,
}

/// Affine least-squares fit of group reaction against the previous error,
/// pooled over all points.
pub fn reaction_slope(points: &[(f64, f64)]) -> Result<ReactionFit, AnalyticsError> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = ols(&xs, &ys)?;
    Ok(ReactionFit { slope: fit.slope, intercept: fit.intercept, n_points: points.len() })
}

/// Fraction of agents whose guess changed, for rounds 2.. of a game.
pub fn switch_proportions(game: &GameLog) -> Vec<f64> {
    game.rounds
        .windows(2)
        .map(|w| {
            let n = w[1].guesses.len().max(1);
            let switched = w[0].guesses.iter().zip(&w[1].guesses).filter(|(a, b)| a != b).count();
            switched as f64 / n as f64
        })
        .collect()
}

/// Per-agent fraction of post-initial rounds that repeat the previous guess.
/// `None` for games with a single round.
pub fn stay_probabilities(game: &GameLog) -> Option<Vec<f64>> {
    if game.rounds.len() < 2 {
        return None;
    }
    let n = game.rounds[0].guesses.len();
    let denom = (game.rounds.len() - 1) as f64;
    Some(
        (0..n)
            .map(|i| {
                let stays = game.rounds.windows(2).filter(|w| w[0].guesses[i] == w[1].guesses[i]).count();
                stays as f64 / denom
            })
            .collect(),
    )
}

/// Guess changes between consecutive rounds, zero included.
pub fn switch_deltas(game: &GameLog) -> Vec<i64> {
    game.rounds
        .windows(2)
        .flat_map(|w| w[0].guesses.iter().zip(&w[1].guesses).map(|(a, b)| b - a))
        .collect()
}

/// How the signature's stability axis is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StabilityAxis {
    /// Mean per-player stay probability.
    #[default]
    StayProbability,
    /// One minus the mean per-round switching proportion.
    OneMinusSwitchRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameSignature {
    pub stability: f64,
    pub dispersion: f64,
}

/// Stability and across-player dispersion of stay probabilities for one game.
pub fn game_signature(game: &GameLog, axis: StabilityAxis) -> Option<GameSignature> {
    let stays = stay_probabilities(game)?;
    let stability = match axis {
        StabilityAxis::StayProbability => mean(&stays)?,
        StabilityAxis::OneMinusSwitchRate => 1.0 - mean(&switch_proportions(game))?,
    };
    Some(GameSignature { stability, dispersion: population_sd(&stays)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub bootstrap_seed: u64,
    pub bootstrap_iterations: usize,
    pub ci_level: f64,
    pub stability_axis: StabilityAxis,
    pub ci_method: CiMethod,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            bootstrap_seed: 0,
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            ci_level: 0.95,
            stability_axis: StabilityAxis::StayProbability,
            ci_method: CiMethod::Percentile,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Rounds,
    Slopes,
    Reaction,
    Switching,
    Stay,
    Signature,
    Hist,
}

impl Section {
    pub const ALL: [Section; 7] = [
        Self::Rounds,
        Self::Slopes,
        Self::Reaction,
        Self::Switching,
        Self::Stay,
        Self::Signature,
        Self::Hist,
    ];
}

impl std::str::FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "rounds" => Self::Rounds,
            "slopes" => Self::Slopes,
            "reaction" => Self::Reaction,
            "switching" => Self::Switching,
            "stay" => Self::Stay,
            "signature" => Self::Signature,
            "hist" => Self::Hist,
            other => return Err(format!("unknown report section `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundsCell {
    pub condition: String,
    pub size_category: SizeCategory,
    pub feedback_mode: FeedbackMode,
    pub mean: f64,
    /// Standard deviation of per-run means.
    pub sd: f64,
    /// Standard deviation over individual games.
    pub sd_across_games: f64,
    pub run_count: usize,
    pub game_count: usize,
    pub low_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub condition: String,
    pub feedback_mode: FeedbackMode,
    pub mean_slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pct_negative: f64,
    pub run_count: usize,
    pub per_run: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionRow {
    pub condition: String,
    /// `None` pools all group sizes.
    pub size_category: Option<SizeCategory>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    /// 0 is the final round of the game, counting backwards.
    pub rounds_before_end: u32,
    pub mean: f64,
    pub sd: f64,
    pub n_games: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingRow {
    pub condition: String,
    pub size_category: SizeCategory,
    pub feedback_mode: FeedbackMode,
    pub profile: Vec<ProfilePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayRecord {
    pub condition: String,
    pub session_id: String,
    pub size_category: SizeCategory,
    pub feedback_mode: FeedbackMode,
    pub game_index: u32,
    pub agent_id: String,
    pub stay_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayExtremes {
    pub condition: String,
    pub size_category: SizeCategory,
    pub feedback_mode: FeedbackMode,
    pub prop_always_switch: f64,
    pub se_always_switch: f64,
    pub prop_always_stay: f64,
    pub se_always_stay: f64,
    pub player_games: usize,
    pub run_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayStats {
    pub per_player_game: Vec<StayRecord>,
    pub extremes: Vec<StayExtremes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignaturePoint {
    pub condition: String,
    pub size_category: SizeCategory,
    pub feedback_mode: FeedbackMode,
    pub stability: f64,
    pub dispersion: f64,
    pub stability_sd: f64,
    pub dispersion_sd: f64,
    pub game_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub condition: String,
    pub feedback_mode: FeedbackMode,
    pub counts: BTreeMap<i64, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bootstrap_seed: u64,
    pub bootstrap_iterations: usize,
    pub ci_level: f64,
    pub ci_method: CiMethod,
    /// Conventions the numbers depend on.
    pub conventions: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds_table: Option<Vec<RoundsCell>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_slopes: Option<Vec<SlopeRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reaction_slopes: Option<Vec<ReactionRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switching_profile: Option<Vec<SwitchingRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stay_stats: Option<StayStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signature_points: Option<Vec<SignaturePoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision_hist: Option<Vec<Histogram>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switch_magnitude_hist: Option<Vec<Histogram>>,
}

type CellKey = (String, SizeCategory, FeedbackMode);

fn cell_key(log: &SessionLog, mode: FeedbackMode) -> CellKey {
    (log.header.condition.clone(), log.header.size_category, mode)
}

fn sd0(xs: &[f64]) -> f64 {
    sample_sd(xs).unwrap_or(0.0)
}

/// Mean (sd across runs) of rounds to solution per condition, size and mode.
pub fn rounds_table(logs: &[SessionLog]) -> Vec<RoundsCell> {
    let mut runs: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    let mut games: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for log in logs {
        let mut per_mode: BTreeMap<FeedbackMode, Vec<f64>> = BTreeMap::new();
        for g in finished_games(log) {
            if let Some(r) = g.rounds_to_solution(log.header.max_rounds) {
                per_mode.entry(g.feedback_mode).or_default().push(f64::from(r));
            }
        }
        for (mode, rs) in per_mode {
            let key = cell_key(log, mode);
            runs.entry(key.clone()).or_default().push(mean(&rs).expect("non-empty"));
            games.entry(key).or_default().extend(rs);
        }
    }
    runs.into_iter()
        .map(|((condition, size_category, feedback_mode), run_means)| {
            let all = &games[&(condition.clone(), size_category, feedback_mode)];
            RoundsCell {
                mean: mean(&run_means).expect("non-empty"),
                sd: sd0(&run_means),
                sd_across_games: sd0(all),
                run_count: run_means.len(),
                game_count: all.len(),
                low_sample: run_means.len() < 2,
                condition,
                size_category,
                feedback_mode,
            }
        })
        .collect()
}

fn key_seed(base: u64, key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    base ^ u64::from_le_bytes(bytes)
}

/// Per-run learning slopes per condition and mode, with bootstrap intervals.
pub fn learning_slopes(logs: &[SessionLog], opts: &ReportOptions) -> Vec<SlopeRow> {
    let mut per: BTreeMap<(String, FeedbackMode), Vec<f64>> = BTreeMap::new();
    for log in logs {
        for mode in [FeedbackMode::Directional, FeedbackMode::Numerical] {
            if let Ok(s) = learning_slope(log, mode) {
                per.entry((log.header.condition.clone(), mode)).or_default().push(s);
            }
        }
    }
    per.into_iter()
        .filter_map(|((condition, mode), slopes)| {
            let mut rng = ChaCha8Rng::seed_from_u64(key_seed(
                opts.bootstrap_seed,
                &format!("{condition}\u{0}{mode}"),
            ));
            let ci: BootstrapCi =
                bootstrap_mean_ci_with(&slopes, opts.bootstrap_iterations, opts.ci_level, opts.ci_method, &mut rng).ok()?;
            Some(SlopeRow {
                condition,
                feedback_mode: mode,
                mean_slope: ci.mean,
                ci_low: ci.ci_low,
                ci_high: ci.ci_high,
                pct_negative: ci.pct_negative,
                run_count: slopes.len(),
                per_run: slopes,
            })
        })
        .collect()
}

/// Reaction slopes over numerical games, per condition (all sizes pooled) and
/// per condition and size.
pub fn reaction_slopes(logs: &[SessionLog]) -> Vec<ReactionRow> {
    type Key = (String, Option<SizeCategory>);
    let mut pooled: BTreeMap<Key, Vec<(f64, f64)>> = BTreeMap::new();
    for log in logs {
        let pts: Vec<(f64, f64)> = log
            .games
            .iter()
            .filter(|g| g.feedback_mode == FeedbackMode::Numerical)
            .flat_map(reaction_points)
            .collect();
        let c = log.header.condition.clone();
        pooled.entry((c.clone(), None)).or_default().extend(&pts);
        pooled.entry((c, Some(log.header.size_category))).or_default().extend(pts);
    }
    pooled
        .into_iter()
        .map(|((condition, size_category), points)| {
            let fit = reaction_slope(&points);
            ReactionRow {
                condition,
                size_category,
                slope: fit.as_ref().ok().map(|f| f.slope),
                intercept: fit.as_ref().ok().map(|f| f.intercept),
                n_points: points.len(),
                error: fit.err().map(|e| e.to_string()),
                points,
            }
        })
        .collect()
}

/// Mean switching proportion by rounds-before-end, per condition, size and mode.
pub fn switching_profile(logs: &[SessionLog]) -> Vec<SwitchingRow> {
    let mut acc: BTreeMap<CellKey, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for log in logs {
        for g in &log.games {
            let props = switch_proportions(g);
            let last = props.len();
            let slot = acc.entry(cell_key(log, g.feedback_mode)).or_default();
            for (i, p) in props.into_iter().enumerate() {
                slot.entry((last - 1 - i) as u32).or_default().push(p);
            }
        }
    }
    acc.into_iter()
        .filter(|(_, by)| !by.is_empty())
        .map(|((condition, size_category, feedback_mode), by_offset)| SwitchingRow {
            condition,
            size_category,
            feedback_mode,
            profile: by_offset
                .into_iter()
                .map(|(rounds_before_end, ps)| ProfilePoint {
                    rounds_before_end,
                    mean: mean(&ps).expect("non-empty"),
                    sd: sd0(&ps),
                    n_games: ps.len(),
                })
                .collect(),
        })
        .collect()
}

/// Stay probability of every player in every game, and the share of
/// player-games at exactly 0 and exactly 1 with standard errors across runs.
pub fn stay_statistics(logs: &[SessionLog]) -> StayStats {
    let mut per_player_game = Vec::new();
    // key -> per-run (zeros, ones, total)
    let mut runs: BTreeMap<CellKey, Vec<(usize, usize, usize)>> = BTreeMap::new();
    for log in logs {
        let mut counts: BTreeMap<FeedbackMode, (usize, usize, usize)> = BTreeMap::new();
        for g in &log.games {
            let Some(ps) = stay_probabilities(g) else { continue };
            let c = counts.entry(g.feedback_mode).or_default();
            for (agent, p) in log.header.agents.iter().zip(&ps) {
                c.0 += usize::from(*p == 0.0);
                c.1 += usize::from(*p == 1.0);
                c.2 += 1;
                per_player_game.push(StayRecord {
                    condition: log.header.condition.clone(),
                    session_id: log.header.session_id.clone(),
                    size_category: log.header.size_category,
                    feedback_mode: g.feedback_mode,
                    game_index: g.game_index,
                    agent_id: agent.agent_id.to_string(),
                    stay_probability: *p,
                });
            }
        }
        for (mode, c) in counts {
            runs.entry(cell_key(log, mode)).or_default().push(c);
        }
    }
    let extremes = runs
        .into_iter()
        .map(|((condition, size_category, feedback_mode), per_run)| {
            let total: usize = per_run.iter().map(|r| r.2).sum();
            let zeros: usize = per_run.iter().map(|r| r.0).sum();
            let ones: usize = per_run.iter().map(|r| r.1).sum();
            let run_zero: Vec<f64> = per_run.iter().map(|r| r.0 as f64 / r.2 as f64).collect();
            let run_one: Vec<f64> = per_run.iter().map(|r| r.1 as f64 / r.2 as f64).collect();
            StayExtremes {
                condition,
                size_category,
                feedback_mode,
                prop_always_switch: zeros as f64 / total as f64,
                se_always_switch: standard_error(&run_zero).unwrap_or(0.0),
                prop_always_stay: ones as f64 / total as f64,
                se_always_stay: standard_error(&run_one).unwrap_or(0.0),
                player_games: total,
                run_count: per_run.len(),
            }
        })
        .collect();
    StayStats { per_player_game, extremes }
}

/// Stability/dispersion summary per condition, size and mode.
pub fn coordination_signature(logs: &[SessionLog], axis: StabilityAxis) -> Vec<SignaturePoint> {
    let mut acc: BTreeMap<CellKey, (Vec<f64>, Vec<GameSignature>)> = BTreeMap::new();
    for log in logs {
        for g in &log.games {
            let (Some(sig), Some(stays)) = (game_signature(g, axis), stay_probabilities(g)) else {
                continue;
            };
            let slot = acc.entry(cell_key(log, g.feedback_mode)).or_default();
            match axis {
                StabilityAxis::StayProbability => slot.0.extend(stays),
                StabilityAxis::OneMinusSwitchRate => slot.0.push(sig.stability),
            }
            slot.1.push(sig);
        }
    }
    acc.into_iter()
        .map(|((condition, size_category, feedback_mode), (stays, sigs))| {
            let stab: Vec<f64> = sigs.iter().map(|s| s.stability).collect();
            let disp: Vec<f64> = sigs.iter().map(|s| s.dispersion).collect();
            SignaturePoint {
                condition,
                size_category,
                feedback_mode,
                stability: mean(&stays).unwrap_or(0.0),
                dispersion: mean(&disp).unwrap_or(0.0),
                stability_sd: sd0(&stab),
                dispersion_sd: sd0(&disp),
                game_count: sigs.len(),
            }
        })
        .collect()
}

/// Guess histogram and guess-change histogram per condition and mode.
pub fn histograms(logs: &[SessionLog]) -> (Vec<Histogram>, Vec<Histogram>) {
    let mut decisions: BTreeMap<(String, FeedbackMode), BTreeMap<i64, u64>> = BTreeMap::new();
    let mut deltas: BTreeMap<(String, FeedbackMode), BTreeMap<i64, u64>> = BTreeMap::new();
    for log in logs {
        for g in &log.games {
            let key = (log.header.condition.clone(), g.feedback_mode);
            let d = decisions.entry(key.clone()).or_default();
            for r in &g.rounds {
                for v in &r.guesses {
                    *d.entry(*v).or_default() += 1;
                }
            }
            let s = deltas.entry(key).or_default();
            for v in switch_deltas(g) {
                *s.entry(v).or_default() += 1;
            }
        }
    }
    let into = |m: BTreeMap<(String, FeedbackMode), BTreeMap<i64, u64>>| {
        m.into_iter()
            .map(|((condition, feedback_mode), counts)| Histogram { condition, feedback_mode, counts })
            .collect()
    };
    (into(decisions), into(deltas))
}

pub fn check_schema_versions(logs: &[SessionLog]) -> Result<(), AnalyticsError> {
    if logs.is_empty() {
        return Err(AnalyticsError::NoLogs);
    }
    let mut versions: Vec<u32> = logs.iter().map(|l| l.header.schema_version).collect();
    versions.sort();
    versions.dedup();
    if versions.len() > 1 {
        return Err(AnalyticsError::MixedSchemaVersions(versions));
    }
    Ok(())
}

/// Builds the requested report sections.
pub fn build_report(
    logs: &[SessionLog],
    sections: &[Section],
    opts: &ReportOptions,
) -> Result<MetricsReport, AnalyticsError> {
    check_schema_versions(logs)?;
    let want = |s: Section| sections.contains(&s);
    let mut conventions = BTreeMap::new();
    conventions.insert("rounds_table.sd".into(), "sample sd of per-run means; sd_across_games also reported".into());
    conventions.insert("switching.x_axis".into(), "rounds_before_end: 0 = final round, counting backwards".into());
    conventions.insert(
        "signature.stability".into(),
        match opts.stability_axis {
            StabilityAxis::StayProbability => "mean stay probability over players and games",
            StabilityAxis::OneMinusSwitchRate => "one minus mean switching proportion",
        }
        .into(),
    );
    conventions.insert(
        "signature.dispersion".into(),
        "mean over games of the population sd of per-player stay probabilities".into(),
    );
    conventions.insert(
        "bootstrap".into(),
        match opts.ci_method {
            CiMethod::Percentile => "percentile interval of resampled means",
            CiMethod::ExpandedPercentile => "expanded percentile interval of resampled means",
        }
        .into(),
    );
    conventions.insert("reaction".into(), "OLS with intercept, numerical games only".into());
    let (dh, sh) = if want(Section::Hist) {
        let (a, b) = histograms(logs);
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        bootstrap_seed: opts.bootstrap_seed,
        bootstrap_iterations: opts.bootstrap_iterations,
        ci_level: opts.ci_level,
        ci_method: opts.ci_method,
        conventions,
        rounds_table: want(Section::Rounds).then(|| rounds_table(logs)),
        learning_slopes: want(Section::Slopes).then(|| learning_slopes(logs, opts)),
        reaction_slopes: want(Section::Reaction).then(|| reaction_slopes(logs)),
        switching_profile: want(Section::Switching).then(|| switching_profile(logs)),
        stay_stats: want(Section::Stay).then(|| stay_statistics(logs)),
        signature_points: want(Section::Signature)
            .then(|| coordination_signature(logs, opts.stability_axis)),
        decision_hist: dh,
        switch_magnitude_hist: sh,
    })
}

fn csv_file(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>, AnalyticsError> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

fn f(x: f64) -> String {
    format!("{x:.4}")
}

/// Writes `report.json`, the CSV tables and the plot-point files into `dir`.
/// Returns the file names written.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<Vec<String>, AnalyticsError> {
    std::fs::create_dir_all(dir)?;
    let mut written = vec!["report.json".to_string()];
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    std::fs::File::create(dir.join("report.json"))?.write_all(json.as_bytes())?;

    if let Some(cells) = &report.rounds_table {
        let mut w = csv_file(dir, "rounds_table.csv")?;
        w.write_record(["condition", "size", "feedback", "mean", "sd", "sd_across_games", "runs", "games", "low_sample"])?;
        for c in cells {
            w.write_record([
                c.condition.clone(),
                c.size_category.as_str().into(),
                c.feedback_mode.as_str().into(),
                f(c.mean),
                f(c.sd),
                f(c.sd_across_games),
                c.run_count.to_string(),
                c.game_count.to_string(),
                c.low_sample.to_string(),
            ])?;
        }
        w.flush()?;
        written.push("rounds_table.csv".into());

        // condition rows, size x feedback columns, "mean (sd)" cells
        let columns: Vec<(SizeCategory, FeedbackMode)> = [SizeCategory::Small, SizeCategory::Medium, SizeCategory::Large]
            .into_iter()
            .flat_map(|s| [FeedbackMode::Directional, FeedbackMode::Numerical].map(|m| (s, m)))
            .collect();
        let mut rows: BTreeMap<&str, BTreeMap<(SizeCategory, FeedbackMode), &RoundsCell>> = BTreeMap::new();
        for c in cells {
            rows.entry(&c.condition).or_default().insert((c.size_category, c.feedback_mode), c);
        }
        let mut w = csv_file(dir, "rounds_table_wide.csv")?;
        let mut header = vec!["condition".to_string()];
        header.extend(columns.iter().map(|(s, m)| format!("{}/{}", s.as_str(), m.as_str())));
        w.write_record(&header)?;
        for (cond, by) in rows {
            let mut rec = vec![cond.to_string()];
            for col in &columns {
                rec.push(match by.get(col) {
                    Some(c) if c.low_sample => format!("{:.2} ({:.2})*", c.mean, c.sd),
                    Some(c) => format!("{:.2} ({:.2})", c.mean, c.sd),
                    None => "-".into(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        written.push("rounds_table_wide.csv".into());
    }

    if let Some(rows) = &report.learning_slopes {
        let mut w = csv_file(dir, "learning_slopes.csv")?;
        w.write_record(["condition", "feedback", "runs", "mean_slope", "ci_low", "ci_high", "pct_negative"])?;
        for r in rows {
            w.write_record([
                r.condition.clone(),
                r.feedback_mode.as_str().into(),
                r.run_count.to_string(),
                f(r.mean_slope),
                f(r.ci_low),
                f(r.ci_high),
                format!("{:.1}", 100.0 * r.pct_negative),
            ])?;
        }
        w.flush()?;
        written.push("learning_slopes.csv".into());
    }

    if let Some(rows) = &report.reaction_slopes {
        let mut w = csv_file(dir, "reaction_slopes.csv")?;
        w.write_record(["condition", "size", "slope", "intercept", "points"])?;
        let mut p = csv_file(dir, "reaction_points.csv")?;
        p.write_record(["condition", "size", "error", "reaction"])?;
        for r in rows {
            let size = r.size_category.map_or("all", |s| s.as_str());
            w.write_record([
                r.condition.clone(),
                size.into(),
                r.slope.map(f).unwrap_or_default(),
                r.intercept.map(f).unwrap_or_default(),
                r.n_points.to_string(),
            ])?;
            if r.size_category.is_some() {
                for (x, y) in &r.points {
                    p.write_record([r.condition.clone(), size.into(), x.to_string(), y.to_string()])?;
                }
            }
        }
        w.flush()?;
        p.flush()?;
        written.push("reaction_slopes.csv".into());
        written.push("reaction_points.csv".into());
    }

    if let Some(rows) = &report.switching_profile {
        let mut w = csv_file(dir, "switching_profile.csv")?;
        w.write_record(["condition", "size", "feedback", "rounds_before_end", "mean", "sd", "games"])?;
        for r in rows {
            for pt in &r.profile {
                w.write_record([
                    r.condition.clone(),
                    r.size_category.as_str().into(),
                    r.feedback_mode.as_str().into(),
                    pt.rounds_before_end.to_string(),
                    f(pt.mean),
                    f(pt.sd),
                    pt.n_games.to_string(),
                ])?;
            }
        }
        w.flush()?;
        written.push("switching_profile.csv".into());
    }

    if let Some(stay) = &report.stay_stats {
        let mut w = csv_file(dir, "stay_probabilities.csv")?;
        w.write_record(["condition", "session_id", "size", "feedback", "game_index", "agent_id", "stay_probability"])?;
        for r in &stay.per_player_game {
            w.write_record([
                r.condition.clone(),
                r.session_id.clone(),
                r.size_category.as_str().into(),
                r.feedback_mode.as_str().into(),
                r.game_index.to_string(),
                r.agent_id.clone(),
                f(r.stay_probability),
            ])?;
        }
        w.flush()?;
        let mut w = csv_file(dir, "stay_extremes.csv")?;
        w.write_record(["condition", "size", "feedback", "p0", "p0_se", "p1", "p1_se", "player_games", "runs"])?;
        for r in &stay.extremes {
            w.write_record([
                r.condition.clone(),
                r.size_category.as_str().into(),
                r.feedback_mode.as_str().into(),
                f(r.prop_always_switch),
                f(r.se_always_switch),
                f(r.prop_always_stay),
                f(r.se_always_stay),
                r.player_games.to_string(),
                r.run_count.to_string(),
            ])?;
        }
        w.flush()?;
        written.push("stay_probabilities.csv".into());
        written.push("stay_extremes.csv".into());
    }

    if let Some(rows) = &report.signature_points {
        let mut w = csv_file(dir, "signature.csv")?;
        w.write_record(["condition", "size", "feedback", "stability", "dispersion", "stability_sd", "dispersion_sd", "games"])?;
        for r in rows {
            w.write_record([
                r.condition.clone(),
                r.size_category.as_str().into(),
                r.feedback_mode.as_str().into(),
                f(r.stability),
                f(r.dispersion),
                f(r.stability_sd),
                f(r.dispersion_sd),
                r.game_count.to_string(),
            ])?;
        }
        w.flush()?;
        written.push("signature.csv".into());
    }

    for (name, hists) in [
        ("decision_hist.csv", &report.decision_hist),
        ("switch_magnitude_hist.csv", &report.switch_magnitude_hist),
    ] {
        let Some(hists) = hists else { continue };
        let mut w = csv_file(dir, name)?;
        w.write_record(["condition", "feedback", "bin", "count"])?;
        for h in hists {
            for (bin, count) in &h.counts {
                w.write_record([
                    h.condition.clone(),
                    h.feedback_mode.as_str().into(),
                    bin.to_string(),
                    count.to_string(),
                ])?;
            }
        }
        w.flush()?;
        written.push(name.into());
    }
    Ok(written)
}
