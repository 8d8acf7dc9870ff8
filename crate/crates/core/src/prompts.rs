//! Chat transcripts for LLM players and extraction of their answers.
//!
//! The transcript is rebuilt from the [`Observation`] on every decision: one
//! system prompt, then alternating user feedback turns and assistant turns for
//! every round played so far in the session (all previous games included).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{player_letter, GameConfig};
use crate::gateway::ChatMessage;
use crate::policy::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    #[default]
    ZeroShot,
    ZeroShotCot,
    ZeroShotStrategySum,
}

impl PromptVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ZeroShot => "zero_shot",
            Self::ZeroShotCot => "zero_shot_cot",
            Self::ZeroShotStrategySum => "zero_shot_strategy_sum",
        }
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_shot" | "zero-shot" => Ok(Self::ZeroShot),
            "zero_shot_cot" | "zero-shot-cot" => Ok(Self::ZeroShotCot),
            "zero_shot_strategy_sum" | "zero-shot-strategy-sum" => Ok(Self::ZeroShotStrategySum),
            other => Err(PromptError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("unknown prompt variant `{0}`")]
    UnknownVariant(String),
}

pub const COT_TRIGGER: &str = "Let's think step by step:";

const STRATEGY: &str = "It will help if you try, over successive rounds of play, to develop a consistent role in terms of how much you react to the feedback, while also trying to make your role unique compared to others in your group. For example, if you think that others in your group are reacting too much to the feedback (your group often guesses numbers that are too high and then too low), then you would want to react less. If others are reacting too little to the feedback (your group is always guessing number that are too high, or always guessing numbers that are too low) then you would want to react more.";

/// `"B"`, `"players B and C"`-style list of the other seats.
fn partner_phrase(agent_index: usize, n_players: usize) -> String {
    let others: Vec<String> = (0..n_players)
        .filter(|&i| i != agent_index)
        .map(player_letter)
        .collect();
    match others.as_slice() {
        [] => "no other players".to_string(),
        [one] => format!("player {one}"),
        [a, b] => format!("players {a} and {b}"),
        [init @ .., last] => format!("players {}, and {last}", init.join(", ")),
    }
}

pub fn system_prompt(
    variant: PromptVariant,
    agent_index: usize,
    game_count: u32,
    config: &GameConfig,
) -> String {
    let me = player_letter(agent_index);
    let partners = partner_phrase(agent_index, config.n_players);
    let (tmin, tmax) = (config.target_min, config.target_max);
    let mut s = format!(
        "You will now play a game with a group of players. You are player {me}, and you will be playing with {partners}. \
You will play {game_count} games, where each game contains {rounds} rounds after which the game ends. \
Each game will have a different mystery number between {tmin} and {tmax}. \
In each round, each player submits their own number. \
All of the players' numbers are summed together and compared to the mystery number that has a value between {tmin} and {tmax}. \
All of the players are given identical feedback on whether their group's total sum was too low, too high, or just right, and each player decides for themselves whether and how to adjust their number for the next round. \
Your goal as a member of the group is to help the group converge to the mystery number as soon as possible in each game. \
You will be provided the guesses made by you in the all the previous rounds and the total sum of the group for the respective rounds. ",
        rounds = config.max_rounds,
    );
    if variant == PromptVariant::ZeroShotStrategySum {
        s.push_str(STRATEGY);
        s.push(' ');
    }
    s.push_str(&format!(
        "Provide the chosen integer between {} and {}.",
        config.guess_min, config.guess_max
    ));
    s
}

/// JSON schema of the expected answer.
pub fn output_schema(config: &GameConfig) -> String {
    format!(
        "{{\"description\": \"The player's chosen number for the guessing game.\", \"properties\": {{\"chosen_number\": {{\"description\": \"The player's chosen number for the next round (between {} and {})\", \"title\": \"Chosen Number\", \"type\": \"integer\"}}}}, \"required\": [\"chosen_number\"]}}",
        config.guess_min, config.guess_max
    )
}

pub fn format_instructions(config: &GameConfig) -> String {
    format!(
        "The output should be formatted as a JSON instance that conforms to the JSON schema below.\n\n\
As an example, for the schema {{\"properties\": {{\"foo\": {{\"title\": \"Foo\", \"description\": \"a list of strings\", \"type\": \"array\", \"items\": {{\"type\": \"string\"}}}}}}, \"required\": [\"foo\"]}}\n\
the object {{\"foo\": [\"bar\", \"baz\"]}} is a well-formatted instance of the schema. The object {{\"properties\": {{\"foo\": [\"bar\", \"baz\"]}}}} is not well-formatted.\n\n\
Here is the output schema:\n```\n{}\n```",
        output_schema(config)
    )
}

fn round_request(
    previous_feedback: Option<&str>,
    game_index: u32,
    round_index: u32,
    config: &GameConfig,
) -> String {
    let mut s = String::new();
    if let Some(fb) = previous_feedback {
        s.push_str(fb);
        s.push(' ');
    }
    if round_index == 1 {
        s.push_str(&format!(
            "This is Game {game_index} Round 1. There is no history yet. Please provide your answer in the specified format. "
        ));
    } else {
        s.push_str(&format!(
            "This is Game {game_index} Round {round_index}. You need to choose a number to help your group converge to the mystery number. Provide your answer in the specified format. "
        ));
    }
    s.push_str(&format_instructions(config));
    s
}

/// The minimal assistant turn carrying only the guess.
pub fn compact_choice(guess: i64) -> String {
    format!("{{\"chosen_number\":{guess}}}")
}

/// Full transcript for the decision described by `obs`.
///
/// Feedback of the last round of a game is carried into the first user turn of
/// the next game. Under [`PromptVariant::ZeroShotCot`] earlier assistant turns
/// are reduced to [`compact_choice`] and the transcript ends with an assistant
/// turn holding [`COT_TRIGGER`].
pub fn build_messages(
    variant: PromptVariant,
    obs: &Observation,
    config: &GameConfig,
) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::system(system_prompt(
        variant,
        obs.agent_index,
        obs.game_count,
        config,
    ))];
    let mut pending_feedback: Option<&str> = None;
    for game in &obs.games {
        for (i, round) in game.rounds.iter().enumerate() {
            out.push(ChatMessage::user(round_request(
                pending_feedback,
                game.game_index,
                i as u32 + 1,
                config,
            )));
            let assistant = match (variant, round.raw_text.as_deref()) {
                (PromptVariant::ZeroShotCot, _) | (_, None) => compact_choice(round.own_guess),
                (_, Some(raw)) => raw.to_string(),
            };
            out.push(ChatMessage::assistant(assistant));
            pending_feedback = Some(round.feedback.text.as_str());
        }
    }
    out.push(ChatMessage::user(round_request(
        pending_feedback,
        obs.game_index,
        obs.round_index,
        config,
    )));
    if variant == PromptVariant::ZeroShotCot {
        out.push(ChatMessage::assistant(COT_TRIGGER));
    }
    out
}

/// One-line nudge appended after an unusable answer.
pub fn format_reminder(config: &GameConfig) -> String {
    format!(
        "Your previous answer could not be used. Reply with a JSON object of the form {{\"chosen_number\": <integer between {} and {}>}}.",
        config.guess_min, config.guess_max
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("no JSON object with a `chosen_number` key")]
    NoJsonFound,
    #[error("`chosen_number` is not an integer: {0}")]
    NotAnInteger(String),
    #[error("chosen number {0} is out of range")]
    OutOfRange(i64),
}

/// Last well-formed JSON object in `raw` that has a `chosen_number` key.
pub fn parse_choice(raw: &str, config: &GameConfig) -> Result<i64, ParseFailure> {
    let mut last: Option<serde_json::Value> = None;
    for (pos, _) in raw.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = stream.next() {
            if let Some(v) = map.get("chosen_number") {
                last = Some(v.clone());
            }
        }
    }
    let value = last.ok_or(ParseFailure::NoJsonFound)?;
    let n = match &value {
        serde_json::Value::Number(n) => n
            .as_i64()
            .or_else(|| {
                n.as_f64()
                    .filter(|f| f.fract() == 0.0 && f.abs() < 1e15)
                    .map(|f| f as i64)
            })
            .ok_or_else(|| ParseFailure::NotAnInteger(value.to_string()))?,
        _ => return Err(ParseFailure::NotAnInteger(value.to_string())),
    };
    if config.guess_in_range(n) {
        Ok(n)
    } else {
        Err(ParseFailure::OutOfRange(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::FeedbackMode;

    fn cfg() -> GameConfig {
        GameConfig::standard(2, FeedbackMode::Directional)
    }

    #[test]
    fn parses_fenced_json() {
        assert_eq!(
            parse_choice("```json\n{\"chosen_number\": 25}\n```", &cfg()),
            Ok(25)
        );
    }

    #[test]
    fn parses_trailing_object_after_prose() {
        let raw = "Previously I picked {\"chosen_number\": 12} but now... {\"chosen_number\": 30}";
        assert_eq!(parse_choice(raw, &cfg()), Ok(30));
    }

    #[test]
    fn out_of_range() {
        assert_eq!(
            parse_choice("{\"chosen_number\": 75}", &cfg()),
            Err(ParseFailure::OutOfRange(75))
        );
    }

    #[test]
    fn failures() {
        assert_eq!(
            parse_choice("I pick 25", &cfg()),
            Err(ParseFailure::NoJsonFound)
        );
        assert!(matches!(
            parse_choice("{\"chosen_number\": \"25\"}", &cfg()),
            Err(ParseFailure::NotAnInteger(_))
        ));
        assert!(matches!(
            parse_choice("{\"chosen_number\": 2.5}", &cfg()),
            Err(ParseFailure::NotAnInteger(_))
        ));
        assert_eq!(parse_choice("{\"chosen_number\": 20.0}", &cfg()), Ok(20));
        assert_eq!(
            parse_choice("{\"chosen_number\": 25", &cfg()),
            Err(ParseFailure::NoJsonFound)
        );
    }

    #[test]
    fn compact_round_trips() {
        for g in 0..=50 {
            assert_eq!(parse_choice(&compact_choice(g), &cfg()), Ok(g));
        }
    }

    #[test]
    fn partners() {
        assert_eq!(partner_phrase(0, 2), "player B");
        assert_eq!(partner_phrase(1, 2), "player A");
        assert_eq!(partner_phrase(0, 3), "players B and C");
        assert_eq!(partner_phrase(2, 4), "players A, B, and D");
    }

    #[test]
    fn variant_names() {
        assert_eq!("zero_shot_cot".parse(), Ok(PromptVariant::ZeroShotCot));
        assert!(matches!(
            "few_shot".parse::<PromptVariant>(),
            Err(PromptError::UnknownVariant(_))
        ));
    }
}
