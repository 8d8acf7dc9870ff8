//! Print the chat transcript an LLM player receives in round 2 of game 1.

use gbs_core::policy::{ObservedFeedback, ObservedRound};
use gbs_core::prompts::build_messages;
use gbs_core::{Direction, FeedbackMode, GameConfig, Observation, PromptVariant};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GameConfig::standard(3, FeedbackMode::Numerical);
    let mut obs = Observation::new(1, 3, 10);
    obs.start_game(1, FeedbackMode::Numerical);
    obs.record_round(ObservedRound {
        own_guess: 25,
        raw_text: Some("The range is wide, so I start in the middle. {\"chosen_number\": 25}".into()),
        feedback: ObservedFeedback {
            direction: Direction::TooLow,
            magnitude: Some(34),
            group_sum: None,
            text: "In the previous round your choice was 25 and the total sum of guesses by all players was too low by 34.".into(),
        },
    });
    for m in build_messages(PromptVariant::ZeroShotCot, &obs, &cfg) {
        println!("--- {:?}\n{}", m.role, m.content);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
