//! Drive the game engine by hand: one directional game between two players.

use gbs_core::game::{render_feedback, GameState, Guess};
use gbs_core::{AgentId, FeedbackMode, GameConfig};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GameConfig::standard(2, FeedbackMode::Directional);
    let roster = vec![AgentId::new("A"), AgentId::new("B")];
    let mut game = GameState::new(cfg.clone(), roster.clone(), 77)?;

    // both players bisect their own half of the target range
    let (mut lo, mut hi) = (cfg.target_min, cfg.target_max);
    while !game.status.is_terminal() {
        let sum = (lo + hi) / 2;
        let guesses = [sum / 2, sum - sum / 2];
        let fb = game.resolve_round(&[
            Guess { agent: roster[0].clone(), value: guesses[0] },
            Guess { agent: roster[1].clone(), value: guesses[1] },
        ])?;
        println!("round {:>2}: {:?} -> {}", game.rounds.len(), guesses, render_feedback(&fb, &cfg, guesses[0]));
        match fb.direction {
            gbs_core::Direction::TooLow => lo = sum + 1,
            gbs_core::Direction::TooHigh => hi = sum - 1,
            gbs_core::Direction::JustRight => {}
        }
    }
    println!("{:?} after {} rounds", game.status, game.rounds_to_solution().unwrap());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
