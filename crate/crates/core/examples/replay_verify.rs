//! Verify a log by re-driving it through the engine, then show what a
//! tampered log reports.

use gbs_core::orchestrator::{DefaultFactory, NoopObserver, RunOptions};
use gbs_core::replay::verify;
use gbs_core::{run_session, AgentSpec, SessionConfig};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let agents = vec![AgentSpec::scripted("A", "oracle"), AgentSpec::scripted("B", "uniform_random")];
    let config = SessionConfig::new("verify-2p", agents, 4);
    let mut log = run_session(&config, &DefaultFactory::new(), &RunOptions::default(), &mut NoopObserver)
        .map_err(|f| f.error)?;
    println!("original: {}", verify(&log));

    let game = log.games.iter_mut().find(|g| g.rounds.len() > 2).expect("a multi-round game");
    game.rounds[2].guesses[1] = (game.rounds[2].guesses[1] + 7) % 51;
    println!("tampered: {}", verify(&log));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
