//! A ten-game session with a mix of scripted players.

use gbs_core::orchestrator::{DefaultFactory, NoopObserver, RunOptions};
use gbs_core::{run_session, AgentSpec, SessionConfig};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let agents = vec![
        AgentSpec::scripted("A", "oracle"),
        AgentSpec::scripted("B", "stay_prone").with_param("p", 0.5),
        AgentSpec::scripted("C", "bisection_follower"),
    ];
    let config = SessionConfig::new("demo-3p", agents, 2025);
    let log = run_session(&config, &DefaultFactory::new(), &RunOptions::default(), &mut NoopObserver)
        .map_err(|f| f.error)?;

    for g in &log.games {
        println!(
            "game {:>2} {:<11} target {:>3}: {:?} in {} rounds",
            g.game_index,
            g.feedback_mode.as_str(),
            g.target,
            g.status,
            g.rounds.len()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
