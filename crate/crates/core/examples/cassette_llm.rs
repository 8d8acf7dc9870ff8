//! LLM players without a network: record completions from a stand-in model
//! into a cassette, then replay the session from the cassette alone.

use std::sync::Arc;

use gbs_core::gateway::{
    Cassette, CassetteMode, CompletionRequest, FnTransport, Gateway, GatewayRegistry, TransportResponse,
};
use gbs_core::orchestrator::{DefaultFactory, NoopObserver, RunOptions};
use gbs_core::{run_session, AgentSpec, PromptVariant, SessionConfig};

/// Deterministic stand-in: the answer depends only on how many rounds the
/// transcript has asked about so far.
fn stand_in(req: &CompletionRequest) -> Result<TransportResponse, gbs_core::gateway::TransportError> {
    let asked = req.messages.iter().filter(|m| m.content.contains("This is Game")).count() as u64;
    Ok(TransportResponse::text(format!("{{\"chosen_number\": {}}}", 20 + asked % 25)))
}

fn factory(gateway: Gateway) -> DefaultFactory {
    let mut reg = GatewayRegistry::new();
    reg.set_fallback(Arc::new(gateway));
    DefaultFactory::with_gateways(reg)
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = example_dir();
    let path = dir.join("cassette.jsonl");
    let _ = std::fs::remove_file(&path);
    let agents = vec![
        AgentSpec::llm("A", "stand-in", PromptVariant::ZeroShot).with_temperature(0.6),
        AgentSpec::llm("B", "stand-in", PromptVariant::ZeroShotCot).with_temperature(0.6),
    ];
    let config = SessionConfig::new("cassette-2p", agents, 9);

    let recorder = Gateway::new(Arc::new(FnTransport(stand_in)))
        .with_cassette(CassetteMode::Record, Arc::new(Cassette::open_record(&path)?));
    let recorded = run_session(&config, &factory(recorder), &RunOptions::default(), &mut NoopObserver)
        .map_err(|f| f.error)?;

    let replayer = Gateway::replay_only(Arc::new(Cassette::open_replay(&path)?));
    let replayed = run_session(&config, &factory(replayer), &RunOptions::default(), &mut NoopObserver)
        .map_err(|f| f.error)?;

    let calls: usize = recorded.games.iter().map(|g| g.rounds.len() * 2).sum();
    println!("recorded {calls} completions to {}", path.display());
    println!("offline replay identical: {}", recorded.to_jsonl() == replayed.to_jsonl());
    Ok(())
}

fn example_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join("gbs-cassette-example");
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
