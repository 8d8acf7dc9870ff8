#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use gbs_core::gateway::{
    Cassette, CassetteMode, CompletionRequest, FnTransport, Gateway, GatewayRegistry, Transport,
    TransportResponse,
};
use gbs_core::orchestrator::{run_session, DefaultFactory, NoopObserver, RunOptions};
use gbs_core::{AgentSpec, PromptVariant, SessionConfig, SessionLog};

/// Offline stand-in for a chat model: the answer is a function of the request
/// fingerprint. Every tenth answer is prose without JSON.
pub fn simulated_model() -> Arc<dyn Transport> {
    Arc::new(FnTransport(|req: &CompletionRequest| {
        let fp = req.fingerprint();
        let h = u64::from_str_radix(&fp[..16], 16).unwrap();
        let text = if h % 10 == 0 {
            "I think something in the middle is best.".to_string()
        } else {
            format!("Reasoning about the feedback... {{\"chosen_number\": {}}}", h % 51)
        };
        Ok(TransportResponse::text(text))
    }))
}

pub fn two_llm_session(id: &str, seed: u64) -> SessionConfig {
    let agents = vec![
        AgentSpec::llm("A", "sim-zs", PromptVariant::ZeroShot).with_temperature(0.6),
        AgentSpec::llm("B", "sim-cot", PromptVariant::ZeroShotCot).with_temperature(0.6),
    ];
    let mut cfg = SessionConfig::new(id, agents, seed);
    cfg.condition = "simulated".into();
    cfg
}

fn registry(gateway: Gateway) -> GatewayRegistry {
    let mut reg = GatewayRegistry::new();
    reg.set_fallback(Arc::new(gateway));
    reg
}

/// Runs `config` with every completion answered by `transport`.
pub fn run_with(config: &SessionConfig, transport: Arc<dyn Transport>) -> SessionLog {
    let factory = DefaultFactory::with_gateways(registry(Gateway::new(transport)));
    run_session(config, &factory, &RunOptions::default(), &mut NoopObserver).unwrap()
}

/// Runs `config` against the simulated model and records every completion.
pub fn record(config: &SessionConfig, cassette: &Path) -> SessionLog {
    let c = Arc::new(Cassette::open_record(cassette).unwrap());
    let gw = Gateway::new(simulated_model()).with_cassette(CassetteMode::Record, c);
    let factory = DefaultFactory::with_gateways(registry(gw));
    run_session(config, &factory, &RunOptions::default(), &mut NoopObserver).unwrap()
}

/// Runs `config` with completions served only from `cassette`.
pub fn replay_from(config: &SessionConfig, cassette: &Path) -> Result<SessionLog, String> {
    let c = Arc::new(Cassette::open_replay(cassette).map_err(|e| e.to_string())?);
    let factory = DefaultFactory::with_gateways(registry(Gateway::replay_only(c)));
    run_session(config, &factory, &RunOptions::default(), &mut NoopObserver).map_err(|f| f.error.to_string())
}
