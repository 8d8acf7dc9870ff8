//! Host a lobby in-process and play the human seat over HTTP against an
//! oracle agent, then fetch and verify the session log.

use std::time::Duration;

use gbs_core::datastore::read_session;
use gbs_core::replay::verify;
use gbs_live::{serve_on, LobbyCreated, LobbyState, Phase, RoundView, ServiceConfig};
use serde_json::{json, Value};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Bisection on the player's own guess, restarted every game.
fn next_guess(view: &RoundView) -> i64 {
    let (mut lo, mut hi) = (view.guess_min, view.guess_max);
    for h in view.history.iter().filter(|h| h.game_index == view.game_index) {
        if h.feedback.contains("too low") {
            lo = (h.own_guess + 1).min(hi);
        } else if h.feedback.contains("too high") {
            hi = (h.own_guess - 1).max(lo);
        }
    }
    (lo + hi + 1) / 2
}

pub async fn run() -> Result<(), BoxError> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve_on(listener, ServiceConfig::default()));
    let http = reqwest::Client::new();

    let lobby: LobbyCreated = http
        .post(format!("{base}/lobbies"))
        .json(&json!({
            "agents": [
                { "agent_id": "H", "kind": "human" },
                { "agent_id": "O", "kind": "scripted", "policy": "oracle" },
            ],
            "base_seed": 11,
        }))
        .send()
        .await?
        .json()
        .await?;
    let id = &lobby.lobby_id;
    let joined: Value = http
        .post(format!("{base}/lobbies/{id}/join"))
        .json(&json!({ "code": lobby.join_links[0].code }))
        .send()
        .await?
        .json()
        .await?;
    let token = joined["token"].as_str().ok_or("no token")?.to_string();
    println!("joined lobby {id} as H");

    loop {
        let view: RoundView =
            http.get(format!("{base}/lobbies/{id}/view")).bearer_auth(&token).send().await?.json().await?;
        match (view.lobby_state, view.phase) {
            (LobbyState::Finished, _) => break,
            (LobbyState::Failed, _) => return Err("session failed".into()),
            (_, Some(Phase::AwaitingGuess)) => {
                let guess = next_guess(&view);
                http.post(format!("{base}/lobbies/{id}/guess"))
                    .bearer_auth(&token)
                    .json(&json!({ "game_index": view.game_index, "round_index": view.round_index, "guess": guess }))
                    .send()
                    .await?
                    .error_for_status()?;
            }
            _ => tokio::time::sleep(Duration::from_millis(10)).await,
        }
    }

    let text = http.get(format!("{base}/lobbies/{id}/log")).bearer_auth(&token).send().await?.text().await?;
    let log = read_session(text.as_bytes(), "live")?;
    for g in &log.games {
        println!("game {:>2} {:<11} {:?} in {} rounds", g.game_index, g.feedback_mode.as_str(), g.status, g.rounds.len());
    }
    println!("replay: {}", verify(&log));
    Ok(())
}

#[allow(dead_code)]
#[tokio::main]
async fn main() -> Result<(), BoxError> {
    run().await
}
