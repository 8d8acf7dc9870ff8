use std::time::Duration;

use futures::StreamExt;
use gbs_core::datastore::read_session;
use gbs_core::replay::verify;
use gbs_live::{serve_on, Event, EventKind, LobbyCreated, ServiceConfig};
use serde_json::{json, Value};

async fn start(config: ServiceConfig) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_on(listener, config));
    format!("http://{addr}")
}

fn human(id: &str) -> Value {
    json!({ "agent_id": id, "kind": "human" })
}

fn oracle(id: &str) -> Value {
    json!({ "agent_id": id, "kind": "scripted", "policy": "oracle" })
}

async fn create(base: &str, body: Value) -> reqwest::Response {
    reqwest::Client::new().post(format!("{base}/lobbies")).json(&body).send().await.unwrap()
}

async fn join(base: &str, lobby: &LobbyCreated, seat: usize) -> String {
    let r: Value = reqwest::Client::new()
        .post(format!("{base}/lobbies/{}/join", lobby.lobby_id))
        .json(&json!({ "code": lobby.join_links[seat].code }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    r["token"].as_str().unwrap().to_string()
}

async fn submit(base: &str, lobby: &str, token: &str, game: u32, round: u32, guess: i64) -> (u16, Value) {
    let r = reqwest::Client::new()
        .post(format!("{base}/lobbies/{lobby}/guess"))
        .bearer_auth(token)
        .json(&json!({ "game_index": game, "round_index": round, "guess": guess }))
        .send()
        .await
        .unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

/// Reads SSE frames into events until `stop` says so.
async fn read_events(url: String, stop: impl Fn(&Event) -> bool) -> Vec<Event> {
    let resp = reqwest::get(url).await.unwrap();
    assert_eq!(resp.status(), 200);
    let mut body = resp.bytes_stream();
    let mut buf = String::new();
    let mut out = Vec::new();
    while let Some(chunk) = body.next().await {
        buf.push_str(std::str::from_utf8(&chunk.unwrap()).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            if let Some(data) = frame.lines().find_map(|l| l.strip_prefix("data: ")) {
                let e: Event = serde_json::from_str(data).unwrap();
                let halt = stop(&e);
                out.push(e);
                if halt {
                    return out;
                }
            }
        }
    }
    out
}

#[tokio::test]
async fn template_without_humans_is_rejected() {
    let base = start(ServiceConfig::default()).await;
    let r = create(&base, json!({ "agents": [oracle("A"), oracle("B")] })).await;
    assert_eq!(r.status(), 400);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"], "InvalidTemplate");
}

#[tokio::test]
async fn mixed_template_has_one_link_and_two_agent_seats() {
    let base = start(ServiceConfig::default()).await;
    let r = create(&base, json!({ "agents": [human("H"), oracle("A"), oracle("B")] })).await;
    assert_eq!(r.status(), 201);
    let lobby: LobbyCreated = r.json().await.unwrap();
    assert_eq!(lobby.join_links.len(), 1);
    assert_eq!(lobby.agent_seats.len(), 2);
    assert_eq!(lobby.round_timeout_ms, 60_000);
}

#[tokio::test]
async fn full_session_against_oracle_replays() {
    let base = start(ServiceConfig::default()).await;
    let targets: Vec<i64> = vec![60, 84, 77, 51, 100, 92, 65, 70, 88, 99];
    let lobby: LobbyCreated = create(
        &base,
        json!({ "agents": [human("H"), oracle("O")], "targets": targets, "round_timeout_secs": 0 }),
    )
    .await
    .json()
    .await
    .unwrap();
    let token = join(&base, &lobby, 0).await;
    let id = lobby.lobby_id.clone();

    let url = format!("{base}/lobbies/{id}/events?token={token}");
    let reader = tokio::spawn(read_events(url, |e| matches!(e.kind, EventKind::SessionOver { .. })));

    // the person: bisection on their own guess, never below 0 or above 50
    let client = reqwest::Client::new();
    let mut seen = 0;
    let (mut lo, mut hi) = (0, 50);
    loop {
        let (events, _) = poll_events(&client, &base, &id, &token, seen).await;
        for e in &events {
            seen = e.seq;
            match &e.kind {
                EventKind::RoundStarted { game_index, round_index, .. } => {
                    if *round_index == 1 {
                        (lo, hi) = (0, 50);
                    }
                    let g = (lo + hi + 1) / 2;
                    // a rejected guess leaves the seat free to submit again
                    let (status, body) = submit(&base, &id, &token, *game_index, *round_index, 51).await;
                    assert_eq!(status, 422, "{body}");
                    assert_eq!(body["error"], "OutOfRange");
                    let (status, body) = submit(&base, &id, &token, *game_index, *round_index, g).await;
                    assert_eq!(status, 200, "{body}");
                }
                EventKind::FeedbackReady { own_guess, feedback, .. } => {
                    if feedback.contains("too low") {
                        lo = (*own_guess + 1).min(50);
                    } else if feedback.contains("too high") {
                        hi = (*own_guess - 1).max(0);
                    }
                    lo = lo.min(hi);
                }
                _ => {}
            }
        }
        if events.iter().any(|e| matches!(e.kind, EventKind::SessionOver { .. })) {
            break;
        }
    }

    let streamed = tokio::time::timeout(Duration::from_secs(10), reader).await.unwrap().unwrap();
    for (i, e) in streamed.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }
    let EventKind::SessionOver { ok } = streamed.last().unwrap().kind else { panic!() };
    assert!(ok);

    let text = client
        .get(format!("{base}/lobbies/{id}/log"))
        .bearer_auth(&token)
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let log = read_session(text.as_bytes(), "live").unwrap();
    assert_eq!(log.games.len(), 10);
    assert!(verify(&log).passed());
    assert!(!text.contains("\"O\",\"guess\""));

    // displayed feedback equals the logged rendering for the human seat
    let shown: Vec<&String> = streamed
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::FeedbackReady { feedback, .. } => Some(feedback),
            _ => None,
        })
        .collect();
    let logged: Vec<&String> = log.games.iter().flat_map(|g| g.rounds.iter().map(|r| &r.rendered[0])).collect();
    assert_eq!(shown, logged);

    // a round's events: start, feedback, and game over after the last one
    let kinds: Vec<&str> = streamed
        .iter()
        .take(4)
        .map(|e| match e.kind {
            EventKind::SessionStarted { .. } => "session",
            EventKind::RoundStarted { .. } => "start",
            EventKind::FeedbackReady { .. } => "feedback",
            EventKind::GameOver { .. } => "over",
            EventKind::SessionOver { .. } => "end",
        })
        .collect();
    assert_eq!(kinds[..3], ["session", "start", "feedback"]);
}

async fn poll_events(
    client: &reqwest::Client,
    base: &str,
    id: &str,
    token: &str,
    after: u64,
) -> (Vec<Event>, bool) {
    // resume with Last-Event-ID and read whatever is already queued
    let resp = client
        .get(format!("{base}/lobbies/{id}/events"))
        .bearer_auth(token)
        .header("Last-Event-ID", after.to_string())
        .send()
        .await
        .unwrap();
    let mut body = resp.bytes_stream();
    let mut buf = String::new();
    let mut out = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    loop {
        let next = tokio::time::timeout(Duration::from_millis(150), body.next()).await;
        match next {
            Ok(Some(chunk)) => buf.push_str(std::str::from_utf8(&chunk.unwrap()).unwrap()),
            Ok(None) => return (out, true),
            Err(_) if !out.is_empty() => return (out, false),
            Err(_) => assert!(tokio::time::Instant::now() < deadline, "no events"),
        }
        while let Some(end) = buf.find("\n\n") {
            let frame: String = buf.drain(..end + 2).collect();
            if let Some(data) = frame.lines().find_map(|l| l.strip_prefix("data: ")) {
                out.push(serde_json::from_str(data).unwrap());
            }
        }
    }
}

#[tokio::test]
async fn duplicate_submission_and_resume() {
    let base = start(ServiceConfig::default()).await;
    let lobby: LobbyCreated =
        create(&base, json!({ "agents": [human("H1"), human("H2")], "round_timeout_secs": 0 }))
            .await
            .json()
            .await
            .unwrap();
    let t1 = join(&base, &lobby, 0).await;
    let t2 = join(&base, &lobby, 1).await;
    let id = &lobby.lobby_id;
    let client = reqwest::Client::new();

    let (events, _) = poll_events(&client, &base, id, &t1, 0).await;
    assert!(matches!(events.last().unwrap().kind, EventKind::RoundStarted { game_index: 1, round_index: 1, .. }));

    assert_eq!(submit(&base, id, &t1, 1, 1, 25).await.0, 200);
    let (status, body) = submit(&base, id, &t1, 1, 1, 26).await;
    assert_eq!((status, body["error"].as_str()), (409, Some("AlreadySubmitted")));
    let (status, body) = submit(&base, id, &t2, 1, 2, 26).await;
    assert_eq!((status, body["error"].as_str()), (409, Some("WrongRound")));

    let view: Value = client
        .get(format!("{base}/lobbies/{id}/view"))
        .bearer_auth(&t1)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(view["phase"], "awaiting_others");

    assert_eq!(submit(&base, id, &t2, 1, 1, 30).await.0, 200);
    let (after, _) = poll_events(&client, &base, id, &t1, 2).await;
    assert_eq!(after[0].seq, 3);
    let EventKind::FeedbackReady { own_guess, ref feedback, .. } = after[0].kind else { panic!("{after:?}") };
    assert_eq!(own_guess, 25);
    // the other seat's guess never reaches this seat
    assert!(!feedback.contains("30"), "{feedback}");
    let view: Value = client
        .get(format!("{base}/lobbies/{id}/view"))
        .bearer_auth(&t1)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(!view.to_string().contains("30"), "{view}");

    // resuming from the same point yields the same events again
    let (again, _) = poll_events(&client, &base, id, &t1, 2).await;
    assert_eq!(again[0], after[0]);
}

#[tokio::test]
async fn auth_errors() {
    let base = start(ServiceConfig::default()).await;
    let lobby: LobbyCreated = create(&base, json!({ "agents": [human("H"), oracle("O")] })).await.json().await.unwrap();
    let client = reqwest::Client::new();
    let url = format!("{base}/lobbies/{}/view", lobby.lobby_id);
    assert_eq!(client.get(&url).send().await.unwrap().status(), 401);
    assert_eq!(client.get(&url).bearer_auth("nope").send().await.unwrap().status(), 403);
    let r = client
        .post(format!("{base}/lobbies/{}/join", lobby.lobby_id))
        .json(&json!({ "code": "bad" }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
}

#[tokio::test]
async fn idle_lobby_expires() {
    let config = ServiceConfig { lobby_ttl: Duration::from_millis(100), ..ServiceConfig::default() };
    let base = start(config).await;
    let lobby: LobbyCreated = create(&base, json!({ "agents": [human("H"), oracle("O")] })).await.json().await.unwrap();
    tokio::time::sleep(Duration::from_millis(300)).await;
    let r = reqwest::Client::new()
        .post(format!("{base}/lobbies/{}/join", lobby.lobby_id))
        .json(&json!({ "code": lobby.join_links[0].code }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 410);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["error"], "LobbyExpired");
}

#[tokio::test]
async fn idle_player_times_out() {
    let base = start(ServiceConfig::default()).await;
    let lobby: LobbyCreated = create(
        &base,
        json!({ "agents": [human("H"), oracle("O")], "game_count": 2, "round_timeout_ms": 40 }),
    )
    .await
    .json()
    .await
    .unwrap();
    let token = join(&base, &lobby, 0).await;
    let url = format!("{base}/lobbies/{}/events?token={token}", lobby.lobby_id);
    let events = tokio::time::timeout(
        Duration::from_secs(20),
        read_events(url, |e| matches!(e.kind, EventKind::SessionOver { .. })),
    )
    .await
    .unwrap();
    let guesses: Vec<i64> = events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::FeedbackReady { own_guess, .. } => Some(own_guess),
            _ => None,
        })
        .collect();
    // midpoint in round 1, then repeated
    assert!(guesses.iter().all(|g| *g == 25), "{guesses:?}");

    let log = reqwest::Client::new()
        .get(format!("{base}/lobbies/{}/log", lobby.lobby_id))
        .bearer_auth(&token)
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let log = read_session(log.as_bytes(), "live").unwrap();
    let flags: Vec<bool> = log.games[0].rounds.iter().map(|r| r.decisions[0].timeout).collect();
    assert!(flags.iter().all(|t| *t), "{flags:?}");
    assert!(verify(&log).passed());
}
