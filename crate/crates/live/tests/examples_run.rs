#[allow(dead_code)]
#[path = "../examples/live_lobby.rs"]
mod live_lobby;

#[tokio::test(flavor = "multi_thread")]
async fn live_lobby_example() {
    live_lobby::run().await.unwrap();
}
