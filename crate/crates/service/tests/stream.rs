use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use otcnet_service::Frame;
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn serve() -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, otcnet_service::router()).await.unwrap() });
    addr
}

/// Minimal HTTP/1.1 client so the tests need nothing beyond tokio.
async fn http(addr: SocketAddr, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let mut stream = TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nhost: {addr}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut buf = Vec::new();
    stream.read_to_end(&mut buf).await.unwrap();
    let text = String::from_utf8(buf).unwrap();
    let status = text[9..12].parse().unwrap();
    let payload = text.split_once("\r\n\r\n").map_or("", |(_, b)| b);
    (status, serde_json::from_str(payload).unwrap_or(Value::Null))
}

async fn create(addr: SocketAddr) -> String {
    let (status, body) = http(addr, "POST", "/sessions", None).await;
    assert_eq!(status, 201);
    body["id"].as_str().unwrap().to_owned()
}

async fn cmd(addr: SocketAddr, id: &str, verb: Value) -> Value {
    let (status, body) = http(addr, "POST", &format!("/sessions/{id}/command"), Some(verb)).await;
    assert_eq!(status, 200, "{body}");
    body
}

async fn subscribe(addr: SocketAddr, id: &str, decimation: u64) -> Socket {
    let url = format!("ws://{addr}/sessions/{id}/stream?decimation={decimation}");
    connect_async(url).await.unwrap().0
}

async fn next_raw(ws: &mut Socket) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("frame within timeout")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn next_frame(ws: &mut Socket) -> Frame {
    serde_json::from_value(next_raw(ws).await).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn every_tick_yields_one_frame_in_order() {
    let addr = serve().await;
    let id = create(addr).await;
    let mut ws = subscribe(addr, &id, 1).await;
    cmd(addr, &id, json!({ "verb": "step", "n": 100 })).await;

    let first = next_raw(&mut ws).await;
    let keys: BTreeSet<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    let expected: BTreeSet<&str> = [
        "tick",
        "mids",
        "bids",
        "offers",
        "inventories",
        "mean_mid",
        "arbitrage",
        "trades",
        "agents",
    ]
    .into();
    assert_eq!(keys, expected);

    let mut frames = vec![serde_json::from_value::<Frame>(first).unwrap()];
    for _ in 1..100 {
        frames.push(next_frame(&mut ws).await);
    }
    let ticks: Vec<u64> = frames.iter().map(|f| f.tick).collect();
    assert_eq!(ticks, (1..=100).collect::<Vec<_>>());

    let (_, status) = http(addr, "GET", &format!("/sessions/{id}"), None).await;
    let snap = &status["snapshot"];
    let last = frames.last().unwrap();
    assert_eq!(serde_json::to_value(&last.mids).unwrap(), snap["mids"]);
    assert_eq!(serde_json::to_value(&last.inventories).unwrap(), snap["inventories"]);
    assert_eq!(json!(last.mean_mid), snap["mean_mid"]);
    let streamed: usize = frames.iter().map(|f| f.trades.len()).sum();
    assert_eq!(json!(streamed), snap["trade_count"]);
    for f in &frames {
        for ((m, b), o) in f.mids.iter().zip(&f.bids).zip(&f.offers) {
            assert!((m - b - 0.5).abs() < 1e-9 && (o - m - 0.5).abs() < 1e-9);
        }
        let hi = f.mids.iter().copied().fold(f64::MIN, f64::max);
        let lo = f.mids.iter().copied().fold(f64::MAX, f64::min);
        assert!((f.arbitrage - (hi - lo - 1.0)).abs() < 1e-12);
        assert!(f.trades.iter().all(|t| t.tick == f.tick - 1));
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn force_short_shows_in_the_next_frame() {
    let addr = serve().await;
    let id = create(addr).await;
    cmd(addr, &id, json!({ "verb": "step", "n": 20 })).await;
    let mut ws = subscribe(addr, &id, 1).await;
    let ack = cmd(addr, &id, json!({ "verb": "force_short" })).await;
    let frame = next_frame(&mut ws).await;
    assert_eq!(json!(frame.tick), ack["tick"]);
    assert!(frame.inventories.iter().all(|&i| i == -23.0));
    let (_, status) = http(addr, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(serde_json::to_value(&frame.mids).unwrap(), status["snapshot"]["mids"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn decimation_thins_frames_but_keeps_trades() {
    let addr = serve().await;
    let id = create(addr).await;
    let mut ws = subscribe(addr, &id, 10).await;
    cmd(addr, &id, json!({ "verb": "step", "n": 100 })).await;
    let mut frames = Vec::new();
    for _ in 0..10 {
        frames.push(next_frame(&mut ws).await);
    }
    assert_eq!(
        frames.iter().map(|f| f.tick).collect::<Vec<_>>(),
        (1..=10).map(|k| 10 * k).collect::<Vec<_>>()
    );
    let (_, status) = http(addr, "GET", &format!("/sessions/{id}"), None).await;
    let streamed: usize = frames.iter().map(|f| f.trades.len()).sum();
    assert_eq!(json!(streamed), status["snapshot"]["trade_count"]);

    // Switch to every frame mid-stream.
    ws.send(Message::Text(r#"{"decimation": 1}"#.into())).await.unwrap();
    tokio::time::sleep(Duration::from_millis(50)).await;
    cmd(addr, &id, json!({ "verb": "step", "n": 3 })).await;
    for t in 101..=103 {
        assert_eq!(next_frame(&mut ws).await.tick, t);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn disconnects_do_not_perturb_the_simulation() {
    let addr = serve().await;
    let watched = create(addr).await;
    let quiet = create(addr).await;
    let ws = subscribe(addr, &watched, 1).await;
    cmd(addr, &watched, json!({ "verb": "step", "n": 30 })).await;
    drop(ws);
    cmd(addr, &watched, json!({ "verb": "step", "n": 30 })).await;
    cmd(addr, &quiet, json!({ "verb": "step", "n": 60 })).await;
    let (_, a) = http(addr, "GET", &format!("/sessions/{watched}"), None).await;
    let (_, b) = http(addr, "GET", &format!("/sessions/{quiet}"), None).await;
    assert_eq!(a["snapshot"], b["snapshot"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn free_running_streams_and_deletion_closes() {
    let addr = serve().await;
    let id = create(addr).await;
    let mut ws = subscribe(addr, &id, 1).await;
    cmd(addr, &id, json!({ "verb": "run", "rate": 500.0 })).await;
    let mut last = 0;
    for _ in 0..20 {
        let f = next_frame(&mut ws).await;
        assert_eq!(f.tick, last + 1);
        last = f.tick;
    }
    let (status, _) = http(addr, "DELETE", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, 204);
    let ended = tokio::time::timeout(Duration::from_secs(10), async {
        while let Some(Ok(msg)) = ws.next().await {
            if let Message::Close(_) = msg {
                break;
            }
        }
    })
    .await;
    assert!(ended.is_ok(), "stream closes after deletion");
    let url = format!("ws://{addr}/sessions/{id}/stream");
    assert!(connect_async(url).await.is_err());
}
