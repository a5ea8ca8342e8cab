use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;
use panda_core::embedstore::{
    EmbedRequest, EmbedResponse, EmbeddingProvider, LabelRef, ProviderError, RemoteProvider,
};
use panda_core::tensor::ImageTensor;

enum Reply {
    Json(String),
    Status(u16),
    Hang(Duration),
}

type Handler = dyn Fn(usize, &EmbedRequest) -> Reply + Send + Sync;

struct TestServer {
    endpoint: String,
    requests: Arc<Mutex<Vec<EmbedRequest>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<(String, String)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some((request_line, String::from_utf8(body).ok()?))
}

fn serve(handler: Box<Handler>) -> TestServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    thread::spawn(move || {
        for (n, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let Some((line, body)) = read_request(&mut stream) else { continue };
            assert!(line.starts_with("POST /embed "), "{line}");
            let req: EmbedRequest = serde_json::from_str(&body).unwrap();
            log.lock().unwrap().push(req.clone());
            let (status, text) = match handler(n, &req) {
                Reply::Json(t) => (200, t),
                Reply::Status(s) => (s, "nope".to_string()),
                Reply::Hang(d) => {
                    thread::sleep(d);
                    continue;
                }
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    TestServer { endpoint, requests }
}

fn vectors(n: usize, dim: usize) -> String {
    let v: Vec<Vec<f32>> = (0..n).map(|i| (0..dim).map(|j| (i * dim + j) as f32 + 1.0).collect()).collect();
    serde_json::to_string(&EmbedResponse { dimension: dim, vectors: v }).unwrap()
}

/// Answers text requests with one vector and patch requests with g² vectors.
fn well_behaved(dim: usize) -> Box<Handler> {
    Box::new(move |_, req| match req.kind.as_str() {
        "text" => Reply::Json(vectors(1, dim)),
        _ => Reply::Json(vectors(req.grid.unwrap() * req.grid.unwrap(), dim)),
    })
}

const LABEL: LabelRef<'static> = LabelRef { id: 3, name: "otter" };

fn provider(server: &TestServer, dim: usize, timeout_ms: u64, retries: u32) -> RemoteProvider {
    RemoteProvider::new(&server.endpoint, dim, Duration::from_millis(timeout_ms), retries).unwrap()
}

#[test]
fn text_request_shape_and_cache() {
    let server = serve(well_behaved(4));
    let p = provider(&server, 4, 5_000, 0);
    let v = p.text_embedding(LABEL).unwrap();
    assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    p.text_embedding(LABEL).unwrap();
    let reqs = server.requests.lock().unwrap().clone();
    assert_eq!(reqs.len(), 1, "second call must hit the cache");
    assert_eq!(reqs[0].kind, "text");
    assert_eq!(reqs[0].label.as_deref(), Some("otter"));
    assert!(reqs[0].image.is_none() && reqs[0].grid.is_none());
    assert_eq!(p.cached_entries(), 1);
}

#[test]
fn patch_request_carries_raw_rgb() {
    let server = serve(well_behaved(3));
    let p = provider(&server, 3, 5_000, 0);
    assert!(p.needs_images());
    let img = ImageTensor::filled(8, [10, 20, 30], "a/1.png", 3);
    let out = p.patch_embeddings("a/1.png", LABEL, Some(&img), 2).unwrap();
    assert_eq!(out.len(), 4);
    let req = server.requests.lock().unwrap()[0].clone();
    assert_eq!(req.kind, "patches");
    assert_eq!(req.item_id.as_deref(), Some("a/1.png"));
    assert_eq!(req.grid, Some(2));
    let raw = base64::engine::general_purpose::STANDARD.decode(req.image.unwrap()).unwrap();
    assert_eq!(raw, img.pixels);

    assert!(matches!(
        p.patch_embeddings("b/2.png", LABEL, None, 2),
        Err(ProviderError::ImageRequired(_))
    ));
}

#[test]
fn retries_transport_failures() {
    let server = serve(Box::new(|n, _| if n < 2 { Reply::Status(503) } else { Reply::Json(vectors(1, 2)) }));
    let p = provider(&server, 2, 5_000, 2);
    p.text_embedding(LABEL).unwrap();
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_retries() {
    let server = serve(Box::new(|_, _| Reply::Status(500)));
    let p = provider(&server, 2, 5_000, 1);
    assert!(matches!(p.text_embedding(LABEL), Err(ProviderError::Transport(_))));
    assert_eq!(server.requests.lock().unwrap().len(), 2);
}

#[test]
fn malformed_body_is_transport_error() {
    let server = serve(Box::new(|_, _| Reply::Json("{\"dimension\": 2".into())));
    let p = provider(&server, 2, 5_000, 0);
    assert!(matches!(p.text_embedding(LABEL), Err(ProviderError::Transport(_))));
}

#[test]
fn wrong_shape_is_rejected() {
    let server = serve(Box::new(|_, _| Reply::Json(vectors(1, 5))));
    let p = provider(&server, 4, 5_000, 3);
    assert!(matches!(p.text_embedding(LABEL), Err(ProviderError::Malformed(_))));
    assert_eq!(server.requests.lock().unwrap().len(), 1, "shape errors are not retried");

    let server = serve(Box::new(|_, _| Reply::Json(vectors(3, 4))));
    let p = provider(&server, 4, 5_000, 0);
    let img = ImageTensor::filled(4, [0, 0, 0], "x", 0);
    assert!(matches!(
        p.patch_embeddings("x", LABEL, Some(&img), 2),
        Err(ProviderError::Malformed(_))
    ));
}

#[test]
fn times_out() {
    let server = serve(Box::new(|_, _| Reply::Hang(Duration::from_millis(1500))));
    let p = provider(&server, 2, 200, 0);
    let started = std::time::Instant::now();
    assert!(matches!(p.text_embedding(LABEL), Err(ProviderError::Transport(_))));
    assert!(started.elapsed() < Duration::from_millis(1400));
}

#[test]
fn unreachable_endpoint() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let p = RemoteProvider::new(&format!("http://{addr}"), 2, Duration::from_millis(500), 0).unwrap();
    assert!(matches!(p.text_embedding(LABEL), Err(ProviderError::Transport(_))));
}
