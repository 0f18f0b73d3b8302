use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use trace_core::endpoint::{call_with_retry, Endpoint, EndpointError, GenerateRequest, HttpEndpoint, RetryPolicy};

struct Seen {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves the scripted `(status, extra headers, body)` replies in order, one
/// per connection, and reports each request it saw.
fn serve(replies: Vec<(u16, &'static str, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, headers, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Seen {
                path: request_line.split_whitespace().nth(1).unwrap_or("").to_string(),
                auth,
                body: serde_json::from_slice(&buf).unwrap_or(serde_json::Value::Null),
            })
            .unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n{headers}\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (addr, rx)
}

fn request() -> GenerateRequest {
    GenerateRequest {
        model: "test-model".into(),
        prompt: "where?".into(),
        image: Some("iVBORw0KGgo=".into()),
        temperature: 0.2,
        seed: 42,
    }
}

#[test]
fn success_round_trip() {
    let (addr, seen) = serve(vec![(200, "", r#"{"text":"[(0.5, 0.5)]"}"#.into())]);
    let ep = HttpEndpoint::new(&addr, Duration::from_secs(5)).with_api_key(Some("k123".into()));
    assert_eq!(ep.generate(&request()).unwrap(), "[(0.5, 0.5)]");
    let s = seen.recv().unwrap();
    assert_eq!(s.path, "/v1/generate");
    assert_eq!(s.auth.as_deref(), Some("Bearer k123"));
    assert_eq!(
        s.body,
        serde_json::json!({"model": "test-model", "prompt": "where?", "image": "iVBORw0KGgo=", "temperature": 0.2, "seed": 42})
    );
}

#[test]
fn status_mapping() {
    let (addr, _seen) = serve(vec![
        (429, "Retry-After: 0\r\n", "{}".into()),
        (503, "", "busy".into()),
        (400, "", "bad".into()),
        (200, "", "not json".into()),
    ]);
    let ep = HttpEndpoint::new(&addr, Duration::from_secs(5)).with_api_key(None);
    assert_eq!(
        ep.generate(&request()),
        Err(EndpointError::RateLimited {
            retry_after: Some(Duration::ZERO)
        })
    );
    assert!(matches!(ep.generate(&request()), Err(EndpointError::Transient(_))));
    assert!(matches!(ep.generate(&request()), Err(EndpointError::Rejected { status: 400, .. })));
    assert!(matches!(ep.generate(&request()), Err(EndpointError::Protocol(_))));
}

#[test]
fn retry_honors_rate_limit_then_succeeds() {
    let (addr, seen) = serve(vec![
        (429, "Retry-After: 0\r\n", "{}".into()),
        (502, "", "{}".into()),
        (200, "", r#"{"text":"ok"}"#.into()),
    ]);
    let ep = HttpEndpoint::new(&addr, Duration::from_secs(5)).with_api_key(None);
    let reply = call_with_retry(&ep, &request(), &RetryPolicy::immediate(3)).unwrap();
    assert_eq!((reply.text.as_str(), reply.retries), ("ok", 2));
    assert_eq!(seen.iter().take(3).count(), 3);
}

#[test]
fn closed_port_is_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let ep = HttpEndpoint::new(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2));
    assert!(matches!(ep.generate(&request()), Err(EndpointError::Unreachable(_))));
}
