#![cfg(feature = "http")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use llm_codec::icl::{CompletionClient, CompletionRequest, HttpClient, IclError};

/// Serves the canned `(status, body, delay)` replies in order and records request bodies.
fn serve(replies: Vec<(u16, &'static str, u64)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body, delay) in replies {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(String::from_utf8(buf).unwrap());
            thread::sleep(Duration::from_millis(delay));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, seen)
}

fn client(url: String) -> HttpClient {
    let mut c = HttpClient::new(url);
    c.backoff = Duration::from_millis(1);
    c.timeout = Duration::from_millis(300);
    c
}

const OK: &str = r#"{"choices":[{"text":" happy\n###","finish_reason":"stop"}]}"#;

#[test]
fn completion_ok() {
    let (url, seen) = serve(vec![(200, OK, 0)]);
    let resp = client(url).complete(&CompletionRequest::new("Input: x\nOutput:")).unwrap();
    assert_eq!(resp.text, " happy\n###");
    assert_eq!(resp.finish_reason.as_deref(), Some("stop"));
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(body["prompt"], "Input: x\nOutput:");
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["max_tokens"], 16);
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(vec![(500, "{}", 0), (503, "{}", 0), (200, OK, 0)]);
    assert!(client(url).complete(&CompletionRequest::new("p")).is_ok());
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_run_out() {
    let (url, seen) = serve(vec![(500, "{}", 0); 4]);
    assert!(matches!(client(url).complete(&CompletionRequest::new("p")), Err(IclError::HttpStatus(500))));
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, "{}", 0), (200, OK, 0)]);
    assert!(matches!(client(url).complete(&CompletionRequest::new("p")), Err(IclError::HttpStatus(400))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body() {
    let (url, _) = serve(vec![(200, r#"{"choices":[]}"#, 0)]);
    assert!(matches!(client(url).complete(&CompletionRequest::new("p")), Err(IclError::MalformedResponse(_))));
    let (url, _) = serve(vec![(200, "not json", 0)]);
    assert!(matches!(client(url).complete(&CompletionRequest::new("p")), Err(IclError::MalformedResponse(_))));
}

#[test]
fn slow_server_times_out() {
    let (url, _) = serve(vec![(200, OK, 1500)]);
    let mut c = client(url);
    c.retries = 0;
    assert!(matches!(c.complete(&CompletionRequest::new("p")), Err(IclError::Timeout)));
}
