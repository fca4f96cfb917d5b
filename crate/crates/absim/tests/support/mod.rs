//! Shared test support: a minimal scriptable HTTP server used to stub the
//! WebDriver endpoint and other HTTP backends.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

pub struct StubServer {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// JSON body helper for handlers.
pub fn json_response(status: u16, value: serde_json::Value) -> (u16, String) {
    (status, value.to_string())
}

/// Spawns a one-connection-at-a-time HTTP server; the handler receives
/// (method, path, body) and returns (status, body). Bodies are JSON.
pub fn spawn<F>(handler: F) -> StubServer
where
    F: FnMut(&str, &str, &serde_json::Value) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
    let addr = listener.local_addr().expect("stub server addr");
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let handler = Arc::new(Mutex::new(handler));
    let handle = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let mut handler = handler.lock().expect("stub handler lock");
            let _ = serve_one(stream, &mut *handler);
        }
    });
    StubServer {
        addr,
        stop,
        handle: Some(handle),
    }
}

fn serve_one(
    mut stream: TcpStream,
    handler: &mut (dyn FnMut(&str, &str, &serde_json::Value) -> (u16, String) + Send),
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("/").to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line == "\r\n" || line == "\n" || line.is_empty() {
            break;
        }
        if let Some(rest) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = rest.trim().parse().unwrap_or(0);
        }
    }
    let mut body_bytes = vec![0u8; content_length];
    if content_length > 0 {
        reader.read_exact(&mut body_bytes)?;
    }
    let body: serde_json::Value =
        serde_json::from_slice(&body_bytes).unwrap_or(serde_json::Value::Null);

    let (status, response_body) = handler(&method, &path, &body);
    let response = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        status,
        response_body.len(),
        response_body
    );
    stream.write_all(response.as_bytes())
}

/// Scriptable W3C WebDriver stub shared by the backend and acceptance tests.
pub mod wd {
    use super::{json_response, spawn, StubServer};
    use absim::webdriver::W3C_ELEMENT_KEY;
    use serde_json::json;
    use std::sync::{Arc, Mutex};

    #[derive(Default)]
    pub struct Scenario {
        pub html: String,
        pub log: Vec<String>,
        /// Successive click attempts that should fail, with this error code.
        pub click_failures_remaining: u32,
        pub click_error: String,
        /// The target find fails until a page-source fetch has happened.
        pub find_target_fail_until_source: bool,
        pub find_target_always_fail: bool,
        pub target_selector: String,
        pub source_fetches: u32,
        pub sessions_created: u32,
    }

    pub fn driver_stub(scenario: Arc<Mutex<Scenario>>) -> StubServer {
        spawn(move |method, path, body| {
            let mut s = scenario.lock().unwrap();
            if method == "POST" && path == "/session" {
                s.sessions_created += 1;
                let id = format!("wd-{}", s.sessions_created);
                return json_response(200, json!({"value": {"sessionId": id}}));
            }
            if method == "DELETE" {
                s.log.push("DELETE".into());
                return json_response(200, json!({"value": null}));
            }
            if path.ends_with("/url") {
                s.log.push("NAVIGATE".into());
                return json_response(200, json!({"value": null}));
            }
            if path.ends_with("/source") {
                s.source_fetches += 1;
                s.log.push("SOURCE".into());
                return json_response(200, json!({"value": s.html}));
            }
            if path.ends_with("/execute/sync") {
                let script = body["script"].as_str().unwrap_or_default();
                if script.contains("readyState") {
                    return json_response(200, json!({"value": "complete"}));
                }
                s.log.push("SCROLL".into());
                return json_response(200, json!({"value": null}));
            }
            if path.ends_with("/element") {
                let selector = body["value"].as_str().unwrap_or_default().to_string();
                if selector == s.target_selector {
                    s.log.push(format!("FIND {}", selector));
                    let unavailable = s.find_target_always_fail
                        || (s.find_target_fail_until_source && s.source_fetches == 0);
                    if unavailable {
                        return json_response(
                            404,
                            json!({"value": {"error": "no such element", "message": selector}}),
                        );
                    }
                }
                return json_response(200, json!({"value": {W3C_ELEMENT_KEY: "el-1"}}));
            }
            if path.ends_with("/click") {
                if s.click_failures_remaining > 0 {
                    s.click_failures_remaining -= 1;
                    s.log.push("CLICK-FAIL".into());
                    let error = s.click_error.clone();
                    return json_response(
                        400,
                        json!({"value": {"error": error, "message": "injected"}}),
                    );
                }
                s.log.push("CLICK-OK".into());
                return json_response(200, json!({"value": null}));
            }
            if path.ends_with("/clear") || path.ends_with("/value") {
                return json_response(200, json!({"value": null}));
            }
            json_response(
                404,
                json!({"value": {"error": "unknown command", "message": path}}),
            )
        })
    }
}
