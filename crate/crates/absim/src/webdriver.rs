//! Live-browser environment backend speaking the W3C WebDriver wire protocol
//! over HTTP: session lifecycle, navigation, page-source snapshots, element
//! interaction with the retry → scroll → reparse recovery ladder, and
//! observation extraction through a selector ruleset.

use crate::env::{
    Action, EnvError, EnvFactory, EnvSession, ExecResult, ExecStatus, Observation, RecoveryStrategy,
};
use crate::extract::{extract, ExtractionRuleset};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// W3C element-reference key in Find Element responses.
pub const W3C_ELEMENT_KEY: &str = "element-6066-11e4-a52e-4f735466cecf";

/// Enter keystroke appended to submit the search box.
const ENTER_KEY: &str = "\u{E007}";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WebDriverConfig {
    pub driver_endpoint: String,
    pub ruleset_path: PathBuf,
    /// variant id → start URL.
    pub start_urls: BTreeMap<String, String>,
    #[serde(default = "default_headless")]
    pub headless: bool,
    #[serde(default = "default_settle_timeout_s")]
    pub settle_timeout_s: f64,
    #[serde(default = "default_retry_delay_ms")]
    pub retry_delay_ms: u64,
    #[serde(default = "default_http_timeout_s")]
    pub http_timeout_s: f64,
}

fn default_headless() -> bool {
    true
}
fn default_settle_timeout_s() -> f64 {
    10.0
}
fn default_retry_delay_ms() -> u64 {
    500
}
fn default_http_timeout_s() -> f64 {
    30.0
}

/// One browser session bound to an experiment variant.
pub struct BrowserSession {
    client: reqwest::blocking::Client,
    endpoint: String,
    session_id: String,
    rules: Arc<ExtractionRuleset>,
    settle_timeout_s: f64,
    retry_delay_ms: u64,
    closed: bool,
}

#[derive(Debug, Clone)]
struct ElementId(String);

/// Protocol errors the recovery ladder can act on.
fn is_recoverable(error: &EnvError) -> bool {
    match error {
        EnvError::Protocol { error, .. } => matches!(
            error.as_str(),
            "no such element"
                | "element click intercepted"
                | "element not interactable"
                | "stale element reference"
                | "element not visible"
        ),
        _ => false,
    }
}

impl BrowserSession {
    /// Creates a new driver session and navigates it to the variant's start
    /// URL.
    pub fn open(
        config: &WebDriverConfig,
        rules: Arc<ExtractionRuleset>,
        variant_id: &str,
    ) -> Result<Self, EnvError> {
        let start_url = config.start_urls.get(variant_id).ok_or_else(|| {
            EnvError::ExecutionFailed(format!("no start URL for variant {:?}", variant_id))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.http_timeout_s))
            .build()
            .map_err(|e| EnvError::Transport(e.to_string()))?;

        let mut always_match = json!({ "browserName": "chrome" });
        if config.headless {
            always_match["goog:chromeOptions"] = json!({ "args": ["--headless=new"] });
        }
        let body = json!({ "capabilities": { "alwaysMatch": always_match } });
        let endpoint = config.driver_endpoint.trim_end_matches('/').to_string();
        let value =
            http_post(&client, &format!("{}/session", endpoint), &body).map_err(|e| match e {
                EnvError::Transport(msg) => {
                    EnvError::Transport(format!("driver {} unreachable: {}", endpoint, msg))
                }
                other => other,
            })?;
        let session_id = value["sessionId"]
            .as_str()
            .or_else(|| value["value"]["sessionId"].as_str())
            .ok_or_else(|| EnvError::Protocol {
                error: "session not created".into(),
                message: "response carries no sessionId".into(),
            })?
            .to_string();

        let mut session = BrowserSession {
            client,
            endpoint,
            session_id,
            rules,
            settle_timeout_s: config.settle_timeout_s,
            retry_delay_ms: config.retry_delay_ms,
            closed: false,
        };
        session.navigate(start_url)?;
        session.settle();
        Ok(session)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    fn path(&self, suffix: &str) -> String {
        format!("{}/session/{}{}", self.endpoint, self.session_id, suffix)
    }

    fn ensure_open(&self) -> Result<(), EnvError> {
        if self.closed {
            Err(EnvError::SessionLost("session already closed".into()))
        } else {
            Ok(())
        }
    }

    pub fn navigate(&mut self, url: &str) -> Result<(), EnvError> {
        self.ensure_open()?;
        http_post(&self.client, &self.path("/url"), &json!({ "url": url }))?;
        Ok(())
    }

    /// Full current page source.
    pub fn snapshot(&mut self) -> Result<String, EnvError> {
        self.ensure_open()?;
        let value = http_get(&self.client, &self.path("/source"))?;
        value
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| EnvError::Protocol {
                error: "invalid response".into(),
                message: "page source is not a string".into(),
            })
    }

    pub fn close(mut self) -> Result<(), EnvError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), EnvError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        http_delete(&self.client, &self.path(""))?;
        Ok(())
    }

    fn find_element(&self, css: &str) -> Result<ElementId, EnvError> {
        let body = json!({ "using": "css selector", "value": css });
        let value = http_post(&self.client, &self.path("/element"), &body)?;
        value[W3C_ELEMENT_KEY]
            .as_str()
            .map(|id| ElementId(id.to_string()))
            .ok_or_else(|| EnvError::Protocol {
                error: "invalid response".into(),
                message: "find element response carries no element id".into(),
            })
    }

    fn click(&self, el: &ElementId) -> Result<(), EnvError> {
        http_post(
            &self.client,
            &self.path(&format!("/element/{}/click", el.0)),
            &json!({}),
        )?;
        Ok(())
    }

    fn clear(&self, el: &ElementId) -> Result<(), EnvError> {
        http_post(
            &self.client,
            &self.path(&format!("/element/{}/clear", el.0)),
            &json!({}),
        )?;
        Ok(())
    }

    fn send_keys(&self, el: &ElementId, text: &str) -> Result<(), EnvError> {
        http_post(
            &self.client,
            &self.path(&format!("/element/{}/value", el.0)),
            &json!({ "text": text }),
        )?;
        Ok(())
    }

    fn execute_script(&self, script: &str, args: Value) -> Result<Value, EnvError> {
        http_post(
            &self.client,
            &self.path("/execute/sync"),
            &json!({ "script": script, "args": args }),
        )
    }

    fn scroll_into_view(&self, el: &ElementId) -> Result<(), EnvError> {
        self.execute_script(
            "arguments[0].scrollIntoView(true);",
            json!([{ W3C_ELEMENT_KEY: el.0 }]),
        )?;
        Ok(())
    }

    /// Polls document readiness plus presence of a page-detector selector.
    /// Best-effort: a page that never settles surfaces as an observation
    /// error on the next observe call.
    fn settle(&self) {
        let deadline = Instant::now() + Duration::from_secs_f64(self.settle_timeout_s);
        loop {
            let ready = self
                .execute_script("return document.readyState;", json!([]))
                .map(|v| v.as_str() == Some("complete"))
                .unwrap_or(false);
            if ready {
                let detected = self
                    .rules
                    .page_detectors
                    .iter()
                    .any(|d| self.find_element(&d.selector).is_ok());
                if detected {
                    return;
                }
            }
            if Instant::now() >= deadline {
                return;
            }
            std::thread::sleep(Duration::from_millis(100));
        }
    }

    /// One attempt at the action's protocol sequence.
    fn attempt(&self, action: &Action) -> Result<(), EnvError> {
        match action {
            Action::Search { query } => {
                let case = self.find_element(&self.rules.actions.search_box)?;
                self.clear(&case)?;
                match &self.rules.actions.search_submit {
                    Some(submit) => {
                        self.send_keys(&case, query)?;
                        let button = self.find_element(submit)?;
                        self.click(&button)
                    }
                    None => self.send_keys(&case, &format!("{}{}", query, ENTER_KEY)),
                }
            }
            Action::ClickProduct { index } => {
                let css = self
                    .rules
                    .actions
                    .product_link
                    .replace("{index}", &index.to_string());
                let el = self.find_element(&css)?;
                self.click(&el)
            }
            Action::ClickFilter { group, value } => {
                let css = self
                    .rules
                    .actions
                    .filter_option_link
                    .replace("{group}", &css_attr_escape(group))
                    .replace("{value}", &css_attr_escape(value));
                let el = self.find_element(&css)?;
                self.click(&el)
            }
            Action::Purchase => {
                let el = self.find_element(&self.rules.actions.buy_button)?;
                self.click(&el)
            }
            Action::Stop => Ok(()),
        }
    }

    /// Re-resolves the action's element and scrolls it into view.
    fn scroll_target(&self, action: &Action) -> Result<(), EnvError> {
        let css = match action {
            Action::Search { .. } => self.rules.actions.search_box.clone(),
            Action::ClickProduct { index } => self
                .rules
                .actions
                .product_link
                .replace("{index}", &index.to_string()),
            Action::ClickFilter { group, value } => self
                .rules
                .actions
                .filter_option_link
                .replace("{group}", &css_attr_escape(group))
                .replace("{value}", &css_attr_escape(value)),
            Action::Purchase => self.rules.actions.buy_button.clone(),
            Action::Stop => return Ok(()),
        };
        let el = self.find_element(&css)?;
        self.scroll_into_view(&el)
    }

    /// Executes the action with the recovery ladder: (1) retry once after a
    /// delay, (2) scroll the target into view and retry, (3) re-snapshot,
    /// re-extract, and retry once more, then fail with the last protocol
    /// error. At most one pass through the ladder per action.
    pub fn perform(&mut self, action: &Action) -> Result<ExecResult, EnvError> {
        self.ensure_open()?;
        let started = Instant::now();
        if matches!(action, Action::Stop) {
            return Ok(ExecResult::ok(started.elapsed().as_secs_f64()));
        }

        let finish = |status: ExecStatus, started: Instant| ExecResult {
            status,
            latency_s: started.elapsed().as_secs_f64(),
        };

        let first = match self.attempt(action) {
            Ok(()) => {
                self.settle();
                return Ok(finish(ExecStatus::Ok, started));
            }
            Err(e) if is_recoverable(&e) => e,
            Err(e) => return Err(e),
        };

        // Rung 1: plain retry after a short delay.
        std::thread::sleep(Duration::from_millis(self.retry_delay_ms));
        let second = match self.attempt(action) {
            Ok(()) => {
                self.settle();
                return Ok(finish(
                    ExecStatus::Recovered {
                        strategy: RecoveryStrategy::Retry,
                    },
                    started,
                ));
            }
            Err(e) if is_recoverable(&e) => e,
            Err(e) => return Err(e),
        };
        let _ = first;

        // Rung 2: scroll the target into view, then retry.
        let third = match self
            .scroll_target(action)
            .and_then(|()| self.attempt(action))
        {
            Ok(()) => {
                self.settle();
                return Ok(finish(
                    ExecStatus::Recovered {
                        strategy: RecoveryStrategy::Scroll,
                    },
                    started,
                ));
            }
            Err(e) if is_recoverable(&e) => e,
            Err(e) => return Err(e),
        };
        let _ = second;

        // Rung 3: re-snapshot and re-extract to confirm the page is still
        // classifiable, then re-resolve and retry.
        let reparse = self
            .snapshot()
            .and_then(|html| extract(&html, &self.rules).map(|_| ()))
            .and_then(|()| self.attempt(action));
        match reparse {
            Ok(()) => {
                self.settle();
                Ok(finish(
                    ExecStatus::Recovered {
                        strategy: RecoveryStrategy::Reparse,
                    },
                    started,
                ))
            }
            Err(e) if is_recoverable(&e) || matches!(e, EnvError::Unclassifiable { .. }) => {
                let _ = third;
                Ok(finish(
                    ExecStatus::Failed {
                        reason: e.to_string(),
                    },
                    started,
                ))
            }
            Err(e) => Err(e),
        }
    }
}

impl EnvSession for BrowserSession {
    fn observe(&mut self) -> Result<Observation, EnvError> {
        let html = self.snapshot()?;
        extract(&html, &self.rules)
    }

    fn execute(&mut self, action: &Action) -> Result<ExecResult, EnvError> {
        self.perform(action)
    }
}

impl Drop for BrowserSession {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

/// Escapes a string for interpolation inside a CSS attribute selector.
fn css_attr_escape(value: &str) -> String {
    value.replace('\\', "\\\\").replace('"', "\\\"")
}

fn decode_response(status: u16, body: &str) -> Result<Value, EnvError> {
    let payload: Value = serde_json::from_str(body).map_err(|e| EnvError::Protocol {
        error: "invalid response".into(),
        message: format!(
            "non-JSON driver response ({}): {}",
            e,
            &body[..body.len().min(200)]
        ),
    })?;
    if (200..300).contains(&status) {
        Ok(payload.get("value").cloned().unwrap_or(Value::Null))
    } else {
        let error = payload["value"]["error"]
            .as_str()
            .unwrap_or("unknown error")
            .to_string();
        let message = payload["value"]["message"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        Err(EnvError::Protocol { error, message })
    }
}

fn http_post(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Value,
) -> Result<Value, EnvError> {
    let response = client
        .post(url)
        .header("Content-Type", "application/json")
        .json(body)
        .send()
        .map_err(|e| EnvError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .text()
        .map_err(|e| EnvError::Transport(e.to_string()))?;
    decode_response(status, &text)
}

fn http_get(client: &reqwest::blocking::Client, url: &str) -> Result<Value, EnvError> {
    let response = client
        .get(url)
        .send()
        .map_err(|e| EnvError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .text()
        .map_err(|e| EnvError::Transport(e.to_string()))?;
    decode_response(status, &text)
}

fn http_delete(client: &reqwest::blocking::Client, url: &str) -> Result<Value, EnvError> {
    let response = client
        .delete(url)
        .send()
        .map_err(|e| EnvError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .text()
        .map_err(|e| EnvError::Transport(e.to_string()))?;
    decode_response(status, &text)
}

/// Opens one browser session per (variant, worker) against the configured
/// driver endpoint.
pub struct WebDriverFactory {
    config: WebDriverConfig,
    rules: Arc<ExtractionRuleset>,
}

impl WebDriverFactory {
    pub fn new(config: WebDriverConfig, rules: Arc<ExtractionRuleset>) -> Self {
        WebDriverFactory { config, rules }
    }
}

impl EnvFactory for WebDriverFactory {
    fn open(&self, variant_id: &str, _session_seed: u64) -> Result<Box<dyn EnvSession>, EnvError> {
        Ok(Box::new(BrowserSession::open(
            &self.config,
            self.rules.clone(),
            variant_id,
        )?))
    }
}
