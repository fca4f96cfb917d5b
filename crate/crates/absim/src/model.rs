//! Uniform interface to a text-generation backend: an OpenAI-style HTTP chat
//! endpoint for live runs and a deterministic scripted policy for tests and
//! desk-scale experiments.

use crate::env::{Observation, PageType, OBSERVATION_MARKER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;
use thiserror::Error;

/// Marker line the persona generator puts in its prompts; the scripted
/// backend answers such prompts with a synthesized persona document.
pub const PERSONA_REQUEST_MARKER: &str = "Write a persona document";

/// Marker line that precedes the agent intention in the system prompt.
pub const INTENTION_MARKER: &str = "Intention:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("messages must be non-empty")]
    EmptyMessages,
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend payload: {0}")]
    Payload(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// Identifies one model call so stochastic scripted draws replay exactly.
#[derive(Debug, Clone)]
pub struct CallContext {
    pub session_id: String,
    pub session_seed: u64,
    pub step_index: u32,
    pub arm: String,
}

impl CallContext {
    pub fn new(
        session_id: impl Into<String>,
        session_seed: u64,
        step_index: u32,
        arm: impl Into<String>,
    ) -> Self {
        CallContext {
            session_id: session_id.into(),
            session_seed,
            step_index,
            arm: arm.into(),
        }
    }
}

pub trait ModelClient: Send + Sync {
    fn chat(&self, ctx: &CallContext, messages: &[Message]) -> Result<String, ModelError>;
}

// ── HTTP backend ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub endpoint: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_base_s")]
    pub backoff_base_s: f64,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout_s() -> f64 {
    30.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_base_s() -> f64 {
    0.5
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.timeout_s <= 0.0 {
            return Err(ModelError::InvalidPolicy("timeout must be > 0".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ModelError::InvalidPolicy(
                "temperature must be in [0, 2]".into(),
            ));
        }
        Ok(())
    }
}

/// Chat client speaking the OpenAI-style chat-completions shape.
pub struct HttpModel {
    config: ModelConfig,
    client: reqwest::blocking::Client,
    retries_observed: AtomicU64,
}

impl HttpModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| ModelError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpModel {
            config,
            client,
            retries_observed: AtomicU64::new(0),
        })
    }

    /// Total re-attempts performed over this client's lifetime.
    pub fn retries_observed(&self) -> u64 {
        self.retries_observed.load(Ordering::SeqCst)
    }

    fn request_once(&self, body: &serde_json::Value) -> Result<String, ModelError> {
        let mut request = self
            .client
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(env_name) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(env_name) {
                request = request.header("Authorization", format!("Bearer {}", key));
            }
        }
        let response = request
            .json(body)
            .send()
            .map_err(|e| ModelError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        let status = response.status();
        let text = response.text().map_err(|e| ModelError::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(ModelError::Status {
                status: status.as_u16(),
                body: text.chars().take(300).collect(),
            });
        }
        let payload: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ModelError::Payload(e.to_string()))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| ModelError::Payload("missing choices[0].message.content".to_string()))
    }
}

impl ModelClient for HttpModel {
    fn chat(&self, _ctx: &CallContext, messages: &[Message]) -> Result<String, ModelError> {
        if messages.is_empty() {
            return Err(ModelError::EmptyMessages);
        }
        let body = serde_json::json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut last_err = None;
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                self.retries_observed.fetch_add(1, Ordering::SeqCst);
                let backoff = self.config.backoff_base_s * 2f64.powi(attempt as i32 - 1);
                std::thread::sleep(Duration::from_secs_f64(backoff));
            }
            match self.request_once(&body) {
                Ok(text) => return Ok(text),
                // 4xx responses are not transient; surface them immediately.
                Err(ModelError::Status { status, body }) if status < 500 => {
                    return Err(ModelError::Status { status, body })
                }
                Err(e) => last_err = Some(e),
            }
        }
        match last_err.expect("at least one attempt ran") {
            ModelError::Transport { message, .. } => Err(ModelError::Transport {
                attempts: self.config.retries + 1,
                message,
            }),
            other => Err(other),
        }
    }
}

// ── Scripted backend ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RulePredicate {
    /// Matches every observation; required as a fallback.
    Always,
    /// Matches on page type, optionally requiring a minimum product count
    /// and the presence of a specific filter option.
    Page {
        page_type: PageType,
        #[serde(default)]
        min_products: usize,
        #[serde(default)]
        has_filter_option: Option<FilterOptionRef>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOptionRef {
    pub group: String,
    pub value: String,
}

impl RulePredicate {
    fn matches(&self, obs: &Observation) -> bool {
        match self {
            RulePredicate::Always => true,
            RulePredicate::Page {
                page_type,
                min_products,
                has_filter_option,
            } => {
                if obs.page_type != *page_type || obs.products.len() < *min_products {
                    return false;
                }
                if let Some(opt) = has_filter_option {
                    let present = obs.filter_groups.iter().any(|g| {
                        g.name == opt.group && g.options.iter().any(|o| o.value == opt.value)
                    });
                    if !present {
                        return false;
                    }
                }
                true
            }
        }
    }
}

/// One weighted alternative within a rule. `weight_by_arm` overrides the
/// weight for sessions assigned to the named arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleChoice {
    pub action: String,
    #[serde(default)]
    pub weight: Option<f64>,
    #[serde(default)]
    pub weight_by_arm: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub when: RulePredicate,
    pub choose: Vec<RuleChoice>,
}

/// Ordered first-match rules mapping observations to action text. Stochastic
/// choices are resolved by a draw keyed on (seed, session id, step index) so
/// replays are bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub rules: Vec<PolicyRule>,
    pub seed: u64,
}

impl ScriptedPolicy {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self
            .rules
            .iter()
            .any(|r| matches!(r.when, RulePredicate::Always))
        {
            return Err(ModelError::InvalidPolicy(
                "policy needs an unconditional fallback rule".into(),
            ));
        }
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.choose.is_empty() {
                return Err(ModelError::InvalidPolicy(format!(
                    "rule {} has no choices",
                    i
                )));
            }
            let weighted = rule.choose.iter().any(|c| c.weight.is_some());
            if rule.choose.len() > 1 && !weighted {
                return Err(ModelError::InvalidPolicy(format!(
                    "rule {} has multiple choices but no weights",
                    i
                )));
            }
            if weighted {
                let base: f64 = rule.choose.iter().map(|c| c.weight.unwrap_or(0.0)).sum();
                if (base - 1.0).abs() > 1e-9 {
                    return Err(ModelError::InvalidPolicy(format!(
                        "rule {} weights sum to {}, expected 1",
                        i, base
                    )));
                }
                let arms: std::collections::BTreeSet<&String> = rule
                    .choose
                    .iter()
                    .flat_map(|c| c.weight_by_arm.keys())
                    .collect();
                for arm in arms {
                    let sum: f64 = rule
                        .choose
                        .iter()
                        .map(|c| {
                            c.weight_by_arm
                                .get(arm)
                                .copied()
                                .unwrap_or_else(|| c.weight.unwrap_or(0.0))
                        })
                        .sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(ModelError::InvalidPolicy(format!(
                            "rule {} weights for arm {:?} sum to {}, expected 1",
                            i, arm, sum
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Deterministic backend resolving prompts against a scripted policy.
pub struct ScriptedModel {
    policy: ScriptedPolicy,
}

impl ScriptedModel {
    pub fn new(policy: ScriptedPolicy) -> Result<Self, ModelError> {
        policy.validate()?;
        Ok(ScriptedModel { policy })
    }

    pub fn policy(&self) -> &ScriptedPolicy {
        &self.policy
    }

    fn draw(&self, ctx: &CallContext) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.policy.seed.to_le_bytes());
        hasher.update(ctx.session_seed.to_le_bytes());
        hasher.update(ctx.session_id.as_bytes());
        hasher.update(ctx.step_index.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed).gen::<f64>()
    }

    fn pick_action(&self, ctx: &CallContext, obs: &Observation) -> String {
        for rule in &self.policy.rules {
            if !rule.when.matches(obs) {
                continue;
            }
            if rule.choose.len() == 1 && rule.choose[0].weight.is_none() {
                return rule.choose[0].action.clone();
            }
            let u = self.draw(ctx);
            let mut cumulative = 0.0;
            for choice in &rule.choose {
                let weight = choice
                    .weight_by_arm
                    .get(&ctx.arm)
                    .copied()
                    .unwrap_or_else(|| choice.weight.unwrap_or(0.0));
                cumulative += weight;
                if u < cumulative {
                    return choice.action.clone();
                }
            }
            // Rounding slack: fall through to the last choice.
            return rule
                .choose
                .last()
                .expect("non-empty choices")
                .action
                .clone();
        }
        unreachable!("validated policy has a fallback rule")
    }
}

/// Pulls the observation JSON out of a prompt. The block is the first line
/// following the observation marker.
pub fn extract_observation(messages: &[Message]) -> Option<Observation> {
    for message in messages.iter().rev() {
        if let Some(pos) = message.content.find(OBSERVATION_MARKER) {
            let rest = &message.content[pos + OBSERVATION_MARKER.len()..];
            for line in rest.lines() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                return serde_json::from_str(line).ok();
            }
        }
    }
    None
}

/// Pulls the intention goal text out of a prompt.
pub fn extract_intention(messages: &[Message]) -> Option<String> {
    for message in messages {
        for line in message.content.lines() {
            if let Some(rest) = line.trim().strip_prefix(INTENTION_MARKER) {
                let goal = rest.trim();
                if !goal.is_empty() {
                    return Some(goal.to_string());
                }
            }
        }
    }
    None
}

fn substitute_placeholders(template: &str, messages: &[Message], obs: &Observation) -> String {
    let mut text = template.to_string();
    if text.contains("{goal}") {
        let goal = extract_intention(messages).unwrap_or_default();
        text = text.replace("{goal}", &goal);
    }
    if text.contains("{query}") {
        text = text.replace("{query}", obs.query.as_deref().unwrap_or(""));
    }
    text
}

impl ModelClient for ScriptedModel {
    fn chat(&self, ctx: &CallContext, messages: &[Message]) -> Result<String, ModelError> {
        if messages.is_empty() {
            return Err(ModelError::EmptyMessages);
        }
        if messages
            .iter()
            .any(|m| m.content.contains(PERSONA_REQUEST_MARKER))
        {
            return Ok(crate::persona::scripted_persona_document(ctx, messages));
        }
        let obs = extract_observation(messages).ok_or_else(|| {
            ModelError::Payload("prompt does not contain an observation block".into())
        })?;
        let action = self.pick_action(ctx, &obs);
        Ok(substitute_placeholders(&action, messages, &obs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Observation;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::AtomicU32;
    use std::sync::Arc;

    fn obs_prompt(obs: &Observation) -> Vec<Message> {
        vec![
            Message::system("You are a shopper.\nIntention: find a solar filter for telescope"),
            Message::user(format!(
                "{}\n{}\nReply with exactly one action:",
                OBSERVATION_MARKER,
                obs.canonical_json()
            )),
        ]
    }

    fn home_policy() -> ScriptedPolicy {
        ScriptedPolicy {
            rules: vec![
                PolicyRule {
                    when: RulePredicate::Page {
                        page_type: PageType::Home,
                        min_products: 0,
                        has_filter_option: None,
                    },
                    choose: vec![RuleChoice {
                        action: "search(\"solar filter for telescope\")".into(),
                        weight: None,
                        weight_by_arm: BTreeMap::new(),
                    }],
                },
                PolicyRule {
                    when: RulePredicate::Always,
                    choose: vec![RuleChoice {
                        action: "stop".into(),
                        weight: None,
                        weight_by_arm: BTreeMap::new(),
                    }],
                },
            ],
            seed: 7,
        }
    }

    #[test]
    fn direct_rule_match_returns_exact_text() {
        let model = ScriptedModel::new(home_policy()).unwrap();
        let ctx = CallContext::new("sess-1", 0, 0, "control");
        let reply = model
            .chat(&ctx, &obs_prompt(&Observation::home(0)))
            .unwrap();
        assert_eq!(reply, "search(\"solar filter for telescope\")");
    }

    #[test]
    fn policy_without_fallback_is_rejected() {
        let mut policy = home_policy();
        policy.rules.pop();
        assert!(ScriptedModel::new(policy).is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let policy = ScriptedPolicy {
            rules: vec![PolicyRule {
                when: RulePredicate::Always,
                choose: vec![
                    RuleChoice {
                        action: "purchase".into(),
                        weight: Some(0.8),
                        weight_by_arm: BTreeMap::new(),
                    },
                    RuleChoice {
                        action: "stop".into(),
                        weight: Some(0.3),
                        weight_by_arm: BTreeMap::new(),
                    },
                ],
            }],
            seed: 0,
        };
        assert!(ScriptedModel::new(policy).is_err());
    }

    fn purchase_policy(p: f64) -> ScriptedPolicy {
        ScriptedPolicy {
            rules: vec![PolicyRule {
                when: RulePredicate::Always,
                choose: vec![
                    RuleChoice {
                        action: "purchase".into(),
                        weight: Some(p),
                        weight_by_arm: BTreeMap::new(),
                    },
                    RuleChoice {
                        action: "stop".into(),
                        weight: Some(1.0 - p),
                        weight_by_arm: BTreeMap::new(),
                    },
                ],
            }],
            seed: 99,
        }
    }

    #[test]
    fn stochastic_replay_is_bit_identical() {
        let model = ScriptedModel::new(purchase_policy(0.8)).unwrap();
        let prompt = obs_prompt(&Observation::home(0));
        let first: Vec<String> = (0..20)
            .map(|i| {
                model
                    .chat(&CallContext::new("sess-7", 0, i, "control"), &prompt)
                    .unwrap()
            })
            .collect();
        let second: Vec<String> = (0..20)
            .map(|i| {
                model
                    .chat(&CallContext::new("sess-7", 0, i, "control"), &prompt)
                    .unwrap()
            })
            .collect();
        assert_eq!(first, second);
        // Draws must differ across sessions and steps.
        let other = model
            .chat(&CallContext::new("sess-8", 0, 0, "control"), &prompt)
            .unwrap();
        let _ = other;
    }

    #[test]
    fn purchase_rate_concentrates_near_weight() {
        let model = ScriptedModel::new(purchase_policy(0.8)).unwrap();
        let prompt = obs_prompt(&Observation::home(0));
        let n = 500;
        let purchases = (0..n)
            .filter(|i| {
                model
                    .chat(
                        &CallContext::new(format!("sess-{i}"), 0, 0, "control"),
                        &prompt,
                    )
                    .unwrap()
                    == "purchase"
            })
            .count();
        let rate = purchases as f64 / n as f64;
        assert!((rate - 0.8).abs() < 0.05, "rate = {rate}");
    }

    #[test]
    fn per_arm_weight_overrides_apply() {
        let mut policy = purchase_policy(0.81);
        policy.rules[0].choose[0]
            .weight_by_arm
            .insert("treatment".into(), 0.83);
        policy.rules[0].choose[1]
            .weight_by_arm
            .insert("treatment".into(), 0.17);
        let model = ScriptedModel::new(policy).unwrap();
        let prompt = obs_prompt(&Observation::home(0));
        let rate = |arm: &str| {
            let hits = (0..2000)
                .filter(|i| {
                    model
                        .chat(&CallContext::new(format!("s{i}"), 0, 0, arm), &prompt)
                        .unwrap()
                        == "purchase"
                })
                .count();
            hits as f64 / 2000.0
        };
        let control = rate("control");
        let treatment = rate("treatment");
        assert!((control - 0.81).abs() < 0.03, "control = {control}");
        assert!((treatment - 0.83).abs() < 0.03, "treatment = {treatment}");
    }

    #[test]
    fn empty_messages_error() {
        let model = ScriptedModel::new(home_policy()).unwrap();
        let err = model
            .chat(&CallContext::new("s", 0, 0, "control"), &[])
            .unwrap_err();
        assert!(matches!(err, ModelError::EmptyMessages));
    }

    #[test]
    fn goal_and_query_placeholders_substitute_from_the_prompt() {
        let policy = ScriptedPolicy {
            rules: vec![
                PolicyRule {
                    when: RulePredicate::Page {
                        page_type: PageType::Home,
                        min_products: 0,
                        has_filter_option: None,
                    },
                    choose: vec![RuleChoice {
                        action: "search(\"{goal}\")".into(),
                        weight: None,
                        weight_by_arm: BTreeMap::new(),
                    }],
                },
                PolicyRule {
                    when: RulePredicate::Always,
                    choose: vec![RuleChoice {
                        action: "search(\"{query} cheap\")".into(),
                        weight: None,
                        weight_by_arm: BTreeMap::new(),
                    }],
                },
            ],
            seed: 0,
        };
        let model = ScriptedModel::new(policy).unwrap();
        let ctx = CallContext::new("s", 0, 0, "control");
        let reply = model
            .chat(&ctx, &obs_prompt(&Observation::home(0)))
            .unwrap();
        assert_eq!(reply, "search(\"find a solar filter for telescope\")");

        let mut results = Observation::home(0);
        results.page_type = PageType::SearchResults;
        results.query = Some("solar filter".into());
        let reply = model.chat(&ctx, &obs_prompt(&results)).unwrap();
        assert_eq!(reply, "search(\"solar filter cheap\")");
    }

    /// One-shot HTTP stub: answers `fail_times` requests with 500, then
    /// returns the fixed completion body.
    fn spawn_chat_stub(fail_times: u32, content: &str) -> (String, Arc<AtomicU32>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicU32::new(0));
        let hits_clone = hits.clone();
        let content = content.to_string();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let mut content_length = 0usize;
                loop {
                    let mut header = String::new();
                    reader.read_line(&mut header).unwrap();
                    if header == "\r\n" || header.is_empty() {
                        break;
                    }
                    if let Some(rest) = header.to_ascii_lowercase().strip_prefix("content-length:")
                    {
                        content_length = rest.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; content_length];
                reader.read_exact(&mut body).unwrap();
                let n = hits_clone.fetch_add(1, Ordering::SeqCst);
                let response = if n < fail_times {
                    "HTTP/1.1 500 Internal Server Error\r\nContent-Length: 5\r\nConnection: close\r\n\r\noops."
                        .to_string()
                } else {
                    let payload = serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": content}}]
                    })
                    .to_string();
                    format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                        payload.len(),
                        payload
                    )
                };
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        (format!("http://{}/v1/chat/completions", addr), hits)
    }

    fn http_config(endpoint: String, retries: u32) -> ModelConfig {
        ModelConfig {
            endpoint,
            model_name: "stub".into(),
            temperature: 0.7,
            max_tokens: 64,
            timeout_s: 5.0,
            retries,
            backoff_base_s: 0.01,
            api_key_env: None,
        }
    }

    #[test]
    fn http_chat_returns_stub_body_verbatim() {
        let (endpoint, _) = spawn_chat_stub(0, "click_product(2)");
        let model = HttpModel::new(http_config(endpoint, 0)).unwrap();
        let reply = model
            .chat(
                &CallContext::new("s", 0, 0, "control"),
                &[Message::user("hello")],
            )
            .unwrap();
        assert_eq!(reply, "click_product(2)");
    }

    #[test]
    fn http_chat_retries_transient_failures() {
        let (endpoint, hits) = spawn_chat_stub(2, "stop");
        let model = HttpModel::new(http_config(endpoint, 3)).unwrap();
        let reply = model
            .chat(
                &CallContext::new("s", 0, 0, "control"),
                &[Message::user("hello")],
            )
            .unwrap();
        assert_eq!(reply, "stop");
        assert_eq!(model.retries_observed(), 2);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn http_chat_exhausts_retries() {
        let (endpoint, _) = spawn_chat_stub(10, "stop");
        let model = HttpModel::new(http_config(endpoint, 2)).unwrap();
        let err = model
            .chat(
                &CallContext::new("s", 0, 0, "control"),
                &[Message::user("hello")],
            )
            .unwrap_err();
        assert!(matches!(err, ModelError::Status { status: 500, .. }));
        assert_eq!(model.retries_observed(), 2);
    }

    #[test]
    fn http_empty_messages_is_a_precondition_error() {
        let model = HttpModel::new(http_config("http://127.0.0.1:1/none".into(), 0)).unwrap();
        assert!(matches!(
            model.chat(&CallContext::new("s", 0, 0, "x"), &[]),
            Err(ModelError::EmptyMessages)
        ));
    }
}
