//! The decision loop: assemble prompts from persona, intention, history, and
//! observation; parse model output into an action; enforce termination; and
//! produce a session trace.

use crate::env::{
    action_space, Action, ActionSpace, EnvSession, ExecResult, ExecStatus, Observation,
    OBSERVATION_MARKER,
};
use crate::model::{CallContext, Message, ModelClient, INTENTION_MARKER};
use crate::persona::{Intention, Persona};
use crate::trace::{OutcomeKind, SessionOutcome, SessionTrace, StepRecord, TRACE_SCHEMA_VERSION};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::OnceLock;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLimits {
    #[serde(default = "default_max_actions")]
    pub max_actions: u32,
    #[serde(default = "default_max_wall_time_s")]
    pub max_wall_time_s: f64,
    #[serde(default = "default_loop_window")]
    pub loop_window: u32,
}

fn default_max_actions() -> u32 {
    20
}
fn default_max_wall_time_s() -> f64 {
    600.0
}
fn default_loop_window() -> u32 {
    3
}

impl Default for SessionLimits {
    fn default() -> Self {
        SessionLimits {
            max_actions: default_max_actions(),
            max_wall_time_s: default_max_wall_time_s(),
            loop_window: default_loop_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentStatus {
    Running,
    Done(SessionOutcome),
}

/// Mutable per-session state driving the loop.
#[derive(Debug)]
pub struct AgentState {
    pub persona: Persona,
    pub intention: Intention,
    pub arm: String,
    pub step_index: u32,
    pub history: Vec<StepRecord>,
    pub status: AgentStatus,
}

impl AgentState {
    pub fn new(persona: Persona, intention: Intention, arm: impl Into<String>) -> Self {
        AgentState {
            persona,
            intention,
            arm: arm.into(),
            step_index: 0,
            history: Vec::new(),
            status: AgentStatus::Running,
        }
    }
}

const TEMPLATE_SPLIT_MARKER: &str = "---USER---";

/// Prompt template with named placeholders; the system and user halves are
/// separated by a `---USER---` line so researchers can edit the asset
/// without rebuilding.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    system: String,
    user: String,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("io error: {0}")]
    Io(String),
    #[error("template is missing the {TEMPLATE_SPLIT_MARKER} separator line")]
    MissingSeparator,
    #[error("template is missing the {{{0}}} placeholder")]
    MissingPlaceholder(&'static str),
    #[error("template is missing the {OBSERVATION_MARKER:?} marker line")]
    MissingObservationMarker,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let (system, user) = text
            .split_once(&format!("{}\n", TEMPLATE_SPLIT_MARKER))
            .or_else(|| text.split_once(TEMPLATE_SPLIT_MARKER))
            .ok_or(TemplateError::MissingSeparator)?;
        for placeholder in ["persona_document", "intention"] {
            if !system.contains(&format!("{{{}}}", placeholder)) {
                return Err(TemplateError::MissingPlaceholder(placeholder));
            }
        }
        for placeholder in ["observation_json", "action_space", "grammar"] {
            if !user.contains(&format!("{{{}}}", placeholder)) {
                return Err(TemplateError::MissingPlaceholder(placeholder));
            }
        }
        // The scripted backend locates the observation by this marker line,
        // so an edited template must keep it.
        if !user.contains(OBSERVATION_MARKER) {
            return Err(TemplateError::MissingObservationMarker);
        }
        Ok(PromptTemplate {
            system: system.to_string(),
            user: user.to_string(),
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Io(format!("{}: {}", path.display(), e)))?;
        Self::parse(&text)
    }

    pub fn bundled() -> Self {
        Self::parse(include_str!("../assets/prompt_template.txt"))
            .expect("bundled template is well-formed")
    }
}

const ACTION_GRAMMAR: &str = "search(\"<query>\") | click_product(<index>) | \
    click_filter_option(\"<Group>: <Value>\") | purchase | stop";

fn render_history(history: &[StepRecord], window: usize) -> String {
    if history.is_empty() {
        return String::new();
    }
    let start = history.len().saturating_sub(window);
    let mut out = String::from("Recent steps:\n");
    for record in &history[start..] {
        let action = match (&record.action, &record.parse_error) {
            (Some(a), _) => a.to_command(),
            (None, Some(_)) => "<unparseable reply>".to_string(),
            (None, None) => "<none>".to_string(),
        };
        let result = match &record.exec {
            Some(ExecResult {
                status: ExecStatus::Ok,
                ..
            }) => "ok".to_string(),
            Some(ExecResult {
                status: ExecStatus::Recovered { strategy },
                ..
            }) => format!("recovered ({:?})", strategy).to_lowercase(),
            Some(ExecResult {
                status: ExecStatus::Failed { .. },
                ..
            }) => "failed".to_string(),
            None => "not executed".to_string(),
        };
        out.push_str(&format!(
            "step {}: {} -> {}\n",
            record.step_index + 1,
            action,
            result
        ));
    }
    out.push('\n');
    out
}

fn render_action_space(space: &ActionSpace) -> String {
    let mut lines = Vec::new();
    if space.search {
        lines.push("- search(\"<query>\")".to_string());
    }
    if !space.product_indices.is_empty() {
        let indices: Vec<String> = space
            .product_indices
            .iter()
            .map(|i| i.to_string())
            .collect();
        lines.push(format!(
            "- click_product(N) for N in {{{}}}",
            indices.join(", ")
        ));
    }
    if !space.filter_options.is_empty() {
        let options: Vec<String> = space
            .filter_options
            .iter()
            .map(|(g, v)| format!("{}: {}", g, v))
            .collect();
        lines.push(format!(
            "- click_filter_option(\"<Group>: <Value>\") for: {}",
            options.join(" | ")
        ));
    }
    if space.purchase {
        lines.push("- purchase".to_string());
    }
    lines.push("- stop".to_string());
    lines.join("\n")
}

/// Renders the fixed two-message prompt for the next action prediction.
pub fn build_prompt(
    state: &AgentState,
    obs: &Observation,
    space: &ActionSpace,
    template: &PromptTemplate,
    limits: &SessionLimits,
) -> Vec<Message> {
    let system = template
        .system
        .replace("{persona_document}", &state.persona.document())
        .replace("{intention}", &state.intention.goal_text);
    debug_assert!(system.contains(INTENTION_MARKER));
    let history_window = (limits.loop_window as usize) * 3;
    let user = template
        .user
        .replace("{history}", &render_history(&state.history, history_window))
        .replace("{observation_json}", &obs.canonical_json())
        .replace("{action_space}", &render_action_space(space))
        .replace("{grammar}", ACTION_GRAMMAR);
    vec![Message::system(system), Message::user(user)]
}

pub fn prompt_digest(messages: &[Message]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        hasher.update([match m.role {
            crate::model::Role::System => 0u8,
            crate::model::Role::User => 1,
            crate::model::Role::Assistant => 2,
        }]);
        hasher.update(m.content.as_bytes());
        hasher.update([0xff]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Error, PartialEq)]
pub enum ActionParseError {
    #[error("no parseable action in reply: {snippet:?}")]
    NoAction { snippet: String },
    #[error("action {action} is outside the current action space: {reason}")]
    OutOfSpace { action: String, reason: String },
}

struct Grammar {
    search: Regex,
    search_brace: Regex,
    click_product: Regex,
    click_product_brace: Regex,
    click_filter: Regex,
    click_filter_brace: Regex,
    purchase: Regex,
    stop: Regex,
}

fn grammar() -> &'static Grammar {
    static GRAMMAR: OnceLock<Grammar> = OnceLock::new();
    GRAMMAR.get_or_init(|| Grammar {
        search: Regex::new(r#"(?i)\bsearch\s*\(\s*["'“”]?\s*([^)"'“”]+?)\s*["'“”]?\s*\)"#).unwrap(),
        search_brace: Regex::new(r#"(?i)\{\s*search\s+["'“”]?\s*([^}"'“”]+?)\s*["'“”]?\s*\}"#)
            .unwrap(),
        click_product: Regex::new(r"(?i)\bclick[_\s]?product\s*\(\s*(\d+)\s*\)").unwrap(),
        click_product_brace: Regex::new(r"(?i)\{\s*click[_\s]?product\s+(\d+)\s*\}").unwrap(),
        click_filter: Regex::new(
            r#"(?i)\bclick[_\s]?filter[_\s]?option\s*\(\s*["'“”]?\s*([^):"'“”]+?)\s*:\s*([^)"'“”]+?)\s*["'“”]?\s*\)"#,
        )
        .unwrap(),
        click_filter_brace: Regex::new(
            r#"(?i)\{\s*click[_\s]?filter[_\s]?option\s+["'“”]?\s*([^}:"'“”]+?)\s*:\s*([^}"'“”]+?)\s*["'“”]?\s*\}"#,
        )
        .unwrap(),
        purchase: Regex::new(r"(?i)\bpurchase\b").unwrap(),
        stop: Regex::new(r"(?i)\bstop\b").unwrap(),
    })
}

/// Scans the reply for the first well-formed action in either the canonical
/// form or the brace form, case-insensitively.
fn scan_action(text: &str) -> Option<(usize, Action)> {
    let g = grammar();
    let mut candidates: Vec<(usize, Action)> = Vec::new();
    for re in [&g.search, &g.search_brace] {
        if let Some(c) = re.captures(text) {
            candidates.push((
                c.get(0).unwrap().start(),
                Action::Search {
                    query: c[1].trim().to_string(),
                },
            ));
        }
    }
    for re in [&g.click_product, &g.click_product_brace] {
        if let Some(c) = re.captures(text) {
            if let Ok(index) = c[1].parse::<usize>() {
                candidates.push((c.get(0).unwrap().start(), Action::ClickProduct { index }));
            }
        }
    }
    for re in [&g.click_filter, &g.click_filter_brace] {
        if let Some(c) = re.captures(text) {
            candidates.push((
                c.get(0).unwrap().start(),
                Action::ClickFilter {
                    group: c[1].trim().to_string(),
                    value: c[2].trim().to_string(),
                },
            ));
        }
    }
    if let Some(m) = g.purchase.find(text) {
        candidates.push((m.start(), Action::Purchase));
    }
    if let Some(m) = g.stop.find(text) {
        candidates.push((m.start(), Action::Stop));
    }
    // Earliest match wins; insertion order above breaks position ties in
    // favor of the argumented forms.
    candidates.into_iter().min_by_key(|(start, _)| *start)
}

/// Parses the first action out of the reply and checks it against the
/// action space. Filter actions are normalized to the space's exact casing.
pub fn parse_action(text: &str, space: &ActionSpace) -> Result<Action, ActionParseError> {
    let (_, action) = scan_action(text).ok_or_else(|| ActionParseError::NoAction {
        snippet: text.chars().take(120).collect(),
    })?;
    let action = match action {
        Action::ClickFilter { group, value } => match space.resolve_filter(&group, &value) {
            Some((group, value)) => Action::ClickFilter { group, value },
            None => Action::ClickFilter { group, value },
        },
        other => other,
    };
    space
        .check(&action)
        .map_err(|reason| ActionParseError::OutOfSpace {
            action: action.to_command(),
            reason,
        })?;
    Ok(action)
}

/// The model text preceding the matched action, if any; kept as the step's
/// rationale.
pub fn extract_rationale(text: &str) -> Option<String> {
    let (start, _) = scan_action(text)?;
    let rationale = text[..start].trim();
    if rationale.is_empty() {
        None
    } else {
        Some(rationale.to_string())
    }
}

/// Termination rule, evaluated between steps in the stated priority order:
/// stopped, looping, action cap, time cap.
pub fn decide_termination(
    history: &[StepRecord],
    limits: &SessionLimits,
    elapsed_s: f64,
) -> Option<OutcomeKind> {
    if let Some(last) = history.last() {
        if matches!(last.action, Some(Action::Stop)) {
            return Some(OutcomeKind::Stopped);
        }
    }
    let window = limits.loop_window as usize;
    if window >= 1 && history.len() >= window {
        let tail = &history[history.len() - window..];
        if tail.iter().all(|r| r.action.is_some()) {
            let first = tail[0].action.as_ref().expect("checked above");
            if tail[1..].iter().all(|r| r.action.as_ref() == Some(first)) {
                return Some(OutcomeKind::Looping);
            }
        }
    }
    if history.len() >= limits.max_actions as usize {
        return Some(OutcomeKind::ActionCap);
    }
    if elapsed_s >= limits.max_wall_time_s {
        return Some(OutcomeKind::TimeCap);
    }
    None
}

fn finalize(
    state: AgentState,
    kind: OutcomeKind,
    session_id: &str,
    duration_s: f64,
) -> SessionTrace {
    let totals = SessionTrace::recompute_totals(&state.history);
    let spend = SessionTrace::recompute_spend(&state.history);
    let purchases = totals.get("purchase").copied().unwrap_or(0);
    SessionTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        session_id: session_id.to_string(),
        persona_id: state.persona.id.clone(),
        arm: state.arm.clone(),
        outcome: SessionOutcome {
            kind,
            converted: purchases >= 1,
            purchases,
            spend,
        },
        steps: state.history,
        totals,
        spend,
        duration_s,
    }
}

/// Runs one full agent session: observe, prompt, parse, execute, record,
/// until a terminal condition fires. Model and environment failures become
/// parse_failure / exec_failure outcomes, never a crash.
#[allow(clippy::too_many_arguments)]
pub fn run_session(
    persona: &Persona,
    intention: &Intention,
    arm: &str,
    env: &mut dyn EnvSession,
    model: &dyn ModelClient,
    limits: &SessionLimits,
    template: &PromptTemplate,
    session_id: &str,
    seed: u64,
) -> SessionTrace {
    let started = Instant::now();
    let mut state = AgentState::new(persona.clone(), intention.clone(), arm);

    let kind = loop {
        if let Some(kind) =
            decide_termination(&state.history, limits, started.elapsed().as_secs_f64())
        {
            break kind;
        }
        let step_started = Instant::now();
        let obs = match env.observe() {
            Ok(obs) => obs,
            Err(_) => break OutcomeKind::ExecFailure,
        };
        let space = action_space(&obs);
        let messages = build_prompt(&state, &obs, &space, template, limits);
        let ctx = CallContext::new(session_id, seed, state.step_index, arm);

        let mut digest = prompt_digest(&messages);
        let mut text = match model.chat(&ctx, &messages) {
            Ok(text) => text,
            Err(e) => {
                state.history.push(StepRecord {
                    step_index: state.step_index,
                    observation: obs,
                    prompt_digest: digest,
                    raw_model_text: String::new(),
                    action: None,
                    parse_error: Some(format!("model transport failure: {}", e)),
                    exec: None,
                    rationale: None,
                    wall_time_s: step_started.elapsed().as_secs_f64(),
                });
                break OutcomeKind::ParseFailure;
            }
        };

        let action = match parse_action(&text, &space) {
            Ok(action) => action,
            Err(first_err) => {
                // One corrective re-prompt with the parser error appended.
                let mut retry_messages = messages.clone();
                retry_messages.push(Message::assistant(text.clone()));
                retry_messages.push(Message::user(format!(
                    "Your reply did not contain a valid action ({}). Reply with exactly one \
                     action:\n{}",
                    first_err, ACTION_GRAMMAR
                )));
                digest = prompt_digest(&retry_messages);
                let retry_outcome = model
                    .chat(&ctx, &retry_messages)
                    .map_err(|e| format!("model transport failure: {}", e))
                    .and_then(|retry_text| {
                        text = retry_text;
                        parse_action(&text, &space).map_err(|e| e.to_string())
                    });
                match retry_outcome {
                    Ok(action) => action,
                    Err(second_err) => {
                        state.history.push(StepRecord {
                            step_index: state.step_index,
                            observation: obs,
                            prompt_digest: digest,
                            raw_model_text: text,
                            action: None,
                            parse_error: Some(second_err),
                            exec: None,
                            rationale: None,
                            wall_time_s: step_started.elapsed().as_secs_f64(),
                        });
                        break OutcomeKind::ParseFailure;
                    }
                }
            }
        };

        let rationale = extract_rationale(&text);
        let exec = match env.execute(&action) {
            Ok(result) => result,
            Err(e) => ExecResult {
                status: ExecStatus::Failed {
                    reason: e.to_string(),
                },
                latency_s: 0.0,
            },
        };
        let failed = exec.is_failure();
        state.history.push(StepRecord {
            step_index: state.step_index,
            observation: obs,
            prompt_digest: digest,
            raw_model_text: text,
            action: Some(action),
            parse_error: None,
            exec: Some(exec),
            rationale,
            wall_time_s: step_started.elapsed().as_secs_f64(),
        });
        state.step_index += 1;
        if failed {
            break OutcomeKind::ExecFailure;
        }
    };

    finalize(state, kind, session_id, started.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvError, FilterGroup, FilterOption, PageType, ProductSummary};
    use crate::mockshop::{Catalog, MockShopSession, Product, VariantConfig};
    use crate::model::{
        ModelError, PolicyRule, RuleChoice, RulePredicate, ScriptedModel, ScriptedPolicy,
    };
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn persona() -> Persona {
        crate::persona::parse_persona_document(
            "Persona: Marcus\n\nBackground:\nDesigns visuals for studios.\n\nDemographics:\n\n\
             Age: 35\n\nGender: Male\n\nEducation: Bachelor's degree in Visual Communication\n\n\
             Profession: Freelance Graphic Designer\n\nIncome: $70,000\n\nFinancial Situation:\n\
             Stable with a buffer.\n\nShopping Habits:\nReads reviews.\n\nProfessional Life:\n\
             Deadline-driven.\n\nPersonal Style:\nBold prints.\n",
            "p00001",
        )
    }

    fn intention() -> Intention {
        Intention {
            goal_text: "find a solar filter for telescope under $60".into(),
            budget_limit: Some(60.0),
            category_hint: Some("camera".into()),
        }
    }

    fn results_space() -> ActionSpace {
        action_space(&results_obs())
    }

    fn results_obs() -> Observation {
        Observation {
            page_type: PageType::SearchResults,
            query: Some("solar filter".into()),
            products: vec![
                ProductSummary {
                    index: 1,
                    title: "Solar Filter".into(),
                    price: 55.14,
                    rating: 4.5,
                    review_count: 100,
                },
                ProductSummary {
                    index: 2,
                    title: "Another".into(),
                    price: 20.0,
                    rating: 4.0,
                    review_count: 10,
                },
                ProductSummary {
                    index: 3,
                    title: "Third".into(),
                    price: 30.0,
                    rating: 3.5,
                    review_count: 5,
                },
            ],
            filter_groups: vec![FilterGroup {
                name: "Brand".into(),
                options: vec![
                    FilterOption {
                        value: "Sony".into(),
                        selected: false,
                    },
                    FilterOption {
                        value: "Bose".into(),
                        selected: false,
                    },
                ],
            }],
            detail: None,
            cart_count: 0,
            notices: Vec::new(),
        }
    }

    #[test]
    fn parses_canonical_and_variant_spellings() {
        let space = results_space();
        assert_eq!(
            parse_action("Click_product(3)", &space).unwrap(),
            Action::ClickProduct { index: 3 }
        );
        assert_eq!(
            parse_action("Click_filter_option(Brand: Sony)", &space).unwrap(),
            Action::ClickFilter {
                group: "Brand".into(),
                value: "Sony".into()
            }
        );
        assert_eq!(
            parse_action("Search(\"Wireless earbuds\")", &space).unwrap(),
            Action::Search {
                query: "Wireless earbuds".into()
            }
        );
        assert_eq!(
            parse_action("{search \"solar filter for telescope\"}", &space).unwrap(),
            Action::Search {
                query: "solar filter for telescope".into()
            }
        );
        assert_eq!(
            parse_action("I think I'm done. stop", &space).unwrap(),
            Action::Stop
        );
        // Curly quotes from copy-pasted text parse too.
        assert_eq!(
            parse_action("{search “solar filter for telescope”}", &space).unwrap(),
            Action::Search {
                query: "solar filter for telescope".into()
            }
        );
    }

    #[test]
    fn earliest_match_wins_and_rationale_precedes_it() {
        let space = results_space();
        let text = "The second listing looks right for the budget. click_product(2) then stop";
        assert_eq!(
            parse_action(text, &space).unwrap(),
            Action::ClickProduct { index: 2 }
        );
        assert_eq!(
            extract_rationale(text).unwrap(),
            "The second listing looks right for the budget."
        );
    }

    #[test]
    fn parse_errors_are_distinct() {
        let space = results_space();
        assert!(matches!(
            parse_action("hmm, not sure what to do", &space),
            Err(ActionParseError::NoAction { .. })
        ));
        assert!(matches!(
            parse_action("click_product(9)", &space),
            Err(ActionParseError::OutOfSpace { .. })
        ));
        // purchase is not available on a results page
        assert!(matches!(
            parse_action("purchase", &space),
            Err(ActionParseError::OutOfSpace { .. })
        ));
    }

    #[test]
    fn filter_actions_normalize_to_listed_casing() {
        let space = results_space();
        assert_eq!(
            parse_action("click_filter_option(\"brand: SONY\")", &space).unwrap(),
            Action::ClickFilter {
                group: "Brand".into(),
                value: "Sony".into()
            }
        );
    }

    #[test]
    fn grammar_round_trip_on_command_forms() {
        let space = results_space();
        let actions = [
            Action::Search {
                query: "usb-c hub with hdmi".into(),
            },
            Action::ClickProduct { index: 2 },
            Action::ClickFilter {
                group: "Brand".into(),
                value: "Sony".into(),
            },
            Action::Stop,
        ];
        for action in actions {
            assert_eq!(parse_action(&action.to_command(), &space).unwrap(), action);
        }
    }

    #[test]
    fn prompt_contains_persona_and_observation_verbatim() {
        let state = AgentState::new(persona(), intention(), "control");
        let obs = results_obs();
        let space = action_space(&obs);
        let template = PromptTemplate::bundled();
        let messages = build_prompt(&state, &obs, &space, &template, &SessionLimits::default());
        assert_eq!(messages.len(), 2);
        assert!(messages[0].content.contains("Age: 35"));
        assert!(messages[0]
            .content
            .contains("Intention: find a solar filter for telescope under $60"));
        assert!(messages[1].content.contains(&obs.canonical_json()));
        assert!(messages[1].content.contains(OBSERVATION_MARKER));
        assert!(messages[1]
            .content
            .contains("click_product(N) for N in {1, 2, 3}"));
        // Empty history emits no history section.
        assert!(!messages[1].content.contains("Recent steps:"));
        // Identical inputs give an identical digest.
        let again = build_prompt(&state, &obs, &space, &template, &SessionLimits::default());
        assert_eq!(prompt_digest(&messages), prompt_digest(&again));
    }

    fn record(step_index: u32, action: Action) -> StepRecord {
        StepRecord {
            step_index,
            observation: Observation::home(0),
            prompt_digest: "d".into(),
            raw_model_text: action.to_command(),
            action: Some(action),
            parse_error: None,
            exec: Some(ExecResult::ok(0.0)),
            rationale: None,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn termination_rules_fire_in_order() {
        let limits = SessionLimits::default();
        // Stop on the last step.
        let history = vec![record(0, Action::Stop)];
        assert_eq!(
            decide_termination(&history, &limits, 0.0),
            Some(OutcomeKind::Stopped)
        );
        // Three identical searches loop.
        let search = Action::Search { query: "x".into() };
        let history: Vec<StepRecord> = (0..3).map(|i| record(i, search.clone())).collect();
        assert_eq!(
            decide_termination(&history, &limits, 0.0),
            Some(OutcomeKind::Looping)
        );
        // Twenty varied steps hit the action cap.
        let history: Vec<StepRecord> = (0..20)
            .map(|i| {
                let action = if i % 2 == 0 {
                    Action::Search {
                        query: format!("q{}", i),
                    }
                } else {
                    Action::ClickProduct {
                        index: (i % 3 + 1) as usize,
                    }
                };
                record(i, action)
            })
            .collect();
        assert_eq!(
            decide_termination(&history, &limits, 0.0),
            Some(OutcomeKind::ActionCap)
        );
        // Time cap.
        assert_eq!(
            decide_termination(&history[..4], &limits, 601.0),
            Some(OutcomeKind::TimeCap)
        );
        // Step 5 with varied actions keeps running.
        assert_eq!(decide_termination(&history[..5], &limits, 1.0), None);
    }

    fn shop_catalog() -> Arc<Catalog> {
        Arc::new(
            Catalog::from_products(vec![Product {
                id: "sku-001".into(),
                title: "Solar Filter for 70mm Telescope".into(),
                brand: "OptiView".into(),
                price: 60.99,
                rating: 4.5,
                review_count: 200,
                department: "Camera & Photo".into(),
                attributes: BTreeMap::new(),
            }])
            .unwrap(),
        )
    }

    fn rule(when: RulePredicate, action: &str) -> PolicyRule {
        PolicyRule {
            when,
            choose: vec![RuleChoice {
                action: action.into(),
                weight: None,
                weight_by_arm: BTreeMap::new(),
            }],
        }
    }

    fn page(page_type: PageType) -> RulePredicate {
        RulePredicate::Page {
            page_type,
            min_products: 0,
            has_filter_option: None,
        }
    }

    #[test]
    fn scripted_path_produces_expected_totals() {
        let policy = ScriptedPolicy {
            rules: vec![
                rule(page(PageType::Home), "search(\"solar filter telescope\")"),
                rule(
                    RulePredicate::Page {
                        page_type: PageType::SearchResults,
                        min_products: 1,
                        has_filter_option: None,
                    },
                    "click_product(1)",
                ),
                rule(page(PageType::ProductDetail), "purchase"),
                rule(page(PageType::PurchaseConfirmation), "stop"),
                rule(RulePredicate::Always, "stop"),
            ],
            seed: 5,
        };
        let model = ScriptedModel::new(policy).unwrap();
        let mut env = MockShopSession::new(shop_catalog(), VariantConfig::full());
        let trace = run_session(
            &persona(),
            &intention(),
            "control",
            &mut env,
            &model,
            &SessionLimits::default(),
            &PromptTemplate::bundled(),
            "sess-p00001",
            42,
        );
        assert_eq!(trace.outcome.kind, OutcomeKind::Stopped);
        assert!(trace.outcome.converted);
        assert_eq!(trace.totals["search"], 1);
        assert_eq!(trace.totals["click_product"], 1);
        assert_eq!(trace.totals["purchase"], 1);
        assert_eq!(trace.totals["stop"], 1);
        assert_eq!(trace.steps.len(), 4);
        assert!((trace.spend - 60.99).abs() < 1e-9);
        assert!(trace.validate().is_ok());
    }

    #[test]
    fn repeating_search_terminates_as_looping_at_step_three() {
        let policy = ScriptedPolicy {
            rules: vec![rule(RulePredicate::Always, "search(\"x\")")],
            seed: 1,
        };
        let model = ScriptedModel::new(policy).unwrap();
        let mut env = MockShopSession::new(shop_catalog(), VariantConfig::full());
        let trace = run_session(
            &persona(),
            &intention(),
            "control",
            &mut env,
            &model,
            &SessionLimits::default(),
            &PromptTemplate::bundled(),
            "sess-p00001",
            1,
        );
        assert_eq!(trace.outcome.kind, OutcomeKind::Looping);
        assert_eq!(trace.steps.len(), 3);
    }

    /// Model that replies with prose, never an action.
    struct BabblingModel;
    impl ModelClient for BabblingModel {
        fn chat(&self, _: &CallContext, _: &[Message]) -> Result<String, ModelError> {
            Ok("Let me think about the options here.".into())
        }
    }

    #[test]
    fn unparseable_replies_get_one_retry_then_parse_failure() {
        let mut env = MockShopSession::new(shop_catalog(), VariantConfig::full());
        let trace = run_session(
            &persona(),
            &intention(),
            "control",
            &mut env,
            &BabblingModel,
            &SessionLimits::default(),
            &PromptTemplate::bundled(),
            "sess-p00001",
            1,
        );
        assert_eq!(trace.outcome.kind, OutcomeKind::ParseFailure);
        assert_eq!(trace.steps.len(), 1);
        assert!(trace.steps[0].action.is_none());
        assert!(trace.steps[0].parse_error.is_some());
        assert!(trace.validate().is_ok());
    }

    /// Model whose first reply is junk and second is valid; the corrective
    /// re-prompt must recover within the same step.
    struct SecondTryModel {
        calls: std::sync::atomic::AtomicU32,
    }
    impl ModelClient for SecondTryModel {
        fn chat(&self, _: &CallContext, messages: &[Message]) -> Result<String, ModelError> {
            let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if n == 0 {
                assert_eq!(messages.len(), 2);
                Ok("hmm".into())
            } else if n == 1 {
                // The corrective prompt carries the failed reply and error.
                assert_eq!(messages.len(), 4);
                assert!(messages[3]
                    .content
                    .contains("did not contain a valid action"));
                Ok("stop".into())
            } else {
                Ok("stop".into())
            }
        }
    }

    #[test]
    fn corrective_reprompt_recovers_in_the_same_step() {
        let mut env = MockShopSession::new(shop_catalog(), VariantConfig::full());
        let model = SecondTryModel {
            calls: std::sync::atomic::AtomicU32::new(0),
        };
        let trace = run_session(
            &persona(),
            &intention(),
            "control",
            &mut env,
            &model,
            &SessionLimits::default(),
            &PromptTemplate::bundled(),
            "sess-p00001",
            1,
        );
        assert_eq!(trace.outcome.kind, OutcomeKind::Stopped);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].action, Some(Action::Stop));
    }

    /// Environment that fails on execute.
    struct BrokenEnv;
    impl EnvSession for BrokenEnv {
        fn observe(&mut self) -> Result<Observation, EnvError> {
            Ok(Observation::home(0))
        }
        fn execute(&mut self, _: &Action) -> Result<ExecResult, EnvError> {
            Err(EnvError::SessionLost("connection dropped".into()))
        }
    }

    #[test]
    fn environment_failure_becomes_exec_failure_outcome() {
        let policy = ScriptedPolicy {
            rules: vec![rule(RulePredicate::Always, "search(\"x\")")],
            seed: 1,
        };
        let model = ScriptedModel::new(policy).unwrap();
        let mut env = BrokenEnv;
        let trace = run_session(
            &persona(),
            &intention(),
            "control",
            &mut env,
            &model,
            &SessionLimits::default(),
            &PromptTemplate::bundled(),
            "sess-p00001",
            1,
        );
        assert_eq!(trace.outcome.kind, OutcomeKind::ExecFailure);
        assert_eq!(trace.steps.len(), 1);
        assert!(trace.steps[0].exec.as_ref().unwrap().is_failure());
        assert!(trace.validate().is_ok());
    }

    #[test]
    fn exhausted_wall_clock_ends_as_time_cap() {
        let policy = ScriptedPolicy {
            rules: vec![rule(RulePredicate::Always, "stop")],
            seed: 1,
        };
        let model = ScriptedModel::new(policy).unwrap();
        let mut env = MockShopSession::new(shop_catalog(), VariantConfig::full());
        let limits = SessionLimits {
            max_wall_time_s: 0.0,
            ..SessionLimits::default()
        };
        let trace = run_session(
            &persona(),
            &intention(),
            "control",
            &mut env,
            &model,
            &limits,
            &PromptTemplate::bundled(),
            "sess-p00001",
            1,
        );
        assert_eq!(trace.outcome.kind, OutcomeKind::TimeCap);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn action_cap_is_never_exceeded() {
        // Alternates two searches so the loop detector never fires.
        struct AlternatingModel;
        impl ModelClient for AlternatingModel {
            fn chat(&self, ctx: &CallContext, _: &[Message]) -> Result<String, ModelError> {
                Ok(if ctx.step_index.is_multiple_of(2) {
                    "search(\"first thing\")".into()
                } else {
                    "search(\"second thing\")".into()
                })
            }
        }
        let mut env = MockShopSession::new(shop_catalog(), VariantConfig::full());
        let trace = run_session(
            &persona(),
            &intention(),
            "control",
            &mut env,
            &AlternatingModel,
            &SessionLimits::default(),
            &PromptTemplate::bundled(),
            "sess-p00001",
            1,
        );
        assert_eq!(trace.outcome.kind, OutcomeKind::ActionCap);
        assert_eq!(trace.steps.len(), 20);
    }
}
