//! Versioned session-trace records: per-step observations, model output,
//! executed actions, and outcomes, persisted one JSON file per session plus
//! an append-only JSONL index, and exportable as CSV.

use crate::env::{Action, ActionKind, ExecResult, ExecStatus, Observation};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Stopped,
    ActionCap,
    TimeCap,
    Looping,
    ExecFailure,
    ParseFailure,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 6] = [
        OutcomeKind::Stopped,
        OutcomeKind::ActionCap,
        OutcomeKind::TimeCap,
        OutcomeKind::Looping,
        OutcomeKind::ExecFailure,
        OutcomeKind::ParseFailure,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeKind::Stopped => "stopped",
            OutcomeKind::ActionCap => "action_cap",
            OutcomeKind::TimeCap => "time_cap",
            OutcomeKind::Looping => "looping",
            OutcomeKind::ExecFailure => "exec_failure",
            OutcomeKind::ParseFailure => "parse_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub kind: OutcomeKind,
    pub converted: bool,
    pub purchases: u32,
    pub spend: f64,
}

/// One loop iteration: what the agent saw, what the model said, what ran.
/// `action` is present exactly when `parse_error` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: u32,
    pub observation: Observation,
    pub prompt_digest: String,
    pub raw_model_text: String,
    pub action: Option<Action>,
    #[serde(default)]
    pub parse_error: Option<String>,
    pub exec: Option<ExecResult>,
    #[serde(default)]
    pub rationale: Option<String>,
    pub wall_time_s: f64,
}

impl StepRecord {
    /// An action counts toward totals when it was parsed and took effect.
    pub fn executed_action(&self) -> Option<&Action> {
        match (&self.action, &self.exec) {
            (Some(action), Some(exec)) if !exec.is_failure() => Some(action),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub schema_version: u32,
    pub session_id: String,
    pub persona_id: String,
    pub arm: String,
    pub steps: Vec<StepRecord>,
    pub outcome: SessionOutcome,
    pub totals: BTreeMap<String, u32>,
    pub spend: f64,
    pub duration_s: f64,
}

impl SessionTrace {
    /// Recomputes per-kind totals from the steps.
    pub fn recompute_totals(steps: &[StepRecord]) -> BTreeMap<String, u32> {
        let mut totals: BTreeMap<String, u32> = ActionKind::ALL
            .iter()
            .map(|k| (k.as_str().to_string(), 0))
            .collect();
        for step in steps {
            if let Some(action) = step.executed_action() {
                *totals.get_mut(action.kind().as_str()).expect("known kind") += 1;
            }
        }
        totals
    }

    /// Recomputes spend as the sum of purchase prices in the steps.
    pub fn recompute_spend(steps: &[StepRecord]) -> f64 {
        steps
            .iter()
            .filter(|s| matches!(s.executed_action(), Some(Action::Purchase)))
            .filter_map(|s| s.observation.detail.as_ref())
            .map(|d| d.price)
            .sum()
    }

    pub fn total_actions(&self) -> u32 {
        self.totals.values().sum()
    }

    /// Checks the stored aggregates against recomputation from the steps.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != TRACE_SCHEMA_VERSION {
            return Err(format!(
                "schema_version {} unsupported (expected {})",
                self.schema_version, TRACE_SCHEMA_VERSION
            ));
        }
        for step in &self.steps {
            if step.action.is_some() == step.parse_error.is_some() {
                return Err(format!(
                    "step {}: exactly one of action / parse_error must be present",
                    step.step_index
                ));
            }
            if step.action.is_none() && step.exec.is_some() {
                return Err(format!(
                    "step {}: exec result without a parsed action",
                    step.step_index
                ));
            }
            if step.action.is_some() && step.exec.is_none() {
                return Err(format!(
                    "step {}: parsed action with no exec result",
                    step.step_index
                ));
            }
        }
        let totals = Self::recompute_totals(&self.steps);
        if totals != self.totals {
            return Err(format!(
                "totals mismatch: stored {:?}, recomputed {:?}",
                self.totals, totals
            ));
        }
        let spend = Self::recompute_spend(&self.steps);
        if (spend - self.spend).abs() > 1e-9 {
            return Err(format!(
                "spend mismatch: stored {}, recomputed {}",
                self.spend, spend
            ));
        }
        let purchases = totals.get("purchase").copied().unwrap_or(0);
        if self.outcome.purchases != purchases {
            return Err(format!(
                "outcome.purchases {} != purchase total {}",
                self.outcome.purchases, purchases
            ));
        }
        if self.outcome.converted != (purchases >= 1) {
            return Err("outcome.converted inconsistent with purchase count".into());
        }
        Ok(())
    }

    /// Digest over the behavioral content of the trace: everything except
    /// wall-clock fields, so runs at different parallelism compare equal.
    pub fn behavioral_digest(&self) -> String {
        #[derive(Serialize)]
        struct StepView<'a> {
            observation: &'a Observation,
            prompt_digest: &'a str,
            raw_model_text: &'a str,
            action: &'a Option<Action>,
            parse_error: &'a Option<String>,
            exec_status: Option<&'a ExecStatus>,
            rationale: &'a Option<String>,
        }
        #[derive(Serialize)]
        struct TraceView<'a> {
            schema_version: u32,
            session_id: &'a str,
            persona_id: &'a str,
            arm: &'a str,
            steps: Vec<StepView<'a>>,
            outcome: &'a SessionOutcome,
            totals: &'a BTreeMap<String, u32>,
            spend: f64,
        }
        let view = TraceView {
            schema_version: self.schema_version,
            session_id: &self.session_id,
            persona_id: &self.persona_id,
            arm: &self.arm,
            steps: self
                .steps
                .iter()
                .map(|s| StepView {
                    observation: &s.observation,
                    prompt_digest: &s.prompt_digest,
                    raw_model_text: &s.raw_model_text,
                    action: &s.action,
                    parse_error: &s.parse_error,
                    exec_status: s.exec.as_ref().map(|e| &e.status),
                    rationale: &s.rationale,
                })
                .collect(),
            outcome: &self.outcome,
            totals: &self.totals,
            spend: self.spend,
        };
        let json = serde_json::to_string(&view).expect("trace view serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(String),
    #[error("trace directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("no traces to export")]
    Empty,
}

/// Index line appended to traces.jsonl for each written trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceIndexEntry {
    pub session_id: String,
    pub persona_id: String,
    pub arm: String,
    pub outcome_kind: OutcomeKind,
    pub file: String,
}

/// Writes `<session id>.json` plus an index line. The caller serializes
/// writers (the orchestrator funnels traces through one consumer).
pub fn write_trace(trace: &SessionTrace, dir: &Path) -> Result<PathBuf, TraceError> {
    if !dir.is_dir() {
        return Err(TraceError::MissingDir(dir.to_path_buf()));
    }
    let file_name = format!("{}.json", trace.session_id);
    let path = dir.join(&file_name);
    let json = serde_json::to_string_pretty(trace).expect("trace serializes");
    std::fs::write(&path, json).map_err(|e| TraceError::Io(e.to_string()))?;

    let entry = TraceIndexEntry {
        session_id: trace.session_id.clone(),
        persona_id: trace.persona_id.clone(),
        arm: trace.arm.clone(),
        outcome_kind: trace.outcome.kind,
        file: file_name,
    };
    let mut index = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("traces.jsonl"))
        .map_err(|e| TraceError::Io(e.to_string()))?;
    writeln!(
        index,
        "{}",
        serde_json::to_string(&entry).expect("entry serializes")
    )
    .map_err(|e| TraceError::Io(e.to_string()))?;
    Ok(path)
}

/// Traces that parsed and validated, plus per-file diagnostics for the rest.
#[derive(Debug)]
pub struct TraceLoad {
    pub traces: Vec<SessionTrace>,
    pub rejected: Vec<(PathBuf, String)>,
}

/// Loads every `*.json` trace in the directory (sorted by file name),
/// validating the schema version and the stored-aggregate invariants.
pub fn load_traces(dir: &Path) -> Result<TraceLoad, TraceError> {
    if !dir.is_dir() {
        return Err(TraceError::MissingDir(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| TraceError::Io(e.to_string()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();

    let mut traces = Vec::new();
    let mut rejected = Vec::new();
    for path in paths {
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                rejected.push((path, e.to_string()));
                continue;
            }
        };
        let trace: SessionTrace = match serde_json::from_str(&text) {
            Ok(t) => t,
            Err(e) => {
                rejected.push((path, format!("parse error: {}", e)));
                continue;
            }
        };
        match trace.validate() {
            Ok(()) => traces.push(trace),
            Err(reason) => rejected.push((path, reason)),
        }
    }
    Ok(TraceLoad { traces, rejected })
}

/// Writes one CSV row per session and returns the row count. Rows are sorted
/// by session id so re-exports of the same traces are byte-identical.
pub fn export_tabular(traces: &[SessionTrace], path: &Path) -> Result<usize, TraceError> {
    if traces.is_empty() {
        return Err(TraceError::Empty);
    }
    let mut sorted: Vec<&SessionTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| a.session_id.cmp(&b.session_id));

    let mut writer = csv::Writer::from_path(path).map_err(|e| TraceError::Io(e.to_string()))?;
    writer
        .write_record([
            "session_id",
            "persona_id",
            "arm",
            "n_search",
            "n_click_product",
            "n_click_filter_option",
            "n_purchase",
            "n_stop",
            "total_actions",
            "converted",
            "spend",
            "outcome_kind",
            "duration_s",
        ])
        .map_err(|e| TraceError::Io(e.to_string()))?;
    for trace in &sorted {
        let get = |kind: &str| trace.totals.get(kind).copied().unwrap_or(0).to_string();
        writer
            .write_record([
                trace.session_id.clone(),
                trace.persona_id.clone(),
                trace.arm.clone(),
                get("search"),
                get("click_product"),
                get("click_filter_option"),
                get("purchase"),
                get("stop"),
                trace.total_actions().to_string(),
                trace.outcome.converted.to_string(),
                format!("{:.2}", trace.spend),
                trace.outcome.kind.as_str().to_string(),
                format!("{:.6}", trace.duration_s),
            ])
            .map_err(|e| TraceError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| TraceError::Io(e.to_string()))?;
    Ok(sorted.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PageType;

    fn step(step_index: u32, action: Action) -> StepRecord {
        let observation = match action {
            Action::Purchase => Observation {
                page_type: PageType::ProductDetail,
                query: Some("q".into()),
                products: Vec::new(),
                filter_groups: Vec::new(),
                detail: Some(crate::env::ProductDetail {
                    title: "Thing".into(),
                    brand: "Acme".into(),
                    price: 60.99,
                    rating: 4.5,
                    review_count: 3,
                    department: "Electronics".into(),
                    attributes: BTreeMap::new(),
                }),
                cart_count: 0,
                notices: Vec::new(),
            },
            _ => Observation::home(0),
        };
        StepRecord {
            step_index,
            observation,
            prompt_digest: "d".into(),
            raw_model_text: action.to_command(),
            action: Some(action),
            parse_error: None,
            exec: Some(ExecResult::ok(0.001)),
            rationale: None,
            wall_time_s: 0.002,
        }
    }

    fn sample_trace(session_id: &str) -> SessionTrace {
        let steps = vec![
            step(
                0,
                Action::Search {
                    query: "solar filter".into(),
                },
            ),
            step(1, Action::ClickProduct { index: 1 }),
            step(2, Action::Purchase),
            step(3, Action::Stop),
        ];
        let totals = SessionTrace::recompute_totals(&steps);
        let spend = SessionTrace::recompute_spend(&steps);
        SessionTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            session_id: session_id.into(),
            persona_id: "p00001".into(),
            arm: "control".into(),
            outcome: SessionOutcome {
                kind: OutcomeKind::Stopped,
                converted: true,
                purchases: 1,
                spend,
            },
            steps,
            totals,
            spend,
            duration_s: 0.01,
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let trace = sample_trace("sess-p00001");
        write_trace(&trace, dir.path()).unwrap();
        let load = load_traces(dir.path()).unwrap();
        assert!(load.rejected.is_empty());
        assert_eq!(load.traces, vec![trace]);
        let index = std::fs::read_to_string(dir.path().join("traces.jsonl")).unwrap();
        assert_eq!(index.lines().count(), 1);
    }

    #[test]
    fn tampered_totals_are_rejected_others_load() {
        let dir = tempfile::tempdir().unwrap();
        let good = sample_trace("sess-p00001");
        let mut bad = sample_trace("sess-p00002");
        bad.totals.insert("search".into(), 9);
        write_trace(&good, dir.path()).unwrap();
        write_trace(&bad, dir.path()).unwrap();
        let load = load_traces(dir.path()).unwrap();
        assert_eq!(load.traces.len(), 1);
        assert_eq!(load.traces[0].session_id, "sess-p00001");
        assert_eq!(load.rejected.len(), 1);
        assert!(load.rejected[0].1.contains("totals mismatch"));
    }

    #[test]
    fn empty_dir_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let load = load_traces(dir.path()).unwrap();
        assert!(load.traces.is_empty());
        assert!(load.rejected.is_empty());
    }

    #[test]
    fn export_writes_one_row_per_session_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let traces: Vec<SessionTrace> = (1..=6)
            .map(|i| sample_trace(&format!("sess-p{:05}", i)))
            .collect();
        let path = dir.path().join("sessions.csv");
        let rows = export_tabular(&traces, &path).unwrap();
        assert_eq!(rows, 6);
        let first = std::fs::read(&path).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text
            .lines()
            .next()
            .unwrap()
            .starts_with("session_id,persona_id,arm,n_search"));
        assert!(text.contains("sess-p00001,p00001,control,1,1,0,1,1,4,true,60.99,stopped"));
        export_tabular(&traces, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn behavioral_digest_ignores_wall_times() {
        let a = sample_trace("sess-x");
        let mut b = a.clone();
        b.duration_s = 99.0;
        for s in &mut b.steps {
            s.wall_time_s = 5.0;
            if let Some(exec) = &mut s.exec {
                exec.latency_s = 9.0;
            }
        }
        assert_eq!(a.behavioral_digest(), b.behavioral_digest());
        let mut c = a.clone();
        c.steps.pop();
        c.totals = SessionTrace::recompute_totals(&c.steps);
        assert_ne!(a.behavioral_digest(), c.behavioral_digest());
    }
}
