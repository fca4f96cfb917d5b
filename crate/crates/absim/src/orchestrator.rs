//! Experiment execution: run every (persona, arm) session across a bounded
//! worker pool with per-session fault isolation, stream completed traces to
//! the trace store through a single consumer, and write the run manifest
//! last.

use crate::agent::{run_session, PromptTemplate, SessionLimits};
use crate::allocation::{Allocation, Arm};
use crate::derive_seed;
use crate::env::EnvFactory;
use crate::model::ModelClient;
use crate::persona::PersonaPool;
use crate::trace::{write_trace, OutcomeKind, SessionTrace};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub fingerprint: String,
    pub arms: Vec<Arm>,
    pub allocation: Allocation,
    pub limits: SessionLimits,
    pub parallelism: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("plan validation failed: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("trace store error: {0}")]
    Trace(#[from] crate::trace::TraceError),
}

impl ExperimentPlan {
    pub fn validate(&self, pool: &PersonaPool) -> Result<(), OrchestratorError> {
        if self.parallelism < 1 {
            return Err(OrchestratorError::Validation(
                "parallelism must be ≥ 1".into(),
            ));
        }
        if self.arms.len() < 2 {
            return Err(OrchestratorError::Validation("need at least 2 arms".into()));
        }
        let arm_names: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        for (persona_id, arm) in &self.allocation.assignment {
            if !arm_names.contains(&arm.as_str()) {
                return Err(OrchestratorError::Validation(format!(
                    "allocation assigns {:?} to unknown arm {:?}",
                    persona_id, arm
                )));
            }
            if pool.persona(persona_id).is_none() {
                return Err(OrchestratorError::Validation(format!(
                    "allocation references persona {:?} missing from the pool",
                    persona_id
                )));
            }
        }
        Ok(())
    }

    fn variant_of(&self, arm_name: &str) -> &str {
        self.arms
            .iter()
            .find(|a| a.name == arm_name)
            .map(|a| a.variant_id.as_str())
            .expect("validated arm name")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SessionStatus {
    /// Completed on the first attempt.
    Done { outcome: OutcomeKind },
    /// Crashed once, then completed on the fresh-environment retry.
    Retried { outcome: OutcomeKind },
    /// Crashed twice; no trace was produced.
    Abandoned { error: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub done: u32,
    pub retried: u32,
    pub abandoned: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub plan_fingerprint: String,
    pub tool_version: String,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub sessions: BTreeMap<String, SessionStatus>,
    pub arm_counts: BTreeMap<String, ArmCounts>,
}

impl RunManifest {
    pub fn abandoned(&self) -> u32 {
        self.arm_counts.values().map(|c| c.abandoned).sum()
    }

    pub fn total_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn abandoned_rate(&self) -> f64 {
        if self.sessions.is_empty() {
            0.0
        } else {
            self.abandoned() as f64 / self.sessions.len() as f64
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), OrchestratorError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| OrchestratorError::Io(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Io(format!("{}: {}", path.display(), e)))?;
        serde_json::from_str(&text).map_err(|e| OrchestratorError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmProgress {
    pub pending: u32,
    pub running: u32,
    pub done: u32,
    pub abandoned: u32,
}

/// Live per-arm counts; pending + running + done + abandoned stays equal to
/// the allocation size.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    pub per_arm: BTreeMap<String, ArmProgress>,
}

impl ProgressSnapshot {
    pub fn totals(&self) -> ArmProgress {
        let mut total = ArmProgress::default();
        for arm in self.per_arm.values() {
            total.pending += arm.pending;
            total.running += arm.running;
            total.done += arm.done;
            total.abandoned += arm.abandoned;
        }
        total
    }
}

/// Mutable counters the runner updates as events arrive.
#[derive(Debug, Default)]
pub struct RunTracker {
    per_arm: BTreeMap<String, ArmProgress>,
}

impl RunTracker {
    fn new(plan: &ExperimentPlan) -> Self {
        let mut per_arm: BTreeMap<String, ArmProgress> = BTreeMap::new();
        for arm in plan.allocation.assignment.values() {
            per_arm.entry(arm.clone()).or_default().pending += 1;
        }
        RunTracker { per_arm }
    }

    fn started(&mut self, arm: &str) {
        let entry = self.per_arm.entry(arm.to_string()).or_default();
        entry.pending -= 1;
        entry.running += 1;
    }

    fn finished(&mut self, arm: &str, abandoned: bool) {
        let entry = self.per_arm.entry(arm.to_string()).or_default();
        entry.running -= 1;
        if abandoned {
            entry.abandoned += 1;
        } else {
            entry.done += 1;
        }
    }
}

/// Point-in-time progress: pending/running/done/abandoned per arm.
pub fn progress(tracker: &RunTracker) -> ProgressSnapshot {
    ProgressSnapshot {
        per_arm: tracker.per_arm.clone(),
    }
}

struct SessionResult {
    trace: Option<SessionTrace>,
    retried: bool,
    error: Option<String>,
}

enum Event {
    Started {
        arm: String,
    },
    Finished {
        persona_id: String,
        arm: String,
        result: Box<SessionResult>,
    },
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Executes one session with retry-once-then-abandon crash semantics. A
/// crash is a factory failure or a panic, not a modeled failure outcome.
fn execute_with_retry(
    plan: &ExperimentPlan,
    pool: &PersonaPool,
    env_factory: &dyn EnvFactory,
    model: &dyn ModelClient,
    template: &PromptTemplate,
    persona_id: &str,
    arm: &str,
) -> SessionResult {
    let persona = pool.persona(persona_id).expect("validated persona id");
    let intention = &pool.intentions[persona_id];
    let variant_id = plan.variant_of(arm);
    let session_seed = derive_seed(plan.seed, persona_id);
    let session_id = format!("sess-{}", persona_id);

    let mut last_error = String::new();
    for attempt in 0..2 {
        let mut env = match env_factory.open(variant_id, session_seed) {
            Ok(env) => env,
            Err(e) => {
                last_error = format!("environment open failed: {}", e);
                continue;
            }
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            run_session(
                persona,
                intention,
                arm,
                env.as_mut(),
                model,
                &plan.limits,
                template,
                &session_id,
                session_seed,
            )
        }));
        match outcome {
            Ok(trace) => {
                return SessionResult {
                    trace: Some(trace),
                    retried: attempt > 0,
                    error: None,
                }
            }
            Err(panic) => {
                last_error = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "session panicked".to_string());
            }
        }
    }
    SessionResult {
        trace: None,
        retried: true,
        error: Some(last_error),
    }
}

/// Runs the whole plan. Traces stream to `<output_dir>/traces/` as sessions
/// finish; the manifest is written to `<output_dir>/manifest.json` last.
/// `on_progress` fires after every state change with a fresh snapshot.
pub fn run_experiment(
    plan: &ExperimentPlan,
    pool: &PersonaPool,
    env_factory: &dyn EnvFactory,
    model: &dyn ModelClient,
    template: &PromptTemplate,
    mut on_progress: impl FnMut(&ProgressSnapshot),
) -> Result<RunManifest, OrchestratorError> {
    plan.validate(pool)?;
    let traces_dir = plan.output_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)
        .map_err(|e| OrchestratorError::Io(format!("creating {}: {}", traces_dir.display(), e)))?;

    let started_unix_s = unix_now();
    // Jobs sorted by persona id: scheduling order never affects results, and
    // a sorted queue makes single-worker runs easy to reason about.
    let jobs: VecDeque<(String, String)> = plan
        .allocation
        .assignment
        .iter()
        .map(|(persona_id, arm)| (persona_id.clone(), arm.clone()))
        .collect();
    let total = jobs.len();
    let queue = Mutex::new(jobs);
    let (events_tx, events_rx) = mpsc::channel::<Event>();

    let mut tracker = RunTracker::new(plan);
    let mut sessions: BTreeMap<String, SessionStatus> = BTreeMap::new();
    let mut arm_counts: BTreeMap<String, ArmCounts> = plan
        .arms
        .iter()
        .map(|a| (a.name.clone(), ArmCounts::default()))
        .collect();
    let mut write_error: Option<OrchestratorError> = None;

    std::thread::scope(|scope| {
        for _ in 0..plan.parallelism.min(total.max(1)) {
            let events_tx = events_tx.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let job = queue.lock().expect("job queue lock").pop_front();
                let Some((persona_id, arm)) = job else { break };
                let _ = events_tx.send(Event::Started { arm: arm.clone() });
                let result =
                    execute_with_retry(plan, pool, env_factory, model, template, &persona_id, &arm);
                let _ = events_tx.send(Event::Finished {
                    persona_id,
                    arm,
                    result: Box::new(result),
                });
            });
        }
        drop(events_tx);

        // Single consumer: the only writer of traces and manifest state.
        let mut finished = 0usize;
        while finished < total {
            let event = events_rx.recv().expect("workers outlive the queue");
            match event {
                Event::Started { arm, .. } => {
                    tracker.started(&arm);
                    on_progress(&progress(&tracker));
                }
                Event::Finished {
                    persona_id,
                    arm,
                    result,
                } => {
                    finished += 1;
                    let counts = arm_counts.entry(arm.clone()).or_default();
                    match result.trace {
                        Some(trace) => {
                            if write_error.is_none() {
                                if let Err(e) = write_trace(&trace, &traces_dir) {
                                    write_error = Some(e.into());
                                }
                            }
                            counts.done += 1;
                            if result.retried {
                                counts.retried += 1;
                                sessions.insert(
                                    persona_id,
                                    SessionStatus::Retried {
                                        outcome: trace.outcome.kind,
                                    },
                                );
                            } else {
                                sessions.insert(
                                    persona_id,
                                    SessionStatus::Done {
                                        outcome: trace.outcome.kind,
                                    },
                                );
                            }
                            tracker.finished(&arm, false);
                        }
                        None => {
                            counts.abandoned += 1;
                            sessions.insert(
                                persona_id,
                                SessionStatus::Abandoned {
                                    error: result.error.unwrap_or_default(),
                                },
                            );
                            tracker.finished(&arm, true);
                        }
                    }
                    on_progress(&progress(&tracker));
                }
            }
        }
    });

    if let Some(e) = write_error {
        return Err(e);
    }

    let manifest = RunManifest {
        plan_fingerprint: plan.fingerprint.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_s,
        finished_unix_s: unix_now(),
        sessions,
        arm_counts,
    };
    manifest.save(&plan.output_dir.join("manifest.json"))?;
    Ok(manifest)
}
