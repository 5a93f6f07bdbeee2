//! Transcript capture, metric computation, budget enforcement, and replay.
//!
//! The transcript is the audit trail and the unit of scoring: every tool
//! call (with verbatim request bytes), model exchange, reflection verdict,
//! plan update, phase transition, and flag detection lands on it in order.
//! Persisted transcripts replay to bit-identical scores.

pub mod metrics;

use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::path::Path;
use std::rc::Rc;
use thiserror::Error;

use crate::canonical::canonical_json;
use crate::clock::SharedClock;
use crate::llm::{account_tokens, ChatExchange, CostRates, TokenAccount};
use crate::plangraph::Phase;
use crate::reflection::Verdict;

pub use metrics::{
    avg_tte, format_rate, render_tte, subtask_completion_rate, success_rate, time_to_exploit,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("annotation is for scenario {annotation}, transcript is for {transcript}")]
    AnnotationMismatch {
        annotation: String,
        transcript: String,
    },
    #[error("transcript file: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnsolvedReason {
    Timeout,
    Exhausted,
    PlanningError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunOutcome {
    Solved { flag: String },
    Unsolved { reason: UnsolvedReason },
}

impl RunOutcome {
    pub fn is_solved(&self) -> bool {
        matches!(self, RunOutcome::Solved { .. })
    }
}

/// Kind-specific payload of one step event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepKind {
    /// One wire exchange: the verbatim emitted request and the response
    /// (headers plus capped body).
    ToolCall {
        tool: String,
        request: String,
        response_status: u16,
        #[serde(default)]
        response_headers: Vec<(String, String)>,
        response_body: String,
        latency_ms: u64,
        error: Option<String>,
    },
    LlmExchange { exchange: ChatExchange },
    ReflectionVerdict {
        attempt: usize,
        verdict: Verdict,
        note: String,
    },
    /// One planning decision. `is_success` is absent on the initial task
    /// issuance and present on every inter-reflection update.
    PlanUpdate {
        tasks_so_far: usize,
        is_success: Option<bool>,
        task_id: Option<u64>,
        phase: Option<Phase>,
        description: Option<String>,
        knowledge: Option<String>,
    },
    PhaseTransition { evidence: String },
    FlagDetected { flag: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub index: usize,
    pub wall_time_ms: u64,
    #[serde(flatten)]
    pub kind: StepKind,
}

/// Ordered record of one engagement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub run_id: String,
    pub scenario_id: String,
    pub objective: String,
    pub started_ms: u64,
    pub ended_ms: u64,
    pub events: Vec<StepEvent>,
    pub outcome: RunOutcome,
}

impl Transcript {
    pub fn exchanges(&self) -> impl Iterator<Item = &ChatExchange> {
        self.events.iter().filter_map(|e| match &e.kind {
            StepKind::LlmExchange { exchange } => Some(exchange),
            _ => None,
        })
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &StepEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, StepKind::ToolCall { .. }))
    }

    /// Index of the first flag-detection event.
    pub fn flag_event_index(&self) -> Option<usize> {
        self.events
            .iter()
            .find(|e| matches!(e.kind, StepKind::FlagDetected { .. }))
            .map(|e| e.index)
    }

    pub fn account(&self, rates: &CostRates) -> TokenAccount {
        account_tokens(self.exchanges(), rates)
    }

    /// The replay format: one canonical line per record — meta, each event,
    /// outcome.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        let meta = serde_json::json!({
            "record": "meta",
            "run_id": self.run_id,
            "scenario_id": self.scenario_id,
            "objective": self.objective,
            "started_ms": self.started_ms,
        });
        out.push_str(&canonical_json(&meta).expect("meta serializes"));
        out.push('\n');
        for event in &self.events {
            let line = serde_json::json!({ "record": "event", "event": event });
            out.push_str(&canonical_json(&line).expect("event serializes"));
            out.push('\n');
        }
        let tail = serde_json::json!({
            "record": "outcome",
            "ended_ms": self.ended_ms,
            "outcome": self.outcome,
        });
        out.push_str(&canonical_json(&tail).expect("outcome serializes"));
        out.push('\n');
        out
    }

    pub fn from_lines(text: &str) -> Result<Self, EvalError> {
        let mut run_id = None;
        let mut scenario_id = None;
        let mut objective = String::new();
        let mut started_ms = 0;
        let mut ended_ms = 0;
        let mut outcome = None;
        let mut events = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line)?;
            match value.get("record").and_then(|r| r.as_str()) {
                Some("meta") => {
                    run_id = value
                        .get("run_id")
                        .and_then(|v| v.as_str())
                        .map(String::from);
                    scenario_id = value
                        .get("scenario_id")
                        .and_then(|v| v.as_str())
                        .map(String::from);
                    objective = value
                        .get("objective")
                        .and_then(|v| v.as_str())
                        .unwrap_or_default()
                        .to_string();
                    started_ms = value
                        .get("started_ms")
                        .and_then(|v| v.as_u64())
                        .unwrap_or_default();
                }
                Some("event") => {
                    let event = value
                        .get("event")
                        .cloned()
                        .ok_or_else(|| EvalError::Malformed("event record sans event".into()))?;
                    events.push(serde_json::from_value(event)?);
                }
                Some("outcome") => {
                    ended_ms = value
                        .get("ended_ms")
                        .and_then(|v| v.as_u64())
                        .unwrap_or_default();
                    let o = value
                        .get("outcome")
                        .cloned()
                        .ok_or_else(|| EvalError::Malformed("outcome record sans outcome".into()))?;
                    outcome = Some(serde_json::from_value(o)?);
                }
                other => {
                    return Err(EvalError::Malformed(format!(
                        "unknown record kind {other:?}"
                    )))
                }
            }
        }
        Ok(Transcript {
            run_id: run_id.ok_or_else(|| EvalError::Malformed("missing meta".into()))?,
            scenario_id: scenario_id
                .ok_or_else(|| EvalError::Malformed("missing scenario id".into()))?,
            objective,
            started_ms,
            ended_ms,
            events,
            outcome: outcome.ok_or_else(|| EvalError::Malformed("missing outcome".into()))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_lines())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_lines(&std::fs::read_to_string(path)?)
    }
}

/// Single-writer transcript appender shared by the engine's closures.
/// Every append stamps the shared clock.
#[derive(Clone)]
pub struct Recorder {
    events: Rc<RefCell<Vec<StepEvent>>>,
    clock: SharedClock,
}

impl Recorder {
    pub fn new(clock: SharedClock) -> Self {
        Self {
            events: Rc::new(RefCell::new(Vec::new())),
            clock,
        }
    }

    pub fn record(&self, kind: StepKind) -> usize {
        let mut events = self.events.borrow_mut();
        let index = events.len();
        events.push(StepEvent {
            index,
            wall_time_ms: self.clock.now_ms(),
            kind,
        });
        index
    }

    pub fn len(&self) -> usize {
        self.events.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.borrow().is_empty()
    }

    /// Drain the recorded events into a finished transcript.
    pub fn finish(
        self,
        run_id: String,
        scenario_id: String,
        objective: String,
        started_ms: u64,
        ended_ms: u64,
        outcome: RunOutcome,
    ) -> Transcript {
        let events = self.events.borrow().clone();
        Transcript {
            run_id,
            scenario_id,
            objective,
            started_ms,
            ended_ms,
            events,
            outcome,
        }
    }
}

/// Subtask annotation: the ordered checkpoint ids that make up a
/// challenge's ground-truth decomposition (M_i = subtasks.len()).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeAnnotation {
    pub scenario_id: String,
    pub subtasks: Vec<String>,
}

impl ChallengeAnnotation {
    pub fn total(&self) -> usize {
        self.subtasks.len()
    }
}

/// Scored run: solved flag, completed subtasks, efficiency, accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub scenario_id: String,
    pub solved: bool,
    pub completed: usize,
    pub total: usize,
    pub tte: Option<usize>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: f64,
}

/// Score one transcript against its annotation and scenario ground truth.
///
/// Solved requires the detected flag to equal the scenario's flag; wrong
/// flags count as failures. Subtask completion comes from the scenario's
/// checkpoint matchers, restricted to the annotated subtasks.
pub fn score_run(
    transcript: &Transcript,
    annotation: &ChallengeAnnotation,
    scenario: &crate::lab::TargetScenario,
    rates: &CostRates,
) -> Result<RunScore, EvalError> {
    if annotation.scenario_id != transcript.scenario_id {
        return Err(EvalError::AnnotationMismatch {
            annotation: annotation.scenario_id.clone(),
            transcript: transcript.scenario_id.clone(),
        });
    }
    let solved = match &transcript.outcome {
        RunOutcome::Solved { flag } => flag == &scenario.flag,
        RunOutcome::Unsolved { .. } => false,
    };
    let checkpoint_results = crate::lab::check_checkpoints(scenario, transcript);
    let completed = annotation
        .subtasks
        .iter()
        .filter(|id| {
            checkpoint_results
                .iter()
                .any(|r| &r.id == *id && r.satisfied)
        })
        .count();
    let tte = if solved {
        time_to_exploit(transcript)
    } else {
        None
    };
    let account = transcript.account(rates);
    Ok(RunScore {
        scenario_id: transcript.scenario_id.clone(),
        solved,
        completed,
        total: annotation.total(),
        tte,
        tokens_in: account.tokens_in,
        tokens_out: account.tokens_out,
        cost: account.cost,
    })
}

/// Wall-time budget for one run, checked at step boundaries.
pub struct BudgetGuard {
    clock: SharedClock,
    deadline_ms: u64,
}

impl BudgetGuard {
    /// Budget of `limit_minutes` starting at the clock's current reading.
    pub fn new(clock: SharedClock, limit_minutes: u64) -> Self {
        assert!(limit_minutes > 0, "time budget must be positive");
        let deadline_ms = clock.now_ms() + limit_minutes * 60_000;
        Self { clock, deadline_ms }
    }

    /// True once the budget is spent; the run is then terminated at the
    /// next step boundary and counted unsolved.
    pub fn expired(&self) -> bool {
        self.clock.now_ms() >= self.deadline_ms
    }
}
