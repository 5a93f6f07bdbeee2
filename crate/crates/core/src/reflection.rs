//! Dual-phase reflection: the intra-reflection response-guided retry loop
//! and the inter-reflection global plan updater.
//!
//! Intra-reflection drives one task: generate an action, execute it, judge
//! the response, and on failure fold a bounded note about the response back
//! into the state before the next attempt — at most `n_max` times. A loop is
//! strictly sequential: each attempt depends on the previous response.
//!
//! Inter-reflection runs after every task: a majority vote judges the task
//! result, flag detection and the task cap decide termination, and otherwise
//! the summarized shared memory feeds the next-task planning call.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::Corpus;
use crate::llm::{slots, Duty, LlmGateway};
use crate::plangraph::Phase;
use crate::srmm::{MemoryError, MemoryStore, RoleCapability};
use crate::toolkit::{ToolInvocation, ToolResult};

/// Characters of a response body preserved in a failure note.
const NOTE_BODY_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Success,
    Failure,
}

/// One attempted action and its judged response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action: ToolInvocation,
    pub response: ToolResult,
    pub verdict: Verdict,
}

/// Loop caps: `n_max` intra-reflection attempts per task, `t_max` tasks per
/// run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopBudget {
    pub n_max: usize,
    pub t_max: usize,
}

impl LoopBudget {
    pub fn new(n_max: usize, t_max: usize) -> Self {
        assert!(n_max >= 1 && t_max >= 1, "budgets must be positive");
        Self { n_max, t_max }
    }
}

impl Default for LoopBudget {
    fn default() -> Self {
        Self {
            n_max: 10,
            t_max: 15,
        }
    }
}

/// Flag detection policy: the configured prefixes and case rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagPolicy {
    pub prefixes: Vec<String>,
    pub case_insensitive: bool,
}

impl FlagPolicy {
    pub fn new<S: Into<String>>(prefixes: impl IntoIterator<Item = S>) -> Self {
        let prefixes: Vec<String> = prefixes.into_iter().map(Into::into).collect();
        assert!(!prefixes.is_empty(), "flag policy needs at least one prefix");
        assert!(prefixes.iter().all(|p| !p.is_empty()));
        Self {
            prefixes,
            case_insensitive: true,
        }
    }
}

impl Default for FlagPolicy {
    fn default() -> Self {
        Self::new(["flag{"])
    }
}

/// Accumulated state of one intra-reflection loop.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReflectionState {
    pub task: String,
    /// Completed execute calls so far.
    pub attempt_index: usize,
    /// One failure analysis per failed attempt, oldest first.
    pub hypothesis_notes: Vec<String>,
    pub last_action: Option<ActionRecord>,
}

impl ReflectionState {
    fn new(task: &str) -> Self {
        Self {
            task: task.to_string(),
            ..Self::default()
        }
    }

    /// Render the notes for a reflect-payload prompt, oldest first.
    pub fn history_text(&self) -> String {
        if self.hypothesis_notes.is_empty() {
            "(no previous attempts)".to_string()
        } else {
            self.hypothesis_notes.join("\n")
        }
    }
}

/// Failure raised by an execute function. Recorded as a failure note and
/// consumes one attempt.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("execution error: {0}")]
pub struct ExecutionError(pub String);

/// Outcome of one intra-reflection loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum IntraOutcome {
    /// The judge accepted the response on the 1-based attempt given.
    Succeeded(ActionRecord, usize),
    /// All attempts failed.
    Exhausted(usize),
}

impl IntraOutcome {
    pub fn attempts(&self) -> usize {
        match self {
            IntraOutcome::Succeeded(_, n) | IntraOutcome::Exhausted(n) => *n,
        }
    }
}

/// Observer invoked once per attempt with the state after the attempt was
/// folded in. The engine uses it to emit transcript events.
pub type AttemptObserver<'a> = dyn FnMut(usize, &ActionRecord) + 'a;

/// Response-guided retry loop: generate → execute → judge, with a bounded
/// failure note appended per failed attempt, for at most `n_max` attempts.
pub fn intra_reflect<G, E, J>(
    task: &str,
    constraints: &str,
    mut generate: G,
    mut execute: E,
    mut judge: J,
    budget: &LoopBudget,
    mut observer: Option<&mut AttemptObserver<'_>>,
) -> IntraOutcome
where
    G: FnMut(&ReflectionState, &str) -> ToolInvocation,
    E: FnMut(&ToolInvocation) -> Result<ToolResult, ExecutionError>,
    J: FnMut(&ToolResult, &str) -> bool,
{
    let mut state = ReflectionState::new(task);
    while state.attempt_index < budget.n_max {
        let action = generate(&state, constraints);
        let attempt = state.attempt_index + 1;
        let (response, verdict) = match execute(&action) {
            Ok(response) => {
                let ok = !response.is_error() && judge(&response, task);
                let verdict = if ok { Verdict::Success } else { Verdict::Failure };
                (response, verdict)
            }
            Err(ExecutionError(reason)) => {
                (ToolResult::failed(reason, 0), Verdict::Failure)
            }
        };
        let record = ActionRecord {
            action,
            response,
            verdict,
        };
        state.attempt_index = attempt;
        if let Some(obs) = observer.as_deref_mut() {
            obs(attempt, &record);
        }
        if record.verdict == Verdict::Success {
            return IntraOutcome::Succeeded(record, attempt);
        }
        state
            .hypothesis_notes
            .push(failure_note(attempt, &record.response));
        state.last_action = Some(record);
    }
    IntraOutcome::Exhausted(budget.n_max)
}

/// Fixed, bounded failure analysis: attempt index, status, body head,
/// verdict.
fn failure_note(attempt: usize, response: &ToolResult) -> String {
    let body_head: String = response.body.chars().take(NOTE_BODY_CAP).collect();
    let error = response
        .error
        .as_deref()
        .map(|e| format!(" error={e}"))
        .unwrap_or_default();
    format!(
        "attempt {attempt}: status={}{} verdict=failure body: {body_head}",
        response.status, error
    )
}

/// Majority vote over `votes` success-check calls: an answer counts as yes
/// when its lowercase form contains "yes"; true iff yes-count > votes/2.
pub fn check_success_majority<F>(result: &str, mut ask: F, votes: usize) -> bool
where
    F: FnMut(&str) -> String,
{
    assert!(votes >= 1 && votes % 2 == 1, "votes must be positive and odd");
    let mut yes = 0;
    for _ in 0..votes {
        let answer = ask(result);
        if answer.to_lowercase().contains("yes") {
            yes += 1;
        }
    }
    yes > votes / 2
}

/// Scan text for any configured flag prefix; on a hit, extract from the
/// prefix through the first closing brace, or to the end of the line when
/// no brace follows. Returns the earliest match in scan order.
pub fn detect_flag(text: &str, policy: &FlagPolicy) -> Option<String> {
    let haystack = if policy.case_insensitive {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    let mut best: Option<usize> = None;
    for prefix in &policy.prefixes {
        let needle = if policy.case_insensitive {
            prefix.to_lowercase()
        } else {
            prefix.clone()
        };
        if let Some(pos) = haystack.find(&needle) {
            best = Some(best.map_or(pos, |b: usize| b.min(pos)));
        }
    }
    let start = best?;
    let line_end = text[start..]
        .find('\n')
        .map(|i| start + i)
        .unwrap_or(text.len());
    let end = text[start..line_end]
        .find('}')
        .map(|i| start + i + 1)
        .unwrap_or(line_end);
    Some(text[start..end].to_string())
}

/// Task proposed by the planner; the engine inserts it into the plan graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTask {
    pub phase: Phase,
    #[serde(rename = "task")]
    pub description: String,
}

/// Why inter-reflection ended the run instead of planning a next task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    FlagFound(String),
    TaskLimit,
}

/// Inter-reflection decision: continue with a next task, or stop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanDecision {
    Continue {
        next: PlannedTask,
        is_success: bool,
        summary: String,
    },
    Stop {
        reason: StopReason,
        is_success: bool,
    },
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    CapabilityDenied(#[from] MemoryError),
    #[error("planning error: {0}")]
    PlanningError(String),
}

/// Everything the planner consults during one inter-reflection step: the
/// gateway, the memory read depth, the knowledge corpus, and an exchange
/// sink for the transcript.
pub struct PlannerContext<'a> {
    pub gateway: &'a mut LlmGateway,
    pub read_depth: usize,
    pub corpus: Option<&'a Corpus>,
    /// Receives every exchange this step produced, in call order.
    pub exchange_sink: &'a mut dyn FnMut(crate::llm::ChatExchange),
}

impl<'a> PlannerContext<'a> {
    fn ask_vote(&mut self, task: &str, result: &str) -> String {
        match self
            .gateway
            .complete(Duty::CheckSuccess, &slots([("task", task), ("result", result)]))
        {
            Ok(exchange) => {
                let answer = exchange.answer.clone();
                (self.exchange_sink)(exchange);
                answer
            }
            // hard backend failures count as non-yes votes
            Err(_) => String::new(),
        }
    }

    fn summarize(&mut self, formatted: &str) -> String {
        match self.gateway.summarize_memory(formatted) {
            Ok(exchange) => {
                let answer = exchange.answer.clone();
                if exchange.tokens_in > 0 || exchange.error.is_some() {
                    (self.exchange_sink)(exchange);
                }
                answer
            }
            Err(e) => format!("(summary unavailable: {e})"),
        }
    }
}

/// Inter-reflection for global planning.
///
/// Votes on the task result, terminates on a detected flag or the task cap,
/// and otherwise reads the aggregated memory through the planner's read
/// capability, summarizes it, and asks for the next task.
#[allow(clippy::too_many_arguments)]
pub fn update_plan(
    result: &str,
    store: &MemoryStore,
    current_task: &str,
    planner_cap: &RoleCapability,
    ctx: &mut PlannerContext<'_>,
    budget: &LoopBudget,
    policy: &FlagPolicy,
    tasks_so_far: usize,
) -> Result<PlanDecision, PlanError> {
    let is_success = {
        let mut ask = |r: &str| ctx.ask_vote(current_task, r);
        check_success_majority(result, &mut ask, 3)
    };
    if let Some(flag) = detect_flag(result, policy) {
        return Ok(PlanDecision::Stop {
            reason: StopReason::FlagFound(flag),
            is_success,
        });
    }
    if tasks_so_far >= budget.t_max {
        return Ok(PlanDecision::Stop {
            reason: StopReason::TaskLimit,
            is_success,
        });
    }
    // the planner's only door into shared memory, with the model as the
    // summarizer
    let summary =
        store.read_aggregated_context(planner_cap, ctx.read_depth, |formatted| {
            ctx.summarize(formatted)
        })?;
    let knowledge = ctx
        .corpus
        .and_then(|c| c.best_match(current_task))
        .map(|doc| format!("{}: {}", doc.title, doc.body))
        .unwrap_or_else(|| "(none)".to_string());
    let exchange = ctx
        .gateway
        .complete(
            Duty::Plan,
            &slots([
                ("summary", summary.as_str()),
                ("current_task", current_task),
                ("is_success", if is_success { "true" } else { "false" }),
                ("knowledge", knowledge.as_str()),
            ]),
        )
        .map_err(|e| PlanError::PlanningError(e.to_string()))?;
    let answer = exchange.answer.clone();
    (ctx.exchange_sink)(exchange);
    let next = parse_planned_task(&answer)
        .ok_or_else(|| PlanError::PlanningError(format!("unparseable task: {answer:?}")))?;
    Ok(PlanDecision::Continue {
        next,
        is_success,
        summary,
    })
}

/// Extract the planned-task JSON object from a model answer, tolerating
/// surrounding prose.
pub fn parse_planned_task(answer: &str) -> Option<PlannedTask> {
    let start = answer.find('{')?;
    let end = answer.rfind('}')?;
    if end <= start {
        return None;
    }
    let parsed: PlannedTask = serde_json::from_str(&answer[start..=end]).ok()?;
    if parsed.description.trim().is_empty() {
        return None;
    }
    Some(parsed)
}
