//! The four agent roles and their capability-bounded behaviors.
//!
//! Planner, collector, exploiter, and summarizer hold disjoint tool sets
//! and mutually exclusive memory capabilities: the two execution agents
//! write observations, the planner reads the aggregated view, and the
//! summarizer receives its own read capability at report time. All
//! coordination flows through the shared memory; agents never message each
//! other directly.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Display;
use thiserror::Error;

use crate::evalkit::{Recorder, RunScore, StepKind};
use crate::knowledge::Corpus;
use crate::llm::{slots, Duty, LlmGateway};
use crate::plangraph::{GraphExport, Phase, PlanGraph, Task, TaskStatus};
use crate::reflection::{
    intra_reflect, detect_flag, ActionRecord, FlagPolicy, IntraOutcome, LoopBudget,
    ReflectionState, Verdict,
};
use crate::srmm::{AgentId, MemoryStore, RoleCapability};
use crate::toolkit::{
    Carrier, Encoding, Method, ToolError, ToolInvocation, ToolOutcome, ToolRequest, Toolkit,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleName {
    Planner,
    Collector,
    Exploiter,
    Summarizer,
}

impl Display for RoleName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RoleName::Planner => "planner",
            RoleName::Collector => "collector",
            RoleName::Exploiter => "exploiter",
            RoleName::Summarizer => "summarizer",
        };
        f.write_str(s)
    }
}

/// An agent role: its memory capability and the tools it may invoke.
#[derive(Debug, Clone)]
pub struct AgentRole {
    pub name: RoleName,
    pub memory_cap: RoleCapability,
    pub allowed_tools: BTreeSet<String>,
}

/// The fixed roster, issued once at engine start. Capabilities are not
/// transferable; the summarizer's read capability is issued separately at
/// report time via [`issue_summarizer`].
pub struct Roster {
    pub planner: AgentRole,
    pub collector: AgentRole,
    pub exploiter: AgentRole,
}

impl Roster {
    pub fn issue() -> Self {
        let collector_tools: BTreeSet<String> = [
            "http_probe".to_string(),
            "enumerate_paths".to_string(),
            "brute_force_credentials".to_string(),
        ]
        .into();
        let exploiter_tools: BTreeSet<String> = ["payload_request".to_string()].into();
        debug_assert!(collector_tools.is_disjoint(&exploiter_tools));
        Self {
            planner: AgentRole {
                name: RoleName::Planner,
                memory_cap: RoleCapability::reader(AgentId::new("planner")),
                allowed_tools: BTreeSet::new(),
            },
            collector: AgentRole {
                name: RoleName::Collector,
                memory_cap: RoleCapability::writer(AgentId::new("collector")),
                allowed_tools: collector_tools,
            },
            exploiter: AgentRole {
                name: RoleName::Exploiter,
                memory_cap: RoleCapability::writer(AgentId::new("exploiter")),
                allowed_tools: exploiter_tools,
            },
        }
    }
}

/// Report-time summarizer role with its own gated read capability.
pub fn issue_summarizer() -> AgentRole {
    AgentRole {
        name: RoleName::Summarizer,
        memory_cap: RoleCapability::reader(AgentId::new("summarizer")),
        allowed_tools: BTreeSet::new(),
    }
}

/// Phase-conditioned view an acting agent receives with its task briefing.
#[derive(Debug, Clone)]
pub struct BeliefState {
    pub phase: Phase,
    pub task: Task,
    /// Latest aggregated summary available to the agent.
    pub context: String,
    /// Opaque rules-of-engagement text.
    pub constraints: String,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("tool denied: {role} may not invoke {tool}")]
    ToolDenied { role: RoleName, tool: String },
    #[error("step requires the {expected} role")]
    WrongRole { expected: RoleName },
    #[error("step requires the {0} phase")]
    WrongPhase(Phase),
    #[error(transparent)]
    Memory(#[from] crate::srmm::MemoryError),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

/// Gate a proposed invocation against the role's tool set. The proposal
/// function realizes the role's policy; one proposal is sampled per call.
pub fn select_tool<F>(
    role: &AgentRole,
    belief: &BeliefState,
    propose: F,
) -> Result<ToolInvocation, AgentError>
where
    F: FnOnce(&BeliefState) -> ToolInvocation,
{
    let invocation = propose(belief);
    if role.allowed_tools.contains(&invocation.tool) {
        Ok(invocation)
    } else {
        Err(AgentError::ToolDenied {
            role: role.name,
            tool: invocation.tool.clone(),
        })
    }
}

/// Normalized observation written to shared memory after every tool run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub kind: String,
    pub target: String,
    pub status: u16,
    pub evidence: String,
}

impl Display for Observation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} status={} {}",
            self.kind, self.target, self.status, self.evidence
        )
    }
}

const EVIDENCE_CAP: usize = 512;

fn cap_evidence(text: &str) -> String {
    text.chars().take(EVIDENCE_CAP).collect()
}

/// Deterministic collector policy: derive one reconnaissance invocation
/// from the task directive.
///
/// Directives: `probe <path>`, `enumerate paths=<p1,p2,..> [filters=<s,..>]`,
/// `login [path=<p>] users=<u,..> passwords=<w,..> [delay=<ms>]`. Anything
/// else probes the first `/`-token, or `/`.
pub fn collector_propose(belief: &BeliefState, target: &str) -> ToolInvocation {
    let desc = &belief.task.description;
    let token = |key: &str| -> Option<String> {
        desc.split_whitespace()
            .find_map(|w| w.strip_prefix(key).map(String::from))
    };
    let list = |key: &str| -> Vec<String> {
        token(key)
            .map(|v| v.split(',').map(str::to_string).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    };
    let request = if desc.contains("enumerate") && desc.contains("paths=") {
        let status_filter: BTreeSet<u16> = list("filters=")
            .iter()
            .filter_map(|s| s.parse().ok())
            .collect();
        let status_filter = if status_filter.is_empty() {
            BTreeSet::from([200, 302])
        } else {
            status_filter
        };
        ToolRequest::EnumeratePaths {
            paths: list("paths="),
            status_filter,
        }
    } else if desc.contains("login") && desc.contains("users=") && desc.contains("passwords=") {
        ToolRequest::BruteForceCredentials {
            path: token("path=").unwrap_or_else(|| "/login".to_string()),
            users: list("users="),
            passwords: list("passwords="),
            delay_ms: token("delay=").and_then(|v| v.parse().ok()).unwrap_or(0),
        }
    } else {
        let path = desc
            .split_whitespace()
            .find(|w| w.starts_with('/'))
            .unwrap_or("/")
            .to_string();
        ToolRequest::HttpProbe {
            method: Method::Get,
            path,
            headers: Vec::new(),
            body: None,
        }
    };
    ToolInvocation::new(target, request)
}

/// Execute one reconnaissance step: select a tool from the task directive,
/// run it, normalize the result into a structured observation, and write
/// it to shared memory. A failed tool still yields a written observation.
pub fn run_collector_step(
    role: &AgentRole,
    belief: &BeliefState,
    toolkit: &mut Toolkit,
    store: &mut MemoryStore,
    recorder: &Recorder,
    target: &str,
) -> Result<(Observation, crate::toolkit::ToolResult), AgentError> {
    if role.name != RoleName::Collector {
        return Err(AgentError::WrongRole {
            expected: RoleName::Collector,
        });
    }
    if belief.phase != Phase::Recon {
        return Err(AgentError::WrongPhase(Phase::Recon));
    }
    let invocation = select_tool(role, belief, |b| collector_propose(b, target))?;
    let result = execute_logged(toolkit, &invocation, belief.phase, recorder);
    let observation = Observation {
        kind: invocation.tool.clone(),
        target: describe_request(&invocation.request),
        status: result.status,
        evidence: cap_evidence(result.error.as_deref().unwrap_or(&result.body)),
    };
    store.write_observation(&role.memory_cap, &observation)?;
    Ok((observation, result))
}

/// Run an invocation through the toolkit, logging every wire exchange (or
/// the denial) as a tool-call event. Gate violations come back as
/// error-results so the reflection loop can reason over them.
pub fn execute_logged(
    toolkit: &mut Toolkit,
    invocation: &ToolInvocation,
    phase: Phase,
    recorder: &Recorder,
) -> crate::toolkit::ToolResult {
    match toolkit.execute(invocation, phase) {
        Ok(ToolOutcome { result, exchanges }) => {
            for exchange in exchanges {
                recorder.record(StepKind::ToolCall {
                    tool: invocation.tool.clone(),
                    request: exchange.request,
                    response_status: exchange.response_status,
                    response_headers: exchange.response_headers,
                    response_body: exchange.response_body,
                    latency_ms: exchange.latency_ms,
                    error: exchange.error,
                });
            }
            result
        }
        Err(gate_error) => {
            let reason = gate_error.to_string();
            recorder.record(StepKind::ToolCall {
                tool: invocation.tool.clone(),
                request: format!("(not emitted: {reason})"),
                response_status: 0,
                response_headers: Vec::new(),
                response_body: String::new(),
                latency_ms: 0,
                error: Some(reason.clone()),
            });
            crate::toolkit::ToolResult::failed(reason, 0)
        }
    }
}

/// Payload proposal shape expected from the reflect-payload duty.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PayloadProposal {
    method: Method,
    #[serde(default)]
    path: String,
    template: String,
    payload: String,
    #[serde(default)]
    encoding: Encoding,
    carrier: Carrier,
}

/// Parse a model answer into an exploitation invocation; unparseable
/// answers become a malformed request that consumes an attempt.
pub fn parse_payload_proposal(answer: &str, target: &str) -> ToolInvocation {
    let json = answer
        .find('{')
        .and_then(|start| answer.rfind('}').map(|end| &answer[start..=end]));
    let request = match json.map(serde_json::from_str::<PayloadProposal>) {
        Some(Ok(p)) => ToolRequest::PayloadRequest {
            method: p.method,
            path: p.path,
            template: p.template,
            payload: p.payload,
            encoding: p.encoding,
            carrier: p.carrier,
        },
        Some(Err(e)) => ToolRequest::Malformed {
            reason: format!("unparseable proposal: {e}"),
        },
        None => ToolRequest::Malformed {
            reason: "proposal carried no JSON object".to_string(),
        },
    };
    ToolInvocation::new(target, request)
}

/// Success criterion for an exploit task: an `expect=<substring>` suffix on
/// the task description pins a response substring; otherwise a detected
/// flag decides.
pub fn exploit_judge(task_description: &str, policy: &FlagPolicy) -> impl Fn(&str) -> bool {
    let expect = task_description
        .split_once("expect=")
        .map(|(_, rest)| rest.trim().to_string());
    let policy = policy.clone();
    move |body: &str| match &expect {
        Some(marker) => body.contains(marker.as_str()),
        None => detect_flag(body, &policy).is_some(),
    }
}

/// Exploiter attempt record persisted to shared memory after the loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploitRecord {
    pub task: String,
    pub attempts: usize,
    pub outcome: String,
    pub last_status: u16,
    pub last_evidence: String,
}

impl Display for ExploitRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} after {} attempts: {} (status {})",
            self.outcome, self.attempts, self.task, self.last_status
        )
    }
}

/// Drive one exploit task through the intra-reflection loop.
///
/// Generation is the reflect-payload duty (with the best-matching
/// knowledge note injected), execution is the bounded toolkit, and the
/// judge comes from the task description. Denied and malformed proposals
/// consume attempts; the final record and attempt count land in shared
/// memory. Exhaustion is an outcome, not an error.
#[allow(clippy::too_many_arguments)]
pub fn run_exploiter_step(
    role: &AgentRole,
    belief: &BeliefState,
    toolkit: &mut Toolkit,
    store: &mut MemoryStore,
    gateway: &mut LlmGateway,
    recorder: &Recorder,
    budget: &LoopBudget,
    policy: &FlagPolicy,
    corpus: Option<&Corpus>,
    target: &str,
) -> Result<IntraOutcome, AgentError> {
    if role.name != RoleName::Exploiter {
        return Err(AgentError::WrongRole {
            expected: RoleName::Exploiter,
        });
    }
    if belief.phase != Phase::Exploit {
        return Err(AgentError::WrongPhase(Phase::Exploit));
    }
    let task = belief.task.description.clone();
    let knowledge = corpus
        .and_then(|c| c.best_match(&task))
        .map(|doc| format!("{}: {}", doc.title, doc.body))
        .unwrap_or_else(|| "(none)".to_string());
    let judge_body = exploit_judge(&task, policy);

    let generate = |state: &ReflectionState, _constraints: &str| -> ToolInvocation {
        let exchange = gateway.complete(
            Duty::ReflectPayload,
            &slots([
                ("task", task.as_str()),
                ("history", state.history_text().as_str()),
                ("knowledge", knowledge.as_str()),
            ]),
        );
        match exchange {
            Ok(exchange) => {
                let answer = exchange.answer.clone();
                recorder.record(StepKind::LlmExchange { exchange });
                parse_payload_proposal(&answer, target)
            }
            Err(e) => ToolInvocation::new(
                target,
                ToolRequest::Malformed {
                    reason: format!("generation failed: {e}"),
                },
            ),
        }
    };
    let toolkit_ref = toolkit;
    let execute = |invocation: &ToolInvocation| {
        let denied = !role.allowed_tools.contains(&invocation.tool);
        let result = if denied {
            let reason = format!("tool denied: exploiter may not invoke {}", invocation.tool);
            recorder.record(StepKind::ToolCall {
                tool: invocation.tool.clone(),
                request: format!("(not emitted: {reason})"),
                response_status: 0,
                response_headers: Vec::new(),
                response_body: String::new(),
                latency_ms: 0,
                error: Some(reason.clone()),
            });
            crate::toolkit::ToolResult::failed(reason, 0)
        } else {
            execute_logged(toolkit_ref, invocation, belief.phase, recorder)
        };
        Ok(result)
    };
    let judge = |result: &crate::toolkit::ToolResult, _task: &str| judge_body(&result.body);
    let mut observe = |attempt: usize, record: &ActionRecord| {
        let note = match record.verdict {
            Verdict::Success => format!("attempt {attempt}: success"),
            Verdict::Failure => format!(
                "attempt {attempt}: status={} {}",
                record.response.status,
                record.response.error.as_deref().unwrap_or("judged failure")
            ),
        };
        recorder.record(StepKind::ReflectionVerdict {
            attempt,
            verdict: record.verdict,
            note,
        });
    };
    let outcome = intra_reflect(
        &task,
        &belief.constraints,
        generate,
        execute,
        judge,
        budget,
        Some(&mut observe),
    );

    let record = match &outcome {
        IntraOutcome::Succeeded(action, attempts) => ExploitRecord {
            task: task.clone(),
            attempts: *attempts,
            outcome: "succeeded".into(),
            last_status: action.response.status,
            last_evidence: cap_evidence(&action.response.body),
        },
        IntraOutcome::Exhausted(attempts) => ExploitRecord {
            task: task.clone(),
            attempts: *attempts,
            outcome: "exhausted".into(),
            last_status: 0,
            last_evidence: String::new(),
        },
    };
    store.write_observation(&role.memory_cap, &record)?;
    Ok(outcome)
}

/// One node of the exploitation path in a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathStep {
    pub task_id: u64,
    pub phase: Phase,
    pub description: String,
}

/// One prioritized finding: a normalized observation with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finding {
    pub agent: String,
    pub timestep: u64,
    pub note: String,
}

/// The audit-trail report: objective, findings, exploitation path,
/// reflection log, metrics, with the plan graph embedded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub objective: String,
    pub summary: String,
    /// Mid-engagement knowledge-transfer summary captured at the
    /// recon → exploit boundary, when the run got that far.
    pub knowledge_transfer: Option<String>,
    pub findings: Vec<Finding>,
    pub exploitation_path: Vec<PathStep>,
    pub abandoned_strategies: Vec<PathStep>,
    pub reflection_log: Vec<String>,
    pub graph: GraphExport,
    pub metrics: Option<RunScore>,
}

/// Distill shared memory and the plan graph into the final report.
/// An empty store yields a report stating no findings.
pub fn summarize_findings(
    role: &AgentRole,
    store: &MemoryStore,
    gateway: &mut LlmGateway,
    graph: &PlanGraph,
    recorder: Option<&Recorder>,
) -> Result<Report, AgentError> {
    if role.name != RoleName::Summarizer {
        return Err(AgentError::WrongRole {
            expected: RoleName::Summarizer,
        });
    }
    let summary = store.read_aggregated_context(&role.memory_cap, 10, |formatted| {
        match gateway.summarize_memory(formatted) {
            Ok(exchange) => {
                let answer = exchange.answer.clone();
                if let Some(recorder) = recorder {
                    if exchange.tokens_in > 0 || exchange.error.is_some() {
                        recorder.record(StepKind::LlmExchange { exchange });
                    }
                }
                answer
            }
            Err(e) => format!("(summary unavailable: {e})"),
        }
    })?;
    let findings: Vec<Finding> = store
        .partition(&AgentId::new("collector"))
        .iter()
        .map(|r| Finding {
            agent: r.agent.to_string(),
            timestep: r.timestep,
            note: r.payload.clone(),
        })
        .collect();
    let reflection_log: Vec<String> = store
        .partition(&AgentId::new("exploiter"))
        .iter()
        .map(|r| r.payload.clone())
        .collect();
    let path = |status: TaskStatus| -> Vec<PathStep> {
        graph
            .tasks()
            .iter()
            .filter(|t| t.status == status)
            .map(|t| PathStep {
                task_id: t.id.0,
                phase: t.phase,
                description: t.description.clone(),
            })
            .collect()
    };
    Ok(Report {
        objective: graph.root_objective().to_string(),
        summary,
        knowledge_transfer: graph.transition_evidence().map(String::from),
        findings,
        exploitation_path: path(TaskStatus::Done),
        abandoned_strategies: path(TaskStatus::Pruned),
        reflection_log,
        graph: graph.export(),
        metrics: None,
    })
}

impl Report {
    /// Plain-text rendering with labeled sections.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("OBJECTIVE\n  {}\n\n", self.objective));
        out.push_str(&format!("SUMMARY\n  {}\n\n", self.summary));
        if let Some(kt) = &self.knowledge_transfer {
            out.push_str(&format!("KNOWLEDGE TRANSFER (recon -> exploit)\n  {kt}\n\n"));
        }
        out.push_str("FINDINGS\n");
        if self.findings.is_empty() {
            out.push_str("  (no findings)\n");
        }
        for f in &self.findings {
            out.push_str(&format!("  [{} t{}] {}\n", f.agent, f.timestep, f.note));
        }
        out.push_str("\nEXPLOITATION PATH\n");
        if self.exploitation_path.is_empty() {
            out.push_str("  (no completed path)\n");
        }
        for step in &self.exploitation_path {
            out.push_str(&format!(
                "  t{} [{}] {}\n",
                step.task_id, step.phase, step.description
            ));
        }
        if !self.abandoned_strategies.is_empty() {
            out.push_str("\nABANDONED STRATEGIES\n");
            for step in &self.abandoned_strategies {
                out.push_str(&format!(
                    "  t{} [{}] {}\n",
                    step.task_id, step.phase, step.description
                ));
            }
        }
        out.push_str("\nREFLECTION LOG\n");
        if self.reflection_log.is_empty() {
            out.push_str("  (no reflection entries)\n");
        }
        for entry in &self.reflection_log {
            out.push_str(&format!("  {entry}\n"));
        }
        out.push_str("\nMETRICS\n");
        match &self.metrics {
            Some(m) => {
                out.push_str(&format!(
                    "  solved={} subtasks={}/{} tte={} tokens={}+{} cost=${:.4}\n",
                    m.solved,
                    m.completed,
                    m.total,
                    m.tte.map(|t| t.to_string()).unwrap_or_else(|| "--".into()),
                    m.tokens_in,
                    m.tokens_out,
                    m.cost
                ));
            }
            None => out.push_str("  (not scored)\n"),
        }
        out
    }

    pub fn to_json(&self) -> String {
        crate::canonical::canonical_json_pretty(self).expect("report serializes")
    }
}

/// Rebuild a report view from a persisted transcript alone, for offline
/// rendering. Task statuses are inferred: every planned task executed, and
/// exhausted exploit tasks surface through the reflection log.
pub fn report_from_transcript(transcript: &crate::evalkit::Transcript) -> Report {
    let mut graph = PlanGraph::new(transcript.objective.clone());
    let mut findings = Vec::new();
    let mut reflection_log = Vec::new();
    let mut knowledge_transfer = None;
    let mut path = Vec::new();
    for event in &transcript.events {
        match &event.kind {
            StepKind::ToolCall {
                tool,
                request,
                response_status,
                ..
            } => {
                findings.push(Finding {
                    agent: tool.clone(),
                    timestep: event.index as u64,
                    note: format!(
                        "{} -> {}",
                        request.lines().next().unwrap_or_default(),
                        response_status
                    ),
                });
            }
            StepKind::ReflectionVerdict { note, .. } => reflection_log.push(note.clone()),
            StepKind::PhaseTransition { evidence } => {
                knowledge_transfer = Some(evidence.clone());
                let _ = graph.transition_phase(evidence.clone());
            }
            StepKind::PlanUpdate {
                task_id: Some(id),
                phase: Some(phase),
                description: Some(description),
                ..
            } => {
                let _ = graph.add_task(description.clone(), *phase, &Default::default());
                path.push(PathStep {
                    task_id: *id,
                    phase: *phase,
                    description: description.clone(),
                });
            }
            _ => {}
        }
    }
    Report {
        objective: transcript.objective.clone(),
        summary: format!(
            "(reconstructed from transcript {}; outcome {:?})",
            transcript.run_id, transcript.outcome
        ),
        knowledge_transfer,
        findings,
        exploitation_path: path,
        abandoned_strategies: Vec::new(),
        reflection_log,
        graph: graph.export(),
        metrics: None,
    }
}

fn describe_request(request: &ToolRequest) -> String {
    match request {
        ToolRequest::HttpProbe { method, path, .. } => format!("{method} {path}"),
        ToolRequest::EnumeratePaths { paths, .. } => format!("enumerate {} paths", paths.len()),
        ToolRequest::BruteForceCredentials { path, users, passwords, .. } => format!(
            "credentials {path} ({} pairs)",
            users.len() * passwords.len()
        ),
        ToolRequest::PayloadRequest { method, path, carrier, .. } => {
            format!("{method} {path} via {carrier}")
        }
        ToolRequest::Malformed { .. } => "(malformed)".to_string(),
    }
}
