//! The cyclic orchestration loop and run configuration.
//!
//! One engagement is one control loop: the planner issues a task, the
//! matching execution agent runs it (a collector step or an exploiter
//! intra-reflection loop), the observation lands in shared memory, and
//! inter-reflection decides the next task or terminates — on a detected
//! flag, the task cap, the time budget, or a planning failure. The loop is
//! an explicit state machine; every decision lands on the transcript.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::rc::Rc;
use thiserror::Error;

use crate::agents::{
    issue_summarizer, run_collector_step, run_exploiter_step, summarize_findings, BeliefState,
    Report, Roster,
};
use crate::clock::{ManualClock, SharedClock, SystemClock};
use crate::evalkit::{
    score_run, BudgetGuard, Recorder, RunOutcome, RunScore, StepKind, Transcript, UnsolvedReason,
};
use crate::knowledge::Corpus;
use crate::lab::{scenarios, LabServer, TargetScenario};
use crate::llm::{slots, Backend, CostRates, Duty, LlmGateway, RemoteConfig, ScriptedBackend};
use crate::plangraph::{Phase, PlanGraph, TaskStatus};
use crate::reflection::{
    parse_planned_task, update_plan, FlagPolicy, IntraOutcome, LoopBudget, PlanDecision,
    PlanError, PlannerContext, StopReason,
};
use crate::toolkit::{Scope, Toolkit};

/// What the engagement runs against.
#[derive(Debug, Clone)]
pub enum TargetSelector {
    /// A bundled scenario by id; the lab server is started locally with a
    /// freshly generated flag.
    BundledScenario(String),
    /// A scenario file on disk.
    ScenarioFile(PathBuf),
    /// An already-running in-scope target.
    Url(String),
}

/// Which language-model backend drives the run.
#[derive(Debug, Clone)]
pub enum BackendSelector {
    ScriptedFile(PathBuf),
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Solved,
    Unsolved,
    ConfigError,
}

impl ExitStatus {
    pub fn code(&self) -> i32 {
        match self {
            ExitStatus::Solved => 0,
            ExitStatus::Unsolved => 1,
            ExitStatus::ConfigError => 2,
        }
    }
}

/// Run configuration. CLI flags mirror these fields.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub target: TargetSelector,
    pub backend: BackendSelector,
    /// Allowlisted `host:port` targets. A scenario run is automatically
    /// scoped to its lab server; URL runs must declare scope explicitly.
    pub scope: Vec<String>,
    pub objective: Option<String>,
    pub n_max: usize,
    pub t_max: usize,
    pub time_limit_min: u64,
    pub prompt_budget: usize,
    pub body_cap: usize,
    pub flag_prefixes: Vec<String>,
    /// Memory read depth k.
    pub read_depth: usize,
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub run_id: Option<String>,
    /// Deterministic logical clock (scripted runs) vs wall clock.
    pub deterministic_clock: bool,
    /// Tick of the deterministic clock per observation, in ms.
    pub clock_tick_ms: u64,
    /// Fixed lab port; 0 picks an ephemeral port.
    pub lab_port: u16,
    pub constraints: String,
    pub rates: CostRates,
}

impl RunConfig {
    pub fn new(target: TargetSelector, backend: BackendSelector) -> Self {
        Self {
            target,
            backend,
            scope: Vec::new(),
            objective: None,
            n_max: 10,
            t_max: 15,
            time_limit_min: 15,
            prompt_budget: crate::llm::DEFAULT_PROMPT_BUDGET,
            body_cap: crate::toolkit::DEFAULT_BODY_CAP,
            flag_prefixes: vec!["flag{".to_string()],
            read_depth: 3,
            corpus_dir: None,
            output_dir: None,
            run_id: None,
            deterministic_clock: true,
            clock_tick_ms: 1,
            lab_port: 0,
            constraints: "authorized lab exercise; stay within the declared scope; non-destructive requests only".to_string(),
            rates: CostRates::default(),
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.n_max == 0 || self.t_max == 0 {
            return Err(EngineError::Config("budgets must be positive".into()));
        }
        if self.time_limit_min == 0 {
            return Err(EngineError::Config("time limit must be positive".into()));
        }
        if self.flag_prefixes.is_empty() || self.flag_prefixes.iter().any(String::is_empty) {
            return Err(EngineError::Config(
                "flag prefixes must be non-empty".into(),
            ));
        }
        if self.read_depth == 0 {
            return Err(EngineError::Config("read depth k must be positive".into()));
        }
        if matches!(self.target, TargetSelector::Url(_)) && self.scope.is_empty() {
            return Err(EngineError::Config(
                "scope allowlist must be non-empty for URL targets".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything one engagement produces.
pub struct EngagementOutput {
    pub transcript: Transcript,
    pub report: Report,
    pub score: Option<RunScore>,
    pub exit: ExitStatus,
    /// Shared-memory snapshot export: one canonical record per line.
    pub memory_snapshot: String,
    /// Scenario ground truth as run, for replay scoring.
    pub scenario_json: Option<String>,
    pub written_files: Vec<PathBuf>,
}

/// Golden scripted-backend rules bundled per scenario.
pub fn bundled_rules(scenario_id: &str) -> Option<&'static str> {
    match scenario_id {
        "xss-attribute-filter" => Some(include_str!("../scripts/xss-attribute-filter.rules.json")),
        "xben-005-24" => Some(include_str!("../scripts/xben-005-24.rules.json")),
        "xben-041-24" => Some(include_str!("../scripts/xben-041-24.rules.json")),
        "filter-type-1" => Some(include_str!("../scripts/filter-type-1.rules.json")),
        "filter-type-2" => Some(include_str!("../scripts/filter-type-2.rules.json")),
        "filter-type-3" => Some(include_str!("../scripts/filter-type-3.rules.json")),
        "filter-type-4" => Some(include_str!("../scripts/filter-type-4.rules.json")),
        "filter-type-5" => Some(include_str!("../scripts/filter-type-5.rules.json")),
        _ => None,
    }
}

/// Run one engagement from configuration: resolve the target and backend,
/// start the lab when needed, execute the loop, score, and write outputs.
/// Configuration errors abort before any network activity.
pub fn run_engagement(config: &RunConfig) -> Result<EngagementOutput, EngineError> {
    config.validate()?;
    let backend = resolve_backend(&config.backend)?;
    match &config.target {
        TargetSelector::BundledScenario(id) => {
            let flag = scenarios::generate_flag();
            let scenario = scenarios::bundled_scenario(id, &flag)
                .ok_or_else(|| EngineError::Config(format!("unknown bundled scenario: {id}")))?;
            run_with_scenario(scenario, backend, config)
        }
        TargetSelector::ScenarioFile(path) => {
            let json = std::fs::read_to_string(path)?;
            let scenario = TargetScenario::from_json(&json)
                .map_err(|e| EngineError::Config(format!("scenario file: {e}")))?;
            scenario.validate().map_err(EngineError::Config)?;
            run_with_scenario(scenario, backend, config)
        }
        TargetSelector::Url(url) => run_with_url(url.clone(), backend, config),
    }
}

fn resolve_backend(selector: &BackendSelector) -> Result<Backend, EngineError> {
    match selector {
        BackendSelector::ScriptedFile(path) => {
            let backend =
                ScriptedBackend::from_file(path).map_err(|e| EngineError::Config(e.to_string()))?;
            Ok(Backend::Scripted(backend))
        }
        BackendSelector::Remote(remote) => {
            let backend = crate::llm::RemoteBackend::new(remote.clone())
                .map_err(|e| EngineError::Config(e.to_string()))?;
            Ok(Backend::Remote(backend))
        }
    }
}

/// Run against a prepared scenario instance: starts the lab server, scopes
/// the toolkit to it, executes, and scores against the scenario's ground
/// truth. The test suites drive this entry point directly.
pub fn run_with_scenario(
    scenario: TargetScenario,
    backend: Backend,
    config: &RunConfig,
) -> Result<EngagementOutput, EngineError> {
    config.validate()?;
    let server = LabServer::start(scenario.clone(), config.lab_port)?;
    let target_url = server.base_url();
    let mut scope = Scope::new(config.scope.clone());
    scope.allow(server.addr().to_string());
    let objective = config
        .objective
        .clone()
        .unwrap_or_else(|| scenario.objective.clone());
    let mut output = execute_engagement(
        Some(&scenario),
        target_url,
        scope,
        backend,
        objective,
        config,
    )?;
    drop(server);
    write_outputs(&mut output, config)?;
    Ok(output)
}

/// Run against an already-running URL target. No ground truth, no score.
pub fn run_with_url(
    url: String,
    backend: Backend,
    config: &RunConfig,
) -> Result<EngagementOutput, EngineError> {
    config.validate()?;
    let scope = Scope::new(config.scope.clone());
    let objective = config
        .objective
        .clone()
        .unwrap_or_else(|| "Capture the flag on the target application.".to_string());
    let mut output = execute_engagement(None, url, scope, backend, objective, config)?;
    write_outputs(&mut output, config)?;
    Ok(output)
}

fn write_outputs(output: &mut EngagementOutput, config: &RunConfig) -> Result<(), EngineError> {
    let Some(dir) = &config.output_dir else {
        return Ok(());
    };
    std::fs::create_dir_all(dir)?;
    let base = output.transcript.run_id.clone();
    let transcript_path = dir.join(format!("{base}.transcript.jsonl"));
    output
        .transcript
        .save(&transcript_path)
        .map_err(|e| EngineError::Config(format!("writing transcript: {e}")))?;
    let report_json = dir.join(format!("{base}.report.json"));
    std::fs::write(&report_json, output.report.to_json())?;
    let report_txt = dir.join(format!("{base}.report.txt"));
    std::fs::write(&report_txt, output.report.render_text())?;
    let memory_path = dir.join(format!("{base}.memory.jsonl"));
    std::fs::write(&memory_path, &output.memory_snapshot)?;
    output.written_files = vec![transcript_path, report_json, report_txt, memory_path];
    if let Some(json) = &output.scenario_json {
        let scenario_path = dir.join(format!("{base}.scenario.json"));
        std::fs::write(&scenario_path, json)?;
        output.written_files.push(scenario_path);
    }
    Ok(())
}

/// The cycle itself.
fn execute_engagement(
    scenario: Option<&TargetScenario>,
    target_url: String,
    scope: Scope,
    backend: Backend,
    objective: String,
    config: &RunConfig,
) -> Result<EngagementOutput, EngineError> {
    let clock: SharedClock = if config.deterministic_clock {
        Rc::new(ManualClock::with_tick(config.clock_tick_ms))
    } else {
        Rc::new(SystemClock::new())
    };
    let started_ms = clock.now_ms();
    let recorder = Recorder::new(clock.clone());
    let mut toolkit = Toolkit::new(scope, clock.clone())
        .with_body_cap(config.body_cap)
        .with_timeout_ms(5_000);
    let mut gateway =
        LlmGateway::new(backend, clock.clone()).with_prompt_budget(config.prompt_budget);
    let mut corpus = Corpus::bundled();
    if let Some(dir) = &config.corpus_dir {
        corpus
            .index_dir(dir, std::slice::from_ref(dir))
            .map_err(|e| EngineError::Config(format!("corpus: {e}")))?;
    }
    let roster = Roster::issue();
    let mut store = crate::srmm::MemoryStore::new();
    let mut graph = PlanGraph::new(objective.clone());
    let budget = LoopBudget::new(config.n_max, config.t_max);
    let policy = FlagPolicy::new(config.flag_prefixes.clone());
    let guard = BudgetGuard::new(clock.clone(), config.time_limit_min);

    let outcome = run_loop(
        &mut graph,
        &mut store,
        &mut toolkit,
        &mut gateway,
        &roster,
        &recorder,
        &corpus,
        &budget,
        &policy,
        &guard,
        &target_url,
        config,
    );

    let ended_ms = clock.now_ms();
    let run_id = config.run_id.clone().unwrap_or_else(|| {
        format!(
            "run-{}",
            scenario.map(|s| s.id.as_str()).unwrap_or("target")
        )
    });
    let scenario_id = scenario
        .map(|s| s.id.clone())
        .unwrap_or_else(|| "external-target".to_string());

    // report-time summarizer pass with its own read capability
    let summarizer = issue_summarizer();
    let mut report = summarize_findings(&summarizer, &store, &mut gateway, &graph, Some(&recorder))
        .expect("summarizer role is valid");

    let transcript = recorder.finish(
        run_id,
        scenario_id,
        objective,
        started_ms,
        ended_ms,
        outcome,
    );

    let score = scenario.map(|s| {
        score_run(&transcript, &s.annotation(), s, &config.rates)
            .expect("annotation derived from the same scenario")
    });
    report.metrics = score.clone();

    let exit =
        if transcript.outcome.is_solved() && score.as_ref().map(|s| s.solved).unwrap_or(true) {
            ExitStatus::Solved
        } else {
            ExitStatus::Unsolved
        };
    Ok(EngagementOutput {
        transcript,
        report,
        score,
        exit,
        memory_snapshot: store.snapshot_lines(),
        scenario_json: scenario.map(|s| s.to_json()),
        written_files: Vec::new(),
    })
}

/// Planner → agent → memory → inter-reflection, until termination.
#[allow(clippy::too_many_arguments)]
fn run_loop(
    graph: &mut PlanGraph,
    store: &mut crate::srmm::MemoryStore,
    toolkit: &mut Toolkit,
    gateway: &mut LlmGateway,
    roster: &Roster,
    recorder: &Recorder,
    corpus: &Corpus,
    budget: &LoopBudget,
    policy: &FlagPolicy,
    guard: &BudgetGuard,
    target_url: &str,
    config: &RunConfig,
) -> RunOutcome {
    // initial task from the planner; a failed first generation ends the
    // run as a planning error
    let initial = match initial_plan(gateway, recorder, corpus, graph.root_objective()) {
        Some(task) => task,
        None => {
            return RunOutcome::Unsolved {
                reason: UnsolvedReason::PlanningError,
            }
        }
    };
    let first = graph
        .add_task(initial.description, initial.phase, &BTreeSet::new())
        .expect("first task has no parents");
    recorder.record(StepKind::PlanUpdate {
        tasks_so_far: 0,
        is_success: None,
        task_id: Some(first.id.0),
        phase: Some(first.phase),
        description: Some(first.description.clone()),
        knowledge: None,
    });

    let mut tasks_executed = 0usize;
    let mut last_done: Option<crate::plangraph::TaskId> = None;
    let mut last_summary = String::new();

    loop {
        if guard.expired() {
            return RunOutcome::Unsolved {
                reason: UnsolvedReason::Timeout,
            };
        }
        let Some(current) = graph.next_ready_task().cloned() else {
            return RunOutcome::Unsolved {
                reason: UnsolvedReason::PlanningError,
            };
        };

        // recon -> exploit, once, when the planner turns to exploitation
        // after at least one completed recon task
        if current.phase == Phase::Exploit
            && graph.phase() == Phase::Recon
            && graph
                .tasks()
                .iter()
                .any(|t| t.phase == Phase::Recon && t.status == TaskStatus::Done)
        {
            let evidence = if last_summary.is_empty() {
                "(planned exploitation)".to_string()
            } else {
                last_summary.clone()
            };
            graph
                .transition_phase(evidence.clone())
                .expect("single transition");
            recorder.record(StepKind::PhaseTransition { evidence });
            // knowledge-transfer analysis at the boundary
            let summarizer = issue_summarizer();
            let _ = store.read_aggregated_context(
                &summarizer.memory_cap,
                config.read_depth,
                |formatted| match gateway.summarize_memory(formatted) {
                    Ok(exchange) => {
                        let answer = exchange.answer.clone();
                        if exchange.tokens_in > 0 || exchange.error.is_some() {
                            recorder.record(StepKind::LlmExchange { exchange });
                        }
                        answer
                    }
                    Err(_) => String::new(),
                },
            );
        }

        graph.mark_active(current.id).expect("task was pending");
        let belief = BeliefState {
            phase: graph.phase(),
            task: current.clone(),
            context: last_summary.clone(),
            constraints: config.constraints.clone(),
        };

        let result_text = match current.phase {
            Phase::Recon => {
                match run_collector_step(
                    &roster.collector,
                    &belief,
                    toolkit,
                    store,
                    recorder,
                    target_url,
                ) {
                    Ok((observation, result)) => {
                        graph.mark_done(current.id).expect("active task");
                        last_done = Some(current.id);
                        format!(
                            "{}\n---\n{}",
                            crate::canonical::canonical_json(&observation)
                                .unwrap_or_else(|_| observation.to_string()),
                            result.body
                        )
                    }
                    Err(e) => {
                        // a denied or misphased step is itself a result
                        graph.prune_branch(current.id).ok();
                        format!("collector step failed: {e}")
                    }
                }
            }
            Phase::Exploit => {
                match run_exploiter_step(
                    &roster.exploiter,
                    &belief,
                    toolkit,
                    store,
                    gateway,
                    recorder,
                    budget,
                    policy,
                    Some(corpus),
                    target_url,
                ) {
                    Ok(IntraOutcome::Succeeded(record, attempts)) => {
                        graph.mark_done(current.id).expect("active task");
                        last_done = Some(current.id);
                        format!(
                            "succeeded after {attempts} attempts status={} body={}",
                            record.response.status, record.response.body
                        )
                    }
                    Ok(IntraOutcome::Exhausted(attempts)) => {
                        // abandoned strategy: tombstone it
                        graph.prune_branch(current.id).ok();
                        format!("exhausted after {attempts} attempts without success")
                    }
                    Err(e) => {
                        graph.prune_branch(current.id).ok();
                        format!("exploiter step failed: {e}")
                    }
                }
            }
        };
        tasks_executed += 1;

        // inter-reflection
        let mut exchange_sink = |exchange: crate::llm::ChatExchange| {
            recorder.record(StepKind::LlmExchange { exchange });
        };
        let mut ctx = PlannerContext {
            gateway,
            read_depth: config.read_depth,
            corpus: Some(corpus),
            exchange_sink: &mut exchange_sink,
        };
        let decision = update_plan(
            &result_text,
            store,
            &current.description,
            &roster.planner.memory_cap,
            &mut ctx,
            budget,
            policy,
            tasks_executed,
        );
        match decision {
            Err(PlanError::CapabilityDenied(_)) | Err(PlanError::PlanningError(_)) => {
                return RunOutcome::Unsolved {
                    reason: UnsolvedReason::PlanningError,
                };
            }
            Ok(PlanDecision::Stop { reason, is_success }) => {
                recorder.record(StepKind::PlanUpdate {
                    tasks_so_far: tasks_executed,
                    is_success: Some(is_success),
                    task_id: None,
                    phase: None,
                    description: None,
                    knowledge: None,
                });
                match reason {
                    StopReason::FlagFound(flag) => {
                        recorder.record(StepKind::FlagDetected { flag: flag.clone() });
                        return RunOutcome::Solved { flag };
                    }
                    StopReason::TaskLimit => {
                        return RunOutcome::Unsolved {
                            reason: UnsolvedReason::Exhausted,
                        };
                    }
                }
            }
            Ok(PlanDecision::Continue {
                next,
                is_success,
                summary,
            }) => {
                last_summary = summary;
                let parents: BTreeSet<crate::plangraph::TaskId> = last_done.into_iter().collect();
                let added = graph
                    .add_task(next.description, next.phase, &parents)
                    .expect("parents exist");
                recorder.record(StepKind::PlanUpdate {
                    tasks_so_far: tasks_executed,
                    is_success: Some(is_success),
                    task_id: Some(added.id.0),
                    phase: Some(added.phase),
                    description: Some(added.description.clone()),
                    knowledge: corpus.best_match(&added.description).map(|d| d.id.clone()),
                });
            }
        }
    }
}

/// First task generation: the plan duty seeded with the empty-memory
/// sentinel and the root objective.
fn initial_plan(
    gateway: &mut LlmGateway,
    recorder: &Recorder,
    corpus: &Corpus,
    objective: &str,
) -> Option<crate::reflection::PlannedTask> {
    let knowledge = corpus
        .best_match(objective)
        .map(|doc| format!("{}: {}", doc.title, doc.body))
        .unwrap_or_else(|| "(none)".to_string());
    let exchange = gateway
        .complete(
            Duty::Plan,
            &slots([
                ("summary", crate::srmm::EMPTY_MEMORY_SENTINEL),
                ("current_task", objective),
                ("is_success", "false"),
                ("knowledge", knowledge.as_str()),
            ]),
        )
        .ok()?;
    let answer = exchange.answer.clone();
    recorder.record(StepKind::LlmExchange { exchange });
    parse_planned_task(&answer)
}
