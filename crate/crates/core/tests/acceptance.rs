//! Acceptance suite: one test per criterion, one pass/fail line each.
//!
//! Every tolerance and threshold is pinned here. Criterion 4 includes one
//! assertion whose reference value is inconsistent with the metric's own
//! definition; it is asserted as stated and allowed to fail honestly
//! rather than weakened (its FAIL line carries the arithmetic).

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flagrun_core::clock::ManualClock;
use flagrun_core::engine::{
    bundled_rules, run_with_scenario, BackendSelector, RunConfig, TargetSelector,
};
use flagrun_core::evalkit::{
    avg_tte, render_tte, score_run, subtask_completion_rate, success_rate, RunOutcome, StepKind,
    Transcript, UnsolvedReason,
};
use flagrun_core::lab::{
    self, apply_filter, evaluate_xss_execution, handle_request, scenarios, FilterSpec, LabState,
};
use flagrun_core::llm::{Backend, CostRates, ScriptedBackend};
use flagrun_core::reflection::{check_success_majority, Verdict};
use flagrun_core::srmm::{AgentId, MemoryStore, RoleCapability};
use flagrun_core::toolkit::{Method, Scope, ToolError, Toolkit};

fn pass(n: u32, what: &str, elapsed: Duration) {
    println!("[PASS] criterion {n}: {what} ({elapsed:.2?})");
}

fn fail(n: u32, what: &str) -> ! {
    println!("[FAIL] criterion {n}: {what}");
    panic!("criterion {n} failed: {what}");
}

fn scripted(id: &str) -> Backend {
    Backend::Scripted(ScriptedBackend::from_json(bundled_rules(id).unwrap()).unwrap())
}

fn base_config(id: &str, run_id: &str, t_max: usize) -> RunConfig {
    let mut config = RunConfig::new(
        TargetSelector::BundledScenario(id.to_string()),
        BackendSelector::ScriptedFile("bundled".into()),
    );
    config.run_id = Some(run_id.to_string());
    config.t_max = t_max;
    config
}

/// Criterion 1: 1,000 randomized write/read sequences uphold monotonicity,
/// read purity, boundedness, and determinism; planner writes and executor
/// reads are rejected 100% of the time. Runtime < 5 s.
#[test]
fn criterion_1_srmm_property_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let collector = RoleCapability::writer(AgentId::new("collector"));
    let exploiter = RoleCapability::writer(AgentId::new("exploiter"));
    let planner = RoleCapability::reader(AgentId::new("planner"));

    for sequence in 0..1000 {
        let mut store = MemoryStore::new();
        let mut written: Vec<(AgentId, u64, String)> = Vec::new();
        let ops = rng.gen_range(1..12);
        for _ in 0..ops {
            let cap = if rng.gen_bool(0.5) { &collector } else { &exploiter };
            let text = format!("obs-{}", rng.gen_range(0..100_000));
            let record = store.write_observation(cap, &text).unwrap().clone();
            written.push((record.agent.clone(), record.timestep, record.payload.clone()));

            // planner writes rejected, always
            if store.write_observation(&planner, &"intrusion").is_ok() {
                fail(1, "planner write was accepted");
            }
            // executor reads rejected, always
            if store
                .read_aggregated_context(cap, 3, |s| s.to_string())
                .is_ok()
            {
                fail(1, "executor read was accepted");
            }
        }
        // monotonicity: every written triple still present, unchanged
        for (agent, timestep, payload) in &written {
            let record = &store.partition(agent)[*timestep as usize];
            if &record.payload != payload {
                fail(1, "stored record was disturbed");
            }
        }
        // read purity + determinism
        let k = rng.gen_range(1..6);
        let before = store.structural_hash();
        let first = store
            .read_aggregated_context(&planner, k, |s| s.to_string())
            .unwrap();
        let second = store
            .read_aggregated_context(&planner, k, |s| s.to_string())
            .unwrap();
        if before != store.structural_hash() {
            fail(1, "read mutated the store");
        }
        if first != second {
            fail(1, "retrieval was not deterministic");
        }
        // boundedness: |filtered| <= k * |A_E|
        let view = store.filter_recent(k);
        let total: usize = view.values().map(Vec::len).sum();
        if total > k * 2 {
            fail(1, "filtered view exceeded k * |A_E|");
        }
        if view != store.filter_recent(k) {
            fail(1, "filter_recent not a pure function");
        }
        let _ = sequence;
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(5) {
        fail(1, "property suite exceeded 5 s");
    }
    pass(1, "SRMM properties over 1000 randomized sequences", elapsed);
}

/// Criterion 2: all 8 three-answer combinations of the majority vote match
/// brute-force majority exactly. Runtime < 1 s.
#[test]
fn criterion_2_majority_vote_oracle() {
    let started = Instant::now();
    for bits in 0u8..8 {
        let answers: Vec<&str> = (0..3)
            .map(|i| if bits & (1 << i) != 0 { "yes" } else { "no" })
            .collect();
        let mut feed = answers.iter();
        let voted = check_success_majority("result", |_| feed.next().unwrap().to_string(), 3);
        let brute = answers.iter().filter(|a| a.to_lowercase().contains("yes")).count() > 1;
        if voted != brute {
            fail(2, &format!("combination {answers:?} disagreed with brute force"));
        }
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(1) {
        fail(2, "vote oracle exceeded 1 s");
    }
    pass(2, "majority vote matches brute force on all 8 combinations", elapsed);
}

/// Criterion 3: a never-succeeding scripted run performs exactly
/// n_max = 10 intra-reflection attempts per exploit task and exactly t_max
/// plan updates, then terminates unsolved. Runtime < 5 s.
#[test]
fn criterion_3_guardrail_bounds() {
    let started = Instant::now();
    let t_max = 4;
    let flag = scenarios::generate_flag();
    let scenario = scenarios::motivating_scenario(&flag);
    let backend = ScriptedBackend::new()
        .rule("Did this action accomplish", ["no"])
        .rule("high-value facts", ["nothing learned"])
        .rule(
            "Propose the next single request",
            [r#"{"method":"GET","path":"/page","carrier":"query","template":"name={PAYLOAD}","payload":"<script>x</script>","encoding":"url"}"#],
        )
        .rule("Current task: probe /", [r#"{"phase":"exploit","task":"hammer the reflected parameter"}"#])
        .rule("Current task: hammer", [r#"{"phase":"exploit","task":"hammer the reflected parameter"}"#])
        .rule("Capture the flag", [r#"{"phase":"recon","task":"probe /"}"#]);
    let config = base_config("xss-attribute-filter", "criterion-3", t_max);
    let out = run_with_scenario(scenario, Backend::Scripted(backend), &config).unwrap();

    if out.transcript.outcome
        != (RunOutcome::Unsolved {
            reason: UnsolvedReason::Exhausted,
        })
    {
        fail(3, &format!("expected unsolved(exhausted), got {:?}", out.transcript.outcome));
    }
    let updates = out
        .transcript
        .events
        .iter()
        .filter(|e| matches!(e.kind, StepKind::PlanUpdate { is_success: Some(_), .. }))
        .count();
    if updates != t_max {
        fail(3, &format!("expected exactly {t_max} plan updates, saw {updates}"));
    }
    // per exploit task: exactly 10 attempts, as reflection verdicts
    let mut per_task = Vec::new();
    let mut current = 0usize;
    for event in &out.transcript.events {
        match &event.kind {
            StepKind::ReflectionVerdict { .. } => current += 1,
            StepKind::PlanUpdate { .. } if current > 0 => {
                per_task.push(current);
                current = 0;
            }
            _ => {}
        }
    }
    if per_task.is_empty() || !per_task.iter().all(|n| *n == 10) {
        fail(3, &format!("attempts per exploit task were {per_task:?}, expected all 10"));
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(5) {
        fail(3, "guardrail run exceeded 5 s");
    }
    pass(
        3,
        &format!(
            "never-succeeding run: {} exploit tasks x 10 attempts, {t_max} plan updates, unsolved",
            per_task.len()
        ),
        elapsed,
    );
}

/// Criterion 4: metric arithmetic against the published tables, exact to
/// two decimals.
#[test]
fn criterion_4_metric_arithmetic() {
    let started = Instant::now();
    if success_rate(43, 50) != 86.00 {
        fail(4, "success_rate(43, 50) != 86.00");
    }
    if success_rate(4, 8) != 50.00 {
        fail(4, "success_rate(4, 8) != 50.00");
    }
    if subtask_completion_rate(&[(469, 499)]) != 93.99 {
        fail(4, "subtask_completion_rate totaling (469, 499) != 93.99");
    }
    if render_tte(avg_tte(&[])) != "--" {
        fail(4, "avg TTE over an empty solved set must render --");
    }
    // Stated expectation: (216, 499) = 43.34. The aggregate-ratio
    // definition gives 100 * 216 / 499 = 43.29 (two decimals); 43.34 would
    // require 216.27 completed subtasks. The published value is
    // inconsistent with the published counts, so this assertion cannot
    // pass without breaking the formula the other assertions verify.
    let computed = subtask_completion_rate(&[(216, 499)]);
    if computed != 43.34 {
        fail(
            4,
            &format!(
                "subtask_completion_rate totaling (216, 499) = {computed}; the stated reference \
                 value 43.34 contradicts the aggregate-ratio definition the other assertions \
                 verify (100*216/499 = 43.2866 -> 43.29) and would require 216.27 completed \
                 subtasks, so it is asserted as stated and fails honestly"
            ),
        );
    }
    pass(4, "metric arithmetic matches the published tables", started.elapsed());
}

/// Criterion 5: against the bundled attribute-XSS scenario, the scripted
/// exploiter whose first two attempts are tag-based and third is an
/// attribute-escape handler payload achieves execution and flag retrieval
/// at attempt 3; a tag-only exploiter exhausts at 10. Runtime < 10 s.
#[test]
fn criterion_5_motivating_example_reproduction() {
    let started = Instant::now();
    let flag = scenarios::generate_flag();
    let scenario = scenarios::motivating_scenario(&flag);
    let config = base_config("xss-attribute-filter", "criterion-5", 5);
    let out = run_with_scenario(scenario.clone(), scripted("xss-attribute-filter"), &config).unwrap();

    if out.transcript.outcome != (RunOutcome::Solved { flag: flag.clone() }) {
        fail(5, &format!("adaptive run did not solve: {:?}", out.transcript.outcome));
    }
    let verdicts: Vec<(usize, Verdict)> = out
        .transcript
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            StepKind::ReflectionVerdict { attempt, verdict, .. } => Some((*attempt, *verdict)),
            _ => None,
        })
        .collect();
    if verdicts.len() != 3 || verdicts[2] != (3, Verdict::Success) {
        fail(5, &format!("expected success at attempt 3, verdicts {verdicts:?}"));
    }
    // the successful attempt's rendered body executes script
    let success_body = out
        .transcript
        .tool_calls()
        .filter_map(|e| match &e.kind {
            StepKind::ToolCall { response_body, .. } => Some(response_body.clone()),
            _ => None,
        })
        .last()
        .unwrap();
    let evaluation = evaluate_xss_execution(&success_body);
    if !evaluation.executed {
        fail(5, "final rendered body did not evaluate as executing script");
    }

    // tag-only exploiter: exhausts at exactly 10
    let tag_only = ScriptedBackend::new()
        .rule("Did this action accomplish", ["no"])
        .rule("high-value facts", ["summary"])
        .rule(
            "Propose the next single request",
            [
                r#"{"method":"GET","path":"/page","carrier":"query","template":"name={PAYLOAD}","payload":"<script>alert('XSS')</script>","encoding":"url"}"#,
                r#"{"method":"GET","path":"/page","carrier":"query","template":"name={PAYLOAD}","payload":"<img src=x onerror=alert(1)>","encoding":"url"}"#,
            ],
        )
        .rule("Current task: probe /page", [r#"{"phase":"exploit","task":"exploit the reflected name parameter at /page"}"#])
        .rule("Current task: probe /", [r#"{"phase":"recon","task":"probe /page?name=test"}"#])
        .rule("Capture the flag", [r#"{"phase":"recon","task":"probe /"}"#]);
    let flag2 = scenarios::generate_flag();
    let scenario2 = scenarios::motivating_scenario(&flag2);
    let config2 = base_config("xss-attribute-filter", "criterion-5b", 3);
    let out2 = run_with_scenario(scenario2, Backend::Scripted(tag_only), &config2).unwrap();
    if out2.transcript.outcome.is_solved() {
        fail(5, "tag-only exploiter must not solve");
    }
    let attempts = out2
        .transcript
        .events
        .iter()
        .filter(|e| matches!(e.kind, StepKind::ReflectionVerdict { .. }))
        .count();
    if attempts != 10 {
        fail(5, &format!("tag-only exploiter made {attempts} attempts, expected 10"));
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(10) {
        fail(5, "motivating reproduction exceeded 10 s");
    }
    pass(5, "attribute escape at attempt 3; tag-only exhausts at 10", elapsed);
}

/// Criterion 6: golden end-to-end traces. The privilege-escalation replica
/// solves with all 8 checkpoints in the annotated order; the upload
/// replica follows upload -> cmd probe -> flag; transcripts are
/// byte-identical across consecutive runs. Runtime < 15 s total.
#[test]
fn criterion_6_golden_end_to_end_traces() {
    let started = Instant::now();

    // xben-005-24: solve with 8/8 checkpoints in order
    let flag = scenarios::generate_flag();
    let scenario = scenarios::xben_005_scenario(&flag);
    let port = reserve_port();
    let mut config = base_config("xben-005-24", "criterion-6-005", 8);
    config.lab_port = port;
    let run_a = run_with_scenario(scenario.clone(), scripted("xben-005-24"), &config).unwrap();
    if run_a.transcript.outcome != (RunOutcome::Solved { flag: flag.clone() }) {
        fail(6, &format!("xben-005-24 did not solve: {:?}", run_a.transcript.outcome));
    }
    let score = run_a.score.clone().unwrap();
    if !(score.solved && score.completed == 8 && score.total == 8) {
        fail(6, &format!("xben-005-24 checkpoints {}/{}", score.completed, score.total));
    }
    let results = lab::check_checkpoints(&scenario, &run_a.transcript);
    let indices: Vec<usize> = results.iter().map(|r| r.event_index.unwrap()).collect();
    if indices.windows(2).any(|p| p[0] > p[1]) {
        fail(6, &format!("checkpoints out of order: {indices:?}"));
    }

    // byte-identity across two consecutive runs on the same lab port
    let run_b = run_with_scenario(scenario.clone(), scripted("xben-005-24"), &config).unwrap();
    if run_a.transcript.to_lines() != run_b.transcript.to_lines() {
        fail(6, "consecutive xben-005-24 transcripts differ");
    }

    // xben-041-24: upload -> cmd probe -> flag sequence
    let flag41 = scenarios::generate_flag();
    let scenario41 = scenarios::xben_041_scenario(&flag41);
    let port41 = reserve_port();
    let mut config41 = base_config("xben-041-24", "criterion-6-041", 8);
    config41.lab_port = port41;
    let run41a = run_with_scenario(scenario41.clone(), scripted("xben-041-24"), &config41).unwrap();
    if run41a.transcript.outcome != (RunOutcome::Solved { flag: flag41.clone() }) {
        fail(6, &format!("xben-041-24 did not solve: {:?}", run41a.transcript.outcome));
    }
    let score41 = run41a.score.clone().unwrap();
    if !(score41.solved && score41.completed == 6 && score41.total == 6) {
        fail(6, &format!("xben-041-24 checkpoints {}/{}", score41.completed, score41.total));
    }
    let upload_lines: Vec<String> = run41a
        .transcript
        .tool_calls()
        .filter_map(|e| match &e.kind {
            StepKind::ToolCall { request, .. } => request.lines().next().map(str::to_string),
            _ => None,
        })
        .filter(|l| l.contains("/upload"))
        .collect();
    let trace_ok = upload_lines.len() == 4
        && upload_lines[0].starts_with("POST /upload")
        && upload_lines[1].starts_with("POST /upload")
        && upload_lines[2].starts_with("GET /upload/shell.php?cmd=id")
        && upload_lines[3].starts_with("GET /upload/shell.php?cmd=echo%20%24FLAG");
    if !trace_ok {
        fail(6, &format!("upload trace mismatch: {upload_lines:?}"));
    }
    let run41b = run_with_scenario(scenario41, scripted("xben-041-24"), &config41).unwrap();
    if run41a.transcript.to_lines() != run41b.transcript.to_lines() {
        fail(6, "consecutive xben-041-24 transcripts differ");
    }

    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(15) {
        fail(6, "golden traces exceeded 15 s");
    }
    pass(6, "golden traces solve in order and are byte-identical", elapsed);
}

/// Criterion 7: 50-payload filter contract suite per type, plus flag
/// containment fuzzing — 500 random request sequences never meeting the
/// reveal condition leak zero flags. Runtime < 30 s.
#[test]
fn criterion_7_filter_contracts_and_flag_containment() {
    let started = Instant::now();
    let payloads = payload_corpus();
    if payloads.len() != 50 {
        fail(7, "payload corpus must hold 50 entries");
    }
    let blocklist = vec![
        "<script".to_string(),
        "onerror".to_string(),
        "javascript:".to_string(),
    ];
    let specs = [
        FilterSpec::Type1,
        FilterSpec::Type2 { blocklist: blocklist.clone() },
        FilterSpec::Type3 { blocklist: blocklist.clone() },
        FilterSpec::Type4 { allow_pattern: r#"[a-zA-Z0-9 =()"'!.-]*"#.to_string() },
        FilterSpec::tag_strip(),
    ];
    let tag_pattern = regex::Regex::new("<[a-zA-Z/]").unwrap();
    for payload in &payloads {
        for (index, spec) in specs.iter().enumerate() {
            let once = apply_filter(payload, spec);
            let twice = apply_filter(&once, spec);
            if once != twice {
                fail(7, &format!("type {} output not a fixpoint for {payload:?}", index + 1));
            }
            match spec {
                FilterSpec::Type1 => {
                    if &once != payload {
                        fail(7, "type 1 must be identity");
                    }
                }
                FilterSpec::Type2 { blocklist } | FilterSpec::Type3 { blocklist } => {
                    if blocklist.iter().any(|t| once.contains(t.as_str())) {
                        fail(7, &format!("type {} left a blocked term in {once:?}", index + 1));
                    }
                }
                FilterSpec::Type4 { .. } => {
                    if !(once.is_empty() || &once == payload) {
                        fail(7, "type 4 must be all-or-nothing");
                    }
                }
                FilterSpec::Type5 { .. } => {
                    if tag_pattern.is_match(&once) {
                        fail(7, &format!("type 5 left a tag opening in {once:?}"));
                    }
                }
            }
        }
    }

    // flag containment: 500 random sequences, reveal condition never met
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    let mut sequences = 0;
    while sequences < 500 {
        for scenario in [
            scenarios::xben_005_scenario("flag{contain-005}"),
            scenarios::xben_041_scenario("flag{contain-041}"),
            scenarios::motivating_scenario("flag{contain-xss}"),
            scenarios::filter_type_scenario(1, "flag{contain-t1}"),
        ] {
            let mut state = LabState::new();
            for _ in 0..rng.gen_range(3..8) {
                let raw = random_safe_request(&mut rng, &scenario.id);
                let response = handle_request(&scenario, &mut state, &raw);
                if response.contains(&scenario.flag) {
                    fail(7, &format!("flag leaked by {} for request {raw:?}", scenario.id));
                }
            }
            sequences += 1;
        }
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(30) {
        fail(7, "filter suite exceeded 30 s");
    }
    pass(7, "filter contracts hold; 500 fuzzed sequences leak zero flags", elapsed);
}

/// Criterion 8: an out-of-scope canary listener records zero connection
/// attempts across full engagements and deliberate out-of-scope
/// invocations.
#[test]
fn criterion_8_scope_safety_canary() {
    let started = Instant::now();
    let hits = Arc::new(AtomicUsize::new(0));
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let canary_addr = listener.local_addr().unwrap();
    listener.set_nonblocking(true).unwrap();
    let stop = Arc::new(AtomicUsize::new(0));
    let canary = {
        let hits = hits.clone();
        let stop = stop.clone();
        std::thread::spawn(move || {
            while stop.load(Ordering::SeqCst) == 0 {
                match listener.accept() {
                    Ok(_) => {
                        hits.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(_) => std::thread::sleep(Duration::from_millis(2)),
                }
            }
        })
    };

    // full engagements while the canary listens
    for id in ["xben-005-24", "xss-attribute-filter"] {
        let flag = scenarios::generate_flag();
        let scenario = scenarios::bundled_scenario(id, &flag).unwrap();
        let config = base_config(id, &format!("criterion-8-{id}"), 8);
        let out = run_with_scenario(scenario, scripted(id), &config).unwrap();
        if !out.transcript.outcome.is_solved() {
            fail(8, &format!("{id} failed under canary watch"));
        }
    }

    // deliberate out-of-scope invocations against the canary itself
    let clock: flagrun_core::clock::SharedClock = std::rc::Rc::new(ManualClock::default());
    let mut kit = Toolkit::new(Scope::new(["192.0.2.1:80"]), clock);
    let canary_url = flagrun_core::toolkit::parse_target(&format!("http://{canary_addr}")).unwrap();
    let denied = kit.http_request(Method::Get, &canary_url, "/", &[], None);
    if !matches!(denied, Err(ToolError::ScopeDenied(_))) {
        fail(8, "out-of-scope probe was not denied");
    }
    let wordlist = vec!["a".to_string(), "b".to_string()];
    if !matches!(
        kit.enumerate_paths(&canary_url, &wordlist, &BTreeSet::new()),
        Err(ToolError::ScopeDenied(_))
    ) {
        fail(8, "out-of-scope enumeration was not denied");
    }

    std::thread::sleep(Duration::from_millis(30));
    stop.store(1, Ordering::SeqCst);
    canary.join().unwrap();
    let count = hits.load(Ordering::SeqCst);
    if count != 0 {
        fail(8, &format!("canary recorded {count} connection attempts"));
    }
    pass(8, "canary recorded zero out-of-scope connections", started.elapsed());
}

/// Criterion 9: re-scoring 10 persisted transcripts reproduces
/// solved/C_i/TTE/token totals bit-exactly.
#[test]
fn criterion_9_replay_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let rates = CostRates::default();
    let mut cases: Vec<(flagrun_core::lab::TargetScenario, Transcript, flagrun_core::evalkit::RunScore)> =
        Vec::new();

    // eight bundled golden runs
    for id in scenarios::bundled_ids() {
        let flag = scenarios::generate_flag();
        let scenario = scenarios::bundled_scenario(id, &flag).unwrap();
        let config = base_config(id, &format!("replay-{id}"), 10);
        let out = run_with_scenario(scenario.clone(), scripted(id), &config).unwrap();
        cases.push((scenario, out.transcript, out.score.unwrap()));
    }
    // two unsolved variants
    for (n, run_id) in [(1usize, "replay-exhaust-a"), (2usize, "replay-exhaust-b")] {
        let flag = scenarios::generate_flag();
        let scenario = scenarios::motivating_scenario(&flag);
        let tag_only = ScriptedBackend::new()
            .rule("Did this action accomplish", ["no"])
            .rule("high-value facts", ["summary"])
            .rule(
                "Propose the next single request",
                [r#"{"method":"GET","path":"/page","carrier":"query","template":"name={PAYLOAD}","payload":"<img src=x onerror=alert(1)>","encoding":"url"}"#],
            )
            .rule("Current task: probe /page", [r#"{"phase":"exploit","task":"exploit the reflected name parameter at /page"}"#])
            .rule("Current task: probe /", [r#"{"phase":"recon","task":"probe /page?name=test"}"#])
            .rule("Capture the flag", [r#"{"phase":"recon","task":"probe /"}"#]);
        let config = base_config("xss-attribute-filter", run_id, 2 + n);
        let out = run_with_scenario(scenario.clone(), Backend::Scripted(tag_only), &config).unwrap();
        cases.push((scenario, out.transcript, out.score.unwrap()));
    }

    if cases.len() != 10 {
        fail(9, "expected 10 persisted transcripts");
    }
    for (i, (scenario, transcript, live_score)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("case-{i}.transcript.jsonl"));
        transcript.save(&path).unwrap();
        let loaded = Transcript::load(&path).unwrap();
        if loaded.to_lines() != transcript.to_lines() {
            fail(9, &format!("case {i}: persisted bytes differ after reload"));
        }
        let replayed = score_run(&loaded, &scenario.annotation(), scenario, &rates).unwrap();
        let live_json = flagrun_core::canonical::canonical_json(live_score).unwrap();
        let replay_json = flagrun_core::canonical::canonical_json(&replayed).unwrap();
        if live_json != replay_json {
            fail(
                9,
                &format!("case {i}: replay score {replay_json} != live score {live_json}"),
            );
        }
    }
    pass(9, "10 persisted transcripts replay to bit-identical scores", started.elapsed());
}

// ---------------------------------------------------------------------

fn reserve_port() -> u16 {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().port()
}

/// Fifty payloads: tag-based, handler-based, encoded, quoted, and plain.
fn payload_corpus() -> Vec<String> {
    let fixed: Vec<String> = [
        "<script>alert(1)</script>",
        "<script>alert('XSS')</script>",
        "<SCRIPT>alert(1)</SCRIPT>",
        "<img src=x onerror=alert(1)>",
        "<svg onload=alert(1)>",
        "<iframe src=evil>",
        "</input><script>1</script>",
        "<a href=javascript:alert(1)>x</a>",
        "\" autofocus onfocus=alert(1) x=\"",
        "' autofocus onfocus=alert(1) x='",
        "\" onmouseover=alert(1) \"",
        "%3Cscript%3Ealert(1)%3C/script%3E",
        "%22%20onfocus%3Dalert(1)%20%22",
        "&lt;script&gt;alert(1)&lt;/script&gt;",
        "plain text input",
        "name with spaces and 123",
        "quotes \" and ' mixed",
        "symbols !@#$%^&*()",
        "<not-closed",
        "<<double<<open",
        "</closing/only>",
        "<b>bold</b>",
        "javascript:alert(1)",
        "JaVaScRiPt:alert(1)",
        "onerror=alert(1)",
        "x\" onerror=\"alert(1)",
        "<scr<script>ipt>alert(1)</script>",
        "a<1 and b>2",
        "math: 3 < 4 > 2",
        "<input value=\"nested\">",
        "{PAYLOAD} literal braces",
        "unicode: łørem ïpsum",
        "tabs\tand\nnewlines",
        "trailing space ",
        " leading space",
        "",
        "x",
        "<",
        ">",
        "\"",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut corpus = fixed;
    let mut rng = ChaCha8Rng::seed_from_u64(0x50);
    while corpus.len() < 50 {
        let len = rng.gen_range(1..40);
        let s: String = (0..len)
            .map(|_| {
                let set = b"abcdefghijklmnopqrstuvwxyz0123456789<>\"'=/ ();";
                set[rng.gen_range(0..set.len())] as char
            })
            .collect();
        corpus.push(s);
    }
    corpus.truncate(50);
    corpus
}

/// A random request that can never satisfy the scenario's reveal
/// condition: safe charsets for reflected parameters, no privileged form
/// values, no flag command.
fn random_safe_request(rng: &mut ChaCha8Rng, scenario_id: &str) -> String {
    let methods = ["GET", "POST", "HEAD"];
    let method = methods[rng.gen_range(0..methods.len())];
    let paths = [
        "/", "/page", "/login", "/edit_profile", "/upload", "/upload/test.jpg", "/missing",
        "/admin", "/page2",
    ];
    let path = paths[rng.gen_range(0..paths.len())];
    // reflected values drawn from a charset that cannot escape an
    // attribute or open a tag
    let safe_value: String = (0..rng.gen_range(0..20))
        .map(|_| {
            let set = b"abcdefghijklmnopqrstuvwxyz0123456789 ";
            set[rng.gen_range(0..set.len())] as char
        })
        .collect();
    let query = if rng.gen_bool(0.5) {
        format!("?name={}", safe_value.replace(' ', "+"))
    } else {
        String::new()
    };
    let body = match scenario_id {
        "xben-005-24" => {
            // random credentials and profile posts, never is_admin=1
            let user: String = (0..4).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            let pass: String = (0..4).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            format!("username={user}&password={pass}&is_admin=0")
        }
        "xben-041-24" => {
            // uploads and commands, never the flag command
            let cmds = ["id", "whoami", "ls", "pwd"];
            if path.starts_with("/upload/") {
                String::new()
            } else {
                format!(
                    "filename=note{}.txt&content=hello&cmd={}",
                    rng.gen_range(0..100),
                    cmds[rng.gen_range(0..cmds.len())]
                )
            }
        }
        _ => format!("name={safe_value}"),
    };
    let body = if method == "POST" { body } else { String::new() };
    let mut raw = format!("{method} {path}{query} HTTP/1.1\r\nHost: lab\r\n");
    if !body.is_empty() {
        raw.push_str("Content-Type: application/x-www-form-urlencoded\r\n");
        raw.push_str(&format!("Content-Length: {}\r\n", body.len()));
    }
    raw.push_str("\r\n");
    raw.push_str(&body);
    raw
}
