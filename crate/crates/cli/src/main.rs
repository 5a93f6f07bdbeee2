//! Command-line surface for the engagement engine.
//!
//! Subcommands: `run` one engagement, `bench` all bundled scenarios with
//! their golden scripts, `replay` re-score a persisted transcript,
//! `report` render a report from a transcript, `lab` start a scenario
//! server standalone.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use flagrun_core::engine::{
    bundled_rules, run_with_scenario, BackendSelector, EngineError, ExitStatus, RunConfig,
    TargetSelector,
};
use flagrun_core::evalkit::{
    avg_tte, format_rate, render_tte, score_run, subtask_completion_rate, success_rate,
    RunOutcome, Transcript,
};
use flagrun_core::lab::{scenarios, LabServer, TargetScenario};
use flagrun_core::llm::{Backend, CostRates, RemoteConfig, ScriptedBackend};

#[derive(Parser)]
#[command(
    name = "flagrun",
    about = "Autonomous multi-agent engine for capture-the-flag web security exercises",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run one engagement against a scenario or an in-scope URL.
    Run(RunArgs),
    /// Run every bundled scenario with its golden script and print the
    /// summary table.
    Bench(BenchArgs),
    /// Re-score a persisted transcript.
    Replay(ReplayArgs),
    /// Render a report from a persisted transcript.
    #[command(name = "report")]
    ReportCmd(ReportArgs),
    /// Start a scenario server standalone.
    Lab(LabArgs),
}

#[derive(Args)]
struct TargetArgs {
    /// Bundled scenario id (see `bench` for the list).
    #[arg(long, conflicts_with_all = ["scenario_file", "target"])]
    scenario: Option<String>,
    /// Scenario file on disk.
    #[arg(long, conflicts_with = "target")]
    scenario_file: Option<PathBuf>,
    /// URL of an already-running, in-scope target.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args)]
struct BackendArgs {
    /// Scripted backend rules file.
    #[arg(long, conflicts_with = "remote_url")]
    rules: Option<PathBuf>,
    /// Chat-completion endpoint base URL for live runs.
    #[arg(long)]
    remote_url: Option<String>,
    /// Model name for the remote backend.
    #[arg(long, default_value = "generic-chat-model")]
    model: String,
    /// Environment variable holding the bearer credential.
    #[arg(long, default_value = "FLAGRUN_API_KEY")]
    credential_env: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// JSON config file; fields present in it override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Allowlisted host:port entries (repeatable). Scenario runs are
    /// scoped to the lab automatically.
    #[arg(long = "scope")]
    scope: Vec<String>,
    #[arg(long)]
    objective: Option<String>,
    /// Intra-reflection attempt cap per task.
    #[arg(long, default_value_t = 10)]
    n_max: usize,
    /// Inter-reflection task cap per run.
    #[arg(long, default_value_t = 15)]
    t_max: usize,
    /// Wall-clock budget in minutes.
    #[arg(long, default_value_t = 15)]
    time_limit: u64,
    /// Prompt budget in whitespace tokens.
    #[arg(long, default_value_t = 4096)]
    prompt_budget: usize,
    /// Response body cap in bytes.
    #[arg(long, default_value_t = 16384)]
    body_cap: usize,
    /// Flag prefixes to detect (repeatable).
    #[arg(long = "flag-prefix", default_values_t = vec!["flag{".to_string()])]
    flag_prefixes: Vec<String>,
    /// Memory read depth k.
    #[arg(short = 'k', long, default_value_t = 3)]
    read_depth: usize,
    /// Directory of operator-added knowledge notes.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for transcript and report files.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    /// Use the wall clock instead of the deterministic logical clock.
    #[arg(long)]
    wall_clock: bool,
    /// Fix the lab server port (0 = ephemeral).
    #[arg(long, default_value_t = 0)]
    lab_port: u16,
}

#[derive(Args)]
struct BenchArgs {
    /// Output directory for transcripts, reports, and benchmark.json.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    t_max: usize,
    #[arg(long, default_value_t = 10)]
    n_max: usize,
}

#[derive(Args)]
struct ReplayArgs {
    /// Persisted transcript (JSON lines).
    transcript: PathBuf,
    /// Scenario file with ground truth; defaults to the bundled scenario
    /// named by the transcript, with the detected flag as ground truth.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    transcript: PathBuf,
    /// Write the rendered report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct LabArgs {
    /// Bundled scenario id or scenario file path.
    scenario: String,
    #[arg(long, default_value_t = 0)]
    port: u16,
    /// Print the planted flag (spoiler).
    #[arg(long)]
    show_flag: bool,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Replay(args) => cmd_replay(args),
        Command::ReportCmd(args) => cmd_report(args),
        Command::Lab(args) => cmd_lab(args),
    };
    std::process::exit(code);
}

fn config_error(message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    ExitStatus::ConfigError.code()
}

fn cmd_run(args: RunArgs) -> i32 {
    let target = match (&args.target.scenario, &args.target.scenario_file, &args.target.target) {
        (Some(id), None, None) => TargetSelector::BundledScenario(id.clone()),
        (None, Some(path), None) => TargetSelector::ScenarioFile(path.clone()),
        (None, None, Some(url)) => TargetSelector::Url(url.clone()),
        _ => {
            return config_error(
                "exactly one of --scenario, --scenario-file, or --target is required",
            )
        }
    };
    let backend = match (&args.backend.rules, &args.backend.remote_url) {
        (Some(path), None) => BackendSelector::ScriptedFile(path.clone()),
        (None, Some(url)) => BackendSelector::Remote(RemoteConfig {
            base_url: url.clone(),
            model: args.backend.model.clone(),
            credential_env: args.backend.credential_env.clone(),
            timeout_ms: 30_000,
            retries: 2,
        }),
        _ => return config_error("exactly one of --rules or --remote-url is required"),
    };
    let mut config = RunConfig::new(target, backend);
    config.scope = args.scope;
    config.objective = args.objective;
    config.n_max = args.n_max;
    config.t_max = args.t_max;
    config.time_limit_min = args.time_limit;
    config.prompt_budget = args.prompt_budget;
    config.body_cap = args.body_cap;
    config.flag_prefixes = args.flag_prefixes;
    config.read_depth = args.read_depth;
    config.corpus_dir = args.corpus;
    config.output_dir = args.output;
    config.run_id = args.run_id;
    config.deterministic_clock = !args.wall_clock;
    config.lab_port = args.lab_port;
    if let Some(path) = &args.config {
        if let Err(e) = apply_config_file(&mut config, path) {
            return config_error(e);
        }
    }

    match flagrun_core::engine::run_engagement(&config) {
        Ok(out) => {
            match &out.transcript.outcome {
                RunOutcome::Solved { flag } => println!("solved: {flag}"),
                RunOutcome::Unsolved { reason } => println!("unsolved: {reason:?}"),
            }
            if let Some(score) = &out.score {
                println!(
                    "subtasks {}/{}  tte {}  tokens {}+{}  cost ${:.4}",
                    score.completed,
                    score.total,
                    score
                        .tte
                        .map(|t| t.to_string())
                        .unwrap_or_else(|| "--".into()),
                    score.tokens_in,
                    score.tokens_out,
                    score.cost
                );
            }
            for file in &out.written_files {
                println!("wrote {}", file.display());
            }
            out.exit.code()
        }
        Err(EngineError::Config(message)) => config_error(message),
        Err(EngineError::Io(e)) => config_error(e),
    }
}

/// Optional overrides loaded from `--config`; present fields win over
/// flags.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scope: Option<Vec<String>>,
    objective: Option<String>,
    n_max: Option<usize>,
    t_max: Option<usize>,
    time_limit_min: Option<u64>,
    prompt_budget: Option<usize>,
    body_cap: Option<usize>,
    flag_prefixes: Option<Vec<String>>,
    read_depth: Option<usize>,
    corpus_dir: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    run_id: Option<String>,
    lab_port: Option<u16>,
    constraints: Option<String>,
}

fn apply_config_file(config: &mut RunConfig, path: &PathBuf) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let file: ConfigFile =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    macro_rules! take {
        ($field:ident) => {
            if let Some(value) = file.$field {
                config.$field = value;
            }
        };
    }
    take!(scope);
    take!(n_max);
    take!(t_max);
    take!(time_limit_min);
    take!(prompt_budget);
    take!(body_cap);
    take!(flag_prefixes);
    take!(read_depth);
    take!(lab_port);
    take!(constraints);
    if file.objective.is_some() {
        config.objective = file.objective;
    }
    if file.corpus_dir.is_some() {
        config.corpus_dir = file.corpus_dir;
    }
    if file.output_dir.is_some() {
        config.output_dir = file.output_dir;
    }
    if file.run_id.is_some() {
        config.run_id = file.run_id;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> i32 {
    let mut rows = Vec::new();
    let mut transcripts = Vec::new();
    let total = scenarios::bundled_ids().len();
    for id in scenarios::bundled_ids() {
        let flag = scenarios::generate_flag();
        let scenario = match scenarios::bundled_scenario(id, &flag) {
            Some(s) => s,
            None => return config_error(format!("missing bundled scenario {id}")),
        };
        let rules = match bundled_rules(id) {
            Some(r) => r,
            None => return config_error(format!("missing bundled rules for {id}")),
        };
        let backend = match ScriptedBackend::from_json(rules) {
            Ok(b) => Backend::Scripted(b),
            Err(e) => return config_error(e),
        };
        let mut config = RunConfig::new(
            TargetSelector::BundledScenario(id.to_string()),
            BackendSelector::ScriptedFile("bundled".into()),
        );
        config.t_max = args.t_max;
        config.n_max = args.n_max;
        config.run_id = Some(format!("bench-{id}"));
        config.output_dir = args.output.clone();
        match run_with_scenario(scenario, backend, &config) {
            Ok(out) => {
                let score = out.score.expect("scenario runs are scored");
                rows.push(score);
                transcripts.push(out.transcript);
            }
            Err(e) => return config_error(format!("{id}: {e}")),
        }
    }

    let solved = rows.iter().filter(|r| r.solved).count();
    let sr = success_rate(solved, total);
    let pairs: Vec<(usize, usize)> = rows.iter().map(|r| (r.completed, r.total)).collect();
    let scr = subtask_completion_rate(&pairs);
    let tte = avg_tte(&transcripts);

    println!(
        "{:<22} {:>7} {:>8} {:>9} {:>6} {:>12} {:>9}",
        "scenario", "solved", "sr-part", "subtasks", "tte", "tokens", "cost"
    );
    for row in &rows {
        println!(
            "{:<22} {:>7} {:>8} {:>6}/{:<2} {:>6} {:>6}+{:<5} {:>9.4}",
            row.scenario_id,
            if row.solved { "yes" } else { "no" },
            format_rate(if row.solved { 100.0 / total as f64 } else { 0.0 }),
            row.completed,
            row.total,
            row.tte.map(|t| t.to_string()).unwrap_or_else(|| "--".into()),
            row.tokens_in,
            row.tokens_out,
            row.cost,
        );
    }
    println!(
        "\noverall: SR {} ({solved}/{total})  SCR {}  avg TTE {}",
        format_rate(sr),
        format_rate(scr),
        render_tte(tte)
    );

    if let Some(dir) = &args.output {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return config_error(e);
        }
        let summary = serde_json::json!({
            "rows": rows,
            "success_rate": sr,
            "subtask_completion_rate": scr,
            "avg_tte": tte,
        });
        let path = dir.join("benchmark.json");
        match flagrun_core::canonical::canonical_json_pretty(&summary) {
            Ok(json) => {
                if let Err(e) = std::fs::write(&path, json) {
                    return config_error(e);
                }
                println!("wrote {}", path.display());
            }
            Err(e) => return config_error(e),
        }
    }
    if solved == total {
        ExitStatus::Solved.code()
    } else {
        ExitStatus::Unsolved.code()
    }
}

fn cmd_replay(args: ReplayArgs) -> i32 {
    let transcript = match Transcript::load(&args.transcript) {
        Ok(t) => t,
        Err(e) => return config_error(e),
    };
    let scenario = match &args.scenario_file {
        Some(path) => match std::fs::read_to_string(path)
            .map_err(EngineError::Io)
            .and_then(|json| {
                TargetScenario::from_json(&json).map_err(|e| EngineError::Config(e.to_string()))
            }) {
            Ok(s) => s,
            Err(e) => return config_error(e),
        },
        None => {
            // reconstruct the bundled scenario; the detected flag stands in
            // as ground truth
            let flag = match &transcript.outcome {
                RunOutcome::Solved { flag } => flag.clone(),
                RunOutcome::Unsolved { .. } => "flag{unsolved}".to_string(),
            };
            match scenarios::bundled_scenario(&transcript.scenario_id, &flag) {
                Some(s) => s,
                None => {
                    return config_error(format!(
                        "transcript names unknown scenario {}; pass --scenario-file",
                        transcript.scenario_id
                    ))
                }
            }
        }
    };
    match score_run(
        &transcript,
        &scenario.annotation(),
        &scenario,
        &CostRates::default(),
    ) {
        Ok(score) => {
            println!(
                "{}",
                flagrun_core::canonical::canonical_json_pretty(&score).expect("score serializes")
            );
            if score.solved {
                ExitStatus::Solved.code()
            } else {
                ExitStatus::Unsolved.code()
            }
        }
        Err(e) => config_error(e),
    }
}

fn cmd_report(args: ReportArgs) -> i32 {
    let transcript = match Transcript::load(&args.transcript) {
        Ok(t) => t,
        Err(e) => return config_error(e),
    };
    let report = flagrun_core::agents::report_from_transcript(&transcript);
    let text = report.render_text();
    match &args.output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                return config_error(e);
            }
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    0
}

fn cmd_lab(args: LabArgs) -> i32 {
    let flag = scenarios::generate_flag();
    let scenario = match scenarios::bundled_scenario(&args.scenario, &flag) {
        Some(s) => s,
        None => {
            let path = PathBuf::from(&args.scenario);
            match std::fs::read_to_string(&path) {
                Ok(json) => match TargetScenario::from_json(&json) {
                    Ok(s) => s,
                    Err(e) => return config_error(e),
                },
                Err(_) => {
                    return config_error(format!(
                        "unknown scenario {} (not a bundled id or readable file)",
                        args.scenario
                    ))
                }
            }
        }
    };
    let id = scenario.id.clone();
    let planted = scenario.flag.clone();
    let server = match LabServer::start(scenario, args.port) {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    println!("lab scenario {id} listening on http://{}", server.addr());
    if args.show_flag {
        println!("planted flag: {planted}");
    }
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

