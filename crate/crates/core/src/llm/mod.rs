//! Backend-agnostic language-model access.
//!
//! Four reasoning duties (summarize, plan, check-success, reflect-payload)
//! each carry a versioned prompt template with named `{{slot}}`s. A
//! deterministic scripted backend drives every test; the remote backend
//! speaks the chat-completion wire protocol for live runs. Every dispatch
//! is token-accounted and bounded by a whitespace-token prompt budget.

pub mod remote;
pub mod scripted;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::clock::SharedClock;
use crate::srmm::EMPTY_MEMORY_SENTINEL;
pub use remote::{RemoteBackend, RemoteConfig, RemoteOutcome};
pub use scripted::{RulesFile, ScriptedBackend};

/// Default prompt budget in whitespace tokens.
pub const DEFAULT_PROMPT_BUDGET: usize = 4096;

/// Shared system prompt for every duty.
const SYSTEM_PROMPT: &str =
    "You assist an authorized, lab-scoped web security exercise. Stay within \
     the declared scope and answer in the exact format each request asks for.";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("unfilled template slot: {0}")]
    UnfilledSlot(String),
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

/// The four reasoning duties of the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Duty {
    Summarize,
    Plan,
    CheckSuccess,
    ReflectPayload,
}

impl Duty {
    pub fn template(&self) -> &'static str {
        match self {
            Duty::Summarize => include_str!("../../prompts/summarize.txt"),
            Duty::Plan => include_str!("../../prompts/plan.txt"),
            Duty::CheckSuccess => include_str!("../../prompts/check_success.txt"),
            Duty::ReflectPayload => include_str!("../../prompts/reflect_payload.txt"),
        }
    }

    pub fn required_slots(&self) -> &'static [&'static str] {
        match self {
            Duty::Summarize => &["context"],
            Duty::Plan => &["summary", "current_task", "is_success", "knowledge"],
            Duty::CheckSuccess => &["task", "result"],
            Duty::ReflectPayload => &["task", "history", "knowledge"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Remote,
}

/// One recorded model call: prompts, answer, accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub duty: Duty,
    pub system: String,
    pub user: String,
    pub answer: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub backend: BackendKind,
    pub duration_ms: u64,
    /// Set when the call failed softly (timeout, no matching rule); callers
    /// treat such exchanges as non-yes votes / failed generations.
    pub error: Option<String>,
    /// Whether the prompt was cut down to the budget before dispatch.
    pub truncated: bool,
}

pub enum Backend {
    Scripted(ScriptedBackend),
    Remote(RemoteBackend),
}

impl Backend {
    fn kind(&self) -> BackendKind {
        match self {
            Backend::Scripted(_) => BackendKind::Scripted,
            Backend::Remote(_) => BackendKind::Remote,
        }
    }
}

/// Slot values for one dispatch.
pub type Slots = BTreeMap<String, String>;

pub fn slots<const N: usize>(pairs: [(&str, &str); N]) -> Slots {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Gateway owning one backend, the prompt budget, and the clock used for
/// duration accounting.
pub struct LlmGateway {
    backend: Backend,
    prompt_budget: usize,
    clock: SharedClock,
}

impl LlmGateway {
    pub fn new(backend: Backend, clock: SharedClock) -> Self {
        Self {
            backend,
            prompt_budget: DEFAULT_PROMPT_BUDGET,
            clock,
        }
    }

    pub fn with_prompt_budget(mut self, budget: usize) -> Self {
        self.prompt_budget = budget;
        self
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Fill the duty's template, enforce the prompt budget, dispatch, and
    /// return the accounted exchange.
    pub fn complete(&mut self, duty: Duty, slots: &Slots) -> Result<ChatExchange, LlmError> {
        for required in duty.required_slots() {
            if !slots.contains_key(*required) {
                return Err(LlmError::UnfilledSlot((*required).to_string()));
            }
        }
        let (user, truncated) = render_within_budget(
            duty.template(),
            slots,
            self.prompt_budget
                .saturating_sub(whitespace_tokens(SYSTEM_PROMPT)),
        )?;
        let started = self.clock.now_ms();
        let (answer, tokens_in, tokens_out, error) = match &mut self.backend {
            Backend::Scripted(scripted) => match scripted.answer(&user) {
                Some(answer) => {
                    let t_in = whitespace_tokens(SYSTEM_PROMPT) + whitespace_tokens(&user);
                    let t_out = whitespace_tokens(&answer);
                    (answer, t_in as u64, t_out as u64, None)
                }
                None => (
                    String::new(),
                    (whitespace_tokens(SYSTEM_PROMPT) + whitespace_tokens(&user)) as u64,
                    0,
                    Some("no scripted rule matched".to_string()),
                ),
            },
            Backend::Remote(remote) => match remote.complete(SYSTEM_PROMPT, &user)? {
                RemoteOutcome::Answer {
                    text,
                    tokens_in,
                    tokens_out,
                } => {
                    let t_in = if tokens_in > 0 {
                        tokens_in
                    } else {
                        (whitespace_tokens(SYSTEM_PROMPT) + whitespace_tokens(&user)) as u64
                    };
                    let t_out = if tokens_out > 0 {
                        tokens_out
                    } else {
                        whitespace_tokens(&text) as u64
                    };
                    (text, t_in, t_out, None)
                }
                RemoteOutcome::TimedOut => (
                    String::new(),
                    (whitespace_tokens(SYSTEM_PROMPT) + whitespace_tokens(&user)) as u64,
                    0,
                    Some("timeout".to_string()),
                ),
            },
        };
        let duration_ms = self.clock.now_ms().saturating_sub(started);
        Ok(ChatExchange {
            duty,
            system: SYSTEM_PROMPT.to_string(),
            user,
            answer,
            tokens_in,
            tokens_out,
            backend: self.backend.kind(),
            duration_ms,
            error,
            truncated,
        })
    }

    /// Summarize an aggregated memory context. The empty-memory sentinel
    /// passes through without a backend call.
    pub fn summarize_memory(&mut self, combined_context: &str) -> Result<ChatExchange, LlmError> {
        if combined_context == EMPTY_MEMORY_SENTINEL {
            return Ok(ChatExchange {
                duty: Duty::Summarize,
                system: String::new(),
                user: String::new(),
                answer: EMPTY_MEMORY_SENTINEL.to_string(),
                tokens_in: 0,
                tokens_out: 0,
                backend: self.backend.kind(),
                duration_ms: 0,
                error: None,
                truncated: false,
            });
        }
        self.complete(Duty::Summarize, &slots([("context", combined_context)]))
    }
}

/// Whitespace tokenization: the deterministic, model-free token count.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Fill `{{slot}}` markers, trimming the largest slot from its head (oldest
/// content first) until the rendered prompt fits the budget.
fn render_within_budget(
    template: &str,
    slots: &Slots,
    budget: usize,
) -> Result<(String, bool), LlmError> {
    let render = |slots: &Slots| -> String {
        let mut out = template.to_string();
        for (name, value) in slots {
            out = out.replace(&format!("{{{{{name}}}}}"), value);
        }
        out
    };
    let mut working = slots.clone();
    let mut rendered = render(&working);
    if let Some(start) = rendered.find("{{") {
        let end = rendered[start..]
            .find("}}")
            .map(|e| start + e)
            .unwrap_or(rendered.len());
        return Err(LlmError::UnfilledSlot(rendered[start + 2..end].to_string()));
    }
    let mut truncated = false;
    while whitespace_tokens(&rendered) > budget {
        let Some((largest, size)) = working
            .iter()
            .map(|(k, v)| (k.clone(), whitespace_tokens(v)))
            .filter(|(_, n)| *n > 0)
            .max_by_key(|(_, n)| *n)
        else {
            break;
        };
        let overage = whitespace_tokens(&rendered) - budget;
        let value = working.get_mut(&largest).expect("key exists");
        let words: Vec<&str> = value.split_whitespace().collect();
        let drop = overage.min(size).max(1).min(words.len());
        *value = words[drop..].join(" ");
        truncated = true;
        rendered = render(&working);
    }
    // backstop for budgets smaller than the template itself
    if whitespace_tokens(&rendered) > budget {
        let words: Vec<&str> = rendered.split_whitespace().collect();
        rendered = words[words.len() - budget..].join(" ");
        truncated = true;
    }
    Ok((rendered, truncated))
}

/// Per-million-token pricing used for cost estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRates {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl Default for CostRates {
    fn default() -> Self {
        Self {
            input_per_million: 0.28,
            output_per_million: 0.42,
        }
    }
}

/// Token and cost totals over a set of exchanges.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenAccount {
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: f64,
}

/// Sum per-exchange counts and price them at the configured rates.
pub fn account_tokens<'a, I>(exchanges: I, rates: &CostRates) -> TokenAccount
where
    I: IntoIterator<Item = &'a ChatExchange>,
{
    let mut account = TokenAccount::default();
    for e in exchanges {
        account.tokens_in += e.tokens_in;
        account.tokens_out += e.tokens_out;
    }
    account.cost = account.tokens_in as f64 / 1_000_000.0 * rates.input_per_million
        + account.tokens_out as f64 / 1_000_000.0 * rates.output_per_million;
    account
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use std::rc::Rc;

    fn gateway(backend: ScriptedBackend) -> LlmGateway {
        LlmGateway::new(Backend::Scripted(backend), Rc::new(ManualClock::default()))
    }

    #[test]
    fn scripted_answers_in_order() {
        let mut gw = gateway(ScriptedBackend::new().rule("accomplish", ["yes", "yes", "no"]));
        let s = slots([("task", "t"), ("result", "r")]);
        let answers: Vec<String> = (0..3)
            .map(|_| gw.complete(Duty::CheckSuccess, &s).unwrap().answer)
            .collect();
        assert_eq!(answers, ["yes", "yes", "no"]);
    }

    #[test]
    fn missing_slot_is_surfaced_before_dispatch() {
        let mut gw = gateway(ScriptedBackend::new().rule("", ["x"]));
        let err = gw
            .complete(Duty::CheckSuccess, &slots([("task", "t")]))
            .unwrap_err();
        assert!(matches!(err, LlmError::UnfilledSlot(s) if s == "result"));
    }

    #[test]
    fn no_rule_match_is_a_soft_error_exchange() {
        let mut gw = gateway(ScriptedBackend::new().rule("never-present-text", ["x"]));
        let e = gw
            .complete(Duty::CheckSuccess, &slots([("task", "t"), ("result", "r")]))
            .unwrap();
        assert_eq!(e.answer, "");
        assert!(e.error.is_some());
    }

    #[test]
    fn sentinel_passes_through_without_backend_call() {
        // a backend with no rules would soft-fail if consulted
        let mut gw = gateway(ScriptedBackend::new());
        let e = gw.summarize_memory(EMPTY_MEMORY_SENTINEL).unwrap();
        assert_eq!(e.answer, EMPTY_MEMORY_SENTINEL);
        assert_eq!(e.tokens_in, 0);
        assert!(e.error.is_none());
    }

    #[test]
    fn summarize_dispatches_for_real_context() {
        let mut gw = gateway(
            ScriptedBackend::new().rule("high-value facts", ["SUMMARY: /page reflects name"]),
        );
        let e = gw.summarize_memory("[collector] found /page").unwrap();
        assert_eq!(e.answer, "SUMMARY: /page reflects name");
        assert!(e.tokens_in > 0);
    }

    #[test]
    fn oversized_slot_is_head_truncated_to_budget() {
        let mut gw =
            gateway(ScriptedBackend::new().rule("high-value", ["ok"])).with_prompt_budget(60);
        let old_to_new: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let context = old_to_new.join(" ");
        let e = gw.summarize_memory(&context).unwrap();
        assert!(e.truncated);
        assert!(whitespace_tokens(&e.user) + whitespace_tokens(&e.system) <= 60);
        // most recent evidence survives, oldest is dropped
        assert!(e.user.contains("w199"));
        assert!(!e.user.contains("w0 "));
    }

    #[test]
    fn budget_smaller_than_the_template_still_holds() {
        let mut gw = gateway(ScriptedBackend::new().rule("", ["ok"])).with_prompt_budget(30);
        let e = gw.summarize_memory("a few words of context").unwrap();
        assert!(e.truncated);
        assert!(whitespace_tokens(&e.user) + whitespace_tokens(&e.system) <= 30);
    }

    #[test]
    fn scripted_token_counts_are_exact_whitespace_counts() {
        let mut gw = gateway(ScriptedBackend::new().rule("accomplish", ["yes indeed"]));
        let e = gw
            .complete(Duty::CheckSuccess, &slots([("task", "a b"), ("result", "c")]))
            .unwrap();
        assert_eq!(
            e.tokens_in as usize,
            whitespace_tokens(SYSTEM_PROMPT) + whitespace_tokens(&e.user)
        );
        assert_eq!(e.tokens_out, 2);
    }

    #[test]
    fn accounting_sums_and_prices_exchanges() {
        let rates = CostRates::default();
        let mk = |t_in, t_out| ChatExchange {
            duty: Duty::Plan,
            system: String::new(),
            user: String::new(),
            answer: String::new(),
            tokens_in: t_in,
            tokens_out: t_out,
            backend: BackendKind::Scripted,
            duration_ms: 0,
            error: None,
            truncated: false,
        };
        let empty: Vec<ChatExchange> = Vec::new();
        let zero = account_tokens(empty.iter(), &rates);
        assert_eq!((zero.tokens_in, zero.tokens_out), (0, 0));
        assert_eq!(zero.cost, 0.0);

        let million = [mk(1_000_000, 0), mk(0, 1_000_000)];
        let acc = account_tokens(million.iter(), &rates);
        assert!((acc.cost - 0.70).abs() < 1e-9);
    }

    #[test]
    fn accounting_matches_brute_force_resum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let exchanges: Vec<ChatExchange> = (0..50)
            .map(|_| ChatExchange {
                duty: Duty::Summarize,
                system: String::new(),
                user: String::new(),
                answer: String::new(),
                tokens_in: rng.gen_range(0..10_000),
                tokens_out: rng.gen_range(0..10_000),
                backend: BackendKind::Scripted,
                duration_ms: 0,
                error: None,
                truncated: false,
            })
            .collect();
        let acc = account_tokens(exchanges.iter(), &CostRates::default());
        let (mut brute_in, mut brute_out) = (0u64, 0u64);
        for e in &exchanges {
            brute_in += e.tokens_in;
            brute_out += e.tokens_out;
        }
        assert_eq!(acc.tokens_in, brute_in);
        assert_eq!(acc.tokens_out, brute_out);
    }
}
