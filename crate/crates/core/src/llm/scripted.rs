//! Deterministic scripted backend: ordered match rules with answer queues.
//!
//! The scripted backend is the test double behind every deterministic run.
//! Rules are tried in order against the user prompt; the first match wins
//! and pops the next answer off its queue. An exhausted queue repeats its
//! last answer so scripted runs never stall.

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("rules file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("rule {index}: {reason}")]
    InvalidRule { index: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One rule as written in a rules file: exactly one of `match` (substring)
/// or `match_regex` (pattern), plus a non-empty answer queue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSpec {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub substring: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_regex: Option<String>,
    pub answers: Vec<String>,
}

/// On-disk rules file shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RulesFile {
    pub rules: Vec<RuleSpec>,
}

#[derive(Debug)]
enum Matcher {
    Substring(String),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug)]
struct Rule {
    matcher: Matcher,
    answers: Vec<String>,
    cursor: usize,
}

/// Ordered first-match-wins rule table over user prompts.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: Vec<Rule>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a substring rule.
    pub fn rule<S: Into<String>>(
        mut self,
        matcher: impl Into<String>,
        answers: impl IntoIterator<Item = S>,
    ) -> Self {
        self.rules.push(Rule {
            matcher: Matcher::Substring(matcher.into()),
            answers: answers.into_iter().map(Into::into).collect(),
            cursor: 0,
        });
        self
    }

    pub fn from_spec(spec: &RulesFile) -> Result<Self, ScriptError> {
        let mut rules = Vec::new();
        for (index, rule) in spec.rules.iter().enumerate() {
            let matcher = match (&rule.substring, &rule.match_regex) {
                (Some(s), None) => Matcher::Substring(s.clone()),
                (None, Some(p)) => Matcher::Pattern(Regex::new(p).map_err(|e| {
                    ScriptError::InvalidRule {
                        index,
                        reason: e.to_string(),
                    }
                })?),
                _ => {
                    return Err(ScriptError::InvalidRule {
                        index,
                        reason: "exactly one of `match` or `match_regex` required".into(),
                    })
                }
            };
            if rule.answers.is_empty() {
                return Err(ScriptError::InvalidRule {
                    index,
                    reason: "empty answer queue".into(),
                });
            }
            rules.push(Rule {
                matcher,
                answers: rule.answers.clone(),
                cursor: 0,
            });
        }
        Ok(Self { rules })
    }

    pub fn from_json(json: &str) -> Result<Self, ScriptError> {
        Self::from_spec(&serde_json::from_str(json)?)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ScriptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// First matching rule's next answer; `None` when nothing matches.
    pub fn answer(&mut self, user_prompt: &str) -> Option<String> {
        let rule = self
            .rules
            .iter_mut()
            .find(|r| r.matcher.matches(user_prompt))?;
        let index = rule.cursor.min(rule.answers.len() - 1);
        if rule.cursor < rule.answers.len() {
            rule.cursor += 1;
        }
        Some(rule.answers[index].clone())
    }
}
