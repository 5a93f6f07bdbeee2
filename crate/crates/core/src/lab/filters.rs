//! The five input-filter types applied by lab scenarios to reflected
//! parameters: none, blocklist, canonicalized blocklist, allowlist, and
//! replacement-based sanitization.

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::toolkit::encoding::url_decode;

/// Bound on Type 5 rewrite passes so adversarial inputs terminate.
pub const TYPE5_MAX_PASSES: usize = 8;

/// One rewrite rule of a replacement-based sanitizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaceRule {
    pub pattern: String,
    pub replacement: String,
}

/// Filter taxonomy. Type 1 carries no parameters; Type 5 rules are applied
/// repeatedly until fixpoint or the pass bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterSpec {
    Type1,
    Type2 { blocklist: Vec<String> },
    Type3 { blocklist: Vec<String> },
    Type4 { allow_pattern: String },
    Type5 { rules: Vec<ReplaceRule> },
}

impl FilterSpec {
    /// The motivating replacement rule: strip any `<` followed by a letter
    /// or `/` through the next `>` or the end of the input.
    pub fn tag_strip() -> Self {
        FilterSpec::Type5 {
            rules: vec![ReplaceRule {
                pattern: "<[a-zA-Z/][^>]*(?:>|$)".to_string(),
                replacement: String::new(),
            }],
        }
    }
}

/// Apply a filter to one input value.
pub fn apply_filter(input: &str, filter: &FilterSpec) -> String {
    match filter {
        FilterSpec::Type1 => input.to_string(),
        FilterSpec::Type2 { blocklist } => remove_until_stable(input, blocklist),
        FilterSpec::Type3 { blocklist } => {
            let canonical = url_decode(input).to_lowercase();
            remove_until_stable(&canonical, blocklist)
        }
        FilterSpec::Type4 { allow_pattern } => {
            match Regex::new(&format!("^(?:{allow_pattern})$")) {
                Ok(re) if re.is_match(input) => input.to_string(),
                // no full match (or a bad pattern) admits nothing
                _ => String::new(),
            }
        }
        FilterSpec::Type5 { rules } => {
            let compiled: Vec<(Regex, &str)> = rules
                .iter()
                .filter_map(|r| Regex::new(&r.pattern).ok().map(|re| (re, r.replacement.as_str())))
                .collect();
            let mut current = input.to_string();
            for _ in 0..TYPE5_MAX_PASSES {
                let mut next = current.clone();
                for (re, replacement) in &compiled {
                    next = re.replace_all(&next, *replacement).into_owned();
                }
                if next == current {
                    break;
                }
                current = next;
            }
            current
        }
    }
}

/// Remove every blocklist substring, repeating until no term remains.
/// Each pass strictly shrinks the text, so this terminates.
fn remove_until_stable(input: &str, blocklist: &[String]) -> String {
    let mut current = input.to_string();
    loop {
        let mut next = current.clone();
        for term in blocklist {
            if term.is_empty() {
                continue;
            }
            next = next.replace(term.as_str(), "");
        }
        if next == current {
            return current;
        }
        current = next;
    }
}
