//! Error-tolerant HTML tokenizer used to decide whether an injected
//! payload escaped its attribute context.
//!
//! A rendered body counts as executing script when tokenization finds a
//! `script` element or an `on`-prefixed event-handler attribute. Payload
//! text that stayed inside its original quoted attribute value never
//! produces either token, so the check is exactly "did the payload escape".
//! This is the desk-scale stand-in for a browser environment that would
//! activate the injected handler.

use serde::{Deserialize, Serialize};

/// Result of the execution check, with the triggering token named.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XssEvaluation {
    pub executed: bool,
    pub evidence: Option<String>,
}

#[derive(Debug)]
struct Element {
    name: String,
    attributes: Vec<String>,
}

/// Tokenize a rendered body and report whether script would execute.
pub fn evaluate_xss_execution(body: &str) -> XssEvaluation {
    for element in tokenize(body) {
        if element.name.eq_ignore_ascii_case("script") {
            return XssEvaluation {
                executed: true,
                evidence: Some("script element".to_string()),
            };
        }
        for attr in &element.attributes {
            let lower = attr.to_ascii_lowercase();
            if lower.starts_with("on") && lower.len() > 2 {
                return XssEvaluation {
                    executed: true,
                    evidence: Some(format!("{lower} attribute on <{}>", element.name)),
                };
            }
        }
    }
    XssEvaluation {
        executed: false,
        evidence: None,
    }
}

enum State {
    Data,
    TagOpen,
    EndTag,
    TagName,
    BeforeAttrName,
    AttrName,
    AfterAttrName,
    BeforeAttrValue,
    AttrValueDouble,
    AttrValueSingle,
    AttrValueUnquoted,
    Comment,
}

/// Total, error-tolerant tokenization: malformed markup falls back to text
/// or gets skipped, never panics.
fn tokenize(body: &str) -> Vec<Element> {
    let mut elements = Vec::new();
    let mut state = State::Data;
    let mut name = String::new();
    let mut attrs: Vec<String> = Vec::new();
    let mut attr = String::new();
    let mut chars = body.chars().peekable();

    macro_rules! finish_attr {
        () => {
            if !attr.is_empty() {
                attrs.push(std::mem::take(&mut attr));
            }
        };
    }
    macro_rules! emit {
        () => {{
            finish_attr!();
            if !name.is_empty() {
                elements.push(Element {
                    name: std::mem::take(&mut name),
                    attributes: std::mem::take(&mut attrs),
                });
            } else {
                attrs.clear();
            }
        }};
    }

    while let Some(c) = chars.next() {
        state = match state {
            State::Data => {
                if c == '<' {
                    State::TagOpen
                } else {
                    State::Data
                }
            }
            State::TagOpen => match c {
                '/' => State::EndTag,
                '!' => {
                    // comments and doctypes carry no executable tokens
                    if chars.peek() == Some(&'-') {
                        State::Comment
                    } else {
                        State::EndTag
                    }
                }
                c if c.is_ascii_alphabetic() => {
                    name.push(c.to_ascii_lowercase());
                    State::TagName
                }
                '<' => State::TagOpen,
                _ => State::Data,
            },
            State::EndTag => {
                if c == '>' {
                    State::Data
                } else {
                    State::EndTag
                }
            }
            State::Comment => {
                // tolerant: any "->" closes the comment
                if c == '>' {
                    State::Data
                } else {
                    State::Comment
                }
            }
            State::TagName => match c {
                '>' => {
                    emit!();
                    State::Data
                }
                c if c.is_whitespace() => State::BeforeAttrName,
                '/' => State::BeforeAttrName,
                _ => {
                    name.push(c.to_ascii_lowercase());
                    State::TagName
                }
            },
            State::BeforeAttrName => match c {
                '>' => {
                    emit!();
                    State::Data
                }
                '/' => State::BeforeAttrName,
                c if c.is_whitespace() => State::BeforeAttrName,
                '=' => State::BeforeAttrValue,
                _ => {
                    attr.push(c.to_ascii_lowercase());
                    State::AttrName
                }
            },
            State::AttrName => match c {
                '=' => {
                    finish_attr!();
                    // the attr just pushed owns this value
                    State::BeforeAttrValue
                }
                '>' => {
                    emit!();
                    State::Data
                }
                c if c.is_whitespace() => {
                    finish_attr!();
                    State::AfterAttrName
                }
                '/' => {
                    finish_attr!();
                    State::BeforeAttrName
                }
                _ => {
                    attr.push(c.to_ascii_lowercase());
                    State::AttrName
                }
            },
            State::AfterAttrName => match c {
                '=' => State::BeforeAttrValue,
                '>' => {
                    emit!();
                    State::Data
                }
                c if c.is_whitespace() => State::AfterAttrName,
                '/' => State::BeforeAttrName,
                _ => {
                    attr.push(c.to_ascii_lowercase());
                    State::AttrName
                }
            },
            State::BeforeAttrValue => match c {
                '"' => State::AttrValueDouble,
                '\'' => State::AttrValueSingle,
                '>' => {
                    emit!();
                    State::Data
                }
                c if c.is_whitespace() => State::BeforeAttrValue,
                _ => State::AttrValueUnquoted,
            },
            State::AttrValueDouble => {
                if c == '"' {
                    State::BeforeAttrName
                } else {
                    State::AttrValueDouble
                }
            }
            State::AttrValueSingle => {
                if c == '\'' {
                    State::BeforeAttrName
                } else {
                    State::AttrValueSingle
                }
            }
            State::AttrValueUnquoted => match c {
                '>' => {
                    emit!();
                    State::Data
                }
                c if c.is_whitespace() => State::BeforeAttrName,
                _ => State::AttrValueUnquoted,
            },
        };
    }
    // tolerate an unterminated final tag
    if !name.is_empty() {
        finish_attr!();
        elements.push(Element {
            name,
            attributes: attrs,
        });
    }
    elements
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contained_payload_does_not_execute() {
        let body = r#"<input type=text name=name value="<script>alert(1)</script>">"#;
        let eval = evaluate_xss_execution(body);
        assert!(!eval.executed);
    }

    #[test]
    fn attribute_escape_executes_with_evidence() {
        let body = r#"<input type=text name=name value="" autofocus onfocus=alert(1) x="">"#;
        let eval = evaluate_xss_execution(body);
        assert!(eval.executed);
        assert_eq!(eval.evidence.as_deref(), Some("onfocus attribute on <input>"));
    }

    #[test]
    fn intact_script_element_executes() {
        let eval = evaluate_xss_execution("<p>hi</p><script>alert(1)</script>");
        assert!(eval.executed);
        assert_eq!(eval.evidence.as_deref(), Some("script element"));
    }

    #[test]
    fn benign_page_does_not_execute() {
        let body = r#"<html><body><form action="/login" method="POST">
            <input name="username"><input name="password" type="password">
            </form><!-- note: on-call docs --></body></html>"#;
        assert!(!evaluate_xss_execution(body).executed);
    }

    #[test]
    fn handler_inside_quoted_value_is_contained() {
        let body = r#"<div data-x="onclick=alert(1)">text</div>"#;
        assert!(!evaluate_xss_execution(body).executed);
    }

    #[test]
    fn unquoted_value_then_handler_attr_executes() {
        let body = "<img src=x onerror=alert(1)>";
        let eval = evaluate_xss_execution(body);
        assert!(eval.executed);
        assert_eq!(eval.evidence.as_deref(), Some("onerror attribute on <img>"));
    }

    #[test]
    fn malformed_markup_is_total() {
        for body in [
            "<",
            "<<<<",
            "<input value=\"unterminated",
            "< script>",
            "<!---->",
            "text < 5 and > 3",
        ] {
            let _ = evaluate_xss_execution(body);
        }
    }

    #[test]
    fn bare_on_attribute_without_suffix_is_ignored() {
        // attribute literally named "on" is not an event handler
        assert!(!evaluate_xss_execution("<div on=x>").executed);
    }
}
