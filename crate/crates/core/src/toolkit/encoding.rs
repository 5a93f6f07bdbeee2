//! Payload encoding schemes for exploitation requests.

use serde::{Deserialize, Serialize};
use std::fmt::Display;

/// Encoding applied to a payload before carrier substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Raw passthrough.
    #[default]
    None,
    /// Percent-encoding of everything outside the URI unreserved set.
    Url,
    /// Entity encoding of the five XML-significant characters.
    HtmlEntity,
}

impl Encoding {
    pub fn apply(&self, payload: &str) -> String {
        match self {
            Encoding::None => payload.to_string(),
            Encoding::Url => url_encode(payload),
            Encoding::HtmlEntity => html_entity_encode(payload),
        }
    }
}

impl Display for Encoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Encoding::None => f.write_str("none"),
            Encoding::Url => f.write_str("url"),
            Encoding::HtmlEntity => f.write_str("html-entity"),
        }
    }
}

/// Percent-encode every byte outside the unreserved set
/// `A-Z a-z 0-9 - . _ ~`.
pub fn url_encode(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    for byte in input.bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}

/// Decode a percent-encoded string once; `+` becomes a space. Invalid
/// escapes pass through unchanged.
pub fn url_decode(input: &str) -> String {
    fn hex_val(b: u8) -> Option<u8> {
        match b {
            b'0'..=b'9' => Some(b - b'0'),
            b'a'..=b'f' => Some(b - b'a' + 10),
            b'A'..=b'F' => Some(b - b'A' + 10),
            _ => None,
        }
    }
    let bytes = input.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' if i + 2 < bytes.len() => {
                if let (Some(hi), Some(lo)) = (hex_val(bytes[i + 1]), hex_val(bytes[i + 2])) {
                    out.push(hi * 16 + lo);
                    i += 3;
                } else {
                    out.push(b'%');
                    i += 1;
                }
            }
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Encode `& < > " '`.
pub fn html_entity_encode(input: &str) -> String {
    let mut out = String::with_capacity(input.len());
    for c in input.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            other => out.push(other),
        }
    }
    out
}
