//! Capability-bounded tool registry and the lab-safe reconnaissance and
//! exploitation tools.
//!
//! Every tool is a thin, deterministic HTTP primitive restricted to targets
//! declared in the run scope. The scope gate runs before any socket is
//! opened; network failures (timeouts, refused connections) are encoded as
//! data inside [`ToolResult`] so the reflection loop can reason over them,
//! while gate violations are hard errors.

pub mod encoding;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt::Display;
use std::net::SocketAddr;
use std::time::Duration;
use thiserror::Error;
use url::Url;

use crate::clock::SharedClock;
use crate::http1;
use crate::plangraph::Phase;
pub use encoding::Encoding;

/// Marker appended when a body exceeded the configured cap.
pub const TRUNCATION_MARKER: &str = "…[truncated]";

/// Default response body cap in bytes.
pub const DEFAULT_BODY_CAP: usize = 16 * 1024;

/// Placeholder token substituted in payload templates.
pub const PAYLOAD_PLACEHOLDER: &str = "{PAYLOAD}";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToolError {
    #[error("scope denied: {0} is outside the declared engagement scope")]
    ScopeDenied(String),
    #[error("invalid target url: {0}")]
    InvalidTarget(String),
    #[error("invalid template: expected exactly one {PAYLOAD_PLACEHOLDER} placeholder, found {0}")]
    InvalidTemplate(usize),
    #[error("duplicate tool name: {0}")]
    DuplicateName(String),
    #[error("tool {name} is a {actual} tool, not usable in the {requested} phase")]
    PhaseMismatch {
        name: String,
        actual: Phase,
        requested: Phase,
    },
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("malformed proposal: {0}")]
    MalformedProposal(String),
    #[error("empty wordlist")]
    EmptyWordlist,
    #[error("empty credential list")]
    EmptyCredentialList,
}

/// Allowlist of `host:port` pairs the toolkit may ever contact.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    allowed: BTreeSet<String>,
}

impl Scope {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            allowed: entries.into_iter().map(Into::into).collect(),
        }
    }

    pub fn allow(&mut self, host_port: impl Into<String>) {
        self.allowed.insert(host_port.into());
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.allowed.iter().map(String::as_str)
    }

    /// Gate check. Runs before any network activity.
    pub fn check(&self, url: &Url) -> Result<String, ToolError> {
        let host = url
            .host_str()
            .ok_or_else(|| ToolError::InvalidTarget(url.to_string()))?;
        let port = url
            .port_or_known_default()
            .ok_or_else(|| ToolError::InvalidTarget(url.to_string()))?;
        let key = format!("{host}:{port}");
        if self.allowed.contains(&key) {
            Ok(key)
        } else {
            Err(ToolError::ScopeDenied(key))
        }
    }
}

/// Single-owner cookie jar, one per engagement.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CookieJar {
    cookies: BTreeMap<String, String>,
}

impl CookieJar {
    pub fn is_empty(&self) -> bool {
        self.cookies.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.cookies.get(name).map(String::as_str)
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.cookies.insert(name.into(), value.into());
    }

    /// Value for a `Cookie:` request header, or `None` when the jar is empty.
    pub fn header_value(&self) -> Option<String> {
        if self.cookies.is_empty() {
            return None;
        }
        Some(
            self.cookies
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join("; "),
        )
    }

    /// Absorb every `Set-Cookie` header of a response.
    pub fn absorb(&mut self, response: &http1::WireResponse) {
        for value in response.headers_named("set-cookie") {
            let pair = value.split(';').next().unwrap_or_default();
            if let Some((name, val)) = pair.split_once('=') {
                self.set(name.trim(), val.trim());
            }
        }
    }
}

/// Structured outcome of one tool invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    /// HTTP status, or 0 when the exchange failed before a status existed.
    pub status: u16,
    pub headers: Vec<(String, String)>,
    /// Body text, truncated at the configured cap.
    pub body: String,
    pub latency_ms: u64,
    pub error: Option<String>,
}

impl ToolResult {
    pub fn failed(error: impl Into<String>, latency_ms: u64) -> Self {
        Self {
            status: 0,
            headers: Vec::new(),
            body: String::new(),
            latency_ms,
            error: Some(error.into()),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// One raw wire exchange, logged verbatim on the transcript: the emitted
/// request bytes, the response headers, and the capped response body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireExchange {
    pub request: String,
    pub response_status: u16,
    pub response_headers: Vec<(String, String)>,
    pub response_body: String,
    pub latency_ms: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Head,
    Put,
    Delete,
    Patch,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Head => "HEAD",
            Method::Put => "PUT",
            Method::Delete => "DELETE",
            Method::Patch => "PATCH",
        }
    }
}

impl Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where an encoded payload lands in the emitted request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Carrier {
    /// Template is the query string.
    Query,
    /// Template is the request body (form-encoded).
    Body,
    /// Template is the full request path.
    Path,
    /// Template is the value of the named header.
    Header(String),
    /// Template is the value of the named cookie.
    Cookie(String),
}

impl Display for Carrier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Carrier::Query => f.write_str("query"),
            Carrier::Body => f.write_str("body"),
            Carrier::Path => f.write_str("path"),
            Carrier::Header(name) => write!(f, "header:{name}"),
            Carrier::Cookie(name) => write!(f, "cookie:{name}"),
        }
    }
}

impl std::str::FromStr for Carrier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query" => Ok(Carrier::Query),
            "body" => Ok(Carrier::Body),
            "path" => Ok(Carrier::Path),
            other => {
                if let Some(name) = other.strip_prefix("header:") {
                    Ok(Carrier::Header(name.to_string()))
                } else if let Some(name) = other.strip_prefix("cookie:") {
                    Ok(Carrier::Cookie(name.to_string()))
                } else {
                    Err(format!("unknown carrier: {other}"))
                }
            }
        }
    }
}

impl Serialize for Carrier {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Carrier {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Typed request carried by a [`ToolInvocation`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case")]
pub enum ToolRequest {
    /// One reconnaissance request.
    HttpProbe {
        method: Method,
        path: String,
        #[serde(default)]
        headers: Vec<(String, String)>,
        #[serde(default)]
        body: Option<String>,
    },
    /// Probe a wordlist of paths, keeping entries whose status passes the
    /// filter (an empty filter keeps everything).
    EnumeratePaths {
        paths: Vec<String>,
        #[serde(default)]
        status_filter: BTreeSet<u16>,
    },
    /// Ordered credential attempts against a login form with a configured
    /// inter-request delay.
    BruteForceCredentials {
        path: String,
        users: Vec<String>,
        passwords: Vec<String>,
        #[serde(default)]
        delay_ms: u64,
    },
    /// Exploitation request: encode the payload, substitute it into the
    /// carrier location, send.
    PayloadRequest {
        method: Method,
        #[serde(default)]
        path: String,
        template: String,
        payload: String,
        #[serde(default)]
        encoding: Encoding,
        carrier: Carrier,
    },
    /// Total-function fallback for unparseable generations; never touches
    /// the network.
    Malformed { reason: String },
}

impl ToolRequest {
    /// Registry name of the tool this request drives.
    pub fn tool_name(&self) -> &'static str {
        match self {
            ToolRequest::HttpProbe { .. } => "http_probe",
            ToolRequest::EnumeratePaths { .. } => "enumerate_paths",
            ToolRequest::BruteForceCredentials { .. } => "brute_force_credentials",
            ToolRequest::PayloadRequest { .. } => "payload_request",
            ToolRequest::Malformed { .. } => "malformed",
        }
    }
}

/// A tool request bound to a base target URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool: String,
    pub target: String,
    pub request: ToolRequest,
}

impl ToolInvocation {
    pub fn new(target: impl Into<String>, request: ToolRequest) -> Self {
        Self {
            tool: request.tool_name().to_string(),
            target: target.into(),
            request,
        }
    }
}

/// Argument field kinds, for registry descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgKind {
    Text,
    Path,
    List,
    Number,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
}

/// Registered tool descriptor. The phase is immutable after registration
/// and gates lookups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub phase: Phase,
    pub description: String,
    pub argument_schema: Vec<ArgSpec>,
}

/// Name-unique registry of tools, looked up by (name, phase).
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    specs: Vec<ToolSpec>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the standard lab toolset.
    pub fn standard() -> Self {
        let mut reg = Self::new();
        let arg = |name: &str, kind: ArgKind| ArgSpec {
            name: name.into(),
            kind,
        };
        for spec in [
            ToolSpec {
                name: "http_probe".into(),
                phase: Phase::Recon,
                description: "single reconnaissance HTTP request with cookie handling".into(),
                argument_schema: vec![
                    arg("method", ArgKind::Text),
                    arg("path", ArgKind::Path),
                ],
            },
            ToolSpec {
                name: "enumerate_paths".into(),
                phase: Phase::Recon,
                description: "probe a wordlist of paths, filtering by status".into(),
                argument_schema: vec![
                    arg("paths", ArgKind::List),
                    arg("status_filter", ArgKind::List),
                ],
            },
            ToolSpec {
                name: "brute_force_credentials".into(),
                phase: Phase::Recon,
                description: "ordered credential attempts with a configured delay".into(),
                argument_schema: vec![
                    arg("path", ArgKind::Path),
                    arg("users", ArgKind::List),
                    arg("passwords", ArgKind::List),
                    arg("delay_ms", ArgKind::Number),
                ],
            },
            ToolSpec {
                name: "payload_request".into(),
                phase: Phase::Exploit,
                description: "deliver an encoded payload through a chosen carrier".into(),
                argument_schema: vec![
                    arg("template", ArgKind::Text),
                    arg("payload", ArgKind::Text),
                    arg("encoding", ArgKind::Text),
                    arg("carrier", ArgKind::Text),
                ],
            },
        ] {
            reg.register(spec).expect("standard names are unique");
        }
        reg
    }

    pub fn register(&mut self, spec: ToolSpec) -> Result<(), ToolError> {
        if self.specs.iter().any(|s| s.name == spec.name) {
            return Err(ToolError::DuplicateName(spec.name));
        }
        self.specs.push(spec);
        Ok(())
    }

    /// Look up a tool, gated by phase.
    pub fn lookup(&self, name: &str, phase: Phase) -> Result<&ToolSpec, ToolError> {
        let spec = self
            .specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        if spec.phase != phase {
            return Err(ToolError::PhaseMismatch {
                name: name.to_string(),
                actual: spec.phase,
                requested: phase,
            });
        }
        Ok(spec)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }
}

/// Everything a tool run produces: the structured result plus the raw wire
/// exchanges for the transcript.
#[derive(Debug, Clone)]
pub struct ToolOutcome {
    pub result: ToolResult,
    pub exchanges: Vec<WireExchange>,
}

/// One path probe entry from `enumerate_paths`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathProbe {
    pub path: String,
    pub status: u16,
    pub length: usize,
}

/// A matched (user, password) pair.
pub type Credentials = (String, String);

/// The bounded tool executor: registry, scope gate, session jar, caps.
pub struct Toolkit {
    pub registry: ToolRegistry,
    scope: Scope,
    pub jar: CookieJar,
    body_cap: usize,
    timeout: Duration,
    clock: SharedClock,
    sleeper: Box<dyn Fn(Duration)>,
}

impl Toolkit {
    pub fn new(scope: Scope, clock: SharedClock) -> Self {
        Self {
            registry: ToolRegistry::standard(),
            scope,
            jar: CookieJar::default(),
            body_cap: DEFAULT_BODY_CAP,
            timeout: Duration::from_millis(5_000),
            clock,
            sleeper: Box::new(std::thread::sleep),
        }
    }

    pub fn with_body_cap(mut self, cap: usize) -> Self {
        self.body_cap = cap;
        self
    }

    pub fn with_timeout_ms(mut self, ms: u64) -> Self {
        self.timeout = Duration::from_millis(ms);
        self
    }

    /// Replace the delay sleeper (tests use a no-op).
    pub fn with_sleeper(mut self, sleeper: Box<dyn Fn(Duration)>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    /// Run an invocation through the phase gate, the scope gate, and the
    /// matching tool.
    pub fn execute(
        &mut self,
        invocation: &ToolInvocation,
        phase: Phase,
    ) -> Result<ToolOutcome, ToolError> {
        if let ToolRequest::Malformed { reason } = &invocation.request {
            return Err(ToolError::MalformedProposal(reason.clone()));
        }
        self.registry.lookup(&invocation.tool, phase)?;
        let base = parse_target(&invocation.target)?;
        match &invocation.request {
            ToolRequest::HttpProbe {
                method,
                path,
                headers,
                body,
            } => {
                let (result, exchange) =
                    self.http_request(*method, &base, path, headers, body.as_deref())?;
                Ok(ToolOutcome {
                    result,
                    exchanges: vec![exchange],
                })
            }
            ToolRequest::EnumeratePaths {
                paths,
                status_filter,
            } => {
                let (entries, exchanges) = self.enumerate_paths(&base, paths, status_filter)?;
                let body = entries
                    .iter()
                    .map(|e| format!("{} {} {}", e.path, e.status, e.length))
                    .collect::<Vec<_>>()
                    .join("\n");
                Ok(ToolOutcome {
                    result: ToolResult {
                        status: 200,
                        headers: Vec::new(),
                        body,
                        latency_ms: exchanges.iter().map(|e| e.latency_ms).sum(),
                        error: None,
                    },
                    exchanges,
                })
            }
            ToolRequest::BruteForceCredentials {
                path,
                users,
                passwords,
                delay_ms,
            } => {
                let (found, exchanges) = self.brute_force_credentials(
                    &base,
                    path,
                    users,
                    passwords,
                    *delay_ms,
                    default_login_success,
                )?;
                let body = match &found {
                    Some((u, p)) => format!("authenticated: {u}/{p}"),
                    None => "no credentials matched".to_string(),
                };
                Ok(ToolOutcome {
                    result: ToolResult {
                        status: if found.is_some() { 200 } else { 0 },
                        headers: Vec::new(),
                        body,
                        latency_ms: exchanges.iter().map(|e| e.latency_ms).sum(),
                        error: found.is_none().then(|| "exhausted credential list".into()),
                    },
                    exchanges,
                })
            }
            ToolRequest::PayloadRequest {
                method,
                path,
                template,
                payload,
                encoding,
                carrier,
            } => {
                let (result, exchange) =
                    self.payload_request(&base, *method, path, template, payload, *encoding, carrier)?;
                Ok(ToolOutcome {
                    result,
                    exchanges: vec![exchange],
                })
            }
            ToolRequest::Malformed { .. } => unreachable!("handled above"),
        }
    }

    /// One scoped HTTP request. Cookies set by the response update the jar;
    /// timeouts and refused connections come back as data.
    pub fn http_request(
        &mut self,
        method: Method,
        base: &Url,
        target_path: &str,
        headers: &[(String, String)],
        body: Option<&str>,
    ) -> Result<(ToolResult, WireExchange), ToolError> {
        let host_port = self.scope.check(base)?;
        let addr = resolve(base)?;
        let mut all_headers: Vec<(String, String)> = headers.to_vec();
        if let Some(cookie) = self.jar.header_value() {
            all_headers.push(("Cookie".into(), cookie));
        }
        if body.is_some() && !all_headers.iter().any(|(n, _)| n.eq_ignore_ascii_case("content-type")) {
            all_headers.push((
                "Content-Type".into(),
                "application/x-www-form-urlencoded".into(),
            ));
        }
        let request_bytes =
            http1::build_request(method.as_str(), &host_port, target_path, &all_headers, body);
        let started = self.clock.now_ms();
        let outcome = http1::exchange(addr, &request_bytes, self.timeout);
        let latency_ms = self.clock.now_ms().saturating_sub(started);
        match outcome {
            Ok(response) => {
                self.jar.absorb(&response);
                let (capped, _truncated) = cap_body(&response.body, self.body_cap);
                let result = ToolResult {
                    status: response.status,
                    headers: response.headers.clone(),
                    body: capped.clone(),
                    latency_ms,
                    error: None,
                };
                let exchange = WireExchange {
                    request: request_bytes,
                    response_status: response.status,
                    response_headers: response.headers,
                    response_body: capped,
                    latency_ms,
                    error: None,
                };
                Ok((result, exchange))
            }
            Err(err) => {
                let label = match err.kind() {
                    std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => {
                        "timeout".to_string()
                    }
                    std::io::ErrorKind::ConnectionRefused => "connection refused".to_string(),
                    other => format!("io error: {other}"),
                };
                let result = ToolResult::failed(&label, latency_ms);
                let exchange = WireExchange {
                    request: request_bytes,
                    response_status: 0,
                    response_headers: Vec::new(),
                    response_body: String::new(),
                    latency_ms,
                    error: Some(label),
                };
                Ok((result, exchange))
            }
        }
    }

    /// Probe each wordlist path once; entries whose status passes the filter
    /// are returned in wordlist order. Per-path failures become status 0
    /// entries rather than aborting the sweep.
    pub fn enumerate_paths(
        &mut self,
        base: &Url,
        wordlist: &[String],
        status_filter: &BTreeSet<u16>,
    ) -> Result<(Vec<PathProbe>, Vec<WireExchange>), ToolError> {
        if wordlist.is_empty() {
            return Err(ToolError::EmptyWordlist);
        }
        self.scope.check(base)?;
        let mut entries = Vec::new();
        let mut exchanges = Vec::new();
        for raw in wordlist {
            let path = if raw.starts_with('/') {
                raw.clone()
            } else {
                format!("/{raw}")
            };
            let (result, exchange) = self.http_request(Method::Get, base, &path, &[], None)?;
            exchanges.push(exchange);
            let probe = PathProbe {
                path,
                status: result.status,
                length: result.body.len(),
            };
            if status_filter.is_empty() || status_filter.contains(&probe.status) {
                entries.push(probe);
            }
        }
        Ok((entries, exchanges))
    }

    /// Try credential pairs in order with the configured inter-request
    /// delay; the first pair satisfying the predicate wins. Network errors
    /// count as non-success.
    pub fn brute_force_credentials<F>(
        &mut self,
        base: &Url,
        login_path: &str,
        users: &[String],
        passwords: &[String],
        delay_ms: u64,
        success: F,
    ) -> Result<(Option<Credentials>, Vec<WireExchange>), ToolError>
    where
        F: Fn(&ToolResult) -> bool,
    {
        if users.is_empty() || passwords.is_empty() {
            return Err(ToolError::EmptyCredentialList);
        }
        self.scope.check(base)?;
        let mut exchanges = Vec::new();
        let mut first = true;
        for user in users {
            for password in passwords {
                if !first && delay_ms > 0 {
                    (self.sleeper)(Duration::from_millis(delay_ms));
                }
                first = false;
                let body = format!(
                    "username={}&password={}",
                    encoding::url_encode(user),
                    encoding::url_encode(password)
                );
                let (result, exchange) =
                    self.http_request(Method::Post, base, login_path, &[], Some(&body))?;
                exchanges.push(exchange);
                if !result.is_error() && success(&result) {
                    return Ok((Some((user.clone(), password.clone())), exchanges));
                }
            }
        }
        Ok((None, exchanges))
    }

    /// Encode the payload, substitute it into the carrier location, send.
    #[allow(clippy::too_many_arguments)]
    pub fn payload_request(
        &mut self,
        base: &Url,
        method: Method,
        path: &str,
        template: &str,
        payload: &str,
        encoding: Encoding,
        carrier: &Carrier,
    ) -> Result<(ToolResult, WireExchange), ToolError> {
        let placeholders = template.matches(PAYLOAD_PLACEHOLDER).count();
        if placeholders != 1 {
            return Err(ToolError::InvalidTemplate(placeholders));
        }
        let encoded = encoding.apply(payload);
        let filled = template.replace(PAYLOAD_PLACEHOLDER, &encoded);
        let (target_path, headers, body): (String, Vec<(String, String)>, Option<String>) =
            match carrier {
                Carrier::Query => (format!("{path}?{filled}"), Vec::new(), None),
                Carrier::Body => (path.to_string(), Vec::new(), Some(filled)),
                Carrier::Path => (filled, Vec::new(), None),
                Carrier::Header(name) => {
                    (path.to_string(), vec![(name.clone(), filled)], None)
                }
                Carrier::Cookie(name) => {
                    self.jar.set(name.clone(), filled);
                    (path.to_string(), Vec::new(), None)
                }
            };
        self.http_request(method, base, &target_path, &headers, body.as_deref())
    }
}

/// Login success heuristic used by the declarative brute-force request: a
/// redirect or any cookie grant counts.
pub fn default_login_success(result: &ToolResult) -> bool {
    result.status == 302
        || result
            .headers
            .iter()
            .any(|(n, _)| n.eq_ignore_ascii_case("set-cookie"))
}

/// Truncate a body at the cap, appending the truncation marker such that
/// the stored text never exceeds the cap.
pub fn cap_body(body: &str, cap: usize) -> (String, bool) {
    if body.len() <= cap {
        return (body.to_string(), false);
    }
    let keep = cap.saturating_sub(TRUNCATION_MARKER.len());
    let mut cut = keep;
    while cut > 0 && !body.is_char_boundary(cut) {
        cut -= 1;
    }
    (format!("{}{}", &body[..cut], TRUNCATION_MARKER), true)
}

pub fn parse_target(target: &str) -> Result<Url, ToolError> {
    Url::parse(target).map_err(|e| ToolError::InvalidTarget(format!("{target}: {e}")))
}

fn resolve(url: &Url) -> Result<SocketAddr, ToolError> {
    url.socket_addrs(|| None)
        .ok()
        .and_then(|addrs| addrs.into_iter().next())
        .ok_or_else(|| ToolError::InvalidTarget(url.to_string()))
}
