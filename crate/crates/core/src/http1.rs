//! Minimal HTTP/1.1 wire support shared by the toolkit client and the lab
//! server.
//!
//! Requests are built with a fixed header order and no ambient headers
//! (no dates, no user agents), so the emitted bytes for a given invocation
//! are identical across runs and can be logged verbatim on the transcript.
//! Connections are one-shot (`Connection: close`).

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

/// A parsed request as seen by the lab server.
#[derive(Debug, Clone)]
pub struct WireRequest {
    pub method: String,
    /// Request target as sent, including the query string.
    pub target: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl WireRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Path portion of the target, without the query string.
    pub fn path(&self) -> &str {
        self.target.split('?').next().unwrap_or(&self.target)
    }

    /// Raw query string, if any.
    pub fn query(&self) -> Option<&str> {
        self.target.split_once('?').map(|(_, q)| q)
    }
}

/// A parsed response as seen by the toolkit client.
#[derive(Debug, Clone)]
pub struct WireResponse {
    pub status: u16,
    pub reason: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl WireResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn headers_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> {
        self.headers
            .iter()
            .filter(move |(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Build the exact bytes of one request. Header order is fixed: Host,
/// caller headers in the order given, Content-Length (when a body is
/// present), Connection.
pub fn build_request(
    method: &str,
    host: &str,
    target: &str,
    headers: &[(String, String)],
    body: Option<&str>,
) -> String {
    let mut out = format!("{method} {target} HTTP/1.1\r\n");
    out.push_str(&format!("Host: {host}\r\n"));
    for (name, value) in headers {
        out.push_str(&format!("{name}: {value}\r\n"));
    }
    if let Some(body) = body {
        out.push_str(&format!("Content-Length: {}\r\n", body.len()));
    }
    out.push_str("Connection: close\r\n\r\n");
    if let Some(body) = body {
        out.push_str(body);
    }
    out
}

/// Serialize a response. Used by the lab server.
pub fn build_response(
    status: u16,
    reason: &str,
    headers: &[(String, String)],
    body: &str,
) -> String {
    let mut out = format!("HTTP/1.1 {status} {reason}\r\n");
    for (name, value) in headers {
        out.push_str(&format!("{name}: {value}\r\n"));
    }
    out.push_str(&format!("Content-Length: {}\r\n", body.len()));
    out.push_str("Connection: close\r\n\r\n");
    out.push_str(body);
    out
}

/// Send one request to `addr` and read the full response.
pub fn exchange(
    addr: SocketAddr,
    request_bytes: &str,
    timeout: Duration,
) -> std::io::Result<WireResponse> {
    let mut stream = TcpStream::connect_timeout(&addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.write_all(request_bytes.as_bytes())?;
    read_response(&mut stream)
}

/// Parse a response from a stream: status line, headers, then the body
/// (Content-Length when present, otherwise read to close).
pub fn read_response<R: Read>(stream: &mut R) -> std::io::Result<WireResponse> {
    let mut reader = BufReader::new(stream);
    let status_line = read_line(&mut reader)?;
    let mut parts = status_line.splitn(3, ' ');
    let _version = parts.next().unwrap_or_default();
    let status: u16 = parts
        .next()
        .unwrap_or_default()
        .parse()
        .map_err(|_| bad_data("malformed status line"))?;
    let reason = parts.next().unwrap_or_default().to_string();
    let headers = read_headers(&mut reader)?;
    let body = read_body(&mut reader, &headers)?;
    Ok(WireResponse {
        status,
        reason,
        headers,
        body,
    })
}

/// Parse a request from a stream. Returns `Err` on anything that does not
/// look like HTTP/1.1; the lab server turns that into a 400.
pub fn read_request<R: Read>(stream: &mut R) -> std::io::Result<WireRequest> {
    let mut reader = BufReader::new(stream);
    let request_line = read_line(&mut reader)?;
    let mut parts = request_line.split(' ');
    let method = parts.next().unwrap_or_default().to_string();
    let target = parts.next().unwrap_or_default().to_string();
    let version = parts.next().unwrap_or_default();
    if method.is_empty() || target.is_empty() || !version.starts_with("HTTP/1.") {
        return Err(bad_data("malformed request line"));
    }
    let headers = read_headers(&mut reader)?;
    // A request carries a body only when Content-Length says so.
    let body = match content_length(&headers) {
        Some(len) => read_exact_body(&mut reader, len)?,
        None => String::new(),
    };
    Ok(WireRequest {
        method,
        target,
        headers,
        body,
    })
}

fn read_line<R: BufRead>(reader: &mut R) -> std::io::Result<String> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

fn read_headers<R: BufRead>(reader: &mut R) -> std::io::Result<Vec<(String, String)>> {
    let mut headers = Vec::new();
    loop {
        let line = read_line(reader)?;
        if line.is_empty() {
            break;
        }
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| bad_data("malformed header"))?;
        headers.push((name.trim().to_string(), value.trim().to_string()));
    }
    Ok(headers)
}

fn read_body<R: BufRead>(
    reader: &mut R,
    headers: &[(String, String)],
) -> std::io::Result<String> {
    match content_length(headers) {
        Some(len) => read_exact_body(reader, len),
        None => {
            // Close-delimited body: the peer signals the end by closing.
            let mut buf = Vec::new();
            reader.read_to_end(&mut buf)?;
            Ok(String::from_utf8_lossy(&buf).into_owned())
        }
    }
}

fn content_length(headers: &[(String, String)]) -> Option<usize> {
    headers
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
}

fn read_exact_body<R: BufRead>(reader: &mut R, len: usize) -> std::io::Result<String> {
    let mut buf = vec![0; len];
    reader.read_exact(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn bad_data(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg)
}
