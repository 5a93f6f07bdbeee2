//! Canonical textual object notation.
//!
//! Every persisted artifact (memory snapshots, transcripts, scenario files,
//! graph exports, reports) is serialized through [`canonical_json`], which
//! sorts object keys at every nesting level so equal values always produce
//! equal bytes. Diffable output is what makes replay and byte-identity
//! checks possible.

use serde::Serialize;

/// Serialize a value to JSON with object keys sorted at every level.
///
/// Routing through `serde_json::Value` is what sorts the keys: the crate's
/// map type is a `BTreeMap` when the `preserve_order` feature is off.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Pretty variant of [`canonical_json`] for human-facing files.
pub fn canonical_json_pretty<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string_pretty(&v)
}
