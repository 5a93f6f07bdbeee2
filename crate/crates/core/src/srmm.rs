//! Shared recurrent memory: a role-partitioned, append-only, bounded-read
//! text memory shared by all agents.
//!
//! Execution agents (collector, exploiter) hold write capabilities and can
//! only append; the planner holds the single read capability and can only
//! observe an aggregated, recency-bounded view. The two capability kinds are
//! mutually exclusive, which keeps the information flow unidirectional:
//! observations go in at the bottom, summaries come out at the top, and
//! nothing written is ever mutated or removed.
//!
//! Writes require `&mut self` and reads `&self`, so appends are serialized
//! and readers always observe a consistent prefix of every partition; wrap
//! the store in a lock if it must cross threads.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Display;
use thiserror::Error;

use crate::canonical::canonical_json;

/// Sentinel returned when the memory holds nothing to aggregate.
pub const EMPTY_MEMORY_SENTINEL: &str = "No shared memory available.";

/// Identifier of an agent that owns a memory partition or capability.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One appended observation: who wrote it, when (local timestep), and the
/// serialized payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub agent: AgentId,
    pub timestep: u64,
    pub payload: String,
}

/// Access rights over the store. Writers append, the reader aggregates;
/// no holder ever has both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleCapability {
    holder: AgentId,
    may_write: bool,
    may_read_aggregate: bool,
}

impl RoleCapability {
    /// Capability for an execution agent: append-only access.
    pub fn writer(holder: AgentId) -> Self {
        Self {
            holder,
            may_write: true,
            may_read_aggregate: false,
        }
    }

    /// Capability for the planner (and the report-time summarizer):
    /// aggregated read access only.
    pub fn reader(holder: AgentId) -> Self {
        Self {
            holder,
            may_write: false,
            may_read_aggregate: true,
        }
    }

    pub fn holder(&self) -> &AgentId {
        &self.holder
    }

    pub fn may_write(&self) -> bool {
        self.may_write
    }

    pub fn may_read_aggregate(&self) -> bool {
        self.may_read_aggregate
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    /// A holder attempted an operation its capability does not grant.
    /// Planner writes and executor reads both land here.
    #[error("capability denied: {holder} may not {operation} the shared memory")]
    CapabilityDenied { holder: AgentId, operation: String },
    /// Observations must render to non-empty text.
    #[error("observation for {0} rendered to empty text")]
    EmptyObservation(AgentId),
}

/// Agent-partitioned, append-only observation history.
///
/// Partitions appear in first-write order and records within a partition are
/// ordered by contiguous local timesteps starting at 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryStore {
    partitions: IndexMap<AgentId, Vec<MemoryRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append one observation to the caller's partition.
    ///
    /// The payload is the canonical structured serialization of the
    /// observation when serialization succeeds, otherwise its plain text
    /// rendering. A new partition starts at timestep 0; an existing one
    /// continues at its latest timestep plus one.
    pub fn write_observation<T: Serialize + Display>(
        &mut self,
        cap: &RoleCapability,
        observation: &T,
    ) -> Result<&MemoryRecord, MemoryError> {
        if !cap.may_write {
            return Err(MemoryError::CapabilityDenied {
                holder: cap.holder.clone(),
                operation: "write".into(),
            });
        }
        let payload =
            canonical_json(observation).unwrap_or_else(|_| observation.to_string());
        if payload.is_empty() {
            return Err(MemoryError::EmptyObservation(cap.holder.clone()));
        }
        let partition = self.partitions.entry(cap.holder.clone()).or_default();
        let timestep = partition.len() as u64;
        partition.push(MemoryRecord {
            agent: cap.holder.clone(),
            timestep,
            payload,
        });
        Ok(partition.last().expect("just pushed"))
    }

    /// The `k` most recent payloads per agent, in timestep order, keyed by
    /// first-write partition order. Total entries never exceed `k` times the
    /// number of partitions.
    pub fn filter_recent(&self, k: usize) -> IndexMap<AgentId, Vec<String>> {
        assert!(k >= 1, "read depth k must be at least 1");
        let mut out = IndexMap::new();
        for (agent, records) in &self.partitions {
            if records.is_empty() {
                continue;
            }
            let take = k.min(records.len());
            let payloads = records[records.len() - take..]
                .iter()
                .map(|r| r.payload.clone())
                .collect();
            out.insert(agent.clone(), payloads);
        }
        out
    }

    /// Aggregated, summarized view of the store for the capability holder.
    ///
    /// Pure with respect to the store: the same store, `k`, and a pure
    /// summarizer always yield the same text.
    pub fn read_aggregated_context<F>(
        &self,
        cap: &RoleCapability,
        k: usize,
        summarizer: F,
    ) -> Result<String, MemoryError>
    where
        F: FnOnce(&str) -> String,
    {
        if !cap.may_read_aggregate {
            return Err(MemoryError::CapabilityDenied {
                holder: cap.holder.clone(),
                operation: "read".into(),
            });
        }
        let formatted = format_context(&self.filter_recent(k));
        Ok(summarizer(&formatted))
    }

    /// Number of records across all partitions.
    pub fn len(&self) -> usize {
        self.partitions.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records of one agent's partition, oldest first.
    pub fn partition(&self, agent: &AgentId) -> &[MemoryRecord] {
        self.partitions
            .get(agent)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Partition owners in first-write order.
    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.partitions.keys()
    }

    /// All records in partition order, oldest first within each partition.
    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.partitions.values().flatten()
    }

    /// Snapshot export: one canonical record per line, consumed by the
    /// evaluation kit's replay mode.
    pub fn snapshot_lines(&self) -> String {
        let mut out = String::new();
        for record in self.records() {
            out.push_str(&canonical_json(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Content hash of the snapshot; equal before and after any read.
    pub fn structural_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.snapshot_lines().as_bytes());
        hasher.finalize().into()
    }
}

/// Render a filtered view as the combined context string: each agent's
/// payloads joined with `" | "`, prefixed `"[<agent>] "`, one agent per
/// line, agents in first-write order. An empty view yields the sentinel.
pub fn format_context(filtered: &IndexMap<AgentId, Vec<String>>) -> String {
    let mut blocks = Vec::new();
    for (agent, payloads) in filtered {
        if payloads.is_empty() {
            continue;
        }
        blocks.push(format!("[{}] {}", agent, payloads.join(" | ")));
    }
    if blocks.is_empty() {
        EMPTY_MEMORY_SENTINEL.to_string()
    } else {
        blocks.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde::ser::Error as _;

    fn collector() -> RoleCapability {
        RoleCapability::writer(AgentId::new("collector"))
    }

    fn exploiter() -> RoleCapability {
        RoleCapability::writer(AgentId::new("exploiter"))
    }

    fn planner() -> RoleCapability {
        RoleCapability::reader(AgentId::new("planner"))
    }

    /// Display-able value whose Serialize always fails, to drive the
    /// plain-text fallback branch.
    struct Unserializable;

    impl Display for Unserializable {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str("raw text rendering")
        }
    }

    impl Serialize for Unserializable {
        fn serialize<S: serde::Serializer>(&self, _s: S) -> Result<S::Ok, S::Error> {
            Err(S::Error::custom("not encodable"))
        }
    }

    #[test]
    fn first_append_lands_at_timestep_zero() {
        let mut store = MemoryStore::new();
        store
            .write_observation(&collector(), &"port 80 open")
            .unwrap();
        let records = store.partition(&AgentId::new("collector"));
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].timestep, 0);
        assert_eq!(records[0].payload, "\"port 80 open\"");
    }

    #[test]
    fn timesteps_are_contiguous_per_agent() {
        let mut store = MemoryStore::new();
        for _ in 0..4 {
            store.write_observation(&collector(), &"x").unwrap();
        }
        store.write_observation(&exploiter(), &"y").unwrap();
        let steps: Vec<u64> = store
            .partition(&AgentId::new("collector"))
            .iter()
            .map(|r| r.timestep)
            .collect();
        assert_eq!(steps, vec![0, 1, 2, 3]);
        assert_eq!(store.partition(&AgentId::new("exploiter"))[0].timestep, 0);
    }

    #[test]
    fn serialization_failure_falls_back_to_plain_text() {
        let mut store = MemoryStore::new();
        let rec = store
            .write_observation(&collector(), &Unserializable)
            .unwrap();
        assert_eq!(rec.payload, "raw text rendering");
    }

    #[test]
    fn structured_observation_serializes_canonically() {
        #[derive(Serialize)]
        struct Obs {
            kind: &'static str,
            endpoint: &'static str,
        }
        impl Display for Obs {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{} {}", self.kind, self.endpoint)
            }
        }
        let mut store = MemoryStore::new();
        let rec = store
            .write_observation(
                &collector(),
                &Obs {
                    kind: "probe",
                    endpoint: "/page",
                },
            )
            .unwrap();
        assert_eq!(rec.payload, r#"{"endpoint":"/page","kind":"probe"}"#);
    }

    #[test]
    fn planner_write_is_rejected_and_store_unchanged() {
        let mut store = MemoryStore::new();
        store.write_observation(&collector(), &"a").unwrap();
        let before = store.structural_hash();
        let err = store.write_observation(&planner(), &"sneaky").unwrap_err();
        assert!(matches!(err, MemoryError::CapabilityDenied { .. }));
        assert_eq!(store.structural_hash(), before);
    }

    #[test]
    fn executor_read_is_rejected() {
        let store = MemoryStore::new();
        let err = store
            .read_aggregated_context(&collector(), 3, |s| s.to_string())
            .unwrap_err();
        assert!(matches!(err, MemoryError::CapabilityDenied { .. }));
    }

    #[test]
    fn filter_recent_takes_last_k_in_order() {
        let mut store = MemoryStore::new();
        for i in 0..5 {
            store
                .write_observation(&collector(), &format!("obs{i}"))
                .unwrap();
        }
        let view = store.filter_recent(3);
        assert_eq!(
            view[&AgentId::new("collector")],
            vec!["\"obs2\"", "\"obs3\"", "\"obs4\""]
        );
    }

    #[test]
    fn filter_recent_with_short_partition_returns_everything() {
        let mut store = MemoryStore::new();
        store.write_observation(&collector(), &"a").unwrap();
        store.write_observation(&collector(), &"b").unwrap();
        let view = store.filter_recent(3);
        assert_eq!(view[&AgentId::new("collector")].len(), 2);
    }

    #[test]
    fn filter_recent_is_bounded_by_k_times_agents() {
        let mut store = MemoryStore::new();
        for _ in 0..4 {
            store.write_observation(&collector(), &"c").unwrap();
            store.write_observation(&exploiter(), &"e").unwrap();
        }
        let view = store.filter_recent(3);
        let total: usize = view.values().map(Vec::len).sum();
        assert_eq!(total, 6);
        assert!(total <= 3 * 2);
    }

    #[test]
    fn format_single_agent() {
        let mut view = IndexMap::new();
        view.insert(AgentId::new("collector"), vec!["a".into(), "b".into()]);
        assert_eq!(format_context(&view), "[collector] a | b");
    }

    #[test]
    fn format_empty_yields_sentinel() {
        assert_eq!(format_context(&IndexMap::new()), EMPTY_MEMORY_SENTINEL);
    }

    #[test]
    fn format_two_agents_in_first_write_order() {
        let mut view = IndexMap::new();
        view.insert(AgentId::new("collector"), vec!["a".into()]);
        view.insert(AgentId::new("exploiter"), vec!["b".into()]);
        assert_eq!(format_context(&view), "[collector] a\n[exploiter] b");
    }

    #[test]
    fn read_on_empty_store_propagates_sentinel() {
        let store = MemoryStore::new();
        let out = store
            .read_aggregated_context(&planner(), 3, |s| s.to_string())
            .unwrap();
        assert_eq!(out, EMPTY_MEMORY_SENTINEL);
    }

    #[test]
    fn repeated_reads_are_identical_and_pure() {
        let mut store = MemoryStore::new();
        store.write_observation(&collector(), &"found /page").unwrap();
        store.write_observation(&exploiter(), &"payload sent").unwrap();
        let before = store.structural_hash();
        let a = store
            .read_aggregated_context(&planner(), 3, |s| s.to_string())
            .unwrap();
        let b = store
            .read_aggregated_context(&planner(), 3, |s| s.to_string())
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(store.structural_hash(), before);
    }

    #[test]
    fn snapshot_is_one_canonical_record_per_line() {
        let mut store = MemoryStore::new();
        store.write_observation(&collector(), &"a").unwrap();
        store.write_observation(&collector(), &"b").unwrap();
        let snapshot = store.snapshot_lines();
        let lines: Vec<&str> = snapshot.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            r#"{"agent":"collector","payload":"\"a\"","timestep":0}"#
        );
    }

    proptest! {
        /// Monotonicity: previously stored records survive any later writes.
        #[test]
        fn writes_never_disturb_existing_records(
            ops in proptest::collection::vec((0u8..2, "[a-z]{1,8}"), 1..40)
        ) {
            let caps = [collector(), exploiter()];
            let mut store = MemoryStore::new();
            let mut seen: Vec<MemoryRecord> = Vec::new();
            for (which, text) in ops {
                let rec = store
                    .write_observation(&caps[which as usize], &text)
                    .unwrap()
                    .clone();
                for old in &seen {
                    let part = store.partition(&old.agent);
                    prop_assert_eq!(&part[old.timestep as usize], old);
                }
                seen.push(rec);
            }
        }

        /// Boundedness: the filtered view never exceeds k entries per
        /// partition.
        #[test]
        fn filter_is_bounded(
            writes in proptest::collection::vec(0u8..2, 0..60),
            k in 1usize..8
        ) {
            let caps = [collector(), exploiter()];
            let mut store = MemoryStore::new();
            for which in writes {
                store.write_observation(&caps[which as usize], &"o").unwrap();
            }
            let view = store.filter_recent(k);
            let total: usize = view.values().map(Vec::len).sum();
            prop_assert!(total <= k * 2);
            for payloads in view.values() {
                prop_assert!(payloads.len() <= k);
            }
        }
    }
}
