//! Autonomous multi-agent engine for capture-the-flag web security
//! exercises.
//!
//! The engine wires four agent roles (planner, collector, exploiter,
//! summarizer) around a shared recurrent memory and a dual-phase reflection
//! controller, drives lab-safe HTTP tooling against a bundled simulated
//! vulnerable-target lab, and scores every run from its transcript.

pub mod agents;
pub mod canonical;
pub mod clock;
pub mod engine;
pub mod evalkit;
pub mod http1;
pub mod knowledge;
pub mod lab;
pub mod llm;
pub mod plangraph;
pub mod reflection;
pub mod srmm;
pub mod toolkit;

pub use plangraph::{Phase, PlanGraph, Task, TaskId, TaskStatus};
pub use srmm::{AgentId, MemoryRecord, MemoryStore, RoleCapability};
pub use toolkit::{ToolInvocation, ToolRequest, ToolResult};
