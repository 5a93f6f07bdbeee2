//! Penetration-path planning: a dynamically evolving DAG of tasks with
//! dependency edges, phase tags, and prune/extend operations.
//!
//! The graph is single-writer (the orchestration loop); each inter-reflection
//! step appends at most one task, the engagement phase moves recon → exploit
//! at most once, and pruned tasks remain in the graph as tombstones so the
//! final report can list abandoned strategies.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt::Display;
use thiserror::Error;

/// Engagement phase. Tool access is partitioned by phase into disjoint
/// action spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Recon,
    Exploit,
}

impl Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Recon => f.write_str("recon"),
            Phase::Exploit => f.write_str("exploit"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Active,
    Done,
    Pruned,
}

/// Task identifier; assigned in insertion order, which doubles as the
/// deterministic tie-breaker.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct TaskId(pub u64);

impl Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// One node of the attack graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub description: String,
    pub phase: Phase,
    pub status: TaskStatus,
    pub parent_ids: BTreeSet<TaskId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanGraphError {
    #[error("unknown parent task {0}")]
    UnknownParent(TaskId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("edge ({0} -> {1}) would close a cycle")]
    CycleError(TaskId, TaskId),
    #[error("cannot prune {0}: task is done")]
    CannotPruneDone(TaskId),
    #[error("phase transition already happened")]
    AlreadyExploit,
    #[error("invalid status transition for {task}: {from:?} -> {to:?}")]
    InvalidStatus {
        task: TaskId,
        from: TaskStatus,
        to: TaskStatus,
    },
    #[error("task {0} cannot become active: another task is active")]
    AnotherTaskActive(TaskId),
}

/// Serializable export of the graph, embedded in final reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphExport {
    pub root_objective: String,
    pub phase: Phase,
    pub nodes: Vec<Task>,
    pub edges: Vec<(TaskId, TaskId)>,
}

/// Directed acyclic graph of tasks with dependency edges.
#[derive(Debug, Clone)]
pub struct PlanGraph {
    tasks: Vec<Task>,
    edges: BTreeSet<(TaskId, TaskId)>,
    phase: Phase,
    root_objective: String,
    transition_evidence: Option<String>,
}

impl PlanGraph {
    pub fn new(root_objective: impl Into<String>) -> Self {
        Self {
            tasks: Vec::new(),
            edges: BTreeSet::new(),
            phase: Phase::Recon,
            root_objective: root_objective.into(),
            transition_evidence: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn root_objective(&self) -> &str {
        &self.root_objective
    }

    /// The summary that justified the recon → exploit transition, if it
    /// happened.
    pub fn transition_evidence(&self) -> Option<&str> {
        self.transition_evidence.as_deref()
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.tasks.get(id.0 as usize)
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn edges(&self) -> impl Iterator<Item = &(TaskId, TaskId)> {
        self.edges.iter()
    }

    /// Insert a new pending task depending on `parents`.
    pub fn add_task(
        &mut self,
        description: impl Into<String>,
        phase: Phase,
        parents: &BTreeSet<TaskId>,
    ) -> Result<Task, PlanGraphError> {
        for p in parents {
            if self.task(*p).is_none() {
                return Err(PlanGraphError::UnknownParent(*p));
            }
        }
        let id = TaskId(self.tasks.len() as u64);
        let task = Task {
            id,
            description: description.into(),
            phase,
            status: TaskStatus::Pending,
            parent_ids: parents.clone(),
        };
        self.tasks.push(task.clone());
        for p in parents {
            self.edges.insert((*p, id));
        }
        debug_assert!(self.topological_order().is_some());
        Ok(task)
    }

    /// Add a dependency edge between two existing tasks, rejecting any edge
    /// that would close a cycle.
    pub fn add_dependency(
        &mut self,
        parent: TaskId,
        child: TaskId,
    ) -> Result<(), PlanGraphError> {
        if self.task(parent).is_none() {
            return Err(PlanGraphError::UnknownParent(parent));
        }
        if self.task(child).is_none() {
            return Err(PlanGraphError::UnknownTask(child));
        }
        if parent == child || self.reachable(child, parent) {
            return Err(PlanGraphError::CycleError(parent, child));
        }
        self.edges.insert((parent, child));
        self.tasks[child.0 as usize].parent_ids.insert(parent);
        Ok(())
    }

    /// Prune a task and every transitive descendant left without a
    /// non-pruned ancestor path. Returns how many tasks were pruned.
    pub fn prune_branch(&mut self, id: TaskId) -> Result<usize, PlanGraphError> {
        let task = self
            .task(id)
            .ok_or(PlanGraphError::UnknownTask(id))?;
        if task.status == TaskStatus::Done {
            return Err(PlanGraphError::CannotPruneDone(id));
        }
        let mut pruned = 0;
        if task.status != TaskStatus::Pruned {
            self.tasks[id.0 as usize].status = TaskStatus::Pruned;
            pruned += 1;
        }
        // Cascade: a descendant falls when all of its parents are pruned.
        loop {
            let mut changed = false;
            for i in 0..self.tasks.len() {
                let t = &self.tasks[i];
                if t.status == TaskStatus::Pruned || t.parent_ids.is_empty() {
                    continue;
                }
                if !self.descendant_of(t.id, id) {
                    continue;
                }
                let orphaned = t
                    .parent_ids
                    .iter()
                    .all(|p| self.tasks[p.0 as usize].status == TaskStatus::Pruned);
                if orphaned && matches!(t.status, TaskStatus::Pending | TaskStatus::Active) {
                    self.tasks[i].status = TaskStatus::Pruned;
                    pruned += 1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Ok(pruned)
    }

    /// Next pending task whose parents are all done, preferring the current
    /// phase, tie-broken by insertion order.
    pub fn next_ready_task(&self) -> Option<&Task> {
        let ready = |t: &&Task| {
            t.status == TaskStatus::Pending
                && t.parent_ids
                    .iter()
                    .all(|p| self.tasks[p.0 as usize].status == TaskStatus::Done)
        };
        self.tasks
            .iter()
            .filter(ready)
            .find(|t| t.phase == self.phase)
            .or_else(|| self.tasks.iter().find(ready))
    }

    /// Move the engagement from recon to exploit, once.
    pub fn transition_phase(&mut self, evidence: impl Into<String>) -> Result<Phase, PlanGraphError> {
        if self.phase == Phase::Exploit {
            return Err(PlanGraphError::AlreadyExploit);
        }
        self.phase = Phase::Exploit;
        self.transition_evidence = Some(evidence.into());
        Ok(self.phase)
    }

    /// Mark a pending task active. At most one task is active at a time.
    pub fn mark_active(&mut self, id: TaskId) -> Result<(), PlanGraphError> {
        let task = self.task(id).ok_or(PlanGraphError::UnknownTask(id))?;
        if task.status != TaskStatus::Pending {
            return Err(PlanGraphError::InvalidStatus {
                task: id,
                from: task.status,
                to: TaskStatus::Active,
            });
        }
        if self.tasks.iter().any(|t| t.status == TaskStatus::Active) {
            return Err(PlanGraphError::AnotherTaskActive(id));
        }
        self.tasks[id.0 as usize].status = TaskStatus::Active;
        Ok(())
    }

    /// Mark an active task done.
    pub fn mark_done(&mut self, id: TaskId) -> Result<(), PlanGraphError> {
        let task = self.task(id).ok_or(PlanGraphError::UnknownTask(id))?;
        if task.status != TaskStatus::Active {
            return Err(PlanGraphError::InvalidStatus {
                task: id,
                from: task.status,
                to: TaskStatus::Done,
            });
        }
        self.tasks[id.0 as usize].status = TaskStatus::Done;
        Ok(())
    }

    /// Topological order over all tasks, or `None` if a cycle exists.
    pub fn topological_order(&self) -> Option<Vec<TaskId>> {
        let n = self.tasks.len();
        let mut indegree = vec![0usize; n];
        for (_, child) in &self.edges {
            indegree[child.0 as usize] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|i| indegree[*i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(TaskId(i as u64));
            for (parent, child) in &self.edges {
                if parent.0 as usize == i {
                    let c = child.0 as usize;
                    indegree[c] -= 1;
                    if indegree[c] == 0 {
                        queue.push_back(c);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Export nodes and edges for embedding in reports.
    pub fn export(&self) -> GraphExport {
        GraphExport {
            root_objective: self.root_objective.clone(),
            phase: self.phase,
            nodes: self.tasks.clone(),
            edges: self.edges.iter().copied().collect(),
        }
    }

    fn reachable(&self, from: TaskId, to: TaskId) -> bool {
        let mut seen = HashSet::new();
        let mut stack = vec![from];
        while let Some(cur) = stack.pop() {
            if cur == to {
                return true;
            }
            if !seen.insert(cur) {
                continue;
            }
            for (parent, child) in &self.edges {
                if *parent == cur {
                    stack.push(*child);
                }
            }
        }
        false
    }

    fn descendant_of(&self, node: TaskId, ancestor: TaskId) -> bool {
        node != ancestor && self.reachable(ancestor, node)
    }
}
