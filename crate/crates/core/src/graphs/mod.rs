//! Application and platform models: task graphs, clustered task graphs and
//! mesh architecture graphs.

mod cluster;
mod mesh;
mod task;

pub use cluster::{cluster_tasks, ClusterHeuristic, ClusteredTaskGraph};
pub use mesh::{build_mesh, ArchitectureGraph, Link, Tile};
pub use task::{random_task_graph, Criticality, EdgeSpec, Task, TaskEdge, TaskGraph, TaskSpec};

use thiserror::Error;

use crate::TaskId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("task graph contains a cycle: {}", fmt_cycle(.cycle))]
    Cycle { cycle: Vec<TaskId> },
    #[error("edge ({src} -> {dst}) references a missing task")]
    DanglingEdge { src: TaskId, dst: TaskId },
    #[error("duplicate task id {0}")]
    DuplicateTask(TaskId),
    #[error("task ids must be exactly 0..{count}, found id {id}")]
    NonDenseIds { id: TaskId, count: usize },
    #[error("task {0} has zero WCET")]
    ZeroWcet(TaskId),
    #[error("edge ({src} -> {dst}) has zero weight")]
    ZeroWeight { src: TaskId, dst: TaskId },
    #[error("duplicate edge ({src} -> {dst})")]
    DuplicateEdge { src: TaskId, dst: TaskId },
    #[error("mesh dimensions must all be at least 1")]
    ZeroDimension,
    #[error("3D meshes require the `mesh3d` feature")]
    Unsupported3d,
    #[error("cannot form {k} clusters from {tasks} tasks")]
    InfeasibleK { k: usize, tasks: usize },
}

fn fmt_cycle(cycle: &[TaskId]) -> String {
    let mut s: Vec<String> = cycle.iter().map(|t| format!("t{t}")).collect();
    if let Some(first) = cycle.first() {
        s.push(format!("t{first}"));
    }
    s.join(" -> ")
}
