use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use rand::Rng;

use super::GraphError;
use crate::rng;
use crate::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Criticality {
    Critical,
    #[default]
    NonCritical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    /// Worst-case execution time on a nominal (non-aged) PE.
    pub wcet: u64,
    pub release: u64,
    pub criticality: Criticality,
    /// For critical tasks, the task must finish by `release + slack`.
    pub slack: Option<u64>,
}

impl Task {
    pub fn deadline(&self) -> Option<u64> {
        match (self.criticality, self.slack) {
            (Criticality::Critical, Some(slack)) => Some(self.release + slack),
            _ => None,
        }
    }
}

/// Input record for a task; missing release defaults to 0 and missing
/// criticality to non-critical.
#[derive(Debug, Clone, Default)]
pub struct TaskSpec {
    pub id: TaskId,
    pub wcet: u64,
    pub release: Option<u64>,
    pub criticality: Option<Criticality>,
    pub slack: Option<u64>,
}

impl TaskSpec {
    pub fn new(id: TaskId, wcet: u64) -> Self {
        TaskSpec {
            id,
            wcet,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeSpec {
    pub src: TaskId,
    pub dst: TaskId,
    pub weight: u64,
}

impl EdgeSpec {
    pub fn new(src: TaskId, dst: TaskId, weight: u64) -> Self {
        EdgeSpec { src, dst, weight }
    }
}

/// A dependence edge. Its index in [`TaskGraph::edges`] doubles as the flow id
/// of the packet flow realizing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskEdge {
    pub src: TaskId,
    pub dst: TaskId,
    pub weight: u64,
}

/// Validated, acyclic task graph. Task ids are dense (`0..m`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    tasks: Vec<Task>,
    edges: Vec<TaskEdge>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    topo: Vec<TaskId>,
}

impl TaskGraph {
    pub fn build(tasks: &[TaskSpec], edges: &[EdgeSpec]) -> Result<TaskGraph, GraphError> {
        let m = tasks.len();
        let mut slots: Vec<Option<Task>> = vec![None; m];
        for t in tasks {
            if t.id >= m {
                return Err(GraphError::NonDenseIds { id: t.id, count: m });
            }
            if slots[t.id].is_some() {
                return Err(GraphError::DuplicateTask(t.id));
            }
            if t.wcet == 0 {
                return Err(GraphError::ZeroWcet(t.id));
            }
            slots[t.id] = Some(Task {
                id: t.id,
                wcet: t.wcet,
                release: t.release.unwrap_or(0),
                criticality: t.criticality.unwrap_or_default(),
                slack: t.slack,
            });
        }
        // every slot is filled: ids are unique and < m
        let tasks: Vec<Task> = slots.into_iter().flatten().collect();

        let mut sorted: Vec<TaskEdge> = Vec::with_capacity(edges.len());
        let mut seen = BTreeSet::new();
        for e in edges {
            if e.src >= m || e.dst >= m {
                return Err(GraphError::DanglingEdge {
                    src: e.src,
                    dst: e.dst,
                });
            }
            if e.weight == 0 {
                return Err(GraphError::ZeroWeight {
                    src: e.src,
                    dst: e.dst,
                });
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(GraphError::DuplicateEdge {
                    src: e.src,
                    dst: e.dst,
                });
            }
            sorted.push(TaskEdge {
                src: e.src,
                dst: e.dst,
                weight: e.weight,
            });
        }
        sorted.sort_by_key(|e| (e.src, e.dst));

        let mut preds = vec![Vec::new(); m];
        let mut succs = vec![Vec::new(); m];
        for (i, e) in sorted.iter().enumerate() {
            succs[e.src].push(i);
            preds[e.dst].push(i);
        }
        for p in preds.iter_mut() {
            p.sort_by_key(|&i| sorted[i].src);
        }

        let topo = topological_order(m, &sorted, &succs, &preds)?;
        Ok(TaskGraph {
            tasks,
            edges: sorted,
            preds,
            succs,
            topo,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id]
    }

    pub fn edges(&self) -> &[TaskEdge] {
        &self.edges
    }

    /// Indices of incoming edges of `task`, ordered by source id.
    pub fn incoming(&self, task: TaskId) -> &[usize] {
        &self.preds[task]
    }

    /// Indices of outgoing edges of `task`, ordered by destination id.
    pub fn outgoing(&self, task: TaskId) -> &[usize] {
        &self.succs[task]
    }

    /// Topological order, ties broken by smallest task id.
    pub fn topological_order(&self) -> &[TaskId] {
        &self.topo
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight).sum()
    }
}

fn topological_order(
    m: usize,
    edges: &[TaskEdge],
    succs: &[Vec<usize>],
    preds: &[Vec<usize>],
) -> Result<Vec<TaskId>, GraphError> {
    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<TaskId>> =
        (0..m).filter(|&t| indeg[t] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(m);
    while let Some(Reverse(t)) = ready.pop() {
        order.push(t);
        for &e in &succs[t] {
            let d = edges[e].dst;
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.push(Reverse(d));
            }
        }
    }
    if order.len() == m {
        return Ok(order);
    }
    // Every remaining node still has a remaining predecessor, so walking
    // predecessors must revisit a node.
    let start = (0..m).find(|&t| indeg[t] > 0).expect("remaining node");
    let mut walk = vec![start];
    let mut pos = vec![usize::MAX; m];
    pos[start] = 0;
    let mut cur = start;
    loop {
        let prev = preds[cur]
            .iter()
            .map(|&e| edges[e].src)
            .find(|&p| indeg[p] > 0)
            .expect("remaining predecessor");
        if pos[prev] != usize::MAX {
            let mut cycle: Vec<TaskId> = walk[pos[prev]..].to_vec();
            cycle.reverse();
            let min_at = cycle
                .iter()
                .enumerate()
                .min_by_key(|(_, &t)| t)
                .map(|(i, _)| i)
                .unwrap_or(0);
            cycle.rotate_left(min_at);
            return Err(GraphError::Cycle { cycle });
        }
        pos[prev] = walk.len();
        walk.push(prev);
        cur = prev;
    }
}

/// Random DAG: an edge `i -> j` (for `i < j`) is drawn with probability
/// `density`. Ranges are inclusive.
pub fn random_task_graph(
    n: usize,
    density: f64,
    wcet_range: (u64, u64),
    weight_range: (u64, u64),
    seed: u64,
) -> TaskGraph {
    let mut rng = rng::substream(seed, "taskgraph");
    let density = density.clamp(0.0, 1.0);
    let (wlo, whi) = (wcet_range.0.max(1), wcet_range.1.max(wcet_range.0.max(1)));
    let (elo, ehi) = (
        weight_range.0.max(1),
        weight_range.1.max(weight_range.0.max(1)),
    );
    let tasks: Vec<TaskSpec> = (0..n)
        .map(|id| TaskSpec::new(id, rng.gen_range(wlo..=whi)))
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(density) {
                edges.push(EdgeSpec::new(i, j, rng.gen_range(elo..=ehi)));
            }
        }
    }
    TaskGraph::build(&tasks, &edges).expect("forward edges are acyclic")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_chain() {
        let tg = TaskGraph::build(
            &[TaskSpec::new(0, 10), TaskSpec::new(1, 10)],
            &[EdgeSpec::new(0, 1, 2)],
        )
        .unwrap();
        assert_eq!(tg.topological_order(), &[0, 1]);
        assert_eq!(tg.task(1).release, 0);
        assert_eq!(tg.task(1).criticality, Criticality::NonCritical);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = TaskGraph::build(
            &[TaskSpec::new(0, 10), TaskSpec::new(1, 10)],
            &[EdgeSpec::new(0, 1, 1), EdgeSpec::new(1, 0, 1)],
        )
        .unwrap_err();
        assert_eq!(err, GraphError::Cycle { cycle: vec![0, 1] });
        assert_eq!(err.to_string(), "task graph contains a cycle: t0 -> t1 -> t0");
    }

    #[test]
    fn cycle_is_reported_in_edge_order() {
        let tasks: Vec<_> = (0..4).map(|i| TaskSpec::new(i, 1)).collect();
        let err = TaskGraph::build(
            &tasks,
            &[
                EdgeSpec::new(0, 1, 1),
                EdgeSpec::new(1, 2, 1),
                EdgeSpec::new(2, 3, 1),
                EdgeSpec::new(3, 1, 1),
            ],
        )
        .unwrap_err();
        assert_eq!(err, GraphError::Cycle { cycle: vec![1, 2, 3] });
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(
            TaskGraph::build(&[TaskSpec::new(0, 1)], &[EdgeSpec::new(0, 3, 1)]).unwrap_err(),
            GraphError::DanglingEdge { src: 0, dst: 3 }
        );
        assert_eq!(
            TaskGraph::build(&[TaskSpec::new(0, 1), TaskSpec::new(0, 1)], &[]).unwrap_err(),
            GraphError::DuplicateTask(0)
        );
        assert_eq!(
            TaskGraph::build(&[TaskSpec::new(0, 0)], &[]).unwrap_err(),
            GraphError::ZeroWcet(0)
        );
        assert_eq!(
            TaskGraph::build(&[TaskSpec::new(2, 1)], &[]).unwrap_err(),
            GraphError::NonDenseIds { id: 2, count: 1 }
        );
    }

    #[test]
    fn random_graph_edge_cases() {
        let one = random_task_graph(1, 0.5, (1, 10), (1, 5), 3);
        assert_eq!(one.len(), 1);
        assert!(one.edges().is_empty());
        let flat = random_task_graph(9, 0.0, (1, 10), (1, 5), 99);
        assert_eq!(flat.len(), 9);
        assert!(flat.edges().is_empty());
        assert_eq!(
            random_task_graph(9, 0.3, (5, 20), (1, 5), 42),
            random_task_graph(9, 0.3, (5, 20), (1, 5), 42)
        );
    }
}
