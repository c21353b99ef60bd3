use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{GraphError, TaskGraph};
use crate::rng;
use crate::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterHeuristic {
    /// Repeatedly merge the pair of clusters joined by the heaviest traffic.
    GreedyMerge,
    /// Greedy merge followed by single-task relocation descent.
    LocalSearch,
}

/// Partition of a task graph into clusters. Inter-cluster edge weights are
/// the sums of the task edges crossing each ordered cluster pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusteredTaskGraph {
    clusters: Vec<Vec<TaskId>>,
    cluster_of: Vec<usize>,
    edges: Vec<(usize, usize, u64)>,
}

impl ClusteredTaskGraph {
    /// Build from a task -> cluster assignment. Cluster labels are
    /// renumbered by their smallest task id.
    pub fn from_assignment(tg: &TaskGraph, assignment: &[usize]) -> ClusteredTaskGraph {
        let mut groups: BTreeMap<usize, Vec<TaskId>> = BTreeMap::new();
        for (t, &c) in assignment.iter().enumerate() {
            groups.entry(c).or_default().push(t);
        }
        let mut clusters: Vec<Vec<TaskId>> = groups.into_values().collect();
        clusters.sort_by_key(|c| c[0]);
        let mut cluster_of = vec![0; tg.len()];
        for (ci, c) in clusters.iter().enumerate() {
            for &t in c {
                cluster_of[t] = ci;
            }
        }
        let mut weights: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for e in tg.edges() {
            let (a, b) = (cluster_of[e.src], cluster_of[e.dst]);
            if a != b {
                *weights.entry((a, b)).or_default() += e.weight;
            }
        }
        ClusteredTaskGraph {
            clusters,
            cluster_of,
            edges: weights.into_iter().map(|((a, b), w)| (a, b, w)).collect(),
        }
    }

    pub fn clusters(&self) -> &[Vec<TaskId>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster_of(&self, task: TaskId) -> usize {
        self.cluster_of[task]
    }

    /// Task -> cluster index, usable as a mapping unit vector.
    pub fn assignment(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn edges(&self) -> &[(usize, usize, u64)] {
        &self.edges
    }

    pub fn inter_cluster_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.2).sum()
    }
}

/// Partition `tg` into exactly `k` clusters, minimizing the total weight of
/// edges crossing clusters.
pub fn cluster_tasks(
    tg: &TaskGraph,
    k: usize,
    heuristic: ClusterHeuristic,
    seed: u64,
) -> Result<ClusteredTaskGraph, GraphError> {
    let m = tg.len();
    if k == 0 || k > m {
        return Err(GraphError::InfeasibleK { k, tasks: m });
    }
    let mut assignment = greedy_merge(tg, k);
    if heuristic == ClusterHeuristic::LocalSearch {
        relocate_descent(tg, &mut assignment, k, seed);
    }
    Ok(ClusteredTaskGraph::from_assignment(tg, &assignment))
}

fn greedy_merge(tg: &TaskGraph, k: usize) -> Vec<usize> {
    let m = tg.len();
    let mut members: Vec<Vec<TaskId>> = (0..m).map(|t| vec![t]).collect();
    let mut label: Vec<usize> = (0..m).collect();
    while members.len() > k {
        let n = members.len();
        let mut between = vec![vec![0u64; n]; n];
        for e in tg.edges() {
            let (a, b) = (label[e.src], label[e.dst]);
            if a != b {
                between[a.min(b)][a.max(b)] += e.weight;
            }
        }
        let mut best: Option<(u64, usize, usize)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                let w = between[i][j];
                if w > 0 && best.is_none_or(|(bw, _, _)| w > bw) {
                    best = Some((w, i, j));
                }
            }
        }
        let (i, j) = match best {
            Some((_, i, j)) => (i, j),
            None => {
                // no traffic left between clusters: merge the two smallest
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by_key(|&c| (members[c].len(), c));
                (order[0].min(order[1]), order[0].max(order[1]))
            }
        };
        let moved = members.remove(j);
        members[i].extend(moved);
        for (ci, c) in members.iter().enumerate() {
            for &t in c {
                label[t] = ci;
            }
        }
    }
    label
}

fn relocate_descent(tg: &TaskGraph, assignment: &mut [usize], k: usize, seed: u64) {
    let m = tg.len();
    let mut rng = rng::substream(seed, "clustering");
    let mut sizes = vec![0usize; k];
    for &c in assignment.iter() {
        sizes[c] += 1;
    }
    let mut order: Vec<TaskId> = (0..m).collect();
    for _pass in 0..100 {
        order.shuffle(&mut rng);
        let mut improved = false;
        for &t in &order {
            let cur = assignment[t];
            if sizes[cur] == 1 {
                continue;
            }
            let mut affinity = vec![0u64; k];
            for &e in tg.incoming(t).iter().chain(tg.outgoing(t)) {
                let edge = &tg.edges()[e];
                let other = if edge.src == t { edge.dst } else { edge.src };
                affinity[assignment[other]] += edge.weight;
            }
            let target = (0..k)
                .filter(|&c| c != cur && affinity[c] > affinity[cur])
                .max_by_key(|&c| (affinity[c], std::cmp::Reverse(c)));
            if let Some(c) = target {
                sizes[cur] -= 1;
                sizes[c] += 1;
                assignment[t] = c;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}
