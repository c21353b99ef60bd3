//! Mapping of task graphs onto the mesh and ASAP scheduling of the result.
//!
//! [`MsuContext`] bundles everything a schedule depends on (task graph,
//! architecture, routing graph, health map, communication model). The
//! heuristics in this module search over placements of *units* (single tasks,
//! or whole clusters of a clustered task graph) and score every candidate by
//! scheduling it.

mod schedule;
mod search;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graphs::TaskGraph;
use crate::health::SystemHealthMap;
use crate::{TaskId, TileId};

pub use schedule::{
    asap_schedule, evaluate_cost, CommModel, FlowRecord, MsuContext, Occupancy, Resume, Schedule,
    ScheduledTask,
};
pub use search::{
    initial_mapping, map_greedy, map_ils, map_sa, Candidate, Greedy, Heuristic,
    InitialPolicy, IteratedLocalSearch, MappingHeuristic, MappingProblem, SaParams, SearchOutcome,
    SimulatedAnnealing,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("no route from tile {src} to tile {dst}")]
    UnroutableFlow { src: TileId, dst: TileId },
    #[error("task {task} is mapped to unusable tile {tile}")]
    UnusableTile { task: TaskId, tile: TileId },
    #[error("mapping covers {given} tasks but the task graph has {tasks}")]
    MappingSize { given: usize, tasks: usize },
    #[error("health map has {shm} tiles but the routing graph has {rg}")]
    DimensionMismatch { shm: usize, rg: usize },
    #[error("no healthy processing element")]
    NoHealthyPe,
    #[error("no feasible mapping found")]
    InfeasibleInstance,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Tile of every task, indexed by task id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Mapping {
    assignment: Vec<TileId>,
}

impl Mapping {
    pub fn new(assignment: Vec<TileId>) -> Mapping {
        Mapping { assignment }
    }

    pub fn assignment(&self) -> &[TileId] {
        &self.assignment
    }

    pub fn tile(&self, task: TaskId) -> TileId {
        self.assignment[task]
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn into_vec(self) -> Vec<TileId> {
        self.assignment
    }

    /// Check length and that every task sits on a usable PE.
    pub fn validate(&self, tg: &TaskGraph, shm: &SystemHealthMap) -> Result<(), MapError> {
        if self.len() != tg.len() {
            return Err(MapError::MappingSize {
                given: self.len(),
                tasks: tg.len(),
            });
        }
        for (task, &tile) in self.assignment.iter().enumerate() {
            if tile >= shm.tile_count() || !shm.is_pe_usable(tile) {
                return Err(MapError::UnusableTile { task, tile });
            }
        }
        Ok(())
    }
}

impl From<Vec<TileId>> for Mapping {
    fn from(assignment: Vec<TileId>) -> Self {
        Mapping { assignment }
    }
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.assignment.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// What a mapping is optimized for. Lower is better for all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CostFunction {
    #[default]
    ScheduleLength,
    /// Population standard deviation of busy cycles over healthy links.
    TrafficBalance,
    /// Population standard deviation of busy cycles over usable PEs.
    UtilizationBalance,
}

impl CostFunction {
    pub fn name(self) -> &'static str {
        match self {
            CostFunction::ScheduleLength => "makespan",
            CostFunction::TrafficBalance => "traffic",
            CostFunction::UtilizationBalance => "util",
        }
    }
}

impl fmt::Display for CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostFunction {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "makespan" | "schedule_length" => Ok(CostFunction::ScheduleLength),
            "traffic" | "traffic_balance" => Ok(CostFunction::TrafficBalance),
            "util" | "utilization" | "utilization_balance" => Ok(CostFunction::UtilizationBalance),
            _ => Err(MapError::InvalidParameter(format!("unknown cost function `{s}`"))),
        }
    }
}
