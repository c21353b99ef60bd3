//! Port-level routing graph built from the architecture graph, a turn model
//! and the current health map.

mod graph;
mod route;
mod turn;

pub use graph::{
    build_routing_graph, build_routing_graph_with, find_paths, is_deadlock_free,
    reachability_matrix, NodeId, PortKind, PortNode, RoutingConfig, RoutingGraph,
};
pub(crate) use graph::reachable_tiles_from as graph_reach;
pub use route::{Route, RouteSelector, RouteTable};
pub use turn::{turn_slots, TurnModel, PLANAR_TURN_SLOTS};

use thiserror::Error;

use crate::topology::Direction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("health map dimensions ({shm}) do not match the architecture ({ag})")]
    DimensionMismatch { shm: String, ag: String },
    #[error("({0}-in -> {1}-out) is not a 90-degree turn")]
    InvalidTurn(Direction, Direction),
    #[error("unknown turn model `{0}`")]
    UnknownTurnModel(String),
    #[error("routing config covers {config} tiles but the mesh has {mesh}")]
    ConfigSize { config: usize, mesh: usize },
}
