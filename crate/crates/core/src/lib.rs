//! Simulation library for fault-tolerant Network-on-Chip many-core systems.
//!
//! The crate models the closed fault-management loop of a mesh NoC: checker
//! events reach the health monitor ([`shmu`]), which maintains the system
//! health map ([`health`]), rebuilds the port-level routing graph
//! ([`routing`]) and the unreachable-region tables ([`reachability`]), and
//! asks the mapper/scheduler ([`mapsched`]) for a new placement of the
//! application. [`simkernel`] drives the whole loop as a deterministic
//! discrete-event simulation.

pub mod graphs;
pub mod health;
pub mod mapsched;
pub mod reachability;
pub mod rng;
pub mod routing;
pub mod shmu;
pub mod simkernel;
pub mod topology;

pub use graphs::{ArchitectureGraph, ClusteredTaskGraph, Criticality, Task, TaskGraph};
pub use health::{Fault, Health, SystemHealthMap};
pub use routing::{RoutingGraph, TurnModel};
pub use topology::{Coord, Direction, Topology};

/// Tile identifier, row-major from the origin.
pub type TileId = usize;
/// Directed link identifier inside an [`ArchitectureGraph`].
pub type LinkId = usize;
/// Task identifier inside a [`TaskGraph`].
pub type TaskId = usize;
