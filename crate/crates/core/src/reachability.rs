//! Unreachable-destination regions per router output port.
//!
//! For every output port the set of destinations that no routing-graph path
//! reaches is compressed into a bounded number of axis-aligned rectangles
//! (boxes in 3D). A packet whose destination lies in the regions of every
//! output of its source router is dropped at injection instead of wandering
//! through the network. The same machinery separates the mesh into isolated
//! regions, each with its own turn model.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::graphs::ArchitectureGraph;
use crate::routing::{PortKind, RoutingConfig, RoutingGraph, TurnModel};
use crate::topology::{Coord, Direction, Topology};
use crate::TileId;

/// Default number of rectangle registers per output port.
pub const DEFAULT_BUDGET: usize = 4;
/// Budget that never forces a merge.
pub const UNLIMITED_BUDGET: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReachError {
    #[error("tile {tile} has no network output port {dir}")]
    UnknownPort { tile: TileId, dir: Direction },
    #[error("a region budget of 0 cannot hold the non-empty unreachable set at tile {tile} port {dir}")]
    ZeroBudget { tile: TileId, dir: Direction },
    #[error("region assignment covers {given} tiles but the mesh has {tiles}")]
    AssignmentSize { given: usize, tiles: usize },
    #[error("tile {tile} refers to unknown region {region}")]
    UnknownRegion { tile: TileId, region: usize },
}

/// Inclusive axis-aligned box given by its two corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rectangle {
    pub lo: Coord,
    pub hi: Coord,
}

impl Rectangle {
    pub fn new(lo: Coord, hi: Coord) -> Rectangle {
        debug_assert!(lo.x <= hi.x && lo.y <= hi.y && lo.z <= hi.z);
        Rectangle { lo, hi }
    }

    pub fn contains(&self, c: Coord) -> bool {
        (self.lo.x..=self.hi.x).contains(&c.x)
            && (self.lo.y..=self.hi.y).contains(&c.y)
            && (self.lo.z..=self.hi.z).contains(&c.z)
    }

    pub fn volume(&self) -> usize {
        (self.hi.x - self.lo.x + 1) * (self.hi.y - self.lo.y + 1) * (self.hi.z - self.lo.z + 1)
    }

    pub fn bounding(&self, other: &Rectangle) -> Rectangle {
        Rectangle {
            lo: Coord::new3(
                self.lo.x.min(other.lo.x),
                self.lo.y.min(other.lo.y),
                self.lo.z.min(other.lo.z),
            ),
            hi: Coord::new3(
                self.hi.x.max(other.hi.x),
                self.hi.y.max(other.hi.y),
                self.hi.z.max(other.hi.z),
            ),
        }
    }

    pub fn covers(&self, other: &Rectangle) -> bool {
        self.contains(other.lo) && self.contains(other.hi)
    }

    pub fn tiles(&self, topology: &Topology) -> Vec<TileId> {
        let mut out = Vec::with_capacity(self.volume());
        for z in self.lo.z..=self.hi.z {
            for y in self.lo.y..=self.hi.y {
                for x in self.lo.x..=self.hi.x {
                    if let Some(t) = topology.tile_id(Coord::new3(x, y, z)) {
                        out.push(t);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Rectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// Destinations (other than `tile` itself) that no path starting at the
/// output port `dir` of `tile` reaches. Only ports facing an existing
/// neighbor have a set.
pub fn unreachable_set(
    rg: &RoutingGraph,
    tile: TileId,
    dir: Direction,
) -> Result<BTreeSet<TileId>, ReachError> {
    let topology = rg.topology();
    if tile >= rg.tile_count() || topology.neighbor(tile, dir).is_none() {
        return Err(ReachError::UnknownPort { tile, dir });
    }
    let start = rg
        .node(tile, dir, PortKind::Out)
        .ok_or(ReachError::UnknownPort { tile, dir })?;
    let reached = crate::routing::graph_reach(rg, start);
    Ok((0..rg.tile_count())
        .filter(|&d| d != tile && !reached[d])
        .collect())
}

/// Cover `dest` with at most `budget` rectangles.
///
/// Largest boxes lying entirely inside the still-uncovered set are taken
/// greedily; if that needs more than `budget` boxes, the pair whose bounding
/// box is smallest is merged until the budget is met. Merging only ever adds
/// tiles, so the cover stays a superset of `dest`.
pub fn cover_rectangles(
    dest: &BTreeSet<TileId>,
    topology: &Topology,
    budget: usize,
) -> Vec<Rectangle> {
    let (w, h, d) = topology.dims();
    let mut remaining = vec![false; topology.tile_count()];
    for &t in dest {
        remaining[t] = true;
    }
    let mut left = dest.len();
    let mut rects = Vec::new();
    while left > 0 {
        let best = largest_box(&remaining, topology, (w, h, d)).expect("non-empty set has a box");
        for t in best.tiles(topology) {
            if remaining[t] {
                remaining[t] = false;
                left -= 1;
            }
        }
        rects.push(best);
    }
    let budget = budget.max(1);
    while rects.len() > budget {
        let id = |c: Coord| topology.tile_id(c).expect("corner inside mesh");
        let mut best: Option<((usize, TileId, TileId), usize, usize)> = None;
        for i in 0..rects.len() {
            for j in (i + 1)..rects.len() {
                let bb = rects[i].bounding(&rects[j]);
                let key = (bb.volume(), id(bb.lo), id(bb.hi));
                if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
                    best = Some((key, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two rectangles");
        let merged = rects[i].bounding(&rects[j]);
        rects.remove(j);
        rects[i] = merged;
        // drop boxes the merged one swallowed
        let mut k = 0;
        rects.retain(|r| {
            let keep = k == i || !merged.covers(r);
            k += 1;
            keep
        });
    }
    rects
}

fn largest_box(
    remaining: &[bool],
    topology: &Topology,
    (w, h, d): (usize, usize, usize),
) -> Option<Rectangle> {
    // run[t]: number of consecutive remaining tiles starting at t towards +x
    let mut run = vec![0usize; remaining.len()];
    for z in 0..d {
        for y in 0..h {
            let mut acc = 0;
            for x in (0..w).rev() {
                let t = x + y * w + z * w * h;
                acc = if remaining[t] { acc + 1 } else { 0 };
                run[t] = acc;
            }
        }
    }
    let mut best: Option<(usize, TileId, TileId, Rectangle)> = None;
    for (lo, _) in remaining.iter().enumerate().filter(|(_, &r)| r) {
        let c = topology.coord(lo);
        let mut plane_min = vec![usize::MAX; h];
        for z1 in c.z..d {
            for (y, pm) in plane_min.iter_mut().enumerate().skip(c.y) {
                *pm = (*pm).min(run[c.x + y * w + z1 * w * h]);
            }
            if plane_min[c.y] == 0 {
                break;
            }
            let mut width = usize::MAX;
            for y1 in c.y..h {
                width = width.min(plane_min[y1]);
                if width == 0 {
                    break;
                }
                let hi = Coord::new3(c.x + width - 1, y1, z1);
                let rect = Rectangle::new(c, hi);
                let vol = rect.volume();
                let hi_id = topology.tile_id(hi).expect("inside");
                let better = match &best {
                    None => true,
                    Some((bv, blo, bhi, _)) => (vol, std::cmp::Reverse(lo), std::cmp::Reverse(hi_id))
                        > (*bv, std::cmp::Reverse(*blo), std::cmp::Reverse(*bhi)),
                };
                if better {
                    best = Some((vol, lo, hi_id, rect));
                }
            }
        }
    }
    best.map(|b| b.3)
}

/// Rectangle registers of every router output port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortRegionTable {
    topology: Topology,
    budget: usize,
    /// `tile * network_ports + port`; `None` for ports at the mesh border.
    tables: Vec<Option<Vec<Rectangle>>>,
    local_ok: Vec<bool>,
}

impl PortRegionTable {
    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Regions of one output port; `None` when the port faces the border.
    pub fn table(&self, tile: TileId, dir: Direction) -> Option<&[Rectangle]> {
        let ports = self.topology.network_ports();
        let p = ports.iter().position(|&d| d == dir)?;
        self.tables.get(tile * ports.len() + p)?.as_deref()
    }

    /// `true` when no port holds any region.
    pub fn is_empty(&self) -> bool {
        self.tables.iter().flatten().all(Vec::is_empty)
    }

    /// Largest number of rectangles held by a single port.
    pub fn max_rectangles(&self) -> usize {
        self.tables.iter().flatten().map(Vec::len).max().unwrap_or(0)
    }

    /// Text dump, one line per output port:
    /// `tile <id> <coord> <dir>: <lo>-<hi> ...` (or `-` when empty).
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# region tables {} budget={}", self.topology, fmt_budget(self.budget));
        let ports = self.topology.network_ports();
        for tile in 0..self.topology.tile_count() {
            let c = self.topology.coord(tile);
            for (p, dir) in ports.iter().enumerate() {
                let Some(rects) = &self.tables[tile * ports.len() + p] else {
                    continue;
                };
                let body = if rects.is_empty() {
                    "-".to_string()
                } else {
                    rects.iter().map(Rectangle::to_string).collect::<Vec<_>>().join(" ")
                };
                let _ = writeln!(s, "tile {tile} {c} {dir}: {body}");
            }
        }
        s
    }
}

fn fmt_budget(b: usize) -> String {
    if b == UNLIMITED_BUDGET {
        "unlimited".into()
    } else {
        b.to_string()
    }
}

/// Compute the tables for every tile and output port of `rg`.
pub fn build_region_tables(rg: &RoutingGraph, budget: usize) -> Result<PortRegionTable, ReachError> {
    let topology = rg.topology();
    let ports = topology.network_ports();
    let mut tables = Vec::with_capacity(rg.tile_count() * ports.len());
    for tile in 0..rg.tile_count() {
        for &dir in ports {
            if topology.neighbor(tile, dir).is_none() {
                tables.push(None);
                continue;
            }
            let set = unreachable_set(rg, tile, dir)?;
            if budget == 0 && !set.is_empty() {
                return Err(ReachError::ZeroBudget { tile, dir });
            }
            tables.push(Some(cover_rectangles(&set, &topology, budget)));
        }
    }
    let local_ok = (0..rg.tile_count())
        .map(|t| rg.has_edge(rg.local_in(t), rg.local_out(t)))
        .collect();
    Ok(PortRegionTable {
        topology,
        budget,
        tables,
        local_ok,
    })
}

/// `true` iff `dst` lies in the regions of every output port of `src`, i.e.
/// no port reaches it. Self-delivery depends on the local connection only.
pub fn should_drop(tables: &PortRegionTable, src: TileId, dst: TileId) -> bool {
    if src == dst {
        return !tables.local_ok[src];
    }
    let target = tables.topology.coord(dst);
    tables
        .topology
        .network_ports()
        .iter()
        .filter_map(|&dir| tables.table(src, dir))
        .all(|rects| rects.iter().any(|r| r.contains(target)))
}

/// A named region with its own routing algorithm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub turn_model: TurnModel,
}

/// Total assignment of tiles to regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionAssignment {
    pub regions: Vec<Region>,
    pub region_of: Vec<usize>,
}

impl RegionAssignment {
    pub fn single(tiles: usize, name: &str, turn_model: TurnModel) -> Self {
        RegionAssignment {
            regions: vec![Region {
                name: name.to_string(),
                turn_model,
            }],
            region_of: vec![0; tiles],
        }
    }

    pub fn label(&self, tile: TileId) -> &str {
        &self.regions[self.region_of[tile]].name
    }
}

/// Routing configuration that cuts every link crossing a region boundary and
/// gives each region its own turn model.
pub fn partition(
    ag: &ArchitectureGraph,
    assignment: &RegionAssignment,
) -> Result<RoutingConfig, ReachError> {
    if assignment.region_of.len() != ag.tile_count() {
        return Err(ReachError::AssignmentSize {
            given: assignment.region_of.len(),
            tiles: ag.tile_count(),
        });
    }
    for (tile, &r) in assignment.region_of.iter().enumerate() {
        if r >= assignment.regions.len() {
            return Err(ReachError::UnknownRegion { tile, region: r });
        }
    }
    Ok(RoutingConfig::partitioned(
        assignment.region_of.clone(),
        assignment
            .regions
            .iter()
            .map(|r| r.turn_model.clone())
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_mesh;
    use crate::health::{Fault, SystemHealthMap};
    use crate::routing::{build_routing_graph, build_routing_graph_with, reachability_matrix};

    fn xy_rg(w: usize, h: usize, faults: &[Fault]) -> (ArchitectureGraph, RoutingGraph) {
        let ag = build_mesh(w, h, None).unwrap();
        let mut shm = SystemHealthMap::new(&ag);
        for &f in faults {
            shm.apply_fault(f).unwrap();
        }
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        (ag, rg)
    }

    fn set(tiles: &[TileId]) -> BTreeSet<TileId> {
        tiles.iter().copied().collect()
    }

    #[test]
    fn unreachable_from_output_ports_2x2() {
        let (_, rg) = xy_rg(2, 2, &[]);
        // east output reaches the eastern column; the north-west tile needs a
        // north-to-west turn, which XY forbids
        assert_eq!(unreachable_set(&rg, 0, Direction::E).unwrap(), set(&[2]));
        assert_eq!(unreachable_set(&rg, 0, Direction::N).unwrap(), set(&[1, 3]));

        let (ag, _) = xy_rg(2, 2, &[]);
        let east = Fault::Link(ag.link_between(0, 1).unwrap());
        let (_, rg) = xy_rg(2, 2, &[east]);
        assert_eq!(unreachable_set(&rg, 0, Direction::N).unwrap(), set(&[1, 3]));
        assert_eq!(unreachable_set(&rg, 0, Direction::E).unwrap(), set(&[1, 2, 3]));

        let (_, one) = xy_rg(1, 1, &[]);
        for dir in [Direction::N, Direction::E, Direction::W, Direction::S, Direction::L] {
            assert!(unreachable_set(&one, 0, dir).is_err());
        }
    }

    #[test]
    fn cover_examples() {
        let t = Topology::Mesh2d { width: 2, height: 2 };
        assert_eq!(
            cover_rectangles(&set(&[1, 3]), &t, 4),
            vec![Rectangle::new(Coord::new(1, 0), Coord::new(1, 1))]
        );
        assert!(cover_rectangles(&set(&[]), &t, 4).is_empty());
        assert_eq!(
            cover_rectangles(&set(&[0, 3]), &t, 1),
            vec![Rectangle::new(Coord::new(0, 0), Coord::new(1, 1))]
        );
        assert_eq!(cover_rectangles(&set(&[0, 3]), &t, 2).len(), 2);
    }

    #[test]
    fn l_shape_needs_two_boxes() {
        let t = Topology::Mesh2d { width: 3, height: 3 };
        // bottom row plus left column
        let cover = cover_rectangles(&set(&[0, 1, 2, 3, 6]), &t, UNLIMITED_BUDGET);
        assert_eq!(
            cover,
            vec![
                Rectangle::new(Coord::new(0, 0), Coord::new(2, 0)),
                Rectangle::new(Coord::new(0, 1), Coord::new(0, 2)),
            ]
        );
    }

    #[test]
    fn drop_decisions_with_broken_link() {
        let (ag, _) = xy_rg(2, 2, &[]);
        let east = Fault::Link(ag.link_between(0, 1).unwrap());
        let (_, rg) = xy_rg(2, 2, &[east]);
        let tables = build_region_tables(&rg, DEFAULT_BUDGET).unwrap();
        assert!(should_drop(&tables, 0, 3));
        assert!(should_drop(&tables, 0, 1));
        assert!(!should_drop(&tables, 0, 2));
        assert!(!should_drop(&tables, 2, 3));
        assert!(!should_drop(&tables, 0, 0));
        assert!(!tables.table(0, Direction::N).unwrap().is_empty());
        assert!(!tables.table(0, Direction::E).unwrap().is_empty());
        assert!(tables.table(0, Direction::W).is_none());
    }

    #[test]
    fn healthy_mesh_never_drops() {
        let (_, rg) = xy_rg(4, 4, &[]);
        let tables = build_region_tables(&rg, DEFAULT_BUDGET).unwrap();
        for s in 0..16 {
            for d in 0..16 {
                assert!(!should_drop(&tables, s, d));
            }
        }
    }

    #[test]
    fn zero_budget_rejected() {
        let (_, rg) = xy_rg(2, 2, &[]);
        assert!(matches!(
            build_region_tables(&rg, 0),
            Err(ReachError::ZeroBudget { .. })
        ));
        let (_, one) = xy_rg(1, 1, &[]);
        assert!(build_region_tables(&one, 0).is_ok());
    }

    #[test]
    fn partition_isolates_columns() {
        let ag = build_mesh(4, 4, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let region_of: Vec<usize> = (0..16).map(|t| usize::from(t % 4 >= 2)).collect();
        let assignment = RegionAssignment {
            regions: vec![
                Region {
                    name: "critical".into(),
                    turn_model: TurnModel::xy(),
                },
                Region {
                    name: "non-critical".into(),
                    turn_model: TurnModel::west_first(),
                },
            ],
            region_of: region_of.clone(),
        };
        let cfg = partition(&ag, &assignment).unwrap();
        let rg = build_routing_graph_with(&ag, &cfg, &shm).unwrap();
        let m = reachability_matrix(&rg);
        for s in 0..16 {
            for d in 0..16 {
                assert_eq!(m[s][d], region_of[s] == region_of[d], "{s}->{d}");
            }
        }
        let tables = build_region_tables(&rg, UNLIMITED_BUDGET).unwrap();
        assert!(should_drop(&tables, 0, 3));
        assert!(!should_drop(&tables, 0, 5));

        let single = RegionAssignment::single(16, "all", TurnModel::xy());
        let rg1 = build_routing_graph_with(&ag, &partition(&ag, &single).unwrap(), &shm).unwrap();
        let rg0 = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        assert_eq!(rg0, rg1);

        let mut lonely = vec![0usize; 16];
        lonely[5] = 1;
        let assignment = RegionAssignment {
            regions: vec![
                Region {
                    name: "rest".into(),
                    turn_model: TurnModel::xy(),
                },
                Region {
                    name: "island".into(),
                    turn_model: TurnModel::xy(),
                },
            ],
            region_of: lonely,
        };
        let rg = build_routing_graph_with(&ag, &partition(&ag, &assignment).unwrap(), &shm).unwrap();
        let m = reachability_matrix(&rg);
        assert_eq!(
            (0..16).filter(|&d| m[5][d]).collect::<Vec<_>>(),
            vec![5]
        );
    }
}
