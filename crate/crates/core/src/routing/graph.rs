use std::collections::VecDeque;
use std::fmt;

use super::turn::turn_slots;
use super::{RoutingError, TurnModel};
use crate::graphs::ArchitectureGraph;
use crate::health::SystemHealthMap;
use crate::topology::{Direction, Topology};
use crate::{LinkId, TileId};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortKind {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortNode {
    pub tile: TileId,
    pub dir: Direction,
    pub kind: PortKind,
}

impl fmt::Display for PortNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            PortKind::In => "in",
            PortKind::Out => "out",
        };
        write!(f, "{}:{}-{}", self.tile, self.dir, kind)
    }
}

/// Turn model assignment over the mesh, optionally split into regions whose
/// boundaries no link may cross.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingConfig {
    models: Vec<TurnModel>,
    /// Region index per tile; `None` means one region using `models[0]`.
    region_of: Option<Vec<usize>>,
}

impl RoutingConfig {
    pub fn uniform(model: TurnModel) -> Self {
        RoutingConfig {
            models: vec![model],
            region_of: None,
        }
    }

    /// `region_of[tile]` indexes into `models`. Callers are expected to go
    /// through [`crate::reachability::partition`], which validates the input.
    pub fn partitioned(region_of: Vec<usize>, models: Vec<TurnModel>) -> Self {
        RoutingConfig {
            models,
            region_of: Some(region_of),
        }
    }

    pub fn model_for(&self, tile: TileId) -> &TurnModel {
        match &self.region_of {
            Some(r) => &self.models[r[tile]],
            None => &self.models[0],
        }
    }

    pub fn region_of(&self, tile: TileId) -> usize {
        self.region_of.as_ref().map_or(0, |r| r[tile])
    }

    pub fn link_allowed(&self, src: TileId, dst: TileId) -> bool {
        match &self.region_of {
            Some(r) => r[src] == r[dst],
            None => true,
        }
    }

    pub fn is_partitioned(&self) -> bool {
        self.region_of.is_some()
    }

    fn check_size(&self, tiles: usize) -> Result<(), RoutingError> {
        match &self.region_of {
            Some(r) if r.len() != tiles => Err(RoutingError::ConfigSize {
                config: r.len(),
                mesh: tiles,
            }),
            _ => Ok(()),
        }
    }
}

/// Port-level directed graph. Node ids are tile-major:
/// `tile * 2P + kind * P + port`, with `P` ports per router (5 in 2D, 7 in
/// 3D) and the local port last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingGraph {
    topology: Topology,
    succ: Vec<Vec<NodeId>>,
    pred: Vec<Vec<NodeId>>,
    out_link: Vec<Option<LinkId>>,
    external_edges: usize,
}

impl RoutingGraph {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    fn ports(&self) -> usize {
        self.topology.ports().len()
    }

    pub fn node_count(&self) -> usize {
        self.succ.len()
    }

    pub fn tile_count(&self) -> usize {
        self.topology.tile_count()
    }

    pub fn node(&self, tile: TileId, dir: Direction, kind: PortKind) -> Option<NodeId> {
        if tile >= self.tile_count() {
            return None;
        }
        let port = self.topology.port_index(dir)?;
        let k = match kind {
            PortKind::In => 0,
            PortKind::Out => 1,
        };
        Some(tile * 2 * self.ports() + k * self.ports() + port)
    }

    pub fn port_node(&self, id: NodeId) -> PortNode {
        let p = self.ports();
        let tile = id / (2 * p);
        let rest = id % (2 * p);
        PortNode {
            tile,
            dir: self.topology.ports()[rest % p],
            kind: if rest < p { PortKind::In } else { PortKind::Out },
        }
    }

    pub fn local_in(&self, tile: TileId) -> NodeId {
        tile * 2 * self.ports() + self.ports() - 1
    }

    pub fn local_out(&self, tile: TileId) -> NodeId {
        tile * 2 * self.ports() + 2 * self.ports() - 1
    }

    pub fn tile_of(&self, id: NodeId) -> TileId {
        id / (2 * self.ports())
    }

    pub fn successors(&self, id: NodeId) -> &[NodeId] {
        &self.succ[id]
    }

    pub fn predecessors(&self, id: NodeId) -> &[NodeId] {
        &self.pred[id]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.succ[a].binary_search(&b).is_ok()
    }

    /// Physical link behind an external edge leaving output node `out`.
    pub fn link_of(&self, out: NodeId) -> Option<LinkId> {
        self.out_link[out]
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }

    pub fn external_edge_count(&self) -> usize {
        self.external_edges
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.succ
            .iter()
            .enumerate()
            .flat_map(|(a, s)| s.iter().map(move |&b| (a, b)))
    }

    /// Internal connections of `tile` as `(input port, output port)` pairs.
    pub fn internal_edges(&self, tile: TileId) -> Vec<(Direction, Direction)> {
        let p = self.ports();
        let base = tile * 2 * p;
        let mut out = Vec::new();
        for a in base..base + p {
            for &b in &self.succ[a] {
                if self.tile_of(b) == tile {
                    out.push((self.port_node(a).dir, self.port_node(b).dir));
                }
            }
        }
        out
    }

    /// Tile sequence visited by a node path, without consecutive repeats.
    pub fn path_tiles(&self, path: &[NodeId]) -> Vec<TileId> {
        let mut tiles: Vec<TileId> = path.iter().map(|&n| self.tile_of(n)).collect();
        tiles.dedup();
        tiles
    }
}

pub fn build_routing_graph(
    ag: &ArchitectureGraph,
    turn_model: &TurnModel,
    shm: &SystemHealthMap,
) -> Result<RoutingGraph, RoutingError> {
    build_routing_graph_with(ag, &RoutingConfig::uniform(turn_model.clone()), shm)
}

pub fn build_routing_graph_with(
    ag: &ArchitectureGraph,
    config: &RoutingConfig,
    shm: &SystemHealthMap,
) -> Result<RoutingGraph, RoutingError> {
    let topology = ag.topology();
    if shm.topology() != topology || shm.link_count() != ag.links().len() {
        return Err(RoutingError::DimensionMismatch {
            shm: shm.topology().to_string(),
            ag: topology.to_string(),
        });
    }
    config.check_size(ag.tile_count())?;

    let ports = topology.ports();
    let p = ports.len();
    let n = ag.tile_count() * 2 * p;
    let mut succ: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    let mut out_link = vec![None; n];
    let slots = turn_slots(&topology);
    let net = topology.network_ports();
    let local = p - 1;

    for tile in 0..ag.tile_count() {
        let base = tile * 2 * p;
        let in_node = |port: usize| base + port;
        let out_node = |port: usize| base + p + port;
        let model = config.model_for(tile);
        let pe_ok = shm.pe_health(tile).is_healthy();

        for (ii, &din) in net.iter().enumerate() {
            // straight through
            let straight = topology.port_index(din.opposite()).expect("opposite port");
            succ[in_node(ii)].push(out_node(straight));
            for (si, &(ti, to)) in slots.iter().enumerate() {
                if ti == din && model.allows(ti, to) && shm.turn_health(tile, si).is_healthy() {
                    let oi = topology.port_index(to).expect("slot port");
                    succ[in_node(ii)].push(out_node(oi));
                }
            }
            if pe_ok {
                succ[in_node(ii)].push(out_node(local));
            }
        }
        if pe_ok {
            for oi in 0..p {
                succ[in_node(local)].push(out_node(oi));
            }
        }
        for (oi, &dout) in net.iter().enumerate() {
            out_link[out_node(oi)] = ag.out_link(tile, dout);
        }
    }

    let mut external_edges = 0;
    for link in ag.links() {
        if shm.link_health(link.id).is_healthy() && config.link_allowed(link.src, link.dst) {
            let a = link.src * 2 * p + p + topology.port_index(link.src_dir).expect("port");
            let b = link.dst * 2 * p + topology.port_index(link.dst_dir).expect("port");
            succ[a].push(b);
            external_edges += 1;
        }
    }

    let mut pred: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for s in succ.iter_mut() {
        s.sort_unstable();
        s.dedup();
    }
    for (a, s) in succ.iter().enumerate() {
        for &b in s {
            pred[b].push(a);
        }
    }
    Ok(RoutingGraph {
        topology,
        succ,
        pred,
        out_link,
        external_edges,
    })
}

/// `true` iff the routing graph has no directed cycle (Kahn's algorithm).
pub fn is_deadlock_free(rg: &RoutingGraph) -> bool {
    let n = rg.node_count();
    let mut indeg: Vec<usize> = (0..n).map(|v| rg.pred[v].len()).collect();
    let mut queue: VecDeque<NodeId> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = queue.pop_front() {
        seen += 1;
        for &w in &rg.succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    seen == n
}

/// Enumerate simple paths from the local input of `src` to the local output
/// of `dst`, at most `limit` of them, in lexicographic order of their node
/// sequences (node ids are tile-major).
pub fn find_paths(rg: &RoutingGraph, src: TileId, dst: TileId, limit: usize) -> Vec<Vec<NodeId>> {
    let mut paths = Vec::new();
    if limit == 0 || src >= rg.tile_count() || dst >= rg.tile_count() {
        return paths;
    }
    let target = rg.local_out(dst);
    let start = rg.local_in(src);
    let mut on_path = vec![false; rg.node_count()];
    let mut path = vec![start];
    on_path[start] = true;
    // stack of (node, next successor index)
    let mut stack: Vec<(NodeId, usize)> = vec![(start, 0)];
    while let Some(&mut (node, ref mut next)) = stack.last_mut() {
        if node == target {
            paths.push(path.clone());
            if paths.len() >= limit {
                break;
            }
            stack.pop();
            on_path[node] = false;
            path.pop();
            continue;
        }
        let succ = rg.successors(node);
        if *next < succ.len() {
            let w = succ[*next];
            *next += 1;
            if !on_path[w] {
                on_path[w] = true;
                path.push(w);
                stack.push((w, 0));
            }
        } else {
            stack.pop();
            on_path[node] = false;
            path.pop();
        }
    }
    paths
}

/// For every tile, whether its local output is reachable from `start`.
pub(crate) fn reachable_tiles_from(rg: &RoutingGraph, start: NodeId) -> Vec<bool> {
    let mut seen = vec![false; rg.node_count()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        for &w in rg.successors(v) {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    (0..rg.tile_count()).map(|t| seen[rg.local_out(t)]).collect()
}

/// `m[s][d]` is true iff some path leads from `s`'s local input to `d`'s
/// local output.
pub fn reachability_matrix(rg: &RoutingGraph) -> Vec<Vec<bool>> {
    (0..rg.tile_count())
        .map(|s| reachable_tiles_from(rg, rg.local_in(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_mesh;
    use crate::health::Fault;

    fn healthy(w: usize, h: usize) -> (ArchitectureGraph, SystemHealthMap) {
        let ag = build_mesh(w, h, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        (ag, shm)
    }

    #[test]
    fn node_and_external_edge_counts_2x2() {
        let (ag, mut shm) = healthy(2, 2);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        assert_eq!(rg.node_count(), 40);
        assert_eq!(rg.external_edge_count(), 8);
        shm.apply_fault(Fault::Link(ag.link_between(0, 1).unwrap()))
            .unwrap();
        let broken = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        assert_eq!(broken.node_count(), 40);
        assert_eq!(broken.external_edge_count(), 7);
    }

    #[test]
    fn node_numbering_round_trips() {
        let (ag, shm) = healthy(3, 2);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        for id in 0..rg.node_count() {
            let pn = rg.port_node(id);
            assert_eq!(rg.node(pn.tile, pn.dir, pn.kind), Some(id));
        }
    }

    #[test]
    fn east_out_lands_on_west_in() {
        let (ag, shm) = healthy(3, 3);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        for (a, b) in rg.edges() {
            let (pa, pb) = (rg.port_node(a), rg.port_node(b));
            if pa.tile != pb.tile {
                assert_eq!(pa.kind, PortKind::Out);
                assert_eq!(pb.kind, PortKind::In);
                assert_eq!(pb.dir, pa.dir.opposite());
                assert_eq!(ag.topology().neighbor(pa.tile, pa.dir), Some(pb.tile));
            } else {
                assert_eq!((pa.kind, pb.kind), (PortKind::In, PortKind::Out));
            }
        }
    }

    #[test]
    fn xy_paths_2x2() {
        let (ag, mut shm) = healthy(2, 2);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let paths = find_paths(&rg, 0, 3, 10);
        assert_eq!(paths.len(), 1);
        assert_eq!(rg.path_tiles(&paths[0]), vec![0, 1, 3]);
        let self_paths = find_paths(&rg, 2, 2, 10);
        assert_eq!(self_paths, vec![vec![rg.local_in(2), rg.local_out(2)]]);

        shm.apply_fault(Fault::Link(ag.link_between(0, 1).unwrap()))
            .unwrap();
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        assert!(find_paths(&rg, 0, 3, 10).is_empty());
        let m = reachability_matrix(&rg);
        for s in 0..4 {
            for d in 0..4 {
                assert_eq!(m[s][d], !(s == 0 && (d == 1 || d == 3)), "{s}->{d}");
            }
        }
    }

    #[test]
    fn trivial_mesh() {
        let (ag, shm) = healthy(1, 1);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        assert!(is_deadlock_free(&rg));
        assert_eq!(reachability_matrix(&rg), vec![vec![true]]);
        assert_eq!(rg.external_edge_count(), 0);
    }

    #[test]
    fn fully_adaptive_has_cycle() {
        let (ag, shm) = healthy(2, 2);
        let rg = build_routing_graph(&ag, &TurnModel::fully_adaptive(), &shm).unwrap();
        assert!(!is_deadlock_free(&rg));
    }

    #[test]
    fn broken_pe_removes_local_connections() {
        let (ag, mut shm) = healthy(2, 2);
        shm.apply_fault(Fault::Pe(3)).unwrap();
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        assert!(rg.predecessors(rg.local_out(3)).is_empty());
        assert!(rg.successors(rg.local_in(3)).is_empty());
        let m = reachability_matrix(&rg);
        assert!(!m[0][3] && !m[3][3]);
        assert!(m[0][2]);
    }

    #[test]
    fn mismatched_health_map_rejected() {
        let ag = build_mesh(2, 2, None).unwrap();
        let other = SystemHealthMap::new(&build_mesh(3, 2, None).unwrap());
        assert!(matches!(
            build_routing_graph(&ag, &TurnModel::xy(), &other),
            Err(RoutingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn three_d_router_has_fourteen_nodes() {
        let ag = build_mesh(2, 2, Some(2)).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        assert_eq!(rg.node_count(), 8 * 14);
        assert_eq!(rg.external_edge_count(), 24);
        assert!(is_deadlock_free(&rg));
        assert!(reachability_matrix(&rg).iter().flatten().all(|&b| b));
    }
}
