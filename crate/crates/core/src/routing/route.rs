use std::collections::VecDeque;

use rand::Rng;

use super::graph::{NodeId, RoutingGraph};
use crate::rng;
use crate::topology::Direction;
use crate::{LinkId, TileId};

/// A concrete route through the routing graph, from the source's local input
/// to the destination's local output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    /// Routers traversed, source and destination included.
    pub tiles: Vec<TileId>,
    pub links: Vec<LinkId>,
    /// 90-degree turns taken, as `(tile, input port, output port)`.
    pub turns: Vec<(TileId, Direction, Direction)>,
}

impl Route {
    fn from_nodes(rg: &RoutingGraph, nodes: Vec<NodeId>) -> Route {
        let tiles = rg.path_tiles(&nodes);
        let mut links = Vec::new();
        let mut turns = Vec::new();
        for w in nodes.windows(2) {
            let (a, b) = (rg.port_node(w[0]), rg.port_node(w[1]));
            if a.tile != b.tile {
                links.push(rg.link_of(w[0]).expect("external edge has a link"));
            } else if a.dir != Direction::L
                && b.dir != Direction::L
                && a.dir.opposite() != b.dir
            {
                turns.push((a.tile, a.dir, b.dir));
            }
        }
        Route {
            nodes,
            tiles,
            links,
            turns,
        }
    }

    pub fn hops(&self) -> usize {
        self.links.len()
    }

    pub fn routers(&self) -> usize {
        self.tiles.len()
    }
}

/// How a route is picked among the shortest routing-graph paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RouteSelector {
    /// Lowest node id at every hop.
    #[default]
    Deterministic,
    /// Uniform among shortest next hops, keyed by `(seed, flow key)` so the
    /// choice for a flow never depends on evaluation order.
    SeededUniform { seed: u64 },
}

/// Shortest-path distances to every destination's local output.
#[derive(Debug, Clone)]
pub struct RouteTable {
    /// `dist[dst][node]`, `u32::MAX` when unreachable.
    dist: Vec<Vec<u32>>,
}

impl RouteTable {
    pub fn new(rg: &RoutingGraph) -> RouteTable {
        let n = rg.node_count();
        let dist = (0..rg.tile_count())
            .map(|dst| {
                let mut d = vec![u32::MAX; n];
                let target = rg.local_out(dst);
                d[target] = 0;
                let mut queue = VecDeque::from([target]);
                while let Some(v) = queue.pop_front() {
                    for &u in rg.predecessors(v) {
                        if d[u] == u32::MAX {
                            d[u] = d[v] + 1;
                            queue.push_back(u);
                        }
                    }
                }
                d
            })
            .collect();
        RouteTable { dist }
    }

    pub fn reachable(&self, rg: &RoutingGraph, src: TileId, dst: TileId) -> bool {
        self.dist[dst][rg.local_in(src)] != u32::MAX
    }

    /// Shortest route from `src` to `dst`; `None` when unreachable.
    pub fn route(
        &self,
        rg: &RoutingGraph,
        src: TileId,
        dst: TileId,
        selector: RouteSelector,
        key: u64,
    ) -> Option<Route> {
        let dist = &self.dist[dst];
        let mut node = rg.local_in(src);
        if dist[node] == u32::MAX {
            return None;
        }
        let mut rng = match selector {
            RouteSelector::Deterministic => None,
            RouteSelector::SeededUniform { seed } => Some(rng::keyed_stream(seed, "routing", key)),
        };
        let mut nodes = vec![node];
        while dist[node] > 0 {
            let want = dist[node] - 1;
            let candidates: Vec<NodeId> = rg
                .successors(node)
                .iter()
                .copied()
                .filter(|&w| dist[w] == want)
                .collect();
            node = match rng.as_mut() {
                Some(r) if candidates.len() > 1 => candidates[r.gen_range(0..candidates.len())],
                _ => candidates[0],
            };
            nodes.push(node);
        }
        Some(Route::from_nodes(rg, nodes))
    }
}
