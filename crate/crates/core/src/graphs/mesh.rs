use super::GraphError;
use crate::topology::{Coord, Direction, Topology};
use crate::{LinkId, TileId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub id: TileId,
    pub coord: Coord,
    pub pe_present: bool,
}

/// Directed inter-tile link. `src_dir` is the output port at `src`, `dst_dir`
/// the input port at `dst` (always the opposite side).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub id: LinkId,
    pub src: TileId,
    pub src_dir: Direction,
    pub dst: TileId,
    pub dst_dir: Direction,
}

/// Platform graph of a 2D or 3D mesh. Never mutated after construction;
/// degradation lives in the health map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureGraph {
    topology: Topology,
    tiles: Vec<Tile>,
    links: Vec<Link>,
    /// `tile * ports + port` -> outgoing link.
    out_links: Vec<Option<LinkId>>,
}

impl ArchitectureGraph {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    /// Outgoing link of `tile` through port `dir`, if the neighbor exists.
    pub fn out_link(&self, tile: TileId, dir: Direction) -> Option<LinkId> {
        let port = self.topology.port_index(dir)?;
        self.out_links[tile * self.topology.ports().len() + port]
    }

    pub fn link_between(&self, src: TileId, dst: TileId) -> Option<LinkId> {
        self.topology
            .network_ports()
            .iter()
            .filter_map(|&d| self.out_link(src, d))
            .find(|&l| self.links[l].dst == dst)
    }

    pub fn coord(&self, tile: TileId) -> Coord {
        self.tiles[tile].coord
    }
}

/// Build a `w x h` mesh, or a `w x h x d` mesh when `d` is given.
///
/// Links are numbered by source tile, then by port order N, E, W, S, U, D.
pub fn build_mesh(w: usize, h: usize, d: Option<usize>) -> Result<ArchitectureGraph, GraphError> {
    if w == 0 || h == 0 || d == Some(0) {
        return Err(GraphError::ZeroDimension);
    }
    let topology = match d {
        None => Topology::Mesh2d {
            width: w,
            height: h,
        },
        Some(depth) => {
            if !cfg!(feature = "mesh3d") {
                return Err(GraphError::Unsupported3d);
            }
            Topology::Mesh3d {
                width: w,
                height: h,
                depth,
            }
        }
    };
    let n = topology.tile_count();
    let ports = topology.ports().len();
    let tiles = (0..n)
        .map(|id| Tile {
            id,
            coord: topology.coord(id),
            pe_present: true,
        })
        .collect();
    let mut links = Vec::new();
    let mut out_links = vec![None; n * ports];
    for tile in 0..n {
        for (pi, &dir) in topology.network_ports().iter().enumerate() {
            if let Some(dst) = topology.neighbor(tile, dir) {
                let id = links.len();
                links.push(Link {
                    id,
                    src: tile,
                    src_dir: dir,
                    dst,
                    dst_dir: dir.opposite(),
                });
                out_links[tile * ports + pi] = Some(id);
            }
        }
    }
    Ok(ArchitectureGraph {
        topology,
        tiles,
        links,
        out_links,
    })
}
