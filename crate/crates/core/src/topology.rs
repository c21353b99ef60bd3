//! Mesh geometry: coordinates, directions and tile-id linearization.

use std::fmt;

use crate::TileId;

/// Port direction of a router. `x` grows to the east, `y` to the north and
/// `z` upward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    N,
    E,
    W,
    S,
    U,
    D,
    /// Local port towards the processing element.
    L,
}

impl Direction {
    pub const PLANAR: [Direction; 4] = [Direction::N, Direction::E, Direction::W, Direction::S];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::N => Direction::S,
            Direction::S => Direction::N,
            Direction::E => Direction::W,
            Direction::W => Direction::E,
            Direction::U => Direction::D,
            Direction::D => Direction::U,
            Direction::L => Direction::L,
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::U | Direction::D)
    }

    /// Unit displacement `(dx, dy, dz)` when leaving through this port.
    pub fn delta(self) -> (i64, i64, i64) {
        match self {
            Direction::N => (0, 1, 0),
            Direction::S => (0, -1, 0),
            Direction::E => (1, 0, 0),
            Direction::W => (-1, 0, 0),
            Direction::U => (0, 0, 1),
            Direction::D => (0, 0, -1),
            Direction::L => (0, 0, 0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::N => "N",
            Direction::E => "E",
            Direction::W => "W",
            Direction::S => "S",
            Direction::U => "U",
            Direction::D => "D",
            Direction::L => "L",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        Some(match s.trim().to_ascii_uppercase().as_str() {
            "N" | "NORTH" => Direction::N,
            "E" | "EAST" => Direction::E,
            "W" | "WEST" => Direction::W,
            "S" | "SOUTH" => Direction::S,
            "U" | "UP" => Direction::U,
            "D" | "DOWN" => Direction::D,
            "L" | "LOCAL" => Direction::L,
            _ => return None,
        })
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Coord {
    pub fn new(x: usize, y: usize) -> Self {
        Coord { x, y, z: 0 }
    }

    pub fn new3(x: usize, y: usize, z: usize) -> Self {
        Coord { x, y, z }
    }

    /// Manhattan distance.
    pub fn distance(&self, other: &Coord) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y) + self.z.abs_diff(other.z)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.z == 0 {
            write!(f, "({},{})", self.x, self.y)
        } else {
            write!(f, "({},{},{})", self.x, self.y, self.z)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    Mesh2d { width: usize, height: usize },
    Mesh3d { width: usize, height: usize, depth: usize },
}

const PORTS_2D: [Direction; 5] = [
    Direction::N,
    Direction::E,
    Direction::W,
    Direction::S,
    Direction::L,
];
const PORTS_3D: [Direction; 7] = [
    Direction::N,
    Direction::E,
    Direction::W,
    Direction::S,
    Direction::U,
    Direction::D,
    Direction::L,
];

impl Topology {
    pub fn width(&self) -> usize {
        match *self {
            Topology::Mesh2d { width, .. } | Topology::Mesh3d { width, .. } => width,
        }
    }

    pub fn height(&self) -> usize {
        match *self {
            Topology::Mesh2d { height, .. } | Topology::Mesh3d { height, .. } => height,
        }
    }

    pub fn depth(&self) -> usize {
        match *self {
            Topology::Mesh2d { .. } => 1,
            Topology::Mesh3d { depth, .. } => depth,
        }
    }

    pub fn is_3d(&self) -> bool {
        matches!(self, Topology::Mesh3d { .. })
    }

    pub fn tile_count(&self) -> usize {
        self.width() * self.height() * self.depth()
    }

    /// Router ports in their fixed order; the local port is always last.
    pub fn ports(&self) -> &'static [Direction] {
        if self.is_3d() {
            &PORTS_3D
        } else {
            &PORTS_2D
        }
    }

    /// Non-local ports in fixed order.
    pub fn network_ports(&self) -> &'static [Direction] {
        let ports = self.ports();
        &ports[..ports.len() - 1]
    }

    pub fn port_index(&self, dir: Direction) -> Option<usize> {
        self.ports().iter().position(|&d| d == dir)
    }

    pub fn coord(&self, tile: TileId) -> Coord {
        let (w, h) = (self.width(), self.height());
        Coord {
            x: tile % w,
            y: (tile / w) % h,
            z: tile / (w * h),
        }
    }

    pub fn tile_id(&self, c: Coord) -> Option<TileId> {
        if c.x < self.width() && c.y < self.height() && c.z < self.depth() {
            Some(c.x + c.y * self.width() + c.z * self.width() * self.height())
        } else {
            None
        }
    }

    pub fn neighbor(&self, tile: TileId, dir: Direction) -> Option<TileId> {
        if dir == Direction::L || (dir.is_vertical() && !self.is_3d()) {
            return None;
        }
        let c = self.coord(tile);
        let (dx, dy, dz) = dir.delta();
        let x = c.x.checked_add_signed(dx as isize)?;
        let y = c.y.checked_add_signed(dy as isize)?;
        let z = c.z.checked_add_signed(dz as isize)?;
        self.tile_id(Coord { x, y, z })
    }

    /// Bounds `(width, height, depth)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width(), self.height(), self.depth())
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Mesh2d { width, height } => write!(f, "mesh2d {width}x{height}"),
            Topology::Mesh3d {
                width,
                height,
                depth,
            } => write!(f, "mesh3d {width}x{height}x{depth}"),
        }
    }
}
