//! System health map: binary health of every PE, router turn and directed
//! link, plus a per-PE aging byte. Also derives the per-router LBDR
//! connectivity and routing bits.
//!
//! Mutation goes through `&mut SystemHealthMap` only; the mapper/scheduler
//! receives `&SystemHealthMap` and therefore cannot write.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::graphs::ArchitectureGraph;
use crate::routing::{turn_slots, TurnModel};
use crate::topology::{Direction, Topology};
use crate::{LinkId, TileId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Health {
    #[default]
    Healthy,
    Broken,
}

impl Health {
    pub fn is_healthy(self) -> bool {
        self == Health::Healthy
    }

    fn symbol(self) -> char {
        match self {
            Health::Healthy => 'H',
            Health::Broken => 'B',
        }
    }
}

/// A permanent degradation of one health-map element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fault {
    Pe(TileId),
    Turn { tile: TileId, slot: usize },
    Link(LinkId),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Pe(t) => write!(f, "pe({t})"),
            Fault::Turn { tile, slot } => write!(f, "turn({tile},{slot})"),
            Fault::Link(l) => write!(f, "link({l})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HealthError {
    #[error("unknown fault target {0}")]
    UnknownTarget(Fault),
    #[error("unknown tile {0}")]
    UnknownTile(TileId),
    #[error("aging decrement {0}% is outside 0..=100")]
    Range(u32),
    #[error("snapshot of {snapshot} cannot be restored into {shm}")]
    DimensionMismatch { snapshot: String, shm: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemHealthMap {
    topology: Topology,
    pe: Vec<Health>,
    turns: Vec<Health>,
    slots: usize,
    links: Vec<Health>,
    aging: Vec<u8>,
}

impl SystemHealthMap {
    /// All-healthy map for `ag`.
    pub fn new(ag: &ArchitectureGraph) -> SystemHealthMap {
        let topology = ag.topology();
        let n = ag.tile_count();
        let slots = turn_slots(&topology).len();
        SystemHealthMap {
            topology,
            pe: vec![Health::Healthy; n],
            turns: vec![Health::Healthy; n * slots],
            slots,
            links: vec![Health::Healthy; ag.links().len()],
            aging: vec![0; n],
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn tile_count(&self) -> usize {
        self.pe.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn slots_per_tile(&self) -> usize {
        self.slots
    }

    pub fn pe_health(&self, tile: TileId) -> Health {
        self.pe[tile]
    }

    pub fn turn_health(&self, tile: TileId, slot: usize) -> Health {
        self.turns[tile * self.slots + slot]
    }

    pub fn link_health(&self, link: LinkId) -> Health {
        self.links[link]
    }

    pub fn aging(&self, tile: TileId) -> u8 {
        self.aging[tile]
    }

    /// A PE can host tasks when it is healthy and not fully aged out.
    pub fn is_pe_usable(&self, tile: TileId) -> bool {
        self.pe[tile].is_healthy() && self.aging[tile] < 100
    }

    pub fn usable_pes(&self) -> Vec<TileId> {
        (0..self.tile_count())
            .filter(|&t| self.is_pe_usable(t))
            .collect()
    }

    /// Slot index of the turn `(input port, output port)`, if it is a turn.
    pub fn turn_slot(&self, input: Direction, output: Direction) -> Option<usize> {
        turn_slots(&self.topology)
            .iter()
            .position(|&s| s == (input, output))
    }

    pub fn is_broken(&self, fault: Fault) -> bool {
        match fault {
            Fault::Pe(t) => t < self.pe.len() && !self.pe[t].is_healthy(),
            Fault::Turn { tile, slot } => {
                tile < self.pe.len() && slot < self.slots && !self.turn_health(tile, slot).is_healthy()
            }
            Fault::Link(l) => l < self.links.len() && !self.links[l].is_healthy(),
        }
    }

    fn check(&self, fault: Fault) -> Result<(), HealthError> {
        let ok = match fault {
            Fault::Pe(t) => t < self.pe.len(),
            Fault::Turn { tile, slot } => tile < self.pe.len() && slot < self.slots,
            Fault::Link(l) => l < self.links.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(HealthError::UnknownTarget(fault))
        }
    }

    /// Mark the target Broken. Idempotent.
    pub fn apply_fault(&mut self, fault: Fault) -> Result<(), HealthError> {
        self.check(fault)?;
        match fault {
            Fault::Pe(t) => self.pe[t] = Health::Broken,
            Fault::Turn { tile, slot } => self.turns[tile * self.slots + slot] = Health::Broken,
            Fault::Link(l) => self.links[l] = Health::Broken,
        }
        Ok(())
    }

    /// Copy with `fault` applied.
    pub fn with_fault(&self, fault: Fault) -> Result<SystemHealthMap, HealthError> {
        let mut next = self.clone();
        next.apply_fault(fault)?;
        Ok(next)
    }

    /// Record the frequency decrement of a PE, in percent.
    pub fn set_aging(&mut self, tile: TileId, decrement_percent: u32) -> Result<(), HealthError> {
        if tile >= self.pe.len() {
            return Err(HealthError::UnknownTile(tile));
        }
        if decrement_percent > 100 {
            return Err(HealthError::Range(decrement_percent));
        }
        self.aging[tile] = decrement_percent as u8;
        Ok(())
    }

    /// Execution time of a task with nominal `wcet` on `tile`, scaled by
    /// `1 / (1 - decrement)` and rounded up. `None` for a fully aged PE.
    pub fn effective_wcet(&self, tile: TileId, wcet: u64) -> Option<u64> {
        effective_wcet(wcet, self.aging[tile])
    }

    /// Every Broken element, in canonical order.
    pub fn broken(&self) -> Vec<Fault> {
        let mut out: Vec<Fault> = (0..self.pe.len())
            .filter(|&t| !self.pe[t].is_healthy())
            .map(Fault::Pe)
            .collect();
        for (i, h) in self.turns.iter().enumerate() {
            if !h.is_healthy() {
                out.push(Fault::Turn {
                    tile: i / self.slots,
                    slot: i % self.slots,
                });
            }
        }
        out.extend(
            (0..self.links.len())
                .filter(|&l| !self.links[l].is_healthy())
                .map(Fault::Link),
        );
        out
    }

    /// Canonical text form: PEs by tile, then turn slots per tile in slot
    /// order, then links by id, then aging bytes by tile.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "topology {}", self.topology);
        for (t, h) in self.pe.iter().enumerate() {
            let _ = writeln!(s, "pe {t} {}", h.symbol());
        }
        for t in 0..self.pe.len() {
            let row: String = self.turns[t * self.slots..(t + 1) * self.slots]
                .iter()
                .map(|h| h.symbol())
                .collect();
            let _ = writeln!(s, "turn {t} {row}");
        }
        for (l, h) in self.links.iter().enumerate() {
            let _ = writeln!(s, "link {l} {}", h.symbol());
        }
        for (t, a) in self.aging.iter().enumerate() {
            let _ = writeln!(s, "aging {t} {a}");
        }
        s
    }

    pub fn snapshot(&self) -> ShmSnapshot {
        ShmSnapshot(self.clone())
    }

    pub fn restore(&mut self, snapshot: &ShmSnapshot) -> Result<(), HealthError> {
        let snap = &snapshot.0;
        if snap.topology != self.topology || snap.links.len() != self.links.len() {
            return Err(HealthError::DimensionMismatch {
                snapshot: snap.topology.to_string(),
                shm: self.topology.to_string(),
            });
        }
        self.clone_from(snap);
        Ok(())
    }
}

pub fn effective_wcet(wcet: u64, aging: u8) -> Option<u64> {
    let aging = u64::from(aging.min(100));
    if aging >= 100 {
        return None;
    }
    Some((wcet * 100).div_ceil(100 - aging))
}

/// Full copy of a health map, restorable bit for bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShmSnapshot(SystemHealthMap);

impl ShmSnapshot {
    pub fn health_map(&self) -> &SystemHealthMap {
        &self.0
    }
}

/// LBDR connectivity bits `(C_n, C_e, C_w, C_s)` and routing bits
/// `R_ab`, where `R_ab` lets a packet travelling in direction `a` leave
/// towards `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LbdrConfig {
    pub c_n: bool,
    pub c_e: bool,
    pub c_w: bool,
    pub c_s: bool,
    pub r_ne: bool,
    pub r_nw: bool,
    pub r_en: bool,
    pub r_es: bool,
    pub r_wn: bool,
    pub r_ws: bool,
    pub r_se: bool,
    pub r_sw: bool,
}

/// Routing bits in field order as `(travel direction, exit direction)`.
pub const LBDR_ROUTING_BITS: [(Direction, Direction); 8] = [
    (Direction::N, Direction::E),
    (Direction::N, Direction::W),
    (Direction::E, Direction::N),
    (Direction::E, Direction::S),
    (Direction::W, Direction::N),
    (Direction::W, Direction::S),
    (Direction::S, Direction::E),
    (Direction::S, Direction::W),
];

impl LbdrConfig {
    pub fn connectivity(&self) -> [bool; 4] {
        [self.c_n, self.c_e, self.c_w, self.c_s]
    }

    pub fn routing(&self) -> [bool; 8] {
        [
            self.r_ne, self.r_nw, self.r_en, self.r_es, self.r_wn, self.r_ws, self.r_se, self.r_sw,
        ]
    }

    /// Connectivity bit for output port `dir`.
    pub fn connected(&self, dir: Direction) -> bool {
        match dir {
            Direction::N => self.c_n,
            Direction::E => self.c_e,
            Direction::W => self.c_w,
            Direction::S => self.c_s,
            _ => false,
        }
    }

    /// Allowed turns as router `(input port, output port)` pairs. A packet
    /// travelling east enters through the west input.
    pub fn allowed_turns(&self) -> Vec<(Direction, Direction)> {
        LBDR_ROUTING_BITS
            .iter()
            .zip(self.routing())
            .filter(|(_, bit)| *bit)
            .map(|(&(travel, exit), _)| (travel.opposite(), exit))
            .collect()
    }

    /// `(connectivity nibble, routing byte)`, MSB first in field order.
    pub fn bits(&self) -> (u8, u8) {
        let pack = |bits: &[bool]| bits.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b));
        (pack(&self.connectivity()), pack(&self.routing()))
    }
}

/// Derive the LBDR bits of `tile` from the health map and a turn model. Only
/// the planar ports are covered; LBDR is a 2D mechanism.
pub fn derive_lbdr_config(
    shm: &SystemHealthMap,
    ag: &ArchitectureGraph,
    turn_model: &TurnModel,
    tile: TileId,
) -> Result<LbdrConfig, HealthError> {
    if tile >= shm.tile_count() {
        return Err(HealthError::UnknownTile(tile));
    }
    let conn = |dir: Direction| {
        ag.out_link(tile, dir)
            .is_some_and(|l| shm.link_health(l).is_healthy())
    };
    let bit = |travel: Direction, exit: Direction| {
        let input = travel.opposite();
        let slot = shm.turn_slot(input, exit).expect("planar turn");
        turn_model.allows(input, exit) && shm.turn_health(tile, slot).is_healthy()
    };
    use Direction::{E, N, S, W};
    Ok(LbdrConfig {
        c_n: conn(N),
        c_e: conn(E),
        c_w: conn(W),
        c_s: conn(S),
        r_ne: bit(N, E),
        r_nw: bit(N, W),
        r_en: bit(E, N),
        r_es: bit(E, S),
        r_wn: bit(W, N),
        r_ws: bit(W, S),
        r_se: bit(S, E),
        r_sw: bit(S, W),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_mesh;

    fn mesh2x2() -> (ArchitectureGraph, SystemHealthMap) {
        let ag = build_mesh(2, 2, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        (ag, shm)
    }

    #[test]
    fn apply_fault_is_idempotent() {
        let (_, mut a) = mesh2x2();
        a.apply_fault(Fault::Pe(3)).unwrap();
        let once = a.clone();
        a.apply_fault(Fault::Pe(3)).unwrap();
        assert_eq!(a, once);
        assert_eq!(
            a.apply_fault(Fault::Link(99)),
            Err(HealthError::UnknownTarget(Fault::Link(99)))
        );
        assert!(a.apply_fault(Fault::Turn { tile: 0, slot: 8 }).is_err());
    }

    #[test]
    fn aging_scales_wcet() {
        let (_, mut shm) = mesh2x2();
        assert_eq!(shm.effective_wcet(0, 10), Some(10));
        shm.set_aging(0, 50).unwrap();
        assert_eq!(shm.effective_wcet(0, 10), Some(20));
        shm.set_aging(0, 100).unwrap();
        assert_eq!(shm.effective_wcet(0, 10), None);
        assert!(!shm.is_pe_usable(0));
        assert_eq!(shm.set_aging(0, 101), Err(HealthError::Range(101)));
        assert_eq!(shm.set_aging(9, 1), Err(HealthError::UnknownTile(9)));
        assert_eq!(effective_wcet(7, 30), Some(10));
    }

    #[test]
    fn corner_connectivity_and_xy_bits() {
        let (ag, mut shm) = mesh2x2();
        let cfg = derive_lbdr_config(&shm, &ag, &TurnModel::xy(), 0).unwrap();
        assert_eq!(cfg.connectivity(), [true, true, false, false]);
        assert!(cfg.r_en && cfg.r_es && cfg.r_wn && cfg.r_ws);
        assert!(!cfg.r_ne && !cfg.r_nw && !cfg.r_se && !cfg.r_sw);

        // break the turn a packet travelling east takes to go north
        let slot = shm.turn_slot(Direction::W, Direction::N).unwrap();
        shm.apply_fault(Fault::Turn { tile: 0, slot }).unwrap();
        let cfg = derive_lbdr_config(&shm, &ag, &TurnModel::xy(), 0).unwrap();
        assert!(!cfg.r_en);
        assert!(cfg.r_es && cfg.r_wn && cfg.r_ws);

        shm.apply_fault(Fault::Link(ag.link_between(0, 1).unwrap()))
            .unwrap();
        let cfg = derive_lbdr_config(&shm, &ag, &TurnModel::xy(), 0).unwrap();
        assert!(!cfg.c_e && cfg.c_n);
        assert!(derive_lbdr_config(&shm, &ag, &TurnModel::xy(), 4).is_err());
    }

    #[test]
    fn snapshot_restore() {
        let (ag, mut shm) = mesh2x2();
        let original = shm.clone();
        let snap = shm.snapshot();
        shm.apply_fault(Fault::Pe(1)).unwrap();
        shm.apply_fault(Fault::Link(2)).unwrap();
        shm.apply_fault(Fault::Turn { tile: 3, slot: 4 }).unwrap();
        assert_ne!(shm, original);
        shm.restore(&snap).unwrap();
        assert_eq!(shm, original);
        shm.restore(&snap).unwrap();
        assert_eq!(shm.serialize(), original.serialize());

        let mut other = SystemHealthMap::new(&build_mesh(3, 3, None).unwrap());
        assert!(other.restore(&snap).is_err());
        let _ = ag;
    }

    #[test]
    fn serialization_layout() {
        let (_, mut shm) = mesh2x2();
        shm.apply_fault(Fault::Turn { tile: 1, slot: 2 }).unwrap();
        shm.set_aging(3, 7).unwrap();
        let text = shm.serialize();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "topology mesh2d 2x2");
        assert_eq!(lines[1], "pe 0 H");
        assert_eq!(lines[6], "turn 1 HHBHHHHH");
        assert_eq!(lines[9], "link 0 H");
        assert_eq!(*lines.last().unwrap(), "aging 3 7");
        assert_eq!(lines.len(), 1 + 4 + 4 + 8 + 4);
    }
}
