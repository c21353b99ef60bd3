//! Health monitoring: checker events in, health-map updates and remapping
//! orders out.
//!
//! Events are grouped per location and classified from their recent history.
//! Transient faults are ignored. Intermittent ones leave the health map alone
//! but feed the fault predictor, whose most probable faults are pre-mapped
//! into the mapping memory. Permanent faults are written into the health map
//! and, when they hit a resource the deployed application still needs, the
//! application is remapped (from the mapping memory when possible).

mod mpm;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graphs::{ArchitectureGraph, TaskGraph};
use crate::health::{Fault, HealthError, SystemHealthMap};
use crate::mapsched::{MapError, Schedule};
use crate::reachability::ReachError;
use crate::routing::RoutingError;
use crate::{LinkId, TileId};

pub use mpm::{
    apply_partial, extract_partial_mapping, map_and_deploy, map_and_store,
    CurrentMappingMemory, Deployment, LatencyReport, Mpm, MpmEntry, MsuSetup, Shmu, ShmuAction,
    ShmuConfig, ShmuDecision, ShmuEnv, ShmuResponse, VirtualCostModel,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShmuError {
    #[error("cannot classify an empty event history")]
    EmptyHistory,
    #[error("unknown fault location {0}")]
    UnknownTarget(FaultLocation),
    #[error("mappings differ in length ({old} vs {new})")]
    LengthMismatch { old: usize, new: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Health(#[from] HealthError),
}

/// Router sub-unit watched by a concurrent checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CheckerUnit {
    RoutingLogic,
    Arbiter,
    FifoControl,
    DatapathParity,
}

impl CheckerUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckerUnit::RoutingLogic => "routing_logic",
            CheckerUnit::Arbiter => "arbiter",
            CheckerUnit::FifoControl => "fifo_control",
            CheckerUnit::DatapathParity => "datapath_parity",
        }
    }

    pub fn parse(s: &str) -> Option<CheckerUnit> {
        match s {
            "routing_logic" => Some(CheckerUnit::RoutingLogic),
            "arbiter" => Some(CheckerUnit::Arbiter),
            "fifo_control" => Some(CheckerUnit::FifoControl),
            "datapath_parity" => Some(CheckerUnit::DatapathParity),
            _ => None,
        }
    }
}

/// Where a checker saw a fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultLocation {
    Pe(TileId),
    Turn { tile: TileId, slot: usize },
    Link(LinkId),
    CheckerUnit { tile: TileId, unit: CheckerUnit },
}

impl fmt::Display for FaultLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultLocation::Pe(t) => write!(f, "pe({t})"),
            FaultLocation::Turn { tile, slot } => write!(f, "turn({tile},{slot})"),
            FaultLocation::Link(l) => write!(f, "link({l})"),
            FaultLocation::CheckerUnit { tile, unit } => write!(f, "{}({tile})", unit.as_str()),
        }
    }
}

impl From<Fault> for FaultLocation {
    fn from(f: Fault) -> Self {
        match f {
            Fault::Pe(t) => FaultLocation::Pe(t),
            Fault::Turn { tile, slot } => FaultLocation::Turn { tile, slot },
            Fault::Link(l) => FaultLocation::Link(l),
        }
    }
}

impl FaultLocation {
    /// Health-map elements a permanent fault here breaks. A broken routing,
    /// arbitration or buffer-control unit disables every turn of its router;
    /// a datapath fault disables every outgoing link of the router.
    pub fn faults(
        &self,
        ag: &ArchitectureGraph,
        shm: &SystemHealthMap,
    ) -> Result<Vec<Fault>, ShmuError> {
        let unknown = || ShmuError::UnknownTarget(*self);
        let tiles = shm.tile_count();
        let faults = match *self {
            FaultLocation::Pe(t) => vec![Fault::Pe(t)],
            FaultLocation::Turn { tile, slot } => vec![Fault::Turn { tile, slot }],
            FaultLocation::Link(l) => vec![Fault::Link(l)],
            FaultLocation::CheckerUnit { tile, unit } => {
                if tile >= tiles {
                    return Err(unknown());
                }
                match unit {
                    CheckerUnit::DatapathParity => ag
                        .topology()
                        .network_ports()
                        .iter()
                        .filter_map(|&d| ag.out_link(tile, d))
                        .map(Fault::Link)
                        .collect(),
                    _ => (0..shm.slots_per_tile())
                        .map(|slot| Fault::Turn { tile, slot })
                        .collect(),
                }
            }
        };
        let mut probe = shm.clone();
        for &f in &faults {
            probe.apply_fault(f).map_err(|_| unknown())?;
        }
        Ok(faults)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StuckType {
    Sa0,
    Sa1,
}

impl fmt::Display for StuckType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StuckType::Sa0 => "SA0",
            StuckType::Sa1 => "SA1",
        })
    }
}

/// A checker report. `time` is when the fault occurred; the monitor sees it
/// `detection_latency` cycles later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaultEvent {
    pub time: u64,
    pub location: FaultLocation,
    pub stuck: StuckType,
    pub detection_latency: u64,
    /// Set when an online retest of the location keeps failing.
    pub retest_fail: bool,
}

impl FaultEvent {
    pub fn reported_at(&self) -> u64 {
        self.time + self.detection_latency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaultClass {
    Transient,
    Intermittent,
    Permanent,
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Window and event-count thresholds of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub window: u64,
    pub intermittent_threshold: usize,
    pub permanent_threshold: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            window: 10_000,
            intermittent_threshold: 3,
            permanent_threshold: 8,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ShmuError> {
        if self.window == 0 {
            return Err(ShmuError::InvalidConfig("classifier window must be positive".into()));
        }
        if self.intermittent_threshold < 2 || self.permanent_threshold < self.intermittent_threshold {
            return Err(ShmuError::InvalidConfig(
                "classifier thresholds need permanent >= intermittent >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Events of `history` in the window ending at `now`.
    fn recent(&self, history: &[FaultEvent], now: u64) -> usize {
        history
            .iter()
            .filter(|e| e.time <= now && now - e.time < self.window)
            .count()
    }
}

/// Class of a location from its time-sorted event history.
pub fn classify(history: &[FaultEvent], config: &ClassifierConfig) -> Result<FaultClass, ShmuError> {
    let latest = history.last().ok_or(ShmuError::EmptyHistory)?;
    let recent = config.recent(history, latest.time);
    Ok(if latest.retest_fail || recent >= config.permanent_threshold {
        FaultClass::Permanent
    } else if recent >= config.intermittent_threshold {
        FaultClass::Intermittent
    } else {
        FaultClass::Transient
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Severity {
    Ignore,
    Remap,
    MapAndStore,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Health-map elements the deployed application still depends on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MappingUsage {
    used: BTreeSet<Fault>,
}

impl MappingUsage {
    /// Usage of `schedule` restricted to the tasks flagged in `pending`: their
    /// PEs, the PEs of their producers, and the links and turns of every flow
    /// they still wait for.
    pub fn from_schedule(
        schedule: &Schedule,
        tg: &TaskGraph,
        shm: &SystemHealthMap,
        pending: &[bool],
    ) -> MappingUsage {
        let mut used = BTreeSet::new();
        for (task, t) in schedule.tasks.iter().enumerate() {
            if pending.get(task).copied().unwrap_or(true) {
                used.insert(Fault::Pe(t.tile));
            }
        }
        for (e, edge) in tg.edges().iter().enumerate() {
            if !pending.get(edge.dst).copied().unwrap_or(true) {
                continue;
            }
            used.insert(Fault::Pe(schedule.tasks[edge.src].tile));
            let Some(Some(route)) = schedule.flows.get(e).map(|f| f.as_ref().and_then(|f| f.route.as_ref())) else {
                continue;
            };
            used.extend(route.links.iter().map(|&l| Fault::Link(l)));
            for &(tile, input, output) in &route.turns {
                if let Some(slot) = shm.turn_slot(input, output) {
                    used.insert(Fault::Turn { tile, slot });
                }
            }
        }
        MappingUsage { used }
    }

    /// Usage of a whole static schedule.
    pub fn all(schedule: &Schedule, tg: &TaskGraph, shm: &SystemHealthMap) -> MappingUsage {
        MappingUsage::from_schedule(schedule, tg, shm, &vec![true; tg.len()])
    }

    pub fn uses(&self, fault: Fault) -> bool {
        self.used.contains(&fault)
    }

    pub fn affected_by(&self, faults: &[Fault]) -> bool {
        faults.iter().any(|&f| self.uses(f))
    }
}

/// Reaction to a classified fault: transient faults are ignored,
/// intermittent ones trigger pre-mapping of predicted faults, permanent ones
/// remap when they break something in use.
pub fn severity(class: FaultClass, faults: &[Fault], usage: &MappingUsage) -> Severity {
    match class {
        FaultClass::Transient => Severity::Ignore,
        FaultClass::Intermittent => Severity::MapAndStore,
        FaultClass::Permanent if usage.affected_by(faults) => Severity::Remap,
        FaultClass::Permanent => Severity::Ignore,
    }
}

/// First 8 bytes (big endian) of SHA-256 over the canonical health-map text.
pub fn fault_tag(shm: &SystemHealthMap) -> u64 {
    let digest = Sha256::digest(shm.serialize().as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

/// Ranks candidate next faults from the observed event histories.
pub trait FaultPredictor {
    fn predict(
        &self,
        histories: &BTreeMap<FaultLocation, Vec<FaultEvent>>,
        config: &ClassifierConfig,
        k: usize,
    ) -> Vec<FaultLocation>;
}

/// Default predictor: locations currently classified intermittent, by number
/// of events in the window ending at the newest event overall (descending),
/// ties by location.
#[derive(Debug, Clone, Copy, Default)]
pub struct RatePredictor;

impl FaultPredictor for RatePredictor {
    fn predict(
        &self,
        histories: &BTreeMap<FaultLocation, Vec<FaultEvent>>,
        config: &ClassifierConfig,
        k: usize,
    ) -> Vec<FaultLocation> {
        let now = histories
            .values()
            .filter_map(|h| h.last())
            .map(|e| e.time)
            .max()
            .unwrap_or(0);
        let mut ranked: Vec<(usize, FaultLocation)> = histories
            .iter()
            .filter(|(_, h)| classify(h, config) == Ok(FaultClass::Intermittent))
            .map(|(&loc, h)| (config.recent(h, now), loc))
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.into_iter().take(k).map(|(_, loc)| loc).collect()
    }
}

pub fn predict_mpfs(
    histories: &BTreeMap<FaultLocation, Vec<FaultEvent>>,
    config: &ClassifierConfig,
    k: usize,
) -> Vec<FaultLocation> {
    RatePredictor.predict(histories, config, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::build_mesh;

    fn ev(time: u64, location: FaultLocation) -> FaultEvent {
        FaultEvent {
            time,
            location,
            stuck: StuckType::Sa0,
            detection_latency: 1,
            retest_fail: false,
        }
    }

    #[test]
    fn classification_thresholds() {
        let loc = FaultLocation::Turn { tile: 0, slot: 1 };
        let cfg = ClassifierConfig {
            window: 1000,
            intermittent_threshold: 3,
            permanent_threshold: 5,
        };
        let h: Vec<_> = (0..5).map(|i| ev(i * 10, loc)).collect();
        assert_eq!(classify(&h[..1], &cfg), Ok(FaultClass::Transient));
        assert_eq!(classify(&h[..3], &cfg), Ok(FaultClass::Intermittent));
        assert_eq!(classify(&h, &cfg), Ok(FaultClass::Permanent));
        assert_eq!(classify(&[], &cfg), Err(ShmuError::EmptyHistory));
        let spread: Vec<_> = (0..3).map(|i| ev(i * 1000, loc)).collect();
        assert_eq!(classify(&spread, &cfg), Ok(FaultClass::Transient));
        let mut retest = ev(5, loc);
        retest.retest_fail = true;
        assert_eq!(classify(&[retest], &cfg), Ok(FaultClass::Permanent));
        assert!(ClassifierConfig { permanent_threshold: 2, ..cfg }.validate().is_err());
    }

    #[test]
    fn predictor_ranks_by_rate() {
        let cfg = ClassifierConfig::default();
        let mut hist = BTreeMap::new();
        assert!(predict_mpfs(&hist, &cfg, 3).is_empty());
        let a = FaultLocation::Link(3);
        let b = FaultLocation::Pe(1);
        hist.insert(a, (0..3).map(|i| ev(i, a)).collect());
        hist.insert(b, (0..5).map(|i| ev(i, b)).collect());
        assert_eq!(predict_mpfs(&hist, &cfg, 1), vec![b]);
        assert_eq!(predict_mpfs(&hist, &cfg, 5), vec![b, a]);
    }

    #[test]
    fn checker_units_expand_to_health_elements() {
        let ag = build_mesh(2, 2, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let arb = FaultLocation::CheckerUnit { tile: 0, unit: CheckerUnit::Arbiter };
        assert_eq!(arb.faults(&ag, &shm).unwrap().len(), 8);
        let dp = FaultLocation::CheckerUnit { tile: 0, unit: CheckerUnit::DatapathParity };
        assert_eq!(dp.faults(&ag, &shm).unwrap().len(), 2);
        assert!(FaultLocation::Link(99).faults(&ag, &shm).is_err());
    }

    #[test]
    fn tag_tracks_content() {
        let ag = build_mesh(3, 3, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let snap = shm.snapshot();
        let mut other = shm.clone();
        assert_eq!(fault_tag(&shm), fault_tag(&other));
        other.apply_fault(Fault::Turn { tile: 4, slot: 2 }).unwrap();
        assert_ne!(fault_tag(&shm), fault_tag(&other));
        other.restore(&snap).unwrap();
        assert_eq!(fault_tag(&shm), fault_tag(&other));
    }
}
