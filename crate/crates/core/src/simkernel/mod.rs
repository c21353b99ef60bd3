//! Deterministic discrete-event simulation of the fault-management loop.
//!
//! A [`ScenarioScript`] describes the application, the platform, the
//! monitor and mapper settings and a list of scripted faults. [`run`] maps
//! the application, executes the schedule event by event, injects the
//! faults, lets the monitor react and collects [`Metrics`] plus a line trace.

mod kernel;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::graphs::{ArchitectureGraph, TaskGraph};
use crate::health::{Fault, HealthError, SystemHealthMap};
use crate::mapsched::{MapError, Mapping, Schedule};
use crate::routing::Route;
use crate::shmu::{
    FaultEvent, FaultLocation, LatencyReport, MsuSetup, ShmuConfig, ShmuError, StuckType,
};
use crate::{LinkId, TileId};

pub use kernel::run;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error(transparent)]
    Shmu(#[from] ShmuError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Health(#[from] HealthError),
}

/// How a scripted fault behaves over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Persistence {
    Transient,
    IntermittentBurst { count: usize, spacing: u64 },
    /// The element breaks for good; checkers keep failing the retest.
    Permanent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Injection {
    pub time: u64,
    pub location: FaultLocation,
    pub stuck: StuckType,
    pub persistence: Persistence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AgingUpdate {
    pub time: u64,
    pub tile: TileId,
    pub percent: u32,
}

/// Treatment of packets in flight on an element that breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum InFlightPolicy {
    /// Count the packet as dropped; its data is re-sent after the remap.
    #[default]
    Drop,
    /// Count it as retransmitted instead.
    Retransmit,
}

#[derive(Debug, Clone)]
pub struct ScenarioScript {
    pub tg: TaskGraph,
    pub ag: ArchitectureGraph,
    /// Elements broken before cycle 0 (known to the monitor).
    pub initial_faults: Vec<Fault>,
    pub msu: MsuSetup,
    pub shmu: ShmuConfig,
    /// Deployed at cycle 0; computed by the configured heuristic when absent.
    pub initial_mapping: Option<Mapping>,
    pub injections: Vec<Injection>,
    pub aging: Vec<AgingUpdate>,
    pub detection_latency: u64,
    pub in_flight: InFlightPolicy,
}

impl ScenarioScript {
    pub fn new(tg: TaskGraph, ag: ArchitectureGraph, msu: MsuSetup) -> ScenarioScript {
        ScenarioScript {
            tg,
            ag,
            initial_faults: Vec::new(),
            msu,
            shmu: ShmuConfig::default(),
            initial_mapping: None,
            injections: Vec::new(),
            aging: Vec::new(),
            detection_latency: 1,
            in_flight: InFlightPolicy::Drop,
        }
    }

    /// Health map at cycle 0.
    pub fn initial_shm(&self) -> Result<SystemHealthMap, SimError> {
        let mut shm = SystemHealthMap::new(&self.ag);
        for &f in &self.initial_faults {
            shm.apply_fault(f)?;
        }
        Ok(shm)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Validation(m));
        let shm = self.initial_shm()?;
        self.shmu.classifier.validate()?;
        if let Some(w) = self
            .injections
            .windows(2)
            .find(|w| w[1].time < w[0].time)
        {
            return bad(format!(
                "injection times must be non-decreasing ({} after {})",
                w[1].time, w[0].time
            ));
        }
        if let Some(w) = self.aging.windows(2).find(|w| w[1].time < w[0].time) {
            return bad(format!(
                "aging times must be non-decreasing ({} after {})",
                w[1].time, w[0].time
            ));
        }
        for inj in &self.injections {
            inj.location.faults(&self.ag, &shm)?;
            if let Persistence::IntermittentBurst { count, .. } = inj.persistence {
                if count == 0 {
                    return bad(format!("empty intermittent burst at {}", inj.location));
                }
            }
        }
        for a in &self.aging {
            if a.tile >= shm.tile_count() {
                return bad(format!("aging update for unknown tile {}", a.tile));
            }
            if a.percent > 100 {
                return bad(format!("aging update of {}% on tile {}", a.percent, a.tile));
            }
        }
        if let Some(m) = &self.initial_mapping {
            m.validate(&self.tg, &shm)?;
        }
        if shm.usable_pes().is_empty() {
            return Err(MapError::NoHealthyPe.into());
        }
        Ok(())
    }

    /// The mapping and static schedule deployed at cycle 0.
    pub fn initial_deployment(&self) -> Result<(Mapping, Schedule), SimError> {
        let shm = self.initial_shm()?;
        match &self.initial_mapping {
            Some(m) => {
                let s = self.msu.schedule(&self.tg, &self.ag, &shm, m)?;
                Ok((m.clone(), s))
            }
            None => {
                let seed = crate::rng::substream_seed(self.msu.seed, "initial");
                let out = self.msu.search(&self.tg, &self.ag, &shm, None, seed)?;
                Ok((out.mapping, out.schedule))
            }
        }
    }
}

/// Checker reports produced by one scripted fault.
pub fn inject(
    injection: &Injection,
    ag: &ArchitectureGraph,
    shm: &SystemHealthMap,
    detection_latency: u64,
) -> Result<Vec<FaultEvent>, ShmuError> {
    injection.location.faults(ag, shm)?;
    let event = |time, retest_fail| FaultEvent {
        time,
        location: injection.location,
        stuck: injection.stuck,
        detection_latency,
        retest_fail,
    };
    Ok(match injection.persistence {
        Persistence::Transient => vec![event(injection.time, false)],
        Persistence::IntermittentBurst { count, spacing } => (0..count as u64)
            .map(|i| event(injection.time + i * spacing, false))
            .collect(),
        Persistence::Permanent => vec![event(injection.time, true)],
    })
}

/// One transmission of a task-graph edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketFlow {
    pub id: usize,
    /// Task-graph edge realized by the flow.
    pub edge: usize,
    pub src_tile: TileId,
    pub dst_tile: TileId,
    pub route: Option<Route>,
    pub inject: u64,
    pub deliver: Option<u64>,
    /// Dropped at injection, or lost in flight under the drop policy.
    pub dropped: bool,
    /// Lost in flight under the retransmit policy.
    pub retransmitted: bool,
    /// Superseded by a redeploy while in flight.
    pub cancelled: bool,
    /// Links of the route are held over `[inject, hold_end)`.
    pub hold_end: u64,
}

impl PacketFlow {
    pub fn link_cycles(&self) -> u64 {
        let links = self.route.as_ref().map_or(0, |r| r.links.len()) as u64;
        links * (self.hold_end - self.inject)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Metrics {
    /// Completion time of the last task (or of the last event when the
    /// application did not complete).
    pub makespan: u64,
    pub completed: bool,
    pub tasks_completed: usize,
    pub tasks_total: usize,
    /// Busy cycles of every link.
    pub link_busy: BTreeMap<LinkId, u64>,
    pub flows_injected: usize,
    pub flows_delivered: usize,
    pub dropped: usize,
    pub retransmitted: usize,
    pub remaps: usize,
    pub latency_reports: Vec<LatencyReport>,
    /// Cycles from fault report to redeployment, per deploy.
    pub recovery: Vec<u64>,
    pub mpm_hits: usize,
    pub mpm_misses: usize,
    pub region_rebuilds: usize,
}

impl Metrics {
    /// Key-value summary followed by a per-link table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "makespan {}", self.makespan);
        let _ = writeln!(s, "completed {}", self.completed);
        let _ = writeln!(s, "tasks_completed {}/{}", self.tasks_completed, self.tasks_total);
        let _ = writeln!(s, "flows_injected {}", self.flows_injected);
        let _ = writeln!(s, "flows_delivered {}", self.flows_delivered);
        let _ = writeln!(s, "dropped {}", self.dropped);
        let _ = writeln!(s, "retransmitted {}", self.retransmitted);
        let _ = writeln!(s, "remaps {}", self.remaps);
        let _ = writeln!(s, "mpm_hits {}", self.mpm_hits);
        let _ = writeln!(s, "mpm_misses {}", self.mpm_misses);
        let _ = writeln!(s, "region_rebuilds {}", self.region_rebuilds);
        for (i, r) in self.latency_reports.iter().enumerate() {
            let _ = writeln!(s, "latency {i} {r}");
        }
        for (i, r) in self.recovery.iter().enumerate() {
            let _ = writeln!(s, "recovery {i} {r}");
        }
        let _ = writeln!(s, "# link busy");
        let _ = writeln!(s, "link busy");
        for (l, b) in &self.link_busy {
            let _ = writeln!(s, "{l} {b}");
        }
        s
    }
}

/// One trace line: cycle, event kind, payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub cycle: u64,
    pub kind: &'static str,
    pub payload: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.cycle, self.kind, self.payload)
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: Metrics,
    pub trace: Vec<TraceLine>,
    pub decisions: Vec<String>,
    pub flows: Vec<PacketFlow>,
    pub initial_mapping: Mapping,
    pub initial_schedule: Schedule,
    pub final_mapping: Mapping,
    /// Mapping memory contents at the end of the run.
    pub mpm_dump: String,
    pub warnings: Vec<String>,
}

impl SimOutput {
    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn decisions_text(&self) -> String {
        self.decisions.iter().map(|l| format!("{l}\n")).collect()
    }
}
