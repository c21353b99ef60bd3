use std::collections::{BTreeMap, VecDeque};
use std::fmt::{self, Write as _};

use super::{
    classify, fault_tag, severity, ClassifierConfig, FaultClass, FaultEvent, FaultLocation,
    FaultPredictor, MappingUsage, RatePredictor, Severity, ShmuError,
};
use crate::graphs::{ArchitectureGraph, ClusteredTaskGraph, TaskGraph};
use crate::health::{Fault, SystemHealthMap};
use crate::mapsched::{
    CommModel, CostFunction, Heuristic, InitialPolicy, MapError, Mapping, MappingHeuristic,
    MappingProblem, MsuContext, Schedule, SearchOutcome,
};
use crate::reachability::{build_region_tables, UNLIMITED_BUDGET};
use crate::rng;
use crate::routing::{build_routing_graph_with, RouteSelector, RoutingConfig, RoutingGraph};
use crate::{TaskId, TileId};

/// How the mapper/scheduler is run on behalf of the monitor.
#[derive(Debug, Clone)]
pub struct MsuSetup {
    pub routing: RoutingConfig,
    pub heuristic: Heuristic,
    pub cost: CostFunction,
    pub comm: CommModel,
    pub selector: RouteSelector,
    /// Rectangle budget of the drop tables; placements whose flows the tables
    /// would drop are rejected.
    pub region_budget: usize,
    pub clusters: Option<ClusteredTaskGraph>,
    pub seed: u64,
}

impl MsuSetup {
    pub fn new(routing: RoutingConfig) -> MsuSetup {
        MsuSetup {
            routing,
            heuristic: Heuristic::Greedy,
            cost: CostFunction::ScheduleLength,
            comm: CommModel::default(),
            selector: RouteSelector::Deterministic,
            region_budget: UNLIMITED_BUDGET,
            clusters: None,
            seed: 0,
        }
    }

    pub fn routing_graph(
        &self,
        ag: &ArchitectureGraph,
        shm: &SystemHealthMap,
    ) -> Result<RoutingGraph, ShmuError> {
        Ok(build_routing_graph_with(ag, &self.routing, shm)?)
    }

    /// Search a placement of `tg` under `shm`, starting from `start` with
    /// tasks on unusable PEs moved to the nearest usable one.
    pub fn search(
        &self,
        tg: &TaskGraph,
        ag: &ArchitectureGraph,
        shm: &SystemHealthMap,
        start: Option<&Mapping>,
        seed: u64,
    ) -> Result<SearchOutcome, ShmuError> {
        let rg = self.routing_graph(ag, shm)?;
        let tables = build_region_tables(&rg, self.region_budget)?;
        let ctx = MsuContext::new(tg, ag, &rg, shm)?
            .with_comm(self.comm)
            .with_selector(self.selector)
            .with_tables(&tables);
        let mut problem = MappingProblem::new(ctx, self.cost)?;
        if let Some(ctg) = &self.clusters {
            problem = problem.with_clusters(ctg);
        }
        let units = match start {
            Some(m) if m.len() == tg.len() => problem.repair(&problem.contract(m)),
            _ => problem.initial(InitialPolicy::FirstFit),
        };
        Ok(self.heuristic.search(&problem, &units, seed)?)
    }

    /// Static ASAP schedule of `mapping` under `shm`.
    pub fn schedule(
        &self,
        tg: &TaskGraph,
        ag: &ArchitectureGraph,
        shm: &SystemHealthMap,
        mapping: &Mapping,
    ) -> Result<Schedule, ShmuError> {
        let rg = self.routing_graph(ag, shm)?;
        let tables = build_region_tables(&rg, self.region_budget)?;
        let ctx = MsuContext::new(tg, ag, &rg, shm)?
            .with_comm(self.comm)
            .with_selector(self.selector)
            .with_tables(&tables);
        mapping.validate(tg, shm)?;
        Ok(ctx.schedule(mapping)?)
    }

    fn seed_for(&self, tag: u64) -> u64 {
        rng::substream_seed(self.seed, &format!("remap/{tag:016x}"))
    }
}

/// The application and platform the monitor works for.
#[derive(Debug, Clone, Copy)]
pub struct ShmuEnv<'a> {
    pub tg: &'a TaskGraph,
    pub ag: &'a ArchitectureGraph,
    pub msu: &'a MsuSetup,
}

/// Cycle costs used to account reconfiguration latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualCostModel {
    pub cycles_per_evaluation: u64,
    pub cycles_per_task: u64,
    pub t_fetch: u64,
    pub t_par_ext: u64,
    pub t_par_map_base: u64,
    pub t_par_map_per_move: u64,
}

impl Default for VirtualCostModel {
    fn default() -> Self {
        VirtualCostModel {
            cycles_per_evaluation: 100,
            cycles_per_task: 1,
            t_fetch: 4,
            t_par_ext: 2,
            t_par_map_base: 4,
            t_par_map_per_move: 1,
        }
    }
}

impl VirtualCostModel {
    fn t_par_map(&self, moves: usize) -> u64 {
        self.t_par_map_base + self.t_par_map_per_move * moves as u64
    }
}

/// Reconfiguration latency of one deploy, in cycles. For a hit `t_map_alg`
/// is the offline cost paid when the entry was stored; it is not part of
/// `t_rl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyReport {
    pub hit: bool,
    pub t_map_alg: u64,
    pub t_par_ext: u64,
    pub t_par_map: u64,
    pub t_fetch: u64,
    pub t_schd: u64,
    pub t_rl: u64,
}

impl LatencyReport {
    pub fn miss(t_map_alg: u64, t_par_ext: u64, t_par_map: u64) -> LatencyReport {
        LatencyReport {
            hit: false,
            t_map_alg,
            t_par_ext,
            t_par_map,
            t_fetch: 0,
            t_schd: 0,
            t_rl: t_map_alg + t_par_ext + t_par_map,
        }
    }

    pub fn hit(t_map_alg: u64, t_fetch: u64, t_schd: u64, t_par_ext: u64, t_par_map: u64) -> LatencyReport {
        LatencyReport {
            hit: true,
            t_map_alg,
            t_par_ext,
            t_par_map,
            t_fetch,
            t_schd,
            t_rl: t_fetch + t_schd + t_par_ext + t_par_map,
        }
    }

    /// Whether `t_rl` is the sum prescribed for a hit or a miss.
    pub fn identity_holds(&self) -> bool {
        let expect = if self.hit {
            self.t_fetch + self.t_schd + self.t_par_ext + self.t_par_map
        } else {
            self.t_map_alg + self.t_par_ext + self.t_par_map
        };
        self.t_rl == expect
    }

    /// Cycles a hit saves over running the heuristic online.
    pub fn saving(&self) -> i64 {
        self.t_map_alg as i64 - (self.t_fetch + self.t_schd) as i64
    }
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} t_map_alg={} t_fetch={} t_schd={} t_par_ext={} t_par_map={} t_rl={}",
            if self.hit { "hit" } else { "miss" },
            self.t_map_alg,
            self.t_fetch,
            self.t_schd,
            self.t_par_ext,
            self.t_par_map,
            self.t_rl
        )
    }
}

/// A precomputed placement for one hypothetical health-map state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MpmEntry {
    pub tag: u64,
    /// Canonical text of the health map the placement was computed for.
    pub config: String,
    pub fault: FaultLocation,
    pub assignment: Vec<TileId>,
    /// Heuristic candidate evaluations spent computing the entry.
    pub evaluations: u64,
}

/// Bounded mapping memory; the least recently stored entry is evicted first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Mpm {
    capacity: usize,
    entries: VecDeque<MpmEntry>,
}

impl Mpm {
    pub fn new(capacity: usize) -> Mpm {
        Mpm {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MpmEntry> {
        self.entries.iter()
    }

    /// Insert, replacing any entry with the same tag.
    pub fn store(&mut self, entry: MpmEntry) {
        if self.capacity == 0 {
            return;
        }
        self.entries.retain(|e| e.tag != entry.tag);
        self.entries.push_back(entry);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    /// Entry for exactly this health map: the tag selects, the stored
    /// configuration confirms.
    pub fn lookup(&self, shm: &SystemHealthMap) -> Option<&MpmEntry> {
        let tag = fault_tag(shm);
        let entry = self.entries.iter().find(|e| e.tag == tag)?;
        (entry.config == shm.serialize()).then_some(entry)
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let list: Vec<String> = e.assignment.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(s, "{:016x} {} [{}]", e.tag, e.fault, list.join(","));
        }
        s
    }
}

/// The deployed placement, shared between monitor and mapper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurrentMappingMemory {
    pub mapping: Mapping,
    pub schedule: Schedule,
    pub tag: u64,
}

/// Result of a deploy.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub mapping: Mapping,
    /// Static schedule of `mapping` on the post-fault platform.
    pub schedule: Schedule,
    pub moves: Vec<(TaskId, TileId)>,
    pub report: LatencyReport,
}

/// Positions where `new` differs from `old`, as `(task, new tile)`.
pub fn extract_partial_mapping(
    old: &Mapping,
    new: &Mapping,
) -> Result<Vec<(TaskId, TileId)>, ShmuError> {
    if old.len() != new.len() {
        return Err(ShmuError::LengthMismatch {
            old: old.len(),
            new: new.len(),
        });
    }
    Ok(old
        .assignment()
        .iter()
        .zip(new.assignment())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(t, (_, &b))| (t, b))
        .collect())
}

pub fn apply_partial(old: &Mapping, moves: &[(TaskId, TileId)]) -> Mapping {
    let mut next = old.assignment().to_vec();
    for &(task, tile) in moves {
        next[task] = tile;
    }
    Mapping::new(next)
}

/// Pre-map a hypothetical permanent fault: apply it to `base`, run the
/// heuristic from `current`, store the result and put `base` back exactly as
/// it was (also on failure).
pub fn map_and_store(
    base: &mut SystemHealthMap,
    hypothetical: &FaultLocation,
    env: &ShmuEnv<'_>,
    current: &Mapping,
    mpm: &mut Mpm,
) -> Result<MpmEntry, ShmuError> {
    let faults = hypothetical.faults(env.ag, base)?;
    let snapshot = base.snapshot();
    let result = (|| -> Result<MpmEntry, ShmuError> {
        for &f in &faults {
            base.apply_fault(f)?;
        }
        let tag = fault_tag(base);
        let outcome = env
            .msu
            .search(env.tg, env.ag, base, Some(current), env.msu.seed_for(tag))?;
        Ok(MpmEntry {
            tag,
            config: base.serialize(),
            fault: *hypothetical,
            assignment: outcome.mapping.into_vec(),
            evaluations: outcome.evaluations,
        })
    })();
    base.restore(&snapshot)?;
    let entry = result?;
    mpm.store(entry.clone());
    Ok(entry)
}

/// Deploy a placement for the health map `shm`: fetched from the memory on
/// a hit, computed by the heuristic on a miss.
pub fn map_and_deploy(
    shm: &SystemHealthMap,
    env: &ShmuEnv<'_>,
    mpm: &Mpm,
    cmm: &mut CurrentMappingMemory,
    cost: &VirtualCostModel,
) -> Result<Deployment, ShmuError> {
    if shm.usable_pes().is_empty() {
        return Err(MapError::NoHealthyPe.into());
    }
    let tag = fault_tag(shm);
    let (mapping, schedule, report_of): (Mapping, Schedule, Box<dyn Fn(usize) -> LatencyReport>) =
        match mpm.lookup(shm) {
            Some(entry) => {
                let mapping = Mapping::new(entry.assignment.clone());
                let schedule = env.msu.schedule(env.tg, env.ag, shm, &mapping)?;
                let t_map_alg = entry.evaluations * cost.cycles_per_evaluation;
                let t_schd = env.tg.len() as u64 * cost.cycles_per_task;
                let c = *cost;
                (
                    mapping,
                    schedule,
                    Box::new(move |moves| {
                        LatencyReport::hit(t_map_alg, c.t_fetch, t_schd, c.t_par_ext, c.t_par_map(moves))
                    }),
                )
            }
            None => {
                let outcome = env.msu.search(
                    env.tg,
                    env.ag,
                    shm,
                    Some(&cmm.mapping),
                    env.msu.seed_for(tag),
                )?;
                let t_map_alg = outcome.evaluations * cost.cycles_per_evaluation;
                let c = *cost;
                (
                    outcome.mapping,
                    outcome.schedule,
                    Box::new(move |moves| LatencyReport::miss(t_map_alg, c.t_par_ext, c.t_par_map(moves))),
                )
            }
        };
    let moves = extract_partial_mapping(&cmm.mapping, &mapping)?;
    let report = report_of(moves.len());
    *cmm = CurrentMappingMemory {
        mapping: mapping.clone(),
        schedule: schedule.clone(),
        tag,
    };
    Ok(Deployment {
        mapping,
        schedule,
        moves,
        report,
    })
}

/// Tunables of the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShmuConfig {
    pub classifier: ClassifierConfig,
    /// Size of the most-probable-fault set pre-mapped on intermittent faults.
    pub mpfs_k: usize,
    pub mpm_capacity: usize,
    pub cost: VirtualCostModel,
}

impl Default for ShmuConfig {
    fn default() -> Self {
        ShmuConfig {
            classifier: ClassifierConfig::default(),
            mpfs_k: 2,
            mpm_capacity: 8,
            cost: VirtualCostModel::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ShmuAction {
    Ignored,
    /// Health map updated, nothing in use was hit.
    Recorded,
    /// Already known; nothing changed.
    Known,
    Stored { entries: usize },
    Deployed(Box<Deployment>),
    RemapFailed(String),
}

impl ShmuAction {
    fn label(&self) -> String {
        match self {
            ShmuAction::Ignored => "ignore".into(),
            ShmuAction::Recorded => "record".into(),
            ShmuAction::Known => "known".into(),
            ShmuAction::Stored { entries } => format!("store({entries})"),
            ShmuAction::Deployed(d) => format!(
                "deploy({} moves={})",
                if d.report.hit { "hit" } else { "miss" },
                d.moves.len()
            ),
            ShmuAction::RemapFailed(e) => format!("remap-failed({e})"),
        }
    }
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShmuDecision {
    pub time: u64,
    pub event: String,
    pub class: Option<FaultClass>,
    pub severity: Severity,
    pub action: String,
    pub t_rl: Option<u64>,
}

impl fmt::Display for ShmuDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.time, self.event)?;
        if let Some(c) = self.class {
            write!(f, " class={c}")?;
        }
        write!(f, " severity={} action={}", self.severity, self.action)?;
        match self.t_rl {
            Some(t) => write!(f, " t_rl={t}"),
            None => Ok(()),
        }
    }
}

/// Outcome of handling one report.
#[derive(Debug, Clone)]
pub struct ShmuResponse {
    pub action: ShmuAction,
    /// The health map changed (routing and region tables must be rebuilt).
    pub shm_changed: bool,
}

/// The monitor: sole writer of its health map.
pub struct Shmu {
    config: ShmuConfig,
    predictor: Box<dyn FaultPredictor + Send + Sync>,
    shm: SystemHealthMap,
    histories: BTreeMap<FaultLocation, Vec<FaultEvent>>,
    mpm: Mpm,
    cmm: Option<CurrentMappingMemory>,
    decisions: Vec<ShmuDecision>,
    reports: Vec<LatencyReport>,
    warnings: Vec<String>,
}

impl fmt::Debug for Shmu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Shmu")
            .field("config", &self.config)
            .field("mpm", &self.mpm.len())
            .field("decisions", &self.decisions.len())
            .finish_non_exhaustive()
    }
}

impl Shmu {
    pub fn new(config: ShmuConfig, shm: SystemHealthMap) -> Result<Shmu, ShmuError> {
        config.classifier.validate()?;
        Ok(Shmu {
            config,
            predictor: Box::new(RatePredictor),
            shm,
            histories: BTreeMap::new(),
            mpm: Mpm::new(config.mpm_capacity),
            cmm: None,
            decisions: Vec::new(),
            reports: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn with_predictor(mut self, predictor: Box<dyn FaultPredictor + Send + Sync>) -> Self {
        self.predictor = predictor;
        self
    }

    pub fn config(&self) -> &ShmuConfig {
        &self.config
    }

    pub fn shm(&self) -> &SystemHealthMap {
        &self.shm
    }

    pub fn mpm(&self) -> &Mpm {
        &self.mpm
    }

    pub fn current(&self) -> Option<&CurrentMappingMemory> {
        self.cmm.as_ref()
    }

    pub fn decisions(&self) -> &[ShmuDecision] {
        &self.decisions
    }

    pub fn reports(&self) -> &[LatencyReport] {
        &self.reports
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn histories(&self) -> &BTreeMap<FaultLocation, Vec<FaultEvent>> {
        &self.histories
    }

    /// Record the initial deployment.
    pub fn deploy_initial(&mut self, mapping: Mapping, schedule: Schedule) {
        self.cmm = Some(CurrentMappingMemory {
            mapping,
            schedule,
            tag: fault_tag(&self.shm),
        });
    }

    /// Run the pre-mapping pass for the current most probable faults.
    /// Returns the number of entries stored.
    pub fn prepare_mpfs(&mut self, env: &ShmuEnv<'_>) -> usize {
        let Some(current) = self.cmm.as_ref().map(|c| c.mapping.clone()) else {
            return 0;
        };
        let mpfs = self
            .predictor
            .predict(&self.histories, &self.config.classifier, self.config.mpfs_k);
        let mut stored = 0;
        for loc in mpfs {
            let Ok(faults) = loc.faults(env.ag, &self.shm) else {
                continue;
            };
            if faults.iter().all(|&f| self.shm.is_broken(f)) {
                continue;
            }
            let mut hypo = self.shm.clone();
            for &f in &faults {
                let _ = hypo.apply_fault(f);
            }
            if self.mpm.lookup(&hypo).is_some() {
                continue;
            }
            match map_and_store(&mut self.shm, &loc, env, &current, &mut self.mpm) {
                Ok(_) => stored += 1,
                Err(e) => self.warnings.push(format!("map-and-store {loc}: {e}")),
            }
        }
        stored
    }

    /// Classify and act on a checker report seen at `now`.
    pub fn handle_event(
        &mut self,
        event: FaultEvent,
        now: u64,
        env: &ShmuEnv<'_>,
        usage: &MappingUsage,
    ) -> Result<ShmuResponse, ShmuError> {
        let faults = event.location.faults(env.ag, &self.shm)?;
        let history = self.histories.entry(event.location).or_default();
        history.push(event);
        history.sort_by_key(|e| e.time);
        let class = classify(history, &self.config.classifier)?;
        let mut shm_changed = false;
        let (sev, action) = match class {
            FaultClass::Transient => (Severity::Ignore, ShmuAction::Ignored),
            FaultClass::Intermittent => {
                let entries = self.prepare_mpfs(env);
                (Severity::MapAndStore, ShmuAction::Stored { entries })
            }
            FaultClass::Permanent => {
                let fresh: Vec<Fault> = faults
                    .iter()
                    .copied()
                    .filter(|&f| !self.shm.is_broken(f))
                    .collect();
                if fresh.is_empty() {
                    (Severity::Ignore, ShmuAction::Known)
                } else {
                    for &f in &fresh {
                        self.shm.apply_fault(f)?;
                    }
                    shm_changed = true;
                    let sev = severity(class, &fresh, usage);
                    let action = match sev {
                        Severity::Remap => self.remap(env),
                        _ => ShmuAction::Recorded,
                    };
                    (sev, action)
                }
            }
        };
        self.log(now, format!("{} {}", event.location, event.stuck), Some(class), sev, &action);
        Ok(ShmuResponse {
            action,
            shm_changed,
        })
    }

    /// Apply an aging update. A PE that becomes unusable while in use
    /// triggers a remap.
    pub fn handle_aging(
        &mut self,
        now: u64,
        tile: TileId,
        percent: u32,
        env: &ShmuEnv<'_>,
        usage: &MappingUsage,
    ) -> Result<ShmuResponse, ShmuError> {
        let was_usable = self.shm.is_pe_usable(tile);
        self.shm.set_aging(tile, percent)?;
        let lost = was_usable && !self.shm.is_pe_usable(tile);
        let (sev, action) = if lost && usage.uses(Fault::Pe(tile)) {
            (Severity::Remap, self.remap(env))
        } else {
            (Severity::Ignore, ShmuAction::Recorded)
        };
        self.log(now, format!("aging({tile}) {percent}%"), None, sev, &action);
        Ok(ShmuResponse {
            action,
            shm_changed: true,
        })
    }

    fn remap(&mut self, env: &ShmuEnv<'_>) -> ShmuAction {
        let Some(cmm) = self.cmm.as_mut() else {
            return ShmuAction::RemapFailed("nothing deployed".into());
        };
        match map_and_deploy(&self.shm, env, &self.mpm, cmm, &self.config.cost) {
            Ok(d) => {
                self.reports.push(d.report);
                ShmuAction::Deployed(Box::new(d))
            }
            Err(e) => ShmuAction::RemapFailed(e.to_string()),
        }
    }

    fn log(&mut self, time: u64, event: String, class: Option<FaultClass>, severity: Severity, action: &ShmuAction) {
        let t_rl = match action {
            ShmuAction::Deployed(d) => Some(d.report.t_rl),
            _ => None,
        };
        self.decisions.push(ShmuDecision {
            time,
            event,
            class,
            severity,
            action: action.label(),
            t_rl,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_mesh, random_task_graph};
    use crate::routing::TurnModel;

    fn setup() -> (TaskGraph, ArchitectureGraph, MsuSetup) {
        let tg = random_task_graph(6, 0.4, (5, 15), (1, 6), 11);
        let ag = build_mesh(3, 3, None).unwrap();
        let msu = MsuSetup::new(RoutingConfig::uniform(TurnModel::xy()));
        (tg, ag, msu)
    }

    #[test]
    fn latency_identities() {
        let miss = LatencyReport::miss(100, 5, 10);
        assert_eq!(miss.t_rl, 115);
        let hit = LatencyReport::hit(100, 2, 8, 5, 10);
        assert_eq!(hit.t_rl, 25);
        assert_eq!(hit.saving(), 90);
        assert!(miss.identity_holds() && hit.identity_holds());
    }

    #[test]
    fn partial_mapping_round_trip() {
        let old = Mapping::new(vec![0, 1, 2, 3]);
        let new = Mapping::new(vec![0, 1, 5, 3]);
        let moves = extract_partial_mapping(&old, &new).unwrap();
        assert_eq!(moves, vec![(2, 5)]);
        assert_eq!(apply_partial(&old, &moves), new);
        assert!(extract_partial_mapping(&old, &old).unwrap().is_empty());
        assert!(extract_partial_mapping(&old, &Mapping::new(vec![1])).is_err());
    }

    #[test]
    fn mpm_eviction_and_overwrite() {
        let entry = |tag| MpmEntry {
            tag,
            config: String::new(),
            fault: FaultLocation::Pe(0),
            assignment: vec![],
            evaluations: 0,
        };
        let mut mpm = Mpm::new(2);
        mpm.store(entry(1));
        mpm.store(entry(2));
        mpm.store(entry(1));
        mpm.store(entry(3));
        let tags: Vec<u64> = mpm.entries().map(|e| e.tag).collect();
        assert_eq!(tags, vec![1, 3]);
    }

    #[test]
    fn store_restores_and_hits() {
        let (tg, ag, msu) = setup();
        let env = ShmuEnv { tg: &tg, ag: &ag, msu: &msu };
        let mut shm = SystemHealthMap::new(&ag);
        let before = shm.serialize();
        let start = msu.search(&tg, &ag, &shm, None, 0).unwrap().mapping;
        let mut mpm = Mpm::new(4);
        let a = FaultLocation::Pe(start.tile(0));
        map_and_store(&mut shm, &a, &env, &start, &mut mpm).unwrap();
        assert_eq!(shm.serialize(), before);
        let mut after_a = shm.clone();
        after_a.apply_fault(Fault::Pe(start.tile(0))).unwrap();
        assert!(mpm.lookup(&after_a).is_some());
        let after_b = shm.with_fault(Fault::Link(0)).unwrap();
        assert!(mpm.lookup(&after_b).is_none());

        let sched = msu.schedule(&tg, &ag, &shm, &start).unwrap();
        let mut cmm = CurrentMappingMemory { mapping: start.clone(), schedule: sched.clone(), tag: fault_tag(&shm) };
        let hit = map_and_deploy(&after_a, &env, &mpm, &mut cmm, &VirtualCostModel::default()).unwrap();
        assert!(hit.report.hit);
        assert_eq!(hit.schedule, msu.schedule(&tg, &ag, &after_a, &hit.mapping).unwrap());
        let mut cmm2 = CurrentMappingMemory { mapping: start.clone(), schedule: sched, tag: 0 };
        let miss = map_and_deploy(&after_a, &env, &Mpm::new(0), &mut cmm2, &VirtualCostModel::default()).unwrap();
        assert!(!miss.report.hit);
        assert_eq!(miss.mapping, hit.mapping);
        assert_eq!(miss.report.t_rl - hit.report.t_rl, hit.report.saving() as u64);
        assert!(hit.mapping.assignment().iter().all(|&t| t != start.tile(0)));
    }
}
