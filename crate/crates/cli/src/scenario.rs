//! JSON scenario schema and its conversion into a simulator scenario.

use std::fmt;

use serde::Deserialize;

use ftnoc::graphs::{build_mesh, cluster_tasks, ClusterHeuristic, EdgeSpec, TaskGraph, TaskSpec};
use ftnoc::health::SystemHealthMap;
use ftnoc::mapsched::{
    CommModel, CostFunction, Heuristic, IteratedLocalSearch, Mapping, SaParams,
    SimulatedAnnealing,
};
use ftnoc::reachability::{partition, Region, RegionAssignment, UNLIMITED_BUDGET};
use ftnoc::rng::substream_seed;
use ftnoc::routing::{RouteSelector, RoutingConfig, TurnModel};
use ftnoc::shmu::{
    CheckerUnit, ClassifierConfig, FaultLocation, MsuSetup, ShmuConfig, StuckType,
    VirtualCostModel,
};
use ftnoc::simkernel::{AgingUpdate, InFlightPolicy, Injection, Persistence, ScenarioScript};
use ftnoc::{Criticality, Direction};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub seed: u64,
    pub application: Application,
    pub platform: Platform,
    #[serde(default)]
    pub routing: RoutingSection,
    #[serde(default)]
    pub regions: RegionsSection,
    #[serde(default)]
    pub heuristic: HeuristicSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub cost_model: CostModelSection,
    #[serde(default)]
    pub injections: Vec<InjectionSpec>,
    #[serde(default)]
    pub aging: Vec<AgingSpec>,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Application {
    pub tasks: Vec<TaskIn>,
    #[serde(default)]
    pub edges: Vec<EdgeIn>,
    /// Map clusters instead of single tasks.
    pub clusters: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskIn {
    pub id: usize,
    pub wcet: u64,
    pub release: Option<u64>,
    pub criticality: Option<CriticalityIn>,
    pub slack: Option<u64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalityIn {
    Critical,
    NonCritical,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeIn {
    pub src: usize,
    pub dst: usize,
    pub weight: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Platform {
    pub width: usize,
    pub height: usize,
    pub depth: Option<usize>,
    /// Elements broken before the run starts.
    #[serde(default)]
    pub faults: Vec<Target>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    Pe(usize),
    Link(usize),
    Turn { tile: usize, slot: usize },
    Checker { tile: usize, unit: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingSection {
    #[serde(default = "default_turn_model")]
    pub turn_model: String,
    /// Allowed (input, output) turns, e.g. `["S", "E"]`; replaces `turn_model`.
    pub custom_turns: Option<Vec<(String, String)>>,
    #[serde(default)]
    pub selector: SelectorIn,
}

fn default_turn_model() -> String {
    "xy".into()
}

impl Default for RoutingSection {
    fn default() -> Self {
        RoutingSection {
            turn_model: default_turn_model(),
            custom_turns: None,
            selector: SelectorIn::Deterministic,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorIn {
    #[default]
    Deterministic,
    Seeded,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsSection {
    /// Rectangles per output port; absent means unlimited.
    pub budget: Option<usize>,
    pub partition: Option<PartitionIn>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionIn {
    pub regions: Vec<RegionIn>,
    pub region_of: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionIn {
    pub name: String,
    pub turn_model: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicSection {
    #[serde(default = "default_heuristic")]
    pub name: String,
    #[serde(default = "default_cost")]
    pub cost: String,
    pub ils_iterations: Option<usize>,
    pub sa: Option<SaIn>,
    pub initial_mapping: Option<Vec<usize>>,
}

fn default_heuristic() -> String {
    "greedy".into()
}

fn default_cost() -> String {
    "makespan".into()
}

impl Default for HeuristicSection {
    fn default() -> Self {
        HeuristicSection {
            name: default_heuristic(),
            cost: default_cost(),
            ils_iterations: None,
            sa: None,
            initial_mapping: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaIn {
    pub t0: Option<f64>,
    pub alpha: Option<f64>,
    pub moves_per_temperature: Option<usize>,
    pub t_min: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub window: Option<u64>,
    pub intermittent_threshold: Option<usize>,
    pub permanent_threshold: Option<usize>,
    pub mpfs_k: Option<usize>,
    pub mpm_capacity: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModelSection {
    pub link_cycles_per_unit: Option<u64>,
    pub router_delay: Option<u64>,
    pub cycles_per_evaluation: Option<u64>,
    pub cycles_per_task: Option<u64>,
    pub t_fetch: Option<u64>,
    pub t_par_ext: Option<u64>,
    pub t_par_map_base: Option<u64>,
    pub t_par_map_per_move: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    pub time: u64,
    pub target: Target,
    #[serde(default)]
    pub stuck: StuckIn,
    pub persistence: PersistenceIn,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub enum StuckIn {
    #[default]
    #[serde(alias = "sa0")]
    SA0,
    #[serde(alias = "sa1")]
    SA1,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PersistenceIn {
    Transient,
    Permanent,
    Burst { count: usize, spacing: u64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgingSpec {
    pub time: u64,
    pub tile: usize,
    pub percent: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "one")]
    pub detection_latency: u64,
    #[serde(default)]
    pub in_flight: InFlightIn,
}

fn one() -> u64 {
    1
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            detection_latency: 1,
            in_flight: InFlightIn::Drop,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InFlightIn {
    #[default]
    Drop,
    Retransmit,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub heuristic: Option<String>,
    pub cost: Option<String>,
    pub regions_budget: Option<usize>,
}

/// A scenario problem anchored to a line of the source file when possible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Source text plus lookups from schema paths to line numbers.
pub struct Source<'a> {
    text: &'a str,
}

impl<'a> Source<'a> {
    pub fn new(text: &'a str) -> Self {
        Source { text }
    }

    fn line_of(&self, offset: usize) -> usize {
        self.text[..offset].matches('\n').count() + 1
    }

    fn key_offset(&self, from: usize, key: &str, nth: usize) -> Option<usize> {
        let pat = format!("\"{key}\"");
        self.text[from..]
            .match_indices(&pat)
            .nth(nth)
            .map(|(i, _)| from + i)
    }

    /// Line of a top-level section.
    pub fn section(&self, name: &str) -> Option<usize> {
        self.key_offset(0, name, 0).map(|o| self.line_of(o))
    }

    /// Line of the `nth` occurrence of `key` inside `section`.
    pub fn within(&self, section: &str, key: &str, nth: usize) -> Option<usize> {
        let start = self.key_offset(0, section, 0)?;
        self.key_offset(start, key, nth).map(|o| self.line_of(o))
    }

    fn err(&self, line: Option<usize>, message: impl Into<String>) -> ScenarioError {
        ScenarioError {
            line,
            message: message.into(),
        }
    }
}

pub fn parse(text: &str) -> Result<ScenarioFile, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError {
        line: Some(e.line()),
        message: format!("column {}: {e}", e.column()),
    })
}

impl ScenarioFile {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(h) = &o.heuristic {
            self.heuristic.name = h.clone();
        }
        if let Some(c) = &o.cost {
            self.heuristic.cost = c.clone();
        }
        if let Some(r) = o.regions_budget {
            self.regions.budget = Some(r);
        }
    }

    /// Schema-level and semantic validation; yields a runnable scenario.
    pub fn build(&self, src: &Source<'_>) -> Result<ScenarioScript, ScenarioError> {
        let tasks: Vec<TaskSpec> = self
            .application
            .tasks
            .iter()
            .map(|t| TaskSpec {
                id: t.id,
                wcet: t.wcet,
                release: t.release,
                criticality: t.criticality.map(|c| match c {
                    CriticalityIn::Critical => Criticality::Critical,
                    CriticalityIn::NonCritical => Criticality::NonCritical,
                }),
                slack: t.slack,
            })
            .collect();
        let edges: Vec<EdgeSpec> = self
            .application
            .edges
            .iter()
            .map(|e| EdgeSpec::new(e.src, e.dst, e.weight))
            .collect();
        let tg = TaskGraph::build(&tasks, &edges)
            .map_err(|e| src.err(src.within("application", "edges", 0).or(src.section("application")), e.to_string()))?;

        let ag = build_mesh(self.platform.width, self.platform.height, self.platform.depth)
            .map_err(|e| src.err(src.section("platform"), e.to_string()))?;

        let mut initial_faults = Vec::new();
        let probe = SystemHealthMap::new(&ag);
        for (i, t) in self.platform.faults.iter().enumerate() {
            let line = src.within("platform", "faults", 0);
            let loc = target(t).map_err(|m| src.err(line, format!("faults[{i}]: {m}")))?;
            let fs = loc
                .faults(&ag, &probe)
                .map_err(|e| src.err(line, format!("faults[{i}]: {e}")))?;
            initial_faults.extend(fs);
        }

        let routing = self.routing_config(&ag, src)?;
        let heuristic = self.heuristic_choice(src)?;
        let cost: CostFunction = self.heuristic.cost.parse().map_err(|_| {
            src.err(
                src.within("heuristic", "cost", 0),
                format!("unknown cost function `{}` (makespan, traffic, util)", self.heuristic.cost),
            )
        })?;
        let budget = match self.regions.budget {
            Some(0) => {
                return Err(src.err(src.within("regions", "budget", 0), "region budget must be at least 1"))
            }
            Some(b) => b,
            None => UNLIMITED_BUDGET,
        };
        let cm = &self.cost_model;
        let dc = CommModel::default();
        let comm = CommModel {
            link_cycles_per_unit: cm.link_cycles_per_unit.unwrap_or(dc.link_cycles_per_unit),
            router_delay: cm.router_delay.unwrap_or(dc.router_delay),
        };
        let dv = VirtualCostModel::default();
        let virt = VirtualCostModel {
            cycles_per_evaluation: cm.cycles_per_evaluation.unwrap_or(dv.cycles_per_evaluation),
            cycles_per_task: cm.cycles_per_task.unwrap_or(dv.cycles_per_task),
            t_fetch: cm.t_fetch.unwrap_or(dv.t_fetch),
            t_par_ext: cm.t_par_ext.unwrap_or(dv.t_par_ext),
            t_par_map_base: cm.t_par_map_base.unwrap_or(dv.t_par_map_base),
            t_par_map_per_move: cm.t_par_map_per_move.unwrap_or(dv.t_par_map_per_move),
        };

        let mut msu = MsuSetup::new(routing);
        msu.heuristic = heuristic;
        msu.cost = cost;
        msu.comm = comm;
        msu.region_budget = budget;
        msu.seed = substream_seed(self.seed, "mapsched");
        msu.selector = match self.routing.selector {
            SelectorIn::Deterministic => RouteSelector::Deterministic,
            SelectorIn::Seeded => RouteSelector::SeededUniform {
                seed: substream_seed(self.seed, "routing"),
            },
        };
        if let Some(k) = self.application.clusters {
            let c = cluster_tasks(&tg, k, ClusterHeuristic::LocalSearch, substream_seed(self.seed, "clusters"))
                .map_err(|e| src.err(src.within("application", "clusters", 0), e.to_string()))?;
            msu.clusters = Some(c);
        }

        let dcl = ClassifierConfig::default();
        let cl = &self.classifier;
        let dsh = ShmuConfig::default();
        let shmu = ShmuConfig {
            classifier: ClassifierConfig {
                window: cl.window.unwrap_or(dcl.window),
                intermittent_threshold: cl.intermittent_threshold.unwrap_or(dcl.intermittent_threshold),
                permanent_threshold: cl.permanent_threshold.unwrap_or(dcl.permanent_threshold),
            },
            mpfs_k: cl.mpfs_k.unwrap_or(dsh.mpfs_k),
            mpm_capacity: cl.mpm_capacity.unwrap_or(dsh.mpm_capacity),
            cost: virt,
        };
        shmu.classifier
            .validate()
            .map_err(|e| src.err(src.section("classifier"), e.to_string()))?;

        let mut sc = ScenarioScript::new(tg, ag, msu);
        sc.initial_faults = initial_faults;
        sc.shmu = shmu;
        sc.initial_mapping = self.heuristic.initial_mapping.clone().map(Mapping::new);
        sc.detection_latency = self.simulation.detection_latency;
        sc.in_flight = match self.simulation.in_flight {
            InFlightIn::Drop => InFlightPolicy::Drop,
            InFlightIn::Retransmit => InFlightPolicy::Retransmit,
        };

        let mut prev = 0;
        for (i, inj) in self.injections.iter().enumerate() {
            let line = src.within("injections", "time", i);
            if inj.time < prev {
                return Err(src.err(
                    line,
                    format!("injections[{i}]: time {} is earlier than the previous injection ({prev})", inj.time),
                ));
            }
            prev = inj.time;
            let location = target(&inj.target).map_err(|m| src.err(line, format!("injections[{i}]: {m}")))?;
            let persistence = match inj.persistence {
                PersistenceIn::Transient => Persistence::Transient,
                PersistenceIn::Permanent => Persistence::Permanent,
                PersistenceIn::Burst { count, spacing } => Persistence::IntermittentBurst { count, spacing },
            };
            let injection = Injection {
                time: inj.time,
                location,
                stuck: match inj.stuck {
                    StuckIn::SA0 => StuckType::Sa0,
                    StuckIn::SA1 => StuckType::Sa1,
                },
                persistence,
            };
            let probe = sc.initial_shm().map_err(|e| src.err(src.section("platform"), e.to_string()))?;
            location
                .faults(&sc.ag, &probe)
                .map_err(|e| src.err(line, format!("injections[{i}]: {e}")))?;
            if let Persistence::IntermittentBurst { count: 0, .. } = persistence {
                return Err(src.err(line, format!("injections[{i}]: burst count must be positive")));
            }
            sc.injections.push(injection);
        }
        let mut prev = 0;
        for (i, a) in self.aging.iter().enumerate() {
            let line = src.within("aging", "time", i);
            if a.time < prev {
                return Err(src.err(line, format!("aging[{i}]: time {} is earlier than the previous update ({prev})", a.time)));
            }
            prev = a.time;
            sc.aging.push(AgingUpdate {
                time: a.time,
                tile: a.tile,
                percent: a.percent,
            });
        }
        sc.validate().map_err(|e| {
            let msg = e.to_string();
            let line = if msg.contains("aging") {
                src.section("aging")
            } else if msg.contains("mapping") || msg.contains("tile") {
                src.within("heuristic", "initial_mapping", 0).or(src.section("heuristic"))
            } else {
                src.section("injections")
            };
            src.err(line, msg)
        })?;
        Ok(sc)
    }

    fn routing_config(
        &self,
        ag: &ftnoc::ArchitectureGraph,
        src: &Source<'_>,
    ) -> Result<RoutingConfig, ScenarioError> {
        let model = match &self.routing.custom_turns {
            Some(turns) => {
                let line = src.within("routing", "custom_turns", 0);
                let mut parsed = Vec::with_capacity(turns.len());
                for (i, o) in turns {
                    let d = |s: &str| {
                        Direction::parse(s).ok_or_else(|| src.err(line, format!("unknown direction `{s}`")))
                    };
                    parsed.push((d(i)?, d(o)?));
                }
                TurnModel::custom("custom", &parsed).map_err(|e| src.err(line, e.to_string()))?
            }
            None => TurnModel::from_name(&self.routing.turn_model)
                .map_err(|e| src.err(src.within("routing", "turn_model", 0), e.to_string()))?,
        };
        let Some(p) = &self.regions.partition else {
            return Ok(RoutingConfig::uniform(model));
        };
        let line = src.within("regions", "partition", 0);
        let mut regions = Vec::with_capacity(p.regions.len());
        for r in &p.regions {
            regions.push(Region {
                name: r.name.clone(),
                turn_model: TurnModel::from_name(&r.turn_model).map_err(|e| src.err(line, e.to_string()))?,
            });
        }
        let assignment = RegionAssignment {
            regions,
            region_of: p.region_of.clone(),
        };
        partition(ag, &assignment).map_err(|e| src.err(line, e.to_string()))
    }

    fn heuristic_choice(&self, src: &Source<'_>) -> Result<Heuristic, ScenarioError> {
        let line = src.within("heuristic", "name", 0);
        let mut h = Heuristic::from_name(&self.heuristic.name).map_err(|e| src.err(line, e.to_string()))?;
        match &mut h {
            Heuristic::Ils(IteratedLocalSearch { iterations }) => {
                if let Some(n) = self.heuristic.ils_iterations {
                    *iterations = n;
                }
            }
            Heuristic::Sa(SimulatedAnnealing { params }) => {
                if let Some(sa) = &self.heuristic.sa {
                    let d = SaParams::default();
                    *params = SaParams {
                        t0: sa.t0.or(d.t0),
                        alpha: sa.alpha.unwrap_or(d.alpha),
                        moves_per_temperature: sa.moves_per_temperature.unwrap_or(d.moves_per_temperature),
                        t_min: sa.t_min.or(d.t_min),
                    };
                }
                params
                    .validate()
                    .map_err(|e| src.err(src.within("heuristic", "sa", 0).or(line), e.to_string()))?;
            }
            Heuristic::Greedy => {}
        }
        Ok(h)
    }
}

fn target(t: &Target) -> Result<FaultLocation, String> {
    Ok(match t {
        Target::Pe(p) => FaultLocation::Pe(*p),
        Target::Link(l) => FaultLocation::Link(*l),
        Target::Turn { tile, slot } => FaultLocation::Turn {
            tile: *tile,
            slot: *slot,
        },
        Target::Checker { tile, unit } => FaultLocation::CheckerUnit {
            tile: *tile,
            unit: CheckerUnit::parse(unit).ok_or_else(|| format!("unknown checker unit `{unit}`"))?,
        },
    })
}
