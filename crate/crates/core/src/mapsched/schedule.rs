use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{CostFunction, MapError, Mapping};
use crate::graphs::{ArchitectureGraph, TaskGraph};
use crate::health::SystemHealthMap;
use crate::reachability::{should_drop, PortRegionTable};
use crate::routing::{Route, RouteSelector, RouteTable, RoutingGraph};
use crate::{LinkId, TaskId, TileId};

/// Communication latency model of a flow of `weight` units:
/// `weight * link_cycles_per_unit + routers * router_delay`, where `routers`
/// counts source and destination routers. Co-located tasks communicate for
/// free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommModel {
    pub link_cycles_per_unit: u64,
    pub router_delay: u64,
}

impl Default for CommModel {
    fn default() -> Self {
        CommModel {
            link_cycles_per_unit: 1,
            router_delay: 1,
        }
    }
}

impl CommModel {
    /// Cycles each link of the route is held by the flow.
    pub fn occupancy(&self, weight: u64) -> u64 {
        weight * self.link_cycles_per_unit
    }

    pub fn latency(&self, weight: u64, routers: usize) -> u64 {
        self.occupancy(weight) + routers as u64 * self.router_delay
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScheduledTask {
    pub tile: TileId,
    pub start: u64,
    pub finish: u64,
}

/// One scheduled packet flow, realizing the task-graph edge with the same id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    pub flow: usize,
    pub src_task: TaskId,
    pub dst_task: TaskId,
    pub src_tile: TileId,
    pub dst_tile: TileId,
    /// First cycle the producer's data is available.
    pub ready: u64,
    /// First cycle the flow holds its links (equals `ready` unless it waited
    /// for a contended link).
    pub depart: u64,
    pub arrive: u64,
    /// `None` for co-located tasks.
    pub route: Option<Route>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Occupancy {
    pub flow: usize,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    /// Indexed by task id.
    pub tasks: Vec<ScheduledTask>,
    /// Indexed by flow (edge) id; `None` when both ends were already done
    /// before a resumed pass.
    pub flows: Vec<Option<FlowRecord>>,
    /// Busy intervals of every used link, sorted by start.
    pub link_occupancy: BTreeMap<LinkId, Vec<Occupancy>>,
    /// Busy cycles of every usable PE (zero included).
    pub pe_busy: BTreeMap<TileId, u64>,
    /// Busy cycles of every healthy link (zero included).
    pub link_busy: BTreeMap<LinkId, u64>,
    pub makespan: u64,
    /// Number of task start times computed by the pass.
    pub task_starts: usize,
    /// Critical tasks finishing after their deadline.
    pub deadline_misses: Vec<TaskId>,
}

impl Schedule {
    pub fn mapping(&self) -> Mapping {
        Mapping::new(self.tasks.iter().map(|t| t.tile).collect())
    }

    pub fn routes(&self) -> impl Iterator<Item = &Route> {
        self.flows.iter().flatten().filter_map(|f| f.route.as_ref())
    }

    /// Text table: tasks, then link occupancy.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# schedule makespan={}", self.makespan);
        let _ = writeln!(s, "task tile start finish");
        for (id, t) in self.tasks.iter().enumerate() {
            let _ = writeln!(s, "{id} {} {} {}", t.tile, t.start, t.finish);
        }
        let _ = writeln!(s, "# link occupancy");
        let _ = writeln!(s, "link flow start end");
        for (link, occ) in &self.link_occupancy {
            for o in occ {
                let _ = writeln!(s, "{link} {} {} {}", o.flow, o.start, o.end);
            }
        }
        s
    }
}

/// Tasks already finished before a resumed scheduling pass. Their records
/// are kept as given; every other task starts no earlier than `not_before`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Resume {
    pub done: Vec<Option<ScheduledTask>>,
    pub not_before: u64,
}

impl Resume {
    fn done(&self, task: TaskId) -> Option<ScheduledTask> {
        self.done.get(task).copied().flatten()
    }
}

/// Read-only view of everything a schedule depends on.
#[derive(Debug, Clone)]
pub struct MsuContext<'a> {
    pub tg: &'a TaskGraph,
    pub ag: &'a ArchitectureGraph,
    pub rg: &'a RoutingGraph,
    pub shm: &'a SystemHealthMap,
    comm: CommModel,
    selector: RouteSelector,
    tables: Option<&'a PortRegionTable>,
    routes: RouteTable,
    /// `src * tiles + dst`, filled for the deterministic selector only.
    cache: Vec<Option<Route>>,
}

impl<'a> MsuContext<'a> {
    pub fn new(
        tg: &'a TaskGraph,
        ag: &'a ArchitectureGraph,
        rg: &'a RoutingGraph,
        shm: &'a SystemHealthMap,
    ) -> Result<Self, MapError> {
        if shm.tile_count() != rg.tile_count() || ag.tile_count() != rg.tile_count() {
            return Err(MapError::DimensionMismatch {
                shm: shm.tile_count(),
                rg: rg.tile_count(),
            });
        }
        let mut ctx = MsuContext {
            tg,
            ag,
            rg,
            shm,
            comm: CommModel::default(),
            selector: RouteSelector::Deterministic,
            tables: None,
            routes: RouteTable::new(rg),
            cache: Vec::new(),
        };
        ctx.fill_cache();
        Ok(ctx)
    }

    pub fn with_comm(mut self, comm: CommModel) -> Self {
        self.comm = comm;
        self
    }

    pub fn with_selector(mut self, selector: RouteSelector) -> Self {
        self.selector = selector;
        self.fill_cache();
        self
    }

    /// Treat pairs the region tables would drop as unroutable.
    pub fn with_tables(mut self, tables: &'a PortRegionTable) -> Self {
        self.tables = Some(tables);
        self
    }

    pub fn comm(&self) -> CommModel {
        self.comm
    }

    pub fn selector(&self) -> RouteSelector {
        self.selector
    }

    fn fill_cache(&mut self) {
        let n = self.rg.tile_count();
        self.cache = match self.selector {
            RouteSelector::Deterministic => (0..n * n)
                .map(|i| {
                    self.routes
                        .route(self.rg, i / n, i % n, RouteSelector::Deterministic, 0)
                })
                .collect(),
            RouteSelector::SeededUniform { .. } => Vec::new(),
        };
    }

    /// Route of flow `flow` between two tiles, honoring the region tables.
    pub fn route(&self, src: TileId, dst: TileId, flow: usize) -> Option<Cow<'_, Route>> {
        if self.tables.is_some_and(|t| should_drop(t, src, dst)) {
            return None;
        }
        if self.cache.is_empty() {
            self.routes
                .route(self.rg, src, dst, self.selector, flow as u64)
                .map(Cow::Owned)
        } else {
            self.cache[src * self.rg.tile_count() + dst]
                .as_ref()
                .map(Cow::Borrowed)
        }
    }

    pub fn schedule(&self, mapping: &Mapping) -> Result<Schedule, MapError> {
        self.schedule_resumed(mapping, &Resume::default())
    }

    /// One pass over the tasks in topological order. A task starts at the
    /// latest of its release, its inputs' arrival and the end of the previous
    /// task on its PE; flows are serialized on contended links in the same
    /// order (flows into a task by producer id).
    pub fn schedule_resumed(&self, mapping: &Mapping, resume: &Resume) -> Result<Schedule, MapError> {
        let tg = self.tg;
        let shm = self.shm;
        if mapping.len() != tg.len() {
            return Err(MapError::MappingSize {
                given: mapping.len(),
                tasks: tg.len(),
            });
        }
        let mut tasks: Vec<Option<ScheduledTask>> = vec![None; tg.len()];
        let mut flows: Vec<Option<FlowRecord>> = vec![None; tg.edges().len()];
        let mut occupancy: Vec<Vec<Occupancy>> = vec![Vec::new(); self.ag.links().len()];
        let mut pe_free = vec![resume.not_before; shm.tile_count()];
        let mut pe_busy: BTreeMap<TileId, u64> =
            shm.usable_pes().into_iter().map(|t| (t, 0)).collect();
        let mut link_busy: BTreeMap<LinkId, u64> = (0..shm.link_count())
            .filter(|&l| shm.link_health(l).is_healthy())
            .map(|l| (l, 0))
            .collect();
        let mut task_starts = 0;
        let mut deadline_misses = Vec::new();

        for &t in tg.topological_order() {
            if let Some(done) = resume.done(t) {
                tasks[t] = Some(done);
                continue;
            }
            let tile = mapping.tile(t);
            let task = tg.task(t);
            let exec = match (tile < shm.tile_count() && shm.is_pe_usable(tile))
                .then(|| shm.effective_wcet(tile, task.wcet))
                .flatten()
            {
                Some(e) => e,
                None => return Err(MapError::UnusableTile { task: t, tile }),
            };
            let mut ready = task.release.max(resume.not_before);
            for &e in tg.incoming(t) {
                let edge = tg.edges()[e];
                let producer = tasks[edge.src].expect("producer precedes consumer");
                let data = producer.finish.max(resume.not_before);
                let record = if producer.tile == tile {
                    FlowRecord {
                        flow: e,
                        src_task: edge.src,
                        dst_task: t,
                        src_tile: tile,
                        dst_tile: tile,
                        ready: data,
                        depart: data,
                        arrive: data,
                        route: None,
                    }
                } else {
                    let route = self.route(producer.tile, tile, e).ok_or(
                        MapError::UnroutableFlow {
                            src: producer.tile,
                            dst: tile,
                        },
                    )?;
                    let hold = self.comm.occupancy(edge.weight);
                    let depart = earliest_slot(&occupancy, &route.links, data, hold);
                    if hold > 0 {
                        for &l in &route.links {
                            occupancy[l].push(Occupancy {
                                flow: e,
                                start: depart,
                                end: depart + hold,
                            });
                            *link_busy.entry(l).or_insert(0) += hold;
                        }
                    }
                    FlowRecord {
                        flow: e,
                        src_task: edge.src,
                        dst_task: t,
                        src_tile: producer.tile,
                        dst_tile: tile,
                        ready: data,
                        depart,
                        arrive: depart + self.comm.latency(edge.weight, route.routers()),
                        route: Some(route.into_owned()),
                    }
                };
                ready = ready.max(record.arrive);
                flows[e] = Some(record);
            }
            let start = ready.max(pe_free[tile]);
            task_starts += 1;
            let finish = start + exec;
            pe_free[tile] = finish;
            *pe_busy.entry(tile).or_insert(0) += exec;
            if task.deadline().is_some_and(|d| finish > d) {
                deadline_misses.push(t);
            }
            tasks[t] = Some(ScheduledTask { tile, start, finish });
        }

        let tasks: Vec<ScheduledTask> = tasks.into_iter().map(|t| t.expect("every task visited")).collect();
        let makespan = tasks.iter().map(|t| t.finish).max().unwrap_or(0);
        deadline_misses.sort_unstable();
        let link_occupancy = occupancy
            .into_iter()
            .enumerate()
            .filter(|(_, o)| !o.is_empty())
            .map(|(l, mut o)| {
                o.sort_by_key(|x| (x.start, x.flow));
                (l, o)
            })
            .collect();
        Ok(Schedule {
            tasks,
            flows,
            link_occupancy,
            pe_busy,
            link_busy,
            makespan,
            task_starts,
            deadline_misses,
        })
    }
}

/// Earliest `t >= from` at which every link in `links` is free for `hold`
/// cycles.
fn earliest_slot(occupancy: &[Vec<Occupancy>], links: &[LinkId], from: u64, hold: u64) -> u64 {
    if hold == 0 {
        return from;
    }
    let mut t = from;
    loop {
        let mut moved = false;
        for &l in links {
            for o in &occupancy[l] {
                if o.start < t + hold && t < o.end {
                    t = o.end;
                    moved = true;
                }
            }
        }
        if !moved {
            return t;
        }
    }
}

/// Schedule `mapping` with the default communication model and the
/// deterministic route selector.
pub fn asap_schedule(
    tg: &TaskGraph,
    mapping: &Mapping,
    ag: &ArchitectureGraph,
    rg: &RoutingGraph,
    shm: &SystemHealthMap,
) -> Result<Schedule, MapError> {
    MsuContext::new(tg, ag, rg, shm)?.schedule(mapping)
}

pub fn evaluate_cost(schedule: &Schedule, cost: CostFunction) -> f64 {
    match cost {
        CostFunction::ScheduleLength => schedule.makespan as f64,
        CostFunction::TrafficBalance => std_dev(schedule.link_busy.values()),
        CostFunction::UtilizationBalance => std_dev(schedule.pe_busy.values()),
    }
}

fn std_dev<'a>(values: impl Iterator<Item = &'a u64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = values.map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_mesh, EdgeSpec, TaskSpec};
    use crate::health::Fault;
    use crate::routing::{build_routing_graph, TurnModel};

    fn chain() -> TaskGraph {
        TaskGraph::build(
            &[TaskSpec::new(0, 10), TaskSpec::new(1, 10)],
            &[EdgeSpec::new(0, 1, 2)],
        )
        .unwrap()
    }

    #[test]
    fn colocated_chain_has_no_comm() {
        let ag = build_mesh(2, 2, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let s = asap_schedule(&chain(), &Mapping::new(vec![0, 0]), &ag, &rg, &shm).unwrap();
        assert_eq!((s.tasks[0].start, s.tasks[1].start, s.makespan), (0, 10, 20));
    }

    #[test]
    fn one_hop_latency_counts_both_routers() {
        let ag = build_mesh(2, 2, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let s = asap_schedule(&chain(), &Mapping::new(vec![0, 1]), &ag, &rg, &shm).unwrap();
        assert_eq!(s.tasks[1].start, 14);
        assert_eq!(s.makespan, 24);
        let link = ag.link_between(0, 1).unwrap();
        assert_eq!(
            s.link_occupancy[&link],
            vec![Occupancy { flow: 0, start: 10, end: 12 }]
        );
        assert_eq!(s.task_starts, 2);
    }

    #[test]
    fn broken_link_makes_flow_unroutable() {
        let ag = build_mesh(2, 1, None).unwrap();
        let mut shm = SystemHealthMap::new(&ag);
        shm.apply_fault(Fault::Link(ag.link_between(0, 1).unwrap())).unwrap();
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        assert_eq!(
            asap_schedule(&chain(), &Mapping::new(vec![0, 1]), &ag, &rg, &shm),
            Err(MapError::UnroutableFlow { src: 0, dst: 1 })
        );
    }

    #[test]
    fn shared_pe_serializes_and_contended_link_waits() {
        let tg = TaskGraph::build(
            &[
                TaskSpec::new(0, 5),
                TaskSpec::new(1, 5),
                TaskSpec::new(2, 1),
            ],
            &[EdgeSpec::new(0, 2, 4), EdgeSpec::new(1, 2, 4)],
        )
        .unwrap();
        let ag = build_mesh(2, 1, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let s = asap_schedule(&tg, &Mapping::new(vec![0, 0, 1]), &ag, &rg, &shm).unwrap();
        assert_eq!((s.tasks[0].finish, s.tasks[1].start), (5, 5));
        // flow 0 holds the link 5..9, flow 1 is ready at 10
        assert_eq!(s.tasks[2].start, 10 + 4 + 2);
        assert_eq!(s.pe_busy[&0], 10);
    }

    #[test]
    fn cost_statistics() {
        let ag = build_mesh(2, 1, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let tg = TaskGraph::build(&[TaskSpec::new(0, 10), TaskSpec::new(1, 30)], &[]).unwrap();
        let s = asap_schedule(&tg, &Mapping::new(vec![0, 1]), &ag, &rg, &shm).unwrap();
        assert_eq!(evaluate_cost(&s, CostFunction::UtilizationBalance), 10.0);
        assert_eq!(evaluate_cost(&s, CostFunction::TrafficBalance), 0.0);
        assert_eq!(evaluate_cost(&s, CostFunction::ScheduleLength), 30.0);
    }

    #[test]
    fn resumed_pass_keeps_done_tasks() {
        let ag = build_mesh(2, 2, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let tg = chain();
        let ctx = MsuContext::new(&tg, &ag, &rg, &shm).unwrap();
        let resume = Resume {
            done: vec![Some(ScheduledTask { tile: 0, start: 0, finish: 10 }), None],
            not_before: 30,
        };
        let s = ctx.schedule_resumed(&Mapping::new(vec![0, 3]), &resume).unwrap();
        assert_eq!(s.task_starts, 1);
        assert_eq!(s.tasks[0].finish, 10);
        // two hops, three routers
        assert_eq!(s.tasks[1].start, 30 + 2 + 3);
    }
}
