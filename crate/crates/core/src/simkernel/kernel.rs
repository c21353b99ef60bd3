use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{
    inject, InFlightPolicy, Metrics, PacketFlow, Persistence, ScenarioScript, SimError, SimOutput,
    TraceLine,
};
use crate::health::{Fault, SystemHealthMap};
use crate::mapsched::{MapError, Mapping, MsuContext, Resume, Schedule, ScheduledTask};
use crate::reachability::{build_region_tables, should_drop, PortRegionTable};
use crate::routing::{Route, RoutingGraph};
use crate::shmu::{Deployment, FaultEvent, MappingUsage, Shmu, ShmuAction, ShmuEnv, ShmuResponse};
use crate::{TaskId, TileId};

/// Event kinds in tie-breaking order at equal time: faults and their
/// consequences first, then flows, then task completions and starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Fault,
    Report,
    Aging,
    Deploy,
    FlowDeliver,
    FlowInject,
    TaskComplete,
    TaskStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Payload {
    Fault(usize),
    Report(usize),
    Aging(usize),
    Deploy(u64),
    FlowDeliver { flow: usize, epoch: usize },
    FlowInject { edge: usize, epoch: usize },
    TaskComplete { task: TaskId, epoch: usize },
    TaskStart { task: TaskId, epoch: usize },
}

struct PendingDeploy {
    seq: u64,
    deployment: Box<Deployment>,
    reported: u64,
}

struct Kernel<'s> {
    sc: &'s ScenarioScript,
    env: ShmuEnv<'s>,
    /// Ground truth; the monitor only learns about it through reports.
    phys: SystemHealthMap,
    shmu: Shmu,
    rg: RoutingGraph,
    tables: PortRegionTable,
    queue: BinaryHeap<Reverse<(u64, Kind, u64, Payload)>>,
    seq: u64,
    now: u64,
    epoch: usize,
    plan: Schedule,
    mapping: Mapping,
    topo_pos: Vec<usize>,
    released: Vec<bool>,
    running: Vec<Option<ScheduledTask>>,
    done: Vec<Option<ScheduledTask>>,
    pe_running: Vec<Option<TaskId>>,
    delivered: Vec<bool>,
    flow_released: Vec<bool>,
    in_flight: Vec<Option<usize>>,
    link_last: Vec<Option<usize>>,
    flows: Vec<PacketFlow>,
    reports: Vec<FaultEvent>,
    deploy: Option<PendingDeploy>,
    deploy_seq: u64,
    metrics: Metrics,
    trace: Vec<TraceLine>,
    warnings: Vec<String>,
}

/// Run a scenario to completion (or until nothing is left to do).
pub fn run(sc: &ScenarioScript) -> Result<SimOutput, SimError> {
    sc.validate()?;
    let shm0 = sc.initial_shm()?;
    let (mapping, plan) = sc.initial_deployment()?;
    let mut shmu = Shmu::new(sc.shmu, shm0.clone())?;
    shmu.deploy_initial(mapping.clone(), plan.clone());
    let rg = sc.msu.routing_graph(&sc.ag, &shm0)?;
    let tables = build_region_tables(&rg, sc.msu.region_budget).map_err(crate::shmu::ShmuError::from)?;
    let m = sc.tg.len();
    let e = sc.tg.edges().len();
    let mut topo_pos = vec![0; m];
    for (i, &t) in sc.tg.topological_order().iter().enumerate() {
        topo_pos[t] = i;
    }
    let mut k = Kernel {
        sc,
        env: ShmuEnv {
            tg: &sc.tg,
            ag: &sc.ag,
            msu: &sc.msu,
        },
        phys: shm0.clone(),
        shmu,
        rg,
        tables,
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0,
        epoch: 0,
        plan: plan.clone(),
        mapping: mapping.clone(),
        topo_pos,
        released: vec![false; m],
        running: vec![None; m],
        done: vec![None; m],
        pe_running: vec![None; shm0.tile_count()],
        delivered: vec![false; e],
        flow_released: vec![false; e],
        in_flight: vec![None; e],
        link_last: vec![None; sc.ag.links().len()],
        flows: Vec::new(),
        reports: Vec::new(),
        deploy: None,
        deploy_seq: 0,
        metrics: Metrics {
            tasks_total: m,
            ..Metrics::default()
        },
        trace: Vec::new(),
        warnings: Vec::new(),
    };
    k.enqueue_plan();
    for (i, inj) in sc.injections.iter().enumerate() {
        if inj.persistence == Persistence::Permanent {
            k.push(inj.time, Kind::Fault, Payload::Fault(i));
        }
        for ev in inject(inj, &sc.ag, &shm0, sc.detection_latency)? {
            k.push(ev.reported_at(), Kind::Report, Payload::Report(k.reports.len()));
            k.reports.push(ev);
        }
    }
    for (i, a) in sc.aging.iter().enumerate() {
        k.push(a.time, Kind::Aging, Payload::Aging(i));
    }
    while let Some(Reverse((time, _, _, payload))) = k.queue.pop() {
        k.now = time;
        k.dispatch(payload)?;
    }
    Ok(k.finish(mapping, plan))
}

impl<'s> Kernel<'s> {
    fn push(&mut self, time: u64, kind: Kind, payload: Payload) {
        self.queue.push(Reverse((time, kind, self.seq, payload)));
        self.seq += 1;
    }

    fn log(&mut self, kind: &'static str, payload: String) {
        self.trace.push(TraceLine {
            cycle: self.now,
            kind,
            payload,
        });
    }

    fn pending(&self, task: TaskId) -> bool {
        self.done[task].is_none()
    }

    /// Release events for every unfinished task and the flows feeding it.
    fn enqueue_plan(&mut self) {
        let epoch = self.epoch;
        for &t in self.sc.tg.topological_order() {
            if !self.pending(t) {
                continue;
            }
            self.push(self.plan.tasks[t].start, Kind::TaskStart, Payload::TaskStart { task: t, epoch });
            for &e in self.sc.tg.incoming(t) {
                if let Some(rec) = &self.plan.flows[e] {
                    let at = rec.depart;
                    self.push(at, Kind::FlowInject, Payload::FlowInject { edge: e, epoch });
                }
            }
        }
    }

    fn dispatch(&mut self, payload: Payload) -> Result<(), SimError> {
        match payload {
            Payload::Fault(i) => self.on_fault(i)?,
            Payload::Report(i) => self.on_report(i)?,
            Payload::Aging(i) => self.on_aging(i)?,
            Payload::Deploy(seq) => self.on_deploy(seq),
            Payload::FlowDeliver { flow, epoch } => {
                if epoch == self.epoch {
                    self.on_deliver(flow);
                }
            }
            Payload::FlowInject { edge, epoch } => {
                if epoch == self.epoch {
                    self.flow_released[edge] = true;
                    self.try_inject(edge);
                }
            }
            Payload::TaskComplete { task, epoch } => {
                if epoch == self.epoch {
                    self.on_complete(task);
                }
            }
            Payload::TaskStart { task, epoch } => {
                if epoch == self.epoch {
                    self.released[task] = true;
                    self.try_start(task);
                }
            }
        }
        Ok(())
    }

    fn try_start(&mut self, t: TaskId) {
        if !self.pending(t) || self.running[t].is_some() || !self.released[t] {
            return;
        }
        let tile = self.plan.tasks[t].tile;
        if !self.phys.is_pe_usable(tile) || self.pe_running[tile].is_some() {
            return;
        }
        if self.sc.tg.incoming(t).iter().any(|&e| !self.delivered[e]) {
            return;
        }
        let exec = self
            .phys
            .effective_wcet(tile, self.sc.tg.task(t).wcet)
            .expect("usable PE");
        let rec = ScheduledTask {
            tile,
            start: self.now,
            finish: self.now + exec,
        };
        self.running[t] = Some(rec);
        self.pe_running[tile] = Some(t);
        self.log("task-start", format!("{t} tile={tile}"));
        let epoch = self.epoch;
        self.push(rec.finish, Kind::TaskComplete, Payload::TaskComplete { task: t, epoch });
    }

    fn on_complete(&mut self, t: TaskId) {
        let Some(rec) = self.running[t].take() else {
            return;
        };
        self.pe_running[rec.tile] = None;
        self.done[t] = Some(rec);
        self.metrics.tasks_completed += 1;
        self.log("task-done", format!("{t} tile={}", rec.tile));
        for &e in self.sc.tg.outgoing(t) {
            self.try_inject(e);
        }
        self.start_waiting_on(rec.tile);
    }

    /// Offer a freed PE to the released tasks planned on it, in plan order.
    fn start_waiting_on(&mut self, tile: TileId) {
        let mut waiting: Vec<TaskId> = (0..self.sc.tg.len())
            .filter(|&t| {
                self.released[t]
                    && self.pending(t)
                    && self.running[t].is_none()
                    && self.plan.tasks[t].tile == tile
            })
            .collect();
        waiting.sort_by_key(|&t| (self.plan.tasks[t].start, self.topo_pos[t]));
        for t in waiting {
            self.try_start(t);
        }
    }

    fn route_valid(&self, route: &Route) -> bool {
        route.nodes.windows(2).all(|w| self.rg.has_edge(w[0], w[1]))
    }

    fn physically_broken(&self, route: &Route) -> bool {
        route.links.iter().any(|&l| !self.phys.link_health(l).is_healthy())
            || route.turns.iter().any(|&(tile, i, o)| {
                self.phys
                    .turn_slot(i, o)
                    .is_some_and(|slot| !self.phys.turn_health(tile, slot).is_healthy())
            })
    }

    fn try_inject(&mut self, e: usize) {
        if !self.flow_released[e] || self.delivered[e] || self.in_flight[e].is_some() {
            return;
        }
        let edge = self.sc.tg.edges()[e];
        let Some(producer) = self.done[edge.src] else {
            return;
        };
        let Some(rec) = self.plan.flows[e].clone() else {
            return;
        };
        let src = producer.tile;
        let dst = self.plan.tasks[edge.dst].tile;
        let id = self.flows.len();
        let mut flow = PacketFlow {
            id,
            edge: e,
            src_tile: src,
            dst_tile: dst,
            route: rec.route.clone(),
            inject: self.now,
            deliver: None,
            dropped: false,
            retransmitted: false,
            cancelled: false,
            hold_end: self.now,
        };
        let epoch = self.epoch;
        let comm = self.sc.msu.comm;
        let Some(route) = rec.route else {
            self.flows.push(flow);
            self.in_flight[e] = Some(id);
            self.metrics.flows_injected += 1;
            self.log("flow-inject", format!("{id} edge={e} {src}->{dst} local"));
            self.push(self.now, Kind::FlowDeliver, Payload::FlowDeliver { flow: id, epoch });
            return;
        };
        if should_drop(&self.tables, src, dst) || !self.route_valid(&route) {
            flow.dropped = true;
            self.flows.push(flow);
            self.flow_released[e] = false;
            self.metrics.dropped += 1;
            self.log("flow-drop", format!("{id} edge={e} {src}->{dst}"));
            return;
        }
        let hold = comm.occupancy(edge.weight);
        let free = route
            .links
            .iter()
            .filter_map(|&l| self.link_last[l])
            .map(|f| self.flows[f].hold_end)
            .max()
            .unwrap_or(0);
        if hold > 0 && free > self.now {
            self.push(free, Kind::FlowInject, Payload::FlowInject { edge: e, epoch });
            return;
        }
        if self.physically_broken(&route) {
            self.flows.push(flow);
            self.lose(id);
            return;
        }
        flow.hold_end = self.now + hold;
        for &l in &route.links {
            self.link_last[l] = Some(id);
        }
        let path: Vec<String> = route.tiles.iter().map(|t| t.to_string()).collect();
        self.log("flow-inject", format!("{id} edge={e} {src}->{dst} route={}", path.join("-")));
        let arrive = self.now + comm.latency(edge.weight, route.routers());
        self.flows.push(flow);
        self.in_flight[e] = Some(id);
        self.metrics.flows_injected += 1;
        self.push(arrive, Kind::FlowDeliver, Payload::FlowDeliver { flow: id, epoch });
    }

    /// A packet hit a broken element: it stops holding links now.
    fn lose(&mut self, id: usize) {
        let now = self.now;
        let e = self.flows[id].edge;
        let f = &mut self.flows[id];
        f.hold_end = f.hold_end.min(now);
        let kind = match self.sc.in_flight {
            InFlightPolicy::Drop => {
                f.dropped = true;
                self.metrics.dropped += 1;
                "flow-lost"
            }
            InFlightPolicy::Retransmit => {
                f.retransmitted = true;
                self.metrics.retransmitted += 1;
                "flow-retransmit"
            }
        };
        self.in_flight[e] = None;
        self.flow_released[e] = false;
        self.log(kind, format!("{id} edge={e}"));
    }

    fn on_deliver(&mut self, id: usize) {
        let f = &self.flows[id];
        if f.dropped || f.retransmitted || f.cancelled || f.deliver.is_some() {
            return;
        }
        let e = f.edge;
        self.flows[id].deliver = Some(self.now);
        self.delivered[e] = true;
        self.in_flight[e] = None;
        self.metrics.flows_delivered += 1;
        self.log("flow-deliver", format!("{id} edge={e}"));
        let dst = self.sc.tg.edges()[e].dst;
        self.try_start(dst);
    }

    fn on_fault(&mut self, i: usize) -> Result<(), SimError> {
        let inj = self.sc.injections[i];
        let faults = inj.location.faults(&self.sc.ag, &self.phys)?;
        for &f in &faults {
            self.phys.apply_fault(f)?;
        }
        self.log("fault", format!("{} {} permanent", inj.location, inj.stuck));
        for &f in &faults {
            if let Fault::Pe(tile) = f {
                if let Some(t) = self.pe_running[tile].take() {
                    self.running[t] = None;
                    self.log("task-failed", format!("{t} tile={tile}"));
                }
            }
        }
        let hit: Vec<usize> = self
            .in_flight
            .iter()
            .flatten()
            .copied()
            .filter(|&id| {
                let f = &self.flows[id];
                f.deliver.is_none() && f.route.as_ref().is_some_and(|r| self.physically_broken(r))
            })
            .collect();
        for id in hit {
            self.lose(id);
        }
        Ok(())
    }

    fn usage(&self) -> MappingUsage {
        let pending: Vec<bool> = (0..self.sc.tg.len()).map(|t| self.pending(t)).collect();
        MappingUsage::from_schedule(&self.plan, &self.sc.tg, self.shmu.shm(), &pending)
    }

    fn on_report(&mut self, i: usize) -> Result<(), SimError> {
        let ev = self.reports[i];
        self.log(
            "report",
            format!("{} {} occurred={}", ev.location, ev.stuck, ev.time),
        );
        let usage = self.usage();
        let env = self.env;
        let resp = self.shmu.handle_event(ev, self.now, &env, &usage)?;
        if resp.shm_changed {
            self.rebuild_tables()?;
        }
        self.after_response(resp);
        Ok(())
    }

    fn on_aging(&mut self, i: usize) -> Result<(), SimError> {
        let a = self.sc.aging[i];
        self.phys.set_aging(a.tile, a.percent)?;
        self.log("aging", format!("{} {}%", a.tile, a.percent));
        let usage = self.usage();
        let env = self.env;
        let resp = self.shmu.handle_aging(self.now, a.tile, a.percent, &env, &usage)?;
        self.after_response(resp);
        Ok(())
    }

    fn rebuild_tables(&mut self) -> Result<(), SimError> {
        let shm = self.shmu.shm();
        self.rg = self.sc.msu.routing_graph(&self.sc.ag, shm)?;
        self.tables = build_region_tables(&self.rg, self.sc.msu.region_budget)
            .map_err(crate::shmu::ShmuError::from)?;
        self.metrics.region_rebuilds += 1;
        self.log("regions", format!("rebuilt max={}", self.tables.max_rectangles()));
        Ok(())
    }

    fn after_response(&mut self, resp: ShmuResponse) {
        match resp.action {
            ShmuAction::Deployed(d) => {
                self.metrics.latency_reports.push(d.report);
                if d.report.hit {
                    self.metrics.mpm_hits += 1;
                } else {
                    self.metrics.mpm_misses += 1;
                }
                self.deploy_seq += 1;
                let seq = self.deploy_seq;
                self.push(self.now + d.report.t_rl, Kind::Deploy, Payload::Deploy(seq));
                self.deploy = Some(PendingDeploy {
                    seq,
                    deployment: d,
                    reported: self.now,
                });
            }
            ShmuAction::RemapFailed(e) => {
                self.warnings.push(format!("{}: remap failed: {e}", self.now));
            }
            _ => {}
        }
    }

    /// Tasks already done that must run again: their PE is gone and a
    /// pending task still needs their output.
    fn rerun_set(&self, needs: &[bool]) -> Vec<bool> {
        let shm = self.shmu.shm();
        let mut rerun = vec![false; self.sc.tg.len()];
        loop {
            let mut changed = false;
            for edge in self.sc.tg.edges() {
                let consumer_open = self.pending(edge.dst) || rerun[edge.dst] || needs[edge.src];
                if let Some(d) = self.done[edge.src] {
                    if consumer_open && !rerun[edge.src] && (!shm.is_pe_usable(d.tile) || needs[edge.src]) {
                        rerun[edge.src] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                return rerun;
            }
        }
    }

    fn resumed_schedule(&self, mapping: &Mapping) -> Result<(Schedule, Vec<bool>), MapError> {
        let shm = self.shmu.shm();
        let ctx = MsuContext::new(&self.sc.tg, &self.sc.ag, &self.rg, shm)?
            .with_comm(self.sc.msu.comm)
            .with_selector(self.sc.msu.selector)
            .with_tables(&self.tables);
        let mut needs = vec![false; self.sc.tg.len()];
        loop {
            let rerun = self.rerun_set(&needs);
            let resume = Resume {
                done: (0..self.sc.tg.len())
                    .map(|t| if rerun[t] { None } else { self.done[t] })
                    .collect(),
                not_before: self.now,
            };
            match ctx.schedule_resumed(mapping, &resume) {
                Ok(s) => return Ok((s, rerun)),
                Err(MapError::UnroutableFlow { src, dst }) => {
                    // A finished producer stranded behind the fault runs again.
                    let culprit = self.sc.tg.edges().iter().find(|edge| {
                        resume.done[edge.src].is_some_and(|d| d.tile == src)
                            && resume.done[edge.dst].is_none()
                            && mapping.tile(edge.dst) == dst
                    });
                    match culprit {
                        Some(edge) => needs[edge.src] = true,
                        None => return Err(MapError::UnroutableFlow { src, dst }),
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn on_deploy(&mut self, seq: u64) {
        if self.deploy.as_ref().is_none_or(|d| d.seq != seq) {
            return;
        }
        let pending = self.deploy.take().expect("checked");
        let mapping = pending.deployment.mapping.clone();
        let (plan, rerun) = match self.resumed_schedule(&mapping) {
            Ok(x) => x,
            Err(e) => {
                self.warnings.push(format!("{}: deploy failed: {e}", self.now));
                self.log("deploy-failed", e.to_string());
                return;
            }
        };
        self.epoch += 1;
        for t in 0..self.sc.tg.len() {
            if let Some(r) = self.running[t].take() {
                self.pe_running[r.tile] = None;
                self.log("task-abort", format!("{t} tile={}", r.tile));
            }
        }
        for e in 0..self.in_flight.len() {
            if let Some(id) = self.in_flight[e].take() {
                let now = self.now;
                let f = &mut self.flows[id];
                f.cancelled = true;
                f.hold_end = f.hold_end.min(now);
                self.log("flow-cancel", format!("{id} edge={e}"));
            }
        }
        for (t, again) in rerun.iter().enumerate() {
            if *again {
                self.done[t] = None;
                self.metrics.tasks_completed -= 1;
            }
        }
        for t in 0..self.sc.tg.len() {
            if self.pending(t) {
                self.released[t] = false;
            }
        }
        for (e, edge) in self.sc.tg.edges().iter().enumerate() {
            if self.pending(edge.dst) {
                self.delivered[e] = false;
                self.flow_released[e] = false;
            }
        }
        self.log(
            "deploy",
            format!(
                "{} moves={} {}",
                mapping,
                pending.deployment.moves.len(),
                pending.deployment.report
            ),
        );
        self.plan = plan;
        self.mapping = mapping;
        self.metrics.remaps += 1;
        self.metrics.recovery.push(self.now - pending.reported);
        self.enqueue_plan();
    }

    fn finish(mut self, initial_mapping: Mapping, initial_schedule: Schedule) -> SimOutput {
        let m = &mut self.metrics;
        m.completed = self.done.iter().all(Option::is_some);
        m.makespan = if m.completed {
            self.done.iter().flatten().map(|d| d.finish).max().unwrap_or(0)
        } else {
            self.now
        };
        m.link_busy = (0..self.sc.ag.links().len()).map(|l| (l, 0)).collect();
        for f in &self.flows {
            if let Some(r) = &f.route {
                for &l in &r.links {
                    *m.link_busy.get_mut(&l).expect("known link") += f.hold_end - f.inject;
                }
            }
        }
        let mut warnings = self.warnings;
        warnings.extend(self.shmu.warnings().iter().cloned());
        SimOutput {
            metrics: self.metrics,
            trace: self.trace,
            decisions: self.shmu.decisions().iter().map(|d| d.to_string()).collect(),
            flows: self.flows,
            initial_mapping,
            initial_schedule,
            final_mapping: self.mapping,
            mpm_dump: self.shmu.mpm().dump(),
            warnings,
        }
    }
}
