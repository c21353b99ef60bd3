use std::collections::BTreeSet;

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use proptest::prelude::*;

use ftnoc::graphs::{build_mesh, cluster_tasks, random_task_graph, ArchitectureGraph, ClusterHeuristic};
use ftnoc::health::{Fault, SystemHealthMap};
use ftnoc::mapsched::{
    map_greedy, map_ils, map_sa, CostFunction, InitialPolicy, Mapping, MappingProblem, MsuContext,
    SaParams,
};
use ftnoc::reachability::{build_region_tables, unreachable_set};
use ftnoc::routing::{build_routing_graph, PortKind, RoutingConfig, TurnModel};
use ftnoc::shmu::{
    apply_partial, extract_partial_mapping, fault_tag, FaultLocation, Mpm, MpmEntry, MsuSetup,
};
use ftnoc::simkernel::{run, Injection, Persistence, ScenarioScript};
use ftnoc::shmu::StuckType;
use ftnoc::Direction;

fn models() -> Vec<TurnModel> {
    vec![
        TurnModel::xy(),
        TurnModel::west_first(),
        TurnModel::north_last(),
        TurnModel::negative_first(),
    ]
}

/// Fault drawn from raw indices, wrapped into the mesh's ranges.
fn fault(ag: &ArchitectureGraph, shm: &SystemHealthMap, kind: u8, a: usize, b: usize) -> Fault {
    match kind % 3 {
        0 => Fault::Pe(a % ag.tile_count()),
        1 => Fault::Link(a % ag.links().len()),
        _ => Fault::Turn {
            tile: a % ag.tile_count(),
            slot: b % shm.slots_per_tile(),
        },
    }
}

fn faults_strategy(max: usize) -> impl Strategy<Value = Vec<(u8, usize, usize)>> {
    prop::collection::vec((0u8..3, 0usize..1000, 0usize..1000), 0..=max)
}

fn rg_edges(rg: &ftnoc::RoutingGraph) -> BTreeSet<(usize, usize)> {
    rg.edges().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_task_graphs_have_topological_order(n in 1usize..40, density in 0.0f64..1.0, seed: u64) {
        let tg = random_task_graph(n, density, (1, 10), (1, 10), seed);
        let mut g = DiGraph::<(), ()>::new();
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for e in tg.edges() {
            g.add_edge(nodes[e.src], nodes[e.dst], ());
        }
        prop_assert!(toposort(&g, None).is_ok());
        let pos: Vec<usize> = {
            let mut p = vec![0; n];
            for (i, &t) in tg.topological_order().iter().enumerate() {
                p[t] = i;
            }
            p
        };
        prop_assert!(tg.edges().iter().all(|e| pos[e.src] < pos[e.dst]));
    }

    #[test]
    fn clustering_conserves_weight(n in 2usize..20, seed: u64, k_frac in 0.0f64..1.0, local: bool) {
        let tg = random_task_graph(n, 0.4, (1, 10), (1, 10), seed);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let h = if local { ClusterHeuristic::LocalSearch } else { ClusterHeuristic::GreedyMerge };
        let ctg = cluster_tasks(&tg, k, h, seed).unwrap();
        prop_assert_eq!(ctg.len(), k);
        let intra: u64 = tg
            .edges()
            .iter()
            .filter(|e| ctg.cluster_of(e.src) == ctg.cluster_of(e.dst))
            .map(|e| e.weight)
            .sum();
        prop_assert_eq!(ctg.inter_cluster_weight() + intra, tg.total_weight());
    }

    #[test]
    fn mesh_degrees(w in 1usize..9, h in 1usize..9) {
        let ag = build_mesh(w, h, None).unwrap();
        for t in 0..ag.tile_count() {
            let c = ag.coord(t);
            let expect = [c.x > 0, c.x + 1 < w, c.y > 0, c.y + 1 < h].iter().filter(|&&b| b).count();
            let out = ag.links().iter().filter(|l| l.src == t).count();
            let inc = ag.links().iter().filter(|l| l.dst == t).count();
            prop_assert_eq!(out, expect);
            prop_assert_eq!(inc, expect);
        }
    }

    #[test]
    fn breaking_elements_only_removes_edges(
        w in 2usize..6,
        h in 2usize..6,
        m in 0usize..4,
        first in faults_strategy(3),
        more in faults_strategy(3),
    ) {
        let ag = build_mesh(w, h, None).unwrap();
        let model = &models()[m];
        let mut shm = SystemHealthMap::new(&ag);
        for &(k, a, b) in &first {
            let f = fault(&ag, &shm, k, a, b);
            shm.apply_fault(f).unwrap();
        }
        let before = rg_edges(&build_routing_graph(&ag, model, &shm).unwrap());
        let broken_before: BTreeSet<Fault> = shm.broken().into_iter().collect();
        for &(k, a, b) in &more {
            let f = fault(&ag, &shm, k, a, b);
            shm.apply_fault(f).unwrap();
        }
        let after = rg_edges(&build_routing_graph(&ag, model, &shm).unwrap());
        prop_assert!(after.is_subset(&before));
        let broken_after: BTreeSet<Fault> = shm.broken().into_iter().collect();
        prop_assert!(broken_before.is_subset(&broken_after));
    }

    #[test]
    fn region_cover_is_sound(faults in faults_strategy(4), budget in 1usize..5) {
        let ag = build_mesh(4, 4, None).unwrap();
        let mut shm = SystemHealthMap::new(&ag);
        for &(k, a, b) in &faults {
            let f = fault(&ag, &shm, k, a, b);
            shm.apply_fault(f).unwrap();
        }
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let tables = build_region_tables(&rg, budget).unwrap();
        let topo = ag.topology();
        for tile in 0..16 {
            for &dir in topo.network_ports() {
                let Some(rects) = tables.table(tile, dir) else { continue };
                prop_assert!(rects.len() <= budget);
                let covered: BTreeSet<usize> = rects.iter().flat_map(|r| r.tiles(&topo)).collect();
                let truth = unreachable_set(&rg, tile, dir).unwrap();
                prop_assert!(truth.is_subset(&covered), "tile {} {:?}", tile, dir);
            }
        }
    }

    #[test]
    fn schedules_respect_dependencies_and_health(
        n in 2usize..10,
        seed: u64,
        heuristic in 0usize..3,
        faults in faults_strategy(3),
    ) {
        let ag = build_mesh(3, 3, None).unwrap();
        let mut shm = SystemHealthMap::new(&ag);
        for &(k, a, b) in &faults {
            let f = fault(&ag, &shm, k, a, b);
            shm.apply_fault(f).unwrap();
        }
        let tg = random_task_graph(n, 0.4, (5, 20), (1, 6), seed);
        let rg = build_routing_graph(&ag, &TurnModel::west_first(), &shm).unwrap();
        let ctx = MsuContext::new(&tg, &ag, &rg, &shm).unwrap();
        let comm = ctx.comm();
        let problem = MappingProblem::new(ctx, CostFunction::ScheduleLength).unwrap();
        let start = problem.initial(InitialPolicy::FirstFit);
        let small_sa = SaParams { moves_per_temperature: 20, alpha: 0.8, ..SaParams::default() };
        let out = match heuristic {
            0 => map_greedy(&problem, &start),
            1 => map_ils(&problem, &start, 3, seed),
            _ => map_sa(&problem, &start, small_sa, seed),
        };
        let Ok(out) = out else {
            // No feasible placement under these faults.
            return Ok(());
        };
        let s = &out.schedule;
        for t in &s.tasks {
            prop_assert!(shm.is_pe_usable(t.tile));
        }
        for (i, e) in tg.edges().iter().enumerate() {
            let (a, b) = (s.tasks[e.src], s.tasks[e.dst]);
            let f = s.flows[i].as_ref().unwrap();
            prop_assert!(f.depart >= a.finish);
            prop_assert!(b.start >= f.arrive);
            match &f.route {
                None => prop_assert_eq!(a.tile, b.tile),
                Some(r) => {
                    prop_assert_eq!(f.arrive, f.depart + comm.latency(e.weight, r.routers()));
                    prop_assert!(r.nodes.windows(2).all(|w| rg.has_edge(w[0], w[1])));
                    prop_assert!(r.links.iter().all(|&l| shm.link_health(l).is_healthy()));
                    for &(tile, i, o) in &r.turns {
                        let slot = shm.turn_slot(i, o).unwrap();
                        prop_assert!(shm.turn_health(tile, slot).is_healthy());
                    }
                }
            }
        }
        if heuristic == 0 {
            prop_assert!(out.cost <= problem.evaluate(&start).cost);
        }
        prop_assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn partial_mapping_round_trip(
        old in prop::collection::vec(0usize..16, 1..20),
        seed: u64,
    ) {
        let new: Vec<usize> = old
            .iter()
            .enumerate()
            .map(|(i, &t)| if (seed >> (i % 64)) & 1 == 1 { (t + 3) % 16 } else { t })
            .collect();
        let (old, new) = (Mapping::new(old), Mapping::new(new));
        let moves = extract_partial_mapping(&old, &new).unwrap();
        prop_assert_eq!(apply_partial(&old, &moves), new);
    }

    #[test]
    fn simulation_conserves_link_time_and_never_wanders(
        n in 3usize..10,
        seed: u64,
        faults in prop::collection::vec((0u8..2, 0usize..1000, 1u64..200), 0..3),
    ) {
        let ag = build_mesh(3, 3, None).unwrap();
        let tg = random_task_graph(n, 0.4, (5, 30), (1, 6), seed);
        let mut msu = MsuSetup::new(RoutingConfig::uniform(TurnModel::xy()));
        msu.seed = seed;
        let mut sc = ScenarioScript::new(tg, ag, msu);
        let mut times: Vec<_> = faults.iter().map(|f| f.2).collect();
        times.sort_unstable();
        for (&(k, a, _), time) in faults.iter().zip(times) {
            let location = if k == 0 {
                FaultLocation::Pe(a % 9)
            } else {
                FaultLocation::Link(a % sc.ag.links().len())
            };
            sc.injections.push(Injection {
                time,
                location,
                stuck: StuckType::Sa0,
                persistence: Persistence::Permanent,
            });
        }
        let Ok(out) = run(&sc) else { return Ok(()) };
        let per_flow: u64 = out.flows.iter().map(|f| f.link_cycles()).sum();
        let per_link: u64 = out.metrics.link_busy.values().sum();
        prop_assert_eq!(per_flow, per_link);
        for f in &out.flows {
            if let (Some(d), Some(r)) = (f.deliver, &f.route) {
                let w = sc.tg.edges()[f.edge].weight;
                prop_assert_eq!(d - f.inject, sc.msu.comm.latency(w, r.routers()));
                prop_assert!(f.hold_end <= d);
                prop_assert_eq!(r.tiles.len(), r.links.len() + 1);
            }
        }
        if sc.injections.is_empty() {
            prop_assert_eq!(out.metrics.makespan, out.initial_schedule.makespan);
            prop_assert!(out.metrics.completed);
        }
    }

    #[test]
    fn transient_events_leave_tables_alone(n in 3usize..8, seed: u64, tile in 0usize..9, at in 0u64..100) {
        let ag = build_mesh(3, 3, None).unwrap();
        let tg = random_task_graph(n, 0.4, (5, 30), (1, 6), seed);
        let mut sc = ScenarioScript::new(tg, ag, MsuSetup::new(RoutingConfig::uniform(TurnModel::xy())));
        for (i, location) in [FaultLocation::Pe(tile), FaultLocation::Link(tile)].into_iter().enumerate() {
            sc.injections.push(Injection {
                time: at + i as u64,
                location,
                stuck: StuckType::Sa1,
                persistence: Persistence::Transient,
            });
        }
        let out = run(&sc).unwrap();
        prop_assert_eq!(out.metrics.region_rebuilds, 0);
        prop_assert_eq!(out.metrics.remaps, 0);
        prop_assert_eq!(out.metrics.makespan, out.initial_schedule.makespan);
    }
}

#[test]
fn east_output_lands_on_west_input() {
    let ag = build_mesh(4, 3, None).unwrap();
    let rg = build_routing_graph(&ag, &TurnModel::xy(), &SystemHealthMap::new(&ag)).unwrap();
    for t in 0..ag.tile_count() {
        let Some(east) = ag.topology().neighbor(t, Direction::E) else { continue };
        let out = rg.node(t, Direction::E, PortKind::Out).unwrap();
        let inp = rg.node(east, Direction::W, PortKind::In).unwrap();
        assert!(rg.has_edge(out, inp));
        assert_eq!(rg.successors(out), &[inp]);
    }
}

#[test]
fn tag_collision_is_not_a_hit() {
    let ag = build_mesh(2, 2, None).unwrap();
    let shm = SystemHealthMap::new(&ag);
    let mut mpm = Mpm::new(4);
    mpm.store(MpmEntry {
        tag: fault_tag(&shm),
        config: "something else".into(),
        fault: FaultLocation::Pe(0),
        assignment: vec![1],
        evaluations: 1,
    });
    assert!(mpm.lookup(&shm).is_none());
    mpm.store(MpmEntry {
        tag: fault_tag(&shm),
        config: shm.serialize(),
        fault: FaultLocation::Pe(0),
        assignment: vec![1],
        evaluations: 1,
    });
    assert_eq!(mpm.lookup(&shm).map(|e| e.assignment.clone()), Some(vec![1]));
    assert_eq!(mpm.len(), 1);
}
