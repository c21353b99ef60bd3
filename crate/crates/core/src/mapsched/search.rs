use rand::Rng;

use super::{evaluate_cost, CostFunction, MapError, Mapping, MsuContext, Resume, Schedule};
use crate::graphs::{ClusteredTaskGraph, TaskGraph};
use crate::health::SystemHealthMap;
use crate::rng::{self, SimRng};
use crate::TileId;

/// Starting point for the heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialPolicy {
    /// Task `i` goes to the `i mod n`-th usable PE in id order.
    #[default]
    FirstFit,
    Random { seed: u64 },
}

fn usable_or_err(shm: &SystemHealthMap) -> Result<Vec<TileId>, MapError> {
    let usable = shm.usable_pes();
    if usable.is_empty() {
        Err(MapError::NoHealthyPe)
    } else {
        Ok(usable)
    }
}

fn initial_units(units: usize, usable: &[TileId], policy: InitialPolicy) -> Vec<TileId> {
    match policy {
        InitialPolicy::FirstFit => (0..units).map(|u| usable[u % usable.len()]).collect(),
        InitialPolicy::Random { seed } => {
            let mut rng = rng::substream(seed, "mapsched.initial");
            (0..units)
                .map(|_| usable[rng.gen_range(0..usable.len())])
                .collect()
        }
    }
}

pub fn initial_mapping(
    tg: &TaskGraph,
    shm: &SystemHealthMap,
    policy: InitialPolicy,
) -> Result<Mapping, MapError> {
    let usable = usable_or_err(shm)?;
    Ok(Mapping::new(initial_units(tg.len(), &usable, policy)))
}

/// A scored placement of units.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub units: Vec<TileId>,
    /// `f64::INFINITY` when the placement cannot be scheduled or misses a
    /// critical deadline.
    pub cost: f64,
    pub schedule: Option<Schedule>,
}

/// The search space seen by a heuristic: placements of units (tasks, or
/// clusters whose tasks all share a tile) on usable PEs.
#[derive(Debug, Clone)]
pub struct MappingProblem<'a> {
    ctx: MsuContext<'a>,
    cost: CostFunction,
    unit_of: Vec<usize>,
    units: usize,
    usable: Vec<TileId>,
    resume: Resume,
    movable: Vec<usize>,
}

impl<'a> MappingProblem<'a> {
    pub fn new(ctx: MsuContext<'a>, cost: CostFunction) -> Result<Self, MapError> {
        let usable = usable_or_err(ctx.shm)?;
        let m = ctx.tg.len();
        Ok(MappingProblem {
            ctx,
            cost,
            unit_of: (0..m).collect(),
            units: m,
            usable,
            resume: Resume::default(),
            movable: (0..m).collect(),
        })
    }

    /// Map clusters as units; tasks inherit their cluster's tile.
    pub fn with_clusters(mut self, ctg: &ClusteredTaskGraph) -> Self {
        self.unit_of = ctg.assignment().to_vec();
        self.units = ctg.len();
        self.refresh_movable();
        self
    }

    /// Score candidates as a continuation of a partly executed schedule.
    /// Units made only of finished tasks are not moved.
    pub fn with_resume(mut self, resume: Resume) -> Self {
        self.resume = resume;
        self.refresh_movable();
        self
    }

    fn refresh_movable(&mut self) {
        let mut movable = vec![false; self.units];
        for (task, &u) in self.unit_of.iter().enumerate() {
            if self.resume.done.get(task).copied().flatten().is_none() {
                movable[u] = true;
            }
        }
        self.movable = (0..self.units).filter(|&u| movable[u]).collect();
    }

    pub fn context(&self) -> &MsuContext<'a> {
        &self.ctx
    }

    pub fn cost_function(&self) -> CostFunction {
        self.cost
    }

    pub fn unit_count(&self) -> usize {
        self.units
    }

    pub fn usable_pes(&self) -> &[TileId] {
        &self.usable
    }

    pub fn expand(&self, units: &[TileId]) -> Mapping {
        Mapping::new(self.unit_of.iter().map(|&u| units[u]).collect())
    }

    /// Unit placement of a task mapping; a unit takes the tile of its lowest
    /// task.
    pub fn contract(&self, mapping: &Mapping) -> Vec<TileId> {
        let mut units = vec![None; self.units];
        for (task, &u) in self.unit_of.iter().enumerate() {
            units[u].get_or_insert(mapping.tile(task));
        }
        units
            .into_iter()
            .map(|t| t.unwrap_or(self.usable[0]))
            .collect()
    }

    /// Move every unit sitting on an unusable PE to the nearest usable one
    /// (Manhattan distance, lowest id on ties).
    pub fn repair(&self, units: &[TileId]) -> Vec<TileId> {
        let topo = self.ctx.shm.topology();
        units
            .iter()
            .map(|&t| {
                if t < self.ctx.shm.tile_count() && self.ctx.shm.is_pe_usable(t) {
                    return t;
                }
                let here = topo.coord(t.min(topo.tile_count() - 1));
                *self
                    .usable
                    .iter()
                    .min_by_key(|&&p| (topo.coord(p).distance(&here), p))
                    .expect("usable PEs checked at construction")
            })
            .collect()
    }

    pub fn initial(&self, policy: InitialPolicy) -> Vec<TileId> {
        initial_units(self.units, &self.usable, policy)
    }

    pub fn evaluate(&self, units: &[TileId]) -> Candidate {
        let schedule = self
            .ctx
            .schedule_resumed(&self.expand(units), &self.resume)
            .ok();
        let cost = match &schedule {
            Some(s) if s.deadline_misses.is_empty() => evaluate_cost(s, self.cost),
            _ => f64::INFINITY,
        };
        Candidate {
            units: units.to_vec(),
            cost,
            schedule,
        }
    }
}

/// Result of a heuristic run.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub mapping: Mapping,
    pub schedule: Schedule,
    pub cost: f64,
    /// Candidate placements scheduled during the run.
    pub evaluations: u64,
    /// Best-so-far cost after each outer step.
    pub history: Vec<f64>,
}

/// A mapping search strategy. Runs are pure functions of the problem, start
/// placement and seed.
pub trait MappingHeuristic {
    fn name(&self) -> &'static str;

    fn search(
        &self,
        problem: &MappingProblem<'_>,
        start: &[TileId],
        seed: u64,
    ) -> Result<SearchOutcome, MapError>;
}

struct Counter<'p, 'a> {
    problem: &'p MappingProblem<'a>,
    evaluations: u64,
}

impl<'p, 'a> Counter<'p, 'a> {
    fn new(problem: &'p MappingProblem<'a>) -> Self {
        Counter {
            problem,
            evaluations: 0,
        }
    }

    fn eval(&mut self, units: &[TileId]) -> Candidate {
        self.evaluations += 1;
        self.problem.evaluate(units)
    }

    /// Steepest descent over single-unit moves.
    fn descend(&mut self, start: Candidate) -> Candidate {
        let mut current = start;
        loop {
            let mut best: Option<Candidate> = None;
            for &u in &self.problem.movable {
                for &p in &self.problem.usable {
                    if p == current.units[u] {
                        continue;
                    }
                    let mut units = current.units.clone();
                    units[u] = p;
                    let c = self.eval(&units);
                    let bar = best.as_ref().map_or(current.cost, |b| b.cost);
                    if c.cost < bar {
                        best = Some(c);
                    }
                }
            }
            match best {
                Some(b) => current = b,
                None => return current,
            }
        }
    }

    /// Fallback when a run ends infeasible: try every single-PE placement and
    /// descend from the best feasible one.
    fn probe(&mut self) -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for &p in &self.problem.usable {
            let c = self.eval(&vec![p; self.problem.units]);
            if c.cost.is_finite() && best.as_ref().is_none_or(|b| c.cost < b.cost) {
                best = Some(c);
            }
        }
        best.map(|b| self.descend(b))
    }

    fn finish(mut self, best: Candidate, history: Vec<f64>) -> Result<SearchOutcome, MapError> {
        let best = if best.cost.is_finite() {
            best
        } else {
            self.probe().ok_or(MapError::InfeasibleInstance)?
        };
        Ok(SearchOutcome {
            mapping: self.problem.expand(&best.units),
            schedule: best.schedule.expect("finite cost implies a schedule"),
            cost: best.cost,
            evaluations: self.evaluations,
            history,
        })
    }
}

fn check_start(problem: &MappingProblem<'_>, start: &[TileId]) -> Result<(), MapError> {
    if start.len() != problem.units {
        return Err(MapError::MappingSize {
            given: start.len(),
            tasks: problem.units,
        });
    }
    Ok(())
}

/// Steepest-descent local search; stops at the first local optimum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Greedy;

impl MappingHeuristic for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn search(
        &self,
        problem: &MappingProblem<'_>,
        start: &[TileId],
        _seed: u64,
    ) -> Result<SearchOutcome, MapError> {
        check_start(problem, start)?;
        let mut counter = Counter::new(problem);
        let first = counter.eval(start);
        let initial = first.cost;
        let best = counter.descend(first);
        let history = vec![initial, best.cost];
        counter.finish(best, history)
    }
}

/// Greedy descent, then repeated perturb-and-descend rounds keeping the best
/// placement found. Each round relocates a quarter of the units (rounded up)
/// to random PEs, starting from the best placement so far.
#[derive(Debug, Clone, Copy)]
pub struct IteratedLocalSearch {
    pub iterations: usize,
}

impl Default for IteratedLocalSearch {
    fn default() -> Self {
        IteratedLocalSearch { iterations: 10 }
    }
}

impl MappingHeuristic for IteratedLocalSearch {
    fn name(&self) -> &'static str {
        "ils"
    }

    fn search(
        &self,
        problem: &MappingProblem<'_>,
        start: &[TileId],
        seed: u64,
    ) -> Result<SearchOutcome, MapError> {
        check_start(problem, start)?;
        if self.iterations == 0 {
            return Err(MapError::InvalidParameter("ILS needs at least one iteration".into()));
        }
        let mut rng = rng::substream(seed, "mapsched.ils");
        let mut counter = Counter::new(problem);
        let first = counter.eval(start);
        let mut best = counter.descend(first);
        let mut history = vec![best.cost];
        let movable = &problem.movable;
        let usable = &problem.usable;
        for _ in 0..self.iterations {
            let mut units = best.units.clone();
            if !movable.is_empty() {
                let k = movable.len().div_ceil(4);
                for &u in rand::seq::index::sample(&mut rng, movable.len(), k).iter().map(|i| &movable[i]) {
                    units[u] = usable[rng.gen_range(0..usable.len())];
                }
            }
            let first = counter.eval(&units);
            let local = counter.descend(first);
            if local.cost < best.cost {
                best = local;
            }
            history.push(best.cost);
        }
        counter.finish(best, history)
    }
}

/// Cooling schedule of the annealer. `None` fields take the defaults:
/// `t0` = cost of the start placement (1 when that is 0 or infeasible) and
/// `t_min` = `t0 / 1000`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaParams {
    pub t0: Option<f64>,
    pub alpha: f64,
    pub moves_per_temperature: usize,
    pub t_min: Option<f64>,
}

impl Default for SaParams {
    fn default() -> Self {
        SaParams {
            t0: None,
            alpha: 0.97,
            moves_per_temperature: 100,
            t_min: None,
        }
    }
}

impl SaParams {
    pub fn validate(&self) -> Result<(), MapError> {
        let bad = |m: &str| Err(MapError::InvalidParameter(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.moves_per_temperature == 0 {
            return bad("moves per temperature must be positive");
        }
        if self.t0.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
            return bad("initial temperature must be positive");
        }
        if self.t_min.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
            return bad("final temperature must be positive");
        }
        Ok(())
    }
}

/// Simulated annealing over single-unit moves with geometric cooling and
/// Metropolis acceptance. At least one temperature level always runs, so a
/// start temperature below `t_min` degenerates to a randomized descent.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedAnnealing {
    pub params: SaParams,
}

impl MappingHeuristic for SimulatedAnnealing {
    fn name(&self) -> &'static str {
        "sa"
    }

    fn search(
        &self,
        problem: &MappingProblem<'_>,
        start: &[TileId],
        seed: u64,
    ) -> Result<SearchOutcome, MapError> {
        check_start(problem, start)?;
        self.params.validate()?;
        let mut rng = rng::substream(seed, "mapsched.sa");
        let mut counter = Counter::new(problem);
        let mut current = counter.eval(start);
        let mut best = current.clone();
        let t0 = self.params.t0.unwrap_or(if current.cost.is_finite() && current.cost > 0.0 {
            current.cost
        } else {
            1.0
        });
        let t_min = self.params.t_min.unwrap_or(t0 * 1e-3);
        let mut temp = t0;
        let mut history = vec![best.cost];
        let can_move = !problem.movable.is_empty() && problem.usable.len() > 1;
        loop {
            for _ in 0..self.params.moves_per_temperature {
                if !can_move {
                    break;
                }
                let units = neighbor(problem, &current.units, &mut rng);
                let cand = counter.eval(&units);
                if accept(current.cost, cand.cost, temp, &mut rng) {
                    current = cand;
                    if current.cost < best.cost {
                        best = current.clone();
                    }
                }
            }
            history.push(best.cost);
            temp *= self.params.alpha;
            if temp < t_min || !can_move {
                break;
            }
        }
        counter.finish(best, history)
    }
}

fn neighbor(problem: &MappingProblem<'_>, units: &[TileId], rng: &mut SimRng) -> Vec<TileId> {
    let usable = &problem.usable;
    let u = problem.movable[rng.gen_range(0..problem.movable.len())];
    let mut i = rng.gen_range(0..usable.len());
    if usable[i] == units[u] {
        i = (i + 1 + rng.gen_range(0..usable.len() - 1)) % usable.len();
    }
    let mut next = units.to_vec();
    next[u] = usable[i];
    next
}

fn accept(current: f64, candidate: f64, temp: f64, rng: &mut SimRng) -> bool {
    if candidate <= current {
        return true;
    }
    if !candidate.is_finite() {
        return false;
    }
    if !current.is_finite() {
        return true;
    }
    rng.gen::<f64>() < (-(candidate - current) / temp).exp()
}

/// The heuristics shipped with the crate, selectable by name.
#[derive(Debug, Clone, Copy)]
pub enum Heuristic {
    Greedy,
    Ils(IteratedLocalSearch),
    Sa(SimulatedAnnealing),
}

impl Heuristic {
    pub fn from_name(name: &str) -> Result<Heuristic, MapError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "greedy" => Ok(Heuristic::Greedy),
            "ils" => Ok(Heuristic::Ils(IteratedLocalSearch::default())),
            "sa" => Ok(Heuristic::Sa(SimulatedAnnealing::default())),
            _ => Err(MapError::InvalidParameter(format!("unknown heuristic `{name}`"))),
        }
    }
}

impl MappingHeuristic for Heuristic {
    fn name(&self) -> &'static str {
        match self {
            Heuristic::Greedy => Greedy.name(),
            Heuristic::Ils(h) => h.name(),
            Heuristic::Sa(h) => h.name(),
        }
    }

    fn search(
        &self,
        problem: &MappingProblem<'_>,
        start: &[TileId],
        seed: u64,
    ) -> Result<SearchOutcome, MapError> {
        match self {
            Heuristic::Greedy => Greedy.search(problem, start, seed),
            Heuristic::Ils(h) => h.search(problem, start, seed),
            Heuristic::Sa(h) => h.search(problem, start, seed),
        }
    }
}

pub fn map_greedy(problem: &MappingProblem<'_>, start: &[TileId]) -> Result<SearchOutcome, MapError> {
    Greedy.search(problem, start, 0)
}

pub fn map_ils(
    problem: &MappingProblem<'_>,
    start: &[TileId],
    iterations: usize,
    seed: u64,
) -> Result<SearchOutcome, MapError> {
    IteratedLocalSearch { iterations }.search(problem, start, seed)
}

pub fn map_sa(
    problem: &MappingProblem<'_>,
    start: &[TileId],
    params: SaParams,
    seed: u64,
) -> Result<SearchOutcome, MapError> {
    SimulatedAnnealing { params }.search(problem, start, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_mesh, random_task_graph, EdgeSpec, TaskSpec};
    use crate::health::Fault;
    use crate::routing::{build_routing_graph, TurnModel};

    #[test]
    fn first_fit_round_robin() {
        let ag = build_mesh(2, 2, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let tg = TaskGraph::build(&(0..4).map(|i| TaskSpec::new(i, 1)).collect::<Vec<_>>(), &[]).unwrap();
        assert_eq!(
            initial_mapping(&tg, &shm, InitialPolicy::FirstFit).unwrap().assignment(),
            &[0, 1, 2, 3]
        );
        let r = InitialPolicy::Random { seed: 3 };
        assert_eq!(initial_mapping(&tg, &shm, r), initial_mapping(&tg, &shm, r));
        let mut dead = shm.clone();
        for t in 0..4 {
            dead.apply_fault(Fault::Pe(t)).unwrap();
        }
        assert_eq!(initial_mapping(&tg, &dead, InitialPolicy::FirstFit), Err(MapError::NoHealthyPe));
    }

    #[test]
    fn greedy_spreads_independent_tasks() {
        let ag = build_mesh(2, 1, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let tg = TaskGraph::build(&[TaskSpec::new(0, 10), TaskSpec::new(1, 10)], &[]).unwrap();
        let ctx = MsuContext::new(&tg, &ag, &rg, &shm).unwrap();
        let problem = MappingProblem::new(ctx, CostFunction::UtilizationBalance).unwrap();
        let out = map_greedy(&problem, &[0, 0]).unwrap();
        assert_eq!(out.cost, 0.0);
        assert_ne!(out.mapping.tile(0), out.mapping.tile(1));
    }

    #[test]
    fn single_usable_pe_takes_everything() {
        let ag = build_mesh(2, 1, None).unwrap();
        let mut shm = SystemHealthMap::new(&ag);
        shm.apply_fault(Fault::Pe(0)).unwrap();
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let tg = TaskGraph::build(
            &[TaskSpec::new(0, 3), TaskSpec::new(1, 4)],
            &[EdgeSpec::new(0, 1, 9)],
        )
        .unwrap();
        let ctx = MsuContext::new(&tg, &ag, &rg, &shm).unwrap();
        let problem = MappingProblem::new(ctx, CostFunction::ScheduleLength).unwrap();
        let start = problem.initial(InitialPolicy::FirstFit);
        let out = map_greedy(&problem, &start).unwrap();
        assert_eq!(out.mapping.assignment(), &[1, 1]);
        assert_eq!(out.cost, 7.0);
    }

    #[test]
    fn ils_and_sa_are_deterministic_and_not_worse() {
        let ag = build_mesh(3, 3, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let tg = random_task_graph(9, 0.3, (5, 20), (1, 10), 7);
        let ctx = MsuContext::new(&tg, &ag, &rg, &shm).unwrap();
        let problem = MappingProblem::new(ctx, CostFunction::ScheduleLength).unwrap();
        let start = problem.initial(InitialPolicy::FirstFit);
        let g = map_greedy(&problem, &start).unwrap();
        let i = map_ils(&problem, &start, 5, 1).unwrap();
        assert!(i.cost <= g.cost);
        assert!(i.history.windows(2).all(|w| w[1] <= w[0]));
        let params = SaParams {
            moves_per_temperature: 20,
            ..Default::default()
        };
        let a = map_sa(&problem, &start, params, 4).unwrap();
        let b = map_sa(&problem, &start, params, 4).unwrap();
        assert_eq!(a.mapping, b.mapping);
        assert_eq!(a.history, b.history);
        assert!(a.cost <= problem.evaluate(&start).cost);
    }

    #[test]
    fn clusters_move_as_units() {
        let ag = build_mesh(2, 2, None).unwrap();
        let shm = SystemHealthMap::new(&ag);
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let tg = random_task_graph(6, 0.5, (1, 5), (1, 5), 2);
        let ctg = ClusteredTaskGraph::from_assignment(&tg, &[0, 0, 1, 1, 2, 2]);
        let ctx = MsuContext::new(&tg, &ag, &rg, &shm).unwrap();
        let problem = MappingProblem::new(ctx, CostFunction::ScheduleLength)
            .unwrap()
            .with_clusters(&ctg);
        assert_eq!(problem.unit_count(), 3);
        let out = map_greedy(&problem, &problem.initial(InitialPolicy::FirstFit)).unwrap();
        let m = out.mapping.assignment();
        assert!(m[0] == m[1] && m[2] == m[3] && m[4] == m[5]);
    }

    #[test]
    fn repair_moves_to_nearest_usable() {
        let ag = build_mesh(3, 1, None).unwrap();
        let mut shm = SystemHealthMap::new(&ag);
        shm.apply_fault(Fault::Pe(1)).unwrap();
        let rg = build_routing_graph(&ag, &TurnModel::xy(), &shm).unwrap();
        let tg = TaskGraph::build(&[TaskSpec::new(0, 1)], &[]).unwrap();
        let ctx = MsuContext::new(&tg, &ag, &rg, &shm).unwrap();
        let problem = MappingProblem::new(ctx, CostFunction::ScheduleLength).unwrap();
        assert_eq!(problem.repair(&[1]), vec![0]);
        assert_eq!(problem.repair(&[2]), vec![2]);
    }
}
