//! `ftnoc`: validate, map, simulate and inspect fault-tolerant NoC scenarios.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

mod scenario;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ftnoc::health::Fault;
use ftnoc::mapsched::evaluate_cost;
use ftnoc::reachability::build_region_tables;
use ftnoc::simkernel::{self, Persistence, ScenarioScript};

use scenario::{Overrides, ScenarioFile, Source};

#[derive(Parser)]
#[command(name = "ftnoc", version, about = "Fault-tolerant NoC many-core simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file without running anything.
    Validate(Common),
    /// Map and schedule the application; write the schedule dump.
    Map(Common),
    /// Run the discrete-event simulation.
    Simulate(Common),
    /// Dump the unreachable-region tables, initially and after each permanent injection.
    Regions(Common),
    /// Simulate the scenario under several seeds in parallel.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    heuristic: Option<HeuristicArg>,
    #[arg(long, value_enum)]
    cost: Option<CostArg>,
    #[arg(long = "regions-budget", value_parser = clap::value_parser!(u64).range(1..))]
    regions_budget: Option<u64>,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeuristicArg {
    Greedy,
    Ils,
    Sa,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Makespan,
    Traffic,
    Util,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Validate(c) => validate(c),
        Command::Map(c) => map(c),
        Command::Simulate(c) => simulate(c),
        Command::Regions(c) => regions(c),
        Command::Sweep { common, seeds } => sweep(common, seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            heuristic: self.heuristic.map(|h| {
                match h {
                    HeuristicArg::Greedy => "greedy",
                    HeuristicArg::Ils => "ils",
                    HeuristicArg::Sa => "sa",
                }
                .to_string()
            }),
            cost: self.cost.map(|c| {
                match c {
                    CostArg::Makespan => "makespan",
                    CostArg::Traffic => "traffic",
                    CostArg::Util => "util",
                }
                .to_string()
            }),
            regions_budget: self.regions_budget.map(|r| r as usize),
        }
    }

    fn load(&self) -> Result<(ScenarioFile, ScenarioScript), Failure> {
        self.load_with(self.overrides())
    }

    fn load_with(&self, o: Overrides) -> Result<(ScenarioFile, ScenarioScript), Failure> {
        let path = self.scenario.display();
        let text = fs::read_to_string(&self.scenario)
            .map_err(|e| Failure::Invalid(format!("{path}: {e}")))?;
        let mut file = scenario::parse(&text).map_err(|e| Failure::Invalid(format!("{path}: {e}")))?;
        file.apply(&o);
        let sc = file
            .build(&Source::new(&text))
            .map_err(|e| Failure::Invalid(format!("{path}: {e}")))?;
        Ok((file, sc))
    }
}

fn write_out(dir: &Path, name: &str, body: &str) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))
}

fn validate(c: &Common) -> Outcome {
    let (_, sc) = c.load()?;
    if c.verbose {
        eprintln!(
            "{} tasks, {} edges, {} tiles, {} injections",
            sc.tg.len(),
            sc.tg.edges().len(),
            sc.ag.tile_count(),
            sc.injections.len()
        );
    }
    println!("valid");
    Ok(())
}

fn map(c: &Common) -> Outcome {
    let (file, sc) = c.load()?;
    let (mapping, schedule) = sc
        .initial_deployment()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let cost = evaluate_cost(&schedule, sc.msu.cost);
    let dump = schedule.dump();
    match &c.out {
        Some(dir) => {
            write_out(dir, "schedule.txt", &dump)?;
            write_out(dir, "mapping.txt", &format!("{mapping}\n"))?;
        }
        None => print!("{dump}"),
    }
    println!(
        "heuristic={} cost={} value={} makespan={} mapping={}",
        file.heuristic.name,
        sc.msu.cost.name(),
        cost,
        schedule.makespan,
        mapping
    );
    if c.verbose && !schedule.deadline_misses.is_empty() {
        eprintln!("deadline misses: {:?}", schedule.deadline_misses);
    }
    Ok(())
}

fn simulate(c: &Common) -> Outcome {
    let (_, sc) = c.load()?;
    let out = simkernel::run(&sc).map_err(|e| Failure::Runtime(e.to_string()))?;
    let metrics = out.metrics.to_text();
    if let Some(dir) = &c.out {
        write_out(dir, "metrics.txt", &metrics)?;
        write_out(dir, "decisions.log", &out.decisions_text())?;
        write_out(dir, "trace.txt", &out.trace_text())?;
        write_out(dir, "schedule.txt", &out.initial_schedule.dump())?;
        write_out(dir, "mpm.txt", &out.mpm_dump)?;
    }
    println!(
        "makespan={} completed={} remaps={} dropped={} mpm_hits={}",
        out.metrics.makespan,
        out.metrics.completed,
        out.metrics.remaps,
        out.metrics.dropped,
        out.metrics.mpm_hits
    );
    if c.verbose {
        for w in &out.warnings {
            eprintln!("warning: {w}");
        }
        eprint!("{metrics}");
    }
    if out.metrics.completed {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "application did not complete ({}/{} tasks)",
            out.metrics.tasks_completed, out.metrics.tasks_total
        )))
    }
}

fn regions(c: &Common) -> Outcome {
    let (_, sc) = c.load()?;
    let rt = |e: &dyn std::fmt::Display| Failure::Runtime(e.to_string());
    let mut shm = sc.initial_shm().map_err(|e| rt(&e))?;
    let mut states = vec![("initial".to_string(), shm.clone())];
    for inj in sc.injections.iter().filter(|i| i.persistence == Persistence::Permanent) {
        let faults: Vec<Fault> = inj.location.faults(&sc.ag, &shm).map_err(|e| rt(&e))?;
        for f in faults {
            shm.apply_fault(f).map_err(|e| rt(&e))?;
        }
        states.push((format!("t={} {}", inj.time, inj.location), shm.clone()));
    }
    let mut text = String::new();
    for (i, (label, shm)) in states.iter().enumerate() {
        let rg = sc.msu.routing_graph(&sc.ag, shm).map_err(|e| rt(&e))?;
        let tables = build_region_tables(&rg, sc.msu.region_budget).map_err(|e| rt(&e))?;
        text.push_str(&format!("# state {i} {label}\n"));
        text.push_str(&tables.dump());
    }
    match &c.out {
        Some(dir) => write_out(dir, "regions.txt", &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sweep(c: &Common, seeds: &[u64]) -> Outcome {
    // Validate every variant before running any of them.
    let variants = seeds
        .iter()
        .map(|&s| {
            let mut o = c.overrides();
            o.seed = Some(s);
            c.load_with(o).map(|(_, sc)| (s, sc))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<_> = variants
        .par_iter()
        .map(|(s, sc)| (*s, simkernel::run(sc)))
        .collect();
    let mut summary = String::from("seed makespan completed remaps dropped mpm_hits\n");
    for (seed, r) in &results {
        let out = r.as_ref().map_err(|e| Failure::Runtime(format!("seed {seed}: {e}")))?;
        let m = &out.metrics;
        summary.push_str(&format!(
            "{seed} {} {} {} {} {}\n",
            m.makespan, m.completed, m.remaps, m.dropped, m.mpm_hits
        ));
        if let Some(dir) = &c.out {
            let d = dir.join(format!("seed-{seed}"));
            write_out(&d, "metrics.txt", &m.to_text())?;
            write_out(&d, "decisions.log", &out.decisions_text())?;
            write_out(&d, "trace.txt", &out.trace_text())?;
        }
    }
    if let Some(dir) = &c.out {
        write_out(dir, "summary.txt", &summary)?;
    }
    print!("{summary}");
    Ok(())
}
