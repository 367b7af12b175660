use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prio_core::oracle::{self, Instance};
use prio_core::priority::{feasibility_and_margin, PriorityGraph};
use prio_core::scenario::{PolicyName, Scenario};
use prio_core::simulator::{RunMetrics, Simulation};
use prio_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "prio", version, about = "Priority-based intersection coordination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv and metrics.csv.
    Simulate(SimArgs),
    /// Decide whether a priority graph admits a collision-free path.
    CheckFeasibility(GraphArgs),
    /// Print the safety margin of a priority graph.
    Margin(GraphArgs),
    /// Compare the velocity law with every admissible binary control.
    OracleOptimality(OptimalityArgs),
    /// Compare the feasibility verdict with a grid staircase search.
    OracleFeasibility(FeasibilityArgs),
    /// Run a scenario twice and compare trace digests.
    ReplayVerify(SimArgs),
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    rate: Option<f64>,
    /// `exact` or `heuristic`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    /// Instance file.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Args)]
struct OptimalityArgs {
    /// Instance file; random instances are drawn when absent.
    #[arg(long, requires = "graph")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Horizon in slots.
    #[arg(long, default_value_t = 12)]
    slots: usize,
}

#[derive(Args)]
struct FeasibilityArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 48)]
    grid: usize,
}

enum Failure {
    Property(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::CheckFeasibility(a) => check_feasibility(&a),
        Command::Margin(a) => margin(&a),
        Command::OracleOptimality(a) => oracle_optimality(&a),
        Command::OracleFeasibility(a) => oracle_feasibility(&a),
        Command::ReplayVerify(a) => replay_verify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(a: &SimArgs) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(&a.scenario).map_err(|e| Failure::Usage(format!("{}: {e}", a.scenario.display())))?;
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(slots) = a.slots {
        s.slots = slots;
    }
    if let Some(rate) = a.rate {
        s.arrival_rate = rate;
        for p in &mut s.paths {
            p.rate = None;
        }
    }
    if let Some(p) = &a.policy {
        s.policy.kind = p.parse::<PolicyName>()?;
    }
    s.validate()?;
    Ok(s)
}

fn print_summary(m: &RunMetrics) {
    for (k, v) in m.summary() {
        println!("{k} {v}");
    }
}

fn simulate(a: &SimArgs) -> Result<(), Failure> {
    let s = load_scenario(a)?;
    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    let trace = create(&dir.join("trace.csv"))?;
    let m = Simulation::new(&s)?.with_trace(Box::new(trace))?.run()?;
    let mut out = create(&dir.join("metrics.csv"))?;
    m.write_csv(&mut out)?;
    print_summary(&m);
    if m.is_clean() {
        Ok(())
    } else {
        Err(Failure::Property(
            m.breach
                .clone()
                .unwrap_or_else(|| format!("{} collisions, {} priority violations", m.collisions, m.violations)),
        ))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn replay_verify(a: &SimArgs) -> Result<(), Failure> {
    let s = load_scenario(a)?;
    let first = Simulation::new(&s)?.run()?;
    let second = Simulation::new(&s)?.run()?;
    println!("digest {:016x}", first.digest);
    println!("digest {:016x}", second.digest);
    if first.digest == second.digest {
        Ok(())
    } else {
        Err(Failure::Property("trace digests differ".into()))
    }
}

fn load_graph(path: &Path) -> Result<PriorityGraph, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(PriorityGraph::parse(&text)?)
}

fn load_instance(path: &Path) -> Result<Instance, Failure> {
    Instance::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn check_feasibility(a: &GraphArgs) -> Result<(), Failure> {
    let inst = load_instance(&a.scenario)?;
    let g = load_graph(&a.graph)?;
    let report = feasibility_and_margin(&g, &inst.sections()?)?;
    if report.feasible {
        println!("feasible margin {}", report.margin);
        Ok(())
    } else {
        let cycle = report.witness_cycle.unwrap_or_default();
        let ids: Vec<String> = cycle.iter().map(|v| v.to_string()).collect();
        println!("infeasible cycle {}", ids.join(" "));
        Err(Failure::Property("priority graph is infeasible".into()))
    }
}

fn margin(a: &GraphArgs) -> Result<(), Failure> {
    let inst = load_instance(&a.scenario)?;
    let g = load_graph(&a.graph)?;
    let report = feasibility_and_margin(&g, &inst.sections()?)?;
    println!("{}", report.margin);
    Ok(())
}

fn oracle_optimality(a: &OptimalityArgs) -> Result<(), Failure> {
    let cases: Vec<(Instance, PriorityGraph)> = match (&a.scenario, &a.graph) {
        (Some(s), Some(g)) => vec![(load_instance(s)?, load_graph(g)?)],
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut v = Vec::new();
            for n in [2, 2, 3] {
                for _ in 0..10 {
                    v.push(oracle::random_instance(&mut rng, n)?);
                }
            }
            v
        }
    };
    let mut failures = 0;
    for (k, (inst, g)) in cases.iter().enumerate() {
        let rep = oracle::oracle_optimality(inst, g, a.slots)?;
        if let Some(slot) = rep.law_violation {
            println!("case {k}: law leaves the admissible set at slot {slot}");
            failures += 1;
        } else if let Some(c) = &rep.counterexample {
            println!(
                "case {k}: robot {} reaches {} at slot {} against {} under the law; controls {:?}",
                c.robot, c.other_position, c.slot, c.law_position, c.controls
            );
            failures += 1;
        } else {
            println!("case {k}: pass ({} robots, {} configurations)", inst.len(), rep.explored);
        }
    }
    if failures == 0 {
        Ok(())
    } else {
        Err(Failure::Property(format!("{failures} counterexamples")))
    }
}

fn oracle_feasibility(a: &FeasibilityArgs) -> Result<(), Failure> {
    let inst = load_instance(&a.scenario)?;
    let g = load_graph(&a.graph)?;
    let rep = oracle::oracle_feasibility(&g, &inst.sections()?, a.grid)?;
    println!("library {} margin {}", verdict(rep.library.feasible), rep.library.margin);
    println!("grid {} resolution {}", verdict(rep.oracle_feasible), rep.grid);
    if let Some(m) = rep.grid_margin {
        println!("grid margin lower bound {m}");
    }
    if rep.agree() {
        Ok(())
    } else {
        Err(Failure::Property("verdicts disagree".into()))
    }
}

fn verdict(feasible: bool) -> &'static str {
    if feasible {
        "feasible"
    } else {
        "infeasible"
    }
}
