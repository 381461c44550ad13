use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use lqkd::keystructure::LayeredKeyStructure;
use lqkd::measurement::PreparedState;
use lqkd::planner::{enumerate_plans_with, pareto_front, plan_metrics, ConstructionPlan};
use lqkd::protocol::{run_protocol, KeyRingReport, ProtocolConfig};
use lqkd::quantum::{build_from_plan, SparseState, StateDump};
use lqkd::rates::{
    epr_relay_accounting, ghz_schedule_rates, layered_rates, partition_schedule, three_user_sweep,
    ConversionPolicy, Grid, RateReport, Schedule,
};

#[derive(Parser)]
#[command(name = "lqkd", version, about = "Layered quantum key distribution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Impl {
    Layered,
    Ghz,
    Epr,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    LargestFirst,
    SmallestFirst,
}

#[derive(clap::Args)]
struct PlanChoice {
    /// `flat`, `tradeoff`, or a plan file
    #[arg(long, default_value = "flat")]
    plan: String,
    /// Branch limit for superpositions
    #[arg(long, default_value_t = 2)]
    max_arity: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Load a structure and print a summary
    Validate {
        #[arg(short = 'f', long)]
        structure: PathBuf,
    },
    /// Write the state dump of a plan
    Build {
        #[arg(short = 'f', long)]
        structure: PathBuf,
        #[command(flatten)]
        plan: PlanChoice,
        /// Output file (standard output when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate construction plans with their metrics and Pareto front
    Plan {
        #[arg(short = 'f', long)]
        structure: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_arity: usize,
        /// Lift the layer-count guard
        #[arg(long)]
        allow_large: bool,
        /// With --out, write only the plan with this index
        #[arg(long)]
        select: Option<usize>,
        /// JSON output file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a protocol session
    Simulate {
        #[arg(short = 'f', long)]
        structure: PathBuf,
        #[command(flatten)]
        plan: PlanChoice,
        #[arg(long, default_value_t = 10_000)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Visibility: probability that a round follows the ideal state
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// Probability of a test setting per testable node
        #[arg(long, default_value_t = 1.0 / 3.0)]
        test_bias: f64,
        /// Fraction of key rounds disclosed for error estimation
        #[arg(long, default_value_t = 0.1)]
        sacrifice: f64,
        /// Directory receiving transcript.csv and keyring.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Idealized key rates of one implementation
    Rates {
        #[arg(short = 'f', long)]
        structure: PathBuf,
        #[arg(long = "impl", value_enum, default_value = "layered")]
        implementation: Impl,
        #[command(flatten)]
        plan: PlanChoice,
        /// Schedule file for ghz/epr (partition schedule when absent)
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Order in which layers claim EPR link keys
        #[arg(long, value_enum, default_value = "largest-first")]
        policy: Policy,
        /// JSON output file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the three-user comparison over p and emit CSV
    Compare {
        /// start:stop:step
        #[arg(long, default_value = "0:1:0.05")]
        grid: String,
        /// CSV output file (standard output when absent)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect earlier outputs into one JSON document
    Report {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Invalid(String),
    Io(String),
}

type Res<T> = Result<T, Failure>;

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn read(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Res<()> {
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Res<()> {
    match out {
        Some(p) => write(p, text),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Io(e.to_string())),
    }
}

fn load_structure(path: &Path) -> Res<LayeredKeyStructure> {
    LayeredKeyStructure::from_json(&read(path)?).map_err(invalid)
}

fn load_plan(k: &LayeredKeyStructure, choice: &PlanChoice) -> Res<ConstructionPlan> {
    match choice.plan.as_str() {
        "flat" => Ok(ConstructionPlan::flat(k)),
        "tradeoff" => ConstructionPlan::greedy_tradeoff(k, choice.max_arity).map_err(invalid),
        path => {
            let plan = ConstructionPlan::from_json(&read(Path::new(path))?).map_err(invalid)?;
            let pk = plan.structure().map_err(invalid)?;
            if pk.layers() != k.layers() || pk.users() != k.users() {
                return Err(invalid("plan does not implement the given structure"));
            }
            Ok(plan)
        }
    }
}

fn join<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn validate(structure: &Path) -> Res<()> {
    let k = load_structure(structure)?;
    let comps = k.connected_components().len();
    let conn = if comps == 1 { "connected".to_string() } else { format!("{comps} components") };
    let flag = |r: Result<bool, _>| r.map_or("n/a".to_string(), |b: bool| b.to_string());
    println!(
        "K={}, ℓ=({}), {conn}, ghz_rate1={}",
        k.num_layers(),
        join(k.layer_counts()),
        flag(k.ghz_rate1_feasible())
    );
    let parts = k
        .partition_decomposition()
        .map_or("none".to_string(), |p| p.len().to_string());
    println!("epr_rate1={}, partitions={parts}", flag(k.epr_rate1_feasible()));
    for (i, l) in k.layers().iter().enumerate() {
        println!("  layer {i}: {l}");
    }
    Ok(())
}

fn build(structure: &Path, choice: &PlanChoice, out: Option<&Path>) -> Res<()> {
    let k = load_structure(structure)?;
    let plan = load_plan(&k, choice)?;
    let ks = build_from_plan(&plan).map_err(invalid)?;
    let text = serde_json::to_string_pretty(&ks.state.to_dump()).map_err(invalid)? + "\n";
    emit(out, &text)
}

fn plan_cmd(structure: &Path, max_arity: usize, large: bool, select: Option<usize>, out: Option<&Path>) -> Res<()> {
    let k = load_structure(structure)?;
    let plans = enumerate_plans_with(&k, max_arity, large).map_err(invalid)?;
    let metrics: Vec<_> = plans.iter().map(plan_metrics).collect();
    let front = pareto_front(&metrics);
    if let Some(i) = select {
        let plan = plans
            .get(i)
            .ok_or_else(|| invalid(format!("no plan #{i} ({} plans)", plans.len())))?;
        return emit(out, &(plan.to_json() + "\n"));
    }
    let mut table = format!("{} plans, {} on the Pareto front\n", plans.len(), front.len());
    let _ = writeln!(table, "{:>5}  {:5}  {:>10}  {:>8}  {:<24}  {:<24}  plan", "#", "front", "total_dim", "support", "dims", "rates");
    for (i, (p, m)) in plans.iter().zip(&metrics).enumerate() {
        let _ = writeln!(
            table,
            "{i:>5}  {:5}  {:>10}  {:>8}  {:<24}  {:<24}  {}",
            if front.contains(&i) { "*" } else { "" },
            m.total_dim(),
            m.support_size,
            join(&m.dims),
            join(m.rates.iter().map(|r| format!("{r}"))),
            p.describe()
        );
    }
    print!("{table}");
    if let Some(out) = out {
        let doc = json!({
            "structure": serde_json::from_str::<Value>(&k.to_json()).map_err(invalid)?,
            "max_arity": max_arity,
            "plans": plans.iter().zip(&metrics).enumerate().map(|(i, (p, m))| Ok(json!({
                "index": i,
                "pareto": front.contains(&i),
                "plan": serde_json::from_str::<Value>(&p.to_json()).map_err(invalid)?,
                "metrics": m,
            }))).collect::<Res<Vec<Value>>>()?,
        });
        write(out, &(serde_json::to_string_pretty(&doc).map_err(invalid)? + "\n"))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    structure: &Path,
    choice: &PlanChoice,
    cfg: ProtocolConfig,
    out: Option<&Path>,
) -> Res<()> {
    let k = load_structure(structure)?;
    let plan = load_plan(&k, choice)?;
    let prep = PreparedState::new(&plan).map_err(invalid)?;
    let (transcript, ring) = run_protocol(&prep, &cfg).map_err(invalid)?;
    println!("plan {}; {} rounds, seed {}, visibility {}", plan.describe(), cfg.rounds, cfg.seed, cfg.noise_v);
    println!("{:<16} {:>5} {:>10} {:>10} {:>8} {:>8} {:>8} {:>12}", "layer", "arity", "key_rounds", "raw_len", "QZ", "QX", "fraction", "secure_len");
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for key in &ring.layers {
        println!(
            "{:<16} {:>5} {:>10} {:>10} {:>8} {:>8} {:>8.4} {:>12.1}",
            key.layer.to_string(),
            key.arity,
            key.key_rounds,
            key.raw_key.len(),
            opt(key.estimates.map(|e| e.qz)),
            opt(key.estimates.map(|e| e.qx)),
            key.fraction,
            key.secure_length
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        let mut csv = Vec::new();
        transcript.write_csv(&prep, &mut csv).map_err(|e| Failure::Io(e.to_string()))?;
        let csv_path = dir.join("transcript.csv");
        fs::write(&csv_path, csv).map_err(|e| Failure::Io(format!("{}: {e}", csv_path.display())))?;
        write(&dir.join("keyring.json"), &(ring.to_json() + "\n"))?;
    }
    Ok(())
}

fn rates(
    structure: &Path,
    implementation: Impl,
    choice: &PlanChoice,
    schedule: Option<&Path>,
    policy: Policy,
    out: Option<&Path>,
) -> Res<()> {
    let k = load_structure(structure)?;
    let schedule = || -> Res<Schedule> {
        match schedule {
            Some(p) => Schedule::from_json(&read(p)?).map_err(invalid),
            None => partition_schedule(&k)
                .ok_or_else(|| invalid("no --schedule given and the structure has no partition decomposition")),
        }
    };
    let report = match implementation {
        Impl::Layered => layered_rates(&load_plan(&k, choice)?),
        Impl::Ghz => ghz_schedule_rates(&k, &schedule()?).map_err(invalid)?,
        Impl::Epr => {
            let policy = match policy {
                Policy::LargestFirst => ConversionPolicy::LargestFirst,
                Policy::SmallestFirst => ConversionPolicy::SmallestFirst,
            };
            epr_relay_accounting(&k, &schedule()?, policy).map_err(invalid)?.report
        }
    };
    print!("{}", report.to_table());
    if let Some(out) = out {
        write(out, &(report.to_json() + "\n"))?;
    }
    Ok(())
}

fn compare(grid: &str, out: Option<&Path>) -> Res<()> {
    let grid: Grid = grid.parse().map_err(invalid)?;
    let rows = three_user_sweep(&grid).map_err(invalid)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| Failure::Io(e.to_string());
    w.write_record(["p", "epr_r123", "epr_r12", "ghz_r123", "ghz_r12", "layered_r123", "layered_r12"])
        .map_err(io_err)?;
    for r in rows {
        w.write_record(
            [r.p, r.epr.0, r.epr.1, r.ghz.0, r.ghz.1, r.layered.0, r.layered.1].map(|x| format!("{x}")),
        )
        .map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
    emit(out, &String::from_utf8(bytes).expect("ascii csv"))
}

/// Recognizes an earlier output by parsing it with each module's loader.
fn classify_input(path: &Path) -> Res<(&'static str, Value)> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "csv") {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers: Vec<String> = r.headers().map_err(invalid)?.iter().map(String::from).collect();
        let rows = r.records().count();
        let kind = if headers.first().is_some_and(|h| h == "round") { "transcript" } else { "comparison" };
        return Ok((kind, json!({ "columns": headers, "rows": rows })));
    }
    let value: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let kind = if KeyRingReport::from_json(&text).is_ok() {
        "keyring"
    } else if RateReport::from_json(&text).is_ok() {
        "rates"
    } else if serde_json::from_str::<StateDump>(&text).is_ok_and(|d| SparseState::from_dump(&d).is_ok()) {
        "state"
    } else if ConstructionPlan::from_json(&text).is_ok() {
        "plan"
    } else if value.get("plans").is_some() {
        "plans"
    } else if Schedule::from_json(&text).is_ok() {
        "schedule"
    } else if LayeredKeyStructure::from_json(&text).is_ok() {
        "structure"
    } else {
        return Err(invalid(format!("{}: unrecognized document", path.display())));
    };
    Ok((kind, value))
}

fn report(inputs: &[PathBuf], out: Option<&Path>) -> Res<()> {
    let mut items = Vec::new();
    for p in inputs {
        let (kind, data) = classify_input(p)?;
        items.push(json!({ "path": p.display().to_string(), "kind": kind, "data": data }));
    }
    let doc = json!({ "inputs": items });
    emit(out, &(serde_json::to_string_pretty(&doc).map_err(invalid)? + "\n"))
}

fn run(cli: Cli) -> Res<()> {
    match cli.command {
        Command::Validate { structure } => validate(&structure),
        Command::Build { structure, plan, out } => build(&structure, &plan, out.as_deref()),
        Command::Plan { structure, max_arity, allow_large, select, out } => {
            plan_cmd(&structure, max_arity, allow_large, select, out.as_deref())
        }
        Command::Simulate { structure, plan, rounds, seed, noise, test_bias, sacrifice, out } => {
            let cfg = ProtocolConfig {
                rounds,
                seed,
                noise_v: noise,
                test_bias,
                sacrifice_fraction: sacrifice,
            };
            cfg.validate().map_err(invalid)?;
            simulate(&structure, &plan, cfg, out.as_deref())
        }
        Command::Rates { structure, implementation, plan, schedule, policy, out } => {
            rates(&structure, implementation, &plan, schedule.as_deref(), policy, out.as_deref())
        }
        Command::Compare { grid, out } => compare(&grid, out.as_deref()),
        Command::Report { inputs, out } => report(&inputs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
