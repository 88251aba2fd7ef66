//! `prunopt` command line: run benchmark cells, print ground truth, and
//! render aggregate CSVs as tables.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prunopt::config::FileConfig;
use prunopt::drug::DrugProblem;
use prunopt::orchestrator::{
    max_gradient_budget, run_replications, Method, ObjectiveMode, RunConfig,
};
use prunopt::report::{
    aggregate_csv, emit_tables_markdown, parse_aggregate_csv, render_run_report,
    replications_csv, AggregateRow,
};

/// Refuse cells whose deterministic no-pruning gradient budget exceeds this
/// many steps per replication; such runs would take days on a desktop.
const FEASIBLE_STEPS_PER_REP: u64 = 100_000_000;

#[derive(Parser)]
#[command(name = "prunopt", version, about = "Multi-stage pruning-optimization benchmark driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark cell from a config file and/or flags.
    Run(RunArgs),
    /// Benchmark-grid utilities.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run the benchmark grid (all feasible method x T cells) or a single
    /// cell when --method/--stages are given.
    Run(BenchRunArgs),
    /// Print the analytic ground truth of the benchmark problem.
    Truth(TruthArgs),
    /// Render an aggregate CSV as markdown + CSV tables.
    Tables(TablesArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// exact | asymptotic
    #[arg(long)]
    method: Option<Method>,
    /// same | different
    #[arg(long)]
    objective: Option<ObjectiveMode>,
    /// Stage count T.
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of macro-replications.
    #[arg(long)]
    reps: Option<u64>,
    /// Output directory for CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the per-replication audit trail.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct BenchRunArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Largest stage count of the grid sweep (T = 1..=GRID_STAGES).
    #[arg(long, default_value_t = 5)]
    grid_stages: usize,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// same | different
    #[arg(long)]
    objective: Option<ObjectiveMode>,
}

#[derive(Args)]
struct TablesArgs {
    /// Aggregate CSV produced by `run` or `bench run`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for tables.md / tables.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(&p.to_string_lossy())
            .with_context(|| format!("loading {}", p.display())),
        None => Ok(FileConfig::default()),
    }
}

/// Merges CLI flags over the file config and resolves problem + run config.
fn resolve(args: &RunArgs) -> Result<(FileConfig, RunConfig, PathBuf)> {
    let mut file = load_config(args.config.as_deref())?;
    if let Some(m) = args.method {
        file.method = m.as_str().to_string();
    }
    if let Some(o) = args.objective {
        file.objective = o.as_str().to_string();
    }
    if let Some(t) = args.stages {
        file.stages = t;
    }
    if let Some(s) = args.seed {
        file.seed = s;
    }
    if let Some(r) = args.reps {
        file.replications = r;
    }
    if let Some(out) = &args.out {
        file.out = out.display().to_string();
    }
    let cfg = file.run_config()?;
    let out = PathBuf::from(&file.out);
    Ok((file, cfg, out))
}

fn problem(file: &FileConfig) -> Result<DrugProblem> {
    if file.problem != "drug" {
        bail!("unknown problem '{}' (only 'drug' is built in)", file.problem);
    }
    Ok(DrugProblem::with_overrides(file.k, file.objective_enum()?, file.drug_overrides()))
}

fn cell_name(cfg: &RunConfig) -> String {
    format!("{}-{}-t{}", cfg.method.as_str(), cfg.objective.as_str(), cfg.t_stages)
}

/// Runs one cell and writes its per-replication CSV; returns the aggregate row.
fn run_cell(
    file: &FileConfig,
    cfg: &RunConfig,
    out: &Path,
    verbose: bool,
) -> Result<AggregateRow> {
    let p = problem(file)?;
    let specs = p.system_specs();
    let per_rep = max_gradient_budget(cfg, &specs)?;
    if per_rep > FEASIBLE_STEPS_PER_REP {
        bail!(
            "cell {} needs {per_rep} gradient steps per replication (cap {}); \
             reduce K, raise eps, or pick the asymptotic method",
            cell_name(cfg),
            FEASIBLE_STEPS_PER_REP
        );
    }
    log::info!(
        "running {} ({} replications, {per_rep} gradient steps/rep ceiling)",
        cell_name(cfg),
        cfg.replications
    );
    let truth = p.truth();
    let set = run_replications(cfg, &specs, &p, Some(&truth))?;
    if verbose {
        for report in &set.reports {
            print!("{}", render_run_report(report));
        }
    }
    fs::create_dir_all(out)?;
    let path = out.join(format!("replications-{}.csv", cell_name(cfg)));
    fs::write(&path, replications_csv(&set))?;
    println!(
        "{}: probability {:?}, mean gradient {:.4e}, mean function {:.4e} -> {}",
        cell_name(cfg),
        set.aggregate.probability,
        set.aggregate.gradient_mean,
        set.aggregate.function_mean,
        path.display()
    );
    Ok(AggregateRow::from_run_set(cfg.method, cfg.objective, cfg.t_stages, &set))
}

fn write_aggregate(rows: &[AggregateRow], out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join("aggregate.csv");
    fs::write(&path, aggregate_csv(rows))?;
    println!("aggregate -> {}", path.display());
    Ok(path)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let (file, cfg, out) = resolve(args)?;
    let row = run_cell(&file, &cfg, &out, args.verbose)?;
    write_aggregate(&[row], &out)?;
    Ok(())
}

fn cmd_bench_run(args: &BenchRunArgs) -> Result<()> {
    let (file, base, out) = resolve(&args.run)?;
    // Single cell when the user pinned method and stages; otherwise sweep the
    // grid over both methods and T = 1..=grid_stages, skipping infeasible
    // cells with a note.
    let single = args.run.method.is_some() && args.run.stages.is_some();
    let mut rows = Vec::new();
    if single {
        rows.push(run_cell(&file, &base, &out, args.run.verbose)?);
    } else {
        let p = problem(&file)?;
        let specs = p.system_specs();
        for method in [Method::Exact, Method::Asymptotic] {
            for t in 1..=args.grid_stages {
                let mut cfg = base.clone();
                cfg.method = method;
                cfg.t_stages = t;
                let per_rep = max_gradient_budget(&cfg, &specs)?;
                if per_rep > FEASIBLE_STEPS_PER_REP {
                    println!(
                        "skipping {}: {per_rep} gradient steps per replication exceeds the \
                         {FEASIBLE_STEPS_PER_REP} cap",
                        cell_name(&cfg)
                    );
                    continue;
                }
                rows.push(run_cell(&file, &cfg, &out, args.run.verbose)?);
            }
        }
    }
    if rows.is_empty() {
        bail!("no feasible cells in the requested grid");
    }
    write_aggregate(&rows, &out)?;
    Ok(())
}

fn cmd_truth(args: &TruthArgs) -> Result<()> {
    let mut file = load_config(args.config.as_deref())?;
    if let Some(o) = args.objective {
        file.objective = o.as_str().to_string();
    }
    let p = problem(&file)?;
    println!("objective: {}", p.objective.as_str());
    println!("x* = {} for every system", p.x_star());
    for (idx, v) in p.truth().iter().enumerate() {
        println!("system {}: h(x*) = {v}", idx + 1);
    }
    println!("eps-optimal set at eps = {}: {:?}", file.eps, p.eps_optimal_set(file.eps));
    Ok(())
}

fn cmd_tables(args: &TablesArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let rows = parse_aggregate_csv(&text).map_err(|e| anyhow::anyhow!(e))?;
    let mut md = String::new();
    for objective in [ObjectiveMode::Different, ObjectiveMode::Same] {
        md.push_str(&emit_tables_markdown(&rows, objective));
    }
    fs::create_dir_all(&args.out)?;
    let md_path = args.out.join("tables.md");
    fs::write(&md_path, &md)?;
    let csv_path = args.out.join("tables.csv");
    fs::write(&csv_path, aggregate_csv(&rows))?;
    println!("{md}");
    println!("tables -> {} and {}", md_path.display(), csv_path.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(args) => cmd_run(&args),
        Command::Bench(BenchCommand::Run(args)) => cmd_bench_run(&args),
        Command::Bench(BenchCommand::Truth(args)) => cmd_truth(&args),
        Command::Bench(BenchCommand::Tables(args)) => cmd_tables(&args),
    }
}
