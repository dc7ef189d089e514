//! `evotree` command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid flags or inputs, 3 when the
//! invalid-chromosome budget is exhausted.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use evotree::{
    emit_lp, evolve, load_scenarios, run_experiment, simulate_garch, write_scenarios, CenterStrategy,
    DistanceWeighting, EvolutionConfig, ExperimentSpec, GarchParams, InvalidHandling, ModelConfig, OperatorStructure,
    ScenarioPaths, ScenarioTree, TreeStructure,
};

#[derive(Parser)]
#[command(name = "evotree", version, about = "Evolutionary multi-stage scenario tree generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate GARCH(1,1) return paths and write them as CSV.
    Simulate(SimulateArgs),
    /// Evolve a scenario tree for a scenario file.
    Generate(GenerateArgs),
    /// Repeat runs per operator structure and write aggregated convergence CSVs.
    Experiment(ExperimentArgs),
    /// Write the deterministic-equivalent LP for a tree file.
    EmitLp(EmitLpArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of paths.
    #[arg(long = "s", default_value_t = 200)]
    paths: usize,
    /// Periods per path (stages 2..T).
    #[arg(long, default_value_t = 2)]
    horizon: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long)]
    omega: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    /// Initial conditional standard deviation; stationary level if omitted.
    #[arg(long)]
    sigma0: Option<f64>,
    /// Accept alpha + beta >= 1 (requires --sigma0).
    #[arg(long)]
    allow_nonstationary: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; standard output if omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioInput {
    /// Scenario CSV: one row per path, one column per stage.
    #[arg(long)]
    scenarios: PathBuf,
    /// The last CSV column holds path probabilities.
    #[arg(long)]
    prob_column: bool,
    /// Node counts per stage, e.g. 10,40.
    #[arg(long, default_value = "10,40")]
    structure: String,
}

#[derive(Args)]
struct EvolutionArgs {
    #[arg(long, default_value_t = 1000)]
    initial: usize,
    #[arg(long, default_value_t = 300)]
    population: usize,
    #[arg(long, default_value_t = 300)]
    iterations: usize,
    /// Genes touched per mutation.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// mean | median | extreme | mixture | random
    #[arg(long, default_value = "mean")]
    strategy: String,
    /// Seed of the random center strategy; defaults to --seed.
    #[arg(long)]
    strategy_seed: Option<u64>,
    /// unweighted | probability
    #[arg(long, default_value = "unweighted")]
    weighting: String,
    /// repair | discard
    #[arg(long, default_value = "repair")]
    invalid: String,
    /// Consecutive discards in a slot before repairing.
    #[arg(long, default_value_t = 32)]
    repair_after: usize,
    /// Discard budget per generation; 10 x population if omitted.
    #[arg(long)]
    max_invalid: Option<usize>,
}

impl EvolutionArgs {
    fn config(&self, ops: OperatorStructure, seed: u64) -> Result<EvolutionConfig> {
        let mut strategy: CenterStrategy = self.strategy.parse()?;
        if let CenterStrategy::Random { seed: s } = &mut strategy {
            *s = self.strategy_seed.unwrap_or(seed);
        }
        let invalid = match self.invalid.as_str() {
            "repair" => InvalidHandling::Repair { after: self.repair_after },
            "discard" => InvalidHandling::Discard,
            other => bail!("unknown --invalid mode {other:?}"),
        };
        let mut cfg = EvolutionConfig {
            iterations: self.iterations,
            m: self.m,
            ops,
            strategy,
            weighting: self.weighting.parse::<DistanceWeighting>()?,
            seed,
            invalid,
            ..EvolutionConfig::default().with_population(self.initial, self.population)
        };
        if let Some(budget) = self.max_invalid {
            cfg.max_invalid_retries = budget;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    input: ScenarioInput,
    #[command(flatten)]
    evolution: EvolutionArgs,
    /// Nine comma-separated operator percentages o1..o9.
    #[arg(long, default_value = "20,10,10,20,10,10,20,10,30")]
    ops: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tree.json")]
    tree_out: PathBuf,
    #[arg(long, default_value = "convergence.csv")]
    log_out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    input: ScenarioInput,
    #[command(flatten)]
    evolution: EvolutionArgs,
    /// Operator structure to compare; repeat the flag for several.
    #[arg(long = "ops", default_values_t = [String::from("20,10,10,20,10,10,20,10,30")])]
    ops: Vec<String>,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Base seed; repetition r uses seed + r.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON experiment spec; replaces --ops, --repetitions, --seed and the evolution flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "experiment")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EmitLpArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
    /// Budget per stage 1..T-1, comma-separated, e.g. 100,10.
    #[arg(long, default_value = "100")]
    budget: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    riskfree: f64,
    /// Free-text note written as an LP comment.
    #[arg(long)]
    note: Option<String>,
    /// Output LP file; standard output if omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Writes to a file, or to standard output when no path is given.
fn write_output(path: Option<&Path>, contents: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, contents).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(contents)?),
    }
}

fn load_input(input: &ScenarioInput) -> Result<(ScenarioPaths, TreeStructure)> {
    let sc = load_scenarios(&input.scenarios, input.prob_column)
        .with_context(|| format!("reading {}", input.scenarios.display()))?;
    let n: TreeStructure = input.structure.parse()?;
    n.check_scenarios(sc.len())?;
    if n.periods() != sc.periods() {
        bail!("structure {:?} has {} stages but the scenarios have {}", n.counts(), n.periods(), sc.periods());
    }
    Ok((sc, n))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let params = GarchParams {
        sigma0: args.sigma0,
        allow_nonstationary: args.allow_nonstationary,
        ..GarchParams::new(args.mu, args.omega, args.alpha, args.beta)
    };
    let sc = simulate_garch(&params, args.paths, args.horizon, args.seed)?;
    let mut buf = Vec::new();
    write_scenarios(&sc, &mut buf, false)?;
    write_output(args.out.as_deref(), &buf)?;
    eprintln!("s={} horizon={} seed={}", sc.len(), args.horizon, args.seed);
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let (sc, n) = load_input(&args.input)?;
    let ops: OperatorStructure = args.ops.parse()?;
    let cfg = args.evolution.config(ops, args.seed)?;
    let start = Instant::now();
    let out = evolve(&sc, &n, &cfg)?;
    let elapsed = start.elapsed();
    out.tree.save(&args.tree_out).with_context(|| format!("writing {}", args.tree_out.display()))?;
    fs::write(&args.log_out, out.log.to_csv()).with_context(|| format!("writing {}", args.log_out.display()))?;
    println!("best objective {}", out.objective);
    println!("nodes {} structure {:?}", out.tree.nodes.len(), n.counts());
    println!("wall time {:.3}s", elapsed.as_secs_f64());
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let (sc, n) = load_input(&args.input)?;
    let spec = match &args.spec {
        Some(path) => ExperimentSpec::from_json(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => {
            let structures = args.ops.iter().map(|o| o.parse()).collect::<evotree::Result<Vec<OperatorStructure>>>()?;
            let base = args.evolution.config(structures[0], args.seed)?;
            ExperimentSpec { repetitions: args.repetitions, structures, config: base, base_seed: args.seed }
        }
    };
    let start = Instant::now();
    let results = run_experiment(&sc, &n, &spec)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    for r in &results {
        let path = args.out_dir.join(format!("{}.csv", r.file_stem()));
        fs::write(&path, r.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        println!("{} mean final best {} -> {}", r.ops, r.mean_final_best(), path.display());
    }
    println!("wall time {:.3}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn emit(args: EmitLpArgs) -> Result<()> {
    if !args.tree.exists() {
        bail!("tree file {} does not exist", args.tree.display());
    }
    let tree = ScenarioTree::load(&args.tree).with_context(|| format!("reading {}", args.tree.display()))?;
    let budget = args
        .budget
        .split(',')
        .map(|b| b.trim().parse::<f64>().with_context(|| format!("budget entry {b:?}")))
        .collect::<Result<Vec<_>>>()?;
    let cfg = ModelConfig { kappa: args.kappa, budget, riskfree_rate: args.riskfree };
    let note = args.note.unwrap_or_else(|| format!("tree {}", args.tree.display()));
    let lp = emit_lp(&tree, &cfg, &note)?;
    write_output(args.out.as_deref(), lp.to_lp_string().as_bytes())?;
    let counts = lp.counts();
    eprintln!("variables {} constraints {}", counts.variables, counts.constraints);
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<evotree::Error>() {
        Some(evotree::Error::TooManyInvalid { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Generate(a) => generate(a),
        Command::Experiment(a) => experiment(a),
        Command::EmitLp(a) => emit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
