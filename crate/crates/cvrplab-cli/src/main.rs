//! Command line front end for the cvrplab library.
//!
//! Each subcommand wraps one library workflow: generating instances,
//! running constructive and local-search solvers, decoding with a
//! policy, random reconstruction, toy network training, the exact
//! oracle, and the benchmark harness. Tables go to stdout or, with
//! `--out`, to files; progress and warnings go to stderr.
//!
//! Exit codes: 0 on success, 2 when some runs failed but a result
//! table was still produced, 1 on bad arguments or hard errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use cvrplab::augment::AugmentKind;
use cvrplab::bench::{
    emit_plot_data, plot_points_from_rows, plot_series_csv, run_experiment, BenchMethod,
    BenchPolicy, ExperimentOutcome, ExperimentSpec, InstanceSource, ReferenceSource,
};
use cvrplab::construct::Method;
use cvrplab::decode::{DistanceHeuristicPolicy, Policy, Strategy};
use cvrplab::improve::{local_search, SearchConfig};
use cvrplab::instances::{generate, read_instance, write_instance, GenConfig};
use cvrplab::model::Instance;
use cvrplab::neural::{
    load_checkpoint, reinforce_step, save_checkpoint, supervised_step, Dims, NeuralPolicy,
    PolicyParams,
};
use cvrplab::oracle::{
    brute_force_optimum, enumerate_trajectories, BRUTE_FORCE_LIMIT, ENUMERATION_LIMIT,
};
use cvrplab::rrc::{rrc_run, trace_csv, AcceptRule, RrcConfig};
use cvrplab::seed;

#[derive(Parser)]
#[command(
    name = "cvrplab",
    version,
    about = "Capacitated vehicle routing: construction, local search, decoding, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances and write them as files.
    Gen(GenArgs),
    /// Run constructors, optionally plus local search, on instance files.
    Solve(SolveArgs),
    /// Decode one instance with a policy.
    Decode(DecodeArgs),
    /// Improve a solution by rip-and-reconstruct.
    Rrc(RrcArgs),
    /// Train the toy policy network and save a checkpoint.
    TrainToy(TrainArgs),
    /// Find the exact optimum of a small instance by brute force.
    Oracle(OracleArgs),
    /// Run a method-by-instance benchmark matrix.
    Bench(BenchArgs),
}

/// Serialization format for result tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

/// Sampling strategy names accepted on the command line.
#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    Argmax,
    Softmax,
    Gumbel,
    Epsilon,
}

impl StrategyArg {
    fn to_strategy(self, temperature: f64, epsilon: f64) -> Strategy {
        match self {
            StrategyArg::Argmax => Strategy::Argmax,
            StrategyArg::Softmax => Strategy::Softmax,
            StrategyArg::Gumbel => Strategy::Gumbel { temperature },
            StrategyArg::Epsilon => Strategy::EpsilonGreedy { epsilon },
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Instance sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Instances per size.
    #[arg(long, default_value_t = 1)]
    per_size: usize,
    /// Vehicle capacity override; defaults to the size-based convention.
    #[arg(long)]
    capacity: Option<f64>,
    /// Directory the instance files are written into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file; repeat for several.
    #[arg(long = "instance", required = true)]
    instances: Vec<PathBuf>,
    /// Constructor names, comma separated; all seven when omitted.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Follow every constructor with best-improvement local search.
    #[arg(long)]
    improve: bool,
    /// Reference costs: "oracle" or a name,cost CSV path.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the result table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct DecodeArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Argmax)]
    strategy: StrategyArg,
    /// Gumbel temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Exploration rate for the epsilon strategy.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Rollout starts, clamped to the instance size.
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Beam width; 0 decodes with independent rollouts instead.
    #[arg(long, default_value_t = 0)]
    beam: usize,
    /// Augmentation family: none, fold2, fold4, fold8_flip, fold8_rotation.
    #[arg(long, default_value = "none")]
    augment: String,
    /// Policy checkpoint; the distance heuristic is used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Distance heuristic sharpness.
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct RrcArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    /// Acceptance rule: greedy or sa.
    #[arg(long, default_value = "sa")]
    rule: String,
    /// Smallest segment span to rip out.
    #[arg(long, default_value_t = 4)]
    seg_min: usize,
    /// Largest segment span; the library default caps it when omitted.
    #[arg(long)]
    seg_max: Option<usize>,
    /// Starting temperature; 1% of the initial cost when omitted.
    #[arg(long)]
    t0: Option<f64>,
    /// Geometric cooling factor per iteration.
    #[arg(long, default_value_t = 0.99)]
    cooling: f64,
    /// Reconstruction sampling strategy.
    #[arg(long, value_enum, default_value_t = StrategyArg::Softmax)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Constructor for the initial tour.
    #[arg(long, default_value = "nearest_seq")]
    init: String,
    /// Policy checkpoint; the distance heuristic is used when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    /// Write the per-iteration acceptance trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

/// Toy network training mode.
#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrainMode {
    Supervised,
    Reinforce,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: TrainMode,
    /// Customer count of the training instances.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Number of training instances.
    #[arg(long, default_value_t = 8)]
    instances: usize,
    /// Passes over the data (supervised) or sampled batches (reinforce).
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Rollout starts per reinforce batch, clamped to the instance size.
    #[arg(long, default_value_t = 8)]
    starts: usize,
    /// Embedding width.
    #[arg(long, default_value_t = 16)]
    embed: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Decoder layers.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Feed-forward hidden width.
    #[arg(long, default_value_t = 32)]
    ff: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint destination.
    #[arg(long)]
    out: PathBuf,
    /// Format of the loss log printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct OracleArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
    /// Also count the distance policy's reachable trajectories.
    #[arg(long)]
    trajectories: bool,
    /// Distance heuristic sharpness for trajectory enumeration.
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct BenchArgs {
    /// Instance sizes to generate, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "dir")]
    sizes: Vec<usize>,
    /// Generated instances per size.
    #[arg(long, default_value_t = 2)]
    per_size: usize,
    /// Capacity override for generated instances.
    #[arg(long)]
    capacity: Option<f64>,
    /// Read instances from this directory instead of generating.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Method ids, comma separated, e.g. savings_par, ls_insertion,
    /// argmax_pomo8_none, beam4_pomo8_fold2, rrc100_sa.
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    /// Reference costs: "oracle" or a name,cost CSV path.
    #[arg(long)]
    reference: Option<String>,
    /// Repetitions per instance and method.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Policy checkpoint for decode methods; distance heuristic otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Distance heuristic sharpness.
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    /// Also write per-method plot series files (needs --out).
    #[arg(long)]
    plots: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for results, summary, and solution tables.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let failed = e.use_stderr();
            let _ = e.print();
            return if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Solve(args) => run_solve(args),
        Command::Decode(args) => run_decode(args),
        Command::Rrc(args) => run_rrc(args),
        Command::TrainToy(args) => run_train(args),
        Command::Oracle(args) => run_oracle(args),
        Command::Bench(args) => run_bench(args),
    }
}

fn run_gen(args: GenArgs) -> Result<ExitCode> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut rows = Vec::new();
    for &n in &args.sizes {
        for k in 0..args.per_size {
            let mut config = GenConfig::for_size(n, seed::derive(args.seed, &[n as u64, k as u64]));
            if let Some(capacity) = args.capacity {
                config.capacity = capacity;
            }
            let name = format!("gen-n{n}-{k}");
            config.name = Some(name.clone());
            let instance = generate(&config)?;
            let path = args.out.join(format!("{name}.vrp"));
            write_instance(&instance, &path)?;
            rows.push((name, n, config.capacity, path));
        }
    }
    let table = match args.format {
        Format::Csv => {
            let mut out = String::from("instance,n,capacity,path\n");
            for (name, n, capacity, path) in &rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    csv_field(name),
                    n,
                    capacity,
                    csv_field(&path.display().to_string())
                );
            }
            out
        }
        Format::Jsonl => rows
            .iter()
            .map(|(name, n, capacity, path)| {
                let line = json!({
                    "instance": name,
                    "n": n,
                    "capacity": capacity,
                    "path": path.display().to_string(),
                });
                format!("{line}\n")
            })
            .collect(),
    };
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn run_solve(args: SolveArgs) -> Result<ExitCode> {
    let instances = read_instances(&args.instances)?;
    let constructors: Vec<Method> = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods
            .iter()
            .map(|name| {
                Method::parse(name).with_context(|| format!("unknown constructor {name}"))
            })
            .collect::<Result<_>>()?
    };
    let methods = constructors
        .into_iter()
        .map(|m| {
            if args.improve {
                BenchMethod::LocalSearch(m)
            } else {
                BenchMethod::Construct(m)
            }
        })
        .collect();
    let spec = ExperimentSpec {
        source: InstanceSource::Explicit(instances),
        methods,
        reference: parse_reference(args.reference.as_deref()),
        repetitions: 1,
        seed: args.seed,
    };
    let outcome = run_experiment(&spec, &BenchPolicy::default())?;
    write_table(args.out.as_deref(), &rows_table(&outcome, args.format))?;
    report_failures(&outcome);
    Ok(exit_for(outcome.failures))
}

fn run_decode(args: DecodeArgs) -> Result<ExitCode> {
    let instance = read_instance(&args.instance)?;
    let kind = AugmentKind::parse(&args.augment)
        .with_context(|| format!("unknown augmentation {}", args.augment))?;
    let strategy = args.strategy.to_strategy(args.temperature, args.epsilon);
    let params = load_params(args.checkpoint.as_deref())?;
    let policy = bench_policy(&params, args.scale);
    let method = if args.beam > 0 {
        BenchMethod::Beam {
            beam_size: args.beam,
            n_starts: args.starts,
            augment: kind,
        }
    } else {
        BenchMethod::Decode {
            strategy,
            n_starts: args.starts,
            augment: kind,
        }
    };
    let spec = ExperimentSpec {
        source: InstanceSource::Explicit(vec![instance]),
        methods: vec![method],
        reference: ReferenceSource::None,
        repetitions: 1,
        seed: args.seed,
    };
    let outcome = run_experiment(&spec, &policy)?;
    write_table(args.out.as_deref(), &rows_table(&outcome, args.format))?;
    for record in &outcome.solutions {
        let tokens: Vec<String> = record.solution.to_flat().iter().map(usize::to_string).collect();
        eprintln!("tour {}", tokens.join(" "));
    }
    report_failures(&outcome);
    Ok(exit_for(outcome.failures))
}

fn run_rrc(args: RrcArgs) -> Result<ExitCode> {
    let instance = read_instance(&args.instance)?;
    let rule = AcceptRule::parse(&args.rule)
        .with_context(|| format!("unknown acceptance rule {}", args.rule))?;
    let init =
        Method::parse(&args.init).with_context(|| format!("unknown constructor {}", args.init))?;
    let params = load_params(args.checkpoint.as_deref())?;
    let mut config = RrcConfig::new(args.iterations, args.seed);
    config.seg_min = args.seg_min;
    config.seg_max = args.seg_max;
    config.rule = rule;
    config.t0 = args.t0;
    config.cooling = args.cooling;
    config.strategy = args.strategy.to_strategy(args.temperature, args.epsilon);
    let initial = init.build(&instance);
    let policy: Box<dyn Policy> = match &params {
        Some(p) => Box::new(NeuralPolicy::new(p, &instance)?),
        None => Box::new(DistanceHeuristicPolicy { scale: args.scale }),
    };
    let outcome = rrc_run(policy.as_ref(), &instance, &initial, &config)?;
    if let Some(path) = &args.trace {
        fs::write(path, trace_csv(&outcome.trace))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let accepted = outcome.trace.iter().filter(|r| r.accepted).count();
    let table = match args.format {
        Format::Csv => format!(
            "instance,iterations,rule,initial_cost,best_cost,accepted\n{},{},{},{},{},{}\n",
            csv_field(instance.name()),
            args.iterations,
            rule.name(),
            initial.cost(),
            outcome.best.cost(),
            accepted,
        ),
        Format::Jsonl => {
            let line = json!({
                "instance": instance.name(),
                "iterations": args.iterations,
                "rule": rule.name(),
                "initial_cost": initial.cost(),
                "best_cost": outcome.best.cost(),
                "accepted": accepted,
            });
            format!("{line}\n")
        }
    };
    write_table(args.out.as_deref(), &table)?;
    let tokens: Vec<String> = outcome.best.to_flat().iter().map(usize::to_string).collect();
    eprintln!("tour {}", tokens.join(" "));
    Ok(ExitCode::SUCCESS)
}

fn run_train(args: TrainArgs) -> Result<ExitCode> {
    if args.instances == 0 || args.steps == 0 {
        bail!("training needs at least one instance and one step");
    }
    let dims = Dims {
        embed: args.embed,
        heads: args.heads,
        decoder_layers: args.layers,
        ff_hidden: args.ff,
    };
    let mut params = PolicyParams::seeded(dims, seed::derive(args.seed, &[0]))?;
    let instances: Vec<Instance> = (0..args.instances)
        .map(|i| {
            let mut config =
                GenConfig::for_size(args.n, seed::derive(args.seed, &[1, i as u64]));
            config.name = Some(format!("train-{i}"));
            generate(&config)
        })
        .collect::<Result<_, _>>()?;
    let mut log = Vec::new();
    match args.mode {
        TrainMode::Supervised => {
            let targets: Vec<Vec<usize>> = instances
                .iter()
                .map(|inst| {
                    let built = Method::CheapestInsertion.build(inst);
                    local_search(inst, &built, &SearchConfig::default())
                        .map(|o| o.solution.to_flat())
                })
                .collect::<Result<_, _>>()?;
            for step in 0..args.steps {
                let mut total = 0.0;
                for (inst, tokens) in instances.iter().zip(&targets) {
                    let outcome = supervised_step(&params, inst, tokens)?;
                    params.sgd_step(&outcome.grads, args.lr);
                    total += outcome.loss;
                }
                log.push((step, total / instances.len() as f64, None));
            }
        }
        TrainMode::Reinforce => {
            let starts = args.starts.clamp(1, args.n);
            for step in 0..args.steps {
                let inst = &instances[step % instances.len()];
                let outcome =
                    reinforce_step(&params, inst, starts, seed::derive(args.seed, &[2, step as u64]))?;
                params.sgd_step(&outcome.grads, args.lr);
                let best = outcome.rewards.iter().cloned().fold(f64::INFINITY, f64::min);
                log.push((step, outcome.baseline, Some(best)));
            }
        }
    }
    save_checkpoint(&params, &args.out)?;
    let table = match args.format {
        Format::Csv => {
            let mut out = match args.mode {
                TrainMode::Supervised => String::from("step,mean_loss\n"),
                TrainMode::Reinforce => String::from("step,mean_cost,best_cost\n"),
            };
            for (step, value, best) in &log {
                match best {
                    Some(b) => {
                        let _ = writeln!(out, "{step},{value},{b}");
                    }
                    None => {
                        let _ = writeln!(out, "{step},{value}");
                    }
                }
            }
            out
        }
        Format::Jsonl => log
            .iter()
            .map(|(step, value, best)| {
                let line = match best {
                    Some(b) => json!({"step": step, "mean_cost": value, "best_cost": b}),
                    None => json!({"step": step, "mean_loss": value}),
                };
                format!("{line}\n")
            })
            .collect(),
    };
    print!("{table}");
    eprintln!("checkpoint written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_oracle(args: OracleArgs) -> Result<ExitCode> {
    let instance = read_instance(&args.instance)?;
    let result = brute_force_optimum(&instance, BRUTE_FORCE_LIMIT)?;
    let trajectories = if args.trajectories {
        let policy = DistanceHeuristicPolicy { scale: args.scale };
        Some(enumerate_trajectories(&policy, &instance, ENUMERATION_LIMIT)?.len())
    } else {
        None
    };
    let tokens: Vec<String> = result.solution.to_flat().iter().map(usize::to_string).collect();
    let table = match args.format {
        Format::Csv => {
            let mut header = String::from("instance,n,cost,solutions");
            let mut row = format!(
                "{},{},{},{}",
                csv_field(instance.name()),
                instance.n(),
                result.solution.cost(),
                result.enumerated,
            );
            if let Some(count) = trajectories {
                header.push_str(",trajectories");
                let _ = write!(row, ",{count}");
            }
            header.push_str(",tokens");
            let _ = write!(row, ",{}", tokens.join(" "));
            format!("{header}\n{row}\n")
        }
        Format::Jsonl => {
            let mut line = json!({
                "instance": instance.name(),
                "n": instance.n(),
                "cost": result.solution.cost(),
                "solutions": result.enumerated,
                "tokens": result.solution.to_flat(),
            });
            if let Some(count) = trajectories {
                line["trajectories"] = json!(count);
            }
            format!("{line}\n")
        }
    };
    write_table(args.out.as_deref(), &table)?;
    Ok(ExitCode::SUCCESS)
}

fn run_bench(args: BenchArgs) -> Result<ExitCode> {
    let source = match &args.dir {
        Some(dir) => InstanceSource::Directory(dir.clone()),
        None => {
            if args.sizes.is_empty() {
                bail!("either --sizes or --dir is required");
            }
            InstanceSource::Generate {
                sizes: args.sizes.clone(),
                per_size: args.per_size,
                capacity: args.capacity,
            }
        }
    };
    let methods = args
        .methods
        .iter()
        .map(|id| BenchMethod::parse(id).with_context(|| format!("unknown method id {id}")))
        .collect::<Result<_>>()?;
    let params = load_params(args.checkpoint.as_deref())?;
    let policy = bench_policy(&params, args.scale);
    let spec = ExperimentSpec {
        source,
        methods,
        reference: parse_reference(args.reference.as_deref()),
        repetitions: args.reps,
        seed: args.seed,
    };
    let outcome = run_experiment(&spec, &policy)?;
    let ext = match args.format {
        Format::Csv => "csv",
        Format::Jsonl => "jsonl",
    };
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join(format!("results.{ext}")), rows_table(&outcome, args.format))?;
            fs::write(dir.join(format!("summary.{ext}")), summary_table(&outcome, args.format))?;
            fs::write(dir.join("solutions.csv"), outcome.solutions_csv())?;
            if args.plots {
                let (points, warnings) = plot_points_from_rows(&outcome.rows);
                for warning in warnings {
                    eprintln!("warning: {warning}");
                }
                for series in emit_plot_data(&points) {
                    fs::write(
                        dir.join(format!("plot_{}.csv", series.group)),
                        plot_series_csv(&series),
                    )?;
                }
            }
            print!("{}", summary_table(&outcome, args.format));
        }
        None => {
            if args.plots {
                bail!("--plots needs --out");
            }
            print!("{}", rows_table(&outcome, args.format));
        }
    }
    report_failures(&outcome);
    Ok(exit_for(outcome.failures))
}

fn read_instances(paths: &[PathBuf]) -> Result<Vec<Instance>> {
    paths
        .iter()
        .map(|p| read_instance(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn load_params(path: Option<&Path>) -> Result<Option<PolicyParams>> {
    path.map(|p| load_checkpoint(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn bench_policy(params: &Option<PolicyParams>, scale: f64) -> BenchPolicy<'_> {
    match params {
        Some(p) => BenchPolicy::Neural(p),
        None => BenchPolicy::Distance(DistanceHeuristicPolicy { scale }),
    }
}

fn parse_reference(raw: Option<&str>) -> ReferenceSource {
    match raw {
        None => ReferenceSource::None,
        Some("oracle") => ReferenceSource::Oracle,
        Some(path) => ReferenceSource::Csv(PathBuf::from(path)),
    }
}

fn rows_table(outcome: &ExperimentOutcome, format: Format) -> String {
    match format {
        Format::Csv => outcome.rows_csv(),
        Format::Jsonl => outcome.rows_jsonl(),
    }
}

fn summary_table(outcome: &ExperimentOutcome, format: Format) -> String {
    match format {
        Format::Csv => outcome.summary_csv(),
        Format::Jsonl => outcome.summary_jsonl(),
    }
}

fn write_table(out: Option<&Path>, table: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, table).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn report_failures(outcome: &ExperimentOutcome) {
    for row in &outcome.rows {
        if let Some(error) = &row.error {
            eprintln!(
                "warning: {} on {} rep {} failed: {error}",
                row.method, row.instance, row.rep
            );
        }
    }
}

fn exit_for(failures: usize) -> ExitCode {
    if failures > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}
