//! Experiment harness: runs a matrix of solving methods over a set of
//! instances, reports costs and optimality gaps, and emits deterministic
//! CSV, JSONL, and plot-ready series.
//!
//! Every run's seed is derived from the root seed and the run's
//! (instance index, method index, repetition) triple, so a fixed root
//! seed reproduces the whole table byte for byte. Wall-clock timings
//! are kept on the in-memory rows but never serialized, which is what
//! keeps the emitted files reproducible. Each successful run's solution
//! is persisted as a flat token line so reported costs can be
//! re-verified after the fact.

use crate::augment::{augment_solve, AugmentKind};
use crate::construct::Method;
use crate::decode::{beam_search, pomo_rollout, DistanceHeuristicPolicy, Policy, Strategy};
use crate::improve::{local_search, SearchConfig};
use crate::instances::{generate, load_references, read_instance, GenConfig, InstanceError, ReferenceSet};
use crate::model::{optimality_gap, Instance, ModelError, Solution};
use crate::neural::{NeuralPolicy, PolicyParams};
use crate::oracle::{brute_force_optimum, BRUTE_FORCE_LIMIT};
use crate::rrc::{rrc_run, AcceptRule, RrcConfig};
use crate::seed;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where the instances come from.
#[derive(Debug, Clone)]
pub enum InstanceSource {
    /// Freshly generated: `per_size` instances of each listed size.
    Generate {
        sizes: Vec<usize>,
        per_size: usize,
        capacity: Option<f64>,
    },
    /// Every readable instance file in a directory, in name order.
    Directory(PathBuf),
    /// Instances the caller already has.
    Explicit(Vec<Instance>),
}

impl InstanceSource {
    fn resolve(&self, root_seed: u64) -> Result<Vec<Instance>, BenchError> {
        match self {
            InstanceSource::Generate {
                sizes,
                per_size,
                capacity,
            } => {
                if sizes.is_empty() || *per_size == 0 {
                    return Err(BenchError::BadSpec(
                        "generation needs at least one size and one instance per size".into(),
                    ));
                }
                let mut instances = Vec::new();
                for &n in sizes {
                    for k in 0..*per_size {
                        let mut config =
                            GenConfig::for_size(n, seed::derive(root_seed, &[n as u64, k as u64]));
                        if let Some(q) = capacity {
                            config.capacity = *q;
                        }
                        config.name = Some(format!("gen-n{n}-{k}"));
                        instances.push(generate(&config)?);
                    }
                }
                Ok(instances)
            }
            InstanceSource::Directory(dir) => {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                    .filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.is_file())
                    .collect();
                paths.sort();
                if paths.is_empty() {
                    return Err(BenchError::BadSpec(format!(
                        "no instance files in {}",
                        dir.display()
                    )));
                }
                paths
                    .iter()
                    .map(|p| read_instance(p).map_err(BenchError::from))
                    .collect()
            }
            InstanceSource::Explicit(instances) => {
                if instances.is_empty() {
                    return Err(BenchError::BadSpec("no instances given".into()));
                }
                Ok(instances.clone())
            }
        }
    }
}

/// Where reference costs for gap reporting come from.
#[derive(Debug, Clone)]
pub enum ReferenceSource {
    None,
    /// Exact optima from the brute-force oracle; instances must be small
    /// enough for it.
    Oracle,
    /// A `name,cost` CSV.
    Csv(PathBuf),
}

/// One column of the method matrix.
#[derive(Debug, Clone)]
pub enum BenchMethod {
    Construct(Method),
    /// Constructor followed by local search with default settings.
    LocalSearch(Method),
    /// Multi-start decoding, optionally under augmentation. Starts are
    /// clamped to the instance size.
    Decode {
        strategy: Strategy,
        n_starts: usize,
        augment: AugmentKind,
    },
    Beam {
        beam_size: usize,
        n_starts: usize,
        augment: AugmentKind,
    },
    /// Random reconstruction from a nearest-neighbor start.
    Rrc {
        iterations: usize,
        rule: AcceptRule,
    },
}

impl BenchMethod {
    /// Parses a method id as produced by [`id`](Self::id). Decode and
    /// beam ids look like `argmax_pomo8_none` and `beam4_pomo8_fold2`;
    /// strategies with parameters get defaults (gumbel temperature 1,
    /// epsilon 0.1). Reconstruction ids look like `rrc100_sa`.
    pub fn parse(id: &str) -> Option<BenchMethod> {
        if let Some(m) = Method::parse(id) {
            return Some(BenchMethod::Construct(m));
        }
        if let Some(rest) = id.strip_prefix("ls_") {
            return Method::parse(rest).map(BenchMethod::LocalSearch);
        }
        if let Some(rest) = id.strip_prefix("rrc") {
            let (iters, rule) = rest.split_once('_')?;
            return Some(BenchMethod::Rrc {
                iterations: iters.parse().ok()?,
                rule: AcceptRule::parse(rule)?,
            });
        }
        if let Some(rest) = id.strip_prefix("beam") {
            let mut parts = rest.splitn(3, '_');
            let beam_size = parts.next()?.parse().ok()?;
            let n_starts = parts.next()?.strip_prefix("pomo")?.parse().ok()?;
            let augment = AugmentKind::parse(parts.next()?)?;
            return Some(BenchMethod::Beam {
                beam_size,
                n_starts,
                augment,
            });
        }
        let strategies = [
            Strategy::Argmax,
            Strategy::Softmax,
            Strategy::Gumbel { temperature: 1.0 },
            Strategy::EpsilonGreedy { epsilon: 0.1 },
        ];
        for strategy in strategies {
            let prefix = format!("{}_pomo", strategy.name());
            if let Some(rest) = id.strip_prefix(&prefix) {
                let (n, augment) = rest.split_once('_')?;
                return Some(BenchMethod::Decode {
                    strategy,
                    n_starts: n.parse().ok()?,
                    augment: AugmentKind::parse(augment)?,
                });
            }
        }
        None
    }

    /// Stable identifier used in result tables.
    pub fn id(&self) -> String {
        match self {
            BenchMethod::Construct(m) => m.name().to_string(),
            BenchMethod::LocalSearch(m) => format!("ls_{}", m.name()),
            BenchMethod::Decode {
                strategy,
                n_starts,
                augment,
            } => format!("{}_pomo{}_{}", strategy.name(), n_starts, augment.name()),
            BenchMethod::Beam {
                beam_size,
                n_starts,
                augment,
            } => format!("beam{}_pomo{}_{}", beam_size, n_starts, augment.name()),
            BenchMethod::Rrc { iterations, rule } => {
                format!("rrc{}_{}", iterations, rule.name())
            }
        }
    }
}

/// The policy used by decode, beam, and rrc methods.
#[derive(Debug, Clone, Copy)]
pub enum BenchPolicy<'a> {
    Distance(DistanceHeuristicPolicy),
    Neural(&'a PolicyParams),
}

impl Default for BenchPolicy<'_> {
    fn default() -> Self {
        BenchPolicy::Distance(DistanceHeuristicPolicy::default())
    }
}

impl<'a> BenchPolicy<'a> {
    fn build(&self, instance: &Instance) -> Result<Box<dyn Policy + 'a>, String> {
        match self {
            BenchPolicy::Distance(p) => Ok(Box::new(*p)),
            BenchPolicy::Neural(params) => NeuralPolicy::new(params, instance)
                .map(|p| Box::new(p) as Box<dyn Policy + 'a>)
                .map_err(|e| e.to_string()),
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: InstanceSource,
    pub methods: Vec<BenchMethod>,
    pub reference: ReferenceSource,
    pub repetitions: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<(), BenchError> {
        if self.methods.is_empty() {
            return Err(BenchError::BadSpec("method matrix is empty".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchError::BadSpec("repetitions must be at least 1".into()));
        }
        Ok(())
    }
}

/// One run of one method on one instance.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub instance: String,
    pub n: usize,
    pub method: String,
    pub rep: usize,
    pub seed: u64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Wall time of the run; in-memory only, never serialized, so
    /// emitted tables stay byte-reproducible.
    #[serde(skip)]
    pub wall: std::time::Duration,
}

/// The persisted solution of one successful run.
#[derive(Debug, Clone)]
pub struct SolutionRecord {
    pub instance: String,
    pub method: String,
    pub rep: usize,
    pub solution: Solution,
}

/// Per-method aggregate over successful runs.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub runs: usize,
    pub errors: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_gap_percent: Option<f64>,
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub solutions: Vec<SolutionRecord>,
    pub summary: Vec<SummaryRow>,
    pub failures: usize,
}

fn run_one(
    instance: &Instance,
    method: &BenchMethod,
    policy: &BenchPolicy,
    run_seed: u64,
) -> Result<Solution, String> {
    match method {
        BenchMethod::Construct(m) => Ok(m.build(instance)),
        BenchMethod::LocalSearch(m) => {
            let start = m.build(instance);
            local_search(instance, &start, &SearchConfig::default())
                .map(|o| o.solution)
                .map_err(|e| e.to_string())
        }
        BenchMethod::Decode {
            strategy,
            n_starts,
            augment,
        } => {
            let starts = (*n_starts).clamp(1, instance.n());
            augment_solve(instance, *augment, |inst| {
                let bound = policy.build(inst)?;
                pomo_rollout(bound.as_ref(), inst, starts, *strategy, run_seed)
                    .map(|o| o.best().solution.clone())
                    .map_err(|e| e.to_string())
            })
            .map(|o| o.best)
            .map_err(|e| e.to_string())
        }
        BenchMethod::Beam {
            beam_size,
            n_starts,
            augment,
        } => {
            let starts = (*n_starts).clamp(1, instance.n());
            augment_solve(instance, *augment, |inst| {
                let bound = policy.build(inst)?;
                beam_search(bound.as_ref(), inst, starts, *beam_size)
                    .map(|o| o.best().solution.clone())
                    .map_err(|e| e.to_string())
            })
            .map(|o| o.best)
            .map_err(|e| e.to_string())
        }
        BenchMethod::Rrc { iterations, rule } => {
            let initial = Method::NearestSequential.build(instance);
            let bound = policy.build(instance)?;
            let config = RrcConfig {
                rule: *rule,
                ..RrcConfig::new(*iterations, run_seed)
            };
            rrc_run(bound.as_ref(), instance, &initial, &config)
                .map(|o| o.best)
                .map_err(|e| e.to_string())
        }
    }
}

/// Runs the whole matrix sequentially. Failed runs become rows with
/// error status; only a broken spec aborts. Rows are sorted by
/// (instance, method, rep) before being returned.
pub fn run_experiment(
    spec: &ExperimentSpec,
    policy: &BenchPolicy,
) -> Result<ExperimentOutcome, BenchError> {
    spec.validate()?;
    let instances = spec.source.resolve(spec.seed)?;
    let references: ReferenceSet = match &spec.reference {
        ReferenceSource::None => ReferenceSet::default(),
        ReferenceSource::Oracle => {
            if let Some(big) = instances.iter().find(|i| i.n() > BRUTE_FORCE_LIMIT) {
                return Err(BenchError::BadSpec(format!(
                    "oracle reference needs n <= {BRUTE_FORCE_LIMIT}, instance {} has n = {}",
                    big.name(),
                    big.n()
                )));
            }
            let mut set = ReferenceSet::default();
            for instance in &instances {
                let optimum = brute_force_optimum(instance, BRUTE_FORCE_LIMIT)
                    .map_err(|e| BenchError::BadSpec(e.to_string()))?;
                set.insert(instance.name(), optimum.solution.cost());
            }
            set
        }
        ReferenceSource::Csv(path) => load_references(path)?.0,
    };
    let mut rows = Vec::new();
    let mut solutions = Vec::new();
    let mut failures = 0;
    for (ii, instance) in instances.iter().enumerate() {
        for (mi, method) in spec.methods.iter().enumerate() {
            for rep in 0..spec.repetitions {
                let run_seed =
                    seed::derive(spec.seed, &[ii as u64, mi as u64, rep as u64]);
                let started = std::time::Instant::now();
                let outcome = run_one(instance, method, policy, run_seed);
                let wall = started.elapsed();
                match outcome {
                    Ok(solution) => {
                        let cost = solution.cost();
                        let gap_percent = references
                            .get(instance.name())
                            .and_then(|r| optimality_gap(cost, r).ok())
                            .map(|g| g.gap_percent);
                        rows.push(ResultRow {
                            instance: instance.name().to_string(),
                            n: instance.n(),
                            method: method.id(),
                            rep,
                            seed: run_seed,
                            status: "ok",
                            cost: Some(cost),
                            gap_percent,
                            error: None,
                            wall,
                        });
                        solutions.push(SolutionRecord {
                            instance: instance.name().to_string(),
                            method: method.id(),
                            rep,
                            solution,
                        });
                    }
                    Err(message) => {
                        failures += 1;
                        rows.push(ResultRow {
                            instance: instance.name().to_string(),
                            n: instance.n(),
                            method: method.id(),
                            rep,
                            seed: run_seed,
                            status: "error",
                            cost: None,
                            gap_percent: None,
                            error: Some(message),
                            wall,
                        });
                    }
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        a.instance
            .cmp(&b.instance)
            .then_with(|| a.method.cmp(&b.method))
            .then(a.rep.cmp(&b.rep))
    });
    solutions.sort_by(|a, b| {
        a.instance
            .cmp(&b.instance)
            .then_with(|| a.method.cmp(&b.method))
            .then(a.rep.cmp(&b.rep))
    });
    let summary = summarize(&rows);
    Ok(ExperimentOutcome {
        rows,
        solutions,
        summary,
        failures,
    })
}

fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut by_method: BTreeMap<&str, (usize, usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let entry = by_method.entry(&row.method).or_default();
        entry.0 += 1;
        if row.status == "error" {
            entry.1 += 1;
        }
        if let Some(cost) = row.cost {
            entry.2.push(cost);
        }
        if let Some(gap) = row.gap_percent {
            entry.3.push(gap);
        }
    }
    by_method
        .into_iter()
        .map(|(method, (runs, errors, costs, gaps))| SummaryRow {
            method: method.to_string(),
            runs,
            errors,
            mean_cost: mean(&costs),
            mean_gap_percent: mean(&gaps),
        })
        .collect()
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentOutcome {
    /// Result table as CSV, one row per run.
    pub fn rows_csv(&self) -> String {
        let mut out =
            String::from("instance,n,method,rep,seed,status,cost,gap_percent,error\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                csv_field(&row.instance),
                row.n,
                csv_field(&row.method),
                row.rep,
                row.seed,
                row.status,
                opt_num(row.cost),
                opt_num(row.gap_percent),
                csv_field(row.error.as_deref().unwrap_or("")),
            ));
        }
        out
    }

    /// Result table as JSON lines.
    pub fn rows_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|row| serde_json::to_string(row).unwrap())
            .map(|mut line| {
                line.push('\n');
                line
            })
            .collect()
    }

    /// Per-method aggregates as CSV.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,runs,errors,mean_cost,mean_gap_percent\n");
        for row in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&row.method),
                row.runs,
                row.errors,
                opt_num(row.mean_cost),
                opt_num(row.mean_gap_percent),
            ));
        }
        out
    }

    /// Per-method aggregates as JSON lines.
    pub fn summary_jsonl(&self) -> String {
        self.summary
            .iter()
            .map(|row| serde_json::to_string(row).unwrap())
            .map(|mut line| {
                line.push('\n');
                line
            })
            .collect()
    }

    /// Flat-token dump of every successful run's solution, suitable for
    /// re-verifying the reported costs.
    pub fn solutions_csv(&self) -> String {
        let mut out = String::from("instance,method,rep,tokens\n");
        for record in &self.solutions {
            let tokens: Vec<String> = record
                .solution
                .to_flat()
                .iter()
                .map(|t| t.to_string())
                .collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&record.instance),
                csv_field(&record.method),
                record.rep,
                tokens.join(" "),
            ));
        }
        out
    }
}

/// One observation for plotting: series key, x position, y value.
#[derive(Debug, Clone)]
pub struct PlotPoint {
    pub group: String,
    pub x: f64,
    pub y: f64,
}

/// An aggregated point of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotAgg {
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// One plot-ready series.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub group: String,
    pub points: Vec<PlotAgg>,
}

/// Groups points by series key, then aggregates the y values at each
/// distinct x into mean and standard error (zero for singletons).
/// Series come back sorted by group name with points sorted by x.
pub fn emit_plot_data(points: &[PlotPoint]) -> Vec<PlotSeries> {
    let mut groups: BTreeMap<&str, BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for p in points {
        groups
            .entry(&p.group)
            .or_default()
            .entry(p.x.to_bits())
            .or_insert((p.x, Vec::new()))
            .1
            .push(p.y);
    }
    groups
        .into_iter()
        .map(|(group, xs)| {
            let mut points: Vec<PlotAgg> = xs
                .into_values()
                .map(|(x, ys)| {
                    let m = ys.iter().sum::<f64>() / ys.len() as f64;
                    let stderr = if ys.len() < 2 {
                        0.0
                    } else {
                        let var = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>()
                            / (ys.len() - 1) as f64;
                        (var / ys.len() as f64).sqrt()
                    };
                    PlotAgg {
                        x,
                        mean: m,
                        stderr,
                    }
                })
                .collect();
            points.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
            PlotSeries {
                group: group.to_string(),
                points,
            }
        })
        .collect()
}

/// Turns successful result rows into plot points, one series per
/// method with the instance size on the x axis. Methods whose every
/// run failed produce no series; their names come back as warnings.
pub fn plot_points_from_rows(rows: &[ResultRow]) -> (Vec<PlotPoint>, Vec<String>) {
    let mut points = Vec::new();
    let mut seen_ok: BTreeMap<&str, bool> = BTreeMap::new();
    for row in rows {
        let ok = seen_ok.entry(&row.method).or_insert(false);
        if let Some(cost) = row.cost {
            *ok = true;
            points.push(PlotPoint {
                group: row.method.clone(),
                x: row.n as f64,
                y: cost,
            });
        }
    }
    let warnings = seen_ok
        .into_iter()
        .filter(|(_, ok)| !ok)
        .map(|(method, _)| format!("method {method} has no successful runs; series omitted"))
        .collect();
    (points, warnings)
}

/// Renders one series as CSV with columns x, mean, stderr.
pub fn plot_series_csv(series: &PlotSeries) -> String {
    let mut out = String::from("x,mean,stderr\n");
    for p in &series.points {
        out.push_str(&format!("{},{},{}\n", p.x, p.mean, p.stderr));
    }
    out
}
