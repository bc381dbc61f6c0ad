//! Random reconstruction: repeatedly rip a span out of the flat tour,
//! let a policy re-decode the missing customers between the span's
//! boundary tokens, and accept or reject the candidate.
//!
//! The left boundary acts as the decode's current node and the right
//! boundary as its destination context, with the vehicle load replayed
//! from the tour prefix, so the policy sees the same kind of state it
//! was trained on. Acceptance is either strict descent or simulated
//! annealing with a geometric temperature schedule. A fixed seed makes
//! the whole run, including its trace, bit-reproducible.

use crate::decode::{select, DecodeError, DecodeState, Policy, Strategy};
use crate::model::{check_feasible, Instance, ModelError, Solution};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RrcError {
    #[error("invalid rrc config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How candidates are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptRule {
    /// Strict improvement only.
    Greedy,
    /// Simulated annealing: never reject an equal-or-better candidate,
    /// accept a worse one with probability exp(-delta / temperature).
    Anneal,
}

impl AcceptRule {
    pub fn name(&self) -> &'static str {
        match self {
            AcceptRule::Greedy => "greedy",
            AcceptRule::Anneal => "sa",
        }
    }

    pub fn parse(name: &str) -> Option<AcceptRule> {
        match name {
            "greedy" => Some(AcceptRule::Greedy),
            "sa" => Some(AcceptRule::Anneal),
            _ => None,
        }
    }
}

/// The acceptance test. A nonpositive temperature turns annealing into
/// rejection of every strictly worse candidate.
pub fn accept(delta: f64, temperature: f64, rule: AcceptRule, rng: &mut impl Rng) -> bool {
    match rule {
        AcceptRule::Greedy => delta < 0.0,
        AcceptRule::Anneal => {
            if delta <= 0.0 {
                true
            } else if temperature <= 0.0 {
                false
            } else {
                rng.gen::<f64>() < (-delta / temperature).exp()
            }
        }
    }
}

/// Configuration of one reconstruction run.
#[derive(Debug, Clone)]
pub struct RrcConfig {
    pub iterations: usize,
    /// Smallest span to rip out; spans are clipped on short tours.
    pub seg_min: usize,
    /// Largest span; None caps at min(50, tour length - 2).
    pub seg_max: Option<usize>,
    pub rule: AcceptRule,
    /// Starting temperature; None uses 1% of the initial cost.
    pub t0: Option<f64>,
    /// Geometric cooling factor per iteration.
    pub cooling: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl RrcConfig {
    pub fn new(iterations: usize, seed: u64) -> RrcConfig {
        RrcConfig {
            iterations,
            seg_min: 4,
            seg_max: None,
            rule: AcceptRule::Anneal,
            t0: None,
            cooling: 0.99,
            strategy: Strategy::Softmax,
            seed,
        }
    }

    fn validate(&self) -> Result<(), RrcError> {
        if self.seg_min == 0 {
            return Err(RrcError::BadConfig("seg_min must be at least 1".into()));
        }
        if let Some(seg_max) = self.seg_max {
            if seg_max < self.seg_min {
                return Err(RrcError::BadConfig(format!(
                    "seg_max {seg_max} below seg_min {}",
                    self.seg_min
                )));
            }
        }
        if !(self.cooling > 0.0 && self.cooling <= 1.0) {
            return Err(RrcError::BadConfig(format!(
                "cooling {} must lie in (0, 1]",
                self.cooling
            )));
        }
        if let Some(t0) = self.t0 {
            if !(t0 >= 0.0) {
                return Err(RrcError::BadConfig(format!(
                    "t0 {t0} must be nonnegative"
                )));
            }
        }
        self.strategy.validate()?;
        Ok(())
    }
}

/// Draws a span (start, len) of the flat tour. Positions 0 and the last
/// token are the fixed outer depots; the span and both its boundary
/// tokens must fit inside, so start ranges over 1..=len(tour)-1-len.
pub fn sample_segment(
    rng: &mut impl Rng,
    tour_len: usize,
    seg_min: usize,
    seg_max: usize,
) -> (usize, usize) {
    let longest = seg_max.min(tour_len - 2);
    let lo = seg_min.min(longest);
    let len = rng.gen_range(lo..=longest);
    let start = rng.gen_range(1..=tour_len - 1 - len);
    (start, len)
}

/// Re-decodes the customers of `flat[start..start + len]` between the
/// tokens adjacent to the span. The returned tokens replace the span;
/// they may split routes differently than the original did.
pub fn reconstruct_segment(
    policy: &dyn Policy,
    instance: &Instance,
    flat: &[usize],
    start: usize,
    len: usize,
    strategy: Strategy,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, DecodeError> {
    let left = flat[start - 1];
    let right = flat[start + len];
    let segment: Vec<usize> = flat[start..start + len]
        .iter()
        .copied()
        .filter(|&t| t != 0)
        .collect();
    let mut load = instance.capacity();
    for &tok in &flat[..start] {
        if tok == 0 {
            load = instance.capacity();
        } else {
            load -= instance.demand(tok);
        }
    }
    let mut visited = vec![true; instance.n() + 1];
    for &c in &segment {
        visited[c] = false;
    }
    let mut state = DecodeState {
        current: left,
        visited,
        visited_count: instance.n() - segment.len(),
        target_count: instance.n(),
        remaining_load: load,
        partial: flat[..start].to_vec(),
        logprob: 0.0,
        dest: right,
    };
    let mut rebuilt = Vec::with_capacity(len);
    while state.visited_count < state.target_count {
        let logits = policy.logits(instance, &state)?;
        let token = select(&logits, strategy, rng)?;
        state.apply(instance, token);
        rebuilt.push(token);
    }
    Ok(rebuilt)
}

/// One line of the run trace.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iteration: usize,
    /// Candidate cost minus incumbent cost; infinite when the candidate
    /// was infeasible.
    pub delta: f64,
    pub temperature: f64,
    pub accepted: bool,
    pub incumbent_cost: f64,
    pub best_cost: f64,
}

/// Result of a reconstruction run.
#[derive(Debug, Clone)]
pub struct RrcOutcome {
    pub best: Solution,
    pub incumbent: Solution,
    pub trace: Vec<TraceRow>,
}

/// Runs the reconstruction chain from an initial solution. The
/// incumbent follows the acceptance rule; the best solution ever seen
/// is tracked separately and returned even if the chain later drifts
/// upward.
pub fn rrc_run(
    policy: &dyn Policy,
    instance: &Instance,
    initial: &Solution,
    config: &RrcConfig,
) -> Result<RrcOutcome, RrcError> {
    config.validate()?;
    let report = check_feasible(instance, initial);
    if !report.is_feasible() {
        return Err(RrcError::BadConfig(
            "initial solution is infeasible".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t0 = config.t0.unwrap_or(0.01 * initial.cost());
    let mut incumbent_flat = initial.to_flat();
    let mut incumbent_cost = initial.cost();
    let mut best = initial.clone();
    let mut trace = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let temperature = t0 * config.cooling.powi(iteration as i32);
        let tour_len = incumbent_flat.len();
        let seg_max = config.seg_max.unwrap_or(50);
        let (start, len) = sample_segment(&mut rng, tour_len, config.seg_min, seg_max);
        let rebuilt = reconstruct_segment(
            policy,
            instance,
            &incumbent_flat,
            start,
            len,
            config.strategy,
            &mut rng,
        )?;
        let mut candidate_flat = Vec::with_capacity(tour_len - len + rebuilt.len());
        candidate_flat.extend_from_slice(&incumbent_flat[..start]);
        candidate_flat.extend_from_slice(&rebuilt);
        candidate_flat.extend_from_slice(&incumbent_flat[start + len..]);
        let candidate = Solution::from_flat(instance, &candidate_flat).ok();
        let feasible = candidate
            .as_ref()
            .map_or(false, |c| check_feasible(instance, c).is_feasible());
        let delta = if feasible {
            candidate.as_ref().unwrap().cost() - incumbent_cost
        } else {
            f64::INFINITY
        };
        let accepted = feasible && accept(delta, temperature, config.rule, &mut rng);
        if accepted {
            let candidate = candidate.unwrap();
            incumbent_cost = candidate.cost();
            incumbent_flat = candidate.to_flat();
            if incumbent_cost < best.cost() {
                best = candidate;
            }
        }
        trace.push(TraceRow {
            iteration,
            delta,
            temperature,
            accepted,
            incumbent_cost,
            best_cost: best.cost(),
        });
    }
    Ok(RrcOutcome {
        best,
        incumbent: Solution::from_flat(instance, &incumbent_flat)?,
        trace,
    })
}

/// Renders a trace as CSV. Floats use shortest round-trip formatting,
/// so identical runs produce byte-identical output; an infinite delta
/// appears as "inf".
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration,delta,temperature,accepted,incumbent_cost,best_cost\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.iteration,
            row.delta,
            row.temperature,
            row.accepted,
            row.incumbent_cost,
            row.best_cost
        ));
    }
    out
}
