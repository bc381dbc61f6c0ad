//! Autoregressive decoding: the policy interface, feasibility masking,
//! token selection strategies, multi-start rollouts, and beam search.
//!
//! A decode builds a flat token sequence starting at the depot. The first
//! move is always the depot, the second a designated start customer (one
//! rollout per start, so N starts explore N openings), and every later
//! token comes from the policy. Log-probabilities are accumulated as
//! log(p + 1e-5); the small constant keeps scores finite when a
//! probability underflows, and it is applied identically in rollouts,
//! beam search, and the exhaustive oracle so their scores are comparable.

use crate::model::{Instance, Solution};
use crate::seed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Additive smoothing inside every log(p + SMOOTHING) score accumulation.
pub const PROB_SMOOTHING: f64 = 1e-5;

/// Errors raised while decoding.
#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    BadConfig(String),
    #[error("no feasible action from the current state")]
    DeadEnd,
    #[error("policy failure: {0}")]
    Policy(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Per-token scores with masked entries pinned to negative infinity.
#[derive(Debug, Clone)]
pub struct Logits {
    scores: Vec<f64>,
}

impl Logits {
    /// All-masked logits over `n_tokens` slots.
    pub fn masked(n_tokens: usize) -> Self {
        Logits {
            scores: vec![f64::NEG_INFINITY; n_tokens],
        }
    }

    pub fn set(&mut self, token: usize, score: f64) {
        self.scores[token] = score;
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_masked(&self, token: usize) -> bool {
        self.scores[token] == f64::NEG_INFINITY
    }

    /// Unmasked tokens in ascending order.
    pub fn unmasked(&self) -> Vec<usize> {
        (0..self.scores.len())
            .filter(|&t| !self.is_masked(t))
            .collect()
    }

    /// Softmax over the unmasked entries; masked tokens get exactly 0.
    /// Returns all zeros when every token is masked.
    pub fn probs(&self) -> Vec<f64> {
        let max = self
            .scores
            .iter()
            .copied()
            .filter(|s| s.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return vec![0.0; self.scores.len()];
        }
        let mut probs: Vec<f64> = self
            .scores
            .iter()
            .map(|&s| {
                if s == f64::NEG_INFINITY {
                    0.0
                } else {
                    (s - max).exp()
                }
            })
            .collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        probs
    }
}

/// State of one partial decode.
///
/// `visited` and `target_count` describe which customers this decode must
/// place: a full decode targets all of them, while segment reconstruction
/// pre-marks everything outside the segment as visited. `dest` is the
/// destination context node handed to context-aware policies (the depot
/// for full decodes, the right boundary during reconstruction).
#[derive(Debug, Clone)]
pub struct DecodeState {
    pub current: usize,
    pub visited: Vec<bool>,
    pub visited_count: usize,
    pub target_count: usize,
    pub remaining_load: f64,
    pub partial: Vec<usize>,
    pub logprob: f64,
    pub dest: usize,
}

impl DecodeState {
    /// Fresh full-decode state: at the depot, nothing visited.
    pub fn fresh(instance: &Instance) -> Self {
        DecodeState {
            current: 0,
            visited: vec![false; instance.n() + 1],
            visited_count: 0,
            target_count: instance.n(),
            remaining_load: instance.capacity(),
            partial: vec![0],
            logprob: 0.0,
            dest: 0,
        }
    }

    /// Number of tokens selected so far, counting the initial depot.
    pub fn selected_count(&self) -> usize {
        self.partial.len()
    }

    /// Applies one token: depot resets the load, a customer consumes its
    /// demand and is marked visited.
    pub fn apply(&mut self, instance: &Instance, token: usize) {
        if token == 0 {
            self.current = 0;
            self.remaining_load = instance.capacity();
        } else {
            debug_assert!(!self.visited[token], "token {token} applied twice");
            self.visited[token] = true;
            self.visited_count += 1;
            self.remaining_load -= instance.demand(token);
            self.current = token;
        }
        self.partial.push(token);
    }

    /// A full decode is finished once every targeted customer is visited
    /// and the vehicle is back at the depot.
    pub fn is_terminal(&self) -> bool {
        self.visited_count == self.target_count && self.current == 0
    }
}

/// Allowed next tokens: visited customers are masked, customers whose
/// demand exceeds the remaining load are masked, and the depot is masked
/// exactly when the vehicle already sits there with work left (which
/// would create an empty route).
pub fn feasible_mask(instance: &Instance, state: &DecodeState) -> Vec<bool> {
    let mut mask = vec![false; instance.n() + 1];
    mask[0] = !(state.current == 0 && state.visited_count < state.target_count);
    for c in 1..=instance.n() {
        mask[c] = !state.visited[c] && instance.demand(c) <= state.remaining_load;
    }
    mask
}

/// Unmasked tokens in ascending order.
pub fn feasible_actions(instance: &Instance, state: &DecodeState) -> Vec<usize> {
    feasible_mask(instance, state)
        .iter()
        .enumerate()
        .filter_map(|(t, &ok)| ok.then_some(t))
        .collect()
}

/// A next-token scorer. Implementations must return logits whose masked
/// entries match [`feasible_mask`] for the given state.
pub trait Policy {
    fn logits(&self, instance: &Instance, state: &DecodeState) -> Result<Logits, DecodeError>;

    fn name(&self) -> &'static str;
}

/// Baseline policy scoring each candidate by its negated distance from
/// the current node, divided by `scale`. Smaller scales sharpen the
/// distribution toward pure nearest-neighbor behavior.
#[derive(Debug, Clone, Copy)]
pub struct DistanceHeuristicPolicy {
    pub scale: f64,
}

impl Default for DistanceHeuristicPolicy {
    fn default() -> Self {
        DistanceHeuristicPolicy { scale: 0.1 }
    }
}

impl Policy for DistanceHeuristicPolicy {
    fn logits(&self, instance: &Instance, state: &DecodeState) -> Result<Logits, DecodeError> {
        let mask = feasible_mask(instance, state);
        let mut logits = Logits::masked(instance.n() + 1);
        for (t, &ok) in mask.iter().enumerate() {
            if ok {
                logits.set(t, -instance.dist(state.current, t) / self.scale);
            }
        }
        Ok(logits)
    }

    fn name(&self) -> &'static str {
        "distance"
    }
}

/// How the next token is chosen from the masked logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Highest score, ties to the lowest token index.
    Argmax,
    /// Sample from the masked softmax.
    Softmax,
    /// Hard Gumbel-max sampling at a temperature: argmax of
    /// score/temperature + Gumbel noise. Temperature 1 reproduces the
    /// softmax distribution; lower sharpens toward argmax, higher
    /// flattens toward uniform.
    Gumbel { temperature: f64 },
    /// With probability epsilon pick uniformly among unmasked tokens,
    /// otherwise argmax.
    EpsilonGreedy { epsilon: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Argmax => "argmax",
            Strategy::Softmax => "softmax",
            Strategy::Gumbel { .. } => "gumbel",
            Strategy::EpsilonGreedy { .. } => "epsilon_greedy",
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        match *self {
            Strategy::Gumbel { temperature } if !(temperature > 0.0) => Err(
                DecodeError::BadConfig("gumbel temperature must be positive".into()),
            ),
            Strategy::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(&epsilon) => Err(
                DecodeError::BadConfig("epsilon must lie in [0, 1]".into()),
            ),
            _ => Ok(()),
        }
    }
}

fn argmax_token(logits: &Logits) -> Result<usize, DecodeError> {
    let mut best: Option<(f64, usize)> = None;
    for (t, &s) in logits.scores().iter().enumerate() {
        if s == f64::NEG_INFINITY {
            continue;
        }
        if best.map_or(true, |(bs, _)| s > bs) {
            best = Some((s, t));
        }
    }
    best.map(|(_, t)| t).ok_or(DecodeError::DeadEnd)
}

/// Selects one token according to the strategy. Masked tokens are never
/// returned.
pub fn select(
    logits: &Logits,
    strategy: Strategy,
    rng: &mut impl Rng,
) -> Result<usize, DecodeError> {
    strategy.validate()?;
    match strategy {
        Strategy::Argmax => argmax_token(logits),
        Strategy::Softmax => {
            let probs = logits.probs();
            let total: f64 = probs.iter().sum();
            if total == 0.0 {
                return Err(DecodeError::DeadEnd);
            }
            let draw: f64 = rng.gen::<f64>();
            let mut acc = 0.0;
            let mut last_unmasked = None;
            for (t, &p) in probs.iter().enumerate() {
                if logits.is_masked(t) {
                    continue;
                }
                acc += p;
                last_unmasked = Some(t);
                if draw < acc {
                    return Ok(t);
                }
            }
            last_unmasked.ok_or(DecodeError::DeadEnd)
        }
        Strategy::Gumbel { temperature } => {
            let mut best: Option<(f64, usize)> = None;
            for (t, &s) in logits.scores().iter().enumerate() {
                if s == f64::NEG_INFINITY {
                    continue;
                }
                let u: f64 = rng.gen::<f64>().max(1e-300);
                let gumbel = -(-u.ln()).ln();
                let perturbed = s / temperature + gumbel;
                if best.map_or(true, |(bs, _)| perturbed > bs) {
                    best = Some((perturbed, t));
                }
            }
            best.map(|(_, t)| t).ok_or(DecodeError::DeadEnd)
        }
        Strategy::EpsilonGreedy { epsilon } => {
            let unmasked = logits.unmasked();
            if unmasked.is_empty() {
                return Err(DecodeError::DeadEnd);
            }
            if rng.gen::<f64>() < epsilon {
                Ok(unmasked[rng.gen_range(0..unmasked.len())])
            } else {
                argmax_token(logits)
            }
        }
    }
}

/// One finished decode.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// The forced start customer.
    pub start: usize,
    /// Full token sequence including the leading depot.
    pub tokens: Vec<usize>,
    pub solution: Solution,
    pub cost: f64,
    /// Sum of log(p + smoothing) over the policy-chosen steps.
    pub logprob: f64,
    /// log(p + smoothing) the policy assigned to the forced start; kept
    /// separate so scores can be compared with or without it.
    pub start_logprob: f64,
}

impl Trajectory {
    /// Score over the whole chain, forced start included.
    pub fn total_logprob(&self) -> f64 {
        self.start_logprob + self.logprob
    }
}

fn smoothed_ln(p: f64) -> f64 {
    (p + PROB_SMOOTHING).ln()
}

/// Runs one rollout that starts at `start` and then follows the policy
/// under the given selection strategy.
pub fn rollout_from_start(
    policy: &dyn Policy,
    instance: &Instance,
    start: usize,
    strategy: Strategy,
    rng: &mut impl Rng,
) -> Result<Trajectory, DecodeError> {
    if start == 0 || start > instance.n() {
        return Err(DecodeError::BadConfig(format!(
            "start customer {start} out of range"
        )));
    }
    let mut state = DecodeState::fresh(instance);
    let start_logprob = smoothed_ln(policy.logits(instance, &state)?.probs()[start]);
    state.apply(instance, start);
    while !state.is_terminal() {
        let logits = policy.logits(instance, &state)?;
        let token = select(&logits, strategy, rng)?;
        state.logprob += smoothed_ln(logits.probs()[token]);
        state.apply(instance, token);
    }
    let solution = Solution::from_flat(instance, &state.partial)?;
    Ok(Trajectory {
        start,
        cost: solution.cost(),
        solution,
        tokens: state.partial,
        logprob: state.logprob,
        start_logprob,
    })
}

/// Result of a multi-start rollout.
#[derive(Debug, Clone)]
pub struct PomoOutcome {
    /// One trajectory per start, starts 1..=N in order.
    pub trajectories: Vec<Trajectory>,
    best: usize,
}

impl PomoOutcome {
    /// The lowest-cost trajectory across starts.
    pub fn best(&self) -> &Trajectory {
        &self.trajectories[self.best]
    }
}

/// Multi-start decoding: one rollout per designated start customer
/// 1..=n_starts, each with its own deterministic RNG stream derived from
/// (seed, start), so results do not depend on execution order.
pub fn pomo_rollout(
    policy: &dyn Policy,
    instance: &Instance,
    n_starts: usize,
    strategy: Strategy,
    seed_root: u64,
) -> Result<PomoOutcome, DecodeError> {
    if n_starts == 0 || n_starts > instance.n() {
        return Err(DecodeError::BadConfig(format!(
            "n_starts {n_starts} must lie in 1..={}",
            instance.n()
        )));
    }
    strategy.validate()?;
    let mut trajectories = Vec::with_capacity(n_starts);
    for start in 1..=n_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_root, &[start as u64]));
        trajectories.push(rollout_from_start(
            policy, instance, start, strategy, &mut rng,
        )?);
    }
    let best = trajectories
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cost.partial_cmp(&b.1.cost).unwrap().then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap();
    Ok(PomoOutcome { trajectories, best })
}

/// Completed beams of one start.
#[derive(Debug, Clone)]
pub struct StartBeams {
    pub start: usize,
    pub start_logprob: f64,
    pub best_by_cost: Trajectory,
    pub best_by_logprob: Trajectory,
}

/// Result of a beam search across starts.
#[derive(Debug, Clone)]
pub struct BeamOutcome {
    pub per_start: Vec<StartBeams>,
}

impl BeamOutcome {
    /// Lowest-cost completed trajectory over all starts.
    pub fn best(&self) -> &Trajectory {
        self.per_start
            .iter()
            .map(|s| &s.best_by_cost)
            .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap())
            .unwrap()
    }

    /// Completed trajectory with the highest whole-chain score, the
    /// forced start step included.
    pub fn best_by_total_logprob(&self) -> &Trajectory {
        self.per_start
            .iter()
            .map(|s| &s.best_by_logprob)
            .max_by(|a, b| {
                a.total_logprob()
                    .partial_cmp(&b.total_logprob())
                    .unwrap()
            })
            .unwrap()
    }
}

struct BeamCandidate {
    logprob: f64,
    beam: usize,
    token: usize,
}

/// Deterministic beam search. Each start keeps up to `beam_size` partial
/// sequences ranked by cumulative log(p + smoothing); every round each
/// beam proposes its `beam_size` best continuations, the pool is pruned
/// back to `beam_size` (ties to the lower beam index, then lower token),
/// and sequences reaching the terminal state are parked as completed.
/// With `beam_size` 1 this reproduces the argmax rollout token for token.
pub fn beam_search(
    policy: &dyn Policy,
    instance: &Instance,
    n_starts: usize,
    beam_size: usize,
) -> Result<BeamOutcome, DecodeError> {
    if beam_size == 0 {
        return Err(DecodeError::BadConfig("beam_size must be at least 1".into()));
    }
    if n_starts == 0 || n_starts > instance.n() {
        return Err(DecodeError::BadConfig(format!(
            "n_starts {n_starts} must lie in 1..={}",
            instance.n()
        )));
    }
    let mut per_start = Vec::with_capacity(n_starts);
    for start in 1..=n_starts {
        let mut state = DecodeState::fresh(instance);
        let start_logprob = smoothed_ln(policy.logits(instance, &state)?.probs()[start]);
        state.apply(instance, start);
        let mut beams: Vec<DecodeState> = vec![state];
        let mut completed: Vec<DecodeState> = Vec::new();
        while !beams.is_empty() {
            let mut candidates: Vec<BeamCandidate> = Vec::new();
            for (bi, beam) in beams.iter().enumerate() {
                let logits = policy.logits(instance, beam)?;
                let probs = logits.probs();
                // This beam's own best continuations, most probable first.
                let mut continuations: Vec<usize> = logits.unmasked();
                continuations.sort_by(|&a, &b| {
                    probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b))
                });
                for &token in continuations.iter().take(beam_size) {
                    candidates.push(BeamCandidate {
                        logprob: beam.logprob + smoothed_ln(probs[token]),
                        beam: bi,
                        token,
                    });
                }
            }
            candidates.sort_by(|a, b| {
                b.logprob
                    .partial_cmp(&a.logprob)
                    .unwrap()
                    .then(a.beam.cmp(&b.beam))
                    .then(a.token.cmp(&b.token))
            });
            candidates.truncate(beam_size);
            let mut next = Vec::with_capacity(candidates.len());
            for cand in candidates {
                let mut state = beams[cand.beam].clone();
                state.logprob = cand.logprob;
                state.apply(instance, cand.token);
                if state.is_terminal() {
                    completed.push(state);
                } else {
                    next.push(state);
                }
            }
            beams = next;
        }
        if completed.is_empty() {
            return Err(DecodeError::DeadEnd);
        }
        let make = |state: &DecodeState| -> Result<Trajectory, DecodeError> {
            let solution = Solution::from_flat(instance, &state.partial)?;
            Ok(Trajectory {
                start,
                cost: solution.cost(),
                solution,
                tokens: state.partial.clone(),
                logprob: state.logprob,
                start_logprob,
            })
        };
        let mut costs = Vec::with_capacity(completed.len());
        for state in &completed {
            costs.push(Solution::from_flat(instance, &state.partial)?.cost());
        }
        let by_cost = &completed[costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .unwrap()];
        let by_logprob = completed
            .iter()
            .enumerate()
            .max_by(|a, b| {
                a.1.logprob
                    .partial_cmp(&b.1.logprob)
                    .unwrap()
                    .then(b.0.cmp(&a.0))
            })
            .map(|(_, s)| s)
            .unwrap();
        per_start.push(StartBeams {
            start,
            start_logprob,
            best_by_cost: make(by_cost)?,
            best_by_logprob: make(by_logprob)?,
        });
    }
    Ok(BeamOutcome { per_start })
}

/// Recomputes a finished trajectory's score bookkeeping by replaying its
/// tokens through the policy. Returns (start_logprob, logprob).
pub fn replay_logprob(
    policy: &dyn Policy,
    instance: &Instance,
    trajectory: &Trajectory,
) -> Result<(f64, f64), DecodeError> {
    let mut state = DecodeState::fresh(instance);
    let mut start_logprob = 0.0;
    let mut logprob = 0.0;
    for (i, &token) in trajectory.tokens.iter().enumerate().skip(1) {
        let p = policy.logits(instance, &state)?.probs()[token];
        if i == 1 {
            start_logprob = smoothed_ln(p);
        } else {
            logprob += smoothed_ln(p);
        }
        state.apply(instance, token);
    }
    Ok((start_logprob, logprob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate, GenConfig};
    use crate::model::check_feasible;

    fn toy_logits(values: &[f64]) -> Logits {
        let mut logits = Logits::masked(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v.is_finite() {
                logits.set(i, v);
            }
        }
        logits
    }

    #[test]
    fn probs_renormalize_over_unmasked() {
        let logits = toy_logits(&[f64::NEG_INFINITY, 0.0, 0.0]);
        let probs = logits.probs();
        assert_eq!(probs[0], 0.0);
        assert!((probs[1] - 0.5).abs() < 1e-12);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_breaks_ties_toward_low_index() {
        let logits = toy_logits(&[f64::NEG_INFINITY, 2.0, 2.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select(&logits, Strategy::Argmax, &mut rng).unwrap(), 1);
    }

    #[test]
    fn masked_tokens_are_never_selected() {
        let logits = toy_logits(&[f64::NEG_INFINITY, 5.0, f64::NEG_INFINITY, -2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let strategies = [
            Strategy::Argmax,
            Strategy::Softmax,
            Strategy::Gumbel { temperature: 1.0 },
            Strategy::EpsilonGreedy { epsilon: 0.7 },
        ];
        for strategy in strategies {
            for _ in 0..2500 {
                let t = select(&logits, strategy, &mut rng).unwrap();
                assert!(t == 1 || t == 3, "{strategy:?} picked masked token {t}");
            }
        }
    }

    #[test]
    fn softmax_frequencies_match_two_to_one() {
        // Logits ln(2) and 0 give probabilities 2/3 and 1/3.
        let logits = toy_logits(&[2.0f64.ln(), 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            counts[select(&logits, Strategy::Softmax, &mut rng).unwrap()] += 1;
        }
        let freq = counts[0] as f64 / 10_000.0;
        assert!((freq - 2.0 / 3.0).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn gumbel_at_unit_temperature_matches_softmax() {
        let logits = toy_logits(&[1.0, 0.0, -0.5]);
        let probs = logits.probs();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 3];
        const DRAWS: usize = 20_000;
        for _ in 0..DRAWS {
            counts[select(&logits, Strategy::Gumbel { temperature: 1.0 }, &mut rng).unwrap()] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 / DRAWS as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn gumbel_limits_are_argmax_and_uniform() {
        let logits = toy_logits(&[1.0, 0.9, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut argmax_hits = 0;
        for _ in 0..10_000 {
            if select(&logits, Strategy::Gumbel { temperature: 1e-4 }, &mut rng).unwrap() == 0 {
                argmax_hits += 1;
            }
        }
        assert!(argmax_hits as f64 / 10_000.0 > 0.999);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[select(&logits, Strategy::Gumbel { temperature: 1e6 }, &mut rng).unwrap()] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / 30_000.0;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn epsilon_greedy_frequency_splits_as_expected() {
        // Two actions, epsilon 0.5: argmax picked with 0.5 + 0.25 = 0.75.
        let logits = toy_logits(&[1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut hits = 0;
        for _ in 0..10_000 {
            if select(
                &logits,
                Strategy::EpsilonGreedy { epsilon: 0.5 },
                &mut rng,
            )
            .unwrap()
                == 0
            {
                hits += 1;
            }
        }
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.75).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn mask_blocks_depot_only_at_depot_with_work_left() {
        let instance = generate(&GenConfig::for_size(5, 3)).unwrap();
        let mut state = DecodeState::fresh(&instance);
        assert!(!feasible_mask(&instance, &state)[0]);
        state.apply(&instance, 2);
        assert!(feasible_mask(&instance, &state)[0]);
        assert!(!feasible_mask(&instance, &state)[2]);
    }

    #[test]
    fn mask_excludes_over_demand_customers() {
        let instance = generate(&GenConfig {
            capacity: 9.0,
            ..GenConfig::for_size(6, 21)
        })
        .unwrap();
        let mut state = DecodeState::fresh(&instance);
        state.apply(&instance, 1);
        let mask = feasible_mask(&instance, &state);
        for c in 2..=instance.n() {
            assert_eq!(
                mask[c],
                instance.demand(c) <= state.remaining_load,
                "customer {c}"
            );
        }
    }

    #[test]
    fn rollouts_always_feasible_and_well_formed() {
        let policy = DistanceHeuristicPolicy::default();
        let strategies = [
            Strategy::Argmax,
            Strategy::Softmax,
            Strategy::Gumbel { temperature: 1.0 },
            Strategy::EpsilonGreedy { epsilon: 0.3 },
        ];
        for seed in 0..25u64 {
            let n = 2 + (seed as usize * 5) % 15;
            let instance = generate(&GenConfig {
                capacity: 12.0,
                ..GenConfig::for_size(n, 100 + seed)
            })
            .unwrap();
            for (si, strategy) in strategies.iter().enumerate() {
                let out = pomo_rollout(&policy, &instance, n.min(4), *strategy, seed * 31 + si as u64)
                    .unwrap();
                for (i, t) in out.trajectories.iter().enumerate() {
                    assert_eq!(t.start, i + 1);
                    assert_eq!(t.tokens[0], 0);
                    assert_eq!(t.tokens[1], t.start);
                    assert!(check_feasible(&instance, &t.solution).is_feasible());
                }
                assert!(out
                    .trajectories
                    .iter()
                    .all(|t| t.cost >= out.best().cost));
            }
        }
    }

    #[test]
    fn too_many_starts_is_a_config_error() {
        let instance = generate(&GenConfig::for_size(4, 2)).unwrap();
        let policy = DistanceHeuristicPolicy::default();
        assert!(matches!(
            pomo_rollout(&policy, &instance, 5, Strategy::Argmax, 0),
            Err(DecodeError::BadConfig(_))
        ));
    }

    #[test]
    fn logprob_bookkeeping_replays_exactly() {
        let policy = DistanceHeuristicPolicy::default();
        for seed in 0..10u64 {
            let instance = generate(&GenConfig::for_size(10, 300 + seed)).unwrap();
            let out =
                pomo_rollout(&policy, &instance, 3, Strategy::Softmax, seed).unwrap();
            for t in &out.trajectories {
                let (start_lp, lp) = replay_logprob(&policy, &instance, t).unwrap();
                assert!((start_lp - t.start_logprob).abs() < 1e-6);
                assert!((lp - t.logprob).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn beam_one_replays_argmax_token_for_token() {
        let policy = DistanceHeuristicPolicy::default();
        for seed in 0..20u64 {
            let instance = generate(&GenConfig::for_size(12, 700 + seed)).unwrap();
            let rollout = pomo_rollout(&policy, &instance, 4, Strategy::Argmax, 0).unwrap();
            let beams = beam_search(&policy, &instance, 4, 1).unwrap();
            for (t, sb) in rollout.trajectories.iter().zip(&beams.per_start) {
                assert_eq!(t.tokens, sb.best_by_cost.tokens, "seed {seed}");
            }
        }
    }

    #[test]
    fn beam_logprob_is_monotone_in_width() {
        let policy = DistanceHeuristicPolicy::default();
        for seed in 0..10u64 {
            let instance = generate(&GenConfig::for_size(10, 900 + seed)).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for beam_size in [1usize, 2, 4, 8] {
                let out = beam_search(&policy, &instance, 3, beam_size).unwrap();
                let best = out
                    .per_start
                    .iter()
                    .map(|s| s.best_by_logprob.logprob)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(
                    best >= prev - 1e-12,
                    "seed {seed}: width {beam_size} got {best} after {prev}"
                );
                prev = best;
            }
        }
    }

    #[test]
    fn beam_trajectories_are_feasible() {
        let policy = DistanceHeuristicPolicy::default();
        for seed in 0..10u64 {
            let instance = generate(&GenConfig {
                capacity: 10.0,
                ..GenConfig::for_size(9, 1100 + seed)
            })
            .unwrap();
            let out = beam_search(&policy, &instance, instance.n(), 4).unwrap();
            for sb in &out.per_start {
                assert!(check_feasible(&instance, &sb.best_by_cost.solution).is_feasible());
                assert!(check_feasible(&instance, &sb.best_by_logprob.solution).is_feasible());
                assert_eq!(sb.best_by_cost.tokens[1], sb.start);
            }
        }
    }
}
