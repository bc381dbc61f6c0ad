//! Exhaustive reference oracles for small instances.
//!
//! `brute_force_optimum` enumerates every capacity-feasible partition of
//! the customers into routes and every canonical route ordering, so its
//! answer is the exact optimum by construction. `enumerate_trajectories`
//! walks the complete decode tree of a policy. Both are deliberately
//! plain and slow; everything else in the crate is tested against them.

use crate::decode::{feasible_actions, DecodeError, DecodeState, Policy, Trajectory, PROB_SMOOTHING};
use crate::model::{route_cost, Instance, ModelError, Solution};
use thiserror::Error;

/// Largest instance `brute_force_optimum` accepts.
pub const BRUTE_FORCE_LIMIT: usize = 9;

/// Largest instance `enumerate_trajectories` accepts.
pub const ENUMERATION_LIMIT: usize = 6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance has {n} customers, oracle limit is {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Proven optimum plus the number of distinct complete solutions the
/// feasible search space contains.
#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub solution: Solution,
    pub enumerated: u64,
}

/// Distinct orderings of a route with `m` customers once reversals are
/// identified: m!/2 for m >= 2, otherwise 1.
fn canonical_orderings(m: usize) -> u64 {
    if m < 2 {
        return 1;
    }
    let mut f = 1u64;
    for k in 2..=m {
        f *= k as u64;
    }
    f / 2
}

/// Cheapest ordering of `customers` as one route, found by enumerating
/// permutations whose first customer index is below the last (each
/// route and its reversal cost the same).
fn best_route_order(instance: &Instance, customers: &[usize]) -> Vec<usize> {
    if customers.len() < 2 {
        return customers.to_vec();
    }
    let mut perm = customers.to_vec();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    permute(instance, &mut perm, 0, &mut best, &mut best_cost);
    best
}

fn permute(
    instance: &Instance,
    perm: &mut Vec<usize>,
    k: usize,
    best: &mut Vec<usize>,
    best_cost: &mut f64,
) {
    if k == perm.len() {
        if perm[0] < perm[perm.len() - 1] {
            let cost = route_cost(instance, perm);
            if cost < *best_cost {
                *best_cost = cost;
                best.clone_from(perm);
            }
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(instance, perm, k + 1, best, best_cost);
        perm.swap(k, i);
    }
}

/// Finds the exact optimum by exhaustive enumeration. Infeasible subsets
/// are pruned before any ordering work; each remaining subset is solved
/// once and partitions are assembled from those solved blocks.
pub fn brute_force_optimum(
    instance: &Instance,
    n_limit: usize,
) -> Result<BruteForceResult, OracleError> {
    let n = instance.n();
    if n > n_limit {
        return Err(OracleError::TooLarge { n, limit: n_limit });
    }
    let full: u32 = (1u32 << n) - 1;
    let mut block_cost = vec![f64::INFINITY; (full + 1) as usize];
    let mut block_order: Vec<Option<Vec<usize>>> = vec![None; (full + 1) as usize];
    let mut block_orderings = vec![0u64; (full + 1) as usize];
    for mask in 1..=full {
        let customers: Vec<usize> = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect();
        let demand: f64 = customers.iter().map(|&c| instance.demand(c)).sum();
        if demand > instance.capacity() {
            continue;
        }
        let order = best_route_order(instance, &customers);
        block_cost[mask as usize] = route_cost(instance, &order);
        block_orderings[mask as usize] = canonical_orderings(customers.len());
        block_order[mask as usize] = Some(order);
    }

    struct Search<'a> {
        block_cost: &'a [f64],
        block_orderings: &'a [u64],
        best_cost: f64,
        best_blocks: Vec<u32>,
        enumerated: u64,
    }

    fn recurse(s: &mut Search, remaining: u32, cost: f64, orderings: u64, blocks: &mut Vec<u32>) {
        if remaining == 0 {
            s.enumerated += orderings;
            if cost < s.best_cost {
                s.best_cost = cost;
                s.best_blocks = blocks.clone();
            }
            return;
        }
        let lowest = remaining & remaining.wrapping_neg();
        let rest = remaining ^ lowest;
        // Every subset of `rest`, joined with the lowest remaining bit.
        let mut sub = rest;
        loop {
            let block = sub | lowest;
            if s.block_cost[block as usize].is_finite() {
                blocks.push(block);
                recurse(
                    s,
                    remaining ^ block,
                    cost + s.block_cost[block as usize],
                    orderings * s.block_orderings[block as usize],
                    blocks,
                );
                blocks.pop();
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }

    let mut search = Search {
        block_cost: &block_cost,
        block_orderings: &block_orderings,
        best_cost: f64::INFINITY,
        best_blocks: Vec::new(),
        enumerated: 0,
    };
    recurse(&mut search, full, 0.0, 1, &mut Vec::new());
    let routes: Vec<Vec<usize>> = search
        .best_blocks
        .iter()
        .map(|&mask| block_order[mask as usize].clone().unwrap())
        .collect();
    Ok(BruteForceResult {
        solution: Solution::from_routes(instance, routes)?,
        enumerated: search.enumerated,
    })
}

/// Enumerates every trajectory the decoder could emit: all start
/// customers, then every feasible continuation, depth first with tokens
/// in ascending order. Scores use the same log(p + smoothing)
/// accumulation as live decoding, so the results are directly comparable
/// with rollout and beam scores.
pub fn enumerate_trajectories(
    policy: &dyn Policy,
    instance: &Instance,
    n_limit: usize,
) -> Result<Vec<Trajectory>, OracleError> {
    let n = instance.n();
    if n > n_limit {
        return Err(OracleError::TooLarge { n, limit: n_limit });
    }
    let mut out = Vec::new();
    for start in 1..=n {
        let mut state = DecodeState::fresh(instance);
        let start_logprob = (policy.logits(instance, &state)?.probs()[start] + PROB_SMOOTHING).ln();
        state.apply(instance, start);
        descend(policy, instance, &state, start, start_logprob, &mut out)?;
    }
    Ok(out)
}

fn descend(
    policy: &dyn Policy,
    instance: &Instance,
    state: &DecodeState,
    start: usize,
    start_logprob: f64,
    out: &mut Vec<Trajectory>,
) -> Result<(), OracleError> {
    if state.is_terminal() {
        let solution = Solution::from_flat(instance, &state.partial)?;
        out.push(Trajectory {
            start,
            cost: solution.cost(),
            solution,
            tokens: state.partial.clone(),
            logprob: state.logprob,
            start_logprob,
        });
        return Ok(());
    }
    let probs = policy.logits(instance, state)?.probs();
    for token in feasible_actions(instance, state) {
        let mut child = state.clone();
        child.logprob += (probs[token] + PROB_SMOOTHING).ln();
        child.apply(instance, token);
        descend(policy, instance, &child, start, start_logprob, out)?;
    }
    Ok(())
}
