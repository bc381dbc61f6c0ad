//! Move enumeration and local search over routed solutions.
//!
//! Nine move families are supported. Within one route: relocate, exchange,
//! segment reversal (two_opt), and segment relocation (or_opt). Between two
//! routes: tail swap without reversal (two_opt_star), single-customer
//! insertion (insert_inter) and swap (swap_inter), segment exchange where
//! one segment may be empty (cross), and segment exchange with optional
//! reversal on reinsertion (lambda_interchange).
//!
//! Every enumerated move carries a cost delta computed from the handful of
//! edges it touches; applying the move and re-evaluating from scratch must
//! agree with that delta to within 1e-9, which the tests enforce.

use crate::model::{Instance, Solution};
use thiserror::Error;

/// Moves with predicted gains above this threshold count as improvements.
pub const MIN_GAIN: f64 = 1e-9;

/// Errors from move application and search.
#[derive(Debug, Error)]
pub enum ImproveError {
    #[error("move no longer matches the solution it was enumerated on")]
    StaleMove,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// The move families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Relocate,
    Exchange,
    TwoOpt,
    OrOpt,
    TwoOptStar,
    InsertInter,
    SwapInter,
    Cross,
    LambdaInterchange,
}

impl Operator {
    pub const ALL: [Operator; 9] = [
        Operator::Relocate,
        Operator::Exchange,
        Operator::TwoOpt,
        Operator::OrOpt,
        Operator::TwoOptStar,
        Operator::InsertInter,
        Operator::SwapInter,
        Operator::Cross,
        Operator::LambdaInterchange,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Operator::Relocate => "relocate",
            Operator::Exchange => "exchange",
            Operator::TwoOpt => "two_opt",
            Operator::OrOpt => "or_opt",
            Operator::TwoOptStar => "two_opt_star",
            Operator::InsertInter => "insert_inter",
            Operator::SwapInter => "swap_inter",
            Operator::Cross => "cross",
            Operator::LambdaInterchange => "lambda_interchange",
        }
    }

    /// Parses the snake_case name used by [`Operator::name`].
    pub fn parse(s: &str) -> Option<Operator> {
        Operator::ALL.iter().copied().find(|op| op.name() == s)
    }
}

/// Segment length bounds shared by the segment-based operators.
#[derive(Debug, Clone, Copy)]
pub struct MoveParams {
    /// Longest segment or_opt may relocate.
    pub or_opt_max: usize,
    /// Longest segment cross and lambda_interchange may exchange.
    pub lambda: usize,
}

impl Default for MoveParams {
    fn default() -> Self {
        MoveParams {
            or_opt_max: 3,
            lambda: 3,
        }
    }
}

/// Exact description of one move. Positions are 0-based within a route;
/// insertion slots count 0..=len (a slot sits before the customer at the
/// same position). For relocate and or_opt the target slot refers to the
/// route with the moved piece already removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MoveKind {
    Relocate {
        route: usize,
        from: usize,
        to: usize,
    },
    Exchange {
        route: usize,
        a: usize,
        b: usize,
    },
    /// Reverses positions start..=end of one route.
    TwoOpt {
        route: usize,
        start: usize,
        end: usize,
    },
    /// Moves the segment [start, start+len) to slot `to`, orientation kept.
    OrOpt {
        route: usize,
        start: usize,
        len: usize,
        to: usize,
    },
    /// Swaps the tails of two routes at the given cut slots, no reversal.
    TwoOptStar {
        route_a: usize,
        cut_a: usize,
        route_b: usize,
        cut_b: usize,
    },
    InsertInter {
        from_route: usize,
        from_pos: usize,
        to_route: usize,
        to_slot: usize,
    },
    SwapInter {
        route_a: usize,
        pos_a: usize,
        route_b: usize,
        pos_b: usize,
    },
    /// Exchanges the segments [start, start+len) of two routes; a zero
    /// length side contributes nothing and its start acts as the slot
    /// where the other segment lands.
    Cross {
        route_a: usize,
        start_a: usize,
        len_a: usize,
        route_b: usize,
        start_b: usize,
        len_b: usize,
    },
    /// Cross with each segment optionally reversed on reinsertion.
    LambdaInterchange {
        route_a: usize,
        start_a: usize,
        len_a: usize,
        rev_a: bool,
        route_b: usize,
        start_b: usize,
        len_b: usize,
        rev_b: bool,
    },
}

/// One enumerated move with its predicted cost change.
#[derive(Debug, Clone, Copy)]
pub struct MoveSpec {
    pub op: Operator,
    pub kind: MoveKind,
    /// Cost change if applied; negative improves the solution.
    pub delta: f64,
    /// Cost of the solution the move was enumerated on, used to reject
    /// moves applied to a different solution.
    base_cost: f64,
}

fn before(route: &[usize], pos: usize) -> usize {
    if pos == 0 {
        0
    } else {
        route[pos - 1]
    }
}

fn after(route: &[usize], pos: usize) -> usize {
    if pos + 1 >= route.len() {
        0
    } else {
        route[pos + 1]
    }
}

/// Nodes on either side of insertion slot `slot` (0..=len).
fn slot_ends(route: &[usize], slot: usize) -> (usize, usize) {
    let u = if slot == 0 { 0 } else { route[slot - 1] };
    let v = if slot == route.len() { 0 } else { route[slot] };
    (u, v)
}

/// Node at position `i` of `route` with [start, start+len) removed.
fn at_skipping(route: &[usize], start: usize, len: usize, i: usize) -> usize {
    if i < start {
        route[i]
    } else {
        route[i + len]
    }
}

/// Slot ends in `route` with [start, start+len) removed.
fn slot_ends_skipping(route: &[usize], start: usize, len: usize, slot: usize) -> (usize, usize) {
    let m = route.len() - len;
    let u = if slot == 0 {
        0
    } else {
        at_skipping(route, start, len, slot - 1)
    };
    let v = if slot == m {
        0
    } else {
        at_skipping(route, start, len, slot)
    };
    (u, v)
}

fn route_load(instance: &Instance, route: &[usize]) -> f64 {
    route.iter().map(|&c| instance.demand(c)).sum()
}

fn segment_load(instance: &Instance, seg: &[usize]) -> f64 {
    seg.iter().map(|&c| instance.demand(c)).sum()
}

/// Cost change of replacing segment `out` by segment `inn` between the
/// boundary nodes `p` and `s`. Either segment may be empty; interior
/// segment edges travel with the segment and cancel.
fn splice_delta(instance: &Instance, p: usize, s: usize, out: &[usize], inn: &[usize]) -> f64 {
    let removed = match out {
        [] => 0.0,
        _ => instance.dist(p, out[0]) + instance.dist(*out.last().unwrap(), s),
    };
    let added = match inn {
        [] => 0.0,
        _ => instance.dist(p, inn[0]) + instance.dist(*inn.last().unwrap(), s),
    };
    let bridge_old = if out.is_empty() { instance.dist(p, s) } else { 0.0 };
    let bridge_new = if inn.is_empty() { instance.dist(p, s) } else { 0.0 };
    added + bridge_new - removed - bridge_old
}

fn relocate_moves(instance: &Instance, sol: &Solution, out: &mut Vec<MoveSpec>) {
    for (ri, route) in sol.routes().iter().enumerate() {
        let m = route.len();
        if m < 2 {
            continue;
        }
        for from in 0..m {
            let c = route[from];
            let removal = instance.dist(before(route, from), after(route, from))
                - instance.dist(before(route, from), c)
                - instance.dist(c, after(route, from));
            for to in 0..m {
                if to == from {
                    continue;
                }
                let (u, v) = slot_ends_skipping(route, from, 1, to);
                let insertion = instance.dist(u, c) + instance.dist(c, v) - instance.dist(u, v);
                out.push(MoveSpec {
                    op: Operator::Relocate,
                    kind: MoveKind::Relocate {
                        route: ri,
                        from,
                        to,
                    },
                    delta: removal + insertion,
                    base_cost: sol.cost(),
                });
            }
        }
    }
}

fn exchange_moves(instance: &Instance, sol: &Solution, out: &mut Vec<MoveSpec>) {
    for (ri, route) in sol.routes().iter().enumerate() {
        let m = route.len();
        for a in 0..m {
            for b in a + 1..m {
                let (ca, cb) = (route[a], route[b]);
                let delta = if b == a + 1 {
                    instance.dist(before(route, a), cb) + instance.dist(ca, after(route, b))
                        - instance.dist(before(route, a), ca)
                        - instance.dist(cb, after(route, b))
                } else {
                    instance.dist(before(route, a), cb)
                        + instance.dist(cb, after(route, a))
                        + instance.dist(before(route, b), ca)
                        + instance.dist(ca, after(route, b))
                        - instance.dist(before(route, a), ca)
                        - instance.dist(ca, after(route, a))
                        - instance.dist(before(route, b), cb)
                        - instance.dist(cb, after(route, b))
                };
                out.push(MoveSpec {
                    op: Operator::Exchange,
                    kind: MoveKind::Exchange { route: ri, a, b },
                    delta,
                    base_cost: sol.cost(),
                });
            }
        }
    }
}

fn two_opt_moves(instance: &Instance, sol: &Solution, out: &mut Vec<MoveSpec>) {
    for (ri, route) in sol.routes().iter().enumerate() {
        let m = route.len();
        for start in 0..m {
            for end in start + 1..m {
                let delta = instance.dist(before(route, start), route[end])
                    + instance.dist(route[start], after(route, end))
                    - instance.dist(before(route, start), route[start])
                    - instance.dist(route[end], after(route, end));
                out.push(MoveSpec {
                    op: Operator::TwoOpt,
                    kind: MoveKind::TwoOpt {
                        route: ri,
                        start,
                        end,
                    },
                    delta,
                    base_cost: sol.cost(),
                });
            }
        }
    }
}

fn or_opt_moves(instance: &Instance, sol: &Solution, params: &MoveParams, out: &mut Vec<MoveSpec>) {
    for (ri, route) in sol.routes().iter().enumerate() {
        let m = route.len();
        for len in 1..=params.or_opt_max.min(m.saturating_sub(1)) {
            for start in 0..=m - len {
                let seg_first = route[start];
                let seg_last = route[start + len - 1];
                let p = before(route, start);
                let s = after(route, start + len - 1);
                let removal =
                    instance.dist(p, s) - instance.dist(p, seg_first) - instance.dist(seg_last, s);
                for to in 0..=m - len {
                    if to == start {
                        continue;
                    }
                    let (u, v) = slot_ends_skipping(route, start, len, to);
                    let insertion = instance.dist(u, seg_first) + instance.dist(seg_last, v)
                        - instance.dist(u, v);
                    out.push(MoveSpec {
                        op: Operator::OrOpt,
                        kind: MoveKind::OrOpt {
                            route: ri,
                            start,
                            len,
                            to,
                        },
                        delta: removal + insertion,
                        base_cost: sol.cost(),
                    });
                }
            }
        }
    }
}

fn two_opt_star_moves(instance: &Instance, sol: &Solution, out: &mut Vec<MoveSpec>) {
    let routes = sol.routes();
    let loads: Vec<f64> = routes.iter().map(|r| route_load(instance, r)).collect();
    for ra in 0..routes.len() {
        for rb in ra + 1..routes.len() {
            let (a, b) = (&routes[ra], &routes[rb]);
            let mut prefix_a = vec![0.0];
            for &c in a.iter() {
                prefix_a.push(prefix_a.last().unwrap() + instance.demand(c));
            }
            let mut prefix_b = vec![0.0];
            for &c in b.iter() {
                prefix_b.push(prefix_b.last().unwrap() + instance.demand(c));
            }
            for cut_a in 0..=a.len() {
                for cut_b in 0..=b.len() {
                    if (cut_a == 0 && cut_b == 0) || (cut_a == a.len() && cut_b == b.len()) {
                        continue;
                    }
                    let new_load_a = prefix_a[cut_a] + (loads[rb] - prefix_b[cut_b]);
                    let new_load_b = prefix_b[cut_b] + (loads[ra] - prefix_a[cut_a]);
                    if new_load_a > instance.capacity() || new_load_b > instance.capacity() {
                        continue;
                    }
                    let end_a = if cut_a == 0 { 0 } else { a[cut_a - 1] };
                    let begin_a = if cut_a == a.len() { 0 } else { a[cut_a] };
                    let end_b = if cut_b == 0 { 0 } else { b[cut_b - 1] };
                    let begin_b = if cut_b == b.len() { 0 } else { b[cut_b] };
                    let delta = instance.dist(end_a, begin_b) + instance.dist(end_b, begin_a)
                        - instance.dist(end_a, begin_a)
                        - instance.dist(end_b, begin_b);
                    out.push(MoveSpec {
                        op: Operator::TwoOptStar,
                        kind: MoveKind::TwoOptStar {
                            route_a: ra,
                            cut_a,
                            route_b: rb,
                            cut_b,
                        },
                        delta,
                        base_cost: sol.cost(),
                    });
                }
            }
        }
    }
}

fn insert_inter_moves(instance: &Instance, sol: &Solution, out: &mut Vec<MoveSpec>) {
    let routes = sol.routes();
    let loads: Vec<f64> = routes.iter().map(|r| route_load(instance, r)).collect();
    for from_route in 0..routes.len() {
        for to_route in 0..routes.len() {
            if from_route == to_route {
                continue;
            }
            let (fr, tr) = (&routes[from_route], &routes[to_route]);
            for from_pos in 0..fr.len() {
                let c = fr[from_pos];
                if loads[to_route] + instance.demand(c) > instance.capacity() {
                    continue;
                }
                let removal = instance.dist(before(fr, from_pos), after(fr, from_pos))
                    - instance.dist(before(fr, from_pos), c)
                    - instance.dist(c, after(fr, from_pos));
                for to_slot in 0..=tr.len() {
                    let (u, v) = slot_ends(tr, to_slot);
                    let insertion =
                        instance.dist(u, c) + instance.dist(c, v) - instance.dist(u, v);
                    out.push(MoveSpec {
                        op: Operator::InsertInter,
                        kind: MoveKind::InsertInter {
                            from_route,
                            from_pos,
                            to_route,
                            to_slot,
                        },
                        delta: removal + insertion,
                        base_cost: sol.cost(),
                    });
                }
            }
        }
    }
}

fn swap_inter_moves(instance: &Instance, sol: &Solution, out: &mut Vec<MoveSpec>) {
    let routes = sol.routes();
    let loads: Vec<f64> = routes.iter().map(|r| route_load(instance, r)).collect();
    for ra in 0..routes.len() {
        for rb in ra + 1..routes.len() {
            let (a, b) = (&routes[ra], &routes[rb]);
            for pos_a in 0..a.len() {
                for pos_b in 0..b.len() {
                    let (ca, cb) = (a[pos_a], b[pos_b]);
                    let da = instance.demand(ca);
                    let db = instance.demand(cb);
                    if loads[ra] - da + db > instance.capacity()
                        || loads[rb] - db + da > instance.capacity()
                    {
                        continue;
                    }
                    let delta = instance.dist(before(a, pos_a), cb)
                        + instance.dist(cb, after(a, pos_a))
                        - instance.dist(before(a, pos_a), ca)
                        - instance.dist(ca, after(a, pos_a))
                        + instance.dist(before(b, pos_b), ca)
                        + instance.dist(ca, after(b, pos_b))
                        - instance.dist(before(b, pos_b), cb)
                        - instance.dist(cb, after(b, pos_b));
                    out.push(MoveSpec {
                        op: Operator::SwapInter,
                        kind: MoveKind::SwapInter {
                            route_a: ra,
                            pos_a,
                            route_b: rb,
                            pos_b,
                        },
                        delta,
                        base_cost: sol.cost(),
                    });
                }
            }
        }
    }
}

/// Shared enumeration for cross and lambda_interchange; `with_reversal`
/// additionally emits the reversed-orientation variants.
fn segment_swap_moves(
    instance: &Instance,
    sol: &Solution,
    params: &MoveParams,
    with_reversal: bool,
    out: &mut Vec<MoveSpec>,
) {
    let routes = sol.routes();
    let loads: Vec<f64> = routes.iter().map(|r| route_load(instance, r)).collect();
    for ra in 0..routes.len() {
        for rb in ra + 1..routes.len() {
            let (a, b) = (&routes[ra], &routes[rb]);
            for len_a in 0..=params.lambda.min(a.len()) {
                for len_b in 0..=params.lambda.min(b.len()) {
                    if len_a == 0 && len_b == 0 {
                        continue;
                    }
                    let starts_a = if len_a == 0 { a.len() + 1 } else { a.len() - len_a + 1 };
                    let starts_b = if len_b == 0 { b.len() + 1 } else { b.len() - len_b + 1 };
                    for start_a in 0..starts_a {
                        let seg_a = &a[start_a..start_a + len_a];
                        for start_b in 0..starts_b {
                            let seg_b = &b[start_b..start_b + len_b];
                            let load_shift =
                                segment_load(instance, seg_b) - segment_load(instance, seg_a);
                            if loads[ra] + load_shift > instance.capacity()
                                || loads[rb] - load_shift > instance.capacity()
                            {
                                continue;
                            }
                            let (pa, sa) = if len_a == 0 {
                                slot_ends(a, start_a)
                            } else {
                                (before(a, start_a), after(a, start_a + len_a - 1))
                            };
                            let (pb, sb) = if len_b == 0 {
                                slot_ends(b, start_b)
                            } else {
                                (before(b, start_b), after(b, start_b + len_b - 1))
                            };
                            let orientations: &[(bool, bool)] = if !with_reversal {
                                &[(false, false)]
                            } else {
                                match (len_a >= 2, len_b >= 2) {
                                    (false, false) => &[(false, false)],
                                    (true, false) => &[(false, false), (true, false)],
                                    (false, true) => &[(false, false), (false, true)],
                                    (true, true) => &[
                                        (false, false),
                                        (true, false),
                                        (false, true),
                                        (true, true),
                                    ],
                                }
                            };
                            for &(rev_a, rev_b) in orientations {
                                let mut seg_a_in: Vec<usize> = seg_a.to_vec();
                                if rev_a {
                                    seg_a_in.reverse();
                                }
                                let mut seg_b_in: Vec<usize> = seg_b.to_vec();
                                if rev_b {
                                    seg_b_in.reverse();
                                }
                                let delta = splice_delta(instance, pa, sa, seg_a, &seg_b_in)
                                    + splice_delta(instance, pb, sb, seg_b, &seg_a_in);
                                let (op, kind) = if with_reversal {
                                    (
                                        Operator::LambdaInterchange,
                                        MoveKind::LambdaInterchange {
                                            route_a: ra,
                                            start_a,
                                            len_a,
                                            rev_a,
                                            route_b: rb,
                                            start_b,
                                            len_b,
                                            rev_b,
                                        },
                                    )
                                } else {
                                    (
                                        Operator::Cross,
                                        MoveKind::Cross {
                                            route_a: ra,
                                            start_a,
                                            len_a,
                                            route_b: rb,
                                            start_b,
                                            len_b,
                                        },
                                    )
                                };
                                out.push(MoveSpec {
                                    op,
                                    kind,
                                    delta,
                                    base_cost: sol.cost(),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Enumerates every feasible move of one operator family exactly once.
pub fn enumerate_moves(
    instance: &Instance,
    solution: &Solution,
    op: Operator,
    params: &MoveParams,
) -> Vec<MoveSpec> {
    let mut out = Vec::new();
    match op {
        Operator::Relocate => relocate_moves(instance, solution, &mut out),
        Operator::Exchange => exchange_moves(instance, solution, &mut out),
        Operator::TwoOpt => two_opt_moves(instance, solution, &mut out),
        Operator::OrOpt => or_opt_moves(instance, solution, params, &mut out),
        Operator::TwoOptStar => two_opt_star_moves(instance, solution, &mut out),
        Operator::InsertInter => insert_inter_moves(instance, solution, &mut out),
        Operator::SwapInter => swap_inter_moves(instance, solution, &mut out),
        Operator::Cross => segment_swap_moves(instance, solution, params, false, &mut out),
        Operator::LambdaInterchange => {
            segment_swap_moves(instance, solution, params, true, &mut out)
        }
    }
    out
}

fn kind_in_range(kind: &MoveKind, routes: &[Vec<usize>]) -> bool {
    let route_ok = |r: usize| r < routes.len();
    let pos_ok = |r: usize, p: usize| route_ok(r) && p < routes[r].len();
    let slot_ok = |r: usize, s: usize| route_ok(r) && s <= routes[r].len();
    let seg_ok = |r: usize, start: usize, len: usize| {
        route_ok(r)
            && if len == 0 {
                start <= routes[r].len()
            } else {
                start + len <= routes[r].len()
            }
    };
    match *kind {
        MoveKind::Relocate { route, from, to } => {
            pos_ok(route, from) && to < routes[route].len()
        }
        MoveKind::Exchange { route, a, b } => pos_ok(route, a) && pos_ok(route, b) && a < b,
        MoveKind::TwoOpt { route, start, end } => {
            pos_ok(route, start) && pos_ok(route, end) && start < end
        }
        MoveKind::OrOpt {
            route,
            start,
            len,
            to,
        } => seg_ok(route, start, len) && len >= 1 && to <= routes[route].len() - len,
        MoveKind::TwoOptStar {
            route_a,
            cut_a,
            route_b,
            cut_b,
        } => route_a != route_b && slot_ok(route_a, cut_a) && slot_ok(route_b, cut_b),
        MoveKind::InsertInter {
            from_route,
            from_pos,
            to_route,
            to_slot,
        } => from_route != to_route && pos_ok(from_route, from_pos) && slot_ok(to_route, to_slot),
        MoveKind::SwapInter {
            route_a,
            pos_a,
            route_b,
            pos_b,
        } => route_a != route_b && pos_ok(route_a, pos_a) && pos_ok(route_b, pos_b),
        MoveKind::Cross {
            route_a,
            start_a,
            len_a,
            route_b,
            start_b,
            len_b,
        } => {
            route_a != route_b && seg_ok(route_a, start_a, len_a) && seg_ok(route_b, start_b, len_b)
        }
        MoveKind::LambdaInterchange {
            route_a,
            start_a,
            len_a,
            route_b,
            start_b,
            len_b,
            ..
        } => {
            route_a != route_b && seg_ok(route_a, start_a, len_a) && seg_ok(route_b, start_b, len_b)
        }
    }
}

/// Applies a move, returning the rebuilt solution. The move must have been
/// enumerated on exactly this solution; anything else is rejected as stale.
pub fn apply_move(
    instance: &Instance,
    solution: &Solution,
    mv: &MoveSpec,
) -> Result<Solution, ImproveError> {
    if (solution.cost() - mv.base_cost).abs() > 1e-9 || !kind_in_range(&mv.kind, solution.routes())
    {
        return Err(ImproveError::StaleMove);
    }
    let mut routes: Vec<Vec<usize>> = solution.routes().to_vec();
    match mv.kind {
        MoveKind::Relocate { route, from, to } => {
            let c = routes[route].remove(from);
            routes[route].insert(to, c);
        }
        MoveKind::Exchange { route, a, b } => routes[route].swap(a, b),
        MoveKind::TwoOpt { route, start, end } => routes[route][start..=end].reverse(),
        MoveKind::OrOpt {
            route,
            start,
            len,
            to,
        } => {
            let seg: Vec<usize> = routes[route].drain(start..start + len).collect();
            for (i, c) in seg.into_iter().enumerate() {
                routes[route].insert(to + i, c);
            }
        }
        MoveKind::TwoOptStar {
            route_a,
            cut_a,
            route_b,
            cut_b,
        } => {
            let tail_a: Vec<usize> = routes[route_a].split_off(cut_a);
            let tail_b: Vec<usize> = routes[route_b].split_off(cut_b);
            routes[route_a].extend(tail_b);
            routes[route_b].extend(tail_a);
        }
        MoveKind::InsertInter {
            from_route,
            from_pos,
            to_route,
            to_slot,
        } => {
            let c = routes[from_route].remove(from_pos);
            routes[to_route].insert(to_slot, c);
        }
        MoveKind::SwapInter {
            route_a,
            pos_a,
            route_b,
            pos_b,
        } => {
            let ca = routes[route_a][pos_a];
            let cb = routes[route_b][pos_b];
            routes[route_a][pos_a] = cb;
            routes[route_b][pos_b] = ca;
        }
        MoveKind::Cross {
            route_a,
            start_a,
            len_a,
            route_b,
            start_b,
            len_b,
        } => {
            splice_swap(
                &mut routes, route_a, start_a, len_a, false, route_b, start_b, len_b, false,
            );
        }
        MoveKind::LambdaInterchange {
            route_a,
            start_a,
            len_a,
            rev_a,
            route_b,
            start_b,
            len_b,
            rev_b,
        } => {
            splice_swap(
                &mut routes, route_a, start_a, len_a, rev_a, route_b, start_b, len_b, rev_b,
            );
        }
    }
    Ok(Solution::from_routes(instance, routes)?)
}

#[allow(clippy::too_many_arguments)]
fn splice_swap(
    routes: &mut [Vec<usize>],
    route_a: usize,
    start_a: usize,
    len_a: usize,
    rev_a: bool,
    route_b: usize,
    start_b: usize,
    len_b: usize,
    rev_b: bool,
) {
    let mut seg_a: Vec<usize> = routes[route_a]
        .drain(start_a..start_a + len_a)
        .collect();
    let mut seg_b: Vec<usize> = routes[route_b]
        .drain(start_b..start_b + len_b)
        .collect();
    if rev_a {
        seg_a.reverse();
    }
    if rev_b {
        seg_b.reverse();
    }
    for (i, c) in seg_b.into_iter().enumerate() {
        routes[route_a].insert(start_a + i, c);
    }
    for (i, c) in seg_a.into_iter().enumerate() {
        routes[route_b].insert(start_b + i, c);
    }
}

/// Pivot rule of the improvement loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Apply the first improving move found, rescanning after each.
    FirstImprovement,
    /// Scan everything, apply the single best improving move, repeat.
    BestImprovement,
}

/// Configuration of [`local_search`].
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub operators: Vec<Operator>,
    pub params: MoveParams,
    /// Upper bound on applied moves, a safety stop for huge instances.
    pub max_moves: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            strategy: Strategy::BestImprovement,
            operators: Operator::ALL.to_vec(),
            params: MoveParams::default(),
            max_moves: 100_000,
        }
    }
}

/// Outcome of a local search run.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub solution: Solution,
    pub moves_applied: usize,
}

/// Runs the improvement loop until no enumerated move gains more than
/// [`MIN_GAIN`] (or the move budget runs out). Cost never increases.
pub fn local_search(
    instance: &Instance,
    start: &Solution,
    config: &SearchConfig,
) -> Result<SearchOutcome, ImproveError> {
    let mut current = start.clone();
    let mut moves_applied = 0;
    'outer: while moves_applied < config.max_moves {
        match config.strategy {
            Strategy::FirstImprovement => {
                for &op in &config.operators {
                    let moves = enumerate_moves(instance, &current, op, &config.params);
                    if let Some(mv) = moves.iter().find(|m| m.delta < -MIN_GAIN) {
                        current = apply_move(instance, &current, mv)?;
                        moves_applied += 1;
                        continue 'outer;
                    }
                }
                break;
            }
            Strategy::BestImprovement => {
                let mut best: Option<MoveSpec> = None;
                for &op in &config.operators {
                    for mv in enumerate_moves(instance, &current, op, &config.params) {
                        if mv.delta < -MIN_GAIN
                            && best.map_or(true, |b| mv.delta < b.delta)
                        {
                            best = Some(mv);
                        }
                    }
                }
                match best {
                    Some(mv) => {
                        current = apply_move(instance, &current, &mv)?;
                        moves_applied += 1;
                    }
                    None => break,
                }
            }
        }
    }
    Ok(SearchOutcome {
        solution: current,
        moves_applied,
    })
}

/// Orders one route with repeated best-gain segment reversals until no
/// reversal improves. Used to clean up cluster tours.
pub fn two_opt_route(instance: &Instance, route: &[usize]) -> Vec<usize> {
    let mut route = route.to_vec();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for start in 0..route.len() {
            for end in start + 1..route.len() {
                let delta = instance.dist(before(&route, start), route[end])
                    + instance.dist(route[start], after(&route, end))
                    - instance.dist(before(&route, start), route[start])
                    - instance.dist(route[end], after(&route, end));
                if delta < -MIN_GAIN && best.map_or(true, |(_, _, d)| delta < d) {
                    best = Some((start, end, delta));
                }
            }
        }
        match best {
            Some((start, end, _)) => route[start..=end].reverse(),
            None => break,
        }
    }
    route
}
