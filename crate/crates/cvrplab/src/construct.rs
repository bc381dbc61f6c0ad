//! Construction heuristics: nearest neighbor, cheapest insertion,
//! savings-based merging, and angular sweep.
//!
//! All constructors return capacity-feasible solutions covering every
//! customer, and all ties fall to the lowest customer index so repeated
//! runs are identical.

use crate::improve::two_opt_route;
use crate::model::{Instance, Solution};
use std::f64::consts::TAU;

/// Route-building discipline for the nearest-neighbor constructor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NearestMode {
    /// Fill one route at a time, opening a new one when nothing fits.
    Sequential,
    /// Grow several routes at once; each iteration every route tries to
    /// take its nearest feasible customer, contention resolved by the
    /// smallest extension cost. `fleet_hint` seeds the number of routes;
    /// the default is total demand over capacity, rounded up.
    Parallel { fleet_hint: Option<usize> },
}

/// Merge discipline for the savings constructor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SavingsMode {
    /// Walk the savings list once, merging wherever still possible.
    Parallel,
    /// Grow one route at a time, always taking its best remaining merge.
    Sequential,
}

/// Route-forming discipline for the sweep constructor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Append customers in angular order, cutting routes at capacity.
    Circular,
    /// Same angular clusters, but order each cluster with 2-opt.
    ClusterTwoOpt,
}

/// Nearest-neighbor construction.
pub fn nearest_neighbor(instance: &Instance, mode: NearestMode) -> Solution {
    match mode {
        NearestMode::Sequential => nearest_sequential(instance),
        NearestMode::Parallel { fleet_hint } => nearest_parallel(instance, fleet_hint),
    }
}

fn nearest_sequential(instance: &Instance) -> Solution {
    let n = instance.n();
    let mut unrouted: Vec<bool> = vec![true; n + 1];
    let mut remaining = n;
    let mut routes: Vec<Vec<usize>> = Vec::new();
    let mut route: Vec<usize> = Vec::new();
    let mut load = 0.0;
    let mut current = 0usize;
    while remaining > 0 {
        let mut best: Option<(f64, usize)> = None;
        for c in 1..=n {
            if unrouted[c] && load + instance.demand(c) <= instance.capacity() {
                let d = instance.dist(current, c);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
        }
        match best {
            Some((_, c)) => {
                route.push(c);
                load += instance.demand(c);
                current = c;
                unrouted[c] = false;
                remaining -= 1;
            }
            None => {
                routes.push(std::mem::take(&mut route));
                load = 0.0;
                current = 0;
            }
        }
    }
    routes.push(route);
    Solution::from_routes(instance, routes).expect("constructed indices are valid")
}

fn nearest_parallel(instance: &Instance, fleet_hint: Option<usize>) -> Solution {
    let n = instance.n();
    let k = fleet_hint
        .unwrap_or_else(|| (instance.total_demand() / instance.capacity()).ceil() as usize)
        .clamp(1, n);
    let mut routes: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut loads: Vec<f64> = vec![0.0; k];
    let mut unrouted: Vec<bool> = vec![true; n + 1];
    let mut remaining = n;
    while remaining > 0 {
        // One synchronized round: every route may take one customer,
        // cheapest extensions claimed first.
        let mut taken = vec![false; routes.len()];
        let mut assigned_any = false;
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for (ri, route) in routes.iter().enumerate() {
                if taken[ri] {
                    continue;
                }
                let end = route.last().copied().unwrap_or(0);
                for c in 1..=n {
                    if unrouted[c] && loads[ri] + instance.demand(c) <= instance.capacity() {
                        let cand = (instance.dist(end, c), c, ri);
                        if best.map_or(true, |b| cand < b) {
                            best = Some(cand);
                        }
                    }
                }
            }
            match best {
                Some((_, c, ri)) => {
                    routes[ri].push(c);
                    loads[ri] += instance.demand(c);
                    unrouted[c] = false;
                    remaining -= 1;
                    taken[ri] = true;
                    assigned_any = true;
                    if remaining == 0 {
                        break;
                    }
                }
                None => break,
            }
        }
        if remaining > 0 && !assigned_any {
            // Nothing fit anywhere; open a fresh route from the depot.
            routes.push(Vec::new());
            loads.push(0.0);
        }
    }
    Solution::from_routes(instance, routes).expect("constructed indices are valid")
}

/// Cheapest-insertion construction: every iteration inserts the globally
/// cheapest (customer, position) among all routes, also considering a new
/// single-customer route at cost 2 * d(0, c).
pub fn cheapest_insertion(instance: &Instance) -> Solution {
    let n = instance.n();
    let mut routes: Vec<Vec<usize>> = Vec::new();
    let mut loads: Vec<f64> = Vec::new();
    let mut unrouted: Vec<bool> = vec![true; n + 1];
    for _ in 0..n {
        // (delta, customer, route, slot); route == routes.len() opens a
        // new route.
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for c in 1..=n {
            if !unrouted[c] {
                continue;
            }
            let fresh = (2.0 * instance.dist(0, c), c, routes.len(), 0);
            if best.map_or(true, |b| fresh < b) {
                best = Some(fresh);
            }
            for (ri, route) in routes.iter().enumerate() {
                if loads[ri] + instance.demand(c) > instance.capacity() {
                    continue;
                }
                for slot in 0..=route.len() {
                    let u = if slot == 0 { 0 } else { route[slot - 1] };
                    let v = if slot == route.len() { 0 } else { route[slot] };
                    let delta = instance.dist(u, c) + instance.dist(c, v) - instance.dist(u, v);
                    let cand = (delta, c, ri, slot);
                    if best.map_or(true, |b| cand < b) {
                        best = Some(cand);
                    }
                }
            }
        }
        let (_, c, ri, slot) = best.expect("an unrouted customer always has an insertion");
        if ri == routes.len() {
            routes.push(vec![c]);
            loads.push(instance.demand(c));
        } else {
            routes[ri].insert(slot, c);
            loads[ri] += instance.demand(c);
        }
        unrouted[c] = false;
    }
    Solution::from_routes(instance, routes).expect("constructed indices are valid")
}

/// The classical saving of serving j right after i instead of via the
/// depot: d(i,0) + d(0,j) - d(i,j).
pub fn saving(instance: &Instance, i: usize, j: usize) -> f64 {
    instance.dist(i, 0) + instance.dist(0, j) - instance.dist(i, j)
}

/// All pairwise savings sorted by value descending, ties by index.
fn sorted_savings(instance: &Instance) -> Vec<(f64, usize, usize)> {
    let n = instance.n();
    let mut list = Vec::with_capacity(n * (n - 1) / 2);
    for i in 1..=n {
        for j in i + 1..=n {
            list.push((saving(instance, i, j), i, j));
        }
    }
    list.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    list
}

struct MergeState {
    routes: Vec<Vec<usize>>,
    loads: Vec<f64>,
    route_of: Vec<usize>,
}

impl MergeState {
    fn singletons(instance: &Instance) -> Self {
        let n = instance.n();
        MergeState {
            routes: (1..=n).map(|c| vec![c]).collect(),
            loads: (1..=n).map(|c| instance.demand(c)).collect(),
            route_of: (0..=n).map(|c| c.saturating_sub(1)).collect(),
        }
    }

    /// Merges the routes of customers i and j so that i and j become
    /// adjacent, if both are route endpoints in distinct routes and the
    /// joint load fits. Returns whether a merge happened; the surviving
    /// route is the one that contained i.
    fn try_merge(&mut self, instance: &Instance, i: usize, j: usize) -> bool {
        let (ri, rj) = (self.route_of[i], self.route_of[j]);
        if ri == rj || self.routes[ri].is_empty() || self.routes[rj].is_empty() {
            return false;
        }
        if self.loads[ri] + self.loads[rj] > instance.capacity() {
            return false;
        }
        let a = &self.routes[ri];
        let b = &self.routes[rj];
        let i_first = a[0] == i;
        let i_last = *a.last().unwrap() == i;
        let j_first = b[0] == j;
        let j_last = *b.last().unwrap() == j;
        if !(i_first || i_last) || !(j_first || j_last) {
            return false;
        }
        // Orient both routes so the join runs ...i, j... and append.
        let mut absorbed = std::mem::take(&mut self.routes[rj]);
        if !j_first {
            absorbed.reverse();
        }
        if !i_last {
            self.routes[ri].reverse();
        }
        for &c in &absorbed {
            self.route_of[c] = ri;
        }
        self.routes[ri].extend(absorbed);
        self.loads[ri] += self.loads[rj];
        self.loads[rj] = 0.0;
        true
    }

    fn into_solution(self, instance: &Instance) -> Solution {
        Solution::from_routes(instance, self.routes).expect("constructed indices are valid")
    }
}

/// Savings construction. Both modes precompute and sort the full savings
/// list once; they differ only in merge scheduling.
pub fn savings(instance: &Instance, mode: SavingsMode) -> Solution {
    let list = sorted_savings(instance);
    let mut state = MergeState::singletons(instance);
    match mode {
        SavingsMode::Parallel => {
            // Values never change, so one descending pass repeatedly
            // applies the best merge still available.
            for &(_, i, j) in &list {
                state.try_merge(instance, i, j);
            }
        }
        SavingsMode::Sequential => {
            for seed_route in 0..instance.n() {
                if state.routes[seed_route].is_empty() {
                    continue;
                }
                // Extend this route while its endpoints admit any merge,
                // always taking the largest remaining saving. A merge may
                // absorb the route into another, so follow a representative
                // customer rather than the route id.
                let rep = state.routes[seed_route][0];
                'grow: loop {
                    let current = state.route_of[rep];
                    let first = state.routes[current][0];
                    let last = *state.routes[current].last().unwrap();
                    for &(_, i, j) in &list {
                        let touches = i == first || i == last || j == first || j == last;
                        if touches && state.try_merge(instance, i, j) {
                            continue 'grow;
                        }
                    }
                    break;
                }
            }
        }
    }
    state.into_solution(instance)
}

/// Polar angle of a customer about the depot, in [0, 2*pi). A customer on
/// the depot gets angle 0.
pub fn polar_angle(instance: &Instance, customer: usize) -> f64 {
    let d = instance.depot();
    let p = instance.coord(customer);
    let (dx, dy) = (p.x - d.x, p.y - d.y);
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    let theta = dy.atan2(dx);
    if theta < 0.0 {
        theta + TAU
    } else {
        theta
    }
}

/// Sweep construction: customers sorted by polar angle about the depot
/// (counterclockwise from the positive x axis) are packed greedily into
/// capacity-maximal clusters.
pub fn sweep(instance: &Instance, mode: SweepMode) -> Solution {
    let n = instance.n();
    let mut order: Vec<usize> = (1..=n).collect();
    order.sort_by(|&a, &b| {
        polar_angle(instance, a)
            .partial_cmp(&polar_angle(instance, b))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut cluster: Vec<usize> = Vec::new();
    let mut load = 0.0;
    for c in order {
        if load + instance.demand(c) > instance.capacity() {
            clusters.push(std::mem::take(&mut cluster));
            load = 0.0;
        }
        cluster.push(c);
        load += instance.demand(c);
    }
    clusters.push(cluster);
    let routes: Vec<Vec<usize>> = match mode {
        SweepMode::Circular => clusters,
        SweepMode::ClusterTwoOpt => clusters
            .into_iter()
            .map(|cl| two_opt_route(instance, &cl))
            .collect(),
    };
    Solution::from_routes(instance, routes).expect("constructed indices are valid")
}

/// The constructors as a flat list, convenient for benchmarks and the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    NearestSequential,
    NearestParallel,
    CheapestInsertion,
    SavingsParallel,
    SavingsSequential,
    SweepCircular,
    SweepTwoOpt,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::NearestSequential,
        Method::NearestParallel,
        Method::CheapestInsertion,
        Method::SavingsParallel,
        Method::SavingsSequential,
        Method::SweepCircular,
        Method::SweepTwoOpt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::NearestSequential => "nearest_seq",
            Method::NearestParallel => "nearest_par",
            Method::CheapestInsertion => "insertion",
            Method::SavingsParallel => "savings_par",
            Method::SavingsSequential => "savings_seq",
            Method::SweepCircular => "sweep",
            Method::SweepTwoOpt => "sweep_2opt",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.iter().copied().find(|m| m.name() == s)
    }

    pub fn build(&self, instance: &Instance) -> Solution {
        match self {
            Method::NearestSequential => nearest_neighbor(instance, NearestMode::Sequential),
            Method::NearestParallel => {
                nearest_neighbor(instance, NearestMode::Parallel { fleet_hint: None })
            }
            Method::CheapestInsertion => cheapest_insertion(instance),
            Method::SavingsParallel => savings(instance, SavingsMode::Parallel),
            Method::SavingsSequential => savings(instance, SavingsMode::Sequential),
            Method::SweepCircular => sweep(instance, SweepMode::Circular),
            Method::SweepTwoOpt => sweep(instance, SweepMode::ClusterTwoOpt),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate, GenConfig};
    use crate::model::{check_feasible, Point};

    fn inst(points: &[(f64, f64)], demands: &[f64], capacity: f64) -> Instance {
        Instance::new(
            "test",
            Point::new(0.0, 0.0),
            points.iter().map(|&(x, y)| Point::new(x, y)).collect(),
            demands.to_vec(),
            capacity,
        )
        .unwrap()
    }

    #[test]
    fn all_methods_feasible_on_random_instances() {
        for seed in 0..30 {
            let n = 1 + (seed as usize * 13) % 40;
            let instance = generate(&GenConfig {
                capacity: 12.0,
                ..GenConfig::for_size(n, seed)
            })
            .unwrap();
            for method in Method::ALL {
                let sol = method.build(&instance);
                let report = check_feasible(&instance, &sol);
                assert!(
                    report.is_feasible(),
                    "{} infeasible on n={n} seed={seed}: {:?}",
                    method.name(),
                    report.violations
                );
            }
        }
    }

    #[test]
    fn nearest_sequential_follows_greedy_trace() {
        // Customers on a line; greedy grabs 1, 2 then must restart for 3.
        let instance = inst(
            &[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)],
            &[1.0, 1.0, 1.0],
            2.0,
        );
        let sol = nearest_neighbor(&instance, NearestMode::Sequential);
        assert_eq!(sol.routes(), &[vec![1, 2], vec![3]]);
    }

    #[test]
    fn nearest_parallel_honors_fleet_hint() {
        let instance = inst(
            &[(1.0, 0.0), (2.0, 0.0), (-1.0, 0.0), (-2.0, 0.0)],
            &[1.0; 4],
            4.0,
        );
        let sol = nearest_neighbor(&instance, NearestMode::Parallel { fleet_hint: Some(2) });
        assert_eq!(sol.route_count(), 2);
        assert!(check_feasible(&instance, &sol).is_feasible());
    }

    #[test]
    fn nearest_parallel_spawns_routes_when_nothing_fits() {
        let instance = inst(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], &[2.0, 2.0, 2.0], 2.0);
        let sol = nearest_neighbor(&instance, NearestMode::Parallel { fleet_hint: Some(1) });
        assert_eq!(sol.route_count(), 3);
    }

    #[test]
    fn insertion_of_single_customer_is_one_route() {
        let instance = inst(&[(1.0, 1.0)], &[1.0], 5.0);
        let sol = cheapest_insertion(&instance);
        assert_eq!(sol.routes(), &[vec![1]]);
    }

    #[test]
    fn insertion_on_depot_line_is_tight() {
        // With zero-cost insertions available between collinear stops the
        // final tour is exactly twice the two extreme extents.
        for seed in 0..50u64 {
            let mut xs = Vec::new();
            let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
            for _ in 0..9 {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                xs.push(((state % 2001) as f64 - 1000.0) / 100.0);
            }
            let points: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.0)).collect();
            let instance = inst(&points, &vec![1.0; points.len()], 1000.0);
            let sol = cheapest_insertion(&instance);
            let right = xs.iter().cloned().fold(0.0f64, f64::max).max(0.0);
            let left = xs.iter().cloned().fold(0.0f64, f64::min).min(0.0);
            assert!(
                (sol.cost() - 2.0 * (right - left)).abs() < 1e-9,
                "seed {seed}: cost {} extents {right} {left}",
                sol.cost()
            );
        }
    }

    #[test]
    fn insertion_beats_nearest_on_depot_lines() {
        let mut wins = 0;
        let mut total_margin = 0.0;
        const TRIALS: usize = 100;
        for seed in 0..TRIALS as u64 {
            let mut xs = Vec::new();
            let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(3);
            for _ in 0..8 {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                xs.push(((state % 2001) as f64 - 1000.0) / 100.0);
            }
            let points: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.0)).collect();
            let instance = inst(&points, &vec![1.0; points.len()], 1000.0);
            let ins = cheapest_insertion(&instance).cost();
            let nn = nearest_neighbor(&instance, NearestMode::Sequential).cost();
            if ins <= nn + 1e-9 {
                wins += 1;
            }
            total_margin += nn - ins;
        }
        assert!(total_margin >= 0.0, "insertion lost on average");
        assert!(wins * 10 >= TRIALS * 9, "insertion won only {wins}/{TRIALS}");
    }

    #[test]
    fn saving_formula_hand_values() {
        let instance = inst(&[(0.0, 3.0), (4.0, 0.0)], &[1.0, 1.0], 10.0);
        // d(1,0)=3, d(0,2)=4, d(1,2)=5.
        assert!((saving(&instance, 1, 2) - 2.0).abs() < 1e-12);
        let opposite = inst(&[(1.0, 0.0), (-1.0, 0.0)], &[1.0, 1.0], 10.0);
        assert!(saving(&opposite, 1, 2).abs() < 1e-12);
    }

    #[test]
    fn savings_merges_a_line_into_one_route() {
        let instance = inst(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], &[1.0; 3], 3.0);
        for mode in [SavingsMode::Parallel, SavingsMode::Sequential] {
            let sol = savings(&instance, mode);
            assert_eq!(sol.route_count(), 1, "{mode:?}");
            assert!((sol.cost() - 6.0) < 1e-9, "{mode:?}: cost {}", sol.cost());
        }
    }

    #[test]
    fn savings_respects_capacity() {
        let instance = inst(&[(1.0, 0.0), (1.1, 0.0), (1.2, 0.0)], &[2.0; 3], 4.0);
        let sol = savings(&instance, SavingsMode::Parallel);
        assert_eq!(sol.route_count(), 2);
        assert!(check_feasible(&instance, &sol).is_feasible());
    }

    #[test]
    fn sweep_packs_in_angular_order() {
        // Angles: c1 at 0, c2 at 90, c3 at 180, c4 at 270 degrees.
        let instance = inst(
            &[(2.0, 0.0), (0.0, 1.0), (-1.5, 0.0), (0.0, -1.0)],
            &[1.0; 4],
            2.0,
        );
        let sol = sweep(&instance, SweepMode::Circular);
        assert_eq!(sol.routes(), &[vec![1, 2], vec![3, 4]]);
    }

    #[test]
    fn sweep_depot_coincident_customer_sorts_first() {
        let instance = inst(&[(0.0, 1.0), (0.0, 0.0)], &[1.0, 1.0], 10.0);
        assert_eq!(polar_angle(&instance, 2), 0.0);
        let sol = sweep(&instance, SweepMode::Circular);
        assert_eq!(sol.routes(), &[vec![2, 1]]);
    }

    #[test]
    fn sweep_is_invariant_under_non_wrapping_rotation() {
        for seed in 0..10 {
            let instance = generate(&GenConfig {
                capacity: 10.0,
                ..GenConfig::for_size(20, 4000 + seed)
            })
            .unwrap();
            let base = sweep(&instance, SweepMode::Circular);
            // Rotate about the depot by half the headroom below 2*pi so no
            // customer wraps past the angular origin.
            let max_angle = (1..=instance.n())
                .map(|c| polar_angle(&instance, c))
                .fold(0.0f64, f64::max);
            let theta = (TAU - max_angle) / 2.0;
            let depot = instance.depot();
            let (sin, cos) = theta.sin_cos();
            let rotated = instance.map_coords("rotated", |p| {
                let (dx, dy) = (p.x - depot.x, p.y - depot.y);
                Point::new(depot.x + cos * dx - sin * dy, depot.y + sin * dx + cos * dy)
            });
            let turned = sweep(&rotated, SweepMode::Circular);
            assert_eq!(base.routes(), turned.routes(), "seed {seed}");
            assert!((base.cost() - turned.cost()).abs() < 1e-9);
        }
    }

    #[test]
    fn cluster_mode_never_loses_to_circular() {
        for seed in 0..10 {
            let instance = generate(&GenConfig {
                capacity: 14.0,
                ..GenConfig::for_size(25, 7000 + seed)
            })
            .unwrap();
            let circular = sweep(&instance, SweepMode::Circular);
            let clustered = sweep(&instance, SweepMode::ClusterTwoOpt);
            assert!(clustered.cost() <= circular.cost() + 1e-9);
        }
    }
}
