//! Problem data model: instances, routed solutions, cost evaluation,
//! feasibility checking, and gaps against reference costs.
//!
//! An instance is one depot plus n customers with positive demands and a
//! shared vehicle capacity. A solution is a set of routes, each a sequence
//! of customer indices; every route implicitly starts and ends at the
//! depot. Costs are exact Euclidean distances in double precision, with no
//! integer rounding anywhere in the evaluation path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Euclidean distance to another point.
    pub fn dist(&self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Errors raised by the data model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid instance `{name}`: {reason}")]
    InvalidInstance { name: String, reason: String },
    #[error("node index {index} out of range, instance has customers 1..={n}")]
    BadIndex { index: usize, n: usize },
    #[error("reference cost must be positive, got {0}")]
    BadReference(f64),
    #[error("flat tour must start and end at the depot token 0")]
    BadFlatTour,
}

/// One CVRP instance: a depot, customers with demands, and a capacity.
///
/// Node 0 is the depot; customers are indexed 1..=n. Values are immutable
/// after construction, so instances can be shared freely across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instance {
    name: String,
    depot: Point,
    customers: Vec<Point>,
    demands: Vec<f64>,
    capacity: f64,
}

impl Instance {
    /// Builds an instance, validating demands against the capacity.
    pub fn new(
        name: impl Into<String>,
        depot: Point,
        customers: Vec<Point>,
        demands: Vec<f64>,
        capacity: f64,
    ) -> Result<Self, ModelError> {
        let name = name.into();
        let fail = |reason: &str| {
            Err(ModelError::InvalidInstance {
                name: name.clone(),
                reason: reason.to_string(),
            })
        };
        if customers.is_empty() {
            return fail("needs at least one customer");
        }
        if customers.len() != demands.len() {
            return fail("customer and demand counts differ");
        }
        if !capacity.is_finite() || capacity <= 0.0 {
            return fail("capacity must be a positive finite number");
        }
        for (i, &d) in demands.iter().enumerate() {
            if !d.is_finite() || d <= 0.0 {
                return fail(&format!("demand of customer {} must be positive", i + 1));
            }
            if d > capacity {
                return fail(&format!(
                    "demand of customer {} exceeds the vehicle capacity",
                    i + 1
                ));
            }
        }
        let all_coords_finite = customers
            .iter()
            .chain(std::iter::once(&depot))
            .all(|p| p.x.is_finite() && p.y.is_finite());
        if !all_coords_finite {
            return fail("coordinates must be finite");
        }
        Ok(Instance {
            name,
            depot,
            customers,
            demands,
            capacity,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of customers.
    pub fn n(&self) -> usize {
        self.customers.len()
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn depot(&self) -> Point {
        self.depot
    }

    /// Coordinate of a node; 0 is the depot, 1..=n are customers.
    pub fn coord(&self, node: usize) -> Point {
        if node == 0 {
            self.depot
        } else {
            self.customers[node - 1]
        }
    }

    /// Demand of a node; the depot has demand 0.
    pub fn demand(&self, node: usize) -> f64 {
        if node == 0 {
            0.0
        } else {
            self.demands[node - 1]
        }
    }

    /// Euclidean distance between two nodes.
    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.coord(a).dist(self.coord(b))
    }

    /// Sum of all customer demands.
    pub fn total_demand(&self) -> f64 {
        self.demands.iter().sum()
    }

    /// Returns a copy with every coordinate replaced by `map(point)`.
    ///
    /// Demands, capacity, and indexing are unchanged, so a solution found
    /// on the mapped instance indexes the original one as well.
    pub fn map_coords(&self, name: impl Into<String>, map: impl Fn(Point) -> Point) -> Instance {
        Instance {
            name: name.into(),
            depot: map(self.depot),
            customers: self.customers.iter().map(|&p| map(p)).collect(),
            demands: self.demands.clone(),
            capacity: self.capacity,
        }
    }

    fn check_route_indices(&self, routes: &[Vec<usize>]) -> Result<(), ModelError> {
        for route in routes {
            for &c in route {
                if c == 0 || c > self.n() {
                    return Err(ModelError::BadIndex {
                        index: c,
                        n: self.n(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A routed solution with its cached cost.
///
/// Routes store customer indices only; the depot legs at both ends of each
/// route are implicit. Empty routes are never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    routes: Vec<Vec<usize>>,
    cost: f64,
}

impl Solution {
    /// Builds a solution from routes, dropping empty ones and caching the
    /// cost. Indices are validated structurally; feasibility (duplicates,
    /// coverage, capacity) is the job of [`check_feasible`].
    pub fn from_routes(instance: &Instance, routes: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        instance.check_route_indices(&routes)?;
        let routes: Vec<Vec<usize>> = routes.into_iter().filter(|r| !r.is_empty()).collect();
        let cost = cost_of_routes(instance, &routes);
        Ok(Solution { routes, cost })
    }

    /// Rebuilds a solution from a flat token sequence such as
    /// `[0, 3, 1, 0, 2, 0]`. The sequence must start and end with the
    /// depot token; runs between depot tokens become routes.
    pub fn from_flat(instance: &Instance, tokens: &[usize]) -> Result<Self, ModelError> {
        if tokens.len() < 2 || tokens[0] != 0 || *tokens.last().unwrap() != 0 {
            return Err(ModelError::BadFlatTour);
        }
        let mut routes = Vec::new();
        let mut current = Vec::new();
        for &t in &tokens[1..] {
            if t == 0 {
                if !current.is_empty() {
                    routes.push(std::mem::take(&mut current));
                }
            } else {
                current.push(t);
            }
        }
        if !current.is_empty() {
            return Err(ModelError::BadFlatTour);
        }
        Self::from_routes(instance, routes)
    }

    /// Flattens the routes into one token sequence with depot separators:
    /// `[[3, 1], [2]]` becomes `[0, 3, 1, 0, 2, 0]`.
    pub fn to_flat(&self) -> Vec<usize> {
        let mut tokens = vec![0];
        for route in &self.routes {
            tokens.extend_from_slice(route);
            tokens.push(0);
        }
        tokens
    }

    pub fn routes(&self) -> &[Vec<usize>] {
        &self.routes
    }

    /// Cached total cost, equal to [`evaluate_cost`] on this solution.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Number of routes.
    pub fn route_count(&self) -> usize {
        self.routes.len()
    }
}

/// Cost of a single route including both depot legs.
pub fn route_cost(instance: &Instance, route: &[usize]) -> f64 {
    if route.is_empty() {
        return 0.0;
    }
    let mut cost = instance.dist(0, route[0]);
    for w in route.windows(2) {
        cost += instance.dist(w[0], w[1]);
    }
    cost + instance.dist(*route.last().unwrap(), 0)
}

fn cost_of_routes(instance: &Instance, routes: &[Vec<usize>]) -> f64 {
    routes.iter().map(|r| route_cost(instance, r)).sum()
}

/// Total Euclidean cost of a solution on an instance.
///
/// Fails with a structural error if the solution indexes customers the
/// instance does not have.
pub fn evaluate_cost(instance: &Instance, solution: &Solution) -> Result<f64, ModelError> {
    instance.check_route_indices(&solution.routes)?;
    Ok(cost_of_routes(instance, &solution.routes))
}

/// One reason a solution fails the feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownCustomer { route: usize, index: usize },
    DuplicateCustomer { customer: usize },
    MissingCustomer { customer: usize },
    EmptyRoute { route: usize },
    CapacityExceeded { route: usize, load: f64, capacity: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::UnknownCustomer { route, index } => {
                write!(f, "route {route} references unknown customer {index}")
            }
            Violation::DuplicateCustomer { customer } => {
                write!(f, "customer {customer} is served more than once")
            }
            Violation::MissingCustomer { customer } => {
                write!(f, "customer {customer} is not served")
            }
            Violation::EmptyRoute { route } => write!(f, "route {route} is empty"),
            Violation::CapacityExceeded {
                route,
                load,
                capacity,
            } => write!(
                f,
                "route {route} carries load {load} over capacity {capacity}"
            ),
        }
    }
}

/// Verdict of [`check_feasible`] with every violation found.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every customer is served exactly once, no route is empty,
/// and no route exceeds the vehicle capacity.
pub fn check_feasible(instance: &Instance, solution: &Solution) -> FeasibilityReport {
    let n = instance.n();
    let mut violations = Vec::new();
    let mut seen = vec![0usize; n + 1];
    for (ri, route) in solution.routes.iter().enumerate() {
        if route.is_empty() {
            violations.push(Violation::EmptyRoute { route: ri });
            continue;
        }
        let mut load = 0.0;
        for &c in route {
            if c == 0 || c > n {
                violations.push(Violation::UnknownCustomer {
                    route: ri,
                    index: c,
                });
                continue;
            }
            seen[c] += 1;
            load += instance.demand(c);
        }
        if load > instance.capacity() {
            violations.push(Violation::CapacityExceeded {
                route: ri,
                load,
                capacity: instance.capacity(),
            });
        }
    }
    for c in 1..=n {
        match seen[c] {
            0 => violations.push(Violation::MissingCustomer { customer: c }),
            1 => {}
            _ => violations.push(Violation::DuplicateCustomer { customer: c }),
        }
    }
    FeasibilityReport { violations }
}

/// Relative gap of a method cost against a reference cost.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapReport {
    pub method_cost: f64,
    pub reference_cost: f64,
    /// Signed percent: negative means the method beat the reference.
    pub gap_percent: f64,
}

/// Computes `(method - reference) / reference * 100`, keeping the sign.
pub fn optimality_gap(method_cost: f64, reference_cost: f64) -> Result<GapReport, ModelError> {
    if !(reference_cost > 0.0) {
        return Err(ModelError::BadReference(reference_cost));
    }
    Ok(GapReport {
        method_cost,
        reference_cost,
        gap_percent: (method_cost - reference_cost) / reference_cost * 100.0,
    })
}

/// Load divided by capacity for each route, in route order.
pub fn load_ratios(instance: &Instance, solution: &Solution) -> Vec<f64> {
    solution
        .routes
        .iter()
        .map(|r| r.iter().map(|&c| instance.demand(c)).sum::<f64>() / instance.capacity())
        .collect()
}
