//! Instance generation and file I/O.
//!
//! Random instances draw coordinates i.i.d. uniform on the unit square and
//! integer demands uniform in a configured range, deterministically per
//! seed. Two file formats are supported: a native plain-text format that
//! round-trips coordinates bit-exactly, and the VRPLIB subset commonly
//! used for benchmark sets (EUC_2D only, depot as node 1).

use crate::model::{Instance, ModelError, Point, Solution};
use crate::seed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// First line of the native instance format.
pub const NATIVE_HEADER: &str = "CVRPLAB 1";

/// Errors from generation, parsing, and reference loading.
#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> InstanceError {
    InstanceError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Configuration for the random instance generator.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n: usize,
    pub capacity: f64,
    pub demand_low: u64,
    pub demand_high: u64,
    pub seed: u64,
    pub name: Option<String>,
}

impl GenConfig {
    /// Community-convention defaults: demands uniform in 1..=9 and a
    /// capacity chosen by instance size (50 up to n=100, then 80, 100,
    /// and 250 at n=200, 500, 1000). These are conventions of the uniform
    /// benchmark family, not properties of the problem.
    pub fn for_size(n: usize, seed: u64) -> Self {
        let capacity = if n <= 100 {
            50.0
        } else if n <= 200 {
            80.0
        } else if n <= 500 {
            100.0
        } else {
            250.0
        };
        GenConfig {
            n,
            capacity,
            demand_low: 1,
            demand_high: 9,
            seed,
            name: None,
        }
    }

    fn validate(&self) -> Result<(), InstanceError> {
        if self.n == 0 {
            return Err(InstanceError::BadConfig("n must be at least 1".into()));
        }
        if self.demand_low == 0 || self.demand_low > self.demand_high {
            return Err(InstanceError::BadConfig(
                "need 1 <= demand_low <= demand_high".into(),
            ));
        }
        if !(self.capacity > 0.0) || (self.demand_high as f64) > self.capacity {
            return Err(InstanceError::BadConfig(
                "capacity must be positive and at least demand_high".into(),
            ));
        }
        Ok(())
    }
}

/// Generates one random instance. The same config (including seed) always
/// produces the identical instance: depot first, then per-customer
/// coordinates, then demands, all from one seeded stream.
pub fn generate(config: &GenConfig) -> Result<Instance, InstanceError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[config.n as u64]));
    let depot = Point::new(rng.gen::<f64>(), rng.gen::<f64>());
    let customers: Vec<Point> = (0..config.n)
        .map(|_| Point::new(rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    let demands: Vec<f64> = (0..config.n)
        .map(|_| rng.gen_range(config.demand_low..=config.demand_high) as f64)
        .collect();
    let name = config
        .name
        .clone()
        .unwrap_or_else(|| format!("uniform-n{}-s{}", config.n, config.seed));
    Ok(Instance::new(
        name,
        depot,
        customers,
        demands,
        config.capacity,
    )?)
}

/// Serializes an instance in the native format. The `{}` float formatting
/// is shortest-round-trip, so reading the text back reproduces every
/// coordinate and demand bit-exactly.
pub fn to_native(instance: &Instance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{NATIVE_HEADER}");
    let _ = writeln!(out, "NAME {}", instance.name());
    let _ = writeln!(out, "CAPACITY {}", instance.capacity());
    for node in 0..=instance.n() {
        let p = instance.coord(node);
        let _ = writeln!(out, "{} {} {} {}", node, p.x, p.y, instance.demand(node));
    }
    out
}

/// Writes an instance to a file in the native format.
pub fn write_instance(instance: &Instance, path: &Path) -> Result<(), InstanceError> {
    std::fs::write(path, to_native(instance))?;
    Ok(())
}

fn parse_native(path: &Path, text: &str) -> Result<Instance, InstanceError> {
    let mut name = String::new();
    let mut capacity: Option<f64> = None;
    let mut coords: Vec<(usize, Point, f64)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || lineno == 1 {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "NAME" => name = fields[1..].join(" "),
            "CAPACITY" => {
                let v = fields
                    .get(1)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| parse_err(path, lineno, "CAPACITY needs a number"))?;
                capacity = Some(v);
            }
            _ => {
                if fields.len() != 4 {
                    return Err(parse_err(path, lineno, "node line needs `idx x y demand`"));
                }
                let idx: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad node index"))?;
                let nums: Vec<f64> = fields[1..]
                    .iter()
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| parse_err(path, lineno, "bad number in node line"))?;
                coords.push((idx, Point::new(nums[0], nums[1]), nums[2]));
            }
        }
    }
    let capacity = capacity.ok_or_else(|| parse_err(path, 0, "missing CAPACITY line"))?;
    coords.sort_by_key(|&(idx, _, _)| idx);
    for (want, &(got, _, _)) in coords.iter().enumerate().map(|(i, c)| (i, c)) {
        if got != want {
            return Err(parse_err(
                path,
                0,
                format!("node indices must be 0..n without gaps, missing {want}"),
            ));
        }
    }
    if coords.is_empty() || coords[0].0 != 0 {
        return Err(parse_err(path, 0, "missing depot line (index 0)"));
    }
    let depot = coords[0].1;
    let customers: Vec<Point> = coords[1..].iter().map(|&(_, p, _)| p).collect();
    let demands: Vec<f64> = coords[1..].iter().map(|&(_, _, d)| d).collect();
    Ok(Instance::new(name, depot, customers, demands, capacity)?)
}

fn parse_vrplib(path: &Path, text: &str) -> Result<Instance, InstanceError> {
    let mut name = String::new();
    let mut dimension: Option<usize> = None;
    let mut capacity: Option<f64> = None;
    let mut edge_weight_type: Option<String> = None;
    let mut coords: BTreeMap<usize, Point> = BTreeMap::new();
    let mut demands: BTreeMap<usize, f64> = BTreeMap::new();
    let mut depots: Vec<usize> = Vec::new();

    #[derive(PartialEq)]
    enum Section {
        Header,
        Coords,
        Demands,
        Depots,
        Done,
    }
    let mut section = Section::Header;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "NODE_COORD_SECTION" => {
                section = Section::Coords;
                continue;
            }
            "DEMAND_SECTION" => {
                section = Section::Demands;
                continue;
            }
            "DEPOT_SECTION" => {
                section = Section::Depots;
                continue;
            }
            "EOF" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Header => {
                let (key, value) = match line.split_once(':') {
                    Some((k, v)) => (k.trim(), v.trim()),
                    None => (line, ""),
                };
                match key {
                    "NAME" => name = value.to_string(),
                    "DIMENSION" => {
                        dimension = Some(value.parse().map_err(|_| {
                            parse_err(path, lineno, "DIMENSION needs an integer")
                        })?);
                    }
                    "CAPACITY" => {
                        capacity = Some(
                            value
                                .parse()
                                .map_err(|_| parse_err(path, lineno, "CAPACITY needs a number"))?,
                        );
                    }
                    "EDGE_WEIGHT_TYPE" => edge_weight_type = Some(value.to_string()),
                    // COMMENT, TYPE and friends are accepted and ignored.
                    _ => {}
                }
            }
            Section::Coords => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 3 {
                    return Err(parse_err(path, lineno, "coord line needs `idx x y`"));
                }
                let idx: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad node index"))?;
                let x: f64 = fields[1]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad x coordinate"))?;
                let y: f64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad y coordinate"))?;
                coords.insert(idx, Point::new(x, y));
            }
            Section::Demands => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 2 {
                    return Err(parse_err(path, lineno, "demand line needs `idx demand`"));
                }
                let idx: usize = fields[0]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad node index"))?;
                let d: f64 = fields[1]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad demand"))?;
                demands.insert(idx, d);
            }
            Section::Depots => {
                let v: i64 = line
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad depot entry"))?;
                if v > 0 {
                    depots.push(v as usize);
                }
            }
            Section::Done => {}
        }
    }

    let dim = dimension.ok_or_else(|| parse_err(path, 0, "missing DIMENSION"))?;
    let capacity = capacity.ok_or_else(|| parse_err(path, 0, "missing CAPACITY"))?;
    match edge_weight_type.as_deref() {
        Some("EUC_2D") => {}
        Some(other) => {
            return Err(parse_err(
                path,
                0,
                format!("unsupported EDGE_WEIGHT_TYPE {other}, only EUC_2D"),
            ))
        }
        None => return Err(parse_err(path, 0, "missing EDGE_WEIGHT_TYPE")),
    }
    if coords.len() != dim {
        return Err(parse_err(
            path,
            0,
            format!("NODE_COORD_SECTION has {} nodes, DIMENSION is {dim}", coords.len()),
        ));
    }
    if demands.len() != dim {
        return Err(parse_err(
            path,
            0,
            format!("DEMAND_SECTION has {} nodes, DIMENSION is {dim}", demands.len()),
        ));
    }
    if depots != vec![1] {
        return Err(parse_err(path, 0, "DEPOT_SECTION must name node 1 only"));
    }
    for idx in 1..=dim {
        if !coords.contains_key(&idx) {
            return Err(parse_err(path, 0, format!("missing coordinates of node {idx}")));
        }
    }
    if demands.get(&1).copied().unwrap_or(f64::NAN) != 0.0 {
        return Err(parse_err(path, 0, "depot (node 1) must have demand 0"));
    }
    let depot = coords[&1];
    let customers: Vec<Point> = (2..=dim).map(|i| coords[&i]).collect();
    let demand_vec: Vec<f64> = (2..=dim).map(|i| demands[&i]).collect();
    Ok(Instance::new(name, depot, customers, demand_vec, capacity)?)
}

/// Reads an instance from a file, detecting the format by its first line.
pub fn read_instance(path: &Path) -> Result<Instance, InstanceError> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("").trim();
    if first == NATIVE_HEADER {
        parse_native(path, &text)
    } else {
        parse_vrplib(path, &text)
    }
}

/// Cost of a solution under the VRPLIB EUC_2D convention, where every edge
/// length is rounded to the nearest integer before summing. Published
/// best-known values for VRPLIB sets use this metric; the rest of the crate
/// always evaluates exact Euclidean costs.
pub fn vrplib_rounded_cost(instance: &Instance, solution: &Solution) -> f64 {
    let mut total = 0.0;
    for route in solution.routes() {
        let mut prev = 0usize;
        for &c in route {
            total += instance.dist(prev, c).round();
            prev = c;
        }
        total += instance.dist(prev, 0).round();
    }
    total
}

/// Named reference costs loaded from a `name,cost` CSV.
#[derive(Debug, Clone, Default)]
pub struct ReferenceSet {
    costs: BTreeMap<String, f64>,
}

impl ReferenceSet {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.costs.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// Adds or replaces one reference cost.
    pub fn insert(&mut self, name: impl Into<String>, cost: f64) {
        self.costs.insert(name.into(), cost);
    }
}

/// Loads reference costs from CSV. An optional `name,cost` header row is
/// skipped. Duplicate names keep the last row and report a warning;
/// nonpositive or unparsable costs are errors.
pub fn load_references(path: &Path) -> Result<(ReferenceSet, Vec<String>), InstanceError> {
    let text = std::fs::read_to_string(path)?;
    let mut set = ReferenceSet::default();
    let mut warnings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (name, cost_str) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, lineno, "expected `name,cost`"))?;
        let name = name.trim();
        let cost_str = cost_str.trim();
        if lineno == 1 && name == "name" && cost_str == "cost" {
            continue;
        }
        let cost: f64 = cost_str
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad cost `{cost_str}`")))?;
        if !(cost > 0.0) {
            return Err(parse_err(
                path,
                lineno,
                format!("reference cost must be positive, got {cost}"),
            ));
        }
        if set.costs.insert(name.to_string(), cost).is_some() {
            warnings.push(format!(
                "{}:{lineno}: duplicate reference `{name}`, keeping the later value",
                path.display()
            ));
        }
    }
    Ok((set, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_feasible;

    #[test]
    fn generation_is_deterministic() {
        let config = GenConfig::for_size(30, 42);
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(to_native(&a), to_native(&b));
        let other = generate(&GenConfig { seed: 43, ..config }).unwrap();
        assert_ne!(to_native(&a), to_native(&other));
    }

    #[test]
    fn generated_demands_in_range_and_coords_in_unit_square() {
        let inst = generate(&GenConfig::for_size(200, 7)).unwrap();
        for node in 0..=inst.n() {
            let p = inst.coord(node);
            assert!((0.0..1.0).contains(&p.x) && (0.0..1.0).contains(&p.y));
        }
        for c in 1..=inst.n() {
            let d = inst.demand(c);
            assert!(d >= 1.0 && d <= 9.0 && d.fract() == 0.0);
        }
        assert_eq!(inst.capacity(), 80.0);
    }

    #[test]
    fn singleton_routes_are_always_feasible() {
        for seed in 0..20 {
            let inst = generate(&GenConfig::for_size(1 + (seed as usize * 7) % 50, seed)).unwrap();
            let routes: Vec<Vec<usize>> = (1..=inst.n()).map(|c| vec![c]).collect();
            let sol = Solution::from_routes(&inst, routes).unwrap();
            assert!(check_feasible(&inst, &sol).is_feasible());
        }
    }

    #[test]
    fn native_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.cvrplab");
        let inst = generate(&GenConfig::for_size(25, 99)).unwrap();
        write_instance(&inst, &path).unwrap();
        let back = read_instance(&path).unwrap();
        assert_eq!(back.name(), inst.name());
        assert_eq!(back.n(), inst.n());
        assert!(back.capacity() == inst.capacity());
        for node in 0..=inst.n() {
            let (a, b) = (inst.coord(node), back.coord(node));
            assert!(a.x == b.x && a.y == b.y, "coordinate of node {node} drifted");
            assert!(inst.demand(node) == back.demand(node));
        }
        // A second write of the re-read instance is byte-identical too.
        assert_eq!(to_native(&inst), to_native(&back));
    }

    const SMALL_VRPLIB: &str = "NAME : toy5\n\
        COMMENT : hand written\n\
        TYPE : CVRP\n\
        DIMENSION : 5\n\
        EDGE_WEIGHT_TYPE : EUC_2D\n\
        CAPACITY : 10\n\
        NODE_COORD_SECTION\n\
        1 0 0\n\
        2 3 0\n\
        3 0 4\n\
        4 6 8\n\
        5 1 1\n\
        DEMAND_SECTION\n\
        1 0\n\
        2 4\n\
        3 4\n\
        4 7\n\
        5 2\n\
        DEPOT_SECTION\n\
        1\n\
        -1\n\
        EOF\n";

    #[test]
    fn vrplib_subset_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy5.vrp");
        std::fs::write(&path, SMALL_VRPLIB).unwrap();
        let inst = read_instance(&path).unwrap();
        assert_eq!(inst.name(), "toy5");
        assert_eq!(inst.n(), 4);
        assert_eq!(inst.capacity(), 10.0);
        assert_eq!(inst.coord(0), Point::new(0.0, 0.0));
        assert_eq!(inst.coord(1), Point::new(3.0, 0.0));
        assert_eq!(inst.demand(1), 4.0);
        assert_eq!(inst.demand(4), 2.0);
    }

    #[test]
    fn vrplib_missing_demands_is_an_error_with_position() {
        let broken = SMALL_VRPLIB.replace("DEMAND_SECTION", "IGNORED_SECTION : x");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.vrp");
        std::fs::write(&path, broken).unwrap();
        let err = read_instance(&path).unwrap_err().to_string();
        assert!(err.contains("broken.vrp"), "error should carry the path: {err}");
    }

    #[test]
    fn vrplib_rejects_unsupported_metric() {
        let broken = SMALL_VRPLIB.replace("EUC_2D", "EXPLICIT");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metric.vrp");
        std::fs::write(&path, broken).unwrap();
        let err = read_instance(&path).unwrap_err().to_string();
        assert!(err.contains("EXPLICIT"));
    }

    #[test]
    fn rounded_cost_uses_nearest_integer_edges() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy5.vrp");
        std::fs::write(&path, SMALL_VRPLIB).unwrap();
        let inst = read_instance(&path).unwrap();
        // Route 0-2-1-0: legs 4, 5, 3 are already integral.
        let sol = Solution::from_routes(&inst, vec![vec![2, 1], vec![3], vec![4]]).unwrap();
        let rounded = vrplib_rounded_cost(&inst, &sol);
        let unrounded = sol.cost();
        assert_eq!(rounded, 12.0 + 20.0 + 2.0 * (2.0f64).sqrt().round());
        assert!(rounded != unrounded);
    }

    #[test]
    fn references_last_one_wins_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refs.csv");
        std::fs::write(&path, "name,cost\na,10.5\nb,7\na,11.25\n").unwrap();
        let (refs, warnings) = load_references(&path).unwrap();
        assert_eq!(refs.get("a"), Some(11.25));
        assert_eq!(refs.get("b"), Some(7.0));
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("duplicate"));
    }

    #[test]
    fn references_reject_nonpositive_cost() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refs.csv");
        std::fs::write(&path, "a,0\n").unwrap();
        assert!(load_references(&path).is_err());
    }
}
