//! cvrplab is a small laboratory for the capacitated vehicle routing problem.
//!
//! It bundles classical construction heuristics, a local search over the
//! usual intra- and inter-route move families, a tiny attention policy with
//! hand-written forward and backward passes, autoregressive decoding with
//! multi-start rollouts and beam search, instance augmentation, random
//! re-construction with simulated annealing, exact oracles for small
//! instances, and a benchmark harness that ties it all together.
//!
//! Node indexing convention: the depot is node 0 everywhere, customers are
//! numbered 1..=n.

pub mod augment;
pub mod bench;
pub mod construct;
pub mod decode;
pub mod improve;
pub mod instances;
pub mod model;
pub mod neural;
pub mod oracle;
pub mod rrc;
pub mod seed;
