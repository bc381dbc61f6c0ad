//! Instance augmentation by plane isometries.
//!
//! Coordinates live in the unit square, so axis swaps, axis flips, and
//! rotations about the square's center all preserve pairwise distances.
//! Solving several transformed copies of an instance and keeping the
//! best answer is a cheap way to squeeze variance out of a decoder.
//! Route costs are always evaluated on the original instance; the
//! transforms only change what the solver sees.

use crate::model::{Instance, ModelError, Point, Solution};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("every transform failed: {}", failures.join("; "))]
    AllFailed { failures: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One isometry of the plane: an optional axis swap, then optional
/// axis flips, then a rotation about (0.5, 0.5) in 45 degree steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    pub swap: bool,
    pub flip_x: bool,
    pub flip_y: bool,
    pub rotate_eighths: u8,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        swap: false,
        flip_x: false,
        flip_y: false,
        rotate_eighths: 0,
    };

    pub fn apply(&self, p: Point) -> Point {
        let (mut x, mut y) = if self.swap { (p.y, p.x) } else { (p.x, p.y) };
        if self.flip_x {
            x = 1.0 - x;
        }
        if self.flip_y {
            y = 1.0 - y;
        }
        if self.rotate_eighths % 8 != 0 {
            let theta = f64::from(self.rotate_eighths % 8) * std::f64::consts::FRAC_PI_4;
            let (dx, dy) = (x - 0.5, y - 0.5);
            x = 0.5 + dx * theta.cos() - dy * theta.sin();
            y = 0.5 + dx * theta.sin() + dy * theta.cos();
        }
        Point { x, y }
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.swap {
            parts.push("swap".to_string());
        }
        if self.flip_x {
            parts.push("flip_x".to_string());
        }
        if self.flip_y {
            parts.push("flip_y".to_string());
        }
        if self.rotate_eighths % 8 != 0 {
            parts.push(format!("rot{}", u32::from(self.rotate_eighths % 8) * 45));
        }
        if parts.is_empty() {
            "identity".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Which family of transforms to decode under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    None,
    Fold2,
    Fold4,
    Fold8Flip,
    Fold8Rotation,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 5] = [
        AugmentKind::None,
        AugmentKind::Fold2,
        AugmentKind::Fold4,
        AugmentKind::Fold8Flip,
        AugmentKind::Fold8Rotation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Fold2 => "fold2",
            AugmentKind::Fold4 => "fold4",
            AugmentKind::Fold8Flip => "fold8_flip",
            AugmentKind::Fold8Rotation => "fold8_rotation",
        }
    }

    pub fn parse(name: &str) -> Option<AugmentKind> {
        AugmentKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

fn flips(swap: bool, flip_x: bool, flip_y: bool) -> Transform {
    Transform {
        swap,
        flip_x,
        flip_y,
        rotate_eighths: 0,
    }
}

/// The transform set of a kind. The identity always comes first, so the
/// plain decode is one of the candidates.
pub fn transforms(kind: AugmentKind) -> Vec<Transform> {
    match kind {
        AugmentKind::None => vec![Transform::IDENTITY],
        AugmentKind::Fold2 => vec![Transform::IDENTITY, flips(true, false, false)],
        AugmentKind::Fold4 => vec![
            Transform::IDENTITY,
            flips(false, true, false),
            flips(true, false, false),
            flips(true, true, false),
        ],
        AugmentKind::Fold8Flip => vec![
            Transform::IDENTITY,
            flips(false, true, false),
            flips(false, false, true),
            flips(false, true, true),
            flips(true, false, false),
            flips(true, true, false),
            flips(true, false, true),
            flips(true, true, true),
        ],
        AugmentKind::Fold8Rotation => (0..8)
            .map(|k| Transform {
                rotate_eighths: k,
                ..Transform::IDENTITY
            })
            .collect(),
    }
}

/// Applies a transform to every node coordinate, leaving demands and
/// capacity untouched.
pub fn transform_instance(instance: &Instance, transform: Transform) -> Instance {
    let name = if transform == Transform::IDENTITY {
        instance.name().to_string()
    } else {
        format!("{}+{}", instance.name(), transform.label())
    };
    instance.map_coords(&name, |p| transform.apply(p))
}

/// What one transform produced: the solve cost evaluated on the
/// original instance, or the error message that stopped it.
#[derive(Debug, Clone)]
pub struct TransformResult {
    pub transform: Transform,
    pub cost: Result<f64, String>,
}

/// Best solution over a transform family.
#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub best: Solution,
    pub best_transform: Transform,
    pub results: Vec<TransformResult>,
}

/// Runs `solve` on every transformed copy of the instance, re-costs
/// each answer on the original coordinates, and keeps the cheapest.
/// Individual transform failures are recorded and skipped; only a
/// failure of every transform is an error.
pub fn augment_solve<E: std::fmt::Display>(
    instance: &Instance,
    kind: AugmentKind,
    mut solve: impl FnMut(&Instance) -> Result<Solution, E>,
) -> Result<AugmentOutcome, AugmentError> {
    let mut results = Vec::new();
    let mut best: Option<(f64, Solution, Transform)> = None;
    for transform in transforms(kind) {
        let transformed = transform_instance(instance, transform);
        match solve(&transformed) {
            Ok(solution) => {
                let on_original = Solution::from_routes(instance, solution.routes().to_vec())?;
                let cost = on_original.cost();
                results.push(TransformResult {
                    transform,
                    cost: Ok(cost),
                });
                if best.as_ref().map_or(true, |(c, _, _)| cost < *c) {
                    best = Some((cost, on_original, transform));
                }
            }
            Err(e) => results.push(TransformResult {
                transform,
                cost: Err(e.to_string()),
            }),
        }
    }
    match best {
        Some((_, solution, transform)) => Ok(AugmentOutcome {
            best: solution,
            best_transform: transform,
            results,
        }),
        None => Err(AugmentError::AllFailed {
            failures: results
                .iter()
                .map(|r| {
                    format!(
                        "{}: {}",
                        r.transform.label(),
                        r.cost.as_ref().err().cloned().unwrap_or_default()
                    )
                })
                .collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::Method;
    use crate::instances::{generate, GenConfig};
    use crate::model::check_feasible;

    #[test]
    fn family_sizes_and_leading_identity() {
        let expected = [1usize, 2, 4, 8, 8];
        for (kind, size) in AugmentKind::ALL.iter().zip(expected) {
            let set = transforms(*kind);
            assert_eq!(set.len(), size, "{}", kind.name());
            assert_eq!(set[0], Transform::IDENTITY, "{}", kind.name());
        }
    }

    #[test]
    fn fold8_flip_images_of_a_sample_point() {
        let p = Point { x: 0.3, y: 0.8 };
        let images: Vec<(f64, f64)> = transforms(AugmentKind::Fold8Flip)
            .iter()
            .map(|t| {
                let q = t.apply(p);
                (q.x, q.y)
            })
            .collect();
        let expected = [
            (0.3, 0.8),
            (0.7, 0.8),
            (0.3, 0.2),
            (0.7, 0.2),
            (0.8, 0.3),
            (0.2, 0.3),
            (0.8, 0.7),
            (0.2, 0.7),
        ];
        for (got, want) in images.iter().zip(expected) {
            assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
        }
    }

    #[test]
    fn rotations_fix_the_center_and_have_period_eight() {
        let center = Point { x: 0.5, y: 0.5 };
        for k in 0..8 {
            let t = Transform {
                rotate_eighths: k,
                ..Transform::IDENTITY
            };
            let q = t.apply(center);
            assert!((q.x - 0.5).abs() < 1e-15 && (q.y - 0.5).abs() < 1e-15);
        }
        let t = Transform {
            rotate_eighths: 8,
            ..Transform::IDENTITY
        };
        let p = Point { x: 0.9, y: 0.1 };
        let q = t.apply(p);
        assert_eq!((q.x, q.y), (p.x, p.y));
    }

    #[test]
    fn every_transform_preserves_pairwise_distances() {
        for seed in 0..5u64 {
            let instance = generate(&GenConfig::for_size(12, 500 + seed)).unwrap();
            for kind in AugmentKind::ALL {
                for t in transforms(kind) {
                    let moved = transform_instance(&instance, t);
                    for a in 0..=instance.n() {
                        for b in (a + 1)..=instance.n() {
                            assert!(
                                (instance.dist(a, b) - moved.dist(a, b)).abs() < 1e-12,
                                "{} {a} {b}",
                                t.label()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn augmentation_never_loses_to_the_identity() {
        for seed in 0..10u64 {
            let instance = generate(&GenConfig::for_size(15, 700 + seed)).unwrap();
            for kind in AugmentKind::ALL {
                let outcome = augment_solve(&instance, kind, |inst| {
                    Ok::<_, String>(Method::NearestSequential.build(inst))
                })
                .unwrap();
                let identity_cost = outcome.results[0].cost.clone().unwrap();
                assert!(outcome.best.cost() <= identity_cost + 1e-12);
                assert!(check_feasible(&instance, &outcome.best).is_feasible());
            }
        }
    }

    #[test]
    fn partial_failures_are_tolerated_and_total_failure_is_not() {
        let instance = generate(&GenConfig::for_size(8, 800)).unwrap();
        let baseline = Method::NearestSequential.build(&instance);
        let mut calls = 0;
        let outcome = augment_solve(&instance, AugmentKind::Fold4, |inst| {
            calls += 1;
            if calls > 1 {
                Err("boom".to_string())
            } else {
                Ok(Method::NearestSequential.build(inst))
            }
        })
        .unwrap();
        assert_eq!(outcome.best_transform, Transform::IDENTITY);
        assert!((outcome.best.cost() - baseline.cost()).abs() < 1e-12);
        assert_eq!(
            outcome.results.iter().filter(|r| r.cost.is_err()).count(),
            3
        );

        let all_fail = augment_solve(&instance, AugmentKind::Fold2, |_| {
            Err::<Solution, _>("down".to_string())
        });
        assert!(matches!(all_fail, Err(AugmentError::AllFailed { .. })));
    }

    #[test]
    fn transform_labels_are_descriptive() {
        assert_eq!(Transform::IDENTITY.label(), "identity");
        assert_eq!(flips(true, true, false).label(), "swap+flip_x");
        assert_eq!(
            Transform {
                rotate_eighths: 3,
                ..Transform::IDENTITY
            }
            .label(),
            "rot135"
        );
    }
}
