//! Acceptance gate: one test per criterion, each printing a single
//! PASS line with its measured numbers. Tolerances are pinned as
//! constants next to the criteria they guard.

mod common;

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cvrplab::augment::{augment_solve, transforms, AugmentKind};
use cvrplab::bench::{
    run_experiment, BenchMethod, BenchPolicy, ExperimentSpec, InstanceSource, ReferenceSource,
};
use cvrplab::construct::Method;
use cvrplab::decode::{
    beam_search, pomo_rollout, select, DistanceHeuristicPolicy, Logits, Strategy,
};
use cvrplab::improve::{
    apply_move, enumerate_moves, local_search, MoveKind, MoveParams, Operator, SearchConfig,
};
use cvrplab::model::{Instance, Point, Solution};
use cvrplab::neural::{
    decode_step, decode_step_backward, encode, encode_backward, pairwise_advantages,
    reinforce_step, reinforce_surrogate, supervised_step, Dims, Mat, PolicyParams,
};
use cvrplab::oracle::{brute_force_optimum, enumerate_trajectories};
use cvrplab::rrc::{accept, rrc_run, AcceptRule, RrcConfig};

const COST_DOMINANCE_SLACK: f64 = 1e-9;
const DELTA_TOLERANCE: f64 = 1e-9;
const ISOMETRY_TOLERANCE: f64 = 1e-12;
const GRADIENT_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const FREQUENCY_TOLERANCE: f64 = 0.02;
const SIGN_TEST_ALPHA: f64 = 0.05;

fn instance_mix(count: usize, sizes: &[usize], seed_base: u64) -> Vec<Instance> {
    (0..count)
        .map(|i| {
            let n = sizes[i % sizes.len()];
            if i % 2 == 0 {
                common::random_instance(n, seed_base + i as u64)
            } else {
                common::tight_instance(n, seed_base + i as u64)
            }
        })
        .collect()
}

#[test]
fn criterion_01_oracle_dominates_every_method() {
    let started = Instant::now();
    let instances = instance_mix(200, &[3, 4, 5, 6, 7, 8], 10_000);
    let policy = DistanceHeuristicPolicy::default();
    let strategies = [
        Strategy::Argmax,
        Strategy::Softmax,
        Strategy::Gumbel { temperature: 1.0 },
        Strategy::EpsilonGreedy { epsilon: 0.2 },
    ];
    let mut ls_optimal = 0;
    for (i, instance) in instances.iter().enumerate() {
        let optimum = brute_force_optimum(instance, 9).unwrap().solution.cost();
        let floor = optimum - COST_DOMINANCE_SLACK;
        let seed = 77 + i as u64;

        for method in Method::ALL {
            assert!(method.build(instance).cost() >= floor, "{}", method.name());
        }

        let start = Method::NearestSequential.build(instance);
        let improved = local_search(instance, &start, &SearchConfig::default())
            .unwrap()
            .solution;
        assert!(improved.cost() >= floor);
        if improved.cost() <= optimum + COST_DOMINANCE_SLACK {
            ls_optimal += 1;
        }

        let starts = 3.min(instance.n());
        for strategy in strategies {
            let best = pomo_rollout(&policy, instance, starts, strategy, seed)
                .unwrap()
                .best()
                .cost;
            assert!(best >= floor, "{strategy:?}");
        }

        let rrc = rrc_run(&policy, instance, &start, &RrcConfig::new(25, seed)).unwrap();
        assert!(rrc.best.cost() >= floor);
    }
    let elapsed = started.elapsed();
    assert!(
        ls_optimal * 100 >= 30 * instances.len(),
        "local search optimal on only {ls_optimal} of {} instances",
        instances.len(),
    );
    assert!(elapsed.as_secs() < 120);
    println!(
        "criterion 1 PASS: dominance on 200 instances, local search optimal on {ls_optimal}/200, {:.1}s",
        elapsed.as_secs_f64(),
    );
}

#[test]
fn criterion_02_beam_width_one_is_argmax() {
    let started = Instant::now();
    let policy = DistanceHeuristicPolicy::default();
    let starts = 4;
    for i in 0..1000u64 {
        let instance = if i % 2 == 0 {
            common::random_instance(20, 20_000 + i)
        } else {
            common::tight_instance(20, 20_000 + i)
        };
        let rollout = pomo_rollout(&policy, &instance, starts, Strategy::Argmax, i).unwrap();
        let beams = beam_search(&policy, &instance, starts, 1).unwrap();
        for (r, b) in rollout.trajectories.iter().zip(&beams.per_start) {
            assert_eq!(r.tokens, b.best_by_cost.tokens, "instance {}", instance.name());
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60);
    println!(
        "criterion 2 PASS: beam width 1 matched argmax tokens on 1000 instances, {:.1}s",
        elapsed.as_secs_f64(),
    );
}

#[test]
fn criterion_03_saturating_beam_finds_the_enumerated_mode() {
    let policy = DistanceHeuristicPolicy::default();
    let instances = instance_mix(50, &[3, 4, 5], 30_000);
    for instance in &instances {
        let all = enumerate_trajectories(&policy, instance, 6).unwrap();
        let best = all
            .iter()
            .max_by(|a, b| a.total_logprob().partial_cmp(&b.total_logprob()).unwrap())
            .unwrap();
        let beams = beam_search(&policy, instance, instance.n(), all.len()).unwrap();
        let found = beams.best_by_total_logprob();
        assert_eq!(found.tokens, best.tokens, "instance {}", instance.name());
        assert!((found.total_logprob() - best.total_logprob()).abs() < 1e-12);
    }
    println!("criterion 3 PASS: saturating beam returned the max-logprob trajectory on 50 instances");
}

/// One-sided sign test: probability of at least `wins` successes in
/// `trials` fair coin flips.
fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut prob_k = 0.5f64.powi(trials as i32);
    let mut tail = 0.0;
    for k in 0..=trials {
        if k >= wins {
            tail += prob_k;
        }
        prob_k = prob_k * (trials - k) as f64 / (k + 1) as f64;
    }
    tail
}

#[test]
fn criterion_04_beam_four_beats_argmax_on_average() {
    let policy = DistanceHeuristicPolicy::default();
    let starts = 4;
    let mut argmax_total = 0.0;
    let mut beam_total = 0.0;
    let mut wins = 0;
    let mut losses = 0;
    let count = 100;
    for i in 0..count as u64 {
        let instance = common::random_instance(20, 40_000 + i);
        let argmax = pomo_rollout(&policy, &instance, starts, Strategy::Argmax, i)
            .unwrap()
            .best()
            .cost;
        let beam = beam_search(&policy, &instance, starts, 4).unwrap().best().cost;
        argmax_total += argmax;
        beam_total += beam;
        if beam < argmax {
            wins += 1;
        } else if beam > argmax {
            losses += 1;
        }
    }
    let mean_argmax = argmax_total / count as f64;
    let mean_beam = beam_total / count as f64;
    let p = sign_test_p(wins, wins + losses);
    assert!(
        mean_beam <= mean_argmax,
        "beam mean {mean_beam} vs argmax mean {mean_argmax}",
    );
    assert!(
        p < SIGN_TEST_ALPHA,
        "sign test p = {p} with {wins} wins, {losses} losses",
    );
    println!(
        "criterion 4 PASS: beam mean {mean_beam:.4} <= argmax mean {mean_argmax:.4}, sign test p = {p:.2e} ({wins}W/{losses}L)",
    );
}

#[test]
fn criterion_05_reconstruction_improves_with_iterations() {
    let policy = DistanceHeuristicPolicy::default();
    let budgets = [50usize, 100, 200];
    let mut means = [0.0f64; 3];
    let count = 100;
    for i in 0..count as u64 {
        let instance = common::random_instance(20, 50_000 + i);
        let initial = Method::NearestSequential.build(&instance);
        for (slot, &budget) in budgets.iter().enumerate() {
            let outcome =
                rrc_run(&policy, &instance, &initial, &RrcConfig::new(budget, i)).unwrap();
            means[slot] += outcome.best.cost() / count as f64;
        }
    }
    assert!(means[2] <= means[1] && means[1] <= means[0], "{means:?}");
    println!(
        "criterion 5 PASS: mean best cost {:.4} (50 iters) >= {:.4} (100) >= {:.4} (200)",
        means[0], means[1], means[2],
    );
}

#[test]
fn criterion_06_zero_temperature_annealing_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for _ in 0..10_000 {
        let delta = rng.gen_range(-1.0..1.0);
        let pair_seed: u64 = rng.gen();
        let mut sa_rng = ChaCha8Rng::seed_from_u64(pair_seed);
        let mut greedy_rng = ChaCha8Rng::seed_from_u64(pair_seed);
        let sa = accept(delta, 0.0, AcceptRule::Anneal, &mut sa_rng);
        let greedy = accept(delta, 0.0, AcceptRule::Greedy, &mut greedy_rng);
        assert_eq!(sa, greedy, "delta {delta}");
    }

    let temperature = 0.8;
    let delta = temperature * std::f64::consts::LN_2;
    let mut accepted = 0;
    for _ in 0..10_000 {
        if accept(delta, temperature, AcceptRule::Anneal, &mut rng) {
            accepted += 1;
        }
    }
    let frequency = accepted as f64 / 10_000.0;
    assert!((frequency - 0.5).abs() < FREQUENCY_TOLERANCE, "{frequency}");
    println!(
        "criterion 6 PASS: zero-temperature identity on 10k pairs, accept frequency {frequency:.3} at delta = T ln 2",
    );
}

#[test]
fn criterion_07_augmentation_is_isometric_and_never_hurts() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for _ in 0..1000 {
        let a = Point {
            x: rng.gen_range(0.0..1.0),
            y: rng.gen_range(0.0..1.0),
        };
        let b = Point {
            x: rng.gen_range(0.0..1.0),
            y: rng.gen_range(0.0..1.0),
        };
        let reference = a.dist(b);
        for kind in AugmentKind::ALL {
            for transform in transforms(kind) {
                let mapped = transform.apply(a).dist(transform.apply(b));
                assert!((mapped - reference).abs() < ISOMETRY_TOLERANCE);
            }
        }
    }

    let mut runs = 0;
    for i in 0..30u64 {
        let instance = common::tight_instance(8 + (i as usize % 5), 70_000 + i);
        let identity = Method::NearestParallel.build(&instance).cost();
        for kind in AugmentKind::ALL {
            let outcome = augment_solve(&instance, kind, |inst| {
                Ok::<_, String>(Method::NearestParallel.build(inst))
            })
            .unwrap();
            assert!(outcome.best.cost() <= identity, "{}", kind.name());
            runs += 1;
        }
    }
    println!(
        "criterion 7 PASS: isometry within 1e-12 on 1000 pairs, best <= identity on {runs} augmented runs",
    );
}

fn fd_gradient(params: &PolicyParams, mut f: impl FnMut(&PolicyParams) -> f64) -> Vec<f64> {
    let base = params.get_flat();
    let mut work = params.clone();
    let mut grad = vec![0.0; base.len()];
    let mut values = base.clone();
    for i in 0..base.len() {
        values[i] = base[i] + FD_STEP;
        work.set_flat(&values).unwrap();
        let plus = f(&work);
        values[i] = base[i] - FD_STEP;
        work.set_flat(&values).unwrap();
        let minus = f(&work);
        values[i] = base[i];
        grad[i] = (plus - minus) / (2.0 * FD_STEP);
    }
    grad
}

fn max_rel_err(analytic: &PolicyParams, numeric: &[f64]) -> f64 {
    analytic
        .get_flat()
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| common::rel_err(a, n))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_08_gradients_match_finite_differences() {
    let dims = Dims {
        embed: 6,
        heads: 2,
        decoder_layers: 1,
        ff_hidden: 8,
    };
    let instance = common::tight_instance(6, 80_000);
    let params = PolicyParams::seeded(dims, 80).unwrap();
    let embed = dims.embed;
    let n = instance.n();

    let encoder_err = {
        let weights: Vec<f64> = (0..(n + 1) * embed)
            .map(|i| ((i * 37 + 11) % 19) as f64 / 19.0 - 0.5)
            .collect();
        let numeric = fd_gradient(&params, |p| {
            let encoding = encode(p, &instance).unwrap();
            encoding.h1.data().iter().zip(&weights).map(|(h, w)| h * w).sum()
        });
        let encoding = encode(&params, &instance).unwrap();
        let mut d_h1 = Mat::zeros(n + 1, embed);
        d_h1.data_mut().copy_from_slice(&weights);
        let mut grads = params.zeros_like();
        encode_backward(&params, &encoding, &d_h1, &mut grads);
        max_rel_err(&grads, &numeric)
    };
    assert!(encoder_err < GRADIENT_TOLERANCE, "encoder {encoder_err}");

    let decode_err = {
        let mut state = cvrplab::decode::DecodeState::fresh(&instance);
        state.apply(&instance, 3);
        state.apply(&instance, 1);
        let weights: Vec<f64> = (0..=n).map(|i| ((i * 29 + 5) % 13) as f64 / 13.0 - 0.5).collect();
        let numeric = fd_gradient(&params, |p| {
            let encoding = encode(p, &instance).unwrap();
            let (logits, _) = decode_step(p, &instance, &encoding.h1, &state).unwrap();
            logits.unmasked().iter().map(|&t| logits.scores()[t] * weights[t]).sum()
        });
        let encoding = encode(&params, &instance).unwrap();
        let (logits, cache) = decode_step(&params, &instance, &encoding.h1, &state).unwrap();
        let mut d_scores = vec![0.0; n + 1];
        for &t in &logits.unmasked() {
            d_scores[t] = weights[t];
        }
        let mut grads = params.zeros_like();
        let mut d_h1 = Mat::zeros(n + 1, embed);
        decode_step_backward(&params, &encoding.h1, &cache, &d_scores, &mut grads, &mut d_h1);
        encode_backward(&params, &encoding, &d_h1, &mut grads);
        max_rel_err(&grads, &numeric)
    };
    assert!(decode_err < GRADIENT_TOLERANCE, "decode {decode_err}");

    let supervised_err = {
        let target = brute_force_optimum(&instance, 9).unwrap().solution.to_flat();
        let outcome = supervised_step(&params, &instance, &target).unwrap();
        let numeric = fd_gradient(&params, |p| {
            supervised_step(p, &instance, &target).unwrap().loss
        });
        max_rel_err(&outcome.grads, &numeric)
    };
    assert!(supervised_err < GRADIENT_TOLERANCE, "supervised {supervised_err}");

    let reinforce_err = {
        let outcome = reinforce_step(&params, &instance, 4, 808).unwrap();
        let trajectories = outcome.trajectories.clone();
        let advantages = outcome.advantages.clone();
        let numeric = fd_gradient(&params, |p| {
            reinforce_surrogate(p, &instance, &trajectories, &advantages).unwrap()
        });
        max_rel_err(&outcome.grads, &numeric)
    };
    assert!(reinforce_err < GRADIENT_TOLERANCE, "reinforce {reinforce_err}");

    let rewards = [4.5, 1.25, 8.0, 3.375, 6.625];
    let sum: f64 = pairwise_advantages(&rewards).iter().sum();
    assert_eq!(sum, 0.0);
    for a in pairwise_advantages(&[2.5; 6]) {
        assert_eq!(a, 0.0);
    }

    println!(
        "criterion 8 PASS: max relative errors encoder {encoder_err:.2e}, decode {decode_err:.2e}, supervised {supervised_err:.2e}, reinforce {reinforce_err:.2e}; advantages sum to zero",
    );
}

#[test]
fn criterion_09_sampling_distributions_are_calibrated() {
    let mut logits = Logits::masked(2);
    logits.set(0, std::f64::consts::LN_2);
    logits.set(1, 0.0);
    let draws = 10_000;

    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut softmax_counts = [0usize; 2];
    for _ in 0..draws {
        softmax_counts[select(&logits, Strategy::Softmax, &mut rng).unwrap()] += 1;
    }
    let softmax_freq = [
        softmax_counts[0] as f64 / draws as f64,
        softmax_counts[1] as f64 / draws as f64,
    ];
    assert!((softmax_freq[0] - 2.0 / 3.0).abs() < FREQUENCY_TOLERANCE);
    assert!((softmax_freq[1] - 1.0 / 3.0).abs() < FREQUENCY_TOLERANCE);

    let mut gumbel_counts = [0usize; 2];
    for _ in 0..draws {
        let strategy = Strategy::Gumbel { temperature: 1.0 };
        gumbel_counts[select(&logits, strategy, &mut rng).unwrap()] += 1;
    }
    let tv = 0.5
        * ((gumbel_counts[0] as f64 / draws as f64 - softmax_freq[0]).abs()
            + (gumbel_counts[1] as f64 / draws as f64 - softmax_freq[1]).abs());
    assert!(tv < FREQUENCY_TOLERANCE, "total variation {tv}");

    let mut argmax_hits = 0;
    for _ in 0..draws {
        let strategy = Strategy::EpsilonGreedy { epsilon: 0.5 };
        if select(&logits, strategy, &mut rng).unwrap() == 0 {
            argmax_hits += 1;
        }
    }
    let greedy_freq = argmax_hits as f64 / draws as f64;
    assert!((greedy_freq - 0.75).abs() < FREQUENCY_TOLERANCE, "{greedy_freq}");

    println!(
        "criterion 9 PASS: softmax {softmax_freq:?}, gumbel TV {tv:.4}, epsilon-greedy argmax rate {greedy_freq:.3}",
    );
}

#[test]
fn criterion_10_move_deltas_are_exact() {
    let params = MoveParams::default();
    let mut checked = 0usize;
    let mut per_op = [0usize; 9];
    let mut empty_crosses = 0usize;
    let mut seed = 0u64;
    while checked < 10_000 {
        let instance = common::tight_instance(10 + (seed as usize % 4), 100_000 + seed);
        let solution = Method::SweepCircular.build(&instance);
        let inserts = enumerate_moves(&instance, &solution, Operator::InsertInter, &params);
        for (oi, op) in Operator::ALL.into_iter().enumerate() {
            for mv in enumerate_moves(&instance, &solution, op, &params) {
                let applied = apply_move(&instance, &solution, &mv).unwrap();
                let real = applied.cost() - solution.cost();
                assert!(
                    (real - mv.delta).abs() < DELTA_TOLERANCE,
                    "{op:?} predicted {} got {real}",
                    mv.delta,
                );
                checked += 1;
                per_op[oi] += 1;

                if let MoveKind::Cross { len_a, len_b, .. } = mv.kind {
                    if len_a + len_b == 1 {
                        let twin = inserts
                            .iter()
                            .any(|i| (i.delta - mv.delta).abs() < DELTA_TOLERANCE);
                        assert!(twin, "cross {:?} has no insert twin", mv.kind);
                        empty_crosses += 1;
                    }
                }
            }
        }
        seed += 1;
    }
    assert!(per_op.iter().all(|&c| c > 0), "{per_op:?}");
    assert!(empty_crosses > 0);
    println!(
        "criterion 10 PASS: {checked} move deltas exact within 1e-9, {empty_crosses} empty-side crosses matched inserts",
    );
}

#[test]
fn criterion_11_bench_runs_are_byte_identical() {
    let spec = ExperimentSpec {
        source: InstanceSource::Generate {
            sizes: vec![5, 6],
            per_size: 2,
            capacity: None,
        },
        methods: vec![
            BenchMethod::Construct(Method::SavingsParallel),
            BenchMethod::LocalSearch(Method::SweepCircular),
            BenchMethod::Decode {
                strategy: Strategy::Softmax,
                n_starts: 3,
                augment: AugmentKind::Fold2,
            },
            BenchMethod::Beam {
                beam_size: 2,
                n_starts: 3,
                augment: AugmentKind::None,
            },
            BenchMethod::Rrc {
                iterations: 15,
                rule: AcceptRule::Anneal,
            },
        ],
        reference: ReferenceSource::Oracle,
        repetitions: 2,
        seed: 1111,
    };
    let policy = BenchPolicy::default();
    let first = run_experiment(&spec, &policy).unwrap();
    let second = run_experiment(&spec, &policy).unwrap();
    assert_eq!(first.rows_csv(), second.rows_csv());
    assert_eq!(first.summary_csv(), second.summary_csv());
    assert_eq!(first.solutions_csv(), second.solutions_csv());
    assert_eq!(first.failures, 0);

    for record in &first.solutions {
        let replayed = Solution::from_flat(
            &reconstruct_instance(&record.instance),
            &record.solution.to_flat(),
        );
        assert!(replayed.is_ok());
    }
    println!(
        "criterion 11 PASS: identical result, summary, and solution tables across two runs ({} rows)",
        first.rows.len(),
    );
}

/// Regenerates a bench instance from its deterministic name scheme.
fn reconstruct_instance(name: &str) -> Instance {
    let rest = name.strip_prefix("gen-n").unwrap();
    let (n, k) = rest.split_once('-').unwrap();
    let n: usize = n.parse().unwrap();
    let k: u64 = k.parse().unwrap();
    let mut config = cvrplab::instances::GenConfig::for_size(
        n,
        cvrplab::seed::derive(1111, &[n as u64, k]),
    );
    config.name = Some(name.to_string());
    cvrplab::instances::generate(&config).unwrap()
}
