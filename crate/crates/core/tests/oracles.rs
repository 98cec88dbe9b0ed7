//! Exact formulas and samplers cross-checked against the enumeration oracle.

mod common;

use common::{small_pair, RandomUnbiased};
use specdec::exact::{
    enumerate, enumerate_output_distribution, history, markov, Algorithm, BatchSize, ExactRejections,
};
use specdec::model::joint_distribution;
use specdec::{
    batch_decode, generic_decode, speculative_decode, tv_distance, Dist, FullModel, MarkovModel,
    ModelPair, OverAcceptPolicy, Rng, SpeculativePolicy,
};

fn l1(a: &Dist, b: &Dist) -> f64 {
    2.0 * tv_distance(a, b).unwrap()
}

#[test]
fn speculative_and_batch_outputs_are_unbiased() {
    for seed in 0..50 {
        let pair = small_pair(seed);
        let q = joint_distribution(pair.target()).unwrap();
        for alg in [Algorithm::Speculative, Algorithm::Batch(2), Algorithm::Batch(3)] {
            let out = enumerate_output_distribution(alg, &pair).unwrap();
            assert!(l1(&out, &q) < 1e-10, "seed {seed}, {alg:?}");
        }
    }
}

#[test]
fn rejection_formulas_match_enumeration() {
    for seed in 0..50 {
        let pair = small_pair(seed);
        let full = pair.to_full().unwrap();
        let sd_tree = enumerate(Algorithm::Speculative, &pair).unwrap().expected_rejections;
        assert!((pair.expected_rejections_sd() - sd_tree).abs() < 1e-12);
        assert!((full.expected_rejections_sd() - sd_tree).abs() < 1e-12);
        for m in 1..=3 {
            let tree = enumerate(Algorithm::Batch(m), &pair).unwrap().expected_rejections;
            let dp = pair.expected_rejections_batch(m).unwrap();
            let hist = full.expected_rejections_batch(m).unwrap();
            assert!((dp.total - tree).abs() < 1e-12, "seed {seed}, M = {m}");
            assert!((hist.total - tree).abs() < 1e-12, "seed {seed}, M = {m}");
            assert!(dp.improvement >= 0.0 && hist.improvement >= 0.0);
        }
    }
}

#[test]
fn history_recursion_handles_non_markov_models() {
    for seed in 0..20 {
        let pair = ModelPair::random_full(seed, 2, 4).unwrap();
        for m in 1..=3 {
            let tree = enumerate(Algorithm::Batch(m), &pair).unwrap();
            let rec = pair.expected_rejections_batch(m).unwrap().total;
            assert!((rec - tree.expected_rejections).abs() < 1e-12);
            let q = joint_distribution(pair.target()).unwrap();
            assert!(l1(&tree.output, &q) < 1e-10);
        }
    }
}

#[test]
fn markov_marginals_agree_with_history_measure() {
    for seed in 0..20 {
        let pair = small_pair(seed);
        let full = pair.to_full().unwrap();
        let v = pair.vocab_size();
        for batch in [BatchSize::Finite(1), BatchSize::Finite(4), BatchSize::Unbounded] {
            let (g, _) = markov::pseudo_measure(&pair, batch).unwrap();
            let (f, _) = history::pseudo_measure(&full, batch).unwrap();
            for (gl, fl) in g.iter().zip(&f) {
                for (x, g) in gl.iter().enumerate() {
                    let summed: f64 = fl.iter().skip(x).step_by(v).sum();
                    assert!((g - summed).abs() < 1e-13);
                }
            }
        }
    }
}

#[test]
fn limit_is_the_large_batch_value() {
    for seed in 0..20 {
        let pair = small_pair(seed);
        let limit = pair.limit_rejections();
        // the approach is geometric in the smallest draft probability, which
        // can be slow on sparse rows
        let gaps: Vec<f64> = [10, 100, 1000, 20000]
            .iter()
            .map(|&m| pair.expected_rejections_batch(m).unwrap().total - limit)
            .collect();
        assert!(gaps.iter().all(|&g| g >= -1e-12));
        assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(gaps[3] < 1e-6, "seed {seed}: {gaps:?}");
    }
}

#[test]
fn single_step_limit_vanishes_despite_mismatch() {
    // With T = 1 every draft position is a round start, and an unbounded
    // batch always finds a match when supp(q) ⊆ supp(p).
    let pair = ModelPair::<MarkovModel>::random(3, 3, 1).unwrap();
    assert!(pair.expected_rejections_sd() > 0.1);
    assert_eq!(pair.limit_rejections(), 0.0);
}

#[test]
fn unbiased_policies_never_beat_speculative_decoding() {
    for seed in 0..30 {
        let pair = small_pair(seed);
        let sd = pair.expected_rejections_sd();
        let q = joint_distribution(pair.target()).unwrap();
        let holder = RandomUnbiased::new(seed + 1000, pair.vocab_size(), pair.horizon());
        let policy = holder.policy();
        let e = enumerate(Algorithm::Generic(&policy), &pair).unwrap();
        assert!(l1(&e.output, &q) < 1e-10);
        assert!(e.expected_rejections >= sd - 1e-10);
    }
}

#[test]
fn speculative_policy_enumerates_like_speculative_decoding() {
    for seed in 0..20 {
        let pair = small_pair(seed);
        let a = enumerate(Algorithm::Speculative, &pair).unwrap();
        let b = enumerate(Algorithm::Generic(&SpeculativePolicy), &pair).unwrap();
        assert!(l1(&a.output, &b.output) < 1e-12);
        assert!((a.expected_rejections - b.expected_rejections).abs() < 1e-12);
    }
}

#[test]
fn biased_policies_follow_the_policy_dp() {
    for seed in 0..20 {
        let pair = small_pair(seed);
        for policy in [OverAcceptPolicy::opt(0.05), OverAcceptPolicy::uno(0.05)] {
            let tree = enumerate(Algorithm::Generic(&policy), &pair).unwrap();
            let dp = markov::expected_rejections_policy(&pair, &policy).unwrap();
            assert!((tree.expected_rejections - dp).abs() < 1e-12);
            assert!(dp <= pair.expected_rejections_sd() + 1e-12);
        }
    }
}

#[test]
fn seeded_samplers_share_paths() {
    for seed in 0..20 {
        let pair = ModelPair::<MarkovModel>::random(seed, 4, 12).unwrap();
        for run in 0..20 {
            let a = speculative_decode(&pair, &mut Rng::for_run(seed, run)).unwrap();
            let b = generic_decode(&pair, &SpeculativePolicy, &mut Rng::for_run(seed, run)).unwrap();
            let c = batch_decode(&pair, 1, &mut Rng::for_run(seed, run)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, c);
        }
    }
}

#[test]
fn full_and_markov_samplers_agree() {
    let pair = ModelPair::<MarkovModel>::random(9, 3, 6).unwrap();
    let full: ModelPair<FullModel> = pair.to_full().unwrap();
    for run in 0..50 {
        let a = batch_decode(&pair, 3, &mut Rng::for_run(1, run)).unwrap();
        let b = batch_decode(&full, 3, &mut Rng::for_run(1, run)).unwrap();
        assert_eq!(a, b);
    }
}
