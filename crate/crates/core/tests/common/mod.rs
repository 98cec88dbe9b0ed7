#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specdec::model::sequence_index;
use specdec::tradeoff::{unbiased_residual, AcceptanceFn};
use specdec::{CondDist, Dist, FnPolicy, MarkovModel, ModelPair, Policy, StepContext};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A row where each entry is zeroed with probability `zero_prob`.
pub fn sparse_row(rng: &mut ChaCha8Rng, v: usize, zero_prob: f64) -> Dist {
    let mut w: Vec<f64> = (0..v)
        .map(|_| {
            if rng.random::<f64>() < zero_prob {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..v)] = 1.0;
    }
    Dist::from_weights(w).unwrap()
}

pub fn sparse_chain(rng: &mut ChaCha8Rng, v: usize, t: usize, zero_prob: f64) -> MarkovModel {
    let steps = (0..t)
        .map(|_| CondDist::new((0..v).map(|_| sparse_row(rng, v, zero_prob)).collect()).unwrap())
        .collect();
    MarkovModel::new(Dist::uniform(v).unwrap(), steps).unwrap()
}

/// Small instances mixing dense and sparse rows, `V ≤ 3`, `T ≤ 4`.
pub fn small_pair(seed: u64) -> ModelPair<MarkovModel> {
    let mut r = rng(seed);
    let v = r.random_range(2..=3);
    let t = r.random_range(1..=4);
    let zero_prob = [0.0, 0.3][(seed % 2) as usize];
    ModelPair::new(sparse_chain(&mut r, v, t, zero_prob), sparse_chain(&mut r, v, t, zero_prob)).unwrap()
}

/// Unbiased policy with a random history-dependent acceptance
/// `b = u · min{1, q/p}` and the matching residual.
pub struct RandomUnbiased {
    vocab: usize,
    /// `scale[n-1][index(history)·V + candidate]`
    scale: Vec<Vec<f64>>,
}

impl RandomUnbiased {
    pub fn new(seed: u64, vocab: usize, horizon: usize) -> Self {
        let mut r = rng(seed);
        let scale = (1..=horizon)
            .map(|n| (0..vocab.pow(n as u32 + 1)).map(|_| r.random::<f64>()).collect())
            .collect();
        Self { vocab, scale }
    }

    fn row(&self, ctx: &StepContext<'_>) -> AcceptanceFn {
        let base = sequence_index(ctx.history, self.vocab) * self.vocab;
        let table = &self.scale[ctx.step - 1];
        AcceptanceFn::new(
            (0..self.vocab)
                .map(|x| table[base + x] * specdec::decoding::sd_acceptance(ctx.draft[x], ctx.target[x]))
                .collect(),
        )
        .unwrap()
    }

    pub fn policy(&self) -> impl Policy + '_ {
        FnPolicy::new(
            move |ctx: &StepContext<'_>, c: usize| self.row(ctx).values()[c],
            move |ctx: &StepContext<'_>| unbiased_residual(&self.row(ctx), ctx.draft, ctx.target),
        )
    }
}
