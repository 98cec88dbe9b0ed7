//! History-level evaluation of the rejection formulas: every prefix
//! `x_0..x_{n-1}` is visited explicitly. Works for any [`TokenModel`] within
//! the enumeration cap and serves as the reference for the Markov DP.

use super::{BatchRejections, BatchSize, RowCoefficients};
use crate::dist::tv_distance;
use crate::error::Result;
use crate::model::{check_cap, ModelPair, TokenModel};
use crate::numeric::KahanSum;

/// Target mass `q(x_{0:n})` for every history, level by level.
///
/// `levels[n][i]` is the mass of the length-`n + 1` history with base-`V`
/// index `i`.
pub fn target_masses<M: TokenModel>(pair: &ModelPair<M>) -> Result<Vec<Vec<f64>>> {
    check_cap(pair.vocab_size(), pair.horizon())?;
    let v = pair.vocab_size();
    let mut levels = vec![pair.prompt().probs().to_vec()];
    let mut history = Vec::with_capacity(pair.horizon() + 1);
    for n in 1..=pair.horizon() {
        let prev = &levels[n - 1];
        let mut next = vec![0.0; prev.len() * v];
        for (i, &mass) in prev.iter().enumerate() {
            decode_into(&mut history, i, v, n);
            let q = pair.target().next(&history);
            for x in 0..v {
                next[i * v + x] = mass * q[x];
            }
        }
        levels.push(next);
    }
    Ok(levels)
}

fn decode_into(buf: &mut Vec<usize>, mut index: usize, vocab: usize, len: usize) {
    buf.clear();
    buf.resize(len, 0);
    for slot in buf.iter_mut().rev() {
        *slot = index % vocab;
        index /= vocab;
    }
}

/// `Σ_n Σ_{x_{0:n-1}} q(x_{0:n-1}) TV(p_n, q_n)(x_{0:n-1})`
pub fn expected_rejections_sd<M: TokenModel>(pair: &ModelPair<M>) -> Result<f64> {
    let masses = target_masses(pair)?;
    let v = pair.vocab_size();
    let mut history = Vec::new();
    let mut total = KahanSum::default();
    for n in 1..=pair.horizon() {
        for (i, &mass) in masses[n - 1].iter().enumerate() {
            decode_into(&mut history, i, v, n);
            let tv = tv_distance(pair.draft().next(&history), pair.target().next(&history))?;
            total.add(mass * tv);
        }
    }
    Ok(total.total())
}

/// The pseudo-measure `f(x_{0:n}) = P(x_{0:n}, position n rejected)` for
/// every history, with `f(x_0)` equal to the prompt mass, together with the
/// expected rejections it implies.
pub fn pseudo_measure<M: TokenModel>(
    pair: &ModelPair<M>,
    batch: BatchSize,
) -> Result<(Vec<Vec<f64>>, BatchRejections)> {
    let batch = batch.validate()?;
    let masses = target_masses(pair)?;
    let v = pair.vocab_size();
    let mut f = vec![pair.prompt().probs().to_vec()];
    let mut history = Vec::new();
    let mut sd = KahanSum::default();
    let mut improvement = KahanSum::default();

    for n in 1..=pair.horizon() {
        let prev = &f[n - 1];
        let mut next = vec![0.0; prev.len() * v];
        for (i, (&mass, &rejected)) in masses[n - 1].iter().zip(prev).enumerate() {
            decode_into(&mut history, i, v, n);
            let c = RowCoefficients::new(
                pair.draft().next(&history),
                pair.target().next(&history),
                batch,
            )?;
            sd.add(mass * c.tv);
            improvement.add(rejected * (c.tv - c.product));
            for x in 0..v {
                next[i * v + x] = c.h[x] * mass - (c.h[x] - c.w[x]) * rejected;
            }
        }
        f.push(next);
    }

    let (sd, improvement) = (sd.total(), improvement.total());
    Ok((
        f,
        BatchRejections {
            total: sd - improvement,
            sd,
            improvement,
        },
    ))
}

pub fn expected_rejections_batch<M: TokenModel>(
    pair: &ModelPair<M>,
    batch: BatchSize,
) -> Result<BatchRejections> {
    pseudo_measure(pair, batch).map(|(_, r)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarkovModel;

    #[test]
    fn pseudo_measure_is_dominated_by_target() {
        for seed in 0..10 {
            let pair = ModelPair::random_full(seed, 3, 4).unwrap();
            let q = target_masses(&pair).unwrap();
            for batch in [BatchSize::Finite(1), BatchSize::Finite(3), BatchSize::Unbounded] {
                let (f, _) = pseudo_measure(&pair, batch).unwrap();
                for (fl, ql) in f.iter().zip(&q) {
                    for (a, b) in fl.iter().zip(ql) {
                        assert!(*a >= -1e-15 && *a <= b + 1e-15, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn target_masses_sum_to_one() {
        let pair = ModelPair::<MarkovModel>::random(2, 3, 4).unwrap();
        for level in target_masses(&pair).unwrap() {
            assert!((level.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let pair = ModelPair::<MarkovModel>::random(2, 7, 50).unwrap();
        assert!(expected_rejections_sd(&pair).is_err());
    }
}
