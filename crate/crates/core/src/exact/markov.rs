//! `O(T·V²)` dynamic programs for Markov pairs.
//!
//! Every coefficient of the history-level recursion depends on the prefix
//! only through its last token, so the pseudo-measure can be summed over
//! `x_{0:n-1}` and carried as a vector `G_n` over the last token:
//!
//! ```text
//! G_0 = prompt
//! G_n(x) = Σ_s h_n(x|s) μ_{n-1}(s) − (h_n(x|s) − w_n(x|s)) G_{n-1}(s)
//! ```

#![allow(clippy::needless_range_loop)]

use super::{BatchRejections, BatchSize, RowCoefficients};
use crate::decoding::{checked_acceptance, checked_residual, Policy, StepContext};
use crate::dist::tv_distance;
use crate::error::{Error, Result};
use crate::model::{target_marginals, MarkovModel, ModelPair};
use crate::numeric::KahanSum;

pub fn expected_rejections_sd(pair: &ModelPair<MarkovModel>) -> f64 {
    let v = pair.vocab_size();
    let mu = target_marginals(pair.target());
    let mut total = KahanSum::default();
    for n in 1..=pair.horizon() {
        let (p, q) = (pair.draft().step(n), pair.target().step(n));
        for s in 0..v {
            let tv = tv_distance(p.row(s), q.row(s)).expect("rows share the vocabulary");
            total.add(mu[n - 1][s] * tv);
        }
    }
    total.total()
}

/// Last-token marginals `G_0..G_{T}` of the pseudo-measure together with
/// the expected rejections.
pub fn pseudo_measure(
    pair: &ModelPair<MarkovModel>,
    batch: BatchSize,
) -> Result<(Vec<Vec<f64>>, BatchRejections)> {
    let batch = batch.validate()?;
    let v = pair.vocab_size();
    let mu = target_marginals(pair.target());
    let mut g = vec![pair.prompt().probs().to_vec()];
    let mut sd = KahanSum::default();
    let mut improvement = KahanSum::default();

    for n in 1..=pair.horizon() {
        let (p, q) = (pair.draft().step(n), pair.target().step(n));
        let prev = &g[n - 1];
        let mut next = vec![KahanSum::default(); v];
        for s in 0..v {
            let c = RowCoefficients::new(p.row(s), q.row(s), batch)?;
            sd.add(mu[n - 1][s] * c.tv);
            improvement.add(prev[s] * (c.tv - c.product));
            for x in 0..v {
                next[x].add(c.h[x] * mu[n - 1][s]);
                next[x].add(-(c.h[x] - c.w[x]) * prev[s]);
            }
        }
        g.push(next.iter().map(KahanSum::total).collect());
    }

    let (sd, improvement) = (sd.total(), improvement.total());
    Ok((
        g,
        BatchRejections {
            total: sd - improvement,
            sd,
            improvement,
        },
    ))
}

pub fn expected_rejections_batch(
    pair: &ModelPair<MarkovModel>,
    batch: BatchSize,
) -> Result<BatchRejections> {
    pseudo_measure(pair, batch).map(|(_, r)| r)
}

/// Expected rejections of the generic decoder for a policy that does not
/// read the history beyond the current rows.
///
/// The output law `ν` is itself Markov:
/// `ν_n(x) = Σ_s ν_{n-1}(s) [b(x|s) p(x|s) + ρ(s) 𝒫(x|s)]`, with rejection
/// probability `ρ(s) = Σ_c (1 − b(c|s)) p(c|s)`.
pub fn expected_rejections_policy<P: Policy + ?Sized>(
    pair: &ModelPair<MarkovModel>,
    policy: &P,
) -> Result<f64> {
    if policy.reads_history() {
        return Err(Error::InvalidPolicy(
            "policy reads the history; use the enumeration oracle".into(),
        ));
    }
    let v = pair.vocab_size();
    let mut law = pair.prompt().probs().to_vec();
    let mut total = KahanSum::default();
    for n in 1..=pair.horizon() {
        let mut next = vec![KahanSum::default(); v];
        for s in 0..v {
            if law[s] == 0.0 {
                continue;
            }
            let history = [s];
            let ctx = StepContext {
                step: n,
                history: &history,
                draft: pair.draft().step(n).row(s),
                target: pair.target().step(n).row(s),
            };
            let mut reject = KahanSum::default();
            for c in ctx.draft.support() {
                let b = checked_acceptance(policy, &ctx, c)?;
                next[c].add(law[s] * b * ctx.draft[c]);
                reject.add((1.0 - b) * ctx.draft[c]);
            }
            let rho = reject.total();
            if rho > 0.0 {
                total.add(law[s] * rho);
                let residual = checked_residual(policy, &ctx)?;
                for x in residual.support() {
                    next[x].add(law[s] * rho * residual[x]);
                }
            }
        }
        law = next.iter().map(KahanSum::total).collect();
    }
    Ok(total.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{ConstantPolicy, SpeculativePolicy};
    use crate::dist::Dist;
    use crate::exact::ExactRejections;

    #[test]
    fn identical_models_cost_nothing() {
        let m = MarkovModel::random(3, 4, 6).unwrap();
        let pair = ModelPair::new(m.clone(), m).unwrap();
        assert_eq!(pair.expected_rejections_sd(), 0.0);
        let b = pair.expected_rejections_batch(3).unwrap();
        assert_eq!((b.total, b.improvement), (0.0, 0.0));
        assert_eq!(pair.limit_rejections(), 0.0);
    }

    #[test]
    fn single_step_is_prompt_averaged_tv() {
        let pair = ModelPair::<MarkovModel>::random(12, 4, 1).unwrap();
        let manual: f64 = (0..4)
            .map(|s| {
                pair.prompt()[s]
                    * tv_distance(pair.draft().step(1).row(s), pair.target().step(1).row(s))
                        .unwrap()
            })
            .sum();
        assert!((pair.expected_rejections_sd() - manual).abs() < 1e-15);
    }

    #[test]
    fn batch_of_one_has_no_improvement() {
        let pair = ModelPair::<MarkovModel>::random(5, 3, 8).unwrap();
        let b = pair.expected_rejections_batch(1).unwrap();
        assert!(b.improvement.abs() < 1e-14);
        assert!((b.total - pair.expected_rejections_sd()).abs() < 1e-12);
        assert!(pair.expected_rejections_batch(0).is_err());
    }

    #[test]
    fn bernoulli_instance() {
        let p = MarkovModel::constant(Dist::new(vec![0.2, 0.8]).unwrap(), 1).unwrap();
        let q = MarkovModel::constant(Dist::new(vec![0.5, 0.5]).unwrap(), 1).unwrap();
        let pair = ModelPair::new(p, q).unwrap();
        let b = pair.expected_rejections_batch(3).unwrap();
        assert!((b.improvement - 0.108).abs() < 1e-12);
        assert!((b.total - (0.3 - 0.108)).abs() < 1e-12);
    }

    #[test]
    fn policy_dp_agrees_with_closed_forms() {
        let pair = ModelPair::<MarkovModel>::random(9, 4, 7).unwrap();
        let sd = expected_rejections_policy(&pair, &SpeculativePolicy).unwrap();
        assert!((sd - pair.expected_rejections_sd()).abs() < 1e-12);
        assert_eq!(
            expected_rejections_policy(&pair, &ConstantPolicy { acceptance: 1.0 }).unwrap(),
            0.0
        );
        let all = expected_rejections_policy(&pair, &ConstantPolicy { acceptance: 0.0 }).unwrap();
        assert!((all - 7.0).abs() < 1e-12);
    }
}
