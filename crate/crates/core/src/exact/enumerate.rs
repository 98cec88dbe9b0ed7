//! Brute-force decision-tree expansion of the decoding algorithms.
//!
//! Every acceptance/rejection branch is followed with its exact probability,
//! producing the algorithm's output law over `V^T` and its expected number of
//! rejections without any sampling. Draft tokens are expanded at the moment
//! they are verified; drafts that are never verified integrate to one and do
//! not affect either quantity. Rejected candidates are merged into a single
//! branch because the state after a rejection does not depend on which draft
//! token was refused.

use crate::decoding::{checked_acceptance, checked_residual, sd_acceptance, Policy, StepContext};
use crate::dist::{positive_part, residual_plus, Dist, TV_ZERO};
use crate::error::{Error, Result};
use crate::model::{check_cap, sequence_index, ModelPair, TokenModel};
use crate::numeric::KahanSum;

/// Which decoder to expand.
#[derive(Clone, Copy)]
pub enum Algorithm<'a> {
    Speculative,
    Batch(usize),
    Generic(&'a dyn Policy),
}

impl std::fmt::Debug for Algorithm<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Speculative => write!(f, "Speculative"),
            Self::Batch(m) => write!(f, "Batch({m})"),
            Self::Generic(_) => write!(f, "Generic(..)"),
        }
    }
}

/// Exact law of an algorithm's output.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    /// Law of `x_1..x_T`, indexed by [`sequence_index`].
    pub output: Dist,
    pub expected_rejections: f64,
}

struct Walker<'a, M> {
    pair: &'a ModelPair<M>,
    algorithm: Algorithm<'a>,
    output: Vec<KahanSum>,
    rejections: KahanSum,
}

impl<M: TokenModel> Walker<'_, M> {
    fn visit(
        &mut self,
        history: &mut Vec<usize>,
        weight: f64,
        rejections: usize,
        round_start: bool,
    ) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let horizon = self.pair.horizon();
        if history.len() > horizon {
            let idx = sequence_index(&history[1..], self.pair.vocab_size());
            self.output[idx].add(weight);
            self.rejections.add(weight * rejections as f64);
            return Ok(());
        }
        match self.algorithm {
            Algorithm::Batch(m) if round_start => self.batch_root(history, weight, rejections, m),
            Algorithm::Generic(policy) => self.generic_step(history, weight, rejections, policy),
            _ => self.sd_step(history, weight, rejections),
        }
    }

    fn branch(
        &mut self,
        history: &mut Vec<usize>,
        token: usize,
        weight: f64,
        rejections: usize,
        round_start: bool,
    ) -> Result<()> {
        history.push(token);
        let r = self.visit(history, weight, rejections, round_start);
        history.pop();
        r
    }

    fn sd_step(&mut self, history: &mut Vec<usize>, weight: f64, rejections: usize) -> Result<()> {
        let p = self.pair.draft().next(history).clone();
        let q = self.pair.target().next(history).clone();
        let mut reject = KahanSum::default();
        for c in p.support() {
            let b = sd_acceptance(p[c], q[c]);
            self.branch(history, c, weight * p[c] * b, rejections, false)?;
            reject.add(p[c] * (1.0 - b));
        }
        let rho = reject.total();
        if rho > 0.0 {
            let residual = match residual_plus(&q, &p) {
                Ok(d) => d,
                // rejection mass below the TV floor
                Err(Error::ZeroResidual) => return Ok(()),
                Err(e) => return Err(e),
            };
            for x in residual.support() {
                self.branch(history, x, weight * rho * residual[x], rejections + 1, true)?;
            }
        }
        Ok(())
    }

    fn generic_step(
        &mut self,
        history: &mut Vec<usize>,
        weight: f64,
        rejections: usize,
        policy: &dyn Policy,
    ) -> Result<()> {
        let p = self.pair.draft().next(history).clone();
        let q = self.pair.target().next(history).clone();
        let step = history.len();
        let mut accept = Vec::new();
        let mut reject = KahanSum::default();
        let residual = {
            let ctx = StepContext {
                step,
                history,
                draft: &p,
                target: &q,
            };
            for c in p.support() {
                let b = checked_acceptance(policy, &ctx, c)?;
                accept.push((c, p[c] * b));
                reject.add(p[c] * (1.0 - b));
            }
            if reject.total() > 0.0 {
                Some(checked_residual(policy, &ctx)?)
            } else {
                None
            }
        };
        for (c, mass) in accept {
            self.branch(history, c, weight * mass, rejections, false)?;
        }
        if let Some(residual) = residual {
            let rho = reject.total();
            for x in residual.support() {
                self.branch(history, x, weight * rho * residual[x], rejections + 1, true)?;
            }
        }
        Ok(())
    }

    fn batch_root(
        &mut self,
        history: &mut Vec<usize>,
        weight: f64,
        rejections: usize,
        batch: usize,
    ) -> Result<()> {
        let p = self.pair.draft().next(history).clone();
        let mut q_m = self.pair.target().next(history).clone();
        // probability that responses 1..m-1 were all rejected
        let mut carry = weight;
        for _ in 0..batch {
            let mut reject = KahanSum::default();
            for c in p.support() {
                let a = sd_acceptance(p[c], q_m[c]);
                self.branch(history, c, carry * p[c] * a, rejections, false)?;
                reject.add(p[c] * (1.0 - a));
            }
            let r = reject.total();
            if r < TV_ZERO {
                return Ok(());
            }
            carry *= r;
            q_m = Dist::from_weights(positive_part(&q_m, &p)?)?;
        }
        for x in q_m.support() {
            self.branch(history, x, carry * q_m[x], rejections + 1, true)?;
        }
        Ok(())
    }
}

/// Expands `algorithm` on `pair` exhaustively. Requires `V^T ≤ 10^6`.
pub fn enumerate<M: TokenModel>(algorithm: Algorithm<'_>, pair: &ModelPair<M>) -> Result<Enumeration> {
    if let Algorithm::Batch(0) = algorithm {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let size = check_cap(pair.vocab_size(), pair.horizon())? as usize;
    let mut walker = Walker {
        pair,
        algorithm,
        output: vec![KahanSum::default(); size],
        rejections: KahanSum::default(),
    };
    let mut history = Vec::with_capacity(pair.horizon() + 1);
    for x0 in pair.prompt().support() {
        history.push(x0);
        walker.visit(&mut history, pair.prompt()[x0], 0, true)?;
        history.pop();
    }
    let probs: Vec<f64> = walker.output.iter().map(KahanSum::total).collect();
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::NumericalGuard(format!(
            "enumerated output mass is {total}"
        )));
    }
    Ok(Enumeration {
        output: Dist::new(probs)?,
        expected_rejections: walker.rejections.total(),
    })
}

pub fn enumerate_output_distribution<M: TokenModel>(
    algorithm: Algorithm<'_>,
    pair: &ModelPair<M>,
) -> Result<Dist> {
    enumerate(algorithm, pair).map(|e| e.output)
}

pub fn enumerate_expected_rejections<M: TokenModel>(
    algorithm: Algorithm<'_>,
    pair: &ModelPair<M>,
) -> Result<f64> {
    enumerate(algorithm, pair).map(|e| e.expected_rejections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::ConstantPolicy;
    use crate::dist::tv_distance;
    use crate::exact::ExactRejections;
    use crate::model::{joint_distribution, MarkovModel};

    fn l1(a: &Dist, b: &Dist) -> f64 {
        2.0 * tv_distance(a, b).unwrap()
    }

    #[test]
    fn sd_and_batch_reproduce_target() {
        let pair = ModelPair::<MarkovModel>::random(4, 2, 2).unwrap();
        let q = joint_distribution(pair.target()).unwrap();
        for alg in [Algorithm::Speculative, Algorithm::Batch(1), Algorithm::Batch(2)] {
            let out = enumerate_output_distribution(alg, &pair).unwrap();
            assert!(l1(&out, &q) < 1e-10, "{alg:?}");
        }
    }

    #[test]
    fn batch_of_one_matches_sd_exactly() {
        let pair = ModelPair::<MarkovModel>::random(6, 2, 2).unwrap();
        let a = enumerate(Algorithm::Speculative, &pair).unwrap();
        let b = enumerate(Algorithm::Batch(1), &pair).unwrap();
        assert!(l1(&a.output, &b.output) < 1e-15);
        assert!((a.expected_rejections - b.expected_rejections).abs() < 1e-15);
    }

    #[test]
    fn always_accept_reproduces_draft() {
        let pair = ModelPair::<MarkovModel>::random(7, 3, 3).unwrap();
        let always = ConstantPolicy { acceptance: 1.0 };
        let e = enumerate(Algorithm::Generic(&always), &pair).unwrap();
        assert!(l1(&e.output, &joint_distribution(pair.draft()).unwrap()) < 1e-12);
        assert_eq!(e.expected_rejections, 0.0);
    }

    #[test]
    fn identical_models_never_reject() {
        let m = MarkovModel::random(3, 3, 3).unwrap();
        let pair = ModelPair::new(m.clone(), m).unwrap();
        for alg in [Algorithm::Speculative, Algorithm::Batch(3)] {
            assert_eq!(enumerate_expected_rejections(alg, &pair).unwrap(), 0.0);
        }
    }

    #[test]
    fn sd_formula_matches_tree() {
        let pair = ModelPair::<MarkovModel>::random(8, 3, 4).unwrap();
        let tree = enumerate_expected_rejections(Algorithm::Speculative, &pair).unwrap();
        assert!((tree - pair.expected_rejections_sd()).abs() < 1e-12);
    }

    #[test]
    fn cap_and_arguments() {
        let pair = ModelPair::<MarkovModel>::random(1, 7, 50).unwrap();
        assert!(matches!(
            enumerate(Algorithm::Speculative, &pair),
            Err(Error::TooLarge { .. })
        ));
        let small = ModelPair::<MarkovModel>::random(1, 2, 2).unwrap();
        assert!(enumerate(Algorithm::Batch(0), &small).is_err());
    }
}
