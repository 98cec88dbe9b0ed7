//! Acceptance/residual policies for the generic rejection-based decoder.

use crate::dist::{residual_plus, Dist};
use crate::error::{Error, Result};
use crate::tradeoff::{epsilon_acceptance_at, optimal_residual, AcceptanceFn};

/// What a policy sees when deciding about position `step`.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// 1-based position `n` being decided.
    pub step: usize,
    /// Accepted prefix `x_0..x_{n-1}`.
    pub history: &'a [usize],
    /// `p_n(· | history)`
    pub draft: &'a Dist,
    /// `q_n(· | history)`
    pub target: &'a Dist,
}

/// Acceptance probability `b_n` and residual law `𝒫_n` of the generic
/// rejection-based decoder.
pub trait Policy: Sync {
    /// Probability of accepting draft token `candidate`. Values outside
    /// `[0, 1]` are clamped; NaN is an error.
    fn acceptance(&self, ctx: &StepContext<'_>, candidate: usize) -> f64;

    /// Law the replacement token is drawn from after a rejection.
    fn residual(&self, ctx: &StepContext<'_>) -> Result<Dist>;

    /// `false` if the policy depends only on `step`, the two rows and the
    /// candidate. Exact dynamic programs over Markov pairs require this.
    fn reads_history(&self) -> bool {
        true
    }
}

/// `min{1, q/p}`, with the value 1 where `p = 0`.
pub fn sd_acceptance(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        1.0
    } else {
        (q / p).min(1.0)
    }
}

pub(crate) fn checked_acceptance<P: Policy + ?Sized>(
    policy: &P,
    ctx: &StepContext<'_>,
    candidate: usize,
) -> Result<f64> {
    let b = policy.acceptance(ctx, candidate);
    if b.is_nan() {
        return Err(Error::InvalidPolicy(format!(
            "acceptance is NaN at step {} for token {candidate}",
            ctx.step
        )));
    }
    Ok(b.clamp(0.0, 1.0))
}

pub(crate) fn checked_residual<P: Policy + ?Sized>(
    policy: &P,
    ctx: &StepContext<'_>,
) -> Result<Dist> {
    let d = policy.residual(ctx).map_err(|e| match e {
        Error::ZeroResidual => guard_zero_residual(ctx.step),
        other => Error::InvalidPolicy(other.to_string()),
    })?;
    if d.len() != ctx.target.len() {
        return Err(Error::InvalidPolicy(format!(
            "residual has {} entries, vocabulary has {}",
            d.len(),
            ctx.target.len()
        )));
    }
    Ok(d)
}

pub(crate) fn guard_zero_residual(step: usize) -> Error {
    Error::NumericalGuard(format!(
        "rejection at step {step} but the residual distribution is empty"
    ))
}

/// Standard speculative decoding: `b = min{1, q/p}`, `𝒫 = [q − p]_+`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpeculativePolicy;

impl Policy for SpeculativePolicy {
    fn acceptance(&self, ctx: &StepContext<'_>, candidate: usize) -> f64 {
        sd_acceptance(ctx.draft[candidate], ctx.target[candidate])
    }

    fn residual(&self, ctx: &StepContext<'_>) -> Result<Dist> {
        residual_plus(ctx.target, ctx.draft)
    }

    fn reads_history(&self) -> bool {
        false
    }
}

/// Accepts every candidate with the same probability and resamples from the
/// target on rejection. `b ≡ 1` reproduces the draft model, `b ≡ 0` the
/// target.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub acceptance: f64,
}

impl Policy for ConstantPolicy {
    fn acceptance(&self, _: &StepContext<'_>, _: usize) -> f64 {
        self.acceptance
    }

    fn residual(&self, ctx: &StepContext<'_>) -> Result<Dist> {
        Ok(ctx.target.clone())
    }

    fn reads_history(&self) -> bool {
        false
    }
}

/// How a biased policy picks its residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasedResidual {
    /// The canonical TV-optimal residual `[A]_+`.
    Optimal,
    /// The target row itself.
    Target,
}

/// Over-accepting policy `b(x) = min{1, (q(x) + ε)/p(x)}`.
#[derive(Debug, Clone, Copy)]
pub struct OverAcceptPolicy {
    pub epsilon: f64,
    pub residual: BiasedResidual,
}

impl OverAcceptPolicy {
    pub fn opt(epsilon: f64) -> Self {
        Self {
            epsilon,
            residual: BiasedResidual::Optimal,
        }
    }

    pub fn uno(epsilon: f64) -> Self {
        Self {
            epsilon,
            residual: BiasedResidual::Target,
        }
    }

    fn acceptance_row(&self, ctx: &StepContext<'_>) -> AcceptanceFn {
        AcceptanceFn::new(
            (0..ctx.draft.len())
                .map(|x| epsilon_acceptance_at(ctx.draft[x], ctx.target[x], self.epsilon))
                .collect(),
        )
        .expect("ε-acceptance lies in [0, 1]")
    }
}

impl Policy for OverAcceptPolicy {
    fn acceptance(&self, ctx: &StepContext<'_>, candidate: usize) -> f64 {
        epsilon_acceptance_at(ctx.draft[candidate], ctx.target[candidate], self.epsilon)
    }

    fn residual(&self, ctx: &StepContext<'_>) -> Result<Dist> {
        match self.residual {
            BiasedResidual::Target => Ok(ctx.target.clone()),
            BiasedResidual::Optimal => {
                let b = self.acceptance_row(ctx);
                Ok(optimal_residual(&b, ctx.draft, ctx.target)?.canonical)
            }
        }
    }

    fn reads_history(&self) -> bool {
        false
    }
}

/// Policy assembled from two closures.
pub struct FnPolicy<A, R> {
    acceptance: A,
    residual: R,
}

impl<A, R> FnPolicy<A, R>
where
    A: Fn(&StepContext<'_>, usize) -> f64 + Sync,
    R: Fn(&StepContext<'_>) -> Result<Dist> + Sync,
{
    pub fn new(acceptance: A, residual: R) -> Self {
        Self {
            acceptance,
            residual,
        }
    }
}

impl<A, R> Policy for FnPolicy<A, R>
where
    A: Fn(&StepContext<'_>, usize) -> f64 + Sync,
    R: Fn(&StepContext<'_>) -> Result<Dist> + Sync,
{
    fn acceptance(&self, ctx: &StepContext<'_>, candidate: usize) -> f64 {
        (self.acceptance)(ctx, candidate)
    }

    fn residual(&self, ctx: &StepContext<'_>) -> Result<Dist> {
        (self.residual)(ctx)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn acceptance(&self, ctx: &StepContext<'_>, candidate: usize) -> f64 {
        (**self).acceptance(ctx, candidate)
    }

    fn residual(&self, ctx: &StepContext<'_>) -> Result<Dist> {
        (**self).residual(ctx)
    }

    fn reads_history(&self) -> bool {
        (**self).reads_history()
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn acceptance(&self, ctx: &StepContext<'_>, candidate: usize) -> f64 {
        (**self).acceptance(ctx, candidate)
    }

    fn residual(&self, ctx: &StepContext<'_>) -> Result<Dist> {
        (**self).residual(ctx)
    }

    fn reads_history(&self) -> bool {
        (**self).reads_history()
    }
}
