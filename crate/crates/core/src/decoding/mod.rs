//! Samplers for auto-regressive, speculative, generic rejection-based and
//! batch speculative decoding.
//!
//! All speculative samplers draft to the horizon on every round (lookahead
//! `K = T`) and charge one oracle call per rejection; a final round that
//! accepts every remaining draft is free. Uniforms are consumed in a fixed
//! order so that samplers sharing a seed walk identical paths:
//!
//! 1. the prompt token,
//! 2. per round, every draft token (response by response for batches),
//! 3. one uniform per verification, plus one per residual draw.

mod policy;

pub use policy::{
    sd_acceptance, BiasedResidual, ConstantPolicy, FnPolicy, OverAcceptPolicy, Policy,
    SpeculativePolicy, StepContext,
};
pub(crate) use policy::{checked_acceptance, checked_residual, guard_zero_residual};

use serde::{Deserialize, Serialize};

use crate::dist::{residual_plus, Dist};
use crate::error::{Error, Result};
use crate::model::{ModelPair, TokenModel};
use crate::rng::Rng;

/// Decoded output: the prompt token `x_0` and the tokens `x_1..x_T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt: usize,
    pub tokens: Vec<usize>,
}

/// Cost accounting for one decoding run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunStats {
    /// `N_rej`
    pub rejections: usize,
    /// Target-model calls charged under the rejection-cost convention.
    pub oracle_calls: usize,
    /// Draft-then-verify rounds executed, including a final all-accept round.
    pub rounds: usize,
    /// `R_n` for `n = 1..T`.
    pub rejected: Vec<bool>,
}

impl RunStats {
    fn with_horizon(t: usize) -> Self {
        Self {
            rejected: Vec::with_capacity(t),
            ..Self::default()
        }
    }

    fn accept(&mut self) {
        self.rejected.push(false);
    }

    fn reject(&mut self) {
        self.rejected.push(true);
        self.rejections += 1;
        self.oracle_calls += 1;
    }
}

fn finish(history: Vec<usize>) -> Trajectory {
    Trajectory {
        prompt: history[0],
        tokens: history[1..].to_vec(),
    }
}

/// Samples `x_1..x_T` from `model` one token at a time.
pub fn autoregressive_decode<M: TokenModel>(model: &M, rng: &mut Rng) -> Trajectory {
    let t = model.horizon();
    let mut history = Vec::with_capacity(t + 1);
    history.push(model.prompt().sample(rng.uniform()));
    while history.len() <= t {
        let x = model.next(&history).sample(rng.uniform());
        history.push(x);
    }
    finish(history)
}

/// Drafts `x̃_n..x̃_T` from `p` continuing `history`.
fn draft_to_horizon<M: TokenModel>(draft: &M, history: &[usize], rng: &mut Rng) -> Vec<usize> {
    let t = draft.horizon();
    let mut ctx = history.to_vec();
    ctx.reserve(t + 1 - history.len());
    while ctx.len() <= t {
        let x = draft.next(&ctx).sample(rng.uniform());
        ctx.push(x);
    }
    ctx.split_off(history.len())
}

/// Standard speculative decoding: accept `x̃` when `u < min{1, q(x̃)/p(x̃)}`,
/// otherwise resample from `[q − p]_+` and start a new round.
pub fn speculative_decode<M: TokenModel>(
    pair: &ModelPair<M>,
    rng: &mut Rng,
) -> Result<(Trajectory, RunStats)> {
    let (p, q) = (pair.draft(), pair.target());
    let t = pair.horizon();
    let mut stats = RunStats::with_horizon(t);
    let mut history = Vec::with_capacity(t + 1);
    history.push(pair.prompt().sample(rng.uniform()));

    while history.len() <= t {
        stats.rounds += 1;
        for candidate in draft_to_horizon(p, &history, rng) {
            let (p_row, q_row) = (p.next(&history), q.next(&history));
            if rng.uniform() < sd_acceptance(p_row[candidate], q_row[candidate]) {
                history.push(candidate);
                stats.accept();
            } else {
                let step = history.len();
                let residual =
                    residual_plus(q_row, p_row).map_err(|_| guard_zero_residual(step))?;
                history.push(residual.sample(rng.uniform()));
                stats.reject();
                break;
            }
        }
    }
    Ok((finish(history), stats))
}

/// Generic rejection-based decoding: accept with probability `b_n`,
/// otherwise draw from the policy's residual `𝒫_n` and re-draft.
pub fn generic_decode<M: TokenModel, P: Policy + ?Sized>(
    pair: &ModelPair<M>,
    policy: &P,
    rng: &mut Rng,
) -> Result<(Trajectory, RunStats)> {
    let (p, q) = (pair.draft(), pair.target());
    let t = pair.horizon();
    let mut stats = RunStats::with_horizon(t);
    let mut history = Vec::with_capacity(t + 1);
    history.push(pair.prompt().sample(rng.uniform()));

    while history.len() <= t {
        stats.rounds += 1;
        for candidate in draft_to_horizon(p, &history, rng) {
            let ctx = StepContext {
                step: history.len(),
                history: &history,
                draft: p.next(&history),
                target: q.next(&history),
            };
            let b = checked_acceptance(policy, &ctx, candidate)?;
            if rng.uniform() < b {
                history.push(candidate);
                stats.accept();
            } else {
                let residual = checked_residual(policy, &ctx)?;
                let x = residual.sample(rng.uniform());
                history.push(x);
                stats.reject();
                break;
            }
        }
    }
    Ok((finish(history), stats))
}

/// Batch speculative decoding with `batch` independent draft responses per
/// round.
///
/// At the round's first position the responses are tried in order against
/// the shrinking target `q^m` (`q^{m+1} = [q^m − p]_+`). The first response
/// whose first token is accepted is followed alone until it rejects, in
/// which case the replacement comes from the residual of the unmodified
/// target. If every first token is rejected the replacement is drawn from
/// `q^{M+1}`. `batch = 1` walks exactly the same path as
/// [`speculative_decode`] under the same seed.
pub fn batch_decode<M: TokenModel>(
    pair: &ModelPair<M>,
    batch: usize,
    rng: &mut Rng,
) -> Result<(Trajectory, RunStats)> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let (p, q) = (pair.draft(), pair.target());
    let t = pair.horizon();
    let mut stats = RunStats::with_horizon(t);
    let mut history = Vec::with_capacity(t + 1);
    history.push(pair.prompt().sample(rng.uniform()));

    while history.len() <= t {
        stats.rounds += 1;
        let responses: Vec<Vec<usize>> = (0..batch)
            .map(|_| draft_to_horizon(p, &history, rng))
            .collect();

        let root = history.len();
        let mut q_m: Dist = q.next(&history).clone();
        let mut accepted_any = false;
        let mut round_over = false;

        for response in &responses {
            for (offset, &candidate) in response.iter().enumerate() {
                let p_row = p.next(&history);
                let q_row = if offset == 0 { &q_m } else { q.next(&history) };
                if rng.uniform() < sd_acceptance(p_row[candidate], q_row[candidate]) {
                    history.push(candidate);
                    stats.accept();
                    accepted_any = true;
                    continue;
                }
                if offset == 0 {
                    q_m = residual_plus(&q_m, p_row).map_err(|_| guard_zero_residual(root))?;
                } else {
                    let step = history.len();
                    let residual =
                        residual_plus(q_row, p_row).map_err(|_| guard_zero_residual(step))?;
                    history.push(residual.sample(rng.uniform()));
                    stats.reject();
                    round_over = true;
                }
                break;
            }
            if accepted_any || round_over {
                break;
            }
        }

        if !accepted_any {
            history.push(q_m.sample(rng.uniform()));
            stats.reject();
        }
    }
    Ok((finish(history), stats))
}
