//! Seeded simulation campaigns checked against the exact formulas.
//!
//! Run `i` of a campaign draws from its own ChaCha stream `(seed, i)`, so the
//! report does not depend on how rayon schedules the runs; results are
//! collected by run index and reduced sequentially.

use rayon::prelude::*;
use serde::Serialize;

use crate::decoding::{
    autoregressive_decode, batch_decode, generic_decode, speculative_decode, Policy, Trajectory,
};
use crate::dist::{tv_distance, Dist};
use crate::error::{Error, Result};
use crate::exact::{markov, Algorithm, ExactRejections};
use crate::model::{check_cap, joint_distribution, sequence_index, MarkovModel, ModelPair, TokenModel};
use crate::rng::Rng;

/// Default spacing of report checkpoints, in runs.
pub const CHECKPOINT_EVERY: usize = 100;

/// Largest `V^T` for which output frequencies are tabulated.
pub const TABULATION_CAP: u128 = 10_000;

/// Default L1 threshold of [`unbiasedness_check`].
pub const UNBIASEDNESS_THRESHOLD: f64 = 0.02;

/// Which sampler a campaign runs.
#[derive(Clone, Copy)]
pub enum Decoder<'a> {
    Autoregressive,
    Speculative,
    Batch(usize),
    Generic(&'a dyn Policy),
}

impl Decoder<'_> {
    pub fn name(&self) -> String {
        match self {
            Self::Autoregressive => "autoregressive".into(),
            Self::Speculative => "speculative".into(),
            Self::Batch(m) => format!("batch({m})"),
            Self::Generic(_) => "generic".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Batch(0) => Err(Error::InvalidArgument("batch size must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// One run: the output and its target-model cost. Auto-regressive
    /// decoding pays one call per token, the speculative samplers one per
    /// rejection.
    pub fn run<M: TokenModel>(&self, pair: &ModelPair<M>, rng: &mut Rng) -> Result<(Trajectory, usize)> {
        match *self {
            Self::Autoregressive => {
                let t = autoregressive_decode(pair.target(), rng);
                Ok((t, pair.horizon()))
            }
            Self::Speculative => speculative_decode(pair, rng).map(|(t, s)| (t, s.oracle_calls)),
            Self::Batch(m) => batch_decode(pair, m, rng).map(|(t, s)| (t, s.oracle_calls)),
            Self::Generic(policy) => {
                generic_decode(pair, policy, rng).map(|(t, s)| (t, s.oracle_calls))
            }
        }
    }

    /// Exact expected cost, when some formula or oracle covers it.
    pub fn exact_cost(&self, pair: &ModelPair<MarkovModel>) -> Result<Option<f64>> {
        self.validate()?;
        Ok(match *self {
            Self::Autoregressive => Some(pair.horizon() as f64),
            Self::Speculative => Some(pair.expected_rejections_sd()),
            Self::Batch(m) => Some(pair.expected_rejections_batch(m)?.total),
            Self::Generic(policy) if !policy.reads_history() => {
                Some(markov::expected_rejections_policy(pair, policy)?)
            }
            Self::Generic(policy) => {
                match crate::exact::enumerate_expected_rejections(Algorithm::Generic(policy), pair) {
                    Ok(e) => Some(e),
                    Err(Error::TooLarge { .. }) => None,
                    Err(e) => return Err(e),
                }
            }
        })
    }
}

impl std::fmt::Debug for Decoder<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone)]
pub struct Campaign<'a> {
    pub pair: &'a ModelPair<MarkovModel>,
    pub decoder: Decoder<'a>,
    pub runs: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Also tabulate empirical output frequencies (small instances only).
    pub tabulate: bool,
}

impl<'a> Campaign<'a> {
    pub fn new(pair: &'a ModelPair<MarkovModel>, decoder: Decoder<'a>, runs: usize, seed: u64) -> Self {
        Self {
            pair,
            decoder,
            runs,
            checkpoint_every: CHECKPOINT_EVERY,
            seed,
            tabulate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    /// Runs completed so far.
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(runs)`.
    pub stderr: f64,
    pub exact: Option<f64>,
    /// `(mean − exact) / exact`; zero when both vanish.
    pub rel_dev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignReport {
    pub algorithm: String,
    pub seed: u64,
    pub runs: usize,
    pub exact: Option<f64>,
    pub checkpoints: Vec<Checkpoint>,
    /// Empirical law of `x_1..x_T`, indexed like the enumeration oracle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
}

impl CampaignReport {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("a campaign has at least one run")
    }
}

/// Running moments over integer costs; sums stay exact in `u128`.
#[derive(Default)]
struct Moments {
    n: u128,
    sum: u128,
    sum_sq: u128,
}

impl Moments {
    fn push(&mut self, x: usize) {
        let x = x as u128;
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum as f64 / self.n as f64
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        // n Σx² − (Σx)² is an exact nonnegative integer
        let spread = self.n * self.sum_sq - self.sum * self.sum;
        let var = spread as f64 / (self.n * (self.n - 1)) as f64;
        (var / self.n as f64).sqrt()
    }
}

fn relative_deviation(mean: f64, exact: Option<f64>) -> Option<f64> {
    let exact = exact?;
    if exact == 0.0 {
        (mean == 0.0).then_some(0.0)
    } else {
        Some((mean - exact) / exact)
    }
}

fn run_all<M: TokenModel>(
    pair: &ModelPair<M>,
    decoder: Decoder<'_>,
    runs: usize,
    seed: u64,
) -> Result<Vec<(Trajectory, usize)>> {
    (0..runs)
        .into_par_iter()
        .map(|i| decoder.run(pair, &mut Rng::for_run(seed, i as u64)))
        .collect()
}

pub fn run_campaign(campaign: &Campaign<'_>) -> Result<CampaignReport> {
    let Campaign {
        pair,
        decoder,
        runs,
        checkpoint_every,
        seed,
        tabulate,
    } = *campaign;
    if runs == 0 || checkpoint_every == 0 {
        return Err(Error::InvalidArgument(
            "runs and checkpoint spacing must be positive".into(),
        ));
    }
    let exact = decoder.exact_cost(pair)?;
    let results = run_all(pair, decoder, runs, seed)?;

    let mut moments = Moments::default();
    let mut checkpoints = Vec::with_capacity(runs / checkpoint_every + 1);
    for (i, (_, cost)) in results.iter().enumerate() {
        moments.push(*cost);
        let done = i + 1;
        if done % checkpoint_every == 0 || done == runs {
            let mean = moments.mean();
            checkpoints.push(Checkpoint {
                runs: done,
                mean,
                stderr: moments.stderr(),
                exact,
                rel_dev: relative_deviation(mean, exact),
            });
        }
    }

    let frequencies = if tabulate {
        let counts = tabulate_outputs(pair, results.iter().map(|(t, _)| t))?;
        Some(counts.into_iter().map(|c| c as f64 / runs as f64).collect())
    } else {
        None
    };

    Ok(CampaignReport {
        algorithm: decoder.name(),
        seed,
        runs,
        exact,
        checkpoints,
        frequencies,
    })
}

fn tabulation_size<M>(pair: &ModelPair<M>) -> Result<usize>
where
    M: TokenModel,
{
    let size = check_cap(pair.vocab_size(), pair.horizon())?;
    if size > TABULATION_CAP {
        return Err(Error::TooLarge {
            size,
            cap: TABULATION_CAP,
        });
    }
    Ok(size as usize)
}

fn tabulate_outputs<'t, M: TokenModel>(
    pair: &ModelPair<M>,
    outputs: impl Iterator<Item = &'t Trajectory>,
) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; tabulation_size(pair)?];
    for t in outputs {
        counts[sequence_index(&t.tokens, pair.vocab_size())] += 1;
    }
    Ok(counts)
}

/// Result of comparing empirical output frequencies with the target law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnbiasednessCheck {
    /// `Σ_x |freq(x) − q(x)|` over `x_1..x_T`.
    pub l1: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Samples `samples` outputs and compares their frequencies with the joint
/// target law. Requires `V^T ≤ 10^4`.
pub fn unbiasedness_check<M: TokenModel>(
    pair: &ModelPair<M>,
    decoder: Decoder<'_>,
    samples: usize,
    seed: u64,
    threshold: f64,
) -> Result<UnbiasednessCheck> {
    decoder.validate()?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    let size = tabulation_size(pair)?;
    let v = pair.vocab_size();
    // Count per chunk so memory stays O(V^T) at 10^6 samples; integer counts
    // make the reduction order irrelevant.
    const CHUNK: usize = 4096;
    let counts = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; size];
            for i in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let (t, _) = decoder.run(pair, &mut Rng::for_run(seed, i as u64))?;
                counts[sequence_index(&t.tokens, v)] += 1;
            }
            Ok(counts)
        })
        .try_reduce(
            || vec![0u64; size],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let freq = Dist::new(counts.iter().map(|&c| c as f64 / samples as f64).collect())?;
    let l1 = 2.0 * tv_distance(&freq, &joint_distribution(pair.target())?)?;
    Ok(UnbiasednessCheck {
        l1,
        threshold,
        pass: l1 <= threshold,
    })
}

/// One row of a batch-size scan; `batch = None` is the `M → ∞` limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub batch: Option<usize>,
    pub exact: f64,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
}

/// Exact and (when `runs > 0`) simulated expected rejections for every
/// batch size in `batches`, followed by the limit row.
pub fn batch_scan(
    pair: &ModelPair<MarkovModel>,
    batches: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<ScanRow>> {
    if batches.is_empty() {
        return Err(Error::InvalidArgument("batch range is empty".into()));
    }
    let mut rows = Vec::with_capacity(batches.len() + 1);
    for &m in batches {
        let exact = pair.expected_rejections_batch(m)?.total;
        let (mean, stderr) = if runs > 0 {
            let report = run_campaign(&Campaign::new(pair, Decoder::Batch(m), runs, seed))?;
            let last = report.last();
            (Some(last.mean), Some(last.stderr))
        } else {
            (None, None)
        };
        rows.push(ScanRow {
            batch: Some(m),
            exact,
            mean,
            stderr,
        });
    }
    rows.push(ScanRow {
        batch: None,
        exact: pair.limit_rejections(),
        mean: None,
        stderr: None,
    });
    Ok(rows)
}
