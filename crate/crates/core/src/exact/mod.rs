//! Exact expected-rejection analysis.
//!
//! Speculative decoding rejects position `n` with probability
//! `TV(p_n, q_n)` given the accepted prefix, so
//! `E[N_rej] = Σ_n E_{x_{<n} ∼ q} TV(p_n, q_n)(x_{<n})`.
//!
//! Batch decoding rejects a continuation position with the same probability,
//! but a round-start position only with probability `Π_m r_m`, where
//! `r_m = TV(q^m, p)` along the iterates `q^{m+1} = [q^m − p]_+`. Tracking
//! the pseudo-measure `f(x_{0:n}) = P(x_{0:n}, position n rejected)`
//! (position 0 counts as rejected: the first round starts at 1) gives
//!
//! ```text
//! f(x_{0:n}) = h(x_n) q(x_{0:n-1}) − (h(x_n) − w(x_n)) f(x_{0:n-1})
//! E[N_rej]   = Σ_n E_q[TV] − Σ_n Σ_{x_{<n}} f(x_{<n}) (TV − Π_m r_m)
//! ```
//!
//! with `h = max{0, q − p}` and `w = (Π_m r_m) q^{M+1}`, both evaluated at
//! the row pair for the prefix. [`history`] runs this over every history;
//! [`markov`] aggregates it onto the last token for Markov pairs.

pub mod enumerate;
pub mod history;
pub mod markov;

pub use enumerate::{
    enumerate, enumerate_expected_rejections, enumerate_output_distribution, Algorithm,
    Enumeration,
};

use serde::{Deserialize, Serialize};

use crate::dist::{positive_part, Dist, TV_ZERO};
use crate::error::{Error, Result};
use crate::model::{FullModel, MarkovModel, ModelPair};

/// Expected rejections of batch decoding split into the speculative
/// decoding term and the batch improvement subtracted from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRejections {
    pub total: f64,
    pub sd: f64,
    pub improvement: f64,
}

/// Batch size, or the `M → ∞` limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Finite(usize),
    Unbounded,
}

impl BatchSize {
    fn validate(self) -> Result<Self> {
        match self {
            Self::Finite(0) => Err(Error::InvalidArgument("batch size must be at least 1".into())),
            other => Ok(other),
        }
    }
}

/// `q^1 = q, .., q^{k}` and `r_1, .., r_k` for `q^{m+1} = [q^m − p]_+`,
/// stopping early once some `r_m` is numerically zero (the next iterate is
/// then undefined and the product negligible).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchIterates {
    pub iterates: Vec<Dist>,
    pub rates: Vec<f64>,
}

impl BatchIterates {
    pub fn new(q: &Dist, p: &Dist, batch: usize) -> Result<Self> {
        let mut iterates = vec![q.clone()];
        let mut rates = Vec::with_capacity(batch);
        for _ in 0..batch {
            let current = iterates.last().expect("q^1 present");
            let mass = positive_part(current, p)?;
            let r: f64 = mass.iter().sum();
            rates.push(r.min(1.0));
            if r < TV_ZERO {
                break;
            }
            iterates.push(Dist::from_weights(mass)?);
        }
        Ok(Self { iterates, rates })
    }

    /// `Π_m r_m`
    pub fn product(&self) -> f64 {
        self.rates.iter().product()
    }
}

/// Per-row-pair coefficients of the pseudo-measure recursion.
#[derive(Debug, Clone)]
pub(crate) struct RowCoefficients {
    /// `TV(q, p)`
    pub tv: f64,
    /// `max{0, q − p}`
    pub h: Vec<f64>,
    /// `Π_m r_m`
    pub product: f64,
    /// `(Π_m r_m) q^{M+1}`, unnormalized
    pub w: Vec<f64>,
}

impl RowCoefficients {
    pub fn new(p: &Dist, q: &Dist, batch: BatchSize) -> Result<Self> {
        let h = positive_part(q, p)?;
        let tv: f64 = h.iter().sum::<f64>().min(1.0);
        let (product, w) = match batch {
            BatchSize::Finite(m) => {
                let it = BatchIterates::new(q, p, m)?;
                let product = it.product();
                let exhausted = it.iterates.len() == it.rates.len();
                let w = if product == 0.0 || exhausted {
                    vec![0.0; q.len()]
                } else {
                    let last = it.iterates.last().expect("q^1 present");
                    last.probs().iter().map(|x| x * product).collect()
                };
                (product, w)
            }
            // Mass of q outside supp(p) can never be matched by a draft and
            // survives every iterate; everything else is exhausted.
            BatchSize::Unbounded => {
                let w: Vec<f64> = (0..q.len())
                    .map(|x| if p[x] > 0.0 { 0.0 } else { q[x] })
                    .collect();
                (w.iter().sum(), w)
            }
        };
        Ok(Self { tv, h, product, w })
    }
}

/// Exact expected-rejection formulas for a model pair.
pub trait ExactRejections {
    /// `Σ_n E_{x_{<n} ∼ q} TV(p_n, q_n)`
    fn expected_rejections_sd(&self) -> f64;

    fn expected_rejections_batch(&self, batch: usize) -> Result<BatchRejections>;

    /// `lim_{M → ∞}` of the batch expected rejections.
    fn limit_rejections(&self) -> f64;
}

impl ExactRejections for ModelPair<MarkovModel> {
    fn expected_rejections_sd(&self) -> f64 {
        markov::expected_rejections_sd(self)
    }

    fn expected_rejections_batch(&self, batch: usize) -> Result<BatchRejections> {
        markov::expected_rejections_batch(self, BatchSize::Finite(batch))
    }

    fn limit_rejections(&self) -> f64 {
        markov::expected_rejections_batch(self, BatchSize::Unbounded)
            .expect("unbounded batch is valid")
            .total
    }
}

impl ExactRejections for ModelPair<FullModel> {
    fn expected_rejections_sd(&self) -> f64 {
        history::expected_rejections_sd(self).expect("full models respect the size cap")
    }

    fn expected_rejections_batch(&self, batch: usize) -> Result<BatchRejections> {
        history::expected_rejections_batch(self, BatchSize::Finite(batch))
    }

    fn limit_rejections(&self) -> f64 {
        history::expected_rejections_batch(self, BatchSize::Unbounded)
            .expect("full models respect the size cap")
            .total
    }
}

pub fn expected_rejections_sd<P: ExactRejections>(pair: &P) -> f64 {
    pair.expected_rejections_sd()
}

pub fn expected_rejections_batch<P: ExactRejections>(pair: &P, batch: usize) -> Result<BatchRejections> {
    pair.expected_rejections_batch(batch)
}

pub fn limit_rejections<P: ExactRejections>(pair: &P) -> f64 {
    pair.limit_rejections()
}

/// Modeled speedup `T / E[N_rej]`. No rejections at all is reported as the
/// horizon `T`.
pub fn acceleration_rate(horizon: usize, expected_rejections: f64) -> Result<f64> {
    if expected_rejections.is_nan() || expected_rejections < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "expected rejections must be nonnegative, got {expected_rejections}"
        )));
    }
    if expected_rejections == 0.0 {
        return Ok(horizon as f64);
    }
    Ok(horizon as f64 / expected_rejections)
}

/// Single-token batch improvement for `p = Unif(V)`, `q = Unif(V')` with
/// `r = V / V'`: `(1 − 1/r) − (1 − 1/r)^M`.
pub fn batch_improvement_uniform(r: f64, batch: usize) -> Result<f64> {
    if r.is_nan() || r < 1.0 || batch == 0 {
        return Err(Error::InvalidArgument(format!(
            "need r ≥ 1 and M ≥ 1, got r = {r}, M = {batch}"
        )));
    }
    let tv = 1.0 - 1.0 / r;
    Ok(tv - tv.powi(batch as i32))
}

/// Single-token batch improvement for `p = Ber(u)`, `q = Ber(v)`, `u ≥ v`:
/// `|u − v| (1 − u^{M−1})`.
pub fn batch_improvement_bernoulli(u: f64, v: f64, batch: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) || u < v || batch == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 ≤ v ≤ u ≤ 1 and M ≥ 1, got u = {u}, v = {v}, M = {batch}"
        )));
    }
    Ok((u - v).abs() * (1.0 - u.powi(batch as i32 - 1)))
}

/// The general single-token improvement `TV(q, p) − Π_m TV(q^m, p)`.
pub fn batch_improvement_single(p: &Dist, q: &Dist, batch: usize) -> Result<f64> {
    let c = RowCoefficients::new(p, q, BatchSize::Finite(batch).validate()?)?;
    Ok(c.tv - c.product)
}
