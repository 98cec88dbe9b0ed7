//! Single-position rejection/bias tradeoff for over-accepting policies.
//!
//! For an acceptance function `b` the output law of one decoding position is
//! `b·p + 𝒫·Σ(1−b)p`. The minimal TV bias over residuals `𝒫` has a closed
//! form, the minimizers are characterized by the signed vector
//! `A = (q − b·p) / Σ(1−b)p`, and for any `b ≥ min{1, q/p}` the rejection
//! probability and the minimal bias add up to `TV(p, q)`.

use serde::{Deserialize, Serialize};

use crate::dist::{tv_distance, Dist, NORMALIZATION_TOL};
use crate::error::{Error, Result};

/// Per-token acceptance probabilities `b(x) ∈ [0, 1]` at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceFn {
    b: Vec<f64>,
}

impl AcceptanceFn {
    pub fn new(b: Vec<f64>) -> Result<Self> {
        for (index, &value) in b.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidEntry { index, value });
            }
        }
        Ok(Self { b })
    }

    pub fn values(&self) -> &[f64] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `b ≡ 1`
    pub fn always(len: usize) -> Self {
        Self { b: vec![1.0; len] }
    }
}

fn check_len(b: &AcceptanceFn, d: &Dist) -> Result<()> {
    if b.len() != d.len() {
        return Err(Error::LengthMismatch {
            left: b.len(),
            right: d.len(),
        });
    }
    Ok(())
}

/// `min{1, (q + ε)/p}`, and 1 where `p = 0`.
pub fn epsilon_acceptance_at(p: f64, q: f64, epsilon: f64) -> f64 {
    if p <= 0.0 {
        1.0
    } else {
        ((q + epsilon) / p).min(1.0)
    }
}

/// Entrywise `b(x) = min{1, (q(x) + ε)/p(x)}`. `ε = 0` is the speculative
/// decoding rule.
pub fn epsilon_acceptance(p: &Dist, q: &Dist, epsilon: f64) -> Result<AcceptanceFn> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    tv_distance(p, q)?;
    AcceptanceFn::new(
        p.probs()
            .iter()
            .zip(q.probs())
            .map(|(&pp, &qq)| epsilon_acceptance_at(pp, qq, epsilon))
            .collect(),
    )
}

/// `Σ_x (1 − b(x)) p(x)`
pub fn rejection_probability(b: &AcceptanceFn, p: &Dist) -> Result<f64> {
    check_len(b, p)?;
    let r: f64 = b.b.iter().zip(p.probs()).map(|(bx, px)| (1.0 - bx) * px).sum();
    Ok(r.clamp(0.0, 1.0))
}

/// Minimal TV bias over all residuals:
/// `½ Σ |q − b·p| − ½ Σ (1 − b) p`.
///
/// Since `Σ (1 − b) p = Σ (q − b·p)`, this equals `Σ [b·p − q]_+`, which is
/// what is evaluated (no cancellation between the two halves).
pub fn loss_tv_star(b: &AcceptanceFn, p: &Dist, q: &Dist) -> Result<f64> {
    check_len(b, p)?;
    check_len(b, q)?;
    Ok((0..p.len()).map(|x| (b.b[x] * p[x] - q[x]).max(0.0)).sum())
}

/// `A`, its sign partition, and the canonical optimal residual `[A]_+`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCharacterization {
    pub a: Vec<f64>,
    /// Tokens with `A(x) ≥ 0`.
    pub a_plus: Vec<usize>,
    /// Tokens with `A(x) < 0`.
    pub a_minus: Vec<usize>,
    pub canonical: Dist,
}

pub fn optimal_residual(b: &AcceptanceFn, p: &Dist, q: &Dist) -> Result<ResidualCharacterization> {
    check_len(b, p)?;
    check_len(b, q)?;
    let reject = rejection_probability(b, p)?;
    if reject <= 0.0 {
        return Err(Error::DegenerateRejection);
    }
    let a: Vec<f64> = (0..p.len())
        .map(|x| (q[x] - b.b[x] * p[x]) / reject)
        .collect();
    let (a_plus, a_minus): (Vec<usize>, Vec<usize>) = (0..a.len()).partition(|&x| a[x] >= 0.0);
    let canonical = Dist::from_weights(a.iter().map(|&v| v.max(0.0)).collect())?;
    Ok(ResidualCharacterization {
        a,
        a_plus,
        a_minus,
        canonical,
    })
}

/// Whether `residual` lies in the optimal set: zero on `A_−` and between 0
/// and `A` on `A_+`, entrywise within [`NORMALIZATION_TOL`].
pub fn is_optimal_residual(residual: &Dist, b: &AcceptanceFn, p: &Dist, q: &Dist) -> Result<bool> {
    let ch = optimal_residual(b, p, q)?;
    if residual.len() != ch.a.len() {
        return Err(Error::LengthMismatch {
            left: residual.len(),
            right: ch.a.len(),
        });
    }
    let tol = NORMALIZATION_TOL;
    let minus_ok = ch.a_minus.iter().all(|&x| residual[x] <= tol);
    let plus_ok = ch
        .a_plus
        .iter()
        .all(|&x| residual[x] >= -tol && residual[x] <= ch.a[x] + tol);
    Ok(minus_ok && plus_ok)
}

/// Single-position output law `b(x)p(x) + 𝒫(x)·Σ(1−b)p`.
pub fn induced_output_distribution(b: &AcceptanceFn, residual: &Dist, p: &Dist) -> Result<Dist> {
    check_len(b, p)?;
    check_len(b, residual)?;
    let reject = rejection_probability(b, p)?;
    Dist::from_weights(
        (0..p.len())
            .map(|x| b.b[x] * p[x] + residual[x] * reject)
            .collect(),
    )
}

/// The only residual that keeps the output law equal to `q` under an
/// acceptance `b ≤ min{1, q/p}`: `(q − b·p) / Σ(1−b)p`.
pub fn unbiased_residual(b: &AcceptanceFn, p: &Dist, q: &Dist) -> Result<Dist> {
    check_len(b, p)?;
    check_len(b, q)?;
    let mass: Vec<f64> = (0..p.len()).map(|x| q[x] - b.b[x] * p[x]).collect();
    if let Some(x) = mass.iter().position(|&m| m < -NORMALIZATION_TOL) {
        return Err(Error::InvalidArgument(format!(
            "acceptance exceeds q/p at token {x}"
        )));
    }
    if rejection_probability(b, p)? <= 0.0 {
        return Err(Error::DegenerateRejection);
    }
    Dist::from_weights(mass.into_iter().map(|m| m.max(0.0)).collect())
}

/// One point of the rejection/bias front.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub epsilon: f64,
    pub reject_prob: f64,
    pub loss_star: f64,
}

/// `(rejection probability, Loss*_TV)` for `b = min{1, (q + ε)/p}` at each ε.
pub fn pareto_front(p: &Dist, q: &Dist, eps_grid: &[f64]) -> Result<Vec<ParetoPoint>> {
    eps_grid
        .iter()
        .map(|&epsilon| {
            let b = epsilon_acceptance(p, q, epsilon)?;
            Ok(ParetoPoint {
                epsilon,
                reject_prob: rejection_probability(&b, p)?,
                loss_star: loss_tv_star(&b, p, q)?,
            })
        })
        .collect()
}

/// Smallest ε at which `b ≡ 1`: `max_x (p(x) − q(x))`, floored at 0.
pub fn saturating_epsilon(p: &Dist, q: &Dist) -> f64 {
    p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| a - b)
        .fold(0.0, f64::max)
}
