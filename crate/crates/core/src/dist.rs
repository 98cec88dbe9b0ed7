//! Probability rows over a finite vocabulary and the measure-theoretic
//! primitives built on them: total-variation distance, the normalized
//! positive part `[q - p]_+`, and the batch rejection iterate.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries must sum to one within this tolerance; anything closer is
/// silently renormalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Total variation below this value is treated as exactly zero.
pub const TV_ZERO: f64 = 1e-12;

/// A probability distribution over tokens `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Dist {
    probs: Vec<f64>,
}

impl Dist {
    /// Builds a distribution from probabilities that already sum to one
    /// (within [`NORMALIZATION_TOL`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum = checked_sum(&probs)?;
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self::scaled(probs, sum))
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum = checked_sum(&weights)?;
        if sum <= 0.0 {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self::scaled(weights, sum))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::from_weights(vec![1.0; len])
    }

    /// All mass on `token`.
    pub fn point(len: usize, token: usize) -> Result<Self> {
        if token >= len {
            return Err(Error::TokenOutOfRange { token, vocab: len });
        }
        let mut probs = vec![0.0; len];
        probs[token] = 1.0;
        Ok(Self { probs })
    }

    fn scaled(mut probs: Vec<f64>, sum: f64) -> Self {
        if sum != 1.0 {
            probs.iter_mut().for_each(|x| *x /= sum);
        }
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, token: usize) -> Option<f64> {
        self.probs.get(token).copied()
    }

    /// Inverse-CDF draw for a uniform `u` in `[0, 1)`.
    ///
    /// Zero-probability tokens are never returned, including when rounding
    /// pushes `u` past the accumulated total.
    pub fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs
            .iter()
            .rposition(|&p| p > 0.0)
            .expect("a distribution has positive mass")
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }
}

impl Index<usize> for Dist {
    type Output = f64;

    fn index(&self, token: usize) -> &f64 {
        &self.probs[token]
    }
}

impl TryFrom<Vec<f64>> for Dist {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<Dist> for Vec<f64> {
    fn from(d: Dist) -> Self {
        d.probs
    }
}

fn checked_sum(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidEntry { index, value });
        }
    }
    Ok(values.iter().sum())
}

fn same_len(a: &Dist, b: &Dist) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// `½ Σ |a(x) − b(x)|`.
pub fn tv_distance(a: &Dist, b: &Dist) -> Result<f64> {
    same_len(a, b)?;
    let l1: f64 = a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).sum();
    Ok((0.5 * l1).min(1.0))
}

/// `Σ min{a(x), b(x)}`, which equals `1 − TV(a, b)`.
pub fn overlap(a: &Dist, b: &Dist) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.probs.iter().zip(&b.probs).map(|(x, y)| x.min(*y)).sum())
}

/// Unnormalized positive part `x ↦ max{0, q(x) − p(x)}`.
pub fn positive_part(q: &Dist, p: &Dist) -> Result<Vec<f64>> {
    same_len(q, p)?;
    Ok(q.probs
        .iter()
        .zip(&p.probs)
        .map(|(a, b)| (a - b).max(0.0))
        .collect())
}

/// The normalized positive part `[q − p]_+`.
///
/// Fails with [`Error::ZeroResidual`] when `TV(q, p)` is numerically zero;
/// the rejection branch that would sample from it is then unreachable.
pub fn residual_plus(q: &Dist, p: &Dist) -> Result<Dist> {
    rejection_iterate(q, p).map(|(d, _)| d)
}

/// One step of `q^{m+1} = [q^m − p]_+`, returning the next iterate together
/// with the rejection probability `r_m = TV(q^m, p)`.
pub fn rejection_iterate(qm: &Dist, p: &Dist) -> Result<(Dist, f64)> {
    let mass = positive_part(qm, p)?;
    let r: f64 = mass.iter().sum();
    if r < TV_ZERO {
        return Err(Error::ZeroResidual);
    }
    Ok((Dist::scaled(mass, r), r.min(1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Dist {
        Dist::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn construction_renormalizes_rounded_rows() {
        let x = d(&[0.3333333333, 0.3333333333, 0.3333333334]);
        assert_eq!(x.probs().iter().sum::<f64>(), 1.0);
        assert!(matches!(
            Dist::new(vec![0.5, 0.4]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(matches!(
            Dist::new(vec![1.5, -0.5]),
            Err(Error::InvalidEntry { index: 1, .. })
        ));
        assert_eq!(Dist::new(vec![]), Err(Error::Empty));
        assert!(Dist::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&d(&[0.5, 0.5]), &d(&[0.5, 0.5])).unwrap(), 0.0);
        assert_eq!(tv_distance(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 1.0);
        let tv = tv_distance(&d(&[0.7, 0.3]), &d(&[0.4, 0.6])).unwrap();
        assert!((tv - 0.3).abs() < 1e-15);
        assert!(matches!(
            tv_distance(&d(&[1.0]), &d(&[0.5, 0.5])),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn residual_examples() {
        let r = residual_plus(&d(&[0.4, 0.6]), &d(&[0.7, 0.3])).unwrap();
        assert!(close(r.probs(), &[0.0, 1.0]));
        let r = residual_plus(&d(&[0.2, 0.5, 0.3]), &d(&[0.5, 0.2, 0.3])).unwrap();
        assert!(close(r.probs(), &[0.0, 1.0, 0.0]));
        assert_eq!(
            residual_plus(&d(&[0.5, 0.5]), &d(&[0.5, 0.5])),
            Err(Error::ZeroResidual)
        );
    }

    #[test]
    fn rejection_iterate_examples() {
        // [q - p]_+ = [0.25, 0.25, 0, 0], so r = 0.5 and the iterate is q again.
        let (next, r) =
            rejection_iterate(&d(&[0.5, 0.5, 0.0, 0.0]), &Dist::uniform(4).unwrap()).unwrap();
        assert!(close(next.probs(), &[0.5, 0.5, 0.0, 0.0]));
        assert!((r - 0.5).abs() < 1e-15);

        let (next, r) = rejection_iterate(&d(&[0.9, 0.1]), &d(&[0.5, 0.5])).unwrap();
        assert!(close(next.probs(), &[1.0, 0.0]));
        assert!((r - 0.4).abs() < 1e-15);

        let q = d(&[0.0, 0.3, 0.7]);
        let (next, r) = rejection_iterate(&q, &d(&[1.0, 0.0, 0.0])).unwrap();
        assert!(close(next.probs(), q.probs()));
        assert_eq!(r, 1.0);
    }

    #[test]
    fn sampling_skips_zero_mass_tokens() {
        let x = d(&[0.0, 0.5, 0.0, 0.5, 0.0]);
        assert_eq!(x.sample(0.0), 1);
        assert_eq!(x.sample(0.49), 1);
        assert_eq!(x.sample(0.5), 3);
        assert_eq!(x.sample(0.999_999_999_999), 3);
        assert_eq!(x.sample(1.0), 3);
    }

    #[test]
    fn json_round_trip_validates() {
        let x: Dist = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(x.probs(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<Dist>("[0.25, 0.5]").is_err());
        assert_eq!(serde_json::to_string(&x).unwrap(), "[0.25,0.75]");
    }
}
