//! Token models: nonstationary Markov chains, general history-conditioned
//! tables for brute-force checks, and the draft/target pair.
//!
//! A trajectory is `x_0, x_1, .., x_T` where `x_0` is the prompt token drawn
//! from the prompt distribution and `x_n` (for `n ≥ 1`) is drawn from the
//! step-`n` conditional given the history `x_0..x_{n-1}`.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{Dist, NORMALIZATION_TOL};
use crate::error::{Error, Result};
use crate::numeric::KahanSum;

/// Upper bound on `V^T` for any exhaustive representation or enumeration.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// A conditional next-token model over a fixed vocabulary and horizon.
pub trait TokenModel: Sync {
    fn vocab_size(&self) -> usize;

    fn horizon(&self) -> usize;

    /// Distribution of the prompt token `x_0`.
    fn prompt(&self) -> &Dist;

    /// Law of `x_n` given `history = [x_0, .., x_{n-1}]`, so `n = history.len()`.
    ///
    /// Panics if `history` is empty or longer than the horizon.
    fn next(&self, history: &[usize]) -> &Dist;
}

/// `V` rows; `rows[s]` is the next-token law given current token `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Dist>", into = "Vec<Dist>")]
pub struct CondDist {
    rows: Vec<Dist>,
}

impl CondDist {
    pub fn new(rows: Vec<Dist>) -> Result<Self> {
        let v = rows.len();
        if v == 0 {
            return Err(Error::Empty);
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != v) {
            return Err(Error::LengthMismatch {
                left: bad.len(),
                right: v,
            });
        }
        Ok(Self { rows })
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: usize) -> &Dist {
        &self.rows[s]
    }

    pub fn rows(&self) -> &[Dist] {
        &self.rows
    }
}

impl TryFrom<Vec<Dist>> for CondDist {
    type Error = Error;

    fn try_from(rows: Vec<Dist>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<CondDist> for Vec<Dist> {
    fn from(c: CondDist) -> Self {
        c.rows
    }
}

/// Nonstationary first-order chain: step `n` depends on `x_{n-1}` only.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    prompt: Dist,
    steps: Vec<CondDist>,
}

impl MarkovModel {
    pub fn new(prompt: Dist, steps: Vec<CondDist>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        let v = prompt.len();
        if let Some(bad) = steps.iter().find(|c| c.vocab_size() != v) {
            return Err(Error::LengthMismatch {
                left: bad.vocab_size(),
                right: v,
            });
        }
        Ok(Self { prompt, steps })
    }

    /// Uniform prompt and rows built by normalizing seeded uniform draws.
    pub fn random(seed: u64, vocab_size: usize, horizon: usize) -> Result<Self> {
        if vocab_size == 0 || horizon == 0 {
            return Err(Error::InvalidModel(
                "vocab_size and horizon must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = (0..horizon)
            .map(|_| {
                let rows = (0..vocab_size)
                    .map(|_| random_row(&mut rng, vocab_size))
                    .collect::<Result<Vec<_>>>()?;
                CondDist::new(rows)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(Dist::uniform(vocab_size)?, steps)
    }

    /// The same row at every step and for every conditioning token.
    pub fn constant(row: Dist, horizon: usize) -> Result<Self> {
        let v = row.len();
        let step = CondDist::new(vec![row; v])?;
        Self::new(Dist::uniform(v)?, vec![step; horizon])
    }

    /// Transition table for step `n` (1-based).
    pub fn step(&self, n: usize) -> &CondDist {
        &self.steps[n - 1]
    }

    pub fn steps(&self) -> &[CondDist] {
        &self.steps
    }

    pub fn with_prompt(mut self, prompt: Dist) -> Result<Self> {
        if prompt.len() != self.prompt.len() {
            return Err(Error::LengthMismatch {
                left: prompt.len(),
                right: self.prompt.len(),
            });
        }
        self.prompt = prompt;
        Ok(self)
    }
}

fn random_row(rng: &mut ChaCha8Rng, v: usize) -> Result<Dist> {
    let mut w: Vec<f64> = (0..v).map(|_| rng.random::<f64>()).collect();
    if w.iter().all(|&x| x == 0.0) {
        w.iter_mut().for_each(|x| *x = 1.0);
    }
    Dist::from_weights(w)
}

impl TokenModel for MarkovModel {
    fn vocab_size(&self) -> usize {
        self.prompt.len()
    }

    fn horizon(&self) -> usize {
        self.steps.len()
    }

    fn prompt(&self) -> &Dist {
        &self.prompt
    }

    fn next(&self, history: &[usize]) -> &Dist {
        let n = history.len();
        self.steps[n - 1].row(history[n - 1])
    }
}

/// General model with one table entry per history `x_0..x_{n-1}`.
///
/// Only meant for desk-scale brute force: construction requires
/// `V^T ≤ ENUMERATION_CAP`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullModel {
    vocab: usize,
    prompt: Dist,
    /// `tables[n-1][index(x_0..x_{n-1})]`, histories encoded base `V`.
    tables: Vec<Vec<Dist>>,
}

impl FullModel {
    /// Builds the table by evaluating `law` on every history.
    pub fn from_fn<F>(prompt: Dist, horizon: usize, mut law: F) -> Result<Self>
    where
        F: FnMut(&[usize]) -> Result<Dist>,
    {
        let vocab = prompt.len();
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        check_cap(vocab, horizon)?;
        let mut tables = Vec::with_capacity(horizon);
        for n in 1..=horizon {
            let mut level = Vec::with_capacity(vocab.pow(n as u32));
            for history in all_sequences(vocab, n) {
                let d = law(&history)?;
                if d.len() != vocab {
                    return Err(Error::LengthMismatch {
                        left: d.len(),
                        right: vocab,
                    });
                }
                level.push(d);
            }
            tables.push(level);
        }
        Ok(Self {
            vocab,
            prompt,
            tables,
        })
    }

    pub fn from_markov(model: &MarkovModel) -> Result<Self> {
        Self::from_fn(model.prompt.clone(), model.horizon(), |h| {
            Ok(model.next(h).clone())
        })
    }

    /// Every history gets its own independent random row.
    pub fn random(seed: u64, vocab_size: usize, horizon: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(Dist::uniform(vocab_size)?, horizon, |_| {
            random_row(&mut rng, vocab_size)
        })
    }
}

impl TokenModel for FullModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn horizon(&self) -> usize {
        self.tables.len()
    }

    fn prompt(&self) -> &Dist {
        &self.prompt
    }

    fn next(&self, history: &[usize]) -> &Dist {
        &self.tables[history.len() - 1][sequence_index(history, self.vocab)]
    }
}

/// Draft model `p` and target model `q` over a shared vocabulary, horizon
/// and prompt distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair<M> {
    draft: M,
    target: M,
}

impl<M: TokenModel> ModelPair<M> {
    pub fn new(draft: M, target: M) -> Result<Self> {
        if draft.vocab_size() != target.vocab_size() {
            return Err(Error::InvalidModel(format!(
                "vocabulary sizes differ: draft {} vs target {}",
                draft.vocab_size(),
                target.vocab_size()
            )));
        }
        if draft.horizon() != target.horizon() {
            return Err(Error::InvalidModel(format!(
                "horizons differ: draft {} vs target {}",
                draft.horizon(),
                target.horizon()
            )));
        }
        let prompts_agree = draft
            .prompt()
            .probs()
            .iter()
            .zip(target.prompt().probs())
            .all(|(a, b)| (a - b).abs() <= NORMALIZATION_TOL);
        if !prompts_agree {
            return Err(Error::InvalidModel(
                "draft and target prompt distributions differ".into(),
            ));
        }
        Ok(Self { draft, target })
    }

    pub fn draft(&self) -> &M {
        &self.draft
    }

    pub fn target(&self) -> &M {
        &self.target
    }

    pub fn vocab_size(&self) -> usize {
        self.target.vocab_size()
    }

    pub fn horizon(&self) -> usize {
        self.target.horizon()
    }

    /// The prompt law `x_0` is drawn from (shared by both models).
    pub fn prompt(&self) -> &Dist {
        self.target.prompt()
    }
}

impl ModelPair<MarkovModel> {
    /// Independently seeded random draft and target chains (uniform prompt).
    pub fn random(seed: u64, vocab_size: usize, horizon: usize) -> Result<Self> {
        let draft = MarkovModel::random(seed.wrapping_mul(2), vocab_size, horizon)?;
        let target = MarkovModel::random(seed.wrapping_mul(2).wrapping_add(1), vocab_size, horizon)?;
        Self::new(draft, target)
    }

    pub fn to_full(&self) -> Result<ModelPair<FullModel>> {
        ModelPair::new(
            FullModel::from_markov(&self.draft)?,
            FullModel::from_markov(&self.target)?,
        )
    }
}

impl ModelPair<FullModel> {
    /// Random pair whose rows depend on the whole history.
    pub fn random_full(seed: u64, vocab_size: usize, horizon: usize) -> Result<Self> {
        let draft = FullModel::random(seed.wrapping_mul(2), vocab_size, horizon)?;
        let target = FullModel::random(seed.wrapping_mul(2).wrapping_add(1), vocab_size, horizon)?;
        Self::new(draft, target)
    }
}

pub(crate) fn check_cap(vocab: usize, horizon: usize) -> Result<u128> {
    let size = (vocab as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if size > ENUMERATION_CAP {
        return Err(Error::TooLarge {
            size,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(size)
}

/// Base-`V` index of a token sequence, first token most significant.
pub fn sequence_index(tokens: &[usize], vocab: usize) -> usize {
    tokens.iter().fold(0, |acc, &t| acc * vocab + t)
}

/// Inverse of [`sequence_index`] for sequences of length `len`.
pub fn sequence_from_index(mut index: usize, vocab: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = index % vocab;
        index /= vocab;
    }
    out
}

/// All `V^len` sequences in index order.
pub fn all_sequences(vocab: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    let count = vocab.pow(len as u32);
    (0..count).map(move |i| sequence_from_index(i, vocab, len))
}

fn check_tokens<M: TokenModel>(model: &M, tokens: &[usize]) -> Result<()> {
    if tokens.len() != model.horizon() {
        return Err(Error::LengthMismatch {
            left: tokens.len(),
            right: model.horizon(),
        });
    }
    let vocab = model.vocab_size();
    match tokens.iter().find(|&&t| t >= vocab) {
        Some(&token) => Err(Error::TokenOutOfRange { token, vocab }),
        None => Ok(()),
    }
}

/// `P(x_1..x_T | x_0)` by the chain rule.
pub fn conditional_probability<M: TokenModel>(
    model: &M,
    prompt_token: usize,
    tokens: &[usize],
) -> Result<f64> {
    check_tokens(model, tokens)?;
    if prompt_token >= model.vocab_size() {
        return Err(Error::TokenOutOfRange {
            token: prompt_token,
            vocab: model.vocab_size(),
        });
    }
    let mut history = Vec::with_capacity(tokens.len() + 1);
    history.push(prompt_token);
    let mut prob = 1.0;
    for &x in tokens {
        prob *= model.next(&history)[x];
        history.push(x);
    }
    Ok(prob)
}

/// `P(x_1..x_T)` with the prompt token marginalized out.
pub fn joint_probability<M: TokenModel>(model: &M, tokens: &[usize]) -> Result<f64> {
    check_tokens(model, tokens)?;
    let mut acc = KahanSum::default();
    for x0 in model.prompt().support() {
        acc.add(model.prompt()[x0] * conditional_probability(model, x0, tokens)?);
    }
    Ok(acc.total())
}

/// The law of `x_1..x_T` as a distribution over `V^T` sequences, indexed by
/// [`sequence_index`].
pub fn joint_distribution<M: TokenModel>(model: &M) -> Result<Dist> {
    let size = check_cap(model.vocab_size(), model.horizon())? as usize;
    let mut probs = vec![0.0; size];
    for (i, seq) in all_sequences(model.vocab_size(), model.horizon()).enumerate() {
        probs[i] = joint_probability(model, &seq)?;
    }
    Dist::new(probs)
}

/// Marginal laws `μ_0..μ_T` of `x_0..x_T` under a Markov model:
/// `μ_0` is the prompt and `μ_n(x) = Σ_s μ_{n-1}(s) q_n(x | s)`.
pub fn target_marginals(model: &MarkovModel) -> Vec<Dist> {
    let v = model.vocab_size();
    let mut out = Vec::with_capacity(model.horizon() + 1);
    out.push(model.prompt().clone());
    for step in model.steps() {
        let prev = out.last().expect("prompt pushed first");
        let next: Vec<f64> = (0..v)
            .map(|x| {
                let mut acc = KahanSum::default();
                for s in 0..v {
                    acc.add(prev[s] * step.row(s)[x]);
                }
                acc.total()
            })
            .collect();
        out.push(Dist::from_weights(next).expect("marginal of a valid chain"));
    }
    out
}

/// Wire form of a single model: explicit tables or a seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelDescriptor {
    Generated {
        generator: Generator,
        seed: u64,
        vocab_size: usize,
        horizon: usize,
    },
    Explicit {
        vocab_size: usize,
        horizon: usize,
        prompt: Vec<f64>,
        steps: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Random,
}

impl ModelDescriptor {
    pub fn build(&self) -> Result<MarkovModel> {
        match self {
            Self::Generated {
                generator: Generator::Random,
                seed,
                vocab_size,
                horizon,
            } => MarkovModel::random(*seed, *vocab_size, *horizon),
            Self::Explicit {
                vocab_size,
                horizon,
                prompt,
                steps,
            } => {
                if steps.len() != *horizon {
                    return Err(Error::InvalidModel(format!(
                        "horizon is {horizon} but {} steps were given",
                        steps.len()
                    )));
                }
                let prompt = Dist::new(prompt.clone())?;
                if prompt.len() != *vocab_size {
                    return Err(Error::InvalidModel(format!(
                        "prompt has {} entries, vocab_size is {vocab_size}",
                        prompt.len()
                    )));
                }
                let steps = steps
                    .iter()
                    .map(|rows| {
                        let rows = rows
                            .iter()
                            .map(|r| Dist::new(r.clone()))
                            .collect::<Result<Vec<_>>>()?;
                        CondDist::new(rows)
                    })
                    .collect::<Result<Vec<_>>>()?;
                MarkovModel::new(prompt, steps)
            }
        }
    }

    pub fn explicit(model: &MarkovModel) -> Self {
        Self::Explicit {
            vocab_size: model.vocab_size(),
            horizon: model.horizon(),
            prompt: model.prompt().probs().to_vec(),
            steps: model
                .steps()
                .iter()
                .map(|c| c.rows().iter().map(|r| r.probs().to_vec()).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_chain(v: usize, t: usize) -> MarkovModel {
        // token s always moves to s + 1 mod v
        let step = CondDist::new((0..v).map(|s| Dist::point(v, (s + 1) % v).unwrap()).collect())
            .unwrap();
        MarkovModel::new(Dist::point(v, 0).unwrap(), vec![step; t]).unwrap()
    }

    #[test]
    fn deterministic_chain_has_unit_mass_on_its_path() {
        let m = one_hot_chain(3, 4);
        assert_eq!(joint_probability(&m, &[1, 2, 0, 1]).unwrap(), 1.0);
        assert_eq!(joint_probability(&m, &[1, 2, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_model_is_independent() {
        let m = MarkovModel::constant(Dist::uniform(2).unwrap(), 3).unwrap();
        for seq in all_sequences(2, 3) {
            assert!((joint_probability(&m, &seq).unwrap() - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn markov_and_full_representations_agree() {
        let m = MarkovModel::random(11, 3, 4).unwrap();
        let f = FullModel::from_markov(&m).unwrap();
        for seq in all_sequences(3, 4) {
            let a = joint_probability(&m, &seq).unwrap();
            let b = joint_probability(&f, &seq).unwrap();
            assert!((a - b).abs() < 1e-15, "{seq:?}: {a} vs {b}");
        }
    }

    #[test]
    fn joint_probability_rejects_bad_input() {
        let m = MarkovModel::random(1, 2, 3).unwrap();
        assert!(matches!(
            joint_probability(&m, &[0, 1]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            joint_probability(&m, &[0, 1, 2]),
            Err(Error::TokenOutOfRange { token: 2, .. })
        ));
    }

    #[test]
    fn doubly_stochastic_chain_keeps_uniform_marginals() {
        let rows = vec![
            Dist::new(vec![0.2, 0.5, 0.3]).unwrap(),
            Dist::new(vec![0.5, 0.3, 0.2]).unwrap(),
            Dist::new(vec![0.3, 0.2, 0.5]).unwrap(),
        ];
        let step = CondDist::new(rows).unwrap();
        let m = MarkovModel::new(Dist::uniform(3).unwrap(), vec![step; 5]).unwrap();
        for mu in target_marginals(&m) {
            assert!(mu.probs().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn absorbing_state_accumulates_mass() {
        let rows = vec![
            Dist::new(vec![1.0, 0.0]).unwrap(),
            Dist::new(vec![0.4, 0.6]).unwrap(),
        ];
        let m = MarkovModel::new(
            Dist::uniform(2).unwrap(),
            vec![CondDist::new(rows).unwrap(); 6],
        )
        .unwrap();
        let mass: Vec<f64> = target_marginals(&m).iter().map(|d| d[0]).collect();
        assert!(mass.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn marginals_match_enumeration() {
        let m = MarkovModel::random(5, 3, 3).unwrap();
        let mu = target_marginals(&m);
        let mut brute = [0.0; 3];
        for seq in all_sequences(3, 3) {
            brute[seq[2]] += joint_probability(&m, &seq).unwrap();
        }
        for x in 0..3 {
            assert!((mu[3][x] - brute[x]).abs() < 1e-14);
        }
    }

    #[test]
    fn full_model_enforces_cap() {
        assert!(matches!(
            FullModel::random(0, 10, 7),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn pair_validation() {
        let a = MarkovModel::random(1, 3, 2).unwrap();
        assert!(ModelPair::new(a.clone(), MarkovModel::random(2, 2, 2).unwrap()).is_err());
        assert!(ModelPair::new(a.clone(), MarkovModel::random(2, 3, 3).unwrap()).is_err());
        let skewed = MarkovModel::random(2, 3, 2)
            .unwrap()
            .with_prompt(Dist::point(3, 0).unwrap())
            .unwrap();
        assert!(ModelPair::new(a, skewed).is_err());
    }

    #[test]
    fn descriptors() {
        let gen: ModelDescriptor = serde_json::from_str(
            r#"{"generator": "random", "seed": 9, "vocab_size": 7, "horizon": 50}"#,
        )
        .unwrap();
        let m = gen.build().unwrap();
        assert_eq!((m.vocab_size(), m.horizon()), (7, 50));
        assert_eq!(m, MarkovModel::random(9, 7, 50).unwrap());
        assert!(m.prompt().probs().iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-15));

        let explicit: ModelDescriptor = serde_json::from_str(
            r#"{"vocab_size": 2, "horizon": 1, "prompt": [0.5, 0.5],
                "steps": [[[0.9, 0.1], [0.3, 0.7]]]}"#,
        )
        .unwrap();
        let m = explicit.build().unwrap();
        assert_eq!(m.step(1).row(1).probs(), &[0.3, 0.7]);
        assert_eq!(ModelDescriptor::explicit(&m), explicit);

        let bad: ModelDescriptor = serde_json::from_str(
            r#"{"vocab_size": 2, "horizon": 2, "prompt": [0.5, 0.5],
                "steps": [[[0.9, 0.1], [0.3, 0.7]]]}"#,
        )
        .unwrap();
        assert!(bad.build().is_err());
    }
}
