//! JSON configuration shared by all subcommands.
//!
//! ```json
//! {
//!   "pair": { "generator": "random", "seed": 7, "vocab_size": 7, "horizon": 50 },
//!   "algorithm": { "batch": 4 },
//!   "batch": 3,
//!   "batch_range": [1, 2, 3, 4, 5, 6, 7, 8],
//!   "pareto": { "p": [0.7, 0.3], "q": [0.4, 0.6], "eps_grid": [0.0, 0.1, 0.3] },
//!   "runs": 10000,
//!   "seed": 1,
//!   "checkpoint_every": 100,
//!   "output": "out.csv",
//!   "format": "csv"
//! }
//! ```
//!
//! `pair` may instead give `draft` and `target` model descriptors, each either
//! a seeded generator or explicit `prompt`/`steps` tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use specdec::model::Generator;
use specdec::montecarlo::CHECKPOINT_EVERY;
use specdec::{ConstantPolicy, MarkovModel, ModelDescriptor, ModelPair, OverAcceptPolicy, Policy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairSpec>,
    #[serde(default)]
    pub algorithm: AlgorithmSpec,
    /// Batch size for `exact`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_range: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pareto: Option<ParetoSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

fn default_checkpoint() -> usize {
    CHECKPOINT_EVERY
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSpec {
    /// Independently seeded random draft and target chains.
    Random {
        generator: Generator,
        seed: u64,
        vocab_size: usize,
        horizon: usize,
    },
    Models {
        draft: ModelDescriptor,
        target: ModelDescriptor,
    },
}

impl PairSpec {
    pub fn build(&self) -> Result<ModelPair<MarkovModel>> {
        let pair = match self {
            Self::Random {
                generator: Generator::Random,
                seed,
                vocab_size,
                horizon,
            } => ModelPair::random(*seed, *vocab_size, *horizon),
            Self::Models { draft, target } => {
                let draft = draft.build().context("invalid draft model")?;
                let target = target.build().context("invalid target model")?;
                ModelPair::new(draft, target)
            }
        };
        Ok(pair?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Autoregressive,
    #[default]
    Speculative,
    Batch(usize),
    /// `b = min{1, (q + ε)/p}` with the optimal or the target residual.
    OverAccept {
        epsilon: f64,
        #[serde(default)]
        residual: ResidualSpec,
    },
    /// Accept every candidate with the same probability.
    Constant { acceptance: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSpec {
    #[default]
    Optimal,
    Target,
}

impl AlgorithmSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Batch(0) => bail!("batch size must be at least 1"),
            Self::OverAccept { epsilon, .. } if !(epsilon >= 0.0 && epsilon.is_finite()) => {
                bail!("epsilon must be a finite nonnegative number, got {epsilon}")
            }
            Self::Constant { acceptance } if !(0.0..=1.0).contains(&acceptance) => {
                bail!("acceptance must lie in [0, 1], got {acceptance}")
            }
            _ => Ok(()),
        }
    }

    /// The policy behind a generic algorithm.
    pub fn policy(&self) -> Option<Box<dyn Policy>> {
        match *self {
            Self::OverAccept { epsilon, residual } => Some(Box::new(match residual {
                ResidualSpec::Optimal => OverAcceptPolicy::opt(epsilon),
                ResidualSpec::Target => OverAcceptPolicy::uno(epsilon),
            })),
            Self::Constant { acceptance } => Some(Box::new(ConstantPolicy { acceptance })),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoSpec {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Explicit ε values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    /// Alternatively, this many evenly spaced points from 0 to the
    /// saturating ε.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("malformed config {}", path.display()))?;
        config.algorithm.validate()?;
        if config.checkpoint_every == 0 {
            bail!("checkpoint_every must be positive");
        }
        Ok(config)
    }

    pub fn pair(&self) -> Result<ModelPair<MarkovModel>> {
        self.pair
            .as_ref()
            .context("config has no \"pair\"")?
            .build()
    }
}
