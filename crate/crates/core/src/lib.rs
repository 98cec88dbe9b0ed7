//! Speculative decoding laboratory.
//!
//! Samplers for auto-regressive, speculative, generic rejection-based and
//! batch speculative decoding over finite-vocabulary token models, exact
//! expected-rejection analysis with brute-force enumeration oracles, the
//! rejection/bias tradeoff for over-accepting policies, and seeded Monte
//! Carlo campaigns that tie the samplers to the exact values.

pub mod decoding;
pub mod dist;
pub mod error;
pub mod exact;
pub mod model;
pub mod montecarlo;
pub mod numeric;
pub mod rng;
pub mod tradeoff;

pub use decoding::{
    autoregressive_decode, batch_decode, generic_decode, speculative_decode, ConstantPolicy,
    FnPolicy, OverAcceptPolicy, Policy, RunStats, SpeculativePolicy, StepContext, Trajectory,
};
pub use dist::{residual_plus, rejection_iterate, tv_distance, Dist};
pub use error::{Error, Result};
pub use model::{CondDist, FullModel, MarkovModel, ModelDescriptor, ModelPair, TokenModel};
pub use rng::Rng;
