//! Imitation and reward learning on small fixed-horizon environments.
//!
//! The crate provides behavioral cloning, DAgger, maximum causal entropy IRL,
//! a density-estimation IRL baseline, GAIL, AIRL and reward learning from
//! pairwise preferences, all behind the [`algorithm::ImitationAlgorithm`]
//! trait, together with tabular and continuous test environments, oracle
//! experts and a seeded benchmark harness.

pub mod adam;
pub mod adversarial;
pub mod algorithm;
pub mod bc;
pub mod bench;
pub mod dagger;
pub mod data;
pub mod density;
pub mod envs;
pub mod error;
pub mod eval;
pub mod mce_irl;
pub mod nn;
pub mod policy;
pub mod policy_opt;
pub mod preference;
pub mod seeds;

pub use error::{Error, Result};
