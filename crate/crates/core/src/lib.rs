//! Value alignment verification for tabular MDPs with linear reward features.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the aliases
//! below fix it to one of them.

pub mod agent;
pub mod bench;
pub mod epsilon;
pub mod error;
pub mod exact;
pub mod geometry;
pub mod heuristic;
pub mod linalg;
pub mod mdp;
pub mod omni;
pub mod render;
pub mod scalar;

pub use agent::{Agent, Choice, PolicyAgent, RationalAgent, UniformRandomAgent};
pub use error::{Error, Result};
pub use exact::{administer, AlignmentTest, Verdict};
pub use geometry::{HalfspaceSet, Provenance};
pub use mdp::{Environment, FeatureMap, Policy, QSolution, RewardWeights, Trajectory};
pub use scalar::Scalar;

pub type EnvironmentF64 = mdp::Environment<f64>;
pub type EnvironmentF32 = mdp::Environment<f32>;
pub type FeatureMapF64 = mdp::FeatureMap<f64>;
pub type FeatureMapF32 = mdp::FeatureMap<f32>;
pub type RewardWeightsF64 = mdp::RewardWeights<f64>;
pub type RewardWeightsF32 = mdp::RewardWeights<f32>;
pub type HalfspaceSetF64 = geometry::HalfspaceSet<f64>;
pub type HalfspaceSetF32 = geometry::HalfspaceSet<f32>;
pub type AlignmentTestF64 = exact::AlignmentTest<f64>;
pub type AlignmentTestF32 = exact::AlignmentTest<f32>;
