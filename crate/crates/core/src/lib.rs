//! End-to-end bipedal locomotion learning stack: footstep plans and gait
//! clock, six-term reward, gated state-space observation encoder, Gaussian
//! policy/value heads, PPO training, a planar biped environment, and the
//! evaluation metrics suite.

pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod encoder;
pub mod env;
pub mod gait;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod norm;
pub mod policy;
pub mod ppo;
pub mod reward;

pub use encoder::{EncoderConfig, EncoderParams, LatentFeature, TokenSequence};
pub use gait::{FootstepPlan, FootstepTarget, GaitClock, GaitMode, StepWindow};
pub use reward::{RewardBreakdown, RewardWeights, RobotSnapshot};
