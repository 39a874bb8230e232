//! Face grouping by imitation learning.
//!
//! A recommender proposes pairs of groups, an agent decides whether to merge
//! them, and the agent's reward is learned from ground-truth decisions before
//! an action-value function is fitted on top of it.

pub mod bench;
pub mod cli;
pub mod config;
pub mod domain;
pub mod engine;
pub mod error;
pub mod features;
pub mod learn;
pub mod metrics;
pub mod recommend;
pub mod rng;
pub mod train;

pub use bench::sim::{simulate, SimConfig};
pub use config::Config;
pub use domain::{Action, Album, CostModel, FaceItem, GroupId, Label, Partition, State};
pub use engine::{run_episode, EpisodeTrace, Mode, Policy, PolicyConfig, QEncoding, QModel};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureVector, Geometry};
pub use metrics::{bcubed, op_cost, op_cost_oracle, BcubedScores};
pub use recommend::{RecommenderConfig, Strategy};
pub use train::{irl_train, q_train, IrlConfig, QConfig, ShortReward};
